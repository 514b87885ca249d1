//! Exact two-dimensional complex linear algebra.
//!
//! Every stage of the interferometer carries at most two occupied ports, so the
//! state is a labeled 2-vector and every operator is a 2×2 complex matrix.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for algebraic identities (norms, completeness, unitarity of generated matrices).
pub const ALGEBRA_TOL: f64 = 1e-12;
/// Tolerance for validating caller-supplied inputs.
pub const INPUT_TOL: f64 = 1e-9;

pub type Amplitude = Complex64;

const ZERO: Amplitude = Complex64::new(0.0, 0.0);
const ONE: Amplitude = Complex64::new(1.0, 0.0);

/// Name of an optical port (`L1`, `Rf`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortLabel(String);

impl PortLabel {
    pub fn new(name: impl Into<String>) -> Self {
        PortLabel(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PortLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PortLabel {
    fn from(s: &str) -> Self {
        PortLabel(s.to_string())
    }
}

/// Ordered pair of distinct ports spanning a stage.
pub type PortPair = [PortLabel; 2];

/// Photon path state: two amplitudes over an ordered pair of labeled ports.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    labels: PortPair,
    amps: [Amplitude; 2],
}

impl PathState {
    pub fn new(labels: PortPair, amps: [Amplitude; 2]) -> Result<Self> {
        if labels[0] == labels[1] {
            return Err(Error::InvalidInput(format!(
                "port labels must be distinct, got `{}` twice",
                labels[0]
            )));
        }
        if !amps.iter().all(|a| a.re.is_finite() && a.im.is_finite()) {
            return Err(Error::InvalidInput("amplitudes must be finite".into()));
        }
        Ok(PathState { labels, amps })
    }

    /// Unit amplitude on `port`, zero on the other label.
    pub fn basis(labels: PortPair, port: &PortLabel) -> Result<Self> {
        let idx = index_of(&labels, port)?;
        let mut amps = [ZERO; 2];
        amps[idx] = ONE;
        PathState::new(labels, amps)
    }

    pub fn labels(&self) -> &PortPair {
        &self.labels
    }

    pub fn amps(&self) -> [Amplitude; 2] {
        self.amps
    }

    pub fn amp(&self, port: &PortLabel) -> Result<Amplitude> {
        Ok(self.amps[index_of(&self.labels, port)?])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps[0].norm_sqr() + self.amps[1].norm_sqr()
    }

    /// Born probability of finding the photon at `port`, relative to the current norm.
    pub fn probability(&self, port: &PortLabel) -> Result<f64> {
        let n = self.norm_sqr();
        if n == 0.0 {
            return Err(Error::NullBranch);
        }
        Ok(self.amp(port)?.norm_sqr() / n)
    }

    /// Same amplitudes carried over to a new pair of port names.
    pub fn relabel(&self, labels: PortPair) -> Result<Self> {
        PathState::new(labels, self.amps)
    }

    pub(crate) fn with_amps(&self, amps: [Amplitude; 2]) -> Self {
        PathState {
            labels: self.labels.clone(),
            amps,
        }
    }

    /// Outer product |ψ⟩⟨ψ|.
    pub fn density(&self) -> Mat2 {
        let a = self.amps;
        Mat2([
            [a[0] * a[0].conj(), a[0] * a[1].conj()],
            [a[1] * a[0].conj(), a[1] * a[1].conj()],
        ])
    }
}

pub(crate) fn index_of(labels: &PortPair, port: &PortLabel) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == port)
        .ok_or_else(|| Error::UnknownPort(port.to_string()))
}

/// Plain 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[Amplitude; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[ONE, ZERO], [ZERO, ONE]]);
    pub const ZERO: Mat2 = Mat2([[ZERO, ZERO], [ZERO, ZERO]]);

    pub fn diag(a: Amplitude, b: Amplitude) -> Mat2 {
        Mat2([[a, ZERO], [ZERO, b]])
    }

    pub fn get(&self, r: usize, c: usize) -> Amplitude {
        self.0[r][c]
    }

    pub fn adjoint(&self) -> Mat2 {
        let m = self.0;
        Mat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let (a, b) = (self.0, rhs.0);
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        Mat2(out)
    }

    pub fn add(&self, rhs: &Mat2) -> Mat2 {
        let (a, b) = (self.0, rhs.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let a = self.0;
        Mat2([[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]])
    }

    pub fn apply(&self, v: [Amplitude; 2]) -> [Amplitude; 2] {
        let m = self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn trace(&self) -> Amplitude {
        self.0[0][0] + self.0[1][1]
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_defect(&self, other: &Mat2) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).norm());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// A 2×2 matrix validated to satisfy U†U = I.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitaryMatrix(Mat2);

impl UnitaryMatrix {
    pub fn new(m: Mat2) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        let defect = m.adjoint().mul(&m).max_defect(&Mat2::IDENTITY);
        if defect > INPUT_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not unitary (entrywise defect {defect:.3e})"
            )));
        }
        Ok(UnitaryMatrix(m))
    }

    pub fn identity() -> Self {
        UnitaryMatrix(Mat2::IDENTITY)
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn adjoint(&self) -> UnitaryMatrix {
        UnitaryMatrix(self.0.adjoint())
    }

    pub fn then(&self, next: &UnitaryMatrix) -> UnitaryMatrix {
        UnitaryMatrix(next.0.mul(&self.0))
    }
}

/// Projector |p⟩⟨p| onto one port of a stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Projector {
    target: PortLabel,
}

impl Projector {
    pub fn new(target: PortLabel) -> Self {
        Projector { target }
    }

    pub fn target(&self) -> &PortLabel {
        &self.target
    }

    /// Diagonal {1,0} or {0,1} in the basis `labels`.
    pub fn matrix(&self, labels: &PortPair) -> Result<Mat2> {
        Ok(match index_of(labels, &self.target)? {
            0 => Mat2::diag(ONE, ZERO),
            _ => Mat2::diag(ZERO, ONE),
        })
    }

    /// P|ψ⟩ without renormalization.
    pub fn apply(&self, psi: &PathState) -> Result<PathState> {
        let m = self.matrix(psi.labels())?;
        Ok(psi.with_amps(m.apply(psi.amps())))
    }

    /// The complementary projector I − P.
    pub fn complement(&self, labels: &PortPair) -> Result<Projector> {
        let idx = index_of(labels, &self.target)?;
        Ok(Projector::new(labels[1 - idx].clone()))
    }
}

pub fn apply_unitary(u: &UnitaryMatrix, psi: &PathState) -> PathState {
    psi.with_amps(u.matrix().apply(psi.amps()))
}

/// ⟨φ|ψ⟩, conjugate-linear in `phi`.
pub fn inner_product(phi: &PathState, psi: &PathState) -> Result<Amplitude> {
    if phi.labels() != psi.labels() {
        return Err(Error::LabelMismatch {
            left: phi.labels().clone().map(|l| l.0),
            right: psi.labels().clone().map(|l| l.0),
        });
    }
    let (a, b) = (phi.amps(), psi.amps());
    Ok(a[0].conj() * b[0] + a[1].conj() * b[1])
}

/// Rescales to unit norm; a zero vector is the null branch.
pub fn normalize(psi: &PathState) -> Result<PathState> {
    let n = psi.norm_sqr();
    if !n.is_finite() {
        return Err(Error::InvalidInput("state norm is not finite".into()));
    }
    if n <= f64::MIN_POSITIVE {
        return Err(Error::NullBranch);
    }
    let s = n.sqrt().recip();
    let a = psi.amps();
    Ok(psi.with_amps([a[0] * s, a[1] * s]))
}
