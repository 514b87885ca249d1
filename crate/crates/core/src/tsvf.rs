//! Exact two-state-vector oracle.
//!
//! A pre-selected state evolved forward to some stage and a post-selected state
//! evolved backward to the same stage determine the conditional (ABL)
//! probabilities of a strong intermediate measurement and the weak values that
//! govern the mean reading of an infinitely weak probe. For finite coupling the
//! reading law conditioned on the post-selection is computed exactly: it is a
//! signed mixture of three Gaussians centred at `g`, `0` and `g/2`.

use num_complex::Complex64;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::circuit::{CircuitSpec, ProbeSite, StageElement};
use crate::error::{Error, Result};
use crate::linalg::{
    index_of, inner_product, normalize, Amplitude, Mat2, PathState, PortLabel, PortPair, Projector,
    ALGEBRA_TOL,
};
use crate::pointer::{decoherence_factor, PointerConfig};

const ABL_FLOOR: f64 = 1e-15;
const OVERLAP_FLOOR: f64 = 1e-12;

/// Pre-selected |ψ⟩ and post-selected |Φ⟩ (stored as a ket) at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStateVector {
    pre: PathState,
    post: PathState,
}

impl TwoStateVector {
    pub fn new(pre: PathState, post: PathState) -> Result<Self> {
        if pre.labels() != post.labels() {
            return Err(Error::InvalidInput("pre- and post-selected states live on different ports".into()));
        }
        for s in [&pre, &post] {
            if (s.norm_sqr() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput("two-state vector components must be normalized".into()));
            }
        }
        Ok(TwoStateVector { pre, post })
    }

    pub fn pre(&self) -> &PathState {
        &self.pre
    }

    pub fn post(&self) -> &PathState {
        &self.post
    }

    pub fn labels(&self) -> &PortPair {
        self.pre.labels()
    }

    /// ⟨Φ|ψ⟩.
    pub fn overlap(&self) -> Amplitude {
        inner_product(&self.post, &self.pre).expect("labels checked on construction")
    }

    /// Roles of past and future exchanged.
    pub fn swapped(&self) -> TwoStateVector {
        TwoStateVector {
            pre: self.post.clone(),
            post: self.pre.clone(),
        }
    }
}

/// Nondegenerate observable given by an orthonormal eigenbasis and its eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    eigenbasis: Vec<PathState>,
    eigenvalues: Vec<f64>,
}

impl Observable {
    pub fn new(eigenbasis: Vec<PathState>, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenbasis.len() != 2 || eigenvalues.len() != 2 {
            return Err(Error::InvalidInput("an observable needs two eigenvectors and two eigenvalues".into()));
        }
        if eigenbasis[0].labels() != eigenbasis[1].labels() {
            return Err(Error::InvalidInput("eigenvectors live on different ports".into()));
        }
        let sum = eigenbasis[0].density().add(&eigenbasis[1].density());
        if sum.max_defect(&Mat2::IDENTITY) > 1e-9 {
            return Err(Error::InvalidInput("eigenbasis is not complete and orthonormal".into()));
        }
        Ok(Observable { eigenbasis, eigenvalues })
    }

    /// Which-path observable with eigenvalue 1 on the first port and 0 on the second.
    pub fn path(labels: &PortPair) -> Self {
        let basis = labels
            .iter()
            .map(|p| PathState::basis(labels.clone(), p).expect("label from pair"))
            .collect();
        Observable {
            eigenbasis: basis,
            eigenvalues: vec![1.0, 0.0],
        }
    }

    pub fn eigenbasis(&self) -> &[PathState] {
        &self.eigenbasis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn matrix(&self) -> Mat2 {
        self.eigenbasis
            .iter()
            .zip(&self.eigenvalues)
            .fold(Mat2::ZERO, |acc, (v, &c)| acc.add(&v.density().scale(c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakValueResult {
    pub value: Complex64,
}

/// Conditional probability of eigen-outcome `j` given both boundary states.
pub fn abl_probability(tsv: &TwoStateVector, obs: &Observable, j: usize) -> Result<f64> {
    let dist = abl_distribution(tsv, obs)?;
    dist.get(j)
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("outcome index {j} out of range")))
}

/// ABL probabilities for every eigen-outcome of `obs`.
pub fn abl_distribution(tsv: &TwoStateVector, obs: &Observable) -> Result<Vec<f64>> {
    if obs.eigenbasis[0].labels() != tsv.labels() {
        return Err(Error::InvalidInput("observable and two-state vector use different ports".into()));
    }
    let weights: Vec<f64> = obs
        .eigenbasis
        .iter()
        .map(|c| {
            let fwd = inner_product(c, &tsv.pre).expect("labels checked");
            let bwd = inner_product(&tsv.post, c).expect("labels checked");
            (bwd * fwd).norm_sqr()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= ABL_FLOOR {
        return Err(Error::UndefinedConditional(
            "post-selection is impossible after this intermediate measurement".into(),
        ));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// ⟨Φ|O|ψ⟩ / ⟨Φ|ψ⟩.
pub fn weak_value(tsv: &TwoStateVector, op: &Mat2) -> Result<WeakValueResult> {
    let overlap = tsv.overlap();
    if overlap.norm() <= OVERLAP_FLOOR {
        return Err(Error::UndefinedWeakValue);
    }
    let o_psi = tsv.pre.with_amps(op.apply(tsv.pre.amps()));
    let num = inner_product(&tsv.post, &o_psi).expect("labels checked");
    Ok(WeakValueResult { value: num / overlap })
}

/// Weak values of the projectors |c⟩⟨c| onto each vector of `basis`.
pub fn projector_weak_values(tsv: &TwoStateVector, basis: &[PathState]) -> Result<Vec<WeakValueResult>> {
    basis
        .iter()
        .map(|c| {
            if c.labels() != tsv.labels() {
                return Err(Error::InvalidInput("basis vector on different ports".into()));
            }
            weak_value(tsv, &c.density())
        })
        .collect()
}

/// Probability of finding the photon in the dark arm after one probe at the preceding
/// stage: (1 − D)/2.
pub fn leakage_probability(cfg: &PointerConfig) -> f64 {
    (1.0 - decoherence_factor(cfg)) / 2.0
}

/// Exact law of one probe's reading, restricted to trials that survive every block and
/// satisfy the post-selection. Unnormalized: `total()` is the probability of that event.
///
/// density(q) = on·N(q; g, σ²) + off·N(q; 0, σ²) + cross·N(q; g/2, σ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReadingLaw {
    pub g: f64,
    pub sigma: f64,
    pub on: f64,
    pub off: f64,
    pub cross: f64,
}

fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

impl ReadingLaw {
    pub fn total(&self) -> f64 {
        self.on + self.off + self.cross
    }

    fn check(&self) -> Result<f64> {
        let t = self.total();
        if t <= ABL_FLOOR {
            return Err(Error::UndefinedConditional("post-selection probability is zero".into()));
        }
        Ok(t)
    }

    /// E[q | event].
    pub fn mean(&self) -> Result<f64> {
        let t = self.check()?;
        Ok((self.on * self.g + self.cross * self.g / 2.0) / t)
    }

    /// P(q > threshold | event).
    pub fn tail(&self, threshold: f64) -> Result<f64> {
        let t = self.check()?;
        let s = self.sigma;
        let p = self.on * upper_tail((threshold - self.g) / s)
            + self.off * upper_tail(threshold / s)
            + self.cross * upper_tail((threshold - self.g / 2.0) / s);
        Ok(p / t)
    }

    /// Unnormalized joint density of the reading and the event.
    pub fn density(&self, q: f64) -> f64 {
        let s = self.sigma;
        let n = |m: f64| (-(q - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        self.on * n(self.g) + self.off * n(0.0) + self.cross * n(self.g / 2.0)
    }
}

fn reading_law(rho: &Mat2, effect: &Mat2, on_idx: usize, cfg: &PointerConfig) -> ReadingLaw {
    let off_idx = 1 - on_idx;
    let d = decoherence_factor(cfg);
    ReadingLaw {
        g: cfg.g(),
        sigma: cfg.sigma(),
        on: (rho.get(on_idx, on_idx) * effect.get(on_idx, on_idx)).re,
        off: (rho.get(off_idx, off_idx) * effect.get(off_idx, off_idx)).re,
        cross: 2.0 * (effect.get(off_idx, on_idx) * rho.get(on_idx, off_idx)).re * d,
    }
}

/// Finite-strength reading law for a pure two-state vector with no other probes.
pub fn two_state_reading_law(tsv: &TwoStateVector, projector: &Projector, cfg: &PointerConfig) -> Result<ReadingLaw> {
    let on = index_of(tsv.labels(), projector.target())?;
    Ok(reading_law(&tsv.pre.density(), &tsv.post.density(), on, cfg))
}

/// Expected reading for a pure two-state vector (exact at finite coupling), `None` post-selection
/// meaning the pre-selected ensemble alone.
pub fn two_state_pointer_shift(
    pre: &PathState,
    post: Option<&PathState>,
    projector: &Projector,
    cfg: &PointerConfig,
) -> Result<f64> {
    let on = index_of(pre.labels(), projector.target())?;
    let effect = post.map_or(Mat2::IDENTITY, |p| p.density());
    reading_law(&pre.density(), &effect, on, cfg).mean()
}

fn dephase(m: &Mat2, d: f64) -> Mat2 {
    let mut out = *m;
    out.0[0][1] *= d;
    out.0[1][0] *= d;
    out
}

/// Stage-by-stage channel algebra on a validated circuit.
struct Channels<'a> {
    spec: &'a CircuitSpec,
}

impl<'a> Channels<'a> {
    /// Unnormalized density operator just before stage `until`, every upstream probe acting
    /// as its averaged (dephasing) channel and blocks as projectors.
    fn forward(&self, start: &PortLabel, until: usize) -> Result<(Mat2, PortPair)> {
        let spec = self.spec;
        let labels = spec.initial_basis().clone();
        let mut rho = PathState::basis(labels.clone(), start)?.density();
        let mut labels = labels;
        for i in 0..until {
            match &spec.stages()[i] {
                StageElement::Probe { pointer, .. } => rho = dephase(&rho, decoherence_factor(pointer)),
                StageElement::StrongDetect { .. } => break,
                _ => {
                    let (m, _, out) = spec.linear_map(i, i + 1)?;
                    rho = m.mul(&rho).mul(&m.adjoint());
                    labels = out;
                }
            }
        }
        Ok((rho, labels))
    }

    /// Effect operator just after stage `after` for detecting `post` (or surviving, if `None`).
    fn backward(&self, post: Option<&PortLabel>, after: usize) -> Result<(Mat2, PortPair)> {
        let spec = self.spec;
        let n = spec.stages().len();
        let final_basis = spec.final_basis().clone();
        let mut effect = match post {
            Some(p) => PathState::basis(final_basis.clone(), p)?.density(),
            None => Mat2::IDENTITY,
        };
        let mut labels = final_basis;
        for i in (after + 1..n - 1).rev() {
            match &spec.stages()[i] {
                StageElement::Probe { pointer, .. } => {
                    effect = dephase(&effect, decoherence_factor(pointer));
                }
                _ => {
                    let (m, inp, _) = spec.linear_map(i, i + 1)?;
                    effect = m.adjoint().mul(&effect).mul(&m);
                    labels = inp;
                }
            }
        }
        Ok((effect, labels))
    }
}

fn probe_site<'a>(spec: &'a CircuitSpec, probe_id: &str) -> Result<ProbeSite<'a>> {
    spec.probe(probe_id)
        .ok_or_else(|| Error::InvalidInput(format!("no probe `{probe_id}` in circuit")))
}

/// Exact reading law of `probe_id` in `spec`, conditioned on survival and on detecting `post`.
/// All other probes act at their own finite strength.
pub fn probe_reading_law(spec: &CircuitSpec, probe_id: &str, post: Option<&PortLabel>) -> Result<ReadingLaw> {
    probe_reading_law_from(spec, spec.source(), probe_id, post)
}

pub fn probe_reading_law_from(
    spec: &CircuitSpec,
    start: &PortLabel,
    probe_id: &str,
    post: Option<&PortLabel>,
) -> Result<ReadingLaw> {
    let site = probe_site(spec, probe_id)?;
    let ch = Channels { spec };
    let (rho, labels) = ch.forward(start, site.stage)?;
    let (effect, elabels) = ch.backward(post, site.stage)?;
    debug_assert_eq!(labels, elabels);
    let on = index_of(&labels, site.port)?;
    Ok(reading_law(&rho, &effect, on, site.pointer))
}

/// E[q | post-selection] for one probe of the circuit, exact at finite coupling.
pub fn expected_pointer_shift(spec: &CircuitSpec, probe_id: &str, post: Option<&PortLabel>) -> Result<f64> {
    probe_reading_law(spec, probe_id, post)?.mean()
}

/// Exact probability that the photon occupies the probed port just before `probe_id`,
/// given it survived every upstream block.
pub fn port_occupancy(spec: &CircuitSpec, probe_id: &str) -> Result<f64> {
    let site = probe_site(spec, probe_id)?;
    let (rho, labels) = Channels { spec }.forward(spec.source(), site.stage)?;
    let tr = rho.trace().re;
    if tr <= ABL_FLOOR {
        return Err(Error::UndefinedConditional("no photon reaches this probe".into()));
    }
    let on = index_of(&labels, site.port)?;
    Ok(rho.get(on, on).re / tr)
}

/// Two-state vector just before stage `stage`: the source propagated forward and the
/// post-selected port propagated backward, both through the probe-free circuit (blocks act
/// as projectors).
pub fn two_state_at(spec: &CircuitSpec, start: &PortLabel, stage: usize, post: &PortLabel) -> Result<TwoStateVector> {
    let n = spec.stages().len();
    let (fwd, fin, fout) = spec.linear_map(0, stage)?;
    let src = PathState::basis(fin, start)?;
    let pre = src.with_amps(fwd.apply(src.amps())).relabel(fout.clone())?;
    let (bwd, bin, bout) = spec.linear_map(stage, n)?;
    let end = PathState::basis(bout, post)?;
    let post_ket = PathState::new(bin, bwd.adjoint().apply(end.amps()))?;
    let undefined = |what: &str| Error::UndefinedConditional(format!("{what} has no amplitude at stage {stage}"));
    let pre = normalize(&pre).map_err(|_| undefined("pre-selection"))?;
    let post = normalize(&post_ket).map_err(|_| undefined("post-selection"))?;
    TwoStateVector::new(pre, post)
}

/// Pre-selected state alone just before `stage`.
pub fn pre_state_at(spec: &CircuitSpec, start: &PortLabel, stage: usize) -> Result<PathState> {
    let (fwd, fin, fout) = spec.linear_map(0, stage)?;
    let src = PathState::basis(fin, start)?;
    normalize(&PathState::new(fout, fwd.apply(src.amps()))?)
        .map_err(|_| Error::UndefinedConditional(format!("pre-selection has no amplitude at stage {stage}")))
}

/// Weak value of the probe's projector for the probe-free two-state vector.
pub fn probe_weak_value(spec: &CircuitSpec, start: &PortLabel, probe_id: &str, post: &PortLabel) -> Result<WeakValueResult> {
    let site = probe_site(spec, probe_id)?;
    let tsv = two_state_at(spec, start, site.stage, post)?;
    let proj = Projector::new(site.port.clone()).matrix(tsv.labels())?;
    weak_value(&tsv, &proj)
}

/// Check used by property tests: projector weak values over a complete basis sum to one.
pub fn completeness_defect(values: &[WeakValueResult]) -> f64 {
    let s: Complex64 = values.iter().map(|w| w.value).sum();
    (s - Complex64::new(1.0, 0.0)).norm()
}

// ---------------------------------------------------------------------------
// Report assembled for the `oracle` command and the run summary.

#[derive(Debug, Clone, Serialize)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexJson {
    fn from(z: Complex64) -> Self {
        ComplexJson { re: z.re, im: z.im }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Computed<T> {
    Value(T),
    Undefined { undefined: String },
}

impl<T> Computed<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(v) => Computed::Value(v),
            Err(e) => Computed::Undefined { undefined: e.to_string() },
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Computed::Value(v) => Some(v),
            Computed::Undefined { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageOracle {
    pub stage: usize,
    pub ports: Vec<String>,
    pub pre_probabilities: Vec<f64>,
    pub weak_values: Computed<Vec<ComplexJson>>,
    pub abl: Computed<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointerShift {
    pub finite: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeOracle {
    pub probe: String,
    pub port: String,
    pub stage: usize,
    pub g: f64,
    pub sigma: f64,
    pub decoherence_factor: f64,
    pub occupancy: Computed<f64>,
    pub weak_value: Computed<ComplexJson>,
    pub pointer_shift: Computed<PointerShift>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub circuit: String,
    pub source: String,
    pub post: Option<String>,
    pub stages: Vec<StageOracle>,
    pub probes: Vec<ProbeOracle>,
    /// Exact occupancy of ports that are dark in the probe-free circuit, keyed by probe.
    pub leakage: Vec<(String, f64)>,
    /// (1 − D)/2 for the first probe's pointer.
    pub leakage_probability: Option<f64>,
}

/// Weak values, ABL probabilities, pointer shifts and leakage for every stage and probe.
pub fn oracle_report(spec: &CircuitSpec, post: Option<&PortLabel>) -> Result<OracleReport> {
    if let Some(p) = post {
        index_of(spec.final_basis(), p)?;
    }
    let src = spec.source();
    let last_seg = spec.segments().len() - 1;
    let mut stages = Vec::new();
    for seg in 1..last_seg {
        let at = spec.segment_start(seg);
        let labels = spec.segments()[seg].clone();
        let pre_probs = match pre_state_at(spec, src, at) {
            Ok(s) => labels.iter().map(|l| s.probability(l).unwrap_or(0.0)).collect(),
            Err(_) => vec![],
        };
        let (weak_values, abl) = match post {
            None => (
                Computed::Undefined { undefined: "no post-selection".into() },
                Computed::Undefined { undefined: "no post-selection".into() },
            ),
            Some(p) => match two_state_at(spec, src, at, p) {
                Err(e) => (
                    Computed::Undefined { undefined: e.to_string() },
                    Computed::Undefined { undefined: e.to_string() },
                ),
                Ok(tsv) => {
                    let obs = Observable::path(&labels);
                    let wv = projector_weak_values(&tsv, obs.eigenbasis())
                        .map(|v| v.into_iter().map(|w| w.value.into()).collect());
                    (Computed::from_result(wv), Computed::from_result(abl_distribution(&tsv, &obs)))
                }
            },
        };
        stages.push(StageOracle {
            stage: seg,
            ports: labels.iter().map(|l| l.to_string()).collect(),
            pre_probabilities: pre_probs,
            weak_values,
            abl,
        });
    }

    let mut probes = Vec::new();
    let mut leakage = Vec::new();
    for site in spec.probes() {
        let cfg = *site.pointer;
        let weak = match post {
            Some(p) => probe_weak_value(spec, src, site.id, p).map(|w| w.value),
            None => pre_state_at(spec, src, site.stage)
                .and_then(|s| s.probability(site.port))
                .map(|p| Complex64::new(p, 0.0)),
        };
        let shift = weak.clone().and_then(|w| {
            Ok(PointerShift {
                finite: expected_pointer_shift(spec, site.id, post)?,
                limit: cfg.g() * w.re,
            })
        });
        let occupancy = port_occupancy(spec, site.id);
        if let (Ok(occ), Ok(pre)) = (&occupancy, pre_state_at(spec, src, site.stage)) {
            if pre.probability(site.port).unwrap_or(1.0) < ALGEBRA_TOL {
                leakage.push((site.id.to_string(), *occ));
            }
        }
        probes.push(ProbeOracle {
            probe: site.id.to_string(),
            port: site.port.to_string(),
            stage: spec.stage_segment(site.stage),
            g: cfg.g(),
            sigma: cfg.sigma(),
            decoherence_factor: decoherence_factor(&cfg),
            occupancy: Computed::from_result(occupancy),
            weak_value: Computed::from_result(weak.map(Into::into)),
            pointer_shift: Computed::from_result(shift),
        });
    }
    let leakage_probability = spec.probes().next().map(|s| leakage_probability(s.pointer));
    Ok(OracleReport {
        circuit: spec.name().to_string(),
        source: src.to_string(),
        post: post.map(|p| p.to_string()),
        stages,
        probes,
        leakage,
        leakage_probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::preset_double_mzi;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn labels() -> PortPair {
        ["L1".into(), "R1".into()]
    }

    fn c(re: f64, im: f64) -> Amplitude {
        Complex64::new(re, im)
    }

    fn state(a: Amplitude, b: Amplitude) -> PathState {
        normalize(&PathState::new(labels(), [a, b]).unwrap()).unwrap()
    }

    fn preset(blocked: bool, g: f64) -> CircuitSpec {
        preset_double_mzi(blocked, PointerConfig::new(g, 1.0).unwrap())
    }

    #[test]
    fn abl_trivial_cases() {
        let obs = Observable::path(&labels());
        let pre = state(c(0.6, 0.0), c(0.0, 0.8));
        let post_l = state(c(0.0, 1.0), c(0.0, 0.0));
        let tsv = TwoStateVector::new(pre.clone(), post_l).unwrap();
        assert!((abl_probability(&tsv, &obs, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!(abl_probability(&tsv, &obs, 1).unwrap().abs() < 1e-12);
        assert!(abl_probability(&tsv, &obs, 2).is_err());
    }

    #[test]
    fn abl_undefined_when_post_selection_impossible() {
        let obs = Observable::path(&labels());
        let pre = state(c(1.0, 0.0), c(0.0, 0.0));
        let post = state(c(0.0, 0.0), c(1.0, 0.0));
        let tsv = TwoStateVector::new(pre, post).unwrap();
        assert!(matches!(abl_distribution(&tsv, &obs), Err(Error::UndefinedConditional(_))));
        assert_eq!(weak_value(&tsv, &Mat2::IDENTITY), Err(Error::UndefinedWeakValue));
    }

    #[test]
    fn weak_value_of_identity_is_one() {
        let tsv = TwoStateVector::new(state(c(0.3, 0.1), c(0.5, -0.2)), state(c(0.9, 0.0), c(0.1, 0.4))).unwrap();
        let w = weak_value(&tsv, &Mat2::IDENTITY).unwrap();
        assert!((w.value - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn weak_value_can_leave_eigenvalue_range() {
        // nearly orthogonal pre/post amplify the weak value of a projector
        let pre = state(c(1.0, 0.0), c(1.0, 0.0));
        let post = state(c(1.0, 0.0), c(-0.9, 0.0));
        let tsv = TwoStateVector::new(pre, post).unwrap();
        let p = Projector::new("L1".into()).matrix(&labels()).unwrap();
        let w = weak_value(&tsv, &p).unwrap().value;
        assert!((w.re - 10.0).abs() < 1e-9, "{w}");
    }

    #[test]
    fn preset_stage_weak_values() {
        let spec = preset(false, 0.1);
        let l0 = PortLabel::from("L0");
        let stage1 = spec.segment_start(1);
        let stage2 = spec.segment_start(2);
        let basis1 = Observable::path(&spec.segments()[1]);
        let basis2 = Observable::path(&spec.segments()[2]);

        let rf = two_state_at(&spec, &l0, stage1, &"Rf".into()).unwrap();
        let w = projector_weak_values(&rf, basis1.eigenbasis()).unwrap();
        assert!((w[0].value - c(1.0, 0.0)).norm() < 1e-12);
        assert!(w[1].value.norm() < 1e-12);

        let lf = two_state_at(&spec, &l0, stage1, &"Lf".into()).unwrap();
        let w = projector_weak_values(&lf, basis1.eigenbasis()).unwrap();
        assert!(w[0].value.norm() < 1e-12);
        assert!((w[1].value - c(1.0, 0.0)).norm() < 1e-12);

        let rf2 = two_state_at(&spec, &l0, stage2, &"Rf".into()).unwrap();
        let w = projector_weak_values(&rf2, basis2.eigenbasis()).unwrap();
        assert!(w[0].value.norm() < 1e-12);
        assert!((w[1].value - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn preset_abl_retrodicts_l1_from_rf() {
        let spec = preset(false, 0.1);
        let tsv = two_state_at(&spec, &"L0".into(), spec.segment_start(1), &"Rf".into()).unwrap();
        let obs = Observable::path(&spec.segments()[1]);
        assert!((abl_probability(&tsv, &obs, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blocked_preset_weak_values_are_half() {
        let spec = preset(true, 0.1);
        for post in ["Lf", "Rf"] {
            let w = probe_weak_value(&spec, &"L0".into(), "W1", &post.into()).unwrap();
            assert!((w.value - c(0.5, 0.0)).norm() < 1e-12, "{post}: {:?}", w.value);
        }
    }

    #[test]
    fn abl_is_time_symmetric() {
        let obs = Observable::path(&labels());
        let pre = state(c(0.3, 0.4), c(-0.2, 0.7));
        let post = state(c(0.1, -0.5), c(0.6, 0.2));
        let tsv = TwoStateVector::new(pre, post).unwrap();
        let a = abl_distribution(&tsv, &obs).unwrap();
        let b = abl_distribution(&tsv.swapped(), &obs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Composite Simpson rule on [a, b] with `n` (even) intervals.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    /// Independent route: integrate readings of W1 and W2 over a grid, pushing pure states
    /// through the Kraus operators, the splitters and the block projector.
    fn quadrature_shift(spec: &CircuitSpec, post: &str) -> f64 {
        let w1 = spec.probe("W1").unwrap();
        let w2 = spec.probe("W2").unwrap();
        let (g1, g2) = (*w1.pointer, *w2.pointer);
        let (m_pre, l0, l1) = spec.linear_map(0, w1.stage).unwrap();
        let (m_mid, _, l2) = spec.linear_map(w1.stage + 1, w2.stage).unwrap();
        let (m_post, _, lf) = spec.linear_map(w2.stage + 1, spec.stages().len()).unwrap();
        let src = PathState::basis(l0, &"L0".into()).unwrap();
        let psi1 = m_pre.apply(src.amps());
        let fin = index_of(&lf, &post.into()).unwrap();
        let (lo, hi, n) = (-8.0, 8.0 + g1.g().max(g2.g()), 800);
        let joint = |with_q: bool| {
            simpson(
                |q1| {
                    let k1 = g1.kraus(&Projector::new(w1.port.clone()), &l1, q1).unwrap();
                    let psi2 = m_mid.apply(k1.apply(psi1));
                    let inner = simpson(
                        |q2| {
                            let k2 = g2.kraus(&Projector::new(w2.port.clone()), &l2, q2).unwrap();
                            m_post.apply(k2.apply(psi2))[fin].norm_sqr()
                        },
                        lo,
                        hi,
                        n,
                    );
                    if with_q {
                        q1 * inner
                    } else {
                        inner
                    }
                },
                lo,
                hi,
                n,
            )
        };
        joint(true) / joint(false)
    }

    #[test]
    fn pointer_shift_matches_quadrature() {
        for (g, blocked) in [(0.1, false), (0.5, false), (1.0, false), (0.5, true)] {
            let spec = preset(blocked, g);
            for post in ["Lf", "Rf"] {
                let closed = expected_pointer_shift(&spec, "W1", Some(&post.into())).unwrap();
                let quad = quadrature_shift(&spec, post);
                assert!((closed - quad).abs() < 1e-8, "g={g} post={post}: {closed} vs {quad}");
            }
        }
    }

    #[test]
    fn pointer_shift_limits() {
        let spec = preset(false, 0.1);
        let pre_only = expected_pointer_shift(&spec, "W1", None).unwrap();
        assert!((pre_only - 0.05).abs() < 1e-12);
        let rf = expected_pointer_shift(&spec, "W1", Some(&"Rf".into())).unwrap();
        assert!((rf - 0.1).abs() < 0.1 * 0.01 * 2.0);
        let zero = preset(false, 0.0);
        assert_eq!(expected_pointer_shift(&zero, "W1", Some(&"Rf".into())).unwrap(), 0.0);
    }

    #[test]
    fn pointer_shift_converges_quadratically() {
        let eps = [0.02, 0.04, 0.08, 0.12, 0.16, 0.2];
        let pts: Vec<(f64, f64)> = eps
            .iter()
            .map(|&e| {
                let spec = preset(false, e);
                let shift = expected_pointer_shift(&spec, "W1", Some(&"Rf".into())).unwrap();
                let w = probe_weak_value(&spec, &"L0".into(), "W1", &"Rf".into()).unwrap();
                (e.ln(), (shift - e * w.value.re).abs().ln())
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!(slope >= 1.8, "slope {slope}");
    }

    #[test]
    fn leakage_formula_matches_channel_occupancy() {
        for g in [0.0, 0.02, 0.1, 0.5, 3.0] {
            let cfg = PointerConfig::new(g, 1.0).unwrap();
            let spec = preset(false, g);
            let occ = port_occupancy(&spec, "W2").unwrap();
            assert!((occ - leakage_probability(&cfg)).abs() < 1e-12);
        }
        assert_eq!(leakage_probability(&PointerConfig::new(0.0, 1.0).unwrap()), 0.0);
        assert!((leakage_probability(&PointerConfig::new(50.0, 1.0).unwrap()) - 0.5).abs() < 1e-12);
        let l = leakage_probability(&PointerConfig::new(0.1, 1.0).unwrap());
        assert!((l - (1.0 - (-0.00125f64).exp()) / 2.0).abs() < 1e-15);
        assert!((l - 6.25e-4).abs() < 1e-6);
    }

    #[test]
    fn reading_law_normalizes_and_tails() {
        let spec = preset(false, 0.4);
        let total: f64 = ["Lf", "Rf"]
            .iter()
            .map(|p| probe_reading_law(&spec, "W1", Some(&(*p).into())).unwrap().total())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        let law = probe_reading_law(&spec, "W1", Some(&"Rf".into())).unwrap();
        let quad_tail = simpson(|q| law.density(q), 0.2, 12.0, 4000) / law.total();
        assert!((law.tail(0.2).unwrap() - quad_tail).abs() < 1e-9);
        assert!((law.tail(-50.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_report_preset() {
        let spec = preset(false, 0.1);
        let r = oracle_report(&spec, Some(&"Rf".into())).unwrap();
        let w = r.stages[0].weak_values.value().unwrap();
        assert!((w[0].re - 1.0).abs() < 1e-12 && w[1].re.abs() < 1e-12);
        assert_eq!(r.leakage.len(), 1);
        assert_eq!(r.leakage[0].0, "W2");
        let none = oracle_report(&spec, None).unwrap();
        let shift = none.probes[0].pointer_shift.value().unwrap();
        assert!((shift.finite - 0.05).abs() < 1e-12 && (shift.limit - 0.05).abs() < 1e-12);
        assert!(oracle_report(&spec, Some(&"L9".into())).is_err());
    }

    #[test]
    fn observable_validation() {
        let a = state(c(1.0, 0.0), c(1.0, 0.0));
        let b = state(c(1.0, 0.0), c(0.0, 1.0));
        assert!(Observable::new(vec![a.clone(), b], vec![1.0, -1.0]).is_err());
        let a_perp = state(c(1.0, 0.0), c(-1.0, 0.0));
        let obs = Observable::new(vec![a, a_perp], vec![1.0, -1.0]).unwrap();
        let m = obs.matrix();
        assert!((m.get(0, 1) - c(1.0, 0.0)).norm() < 1e-12);
        assert!((m.get(0, 0)).norm() < 1e-12);
        assert!((state(c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)).norm_sqr() - 1.0).abs() < 1e-12);
    }
}
