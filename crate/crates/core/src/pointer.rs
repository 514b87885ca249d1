//! Gaussian von Neumann pointer coupled to a path projector.
//!
//! A probe with coupling `g` shifts a Gaussian pointer of width `sigma` by `g`
//! when the photon is on the probed port and leaves it in place otherwise. The
//! pointer is read sharply once and reset before the next photon, so every
//! reading is drawn from the continuous Kraus family
//!
//! ```text
//! K(q) = ψ₀(q − g)·Π + ψ₀(q)·(I − Π)
//! ```
//!
//! where ψ₀ is the real Gaussian amplitude whose square has standard deviation `sigma`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{index_of, normalize, Amplitude, Mat2, PathState, PortLabel, Projector, INPUT_TOL};

/// Coupling and width of one weak probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointerConfig {
    g: f64,
    sigma: f64,
}

impl PointerConfig {
    pub fn new(g: f64, sigma: f64) -> Result<Self> {
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::InvalidInput(format!("pointer shift must be finite and >= 0, got {g}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput(format!("pointer width must be finite and > 0, got {sigma}")));
        }
        Ok(PointerConfig { g, sigma })
    }

    /// Pointer with unit width and weakness ratio `epsilon`.
    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        PointerConfig::new(epsilon, 1.0)
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Weakness ratio g/σ.
    pub fn epsilon(&self) -> f64 {
        self.g / self.sigma
    }

    /// ψ₀(q): real Gaussian amplitude, |ψ₀|² = N(0, σ²).
    pub fn amplitude(&self, q: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (2.0 * PI * s2).powf(-0.25) * (-q * q / (4.0 * s2)).exp()
    }

    /// Kraus operator for reading `q` in the basis `labels`, with `projector` marking the shifted port.
    pub fn kraus(&self, projector: &Projector, labels: &[PortLabel; 2], q: f64) -> Result<Mat2> {
        let on = Amplitude::new(self.amplitude(q - self.g), 0.0);
        let off = Amplitude::new(self.amplitude(q), 0.0);
        Ok(match index_of(labels, projector.target())? {
            0 => Mat2::diag(on, off),
            _ => Mat2::diag(off, on),
        })
    }
}

/// One recorded pointer position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakReading {
    pub probe_id: String,
    pub q: f64,
}

/// Draws a pointer position from p·N(g, σ²) + (1 − p)·N(0, σ²).
pub fn sample_reading<R: Rng + ?Sized>(cfg: &PointerConfig, p: f64, rng: &mut R) -> Result<f64> {
    if !p.is_finite() || !(-INPUT_TOL..=1.0 + INPUT_TOL).contains(&p) {
        return Err(Error::InvalidInput(format!("branch probability {p} outside [0, 1]")));
    }
    let p = p.clamp(0.0, 1.0);
    let fired = rng.random::<f64>() < p;
    let noise: f64 = rng.sample(StandardNormal);
    let centre = if fired { cfg.g } else { 0.0 };
    Ok(centre + cfg.sigma * noise)
}

/// Post-reading state K(q)ψ / ‖K(q)ψ‖.
pub fn collapse_update(
    psi: &PathState,
    projector: &Projector,
    cfg: &PointerConfig,
    q: f64,
) -> Result<PathState> {
    if cfg.g == 0.0 {
        return Ok(psi.clone());
    }
    if !q.is_finite() {
        return Err(Error::InvalidInput(format!("pointer reading {q} is not finite")));
    }
    let on_idx = index_of(psi.labels(), projector.target())?;
    // Weights are taken relative to the larger one so that distant readings do not underflow.
    let four_s2 = 4.0 * cfg.sigma * cfg.sigma;
    let log_on = -(q - cfg.g).powi(2) / four_s2;
    let log_off = -q * q / four_s2;
    let top = log_on.max(log_off);
    let (w_on, w_off) = ((log_on - top).exp(), (log_off - top).exp());
    let mut amps = psi.amps();
    amps[on_idx] *= w_on;
    amps[1 - on_idx] *= w_off;
    normalize(&psi.with_amps(amps)).map_err(|e| match e {
        Error::NullBranch => Error::NumericGuard(format!(
            "reading q = {q} has vanishing likelihood for this state"
        )),
        other => other,
    })
}

/// Projective measurement in the stage basis: the port and the collapsed basis state.
pub fn strong_measure<R: Rng + ?Sized>(psi: &PathState, rng: &mut R) -> Result<(PortLabel, PathState)> {
    let first = psi.probability(&psi.labels()[0])?;
    let k = if rng.random::<f64>() < first { 0 } else { 1 };
    let port = psi.labels()[k].clone();
    let collapsed = PathState::basis(psi.labels().clone(), &port)?;
    Ok((port, collapsed))
}

/// Overlap of the two pointer states, exp(−g²/(8σ²)).
pub fn decoherence_factor(cfg: &PointerConfig) -> f64 {
    (-(cfg.g * cfg.g) / (8.0 * cfg.sigma * cfg.sigma)).exp()
}
