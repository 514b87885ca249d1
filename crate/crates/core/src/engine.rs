//! Seeded Monte Carlo trial engine.
//!
//! Every trial owns a ChaCha stream seeded from `counter_hash(master_seed, trial_id)`,
//! so results do not depend on scheduling or on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::circuit::{propagate_from, CircuitSpec, Outcome, ProbeHandler, ProbeSite, StageElement};
use crate::error::{Error, Result};
use crate::linalg::{Mat2, PathState, PortLabel, Projector};
use crate::pointer::{collapse_update, sample_reading, WeakReading};

const CYCLE_SURVIVAL_SALT: u64 = 0x5EED_0FC1_C1E5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed derived from the master seed and the trial counter.
pub fn counter_hash(master_seed: u64, counter: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(counter))
}

/// Content hash of a circuit, including every probe's pointer.
pub fn fingerprint(spec: &CircuitSpec) -> String {
    let bytes = serde_json::to_vec(spec).expect("circuit serializes");
    hex::encode(Sha256::digest(bytes))
}

/// One photon's history through the cascade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub initial_port: PortLabel,
    /// Readings of the probes on the surviving branch, in traversal order.
    pub readings: Vec<WeakReading>,
    /// Born probability of each probe's port just before its reading, same order as
    /// `readings`. Empty for records loaded back from CSV.
    #[serde(skip)]
    pub occupancy: Vec<f64>,
    pub outcome: Outcome,
    pub seed: u64,
}

impl TrialRecord {
    pub fn reading(&self, probe_id: &str) -> Option<f64> {
        self.readings.iter().find(|r| r.probe_id == probe_id).map(|r| r.q)
    }

    pub fn occupancy(&self, probe_id: &str) -> Option<f64> {
        let i = self.readings.iter().position(|r| r.probe_id == probe_id)?;
        self.occupancy.get(i).copied()
    }

    pub fn final_port(&self) -> Option<&PortLabel> {
        self.outcome.port()
    }

    pub fn is_absorbed(&self) -> bool {
        self.outcome == Outcome::Absorbed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub fingerprint: String,
    pub circuit: String,
    pub probe_ids: Vec<String>,
    pub master_seed: u64,
    /// Trials in `trial_id` order, absorbed ones included.
    pub trials: Vec<TrialRecord>,
}

impl EnsembleResult {
    pub fn n(&self) -> usize {
        self.trials.len()
    }

    pub fn absorbed_count(&self) -> usize {
        self.trials.iter().filter(|t| t.is_absorbed()).count()
    }

    pub fn detected(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| !t.is_absorbed())
    }

    /// Digest of every recorded value, bit for bit.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.fingerprint.as_bytes());
        h.update(self.master_seed.to_le_bytes());
        for t in &self.trials {
            h.update(t.trial_id.to_le_bytes());
            h.update(t.seed.to_le_bytes());
            h.update(t.initial_port.as_str().as_bytes());
            h.update([0]);
            match &t.outcome {
                Outcome::Detected(p) => h.update(p.as_str().as_bytes()),
                Outcome::Absorbed => h.update([0xff]),
            }
            h.update([0]);
            for r in &t.readings {
                h.update(r.probe_id.as_bytes());
                h.update(r.q.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Weak readout at every probe: sample the pointer from the current state, then collapse.
#[derive(Debug, Default)]
struct PointerReadout {
    readings: Vec<WeakReading>,
    occupancy: Vec<f64>,
}

impl ProbeHandler for PointerReadout {
    fn on_probe<R: Rng + ?Sized>(&mut self, site: ProbeSite<'_>, state: &PathState, rng: &mut R) -> Result<PathState> {
        let p = state.probability(site.port)?;
        let q = sample_reading(site.pointer, p, rng)?;
        self.readings.push(WeakReading {
            probe_id: site.id.to_string(),
            q,
        });
        self.occupancy.push(p);
        collapse_update(state, &Projector::new(site.port.clone()), site.pointer, q)
    }
}

fn trial_from(spec: &CircuitSpec, start: &PortLabel, trial_id: u64, seed: u64) -> Result<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut readout = PointerReadout::default();
    let run = propagate_from(spec, start, &mut readout, &mut rng)?;
    Ok(TrialRecord {
        trial_id,
        initial_port: start.clone(),
        readings: readout.readings,
        occupancy: readout.occupancy,
        outcome: run.outcome,
        seed,
    })
}

/// One photon from the circuit's source, fully determined by `seed`.
pub fn run_trial(spec: &CircuitSpec, trial_id: u64, seed: u64) -> Result<TrialRecord> {
    trial_from(spec, spec.source(), trial_id, seed)
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// `n` independent photons; bit-identical for any worker count.
pub fn run_ensemble(spec: &CircuitSpec, n: usize, master_seed: u64, threads: usize) -> Result<EnsembleResult> {
    if n == 0 {
        return Err(Error::InvalidInput("ensemble size must be at least 1".into()));
    }
    let trials = with_pool(threads, || {
        (0..n as u64)
            .into_par_iter()
            .map(|k| run_trial(spec, k, counter_hash(master_seed, k)))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(EnsembleResult {
        fingerprint: fingerprint(spec),
        circuit: spec.name().to_string(),
        probe_ids: spec.probe_ids(),
        master_seed,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// One pass of the single photon through the cascade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub cycle_index: u64,
    pub direction: Direction,
    pub start_port: PortLabel,
    pub end_port: PortLabel,
    pub readings: Vec<WeakReading>,
}

impl CycleRecord {
    pub fn reading(&self, probe_id: &str) -> Option<f64> {
        self.readings.iter().find(|r| r.probe_id == probe_id).map(|r| r.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConfig {
    /// Number of passes (forward and backward alternate, starting forward).
    pub passes: usize,
    pub master_seed: u64,
    /// Probability that the photon survives a pass; 1.0 is lossless.
    pub survival: f64,
    /// Whether the probes also act on backward passes.
    pub backward_probes: bool,
}

impl CycleConfig {
    pub fn new(passes: usize, master_seed: u64) -> Self {
        CycleConfig {
            passes,
            master_seed,
            survival: 1.0,
            backward_probes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRun {
    pub records: Vec<CycleRecord>,
    /// Pass at which the photon was lost or absorbed, if the history ended early.
    pub ended_at: Option<u64>,
}

fn strip_probes(spec: &CircuitSpec) -> Result<CircuitSpec> {
    let stages = spec
        .stages()
        .iter()
        .filter(|s| !matches!(s, StageElement::Probe { .. }))
        .cloned()
        .collect();
    CircuitSpec::new(spec.name(), spec.source().clone(), stages)
}

/// A single photon bouncing through the cascade: forward passes through `spec`, backward
/// passes through its adjoint. The end mirrors detect strongly, so each pass starts from
/// the port the previous pass ended at.
pub fn run_single_photon_cycles(spec: &CircuitSpec, cfg: &CycleConfig) -> Result<CycleRun> {
    if cfg.passes == 0 {
        return Err(Error::InvalidInput("cycle count must be at least 1".into()));
    }
    if !(cfg.survival > 0.0 && cfg.survival <= 1.0) {
        return Err(Error::InvalidInput(format!("survival {} outside (0, 1]", cfg.survival)));
    }
    let mut backward = spec.adjoint(spec.final_basis()[0].clone())?;
    if !cfg.backward_probes {
        backward = strip_probes(&backward)?;
    }
    let mut records = Vec::with_capacity(cfg.passes);
    let mut port = spec.source().clone();
    for k in 0..cfg.passes as u64 {
        if cfg.survival < 1.0 {
            let mut loss = ChaCha8Rng::seed_from_u64(counter_hash(cfg.master_seed ^ CYCLE_SURVIVAL_SALT, k));
            if loss.random::<f64>() >= cfg.survival {
                return Ok(CycleRun { records, ended_at: Some(k) });
            }
        }
        let (direction, circuit) = if k % 2 == 0 {
            (Direction::Forward, spec)
        } else {
            (Direction::Backward, &backward)
        };
        let trial = trial_from(circuit, &port, k, counter_hash(cfg.master_seed, k))?;
        let Outcome::Detected(end) = trial.outcome else {
            return Ok(CycleRun { records, ended_at: Some(k) });
        };
        records.push(CycleRecord {
            cycle_index: k,
            direction,
            start_port: port,
            end_port: end.clone(),
            readings: trial.readings,
        });
        port = end;
    }
    Ok(CycleRun { records, ended_at: None })
}

/// Monte Carlo estimate of the photon's state after the first `stages` elements.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub labels: [PortLabel; 2],
    pub rho: Mat2,
    /// Standard errors of the real and imaginary parts of each entry.
    pub se_re: [[f64; 2]; 2],
    pub se_im: [[f64; 2]; 2],
    /// Trajectories that reached the stage.
    pub count: usize,
}

/// Averages |ψ⟩⟨ψ| over `n` weak-readout trajectories just after stage index `stages - 1`.
pub fn density_probe(spec: &CircuitSpec, stages: usize, n: usize, master_seed: u64) -> Result<DensityEstimate> {
    if stages == 0 || stages >= spec.stages().len() {
        return Err(Error::InvalidInput(format!(
            "stage count must lie in 1..{}",
            spec.stages().len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("need at least two trajectories".into()));
    }
    let states: Vec<PathState> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(counter_hash(master_seed, k));
            let run = propagate_from(spec, spec.source(), &mut PointerReadout::default(), &mut rng)?;
            Ok(run.trajectory.get(stages - 1).cloned())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let count = states.len();
    if count < 2 {
        return Err(Error::UndefinedConditional("too few trajectories reach this stage".into()));
    }
    let labels = states[0].labels().clone();
    let mut rho = Mat2::ZERO;
    let mut se_re = [[0.0; 2]; 2];
    let mut se_im = [[0.0; 2]; 2];
    let dens: Vec<Mat2> = states.iter().map(|s| s.density()).collect();
    for r in 0..2 {
        for c in 0..2 {
            let re: Vec<f64> = dens.iter().map(|d| d.get(r, c).re).collect();
            let im: Vec<f64> = dens.iter().map(|d| d.get(r, c).im).collect();
            let (mr, sr) = mean_se(&re);
            let (mi, si) = mean_se(&im);
            rho.0[r][c] = num_complex::Complex64::new(mr, mi);
            se_re[r][c] = sr;
            se_im[r][c] = si;
        }
    }
    Ok(DensityEstimate { labels, rho, se_re, se_im, count })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{preset_double_mzi, propagate, Unprobed};
    use crate::pointer::{decoherence_factor, PointerConfig};
    use crate::tsvf::{abl_distribution, two_state_at, Observable};

    fn preset(blocked: bool, g: f64) -> CircuitSpec {
        preset_double_mzi(blocked, PointerConfig::new(g, 1.0).unwrap())
    }

    fn freq(xs: impl Iterator<Item = bool>) -> (f64, usize) {
        let (mut hit, mut n) = (0usize, 0usize);
        for x in xs {
            n += 1;
            hit += x as usize;
        }
        (hit as f64 / n as f64, n)
    }

    #[test]
    fn counter_hash_spreads_seeds() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|k| counter_hash(42, k)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(counter_hash(1, 0), counter_hash(2, 0));
    }

    #[test]
    fn uncoupled_probes_record_pure_noise() {
        let spec = preset(false, 0.0);
        let r = run_ensemble(&spec, 20_000, 7, 2).unwrap();
        let (f, n) = freq(r.trials.iter().map(|t| t.final_port().unwrap().as_str() == "Lf"));
        assert!((f - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
        let w1: Vec<f64> = r.trials.iter().map(|t| t.reading("W1").unwrap()).collect();
        let (m, se) = mean_se(&w1);
        assert!(m.abs() < 4.0 * se);
        assert!((se * (w1.len() as f64).sqrt() - 1.0).abs() < 0.03);
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let spec = preset(true, 0.3);
        let a = run_ensemble(&spec, 3_000, 42, 1).unwrap();
        let b = run_ensemble(&spec, 3_000, 42, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let c = run_ensemble(&spec, 3_000, 43, 4).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn trial_is_reproducible_and_first_trial_matches_ensemble() {
        let spec = preset(false, 0.1);
        let t = run_trial(&spec, 0, counter_hash(9, 0)).unwrap();
        assert_eq!(t, run_trial(&spec, 0, counter_hash(9, 0)).unwrap());
        let e = run_ensemble(&spec, 5, 9, 1).unwrap();
        assert_eq!(e.trials[0], t);
        assert_eq!(t.readings.len(), 2);
    }

    #[test]
    fn absorbed_only_with_block() {
        let free = run_ensemble(&preset(false, 2.0), 5_000, 1, 2).unwrap();
        assert_eq!(free.absorbed_count(), 0);
        let blocked = run_ensemble(&preset(true, 2.0), 5_000, 1, 2).unwrap();
        assert!(blocked.absorbed_count() > 0);
        for t in blocked.trials.iter().filter(|t| t.is_absorbed()) {
            // W1 and W2 precede the block
            assert_eq!(t.readings.len(), 2);
        }
    }

    #[test]
    fn strong_probe_conditionals_match_abl() {
        // ε = 10 on W1 and no coupling on W2.
        let spec = preset(false, 10.0)
            .with_probe_pointer("W2", PointerConfig::new(0.0, 1.0).unwrap())
            .unwrap();
        let r = run_ensemble(&spec, 100_000, 5, 4).unwrap();
        let w1 = spec.probe("W1").unwrap();
        let tsv_rf = two_state_at(&spec, &"L0".into(), w1.stage, &"Rf".into()).unwrap();
        let abl = abl_distribution(&tsv_rf, &Observable::path(&spec.segments()[1])).unwrap();
        let rf: Vec<&TrialRecord> = r.trials.iter().filter(|t| t.final_port().unwrap().as_str() == "Rf").collect();
        let (f, _) = freq(rf.iter().map(|t| t.reading("W1").unwrap() > 5.0));
        assert!((f - abl[0]).abs() <= 4.0 * (abl[0] * (1.0 - abl[0]) / rf.len() as f64).sqrt());
        // readings bimodal near 0 and g
        let near = r
            .trials
            .iter()
            .filter(|t| {
                let q = t.reading("W1").unwrap();
                q.abs() < 5.0 || (q - 10.0).abs() < 5.0
            })
            .count();
        assert!(near as f64 > 0.999 * r.n() as f64);
    }

    #[test]
    fn recording_does_not_signal() {
        let spec = preset(false, 0.1);
        let n = 100_000;
        let probed = run_ensemble(&spec, n, 17, 4).unwrap();
        let (f_probed, _) = freq(probed.trials.iter().map(|t| t.final_port().unwrap().as_str() == "Rf"));
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let (f_free, _) = freq((0..n).map(|_| {
            propagate(&spec, &mut Unprobed, &mut rng).unwrap().outcome.port().unwrap().as_str() == "Rf"
        }));
        let tol = 4.0 * (2.0 * 0.25 / n as f64).sqrt();
        assert!((f_probed - f_free).abs() < tol, "{f_probed} vs {f_free}");
    }

    #[test]
    fn density_probe_tracks_dephasing() {
        let n = 100_000;
        for g in [0.0, 0.1, 10.0] {
            let spec = preset(false, g);
            // BS1 then W1
            let est = density_probe(&spec, 2, n, 3).unwrap();
            let want = 0.5 * decoherence_factor(&PointerConfig::new(g, 1.0).unwrap());
            let off = est.rho.get(0, 1);
            let se = (est.se_re[0][1].powi(2) + est.se_im[0][1].powi(2)).sqrt();
            assert!((off.norm() - want).abs() <= 4.0 * se + 1e-12, "g={g}: {} vs {want}", off.norm());
        }
        assert!(density_probe(&preset(false, 0.1), 0, 10, 0).is_err());
    }

    #[test]
    fn cycles_chain_and_reduce_to_a_trial() {
        let spec = preset(false, 0.1);
        let one = run_single_photon_cycles(&spec, &CycleConfig::new(1, 21)).unwrap();
        let trial = run_trial(&spec, 0, counter_hash(21, 0)).unwrap();
        assert_eq!(one.records[0].readings, trial.readings);
        assert_eq!(Some(&one.records[0].end_port), trial.final_port());

        let run = run_single_photon_cycles(&spec, &CycleConfig::new(2_000, 21)).unwrap();
        assert_eq!(run.records.len(), 2_000);
        for w in run.records.windows(2) {
            assert_eq!(w[0].end_port, w[1].start_port);
            assert_ne!(w[0].direction, w[1].direction);
        }
        let (f, n) = freq(
            run.records
                .iter()
                .filter(|r| r.direction == Direction::Forward)
                .map(|r| r.start_port.as_str() == "L0"),
        );
        assert!((f - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn lossy_cycles_end_early_and_forward_only_probes() {
        let spec = preset(false, 0.1);
        let mut cfg = CycleConfig::new(10_000, 4);
        cfg.survival = 0.99;
        let run = run_single_photon_cycles(&spec, &cfg).unwrap();
        assert!(run.ended_at.is_some());
        assert_eq!(run.records.len() as u64, run.ended_at.unwrap());

        let mut cfg = CycleConfig::new(10, 4);
        cfg.backward_probes = false;
        let run = run_single_photon_cycles(&spec, &cfg).unwrap();
        for r in &run.records {
            let want = if r.direction == Direction::Forward { 2 } else { 0 };
            assert_eq!(r.readings.len(), want);
        }
        assert!(run_single_photon_cycles(&spec, &CycleConfig::new(0, 1)).is_err());
    }
}
