//! Slicing recorded weak readings into post- (or pre-) selected sub-ensembles.
//!
//! Each trial keeps its raw pointer positions; after the run the ensemble can be
//! regrouped by any later or earlier strong outcome and the group means compared.
//! This module also carries the two tests used against the rival "collapsed
//! minority" account: the accurate/inaccurate (AC/IN) split and the subsample test.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::circuit::{CircuitSpec, StageElement};
use crate::engine::{CycleRecord, Direction, EnsembleResult, TrialRecord};
use crate::error::{Error, Result};
use crate::linalg::PortLabel;
use crate::pointer::decoherence_factor;
use crate::tsvf::{probe_reading_law, probe_weak_value};

/// z above which the rival account is rejected.
pub const REJECT_Z: f64 = 5.0;
/// |z| below which a prediction is considered compatible with the data.
pub const ACCEPT_Z: f64 = 4.0;

type KeyFn = Box<dyn Fn(&TrialRecord) -> String + Send + Sync>;
type PredicateFn = Box<dyn Fn(&TrialRecord) -> bool + Send + Sync>;

pub enum SliceCriterion {
    FinalPort,
    InitialPort,
    /// Arbitrary grouping key.
    Custom { name: String, key: KeyFn },
    /// Two slices, `match` and `rest`, both always present.
    Predicate { name: String, test: PredicateFn },
}

impl SliceCriterion {
    pub fn custom(name: impl Into<String>, key: impl Fn(&TrialRecord) -> String + Send + Sync + 'static) -> Self {
        SliceCriterion::Custom { name: name.into(), key: Box::new(key) }
    }

    pub fn predicate(name: impl Into<String>, test: impl Fn(&TrialRecord) -> bool + Send + Sync + 'static) -> Self {
        SliceCriterion::Predicate { name: name.into(), test: Box::new(test) }
    }

    pub fn name(&self) -> &str {
        match self {
            SliceCriterion::FinalPort => "final",
            SliceCriterion::InitialPort => "initial",
            SliceCriterion::Custom { name, .. } | SliceCriterion::Predicate { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Slice<'a> {
    pub key: String,
    pub trials: Vec<&'a TrialRecord>,
}

impl Slice<'_> {
    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// A partition of the non-absorbed trials.
#[derive(Debug, Clone)]
pub struct Slicing<'a> {
    pub criterion: String,
    pub slices: Vec<Slice<'a>>,
    pub absorbed_excluded: usize,
    pub flags: Vec<String>,
}

pub fn slice<'a>(result: &'a EnsembleResult, criterion: &SliceCriterion) -> Slicing<'a> {
    let mut groups: BTreeMap<String, Vec<&TrialRecord>> = BTreeMap::new();
    if let SliceCriterion::Predicate { .. } = criterion {
        groups.insert("match".into(), vec![]);
        groups.insert("rest".into(), vec![]);
    }
    for t in result.detected() {
        let key = match criterion {
            SliceCriterion::FinalPort => t.final_port().expect("detected").to_string(),
            SliceCriterion::InitialPort => t.initial_port.to_string(),
            SliceCriterion::Custom { key, .. } => key(t),
            SliceCriterion::Predicate { test, .. } => if test(t) { "match" } else { "rest" }.to_string(),
        };
        groups.entry(key).or_default().push(t);
    }
    let mut flags = Vec::new();
    if result.detected().next().is_none() {
        flags.push("empty ensemble".to_string());
    }
    let slices: Vec<Slice> = groups
        .into_iter()
        .map(|(key, trials)| Slice { key, trials })
        .collect();
    for s in slices.iter().filter(|s| s.is_empty()) {
        flags.push(format!("slice `{}` is empty", s.key));
    }
    Slicing {
        criterion: criterion.name().to_string(),
        slices,
        absorbed_excluded: result.absorbed_count(),
        flags,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeStat {
    pub probe: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    /// Exact finite-strength expectation for this slice, when a circuit is supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceStats {
    pub key: String,
    pub count: usize,
    pub probes: Vec<ProbeStat>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceContrast {
    pub probe: String,
    pub a: String,
    pub b: String,
    pub difference: Option<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceReport {
    pub criterion: String,
    pub total: usize,
    pub absorbed_excluded: usize,
    pub slices: Vec<SliceStats>,
    pub contrasts: Vec<SliceContrast>,
    pub flags: Vec<String>,
}

impl SliceReport {
    pub fn slice(&self, key: &str) -> Option<&SliceStats> {
        self.slices.iter().find(|s| s.key == key)
    }

    pub fn stat(&self, key: &str, probe: &str) -> Option<&ProbeStat> {
        self.slice(key)?.probes.iter().find(|p| p.probe == probe)
    }

    pub fn z(&self, probe: &str) -> Option<f64> {
        self.contrasts.iter().find(|c| c.probe == probe).and_then(|c| c.z)
    }
}

/// Sample mean and standard error (sample std / √n); `None` below two values.
pub fn mean_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(m), None);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some((var / n).sqrt()))
}

/// |mean_a − mean_b| / √(se_a² + se_b²).
pub fn z_score(mean_a: f64, se_a: f64, mean_b: f64, se_b: f64) -> Option<f64> {
    let pooled = (se_a * se_a + se_b * se_b).sqrt();
    (pooled > 0.0).then(|| (mean_a - mean_b).abs() / pooled)
}

fn probe_stat(probe: &str, xs: &[f64]) -> ProbeStat {
    let (mean, se) = mean_se(xs);
    let flag = match xs.len() {
        0 => Some("no readings".to_string()),
        1 => Some("standard error undefined for a single reading".to_string()),
        _ => None,
    };
    ProbeStat {
        probe: probe.to_string(),
        count: xs.len(),
        mean,
        se,
        oracle_mean: None,
        oracle_z: None,
        flag,
    }
}

fn build_report(
    criterion: String,
    groups: Vec<(String, Vec<Vec<f64>>)>,
    probes: &[String],
    absorbed_excluded: usize,
    mut flags: Vec<String>,
) -> SliceReport {
    let mut total = 0;
    let mut slices = Vec::new();
    for (key, per_probe) in &groups {
        let stats: Vec<ProbeStat> = probes.iter().zip(per_probe).map(|(p, xs)| probe_stat(p, xs)).collect();
        let count = per_probe.first().map_or(0, |xs| xs.len()).max(stats.iter().map(|s| s.count).max().unwrap_or(0));
        for s in &stats {
            if let Some(f) = &s.flag {
                flags.push(format!("slice `{key}`, probe {}: {f}", s.probe));
            }
        }
        slices.push(SliceStats { key: key.clone(), count, probes: stats });
    }
    let mut contrasts = Vec::new();
    for (pi, probe) in probes.iter().enumerate() {
        for i in 0..slices.len() {
            for j in i + 1..slices.len() {
                let (a, b) = (&slices[i].probes[pi], &slices[j].probes[pi]);
                let (difference, z) = match (a.mean, a.se, b.mean, b.se) {
                    (Some(ma), Some(sa), Some(mb), Some(sb)) => (Some(ma - mb), z_score(ma, sa, mb, sb)),
                    _ => (None, None),
                };
                contrasts.push(SliceContrast {
                    probe: probe.clone(),
                    a: slices[i].key.clone(),
                    b: slices[j].key.clone(),
                    difference,
                    z,
                });
            }
        }
    }
    total += slices.iter().map(|s| s.count).sum::<usize>();
    SliceReport { criterion, total, absorbed_excluded, slices, contrasts, flags }
}

/// Per-slice means and standard errors for every probe, plus pairwise z-scores.
pub fn slice_means(slicing: &Slicing<'_>, probes: &[String]) -> SliceReport {
    let groups = slicing
        .slices
        .iter()
        .map(|s| {
            let per_probe = probes
                .iter()
                .map(|p| s.trials.iter().filter_map(|t| t.reading(p)).collect())
                .collect();
            (s.key.clone(), per_probe)
        })
        .collect();
    let mut report = build_report(
        slicing.criterion.clone(),
        groups,
        probes,
        slicing.absorbed_excluded,
        slicing.flags.clone(),
    );
    for (s, sl) in report.slices.iter_mut().zip(&slicing.slices) {
        s.count = sl.trials.len();
    }
    report.total = report.slices.iter().map(|s| s.count).sum();
    report
}

/// Fills the oracle columns of a final-port report from the exact reading laws of `spec`.
pub fn attach_oracle(report: &mut SliceReport, spec: &CircuitSpec) {
    let by_final = report.criterion == "final";
    let all = report.criterion == "all";
    for s in &mut report.slices {
        let post = if by_final {
            Some(PortLabel::new(s.key.clone()))
        } else if all {
            None
        } else {
            continue;
        };
        for p in &mut s.probes {
            if spec.probe(&p.probe).is_none() {
                continue;
            }
            if let Ok(m) = probe_reading_law(spec, &p.probe, post.as_ref()).and_then(|l| l.mean()) {
                p.oracle_mean = Some(m);
                if let (Some(mean), Some(se)) = (p.mean, p.se) {
                    p.oracle_z = Some((mean - m) / se);
                }
            }
        }
    }
}

/// The whole non-absorbed ensemble as one slice.
pub fn unsliced(result: &EnsembleResult) -> Slicing<'_> {
    let all = slice(result, &SliceCriterion::custom("all", |_| "all".to_string()));
    Slicing { criterion: "all".into(), ..all }
}

/// Seeded uniform subset without replacement of size round(fraction · N), in trial order.
pub fn subsample(result: &EnsembleResult, fraction: f64, seed: u64) -> Result<EnsembleResult> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let n = result.n();
    let k = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(EnsembleResult {
        trials: idx.into_iter().map(|i| result.trials[i].clone()).collect(),
        ..result.clone()
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OccupancyEstimate {
    pub mean: f64,
    pub binomial_se: f64,
    pub count: usize,
}

/// Mean over trials of the Born probability of the probe's port at the probe.
pub fn occupancy_fraction(result: &EnsembleResult, probe_id: &str) -> Option<OccupancyEstimate> {
    let xs: Vec<f64> = result.trials.iter().filter_map(|t| t.occupancy(probe_id)).collect();
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some(OccupancyEstimate {
        mean,
        binomial_se: (mean * (1.0 - mean) / n).sqrt(),
        count: xs.len(),
    })
}

// ---------------------------------------------------------------------------
// Accurate / inaccurate split.

#[derive(Debug, Clone, Serialize)]
pub struct FinalPortClass {
    pub final_port: String,
    /// Probe-port label paired with this final port ("on" = reading above threshold).
    pub paired_label: String,
    pub count: usize,
    pub accurate: usize,
    pub accurate_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub accurate_fraction: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcInReport {
    pub probe: String,
    pub threshold: f64,
    pub total: usize,
    pub accurate: usize,
    pub inaccurate: usize,
    pub accurate_fraction: f64,
    pub by_final_port: Vec<FinalPortClass>,
    /// Exact finite-strength two-state prediction.
    pub tsvf: Prediction,
    /// Collapsed-minority account: only a fraction 1 − D of photons carries which-path
    /// information, the rest is uncorrelated with the final port.
    pub collapsed_minority: Prediction,
    pub collapsed_fraction: f64,
    /// The rival account's conditional frequencies rescaled to the pointer convention:
    /// accurate (1 − D)/2 and inaccurate D/2.
    pub rival_p_accurate: f64,
    pub rival_p_inaccurate: f64,
    pub collapsed_minority_rejected: bool,
    pub tsvf_accepted: bool,
    pub verdict: String,
}

fn strip_blocks(spec: &CircuitSpec) -> Result<CircuitSpec> {
    let stages = spec
        .stages()
        .iter()
        .filter(|s| !matches!(s, StageElement::Block { .. }))
        .cloned()
        .collect();
    CircuitSpec::new(spec.name(), spec.source().clone(), stages)
}

/// For each final port, whether it pairs with the probe's own port (`true`) or the other one,
/// from the weak values of the unblocked circuit.
fn final_pairing(spec: &CircuitSpec, probe_id: &str) -> Result<Vec<(PortLabel, bool)>> {
    let open = strip_blocks(spec)?;
    spec.final_basis()
        .iter()
        .map(|f| {
            let w = probe_weak_value(&open, open.source(), probe_id, f)?.value.re;
            if (w - 0.5).abs() < 1e-9 {
                return Err(Error::UndefinedConditional(format!(
                    "probe `{probe_id}` has no definite pairing with `{f}`"
                )));
            }
            Ok((f.clone(), w > 0.5))
        })
        .collect()
}

fn binomial_z(observed: f64, predicted: f64, n: usize) -> f64 {
    let se = (predicted * (1.0 - predicted) / n as f64).sqrt();
    if se == 0.0 {
        return if observed == predicted { 0.0 } else { f64::INFINITY };
    }
    (observed - predicted) / se
}

/// Thresholds each reading at g/2 into a coarse path label and scores it against the final
/// port; compares the accurate fraction with both accounts.
pub fn ac_in_test(result: &EnsembleResult, spec: &CircuitSpec, probe_id: &str) -> Result<AcInReport> {
    let site = spec
        .probe(probe_id)
        .ok_or_else(|| Error::InvalidInput(format!("no probe `{probe_id}` in circuit")))?;
    let cfg = *site.pointer;
    let threshold = cfg.g() / 2.0;
    let pairing = final_pairing(spec, probe_id)?;

    let mut by_final = Vec::new();
    let (mut total, mut accurate) = (0usize, 0usize);
    for (port, paired_on) in &pairing {
        let readings: Vec<f64> = result
            .detected()
            .filter(|t| t.final_port() == Some(port))
            .filter_map(|t| t.reading(probe_id))
            .collect();
        let acc = readings.iter().filter(|&&q| (q > threshold) == *paired_on).count();
        total += readings.len();
        accurate += acc;
        by_final.push(FinalPortClass {
            final_port: port.to_string(),
            paired_label: if *paired_on { "on" } else { "off" }.to_string(),
            count: readings.len(),
            accurate: acc,
            accurate_fraction: if readings.is_empty() { f64::NAN } else { acc as f64 / readings.len() as f64 },
        });
    }
    if total == 0 {
        return Err(Error::InvalidInput("no detected trials carry this probe's reading".into()));
    }
    let observed = accurate as f64 / total as f64;

    let mut joint_acc = 0.0;
    let mut survive = 0.0;
    for (port, paired_on) in &pairing {
        let law = probe_reading_law(spec, probe_id, Some(port))?;
        let t = law.total();
        if t <= 0.0 {
            continue;
        }
        let on = law.tail(threshold)?;
        joint_acc += t * if *paired_on { on } else { 1.0 - on };
        survive += t;
    }
    let tsvf_pred = joint_acc / survive;

    let d = decoherence_factor(&cfg);
    let collapsed = 1.0 - d;
    let label_accuracy = 0.5 * statrs::function::erf::erfc(-(cfg.g() / (2.0 * cfg.sigma())) / std::f64::consts::SQRT_2);
    let rival_pred = 0.5 + collapsed * (label_accuracy - 0.5);

    let tsvf = Prediction { accurate_fraction: tsvf_pred, z: binomial_z(observed, tsvf_pred, total) };
    let collapsed_minority = Prediction { accurate_fraction: rival_pred, z: binomial_z(observed, rival_pred, total) };
    let rejected = collapsed_minority.z > REJECT_Z;
    let accepted = tsvf.z.abs() < ACCEPT_Z;
    let verdict = match (rejected, accepted) {
        (true, true) => "collapsed-minority account rejected; two-state prediction accepted",
        (true, false) => "collapsed-minority account rejected; two-state prediction also off",
        (false, true) => "data do not discriminate: both accounts compatible",
        (false, false) => "neither account fits",
    };
    Ok(AcInReport {
        probe: probe_id.to_string(),
        threshold,
        total,
        accurate,
        inaccurate: total - accurate,
        accurate_fraction: observed,
        by_final_port: by_final,
        tsvf,
        collapsed_minority,
        collapsed_fraction: collapsed,
        rival_p_accurate: collapsed / 2.0,
        rival_p_inaccurate: d / 2.0,
        collapsed_minority_rejected: rejected,
        tsvf_accepted: accepted,
        verdict: verdict.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Single-photon pairing.

/// In passes of `direction`, a reading of `probe` above g/2 pairs with ending at `partner`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairingRule {
    pub direction: Direction,
    pub probe: String,
    pub partner: PortLabel,
    pub other: PortLabel,
    pub g: f64,
}

/// Pairings between probe readings and end ports that hold for every start port of a pass.
pub fn cycle_pairings(spec: &CircuitSpec) -> Result<Vec<PairingRule>> {
    let backward = spec.adjoint(spec.final_basis()[0].clone())?;
    let mut rules = Vec::new();
    for (direction, circuit) in [(Direction::Forward, spec), (Direction::Backward, &backward)] {
        for site in circuit.probes() {
            let ends = circuit.final_basis();
            let mut verdict: Option<usize> = None;
            let mut consistent = true;
            for start in circuit.initial_basis() {
                let Ok(c) = circuit.with_source(start.clone()) else { continue };
                let ws: Vec<Option<f64>> = ends
                    .iter()
                    .map(|e| probe_weak_value(&c, start, site.id, e).ok().map(|w| w.value.re))
                    .collect();
                let pick = match (ws[0], ws[1]) {
                    (Some(a), Some(b)) if a > 0.5 + 1e-9 && b < 0.5 - 1e-9 => Some(0),
                    (Some(a), Some(b)) if b > 0.5 + 1e-9 && a < 0.5 - 1e-9 => Some(1),
                    _ => None,
                };
                match (pick, verdict) {
                    (None, _) => consistent = false,
                    (Some(p), None) => verdict = Some(p),
                    (Some(p), Some(v)) if p != v => consistent = false,
                    _ => {}
                }
            }
            if let (true, Some(v)) = (consistent, verdict) {
                rules.push(PairingRule {
                    direction,
                    probe: site.id.to_string(),
                    partner: ends[v].clone(),
                    other: ends[1 - v].clone(),
                    g: site.pointer.g(),
                });
            }
        }
    }
    Ok(rules)
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchEstimate {
    pub window: usize,
    pub windows: usize,
    pub matches: usize,
    pub fraction: Option<f64>,
    pub flag: Option<String>,
}

fn pairing_term(record: &CycleRecord, rules: &[PairingRule]) -> f64 {
    rules
        .iter()
        .filter(|r| r.direction == record.direction)
        .filter_map(|r| {
            let q = record.reading(&r.probe)?;
            let s = if record.end_port == r.partner {
                1.0
            } else if record.end_port == r.other {
                -1.0
            } else {
                return None;
            };
            Some(s * (q - r.g / 2.0))
        })
        .sum()
}

/// Fraction of sliding windows of `window` consecutive passes whose aggregated, slice-signed
/// readings point the way the pairing rules predict.
pub fn match_probability(cycles: &[CycleRecord], window: usize, rules: &[PairingRule]) -> MatchEstimate {
    if window == 0 || cycles.len() < window {
        return MatchEstimate {
            window,
            windows: 0,
            matches: 0,
            fraction: None,
            flag: Some(format!("{} passes recorded, window needs {window}", cycles.len())),
        };
    }
    let mut prefix = Vec::with_capacity(cycles.len() + 1);
    prefix.push(0.0);
    for c in cycles {
        prefix.push(prefix.last().unwrap() + pairing_term(c, rules));
    }
    let windows = cycles.len() - window + 1;
    let matches = (0..windows).filter(|&i| prefix[i + window] - prefix[i] > 0.0).count();
    MatchEstimate {
        window,
        windows,
        matches,
        fraction: Some(matches as f64 / windows as f64),
        flag: None,
    }
}

/// Readings of `probe` in passes of `direction`, grouped by end port.
pub fn cycle_slices(cycles: &[CycleRecord], direction: Direction, probe: &str) -> SliceReport {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in cycles.iter().filter(|c| c.direction == direction) {
        if let Some(q) = c.reading(probe) {
            groups.entry(c.end_port.to_string()).or_default().push(q);
        }
    }
    let groups = groups.into_iter().map(|(k, v)| (k, vec![v])).collect();
    build_report(
        format!("{}-end", direction.as_str()),
        groups,
        &[probe.to_string()],
        0,
        vec![],
    )
}
