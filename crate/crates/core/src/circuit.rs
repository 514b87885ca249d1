//! Optical elements, port wiring and the bundled double-interferometer presets.
//!
//! A circuit is an ordered list of stage elements acting on a running pair of
//! ports. Beam splitters move the photon from one pair (a *segment*) to the
//! next; every other element acts in place on the current pair. Segment 0 is
//! the pair feeding the first beam splitter, segment 1 the pair after it, and
//! so on, so for the double interferometer segment `k` is `(Lk, Rk)`.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    apply_unitary, index_of, normalize, Amplitude, Mat2, PathState, PortLabel, PortPair, Projector,
    UnitaryMatrix, INPUT_TOL,
};
use crate::pointer::{strong_measure, PointerConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum StageElement {
    /// `inputs[k]` feeds row/column `k` of the splitter matrix; `adjoint` selects U†.
    BeamSplitter {
        name: String,
        inputs: PortPair,
        outputs: PortPair,
        theta: f64,
        adjoint: bool,
    },
    PhaseShift { port: PortLabel, phase: f64 },
    Probe {
        id: String,
        port: PortLabel,
        pointer: PointerConfig,
    },
    Block { port: PortLabel },
    StrongDetect { ports: PortPair },
}

/// Mixing matrix [[cos θ, i·sin θ], [i·sin θ, cos θ]]; θ = π/4 is the symmetric 50:50 splitter.
pub fn bs_matrix(theta: f64) -> Result<UnitaryMatrix> {
    if !theta.is_finite() || !(-INPUT_TOL..=FRAC_PI_2 + INPUT_TOL).contains(&theta) {
        return Err(Error::InvalidInput(format!("mixing angle {theta} outside [0, π/2]")));
    }
    let (s, c) = theta.sin_cos();
    UnitaryMatrix::new(Mat2([
        [Amplitude::new(c, 0.0), Amplitude::new(0.0, s)],
        [Amplitude::new(0.0, s), Amplitude::new(c, 0.0)],
    ]))
}

fn phase_matrix(labels: &PortPair, port: &PortLabel, phase: f64) -> Result<Mat2> {
    let shifted = Amplitude::from_polar(1.0, phase);
    let one = Amplitude::new(1.0, 0.0);
    Ok(match index_of(labels, port)? {
        0 => Mat2::diag(shifted, one),
        _ => Mat2::diag(one, shifted),
    })
}

/// A probe site as seen by a propagation callback.
#[derive(Debug, Clone, Copy)]
pub struct ProbeSite<'a> {
    pub id: &'a str,
    pub port: &'a PortLabel,
    pub pointer: &'a PointerConfig,
    pub stage: usize,
}

/// Receives every probe stage during [`propagate`].
pub trait ProbeHandler {
    fn on_probe<R: Rng + ?Sized>(
        &mut self,
        site: ProbeSite<'_>,
        state: &PathState,
        rng: &mut R,
    ) -> Result<PathState>;
}

/// Probes are transparent: unitary-only propagation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Unprobed;

impl ProbeHandler for Unprobed {
    fn on_probe<R: Rng + ?Sized>(&mut self, _: ProbeSite<'_>, state: &PathState, _: &mut R) -> Result<PathState> {
        Ok(state.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Outcome {
    Detected(PortLabel),
    Absorbed,
}

impl Outcome {
    pub fn port(&self) -> Option<&PortLabel> {
        match self {
            Outcome::Detected(p) => Some(p),
            Outcome::Absorbed => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    /// State after each stage that was reached; stops at an absorbing block.
    pub trajectory: Vec<PathState>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitSpec {
    name: String,
    source: PortLabel,
    stages: Vec<StageElement>,
    #[serde(skip)]
    segments: Vec<PortPair>,
    #[serde(skip)]
    stage_segment: Vec<usize>,
}

impl CircuitSpec {
    /// Validates wiring: every stage consumes exactly the ports the previous one produced,
    /// the source feeds the first segment and the circuit ends in its only strong detector.
    pub fn new(name: impl Into<String>, source: PortLabel, stages: Vec<StageElement>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidCircuit(m));
        let Some(StageElement::StrongDetect { .. }) = stages.last() else {
            return bad("circuit must end with a strong detector".into());
        };
        let detects = stages
            .iter()
            .filter(|s| matches!(s, StageElement::StrongDetect { .. }))
            .count();
        if detects != 1 {
            return bad(format!("expected exactly one strong detector, found {detects}"));
        }
        let initial = stages
            .iter()
            .find_map(|s| match s {
                StageElement::BeamSplitter { inputs, .. } => Some(inputs.clone()),
                StageElement::StrongDetect { ports } => Some(ports.clone()),
                _ => None,
            })
            .expect("detector present");
        if initial[0] == initial[1] {
            return bad(format!("port `{}` used twice in one stage", initial[0]));
        }
        if !initial.contains(&source) {
            return bad(format!(
                "source `{source}` does not feed the first stage ({}, {})",
                initial[0], initial[1]
            ));
        }

        let same_set = |a: &PortPair, b: &PortPair| (a[0] == b[0] && a[1] == b[1]) || (a[0] == b[1] && a[1] == b[0]);
        let mut seen: HashSet<PortLabel> = initial.iter().cloned().collect();
        let mut probe_ids = HashSet::new();
        let mut segments = vec![initial];
        let mut stage_segment = Vec::with_capacity(stages.len());
        for stage in &stages {
            let current = segments.last().unwrap().clone();
            stage_segment.push(segments.len() - 1);
            let need = |p: &PortLabel| -> Result<()> {
                if current.contains(p) {
                    Ok(())
                } else {
                    Err(Error::UnknownPort(p.to_string()))
                }
            };
            match stage {
                StageElement::BeamSplitter { name, inputs, outputs, theta, .. } => {
                    bs_matrix(*theta)?;
                    if !same_set(inputs, &current) {
                        return bad(format!(
                            "beam splitter `{name}` inputs ({}, {}) do not match the live ports ({}, {})",
                            inputs[0], inputs[1], current[0], current[1]
                        ));
                    }
                    if outputs[0] == outputs[1] {
                        return bad(format!("beam splitter `{name}` repeats output `{}`", outputs[0]));
                    }
                    for o in outputs {
                        if !seen.insert(o.clone()) {
                            return bad(format!("beam splitter `{name}` reuses port `{o}`"));
                        }
                    }
                    segments.push(outputs.clone());
                }
                StageElement::PhaseShift { port, phase } => {
                    need(port)?;
                    if !phase.is_finite() {
                        return bad(format!("phase on `{port}` is not finite"));
                    }
                }
                StageElement::Probe { id, port, .. } => {
                    need(port)?;
                    if !probe_ids.insert(id.clone()) {
                        return bad(format!("probe id `{id}` declared twice"));
                    }
                }
                StageElement::Block { port } => need(port)?,
                StageElement::StrongDetect { ports } => {
                    if !same_set(ports, &current) {
                        return bad(format!(
                            "detector ({}, {}) does not match the live ports ({}, {})",
                            ports[0], ports[1], current[0], current[1]
                        ));
                    }
                }
            }
        }
        Ok(CircuitSpec {
            name: name.into(),
            source,
            stages,
            segments,
            stage_segment,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &PortLabel {
        &self.source
    }

    pub fn stages(&self) -> &[StageElement] {
        &self.stages
    }

    /// Port pairs in order of traversal; segment 0 feeds the first beam splitter.
    pub fn segments(&self) -> &[PortPair] {
        &self.segments
    }

    /// Segment on which stage `i` acts.
    pub fn stage_segment(&self, i: usize) -> usize {
        self.stage_segment[i]
    }

    pub fn initial_basis(&self) -> &PortPair {
        &self.segments[0]
    }

    pub fn final_basis(&self) -> &PortPair {
        match self.stages.last() {
            Some(StageElement::StrongDetect { ports }) => ports,
            _ => unreachable!("validated circuit ends in a detector"),
        }
    }

    pub fn has_block(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, StageElement::Block { .. }))
    }

    pub fn probes(&self) -> impl Iterator<Item = ProbeSite<'_>> {
        self.stages.iter().enumerate().filter_map(|(stage, s)| match s {
            StageElement::Probe { id, port, pointer } => Some(ProbeSite { id, port, pointer, stage }),
            _ => None,
        })
    }

    pub fn probe(&self, id: &str) -> Option<ProbeSite<'_>> {
        self.probes().find(|p| p.id == id)
    }

    pub fn probe_ids(&self) -> Vec<String> {
        self.probes().map(|p| p.id.to_string()).collect()
    }

    /// Segment whose pair contains `port`.
    pub fn segment_of(&self, port: &PortLabel) -> Result<usize> {
        self.segments
            .iter()
            .position(|s| s.contains(port))
            .ok_or_else(|| Error::UnknownPort(port.to_string()))
    }

    /// Same circuit launched from a different port of the initial segment.
    pub fn with_source(&self, source: PortLabel) -> Result<CircuitSpec> {
        CircuitSpec::new(self.name.clone(), source, self.stages.clone())
    }

    /// Replaces the pointer of every probe.
    pub fn with_pointer(&self, cfg: PointerConfig) -> CircuitSpec {
        let mut out = self.clone();
        for s in &mut out.stages {
            if let StageElement::Probe { pointer, .. } = s {
                *pointer = cfg;
            }
        }
        out
    }

    pub fn with_probe_pointer(&self, id: &str, cfg: PointerConfig) -> Result<CircuitSpec> {
        let mut out = self.clone();
        let mut found = false;
        for s in &mut out.stages {
            if let StageElement::Probe { id: pid, pointer, .. } = s {
                if pid == id {
                    *pointer = cfg;
                    found = true;
                }
            }
        }
        if !found {
            return Err(Error::InvalidInput(format!("no probe `{id}`")));
        }
        Ok(out)
    }

    /// The time-reversed cascade: stages in reverse order, splitters replaced by their
    /// adjoints and phases negated, detecting on the original initial segment.
    pub fn adjoint(&self, source: PortLabel) -> Result<CircuitSpec> {
        let mut stages: Vec<StageElement> = self
            .stages
            .iter()
            .rev()
            .filter_map(|s| match s {
                StageElement::StrongDetect { .. } => None,
                StageElement::BeamSplitter { name, inputs, outputs, theta, adjoint } => {
                    Some(StageElement::BeamSplitter {
                        name: name.clone(),
                        inputs: outputs.clone(),
                        outputs: inputs.clone(),
                        theta: *theta,
                        adjoint: !adjoint,
                    })
                }
                StageElement::PhaseShift { port, phase } => Some(StageElement::PhaseShift {
                    port: port.clone(),
                    phase: -phase,
                }),
                other => Some(other.clone()),
            })
            .collect();
        stages.push(StageElement::StrongDetect {
            ports: self.initial_basis().clone(),
        });
        CircuitSpec::new(format!("{}~adjoint", self.name), source, stages)
    }

    /// Matrix of a linear (non-probe, non-detector) stage and the pair it maps into.
    /// Blocks contribute their pass projector.
    fn linear_stage(&self, i: usize, labels: &PortPair) -> Result<(Mat2, PortPair)> {
        Ok(match &self.stages[i] {
            StageElement::BeamSplitter { inputs, outputs, theta, adjoint, .. } => {
                let mut u = *bs_matrix(*theta)?.matrix();
                if *adjoint {
                    u = u.adjoint();
                }
                // Reorder so the matrix acts in the live label order.
                if labels[0] != inputs[0] {
                    let m = u.0;
                    u = Mat2([[m[0][1], m[0][0]], [m[1][1], m[1][0]]]);
                }
                (u, outputs.clone())
            }
            StageElement::PhaseShift { port, phase } => (phase_matrix(labels, port, *phase)?, labels.clone()),
            StageElement::Block { port } => {
                let pass = Projector::new(port.clone()).complement(labels)?;
                (pass.matrix(labels)?, labels.clone())
            }
            StageElement::Probe { .. } | StageElement::StrongDetect { .. } => {
                (Mat2::IDENTITY, labels.clone())
            }
        })
    }

    /// Linear map from segment-start of stage `from` through stage `to - 1`, probes ignored,
    /// blocks applied as projectors. Returns the operator and its input/output label pairs.
    pub fn linear_map(&self, from: usize, to: usize) -> Result<(Mat2, PortPair, PortPair)> {
        let seg_in = if from < self.stages.len() {
            self.segments[self.stage_segment[from]].clone()
        } else {
            self.final_basis().clone()
        };
        let mut labels = seg_in.clone();
        let mut total = Mat2::IDENTITY;
        for i in from..to.min(self.stages.len()) {
            let (m, out) = self.linear_stage(i, &labels)?;
            total = m.mul(&total);
            labels = out;
        }
        Ok((total, seg_in, labels))
    }

    /// First stage index acting on segment `seg` (or `stages.len()` past the end).
    pub fn segment_start(&self, seg: usize) -> usize {
        self.stage_segment
            .iter()
            .position(|&s| s == seg)
            .unwrap_or(self.stages.len())
    }

    /// One past the last non-splitter stage acting on segment `seg`.
    pub fn segment_end(&self, seg: usize) -> usize {
        let mut end = self.segment_start(seg);
        while end < self.stages.len()
            && self.stage_segment[end] == seg
            && !matches!(self.stages[end], StageElement::BeamSplitter { .. })
        {
            end += 1;
        }
        end
    }
}

/// The double interferometer: BS1 (L0,R0 → L1,R1), probe W1 on L1, BS2 (→ L2,R2), probe W2
/// on L2, optional block on L2, BS3 (→ Lf,Rf) and a strong detector on (Lf, Rf).
/// With probes disabled a photon entering at L0 leaves BS2 entirely through R2.
pub fn preset_double_mzi(blocked: bool, pointer: PointerConfig) -> CircuitSpec {
    fn p(s: &str) -> PortLabel {
        PortLabel::from(s)
    }
    let bs = |name: &str, i: [&str; 2], o: [&str; 2]| StageElement::BeamSplitter {
        name: name.into(),
        inputs: i.map(p),
        outputs: o.map(p),
        theta: FRAC_PI_4,
        adjoint: false,
    };
    let mut stages = vec![
        bs("BS1", ["L0", "R0"], ["L1", "R1"]),
        StageElement::Probe { id: "W1".into(), port: p("L1"), pointer },
        bs("BS2", ["L1", "R1"], ["L2", "R2"]),
        StageElement::Probe { id: "W2".into(), port: p("L2"), pointer },
    ];
    if blocked {
        stages.push(StageElement::Block { port: p("L2") });
    }
    stages.push(bs("BS3", ["L2", "R2"], ["Lf", "Rf"]));
    stages.push(StageElement::StrongDetect { ports: ["Lf", "Rf"].map(p) });
    let name = if blocked { "double_mzi_blocked" } else { "double_mzi" };
    CircuitSpec::new(name, p("L0"), stages).expect("preset wiring is valid")
}

/// Amplitude at `out` for unit amplitude injected at `inp`, probes ignored.
///
/// Injection happens at the start of the segment containing `inp`; the readout is taken at
/// the end of the segment containing `out`, after any block or phase acting there.
pub fn transfer_amplitude(spec: &CircuitSpec, inp: &PortLabel, out: &PortLabel) -> Result<Amplitude> {
    let seg_in = spec.segment_of(inp)?;
    let seg_out = spec.segment_of(out)?;
    if seg_out < seg_in {
        return Err(Error::InvalidInput(format!("port `{out}` lies upstream of `{inp}`")));
    }
    let from = spec.segment_start(seg_in);
    let to = spec.segment_end(seg_out);
    let (m, in_labels, out_labels) = spec.linear_map(from, to)?;
    let col = index_of(&in_labels, inp)?;
    let row = index_of(&out_labels, out)?;
    Ok(m.get(row, col))
}

/// Runs one photon through `spec` from its source. Probe stages are delegated to `handler`;
/// a block absorbs the photon with the Born probability of its port.
pub fn propagate<H: ProbeHandler, R: Rng + ?Sized>(
    spec: &CircuitSpec,
    handler: &mut H,
    rng: &mut R,
) -> Result<Propagation> {
    propagate_from(spec, spec.source(), handler, rng)
}

pub fn propagate_from<H: ProbeHandler, R: Rng + ?Sized>(
    spec: &CircuitSpec,
    start: &PortLabel,
    handler: &mut H,
    rng: &mut R,
) -> Result<Propagation> {
    let mut state = PathState::basis(spec.initial_basis().clone(), start)?;
    let mut trajectory = Vec::with_capacity(spec.stages.len());
    for (i, stage) in spec.stages.iter().enumerate() {
        match stage {
            StageElement::Probe { id, port, pointer } => {
                let site = ProbeSite { id, port, pointer, stage: i };
                state = handler.on_probe(site, &state, rng)?;
            }
            StageElement::Block { port } => {
                let p_absorb = state.probability(port)?;
                if p_absorb > 0.0 && rng.random::<f64>() < p_absorb {
                    return Ok(Propagation { trajectory, outcome: Outcome::Absorbed });
                }
                let pass = Projector::new(port.clone()).complement(state.labels())?;
                state = normalize(&pass.apply(&state)?)?;
            }
            StageElement::StrongDetect { .. } => {
                let (port, collapsed) = strong_measure(&state, rng)?;
                trajectory.push(collapsed);
                return Ok(Propagation { trajectory, outcome: Outcome::Detected(port) });
            }
            StageElement::BeamSplitter { .. } | StageElement::PhaseShift { .. } => {
                let (m, labels) = spec.linear_stage(i, state.labels())?;
                let u = UnitaryMatrix::new(m)?;
                state = apply_unitary(&u, &state).relabel(labels)?;
            }
        }
        trajectory.push(state.clone());
    }
    unreachable!("validated circuit ends in a detector")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn preset(blocked: bool) -> CircuitSpec {
        preset_double_mzi(blocked, PointerConfig::new(0.1, 1.0).unwrap())
    }

    fn close(a: Amplitude, b: Amplitude) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn splitter_matrices() {
        let id = bs_matrix(0.0).unwrap();
        assert!(id.matrix().max_defect(&Mat2::IDENTITY) < 1e-15);
        let h = FRAC_1_SQRT_2;
        let sym = bs_matrix(FRAC_PI_4).unwrap();
        let want = Mat2([
            [Amplitude::new(h, 0.0), Amplitude::new(0.0, h)],
            [Amplitude::new(0.0, h), Amplitude::new(h, 0.0)],
        ]);
        assert!(sym.matrix().max_defect(&want) < 1e-15);
        let swap = bs_matrix(FRAC_PI_2).unwrap();
        let want = Mat2([
            [Amplitude::new(0.0, 0.0), Amplitude::new(0.0, 1.0)],
            [Amplitude::new(0.0, 1.0), Amplitude::new(0.0, 0.0)],
        ]);
        assert!(swap.matrix().max_defect(&want) < 1e-15);
        assert!(bs_matrix(-0.1).is_err());
        assert!(bs_matrix(2.0).is_err());
    }

    #[test]
    fn preset_transfer_amplitudes() {
        let spec = preset(false);
        let l0 = PortLabel::from("L0");
        let rf = transfer_amplitude(&spec, &l0, &"Rf".into()).unwrap();
        assert!((rf.norm() - FRAC_1_SQRT_2).abs() < 1e-12);
        let r2 = transfer_amplitude(&spec, &l0, &"R2".into()).unwrap();
        assert!((r2.norm() - 1.0).abs() < 1e-12);
        let l2 = transfer_amplitude(&spec, &l0, &"L2".into()).unwrap();
        assert!(l2.norm() < 1e-12);
        let l1rf = transfer_amplitude(&spec, &"L1".into(), &"Rf".into()).unwrap();
        assert!(close(l1rf, Amplitude::new(0.0, 1.0)));
        assert!(transfer_amplitude(&spec, &"Rf".into(), &"L0".into()).is_err());
        assert!(matches!(
            transfer_amplitude(&spec, &"Lx".into(), &"Rf".into()),
            Err(Error::UnknownPort(_))
        ));
    }

    #[test]
    fn transfer_is_multiplicative_over_segments() {
        for blocked in [false, true] {
            let spec = preset(blocked);
            for inp in ["L0", "R0"] {
                for out in ["Lf", "Rf"] {
                    let direct = transfer_amplitude(&spec, &inp.into(), &out.into()).unwrap();
                    for mid in [["L1", "R1"], ["L2", "R2"]] {
                        let via: Amplitude = mid
                            .iter()
                            .map(|m| {
                                transfer_amplitude(&spec, &inp.into(), &(*m).into()).unwrap()
                                    * transfer_amplitude(&spec, &(*m).into(), &out.into()).unwrap()
                            })
                            .sum();
                        assert!(close(direct, via), "{inp}->{out} via {mid:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn probe_free_exit_probabilities() {
        for blocked in [false, true] {
            let spec = preset(blocked);
            let l0 = PortLabel::from("L0");
            let pl = transfer_amplitude(&spec, &l0, &"Lf".into()).unwrap().norm_sqr();
            let pr = transfer_amplitude(&spec, &l0, &"Rf".into()).unwrap().norm_sqr();
            assert!((pl - 0.5).abs() < 1e-12 && (pr - 0.5).abs() < 1e-12);
            assert!((pl + pr - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn propagate_probe_free() {
        let spec = preset(false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut lf = 0;
        for _ in 0..n {
            let run = propagate(&spec, &mut Unprobed, &mut rng).unwrap();
            // after BS2 the photon sits entirely on R2
            let after_bs2 = &run.trajectory[2];
            assert!((after_bs2.probability(&"R2".into()).unwrap() - 1.0).abs() < 1e-12);
            if run.outcome == Outcome::Detected("Lf".into()) {
                lf += 1;
            }
        }
        let f = lf as f64 / n as f64;
        assert!((f - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
        assert!(propagate_from(&spec, &"L1".into(), &mut Unprobed, &mut rng).is_err());
    }

    #[test]
    fn injection_at_l1_always_exits_rf() {
        // Tail of the preset starting at segment (L1, R1).
        let spec = preset(false);
        let tail: Vec<StageElement> = spec.stages()[1..].to_vec();
        let tail = CircuitSpec::new("tail", "L1".into(), tail).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let run = propagate(&tail, &mut Unprobed, &mut rng).unwrap();
            assert_eq!(run.outcome, Outcome::Detected("Rf".into()));
        }
    }

    #[test]
    fn blocked_preset_never_absorbs_without_probes() {
        let spec = preset(true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let run = propagate(&spec, &mut Unprobed, &mut rng).unwrap();
            assert_ne!(run.outcome, Outcome::Absorbed);
        }
    }

    #[test]
    fn validation_errors() {
        fn p(s: &str) -> PortLabel {
        PortLabel::from(s)
    }
        let cfg = PointerConfig::new(0.1, 1.0).unwrap();
        let bs = |i: [&str; 2], o: [&str; 2]| StageElement::BeamSplitter {
            name: "B".into(),
            inputs: i.map(p),
            outputs: o.map(p),
            theta: FRAC_PI_4,
            adjoint: false,
        };
        let detect = |d: [&str; 2]| StageElement::StrongDetect { ports: d.map(p) };
        // no detector
        assert!(CircuitSpec::new("x", p("A"), vec![bs(["A", "B"], ["C", "D"])]).is_err());
        // disconnected stage
        assert!(CircuitSpec::new(
            "x",
            p("A"),
            vec![bs(["A", "B"], ["C", "D"]), bs(["E", "F"], ["G", "H"]), detect(["G", "H"])]
        )
        .is_err());
        // probe on a port that is not live
        let e = CircuitSpec::new(
            "x",
            p("A"),
            vec![
                bs(["A", "B"], ["C", "D"]),
                StageElement::Probe { id: "W".into(), port: p("Lx"), pointer: cfg },
                detect(["C", "D"]),
            ],
        );
        assert_eq!(e, Err(Error::UnknownPort("Lx".into())));
        // source not at the first stage
        assert!(CircuitSpec::new("x", p("C"), vec![bs(["A", "B"], ["C", "D"]), detect(["C", "D"])]).is_err());
        // port reuse breaks the DAG
        assert!(CircuitSpec::new(
            "x",
            p("A"),
            vec![bs(["A", "B"], ["C", "D"]), bs(["C", "D"], ["A", "E"]), detect(["A", "E"])]
        )
        .is_err());
        // two detectors
        assert!(CircuitSpec::new("x", p("A"), vec![detect(["A", "B"]), detect(["A", "B"])]).is_err());
    }

    #[test]
    fn adjoint_inverts_the_linear_map() {
        let spec = preset(false);
        for start in ["Lf", "Rf"] {
            let back = spec.adjoint(start.into()).unwrap();
            assert_eq!(back.final_basis(), spec.initial_basis());
            for end in ["L0", "R0"] {
                let fwd = transfer_amplitude(&spec, &end.into(), &start.into()).unwrap();
                let bwd = transfer_amplitude(&back, &start.into(), &end.into()).unwrap();
                assert!(close(bwd, fwd.conj()));
            }
        }
    }

    #[test]
    fn phase_shift_moves_the_dark_port() {
        fn p(s: &str) -> PortLabel {
        PortLabel::from(s)
    }
        let bs = |name: &str, i: [&str; 2], o: [&str; 2]| StageElement::BeamSplitter {
            name: name.into(),
            inputs: i.map(p),
            outputs: o.map(p),
            theta: FRAC_PI_4,
            adjoint: false,
        };
        let spec = CircuitSpec::new(
            "phased",
            p("L0"),
            vec![
                bs("A", ["L0", "R0"], ["L1", "R1"]),
                StageElement::PhaseShift { port: p("L1"), phase: std::f64::consts::PI },
                bs("B", ["L1", "R1"], ["L2", "R2"]),
                StageElement::StrongDetect { ports: ["L2", "R2"].map(p) },
            ],
        )
        .unwrap();
        let l2 = transfer_amplitude(&spec, &p("L0"), &p("L2")).unwrap();
        assert!((l2.norm() - 1.0).abs() < 1e-12);
    }
}
