//! Text format for experiments: a circuit, its probes and the run parameters.
//!
//! ```text
//! experiment double_mzi {
//!   source L0;
//!   beamsplitter BS1 (L0, R0) -> (L1, R1);
//!   probe W1 on L1 strength 0.1 width 1;
//!   beamsplitter BS2 (L1, R1) -> (L2, R2) theta 0.7853981633974483;
//!   block L2;
//!   detect (L2, R2);
//!   run { trials 100000 seed 42 }
//! }
//! ```
//!
//! `theta` defaults to π/4 and `width` to 1. Statements may end in `;` and `#` starts a
//! comment. The first beam splitter (or the detector, if there is none) declares the
//! initial port pair; every later port must be produced by an earlier beam splitter.

mod lexer;
mod parser;

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_4;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::circuit::{bs_matrix, CircuitSpec, StageElement};
use crate::error::Error;
use crate::linalg::PortLabel;
use crate::pointer::PointerConfig;
pub use lexer::Pos;
use parser::{parse_syntax, ElementSpan, Spans};

pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub severity: Severity,
}

impl Diagnostic {
    pub(crate) fn error(pos: Pos, message: String) -> Self {
        Diagnostic { line: pos.line, column: pos.column, message, severity: Severity::Error }
    }

    fn warning(pos: Pos, message: String) -> Self {
        Diagnostic { line: pos.line, column: pos.column, message, severity: Severity::Warning }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    BeamSplitter {
        name: String,
        inputs: [String; 2],
        outputs: [String; 2],
        theta: Option<f64>,
    },
    Probe {
        id: String,
        port: String,
        strength: f64,
        width: Option<f64>,
    },
    Block {
        port: String,
    },
    Detect {
        ports: [String; 2],
    },
}

impl Element {
    fn ports(&self) -> Vec<&str> {
        match self {
            Element::BeamSplitter { inputs, outputs, .. } => inputs.iter().chain(outputs).map(String::as_str).collect(),
            Element::Probe { port, .. } | Element::Block { port } => vec![port],
            Element::Detect { ports } => ports.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunBlock {
    pub trials: u64,
    pub seed: u64,
    pub cycles: Option<u64>,
    pub subsample: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentAst {
    pub name: String,
    pub source: String,
    pub elements: Vec<Element>,
    pub run: Option<RunBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub trials: u64,
    pub seed: u64,
    /// Single-photon cycle mode with this many passes.
    pub cycles: Option<u64>,
    pub subsample: Option<f64>,
}

impl RunConfig {
    pub fn is_cycle_mode(&self) -> bool {
        self.cycles.is_some()
    }
}

/// Parses and validates an experiment. On failure every diagnostic found is returned.
pub fn parse(text: &str) -> Result<ExperimentAst, Vec<Diagnostic>> {
    let (ast, diags) = check(text);
    match ast {
        Some(ast) if !diags.iter().any(Diagnostic::is_error) => Ok(ast),
        _ => Err(diags),
    }
}

/// Like [`parse`] for raw bytes; invalid UTF-8 is reported at its position.
pub fn parse_bytes(bytes: &[u8]) -> Result<ExperimentAst, Vec<Diagnostic>> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => {
            let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or_default();
            let line = valid.matches('\n').count() + 1;
            let column = valid.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            Err(vec![Diagnostic::error(Pos { line, column }, "input is not valid UTF-8".into())])
        }
    }
}

/// All diagnostics, warnings included, alongside the AST when syntax allowed building one.
pub fn check(text: &str) -> (Option<ExperimentAst>, Vec<Diagnostic>) {
    let (parsed, mut diags) = parse_syntax(text);
    let Some((ast, spans)) = parsed else {
        return (None, diags);
    };
    if !diags.iter().any(Diagnostic::is_error) {
        diags.extend(validate(&ast, Some(&spans)).1);
    }
    (Some(ast), diags)
}

/// Turns a validated AST into a circuit and run parameters.
pub fn lower(ast: &ExperimentAst) -> Result<(CircuitSpec, RunConfig), Vec<Diagnostic>> {
    match validate(ast, None) {
        (Some(out), diags) if !diags.iter().any(Diagnostic::is_error) => Ok(out),
        (_, diags) => Err(diags),
    }
}

/// Parses and lowers in one go.
pub fn load(text: &str) -> Result<(ExperimentAst, CircuitSpec, RunConfig), Vec<Diagnostic>> {
    let ast = parse(text)?;
    let (spec, run) = lower(&ast)?;
    Ok((ast, spec, run))
}

fn validate(ast: &ExperimentAst, spans: Option<&Spans>) -> (Option<(CircuitSpec, RunConfig)>, Vec<Diagnostic>) {
    let origin = Pos::default();
    let name_pos = spans.map_or(origin, |s| s.name);
    let el_span = |i: usize| spans.and_then(|s| s.elements.get(i)).cloned().unwrap_or_default();
    let port_pos = |sp: &ElementSpan, k: usize| sp.ports.get(k).copied().unwrap_or(sp.at);
    let num_pos = |sp: &ElementSpan, k: usize| sp.numbers.get(k).copied().unwrap_or(sp.at);
    let mut diags = Vec::new();

    let ident_ok = |s: &str| {
        let mut c = s.chars();
        c.next().is_some_and(|f| f.is_ascii_alphabetic() || f == '_') && c.all(|x| x.is_ascii_alphanumeric() || x == '_')
    };
    if !ident_ok(&ast.name) {
        diags.push(Diagnostic::error(name_pos, format!("`{}` is not a valid name", ast.name)));
    }

    // The initial pair is declared by the first element that consumes a pair.
    let initial = ast.elements.iter().find_map(|e| match e {
        Element::BeamSplitter { inputs, .. } => Some(inputs.clone()),
        Element::Detect { ports } => Some(ports.clone()),
        _ => None,
    });
    let mut declared: HashSet<&str> = HashSet::new();
    match &initial {
        Some(pair) if pair.contains(&ast.source) => declared.extend(pair.iter().map(String::as_str)),
        Some(pair) => {
            let pos = spans.map_or(origin, |s| s.source);
            diags.push(Diagnostic::error(
                pos,
                format!("source `{}` is not one of the first input ports ({}, {})", ast.source, pair[0], pair[1]),
            ));
        }
        None => {}
    }

    let mut detects = 0;
    for (i, e) in ast.elements.iter().enumerate() {
        let sp = el_span(i);
        for (k, p) in e.ports().into_iter().enumerate() {
            if !ident_ok(p) {
                diags.push(Diagnostic::error(port_pos(&sp, k), format!("`{p}` is not a valid port name")));
            }
        }
        let uses: Vec<(usize, &str)> = match e {
            Element::BeamSplitter { inputs, .. } => inputs.iter().map(String::as_str).enumerate().collect(),
            _ => e.ports().into_iter().enumerate().collect(),
        };
        for (k, p) in uses {
            if !declared.contains(p) {
                diags.push(Diagnostic::error(port_pos(&sp, k), format!("undeclared port `{p}`")));
            }
        }
        match e {
            Element::BeamSplitter { name, outputs, theta, .. } => {
                for (k, o) in outputs.iter().enumerate() {
                    if !declared.insert(o) {
                        diags.push(Diagnostic::error(
                            port_pos(&sp, 2 + k),
                            format!("beam splitter `{name}` redeclares port `{o}`"),
                        ));
                    }
                }
                if let Some(t) = theta {
                    if let Err(err) = bs_matrix(*t) {
                        diags.push(Diagnostic::error(num_pos(&sp, 0), err.to_string()));
                    }
                }
            }
            Element::Probe { strength, width, .. } => {
                if let Err(err) = PointerConfig::new(*strength, width.unwrap_or(1.0)) {
                    let k = if strength.is_finite() && *strength >= 0.0 { 1 } else { 0 };
                    diags.push(Diagnostic::error(num_pos(&sp, k), err.to_string()));
                }
            }
            Element::Detect { .. } => {
                detects += 1;
                if detects > 1 {
                    diags.push(Diagnostic::error(sp.at, "only one detector is allowed".into()));
                }
            }
            Element::Block { .. } => {}
        }
    }
    if detects == 0 {
        diags.push(Diagnostic::error(name_pos, "experiment has no `detect` statement".into()));
    }

    let run_pos = spans.map_or(origin, |s| s.run);
    let run = ast.run.clone().unwrap_or(RunBlock { trials: DEFAULT_TRIALS, seed: DEFAULT_SEED, cycles: None, subsample: None });
    if run.trials == 0 {
        diags.push(Diagnostic::error(run_pos, "`trials` must be at least 1".into()));
    }
    if run.cycles == Some(0) {
        diags.push(Diagnostic::error(run_pos, "`cycles` must be at least 1".into()));
    }
    if let Some(f) = run.subsample {
        if !(f > 0.0 && f <= 1.0) {
            diags.push(Diagnostic::error(run_pos, format!("subsample fraction {f} outside (0, 1]")));
        }
        if run.cycles.is_some() {
            diags.push(Diagnostic::warning(run_pos, "`subsample` has no effect in cycle mode".into()));
        }
    }
    if diags.iter().any(Diagnostic::is_error) {
        return (None, diags);
    }

    let stages = ast
        .elements
        .iter()
        .map(|e| match e {
            Element::BeamSplitter { name, inputs, outputs, theta } => StageElement::BeamSplitter {
                name: name.clone(),
                inputs: inputs.clone().map(PortLabel::new),
                outputs: outputs.clone().map(PortLabel::new),
                theta: theta.unwrap_or(FRAC_PI_4),
                adjoint: false,
            },
            Element::Probe { id, port, strength, width } => StageElement::Probe {
                id: id.clone(),
                port: PortLabel::new(port.clone()),
                pointer: PointerConfig::new(*strength, width.unwrap_or(1.0)).expect("checked above"),
            },
            Element::Block { port } => StageElement::Block { port: PortLabel::new(port.clone()) },
            Element::Detect { ports } => StageElement::StrongDetect { ports: ports.clone().map(PortLabel::new) },
        })
        .collect();
    match CircuitSpec::new(ast.name.clone(), PortLabel::new(ast.source.clone()), stages) {
        Ok(spec) => {
            let cfg = RunConfig { trials: run.trials, seed: run.seed, cycles: run.cycles, subsample: run.subsample };
            (Some((spec, cfg)), diags)
        }
        Err(err) => {
            // Point at the first mention of an offending port when there is one.
            let pos = match &err {
                Error::UnknownPort(p) => ast
                    .elements
                    .iter()
                    .enumerate()
                    .find_map(|(i, e)| e.ports().iter().position(|q| q == p).map(|k| port_pos(&el_span(i), k)))
                    .unwrap_or(name_pos),
                _ => name_pos,
            };
            diags.push(Diagnostic::error(pos, err.to_string()));
            (None, diags)
        }
    }
}

/// Canonical text: one statement per line, two-space indent, shortest round-trip floats.
pub fn serialize(ast: &ExperimentAst) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment {} {{", ast.name);
    let _ = writeln!(s, "  source {};", ast.source);
    for e in &ast.elements {
        match e {
            Element::BeamSplitter { name, inputs, outputs, theta } => {
                let _ = write!(s, "  beamsplitter {name} ({}, {}) -> ({}, {})", inputs[0], inputs[1], outputs[0], outputs[1]);
                if let Some(t) = theta {
                    let _ = write!(s, " theta {t}");
                }
            }
            Element::Probe { id, port, strength, width } => {
                let _ = write!(s, "  probe {id} on {port} strength {strength}");
                if let Some(w) = width {
                    let _ = write!(s, " width {w}");
                }
            }
            Element::Block { port } => {
                let _ = write!(s, "  block {port}");
            }
            Element::Detect { ports } => {
                let _ = write!(s, "  detect ({}, {})", ports[0], ports[1]);
            }
        }
        s.push_str(";\n");
    }
    if let Some(r) = &ast.run {
        let _ = write!(s, "  run {{ trials {} seed {}", r.trials, r.seed);
        if let Some(c) = r.cycles {
            let _ = write!(s, " cycles {c}");
        }
        if let Some(f) = r.subsample {
            let _ = write!(s, " subsample {f}");
        }
        s.push_str(" }\n");
    }
    s.push_str("}\n");
    s
}
