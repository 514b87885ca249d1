//! On-disk formats: per-trial and per-pass CSV tables and the run summary.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::circuit::{CircuitSpec, Outcome};
use crate::engine::{CycleRun, EnsembleResult, TrialRecord};
use crate::error::{Error, Result};
use crate::linalg::PortLabel;
use crate::pointer::WeakReading;
use crate::slicing::{cycle_pairings, match_probability, mean_se, occupancy_fraction, MatchEstimate, PairingRule};
use crate::tsvf::{oracle_report, OracleReport};

fn reading_column(probe: &str) -> String {
    format!("reading_{probe}")
}

fn csv_err(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::Record {
            row: e.position().map_or(0, |p| p.line()),
            column: String::new(),
            message: e.to_string(),
        },
    }
}

fn fmt_reading(q: Option<f64>) -> String {
    q.map_or_else(String::new, |q| q.to_string())
}

/// Header of the per-trial table for the given probes.
pub fn trials_header(probe_ids: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["trial_id", "initial_port", "final_port", "absorbed"].map(String::from).to_vec();
    h.extend(probe_ids.iter().map(|p| reading_column(p)));
    h.push("seed".into());
    h
}

/// One row per trial; absorbed trials have an empty `final_port`, untraversed probes an
/// empty reading.
pub fn write_trials_csv<W: Write>(result: &EnsembleResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trials_header(&result.probe_ids)).map_err(csv_err)?;
    for t in &result.trials {
        let mut row = vec![
            t.trial_id.to_string(),
            t.initial_port.to_string(),
            t.final_port().map_or_else(String::new, |p| p.to_string()),
            t.is_absorbed().to_string(),
        ];
        row.extend(result.probe_ids.iter().map(|p| fmt_reading(t.reading(p))));
        row.push(t.seed.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a per-trial table. Fingerprint, circuit name and master seed are not stored in
/// the table and come back empty.
pub fn read_trials_csv<R: Read>(input: R) -> Result<EnsembleResult> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let fixed = ["trial_id", "initial_port", "final_port", "absorbed"];
    let bad_header = |column: &str, message: String| Error::Record { row: 1, column: column.into(), message };
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i).map(String::as_str) != Some(*name) {
            return Err(bad_header(name, format!("expected column `{name}` at position {}", i + 1)));
        }
    }
    if header.last().map(String::as_str) != Some("seed") || header.len() < 5 {
        return Err(bad_header("seed", "last column must be `seed`".into()));
    }
    let mut probe_ids = Vec::new();
    for col in &header[4..header.len() - 1] {
        match col.strip_prefix("reading_") {
            Some(id) if !id.is_empty() => probe_ids.push(id.to_string()),
            _ => return Err(bad_header(col, format!("unexpected column `{col}`"))),
        }
    }

    let mut trials = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let err = |i: usize, message: String| Error::Record { row, column: header[i].clone(), message };
        let trial_id = field(0).parse::<u64>().map_err(|e| err(0, format!("`{}`: {e}", field(0))))?;
        if field(1).is_empty() {
            return Err(err(1, "empty port".into()));
        }
        let absorbed = field(3).parse::<bool>().map_err(|_| err(3, format!("`{}` is not true/false", field(3))))?;
        let outcome = match (absorbed, field(2)) {
            (true, "") => Outcome::Absorbed,
            (false, "") => return Err(err(2, "detected trial without a final port".into())),
            (true, p) => return Err(err(2, format!("absorbed trial has final port `{p}`"))),
            (false, p) => Outcome::Detected(PortLabel::new(p)),
        };
        let mut readings = Vec::new();
        for (k, id) in probe_ids.iter().enumerate() {
            let cell = field(4 + k);
            if cell.is_empty() {
                continue;
            }
            let q = cell
                .parse::<f64>()
                .ok()
                .filter(|q| q.is_finite())
                .ok_or_else(|| err(4 + k, format!("`{cell}` is not a finite number")))?;
            readings.push(WeakReading { probe_id: id.clone(), q });
        }
        let last = header.len() - 1;
        let seed = field(last).parse::<u64>().map_err(|e| err(last, format!("`{}`: {e}", field(last))))?;
        trials.push(TrialRecord {
            trial_id,
            initial_port: PortLabel::new(field(1)),
            readings,
            occupancy: vec![],
            outcome,
            seed,
        });
    }
    Ok(EnsembleResult {
        fingerprint: String::new(),
        circuit: String::new(),
        probe_ids,
        master_seed: 0,
        trials,
    })
}

pub fn write_cycles_csv<W: Write>(run: &CycleRun, probe_ids: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["cycle_index", "direction", "start_port", "end_port"].map(String::from).to_vec();
    header.extend(probe_ids.iter().map(|p| reading_column(p)));
    w.write_record(&header).map_err(csv_err)?;
    for c in &run.records {
        let mut row = vec![
            c.cycle_index.to_string(),
            c.direction.as_str().to_string(),
            c.start_port.to_string(),
            c.end_port.to_string(),
        ];
        row.extend(probe_ids.iter().map(|p| fmt_reading(c.reading(p))));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSummary {
    pub probe: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub occupancy: Option<f64>,
    pub occupancy_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeakageSummary {
    pub probe: String,
    pub fraction: f64,
    pub se: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub circuit: String,
    pub fingerprint: String,
    pub master_seed: u64,
    pub trials: usize,
    pub final_port_counts: BTreeMap<String, usize>,
    pub absorbed_count: usize,
    pub probes: Vec<ProbeSummary>,
    /// Occupancy of the probed dark arm; `null` when no probe sits on a dark port.
    pub leakage_fraction: Option<LeakageSummary>,
    pub oracle: OracleReport,
}

pub fn summarize(result: &EnsembleResult, spec: &CircuitSpec) -> Result<RunSummary> {
    let mut final_port_counts: BTreeMap<String, usize> =
        spec.final_basis().iter().map(|p| (p.to_string(), 0)).collect();
    for t in result.detected() {
        *final_port_counts.entry(t.final_port().expect("detected").to_string()).or_default() += 1;
    }
    let probes = result
        .probe_ids
        .iter()
        .map(|p| {
            let xs: Vec<f64> = result.trials.iter().filter_map(|t| t.reading(p)).collect();
            let (mean, se) = mean_se(&xs);
            let occ = occupancy_fraction(result, p);
            ProbeSummary {
                probe: p.clone(),
                count: xs.len(),
                mean,
                se,
                occupancy: occ.map(|o| o.mean),
                occupancy_se: occ.map(|o| o.binomial_se),
            }
        })
        .collect();
    let oracle = oracle_report(spec, None)?;
    let leakage_fraction = oracle.leakage.first().and_then(|(probe, predicted)| {
        let occ = occupancy_fraction(result, probe)?;
        Some(LeakageSummary { probe: probe.clone(), fraction: occ.mean, se: occ.binomial_se, predicted: *predicted })
    });
    Ok(RunSummary {
        circuit: spec.name().to_string(),
        fingerprint: result.fingerprint.clone(),
        master_seed: result.master_seed,
        trials: result.n(),
        final_port_counts,
        absorbed_count: result.absorbed_count(),
        probes,
        leakage_fraction,
        oracle,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleSummary {
    pub circuit: String,
    pub master_seed: u64,
    pub passes: usize,
    pub ended_at: Option<u64>,
    /// End-port counts per direction.
    pub end_port_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub pairings: Vec<PairingRule>,
    pub match_probability: MatchEstimate,
}

pub fn summarize_cycles(run: &CycleRun, spec: &CircuitSpec, master_seed: u64) -> Result<CycleSummary> {
    let mut end_port_counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for c in &run.records {
        *end_port_counts
            .entry(c.direction.as_str().to_string())
            .or_default()
            .entry(c.end_port.to_string())
            .or_default() += 1;
    }
    let pairings = cycle_pairings(spec)?;
    let window = run.records.len();
    Ok(CycleSummary {
        circuit: spec.name().to_string(),
        master_seed,
        passes: run.records.len(),
        ended_at: run.ended_at,
        end_port_counts,
        match_probability: match_probability(&run.records, window, &pairings),
        pairings,
    })
}
