//! `tsvflab`: run experiments, query the analytic oracle and slice recorded ensembles.
//!
//! Exit codes: 0 success, 1 diagnostics or invalid input, 2 I/O failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use tsvflab::circuit::CircuitSpec;
use tsvflab::dsl::{self, RunConfig};
use tsvflab::engine::{run_ensemble, run_single_photon_cycles, CycleConfig};
use tsvflab::linalg::PortLabel;
use tsvflab::records::{read_trials_csv, summarize, summarize_cycles, write_cycles_csv, write_trials_csv};
use tsvflab::slicing::{ac_in_test, attach_oracle, slice, slice_means, subsample, AcInReport, SliceCriterion, SliceReport};
use tsvflab::tsvf::oracle_report;
use tsvflab::Error;

#[derive(Parser)]
#[command(name = "tsvflab", version, about = "Pre/post-selected weak measurement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an experiment and write trials.csv (or cycles.csv), summary.json and manifest.json.
    Run {
        #[arg(long)]
        experiment: PathBuf,
        /// Overrides the experiment's trial count.
        #[arg(long)]
        trials: Option<u64>,
        /// Overrides the experiment's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on it.
        #[arg(long, env = "TSVFLAB_THREADS")]
        threads: Option<usize>,
    },
    /// Print weak values, ABL probabilities, pointer shifts and leakage as JSON.
    Oracle {
        #[arg(long)]
        experiment: PathBuf,
        /// Final port to post-select on, or `none`.
        #[arg(long, default_value = "none")]
        post: String,
    },
    /// Slice a trials.csv by final or initial port and print the report as JSON.
    Slice {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = By::Final)]
        by: By,
        /// Keep a seeded random fraction of the trials.
        #[arg(long)]
        subsample: Option<f64>,
        #[arg(long, default_value_t = 0)]
        subsample_seed: u64,
        /// Run the accurate/inaccurate test (needs --experiment).
        #[arg(long)]
        ac_in: bool,
        /// Probe for the accurate/inaccurate test; defaults to the first probe.
        #[arg(long)]
        probe: Option<String>,
        /// Experiment the trials came from; enables oracle columns.
        #[arg(long)]
        experiment: Option<PathBuf>,
        /// Write tidy CSV (slice, probe, count, mean, se) for plotting.
        #[arg(long)]
        emit_plot_data: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum By {
    Final,
    Initial,
}

enum Failure {
    Diagnostics(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(m) => Failure::Io(m),
            other => Failure::Diagnostics(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

struct Loaded {
    bytes: Vec<u8>,
    spec: CircuitSpec,
    run: RunConfig,
}

fn load_experiment(path: &Path) -> CliResult<Loaded> {
    let bytes = read_file(path)?;
    let lowered = dsl::parse_bytes(&bytes).and_then(|ast| dsl::lower(&ast));
    match lowered {
        Ok((spec, run)) => Ok(Loaded { bytes, spec, run }),
        Err(diags) => {
            let text: Vec<String> = diags.iter().map(|d| format!("{}:{d}", path.display())).collect();
            Err(Failure::Diagnostics(text.join("\n")))
        }
    }
}

/// Writes through a temporary sibling and renames it into place.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", dir.join(name).display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, dir.join(name)).map_err(io)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct ExperimentRef {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    experiment: ExperimentRef,
    circuit: String,
    fingerprint: String,
    master_seed: u64,
    parameters: RunConfig,
    outputs: Vec<OutputFile>,
}

fn cmd_run(
    experiment: &Path,
    trials: Option<u64>,
    seed: Option<u64>,
    out: &Path,
    threads: Option<usize>,
) -> CliResult<()> {
    let Loaded { bytes, spec, mut run } = load_experiment(experiment)?;
    if let Some(t) = trials {
        if t == 0 {
            return Err(Failure::Diagnostics("--trials must be at least 1".into()));
        }
        run.trials = t;
    }
    if let Some(s) = seed {
        run.seed = s;
    }
    let threads = threads
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if let Some(passes) = run.cycles {
        let cfg = CycleConfig::new(passes as usize, run.seed);
        let cycles = run_single_photon_cycles(&spec, &cfg)?;
        let mut csv = Vec::new();
        write_cycles_csv(&cycles, &spec.probe_ids(), &mut csv)?;
        files.push(("cycles.csv".into(), csv));
        files.push(("summary.json".into(), to_json(&summarize_cycles(&cycles, &spec, run.seed)?)));
    } else {
        let result = run_ensemble(&spec, run.trials as usize, run.seed, threads)?;
        let mut csv = Vec::new();
        write_trials_csv(&result, &mut csv)?;
        files.push(("trials.csv".into(), csv));
        files.push(("summary.json".into(), to_json(&summarize(&result, &spec)?)));
    }

    let mut outputs = Vec::new();
    for (name, data) in &files {
        write_atomic(out, name, data)?;
        outputs.push(OutputFile { file: name.clone(), sha256: sha256_hex(data), bytes: data.len() });
    }
    let manifest = Manifest {
        tool: "tsvflab",
        version: env!("CARGO_PKG_VERSION"),
        experiment: ExperimentRef { path: experiment.display().to_string(), sha256: sha256_hex(&bytes) },
        circuit: spec.name().to_string(),
        fingerprint: tsvflab::engine::fingerprint(&spec),
        master_seed: run.seed,
        parameters: run,
        outputs,
    };
    write_atomic(out, "manifest.json", &to_json(&manifest))?;
    Ok(())
}

fn cmd_oracle(experiment: &Path, post: &str) -> CliResult<()> {
    let Loaded { spec, .. } = load_experiment(experiment)?;
    let post = match post {
        "none" => None,
        p => Some(PortLabel::new(p)),
    };
    let report = oracle_report(&spec, post.as_ref())?;
    std::io::stdout().write_all(&to_json(&report))?;
    Ok(())
}

#[derive(Serialize)]
struct SubsampleInfo {
    fraction: f64,
    seed: u64,
    retained: usize,
    of: usize,
}

#[derive(Serialize)]
struct SliceOutput {
    input: String,
    subsample: Option<SubsampleInfo>,
    report: SliceReport,
    ac_in: Option<AcInReport>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_slice(
    input: &Path,
    by: By,
    fraction: Option<f64>,
    subsample_seed: u64,
    ac_in: bool,
    probe: Option<String>,
    experiment: Option<&Path>,
    plot: Option<&Path>,
) -> CliResult<()> {
    let bytes = read_file(input)?;
    let full = read_trials_csv(bytes.as_slice())?;
    let spec = experiment.map(load_experiment).transpose()?;
    let fraction = fraction.or(spec.as_ref().and_then(|l| l.run.subsample));
    if let Some(l) = &spec {
        if l.spec.probe_ids() != full.probe_ids {
            return Err(Failure::Diagnostics(format!(
                "experiment probes {:?} do not match the table's {:?}",
                l.spec.probe_ids(),
                full.probe_ids
            )));
        }
    }

    let (result, info) = match fraction {
        Some(f) => {
            let sub = subsample(&full, f, subsample_seed)?;
            let info = SubsampleInfo { fraction: f, seed: subsample_seed, retained: sub.n(), of: full.n() };
            (sub, Some(info))
        }
        None => (full, None),
    };
    let criterion = match by {
        By::Final => SliceCriterion::FinalPort,
        By::Initial => SliceCriterion::InitialPort,
    };
    let mut report = slice_means(&slice(&result, &criterion), &result.probe_ids);
    if let Some(l) = &spec {
        attach_oracle(&mut report, &l.spec);
    }
    let ac_in = if ac_in {
        let Some(l) = &spec else {
            return Err(Failure::Diagnostics("--ac-in needs --experiment".into()));
        };
        let probe = probe
            .or_else(|| result.probe_ids.first().cloned())
            .ok_or_else(|| Failure::Diagnostics("the table has no probe columns".into()))?;
        Some(ac_in_test(&result, &l.spec, &probe)?)
    } else {
        None
    };

    if let Some(path) = plot {
        let mut csv = String::from("slice,probe,count,mean,se\n");
        let fmt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        for s in &report.slices {
            for p in &s.probes {
                csv.push_str(&format!("{},{},{},{},{}\n", s.key, p.probe, p.count, fmt(p.mean), fmt(p.se)));
            }
        }
        fs::write(path, csv).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }

    let out = SliceOutput { input: input.display().to_string(), subsample: info, report, ac_in };
    std::io::stdout().write_all(&to_json(&out))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { experiment, trials, seed, out, threads } => cmd_run(&experiment, trials, seed, &out, threads),
        Command::Oracle { experiment, post } => cmd_oracle(&experiment, &post),
        Command::Slice { input, by, subsample, subsample_seed, ac_in, probe, experiment, emit_plot_data } => cmd_slice(
            &input,
            by,
            subsample,
            subsample_seed,
            ac_in,
            probe,
            experiment.as_deref(),
            emit_plot_data.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Diagnostics(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
