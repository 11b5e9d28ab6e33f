use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtlforge::data::Dataset;
use mtlforge::experiment::{self, gradcheck, report, ExperimentConfig};
use mtlforge::Error;

#[derive(Parser)]
#[command(name = "mtlforge", version, about = "Multitask U-Net: classification with depth regression as an auxiliary task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the cohort caches and print their label histograms.
    GenData(Common),
    /// Train one network; resumes from <out>/checkpoint.mtlc if present.
    Train {
        #[command(flatten)]
        common: Common,
        /// Stop after this many completed epochs (resume later).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run every (axis value, seed) cell and write report.csv and report.md.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// snr, train_n or strategy.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values; defaults to the standard set.
        #[arg(long)]
        values: Option<String>,
    },
    /// Rebuild report.csv and report.md from the cell files of a sweep.
    Report {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Finite-difference check of every operation and the network.
    GradCheck {
        /// Random cases per operation.
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Signal-to-noise label such as Inf or 1:29.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    train_n: Option<usize>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// 256×256 inputs, a deeper network and 5000 training images.
    #[arg(long)]
    paper_scale: bool,
    /// Parallel sweep cells (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Any configuration key, e.g. --set learning_rate=1e-3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if self.paper_scale {
            cfg.paper_scale();
        }
        let mut flags: Vec<(&str, Option<String>)> = vec![
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("snr", self.snr.clone()),
            ("train_n", self.train_n.map(|v| v.to_string())),
            ("strategy", self.strategy.clone()),
            ("size", self.size.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("jobs", self.jobs.map(|v| v.to_string())),
        ];
        if !self.seeds.is_empty() {
            let s: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            flags.push(("seeds", Some(s.join(","))));
        }
        flags.extend(extra.iter().cloned());
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(|e| flag_error(key, e))?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v).map_err(|e| flag_error(k, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn flag_error(key: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("--{}: {msg}", key.replace('_', "-")))
}

enum Failure {
    Usage(Error),
    Runtime(Error),
    /// Runtime failure already phrased for the user.
    Message(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e),
            other => Failure::Runtime(other),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.resolve(&[])?;
            for s in experiment::gen_data(&cfg).map_err(Failure::Runtime)? {
                let hist: Vec<String> = s.histogram.iter().map(usize::to_string).collect();
                println!(
                    "{:<5} {:>6} samples  labels 0-9: {}  {}",
                    s.cohort.name(),
                    s.count,
                    hist.join(" "),
                    s.path.display()
                );
            }
        }
        Command::Train { common, stop_after } => {
            let cfg = common.resolve(&[])?;
            let data = experiment::DataLoader::new(&cfg).dataset(cfg.data_spec()).map_err(Failure::Runtime)?;
            train(&cfg, &data, stop_after).map_err(Failure::Runtime)?;
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.resolve(&[("axis", axis), ("values", values)])?;
            let outcome = experiment::run_sweep(&cfg, |line| println!("{line}")).map_err(Failure::Runtime)?;
            println!(
                "{} cells run, {} reused, {} failed",
                outcome.ran.len(),
                outcome.skipped.len(),
                outcome.failed.len()
            );
            if !outcome.failed.is_empty() {
                let lines: Vec<String> = outcome.failed.iter().map(|(key, e)| format!("cell {key}: {e}")).collect();
                return Err(Failure::Message(lines.join("\n")));
            }
            println!("report: {}", cfg.out.join("report.md").display());
        }
        Command::Report { out } => {
            let rows = experiment::rebuild_report(&out)?;
            println!("{} rows; report: {}", rows.len(), out.join("report.md").display());
        }
        Command::GradCheck { cases, seed } => {
            let mut ok = true;
            for c in gradcheck::run_all(cases, seed).map_err(Failure::Runtime)? {
                ok &= c.passed();
                let skipped = if c.checked_probes + c.skipped_probes > 0 {
                    format!(
                        "  ({} probes, {} skipped at kinks)",
                        c.checked_probes + c.skipped_probes,
                        c.skipped_probes
                    )
                } else {
                    String::new()
                };
                println!(
                    "{:<24} {:>4} cases  worst relative error {:.3e}  {}{skipped}",
                    c.name,
                    c.cases,
                    c.max_rel_error,
                    if c.passed() { "ok" } else { "FAIL" }
                );
            }
            if !ok {
                return Err(Failure::Message(format!(
                    "gradient check above tolerance {:e}",
                    gradcheck::TOLERANCE
                )));
            }
        }
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig, data: &Dataset, stop_after: Option<usize>) -> Result<(), Error> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Config(format!("{}: {e}", cfg.out.display())))?;
    let ckpt = cfg.out.join("checkpoint.mtlc");
    let (_, record) = experiment::train_run(cfg, data, Some(&ckpt), stop_after, |state| {
        if let Some(e) = state.history.last() {
            println!(
                "epoch {:>3} {:<14} train acc {:.4}  val acc {:.4}  test acc {:.4}  depth rmse {:.4}",
                e.epoch,
                e.phase.name(),
                e.train.accuracy,
                e.val.accuracy,
                e.test.accuracy,
                e.test.depth_rmse
            );
        }
    })?;
    let cell = experiment::CellInfo {
        axis: "single".into(),
        seed: record.hp.seed,
        strategy: record.hp.strategy,
        train_n: cfg.train_n,
        snr: cfg.snr,
    };
    experiment::emit_report(&cfg.out, &report::record_rows(&cell, &record))?;
    if record.aborted {
        println!("training aborted on a non-finite loss");
    }
    println!(
        "best val accuracy {:.4} at epoch {}; final test accuracy {:.4}",
        record.best_val.1, record.best_val.0, record.test.accuracy
    );
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Message(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
