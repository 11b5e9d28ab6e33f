//! A small noise sweep over two seeds, written as per-cell files plus
//! report.csv and report.md, then re-run to show cell reuse.
//!
//! cargo run --release --example sweep_report -- [out_dir]
//! Needs the MNIST IDX files in data/mnist or $MTLFORGE_DATA.

use mtlforge::data::SnrLabel;
use mtlforge::experiment::{run_sweep, ExperimentConfig, SweepAxis};

fn main() -> mtlforge::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example-sweep".into());
    let mut cfg = ExperimentConfig {
        out: out.into(),
        train_n: 128,
        seeds: vec![0, 1],
        ..Default::default()
    };
    cfg.hp.epochs = 1;
    cfg.hp.learning_rate = 1e-3;
    cfg.axis = SweepAxis::Snr(vec![SnrLabel::Inf, SnrLabel::Ratio { signal: 1, noise: 29 }]);

    let first = run_sweep(&cfg, |line| println!("  {line}"))?;
    println!("ran {:?}", first.ran);
    let again = run_sweep(&cfg, |line| println!("  {line}"))?;
    println!("second invocation reused {} cells and ran {}", again.skipped.len(), again.ran.len());
    println!("\n{}", std::fs::read_to_string(cfg.out.join("report.md")).map_err(|e| mtlforge::Error::Config(e.to_string()))?);
    Ok(())
}
