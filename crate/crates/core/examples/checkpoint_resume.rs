//! Stop a run part way, reload it from the checkpoint file, finish it, and
//! compare against a run that was never interrupted.
//!
//! cargo run --release --example checkpoint_resume
//! Needs the MNIST IDX files in data/mnist or $MTLFORGE_DATA.

use mtlforge::data::{DataSpec, Dataset, MnistSource, SnrLabel};
use mtlforge::experiment::{self, ExperimentConfig};

fn main() -> mtlforge::Result<()> {
    let mut cfg = ExperimentConfig {
        train_n: 128,
        ..Default::default()
    };
    cfg.hp.epochs = 3;
    cfg.hp.learning_rate = 1e-3;
    let spec = DataSpec {
        snr: SnrLabel::Ratio { signal: 1, noise: 5 },
        ..cfg.data_spec()
    };
    let data = Dataset::generate(spec, &MnistSource::from_env()?)?;

    let dir = std::env::temp_dir().join(format!("mtlforge-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| mtlforge::Error::Config(e.to_string()))?;
    let ck = dir.join("run.mtlc");

    let (_, partial) = experiment::train_run(&cfg, &data, Some(&ck), Some(1), |s| {
        println!("first invocation finished epoch {}", s.epochs_done)
    })?;
    let size = std::fs::metadata(&ck).map(|m| m.len()).unwrap_or(0);
    println!("stopped after {} epoch(s); checkpoint {} bytes", partial.epochs.len(), size);

    let (resumed, record) = experiment::train_run(&cfg, &data, Some(&ck), None, |s| {
        println!("resumed invocation finished epoch {}", s.epochs_done)
    })?;
    let (straight, straight_record) = experiment::train_run(&cfg, &data, None, None, |_| {})?;
    let identical = resumed
        .parameters()
        .iter()
        .zip(straight.parameters())
        .all(|(a, b)| a.value.bit_eq(&b.value));
    println!(
        "final test accuracy {:.4}; bit-identical to an uninterrupted run: {} (histories equal: {})",
        record.test.accuracy,
        identical,
        record == straight_record
    );
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
