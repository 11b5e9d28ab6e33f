//! One training run on noisy MNIST, printing the per-epoch metrics of every
//! cohort.
//!
//! cargo run --release --example train_single_run -- [strategy] [epochs] [train_n]
//! Needs the MNIST IDX files in data/mnist or $MTLFORGE_DATA.

use mtlforge::data::{DataSpec, Dataset, MnistSource, SnrLabel};
use mtlforge::model::{MultitaskNet, UNetConfig};
use mtlforge::train::{Hyperparameters, Strategy, Trainer};

fn main() -> mtlforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let strategy: Strategy = args.next().as_deref().unwrap_or("multitask_loss").parse()?;
    let epochs: usize = args.next().map_or(3, |a| a.parse().expect("epochs"));
    let train_n: usize = args.next().map_or(256, |a| a.parse().expect("train_n"));

    let spec = DataSpec {
        size: 32,
        train_n,
        snr: SnrLabel::Ratio { signal: 1, noise: 5 },
        seed: 0,
    };
    let data = Dataset::generate(spec, &MnistSource::from_env()?)?;
    let hp = Hyperparameters {
        learning_rate: 1e-3,
        epochs,
        strategy,
        ..Hyperparameters::default()
    };
    let net = MultitaskNet::build(UNetConfig::default(), hp.seed)?;
    let mut trainer = Trainer::new(net, &data, hp)?;
    println!("{strategy}: {} epochs on {train_n} images at {}", trainer.total_epochs(), spec.snr);
    while !trainer.is_done() {
        trainer.run_epoch()?;
        let e = trainer.state().history.last().expect("epoch");
        println!(
            "epoch {:>2} {:<14} acc train {:.3} val {:.3} test {:.3} | depth rmse {:.4} | ce {:.4}",
            e.epoch,
            e.phase.name(),
            e.train.accuracy,
            e.val.accuracy,
            e.test.accuracy,
            e.test.depth_rmse,
            e.train.cls_loss
        );
    }
    let (_, record) = trainer.finish()?;
    println!(
        "best val accuracy {:.3} at epoch {}, {:.0} s",
        record.best_val.1, record.best_val.0, record.wall_seconds
    );
    Ok(())
}
