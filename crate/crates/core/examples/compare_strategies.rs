//! The four training regimes side by side on the same data and seed.
//!
//! cargo run --release --example compare_strategies -- [epochs]
//! Needs the MNIST IDX files in data/mnist or $MTLFORGE_DATA.

use mtlforge::data::{DataSpec, Dataset, MnistSource, SnrLabel};
use mtlforge::model::{MultitaskNet, UNetConfig};
use mtlforge::train::{train, Hyperparameters, Strategy};

fn main() -> mtlforge::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(2, |a| a.parse().expect("epochs"));
    let spec = DataSpec {
        size: 32,
        train_n: 256,
        snr: SnrLabel::Ratio { signal: 1, noise: 19 },
        seed: 0,
    };
    let data = Dataset::generate(spec, &MnistSource::from_env()?)?;
    println!("{:<16} {:>8} {:>10} {:>10} {:>8}", "strategy", "epochs", "test acc", "depth rmse", "seconds");
    for strategy in Strategy::ALL {
        let hp = Hyperparameters {
            learning_rate: 1e-3,
            epochs,
            strategy,
            ..Hyperparameters::default()
        };
        let net = MultitaskNet::build(UNetConfig::default(), hp.seed)?;
        let (_, record) = train(net, &data, &hp)?;
        println!(
            "{:<16} {:>8} {:>10.4} {:>10.4} {:>8.0}",
            strategy.name(),
            record.epochs.len(),
            record.test.accuracy,
            record.test.depth_rmse,
            record.wall_seconds
        );
    }
    Ok(())
}
