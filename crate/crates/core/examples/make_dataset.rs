//! Turn MNIST into the depth-extruded dataset: binarize, extrude depth by
//! class, mix in noise, split the cohorts, and measure the realised noise.
//!
//! cargo run --release --example make_dataset -- [snr] [size]
//! Needs the MNIST IDX files in data/mnist or $MTLFORGE_DATA.

use mtlforge::data::{label_histogram, measured_snr, Cohort, DataSpec, Dataset, MnistSource, SnrLabel};

fn main() -> mtlforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let snr: SnrLabel = args.next().as_deref().unwrap_or("1:19").parse()?;
    let size: usize = args.next().map_or(32, |a| a.parse().expect("size"));
    let source = MnistSource::from_env()?;
    let spec = DataSpec {
        size,
        train_n: 512,
        snr,
        seed: 0,
    };
    let data = Dataset::generate(spec, &source)?;
    let clean = Dataset::generate(DataSpec { snr: SnrLabel::Inf, ..spec }, &source)?;
    for c in Cohort::ALL {
        let samples = data.cohort(c);
        println!(
            "{:<5} {:>5} samples, indices {}..={}, labels {:?}",
            c.name(),
            samples.len(),
            samples[0].index,
            samples.last().map_or(0, |s| s.index),
            label_histogram(samples)
        );
    }

    // The noisy image is mostly noise at low ratios; show the clean mask.
    let first = &clean.train[0];
    println!("\nsample 0 before noise: label {}, foreground depth {}", first.label, first.stored_depth_value());
    for row in (0..size).step_by((size / 16).max(1)) {
        let line: String = (0..size)
            .step_by((size / 32).max(1))
            .map(|x| {
                let v = first.image[row * size + x];
                [' ', '.', ':', '+', '#'][((v * 4.99) as usize).min(4)]
            })
            .collect();
        println!("  |{line}|");
    }

    let px = |d: &Dataset| -> Vec<f64> { d.train.iter().flat_map(|s| s.image.iter().map(|&v| v as f64)).collect() };
    let est = measured_snr(&px(&clean), &px(&data))?;
    let ratio = if est.ratio.is_infinite() { "Inf".to_string() } else { format!("1:{:.1}", 1.0 / est.ratio) };
    println!(
        "\nrequested {snr} (alpha {:.4}); measured alpha {:.4}, signal:noise {ratio}",
        snr.alpha(),
        est.alpha
    );
    Ok(())
}
