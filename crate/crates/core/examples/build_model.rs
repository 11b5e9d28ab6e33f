//! Build the multitask U-Net, list its parameter groups and run one forward
//! pass through both heads.
//!
//! cargo run --release --example build_model -- [input_size] [levels]

use mtlforge::model::{Group, MultitaskNet, UNetConfig};
use mtlforge::tensor::Tensor;

fn main() -> mtlforge::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let mut config = UNetConfig::default();
    if let Some(s) = args.next() {
        config.input_size = s;
    }
    if let Some(l) = args.next() {
        config.levels = l;
    }
    let net = MultitaskNet::build(config, 0)?;
    println!("{config:?}");
    println!("{} weights in {} tensors", net.num_weights(), net.parameters().len());
    for g in Group::ALL {
        let idx = net.group_indices(g);
        let n: usize = idx.iter().map(|&i| net.parameters()[i].value.len()).sum();
        println!("  {:<10} {:>3} tensors {:>8} weights", g.name(), idx.len(), n);
    }
    for p in net.parameters().iter().take(4) {
        println!("  {:<22} {:?}", p.name, p.value.shape());
    }

    let s = config.input_size;
    let x = Tensor::new(vec![2, 1, s, s], (0..2 * s * s).map(|i| ((i * 7) % 11) as f64 / 10.0).collect())?;
    let out = net.forward(&x)?;
    println!(
        "forward: depth {:?}, logits {:?}, bottleneck features {:?}",
        out.depth.shape(),
        out.logits.shape(),
        out.features.shape()
    );
    Ok(())
}
