//! Reverse-mode differentiation on the tape: a two-layer perceptron on one
//! batch, its gradients, and a finite-difference check of the same function.
//!
//! cargo run --release --example autodiff

use mtlforge::nn::{ClassWeights, LinearParams};
use mtlforge::rng::ShiftRng;
use mtlforge::tensor::{grad_check_inputs, Tape, Tensor};

fn random(rng: &mut ShiftRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn main() -> mtlforge::Result<()> {
    let mut rng = ShiftRng::new(1);
    let x = random(&mut rng, &[4, 6]);
    let labels = [0, 2, 1, 2];
    let weights = ClassWeights::uniform(3);
    let params = vec![
        random(&mut rng, &[5, 6]),
        random(&mut rng, &[5]),
        random(&mut rng, &[3, 5]),
        random(&mut rng, &[3]),
    ];

    let loss = |tape: &Tape, p: &[Tensor]| -> mtlforge::Result<Tensor> {
        let l1 = LinearParams {
            weight: p[0].clone(),
            bias: p[1].clone(),
        };
        let l2 = LinearParams {
            weight: p[2].clone(),
            bias: p[3].clone(),
        };
        let h = tape.relu(&tape.linear(&x, &l1)?);
        let logits = tape.linear(&h, &l2)?;
        tape.weighted_cross_entropy(&logits, &labels, &weights)
    };

    let tape = Tape::new();
    let tracked: Vec<Tensor> = params.iter().map(|p| tape.param(p)).collect();
    let y = loss(&tape, &tracked)?;
    let grads = tape.backward(&y)?;
    println!("loss {:.6} ({} nodes on the tape)", y.item(), tape.len());
    for (name, t) in ["w1", "b1", "w2", "b2"].iter().zip(&tracked) {
        let g = grads.or_zeros(t);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  d loss / d {name:<2} shape {:?}  norm {norm:.6}", t.shape());
    }

    let report = grad_check_inputs(loss, &params, None, 1e-5)?;
    println!(
        "finite differences over {} coordinates: worst relative error {:.2e}",
        report.checked, report.max_rel_error
    );
    Ok(())
}
