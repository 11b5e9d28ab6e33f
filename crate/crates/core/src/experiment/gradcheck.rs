//! Finite-difference verification of every differentiable operation and of
//! the whole multitask network.
//!
//! Each registered operation is checked on randomly drawn shapes and values.
//! Non-scalar outputs are reduced with a fixed random weighting,
//! `sum(op(x) * r)`, so every output element contributes a distinct
//! gradient. Inputs to ReLU and max pooling are kept away from their kinks.
//!
//! Inside a random network there is no such control: some pre-activation
//! or pooling window sits within one step of a kink often enough to spoil a
//! few probes per hundred networks. Those probes are detected by comparing
//! the two one-sided differences and skipped; the skip count is reported.

use crate::error::Result;
use crate::model::{MultitaskNet, UNetConfig};
use crate::nn::{ClassWeights, Conv2dParams, LinearParams};
use crate::rng::ShiftRng;
use crate::tensor::{grad_check_inputs, grad_check_piecewise, Backward, GradCheckReport, Probe, Tape, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Parameter coordinates probed per network case.
pub const NETWORK_PROBES: usize = 32;

/// One random case: returns the worst relative error over its coordinates.
pub type CaseFn = fn(&mut ShiftRng) -> Result<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
    /// Index of the case with the largest error.
    pub worst_case: usize,
    /// Network probes skipped because a ReLU or pooling kink lay within the
    /// finite-difference step.
    pub skipped_probes: usize,
    pub checked_probes: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn random(rng: &mut ShiftRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).expect("sized")
}

/// Magnitudes in `[0.05, 1]` with random sign.
fn away_from_zero(rng: &mut ShiftRng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + 0.95 * v.abs());
    }
    t
}

/// A random arrangement of values spaced 0.01 apart.
fn distinct(rng: &mut ShiftRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01).collect();
    rng.shuffle(&mut v);
    Tensor::new(shape.to_vec(), v).expect("sized")
}

fn dims(rng: &mut ShiftRng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| 1 + rng.below(max)).collect()
}

fn weighted_sum(tape: &Tape, y: &Tensor, r: &Tensor) -> Result<Tensor> {
    Ok(tape.sum(&tape.mul(y, r)?))
}

/// Check `sum(op(xs) * r)` over every coordinate of `xs`.
fn check_reduced<F>(rng: &mut ShiftRng, inputs: Vec<Tensor>, out_shape: &[usize], op: F) -> Result<f64>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let r = random(rng, out_shape);
    let report = grad_check_inputs(|tape, xs| weighted_sum(tape, &op(tape, xs)?, &r), &inputs, None, STEP)?;
    Ok(report.max_rel_error)
}

fn check_scalar<F>(inputs: Vec<Tensor>, op: F) -> Result<f64>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    Ok(grad_check_inputs(op, &inputs, None, STEP)?.max_rel_error)
}

fn binary(rng: &mut ShiftRng, op: fn(&Tape, &Tensor, &Tensor) -> Result<Tensor>) -> Result<f64> {
    let rank = 1 + rng.below(3);
    let shape = dims(rng, rank, 4);
    let a = random(rng, &shape);
    let b = if rng.below(4) == 0 { random(rng, &[1]) } else { random(rng, &shape) };
    check_reduced(rng, vec![a, b], &shape, |t, x| op(t, &x[0], &x[1]))
}

fn case_add(rng: &mut ShiftRng) -> Result<f64> {
    binary(rng, Tape::add)
}

fn case_sub(rng: &mut ShiftRng) -> Result<f64> {
    binary(rng, Tape::sub)
}

fn case_mul(rng: &mut ShiftRng) -> Result<f64> {
    binary(rng, Tape::mul)
}

fn case_relu(rng: &mut ShiftRng) -> Result<f64> {
    let shape = dims(rng, 2, 5);
    let x = away_from_zero(rng, &shape);
    check_reduced(rng, vec![x], &shape, |t, x| Ok(t.relu(&x[0])))
}

fn case_scale(rng: &mut ShiftRng) -> Result<f64> {
    let shape = dims(rng, 2, 5);
    let c = rng.uniform(-3.0, 3.0);
    let x = random(rng, &shape);
    check_reduced(rng, vec![x], &shape, move |t, x| Ok(t.scale(&x[0], c)))
}

fn case_sum(rng: &mut ShiftRng) -> Result<f64> {
    let shape = dims(rng, 3, 4);
    let x = random(rng, &shape);
    check_reduced(rng, vec![x], &[1], |t, x| Ok(t.sum(&x[0])))
}

fn case_mean(rng: &mut ShiftRng) -> Result<f64> {
    let shape = dims(rng, 3, 4);
    let x = random(rng, &shape);
    check_reduced(rng, vec![x], &[1], |t, x| Ok(t.mean(&x[0])))
}

fn case_reshape(rng: &mut ShiftRng) -> Result<f64> {
    let shape = dims(rng, 3, 4);
    let x = random(rng, &shape);
    let flat = [shape[0], shape[1] * shape[2]];
    check_reduced(rng, vec![x], &flat, move |t, x| t.reshape(&x[0], &flat))
}

fn case_matmul(rng: &mut ShiftRng) -> Result<f64> {
    let (m, k, n) = (1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5));
    let a = random(rng, &[m, k]);
    let b = random(rng, &[k, n]);
    check_reduced(rng, vec![a, b], &[m, n], |t, x| t.matmul(&x[0], &x[1]))
}

fn case_conv2d(rng: &mut ShiftRng) -> Result<f64> {
    let (b, cin, cout) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
    let k = 1 + rng.below(3);
    let stride = 1 + rng.below(2);
    let padding = rng.below(2);
    let h = k + rng.below(5);
    let w = k + rng.below(5);
    let x = random(rng, &[b, cin, h, w]);
    let wt = random(rng, &[cout, cin, k, k]);
    let bias = random(rng, &[cout]);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    check_reduced(rng, vec![x, wt, bias], &[b, cout, oh, ow], move |t, x| {
        t.conv2d(
            &x[0],
            &Conv2dParams {
                weight: x[1].clone(),
                bias: x[2].clone(),
                stride,
                padding,
            },
        )
    })
}

fn case_max_pool2d(rng: &mut ShiftRng) -> Result<f64> {
    let (b, c) = (1 + rng.below(2), 1 + rng.below(2));
    let (h, w) = (2 * (1 + rng.below(4)), 2 * (1 + rng.below(4)));
    let x = distinct(rng, &[b, c, h, w]);
    check_reduced(rng, vec![x], &[b, c, h / 2, w / 2], |t, x| Ok(t.max_pool2d(&x[0], 2)?.output))
}

fn case_upsample_nn(rng: &mut ShiftRng) -> Result<f64> {
    let (b, c, h, w) = (1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4));
    let f = 1 + rng.below(3);
    let x = random(rng, &[b, c, h, w]);
    check_reduced(rng, vec![x], &[b, c, h * f, w * f], move |t, x| t.upsample_nn(&x[0], f))
}

fn case_concat_channels(rng: &mut ShiftRng) -> Result<f64> {
    let (b, c1, c2, h, w) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4));
    let x = random(rng, &[b, c1, h, w]);
    let y = random(rng, &[b, c2, h, w]);
    check_reduced(rng, vec![x, y], &[b, c1 + c2, h, w], |t, x| t.concat_channels(&x[0], &x[1]))
}

fn case_slice_channels(rng: &mut ShiftRng) -> Result<f64> {
    let (b, c, h, w) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
    let start = rng.below(c);
    let len = 1 + rng.below(c - start);
    let x = random(rng, &[b, c, h, w]);
    check_reduced(rng, vec![x], &[b, len, h, w], move |t, x| t.slice_channels(&x[0], start, len))
}

fn case_global_avg_pool(rng: &mut ShiftRng) -> Result<f64> {
    let (b, c, h, w) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4));
    let x = random(rng, &[b, c, h, w]);
    check_reduced(rng, vec![x], &[b, c], |t, x| t.global_avg_pool(&x[0]))
}

fn case_linear(rng: &mut ShiftRng) -> Result<f64> {
    let (b, i, o) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5));
    let x = random(rng, &[b, i]);
    let w = random(rng, &[o, i]);
    let bias = random(rng, &[o]);
    check_reduced(rng, vec![x, w, bias], &[b, o], |t, x| {
        t.linear(
            &x[0],
            &LinearParams {
                weight: x[1].clone(),
                bias: x[2].clone(),
            },
        )
    })
}

fn case_weighted_cross_entropy(rng: &mut ShiftRng) -> Result<f64> {
    let (b, c) = (1 + rng.below(4), 2 + rng.below(5));
    let mut logits = random(rng, &[b, c]);
    for v in logits.data_mut() {
        *v *= 3.0;
    }
    let labels: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
    let weights = ClassWeights::new((0..c).map(|_| rng.uniform(0.5, 2.0)).collect())?;
    check_scalar(vec![logits], move |t, x| t.weighted_cross_entropy(&x[0], &labels, &weights))
}

fn case_mse_loss(rng: &mut ShiftRng) -> Result<f64> {
    let shape = dims(rng, 4, 3);
    let p = random(rng, &shape);
    let q = random(rng, &shape);
    check_scalar(vec![p, q], |t, x| t.mse_loss(&x[0], &x[1]))
}

fn case_masked_mse_loss(rng: &mut ShiftRng) -> Result<f64> {
    let shape = dims(rng, 4, 3);
    let n: usize = shape.iter().product();
    let mut mask: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
    mask[rng.below(n)] = 1.0;
    let p = random(rng, &shape);
    let q = random(rng, &shape);
    check_scalar(vec![p, q], move |t, x| t.masked_mse_loss(&x[0], &x[1], &mask))
}

/// Every differentiable operation of the engine, by name.
pub fn registry() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("add", case_add as CaseFn),
        ("sub", case_sub),
        ("mul", case_mul),
        ("relu", case_relu),
        ("scale", case_scale),
        ("sum", case_sum),
        ("mean", case_mean),
        ("reshape", case_reshape),
        ("matmul", case_matmul),
        ("conv2d", case_conv2d),
        ("max_pool2d", case_max_pool2d),
        ("upsample_nn", case_upsample_nn),
        ("concat_channels", case_concat_channels),
        ("slice_channels", case_slice_channels),
        ("global_avg_pool", case_global_avg_pool),
        ("linear", case_linear),
        ("weighted_cross_entropy", case_weighted_cross_entropy),
        ("mse_loss", case_mse_loss),
        ("masked_mse_loss", case_masked_mse_loss),
    ]
}

/// Two-level network on 8×8 inputs; the loss is cross-entropy plus depth
/// MSE, checked on a random sample of parameter coordinates.
pub fn network_case(rng: &mut ShiftRng) -> Result<f64> {
    Ok(network_report(rng)?.max_rel_error)
}

/// [`network_case`] with probe counts. The network is piecewise linear in
/// each parameter, so probes whose step straddles a kink are skipped.
pub fn network_report(rng: &mut ShiftRng) -> Result<GradCheckReport> {
    let config = UNetConfig {
        levels: 2,
        base_channels: 4,
        input_size: 8,
        num_classes: 10,
        cls_hidden: 8,
        upsample_conv: rng.below(2) == 0,
    };
    let net = MultitaskNet::build_small(config, rng.next_u64())?;
    let b = 1 + rng.below(2);
    let x = random(rng, &[b, 1, 8, 8]);
    let target = random(rng, &[b, 1, 8, 8]);
    let labels: Vec<usize> = (0..b).map(|_| rng.below(10)).collect();
    let weights = ClassWeights::uniform(10);
    let params = net.constants();
    let probes: Vec<Probe> = (0..NETWORK_PROBES)
        .map(|_| {
            let input = rng.below(params.len());
            Probe {
                input,
                index: rng.below(params[input].len()),
            }
        })
        .collect();
    grad_check_piecewise(
        |tape, p| {
            let out = net.forward_with(tape, p, &x)?;
            let ce = tape.weighted_cross_entropy(&out.logits, &labels, &weights)?;
            let mse = tape.mse_loss(&out.depth, &target)?;
            tape.add(&ce, &mse)
        },
        &params,
        Some(&probes),
        STEP,
        TOLERANCE,
    )
}

/// Doubling with a backward that forgets the factor of two. Must fail.
pub fn broken_case(rng: &mut ShiftRng) -> Result<f64> {
    struct HalfBackward;
    impl Backward for HalfBackward {
        fn name(&self) -> &'static str {
            "broken_double"
        }
        fn backward(&self, g: &[f64], _needed: &[bool]) -> Vec<Option<Vec<f64>>> {
            vec![Some(g.to_vec())]
        }
    }
    let shape = dims(rng, 2, 4);
    let x = random(rng, &shape);
    check_reduced(rng, vec![x], &shape, |t, x| {
        let data = x[0].data().iter().map(|v| 2.0 * v).collect();
        Ok(t.record(&[&x[0]], x[0].shape().to_vec(), data, || HalfBackward))
    })
}

/// Run `cases` random cases of one check, seeded by `(seed, name)`.
pub fn run_check(name: &'static str, case: CaseFn, cases: usize, seed: u64) -> Result<OpCheck> {
    let mut rng = ShiftRng::from_stream(seed, &[name_tag(name)]);
    let mut check = OpCheck {
        name,
        cases,
        max_rel_error: 0.0,
        worst_case: 0,
        skipped_probes: 0,
        checked_probes: 0,
    };
    for i in 0..cases {
        let e = case(&mut rng)?;
        if e.is_nan() || e > check.max_rel_error {
            check.max_rel_error = e;
            check.worst_case = i;
        }
    }
    Ok(check)
}

/// The network check, `cases` random networks seeded like [`run_check`].
pub fn run_network_check(cases: usize, seed: u64) -> Result<OpCheck> {
    let name = "multitask_network";
    let mut rng = ShiftRng::from_stream(seed, &[name_tag(name)]);
    let mut check = OpCheck {
        name,
        cases,
        max_rel_error: 0.0,
        worst_case: 0,
        skipped_probes: 0,
        checked_probes: 0,
    };
    for i in 0..cases {
        let r = network_report(&mut rng)?;
        if r.max_rel_error.is_nan() || r.max_rel_error > check.max_rel_error {
            check.max_rel_error = r.max_rel_error;
            check.worst_case = i;
        }
        check.skipped_probes += r.skipped;
        check.checked_probes += r.checked;
    }
    Ok(check)
}

fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64))
}

/// Every registered operation plus the network.
pub fn run_all(cases: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut out: Vec<OpCheck> = registry()
        .into_iter()
        .map(|(name, case)| run_check(name, case, cases, seed))
        .collect::<Result<_>>()?;
    out.push(run_network_check(cases, seed)?);
    Ok(out)
}
