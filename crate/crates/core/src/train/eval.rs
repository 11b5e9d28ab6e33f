use crate::data::{make_batch, RgbdSample};
use crate::error::{Error, Result};
use crate::model::MultitaskNet;
use crate::nn::{nll_rows, ClassWeights};

/// Samples per untracked forward pass during evaluation. Results do not
/// depend on it: every sample is computed independently and reductions run
/// in sample order.
const EVAL_BATCH: usize = 8;

/// Which pixels the depth loss averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthLoss {
    /// Every pixel, background included.
    #[default]
    Full,
    /// Only pixels whose target depth is nonzero.
    Foreground,
}

impl DepthLoss {
    pub fn name(self) -> &'static str {
        match self {
            DepthLoss::Full => "full",
            DepthLoss::Foreground => "foreground",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Root mean squared depth error over all pixels.
    pub depth_rmse: f64,
    /// Mean of `w[y] · nll`.
    pub cls_loss: f64,
    pub depth_loss: f64,
}

/// Index of the largest logit, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Metrics of `net` over `samples` without touching its parameters.
pub fn evaluate(net: &MultitaskNet, samples: &[RgbdSample], weights: &ClassWeights, depth_loss: DepthLoss) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", "empty cohort"));
    }
    let classes = net.config().num_classes;
    let mut correct = 0usize;
    let mut nll_sum = 0.0;
    let (mut sq_all, mut sq_fg, mut fg) = (0.0, 0.0, 0usize);
    let mut pixels = 0usize;
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&RgbdSample> = chunk.iter().collect();
        let batch = make_batch(&refs)?;
        let out = net.forward(&batch.images)?;
        let nll = nll_rows(out.logits.data(), classes, &batch.labels);
        let plane = out.depth.len() / chunk.len();
        for (b, &y) in batch.labels.iter().enumerate() {
            if argmax(&out.logits.data()[b * classes..(b + 1) * classes]) == y {
                correct += 1;
            }
            nll_sum += weights.as_slice()[y] * nll[b];
            let pred = &out.depth.data()[b * plane..(b + 1) * plane];
            let target = &batch.depths.data()[b * plane..(b + 1) * plane];
            for (p, t) in pred.iter().zip(target) {
                let e = (p - t) * (p - t);
                sq_all += e;
                if *t != 0.0 {
                    sq_fg += e;
                    fg += 1;
                }
            }
            pixels += plane;
        }
    }
    let n = samples.len() as f64;
    let mse = sq_all / pixels as f64;
    let metrics = Metrics {
        accuracy: correct as f64 / n,
        depth_rmse: mse.sqrt(),
        cls_loss: nll_sum / n,
        depth_loss: match depth_loss {
            DepthLoss::Full => mse,
            DepthLoss::Foreground => sq_fg / fg.max(1) as f64,
        },
    };
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UNetConfig;
    use crate::tensor::Tensor;

    fn tiny() -> MultitaskNet {
        let cfg = UNetConfig {
            levels: 2,
            base_channels: 4,
            input_size: 16,
            num_classes: 10,
            cls_hidden: 8,
            upsample_conv: true,
        };
        MultitaskNet::build(cfg, 3).unwrap()
    }

    fn zero(net: &mut MultitaskNet, name: &str) {
        let i = net.find(name).unwrap();
        let shape = net.parameters()[i].value.shape().to_vec();
        net.set_value(i, Tensor::zeros(&shape)).unwrap();
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn zero_depth_output_gives_closed_form_rmse() {
        let mut net = tiny();
        zero(&mut net, "dec.out.weight");
        zero(&mut net, "dec.out.bias");
        // class 9 everywhere: foreground depth 1.0 on a quarter of the pixels
        let samples: Vec<RgbdSample> = (0..5)
            .map(|i| {
                let mask: Vec<f32> = (0..256).map(|p| if p % 4 == 0 { 1.0 } else { 0.0 }).collect();
                RgbdSample {
                    index: i,
                    label: 9,
                    size: 16,
                    image: mask.clone(),
                    depth: mask,
                }
            })
            .collect();
        let m = evaluate(&net, &samples, &ClassWeights::uniform(10), DepthLoss::Full).unwrap();
        assert!((m.depth_rmse - 0.25f64.sqrt()).abs() < 1e-15);
        assert!((m.depth_loss - 0.25).abs() < 1e-15);
        let fg = evaluate(&net, &samples, &ClassWeights::uniform(10), DepthLoss::Foreground).unwrap();
        assert!((fg.depth_loss - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_give_ln10_and_first_class() {
        let mut net = tiny();
        zero(&mut net, "cls.fc2.weight");
        let samples: Vec<RgbdSample> = (0..10)
            .map(|i| RgbdSample {
                index: i,
                label: i as u8,
                size: 16,
                image: vec![0.5; 256],
                depth: vec![0.0; 256],
            })
            .collect();
        let m = evaluate(&net, &samples, &ClassWeights::uniform(10), DepthLoss::Full).unwrap();
        // every prediction is class 0 on ties
        assert_eq!(m.accuracy, 0.1);
        assert!((m.cls_loss - 10f64.ln()).abs() < 1e-12);
        assert!(evaluate(&net, &[], &ClassWeights::uniform(10), DepthLoss::Full).is_err());
    }

    #[test]
    fn batching_does_not_change_results() {
        let net = tiny();
        let samples: Vec<RgbdSample> = (0..11)
            .map(|i| RgbdSample {
                index: i,
                label: (i % 10) as u8,
                size: 16,
                image: (0..256).map(|p| ((p * (i as usize + 3)) % 7) as f32 / 7.0).collect(),
                depth: vec![0.3; 256],
            })
            .collect();
        let w = ClassWeights::uniform(10);
        let all = evaluate(&net, &samples, &w, DepthLoss::Full).unwrap();
        // per-sample evaluation accumulated by hand in the same order
        let mut correct = 0.0;
        for s in &samples {
            let m = evaluate(&net, std::slice::from_ref(s), &w, DepthLoss::Full).unwrap();
            correct += m.accuracy;
        }
        assert_eq!(all.accuracy, correct / 11.0);
    }
}
