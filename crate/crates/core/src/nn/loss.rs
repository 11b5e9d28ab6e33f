//! Classification and depth-regression losses.

use crate::error::{Error, Result};
use crate::tensor::{check_same_shape, Backward, Tape, Tensor};

/// Per-class multipliers for the cross-entropy loss. All strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("class_weights", "no classes"));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("class_weights", format!("weight {w} is not positive")));
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    /// Inverse-frequency weights `total / (C · max(count, 1))`; balanced
    /// counts give all ones.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if counts.is_empty() || total == 0 {
            return Err(Error::invalid("class_weights", "empty label histogram"));
        }
        let c = counts.len() as f64;
        let weights = counts
            .iter()
            .map(|&n| total as f64 / (c * n.max(1) as f64))
            .collect();
        Ok(ClassWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Row-wise softmax of a `[B, C]` buffer, max-subtracted.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|z| (z - m).exp()));
        let s: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|p| *p /= s);
    }
    out
}

/// Per-row `-log softmax(z)[label]`.
pub fn nll_rows(logits: &[f64], classes: usize, labels: &[usize]) -> Vec<f64> {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|z| (z - m).exp()).sum();
            m + s.ln() - row[y]
        })
        .collect()
}

struct CrossEntropyBackward {
    probs: Vec<f64>,
    labels: Vec<usize>,
    scale: Vec<f64>,
    classes: usize,
}

impl Backward for CrossEntropyBackward {
    fn name(&self) -> &'static str {
        "weighted_cross_entropy"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let c = self.classes;
        let mut gx = self.probs.clone();
        for (b, row) in gx.chunks_exact_mut(c).enumerate() {
            row[self.labels[b]] -= 1.0;
            let s = g[0] * self.scale[b];
            row.iter_mut().for_each(|v| *v *= s);
        }
        vec![Some(gx)]
    }
}

struct MseBackward {
    diff: Vec<f64>,
    /// Per-element multiplier `2·mask/n`.
    factor: Vec<f64>,
}

impl Backward for MseBackward {
    fn name(&self) -> &'static str {
        "mse_loss"
    }

    fn backward(&self, g: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>> {
        let gp: Vec<f64> = self
            .diff
            .iter()
            .zip(&self.factor)
            .map(|(d, f)| g[0] * f * d)
            .collect();
        let gt = needed[1].then(|| gp.iter().map(|v| -v).collect());
        vec![needed[0].then_some(gp), gt]
    }
}

impl Tape {
    /// Batch mean of `w[y] · (−log softmax(logits)[y])`.
    pub fn weighted_cross_entropy(
        &self,
        logits: &Tensor,
        labels: &[usize],
        weights: &ClassWeights,
    ) -> Result<Tensor> {
        let (n, c) = match *logits.shape() {
            [n, c] => (n, c),
            _ => {
                return Err(Error::invalid(
                    "weighted_cross_entropy",
                    format!("logits must be [B, C], got {:?}", logits.shape()),
                ))
            }
        };
        if labels.len() != n {
            return Err(Error::invalid(
                "weighted_cross_entropy",
                format!("{} labels for batch of {n}", labels.len()),
            ));
        }
        if weights.len() != c {
            return Err(Error::invalid(
                "weighted_cross_entropy",
                format!("{} class weights for {c} classes", weights.len()),
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(
                "weighted_cross_entropy",
                format!("label {y} out of range 0..{c}"),
            ));
        }
        let nll = nll_rows(logits.data(), c, labels);
        let scale: Vec<f64> = labels.iter().map(|&y| weights.as_slice()[y] / n as f64).collect();
        let loss = nll.iter().zip(&scale).map(|(l, s)| l * s).sum();
        Ok(self.record(&[logits], vec![1], vec![loss], || CrossEntropyBackward {
            probs: softmax_rows(logits.data(), c),
            labels: labels.to_vec(),
            scale,
            classes: c,
        }))
    }

    /// Mean squared error over every element.
    pub fn mse_loss(&self, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        check_same_shape("mse_loss", pred, target)?;
        let n = pred.len() as f64;
        self.mse_impl(pred, target, vec![2.0 / n; pred.len()], n)
    }

    /// Squared error averaged over the elements where `mask` is nonzero.
    pub fn masked_mse_loss(&self, pred: &Tensor, target: &Tensor, mask: &[f64]) -> Result<Tensor> {
        check_same_shape("masked_mse_loss", pred, target)?;
        if mask.len() != pred.len() {
            return Err(Error::invalid("masked_mse_loss", "mask length differs from prediction"));
        }
        let n = mask.iter().filter(|&&m| m != 0.0).count().max(1) as f64;
        let factor = mask.iter().map(|&m| if m != 0.0 { 2.0 / n } else { 0.0 }).collect();
        self.mse_impl(pred, target, factor, n)
    }

    fn mse_impl(&self, pred: &Tensor, target: &Tensor, factor: Vec<f64>, n: f64) -> Result<Tensor> {
        let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
        let loss = diff
            .iter()
            .zip(&factor)
            .filter(|(_, f)| **f != 0.0)
            .map(|(d, _)| d * d)
            .sum::<f64>()
            / n;
        Ok(self.record(&[pred, target], vec![1], vec![loss], || MseBackward { diff, factor }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let tape = Tape::new();
        let logits = Tensor::full(&[1, 10], 0.3);
        let l = tape
            .weighted_cross_entropy(&logits, &[7], &ClassWeights::uniform(10))
            .unwrap();
        assert!((l.item() - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_decreases_with_margin() {
        let tape = Tape::new();
        let w = ClassWeights::uniform(3);
        let losses: Vec<f64> = [1.0, 5.0, 10.0]
            .iter()
            .map(|&m| {
                let logits = Tensor::new(vec![1, 3], vec![0.0, m, 0.0]).unwrap();
                tape.weighted_cross_entropy(&logits, &[1], &w).unwrap().item()
            })
            .collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2] && losses[2] > 0.0);
        assert!(losses[2] < 1e-4);
    }

    #[test]
    fn weighted_batch_matches_per_sample_sum() {
        let tape = Tape::new();
        let logits = Tensor::new(vec![2, 2], vec![0.2, -0.4, 1.5, 0.1]).unwrap();
        let w = ClassWeights::new(vec![2.0, 1.0]).unwrap();
        let l = tape.weighted_cross_entropy(&logits, &[0, 1], &w).unwrap().item();
        let nll = |z: [f64; 2], y: usize| -> f64 {
            let lse = (z[0].exp() + z[1].exp()).ln();
            lse - z[y]
        };
        let oracle = (2.0 * nll([0.2, -0.4], 0) + 1.0 * nll([1.5, 0.1], 1)) / 2.0;
        assert!((l - oracle).abs() < 1e-14, "{l} vs {oracle}");
    }

    #[test]
    fn label_out_of_range() {
        let tape = Tape::new();
        let r = tape.weighted_cross_entropy(&Tensor::zeros(&[1, 3]), &[3], &ClassWeights::uniform(3));
        assert!(r.is_err());
    }

    #[test]
    fn mse_examples() {
        let tape = Tape::new();
        let t = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.5, 0.9, 0.0]).unwrap();
        assert_eq!(tape.mse_loss(&t, &t).unwrap().item(), 0.0);
        let shifted = Tensor::new(vec![1, 1, 2, 2], t.data().iter().map(|v| v + 1.0).collect()).unwrap();
        assert!((tape.mse_loss(&shifted, &t).unwrap().item() - 1.0).abs() < 1e-15);
        assert!(tape.mse_loss(&t, &Tensor::zeros(&[1, 1, 2, 1])).is_err());
    }

    #[test]
    fn mse_gradient_closed_form() {
        let tape = Tape::new();
        let t = Tensor::new(vec![2, 1, 1, 2], vec![0.0, 0.5, 1.0, 0.2]).unwrap();
        let p = tape.param(&Tensor::new(vec![2, 1, 1, 2], vec![0.3, 0.1, 0.4, 0.2]).unwrap());
        let g = tape.backward(&tape.mse_loss(&p, &t).unwrap()).unwrap();
        let expected: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| 2.0 * (a - b) / 4.0).collect();
        assert_eq!(g.get(&p).unwrap(), expected.as_slice());
    }

    #[test]
    fn masked_mse_ignores_background() {
        let tape = Tape::new();
        let t = Tensor::from_vec(vec![0.0, 0.7, 0.7, 0.0]);
        let p = Tensor::from_vec(vec![5.0, 0.7, 0.2, -3.0]);
        let l = tape.masked_mse_loss(&p, &t, &[0.0, 1.0, 1.0, 0.0]).unwrap().item();
        assert!((l - 0.125).abs() < 1e-15);
    }

    #[test]
    fn class_weight_formula() {
        let w = ClassWeights::from_counts(&[3, 1]).unwrap();
        assert!((w.as_slice()[0] - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(w.as_slice()[1], 2.0);
        assert_eq!(ClassWeights::from_counts(&[7; 10]).unwrap(), ClassWeights::uniform(10));
        // zero count treated as one
        assert_eq!(ClassWeights::from_counts(&[2, 0]).unwrap().as_slice(), &[0.5, 1.0]);
        assert!(ClassWeights::from_counts(&[]).is_err());
        assert!(ClassWeights::from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1.0, 2.0, 3.0, -50.0, 0.0, 50.0], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
