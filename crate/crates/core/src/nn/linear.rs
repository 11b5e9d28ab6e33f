use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Backward, Tape, Tensor};

/// Fully connected layer weights: `weight: [out, in]`, `bias: [out]`.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

struct LinearBackward {
    x: Arc<Vec<f64>>,
    w: Arc<Vec<f64>>,
    batch: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Backward for LinearBackward {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, g: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, i, o) = (self.batch, self.fan_in, self.fan_out);
        let gx = needed[0].then(|| {
            let mut gx = vec![0.0; n * i];
            for b in 0..n {
                let dst = &mut gx[b * i..(b + 1) * i];
                for k in 0..o {
                    axpy(dst, g[b * o + k], &self.w[k * i..(k + 1) * i]);
                }
            }
            gx
        });
        let gw = needed[1].then(|| {
            let mut gw = vec![0.0; o * i];
            for b in 0..n {
                let xb = &self.x[b * i..(b + 1) * i];
                for k in 0..o {
                    axpy(&mut gw[k * i..(k + 1) * i], g[b * o + k], xb);
                }
            }
            gw
        });
        let gb = needed[2].then(|| {
            let mut gb = vec![0.0; o];
            for b in 0..n {
                gb.iter_mut().zip(&g[b * o..(b + 1) * o]).for_each(|(a, v)| *a += v);
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

impl Tape {
    /// `y = x·Wᵀ + b` for `x: [B, in]`.
    pub fn linear(&self, x: &Tensor, p: &LinearParams) -> Result<Tensor> {
        let (ws, bs) = (p.weight.shape(), p.bias.shape());
        if x.rank() != 2 || ws.len() != 2 || x.shape()[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: x.shape().to_vec(),
                right: ws.to_vec(),
            });
        }
        if bs != [ws[0]] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                left: bs.to_vec(),
                right: vec![ws[0]],
            });
        }
        let (n, i, o) = (x.shape()[0], ws[1], ws[0]);
        let mut y = Vec::with_capacity(n * o);
        for b in 0..n {
            let xb = &x.data()[b * i..(b + 1) * i];
            for k in 0..o {
                y.push(dot(xb, &p.weight.data()[k * i..(k + 1) * i]) + p.bias.data()[k]);
            }
        }
        Ok(self.record(&[x, &p.weight, &p.bias], vec![n, o], y, || LinearBackward {
            x: x.shared_data(),
            w: p.weight.shared_data(),
            batch: n,
            fan_in: i,
            fan_out: o,
        }))
    }
}
