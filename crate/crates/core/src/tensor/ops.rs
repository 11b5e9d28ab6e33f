//! Elementwise, reduction and matrix operations.

use std::sync::Arc;

use super::{check_same_shape, Backward, Tape, Tensor};
use crate::error::{Error, Result};

/// Dot product with eight independent partial sums. The summation order is
/// fixed by the slice length alone, so results are reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Binary kinds accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

fn broadcast_check(op: &'static str, a: &Tensor, b: &Tensor) -> Result<bool> {
    if b.shape() == a.shape() {
        Ok(false)
    } else if b.len() == 1 {
        Ok(true)
    } else {
        check_same_shape(op, a, b).map(|_| false)
    }
}

struct AddBackward {
    b_scalar: bool,
    b_sign: f64,
}

impl Backward for AddBackward {
    fn name(&self) -> &'static str {
        if self.b_sign > 0.0 {
            "add"
        } else {
            "sub"
        }
    }

    fn backward(&self, g: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>> {
        let ga = needed[0].then(|| g.to_vec());
        let gb = needed[1].then(|| {
            if self.b_scalar {
                vec![self.b_sign * g.iter().sum::<f64>()]
            } else if self.b_sign > 0.0 {
                g.to_vec()
            } else {
                g.iter().map(|v| -v).collect()
            }
        });
        vec![ga, gb]
    }
}

struct MulBackward {
    a: Arc<Vec<f64>>,
    b: Arc<Vec<f64>>,
    b_scalar: bool,
}

impl Backward for MulBackward {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, g: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>> {
        let ga = needed[0].then(|| {
            if self.b_scalar {
                g.iter().map(|v| v * self.b[0]).collect()
            } else {
                g.iter().zip(self.b.iter()).map(|(v, b)| v * b).collect()
            }
        });
        let gb = needed[1].then(|| {
            let prod = g.iter().zip(self.a.iter()).map(|(v, a)| v * a);
            if self.b_scalar {
                vec![prod.sum()]
            } else {
                prod.collect()
            }
        });
        vec![ga, gb]
    }
}

struct ReluBackward {
    x: Arc<Vec<f64>>,
}

impl Backward for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let out = g
            .iter()
            .zip(self.x.iter())
            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
            .collect();
        vec![Some(out)]
    }
}

struct ScaleBackward(f64);

impl Backward for ScaleBackward {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

struct SumBackward {
    len: usize,
    factor: f64,
    name: &'static str,
}

impl Backward for SumBackward {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0] * self.factor; self.len])]
    }
}

struct ReshapeBackward;

impl Backward for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

struct MatMulBackward {
    a: Arc<Vec<f64>>,
    b: Arc<Vec<f64>>,
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMulBackward {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, g: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        // dA = dC · Bᵀ
        let ga = needed[0].then(|| {
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                let gi = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    ga[i * k + p] = dot(gi, &self.b[p * n..(p + 1) * n]);
                }
            }
            ga
        });
        // dB = Aᵀ · dC
        let gb = needed[1].then(|| {
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                let gi = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    axpy(&mut gb[p * n..(p + 1) * n], self.a[i * k + p], gi);
                }
            }
            gb
        });
        vec![ga, gb]
    }
}

/// `C = A·B` for row-major `A: [m,k]`, `B: [k,n]`. Each output accumulates
/// its `k` products in increasing order starting from zero.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(ci, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
    c
}

impl Tape {
    /// Binary elementwise operation; `b` may be a single-element tensor,
    /// which is broadcast.
    pub fn elementwise(&self, kind: Elementwise, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        match kind {
            Elementwise::Add => self.add(a, b),
            Elementwise::Sub => self.sub(a, b),
            Elementwise::Mul => self.mul(a, b),
        }
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.add_signed("add", a, b, 1.0)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.add_signed("sub", a, b, -1.0)
    }

    fn add_signed(&self, op: &'static str, a: &Tensor, b: &Tensor, sign: f64) -> Result<Tensor> {
        let b_scalar = broadcast_check(op, a, b)?;
        let data: Vec<f64> = if b_scalar {
            let s = b.data()[0];
            if sign > 0.0 {
                a.data().iter().map(|x| x + s).collect()
            } else {
                a.data().iter().map(|x| x - s).collect()
            }
        } else if sign > 0.0 {
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()
        } else {
            a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect()
        };
        Ok(self.record(&[a, b], a.shape().to_vec(), data, || AddBackward {
            b_scalar,
            b_sign: sign,
        }))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let b_scalar = broadcast_check("mul", a, b)?;
        let data: Vec<f64> = if b_scalar {
            let s = b.data()[0];
            a.data().iter().map(|x| x * s).collect()
        } else {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()
        };
        Ok(self.record(&[a, b], a.shape().to_vec(), data, || MulBackward {
            a: a.shared_data(),
            b: b.shared_data(),
            b_scalar,
        }))
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        let data = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.record(&[a], a.shape().to_vec(), data, || ReluBackward { x: a.shared_data() })
    }

    /// Multiply by a constant.
    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let data = a.data().iter().map(|x| x * c).collect();
        self.record(&[a], a.shape().to_vec(), data, || ScaleBackward(c))
    }

    /// Sum of all elements in index order, as a `[1]` tensor.
    pub fn sum(&self, a: &Tensor) -> Tensor {
        let s = a.data().iter().sum();
        self.record(&[a], vec![1], vec![s], || SumBackward {
            len: a.len(),
            factor: 1.0,
            name: "sum",
        })
    }

    pub fn mean(&self, a: &Tensor) -> Tensor {
        let n = a.len() as f64;
        let s = a.data().iter().sum::<f64>() / n;
        self.record(&[a], vec![1], vec![s], || SumBackward {
            len: a.len(),
            factor: 1.0 / n,
            name: "mean",
        })
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let viewed = a.reshaped(shape)?;
        Ok(self.record(&[a], shape.to_vec(), viewed.into_vec(), || ReshapeBackward))
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let c = matmul_kernel(a.data(), b.data(), m, k, n);
        Ok(self.record(&[a, b], vec![m, n], c, || MatMulBackward {
            a: a.shared_data(),
            b: b.shared_data(),
            m,
            k,
            n,
        }))
    }
}
