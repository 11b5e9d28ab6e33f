//! Pooling, upsampling and channel plumbing for `[B, C, H, W]` tensors.

use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor};

fn dims4(op: &'static str, x: &Tensor) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::invalid(op, format!("expected [B,C,H,W], got {:?}", x.shape()))),
    }
}

/// Output of [`Tape::max_pool2d`].
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    /// Flat input index chosen for every output element.
    pub argmax: Vec<usize>,
}

struct MaxPoolBackward {
    argmax: Vec<usize>,
    input_len: usize,
}

impl Backward for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; self.input_len];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            gx[src] += gv;
        }
        vec![Some(gx)]
    }
}

struct UpsampleBackward {
    dims: [usize; 4],
    factor: usize,
}

impl Backward for UpsampleBackward {
    fn name(&self) -> &'static str {
        "upsample_nn"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let [b, c, h, w] = self.dims;
        let f = self.factor;
        let ow = w * f;
        let mut gx = vec![0.0; b * c * h * w];
        for p in 0..b * c {
            let src = &mut gx[p * h * w..][..h * w];
            let up = &g[p * h * w * f * f..][..h * w * f * f];
            for y in 0..h {
                for dy in 0..f {
                    let row = &up[(y * f + dy) * ow..][..ow];
                    for (x, acc) in src[y * w..(y + 1) * w].iter_mut().enumerate() {
                        for dx in 0..f {
                            *acc += row[x * f + dx];
                        }
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

struct ConcatBackward {
    batch: usize,
    a_block: usize,
    b_block: usize,
}

impl Backward for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, g: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>> {
        let block = self.a_block + self.b_block;
        let ga = needed[0].then(|| {
            (0..self.batch)
                .flat_map(|b| g[b * block..][..self.a_block].iter().copied())
                .collect()
        });
        let gb = needed[1].then(|| {
            (0..self.batch)
                .flat_map(|b| g[b * block + self.a_block..][..self.b_block].iter().copied())
                .collect()
        });
        vec![ga, gb]
    }
}

struct SliceBackward {
    batch: usize,
    in_block: usize,
    offset: usize,
    out_block: usize,
}

impl Backward for SliceBackward {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; self.batch * self.in_block];
        for b in 0..self.batch {
            gx[b * self.in_block + self.offset..][..self.out_block]
                .copy_from_slice(&g[b * self.out_block..][..self.out_block]);
        }
        vec![Some(gx)]
    }
}

struct AvgPoolBackward {
    planes: usize,
    area: usize,
}

impl Backward for AvgPoolBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let inv = 1.0 / self.area as f64;
        let mut gx = Vec::with_capacity(self.planes * self.area);
        for &gv in &g[..self.planes] {
            gx.extend(std::iter::repeat_n(gv * inv, self.area));
        }
        vec![Some(gx)]
    }
}

impl Tape {
    /// Non-overlapping `k`×`k` max pooling. Ties go to the first element of
    /// the window in row-major order.
    pub fn max_pool2d(&self, x: &Tensor, k: usize) -> Result<Pooled> {
        let [b, c, h, w] = dims4("max_pool2d", x)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::invalid(
                "max_pool2d",
                format!("spatial size {h}x{w} not divisible by window {k}"),
            ));
        }
        let (oh, ow) = (h / k, w / k);
        let data = x.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for p in 0..b * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = base + (oy * k + dy) * w + ox * k + dx;
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let saved = argmax.clone();
        let output = self.record(&[x], vec![b, c, oh, ow], out, || MaxPoolBackward {
            argmax: saved,
            input_len: x.len(),
        });
        Ok(Pooled { output, argmax })
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor`×`factor` block.
    pub fn upsample_nn(&self, x: &Tensor, factor: usize) -> Result<Tensor> {
        let dims = dims4("upsample_nn", x)?;
        if factor == 0 {
            return Err(Error::invalid("upsample_nn", "factor must be positive"));
        }
        let [b, c, h, w] = dims;
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for row in x.data().chunks_exact(w) {
            let start = out.len();
            for &v in row {
                out.extend(std::iter::repeat_n(v, factor));
            }
            for _ in 1..factor {
                out.extend_from_within(start..start + ow);
            }
        }
        debug_assert_eq!(out.len(), b * c * oh * ow);
        Ok(self.record(&[x], vec![b, c, oh, ow], out, || UpsampleBackward { dims, factor }))
    }

    /// Stack `a` then `b` along the channel axis.
    pub fn concat_channels(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [ba, ca, ha, wa] = dims4("concat_channels", a)?;
        let [bb, cb, hb, wb] = dims4("concat_channels", b)?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let a_block = ca * ha * wa;
        let b_block = cb * hb * wb;
        let mut out = Vec::with_capacity(a.len() + b.len());
        for i in 0..ba {
            out.extend_from_slice(&a.data()[i * a_block..][..a_block]);
            out.extend_from_slice(&b.data()[i * b_block..][..b_block]);
        }
        Ok(self.record(&[a, b], vec![ba, ca + cb, ha, wa], out, || ConcatBackward {
            batch: ba,
            a_block,
            b_block,
        }))
    }

    /// Channels `start..start + len` of `x`.
    pub fn slice_channels(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let [b, c, h, w] = dims4("slice_channels", x)?;
        if len == 0 || start + len > c {
            return Err(Error::invalid(
                "slice_channels",
                format!("channels {start}..{} out of range for {c}", start + len),
            ));
        }
        let in_block = c * h * w;
        let out_block = len * h * w;
        let offset = start * h * w;
        let mut out = Vec::with_capacity(b * out_block);
        for i in 0..b {
            out.extend_from_slice(&x.data()[i * in_block + offset..][..out_block]);
        }
        Ok(self.record(&[x], vec![b, len, h, w], out, || SliceBackward {
            batch: b,
            in_block,
            offset,
            out_block,
        }))
    }

    /// Mean over the spatial axes: `[B, C, H, W]` → `[B, C]`.
    pub fn global_avg_pool(&self, x: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = dims4("global_avg_pool", x)?;
        let area = h * w;
        let out = x
            .data()
            .chunks_exact(area)
            .map(|plane| plane.iter().sum::<f64>() / area as f64)
            .collect();
        Ok(self.record(&[x], vec![b, c], out, || AvgPoolBackward {
            planes: b * c,
            area,
        }))
    }
}
