//! 2-D cross-correlation with zero padding.
//!
//! The input is zero-padded first. Every output element is accumulated from
//! zero over `(in_channel, ky, kx)` in that order, padded taps included, and
//! the bias is added last. For stride 1 the padded input is stored channel
//! major, so every tap reads one contiguous run covering the whole batch and
//! a block of outputs can stay in registers across all taps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{dot, Backward, Tape, Tensor};

/// Weights of one convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2dParams {
    /// `[out_ch, in_ch, kh, kw]`
    pub weight: Tensor,
    /// `[out_ch]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: &[usize], wt: &[usize], bias: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || wt.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: x.to_vec(),
                right: wt.to_vec(),
            });
        }
        if x[1] != wt[1] {
            return Err(Error::invalid(
                "conv2d",
                format!("input has {} channels, kernel expects {}", x[1], wt[1]),
            ));
        }
        if bias != [wt[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: bias.to_vec(),
                right: vec![wt[0]],
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (h, w, kh, kw) = (x[2], x[3], wt[2], wt[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        Ok(Geometry {
            batch: x[0],
            cin: x[1],
            h,
            w,
            cout: wt[0],
            kh,
            kw,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.cin + ci) * self.kh + ky) * self.kw + kx
    }

    fn padded(&self) -> (usize, usize) {
        (self.h + 2 * self.pad, self.w + 2 * self.pad)
    }

    /// Elements in one channel of the padded, channel-major input.
    fn stack(&self) -> usize {
        let (hp, wp) = self.padded();
        self.batch * hp * wp
    }

    /// Length of the contiguous run covering every output position when the
    /// outputs of all batch items are laid out at the padded plane geometry
    /// (stride 1 only). Output `(b, oy, ox)` sits at `(b·hp + oy)·wp + ox`.
    fn span(&self) -> usize {
        let (hp, wp) = self.padded();
        ((self.batch - 1) * hp + self.oh - 1) * wp + self.ow
    }

    /// Largest offset of a kernel tap from the window origin.
    fn reach(&self) -> usize {
        let (_, wp) = self.padded();
        (self.kh - 1) * wp + self.kw - 1
    }
}

/// Zero-padded copy of a `[B, C, H, W]` buffer in `[C, B, H+2p, W+2p]` order.
fn pad_channel_major(x: &[f64], g: &Geometry) -> Vec<f64> {
    let (hp, wp) = g.padded();
    let mut out = vec![0.0; g.cin * g.stack() + BLOCK];
    for b in 0..g.batch {
        for c in 0..g.cin {
            let src = &x[(b * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let dst = &mut out[(c * g.batch + b) * hp * wp..][..hp * wp];
            for (y, row) in src.chunks_exact(g.w).enumerate() {
                dst[(y + g.pad) * wp + g.pad..][..g.w].copy_from_slice(row);
            }
        }
    }
    out
}

const BLOCK: usize = 32;

/// `out[j] = Σ_t w[t] · src[off[t] + j]`, accumulated from zero in tap order.
/// A block of outputs stays in registers across all taps. `src` must extend
/// at least `BLOCK` elements past the furthest element read.
fn fused_taps(out: &mut [f64], src: &[f64], off: &[usize], w: &[f64]) {
    for (k, chunk) in out.chunks_mut(BLOCK).enumerate() {
        let start = k * BLOCK;
        let mut a = [0.0f64; BLOCK];
        for (&o, &wv) in off.iter().zip(w) {
            let s: &[f64; BLOCK] = src[o + start..][..BLOCK].try_into().unwrap();
            for l in 0..BLOCK {
                a[l] += wv * s[l];
            }
        }
        let n = chunk.len();
        chunk.copy_from_slice(&a[..n]);
    }
}

/// `out[t] = dot(a, src[off[t]..][..a.len()])` for `K` taps in one pass,
/// bit-identical to calling `dot` per tap.
fn fused_dots<const K: usize>(a: &[f64], src: &[f64], off: &[usize; K], out: &mut [f64; K]) {
    let n = a.len();
    let full = n - n % 8;
    let mut acc = [[0.0f64; 8]; K];
    for j in (0..full).step_by(8) {
        let av: &[f64; 8] = a[j..j + 8].try_into().unwrap();
        for t in 0..K {
            let s: &[f64; 8] = src[off[t] + j..][..8].try_into().unwrap();
            for l in 0..8 {
                acc[t][l] += av[l] * s[l];
            }
        }
    }
    for t in 0..K {
        let mut tail = 0.0;
        for j in full..n {
            tail += a[j] * src[off[t] + j];
        }
        let c = &acc[t];
        out[t] = ((c[0] + c[4]) + (c[1] + c[5])) + ((c[2] + c[6]) + (c[3] + c[7])) + tail;
    }
}

fn forward(g: &Geometry, x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
    let (hp, wp) = g.padded();
    let xp = pad_channel_major(x, g);
    let stack = g.stack();
    let plane_out = g.oh * g.ow;
    let mut out = vec![0.0; g.batch * g.cout * plane_out];
    let taps = g.cin * g.kh * g.kw;
    if g.stride == 1 {
        let mut acc = vec![0.0; g.span()];
        let mut off = Vec::with_capacity(taps);
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    off.push(ci * stack + ky * wp + kx);
                }
            }
        }
        for co in 0..g.cout {
            fused_taps(&mut acc, &xp, &off, &wt[co * taps..][..taps]);
            let bv = bias[co];
            for b in 0..g.batch {
                let plane = &mut out[(b * g.cout + co) * plane_out..][..plane_out];
                for (oy, row) in plane.chunks_exact_mut(g.ow).enumerate() {
                    for (o, a) in row.iter_mut().zip(&acc[(b * hp + oy) * wp..]) {
                        *o = a + bv;
                    }
                }
            }
        }
    } else {
        for b in 0..g.batch {
            for co in 0..g.cout {
                let plane = &mut out[(b * g.cout + co) * plane_out..][..plane_out];
                for ci in 0..g.cin {
                    let inp = &xp[(ci * g.batch + b) * hp * wp..][..hp * wp];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let wv = wt[g.weight_index(co, ci, ky, kx)];
                            for oy in 0..g.oh {
                                let row = &inp[(oy * g.stride + ky) * wp..][..wp];
                                for (ox, o) in plane[oy * g.ow..][..g.ow].iter_mut().enumerate() {
                                    *o += wv * row[ox * g.stride + kx];
                                }
                            }
                        }
                    }
                }
                let bv = bias[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

struct Conv2dBackward {
    geom: Geometry,
    /// Zero-padded input, channel-major.
    xp: Arc<Vec<f64>>,
    w: Arc<Vec<f64>>,
}

impl Conv2dBackward {
    /// Upstream gradient in the padded output layout, one region of
    /// `reach + stack` per output channel with the gradient starting at
    /// `reach`, zeros everywhere else.
    fn spread(&self, gy: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        let (hp, wp) = g.padded();
        let lead = g.reach();
        let region = lead + g.stack();
        let plane_out = g.oh * g.ow;
        let mut buf = vec![0.0; g.cout * region + BLOCK];
        for co in 0..g.cout {
            for b in 0..g.batch {
                let src = &gy[(b * g.cout + co) * plane_out..][..plane_out];
                for (oy, row) in src.chunks_exact(g.ow).enumerate() {
                    buf[co * region + lead + (b * hp + oy) * wp..][..g.ow].copy_from_slice(row);
                }
            }
        }
        buf
    }

    fn grad_input(&self, gy: &[f64], spread: Option<&[f64]>) -> Vec<f64> {
        let g = &self.geom;
        let (hp, wp) = g.padded();
        let stack = g.stack();
        let plane_out = g.oh * g.ow;
        let mut gxp = vec![0.0; g.cin * stack];
        if let Some(ge) = spread {
            let lead = g.reach();
            let region = lead + stack;
            let taps = g.cout * g.kh * g.kw;
            let mut off = Vec::with_capacity(taps);
            let mut w = Vec::with_capacity(taps);
            for ci in 0..g.cin {
                off.clear();
                w.clear();
                for co in 0..g.cout {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            off.push(co * region + lead - (ky * wp + kx));
                            w.push(self.w[g.weight_index(co, ci, ky, kx)]);
                        }
                    }
                }
                fused_taps(&mut gxp[ci * stack..][..stack], ge, &off, &w);
            }
        } else {
            for b in 0..g.batch {
                for co in 0..g.cout {
                    let gplane = &gy[(b * g.cout + co) * plane_out..][..plane_out];
                    for ci in 0..g.cin {
                        let dx = &mut gxp[(ci * g.batch + b) * hp * wp..][..hp * wp];
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let wv = self.w[g.weight_index(co, ci, ky, kx)];
                                for oy in 0..g.oh {
                                    for ox in 0..g.ow {
                                        dx[(oy * g.stride + ky) * wp + ox * g.stride + kx] +=
                                            wv * gplane[oy * g.ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut gx = Vec::with_capacity(g.batch * g.cin * g.h * g.w);
        for b in 0..g.batch {
            for ci in 0..g.cin {
                let plane = &gxp[(ci * g.batch + b) * hp * wp..][..hp * wp];
                for y in 0..g.h {
                    gx.extend_from_slice(&plane[(y + g.pad) * wp + g.pad..][..g.w]);
                }
            }
        }
        gx
    }

    fn grad_weight(&self, gy: &[f64], spread: Option<&[f64]>) -> Vec<f64> {
        let g = &self.geom;
        let (hp, wp) = g.padded();
        let stack = g.stack();
        let plane_out = g.oh * g.ow;
        let mut gw = vec![0.0; self.w.len()];
        let kk = g.kh * g.kw;
        if let Some(ge) = spread {
            let lead = g.reach();
            let span = g.span();
            let mut off = Vec::with_capacity(kk);
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    off.push(ky * wp + kx);
                }
            }
            for co in 0..g.cout {
                let gco = &ge[co * (lead + stack) + lead..][..span];
                for ci in 0..g.cin {
                    let inp = &self.xp[ci * stack..][..stack];
                    let dst = &mut gw[(co * g.cin + ci) * kk..][..kk];
                    if kk == 9 {
                        let off9: &[usize; 9] = off.as_slice().try_into().unwrap();
                        let out9: &mut [f64; 9] = dst.try_into().unwrap();
                        fused_dots(gco, inp, off9, out9);
                    } else {
                        for (d, &o) in dst.iter_mut().zip(&off) {
                            *d = dot(gco, &inp[o..][..span]);
                        }
                    }
                }
            }
        } else {
            for b in 0..g.batch {
                for co in 0..g.cout {
                    let gplane = &gy[(b * g.cout + co) * plane_out..][..plane_out];
                    for ci in 0..g.cin {
                        let inp = &self.xp[(ci * g.batch + b) * hp * wp..][..hp * wp];
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let mut acc = 0.0;
                                for oy in 0..g.oh {
                                    for ox in 0..g.ow {
                                        acc += gplane[oy * g.ow + ox]
                                            * inp[(oy * g.stride + ky) * wp + ox * g.stride + kx];
                                    }
                                }
                                gw[g.weight_index(co, ci, ky, kx)] += acc;
                            }
                        }
                    }
                }
            }
        }
        gw
    }

    fn grad_bias(&self, gy: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        let plane_out = g.oh * g.ow;
        let mut gb = vec![0.0; g.cout];
        for b in 0..g.batch {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += gy[(b * g.cout + co) * plane_out..][..plane_out].iter().sum::<f64>();
            }
        }
        gb
    }
}

impl Backward for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, gy: &[f64], needed: &[bool]) -> Vec<Option<Vec<f64>>> {
        let spread = (self.geom.stride == 1 && (needed[0] || needed[1])).then(|| self.spread(gy));
        vec![
            needed[0].then(|| self.grad_input(gy, spread.as_deref())),
            needed[1].then(|| self.grad_weight(gy, spread.as_deref())),
            needed[2].then(|| self.grad_bias(gy)),
        ]
    }
}

impl Tape {
    /// `x: [B, Cin, H, W]` → `[B, Cout, H', W']` with
    /// `H' = (H + 2·padding − kh) / stride + 1`.
    pub fn conv2d(&self, x: &Tensor, p: &Conv2dParams) -> Result<Tensor> {
        let geom = Geometry::new(x.shape(), p.weight.shape(), p.bias.shape(), p.stride, p.padding)?;
        let out = forward(&geom, x.data(), p.weight.data(), p.bias.data());
        let shape = vec![geom.batch, geom.cout, geom.oh, geom.ow];
        Ok(self.record(&[x, &p.weight, &p.bias], shape, out, || Conv2dBackward {
            geom,
            xp: Arc::new(pad_channel_major(x.data(), &geom)),
            w: p.weight.shared_data(),
        }))
    }
}
