//! Shared helpers for the integration tests: direct-loop oracles, small
//! synthetic datasets and access to real MNIST when it is available.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mtlforge::data::{DataSpec, Dataset, Digit, DigitSet, MnistSource, RgbdSample, SnrLabel};
use mtlforge::nn::Conv2dParams;
use mtlforge::rng::ShiftRng;
use mtlforge::tensor::Tensor;

pub fn random_tensor(rng: &mut ShiftRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Cross-correlation by definition: each output sums `(c, ky, kx)` in
/// order from zero, padded taps contributing zero, bias last.
pub fn conv_direct(x: &Tensor, p: &Conv2dParams) -> Vec<f64> {
    let (xs, ws) = (x.shape(), p.weight.shape());
    let (b, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, kh, kw) = (ws[0], ws[2], ws[3]);
    let (s, pad) = (p.stride, p.padding as isize);
    let oh = (h + 2 * p.padding - kh) / s + 1;
    let ow = (w + 2 * p.padding - kw) / s + 1;
    let mut out = Vec::with_capacity(b * co * oh * ow);
    for n in 0..b {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky) as isize - pad;
                                let ix = (ox * s + kx) as isize - pad;
                                let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                                let v = if inside {
                                    x.data()[((n * ci + c) * h + iy as usize) * w + ix as usize]
                                } else {
                                    0.0
                                };
                                acc += p.weight.data()[((o * ci + c) * kh + ky) * kw + kx] * v;
                            }
                        }
                    }
                    out.push(acc + p.bias.data()[o]);
                }
            }
        }
    }
    out
}

/// Max over each `k`×`k` window; the first maximum in row-major order wins.
pub fn maxpool_direct(x: &Tensor, k: usize) -> (Vec<f64>, Vec<usize>) {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (mut out, mut arg) = (Vec::new(), Vec::new());
    for n in 0..b * c {
        for oy in 0..h / k {
            for ox in 0..w / k {
                let mut best: Option<usize> = None;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = n * h * w + (oy * k + dy) * w + ox * k + dx;
                        if best.is_none_or(|j| x.data()[i] > x.data()[j]) {
                            best = Some(i);
                        }
                    }
                }
                let i = best.unwrap();
                out.push(x.data()[i]);
                arg.push(i);
            }
        }
    }
    (out, arg)
}

/// `A·B`, each entry summed over `k` in increasing order from zero.
pub fn matmul_direct(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// The directory holding the four MNIST IDX files, if any.
pub fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("MTLFORGE_DATA").map(PathBuf::from),
        Some(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| d.join("train-images-idx3-ubyte").is_file() && d.join("t10k-labels-idx1-ubyte").is_file())
}

fn synthetic_set(n: usize, seed: u64) -> DigitSet {
    let mut rng = ShiftRng::new(seed);
    let digits = (0..n)
        .map(|i| Digit {
            pixels: (0..784).map(|_| if rng.below(3) == 0 { rng.below(256) as u8 } else { 0 }).collect(),
            label: (i % 10) as u8,
        })
        .collect();
    DigitSet {
        rows: 28,
        cols: 28,
        digits,
    }
}

/// Random-pixel stand-in with the real file sizes' layout (46500 training
/// digits cover the validation range; 1000 test digits).
pub fn synthetic_source() -> MnistSource {
    MnistSource {
        train: synthetic_set(46_500, 1),
        test: synthetic_set(1000, 2),
    }
}

/// Write the synthetic source as IDX files into `dir`.
pub fn write_synthetic_idx(dir: &Path) {
    let src = synthetic_source();
    mtlforge::data::write_idx(&src.train, &dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))
        .unwrap();
    mtlforge::data::write_idx(&src.test, &dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))
        .unwrap();
}

/// `12·(label+1)` lit pixels at random positions: separable by pooled
/// features, so tiny networks learn it in a few epochs.
pub fn counting_sample(index: u32, label: u8, size: usize, rng: &mut ShiftRng) -> RgbdSample {
    let n = size * size;
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let lit = (12 * (label as usize + 1) * n / 256).min(n);
    let mut image = vec![0.0f32; n];
    for &p in &order[..lit] {
        image[p] = 1.0;
    }
    let d = (label as f32 + 1.0) / 10.0;
    let depth = image.iter().map(|&m| m * d).collect();
    RgbdSample {
        index,
        label,
        size,
        image,
        depth,
    }
}

pub fn counting_dataset(n: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = ShiftRng::new(seed);
    let mut cohort = |start: u32, n: usize| -> Vec<RgbdSample> {
        (0..n)
            .map(|i| counting_sample(start + i as u32, (i % 10) as u8, size, &mut rng))
            .collect()
    };
    Dataset {
        spec: DataSpec {
            size,
            train_n: n,
            snr: SnrLabel::Inf,
            seed: 0,
        },
        train: cohort(0, n),
        val: cohort(100_000, 10),
        test: cohort(200_000, 10),
    }
}
