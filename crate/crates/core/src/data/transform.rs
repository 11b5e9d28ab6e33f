//! Per-sample transforms: normalization, nearest-neighbour upsampling,
//! binarization, depth extrusion and noise mixing.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, ShiftRng};
use crate::tensor::Tensor;

/// Binary `[1, S, S]` image from raw `rows × cols` bytes: divide by 255,
/// upsample by nearest neighbour (`src = dst · rows / S`), threshold at 0.5.
pub fn preprocess(raw: &[u8], rows: usize, cols: usize, size: usize) -> Result<Tensor> {
    if raw.len() != rows * cols {
        return Err(Error::invalid(
            "preprocess",
            format!("{} bytes for a {rows}x{cols} image", raw.len()),
        ));
    }
    if size < rows.max(cols) {
        return Err(Error::invalid(
            "preprocess",
            format!("target size {size} smaller than the {rows}x{cols} source"),
        ));
    }
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let sy = y * rows / size;
        for x in 0..size {
            let sx = x * cols / size;
            let v = raw[sy * cols + sx] as f64 / 255.0;
            out.push(if v >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(vec![1, size, size], out)
}

/// Foreground depth of a class: `(label + 1) / 10`.
pub fn depth_value(label: u8) -> f64 {
    (label as f64 + 1.0) / 10.0
}

/// Depth map with `depth_value(label)` on the mask's foreground, 0 elsewhere.
pub fn extrude_depth(mask: &Tensor, label: u8) -> Tensor {
    let d = depth_value(label);
    let data = mask.data().iter().map(|&m| if m != 0.0 { d } else { 0.0 }).collect();
    Tensor::new(mask.shape().to_vec(), data).expect("same shape as mask")
}

/// A signal-to-noise label such as `1:29`, or `Inf` for no noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnrLabel {
    Inf,
    Ratio { signal: u32, noise: u32 },
}

impl SnrLabel {
    /// Mixing weight of the clean image, `S / (S + N)`.
    pub fn alpha(self) -> f64 {
        match self {
            SnrLabel::Inf => 1.0,
            SnrLabel::Ratio { signal, noise } => signal as f64 / (signal as f64 + noise as f64),
        }
    }

    pub fn noise_spec(self, seed: u64) -> NoiseSpec {
        match self {
            SnrLabel::Inf => NoiseSpec {
                signal_parts: f64::INFINITY,
                noise_parts: 0.0,
                seed,
            },
            SnrLabel::Ratio { signal, noise } => NoiseSpec {
                signal_parts: signal as f64,
                noise_parts: noise as f64,
                seed,
            },
        }
    }

    /// File-name friendly form: `inf` or `1-29`.
    pub fn slug(self) -> String {
        match self {
            SnrLabel::Inf => "inf".into(),
            SnrLabel::Ratio { signal, noise } => format!("{signal}-{noise}"),
        }
    }
}

impl fmt::Display for SnrLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnrLabel::Inf => f.write_str("Inf"),
            SnrLabel::Ratio { signal, noise } => write!(f, "{signal}:{noise}"),
        }
    }
}

impl FromStr for SnrLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") {
            return Ok(SnrLabel::Inf);
        }
        let bad = |why: &str| Error::invalid("snr", format!("{s:?}: {why}"));
        let (a, b) = s.split_once(':').ok_or_else(|| bad("expected \"Inf\" or \"S:N\""))?;
        let signal: u32 = a.trim().parse().map_err(|_| bad("signal parts not an integer"))?;
        let noise: u32 = b.trim().parse().map_err(|_| bad("noise parts not an integer"))?;
        if signal == 0 {
            return Err(bad("signal parts must be positive"));
        }
        if noise == 0 {
            return Err(bad("noise parts must be positive (use Inf for no noise)"));
        }
        Ok(SnrLabel::Ratio { signal, noise })
    }
}

/// Parameters of the noise mix `α·image + (1−α)·u`, `u ~ U[0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// May be infinite.
    pub signal_parts: f64,
    pub noise_parts: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn alpha(&self) -> f64 {
        if self.signal_parts.is_infinite() || self.noise_parts == 0.0 {
            1.0
        } else {
            self.signal_parts / (self.signal_parts + self.noise_parts)
        }
    }

    /// The same mix with the noise stream of one sample.
    pub fn for_sample(&self, source: u64, index: u64) -> NoiseSpec {
        NoiseSpec {
            seed: derive_seed(self.seed, &[source, index]),
            ..*self
        }
    }
}

/// Convex mix of `image` with uniform noise drawn in row-major order from
/// `ShiftRng::new(spec.seed)`. At `α = 1` the input is returned unchanged.
pub fn inject_noise(image: &Tensor, spec: &NoiseSpec) -> Tensor {
    let alpha = spec.alpha();
    if alpha == 1.0 {
        return image.detach();
    }
    let mut rng = ShiftRng::new(spec.seed);
    let beta = 1.0 - alpha;
    let data = image
        .data()
        .iter()
        .map(|&x| (alpha * x + beta * rng.next_f64()).clamp(0.0, 1.0))
        .collect();
    Tensor::new(image.shape().to_vec(), data).expect("same shape as image")
}

/// Least-squares estimate of the mixing weight and the resulting
/// signal-to-noise parts ratio `α / (1 − α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrEstimate {
    pub alpha: f64,
    /// `f64::INFINITY` when the noisy image is the clean one.
    pub ratio: f64,
}

/// Regress `noisy` on `clean` (with intercept); the slope estimates `α`.
pub fn measured_snr(clean: &[f64], noisy: &[f64]) -> Result<SnrEstimate> {
    if clean.len() != noisy.len() || clean.is_empty() {
        return Err(Error::invalid(
            "measured_snr",
            format!("{} clean vs {} noisy pixels", clean.len(), noisy.len()),
        ));
    }
    let n = clean.len() as f64;
    let mx = clean.iter().sum::<f64>() / n;
    let my = noisy.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in clean.iter().zip(noisy) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::invalid("measured_snr", "clean input has zero variance"));
    }
    let alpha = sxy / sxx;
    let ratio = if clean == noisy || alpha >= 1.0 {
        f64::INFINITY
    } else {
        alpha / (1.0 - alpha)
    };
    Ok(SnrEstimate { alpha, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_arithmetic() {
        let img = preprocess(&[255, 127, 128, 0], 2, 2, 2).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn nearest_neighbour_upsampling() {
        let img = preprocess(&[255, 0, 0, 255], 2, 2, 4).unwrap();
        assert_eq!(img.shape(), &[1, 4, 4]);
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 0.0, 0.0,
            1.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 1.0, 1.0,
        ];
        assert_eq!(img.data(), &expected);
        assert!(preprocess(&[0; 4], 2, 2, 1).is_err());
    }

    #[test]
    fn binarization_is_a_fixed_point() {
        let raw: Vec<u8> = (0..784).map(|i| ((i * 37) % 256) as u8).collect();
        let once = preprocess(&raw, 28, 28, 28).unwrap();
        let bytes: Vec<u8> = once.data().iter().map(|&v| (v * 255.0) as u8).collect();
        assert_eq!(preprocess(&bytes, 28, 28, 28).unwrap().data(), once.data());
    }

    #[test]
    fn extrusion_values() {
        let mask = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(extrude_depth(&mask, 9).data(), &[1.0, 0.0, 1.0, 1.0]);
        assert!(extrude_depth(&Tensor::zeros(&[1, 2, 2]), 5).data().iter().all(|&d| d == 0.0));
        let d4 = extrude_depth(&mask, 4);
        let oracle: Vec<f64> = mask.data().iter().map(|m| 0.5 * m).collect();
        assert_eq!(d4.data(), oracle.as_slice());
    }

    #[test]
    fn snr_labels() {
        assert_eq!("Inf".parse::<SnrLabel>().unwrap(), SnrLabel::Inf);
        let l: SnrLabel = "1:29".parse().unwrap();
        assert_eq!(l, SnrLabel::Ratio { signal: 1, noise: 29 });
        assert_eq!(l.to_string(), "1:29");
        assert_eq!(l.slug(), "1-29");
        assert_eq!("1:19".parse::<SnrLabel>().unwrap().alpha(), 0.05);
        for bad in ["0:1", "1:0", "x:2", "12", "-1:3", ""] {
            assert!(bad.parse::<SnrLabel>().is_err(), "{bad}");
        }
    }

    #[test]
    fn infinite_snr_is_identity() {
        let img = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.3]).unwrap();
        let out = inject_noise(&img, &SnrLabel::Inf.noise_spec(9));
        assert!(out.bit_eq(&img));
        let spec = NoiseSpec {
            signal_parts: 3.0,
            noise_parts: 0.0,
            seed: 1,
        };
        assert!(inject_noise(&img, &spec).bit_eq(&img));
    }

    #[test]
    fn noise_is_seeded_and_bounded() {
        let img = Tensor::new(vec![1, 1, 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let spec = SnrLabel::Ratio { signal: 1, noise: 5 }.noise_spec(4);
        let a = inject_noise(&img, &spec);
        assert!(a.bit_eq(&inject_noise(&img, &spec)));
        assert!(!a.bit_eq(&inject_noise(&img, &spec.for_sample(0, 1))));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn snr_estimates() {
        let clean: Vec<f64> = (0..20_000).map(|i| ((i / 7) % 2) as f64).collect();
        let img = Tensor::new(vec![clean.len()], clean.clone()).unwrap();
        let same = measured_snr(&clean, &clean).unwrap();
        assert_eq!(same.ratio, f64::INFINITY);
        assert_eq!(same.alpha, 1.0);
        for (s, n) in [(1, 5), (1, 19), (1, 29)] {
            let label = SnrLabel::Ratio { signal: s, noise: n };
            let noisy = inject_noise(&img, &label.noise_spec(17));
            let est = measured_snr(&clean, noisy.data()).unwrap();
            assert!((est.alpha - label.alpha()).abs() < 0.01, "{label}: {est:?}");
            if n == 5 {
                assert!((est.ratio - 0.2).abs() < 0.02, "{est:?}");
            }
        }
        assert!(measured_snr(&[0.5; 10], &[0.4; 10]).is_err());
    }
}
