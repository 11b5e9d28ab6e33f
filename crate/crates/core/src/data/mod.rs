//! Depth-extruded MNIST: IDX loading, preprocessing, noise, cohort splits
//! and the on-disk cohort cache.
//!
//! Samples are stored as `f32`, the precision of the cache format, so a
//! dataset generated in memory and one read back from disk are identical.

pub mod cache;
pub mod idx;
pub mod transform;

use std::env;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cache::{read_cache, write_cache};
pub use idx::{load_idx, write_idx, Digit, DigitSet};
pub use transform::{
    depth_value, extrude_depth, inject_noise, measured_snr, preprocess, NoiseSpec, SnrEstimate, SnrLabel,
};

pub const NUM_CLASSES: usize = 10;
pub const VAL_START: usize = 45_000;
pub const VAL_LEN: usize = 1_500;
pub const TEST_LEN: usize = 1_000;

/// Environment variable naming the directory with the four MNIST IDX files.
pub const DATA_ENV: &str = "MTLFORGE_DATA";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Which original file a sample index refers to; also keys its noise stream.
const SOURCE_TRAIN: u64 = 0;
const SOURCE_TEST: u64 = 1;

/// One input image with its depth map and class.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSample {
    /// Index in the original MNIST file.
    pub index: u32,
    pub label: u8,
    pub size: usize,
    pub image: Vec<f32>,
    pub depth: Vec<f32>,
}

impl RgbdSample {
    pub fn image_tensor(&self) -> Tensor {
        to_tensor(&self.image, self.size)
    }

    pub fn depth_tensor(&self) -> Tensor {
        to_tensor(&self.depth, self.size)
    }

    /// Foreground depth as stored (the `f32` value of `depth_value`).
    pub fn stored_depth_value(&self) -> f32 {
        depth_value(self.label) as f32
    }
}

fn to_tensor(v: &[f32], size: usize) -> Tensor {
    Tensor::new(vec![1, size, size], v.iter().map(|&x| x as f64).collect()).expect("sample buffer matches size")
}

fn to_f32(t: &Tensor) -> Vec<f32> {
    t.data().iter().map(|&x| x as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cohort {
    Train,
    Val,
    Test,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Train, Cohort::Val, Cohort::Test];

    pub fn name(self) -> &'static str {
        match self {
            Cohort::Train => "train",
            Cohort::Val => "val",
            Cohort::Test => "test",
        }
    }
}

/// The first `train_n` training digits, validation indices
/// `45000..46500`, and the first 1000 test digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CohortSplit {
    train_n: usize,
}

impl CohortSplit {
    pub fn new(train_n: usize) -> Result<Self> {
        if !(1..=VAL_START).contains(&train_n) {
            return Err(Error::invalid(
                "split_cohorts",
                format!("train_n must be in 1..={VAL_START}, got {train_n}"),
            ));
        }
        Ok(CohortSplit { train_n })
    }

    pub fn train_n(&self) -> usize {
        self.train_n
    }

    /// Index range into the file the cohort is drawn from.
    pub fn range(&self, cohort: Cohort) -> Range<usize> {
        match cohort {
            Cohort::Train => 0..self.train_n,
            Cohort::Val => VAL_START..VAL_START + VAL_LEN,
            Cohort::Test => 0..TEST_LEN,
        }
    }
}

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataSpec {
    pub size: usize,
    pub train_n: usize,
    pub snr: SnrLabel,
    /// Seed of the noise streams.
    pub seed: u64,
}

impl DataSpec {
    pub fn split(&self) -> Result<CohortSplit> {
        CohortSplit::new(self.train_n)
    }

    pub fn noise(&self) -> NoiseSpec {
        self.snr.noise_spec(self.seed)
    }

    pub fn cache_file(&self, dir: &Path, cohort: Cohort) -> PathBuf {
        let stem = format!("xmn_s{}_snr{}_seed{}", self.size, self.snr.slug(), self.seed);
        let name = match cohort {
            Cohort::Train => format!("{stem}_train{}.bin", self.train_n),
            other => format!("{stem}_{}.bin", other.name()),
        };
        dir.join(name)
    }
}

/// The two MNIST files, training and test.
#[derive(Debug, Clone)]
pub struct MnistSource {
    pub train: DigitSet,
    pub test: DigitSet,
}

impl MnistSource {
    /// `$MTLFORGE_DATA`, or `data/mnist` when unset.
    pub fn default_dir() -> PathBuf {
        env::var_os(DATA_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn from_env() -> Result<Self> {
        Self::load(&Self::default_dir())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let missing: Vec<&str> = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
            .into_iter()
            .filter(|f| !dir.join(f).is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "MNIST IDX files missing from {}: {}. Download the four uncompressed \
                 files (train-images-idx3-ubyte, train-labels-idx1-ubyte, \
                 t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte) into that directory \
                 or point {DATA_ENV} at a directory that has them; see README.md",
                dir.display(),
                missing.join(", ")
            )));
        }
        Ok(MnistSource {
            train: load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?,
            test: load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?,
        })
    }
}

/// Clean binary image, its depth map, then the noisy image; stored as `f32`.
pub fn make_sample(digits: &DigitSet, index: usize, size: usize, noise: &NoiseSpec, source: u64) -> Result<RgbdSample> {
    let digit = &digits.digits[index];
    let mask = preprocess(&digit.pixels, digits.rows, digits.cols, size)?;
    let depth = extrude_depth(&mask, digit.label);
    let image = inject_noise(&mask, &noise.for_sample(source, index as u64));
    Ok(RgbdSample {
        index: index as u32,
        label: digit.label,
        size,
        image: to_f32(&image),
        depth: to_f32(&depth),
    })
}

fn build_cohort(digits: &DigitSet, range: Range<usize>, spec: &DataSpec, source: u64) -> Result<Vec<RgbdSample>> {
    if range.end > digits.len() {
        return Err(Error::invalid(
            "split_cohorts",
            format!("cohort needs indices up to {} but the file has {}", range.end, digits.len()),
        ));
    }
    let noise = spec.noise();
    range
        .into_par_iter()
        .map(|i| make_sample(digits, i, spec.size, &noise, source))
        .collect()
}

/// The three cohorts of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DataSpec,
    pub train: Vec<RgbdSample>,
    pub val: Vec<RgbdSample>,
    pub test: Vec<RgbdSample>,
}

impl Dataset {
    pub fn generate(spec: DataSpec, source: &MnistSource) -> Result<Self> {
        let split = spec.split()?;
        Ok(Dataset {
            spec,
            train: build_cohort(&source.train, split.range(Cohort::Train), &spec, SOURCE_TRAIN)?,
            val: build_cohort(&source.train, split.range(Cohort::Val), &spec, SOURCE_TRAIN)?,
            test: build_cohort(&source.test, split.range(Cohort::Test), &spec, SOURCE_TEST)?,
        })
    }

    pub fn cohort(&self, c: Cohort) -> &[RgbdSample] {
        match c {
            Cohort::Train => &self.train,
            Cohort::Val => &self.val,
            Cohort::Test => &self.test,
        }
    }

    pub fn write_cache(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        Cohort::ALL
            .iter()
            .map(|&c| {
                let path = self.spec.cache_file(dir, c);
                write_cache(&path, self.cohort(c), self.spec.size)?;
                Ok(path)
            })
            .collect()
    }

    /// Read all three cohort files; `None` if any is absent.
    pub fn read_cache(spec: DataSpec, dir: &Path) -> Result<Option<Self>> {
        let paths: Vec<PathBuf> = Cohort::ALL.iter().map(|&c| spec.cache_file(dir, c)).collect();
        if !paths.iter().all(|p| p.is_file()) {
            return Ok(None);
        }
        let mut cohorts = Vec::with_capacity(3);
        for p in &paths {
            let (size, samples) = read_cache(p)?;
            if size != spec.size {
                return Err(Error::format(p, format!("cached size {size}, expected {}", spec.size)));
            }
            cohorts.push(samples);
        }
        let test = cohorts.pop().unwrap();
        let val = cohorts.pop().unwrap();
        let train = cohorts.pop().unwrap();
        let split = spec.split()?;
        for (c, samples) in Cohort::ALL.iter().zip([&train, &val, &test]) {
            if samples.len() != split.range(*c).len() {
                return Err(Error::format(
                    spec.cache_file(dir, *c),
                    format!("{} samples, expected {}", samples.len(), split.range(*c).len()),
                ));
            }
        }
        Ok(Some(Dataset { spec, train, val, test }))
    }

    /// Cached cohorts if present, otherwise generate from `source()` and
    /// write the cache.
    pub fn load_or_generate<F>(spec: DataSpec, dir: &Path, source: F) -> Result<Self>
    where
        F: FnOnce() -> Result<MnistSource>,
    {
        if let Some(ds) = Self::read_cache(spec, dir)? {
            return Ok(ds);
        }
        let ds = Self::generate(spec, &source()?)?;
        ds.write_cache(dir)?;
        Ok(ds)
    }
}

pub fn label_histogram(samples: &[RgbdSample]) -> [usize; NUM_CLASSES] {
    let mut h = [0; NUM_CLASSES];
    for s in samples {
        h[s.label as usize] += 1;
    }
    h
}

/// A stacked mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, 1, S, S]`
    pub images: Tensor,
    /// `[B, 1, S, S]`
    pub depths: Tensor,
    pub labels: Vec<usize>,
}

pub fn make_batch(samples: &[&RgbdSample]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::invalid("batch", "no samples"))?;
    let size = first.size;
    if samples.iter().any(|s| s.size != size) {
        return Err(Error::invalid("batch", "samples of different sizes"));
    }
    let n = samples.len();
    let mut images = Vec::with_capacity(n * size * size);
    let mut depths = Vec::with_capacity(n * size * size);
    for s in samples {
        images.extend(s.image.iter().map(|&v| v as f64));
        depths.extend(s.depth.iter().map(|&v| v as f64));
    }
    let shape = vec![n, 1, size, size];
    Ok(Batch {
        images: Tensor::new(shape.clone(), images)?,
        depths: Tensor::new(shape, depths)?,
        labels: samples.iter().map(|s| s.label as usize).collect(),
    })
}
