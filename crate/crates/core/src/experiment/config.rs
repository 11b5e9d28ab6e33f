//! Flat `key = value` experiment configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DataSpec, SnrLabel};
use crate::error::{Error, Result};
use crate::model::UNetConfig;
use crate::train::{DepthLoss, Hyperparameters, Strategy};

/// The noise levels of the noise sweep.
pub const SNR_AXIS: [SnrLabel; 4] = [
    SnrLabel::Inf,
    SnrLabel::Ratio { signal: 1, noise: 5 },
    SnrLabel::Ratio { signal: 1, noise: 19 },
    SnrLabel::Ratio { signal: 1, noise: 29 },
];

/// Training-set sizes of the size sweep at desk scale.
pub const DESK_TRAIN_N_AXIS: [usize; 4] = [128, 256, 384, 512];
pub const PAPER_TRAIN_N_AXIS: [usize; 4] = [5000, 4500, 4000, 3500];

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// A single cell per seed.
    Single,
    Snr(Vec<SnrLabel>),
    TrainN(Vec<usize>),
    Strategy(Vec<Strategy>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Single => "single",
            SweepAxis::Snr(_) => "snr",
            SweepAxis::TrainN(_) => "train_n",
            SweepAxis::Strategy(_) => "strategy",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Single => 1,
            SweepAxis::Snr(v) => v.len(),
            SweepAxis::TrainN(v) => v.len(),
            SweepAxis::Strategy(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn values(&self) -> String {
        match self {
            SweepAxis::Single => String::new(),
            SweepAxis::Snr(v) => join(v),
            SweepAxis::TrainN(v) => join(v),
            SweepAxis::Strategy(v) => join(v),
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Everything one `train` or `sweep` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `hp.seed` is overwritten per run from `seeds`.
    pub hp: Hyperparameters,
    pub model: UNetConfig,
    pub train_n: usize,
    pub snr: SnrLabel,
    pub seeds: Vec<u64>,
    /// Seed of the noise streams, shared by all runs.
    pub data_seed: u64,
    pub axis: SweepAxis,
    pub out: PathBuf,
    /// IDX directory; falls back to `$MTLFORGE_DATA` or `data/mnist`.
    pub data_dir: Option<PathBuf>,
    /// Cohort caches; defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Parallel sweep cells; 0 means one per core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            // Noise and size sweeps use the two-optimizer regime unless told otherwise.
            hp: Hyperparameters {
                strategy: Strategy::MultiOptimizer,
                ..Hyperparameters::default()
            },
            model: UNetConfig::default(),
            train_n: 512,
            snr: SnrLabel::Inf,
            seeds: vec![0],
            data_seed: 0,
            axis: SweepAxis::Single,
            out: PathBuf::from("runs"),
            data_dir: None,
            cache_dir: None,
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    /// 256×256 inputs, five levels and 5000 training images.
    pub fn paper_scale(&mut self) {
        self.model.input_size = 256;
        self.model.levels = 5;
        self.train_n = 5000;
        if let SweepAxis::TrainN(v) = &mut self.axis {
            if v[..] == DESK_TRAIN_N_AXIS {
                *v = PAPER_TRAIN_N_AXIS.to_vec();
            }
        }
    }

    pub fn size(&self) -> usize {
        self.model.input_size
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            size: self.size(),
            train_n: self.train_n,
            snr: self.snr,
            seed: self.data_seed,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.model.validate()?;
        self.data_spec().split()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.axis.is_empty() {
            return Err(Error::Config(format!("sweep axis {} has no values", self.axis.name())));
        }
        if let SweepAxis::TrainN(v) = &self.axis {
            for &n in v {
                crate::data::CohortSplit::new(n)?;
            }
        }
        Ok(())
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "learning_rate" | "lr" => self.hp.learning_rate = num(key, v)?,
            "l2" => self.hp.l2 = num(key, v)?,
            "momentum" => self.hp.momentum = num(key, v)?,
            "batch_size" => self.hp.batch_size = num(key, v)?,
            "epochs" => self.hp.epochs = num(key, v)?,
            "strategy" => self.hp.strategy = num(key, v)?,
            "loss_weight_cls" => self.hp.loss_weights.cls = num(key, v)?,
            "loss_weight_depth" => self.hp.loss_weights.depth = num(key, v)?,
            "depth_loss" => {
                self.hp.depth_loss = match v {
                    "full" => DepthLoss::Full,
                    "foreground" => DepthLoss::Foreground,
                    _ => return Err(bad(key, v, "expected full or foreground")),
                }
            }
            "seed" | "seeds" => self.seeds = list(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "train_n" => self.train_n = num(key, v)?,
            "snr" => self.snr = num(key, v)?,
            "size" => self.model.input_size = num(key, v)?,
            "levels" => self.model.levels = num(key, v)?,
            "base_channels" => self.model.base_channels = num(key, v)?,
            "cls_hidden" => self.model.cls_hidden = num(key, v)?,
            "upsample_conv" => self.model.upsample_conv = num(key, v)?,
            "axis" => {
                self.axis = match v {
                    "single" => SweepAxis::Single,
                    "snr" => SweepAxis::Snr(SNR_AXIS.to_vec()),
                    "train_n" => SweepAxis::TrainN(DESK_TRAIN_N_AXIS.to_vec()),
                    "strategy" => SweepAxis::Strategy(Strategy::ALL.to_vec()),
                    _ => return Err(bad(key, v, "expected single, snr, train_n or strategy")),
                }
            }
            "values" => {
                self.axis = match self.axis {
                    SweepAxis::Single => return Err(bad(key, v, "set axis before values")),
                    SweepAxis::Snr(_) => SweepAxis::Snr(list(key, v)?),
                    SweepAxis::TrainN(_) => SweepAxis::TrainN(list(key, v)?),
                    SweepAxis::Strategy(_) => SweepAxis::Strategy(list(key, v)?),
                }
            }
            "out" => self.out = PathBuf::from(v),
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "cache_dir" => self.cache_dir = Some(PathBuf::from(v)),
            "jobs" => self.jobs = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parse configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    /// Render as configuration text that [`parse`](Self::parse) reads back
    /// to an equal value.
    pub fn to_text(&self) -> String {
        let h = &self.hp;
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("learning_rate", h.learning_rate.to_string());
        kv("l2", h.l2.to_string());
        kv("momentum", h.momentum.to_string());
        kv("batch_size", h.batch_size.to_string());
        kv("epochs", h.epochs.to_string());
        kv("strategy", h.strategy.to_string());
        kv("loss_weight_cls", h.loss_weights.cls.to_string());
        kv("loss_weight_depth", h.loss_weights.depth.to_string());
        kv("depth_loss", h.depth_loss.name().to_string());
        kv("seeds", join(&self.seeds));
        kv("data_seed", self.data_seed.to_string());
        kv("train_n", self.train_n.to_string());
        kv("snr", self.snr.to_string());
        kv("size", m.input_size.to_string());
        kv("levels", m.levels.to_string());
        kv("base_channels", m.base_channels.to_string());
        kv("cls_hidden", m.cls_hidden.to_string());
        kv("upsample_conv", m.upsample_conv.to_string());
        kv("axis", self.axis.name().to_string());
        if self.axis != SweepAxis::Single {
            kv("values", self.axis.values());
        }
        kv("out", self.out.display().to_string());
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        if let Some(d) = &self.cache_dir {
            kv("cache_dir", d.display().to_string());
        }
        kv("jobs", self.jobs.to_string());
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: cannot parse {value:?}: {why}", key.trim()))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| bad(key, v, e))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, v, "empty list"));
    }
    Ok(items)
}
