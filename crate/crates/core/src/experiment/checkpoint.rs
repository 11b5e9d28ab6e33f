//! `MTLC` checkpoints: the network, optimizer buffers, history and the
//! best-validation snapshot of a run, enough to resume it bit-identically.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MTLC" | version u32 | levels, base_channels, input_size, num_classes,
//! cls_hidden, upsample_conv as u32 | tensor count u32 |
//! per tensor: name length u16, name, rank u8, dims u32 × rank, f64 × len
//! ```
//!
//! Scalars (epoch counter, seed, hyperparameters) are stored as tensors
//! under `meta/` and `hp/`. The shuffle stream of every epoch is derived
//! from the seed and the epoch number, so the seed is the whole PRNG state.

use std::path::Path;

use crate::data::cache::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Group, MultitaskNet, UNetConfig};
use crate::tensor::Tensor;
use crate::train::{
    BestSnapshot, DepthLoss, EpochRecord, Hyperparameters, LossWeights, Metrics, Phase, SgdState, Strategy,
    TrainState,
};

pub const MAGIC: &[u8; 4] = b"MTLC";
pub const VERSION: u32 = 1;

/// Named tensors with the architecture they belong to.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: UNetConfig,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn config_words(c: &UNetConfig) -> [u32; 6] {
    [
        c.levels as u32,
        c.base_channels as u32,
        c.input_size as u32,
        c.num_classes as u32,
        c.cls_hidden as u32,
        c.upsample_conv as u32,
    ]
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for w in config_words(&ck.config) {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ck.tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid("checkpoint", format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::invalid("checkpoint", "rank above 255"))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(path, "bad magic, not an MTLC checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let mut w = [0usize; 6];
    for x in &mut w {
        *x = r.u32()? as usize;
    }
    if w[5] > 1 {
        return Err(Error::format(path, format!("bad upsample_conv flag {}", w[5])));
    }
    let config = UNetConfig {
        levels: w[0],
        base_channels: w[1],
        input_size: w[2],
        num_classes: w[3],
        cls_hidden: w[4],
        upsample_conv: w[5] == 1,
    };
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not utf-8"))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(path, format!("{name}: shape overflows")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config, tensors })
}

pub fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode(ck)?)
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn scalar(v: f64) -> Tensor {
    Tensor::new(vec![1], vec![v]).expect("one element")
}

fn u64_pair(v: u64) -> Tensor {
    Tensor::new(vec![2], vec![(v >> 32) as f64, (v & 0xffff_ffff) as f64]).expect("two elements")
}

fn metrics_row(m: &Metrics) -> [f64; 4] {
    [m.accuracy, m.depth_rmse, m.cls_loss, m.depth_loss]
}

const HISTORY_COLS: usize = 14;

/// Snapshot of a run.
pub fn from_state(state: &TrainState, hp: &Hyperparameters) -> Checkpoint {
    let net = &state.net;
    let mut t: Vec<(String, Tensor)> = Vec::new();
    for p in net.parameters() {
        t.push((format!("param/{}", p.name), p.value.clone()));
    }
    for (k, opt) in state.optimizers.iter().enumerate() {
        let groups = opt.groups().iter().map(|g| group_code(*g)).collect();
        t.push((format!("opt{k}/groups"), Tensor::new(vec![opt.groups().len()], groups).expect("groups")));
        t.push((format!("opt{k}/steps"), u64_pair(opt.steps())));
        for (p, v) in net.parameters().iter().zip(opt.velocity()) {
            t.push((
                format!("opt{k}/{}", p.name),
                Tensor::new(p.value.shape().to_vec(), v.clone()).expect("velocity matches parameter"),
            ));
        }
    }
    t.push(("meta/epochs_done".into(), scalar(state.epochs_done as f64)));
    t.push(("meta/aborted".into(), scalar(state.aborted as u8 as f64)));
    t.push(("meta/seed".into(), u64_pair(hp.seed)));
    t.push(("hp/learning_rate".into(), scalar(hp.learning_rate)));
    t.push(("hp/l2".into(), scalar(hp.l2)));
    t.push(("hp/momentum".into(), scalar(hp.momentum)));
    t.push(("hp/batch_size".into(), scalar(hp.batch_size as f64)));
    t.push(("hp/epochs".into(), scalar(hp.epochs as f64)));
    t.push(("hp/strategy".into(), scalar(strategy_code(hp.strategy))));
    t.push(("hp/loss_weights".into(), Tensor::new(vec![2], vec![hp.loss_weights.cls, hp.loss_weights.depth]).expect("two")));
    t.push(("hp/depth_loss".into(), scalar((hp.depth_loss == DepthLoss::Foreground) as u8 as f64)));
    let mut history = Vec::with_capacity(state.history.len() * HISTORY_COLS);
    for e in &state.history {
        history.push(e.epoch as f64);
        history.push(e.phase.code() as f64);
        for m in [&e.train, &e.val, &e.test] {
            history.extend(metrics_row(m));
        }
    }
    t.push((
        "meta/history".into(),
        Tensor::new(vec![state.history.len(), HISTORY_COLS], history).expect("history rows"),
    ));
    if let Some(best) = &state.best {
        t.push(("best/epoch".into(), scalar(best.epoch as f64)));
        t.push(("best/accuracy".into(), scalar(best.accuracy)));
        for (p, v) in net.parameters().iter().zip(&best.params) {
            t.push((format!("best/{}", p.name), v.clone()));
        }
    }
    Checkpoint {
        config: *net.config(),
        tensors: t,
    }
}

fn group_code(g: Group) -> f64 {
    Group::ALL.iter().position(|&x| x == g).expect("listed") as f64
}

fn strategy_code(s: Strategy) -> f64 {
    Strategy::ALL.iter().position(|&x| x == s).expect("listed") as f64
}

/// Rebuild the run state. `expected`, when given, must match the stored
/// architecture.
pub fn to_state(ck: &Checkpoint, expected: Option<&UNetConfig>, path: &Path) -> Result<(TrainState, Hyperparameters)> {
    let fail = |msg: String| Error::format(path, msg);
    if let Some(e) = expected {
        if e != &ck.config {
            return Err(fail(format!("architecture {:?} differs from expected {e:?}", ck.config)));
        }
    }
    let need = |name: &str| ck.get(name).ok_or_else(|| fail(format!("missing tensor {name}")));
    let one = |name: &str| -> Result<f64> {
        let t = need(name)?;
        if t.len() != 1 {
            return Err(fail(format!("{name}: expected a scalar")));
        }
        Ok(t.data()[0])
    };
    let pair = |name: &str| -> Result<u64> {
        let t = need(name)?;
        if t.len() != 2 {
            return Err(fail(format!("{name}: expected two words")));
        }
        Ok(((t.data()[0] as u64) << 32) | t.data()[1] as u64)
    };
    let strategy = *Strategy::ALL
        .get(one("hp/strategy")? as usize)
        .ok_or_else(|| fail("unknown strategy code".into()))?;
    let lw = need("hp/loss_weights")?;
    if lw.len() != 2 {
        return Err(fail("hp/loss_weights: expected two values".into()));
    }
    let hp = Hyperparameters {
        learning_rate: one("hp/learning_rate")?,
        l2: one("hp/l2")?,
        momentum: one("hp/momentum")?,
        batch_size: one("hp/batch_size")? as usize,
        epochs: one("hp/epochs")? as usize,
        strategy,
        loss_weights: LossWeights {
            cls: lw.data()[0],
            depth: lw.data()[1],
        },
        depth_loss: if one("hp/depth_loss")? == 1.0 { DepthLoss::Foreground } else { DepthLoss::Full },
        seed: pair("meta/seed")?,
    };

    let mut net = MultitaskNet::build(ck.config, 0).map_err(|e| fail(e.to_string()))?;
    let names: Vec<String> = net.parameters().iter().map(|p| p.name.clone()).collect();
    let load_params = |prefix: &str| -> Result<Vec<Tensor>> {
        names
            .iter()
            .map(|n| need(&format!("{prefix}/{n}")).cloned())
            .collect()
    };
    for (i, t) in load_params("param")?.into_iter().enumerate() {
        net.set_value(i, t).map_err(|e| fail(format!("{}: {e}", names[i])))?;
    }

    let layout = strategy.optimizer_groups();
    let mut optimizers = Vec::with_capacity(layout.len());
    for (k, groups) in layout.iter().enumerate() {
        let stored: Vec<f64> = need(&format!("opt{k}/groups"))?.data().to_vec();
        let want: Vec<f64> = groups.iter().map(|g| group_code(*g)).collect();
        if stored != want {
            return Err(fail(format!("opt{k}: groups do not match strategy {strategy}")));
        }
        let mut opt = SgdState::new(&net, groups);
        opt.set_steps(pair(&format!("opt{k}/steps"))?);
        let velocity = load_params(&format!("opt{k}"))?;
        for (i, (slot, v)) in opt.velocity_mut().iter_mut().zip(velocity).enumerate() {
            if v.shape() != net.parameters()[i].value.shape() {
                return Err(fail(format!("opt{k}/{}: shape {:?}", names[i], v.shape())));
            }
            slot.copy_from_slice(v.data());
        }
        optimizers.push(opt);
    }

    let h = need("meta/history")?;
    if h.shape().len() != 2 || h.shape()[1] != HISTORY_COLS {
        return Err(fail(format!("meta/history: shape {:?}", h.shape())));
    }
    let history = h
        .data()
        .chunks_exact(HISTORY_COLS)
        .map(|row| {
            let m = |o: usize| Metrics {
                accuracy: row[o],
                depth_rmse: row[o + 1],
                cls_loss: row[o + 2],
                depth_loss: row[o + 3],
            };
            Ok(EpochRecord {
                epoch: row[0] as usize,
                phase: Phase::from_code(row[1] as u32).ok_or_else(|| fail("bad phase code".into()))?,
                train: m(2),
                val: m(6),
                test: m(10),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = if ck.get("best/epoch").is_some() {
        let params = load_params("best")?;
        for (i, p) in params.iter().enumerate() {
            if p.shape() != net.parameters()[i].value.shape() {
                return Err(fail(format!("best/{}: shape {:?}", names[i], p.shape())));
            }
        }
        Some(BestSnapshot {
            epoch: one("best/epoch")? as usize,
            accuracy: one("best/accuracy")?,
            params,
        })
    } else {
        None
    };

    let state = TrainState {
        net,
        optimizers,
        epochs_done: one("meta/epochs_done")? as usize,
        history,
        best,
        aborted: one("meta/aborted")? == 1.0,
    };
    Ok((state, hp))
}

pub fn save_checkpoint(path: &Path, state: &TrainState, hp: &Hyperparameters) -> Result<()> {
    write(path, &from_state(state, hp))
}

pub fn load_checkpoint(path: &Path, expected: Option<&UNetConfig>) -> Result<(TrainState, Hyperparameters)> {
    to_state(&read(path)?, expected, path)
}
