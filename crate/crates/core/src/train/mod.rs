//! SGD with momentum and the four training regimes.
//!
//! | strategy          | loss per step                  | groups updated          |
//! |-------------------|--------------------------------|-------------------------|
//! | `single_task`     | weighted CE                    | encoder, classifier     |
//! | `sequential`      | depth, then CE (separate runs) | enc+dec, then enc+cls   |
//! | `multi_optimizer` | depth step, then CE step       | enc+dec, then enc+cls   |
//! | `multitask_loss`  | `λc·CE + λd·depth`             | all                     |
//!
//! Every epoch visits the training cohort in an order shuffled from
//! `(seed, epoch)`, keeps the last partial batch, then evaluates the train,
//! validation and test cohorts.

mod eval;
mod sgd;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::data::{label_histogram, make_batch, Batch, Dataset, RgbdSample};
use crate::error::{Error, Result};
use crate::model::{Group, MultitaskNet};
use crate::nn::ClassWeights;
use crate::rng::ShiftRng;
use crate::tensor::{Tape, Tensor};

pub use eval::{argmax, evaluate, DepthLoss, Metrics};
pub use sgd::{sgd_step, sgd_update, SgdConfig, SgdState};

/// Stream tag of the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    SingleTask,
    Sequential,
    MultiOptimizer,
    MultitaskLoss,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SingleTask,
        Strategy::Sequential,
        Strategy::MultiOptimizer,
        Strategy::MultitaskLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SingleTask => "single_task",
            Strategy::Sequential => "sequential",
            Strategy::MultiOptimizer => "multi_optimizer",
            Strategy::MultitaskLoss => "multitask_loss",
        }
    }

    /// Whether the depth task takes part.
    pub fn is_multitask(self) -> bool {
        self != Strategy::SingleTask
    }

    /// Groups of each optimizer, in order.
    pub fn optimizer_groups(self) -> Vec<Vec<Group>> {
        use Group::*;
        match self {
            Strategy::SingleTask => vec![vec![Encoder, Classifier]],
            Strategy::Sequential | Strategy::MultiOptimizer => {
                vec![vec![Encoder, Decoder], vec![Encoder, Classifier]]
            }
            Strategy::MultitaskLoss => vec![Group::ALL.to_vec()],
        }
    }

    /// Recorded epochs for `epochs` per phase.
    pub fn total_epochs(self, epochs: usize) -> usize {
        match self {
            Strategy::Sequential => 2 * epochs,
            _ => epochs,
        }
    }

    /// Phase of the zero-based global epoch `e`.
    pub fn phase(self, e: usize, epochs: usize) -> Phase {
        match self {
            Strategy::SingleTask => Phase::Classification,
            Strategy::Sequential if e < epochs => Phase::Depth,
            Strategy::Sequential => Phase::Classification,
            Strategy::MultiOptimizer | Strategy::MultitaskLoss => Phase::Joint,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| {
                Error::invalid(
                    "strategy",
                    format!(
                        "unknown strategy {s:?}; expected one of single_task, sequential, multi_optimizer, multitask_loss"
                    ),
                )
            })
    }
}

/// What an epoch trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Classification loss only.
    Classification,
    /// Depth loss only.
    Depth,
    /// Both tasks.
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Classification => "classification",
            Phase::Depth => "depth",
            Phase::Joint => "joint",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Phase::Classification => 0,
            Phase::Depth => 1,
            Phase::Joint => 2,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        [Phase::Classification, Phase::Depth, Phase::Joint]
            .into_iter()
            .find(|p| p.code() == c)
    }
}

/// Multipliers of the two losses in `multitask_loss`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 1.0, depth: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub l2: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Epochs per phase.
    pub epochs: usize,
    pub strategy: Strategy,
    pub loss_weights: LossWeights,
    pub depth_loss: DepthLoss,
    /// Seeds weight initialization (by the caller) and shuffling.
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            learning_rate: 5e-5,
            l2: 0.001,
            momentum: 0.9,
            batch_size: 4,
            epochs: 10,
            strategy: Strategy::MultitaskLoss,
            loss_weights: LossWeights::default(),
            depth_loss: DepthLoss::Full,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return fail(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        let LossWeights { cls, depth } = self.loss_weights;
        if !(cls >= 0.0 && depth >= 0.0 && cls.is_finite() && depth.is_finite()) {
            return fail(format!("loss weights must be non-negative, got ({cls}, {depth})"));
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            l2: self.l2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// One-based, counting across phases.
    pub epoch: usize,
    pub phase: Phase,
    pub train: Metrics,
    pub val: Metrics,
    pub test: Metrics,
}

/// Parameters at the epoch with the best validation accuracy so far.
#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub accuracy: f64,
    pub params: Vec<Tensor>,
}

/// The outcome of one run. Equality ignores `wall_seconds`.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub hp: Hyperparameters,
    pub epochs: Vec<EpochRecord>,
    /// Test metrics of the last epoch's weights.
    pub test: Metrics,
    /// `(epoch, accuracy)` of the best validation epoch.
    pub best_val: (usize, f64),
    /// Training stopped on a non-finite loss.
    pub aborted: bool,
    pub wall_seconds: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.hp == other.hp
            && self.epochs == other.epochs
            && self.test == other.test
            && self.best_val == other.best_val
            && self.aborted == other.aborted
    }
}

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: MultitaskNet,
    pub optimizers: Vec<SgdState>,
    /// Completed global epochs.
    pub epochs_done: usize,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestSnapshot>,
    pub aborted: bool,
}

impl TrainState {
    pub fn new(net: MultitaskNet, strategy: Strategy) -> Self {
        let optimizers = strategy
            .optimizer_groups()
            .iter()
            .map(|g| SgdState::new(&net, g))
            .collect();
        TrainState {
            net,
            optimizers,
            epochs_done: 0,
            history: Vec::new(),
            best: None,
            aborted: false,
        }
    }
}

/// Drives one run over a dataset.
pub struct Trainer<'a> {
    data: &'a Dataset,
    hp: Hyperparameters,
    weights: ClassWeights,
    state: TrainState,
    wall_seconds: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(net: MultitaskNet, data: &'a Dataset, hp: Hyperparameters) -> Result<Self> {
        let state = TrainState::new(net, hp.strategy);
        Self::resume(state, data, hp)
    }

    pub fn resume(state: TrainState, data: &'a Dataset, hp: Hyperparameters) -> Result<Self> {
        hp.validate()?;
        let size = state.net.config().input_size;
        if size != data.spec.size {
            return Err(Error::Config(format!(
                "network input size {size} differs from dataset size {}",
                data.spec.size
            )));
        }
        if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
            return Err(Error::invalid("train", "every cohort needs at least one sample"));
        }
        let expected = hp.strategy.optimizer_groups();
        let actual: Vec<Vec<Group>> = state.optimizers.iter().map(|o| o.groups().to_vec()).collect();
        if actual != expected {
            return Err(Error::Config(format!(
                "optimizer layout does not match strategy {}",
                hp.strategy
            )));
        }
        let weights = ClassWeights::from_counts(&label_histogram(&data.train)[..state.net.config().num_classes])?;
        Ok(Trainer {
            data,
            hp,
            weights,
            state,
            wall_seconds: 0.0,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn class_weights(&self) -> &ClassWeights {
        &self.weights
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn total_epochs(&self) -> usize {
        self.hp.strategy.total_epochs(self.hp.epochs)
    }

    pub fn is_done(&self) -> bool {
        self.state.aborted || self.state.epochs_done >= self.total_epochs()
    }

    /// Train until `epochs_done` global epochs are complete (or the run ends).
    pub fn run_until(&mut self, epochs_done: usize) -> Result<()> {
        while !self.is_done() && self.state.epochs_done < epochs_done {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(usize::MAX)
    }

    /// One epoch of training followed by evaluation of all three cohorts.
    pub fn run_epoch(&mut self) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        let start = Instant::now();
        let e = self.state.epochs_done;
        let phase = self.hp.strategy.phase(e, self.hp.epochs);
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        ShiftRng::from_stream(self.hp.seed, &[SHUFFLE_STREAM, e as u64]).shuffle(&mut order);
        for idx in order.chunks(self.hp.batch_size) {
            let samples: Vec<&RgbdSample> = idx.iter().map(|&i| &self.data.train[i]).collect();
            let batch = make_batch(&samples)?;
            if !self.train_batch(&batch, phase)? {
                self.state.aborted = true;
                break;
            }
        }
        // An aborted epoch is still recorded so the failure shows in the metrics.
        {
            let record = EpochRecord {
                epoch: e + 1,
                phase,
                train: self.evaluate(&self.data.train)?,
                val: self.evaluate(&self.data.val)?,
                test: self.evaluate(&self.data.test)?,
            };
            let better = self.state.best.as_ref().is_none_or(|b| record.val.accuracy > b.accuracy);
            if better {
                self.state.best = Some(BestSnapshot {
                    epoch: record.epoch,
                    accuracy: record.val.accuracy,
                    params: self.state.net.constants(),
                });
            }
            self.state.history.push(record);
            if !self.state.aborted {
                self.state.epochs_done += 1;
            }
        }
        self.wall_seconds += start.elapsed().as_secs_f64();
        Ok(())
    }

    fn evaluate(&self, samples: &[RgbdSample]) -> Result<Metrics> {
        evaluate(&self.state.net, samples, &self.weights, self.hp.depth_loss)
    }

    /// Returns `false` if a loss was not finite; no update is applied then.
    fn train_batch(&mut self, batch: &Batch, phase: Phase) -> Result<bool> {
        match (self.hp.strategy, phase) {
            (Strategy::SingleTask, _) => self.classification_step(batch, 0),
            (Strategy::Sequential, Phase::Depth) => self.depth_step(batch, 0),
            (Strategy::Sequential, _) => self.classification_step(batch, 1),
            (Strategy::MultiOptimizer, _) => Ok(self.depth_step(batch, 0)? && self.classification_step(batch, 1)?),
            (Strategy::MultitaskLoss, _) => self.joint_step(batch),
        }
    }

    fn depth_loss(&self, tape: &Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        match self.hp.depth_loss {
            DepthLoss::Full => tape.mse_loss(pred, target),
            DepthLoss::Foreground => {
                let mask: Vec<f64> = target.data().iter().map(|&t| if t != 0.0 { 1.0 } else { 0.0 }).collect();
                tape.masked_mse_loss(pred, target, &mask)
            }
        }
    }

    fn apply(&mut self, tape: &Tape, views: &[Tensor], loss: &Tensor, optimizer: usize) -> Result<bool> {
        if !loss.item().is_finite() {
            return Ok(false);
        }
        let grads = tape.backward(loss)?;
        let cfg = self.hp.sgd();
        sgd_step(&mut self.state.net, views, &grads, &mut self.state.optimizers[optimizer], cfg)?;
        Ok(true)
    }

    fn depth_step(&mut self, batch: &Batch, optimizer: usize) -> Result<bool> {
        let tape = Tape::new();
        let views = self.state.net.bind(&tape, &[Group::Encoder, Group::Decoder]);
        let depth = self.state.net.forward_depth(&tape, &views, &batch.images)?;
        let loss = self.depth_loss(&tape, &depth, &batch.depths)?;
        self.apply(&tape, &views, &loss, optimizer)
    }

    fn classification_step(&mut self, batch: &Batch, optimizer: usize) -> Result<bool> {
        let tape = Tape::new();
        let views = self.state.net.bind(&tape, &[Group::Encoder, Group::Classifier]);
        let out = self.state.net.forward_classifier(&tape, &views, &batch.images)?;
        let loss = tape.weighted_cross_entropy(&out.logits, &batch.labels, &self.weights)?;
        self.apply(&tape, &views, &loss, optimizer)
    }

    fn joint_step(&mut self, batch: &Batch) -> Result<bool> {
        let tape = Tape::new();
        let views = self.state.net.bind(&tape, &Group::ALL);
        let out = self.state.net.forward_with(&tape, &views, &batch.images)?;
        let ce = tape.weighted_cross_entropy(&out.logits, &batch.labels, &self.weights)?;
        let depth = self.depth_loss(&tape, &out.depth, &batch.depths)?;
        let LossWeights { cls, depth: wd } = self.hp.loss_weights;
        let loss = tape.add(&tape.scale(&ce, cls), &tape.scale(&depth, wd))?;
        self.apply(&tape, &views, &loss, 0)
    }

    /// The trained network and the record of the run.
    pub fn finish(self) -> Result<(MultitaskNet, RunRecord)> {
        let last = self
            .state
            .history
            .last()
            .ok_or_else(|| Error::invalid("train", "no epoch completed"))?;
        let best = self.state.best.as_ref().expect("set with the first epoch");
        let record = RunRecord {
            hp: self.hp,
            epochs: self.state.history.clone(),
            test: last.test,
            best_val: (best.epoch, best.accuracy),
            aborted: self.state.aborted,
            wall_seconds: self.wall_seconds,
        };
        Ok((self.state.net, record))
    }
}

/// Train `net` on `data` with `hp.strategy`.
pub fn train(net: MultitaskNet, data: &Dataset, hp: &Hyperparameters) -> Result<(MultitaskNet, RunRecord)> {
    let mut t = Trainer::new(net, data, *hp)?;
    t.run()?;
    t.finish()
}

fn train_as(strategy: Strategy, net: MultitaskNet, data: &Dataset, hp: &Hyperparameters) -> Result<(MultitaskNet, RunRecord)> {
    if hp.strategy != strategy {
        return Err(Error::Config(format!(
            "hyperparameters select {}, expected {strategy}",
            hp.strategy
        )));
    }
    train(net, data, hp)
}

pub fn train_single_task(net: MultitaskNet, data: &Dataset, hp: &Hyperparameters) -> Result<(MultitaskNet, RunRecord)> {
    train_as(Strategy::SingleTask, net, data, hp)
}

pub fn train_sequential(net: MultitaskNet, data: &Dataset, hp: &Hyperparameters) -> Result<(MultitaskNet, RunRecord)> {
    train_as(Strategy::Sequential, net, data, hp)
}

pub fn train_multi_optimizer(net: MultitaskNet, data: &Dataset, hp: &Hyperparameters) -> Result<(MultitaskNet, RunRecord)> {
    train_as(Strategy::MultiOptimizer, net, data, hp)
}

pub fn train_multitask_loss(net: MultitaskNet, data: &Dataset, hp: &Hyperparameters) -> Result<(MultitaskNet, RunRecord)> {
    train_as(Strategy::MultitaskLoss, net, data, hp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataSpec, SnrLabel};
    use crate::model::UNetConfig;

    fn config() -> UNetConfig {
        UNetConfig {
            levels: 2,
            base_channels: 4,
            input_size: 16,
            num_classes: 10,
            cls_hidden: 8,
            upsample_conv: true,
        }
    }

    /// Randomly placed pixels, 12 per class step, so pooled features separate the classes.
    fn sample(index: u32, label: u8, rng: &mut ShiftRng) -> RgbdSample {
        let mut order: Vec<usize> = (0..256).collect();
        rng.shuffle(&mut order);
        let mut image = vec![0.0f32; 256];
        for &p in &order[..12 * (label as usize + 1)] {
            image[p] = 1.0;
        }
        let d = (label as f32 + 1.0) / 10.0;
        let depth = image.iter().map(|&m| m * d).collect();
        RgbdSample {
            index,
            label,
            size: 16,
            image,
            depth,
        }
    }

    fn dataset(n: usize) -> Dataset {
        let mut rng = ShiftRng::new(11);
        let mut cohort = |start: u32, n: usize| -> Vec<RgbdSample> {
            (0..n).map(|i| sample(start + i as u32, (i % 10) as u8, &mut rng)).collect()
        };
        Dataset {
            spec: DataSpec {
                size: 16,
                train_n: n,
                snr: SnrLabel::Inf,
                seed: 0,
            },
            train: cohort(0, n),
            val: cohort(1000, 10),
            test: cohort(2000, 10),
        }
    }

    fn hp(strategy: Strategy) -> Hyperparameters {
        Hyperparameters {
            learning_rate: 0.01,
            epochs: 1,
            strategy,
            seed: 5,
            ..Hyperparameters::default()
        }
    }

    fn bytes(net: &MultitaskNet, group: Group) -> Vec<u64> {
        net.group_indices(group)
            .into_iter()
            .flat_map(|i| net.parameters()[i].value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    }

    fn one_batch(strategy: Strategy) -> (MultitaskNet, TrainState) {
        let data = dataset(4);
        let net = MultitaskNet::build(config(), 1).unwrap();
        let mut t = Trainer::new(net.clone(), &data, hp(strategy)).unwrap();
        t.run_until(1).unwrap();
        (net, t.into_state())
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("joint".parse::<Strategy>().is_err());
    }

    #[test]
    fn each_strategy_updates_only_its_groups() {
        let expect = [
            (Strategy::SingleTask, [true, false, true]),
            (Strategy::Sequential, [true, true, false]),
            (Strategy::MultiOptimizer, [true, true, true]),
            (Strategy::MultitaskLoss, [true, true, true]),
        ];
        for (strategy, changed) in expect {
            let (before, after) = one_batch(strategy);
            for (g, want) in Group::ALL.into_iter().zip(changed) {
                let moved = bytes(&before, g) != bytes(&after.net, g);
                assert_eq!(moved, want, "{strategy} {}", g.name());
            }
        }
    }

    #[test]
    fn multi_optimizer_keeps_two_velocity_stores() {
        let (net, state) = one_batch(Strategy::MultiOptimizer);
        assert_eq!(state.optimizers.len(), 2);
        let nonzero = |opt: &SgdState, g: Group| {
            net.group_indices(g)
                .into_iter()
                .any(|i| opt.velocity()[i].iter().any(|&v| v != 0.0))
        };
        let (a, b) = (&state.optimizers[0], &state.optimizers[1]);
        assert!(nonzero(a, Group::Encoder) && nonzero(a, Group::Decoder) && !nonzero(a, Group::Classifier));
        assert!(nonzero(b, Group::Encoder) && nonzero(b, Group::Classifier) && !nonzero(b, Group::Decoder));
        assert_eq!((a.steps(), b.steps()), (1, 1));
    }

    #[test]
    fn multi_optimizer_and_multitask_loss_diverge() {
        let (_, a) = one_batch(Strategy::MultiOptimizer);
        let (_, b) = one_batch(Strategy::MultitaskLoss);
        assert_ne!(bytes(&a.net, Group::Encoder), bytes(&b.net, Group::Encoder));
    }

    #[test]
    fn zero_depth_weight_reduces_to_single_task() {
        let data = dataset(10);
        let net = MultitaskNet::build(config(), 2).unwrap();
        let single = train(net.clone(), &data, &hp(Strategy::SingleTask)).unwrap().0;
        let mut h = hp(Strategy::MultitaskLoss);
        h.loss_weights = LossWeights { cls: 1.0, depth: 0.0 };
        let joint = train(net, &data, &h).unwrap().0;
        for g in [Group::Encoder, Group::Classifier] {
            assert_eq!(bytes(&single, g), bytes(&joint, g), "{}", g.name());
        }
    }

    #[test]
    fn weighted_sum_gradients_are_additive() {
        let data = dataset(4);
        let net = MultitaskNet::build(config(), 3).unwrap();
        let refs: Vec<&RgbdSample> = data.train.iter().collect();
        let batch = make_batch(&refs).unwrap();
        let weights = ClassWeights::uniform(10);
        let grads = |wc: f64, wd: f64| {
            let tape = Tape::new();
            let views = net.bind(&tape, &Group::ALL);
            let out = net.forward_with(&tape, &views, &batch.images).unwrap();
            let ce = tape.weighted_cross_entropy(&out.logits, &batch.labels, &weights).unwrap();
            let d = tape.mse_loss(&out.depth, &batch.depths).unwrap();
            let loss = tape.add(&tape.scale(&ce, wc), &tape.scale(&d, wd)).unwrap();
            let g = tape.backward(&loss).unwrap();
            views.iter().map(|v| g.get(v).unwrap().to_vec()).collect::<Vec<_>>()
        };
        let (both, cls, depth) = (grads(0.7, 1.3), grads(1.0, 0.0), grads(0.0, 1.0));
        for ((b, c), d) in both.iter().zip(&cls).zip(&depth) {
            for ((b, c), d) in b.iter().zip(c).zip(d) {
                assert!((b - (0.7 * c + 1.3 * d)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn runs_are_reproducible_from_the_seed() {
        let data = dataset(8);
        let run = |seed: u64| {
            let mut h = hp(Strategy::MultiOptimizer);
            h.epochs = 2;
            h.seed = seed;
            train(MultitaskNet::build(config(), seed).unwrap(), &data, &h).unwrap()
        };
        let (a, ra) = run(4);
        let (b, rb) = run(4);
        assert_eq!(ra, rb);
        for g in Group::ALL {
            assert_eq!(bytes(&a, g), bytes(&b, g));
        }
        let (c, _) = run(5);
        assert_ne!(bytes(&a, Group::Encoder), bytes(&c, Group::Encoder));
    }

    #[test]
    fn sequential_records_both_phases() {
        let data = dataset(4);
        let mut h = hp(Strategy::Sequential);
        h.epochs = 2;
        let (_, rec) = train(MultitaskNet::build(config(), 1).unwrap(), &data, &h).unwrap();
        let phases: Vec<Phase> = rec.epochs.iter().map(|e| e.phase).collect();
        assert_eq!(phases, [Phase::Depth, Phase::Depth, Phase::Classification, Phase::Classification]);
        assert_eq!(rec.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), [1, 2, 3, 4]);
        assert_eq!(rec.test, rec.epochs[3].test);
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let data = dataset(6);
        let mut h = hp(Strategy::Sequential);
        h.epochs = 2;
        let net = MultitaskNet::build(config(), 9).unwrap();
        let (full, rec) = train(net.clone(), &data, &h).unwrap();
        let mut first = Trainer::new(net, &data, h).unwrap();
        first.run_until(3).unwrap();
        let mut second = Trainer::resume(first.into_state(), &data, h).unwrap();
        second.run().unwrap();
        let (resumed, rec2) = second.finish().unwrap();
        assert_eq!(rec, rec2);
        assert_eq!(bytes(&full, Group::Decoder), bytes(&resumed, Group::Decoder));
    }

    #[test]
    fn training_reduces_both_losses() {
        let data = dataset(20);
        let h = Hyperparameters {
            learning_rate: 0.01,
            epochs: 40,
            strategy: Strategy::MultitaskLoss,
            seed: 1,
            ..Hyperparameters::default()
        };
        let (_, rec) = train(MultitaskNet::build(config(), 1).unwrap(), &data, &h).unwrap();
        let first = rec.epochs[0].train;
        let last = rec.epochs.last().unwrap().train;
        assert!(last.cls_loss < 0.85 * first.cls_loss, "{} -> {}", first.cls_loss, last.cls_loss);
        assert!(last.depth_rmse < 0.8 * first.depth_rmse);
        assert!(rec.best_val.1 >= rec.epochs[0].val.accuracy);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = dataset(8);
        let mut h = hp(Strategy::MultitaskLoss);
        h.learning_rate = 1e12;
        h.epochs = 5;
        h.batch_size = 1;
        let (_, rec) = train(MultitaskNet::build(config(), 1).unwrap(), &data, &h).unwrap();
        assert!(rec.aborted);
        assert!(rec.epochs.len() < 5);
    }

    #[test]
    fn rejects_bad_settings() {
        let data = dataset(4);
        let net = MultitaskNet::build(config(), 1).unwrap();
        let mut h = hp(Strategy::SingleTask);
        h.batch_size = 0;
        assert!(Trainer::new(net.clone(), &data, h).is_err());
        let mut h = hp(Strategy::SingleTask);
        h.momentum = 1.0;
        assert!(Trainer::new(net.clone(), &data, h).is_err());
        assert!(train_sequential(net, &data, &hp(Strategy::SingleTask)).is_err());
    }
}
