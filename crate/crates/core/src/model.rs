//! U-Net with a shared encoder, a depth decoder and a classification branch
//! fed from the bottleneck.
//!
//! ```text
//! x ─ enc0 ─ pool ─ enc1 ─ pool ─ … ─ enc(L-1)  (bottleneck)
//!      │             │                   ├─ global avg pool ─ fc ─ relu ─ fc ─ logits
//!      └──── skip ───┴──── skip ───┐     │
//!                                  dec(L-2) … dec0 ─ 1×1 conv ─ depth
//! ```
//!
//! Encoder level `i` has `base_channels · 2^i` channels and is two 3×3
//! convolutions with ReLU. Each decoder level upsamples (nearest neighbour,
//! optionally followed by a 3×3 convolution), concatenates the matching
//! encoder output in front of it and applies another two-convolution block.

use crate::error::{Error, Result};
use crate::nn::{Conv2dParams, LinearParams};
use crate::rng::ShiftRng;
use crate::tensor::{Tape, Tensor};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Encoder depth, including the bottleneck level.
    pub levels: usize,
    pub base_channels: usize,
    /// Side of the square single-channel input.
    pub input_size: usize,
    pub num_classes: usize,
    /// Width of the hidden fully connected layer.
    pub cls_hidden: usize,
    /// Follow each decoder upsampling with a 3×3 convolution.
    pub upsample_conv: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            levels: 3,
            base_channels: 8,
            input_size: 32,
            num_classes: 10,
            cls_hidden: 64,
            upsample_conv: true,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.check(16)
    }

    fn check(&self, min_size: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.levels < 2 {
            return fail(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.base_channels < 4 {
            return fail(format!("base_channels must be >= 4, got {}", self.base_channels));
        }
        if self.levels >= usize::BITS as usize - 1 {
            return fail(format!("levels {} too large", self.levels));
        }
        let s = self.input_size;
        if s < min_size || !s.is_power_of_two() {
            return fail(format!("input_size must be a power of two >= {min_size}, got {s}"));
        }
        if !s.is_multiple_of(1 << self.levels) {
            return fail(format!("input_size {s} not divisible by 2^{}", self.levels));
        }
        if self.num_classes < 2 || self.cls_hidden < 1 {
            return fail("num_classes must be >= 2 and cls_hidden >= 1".into());
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.levels - 1)
    }
}

/// Parameter partition used by the training strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Encoder,
    Decoder,
    Classifier,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Encoder, Group::Decoder, Group::Classifier];

    pub fn name(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Decoder => "decoder",
            Group::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    weight: usize,
    bias: usize,
    padding: usize,
}

#[derive(Debug, Clone, Copy)]
struct LinearSlot {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Block {
    first: ConvSlot,
    second: ConvSlot,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    level: usize,
    up: Option<ConvSlot>,
    block: Block,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<Block>,
    decoder: Vec<DecoderLevel>,
    head: ConvSlot,
    fc1: LinearSlot,
    fc2: LinearSlot,
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct NetOutput {
    /// `[B, 1, S, S]`
    pub depth: Tensor,
    /// `[B, num_classes]`
    pub logits: Tensor,
    /// Globally averaged bottleneck activation, `[B, bottleneck_channels]`.
    pub features: Tensor,
}

/// Classification-only forward pass.
#[derive(Debug, Clone)]
pub struct ClassifierOutput {
    pub logits: Tensor,
    pub features: Tensor,
}

#[derive(Debug, Clone)]
pub struct MultitaskNet {
    config: UNetConfig,
    params: Vec<Parameter>,
    layout: Layout,
}

struct Builder {
    params: Vec<Parameter>,
    seed: u64,
}

impl Builder {
    /// He-uniform weights, zero bias.
    fn push(&mut self, name: String, group: Group, shape: Vec<usize>, fan_in: usize) -> (usize, usize) {
        let index = self.params.len() as u64;
        let mut rng = ShiftRng::from_stream(self.seed, &[index]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        let out = shape[0];
        self.params.push(Parameter {
            name: format!("{name}.weight"),
            group,
            value: Tensor::from_parts(shape, w),
        });
        self.params.push(Parameter {
            name: format!("{name}.bias"),
            group,
            value: Tensor::zeros(&[out]),
        });
        (self.params.len() - 2, self.params.len() - 1)
    }

    fn conv(&mut self, name: String, group: Group, cin: usize, cout: usize, k: usize) -> ConvSlot {
        let (weight, bias) = self.push(name, group, vec![cout, cin, k, k], cin * k * k);
        ConvSlot {
            weight,
            bias,
            padding: k / 2,
        }
    }

    fn block(&mut self, prefix: &str, group: Group, cin: usize, cout: usize) -> Block {
        Block {
            first: self.conv(format!("{prefix}.conv1"), group, cin, cout, 3),
            second: self.conv(format!("{prefix}.conv2"), group, cout, cout, 3),
        }
    }

    fn linear(&mut self, name: String, group: Group, fan_in: usize, fan_out: usize) -> LinearSlot {
        let (weight, bias) = self.push(name, group, vec![fan_out, fan_in], fan_in);
        LinearSlot { weight, bias }
    }
}

impl MultitaskNet {
    /// Deterministic construction: the same config and seed give
    /// bit-identical parameters.
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::build_checked(config, seed)
    }

    /// Like [`build`](Self::build) but accepts input sizes below 16 (still
    /// a power of two divisible by `2^levels`). Tiny networks make
    /// finite-difference checks of the whole model cheap.
    pub fn build_small(config: UNetConfig, seed: u64) -> Result<Self> {
        config.check(1 << config.levels.min(16))?;
        Self::build_checked(config, seed)
    }

    fn build_checked(config: UNetConfig, seed: u64) -> Result<Self> {
        let mut b = Builder {
            params: Vec::new(),
            seed,
        };
        let mut encoder = Vec::with_capacity(config.levels);
        let mut cin = 1;
        for level in 0..config.levels {
            let c = config.channels(level);
            encoder.push(b.block(&format!("enc.{level}"), Group::Encoder, cin, c));
            cin = c;
        }
        let mut decoder = Vec::with_capacity(config.levels - 1);
        for level in (0..config.levels - 1).rev() {
            let below = config.channels(level + 1);
            let c = config.channels(level);
            let prefix = format!("dec.{level}");
            let (up, upsampled) = if config.upsample_conv {
                (Some(b.conv(format!("{prefix}.up"), Group::Decoder, below, c, 3)), c)
            } else {
                (None, below)
            };
            let block = b.block(&prefix, Group::Decoder, c + upsampled, c);
            decoder.push(DecoderLevel { level, up, block });
        }
        let head = b.conv("dec.out".into(), Group::Decoder, config.channels(0), 1, 1);
        let fc1 = b.linear(
            "cls.fc1".into(),
            Group::Classifier,
            config.bottleneck_channels(),
            config.cls_hidden,
        );
        let fc2 = b.linear("cls.fc2".into(), Group::Classifier, config.cls_hidden, config.num_classes);
        Ok(MultitaskNet {
            config,
            params: b.params,
            layout: Layout {
                encoder,
                decoder,
                head,
                fc1,
                fc2,
            },
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    /// Scalar parameter count.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Indices of the parameters in `group`.
    pub fn group_indices(&self, group: Group) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].group == group)
            .collect()
    }

    /// Replace a parameter value; the shape must not change.
    pub fn set_value(&mut self, index: usize, value: Tensor) -> Result<()> {
        let p = &mut self.params[index];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value.detach();
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.params[index].value
    }

    /// Parameter views for one forward pass: members of `tracked` are
    /// registered on `tape`, the rest are constants.
    pub fn bind(&self, tape: &Tape, tracked: &[Group]) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| {
                if tracked.contains(&p.group) {
                    tape.param(&p.value)
                } else {
                    p.value.detach()
                }
            })
            .collect()
    }

    /// Untracked parameter views.
    pub fn constants(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.detach()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        match *x.shape() {
            [_, 1, h, w] if h == s && w == s => Ok(()),
            _ => Err(Error::invalid(
                "forward",
                format!("expected input [B, 1, {s}, {s}], got {:?}", x.shape()),
            )),
        }
    }

    fn conv(&self, tape: &Tape, p: &[Tensor], x: &Tensor, slot: ConvSlot) -> Result<Tensor> {
        tape.conv2d(
            x,
            &Conv2dParams {
                weight: p[slot.weight].clone(),
                bias: p[slot.bias].clone(),
                stride: 1,
                padding: slot.padding,
            },
        )
    }

    fn block(&self, tape: &Tape, p: &[Tensor], x: &Tensor, b: &Block) -> Result<Tensor> {
        let h = tape.relu(&self.conv(tape, p, x, b.first)?);
        Ok(tape.relu(&self.conv(tape, p, &h, b.second)?))
    }

    fn linear(&self, tape: &Tape, p: &[Tensor], x: &Tensor, slot: LinearSlot) -> Result<Tensor> {
        tape.linear(
            x,
            &LinearParams {
                weight: p[slot.weight].clone(),
                bias: p[slot.bias].clone(),
            },
        )
    }

    /// Encoder pass: skip activations (levels `0..L-1`) and the bottleneck.
    fn encode(&self, tape: &Tape, p: &[Tensor], x: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        self.check_input(x)?;
        if p.len() != self.params.len() {
            return Err(Error::invalid(
                "forward",
                format!("{} parameter views for {} parameters", p.len(), self.params.len()),
            ));
        }
        let last = self.layout.encoder.len() - 1;
        let mut skips = Vec::with_capacity(last);
        let mut h = x.clone();
        for (level, block) in self.layout.encoder.iter().enumerate() {
            h = self.block(tape, p, &h, block)?;
            if level < last {
                let pooled = tape.max_pool2d(&h, 2)?.output;
                skips.push(h);
                h = pooled;
            }
        }
        Ok((skips, h))
    }

    fn classify(&self, tape: &Tape, p: &[Tensor], bottleneck: &Tensor) -> Result<ClassifierOutput> {
        let features = tape.global_avg_pool(bottleneck)?;
        let hidden = tape.relu(&self.linear(tape, p, &features, self.layout.fc1)?);
        let logits = self.linear(tape, p, &hidden, self.layout.fc2)?;
        Ok(ClassifierOutput { logits, features })
    }

    fn decode(&self, tape: &Tape, p: &[Tensor], skips: &[Tensor], bottleneck: &Tensor) -> Result<Tensor> {
        let mut d = bottleneck.clone();
        for dec in &self.layout.decoder {
            let mut up = tape.upsample_nn(&d, 2)?;
            if let Some(slot) = dec.up {
                up = self.conv(tape, p, &up, slot)?;
            }
            let joined = tape.concat_channels(&skips[dec.level], &up)?;
            d = self.block(tape, p, &joined, &dec.block)?;
        }
        self.conv(tape, p, &d, self.layout.head)
    }

    /// Both heads from one shared encoder pass, using parameter views from
    /// [`bind`](Self::bind) or [`constants`](Self::constants).
    pub fn forward_with(&self, tape: &Tape, params: &[Tensor], x: &Tensor) -> Result<NetOutput> {
        let (skips, bottleneck) = self.encode(tape, params, x)?;
        let cls = self.classify(tape, params, &bottleneck)?;
        let depth = self.decode(tape, params, &skips, &bottleneck)?;
        Ok(NetOutput {
            depth,
            logits: cls.logits,
            features: cls.features,
        })
    }

    /// Encoder and classification branch only; the decoder is not evaluated.
    pub fn forward_classifier(&self, tape: &Tape, params: &[Tensor], x: &Tensor) -> Result<ClassifierOutput> {
        let (_, bottleneck) = self.encode(tape, params, x)?;
        self.classify(tape, params, &bottleneck)
    }

    /// Encoder and decoder only; the classification branch is not evaluated.
    pub fn forward_depth(&self, tape: &Tape, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let (skips, bottleneck) = self.encode(tape, params, x)?;
        self.decode(tape, params, &skips, &bottleneck)
    }

    /// Untracked forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<NetOutput> {
        self.forward_with(&Tape::new(), &self.constants(), x)
    }

    /// The pooled bottleneck activation the classification branch reads.
    pub fn classification_bottleneck_features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_classifier(&Tape::new(), &self.constants(), x)?.features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNetConfig {
        UNetConfig {
            levels: 2,
            base_channels: 8,
            input_size: 16,
            num_classes: 10,
            cls_hidden: 32,
            upsample_conv: true,
        }
    }

    fn input(b: usize, s: usize, seed: u64) -> Tensor {
        let mut r = ShiftRng::new(seed);
        Tensor::new(vec![b, 1, s, s], (0..b * s * s).map(|_| r.next_f64()).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        assert!(UNetConfig { levels: 1, ..small() }.validate().is_err());
        assert!(UNetConfig { base_channels: 2, ..small() }.validate().is_err());
        assert!(UNetConfig { input_size: 24, ..small() }.validate().is_err());
        assert!(UNetConfig { input_size: 16, levels: 5, ..small() }.validate().is_err());
    }

    #[test]
    fn parameter_count_is_fixed() {
        let net = MultitaskNet::build(small(), 1).unwrap();
        // enc: 1→8, 8→8, 8→16, 16→16; dec: up 16→8, 16→8, 8→8; head 8→1; fc 16→32→10
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let expected = conv(1, 8, 3)
            + conv(8, 8, 3)
            + conv(8, 16, 3)
            + conv(16, 16, 3)
            + conv(16, 8, 3)
            + conv(16, 8, 3)
            + conv(8, 8, 3)
            + conv(8, 1, 1)
            + (16 * 32 + 32)
            + (32 * 10 + 10);
        assert_eq!(net.num_weights(), expected);
        assert_eq!(net.num_weights(), 7_939);
        let other = MultitaskNet::build(small(), 99).unwrap();
        assert_eq!(other.num_weights(), expected);
    }

    #[test]
    fn same_seed_same_bits() {
        let a = MultitaskNet::build(small(), 5).unwrap();
        let b = MultitaskNet::build(small(), 5).unwrap();
        let c = MultitaskNet::build(small(), 6).unwrap();
        assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.value.bit_eq(&y.value)));
        assert!(!a.params.iter().zip(&c.params).all(|(x, y)| x.value.bit_eq(&y.value)));
    }

    #[test]
    fn groups_partition_parameters() {
        let net = MultitaskNet::build(small(), 1).unwrap();
        let mut all: Vec<usize> = Group::ALL.iter().flat_map(|&g| net.group_indices(g)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..net.parameters().len()).collect::<Vec<_>>());
        assert!(net.parameters().iter().all(|p| match p.group {
            Group::Encoder => p.name.starts_with("enc."),
            Group::Decoder => p.name.starts_with("dec."),
            Group::Classifier => p.name.starts_with("cls."),
        }));
    }

    #[test]
    fn output_shapes() {
        let net = MultitaskNet::build(small(), 1).unwrap();
        let out = net.forward(&input(3, 16, 0)).unwrap();
        assert_eq!(out.depth.shape(), &[3, 1, 16, 16]);
        assert_eq!(out.logits.shape(), &[3, 10]);
        assert_eq!(out.features.shape(), &[3, 16]);
        assert!(net.forward(&input(1, 32, 0)).is_err());
    }

    #[test]
    fn zero_input_zero_final_layers_uniform_softmax() {
        let mut net = MultitaskNet::build(small(), 1).unwrap();
        let idx = net.find("cls.fc2.weight").unwrap();
        net.set_value(idx, Tensor::zeros(&[10, 32])).unwrap();
        let out = net.forward(&Tensor::zeros(&[2, 1, 16, 16])).unwrap();
        let l = out.logits.data();
        assert!(l.iter().all(|&v| v == l[0]));
        let p = crate::nn::softmax_rows(l, 10);
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn forward_deterministic() {
        let net = MultitaskNet::build(small(), 3).unwrap();
        let x = input(2, 16, 4);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert!(a.depth.bit_eq(&b.depth) && a.logits.bit_eq(&b.logits));
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = MultitaskNet::build(small(), 3).unwrap();
        let x = input(3, 16, 8);
        let joint = net.forward(&x).unwrap();
        let row = Tensor::new(vec![1, 1, 16, 16], x.data()[256..512].to_vec()).unwrap();
        let single = net.forward(&row).unwrap();
        assert_eq!(&joint.logits.data()[10..20], single.logits.data());
        assert_eq!(&joint.depth.data()[256..512], single.depth.data());
    }

    #[test]
    fn features_are_mean_of_bottleneck() {
        let net = MultitaskNet::build(small(), 2).unwrap();
        let x = input(2, 16, 1);
        let tape = Tape::new();
        let p = net.constants();
        let (_, bottleneck) = net.encode(&tape, &p, &x).unwrap();
        let feats = net.classification_bottleneck_features(&x).unwrap();
        assert_eq!(feats.shape(), &[2, 16]);
        let area = 8 * 8;
        for (i, plane) in bottleneck.data().chunks(area).enumerate() {
            let mean = plane.iter().sum::<f64>() / area as f64;
            assert!((feats.data()[i] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_rows_give_constant_features() {
        let net = MultitaskNet::build(small(), 2).unwrap();
        let x = Tensor::full(&[3, 1, 16, 16], 0.4);
        let f = net.classification_bottleneck_features(&x).unwrap();
        let c = 16;
        assert_eq!(&f.data()[..c], &f.data()[c..2 * c]);
        assert_eq!(&f.data()[..c], &f.data()[2 * c..]);
    }

    #[test]
    fn shared_encoder_receives_both_losses() {
        let net = MultitaskNet::build(small(), 2).unwrap();
        let x = input(2, 16, 1);
        let tape = Tape::new();
        let p = net.bind(&tape, &Group::ALL);
        let out = net.forward_with(&tape, &p, &x).unwrap();
        let ce = tape
            .weighted_cross_entropy(&out.logits, &[1, 2], &crate::nn::ClassWeights::uniform(10))
            .unwrap();
        let mse = tape.mse_loss(&out.depth, &Tensor::zeros(&[2, 1, 16, 16])).unwrap();
        let g_ce = tape.backward(&ce).unwrap();
        let g_mse = tape.backward(&mse).unwrap();
        for i in net.group_indices(Group::Encoder) {
            assert!(g_ce.get(&p[i]).is_some() && g_mse.get(&p[i]).is_some());
        }
        for i in net.group_indices(Group::Decoder) {
            assert!(g_ce.get(&p[i]).is_none());
        }
        for i in net.group_indices(Group::Classifier) {
            assert!(g_mse.get(&p[i]).is_none());
        }
    }

    #[test]
    fn without_upsample_conv() {
        let cfg = UNetConfig { upsample_conv: false, ..small() };
        let net = MultitaskNet::build(cfg, 1).unwrap();
        assert!(net.find("dec.0.up.weight").is_none());
        assert_eq!(net.forward(&input(1, 16, 0)).unwrap().depth.shape(), &[1, 1, 16, 16]);
    }
}
