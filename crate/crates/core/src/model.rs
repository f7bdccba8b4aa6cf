use crate::error::{Error, Result};
use crate::nn::{
    fc_backward, fc_forward, gated_block_backward, gated_block_forward, maxpool_backward, maxpool_forward,
    sgd_step_slice, softmax, FcParams, GatedBlockForward, Mode, PoolForward,
};
use crate::nn::{BatchNormParams, ConvParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The four published network variants. B1/B2 take 227x227 input, B3/B4 take
/// 192x192; B2/B4 use a 3x3 kernel in the third gated block, B1/B3 use 1x1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    B1,
    B2,
    B3,
    B4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::B1, Variant::B2, Variant::B3, Variant::B4];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::B1 => "B1",
            Variant::B2 => "B2",
            Variant::B3 => "B3",
            Variant::B4 => "B4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "B1" | "b1" => Ok(Variant::B1),
            "B2" | "b2" => Ok(Variant::B2),
            "B3" | "b3" => Ok(Variant::B3),
            "B4" | "b4" => Ok(Variant::B4),
            other => Err(Error::Config(format!("unknown variant {other:?}, expected B1..B4"))),
        }
    }

    /// Stable one-byte code used by the checkpoint format.
    pub fn code(self) -> u8 {
        match self {
            Variant::B1 => 1,
            Variant::B2 => 2,
            Variant::B3 => 3,
            Variant::B4 => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Variant::B1),
            2 => Ok(Variant::B2),
            3 => Ok(Variant::B3),
            4 => Ok(Variant::B4),
            other => Err(Error::Format(format!("unknown variant code {other}"))),
        }
    }

    pub fn input_resolution(self) -> usize {
        match self {
            Variant::B1 | Variant::B2 => 227,
            Variant::B3 | Variant::B4 => 192,
        }
    }

    pub fn cb3_kernel(self) -> usize {
        match self {
            Variant::B1 | Variant::B3 => 1,
            Variant::B2 | Variant::B4 => 3,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lowest score the networks predict; class index `i` means score `i + 2`.
pub const SCORE_OFFSET: u8 = 2;
/// Number of score classes (scores 2 through 9).
pub const CLASS_COUNT: usize = 8;

/// Layer topology, decoupled from the published variants so tests can build
/// structurally identical networks at reduced width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub input_resolution: usize,
    pub input_channels: usize,
    /// Output channels of the three gated blocks.
    pub cb_channels: [usize; 3],
    /// Kernel size of the third gated block (the first two are always 1x1).
    pub cb3_kernel: usize,
    /// Pool window (= stride) after the first and second gated blocks.
    pub pools: [usize; 2],
    pub fc_hidden: usize,
    pub class_count: usize,
}

impl NetworkShape {
    pub fn for_variant(v: Variant) -> Self {
        NetworkShape {
            input_resolution: v.input_resolution(),
            input_channels: 3,
            cb_channels: [128, 96, 96],
            cb3_kernel: v.cb3_kernel(),
            pools: [8, 4],
            fc_hidden: 36,
            class_count: CLASS_COUNT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.cb_channels.contains(&0) || self.fc_hidden == 0 {
            return Err(Error::Shape("network widths must be nonzero".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Shape("network needs at least two classes".into()));
        }
        if self.cb3_kernel != 1 && self.cb3_kernel != 3 {
            return Err(Error::Shape(format!("cb3 kernel must be 1 or 3, got {}", self.cb3_kernel)));
        }
        if self.pools.contains(&0) {
            return Err(Error::Shape("pool windows must be positive".into()));
        }
        if self.input_resolution < self.pools[0] || self.pooled1() < self.pools[1] {
            return Err(Error::Shape(format!(
                "input resolution {} too small for pools {:?}",
                self.input_resolution, self.pools
            )));
        }
        if self.pooled2() < self.cb3_kernel {
            return Err(Error::Shape("pooled resolution smaller than the third block's kernel".into()));
        }
        Ok(())
    }

    /// Spatial side after the first pool: `(r - k) / k + 1`.
    pub fn pooled1(&self) -> usize {
        (self.input_resolution - self.pools[0]) / self.pools[0] + 1
    }

    /// Spatial side after the second pool.
    pub fn pooled2(&self) -> usize {
        (self.pooled1() - self.pools[1]) / self.pools[1] + 1
    }

    /// Flattened feature count entering the first fully-connected layer.
    pub fn fc_in(&self) -> usize {
        self.pooled2() * self.pooled2() * self.cb_channels[2]
    }
}

/// One row of the architecture summary: operator, input resolution to that
/// stage, and output channels (or units).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRow {
    pub name: &'static str,
    pub op: StageOp,
    pub input_resolution: (usize, usize),
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOp {
    /// Gated conv block with the given square kernel size.
    ConvGated(usize),
    FullyConnected,
}

/// Validated model specification for one published variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_resolution: usize,
    pub stages: Vec<StageRow>,
    pub class_count: usize,
    pub score_offset: u8,
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let shape = NetworkShape::for_variant(variant);
        ModelConfig {
            variant,
            input_resolution: shape.input_resolution,
            stages: stage_rows_for_shape(&shape),
            class_count: shape.class_count,
            score_offset: SCORE_OFFSET,
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape::for_variant(self.variant)
    }
}

fn stage_rows_for_shape(shape: &NetworkShape) -> Vec<StageRow> {
    let r = shape.input_resolution;
    let p1 = shape.pooled1();
    let p2 = shape.pooled2();
    vec![
        StageRow { name: "CB1", op: StageOp::ConvGated(1), input_resolution: (r, r), channels: shape.cb_channels[0] },
        StageRow { name: "CB2", op: StageOp::ConvGated(1), input_resolution: (p1, p1), channels: shape.cb_channels[1] },
        StageRow {
            name: "CB3",
            op: StageOp::ConvGated(shape.cb3_kernel),
            input_resolution: (p2, p2),
            channels: shape.cb_channels[2],
        },
        StageRow { name: "fc_1", op: StageOp::FullyConnected, input_resolution: (p2, p2), channels: shape.fc_hidden },
        StageRow {
            name: "fc_2",
            op: StageOp::FullyConnected,
            input_resolution: (1, shape.fc_hidden),
            channels: shape.class_count,
        },
    ]
}

/// Optimizer settings and provenance counters carried with the parameters
/// (and stored in checkpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub epochs_trained: u32,
    pub rsrl_iteration: u32,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta { learning_rate: 0.01, momentum: 0.9, seed: 0, epochs_trained: 0, rsrl_iteration: 0 }
    }
}

/// One gated block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBlock<T> {
    pub conv: ConvParams<T>,
    pub bn: BatchNormParams<T>,
}

/// A complete network: three gated blocks with pooling after the first two,
/// then two fully-connected layers producing one logit per score class.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    shape: NetworkShape,
    /// `Some` when the shape is one of the published variants; custom-width
    /// networks (used by verification) carry `None` and cannot be checkpointed.
    variant: Option<Variant>,
    pub meta: TrainingMeta,
    pub cb1: GateBlock<T>,
    pub cb2: GateBlock<T>,
    pub cb3: GateBlock<T>,
    pub fc1: FcParams<T>,
    pub fc2: FcParams<T>,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Builds a He-initialized network for a published variant. The same seed
/// always produces the same parameters.
pub fn build<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Network<T>> {
    let mut net = build_with_shape(NetworkShape::for_variant(config.variant), seed)?;
    net.variant = Some(config.variant);
    Ok(net)
}

/// Builds a network with an arbitrary (validated) shape. Initialization
/// order is fixed: CB1, CB2, CB3, fc_1, fc_2 from a single seeded stream.
pub fn build_with_shape<T: Scalar>(shape: NetworkShape, seed: u64) -> Result<Network<T>> {
    shape.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, "model-init"));
    let eps = T::real(BN_EPSILON);
    let mom = T::real(BN_MOMENTUM);
    let cb1 = GateBlock {
        conv: ConvParams::he_init(shape.input_channels, shape.cb_channels[0], 1, &mut rng)?,
        bn: BatchNormParams::identity(shape.cb_channels[0], eps, mom)?,
    };
    let cb2 = GateBlock {
        conv: ConvParams::he_init(shape.cb_channels[0], shape.cb_channels[1], 1, &mut rng)?,
        bn: BatchNormParams::identity(shape.cb_channels[1], eps, mom)?,
    };
    let cb3 = GateBlock {
        conv: ConvParams::he_init(shape.cb_channels[1], shape.cb_channels[2], shape.cb3_kernel, &mut rng)?,
        bn: BatchNormParams::identity(shape.cb_channels[2], eps, mom)?,
    };
    let fc1 = FcParams::he_init(shape.fc_in(), shape.fc_hidden, &mut rng)?;
    let fc2 = FcParams::he_init(shape.fc_hidden, shape.class_count, &mut rng)?;
    Ok(Network {
        shape,
        variant: None,
        meta: TrainingMeta { seed, ..TrainingMeta::default() },
        cb1,
        cb2,
        cb3,
        fc1,
        fc2,
    })
}

/// What a forward pass exposes to consumers: logits, softmax probabilities,
/// and the activations of the last gated block (for attention extraction).
#[derive(Debug, Clone)]
pub struct ForwardArtifacts<T> {
    /// `(batch, class_count, 1, 1)`.
    pub logits: Tensor<T>,
    /// Per-sample softmax of the logits, same shape.
    pub probs: Tensor<T>,
    /// `(batch, cb_channels[2], pooled2, pooled2)`.
    pub last_conv_maps: Tensor<T>,
}

/// Everything the backward pass and the running-stat commit need.
pub struct ForwardTrace<T> {
    pub cb1: GatedBlockForward<T>,
    pub pool1: PoolForward<T>,
    pub cb2: GatedBlockForward<T>,
    pub pool2: PoolForward<T>,
    pub cb3: GatedBlockForward<T>,
    pub fc1_out: Tensor<T>,
    pub logits: Tensor<T>,
}

impl<T: Scalar> Network<T> {
    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn variant(&self) -> Option<Variant> {
        self.variant
    }

    /// Architecture summary derived from the actual parameter tensors, not
    /// from the construction-time constants.
    pub fn stage_rows(&self) -> Vec<StageRow> {
        let realized = NetworkShape {
            input_resolution: self.shape.input_resolution,
            input_channels: self.cb1.conv.in_channels(),
            cb_channels: [
                self.cb1.conv.out_channels(),
                self.cb2.conv.out_channels(),
                self.cb3.conv.out_channels(),
            ],
            cb3_kernel: self.cb3.conv.kernel(),
            pools: self.shape.pools,
            fc_hidden: self.fc1.out_features,
            class_count: self.fc2.out_features,
        };
        stage_rows_for_shape(&realized)
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let [b, c, h, w] = batch.dims();
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let r = self.shape.input_resolution;
        if c != self.shape.input_channels || h != r || w != r {
            return Err(Error::Shape(format!(
                "expected input ({}, {}, {r}, {r}), got {:?}",
                b, self.shape.input_channels, batch.dims()
            )));
        }
        Ok(())
    }

    /// Full forward pass keeping every intermediate needed for backward.
    pub fn forward_trace(&self, batch: &Tensor<T>, mode: Mode) -> Result<ForwardTrace<T>> {
        self.check_input(batch)?;
        let cb1 = gated_block_forward(batch, &self.cb1.conv, &self.cb1.bn, mode)?;
        let pool1 = maxpool_forward(&cb1.output, self.shape.pools[0], self.shape.pools[0])?;
        let cb2 = gated_block_forward(&pool1.output, &self.cb2.conv, &self.cb2.bn, mode)?;
        let pool2 = maxpool_forward(&cb2.output, self.shape.pools[1], self.shape.pools[1])?;
        let cb3 = gated_block_forward(&pool2.output, &self.cb3.conv, &self.cb3.bn, mode)?;
        let fc1_out = fc_forward(&cb3.output, &self.fc1)?;
        let logits = fc_forward(&fc1_out, &self.fc2)?;
        Ok(ForwardTrace { cb1, pool1, cb2, pool2, cb3, fc1_out, logits })
    }

    /// Forward pass returning only the consumer-facing artifacts.
    pub fn forward(&self, batch: &Tensor<T>, mode: Mode) -> Result<ForwardArtifacts<T>> {
        let trace = self.forward_trace(batch, mode)?;
        self.artifacts_from_trace(&trace)
    }

    pub fn artifacts_from_trace(&self, trace: &ForwardTrace<T>) -> Result<ForwardArtifacts<T>> {
        let [b, n, _, _] = trace.logits.dims();
        let mut probs = Tensor::zeros(trace.logits.dims());
        for bi in 0..b {
            let row = softmax(&trace.logits.values()[bi * n..(bi + 1) * n])?;
            probs.values_mut()[bi * n..(bi + 1) * n].copy_from_slice(&row);
        }
        Ok(ForwardArtifacts { logits: trace.logits.clone(), probs, last_conv_maps: trace.cb3.output.clone() })
    }

    /// Adopts the running statistics a train-mode forward produced.
    pub fn commit_running_stats(&mut self, trace: &ForwardTrace<T>) {
        self.cb1.bn.running_mean = trace.cb1.running_mean.clone();
        self.cb1.bn.running_var = trace.cb1.running_var.clone();
        self.cb2.bn.running_mean = trace.cb2.running_mean.clone();
        self.cb2.bn.running_var = trace.cb2.running_var.clone();
        self.cb3.bn.running_mean = trace.cb3.running_mean.clone();
        self.cb3.bn.running_var = trace.cb3.running_var.clone();
    }

    /// Backward pass through the whole network. `logit_grad` is the loss
    /// gradient at the logits; the input gradient is computed only on demand.
    pub fn backward(
        &self,
        batch: &Tensor<T>,
        trace: &ForwardTrace<T>,
        logit_grad: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<(NetworkGrads<T>, Option<Tensor<T>>)> {
        let fc2_g = fc_backward(&trace.fc1_out, &self.fc2, logit_grad)?;
        let fc1_g = fc_backward(&trace.cb3.output, &self.fc1, &fc2_g.input)?;
        let cb3_g = gated_block_backward(&trace.pool2.output, &self.cb3.conv, &self.cb3.bn, &trace.cb3, &fc1_g.input, true)?;
        let d_pool2 = cb3_g.input.as_ref().expect("input grad requested");
        let d_cb2_out = maxpool_backward(&trace.pool2, d_pool2)?;
        let cb2_g = gated_block_backward(&trace.pool1.output, &self.cb2.conv, &self.cb2.bn, &trace.cb2, &d_cb2_out, true)?;
        drop(d_cb2_out);
        let d_pool1 = cb2_g.input.as_ref().expect("input grad requested");
        let d_cb1_out = maxpool_backward(&trace.pool1, d_pool1)?;
        let cb1_g = gated_block_backward(batch, &self.cb1.conv, &self.cb1.bn, &trace.cb1, &d_cb1_out, want_input_grad)?;
        let input_grad = cb1_g.input;

        let grads = NetworkGrads {
            blocks: vec![
                ("cb1.conv.weight", cb1_g.conv_weights.into_values()),
                ("cb1.conv.bias", cb1_g.conv_bias),
                ("cb1.bn.scale", cb1_g.bn_scale),
                ("cb1.bn.shift", cb1_g.bn_shift),
                ("cb2.conv.weight", cb2_g.conv_weights.into_values()),
                ("cb2.conv.bias", cb2_g.conv_bias),
                ("cb2.bn.scale", cb2_g.bn_scale),
                ("cb2.bn.shift", cb2_g.bn_shift),
                ("cb3.conv.weight", cb3_g.conv_weights.into_values()),
                ("cb3.conv.bias", cb3_g.conv_bias),
                ("cb3.bn.scale", cb3_g.bn_scale),
                ("cb3.bn.shift", cb3_g.bn_shift),
                ("fc1.weight", fc1_g.weights),
                ("fc1.bias", fc1_g.bias),
                ("fc2.weight", fc2_g.weights),
                ("fc2.bias", fc2_g.bias),
            ],
        };
        Ok((grads, input_grad))
    }

    /// Named views of the trainable parameter blocks, in checkpoint order.
    pub fn trainable_blocks(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("cb1.conv.weight", self.cb1.conv.weights.values()),
            ("cb1.conv.bias", &self.cb1.conv.bias),
            ("cb1.bn.scale", &self.cb1.bn.scale),
            ("cb1.bn.shift", &self.cb1.bn.shift),
            ("cb2.conv.weight", self.cb2.conv.weights.values()),
            ("cb2.conv.bias", &self.cb2.conv.bias),
            ("cb2.bn.scale", &self.cb2.bn.scale),
            ("cb2.bn.shift", &self.cb2.bn.shift),
            ("cb3.conv.weight", self.cb3.conv.weights.values()),
            ("cb3.conv.bias", &self.cb3.conv.bias),
            ("cb3.bn.scale", &self.cb3.bn.scale),
            ("cb3.bn.shift", &self.cb3.bn.shift),
            ("fc1.weight", &self.fc1.weights),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weight", &self.fc2.weights),
            ("fc2.bias", &self.fc2.bias),
        ]
    }

    pub fn trainable_blocks_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        vec![
            ("cb1.conv.weight", self.cb1.conv.weights.values_mut()),
            ("cb1.conv.bias", &mut self.cb1.conv.bias),
            ("cb1.bn.scale", &mut self.cb1.bn.scale),
            ("cb1.bn.shift", &mut self.cb1.bn.shift),
            ("cb2.conv.weight", self.cb2.conv.weights.values_mut()),
            ("cb2.conv.bias", &mut self.cb2.conv.bias),
            ("cb2.bn.scale", &mut self.cb2.bn.scale),
            ("cb2.bn.shift", &mut self.cb2.bn.shift),
            ("cb3.conv.weight", self.cb3.conv.weights.values_mut()),
            ("cb3.conv.bias", &mut self.cb3.conv.bias),
            ("cb3.bn.scale", &mut self.cb3.bn.scale),
            ("cb3.bn.shift", &mut self.cb3.bn.shift),
            ("fc1.weight", &mut self.fc1.weights),
            ("fc1.bias", &mut self.fc1.bias),
            ("fc2.weight", &mut self.fc2.weights),
            ("fc2.bias", &mut self.fc2.bias),
        ]
    }

    /// Running batchnorm statistics, stored in checkpoints but not trained.
    pub fn state_blocks(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("cb1.bn.running_mean", &self.cb1.bn.running_mean),
            ("cb1.bn.running_var", &self.cb1.bn.running_var),
            ("cb2.bn.running_mean", &self.cb2.bn.running_mean),
            ("cb2.bn.running_var", &self.cb2.bn.running_var),
            ("cb3.bn.running_mean", &self.cb3.bn.running_mean),
            ("cb3.bn.running_var", &self.cb3.bn.running_var),
        ]
    }

    pub fn state_blocks_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        vec![
            ("cb1.bn.running_mean", &mut self.cb1.bn.running_mean),
            ("cb1.bn.running_var", &mut self.cb1.bn.running_var),
            ("cb2.bn.running_mean", &mut self.cb2.bn.running_mean),
            ("cb2.bn.running_var", &mut self.cb2.bn.running_var),
            ("cb3.bn.running_mean", &mut self.cb3.bn.running_mean),
            ("cb3.bn.running_var", &mut self.cb3.bn.running_var),
        ]
    }

    /// Number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        self.trainable_blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// One SGD step over every trainable block.
    pub fn sgd_step(&mut self, grads: &NetworkGrads<T>, state: &mut SgdState<T>) -> Result<()> {
        let lr = state.learning_rate;
        let mom = state.momentum;
        let mut blocks = self.trainable_blocks_mut();
        if grads.blocks.len() != blocks.len() || state.velocity.len() != blocks.len() {
            return Err(Error::Shape("gradient/velocity block count mismatch".into()));
        }
        for (i, (name, params)) in blocks.iter_mut().enumerate() {
            let (gname, g) = &grads.blocks[i];
            if gname != name {
                return Err(Error::Shape(format!("gradient block {gname} where {name} expected")));
            }
            sgd_step_slice(params, g, &mut state.velocity[i], lr, mom)?;
        }
        Ok(())
    }

    /// Re-express the network at another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        fn vcast<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
            v.iter().map(|x| U::real(x.widen())).collect()
        }
        let bn_cast = |bn: &BatchNormParams<T>| BatchNormParams {
            scale: vcast(&bn.scale),
            shift: vcast(&bn.shift),
            running_mean: vcast(&bn.running_mean),
            running_var: vcast(&bn.running_var),
            epsilon: U::real(bn.epsilon.widen()),
            momentum: U::real(bn.momentum.widen()),
        };
        let block_cast = |b: &GateBlock<T>| GateBlock {
            conv: ConvParams { weights: b.conv.weights.cast(), bias: vcast(&b.conv.bias) },
            bn: bn_cast(&b.bn),
        };
        let fc_cast = |f: &FcParams<T>| FcParams {
            weights: vcast(&f.weights),
            bias: vcast(&f.bias),
            in_features: f.in_features,
            out_features: f.out_features,
        };
        Network {
            shape: self.shape,
            variant: self.variant,
            meta: self.meta.clone(),
            cb1: block_cast(&self.cb1),
            cb2: block_cast(&self.cb2),
            cb3: block_cast(&self.cb3),
            fc1: fc_cast(&self.fc1),
            fc2: fc_cast(&self.fc2),
        }
    }
}

/// Per-block gradients in the same order as [`Network::trainable_blocks`].
#[derive(Debug, Clone)]
pub struct NetworkGrads<T> {
    pub blocks: Vec<(&'static str, Vec<T>)>,
}

impl<T: Scalar> NetworkGrads<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.blocks.iter().find(|(n, _)| *n == name).map(|(_, v)| v.as_slice())
    }
}

/// Momentum state for a whole network, aligned with the trainable blocks.
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub learning_rate: T,
    pub momentum: T,
    pub seed: u64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> SgdState<T> {
    /// Fresh (zero-velocity) state taking hyperparameters from the network's
    /// training metadata.
    pub fn new(net: &Network<T>) -> Self {
        SgdState {
            learning_rate: T::real(net.meta.learning_rate),
            momentum: T::real(net.meta.momentum),
            seed: net.meta.seed,
            velocity: net.trainable_blocks().iter().map(|(_, b)| vec![T::zero(); b.len()]).collect(),
        }
    }
}

/// Index of the largest probability; ties resolve to the lowest index.
pub fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicts the score of a single preprocessed image `(1, 3, r, r)`.
/// Returns the score (2..=9) and the eight class probabilities.
pub fn predict_score<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<(u8, Vec<T>)> {
    if image.batch() != 1 {
        return Err(Error::Shape(format!("predict_score takes a single image, got batch {}", image.batch())));
    }
    Ok(predict_scores(net, image)?.pop().expect("batch of one"))
}

/// Batched prediction. Inference normalizes per sample with running
/// statistics, so the result per image is independent of how images are
/// grouped into batches.
pub fn predict_scores<T: Scalar>(net: &Network<T>, batch: &Tensor<T>) -> Result<Vec<(u8, Vec<T>)>> {
    if net.shape.class_count != CLASS_COUNT {
        return Err(Error::Shape(format!(
            "score prediction is defined for {CLASS_COUNT}-class networks, this one has {}",
            net.shape.class_count
        )));
    }
    let artifacts = net.forward(batch, Mode::Infer)?;
    let n = net.shape.class_count;
    Ok((0..batch.batch())
        .map(|bi| {
            let probs = artifacts.probs.values()[bi * n..(bi + 1) * n].to_vec();
            let idx = argmax_lowest(&probs);
            (idx as u8 + SCORE_OFFSET, probs)
        })
        .collect())
}
