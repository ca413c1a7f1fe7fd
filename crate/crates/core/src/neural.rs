//! Two-headed residual MLP `(p, v) = f(s)` with hand-written backprop,
//! the AlphaZero loss, SGD with momentum and a versioned checkpoint format.
//!
//! Layout: `stem -> depth x [Linear -> ReLU -> Linear (+skip) -> ReLU]`,
//! then a masked-softmax policy head and a tanh value head. Everything is
//! generic over [`Real`] so gradients can be checked in `f64`; training and
//! checkpoints use `f32`.

use std::collections::VecDeque;
use std::fmt::Debug;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_traits::Float;
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ActionMask, GameKind};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mask allows no action")]
    EmptyMask,
    #[error("empty training batch")]
    EmptyBatch,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("checkpoint config mismatch on `{field}`: file has {found}, expected {expected}")]
    ConfigMismatch { field: &'static str, expected: String, found: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub action_count: usize,
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl NetConfig {
    /// Widths, depths, learning rates and L2 weights used for each game.
    pub fn for_game(game: GameKind) -> Self {
        let spec = game.spec();
        let (depth, learning_rate) = match game {
            GameKind::Ttt3 => (2, 1e-3),
            GameKind::Ttt4 | GameKind::Connect4 => (4, 1e-4),
        };
        NetConfig {
            input_dim: spec.feature_len(),
            width: 128,
            depth,
            action_count: spec.action_count,
            l2_lambda: 1e-4,
            learning_rate,
            momentum: 0.9,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(NetError::InvalidConfig(msg.to_string()));
        if self.width == 0 || self.depth == 0 {
            return fail("width and depth must be at least 1");
        }
        if self.input_dim == 0 || self.action_count == 0 || self.action_count > 64 {
            return fail("input_dim must be positive and action_count in 1..=64");
        }
        if !(self.l2_lambda >= 0.0) {
            return fail("l2_lambda must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return fail("learning_rate must be positive and momentum in [0, 1)");
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let linear = |i: usize, o: usize| i * o + o;
        linear(self.input_dim, self.width)
            + self.depth * 2 * linear(self.width, self.width)
            + linear(self.width, self.action_count)
            + linear(self.width, 1)
    }
}

/// Dense layer `y = W x + b`, with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    fn he_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = (0..inputs * outputs).map(|_| T::from_f64(dist.sample(rng))).collect();
        Linear { inputs, outputs, weight, bias: vec![T::zero(); outputs] }
    }

    fn forward(&self, x: &[T], out: &mut [T]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weight.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = dot(row, x) + *b;
        }
    }

    /// Accumulates parameter gradients and returns nothing; `dx`, when given,
    /// receives `W^T dy` (added).
    fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>, dx: Option<&mut [T]>) {
        for ((g_row, gb), &d) in grad.weight.chunks_exact_mut(self.inputs).zip(&mut grad.bias).zip(dy) {
            if d == T::zero() {
                continue;
            }
            axpy(d, x, g_row);
            *gb = *gb + d;
        }
        if let Some(dx) = dx {
            for (row, &d) in self.weight.chunks_exact(self.inputs).zip(dy) {
                if d != T::zero() {
                    axpy(d, row, dx);
                }
            }
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let (rest_a, rest_b) = (chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] = acc[i] + ca[i] * cb[i];
        }
    }
    let mut sum = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (&x, &y) in rest_a.iter().zip(rest_b) {
        sum = sum + x * y;
    }
    sum
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Every trainable tensor of the network. Also used for gradients and
/// optimizer state, which share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers<T> {
    pub stem: Linear<T>,
    pub blocks: Vec<[Linear<T>; 2]>,
    pub policy: Linear<T>,
    pub value: Linear<T>,
}

impl<T: Real> Layers<T> {
    fn zeros(config: &NetConfig) -> Self {
        let w = config.width;
        Layers {
            stem: Linear::zeros(config.input_dim, w),
            blocks: (0..config.depth).map(|_| [Linear::zeros(w, w), Linear::zeros(w, w)]).collect(),
            policy: Linear::zeros(w, config.action_count),
            value: Linear::zeros(w, 1),
        }
    }

    fn linears(&self) -> impl Iterator<Item = &Linear<T>> {
        std::iter::once(&self.stem)
            .chain(self.blocks.iter().flatten())
            .chain([&self.policy, &self.value])
    }

    fn linears_mut(&mut self) -> impl Iterator<Item = &mut Linear<T>> {
        std::iter::once(&mut self.stem)
            .chain(self.blocks.iter_mut().flatten())
            .chain([&mut self.policy, &mut self.value])
    }

    /// Flat views in checkpoint order: for each layer, weight then bias.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.linears().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.linears_mut().flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()]).collect()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["stem.weight".to_string(), "stem.bias".to_string()];
        for i in 0..self.blocks.len() {
            for j in 0..2 {
                names.push(format!("block{i}.fc{j}.weight"));
                names.push(format!("block{i}.fc{j}.bias"));
            }
        }
        names.extend(["policy.weight", "policy.bias", "value.weight", "value.bias"].map(String::from));
        names
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &Layers<T>) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(alpha, src, dst);
        }
    }

    fn first_non_finite(&self) -> Option<(String, usize)> {
        let names = self.tensor_names();
        self.tensors()
            .iter()
            .zip(names)
            .find_map(|(t, name)| t.iter().position(|v| !v.is_finite()).map(|i| (name, i)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T = f32> {
    pub config: NetConfig,
    pub layers: Layers<T>,
}

pub type Gradients<T = f32> = Layers<T>;

#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput<T = f32> {
    pub policy: Vec<T>,
    pub value: T,
}

/// Activations kept from a forward pass for backprop.
struct Trace<T> {
    input: Vec<T>,
    stem_pre: Vec<T>,
    /// Per block: block input, hidden pre-activation, output pre-activation.
    blocks: Vec<(Vec<T>, Vec<T>, Vec<T>)>,
    trunk: Vec<T>,
    log_policy: Vec<T>,
    policy: Vec<T>,
    value: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub value: f64,
    pub policy: f64,
    pub l2: f64,
}

impl<T: Real> NetParams<T> {
    /// He-uniform weights and zero biases drawn from `config.seed`.
    pub fn init(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w = config.width;
        let layers = Layers {
            stem: Linear::he_uniform(config.input_dim, w, &mut rng),
            blocks: (0..config.depth)
                .map(|_| [Linear::he_uniform(w, w, &mut rng), Linear::he_uniform(w, w, &mut rng)])
                .collect(),
            policy: Linear::he_uniform(w, config.action_count, &mut rng),
            value: Linear::he_uniform(w, 1, &mut rng),
        };
        Ok(NetParams { config, layers })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = Layers::zeros(&config);
        Ok(NetParams { config, layers })
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Layers::zeros(&self.config)
    }

    fn check_input(&self, features: &[T], mask: ActionMask) -> Result<()> {
        if features.len() != self.config.input_dim {
            return Err(NetError::DimensionMismatch { expected: self.config.input_dim, found: features.len() });
        }
        if mask.len() != self.config.action_count {
            return Err(NetError::DimensionMismatch { expected: self.config.action_count, found: mask.len() });
        }
        if mask.is_empty() {
            return Err(NetError::EmptyMask);
        }
        Ok(())
    }

    fn trunk_forward(&self, features: &[T], mut trace: Option<&mut Trace<T>>) -> Vec<T> {
        let w = self.config.width;
        let mut pre = vec![T::zero(); w];
        self.layers.stem.forward(features, &mut pre);
        let mut h: Vec<T> = pre.iter().map(|&x| relu(x)).collect();
        if let Some(t) = trace.as_deref_mut() {
            t.stem_pre = pre;
        }
        let mut hidden = vec![T::zero(); w];
        for [fc0, fc1] in &self.layers.blocks {
            fc0.forward(&h, &mut hidden);
            let act: Vec<T> = hidden.iter().map(|&x| relu(x)).collect();
            let mut out = vec![T::zero(); w];
            fc1.forward(&act, &mut out);
            for (o, &x) in out.iter_mut().zip(&h) {
                *o = *o + x;
            }
            let next: Vec<T> = out.iter().map(|&x| relu(x)).collect();
            if let Some(t) = trace.as_deref_mut() {
                t.blocks.push((std::mem::replace(&mut h, next), hidden.clone(), out));
            } else {
                h = next;
            }
        }
        h
    }

    fn heads(&self, trunk: &[T], mask: ActionMask) -> (Vec<T>, Vec<T>, T) {
        let actions = self.config.action_count;
        let mut logits = vec![T::zero(); actions];
        self.layers.policy.forward(trunk, &mut logits);
        let max = mask.iter().map(|a| logits[a]).fold(T::neg_infinity(), T::max);
        let log_z = max + mask.iter().map(|a| (logits[a] - max).exp()).sum::<T>().ln();
        let mut log_policy = vec![T::neg_infinity(); actions];
        let mut policy = vec![T::zero(); actions];
        for a in mask.iter() {
            log_policy[a] = logits[a] - log_z;
            policy[a] = log_policy[a].exp();
        }
        let mut v = [T::zero()];
        self.layers.value.forward(trunk, &mut v);
        (log_policy, policy, v[0].tanh())
    }

    /// Masked-softmax policy and tanh value for one encoded position.
    pub fn forward(&self, features: &[T], mask: ActionMask) -> Result<NetOutput<T>> {
        self.check_input(features, mask)?;
        let trunk = self.trunk_forward(features, None);
        let (_, policy, value) = self.heads(&trunk, mask);
        Ok(NetOutput { policy, value })
    }

    /// Value head only.
    pub fn value(&self, features: &[T]) -> Result<T> {
        if features.len() != self.config.input_dim {
            return Err(NetError::DimensionMismatch { expected: self.config.input_dim, found: features.len() });
        }
        let trunk = self.trunk_forward(features, None);
        let mut v = [T::zero()];
        self.layers.value.forward(&trunk, &mut v);
        Ok(v[0].tanh())
    }

    fn traced_forward(&self, features: &[T], mask: ActionMask) -> Trace<T> {
        let mut trace = Trace {
            input: features.to_vec(),
            stem_pre: Vec::new(),
            blocks: Vec::with_capacity(self.config.depth),
            trunk: Vec::new(),
            log_policy: Vec::new(),
            policy: Vec::new(),
            value: T::zero(),
        };
        let trunk = self.trunk_forward(features, Some(&mut trace));
        let (log_policy, policy, value) = self.heads(&trunk, mask);
        trace.trunk = trunk;
        trace.log_policy = log_policy;
        trace.policy = policy;
        trace.value = value;
        trace
    }

    /// Backprop of `scale * [(z - v)^2 - pi . log p]` into `grads`.
    fn backward(&self, trace: &Trace<T>, target_policy: &[T], target_z: T, scale: T, grads: &mut Gradients<T>) {
        let w = self.config.width;
        let two = T::from_f64(2.0);
        let dlogits: Vec<T> = trace.policy.iter().zip(target_policy).map(|(&p, &pi)| scale * (p - pi)).collect();
        let dv_pre = scale * two * (trace.value - target_z) * (T::one() - trace.value * trace.value);
        let mut dh = vec![T::zero(); w];
        self.layers.policy.backward(&trace.trunk, &dlogits, &mut grads.policy, Some(&mut dh));
        self.layers.value.backward(&trace.trunk, &[dv_pre], &mut grads.value, Some(&mut dh));

        for (i, [fc0, fc1]) in self.layers.blocks.iter().enumerate().rev() {
            let (h_in, hidden_pre, out_pre) = &trace.blocks[i];
            let d_out: Vec<T> = dh.iter().zip(out_pre).map(|(&d, &x)| if x > T::zero() { d } else { T::zero() }).collect();
            let act: Vec<T> = hidden_pre.iter().map(|&x| relu(x)).collect();
            let mut d_act = vec![T::zero(); w];
            let [g0, g1] = &mut grads.blocks[i];
            fc1.backward(&act, &d_out, g1, Some(&mut d_act));
            let d_hidden: Vec<T> =
                d_act.iter().zip(hidden_pre).map(|(&d, &x)| if x > T::zero() { d } else { T::zero() }).collect();
            // skip connection
            dh = d_out;
            fc0.backward(h_in, &d_hidden, g0, Some(&mut dh));
        }
        let d_stem: Vec<T> =
            dh.iter().zip(&trace.stem_pre).map(|(&d, &x)| if x > T::zero() { d } else { T::zero() }).collect();
        self.layers.stem.backward(&trace.input, &d_stem, &mut grads.stem, None);
    }

    /// Mean over the batch of `(z - v)^2 - pi . log p`, plus `lambda * ||theta||^2`,
    /// with its gradient.
    pub fn loss(&self, batch: &[&ReplayEntry]) -> Result<(LossBreakdown, Gradients<T>)> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let scale = T::from_f64(1.0 / batch.len() as f64);
        let mut grads = self.zero_gradients();
        let (mut value_loss, mut policy_loss) = (0.0, 0.0);
        let mut features = vec![T::zero(); self.config.input_dim];
        let mut target = vec![T::zero(); self.config.action_count];
        for entry in batch {
            for (dst, &src) in features.iter_mut().zip(&entry.features) {
                *dst = T::from_f64(src as f64);
            }
            for (dst, &src) in target.iter_mut().zip(&entry.target_policy) {
                *dst = T::from_f64(src as f64);
            }
            self.check_input(&features, entry.legal_mask)?;
            if entry.features.len() != features.len() || entry.target_policy.len() != target.len() {
                return Err(NetError::DimensionMismatch { expected: features.len(), found: entry.features.len() });
            }
            let z = T::from_f64(entry.target_z as f64);
            let trace = self.traced_forward(&features, entry.legal_mask);
            value_loss += (z - trace.value).as_f64().powi(2);
            policy_loss -= entry
                .legal_mask
                .iter()
                .filter(|&a| target[a] > T::zero())
                .map(|a| (target[a] * trace.log_policy[a]).as_f64())
                .sum::<f64>();
            self.backward(&trace, &target, z, scale, &mut grads);
        }
        let lambda = self.config.l2_lambda;
        let l2 = lambda * self.layers.norm_sq();
        if lambda > 0.0 {
            grads.add_scaled(T::from_f64(2.0 * lambda), &self.layers);
        }
        let n = batch.len() as f64;
        let breakdown =
            LossBreakdown { total: value_loss / n + policy_loss / n + l2, value: value_loss / n, policy: policy_loss / n, l2 };
        Ok((breakdown, grads))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.first_non_finite().is_none()
    }
}

/// SGD with momentum: `v <- mu v + g; theta <- theta - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T = f32> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Gradients<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &NetParams<T>) -> Self {
        Sgd {
            learning_rate: params.config.learning_rate,
            momentum: params.config.momentum,
            velocity: params.zero_gradients(),
        }
    }

    pub fn step(&mut self, params: &mut NetParams<T>, grads: &Gradients<T>) -> Result<()> {
        if let Some((name, index)) = grads.first_non_finite() {
            return Err(NetError::Diverged(format!(
                "non-finite gradient in {name}[{index}]; gradient norm^2 {:.3e}, parameter norm^2 {:.3e}",
                grads.norm_sq(),
                params.layers.norm_sq()
            )));
        }
        self.velocity.scale(T::from_f64(self.momentum));
        self.velocity.add_scaled(T::one(), grads);
        params.layers.add_scaled(T::from_f64(-self.learning_rate), &self.velocity);
        if let Some((name, index)) = params.layers.first_non_finite() {
            return Err(NetError::Diverged(format!("parameter {name}[{index}] became non-finite")));
        }
        Ok(())
    }
}

/// One training example: encoded position, search-policy target, outcome
/// for the side to move, and the legal-action mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub features: Vec<f32>,
    pub target_policy: Vec<f32>,
    pub target_z: f32,
    #[serde(with = "mask_serde")]
    pub legal_mask: ActionMask,
}

impl ReplayEntry {
    /// Target policy sums to one and lives on legal actions only.
    pub fn is_valid(&self) -> bool {
        let sum: f32 = self.target_policy.iter().sum();
        let off_support = self.target_policy.iter().enumerate().any(|(a, &p)| p != 0.0 && !self.legal_mask.contains(a));
        (sum - 1.0).abs() < 1e-4 && !off_support && [-1.0, 0.0, 1.0].contains(&self.target_z)
    }
}

mod mask_serde {
    use super::ActionMask;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(mask: &ActionMask, s: S) -> Result<S::Ok, S::Error> {
        mask.to_vec().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ActionMask, D::Error> {
        let bits = Vec::<bool>::deserialize(d)?;
        Ok(ActionMask::from_actions(bits.iter().enumerate().filter(|(_, &b)| b).map(|(a, _)| a), bits.len()))
    }
}

/// FIFO ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<ReplayEntry>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, entries: VecDeque::with_capacity(capacity.min(1 << 20)), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.entries.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&mut self, batch_size: usize) -> Vec<&ReplayEntry> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        let n = self.entries.len();
        let picks: Vec<usize> = (0..batch_size).map(|_| self.rng.gen_range(0..n)).collect();
        picks.into_iter().map(|i| &self.entries[i]).collect()
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"AZNETCK\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes the header (config) followed by little-endian `f32` parameters and a CRC32.
pub fn save_checkpoint(params: &NetParams<f32>, path: &Path) -> Result<()> {
    let c = &params.config;
    let mut buf = Vec::with_capacity(96 + 4 * c.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.input_dim, c.width, c.depth, c.action_count] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [c.l2_lambda, c.learning_rate, c.momentum] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.extend_from_slice(&(c.param_count() as u64).to_le_bytes());
    let body_start = buf.len();
    for t in params.layers.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf[body_start..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Reads a checkpoint. When `expected` is given, every architectural field
/// must match it.
pub fn load_checkpoint(path: &Path, expected: Option<&NetConfig>) -> Result<NetParams<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes, expected)
}

fn parse_checkpoint(bytes: &[u8], expected: Option<&NetConfig>) -> Result<NetParams<f32>> {
    let corrupt = |m: &str| NetError::Corrupt(m.to_string());
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(corrupt("truncated file"));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Version(version));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let mut reals = [0f64; 3];
    for r in &mut reals {
        *r = f64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let config = NetConfig {
        input_dim: dims[0],
        width: dims[1],
        depth: dims[2],
        action_count: dims[3],
        l2_lambda: reals[0],
        learning_rate: reals[1],
        momentum: reals[2],
        seed,
    };
    config.validate().map_err(|e| corrupt(&e.to_string()))?;
    if let Some(exp) = expected {
        let fields = [
            ("input_dim", exp.input_dim, config.input_dim),
            ("width", exp.width, config.width),
            ("depth", exp.depth, config.depth),
            ("action_count", exp.action_count, config.action_count),
        ];
        for (field, e, f) in fields {
            if e != f {
                return Err(NetError::ConfigMismatch { field, expected: e.to_string(), found: f.to_string() });
            }
        }
    }
    if count != config.param_count() {
        return Err(corrupt("parameter count does not match header"));
    }
    let body = take(4 * count)?;
    let crc = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if crc32fast::hash(body) != crc {
        return Err(corrupt("checksum mismatch"));
    }
    let mut params = NetParams::<f32>::zeros(config)?;
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for t in params.layers.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("count checked");
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(input_dim: usize, width: usize, depth: usize, actions: usize, seed: u64) -> NetConfig {
        NetConfig { input_dim, width, depth, action_count: actions, l2_lambda: 0.0, learning_rate: 0.01, momentum: 0.9, seed }
    }

    fn entry(features: Vec<f32>, policy: Vec<f32>, z: f32) -> ReplayEntry {
        let mask = ActionMask::full(policy.len());
        ReplayEntry { features, target_policy: policy, target_z: z, legal_mask: mask }
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let net = NetParams::<f32>::zeros(NetConfig::for_game(GameKind::Ttt3)).unwrap();
        let out = net.forward(&[0.3; 27], ActionMask::full(9)).unwrap();
        for p in &out.policy {
            assert!((p - 1.0 / 9.0).abs() < 1e-7);
        }
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn single_legal_action_gets_all_mass() {
        let net = NetParams::<f32>::init(NetConfig::for_game(GameKind::Ttt3)).unwrap();
        let mask = ActionMask::from_actions([5], 9);
        let out = net.forward(&[1.0; 27], mask).unwrap();
        assert_eq!(out.policy[5], 1.0);
        assert_eq!(out.policy.iter().sum::<f32>(), 1.0);
    }

    #[test]
    fn forward_is_deterministic_and_checks_dims() {
        let net = NetParams::<f32>::init(NetConfig::for_game(GameKind::Ttt4)).unwrap();
        let x: Vec<f32> = (0..48).map(|i| (i % 3) as f32).collect();
        let a = net.forward(&x, ActionMask::full(16)).unwrap();
        let b = net.forward(&x, ActionMask::full(16)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(net.forward(&x[..47], ActionMask::full(16)), Err(NetError::DimensionMismatch { .. })));
        assert!(matches!(net.forward(&x, ActionMask::empty(16)), Err(NetError::EmptyMask)));
    }

    #[test]
    fn masked_softmax_normalization() {
        let net = NetParams::<f64>::init(NetConfig { seed: 3, ..NetConfig::for_game(GameKind::Ttt3) }).unwrap();
        for bits in [0b1u64, 0b101010101, 0b111111111, 0b100000001] {
            let mask = ActionMask::from_bits(bits, 9);
            let out = net.forward(&[0.5; 27], mask).unwrap();
            let total: f64 = mask.iter().map(|a| out.policy[a]).sum();
            assert!((total - 1.0).abs() < 1e-9);
            for a in 0..9 {
                if !mask.contains(a) {
                    assert_eq!(out.policy[a], 0.0);
                }
            }
        }
    }

    #[test]
    fn loss_at_uniform_prediction() {
        // v = 0, z = 1, p uniform over 9, pi uniform: 1 + ln 9
        let mut config = NetConfig::for_game(GameKind::Ttt3);
        config.l2_lambda = 0.0;
        let net = NetParams::<f64>::zeros(config).unwrap();
        let e = entry(vec![0.0; 27], vec![1.0 / 9.0; 9], 1.0);
        let (loss, _) = net.loss(&[&e]).unwrap();
        assert!((loss.total - (1.0 + 9f64.ln())).abs() < 1e-6, "{loss:?}");
    }

    #[test]
    fn loss_at_perfect_prediction_is_self_entropy() {
        let config = small_config(2, 1, 1, 2, 0);
        let net = NetParams::<f64>::zeros(config).unwrap();
        // zero net predicts v = 0 and p = [0.5, 0.5]
        let e = entry(vec![1.0, 0.0], vec![0.5, 0.5], 0.0);
        let (loss, _) = net.loss(&[&e]).unwrap();
        assert!((loss.total - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(net.loss(&[]), Err(NetError::EmptyBatch)));
    }

    fn finite_difference_check(config: NetConfig, batch: &[ReplayEntry]) {
        let refs: Vec<&ReplayEntry> = batch.iter().collect();
        let mut net = NetParams::<f64>::init(config).unwrap();
        // nudge biases off zero so every unit is active somewhere
        for t in net.layers.tensors_mut() {
            for (i, v) in t.iter_mut().enumerate() {
                *v += 0.05 * ((i % 5) as f64 - 2.0) * 0.1;
            }
        }
        let (_, grads) = net.loss(&refs).unwrap();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let h = 1e-6;
        let mut index = 0;
        let n_tensors = net.layers.tensors().len();
        for ti in 0..n_tensors {
            let len = net.layers.tensors()[ti].len();
            for j in 0..len {
                let orig = net.layers.tensors()[ti][j];
                net.layers.tensors_mut()[ti][j] = orig + h;
                let plus = net.loss(&refs).unwrap().0.total;
                net.layers.tensors_mut()[ti][j] = orig - h;
                let minus = net.loss(&refs).unwrap().0.total;
                net.layers.tensors_mut()[ti][j] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[index];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-3);
                assert!(rel < 1e-4, "tensor {ti} elem {j}: analytic {a} numeric {numeric}");
                index += 1;
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_toy_net() {
        // 13 parameters: stem 2x1+1, block 2x(1+1), policy 1x2+2, value 1+1
        let config = NetConfig { l2_lambda: 0.01, ..small_config(2, 1, 1, 2, 7) };
        assert_eq!(config.param_count(), 13);
        let batch = vec![entry(vec![0.7, -0.3], vec![0.25, 0.75], 1.0), entry(vec![-0.2, 0.9], vec![1.0, 0.0], -1.0)];
        finite_difference_check(config, &batch);
    }

    #[test]
    fn gradients_match_finite_differences_with_masks() {
        let config = NetConfig { l2_lambda: 1e-3, ..small_config(6, 5, 2, 4, 11) };
        let mut masked = entry(vec![1.0, 0.0, 0.5, 0.0, 1.0, -1.0], vec![0.0, 0.6, 0.0, 0.4], 0.0);
        masked.legal_mask = ActionMask::from_actions([1, 3], 4);
        let batch = vec![masked, entry(vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6], vec![0.1, 0.2, 0.3, 0.4], -1.0)];
        finite_difference_check(config, &batch);
    }

    #[test]
    fn zero_gradient_step_is_identity_and_deterministic() {
        let net = NetParams::<f32>::init(NetConfig::for_game(GameKind::Ttt3)).unwrap();
        let mut a = net.clone();
        let mut opt = Sgd::new(&a);
        opt.step(&mut a, &net.zero_gradients()).unwrap();
        assert_eq!(a, net);

        let e = entry(vec![1.0; 27], vec![1.0 / 9.0; 9], 1.0);
        let (_, g) = net.loss(&[&e]).unwrap();
        let (mut b, mut c) = (net.clone(), net.clone());
        Sgd::new(&b).step(&mut b, &g).unwrap();
        Sgd::new(&c).step(&mut c, &g).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn nan_gradient_is_reported() {
        let mut net = NetParams::<f32>::init(NetConfig::for_game(GameKind::Ttt3)).unwrap();
        let mut g = net.zero_gradients();
        g.policy.bias[2] = f32::NAN;
        let err = Sgd::new(&net).step(&mut net, &g).unwrap_err();
        assert!(err.to_string().contains("policy.bias[2]"), "{err}");
    }

    #[test]
    fn overfits_a_fixed_batch() {
        let config = NetConfig { learning_rate: 0.01, ..NetConfig::for_game(GameKind::Ttt3) };
        let mut net = NetParams::<f32>::init(config).unwrap();
        let batch: Vec<ReplayEntry> = (0..8)
            .map(|i| {
                let features: Vec<f32> = (0..27).map(|j| ((i * 7 + j * 3) % 5 == 0) as u8 as f32).collect();
                let mut policy = vec![0.0; 9];
                policy[i % 9] = 1.0;
                entry(features, policy, [1.0, -1.0, 0.0][i % 3])
            })
            .collect();
        let refs: Vec<&ReplayEntry> = batch.iter().collect();
        let mut opt = Sgd::new(&net);
        let first = net.loss(&refs).unwrap().0.total;
        let mut last = first;
        for _ in 0..100 {
            let (loss, g) = net.loss(&refs).unwrap();
            last = loss.total;
            opt.step(&mut net, &g).unwrap();
        }
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn l2_alone_shrinks_weights() {
        let config = NetConfig { l2_lambda: 1e-2, ..NetConfig::for_game(GameKind::Ttt3) };
        let mut net = NetParams::<f32>::init(config).unwrap();
        let mut opt = Sgd::new(&net);
        let mut prev = net.layers.norm_sq();
        for _ in 0..100 {
            let mut g = net.zero_gradients();
            g.add_scaled(2.0 * 1e-2, &net.layers);
            opt.step(&mut net, &g).unwrap();
            let norm = net.layers.norm_sq();
            assert!(norm < prev);
            prev = norm;
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = NetParams::<f32>::init(NetConfig { seed: 5, ..NetConfig::for_game(GameKind::Ttt3) }).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path, Some(&net.config)).unwrap();
        assert_eq!(back, net);
        let x = [1.0f32; 27];
        assert_eq!(back.forward(&x, ActionMask::full(9)).unwrap(), net.forward(&x, ActionMask::full(9)).unwrap());

        let other = NetConfig::for_game(GameKind::Ttt4);
        let err = load_checkpoint(&path, Some(&other)).unwrap_err();
        assert!(matches!(err, NetError::ConfigMismatch { field: "input_dim", .. }), "{err}");

        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 100] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(NetError::Corrupt(_))));
        fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(NetError::Corrupt(_))));
    }

    #[test]
    fn replay_buffer_is_fifo() {
        let mut buf = ReplayBuffer::new(3, 0);
        for z in [-1.0, 0.0, 1.0, 1.0] {
            buf.push(entry(vec![z], vec![1.0], z));
        }
        assert_eq!(buf.len(), 3);
        let zs: Vec<f32> = buf.iter().map(|e| e.target_z).collect();
        assert_eq!(zs, vec![0.0, 1.0, 1.0]);
        assert_eq!(buf.sample(10).len(), 10);
    }
}
