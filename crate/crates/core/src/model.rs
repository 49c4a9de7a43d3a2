//! The context model: a stack of trimmed convolutions with trimmed residual
//! blocks and an `m`-way softmax head, plus its code-length objective and
//! binary model format.

use rayon::prelude::*;

use crate::cuboid::{Position, SymbolCuboid};
use crate::error::{Error, Result};
use crate::tensor::{ElementwiseOp, Operand, Rng, Tensor};
use crate::trim_conv::{LayerKind, MaskMode, Schedule, TrimmedConvLayer};

/// Smallest probability used in code lengths and PMF quantization.
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

pub const KERNEL_HALF_SIZE: usize = 2;

const MODEL_MAGIC: &[u8; 8] = b"TCAEMDL1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub alphabet: usize,
    pub groups: usize,
    pub depth: usize,
    pub schedule: Schedule,
    pub residual_blocks: usize,
}

impl ModelConfig {
    pub fn new(alphabet: usize, depth: usize, schedule: Schedule) -> Self {
        ModelConfig {
            alphabet,
            groups: 8,
            depth,
            schedule,
            residual_blocks: 4,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_residual_blocks(mut self, blocks: usize) -> Self {
        self.residual_blocks = blocks;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=1 << 16).contains(&self.alphabet) {
            return Err(Error::InvalidArgument(format!("alphabet size {} not in [2, 65536]", self.alphabet)));
        }
        if self.groups == 0 || self.depth == 0 {
            return Err(Error::InvalidArgument("groups and depth must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        3 + 2 * self.residual_blocks
    }
}

/// Per-position `m`-way distributions, laid out `[m, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityCuboid {
    alphabet: usize,
    width: usize,
    height: usize,
    depth: usize,
    values: Vec<f64>,
}

impl ProbabilityCuboid {
    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.depth)
    }

    fn volume(&self) -> usize {
        self.width * self.height * self.depth
    }

    pub fn get(&self, t: usize, (i, j, k): Position) -> f64 {
        self.values[t * self.volume() + (k * self.height + j) * self.width + i]
    }

    pub fn pmf(&self, pos: Position) -> Vec<f64> {
        (0..self.alphabet).map(|t| self.get(t, pos)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Parameter-shaped gradients (or moments), one `(weights, bias)` pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ModelGrads {
    pub fn zeros_like(model: &ContextModel) -> Self {
        ModelGrads {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights().len()], vec![0.0; l.bias().len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

/// Intermediate values kept by a forward pass for backpropagation.
struct Activations {
    inputs: Vec<Tensor>,
    preacts: Vec<Option<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextModel {
    config: ModelConfig,
    layers: Vec<TrimmedConvLayer>,
}

fn relu_mask(grad: &Tensor, pre: &Tensor) -> Tensor {
    let data = grad
        .data()
        .iter()
        .zip(pre.data())
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(grad.shape(), data).expect("same shape")
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    a.elementwise(ElementwiseOp::Add, Operand::Tensor(b)).expect("same shape")
}

impl ContextModel {
    /// Zero-initialized network; see [`ContextModel::init`] for training starts.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (s, g, c) = (config.schedule, config.groups, config.depth);
        let hidden = MaskMode::new(s, LayerKind::Hidden);
        let mut layers = Vec::with_capacity(config.layer_count());
        layers.push(TrimmedConvLayer::with_mode(1, g, c, MaskMode::new(s, LayerKind::Input), KERNEL_HALF_SIZE)?);
        for _ in 0..1 + 2 * config.residual_blocks {
            layers.push(TrimmedConvLayer::with_mode(g, g, c, hidden, KERNEL_HALF_SIZE)?);
        }
        layers.push(TrimmedConvLayer::with_mode(g, config.alphabet, c, hidden, KERNEL_HALF_SIZE)?);
        Ok(ContextModel { config, layers })
    }

    /// Random hidden layers and a zero head, so training starts from the
    /// uniform predictor.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = Rng::new(seed);
        let last = model.layers.len() - 1;
        for layer in &mut model.layers[..last] {
            layer.init_uniform(&mut rng)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[TrimmedConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [TrimmedConvLayer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights().len() + l.bias().len()).sum()
    }

    /// Same parameters under the other schedule's masks.
    pub fn with_schedule(&self, schedule: Schedule) -> Result<Self> {
        let mut config = self.config;
        config.schedule = schedule;
        let mut out = Self::zeros(config)?;
        for (dst, src) in out.layers.iter_mut().zip(&self.layers) {
            dst.weights_mut().copy_from_slice(src.weights());
            dst.bias_mut().copy_from_slice(src.bias());
        }
        Ok(out)
    }

    fn check(&self, x: &SymbolCuboid) -> Result<()> {
        if x.depth() != self.config.depth || x.alphabet() != self.config.alphabet {
            return Err(Error::Mismatch(format!(
                "model expects C={}, m={}; cuboid has C={}, m={}",
                self.config.depth,
                self.config.alphabet,
                x.depth(),
                x.alphabet()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &SymbolCuboid, t_max: usize, keep: bool) -> Result<(Tensor, Option<Activations>)> {
        self.check(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::new();
        let mut preacts = Vec::new();
        let mut stash = |input: &Tensor, pre: Option<&Tensor>| {
            if keep {
                inputs.push(input.clone());
                preacts.push(pre.cloned());
            }
        };
        let mut a = x.embed();
        for layer in &self.layers[..2] {
            let z = layer.forward_slices(&a, t_max)?;
            stash(&a, Some(&z));
            a = z.relu();
        }
        for b in 0..self.config.residual_blocks {
            let (first, second) = (&self.layers[2 + 2 * b], &self.layers[3 + 2 * b]);
            let z1 = first.forward_slices(&a, t_max)?;
            stash(&a, Some(&z1));
            let h = z1.relu();
            let z2 = second.forward_slices(&h, t_max)?;
            stash(&h, Some(&z2));
            a = add(&z2.relu(), &a);
        }
        let logits = self.layers[n - 1].forward_slices(&a, t_max)?;
        stash(&a, None);
        let acts = keep.then_some(Activations { inputs, preacts });
        Ok((logits, acts))
    }

    fn softmax(&self, logits: Tensor, x: &SymbolCuboid) -> ProbabilityCuboid {
        let m = self.config.alphabet;
        let vol = x.len();
        let mut values = logits.into_vec();
        let mut scratch = vec![0.0; m];
        for pos in 0..vol {
            let mut max = f64::NEG_INFINITY;
            for t in 0..m {
                scratch[t] = values[t * vol + pos];
                max = max.max(scratch[t]);
            }
            let mut sum = 0.0;
            for v in scratch.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for t in 0..m {
                values[t * vol + pos] = scratch[t] / sum;
            }
        }
        ProbabilityCuboid {
            alphabet: m,
            width: x.width(),
            height: x.height(),
            depth: x.depth(),
            values,
        }
    }

    /// Probabilities for every position in one pass.
    pub fn forward(&self, x: &SymbolCuboid) -> Result<ProbabilityCuboid> {
        let (logits, _) = self.run(x, self.config.depth - 1, false)?;
        Ok(self.softmax(logits, x))
    }

    /// Forward pass that only computes depth slices `0..=slice`; values for
    /// those slices are bit-identical to [`forward`](Self::forward). Only
    /// valid for the raster schedule, where no layer looks at later slices.
    pub fn forward_through_slice(&self, x: &SymbolCuboid, slice: usize) -> Result<ProbabilityCuboid> {
        if self.config.schedule != Schedule::Raster || !self.layers.iter().all(|l| l.is_depth_causal()) {
            return Err(Error::InvalidArgument("slice-limited forward needs raster masks".into()));
        }
        let (logits, _) = self.run(x, slice.min(self.config.depth - 1), false)?;
        Ok(self.softmax(logits, x))
    }

    /// Code length of `x` in bits and its gradient for every parameter.
    pub fn loss_and_grad(&self, x: &SymbolCuboid) -> Result<(f64, ModelGrads)> {
        let (logits, acts) = self.run(x, self.config.depth - 1, true)?;
        let probs = self.softmax(logits, x);
        let bits = loss(&probs, x)?;
        let grads = self.backward_from(&probs, x, acts.expect("kept"))?;
        Ok((bits, grads))
    }

    /// Gradient of the code length given probabilities from [`forward`](Self::forward) on `x`.
    pub fn backward(&self, x: &SymbolCuboid, probs: &ProbabilityCuboid) -> Result<ModelGrads> {
        let (_, acts) = self.run(x, self.config.depth - 1, true)?;
        self.backward_from(probs, x, acts.expect("kept"))
    }

    fn backward_from(&self, probs: &ProbabilityCuboid, x: &SymbolCuboid, acts: Activations) -> Result<ModelGrads> {
        let m = self.config.alphabet;
        let vol = x.len();
        let inv_ln2 = 1.0 / std::f64::consts::LN_2;
        let mut dlogits: Vec<f64> = probs.values.iter().map(|p| p * inv_ln2).collect();
        for (pos, &s) in x.symbols().iter().enumerate() {
            dlogits[s as usize * vol + pos] -= inv_ln2;
        }
        let dlogits = Tensor::from_vec(&[m, x.depth(), x.height(), x.width()], dlogits)?;

        let n = self.layers.len();
        let mut out: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
        let Activations { inputs, preacts } = acts;
        let pre = |i: usize| preacts[i].as_ref().expect("relu layer");

        let g = self.layers[n - 1].backward(&inputs[n - 1], &dlogits, true)?;
        out[n - 1] = (g.weights, g.bias);
        let mut ga = g.grad_x.expect("requested");
        for b in (0..self.config.residual_blocks).rev() {
            let (i1, i2) = (2 + 2 * b, 3 + 2 * b);
            let gz2 = relu_mask(&ga, pre(i2));
            let g2 = self.layers[i2].backward(&inputs[i2], &gz2, true)?;
            let gz1 = relu_mask(g2.grad_x.as_ref().expect("requested"), pre(i1));
            out[i2] = (g2.weights, g2.bias);
            let g1 = self.layers[i1].backward(&inputs[i1], &gz1, true)?;
            ga = add(g1.grad_x.as_ref().expect("requested"), &ga);
            out[i1] = (g1.weights, g1.bias);
        }
        for l in [1, 0] {
            let gz = relu_mask(&ga, pre(l));
            let g = self.layers[l].backward(&inputs[l], &gz, l > 0)?;
            if let Some(gx) = g.grad_x {
                ga = gx;
            }
            out[l] = (g.weights, g.bias);
        }
        Ok(ModelGrads { layers: out })
    }

    /// Summed code length and gradient over a batch; samples are combined in
    /// input order so the result does not depend on thread count.
    pub fn batch_loss_and_grad(&self, batch: &[SymbolCuboid]) -> Result<(f64, ModelGrads)> {
        let parts: Vec<(f64, ModelGrads)> = batch
            .par_iter()
            .map(|x| self.loss_and_grad(x))
            .collect::<Result<_>>()?;
        let mut total = ModelGrads::zeros_like(self);
        let mut bits = 0.0;
        for (b, g) in &parts {
            bits += b;
            total.add_assign(g);
        }
        Ok((bits, total))
    }

    pub fn apply_update(&mut self, f: impl Fn(usize, bool, &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(i, false, layer.weights_mut());
            f(i, true, layer.bias_mut());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.parameter_count());
        out.extend_from_slice(MODEL_MAGIC);
        let c = &self.config;
        for v in [c.alphabet as u32, c.groups as u32, c.depth as u32, c.schedule.tag(), c.residual_blocks as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights().iter().chain(layer.bias()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 28 || &bytes[..8] != MODEL_MAGIC {
            return Err(Error::ModelFormat("bad magic or truncated header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let schedule = Schedule::from_tag(word(3))
            .ok_or_else(|| Error::ModelFormat(format!("unknown schedule tag {}", word(3))))?;
        let config = ModelConfig {
            alphabet: word(0) as usize,
            groups: word(1) as usize,
            depth: word(2) as usize,
            schedule,
            residual_blocks: word(4) as usize,
        };
        config.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
        if config.depth > 4096 || config.groups > 4096 || config.residual_blocks > 4096 {
            return Err(Error::ModelFormat("implausible model dimensions".into()));
        }
        let mut model = Self::zeros(config)?;
        let expected = 28 + 8 * model.parameter_count();
        if bytes.len() != expected {
            return Err(Error::ModelFormat(format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let mut chunks = bytes[28..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for layer in &mut model.layers {
            for v in layer.weights_mut().iter_mut() {
                *v = chunks.next().expect("length checked");
            }
            for v in layer.bias_mut().iter_mut() {
                *v = chunks.next().expect("length checked");
            }
        }
        if model.layers.iter().any(|l| l.weights().iter().chain(l.bias()).any(|v| !v.is_finite())) {
            return Err(Error::ModelFormat("non-finite parameter".into()));
        }
        Ok(model)
    }

    /// 64-bit FNV-1a of the serialized model.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Total code length in bits: sum of `-log2 p(true symbol)`, with
/// probabilities floored at [`PROB_FLOOR`].
pub fn loss(probs: &ProbabilityCuboid, x: &SymbolCuboid) -> Result<f64> {
    if probs.dims() != (x.width(), x.height(), x.depth()) || probs.alphabet() != x.alphabet() {
        return Err(Error::Shape("probabilities and cuboid disagree".into()));
    }
    let vol = x.len();
    Ok(x
        .symbols()
        .iter()
        .enumerate()
        .map(|(pos, &s)| -probs.values[s as usize * vol + pos].max(PROB_FLOOR).log2())
        .sum())
}

/// Uncompressed size `C*H*W*log2(m)` over the code length.
pub fn compression_ratio(loss_bits: f64, width: usize, height: usize, depth: usize, alphabet: usize) -> Result<f64> {
    if !(loss_bits > 0.0) {
        return Err(Error::InvalidArgument(format!("code length {loss_bits} must be positive")));
    }
    Ok((depth * height * width) as f64 * (alphabet as f64).log2() / loss_bits)
}
