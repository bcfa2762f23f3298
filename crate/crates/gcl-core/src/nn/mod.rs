//! Minimal dense/convolutional network engine with exact
//! backpropagation: n_l blocks of (3x3 conv, ReLU, 2x2 max pool) or of
//! (dense, ReLU), a 512-unit penultimate layer ("fc_finale"), and a
//! softmax or single-sigmoid head.

pub mod checkpoint;
pub mod kernels;
pub mod optim;

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_usize(v: usize) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_usize(v: usize) -> Self {
        v as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Dense n-dimensional array; value count always equals the product of
/// the extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} wants {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Same data, new shape; extent product must match.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context.to_string()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Conv,
    FullyConnected,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    SingleSigmoid,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    BinaryCrossEntropy,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct NetConfig {
    pub kind: NetKind,
    pub n_layers: usize,
    pub n_classes: usize,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    #[serde(default = "default_width_step")]
    pub width_step: usize,
    #[serde(default = "default_penultimate")]
    pub penultimate_width: usize,
    pub head: Head,
    #[serde(default = "default_input_hw")]
    pub input_hw: usize,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
}

fn default_base_width() -> usize {
    16
}
fn default_width_step() -> usize {
    16
}
fn default_penultimate() -> usize {
    512
}
fn default_input_hw() -> usize {
    150
}
fn default_input_channels() -> usize {
    3
}

impl NetConfig {
    pub fn conv(n_layers: usize, n_classes: usize, head: Head) -> Self {
        NetConfig {
            kind: NetKind::Conv,
            n_layers,
            n_classes,
            base_width: 16,
            width_step: 16,
            penultimate_width: 512,
            head,
            input_hw: 150,
            input_channels: 3,
        }
    }

    pub fn fully_connected(n_layers: usize, n_classes: usize, head: Head) -> Self {
        NetConfig { kind: NetKind::FullyConnected, ..NetConfig::conv(n_layers, n_classes, head) }
    }

    /// Hidden widths: base, base+step, base+2*step, ...
    pub fn layer_widths(&self) -> Vec<usize> {
        (0..self.n_layers).map(|k| self.base_width + k * self.width_step).collect()
    }

    pub fn head_outputs(&self) -> usize {
        match self.head {
            Head::Softmax => self.n_classes,
            Head::SingleSigmoid => 1,
        }
    }

    pub fn loss(&self) -> Loss {
        match self.head {
            Head::Softmax => Loss::CrossEntropy,
            Head::SingleSigmoid => Loss::BinaryCrossEntropy,
        }
    }

    fn validate_structural(&self) -> Result<()> {
        if self.n_layers == 0 || self.base_width == 0 || self.penultimate_width == 0 {
            return Err(Error::NetConfig("zero-sized layer".into()));
        }
        if self.head == Head::SingleSigmoid && self.n_classes != 2 {
            return Err(Error::NetConfig(format!(
                "single-sigmoid head is binary only, got n_classes={}",
                self.n_classes
            )));
        }
        if self.kind == NetKind::Conv {
            let mut hw = self.input_hw;
            for _ in 0..self.n_layers {
                hw /= 2;
                if hw == 0 {
                    return Err(Error::NetConfig(format!(
                        "input {}px pools to nothing over {} layers",
                        self.input_hw, self.n_layers
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_standard(&self) -> Result<()> {
        self.validate_structural()?;
        if ![3, 5, 7].contains(&self.n_layers) {
            return Err(Error::NetConfig(format!("n_layers must be 3, 5 or 7, got {}", self.n_layers)));
        }
        if ![2, 3, 6, 9].contains(&self.n_classes) {
            return Err(Error::NetConfig(format!("n_classes must be 2, 3, 6 or 9, got {}", self.n_classes)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvStage<S> {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    /// [3, 3, in_c, out_c]
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub relu: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct DenseStage<S> {
    pub name: String,
    pub in_f: usize,
    pub out_f: usize,
    /// [in_f, out_f]
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub relu: bool,
}

#[derive(Clone, Debug)]
pub(crate) enum Stage<S> {
    Conv(ConvStage<S>),
    Pool,
    Flatten,
    Dense(DenseStage<S>),
}

impl<S: Scalar> Stage<S> {
    fn name(&self) -> Option<&str> {
        match self {
            Stage::Conv(c) => Some(&c.name),
            Stage::Dense(d) => Some(&d.name),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network<S: Scalar> {
    pub config: NetConfig,
    pub seed: u64,
    pub(crate) stages: Vec<Stage<S>>,
}

/// Standard builder; rejects layer/class counts outside the supported
/// sets. `Network::custom` skips the set check for small diagnostic
/// nets.
pub fn build_network<S: Scalar>(config: &NetConfig, seed: u64) -> Result<Network<S>> {
    config.validate_standard()?;
    Network::custom(config, seed)
}

impl<S: Scalar> Network<S> {
    /// Builds any structurally valid config (used for gradient-check
    /// nets with tiny widths); standard experiments go through
    /// `build_network`.
    pub fn custom(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate_structural()?;
        let mut stages = Vec::new();
        let mut stage_seed = 0u64;
        let init = |fan_in: usize, count: usize, stage_seed: u64| -> Vec<S> {
            let mut rng = crate::rng::keyed(seed, &[crate::rng::STREAM_INIT, stage_seed]);
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..count)
                .map(|_| S::from_f64(rand::Rng::gen_range(&mut rng, -limit..limit)))
                .collect()
        };
        match config.kind {
            NetKind::Conv => {
                let mut in_c = config.input_channels;
                for (k, out_c) in config.layer_widths().into_iter().enumerate() {
                    let fan_in = 9 * in_c;
                    stages.push(Stage::Conv(ConvStage {
                        name: format!("conv2d_{}", k + 1),
                        in_c,
                        out_c,
                        w: init(fan_in, 9 * in_c * out_c, stage_seed),
                        b: vec![S::zero(); out_c],
                        relu: true,
                    }));
                    stage_seed += 1;
                    stages.push(Stage::Pool);
                    in_c = out_c;
                }
                stages.push(Stage::Flatten);
                let mut hw = config.input_hw;
                for _ in 0..config.n_layers {
                    hw /= 2;
                }
                let in_f = hw * hw * in_c;
                stages.push(Stage::Dense(DenseStage {
                    name: "fc_finale".into(),
                    in_f,
                    out_f: config.penultimate_width,
                    w: init(in_f, in_f * config.penultimate_width, stage_seed),
                    b: vec![S::zero(); config.penultimate_width],
                    relu: true,
                }));
                stage_seed += 1;
            }
            NetKind::FullyConnected => {
                stages.push(Stage::Flatten);
                let mut in_f = config.input_hw * config.input_hw * config.input_channels;
                for (k, out_f) in config.layer_widths().into_iter().enumerate() {
                    stages.push(Stage::Dense(DenseStage {
                        name: format!("fc_{}", k + 1),
                        in_f,
                        out_f,
                        w: init(in_f, in_f * out_f, stage_seed),
                        b: vec![S::zero(); out_f],
                        relu: true,
                    }));
                    stage_seed += 1;
                    in_f = out_f;
                }
                stages.push(Stage::Dense(DenseStage {
                    name: "fc_finale".into(),
                    in_f,
                    out_f: config.penultimate_width,
                    w: init(in_f, in_f * config.penultimate_width, stage_seed),
                    b: vec![S::zero(); config.penultimate_width],
                    relu: true,
                }));
                stage_seed += 1;
            }
        }
        let in_f = config.penultimate_width;
        let out_f = config.head_outputs();
        stages.push(Stage::Dense(DenseStage {
            name: "head".into(),
            in_f,
            out_f,
            w: init(in_f, in_f * out_f, stage_seed),
            b: vec![S::zero(); out_f],
            relu: false,
        }));
        Ok(Network { config: config.clone(), seed, stages })
    }

    /// Probe-able layer names, shallow to deep (head excluded).
    pub fn layer_names(&self) -> Vec<String> {
        self.stages
            .iter()
            .filter_map(|s| s.name())
            .filter(|n| *n != "head")
            .map(str::to_string)
            .collect()
    }

    pub fn penultimate_layer(&self) -> &'static str {
        "fc_finale"
    }

    fn expected_input(&self) -> [usize; 3] {
        [self.config.input_hw, self.config.input_hw, self.config.input_channels]
    }

    fn check_batch(&self, batch: &Tensor<S>) -> Result<usize> {
        let s = batch.shape();
        let e = self.expected_input();
        if s.len() != 4 || s[1] != e[0] || s[2] != e[1] || s[3] != e[2] {
            return Err(Error::Shape(format!(
                "batch shape {s:?}, expected [N, {}, {}, {}]",
                e[0], e[1], e[2]
            )));
        }
        Ok(s[0])
    }

    /// Forward pass returning head probabilities and per-example
    /// flattened activations of the requested layers.
    pub fn forward(
        &self,
        batch: &Tensor<S>,
        record_layers: &[&str],
    ) -> Result<(Tensor<S>, Vec<(String, Tensor<S>)>)> {
        let valid = self.layer_names();
        for name in record_layers {
            if !valid.iter().any(|v| v == name) {
                return Err(Error::UnknownLayer { name: name.to_string(), valid });
            }
        }
        let cache = self.forward_cache(batch, Some(record_layers))?;
        let n = cache.n;
        let logits = cache.outputs.last().unwrap();
        let k = self.config.head_outputs();
        let mut probs = vec![S::zero(); n * k];
        match self.config.head {
            Head::Softmax => kernels::softmax_rows(logits.data(), n, k, &mut probs),
            Head::SingleSigmoid => {
                for (p, &l) in probs.iter_mut().zip(logits.data()) {
                    *p = kernels::sigmoid(l);
                }
            }
        }
        let mut recorded = Vec::new();
        for name in record_layers {
            let (i, t) = cache.recorded.iter().find(|(n2, _)| n2 == name).unwrap().clone();
            recorded.push((i, t));
        }
        Ok((Tensor::new(vec![n, k], probs)?, recorded))
    }

    fn forward_cache(&self, batch: &Tensor<S>, record: Option<&[&str]>) -> Result<ForwardCache<S>> {
        let n = self.check_batch(batch)?;
        let mut outputs: Vec<Tensor<S>> = Vec::with_capacity(self.stages.len());
        let mut pool_idx: Vec<Option<Vec<u32>>> = Vec::with_capacity(self.stages.len());
        let mut recorded = Vec::new();
        for (si, stage) in self.stages.iter().enumerate() {
            let inp = if si == 0 { batch } else { &outputs[si - 1] };
            let out = match stage {
                Stage::Conv(cs) => {
                    let [_, h, w, ci] = [inp.shape()[0], inp.shape()[1], inp.shape()[2], inp.shape()[3]];
                    if ci != cs.in_c {
                        return Err(Error::Shape(format!("{}: {ci} channels, expected {}", cs.name, cs.in_c)));
                    }
                    let mut out = Tensor::zeros(vec![n, h, w, cs.out_c]);
                    kernels::conv3x3_forward(
                        inp.data(), n, h, w, ci, &cs.w, &cs.b, cs.out_c, cs.relu, out.data_mut(),
                    );
                    pool_idx.push(None);
                    out
                }
                Stage::Pool => {
                    let [h, w, c] = [inp.shape()[1], inp.shape()[2], inp.shape()[3]];
                    let mut out = Tensor::zeros(vec![n, h / 2, w / 2, c]);
                    let mut idx = Vec::new();
                    kernels::maxpool2_forward(inp.data(), n, h, w, c, out.data_mut(), &mut idx);
                    pool_idx.push(Some(idx));
                    out
                }
                Stage::Flatten => {
                    let f: usize = inp.shape()[1..].iter().product();
                    pool_idx.push(None);
                    inp.clone().reshaped(vec![n, f])?
                }
                Stage::Dense(ds) => {
                    let f = inp.shape()[1..].iter().product::<usize>();
                    if inp.shape().len() != 2 || f != ds.in_f {
                        return Err(Error::Shape(format!("{}: {f} inputs, expected {}", ds.name, ds.in_f)));
                    }
                    let mut out = Tensor::zeros(vec![n, ds.out_f]);
                    kernels::dense_forward(inp.data(), n, ds.in_f, &ds.w, &ds.b, ds.out_f, ds.relu, out.data_mut());
                    pool_idx.push(None);
                    out
                }
            };
            #[cfg(debug_assertions)]
            out.assert_finite(stage.name().unwrap_or("pool/flatten"))?;
            if let (Some(rec), Some(name)) = (record, stage.name()) {
                if rec.iter().any(|r| *r == name) {
                    let m: usize = out.shape()[1..].iter().product();
                    recorded.push((name.to_string(), out.clone().reshaped(vec![n, m])?));
                }
            }
            outputs.push(out);
        }
        Ok(ForwardCache { n, outputs, pool_idx, recorded })
    }

    /// Mean batch loss, exact gradients for every parameter, and the
    /// count of correctly classified examples in the batch.
    pub fn backward(
        &self,
        batch: &Tensor<S>,
        targets: &[u32],
        loss: Loss,
    ) -> Result<(S, Gradients<S>, usize)> {
        let n = self.check_batch(batch)?;
        if targets.len() != n {
            return Err(Error::Shape(format!("{} targets for batch of {n}", targets.len())));
        }
        if loss != self.config.loss() {
            return Err(Error::NetConfig(format!("{loss:?} does not match head {:?}", self.config.head)));
        }
        let arity = self.config.head_outputs().max(2) as u32;
        if let Some(bad) = targets.iter().find(|&&t| t >= arity) {
            return Err(Error::Shape(format!("target {bad} out of range for head arity {arity}")));
        }
        let cache = self.forward_cache(batch, None)?;
        let logits = cache.outputs.last().unwrap();
        let (loss_v, dlogits) = match loss {
            Loss::CrossEntropy => {
                kernels::ce_loss_from_logits(logits.data(), n, self.config.n_classes, targets)
            }
            Loss::BinaryCrossEntropy => kernels::bce_loss_from_logits(logits.data(), n, targets),
        };
        if !loss_v.is_finite() {
            return Err(Error::NonFinite(format!("loss (got {loss_v})")));
        }
        let correct = count_correct(logits.data(), n, self.config.head, targets);

        let mut grads: Vec<Option<StageGrad<S>>> = self.stages.iter().map(|_| None).collect();
        let mut dout = dlogits;
        for (si, stage) in self.stages.iter().enumerate().rev() {
            let inp = if si == 0 { batch } else { &cache.outputs[si - 1] };
            let out = &cache.outputs[si];
            // the input gradient is only needed while an earlier stage
            // still has parameters to update
            let need_din = self
                .stages[..si]
                .iter()
                .any(|s| matches!(s, Stage::Dense(_) | Stage::Conv(_)));
            match stage {
                Stage::Dense(ds) => {
                    if ds.relu {
                        kernels::relu_mask_inplace(&mut dout, out.data());
                    }
                    let mut din = vec![S::zero(); if need_din { n * ds.in_f } else { 0 }];
                    let mut dw = vec![S::zero(); ds.w.len()];
                    let mut db = vec![S::zero(); ds.b.len()];
                    let din_slot = if need_din { Some(&mut din[..]) } else { None };
                    kernels::dense_backward(inp.data(), n, ds.in_f, &ds.w, ds.out_f, &dout, din_slot, &mut dw, &mut db);
                    grads[si] = Some(StageGrad { w: dw, b: db });
                    if !need_din {
                        break;
                    }
                    dout = din;
                }
                Stage::Conv(cs) => {
                    if cs.relu {
                        kernels::relu_mask_inplace(&mut dout, out.data());
                    }
                    let [h, w] = [inp.shape()[1], inp.shape()[2]];
                    let mut din = vec![S::zero(); if need_din { inp.numel() } else { 0 }];
                    let mut dw = vec![S::zero(); cs.w.len()];
                    let mut db = vec![S::zero(); cs.b.len()];
                    let din_slot = if need_din { Some(&mut din[..]) } else { None };
                    kernels::conv3x3_backward(inp.data(), n, h, w, cs.in_c, &cs.w, cs.out_c, &dout, din_slot, &mut dw, &mut db);
                    grads[si] = Some(StageGrad { w: dw, b: db });
                    if !need_din {
                        break;
                    }
                    dout = din;
                }
                Stage::Pool => {
                    let idx = cache.pool_idx[si].as_ref().unwrap();
                    let mut din = vec![S::zero(); inp.numel()];
                    kernels::maxpool2_backward(&dout, idx, &mut din);
                    dout = din;
                }
                Stage::Flatten => {
                    // shape-only; gradient passes through unchanged
                }
            }
            #[cfg(debug_assertions)]
            if dout.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient after stage {si}")));
            }
        }
        Ok((loss_v, Gradients { per_stage: grads }, correct))
    }

    /// Mean batch loss without gradients.
    pub fn loss_only(&self, batch: &Tensor<S>, targets: &[u32], loss: Loss) -> Result<S> {
        let n = self.check_batch(batch)?;
        let cache = self.forward_cache(batch, None)?;
        let logits = cache.outputs.last().unwrap();
        let v = match loss {
            Loss::CrossEntropy => kernels::ce_loss_from_logits(logits.data(), n, self.config.n_classes, targets).0,
            Loss::BinaryCrossEntropy => kernels::bce_loss_from_logits(logits.data(), n, targets).0,
        };
        Ok(v)
    }

    /// Predicted class indices (argmax for softmax, threshold 0.5 for
    /// the sigmoid head).
    pub fn predict(&self, batch: &Tensor<S>) -> Result<Vec<u32>> {
        let (probs, _) = self.forward(batch, &[])?;
        let k = self.config.head_outputs();
        let n = probs.shape()[0];
        let mut out = Vec::with_capacity(n);
        for ni in 0..n {
            let row = &probs.data()[ni * k..(ni + 1) * k];
            match self.config.head {
                Head::SingleSigmoid => out.push((row[0].to_f64() >= 0.5) as u32),
                Head::Softmax => {
                    let mut best = 0usize;
                    for (i, &p) in row.iter().enumerate() {
                        if p > row[best] {
                            best = i;
                        }
                    }
                    out.push(best as u32);
                }
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Conv(c) => c.w.len() + c.b.len(),
                Stage::Dense(d) => d.w.len() + d.b.len(),
                _ => 0,
            })
            .sum()
    }

    /// Flat parameter view: stage order, weights then biases.
    pub fn get_param(&self, mut i: usize) -> S {
        for s in &self.stages {
            let (w, b) = match s {
                Stage::Conv(c) => (&c.w, &c.b),
                Stage::Dense(d) => (&d.w, &d.b),
                _ => continue,
            };
            if i < w.len() {
                return w[i];
            }
            i -= w.len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut i: usize, v: S) {
        for s in &mut self.stages {
            let (w, b) = match s {
                Stage::Conv(c) => (&mut c.w, &mut c.b),
                Stage::Dense(d) => (&mut d.w, &mut d.b),
                _ => continue,
            };
            if i < w.len() {
                w[i] = v;
                return;
            }
            i -= w.len();
            if i < b.len() {
                b[i] = v;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }
}

#[derive(Clone, Debug)]
pub struct StageGrad<S> {
    pub w: Vec<S>,
    pub b: Vec<S>,
}

/// Per-stage parameter gradients aligned with the network's stages.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub per_stage: Vec<Option<StageGrad<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Flat view matching `Network::get_param` indexing.
    pub fn flat(&self) -> Vec<S> {
        let mut out = Vec::new();
        for g in self.per_stage.iter().flatten() {
            out.extend_from_slice(&g.w);
            out.extend_from_slice(&g.b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.per_stage
            .iter()
            .flatten()
            .all(|g| g.w.iter().all(|v| v.is_finite()) && g.b.iter().all(|v| v.is_finite()))
    }
}

struct ForwardCache<S: Scalar> {
    n: usize,
    outputs: Vec<Tensor<S>>,
    pool_idx: Vec<Option<Vec<u32>>>,
    recorded: Vec<(String, Tensor<S>)>,
}

/// Argmax logit (softmax) or logit sign (sigmoid) vs target.
fn count_correct<S: Scalar>(logits: &[S], n: usize, head: Head, targets: &[u32]) -> usize {
    let k = match head {
        Head::Softmax => logits.len() / n,
        Head::SingleSigmoid => 1,
    };
    let mut correct = 0;
    for ni in 0..n {
        let row = &logits[ni * k..(ni + 1) * k];
        let pred = match head {
            Head::SingleSigmoid => (row[0] >= S::zero()) as u32,
            Head::Softmax => {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u32
            }
        };
        correct += (pred == targets[ni]) as usize;
    }
    correct
}
