use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, BnInit, Layer, LayerParams};
use super::kernels::{self, BnDims, ConvDims, DenseDims};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng;
use crate::stats;
use crate::tensor::Tensor;

/// Exponential-average momentum for BatchNorm running statistics in train mode.
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
/// Chunk size used by evaluation and statistics passes.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one BatchNorm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    arch: Architecture,
    params: ParamVector,
    bn_state: Vec<BnState>,
    bn_epsilon: f64,
    init_snapshot: ParamVector,
    seed: u64,
    #[serde(skip)]
    revision: u64,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.params == other.params
            && self.bn_state == other.bn_state
            && self.bn_epsilon == other.bn_epsilon
            && self.init_snapshot == other.init_snapshot
            && self.seed == other.seed
    }
}

/// Per-layer intermediates kept by a train-mode forward pass.
#[derive(Debug, Clone)]
enum Saved {
    Input(Vec<f64>),
    Bn { x_hat: Vec<f64>, inv_std: Vec<f64> },
    Mask(Vec<bool>),
    Nothing,
}

/// Opaque record of a forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    revision: u64,
    batch: usize,
    saved: Vec<Saved>,
    logits: Tensor,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Top-1 error and mean cross-entropy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub error: f64,
    pub ce: f64,
}

struct Pass {
    out: Tensor,
    saved: Vec<Saved>,
    /// `(bn index, batch mean, batch population variance, count)` per BatchNorm layer.
    batch_stats: Vec<(usize, Vec<f64>, Vec<f64>, usize)>,
}

impl Model {
    /// Fresh model: Kaiming-uniform weights, zero biases, BN scales per their init kind.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let layout = arch.layout()?;
        let mut values = vec![0.0; layout.len()];
        let mut bn_state = Vec::new();
        for (i, (layer, slot)) in arch.layers.iter().zip(arch.param_slots()).enumerate() {
            let mut r = rng::stream(seed, "init", i as u64);
            let Some(LayerParams { weight, .. }) = slot else { continue };
            match *layer {
                Layer::Dense { inputs: fan_in, .. } => kaiming_uniform(&mut values[weight], fan_in, &mut r),
                Layer::Conv2d { in_channels, kernel, .. } => {
                    kaiming_uniform(&mut values[weight], in_channels * kernel * kernel, &mut r)
                }
                Layer::BatchNorm { channels, init } => {
                    let w = &mut values[weight];
                    match init {
                        BnInit::Ones => w.fill(1.0),
                        BnInit::Uniform01 => {
                            let u = Uniform::new(0.0, 1.0).unwrap();
                            w.iter_mut().for_each(|v| *v = u.sample(&mut r));
                        }
                        BnInit::Gauss01 => {
                            let g = Normal::new(0.0, 0.1).unwrap();
                            w.iter_mut().for_each(|v| *v = g.sample(&mut r));
                        }
                    }
                    bn_state.push(BnState { running_mean: vec![0.0; channels], running_var: vec![1.0; channels] });
                }
                _ => {}
            }
        }
        let params = ParamVector::new(values, layout)?;
        Ok(Self {
            arch,
            init_snapshot: params.clone(),
            params,
            bn_state,
            bn_epsilon: DEFAULT_BN_EPSILON,
            seed,
            revision: 0,
        })
    }

    /// Reassemble a model from stored parts (checkpoint loading).
    pub fn from_parts(
        arch: Architecture,
        params: ParamVector,
        bn_state: Vec<BnState>,
        bn_epsilon: f64,
        init_snapshot: ParamVector,
        seed: u64,
    ) -> Result<Self> {
        let layout = arch.layout()?;
        if *params.layout() != layout || *init_snapshot.layout() != layout {
            return Err(Error::Layout("stored parameters do not match the architecture".into()));
        }
        let channels: Vec<usize> = arch
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm { channels, .. } => Some(*channels),
                _ => None,
            })
            .collect();
        let ok = channels.len() == bn_state.len()
            && channels.iter().zip(&bn_state).all(|(&c, s)| {
                s.running_mean.len() == c
                    && s.running_var.len() == c
                    && s.running_var.iter().all(|&v| v >= 0.0)
            });
        if !ok {
            return Err(Error::Layout("BatchNorm state does not match the architecture".into()));
        }
        Ok(Self { arch, params, bn_state, bn_epsilon, init_snapshot, seed, revision: 0 })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// θ_0, the parameters at construction.
    pub fn init_snapshot(&self) -> &ParamVector {
        &self.init_snapshot
    }

    pub fn bn_state(&self) -> &[BnState] {
        &self.bn_state
    }

    pub fn bn_epsilon(&self) -> f64 {
        self.bn_epsilon
    }

    pub fn set_bn_epsilon(&mut self, eps: f64) {
        self.bn_epsilon = eps;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes().expect("validated at construction")
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params)?;
        self.params = params;
        self.revision += 1;
        Ok(())
    }

    /// Mutable access to the raw parameter values. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        self.params.values_mut()
    }

    /// Clone with new parameters (same BN state and init snapshot).
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    pub fn set_bn_state(&mut self, state: Vec<BnState>) -> Result<()> {
        if state.len() != self.bn_state.len()
            || state.iter().zip(&self.bn_state).any(|(a, b)| a.running_mean.len() != b.running_mean.len())
        {
            return Err(Error::Layout("BatchNorm state shape mismatch".into()));
        }
        self.bn_state = state;
        Ok(())
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.arch.input_shape.len() + 1
            || batch.shape()[1..] != self.arch.input_shape[..]
        {
            return Err(Error::Shape(format!(
                "batch {:?} does not match input shape {:?}",
                batch.shape(),
                self.arch.input_shape
            )));
        }
        if batch.batch() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }

    /// Runs layers `[0, until)`.
    fn propagate(&self, batch: &Tensor, mode: Mode, until: usize) -> Result<Pass> {
        self.check_input(batch)?;
        let shapes = self.arch.shapes()?;
        let slots = self.arch.param_slots();
        let p = self.params.values();
        let n = batch.batch();
        let train = mode == Mode::Train;
        let mut x = batch.data().to_vec();
        let mut in_shape: &[usize] = &self.arch.input_shape;
        let mut saved = Vec::new();
        let mut batch_stats = Vec::new();
        let mut bn_index = 0;
        for (i, layer) in self.arch.layers.iter().enumerate().take(until) {
            let slot = slots[i].as_ref();
            let (y, keep) = match *layer {
                Layer::Dense { inputs, outputs, .. } => {
                    let s = slot.unwrap();
                    let y = kernels::dense_forward(
                        DenseDims { batch: n, inputs, outputs },
                        &x,
                        &p[s.weight.clone()],
                        s.bias.as_ref().map(|b| &p[b.clone()]),
                    );
                    (y, Saved::Input(if train { x } else { Vec::new() }))
                }
                Layer::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                    let s = slot.unwrap();
                    let d = ConvDims {
                        batch: n,
                        in_channels,
                        height: in_shape[1],
                        width: in_shape[2],
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    };
                    let bias = s.bias.clone().unwrap();
                    let y = kernels::conv_forward(d, &x, &p[s.weight.clone()], &p[bias]);
                    (y, Saved::Input(if train { x } else { Vec::new() }))
                }
                Layer::BatchNorm { channels, .. } => {
                    let s = slot.unwrap();
                    let d = bn_dims(n, channels, in_shape);
                    let (w, b) = (&p[s.weight.clone()], &p[s.bias.clone().unwrap()]);
                    let out = if train {
                        let o = kernels::bn_forward_train(d, &x, w, b, self.bn_epsilon);
                        batch_stats.push((bn_index, o.mean, o.var, d.per_channel()));
                        (o.y, Saved::Bn { x_hat: o.x_hat, inv_std: o.inv_std })
                    } else {
                        let st = &self.bn_state[bn_index];
                        let y = kernels::bn_forward_eval(
                            d,
                            &x,
                            w,
                            b,
                            &st.running_mean,
                            &st.running_var,
                            self.bn_epsilon,
                        );
                        (y, Saved::Nothing)
                    };
                    bn_index += 1;
                    out
                }
                Layer::Relu => {
                    let mask: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
                    let y = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                    (y, if train { Saved::Mask(mask) } else { Saved::Nothing })
                }
                Layer::Flatten | Layer::SoftmaxCrossEntropy => (x, Saved::Nothing),
            };
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(self.arch.layer_tag(i)));
            }
            saved.push(keep);
            x = y;
            in_shape = &shapes[i];
        }
        let mut shape = vec![n];
        shape.extend_from_slice(in_shape);
        Ok(Pass { out: Tensor::new(shape, x)?, saved, batch_stats })
    }

    /// Forward pass. Train mode normalises with batch statistics and folds
    /// them into the running statistics; eval mode uses the running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        let pass = self.propagate(batch, mode, self.arch.layers.len())?;
        if mode == Mode::Train {
            for (k, mean, var, count) in &pass.batch_stats {
                let st = &mut self.bn_state[*k];
                let unbias = if *count > 1 { *count as f64 / (*count - 1) as f64 } else { 1.0 };
                for c in 0..mean.len() {
                    st.running_mean[c] = (1.0 - BN_MOMENTUM) * st.running_mean[c] + BN_MOMENTUM * mean[c];
                    st.running_var[c] =
                        (1.0 - BN_MOMENTUM) * st.running_var[c] + BN_MOMENTUM * var[c] * unbias;
                }
            }
        }
        let cache = ForwardCache {
            mode,
            revision: self.revision,
            batch: batch.batch(),
            saved: pass.saved,
            logits: pass.out.clone(),
        };
        Ok((pass.out, cache))
    }

    /// Eval-mode logits without touching any state.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.propagate(batch, Mode::Eval, self.arch.layers.len())?.out)
    }

    /// Mean cross-entropy of a batch as a pure function of the parameters.
    /// Train mode uses batch statistics but leaves the running statistics alone.
    pub fn batch_loss(&self, batch: &Tensor, labels: &[usize], mode: Mode) -> Result<f64> {
        let pass = self.propagate(batch, mode, self.arch.layers.len())?;
        Ok(softmax_cross_entropy(&pass.out, labels)?.loss)
    }

    /// Eval-mode input of the layer with the given tag (for a ReLU: its pre-activation).
    pub fn activations(&self, batch: &Tensor, tag: &str) -> Result<Tensor> {
        let idx = self.arch.find_tag(tag).ok_or_else(|| Error::UnknownLayer(tag.into()))?;
        Ok(self.propagate(batch, Mode::Eval, idx)?.out)
    }

    /// Gradient of the mean cross-entropy w.r.t. all learnable parameters.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<ParamVector> {
        if cache.mode != Mode::Train {
            return Err(Error::EvalCache);
        }
        if cache.revision != self.revision || cache.saved.len() != self.arch.layers.len() {
            return Err(Error::StaleCache);
        }
        let n = cache.batch;
        let shapes = self.arch.shapes()?;
        let slots = self.arch.param_slots();
        let p = self.params.values();
        let mut grad = vec![0.0; p.len()];
        let mut dy = softmax_cross_entropy(&cache.logits, labels)?.dlogits.into_data();
        for i in (0..self.arch.layers.len()).rev() {
            let in_shape: &[usize] = if i == 0 { &self.arch.input_shape } else { &shapes[i - 1] };
            let need_dx = i > 0;
            let slot = slots[i].as_ref();
            dy = match (&self.arch.layers[i], &cache.saved[i]) {
                (&Layer::Dense { inputs, outputs, .. }, Saved::Input(x)) => {
                    let s = slot.unwrap();
                    let (dw, db) = split_grad(&mut grad, s);
                    let dx = kernels::dense_backward(
                        DenseDims { batch: n, inputs, outputs },
                        x,
                        &dy,
                        &p[s.weight.clone()],
                        dw,
                        db,
                        need_dx,
                    );
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (&Layer::Conv2d { in_channels, out_channels, kernel, stride, padding }, Saved::Input(x)) => {
                    let s = slot.unwrap();
                    let d = ConvDims {
                        batch: n,
                        in_channels,
                        height: in_shape[1],
                        width: in_shape[2],
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    };
                    let (dw, db) = split_grad(&mut grad, s);
                    match kernels::conv_backward(d, x, &dy, &p[s.weight.clone()], dw, db.unwrap(), need_dx) {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (&Layer::BatchNorm { channels, .. }, Saved::Bn { x_hat, inv_std }) => {
                    let s = slot.unwrap();
                    let w = &p[s.weight.clone()];
                    let (dw, db) = split_grad(&mut grad, s);
                    kernels::bn_backward(bn_dims(n, channels, in_shape), &dy, x_hat, inv_std, w, dw, db.unwrap())
                }
                (Layer::Relu, Saved::Mask(mask)) => {
                    dy.iter().zip(mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect()
                }
                (Layer::Flatten | Layer::SoftmaxCrossEntropy, _) => dy,
                _ => return Err(Error::StaleCache),
            };
        }
        self.params.with_values(grad)
    }

    /// Train-mode forward + backward on one batch; updates running statistics.
    pub fn loss_and_grad(&mut self, batch: &Tensor, labels: &[usize]) -> Result<(f64, usize, ParamVector)> {
        let (logits, cache) = self.forward(batch, Mode::Train)?;
        let ce = softmax_cross_entropy(&logits, labels)?;
        let g = self.backward(&cache, labels)?;
        Ok((ce.loss, ce.errors, g))
    }

    /// FNV-1a hash of the parameter and running-statistic bits; identifies a
    /// checkpoint in scan provenance.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        self.params.values().iter().for_each(|&v| eat(v));
        for st in &self.bn_state {
            st.running_mean.iter().chain(&st.running_var).for_each(|&v| eat(v));
        }
        h
    }

    /// Top-1 error and mean cross-entropy in eval mode.
    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut errors = 0usize;
        let mut ce = 0.0;
        for (x, y) in data.chunks(EVAL_CHUNK) {
            let logits = self.predict(&x)?;
            let out = softmax_cross_entropy(&logits, &y)?;
            errors += out.errors;
            ce += out.loss * y.len() as f64;
        }
        Ok(Evaluation { error: errors as f64 / data.len() as f64, ce: ce / data.len() as f64 })
    }

    /// Replace every BatchNorm's running statistics with the exact per-channel
    /// mean and population variance of its input over the whole dataset.
    /// Layers are processed in order, so each BN sees inputs normalised by the
    /// already-recomputed statistics upstream. Learnable parameters are untouched.
    pub fn bn_recompute(&mut self, data: &Dataset) -> Result<()> {
        if !self.arch.has_batchnorm() {
            return Ok(());
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let shapes = self.arch.shapes()?;
        let slots = self.arch.param_slots();
        let mut chunks: Vec<(usize, Vec<f64>)> =
            data.chunks(EVAL_CHUNK).map(|(x, _)| (x.batch(), x.into_data())).collect();
        let total = data.len();
        let last_bn = self.arch.layers.iter().rposition(|l| matches!(l, Layer::BatchNorm { .. })).unwrap();
        let mut bn_index = 0;
        for i in 0..=last_bn {
            let in_shape: &[usize] = if i == 0 { &self.arch.input_shape } else { &shapes[i - 1] };
            if let Layer::BatchNorm { channels, .. } = self.arch.layers[i] {
                let spatial: usize = in_shape[1..].iter().product();
                let count = (total * spatial) as f64;
                let mut mean = vec![0.0; channels];
                for (n, x) in &chunks {
                    let d = bn_dims(*n, channels, in_shape);
                    for (c, m) in mean.iter_mut().enumerate() {
                        d.for_channel(c, |k| *m += x[k]);
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![0.0; channels];
                for (n, x) in &chunks {
                    let d = bn_dims(*n, channels, in_shape);
                    for (c, v) in var.iter_mut().enumerate() {
                        d.for_channel(c, |k| *v += (x[k] - mean[c]) * (x[k] - mean[c]));
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                self.bn_state[bn_index] = BnState { running_mean: mean, running_var: var };
                bn_index += 1;
            }
            if i == last_bn {
                break;
            }
            // Advance every chunk through layer i in eval mode.
            for (n, x) in chunks.iter_mut() {
                *x = self.eval_layer(i, *n, in_shape, &slots, core::mem::take(x), bn_index)?;
            }
        }
        Ok(())
    }

    fn eval_layer(
        &self,
        i: usize,
        n: usize,
        in_shape: &[usize],
        slots: &[Option<LayerParams>],
        x: Vec<f64>,
        bn_after: usize,
    ) -> Result<Vec<f64>> {
        let p = self.params.values();
        let slot = slots[i].as_ref();
        let y = match self.arch.layers[i] {
            Layer::Dense { inputs, outputs, .. } => {
                let s = slot.unwrap();
                kernels::dense_forward(
                    DenseDims { batch: n, inputs, outputs },
                    &x,
                    &p[s.weight.clone()],
                    s.bias.as_ref().map(|b| &p[b.clone()]),
                )
            }
            Layer::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let s = slot.unwrap();
                let d = ConvDims {
                    batch: n,
                    in_channels,
                    height: in_shape[1],
                    width: in_shape[2],
                    out_channels,
                    kernel,
                    stride,
                    padding,
                };
                kernels::conv_forward(d, &x, &p[s.weight.clone()], &p[s.bias.clone().unwrap()])
            }
            Layer::BatchNorm { channels, .. } => {
                let s = slot.unwrap();
                let st = &self.bn_state[bn_after - 1];
                kernels::bn_forward_eval(
                    bn_dims(n, channels, in_shape),
                    &x,
                    &p[s.weight.clone()],
                    &p[s.bias.clone().unwrap()],
                    &st.running_mean,
                    &st.running_var,
                    self.bn_epsilon,
                )
            }
            Layer::Relu => x.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect(),
            Layer::Flatten | Layer::SoftmaxCrossEntropy => x,
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(self.arch.layer_tag(i)));
        }
        Ok(y)
    }
}

fn bn_dims(batch: usize, channels: usize, in_shape: &[usize]) -> BnDims {
    BnDims { batch, channels, spatial: in_shape[1..].iter().product() }
}

fn split_grad<'a>(grad: &'a mut [f64], s: &LayerParams) -> (&'a mut [f64], Option<&'a mut [f64]>) {
    // Weight range always precedes the bias range.
    match &s.bias {
        Some(b) => {
            debug_assert_eq!(s.weight.end, b.start);
            let (w, rest) = grad[s.weight.start..b.end].split_at_mut(s.weight.len());
            (w, Some(rest))
        }
        None => (&mut grad[s.weight.clone()], None),
    }
}

fn kaiming_uniform(w: &mut [f64], fan_in: usize, r: &mut rng::Rng) {
    let bound = libm::sqrt(6.0 / fan_in as f64);
    for v in w.iter_mut() {
        *v = r.random_range(-bound..bound);
    }
}

/// Mean cross-entropy, its gradient w.r.t. the logits, and the top-1 error count.
pub struct CrossEntropy {
    pub loss: f64,
    pub dlogits: Tensor,
    pub errors: usize,
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let n = logits.batch();
    let c = logits.row_len();
    if labels.len() != n || logits.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let mut d = vec![0.0; n * c];
    let mut loss = 0.0;
    let mut errors = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Label { label: y, classes: c });
        }
        let row = logits.row(i);
        loss += stats::log_sum_exp(row) - row[y];
        if stats::argmax(row) != y {
            errors += 1;
        }
        let dr = &mut d[i * c..(i + 1) * c];
        stats::softmax_into(row, dr);
        dr[y] -= 1.0;
        dr.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(CrossEntropy { loss: loss / n as f64, dlogits: Tensor::new(vec![n, c], d)?, errors })
}
