//! Softmax-classifier probes (gradient, Hessian trace, quadratic forms), the
//! ReLU shift simulation, activation confusion between two models, the
//! sign/gradient orthogonality check and the `w + λ·sign(w)` pattern sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, Model};
use crate::params::{ns_scale, sign, ParamVector};
use crate::rng;
use crate::scan::ScanData;
use crate::stats::{self, Histogram};

/// Linear softmax classifier `p = softmax(W h)` with `W` stored row-major, one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxProbe {
    pub w: Vec<f64>,
    pub classes: usize,
    pub dim: usize,
}

impl SoftmaxProbe {
    pub fn new(w: Vec<f64>, classes: usize, dim: usize) -> Result<Self> {
        if classes == 0 || dim == 0 || w.len() != classes * dim {
            return Err(Error::Shape(format!("{} weights for a {classes}x{dim} probe", w.len())));
        }
        Ok(Self { w, classes, dim })
    }

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { w: vec![0.0; classes * dim], classes, dim }
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        logits(&self.w, self.classes, h)
    }

    pub fn probs(&self, h: &[f64]) -> Vec<f64> {
        let z = self.logits(h);
        let mut p = vec![0.0; self.classes];
        stats::softmax_into(&z, &mut p);
        p
    }

    /// `-log p_y`.
    pub fn loss(&self, h: &[f64], y: usize) -> f64 {
        let z = self.logits(h);
        stats::log_sum_exp(&z) - z[y]
    }

    pub fn with_weights(&self, w: Vec<f64>) -> Self {
        Self { w, classes: self.classes, dim: self.dim }
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.feature_len() != self.dim || data.num_classes() != self.classes {
            return Err(Error::Shape(format!(
                "dataset ({} features, {} classes) does not fit a {}x{} probe",
                data.feature_len(),
                data.num_classes(),
                self.classes,
                self.dim
            )));
        }
        Ok(())
    }
}

fn logits(w: &[f64], classes: usize, h: &[f64]) -> Vec<f64> {
    let d = h.len();
    (0..classes).map(|c| w[c * d..(c + 1) * d].iter().zip(h).map(|(a, b)| a * b).sum()).collect()
}

/// Row `c` is `-(1{c = y} - p_c) · h`.
pub fn softmax_grad(probe: &SoftmaxProbe, h: &[f64], y: usize) -> Vec<f64> {
    let p = probe.probs(h);
    let mut g = vec![0.0; probe.classes * probe.dim];
    for c in 0..probe.classes {
        let r = p[c] - if c == y { 1.0 } else { 0.0 };
        for (gi, hi) in g[c * probe.dim..(c + 1) * probe.dim].iter_mut().zip(h) {
            *gi = r * hi;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianTrace {
    /// `tr(diag(p) - p pᵀ) = Σ p_c (1 - p_c)`
    pub tr_p: f64,
    /// `tr_p · ||h||²`
    pub tr_h: f64,
}

pub fn hessian_trace(probe: &SoftmaxProbe, h: &[f64]) -> HessianTrace {
    trace_from(&probe.probs(h), h)
}

fn trace_from(p: &[f64], h: &[f64]) -> HessianTrace {
    let tr_p: f64 = p.iter().map(|q| q * (1.0 - q)).sum();
    let hh: f64 = h.iter().map(|v| v * v).sum();
    HessianTrace { tr_p, tr_h: tr_p * hh }
}

/// `ηᵀ ((diag(p) - p pᵀ) ⊗ h hᵀ) η` for `η` shaped like `W`, without forming
/// the Hessian: with `z = η h` the form is the variance of `z` under `p`.
pub fn hessian_quadratic(p: &[f64], h: &[f64], eta: &[f64]) -> f64 {
    let z = logits(eta, p.len(), h);
    let m: f64 = p.iter().zip(&z).map(|(a, b)| a * b).sum();
    p.iter().zip(&z).map(|(a, b)| a * (b - m) * (b - m)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxMetricsRow {
    pub lambda: f64,
    pub error: f64,
    pub ce: f64,
    /// `E_x[tr P_λ]`
    pub tr_p: f64,
    /// `E_x[tr H_λ]`
    pub tr_h: f64,
    /// `⟨η, g_λ⟩` with `g_λ` the mean gradient over the set.
    pub first_order: f64,
    /// `ηᵀ H_λ η` with `H_λ` the mean Hessian over the set.
    pub second_order: f64,
}

/// Perturbation direction used by [`softmax_metrics`]: `|ε|·sign(W)` when
/// sign-consistent, `ε` otherwise.
pub fn probe_direction(probe: &SoftmaxProbe, eps: &[f64], sign_consistent: bool) -> Vec<f64> {
    if sign_consistent {
        eps.iter().zip(&probe.w).map(|(e, w)| e.abs() * sign(*w)).collect()
    } else {
        eps.to_vec()
    }
}

pub fn softmax_metrics(
    probe: &SoftmaxProbe,
    data: &Dataset,
    eps: &[f64],
    lambdas: &[f64],
    sign_consistent: bool,
) -> Result<Vec<SoftmaxMetricsRow>> {
    probe.check(data)?;
    if eps.len() != probe.w.len() {
        return Err(Error::Shape(format!("direction has {} entries, W has {}", eps.len(), probe.w.len())));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eta = probe_direction(probe, eps, sign_consistent);
    let n = data.len() as f64;
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let w: Vec<f64> = probe.w.iter().zip(&eta).map(|(w, e)| w + lambda * e).collect();
            let mut row = SoftmaxMetricsRow { lambda, error: 0.0, ce: 0.0, tr_p: 0.0, tr_h: 0.0, first_order: 0.0, second_order: 0.0 };
            let mut p = vec![0.0; probe.classes];
            for i in 0..data.len() {
                let h = data.sample(i);
                let y = data.labels()[i];
                let z = logits(&w, probe.classes, h);
                stats::softmax_into(&z, &mut p);
                if stats::argmax(&z) != y {
                    row.error += 1.0;
                }
                row.ce += stats::log_sum_exp(&z) - z[y];
                let t = trace_from(&p, h);
                row.tr_p += t.tr_p;
                row.tr_h += t.tr_h;
                // ⟨η, g⟩ = Σ_c (p_c - 1{c=y}) (η_c · h)
                let eh = logits(&eta, probe.classes, h);
                row.first_order += (0..probe.classes).map(|c| (p[c] - if c == y { 1.0 } else { 0.0 }) * eh[c]).sum::<f64>();
                row.second_order += hessian_quadratic(&p, h, &eta);
            }
            row.error /= n;
            row.ce /= n;
            row.tr_p /= n;
            row.tr_h /= n;
            row.first_order /= n;
            row.second_order /= n;
            row
        })
        .collect();
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearProbeConfig {
    pub lr: f64,
    pub l2: f64,
    pub steps: usize,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self { lr: 0.5, l2: 1e-3, steps: 500 }
    }
}

/// Full-batch gradient descent on mean cross-entropy plus `l2/2 · ||W||²`, from `W = 0`.
pub fn train_linear_probe(data: &Dataset, cfg: &LinearProbeConfig) -> Result<SoftmaxProbe> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.sample_shape().len() != 1 {
        return Err(Error::Shape(format!("linear probe needs flat features, got {:?}", data.sample_shape())));
    }
    let mut probe = SoftmaxProbe::zeros(data.num_classes(), data.feature_len());
    let n = data.len() as f64;
    for _ in 0..cfg.steps {
        let mut g: Vec<f64> = probe.w.iter().map(|w| cfg.l2 * w).collect();
        for i in 0..data.len() {
            let gi = softmax_grad(&probe, data.sample(i), data.labels()[i]);
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b / n;
            }
        }
        for (w, gi) in probe.w.iter_mut().zip(g) {
            *w -= cfg.lr * gi;
        }
    }
    if probe.w.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("linear probe".into()));
    }
    Ok(probe)
}

/// Error and mean cross-entropy of a probe.
pub fn probe_evaluate(probe: &SoftmaxProbe, data: &Dataset) -> Result<(f64, f64)> {
    let rows = softmax_metrics(probe, data, &vec![0.0; probe.w.len()], &[0.0], false)?;
    Ok((rows[0].error, rows[0].ce))
}

/// NS-scaled direction for a probe: `ε / ||ε|| · ||W||`.
pub fn probe_ns(probe: &SoftmaxProbe, eps: &[f64]) -> Result<Vec<f64>> {
    let e = ParamVector::flat(eps.to_vec());
    let w = ParamVector::flat(probe.w.clone());
    Ok(ns_scale(&e, &w)?.into_values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluSimConfig {
    pub dim: usize,
    pub a: f64,
    pub trials: usize,
    pub lambdas: Vec<f64>,
    pub bins: usize,
}

impl Default for ReluSimConfig {
    fn default() -> Self {
        Self { dim: 100, a: 0.1, trials: 10_000, lambdas: vec![-1.0, -0.5, 0.0, 0.5, 1.0], bins: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluSimRow {
    pub lambda: f64,
    pub mean: f64,
    pub std: f64,
    pub hist: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluSim {
    /// `||h||²` of the fixed input.
    pub h_norm_sq: f64,
    /// Mean of `sign(w)ᵀh` over the trials.
    pub sign_dot_mean: f64,
    pub rows: Vec<ReluSimRow>,
}

/// Distribution of `(w + λ·sign(w))ᵀh` with `w = a·h + δ`, `δ ~ G(0, I)`
/// redrawn per trial and `h ~ G(0, I)` fixed. Histograms share one range.
pub fn relu_sim(cfg: &ReluSimConfig, seed: u64) -> Result<ReluSim> {
    if cfg.dim == 0 || cfg.trials == 0 {
        return Err(Error::Config("relu simulation needs dim >= 1 and trials >= 1".into()));
    }
    let mut r = rng::stream(seed, "relu-sim", 0);
    let h: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut base = Vec::with_capacity(cfg.trials);
    let mut sign_dot = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let mut wh = 0.0;
        let mut sh = 0.0;
        for &hi in &h {
            let delta: f64 = StandardNormal.sample(&mut r);
            let w = cfg.a * hi + delta;
            wh += w * hi;
            sh += sign(w) * hi;
        }
        base.push(wh);
        sign_dot.push(sh);
    }
    let values: Vec<Vec<f64>> = cfg
        .lambdas
        .iter()
        .map(|&l| base.iter().zip(&sign_dot).map(|(b, s)| b + l * s).collect())
        .collect();
    let lo = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let rows = cfg
        .lambdas
        .iter()
        .zip(&values)
        .map(|(&lambda, v)| ReluSimRow {
            lambda,
            mean: stats::mean(v),
            std: stats::std_dev(v),
            hist: Histogram::new(v, cfg.bins, lo, hi),
        })
        .collect();
    Ok(ReluSim { h_norm_sq: h.iter().map(|v| v * v).sum(), sign_dot_mean: stats::mean(&sign_dot), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// Active in both.
    pub aa: usize,
    /// Active in the base model only.
    pub ai: usize,
    /// Active in the perturbed model only.
    pub ia: usize,
    /// Inactive in both.
    pub ii: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.aa + self.ai + self.ia + self.ii
    }

    /// Fraction of units on which the two models agree.
    pub fn diag_sum(&self) -> f64 {
        (self.aa + self.ii) as f64 / self.total().max(1) as f64
    }
}

/// Compare which units of the ReLU tagged `tag` fire (pre-activation `> 0`)
/// in the two models, over every sample of `data` in eval mode.
pub fn activation_confusion(base: &Model, pert: &Model, data: &Dataset, tag: &str) -> Result<Confusion> {
    if base.arch() != pert.arch() {
        return Err(Error::Layout("models have different architectures".into()));
    }
    let idx = base.arch().find_tag(tag).ok_or_else(|| Error::UnknownLayer(tag.into()))?;
    if base.arch().layers[idx] != Layer::Relu {
        return Err(Error::UnknownLayer(format!("{tag} (not a ReLU)")));
    }
    let mut c = Confusion { aa: 0, ai: 0, ia: 0, ii: 0 };
    for (x, _) in data.chunks(crate::nn::EVAL_CHUNK) {
        let a = base.activations(&x, tag)?;
        let b = pert.activations(&x, tag)?;
        for (&u, &v) in a.data().iter().zip(b.data()) {
            match (u > 0.0, v > 0.0) {
                (true, true) => c.aa += 1,
                (true, false) => c.ai += 1,
                (false, true) => c.ia += 1,
                (false, false) => c.ii += 1,
            }
        }
    }
    Ok(c)
}

/// Confusion of `θ_f + λ·NS(|ε|·sign(θ_f))` against `θ_f` for each `λ`, with
/// BN statistics of every perturbed model recomputed on `data.calib`.
pub fn confusion_sweep(
    model: &Model,
    eps: &ParamVector,
    lambdas: &[f64],
    data: ScanData<'_>,
    tag: &str,
) -> Result<Vec<(f64, Confusion)>> {
    let theta = model.params();
    let eta = ns_scale(&eps.abs().hadamard(&theta.sign())?, theta)?;
    lambdas
        .iter()
        .map(|&l| {
            let mut m = model.with_params(theta.axpy(l, &eta)?)?;
            m.bn_recompute(data.calib)?;
            Ok((l, activation_confusion(model, &m, data.eval, tag)?))
        })
        .collect()
}

/// Gradient of the mean cross-entropy over the whole dataset, with BatchNorm
/// using the statistics of the whole set (one train-mode pass). This is the
/// gradient of the landscape that BN-recomputed scans trace.
pub fn full_gradient(model: &Model, data: &Dataset) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (x, y) = data.batch(&(0..data.len()).collect::<Vec<_>>());
    let mut m = model.clone();
    let (_, cache) = m.forward(&x, Mode::Train)?;
    m.backward(&cache, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orthogonality {
    pub cosine: f64,
    pub gradient_norm: f64,
    /// Set when the gradient is exactly zero; `cosine` is then 0.
    pub zero_gradient: bool,
}

pub fn sign_gradient_cosine(theta: &ParamVector, grad: &ParamVector) -> Result<Orthogonality> {
    let gradient_norm = grad.norm();
    let cos = theta.sign().cosine(grad)?;
    Ok(Orthogonality { cosine: cos.unwrap_or(0.0), gradient_norm, zero_gradient: gradient_norm == 0.0 })
}

pub fn gradient_orthogonality(model: &Model, data: &Dataset) -> Result<Orthogonality> {
    sign_gradient_cosine(model.params(), &full_gradient(model, data)?)
}

/// `w + λ·sign(w)` for each `λ`.
pub fn weight_pattern_sweep(w: &[f64], lambdas: &[f64]) -> Vec<Vec<f64>> {
    lambdas.iter().map(|&l| w.iter().map(|&v| v + l * sign(v)).collect()).collect()
}
