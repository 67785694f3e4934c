//! One-dimensional loss landscapes: `θ_f + λ·s·d(ε)` scans, two-model
//! interpolation, asymmetry statistics, the split-and-average (soup)
//! experiment and the BatchNorm-initialisation study.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::nn::{train_with, Architecture, BnInit, Layer, Model, TrainConfig, TrainHooks};
use crate::noise::{CommonKind, NoiseKind, NoiseSpec, NoiseVector};
use crate::params::{filter_ns, ns_scale, sign_consistency_ratio, FiveWay, ParamVector, SignConsistency};
use crate::stats::{self, Histogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Whole-vector norm scaling to `||θ_f||`.
    Ns,
    /// Per-filter norm scaling.
    FilterNs,
    /// Use the direction as given.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub lambdas: Vec<f64>,
    pub s: f64,
    pub normalization: Normalization,
    pub bn_recompute: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { lambdas: uniform_grid(-1.0, 1.0, 41), s: 1.0, normalization: Normalization::Ns, bn_recompute: true }
    }
}

/// `points` evenly spaced values from `lo` to `hi` inclusive. Values within
/// rounding of zero are snapped to exactly zero.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    (0..points)
        .map(|i| {
            let v = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            if v.abs() < 1e-12 { 0.0 } else { v }
        })
        .collect()
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.lambdas;
        if g.is_empty() || !g.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("lambda grid must be non-empty and strictly increasing".into()));
        }
        if !g.contains(&0.0) {
            return Err(Error::Config("lambda grid must contain 0".into()));
        }
        let symmetric = g.iter().zip(g.iter().rev()).all(|(a, b)| (a + b).abs() <= 1e-12 * a.abs().max(1.0));
        if !symmetric {
            return Err(Error::Config("lambda grid must be symmetric about 0".into()));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::Config(format!("scale s must be > 0, got {}", self.s)));
        }
        Ok(())
    }
}

/// Where scan points are evaluated and where BN statistics are recomputed.
#[derive(Debug, Clone, Copy)]
pub struct ScanData<'a> {
    pub eval: &'a Dataset,
    pub calib: &'a Dataset,
}

impl<'a> ScanData<'a> {
    /// Evaluate and recompute statistics on the same set.
    pub fn same(data: &'a Dataset) -> Self {
        Self { eval: data, calib: data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub error: f64,
    pub ce: f64,
    /// False when the perturbed model produced non-finite values; the point is
    /// then recorded as `error = 1`, `ce = +inf`.
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub noise: Option<NoiseSpec>,
    pub s: f64,
    pub normalization: Option<Normalization>,
    pub bn_recompute: bool,
    /// [`Model::fingerprint`] of the centre model.
    pub model_id: u64,
}

impl ScanResult {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.error).collect()
    }

    pub fn at(&self, lambda: f64) -> Option<&ScanPoint> {
        self.points.iter().find(|p| (p.lambda - lambda).abs() < 1e-12)
    }
}

/// Evaluate `params` on the model's architecture, recomputing BN statistics
/// first if asked. Failures caused by non-finite values become a flagged point.
pub fn evaluate_point(
    base: &Model,
    params: ParamVector,
    lambda: f64,
    data: ScanData<'_>,
    bn_recompute: bool,
) -> Result<ScanPoint> {
    let mut m = base.with_params(params)?;
    let out = (|| {
        if bn_recompute {
            m.bn_recompute(data.calib)?;
        }
        m.evaluate(data.eval)
    })();
    match out {
        Ok(e) if e.ce.is_finite() => Ok(ScanPoint { lambda, error: e.error, ce: e.ce, finite: true }),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(ScanPoint { lambda, error: 1.0, ce: f64::INFINITY, finite: false }),
        Err(e) => Err(e),
    }
}

/// Direction actually added to `θ_f`, before the `λ·s` factor.
pub fn scan_direction(noise: &ParamVector, theta: &ParamVector, norm: Normalization) -> Result<ParamVector> {
    match norm {
        Normalization::Ns => ns_scale(noise, theta),
        Normalization::FilterNs => filter_ns(noise, theta),
        Normalization::Raw => {
            noise.check_layout(theta)?;
            Ok(noise.clone())
        }
    }
}

pub fn scan_1d(
    model: &Model,
    noise: &NoiseVector,
    cfg: &ScanConfig,
    data: ScanData<'_>,
    exec: &impl Executor,
) -> Result<ScanResult> {
    cfg.validate()?;
    if data.eval.is_empty() || data.calib.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let theta = model.params();
    let dir = scan_direction(&noise.values, theta, cfg.normalization)?;
    let points = exec.map(cfg.lambdas.len(), |i| {
        let lambda = cfg.lambdas[i];
        let p = theta.axpy(lambda * cfg.s, &dir)?;
        evaluate_point(model, p, lambda, data, cfg.bn_recompute)
    });
    Ok(ScanResult {
        points: points.into_iter().collect::<Result<_>>()?,
        noise: Some(noise.spec),
        s: cfg.s,
        normalization: Some(cfg.normalization),
        bn_recompute: cfg.bn_recompute,
        model_id: model.fingerprint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymmetry {
    pub pos_mean: f64,
    pub neg_mean: f64,
    /// `neg_mean - pos_mean`: positive when the forward side is flatter.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Error,
    Ce,
}

/// Grid averages over `λ > 0` and `λ < 0`; `λ = 0` is in neither.
pub fn asymmetry_stats(result: &ScanResult, metric: Metric) -> Asymmetry {
    let value = |p: &ScanPoint| match metric {
        Metric::Error => p.error,
        Metric::Ce => p.ce,
    };
    let pos: Vec<f64> = result.points.iter().filter(|p| p.lambda > 0.0).map(value).collect();
    let neg: Vec<f64> = result.points.iter().filter(|p| p.lambda < 0.0).map(value).collect();
    let pos_mean = stats::mean(&pos);
    let neg_mean = stats::mean(&neg);
    Asymmetry { pos_mean, neg_mean, gap: neg_mean - pos_mean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpolation {
    pub curve: ScanResult,
    /// `SSR(θ_1, θ_2 - θ_1)`
    pub ssr_start: SignConsistency,
    /// `SSR(θ_2, θ_2 - θ_1)`
    pub ssr_end: SignConsistency,
}

/// `(1 - λ)·θ_1 + λ·θ_2` over `lambdas`, with BN statistics recomputed at every point.
pub fn interpolate_two(
    a: &Model,
    b: &Model,
    lambdas: &[f64],
    data: ScanData<'_>,
    exec: &impl Executor,
) -> Result<Interpolation> {
    if a.arch() != b.arch() {
        return Err(Error::Layout("interpolation endpoints have different architectures".into()));
    }
    let (ta, tb) = (a.params(), b.params());
    let eps = tb.sub(ta)?;
    let points = exec.map(lambdas.len(), |i| {
        let lambda = lambdas[i];
        evaluate_point(a, ta.lerp(tb, lambda)?, lambda, data, true)
    });
    Ok(Interpolation {
        curve: ScanResult {
            points: points.into_iter().collect::<Result<_>>()?,
            noise: None,
            s: 1.0,
            normalization: None,
            bn_recompute: true,
            model_id: a.fingerprint(),
        },
        ssr_start: sign_consistency_ratio(ta, &eps)?,
        ssr_end: sign_consistency_ratio(tb, &eps)?,
    })
}

/// Error and accuracy of a model after BN recalibration.
fn calibrated_error(model: &Model, data: ScanData<'_>) -> Result<f64> {
    Ok(evaluate_point(model, model.params().clone(), 0.0, data, true)?.error)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupRow {
    pub epoch: usize,
    pub ssr_ia: f64,
    pub ssr_ib: f64,
    pub ssr_ab: f64,
    pub acc_a: f64,
    pub acc_b: f64,
    pub acc_mid: f64,
    /// `acc_mid - (acc_a + acc_b) / 2`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupReport {
    pub rows: Vec<SoupRow>,
    /// Interpolation curve between the two models at every checkpoint (empty grid: none).
    pub curves: Vec<(usize, ScanResult)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupConfig {
    pub epochs: Vec<usize>,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub curve_lambdas: Vec<f64>,
}

impl Default for SoupConfig {
    fn default() -> Self {
        Self {
            epochs: vec![1, 2, 3, 5, 10, 20, 30, 50],
            split_seed: 0,
            train: TrainConfig::default(),
            curve_lambdas: uniform_grid(-1.0, 2.0, 31),
        }
    }
}

/// Train two models from the shared `init` on disjoint stratified halves of
/// `data.calib`, checkpointing at `cfg.epochs`; at each checkpoint report sign
/// consistency against the init and between the pair, and the midpoint gap on
/// `data.eval`. Training runs for `max(cfg.epochs)` epochs with the schedule
/// of `cfg.train`; epoch `0` denotes the untrained pair.
pub fn soup_experiment(init: &Model, data: ScanData<'_>, cfg: &SoupConfig, exec: &impl Executor) -> Result<SoupReport> {
    let mut epochs = cfg.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();
    let total = epochs.last().copied().unwrap_or(0);
    let (half_a, half_b) = data.calib.stratified_halves(cfg.split_seed)?;
    let halves = [&half_a, &half_b];
    let train_cfg = TrainConfig { epochs: total, ..cfg.train };

    let snapshots = exec.map(2, |side| -> Result<Vec<Model>> {
        let mut m = init.clone();
        let mut snaps = Vec::new();
        if epochs.first() == Some(&0) {
            snaps.push(m.clone());
        }
        let mut hook = |log: &crate::nn::EpochLog, model: &Model| {
            if epochs.binary_search(&(log.epoch + 1)).is_ok() {
                snaps.push(model.clone());
            }
        };
        let cfg_side = TrainConfig { seed: crate::rng::derive_seed(train_cfg.seed, "soup", side as u64), ..train_cfg };
        train_with(&mut m, halves[side], &cfg_side, TrainHooks { regularizer: None, on_epoch: Some(&mut hook) })?;
        Ok(snaps)
    });
    let mut snapshots = snapshots.into_iter();
    let snaps_a = snapshots.next().unwrap()?;
    let snaps_b = snapshots.next().unwrap()?;

    let theta0 = init.params();
    let rows_and_curves = exec.map(epochs.len(), |i| -> Result<(SoupRow, Option<ScanResult>)> {
        let (a, b) = (&snaps_a[i], &snaps_b[i]);
        let mid = a.with_params(a.params().lerp(b.params(), 0.5)?)?;
        let acc_a = 1.0 - calibrated_error(a, data)?;
        let acc_b = 1.0 - calibrated_error(b, data)?;
        let acc_mid = 1.0 - calibrated_error(&mid, data)?;
        let row = SoupRow {
            epoch: epochs[i],
            ssr_ia: sign_consistency_ratio(theta0, a.params())?.overall,
            ssr_ib: sign_consistency_ratio(theta0, b.params())?.overall,
            ssr_ab: sign_consistency_ratio(a.params(), b.params())?.overall,
            acc_a,
            acc_b,
            acc_mid,
            gap: acc_mid - 0.5 * (acc_a + acc_b),
        };
        let curve = if cfg.curve_lambdas.is_empty() {
            None
        } else {
            Some(interpolate_two(a, b, &cfg.curve_lambdas, data, &crate::exec::Sequential)?.curve)
        };
        Ok((row, curve))
    });
    let mut report = SoupReport { rows: Vec::new(), curves: Vec::new() };
    for (i, r) in rows_and_curves.into_iter().enumerate() {
        let (row, curve) = r?;
        report.rows.push(row);
        if let Some(c) = curve {
            report.curves.push((epochs[i], c));
        }
    }
    Ok(report)
}

/// Copy of `arch` with every BatchNorm initialised as `init`.
pub fn with_bn_init(arch: &Architecture, init: BnInit) -> Architecture {
    let mut a = arch.clone();
    for l in &mut a.layers {
        if let Layer::BatchNorm { init: i, .. } = l {
            *i = init;
        }
    }
    a
}

/// BN scale parameters of a model, concatenated in layer order.
pub fn bn_weights(model: &Model) -> Vec<f64> {
    let p = model.params();
    p.layout()
        .groups()
        .iter()
        .filter(|g| g.kind.five_way() == FiveWay::BnWeight)
        .flat_map(|g| p.values()[g.range.clone()].iter().copied())
        .collect()
}

pub fn positive_fraction(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().filter(|&&v| v > 0.0).count() as f64 / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnInitReport {
    pub init: BnInit,
    pub positive_init: f64,
    pub positive_trained: f64,
    pub hist_init: Histogram,
    pub hist_trained: Histogram,
    pub train_error: f64,
    pub scan_ns: ScanResult,
    pub scan_filter_ns: ScanResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnInitConfig {
    pub model_seed: u64,
    pub train: TrainConfig,
    pub scan: ScanConfig,
    pub noise_seed: u64,
    pub bins: usize,
}

/// For each BN init kind: train from scratch, record the sign balance and
/// histogram of BN scales before and after, then scan along `ε ∈ {0,1}`
/// under both whole-vector and filter-wise normalisation.
pub fn bn_init_study(
    arch: &Architecture,
    train: &Dataset,
    data: ScanData<'_>,
    kinds: &[BnInit],
    cfg: &BnInitConfig,
    exec: &impl Executor,
) -> Result<Vec<BnInitReport>> {
    if !arch.has_batchnorm() {
        return Err(Error::Architecture("BN init study needs at least one BatchNorm layer".into()));
    }
    let seq = crate::exec::Sequential;
    let out = exec.map(kinds.len(), |i| -> Result<BnInitReport> {
        let mut m = Model::new(with_bn_init(arch, kinds[i]), cfg.model_seed)?;
        let w0 = bn_weights(&m);
        let log = crate::nn::train(&mut m, train, &cfg.train)?;
        m.bn_recompute(data.calib)?;
        let w1 = bn_weights(&m);
        let noise = NoiseSpec::new(NoiseKind::Common(CommonKind::Binary), cfg.noise_seed).realize(None, m.params())?;
        let ns = ScanConfig { normalization: Normalization::Ns, ..cfg.scan.clone() };
        let fns = ScanConfig { normalization: Normalization::FilterNs, ..cfg.scan.clone() };
        Ok(BnInitReport {
            init: kinds[i],
            positive_init: positive_fraction(&w0),
            positive_trained: positive_fraction(&w1),
            hist_init: Histogram::auto(&w0, cfg.bins),
            hist_trained: Histogram::auto(&w1, cfg.bins),
            train_error: log.last().map_or(f64::NAN, |l| l.error),
            scan_ns: scan_1d(&m, &noise, &ns, data, &seq)?,
            scan_filter_ns: scan_1d(&m, &noise, &fns, data, &seq)?,
        })
    });
    out.into_iter().collect()
}
