//! Flat parameter vectors with named-tensor metadata, and the algebra the
//! landscape experiments need: sign views, norms, norm-scaled and
//! filter-normalized rescaling, the adaptive-sharpness diagonal, sign
//! consistency ratios and per-group statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    BnWeight,
    BnBias,
    ClfWeight,
    ClfBias,
    OtherWeight,
    OtherBias,
}

/// The five buckets used for per-group plots. BN biases are folded into `OtherBias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FiveWay {
    BnWeight,
    ClfWeight,
    ClfBias,
    OtherWeight,
    OtherBias,
}

impl FiveWay {
    pub const ALL: [FiveWay; 5] = [
        FiveWay::BnWeight,
        FiveWay::ClfWeight,
        FiveWay::ClfBias,
        FiveWay::OtherWeight,
        FiveWay::OtherBias,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FiveWay::BnWeight => "BN Weight",
            FiveWay::ClfWeight => "CLF Weight",
            FiveWay::ClfBias => "CLF Bias",
            FiveWay::OtherWeight => "Other Weight",
            FiveWay::OtherBias => "Other Bias",
        }
    }
}

impl GroupKind {
    pub fn five_way(self) -> FiveWay {
        match self {
            GroupKind::BnWeight => FiveWay::BnWeight,
            GroupKind::ClfWeight => FiveWay::ClfWeight,
            GroupKind::ClfBias => FiveWay::ClfBias,
            GroupKind::OtherWeight => FiveWay::OtherWeight,
            GroupKind::BnBias | GroupKind::OtherBias => FiveWay::OtherBias,
        }
    }
}

/// One named tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub range: Range<usize>,
    pub kind: GroupKind,
    /// Length of each filter when the tensor is split into equal contiguous
    /// filters (conv output channels, dense output rows). `None` for biases
    /// and BN parameters.
    pub filter_len: Option<usize>,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    /// Absolute index ranges of the filters, empty when the group has none.
    pub fn filters(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let len = self.filter_len.unwrap_or(0);
        let count = self.len().checked_div(len).unwrap_or(0);
        (0..count).map(move |j| {
            let start = self.range.start + j * len;
            start..start + len
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    groups: Vec<ParamGroup>,
    len: usize,
}

impl Layout {
    /// Builds a layout from `(name, len, kind, filter_len)` entries laid out back to back.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize, GroupKind, Option<usize>)>,
        S: Into<String>,
    {
        let mut groups = Vec::new();
        let mut start = 0;
        for (name, len, kind, filter_len) in entries {
            if let Some(f) = filter_len {
                if f == 0 || len % f != 0 {
                    return Err(Error::Layout(format!(
                        "filter length {f} does not divide tensor length {len}"
                    )));
                }
            }
            groups.push(ParamGroup { name: name.into(), range: start..start + len, kind, filter_len });
            start += len;
        }
        Ok(Self { groups, len: start })
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Per-position five-way bucket.
    pub fn five_way_of(&self) -> Vec<FiveWay> {
        let mut out = Vec::with_capacity(self.len);
        for g in &self.groups {
            out.extend(core::iter::repeat_n(g.kind.five_way(), g.len()));
        }
        out
    }
}

/// Flat learnable-parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Single unfiltered group; handy for tests and probes.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Layout::from_entries([("flat", values.len(), GroupKind::OtherWeight, None)])
            .expect("flat layout");
        Self { values, layout }
    }

    /// Single group split into filters of `filter_len`.
    pub fn filtered(values: Vec<f64>, filter_len: usize) -> Result<Self> {
        let layout =
            Layout::from_entries([("flat", values.len(), GroupKind::OtherWeight, Some(filter_len))])?;
        Ok(Self { values, layout })
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self { values: alloc::vec![0.0; other.len()], layout: other.layout.clone() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.group(name).map(|g| &self.values[g.range.clone()])
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Layout("parameter vectors have different layouts".into()));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect(), layout: self.layout.clone() }
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_layout(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
            layout: self.layout.clone(),
        })
    }

    /// Elementwise ±1, with `sign(0) = +1`.
    pub fn sign(&self) -> Self {
        self.map(sign)
    }

    /// Elementwise 1 where strictly positive, else 0.
    pub fn sgp(&self) -> Self {
        self.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ParamVector) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self + c * dir`.
    pub fn axpy(&self, c: f64, dir: &ParamVector) -> Result<Self> {
        self.zip_map(dir, |a, d| a + c * d)
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &ParamVector, t: f64) -> Result<Self> {
        self.zip_map(other, |a, b| (1.0 - t) * a + t * b)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// L2 norm of the flat vector.
    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    /// Cosine similarity; `None` when either side is the zero vector.
    pub fn cosine(&self, other: &ParamVector) -> Result<Option<f64>> {
        let d = self.dot(other)?;
        let n = self.norm() * other.norm();
        Ok(if n == 0.0 { None } else { Some(d / n) })
    }

    /// Mean over all entries of the vector.
    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.values)
    }
}

pub fn sign(v: f64) -> f64 {
    if v < 0.0 { -1.0 } else { 1.0 }
}

fn l2(xs: &[f64]) -> f64 {
    libm::sqrt(xs.iter().map(|v| v * v).sum())
}

/// Rescale `noise` to the norm of `theta`, direction unchanged.
pub fn ns_scale(noise: &ParamVector, theta: &ParamVector) -> Result<ParamVector> {
    noise.check_layout(theta)?;
    let n = noise.norm();
    if n == 0.0 {
        return Err(Error::ZeroNoise("cannot norm-scale a zero noise vector".into()));
    }
    Ok(noise.scale(theta.norm() / n))
}

/// Filter-wise normalization: every filter of `noise` takes the norm of the
/// matching filter of `theta`. Tensors without filter metadata are treated as
/// one unit and rescaled to the norm of the whole tensor.
pub fn filter_ns(noise: &ParamVector, theta: &ParamVector) -> Result<ParamVector> {
    noise.check_layout(theta)?;
    let mut out = noise.values.clone();
    for unit in rescale_units(&noise.layout) {
        let n = l2(&noise.values[unit.clone()]);
        if n == 0.0 {
            return Err(Error::ZeroNoise(format!("noise filter {unit:?} has zero norm")));
        }
        let c = l2(&theta.values[unit.clone()]) / n;
        for v in &mut out[unit] {
            *v *= c;
        }
    }
    noise.with_values(out)
}

fn rescale_units(layout: &Layout) -> Vec<Range<usize>> {
    let mut units = Vec::new();
    for g in layout.groups() {
        if g.filter_len.is_some() {
            units.extend(g.filters());
        } else if !g.is_empty() {
            units.push(g.range.clone());
        }
    }
    units
}

/// Diagonal of the adaptive-sharpness operator: the filter norm for every
/// position inside a filter, `|w|` for every parameter outside any filter.
pub fn adaptive_diag(theta: &ParamVector) -> ParamVector {
    let mut out: Vec<f64> = theta.values.iter().map(|v| v.abs()).collect();
    for g in theta.layout.groups() {
        for f in g.filters() {
            let n = l2(&theta.values[f.clone()]);
            for v in &mut out[f] {
                *v = n;
            }
        }
    }
    ParamVector { values: out, layout: theta.layout.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignConsistency {
    pub overall: f64,
    /// Present buckets only, in [`FiveWay::ALL`] order.
    pub per_group: Vec<(FiveWay, f64)>,
}

impl SignConsistency {
    pub fn group(&self, kind: FiveWay) -> Option<f64> {
        self.per_group.iter().find(|(k, _)| *k == kind).map(|(_, r)| *r)
    }
}

/// Fraction of positions where `sign(a) == sign(b)`, overall and per bucket.
pub fn sign_consistency_ratio(a: &ParamVector, b: &ParamVector) -> Result<SignConsistency> {
    a.check_layout(b)?;
    let mut agree = [0usize; 5];
    let mut total = [0usize; 5];
    for g in a.layout.groups() {
        let k = FiveWay::ALL.iter().position(|&f| f == g.kind.five_way()).unwrap();
        for i in g.range.clone() {
            total[k] += 1;
            if sign(a.values[i]) == sign(b.values[i]) {
                agree[k] += 1;
            }
        }
    }
    let n: usize = total.iter().sum();
    let overall = if n == 0 { 1.0 } else { agree.iter().sum::<usize>() as f64 / n as f64 };
    let per_group = FiveWay::ALL
        .iter()
        .enumerate()
        .filter(|(k, _)| total[*k] > 0)
        .map(|(k, &f)| (f, agree[k] as f64 / total[k] as f64))
        .collect();
    Ok(SignConsistency { overall, per_group })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and standard deviation per five-way bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub per_group: Vec<(FiveWay, MeanStd)>,
}

impl GroupStats {
    pub fn group(&self, kind: FiveWay) -> Option<MeanStd> {
        self.per_group.iter().find(|(k, _)| *k == kind).map(|(_, s)| *s)
    }
}

pub fn group_stats(v: &ParamVector) -> GroupStats {
    let mut buckets: [Vec<f64>; 5] = Default::default();
    for g in v.layout.groups() {
        let k = FiveWay::ALL.iter().position(|&f| f == g.kind.five_way()).unwrap();
        buckets[k].extend_from_slice(&v.values[g.range.clone()]);
    }
    let per_group = FiveWay::ALL
        .iter()
        .zip(buckets.iter())
        .filter(|(_, b)| !b.is_empty())
        .map(|(&f, b)| (f, MeanStd { mean: crate::stats::mean(b), std: crate::stats::std_dev(b) }))
        .collect();
    GroupStats { per_group }
}

/// Mean of each named tensor, in layout order.
pub fn group_means(v: &ParamVector) -> Vec<f64> {
    v.layout.groups().iter().map(|g| crate::stats::mean(&v.values[g.range.clone()])).collect()
}

/// `v - μ` where μ is broadcast per named tensor.
pub fn center_per_tensor(v: &ParamVector) -> ParamVector {
    let mut out = v.values.clone();
    for (g, mu) in v.layout.groups().iter().zip(group_means(v)) {
        for x in &mut out[g.range.clone()] {
            *x -= mu;
        }
    }
    ParamVector { values: out, layout: v.layout.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn two_group() -> ParamVector {
        let layout = Layout::from_entries([
            ("fc.weight", 4, GroupKind::ClfWeight, Some(2)),
            ("bn.weight", 2, GroupKind::BnWeight, None),
            ("bn.bias", 2, GroupKind::BnBias, None),
        ])
        .unwrap();
        ParamVector::new(vec![3.0, 4.0, 0.0, 0.0, -2.0, 1.0, 0.5, -0.5], layout).unwrap()
    }

    #[test]
    fn sign_views() {
        let v = ParamVector::flat(vec![1.5, -0.2, 3.0]);
        assert_eq!(v.sign().values(), &[1.0, -1.0, 1.0]);
        assert_eq!(ParamVector::flat(vec![0.0]).sign().values(), &[1.0]);
        assert_eq!(v.sign().sign(), v.sign());
        let w = ParamVector::flat(vec![1.5, -0.2, 0.0]);
        assert_eq!(w.sgp().values(), &[1.0, 0.0, 0.0]);
        let sum = w.sgp().add(&w.scale(-1.0).sgp()).unwrap();
        assert_eq!(sum.values(), &[1.0, 1.0, 0.0]);
        assert_eq!(w.sgp().hadamard(&w.sign()).unwrap(), w.sgp());
    }

    #[test]
    fn norms() {
        assert_eq!(ParamVector::flat(vec![3.0, 4.0]).norm(), 5.0);
        assert_eq!(ParamVector::flat(vec![0.0; 3]).norm(), 0.0);
    }

    #[test]
    fn ns_scale_examples() {
        let eps = ParamVector::flat(vec![2.0, 0.0]);
        let theta = ParamVector::flat(vec![3.0, 4.0]);
        assert_eq!(ns_scale(&eps, &theta).unwrap().values(), &[5.0, 0.0]);
        assert_eq!(ns_scale(&theta, &theta).unwrap(), theta);
        assert!(matches!(
            ns_scale(&ParamVector::flat(vec![0.0, 0.0]), &theta),
            Err(Error::ZeroNoise(_))
        ));
    }

    #[test]
    fn filter_ns_single_filter_is_ns_scale() {
        let eps = ParamVector::filtered(vec![1.0, -2.0, 0.5], 3).unwrap();
        let theta = ParamVector::filtered(vec![0.3, 0.1, -4.0], 3).unwrap();
        let a = filter_ns(&eps, &theta).unwrap();
        let b = ns_scale(&eps, &theta).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn filter_ns_zero_theta_filter_gives_zero() {
        let eps = ParamVector::filtered(vec![1.0, 1.0, 2.0, -1.0], 2).unwrap();
        let theta = ParamVector::filtered(vec![0.0, 0.0, 3.0, 4.0], 2).unwrap();
        let r = filter_ns(&eps, &theta).unwrap();
        assert_eq!(&r.values()[..2], &[0.0, 0.0]);
        assert!((l2(&r.values()[2..]) - 5.0).abs() < 1e-12);
        let zero = ParamVector::filtered(vec![0.0, 0.0, 2.0, -1.0], 2).unwrap();
        assert!(matches!(filter_ns(&zero, &theta), Err(Error::ZeroNoise(_))));
    }

    #[test]
    fn adaptive_diag_examples() {
        let t = ParamVector::filtered(vec![3.0, 4.0], 2).unwrap();
        assert_eq!(adaptive_diag(&t).values(), &[5.0, 5.0]);
        assert_eq!(adaptive_diag(&ParamVector::flat(vec![-2.0])).values(), &[2.0]);
        let d = adaptive_diag(&two_group());
        assert_eq!(d.values(), &[5.0, 5.0, 0.0, 0.0, 2.0, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn ssr_examples() {
        let a = ParamVector::flat(vec![1.0, -1.0, 2.0]);
        let b = ParamVector::flat(vec![0.5, 0.3, -1.0]);
        let r = sign_consistency_ratio(&a, &b).unwrap();
        assert!((r.overall - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(sign_consistency_ratio(&a, &a).unwrap().overall, 1.0);
        assert_eq!(sign_consistency_ratio(&a, &a.scale(-1.0)).unwrap().overall, 0.0);
        let other = ParamVector::flat(vec![1.0, 2.0]);
        assert!(matches!(sign_consistency_ratio(&a, &other), Err(Error::Layout(_))));
    }

    #[test]
    fn ssr_per_group_folds_bn_bias() {
        let v = two_group();
        let w = v.abs();
        let r = sign_consistency_ratio(&v, &w).unwrap();
        assert_eq!(r.group(FiveWay::ClfWeight), Some(1.0));
        assert_eq!(r.group(FiveWay::BnWeight), Some(0.5));
        assert_eq!(r.group(FiveWay::OtherBias), Some(0.5));
        assert_eq!(r.group(FiveWay::OtherWeight), None);
        assert!((r.overall - 6.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn group_stats_examples() {
        let c = ParamVector::flat(vec![2.5; 6]);
        let s = group_stats(&c).group(FiveWay::OtherWeight).unwrap();
        assert_eq!((s.mean, s.std), (2.5, 0.0));
        assert_eq!(group_means(&ParamVector::flat(vec![1.0, -1.0])), vec![0.0]);
        let v = two_group();
        assert_eq!(group_means(&v), vec![1.75, -0.5, 0.0]);
        let centered = center_per_tensor(&v);
        assert_eq!(centered.tensor("bn.weight").unwrap(), &[-1.5, 1.5]);
    }

    #[test]
    fn group_stats_match_streaming_oracle() {
        // Welford one-pass oracle vs the two-pass implementation.
        let vals: Vec<f64> = (0..257).map(|i| libm::sin(i as f64 * 1.7) * 3.0 + 0.25).collect();
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &x in &vals {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        let s = group_stats(&ParamVector::flat(vals)).group(FiveWay::OtherWeight).unwrap();
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std - libm::sqrt(m2 / n)).abs() < 1e-12);
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn ns_scale_is_exact_and_preserves_direction(eps in vecs(16), theta in vecs(16)) {
            let eps = ParamVector::flat(eps);
            let theta = ParamVector::flat(theta);
            prop_assume!(eps.norm() > 1e-6 && theta.norm() > 1e-6);
            let r = ns_scale(&eps, &theta).unwrap();
            prop_assert!((r.norm() - theta.norm()).abs() <= 1e-12 * theta.norm());
            prop_assert!((r.cosine(&eps).unwrap().unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn norm_is_homogeneous(v in vecs(9), c in -5.0f64..5.0) {
            let v = ParamVector::flat(v);
            prop_assert!((v.scale(c).norm() - c.abs() * v.norm()).abs() <= 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn ssr_symmetric_and_scale_invariant(a in vecs(12), b in vecs(12), s in proptest::collection::vec(0.01f64..100.0, 12)) {
            let a = ParamVector::flat(a);
            let b = ParamVector::flat(b);
            let s = ParamVector::flat(s);
            let ab = sign_consistency_ratio(&a, &b).unwrap().overall;
            prop_assert_eq!(ab, sign_consistency_ratio(&b, &a).unwrap().overall);
            prop_assert_eq!(ab, sign_consistency_ratio(&a.hadamard(&s).unwrap(), &b).unwrap().overall);
            prop_assert_eq!(sign_consistency_ratio(&a, &a).unwrap().overall, 1.0);
        }
    }
}
