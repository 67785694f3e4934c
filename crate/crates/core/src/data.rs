//! In-memory labelled datasets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    sample_shape: Vec<usize>,
    labels: Vec<usize>,
    num_classes: usize,
}

/// Disjoint train/test partition of one source.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let width: usize = sample_shape.iter().product();
        if width == 0 || features.len() != width * labels.len() {
            return Err(Error::Shape(format!(
                "{} features for {} samples of shape {sample_shape:?}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label { label, classes: num_classes });
        }
        Ok(Self { features, sample_shape, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn feature_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.feature_len();
        &self.features[i * w..(i + 1) * w]
    }

    /// Gather the given samples into a batch tensor and label vector.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let w = self.feature_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// Contiguous batches of at most `size` samples, in index order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = (Tensor, Vec<usize>)> + '_ {
        let size = size.max(1);
        let idx: Vec<usize> = (0..self.len()).collect();
        (0..self.len().div_ceil(size)).map(move |b| {
            let end = ((b + 1) * size).min(idx.len());
            self.batch(&idx[b * size..end])
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let w = self.feature_len();
        let mut features = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            sample_shape: self.sample_shape.clone(),
            labels,
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Seeded shuffle, then the last `round(test_fraction * n)` samples become the test split.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<Splits> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, "split", 0));
        let n_test = libm::round(test_fraction * self.len() as f64) as usize;
        let (train, test) = idx.split_at(self.len() - n_test);
        Ok(Splits { train: self.subset(train), test: self.subset(test) })
    }

    /// Disjoint, label-stratified halves: each class is shuffled and dealt alternately.
    pub fn stratified_halves(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.len() < 2 {
            return Err(Error::Config("need at least two samples to split in halves".into()));
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut turn = 0usize;
        for c in 0..self.num_classes {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            members.shuffle(&mut rng::stream(seed, "halves", c as u64));
            for i in members {
                if turn.is_multiple_of(2) {
                    a.push(i);
                } else {
                    b.push(i);
                }
                turn += 1;
            }
        }
        a.sort_unstable();
        b.sort_unstable();
        Ok((self.subset(&a), self.subset(&b)))
    }
}

/// Isotropic Gaussian blobs, balanced across classes, min-max scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub classes: usize,
    pub samples: usize,
    pub dim: usize,
    /// Standard deviation of the class centres.
    pub spread: f64,
    /// Within-class standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self { classes: 3, samples: 300, dim: 16, spread: 2.0, noise: 1.0, seed: 0 }
    }
}

pub fn blobs(cfg: &BlobsConfig) -> Result<Dataset> {
    if cfg.classes == 0 || cfg.dim == 0 || cfg.samples < cfg.classes {
        return Err(Error::Config(format!("degenerate blobs config {cfg:?}")));
    }
    let mut r = rng::stream(cfg.seed, "blobs", 0);
    let centres: Vec<f64> = (0..cfg.classes * cfg.dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            cfg.spread * z
        })
        .collect();
    let mut features = Vec::with_capacity(cfg.samples * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let c = i % cfg.classes;
        labels.push(c);
        for j in 0..cfg.dim {
            let z: f64 = StandardNormal.sample(&mut r);
            features.push(centres[c * cfg.dim + j] + cfg.noise * z);
        }
    }
    min_max_scale(&mut features, cfg.dim);
    Dataset::new(features, vec![cfg.dim], labels, cfg.classes)
}

/// Per-feature min-max scaling to `[0, 1]`; constant features map to 0.
pub fn min_max_scale(features: &mut [f64], width: usize) {
    for j in 0..width {
        let col = features.iter().skip(j).step_by(width);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for v in features.iter_mut().skip(j).step_by(width) {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}
