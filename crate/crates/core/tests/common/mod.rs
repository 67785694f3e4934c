#![allow(dead_code)]

use valley_core::data::{blobs, BlobsConfig, Dataset};
use valley_core::nn::{Mode, Model};
use valley_core::tensor::Tensor;

/// Denominator floor for relative gradient errors, so coordinates whose true
/// gradient is numerically zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central-difference gradient of the train-mode batch loss.
pub fn fd_gradient(model: &Model, x: &Tensor, y: &[usize], step: f64) -> Vec<f64> {
    let mut m = model.clone();
    let n = m.params().len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let orig = m.params().values()[i];
        m.params_mut()[i] = orig + step;
        let up = m.batch_loss(x, y, Mode::Train).unwrap();
        m.params_mut()[i] = orig - step;
        let down = m.batch_loss(x, y, Mode::Train).unwrap();
        m.params_mut()[i] = orig;
        out[i] = (up - down) / (2.0 * step);
    }
    out
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

pub fn small_blobs(samples: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    blobs(&BlobsConfig { classes, samples, dim, spread: 2.0, noise: 1.0, seed }).unwrap()
}
