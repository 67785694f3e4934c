//! Layer kernels on flat row-major buffers.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseDims {
    pub batch: usize,
    pub inputs: usize,
    pub outputs: usize,
}

pub(crate) fn dense_forward(d: DenseDims, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.outputs];
    for n in 0..d.batch {
        let xr = &x[n * d.inputs..(n + 1) * d.inputs];
        let yr = &mut y[n * d.outputs..(n + 1) * d.outputs];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &w[o * d.inputs..(o + 1) * d.inputs];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (xi, wi) in xr.iter().zip(wr) {
                acc += xi * wi;
            }
            *yo = acc;
        }
    }
    y
}

/// Accumulates into `dw`/`db`; returns the input gradient when asked.
pub(crate) fn dense_backward(
    d: DenseDims,
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Vec<f64>> {
    for n in 0..d.batch {
        let xr = &x[n * d.inputs..(n + 1) * d.inputs];
        let dyr = &dy[n * d.outputs..(n + 1) * d.outputs];
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dwi, xi) in dw[o * d.inputs..(o + 1) * d.inputs].iter_mut().zip(xr) {
                *dwi += g * xi;
            }
        }
    }
    if let Some(db) = db {
        for n in 0..d.batch {
            for (dbo, g) in db.iter_mut().zip(&dy[n * d.outputs..(n + 1) * d.outputs]) {
                *dbo += g;
            }
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![0.0; d.batch * d.inputs];
    for n in 0..d.batch {
        let dxr = &mut dx[n * d.inputs..(n + 1) * d.inputs];
        for (o, &g) in dy[n * d.outputs..(n + 1) * d.outputs].iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dxi, wi) in dxr.iter_mut().zip(&w[o * d.inputs..(o + 1) * d.inputs]) {
                *dxi += g * wi;
            }
        }
    }
    Some(dx)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Input coordinate for output position `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k).checked_sub(self.padding)?;
        (p < extent).then_some(p)
    }
}

pub(crate) fn conv_forward(d: ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let k = d.kernel;
    let mut y = vec![0.0; d.batch * d.out_channels * oh * ow];
    for n in 0..d.batch {
        for co in 0..d.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..d.in_channels {
                        let xbase = (n * d.in_channels + ci) * d.height * d.width;
                        let wbase = (co * d.in_channels + ci) * k * k;
                        for ky in 0..k {
                            let Some(iy) = d.src(oy, ky, d.height) else { continue };
                            for kx in 0..k {
                                let Some(ix) = d.src(ox, kx, d.width) else { continue };
                                acc += w[wbase + ky * k + kx] * x[xbase + iy * d.width + ix];
                            }
                        }
                    }
                    y[((n * d.out_channels + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

pub(crate) fn conv_backward(
    d: ConvDims,
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let k = d.kernel;
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    for n in 0..d.batch {
        for co in 0..d.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy[((n * d.out_channels + co) * oh + oy) * ow + ox];
                    db[co] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..d.in_channels {
                        let xbase = (n * d.in_channels + ci) * d.height * d.width;
                        let wbase = (co * d.in_channels + ci) * k * k;
                        for ky in 0..k {
                            let Some(iy) = d.src(oy, ky, d.height) else { continue };
                            for kx in 0..k {
                                let Some(ix) = d.src(ox, kx, d.width) else { continue };
                                let xi = xbase + iy * d.width + ix;
                                dw[wbase + ky * k + kx] += g * x[xi];
                                if need_dx {
                                    dx[xi] += g * w[wbase + ky * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    need_dx.then_some(dx)
}

/// `(batch, channels, spatial)` view of a BatchNorm input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BnDims {
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl BnDims {
    pub fn per_channel(&self) -> usize {
        self.batch * self.spatial
    }

    /// Visit every flat index belonging to channel `c`.
    #[inline]
    pub fn for_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for n in 0..self.batch {
            let base = (n * self.channels + c) * self.spatial;
            for s in 0..self.spatial {
                f(base + s);
            }
        }
    }
}

/// Exact per-channel mean and population variance (two-pass).
pub(crate) fn channel_stats(d: BnDims, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = d.per_channel() as f64;
    let mut mean = vec![0.0; d.channels];
    let mut var = vec![0.0; d.channels];
    for c in 0..d.channels {
        let mut s = 0.0;
        d.for_channel(c, |i| s += x[i]);
        let mu = s / m;
        let mut q = 0.0;
        d.for_channel(c, |i| q += (x[i] - mu) * (x[i] - mu));
        mean[c] = mu;
        var[c] = q / m;
    }
    (mean, var)
}

pub(crate) struct BnTrainOut {
    pub y: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) fn bn_forward_train(d: BnDims, x: &[f64], w: &[f64], b: &[f64], eps: f64) -> BnTrainOut {
    let (mean, var) = channel_stats(d, x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for c in 0..d.channels {
        d.for_channel(c, |i| {
            let h = (x[i] - mean[c]) * inv_std[c];
            x_hat[i] = h;
            y[i] = w[c] * h + b[c];
        });
    }
    BnTrainOut { y, x_hat, inv_std, mean, var }
}

pub(crate) fn bn_forward_eval(
    d: BnDims,
    x: &[f64],
    w: &[f64],
    b: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for c in 0..d.channels {
        let s = w[c] / libm::sqrt(var[c] + eps);
        d.for_channel(c, |i| y[i] = s * (x[i] - mean[c]) + b[c]);
    }
    y
}

/// Backward through train-mode BatchNorm (batch statistics are differentiated).
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward(
    d: BnDims,
    dy: &[f64],
    x_hat: &[f64],
    inv_std: &[f64],
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let m = d.per_channel() as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..d.channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        d.for_channel(c, |i| {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * x_hat[i];
        });
        db[c] += sum_dy;
        dw[c] += sum_dy_xh;
        let k = w[c] * inv_std[c] / m;
        d.for_channel(c, |i| dx[i] = k * (m * dy[i] - sum_dy - x_hat[i] * sum_dy_xh));
    }
    dx
}
