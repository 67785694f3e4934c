//! Architecture strings and dataset/architecture fitting.

use valley_core::data::{Dataset, Splits};
use valley_core::nn::{Architecture, BnInit, Layer};

use crate::error::{LabError, LabResult};

pub fn parse_bn(s: &str) -> LabResult<Option<BnInit>> {
    match s {
        "none" => Ok(None),
        "ones" => Ok(Some(BnInit::Ones)),
        "u01" => Ok(Some(BnInit::Uniform01)),
        "g01" => Ok(Some(BnInit::Gauss01)),
        _ => Err(LabError::Config(format!("unknown BN init `{s}` (ones, u01, g01, none)"))),
    }
}

pub fn bn_name(init: BnInit) -> &'static str {
    match init {
        BnInit::Ones => "ones",
        BnInit::Uniform01 => "u01",
        BnInit::Gauss01 => "g01",
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> LabResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| LabError::Config(format!("bad {what} `{p}`"))))
        .collect()
}

pub fn parse_f64_list(s: &str) -> LabResult<Vec<f64>> {
    parse_list(s, "number")
}

pub fn parse_usize_list(s: &str) -> LabResult<Vec<usize>> {
    parse_list(s, "count")
}

pub fn parse_u64_list(s: &str) -> LabResult<Vec<u64>> {
    parse_list(s, "seed")
}

/// Build an architecture from `mlp:H1,H2,...` or `cnn:C1,C2,...` for samples
/// of `shape` and `classes` labels.
///
/// `mlp` flattens multi-dimensional inputs first. `cnn` stacks
/// `3×3 conv (stride 2, padding 1) → [BN] → ReLU` blocks and ends with a
/// dense classifier; flat inputs with a square length are read as one-channel
/// images.
pub fn build_arch(spec: &str, bn: Option<BnInit>, shape: &[usize], classes: usize) -> LabResult<Architecture> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let widths = parse_usize_list(rest)?;
    if widths.contains(&0) {
        return Err(LabError::Config(format!("zero width in `{spec}`")));
    }
    let arch = match kind {
        "mlp" => {
            let flat: usize = shape.iter().product();
            let mut a = Architecture::mlp(flat, &widths, classes, bn);
            if shape.len() > 1 {
                a.input_shape = shape.to_vec();
                a.layers.insert(0, Layer::Flatten);
            }
            a
        }
        "cnn" => {
            let input = image_shape(shape)
                .ok_or_else(|| LabError::Config(format!("cnn needs image-shaped samples, got {shape:?}")))?;
            let (mut c, mut h, mut w) = (input[0], input[1], input[2]);
            let mut layers = Vec::new();
            for &out in &widths {
                layers.push(Layer::Conv2d { in_channels: c, out_channels: out, kernel: 3, stride: 2, padding: 1 });
                if let Some(init) = bn {
                    layers.push(Layer::BatchNorm { channels: out, init });
                }
                layers.push(Layer::Relu);
                c = out;
                h = (h + 2 - 3) / 2 + 1;
                w = (w + 2 - 3) / 2 + 1;
            }
            layers.push(Layer::Flatten);
            layers.push(Layer::Dense { inputs: c * h * w, outputs: classes, bias: true });
            layers.push(Layer::SoftmaxCrossEntropy);
            Architecture { input_shape: input, layers }
        }
        _ => return Err(LabError::Config(format!("unknown architecture `{spec}` (mlp:H,.. or cnn:C,..)"))),
    };
    arch.shapes()?;
    Ok(arch)
}

fn image_shape(shape: &[usize]) -> Option<Vec<usize>> {
    match shape {
        [c, h, w] => Some(vec![*c, *h, *w]),
        [n] => {
            let s = (*n as f64).sqrt().round() as usize;
            (s * s == *n).then(|| vec![1, s, s])
        }
        _ => None,
    }
}

/// View `data` with per-sample shape `shape` (same number of features).
pub fn fit_dataset(data: &Dataset, shape: &[usize]) -> LabResult<Dataset> {
    if data.sample_shape() == shape {
        return Ok(data.clone());
    }
    if data.feature_len() != shape.iter().product::<usize>() {
        return Err(LabError::Config(format!(
            "dataset samples have shape {:?}, the model expects {shape:?}",
            data.sample_shape()
        )));
    }
    Ok(Dataset::new(data.features().to_vec(), shape.to_vec(), data.labels().to_vec(), data.num_classes())?)
}

pub fn fit_splits(s: &Splits, arch: &Architecture) -> LabResult<Splits> {
    Ok(Splits { train: fit_dataset(&s.train, &arch.input_shape)?, test: fit_dataset(&s.test, &arch.input_shape)? })
}
