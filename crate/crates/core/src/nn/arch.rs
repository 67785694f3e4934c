use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GroupKind, Layout};

/// How BatchNorm scale parameters are initialised. Shifts always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnInit {
    /// All ones (the common default).
    Ones,
    /// `U(0, 1)`.
    Uniform01,
    /// `G(0, 0.1)`, i.e. standard deviation 0.1.
    Gauss01,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense { inputs: usize, outputs: usize, bias: bool },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm { channels: usize, init: BnInit },
    Relu,
    Flatten,
    SoftmaxCrossEntropy,
}

impl Layer {
    fn short_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "fc",
            Layer::Conv2d { .. } => "conv",
            Layer::BatchNorm { .. } => "bn",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::SoftmaxCrossEntropy => "head",
        }
    }
}

/// Ordered layer stack plus the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Parameter ranges owned by one layer inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub weight: Range<usize>,
    pub bias: Option<Range<usize>>,
}

impl Architecture {
    /// Dense MLP: `input -> hidden... -> classes`, optionally with BatchNorm
    /// after every hidden Dense (before its ReLU). A Dense feeding a BatchNorm
    /// has no bias: the normalisation cancels it, so it would only collect
    /// rounding noise.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, bn: Option<BnInit>) -> Self {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(Layer::Dense { inputs: prev, outputs: h, bias: bn.is_none() });
            if let Some(init) = bn {
                layers.push(Layer::BatchNorm { channels: h, init });
            }
            layers.push(Layer::Relu);
            prev = h;
        }
        layers.push(Layer::Dense { inputs: prev, outputs: classes, bias: true });
        layers.push(Layer::SoftmaxCrossEntropy);
        Self { input_shape: vec![input], layers }
    }

    /// Stable per-layer tag such as `fc0`, `bn1`, `relu2`.
    pub fn layer_tag(&self, index: usize) -> String {
        format!("{}{}", self.layers[index].short_name(), index)
    }

    pub fn find_tag(&self, tag: &str) -> Option<usize> {
        (0..self.layers.len()).find(|&i| self.layer_tag(i) == tag)
    }

    /// Per-sample output shape of every layer, validating that shapes compose.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |i: usize, msg: String| Error::Architecture(format!("layer {i}: {msg}"));
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Architecture(format!("bad input shape {:?}", self.input_shape)));
        }
        match self.layers.iter().position(|l| *l == Layer::SoftmaxCrossEntropy) {
            Some(p) if p + 1 == self.layers.len() => {}
            _ => {
                return Err(Error::Architecture(
                    "exactly one SoftmaxCrossEntropy head is required, as the last layer".into(),
                ))
            }
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                Layer::Dense { inputs, outputs, .. } => {
                    if shape != [inputs] {
                        return Err(bad(i, format!("dense expects [{inputs}], got {shape:?}")));
                    }
                    vec![outputs]
                }
                Layer::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(bad(i, format!("conv expects [{in_channels}, h, w], got {shape:?}")));
                    }
                    if kernel == 0 || stride == 0 {
                        return Err(bad(i, "kernel and stride must be positive".into()));
                    }
                    let (h, w) = (shape[1] + 2 * padding, shape[2] + 2 * padding);
                    if h < kernel || w < kernel {
                        return Err(bad(i, format!("kernel {kernel} larger than padded input {h}x{w}")));
                    }
                    vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
                }
                Layer::BatchNorm { channels, .. } => {
                    if !(shape.len() == 1 || shape.len() == 3) || shape[0] != channels {
                        return Err(bad(i, format!("batchnorm over {channels} channels got {shape:?}")));
                    }
                    shape
                }
                Layer::Relu => shape,
                Layer::Flatten => vec![shape.iter().product()],
                Layer::SoftmaxCrossEntropy => {
                    if shape.len() != 1 || shape[0] < 2 {
                        return Err(bad(i, format!("head expects [classes >= 2], got {shape:?}")));
                    }
                    shape
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap()[0])
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm { .. }))
    }

    fn classifier_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, Layer::Dense { .. }))
    }

    /// Named-tensor layout of the learnable parameters.
    pub fn layout(&self) -> Result<Layout> {
        self.shapes()?;
        let clf = self.classifier_index();
        let mut entries: Vec<(String, usize, GroupKind, Option<usize>)> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let tag = self.layer_tag(i);
            let is_clf = Some(i) == clf;
            let (wk, bk) = if is_clf {
                (GroupKind::ClfWeight, GroupKind::ClfBias)
            } else {
                (GroupKind::OtherWeight, GroupKind::OtherBias)
            };
            match *layer {
                Layer::Dense { inputs, outputs, bias } => {
                    entries.push((format!("{tag}.weight"), inputs * outputs, wk, Some(inputs)));
                    if bias {
                        entries.push((format!("{tag}.bias"), outputs, bk, None));
                    }
                }
                Layer::Conv2d { in_channels, out_channels, kernel, .. } => {
                    let per = in_channels * kernel * kernel;
                    entries.push((format!("{tag}.weight"), out_channels * per, wk, Some(per)));
                    entries.push((format!("{tag}.bias"), out_channels, bk, None));
                }
                Layer::BatchNorm { channels, .. } => {
                    entries.push((format!("{tag}.weight"), channels, GroupKind::BnWeight, None));
                    entries.push((format!("{tag}.bias"), channels, GroupKind::BnBias, None));
                }
                _ => {}
            }
        }
        Layout::from_entries(entries)
    }

    /// Parameter ranges per layer (`None` for parameter-free layers).
    pub fn param_slots(&self) -> Vec<Option<LayerParams>> {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        self.layers
            .iter()
            .map(|layer| match *layer {
                Layer::Dense { inputs, outputs, bias } => Some(LayerParams {
                    weight: take(inputs * outputs),
                    bias: if bias { Some(take(outputs)) } else { None },
                }),
                Layer::Conv2d { in_channels, out_channels, kernel, .. } => Some(LayerParams {
                    weight: take(out_channels * in_channels * kernel * kernel),
                    bias: Some(take(out_channels)),
                }),
                Layer::BatchNorm { channels, .. } => {
                    Some(LayerParams { weight: take(channels), bias: Some(take(channels)) })
                }
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_layout_and_tags() {
        let a = Architecture::mlp(64, &[128, 128], 10, Some(BnInit::Ones));
        assert_eq!(a.num_classes().unwrap(), 10);
        let layout = a.layout().unwrap();
        assert_eq!(layout.len(), 64 * 128 + 2 * 128 + 128 * 128 + 2 * 128 + 128 * 10 + 10);
        assert!(layout.group("fc0.bias").is_none());
        assert_eq!(layout.group("fc6.weight").unwrap().kind, GroupKind::ClfWeight);
        assert_eq!(layout.group("fc0.weight").unwrap().kind, GroupKind::OtherWeight);
        assert_eq!(layout.group("bn1.bias").unwrap().kind, GroupKind::BnBias);
        assert_eq!(a.find_tag("relu2"), Some(2));
    }

    #[test]
    fn rejects_bad_compositions() {
        let mut a = Architecture::mlp(4, &[3], 2, None);
        a.layers[0] = Layer::Dense { inputs: 5, outputs: 3, bias: true };
        assert!(matches!(a.shapes(), Err(Error::Architecture(_))));
        let mut c = Architecture::mlp(4, &[3], 2, None);
        c.layers.swap(0, 3);
        assert!(c.shapes().is_err());
        let mut b = Architecture::mlp(4, &[3], 2, None);
        b.layers.pop();
        assert!(b.shapes().is_err());
    }

    #[test]
    fn conv_shapes() {
        let a = Architecture {
            input_shape: vec![3, 8, 8],
            layers: vec![
                Layer::Conv2d { in_channels: 3, out_channels: 4, kernel: 3, stride: 2, padding: 1 },
                Layer::BatchNorm { channels: 4, init: BnInit::Ones },
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense { inputs: 64, outputs: 5, bias: true },
                Layer::SoftmaxCrossEntropy,
            ],
        };
        let s = a.shapes().unwrap();
        assert_eq!(s[0], vec![4, 4, 4]);
        assert_eq!(s[3], vec![64]);
        let layout = a.layout().unwrap();
        let conv = layout.group("conv0.weight").unwrap();
        assert_eq!(conv.filters().count(), 4);
    }
}
