//! Architecture descriptors and the compiled parameter layout.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    /// Stride-1 convolution with "same" zero padding (`kernel / 2`).
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// Normalizes over the first per-example dimension (features or channels).
    BatchNorm { features: usize },
    Relu,
    MaxPool2d { size: usize },
    Flatten,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::BatchNorm { .. } => "batch_norm",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "max_pool2d",
            Layer::Flatten => "flatten",
        }
    }

    pub(crate) fn kind_code(&self) -> u8 {
        match self {
            Layer::Dense { .. } => 0,
            Layer::Conv2d { .. } => 1,
            Layer::BatchNorm { .. } => 2,
            Layer::Relu => 3,
            Layer::MaxPool2d { .. } => 4,
            Layer::Flatten => 5,
        }
    }
}

/// Ordered layer stack plus the representation taps used by
/// representation-level objectives. A tap names a layer whose *output*
/// is exported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub taps: Vec<usize>,
    pub classes: usize,
}

impl ModelSpec {
    /// input → dense(64)+BN+ReLU → dense(64)+BN+ReLU → dense(C); taps after each hidden block.
    pub fn mlp_tiny(input_dim: usize, classes: usize) -> Self {
        Self::mlp(input_dim, 64, classes)
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        ModelSpec {
            name: "MlpTiny".into(),
            input_shape: vec![input_dim],
            layers: vec![
                Layer::Dense {
                    inputs: input_dim,
                    outputs: hidden,
                },
                Layer::BatchNorm { features: hidden },
                Layer::Relu,
                Layer::Dense {
                    inputs: hidden,
                    outputs: hidden,
                },
                Layer::BatchNorm { features: hidden },
                Layer::Relu,
                Layer::Dense {
                    inputs: hidden,
                    outputs: classes,
                },
            ],
            taps: vec![2, 5],
            classes,
        }
    }

    /// conv3×3(8)+BN+ReLU+pool → conv3×3(16)+BN+ReLU+pool → dense(64)+ReLU → dense(C).
    pub fn conv_tiny(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        let flat = 16 * (height / 4) * (width / 4);
        ModelSpec {
            name: "ConvTiny".into(),
            input_shape: vec![channels, height, width],
            layers: vec![
                Layer::Conv2d {
                    in_channels: channels,
                    out_channels: 8,
                    kernel: 3,
                },
                Layer::BatchNorm { features: 8 },
                Layer::Relu,
                Layer::MaxPool2d { size: 2 },
                Layer::Conv2d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                },
                Layer::BatchNorm { features: 16 },
                Layer::Relu,
                Layer::MaxPool2d { size: 2 },
                Layer::Flatten,
                Layer::Dense {
                    inputs: flat,
                    outputs: 64,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 64,
                    outputs: classes,
                },
            ],
            taps: vec![3, 7],
            classes,
        }
    }

    /// Stable fingerprint: SHA-256 over the canonical JSON form, first 16 hex digits.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Where one parameter tensor lives inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTensor {
    pub name: String,
    pub layer: usize,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Weight matrix / convolution kernel, as opposed to bias or BN affine.
    pub is_weight: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerPlan {
    pub layer: Layer,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub param_offset: usize,
    /// Offset of the running mean inside the BN-stat vector (variance follows).
    pub stat_offset: usize,
}

impl LayerPlan {
    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }
}

/// A validated spec with its parameter and statistic layout resolved.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    hash: String,
    pub(crate) plans: Vec<LayerPlan>,
    tensors: Vec<ParamTensor>,
    n_params: usize,
    n_stats: usize,
    /// Running-statistic momentum for train-mode batch norm.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.classes < 2 {
            return Err(Error::InvalidParameter("need at least two classes".into()));
        }
        if spec.input_shape.is_empty() || spec.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "bad input shape {:?}",
                spec.input_shape
            )));
        }
        let mut shape = spec.input_shape.clone();
        let mut plans = Vec::with_capacity(spec.layers.len());
        let mut tensors = Vec::new();
        let mut n_params = 0;
        let mut n_stats = 0;
        for (i, layer) in spec.layers.iter().enumerate() {
            let in_shape = shape.clone();
            let param_offset = n_params;
            let stat_offset = n_stats;
            let mut push = |suffix: &str, dims: Vec<usize>, is_weight: bool, n: &mut usize| {
                let len = dims.iter().product();
                tensors.push(ParamTensor {
                    name: format!("{}{}.{}", layer.kind_name(), i, suffix),
                    layer: i,
                    shape: dims,
                    offset: *n,
                    len,
                    is_weight,
                });
                *n += len;
            };
            let out_shape = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if in_shape.len() != 1 || in_shape[0] != inputs {
                        return Err(Error::Shape(format!(
                            "layer {i}: dense expects [{inputs}], got {in_shape:?}"
                        )));
                    }
                    push("weight", vec![outputs, inputs], true, &mut n_params);
                    push("bias", vec![outputs], false, &mut n_params);
                    vec![outputs]
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    if in_shape.len() != 3 || in_shape[0] != in_channels || kernel % 2 == 0 {
                        return Err(Error::Shape(format!(
                            "layer {i}: conv expects [{in_channels}, h, w] and odd kernel, got {in_shape:?}"
                        )));
                    }
                    push(
                        "weight",
                        vec![out_channels, in_channels, kernel, kernel],
                        true,
                        &mut n_params,
                    );
                    push("bias", vec![out_channels], false, &mut n_params);
                    vec![out_channels, in_shape[1], in_shape[2]]
                }
                Layer::BatchNorm { features } => {
                    if in_shape[0] != features {
                        return Err(Error::Shape(format!(
                            "layer {i}: batch norm over {features} features, got {in_shape:?}"
                        )));
                    }
                    push("gamma", vec![features], false, &mut n_params);
                    push("beta", vec![features], false, &mut n_params);
                    n_stats += 2 * features;
                    in_shape.clone()
                }
                Layer::Relu => in_shape.clone(),
                Layer::MaxPool2d { size } => {
                    if in_shape.len() != 3 || size == 0 || in_shape[1] < size || in_shape[2] < size
                    {
                        return Err(Error::Shape(format!(
                            "layer {i}: pool {size} over {in_shape:?}"
                        )));
                    }
                    vec![in_shape[0], in_shape[1] / size, in_shape[2] / size]
                }
                Layer::Flatten => vec![in_shape.iter().product()],
            };
            plans.push(LayerPlan {
                layer: layer.clone(),
                in_shape,
                out_shape: out_shape.clone(),
                param_offset,
                stat_offset,
            });
            shape = out_shape;
        }
        if shape != vec![spec.classes] {
            return Err(Error::Shape(format!(
                "network output {shape:?} does not match {} classes",
                spec.classes
            )));
        }
        for &t in &spec.taps {
            if t + 1 >= spec.layers.len() {
                return Err(Error::InvalidParameter(format!(
                    "tap {t} does not reference a hidden layer"
                )));
            }
        }
        let hash = spec.hash();
        Ok(Network {
            spec,
            hash,
            plans,
            tensors,
            n_params,
            n_stats,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn spec_hash(&self) -> &str {
        &self.hash
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_stats(&self) -> usize {
        self.n_stats
    }

    pub fn param_tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// `true` for each parameter selected by `scope`.
    pub fn param_mask(&self, scope: ParamScope) -> Vec<bool> {
        let mut mask = vec![false; self.n_params];
        for t in &self.tensors {
            let on = match scope {
                ParamScope::All => true,
                ParamScope::WeightsOnly => t.is_weight,
            };
            mask[t.offset..t.offset + t.len].fill(on);
        }
        mask
    }

    /// Layout of the batch-norm statistics: (layer index, features, offset of mean).
    pub fn bn_layers(&self) -> Vec<(usize, usize, usize)> {
        self.plans
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p.layer {
                Layer::BatchNorm { features } => Some((i, features, p.stat_offset)),
                _ => None,
            })
            .collect()
    }
}

/// Which trainable parameters a weight-space intervention touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    #[default]
    All,
    WeightsOnly,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_tiny_layout() {
        let net = Network::new(ModelSpec::mlp_tiny(32, 10)).unwrap();
        let expected = 32 * 64 + 64 + 2 * 64 + 64 * 64 + 64 + 2 * 64 + 64 * 10 + 10;
        assert_eq!(net.n_params(), expected);
        assert_eq!(net.n_stats(), 4 * 64);
        assert_eq!(net.bn_layers().len(), 2);
    }

    #[test]
    fn conv_tiny_composes() {
        let net = Network::new(ModelSpec::conv_tiny(1, 16, 16, 10)).unwrap();
        assert_eq!(net.plans.last().unwrap().out_shape, vec![10]);
        assert_eq!(net.spec().taps, vec![3, 7]);
    }

    #[test]
    fn rejects_broken_specs() {
        let mut spec = ModelSpec::mlp_tiny(8, 3);
        spec.layers[3] = Layer::Dense {
            inputs: 63,
            outputs: 64,
        };
        assert!(Network::new(spec).is_err());
        let mut spec = ModelSpec::mlp_tiny(8, 3);
        spec.taps = vec![6];
        assert!(Network::new(spec).is_err());
    }

    #[test]
    fn hash_stable_across_round_trip() {
        let spec = ModelSpec::conv_tiny(1, 8, 8, 4);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec.hash(), back.hash());
        assert_ne!(spec.hash(), ModelSpec::mlp_tiny(64, 4).hash());
    }
}
