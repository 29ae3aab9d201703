use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of embedding layers.
    pub layers: usize,
    /// Number of Fourier frequencies used to encode alpha.
    pub alpha_dim: usize,
    /// Output width of every embedding layer.
    pub embed_dim: usize,
    pub mlp_hidden: usize,
    pub gcn_hidden: usize,
    /// Attention temperature `a`; similarities are scaled by `a^2`.
    pub temperature: f64,
    /// Width of the raw node features.
    pub input_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            alpha_dim: 10,
            embed_dim: 256,
            mlp_hidden: 64,
            gcn_hidden: 16,
            temperature: 3.0,
            input_dim: 3,
        }
    }
}

/// One affine map `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpec {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Affine maps of one embedding layer, in storage order.
pub(crate) const LAYER_MAPS: [&str; 10] = [
    "cross_mlp.hidden",
    "cross_mlp.out",
    "cross_update",
    "gcn.hidden",
    "gcn.out",
    "merge.input",
    "merge.self",
    "merge.cross",
    "merge_mlp.hidden",
    "merge_mlp.out",
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("alpha_dim", self.alpha_dim),
            ("embed_dim", self.embed_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("gcn_hidden", self.gcn_hidden),
            ("input_dim", self.input_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ModelError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Width of the `[rho | log-rho encoding | alpha encoding]` block
    /// appended to MLP inputs.
    pub fn cond_dim(&self) -> usize {
        1 + 4 * self.alpha_dim
    }

    /// Input width of layer `l`.
    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.embed_dim
        }
    }

    /// Every affine map of the model in storage order.
    pub fn linear_maps(&self) -> Vec<LinearSpec> {
        let (c, h, g) = (self.cond_dim(), self.mlp_hidden, self.gcn_hidden);
        let mut out = Vec::with_capacity(self.layers * LAYER_MAPS.len() + 1);
        for l in 0..self.layers {
            let i = self.layer_input(l);
            let dims = [
                (i + c, h),
                (h, i),
                (i, i),
                (i, g),
                (g, g),
                (i, h),
                (g, h),
                (i, h),
                (3 * h + c, h),
                (h, self.embed_dim),
            ];
            for (name, (fan_in, fan_out)) in LAYER_MAPS.iter().zip(dims) {
                out.push(LinearSpec {
                    name: format!("layers.{l}.{name}"),
                    fan_in,
                    fan_out,
                });
            }
        }
        out.push(LinearSpec {
            name: "head".into(),
            fan_in: self.embed_dim + c,
            fan_out: 1,
        });
        out
    }

    /// Names and shapes of all parameter tensors in storage order: each map
    /// contributes `weight` then `bias`.
    pub fn parameter_shapes(&self) -> Vec<(String, (usize, usize))> {
        self.linear_maps()
            .into_iter()
            .flat_map(|m| {
                [
                    (format!("{}.weight", m.name), (m.fan_in, m.fan_out)),
                    (format!("{}.bias", m.name), (1, m.fan_out)),
                ]
            })
            .collect()
    }

    /// Reports the first field on which `other` differs.
    pub fn check_matches(&self, other: &ModelConfig) -> Result<()> {
        let fields: [(&'static str, String, String); 7] = [
            ("layers", self.layers.to_string(), other.layers.to_string()),
            ("alpha_dim", self.alpha_dim.to_string(), other.alpha_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string(), other.embed_dim.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string(), other.mlp_hidden.to_string()),
            ("gcn_hidden", self.gcn_hidden.to_string(), other.gcn_hidden.to_string()),
            ("temperature", self.temperature.to_string(), other.temperature.to_string()),
            ("input_dim", self.input_dim.to_string(), other.input_dim.to_string()),
        ];
        for (field, expected, found) in fields {
            if expected != found {
                return Err(ModelError::ConfigMismatch { field, expected, found });
            }
        }
        Ok(())
    }
}

/// All learnable parameters, stored in [`ModelConfig::parameter_shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelWeights {
    /// Glorot-uniform weights and zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for m in config.linear_maps() {
            let bound = (6.0 / (m.fan_in + m.fan_out) as f64).sqrt();
            tensors.push(Tensor::from_fn(m.fan_in, m.fan_out, |_, _| rng.random_range(-bound..=bound)));
            tensors.push(Tensor::zeros(1, m.fan_out));
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Builds weights from explicit tensors, checking every shape.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.parameter_shapes();
        if shapes.len() != tensors.len() {
            return Err(ModelError::Parameter {
                name: shapes.get(tensors.len()).map_or("<extra>".into(), |s| s.0.clone()),
                reason: format!("expected {} tensors, got {}", shapes.len(), tensors.len()),
            });
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != *shape {
                return Err(ModelError::Parameter {
                    name: name.clone(),
                    reason: format!("expected shape {shape:?}, found {:?}", t.shape()),
                });
            }
            if !t.is_finite() {
                return Err(ModelError::Parameter {
                    name: name.clone(),
                    reason: "non-finite value".into(),
                });
            }
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// `(name, tensor)` pairs in storage order.
    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.config
            .parameter_shapes()
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_json(&self) -> String {
        let parameters = self
            .named()
            .map(|(name, t)| {
                (
                    name,
                    ParamEntry {
                        shape: vec![t.rows(), t.cols()],
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let file = WeightsFile {
            format_version: WEIGHTS_FORMAT_VERSION,
            config: self.config.clone(),
            parameters,
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.format_version != WEIGHTS_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let config = file.config;
        config.validate()?;
        let mut parameters = file.parameters;
        let mut tensors = Vec::new();
        for (name, shape) in config.parameter_shapes() {
            let entry = parameters.remove(&name).ok_or_else(|| ModelError::Parameter {
                name: name.clone(),
                reason: "missing".into(),
            })?;
            if entry.shape != [shape.0, shape.1] {
                return Err(ModelError::Parameter {
                    name,
                    reason: format!("expected shape {:?}, found {:?}", [shape.0, shape.1], entry.shape),
                });
            }
            let t = Tensor::new(shape.0, shape.1, entry.values).map_err(|e| ModelError::Parameter {
                name: name.clone(),
                reason: e.to_string(),
            })?;
            tensors.push(t);
        }
        if let Some(extra) = parameters.keys().next() {
            return Err(ModelError::Parameter {
                name: extra.clone(),
                reason: "not part of this configuration".into(),
            });
        }
        Self::from_tensors(&config, tensors)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    format_version: u32,
    config: ModelConfig,
    parameters: BTreeMap<String, ParamEntry>,
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, weights.to_json())?;
    Ok(())
}

/// Loads weights; with `expected`, the stored config must match it.
pub fn load_weights(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<ModelWeights> {
    let w = ModelWeights::from_json(&std::fs::read_to_string(path)?)?;
    if let Some(cfg) = expected {
        cfg.check_matches(w.config())?;
    }
    Ok(w)
}
