use std::f64::consts::PI;

use super::weights::LAYER_MAPS;
use super::{clamp_rho, RHO_RANGE, ModelConfig, ModelError, ModelWeights, Result};
use crate::autodiff::{concat_cols, Tape, Var};
use crate::fugw::TransportPlan;
use crate::graph::Graph;
use crate::tensor::Tensor;

/// `[cos(k pi alpha)]_k | [sin(k pi (1 - alpha))]_k` for `k = 1..=dim`.
pub fn encode_alpha(alpha: f64, dim: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::Alpha(alpha));
    }
    let cos = (1..=dim).map(|k| (k as f64 * PI * alpha).cos());
    let sin = (1..=dim).map(|k| (k as f64 * PI * (1.0 - alpha)).sin());
    Ok(cos.chain(sin).collect())
}

/// Tape version of [`encode_alpha`] for a `1x1` alpha; returns `1 x 2dim`.
pub fn encode_alpha_var<'t>(alpha: Var<'t>, dim: usize) -> Result<Var<'t>> {
    let tape = alpha.tape();
    let freqs = tape.constant(Tensor::row_vector(
        &(1..=dim).map(|k| k as f64 * PI).collect::<Vec<_>>(),
    ));
    let cos = alpha.mul(freqs)?.cos();
    let sin = alpha.neg().offset(1.0).mul(freqs)?.sin();
    Ok(concat_cols(&[cos, sin])?)
}

/// `(Deg + I)^{-1/2} (A + I) (Deg + I)^{-1/2}`.
pub fn normalized_adjacency(adjacency: &Tensor) -> Tensor {
    let n = adjacency.rows();
    let scale: Vec<f64> = adjacency
        .row_sums()
        .iter()
        .map(|d| 1.0 / (d + 1.0).sqrt())
        .collect();
    Tensor::from_fn(n, n, |i, j| {
        let a = adjacency.get(i, j) + if i == j { 1.0 } else { 0.0 };
        scale[i] * a * scale[j]
    })
}

#[derive(Clone, Copy)]
pub struct Linear<'t> {
    weight: Var<'t>,
    bias: Var<'t>,
}

impl<'t> Linear<'t> {
    fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.matmul(self.weight)?.add(self.bias)?)
    }
}

/// Model parameters recorded on a tape.
pub struct WeightVars<'t> {
    config: ModelConfig,
    vars: Vec<Var<'t>>,
}

impl<'t> WeightVars<'t> {
    /// Records every tensor as a differentiable parameter.
    pub fn params(tape: &'t Tape, weights: &ModelWeights) -> Self {
        Self {
            config: weights.config().clone(),
            vars: weights.tensors().iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Records every tensor as a constant.
    pub fn constants(tape: &'t Tape, weights: &ModelWeights) -> Self {
        Self {
            config: weights.config().clone(),
            vars: weights.tensors().iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn linear(&self, index: usize) -> Linear<'t> {
        Linear {
            weight: self.vars[2 * index],
            bias: self.vars[2 * index + 1],
        }
    }

    /// Weights of embedding layer `l`.
    pub fn layer(&self, l: usize) -> LayerVars<'t> {
        assert!(l < self.config.layers, "layer {l} out of range");
        LayerVars {
            maps: std::array::from_fn(|m| self.linear(l * LAYER_MAPS.len() + m)),
        }
    }

    /// Wraps tape variables laid out like [`ModelWeights::tensors`].
    pub fn from_vars(config: &ModelConfig, vars: Vec<Var<'t>>) -> Result<Self> {
        let shapes = config.parameter_shapes();
        if shapes.len() != vars.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter variables, got {}",
                shapes.len(),
                vars.len()
            )));
        }
        for ((name, shape), v) in shapes.iter().zip(&vars) {
            if v.shape() != *shape {
                return Err(ModelError::Parameter {
                    name: name.clone(),
                    reason: format!("expected shape {shape:?}, found {:?}", v.shape()),
                });
            }
        }
        Ok(Self {
            config: config.clone(),
            vars,
        })
    }

    fn head(&self) -> Linear<'t> {
        self.linear(self.config.layers * LAYER_MAPS.len())
    }
}

/// One graph as seen by the network.
#[derive(Clone, Copy)]
pub struct GraphInput<'t> {
    pub features: Var<'t>,
    /// Normalized adjacency with self loops.
    pub propagation: Var<'t>,
}

impl<'t> GraphInput<'t> {
    pub fn constant(tape: &'t Tape, g: &Graph) -> Self {
        Self {
            features: tape.constant(g.features().clone()),
            propagation: tape.constant(normalized_adjacency(g.adjacency())),
        }
    }

    fn n(&self) -> usize {
        self.features.shape().0
    }
}

/// Intermediate quantities of one forward pass.
pub struct Forward<'t> {
    pub plan: Var<'t>,
    /// Node weights, `n1 x 1` and `1 x n2`.
    pub v1: Var<'t>,
    pub v2: Var<'t>,
    /// Row- and column-normalized attention of the last layer.
    pub s1: Var<'t>,
    pub s2: Var<'t>,
}

/// Affine maps of one embedding layer.
pub struct LayerVars<'t> {
    maps: [Linear<'t>; LAYER_MAPS.len()],
}

impl<'t> LayerVars<'t> {
    fn mlp(&self, x: Var<'t>, hidden: usize) -> Result<Var<'t>> {
        self.maps[hidden + 1].apply(self.maps[hidden].apply(x)?.relu())
    }
}

/// Self path: two propagation steps `relu(A_hat X W + b)`.
pub fn gcn_forward<'t>(layer: &LayerVars<'t>, features: Var<'t>, propagation: Var<'t>) -> Result<Var<'t>> {
    let h = layer.maps[3].apply(propagation.matmul(features)?)?.relu();
    Ok(layer.maps[4].apply(propagation.matmul(h)?)?.relu())
}

/// Output of the cross path.
pub struct CrossOutput<'t> {
    /// Cosine similarities of the embedded nodes, `n1 x n2`.
    pub similarity: Var<'t>,
    pub s1: Var<'t>,
    pub s2: Var<'t>,
    /// Cross features landing on graph 2 (`n2` rows) and graph 1 (`n1` rows).
    pub to2: Var<'t>,
    pub to1: Var<'t>,
}

/// Cross path. `c1`, `c2` are the conditioning rows broadcast per node and
/// `a2` the squared temperature.
pub fn cross_attention<'t>(
    layer: &LayerVars<'t>,
    f1: Var<'t>,
    f2: Var<'t>,
    c1: Var<'t>,
    c2: Var<'t>,
    a2: f64,
) -> Result<CrossOutput<'t>> {
    let cross1 = layer.mlp(concat_cols(&[f1, c1])?, 0)?;
    let cross2 = layer.mlp(concat_cols(&[f2, c2])?, 0)?;
    let similarity = cross1.cosine_sim(cross2)?;
    let scaled = similarity.scale(a2);
    let s1 = scaled.softmax_rows();
    let s2 = scaled.softmax_cols();
    let to2 = layer.maps[2].apply(cross2.sub(s2.t().matmul(cross1)?)?)?;
    let to1 = layer.maps[2].apply(cross1.sub(s1.matmul(cross2)?)?)?;
    Ok(CrossOutput {
        similarity,
        s1,
        s2,
        to2,
        to1,
    })
}

/// Merge of the layer input, the self path and the incoming cross features.
pub fn merge<'t>(layer: &LayerVars<'t>, f: Var<'t>, own: Var<'t>, other: Var<'t>, cond: Var<'t>) -> Result<Var<'t>> {
    let m = &layer.maps;
    let x = concat_cols(&[m[5].apply(f)?, m[6].apply(own)?, m[7].apply(other)?, cond])?;
    layer.mlp(x, 8)
}

/// Repeats the `1 x c` conditioning row for `n` nodes.
pub fn cond_rows<'t>(cond: Var<'t>, n: usize) -> Result<Var<'t>> {
    let c = cond.shape().1;
    Ok(cond.broadcast(n, c)?)
}

/// `ln(rho)` mapped affinely so that [`RHO_RANGE`] becomes [0, 1].
pub fn log_rho_position<'t>(rho: Var<'t>) -> Var<'t> {
    let (lo, hi) = (RHO_RANGE.0.ln(), RHO_RANGE.1.ln());
    rho.ln().offset(-lo).scale(1.0 / (hi - lo))
}

/// The `1 x (1 + 4 alpha_dim)` row `[rho | log-rho encoding | alpha encoding]`.
/// Raw `rho` barely varies over most of its log-uniform training range, so
/// its log position also goes through the Fourier basis used for `alpha`.
pub fn conditioning<'t>(rho: Var<'t>, alpha: Var<'t>, alpha_dim: usize) -> Result<Var<'t>> {
    let rho_code = encode_alpha_var(log_rho_position(rho), alpha_dim)?;
    Ok(concat_cols(&[rho, rho_code, encode_alpha_var(alpha, alpha_dim)?])?)
}

/// Tape forward pass. `alpha` and `rho` are `1x1` variables so callers can
/// differentiate through them; `rho` is used as given (clamp it first).
pub fn predict_plan_var<'t>(
    weights: &WeightVars<'t>,
    g1: &GraphInput<'t>,
    g2: &GraphInput<'t>,
    alpha: Var<'t>,
    rho: Var<'t>,
) -> Result<Forward<'t>> {
    let cfg = weights.config();
    for g in [g1, g2] {
        let d = g.features.shape().1;
        if d != cfg.input_dim {
            return Err(ModelError::InputDim {
                expected: cfg.input_dim,
                found: d,
            });
        }
    }
    let (n1, n2) = (g1.n(), g2.n());
    let cond = conditioning(rho, alpha, cfg.alpha_dim)?;
    let (c1, c2) = (cond_rows(cond, n1)?, cond_rows(cond, n2)?);
    let a2 = cfg.temperature * cfg.temperature;

    let (mut f1, mut f2) = (g1.features, g2.features);
    let mut attention = None;
    for l in 0..cfg.layers {
        let layer = weights.layer(l);
        let cross = cross_attention(&layer, f1, f2, c1, c2, a2)?;
        let self1 = gcn_forward(&layer, f1, g1.propagation)?;
        let self2 = gcn_forward(&layer, f2, g2.propagation)?;
        f1 = merge(&layer, f1, self1, cross.to1, c1)?;
        f2 = merge(&layer, f2, self2, cross.to2, c2)?;
        if !(f1.value_ref().is_finite() && f2.value_ref().is_finite()) {
            return Err(ModelError::NonFinite { layer: l });
        }
        attention = Some((cross.s1, cross.s2));
    }
    let (s1, s2) = attention.expect("at least one layer");

    let head = weights.head();
    let v1 = head.apply(concat_cols(&[f1, c1])?)?.sigmoid();
    let v2 = head.apply(concat_cols(&[f2, c2])?)?.sigmoid().t();
    let left = s1.scale_rows(v1)?.scale(0.5 / n1 as f64);
    let right = s2.scale_cols(v2)?.scale(0.5 / n2 as f64);
    let plan = left.add(right)?;
    if !plan.value_ref().is_finite() {
        return Err(ModelError::NonFinite { layer: cfg.layers });
    }
    Ok(Forward { plan, v1, v2, s1, s2 })
}

/// Predicted plan between two graphs; `rho` is clamped to the training range.
pub fn predict_plan(g1: &Graph, g2: &Graph, alpha: f64, rho: f64, weights: &ModelWeights) -> Result<TransportPlan> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::Alpha(alpha));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(ModelError::Rho(rho));
    }
    let tape = Tape::new();
    let w = WeightVars::constants(&tape, weights);
    let (i1, i2) = (GraphInput::constant(&tape, g1), GraphInput::constant(&tape, g2));
    let out = predict_plan_var(&w, &i1, &i2, tape.scalar(alpha), tape.scalar(clamp_rho(rho)))?;
    let plan = out.plan.value();
    // entries are sums of nonnegative terms; the constructor re-checks
    TransportPlan::new(plan).map_err(|e| ModelError::Format(e.to_string()))
}
