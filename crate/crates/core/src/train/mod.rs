//! Amortized training: minimize the expected FUGW loss of predicted plans
//! over graph pairs and sampled `(alpha, rho)`.

mod adam;
mod eval;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{Adam, AdamState};
pub use eval::{evaluate, pearson, EvalRow};

use crate::autodiff::Tape;
use crate::fugw::{fugw_loss_var, FugwError, GraphVars};
use crate::graph::{derive_seed, sample_params, Graph, PairSample};
use crate::model::{clamp_rho, predict_plan_var, GraphInput, ModelConfig, ModelError, ModelWeights, WeightVars};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs at least one training and one validation pair")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch}: {skipped} of {total} batches had a non-finite loss")]
    TooManySkipped { epoch: usize, skipped: usize, total: usize },
    #[error("pair {pair} refers to graph {index}, but only {len} graphs are loaded")]
    MissingGraph { pair: usize, index: usize, len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fugw(#[from] FugwError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Share of batches per epoch that may be skipped before training aborts.
const MAX_SKIPPED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Share of pairs held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_interval: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Keep each pair's `(alpha, rho)` fixed instead of resampling per epoch.
    pub freeze_params: bool,
    /// Rescale the batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.2,
            seed: 0,
            checkpoint_interval: 0,
            checkpoint_dir: None,
            freeze_params: false,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment coefficients must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam epsilon must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Graphs plus the pairs drawn from them.
#[derive(Debug, Clone)]
pub struct PairDataset {
    pub graphs: Vec<Graph>,
    pub pairs: Vec<PairSample>,
}

impl PairDataset {
    pub fn new(graphs: Vec<Graph>, pairs: Vec<PairSample>) -> Result<Self> {
        for (k, p) in pairs.iter().enumerate() {
            for index in [p.g1, p.g2] {
                if index >= graphs.len() {
                    return Err(TrainError::MissingGraph {
                        pair: k,
                        index,
                        len: graphs.len(),
                    });
                }
            }
        }
        Ok(Self { graphs, pairs })
    }

    /// Deterministic split: the last `val_fraction` of pairs validate.
    pub fn split(&self, val_fraction: f64) -> (&[PairSample], &[PairSample]) {
        let n_val = ((self.pairs.len() as f64 * val_fraction).round() as usize).min(self.pairs.len());
        self.pairs.split_at(self.pairs.len() - n_val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub time_s: f64,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epochs: Vec<EpochMetrics>,
    /// Mean loss of every applied batch, in order.
    pub batch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// FUGW loss of the predicted plan for one pair.
pub fn pair_loss(weights: &ModelWeights, g1: &Graph, g2: &Graph, alpha: f64, rho: f64) -> Result<f64> {
    let tape = Tape::new();
    let wv = WeightVars::constants(&tape, weights);
    Ok(loss_on_tape(&tape, &wv, g1, g2, alpha, rho)?.item())
}

fn loss_on_tape<'t>(
    tape: &'t Tape,
    wv: &WeightVars<'t>,
    g1: &Graph,
    g2: &Graph,
    alpha: f64,
    rho: f64,
) -> Result<crate::autodiff::Var<'t>> {
    let (i1, i2) = (GraphInput::constant(tape, g1), GraphInput::constant(tape, g2));
    let out = predict_plan_var(wv, &i1, &i2, tape.scalar(alpha), tape.scalar(clamp_rho(rho)))?;
    let (v1, v2) = (GraphVars::constant(tape, g1), GraphVars::constant(tape, g2));
    Ok(fugw_loss_var(&v1, &v2, out.plan, alpha, rho)?)
}

/// Loss and gradient for one pair.
fn pair_gradient(weights: &ModelWeights, g1: &Graph, g2: &Graph, alpha: f64, rho: f64) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let wv = WeightVars::params(&tape, weights);
    let loss = loss_on_tape(&tape, &wv, g1, g2, alpha, rho)?;
    let value = loss.item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(loss)?;
    Ok((value, wv.vars().iter().map(|v| grads.wrt(*v)).collect()))
}

/// Mean loss and mean gradient over a batch. Pairs are evaluated in
/// parallel and accumulated in batch order, so the result does not depend
/// on the worker count. A non-finite pair loss makes the whole batch
/// non-finite.
pub fn batch_gradient(weights: &ModelWeights, graphs: &[Graph], batch: &[PairSample]) -> Result<(f64, Vec<Tensor>)> {
    let parts: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .map(|p| pair_gradient(weights, &graphs[p.g1], &graphs[p.g2], p.alpha, p.rho))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grad: Vec<Tensor> = weights.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    for (loss, g) in parts {
        total += loss;
        if !loss.is_finite() {
            return Ok((f64::NAN, Vec::new()));
        }
        for (acc, gi) in grad.iter_mut().zip(&g) {
            acc.axpy(scale, gi)?;
        }
    }
    Ok((total * scale, grad))
}

/// Mean loss over pairs at their stored `(alpha, rho)`.
pub fn mean_loss(weights: &ModelWeights, graphs: &[Graph], pairs: &[PairSample]) -> Result<f64> {
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|p| pair_loss(weights, &graphs[p.g1], &graphs[p.g2], p.alpha, p.rho))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / pairs.len().max(1) as f64)
}

fn clip(grad: &mut [Tensor], max_norm: f64) {
    let norm = grad.iter().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            g.map_inplace(|x| x * s);
        }
    }
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub weights: ModelWeights,
    pub optimizer: AdamState,
    pub metrics: TrainMetrics,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    epoch: usize,
    weights: serde_json::Value,
    optimizer: AdamState,
    metrics: TrainMetrics,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let weights = serde_json::from_str(&self.weights.to_json()).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let file = CheckpointFile {
            epoch: self.epoch,
            weights,
            optimizer: self.optimizer.clone(),
            metrics: self.metrics.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let weights = ModelWeights::from_json(&file.weights.to_string())?;
        if file.optimizer.first.len() != weights.tensors().len() && file.optimizer.step > 0 {
            return Err(TrainError::Checkpoint("optimizer state does not match the weights".into()));
        }
        Ok(Self {
            epoch: file.epoch,
            weights,
            optimizer: file.optimizer,
            metrics: file.metrics,
        })
    }
}

/// Result of a training run: the best-validation weights, the final
/// weights and the metrics.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelWeights,
    pub last: ModelWeights,
    pub metrics: TrainMetrics,
}

/// Trains from freshly initialized weights.
pub fn train(
    dataset: &PairDataset,
    model: &ModelConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let weights = ModelWeights::init(model, config.seed)?;
    train_from(dataset, weights, None, config, on_epoch)
}

/// Trains starting from `weights`, optionally resuming optimizer state and
/// metrics from a checkpoint. On resume the best weights are tracked from
/// the resumed epoch on.
pub fn train_from(
    dataset: &PairDataset,
    mut weights: ModelWeights,
    resume: Option<(AdamState, TrainMetrics)>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_pairs, val_pairs) = dataset.split(config.val_fraction);
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let graphs = &dataset.graphs;
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    let (state, mut metrics) = match resume {
        Some((s, m)) => (s, m),
        None => (AdamState::new(&weights), TrainMetrics::default()),
    };
    adam.restore(state);

    let start_epoch = metrics.epochs.last().map_or(0, |e| e.epoch);
    // earlier best weights are not carried in the state, so best tracking
    // restarts at the resumed epoch
    if let Some(last) = metrics.epochs.last() {
        metrics.best_epoch = last.epoch;
        metrics.best_val_loss = last.val_loss;
    }
    let mut best = weights.clone();
    if metrics.epochs.is_empty() {
        let started = Instant::now();
        let val_loss = mean_loss(&weights, graphs, val_pairs)?;
        let m = EpochMetrics {
            epoch: 0,
            train_loss: mean_loss(&weights, graphs, train_pairs)?,
            val_loss,
            time_s: started.elapsed().as_secs_f64(),
            skipped_batches: 0,
        };
        on_epoch(&m);
        metrics.best_epoch = 0;
        metrics.best_val_loss = val_loss;
        metrics.epochs.push(m);
    }

    for epoch in start_epoch + 1..=start_epoch + config.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
        let mut order: Vec<PairSample> = train_pairs.to_vec();
        order.shuffle(&mut rng);
        if !config.freeze_params {
            for p in order.iter_mut() {
                (p.alpha, p.rho) = sample_params(&mut rng);
            }
        }
        let batches: Vec<&[PairSample]> = order.chunks(config.batch_size).collect();
        let (mut skipped, mut loss_sum, mut applied) = (0, 0.0, 0usize);
        for batch in &batches {
            let (loss, mut grad) = batch_gradient(&weights, graphs, batch)?;
            if !loss.is_finite() {
                skipped += 1;
                continue;
            }
            if let Some(c) = config.clip_norm {
                clip(&mut grad, c);
            }
            adam.step(&mut weights, &grad)?;
            metrics.batch_losses.push(loss);
            loss_sum += loss * batch.len() as f64;
            applied += batch.len();
        }
        if skipped as f64 > MAX_SKIPPED_FRACTION * batches.len() as f64 {
            return Err(TrainError::TooManySkipped {
                epoch,
                skipped,
                total: batches.len(),
            });
        }
        let val_loss = mean_loss(&weights, graphs, val_pairs)?;
        let m = EpochMetrics {
            epoch,
            train_loss: if applied > 0 { loss_sum / applied as f64 } else { f64::NAN },
            val_loss,
            time_s: started.elapsed().as_secs_f64(),
            skipped_batches: skipped,
        };
        on_epoch(&m);
        metrics.epochs.push(m);
        if val_loss < metrics.best_val_loss {
            metrics.best_val_loss = val_loss;
            metrics.best_epoch = epoch;
            best = weights.clone();
        }
        if let Some(dir) = &config.checkpoint_dir {
            if config.checkpoint_interval > 0 && epoch % config.checkpoint_interval == 0 {
                let ck = Checkpoint {
                    epoch,
                    weights: weights.clone(),
                    optimizer: adam.state().clone(),
                    metrics: metrics.clone(),
                };
                ck.save(dir.join("checkpoint.json"))?;
                crate::model::save_weights(&best, dir.join("best.json"))?;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        last: weights,
        metrics,
    })
}
