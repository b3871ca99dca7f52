//! Training and evaluation on labelled conversations.
//!
//! Optimization is SGD with momentum over softmax cross-entropy on the
//! `<cls>` position. Per-example gradients of a batch are computed in
//! parallel and summed in example order, so results do not depend on the
//! thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::Mechanism;
use crate::conversation::Vocab;
use crate::distance::DEFAULT_TAU;
use crate::encoder::{argmax, EncoderInput, EncoderModel, ModelConfig, ParamGroup};
use crate::error::{Error, Result};
use crate::init::{init_dependency_tables, DependencyInit};
use crate::task::{generate_task, tree_oracle, Example, TaskConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UpdateScope {
    #[default]
    #[serde(rename = "all")]
    All,
    /// Only dependency embedding tables and bias projections move.
    #[serde(rename = "dep-only")]
    DependencyOnly,
}

impl std::str::FromStr for UpdateScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(UpdateScope::All),
            "dep-only" => Ok(UpdateScope::DependencyOnly),
            _ => Err(Error::validation(format!("unknown update scope {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mechanism: Mechanism,
    pub scope: UpdateScope,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Rescale the batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    pub tau: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub share_dependency_table: bool,
    pub dependency_init: DependencyInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mechanism: Mechanism::Rede,
            scope: UpdateScope::All,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            steps: 300,
            seed: 0,
            clip_norm: Some(1.0),
            tau: DEFAULT_TAU,
            d_model: 64,
            heads: 4,
            layers: 2,
            d_ff: 128,
            share_dependency_table: true,
            dependency_init: DependencyInit::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scope == UpdateScope::DependencyOnly && !self.mechanism.has_dependency_params() {
            return Err(Error::validation(format!(
                "dependency-only updates need dependency parameters; {} has none",
                self.mechanism
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, classes: usize, max_len: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_len,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            d_ff: self.d_ff,
            d_r: self.d_model,
            classes,
            tau: self.tau,
            mechanism: self.mechanism,
            share_dependency_table: self.share_dependency_table,
        }
    }
}

/// Freshly initialized model: seeded base weights, dependency tables from
/// the configured initializer.
pub fn build_model(cfg: &TrainConfig, vocab_size: usize, classes: usize, max_len: usize) -> Result<EncoderModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EncoderModel::new(&cfg.model_config(vocab_size, classes, max_len), &mut rng)?;
    init_dependency_tables(
        &mut model,
        cfg.dependency_init,
        cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(1),
    )?;
    Ok(model)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean batch loss per optimizer step.
    pub losses: Vec<f64>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn prepare_all(model: &EncoderModel, examples: &[Example]) -> Result<Vec<EncoderInput>> {
    examples.par_iter().map(|ex| model.prepare(&ex.conversation)).collect()
}

/// Runs `cfg.steps` optimizer steps over `examples`, reshuffled every epoch.
pub fn train(mut model: EncoderModel, examples: &[Example], cfg: &TrainConfig) -> Result<(EncoderModel, TrainTrace)> {
    cfg.validate()?;
    if cfg.mechanism != model.config.mechanism {
        return Err(Error::validation(format!(
            "config asks for {} but the model uses {}",
            cfg.mechanism, model.config.mechanism
        )));
    }
    let mut trace = TrainTrace::default();
    if cfg.steps == 0 {
        return Ok((model, trace));
    }
    if examples.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let inputs = prepare_all(&model, examples)?;
    let mut velocity = model.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let frozen = |g: ParamGroup| cfg.scope == UpdateScope::DependencyOnly && g == ParamGroup::Base;

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let results: Vec<(f64, EncoderModel)> = batch
            .par_iter()
            .map(|&i| model.loss_and_grad(&inputs[i], examples[i].label))
            .collect::<Result<_>>()?;

        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = model.zeros_like();
        for (l, g) in &results {
            loss += l * scale;
            grad.add_scaled(g, scale);
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} at step {step} (lr {}, batch {:?})",
                cfg.learning_rate, batch
            )));
        }
        if let Some(max) = cfg.clip_norm {
            let mut sq = 0.0;
            grad.for_each_tensor(|_, group, t| {
                if !frozen(group) {
                    sq += t.iter().map(|v| v * v).sum::<f64>();
                }
            });
            let norm = sq.sqrt();
            if norm > max {
                grad.for_each_tensor_mut(|_, _, t| t.mapv_inplace(|v| v * max / norm));
            }
        }

        let grads = grad.tensors();
        let params = model.tensors_mut();
        for (((_, group, p), (_, _, g)), (_, _, v)) in params.into_iter().zip(grads).zip(velocity.tensors_mut()) {
            if frozen(group) {
                continue;
            }
            v.mapv_inplace(|x| x * cfg.momentum);
            *v += g;
            p.scaled_add(-cfg.learning_rate, v);
        }
        trace.losses.push(loss);
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::debug!("step {step}: loss {loss:.4}");
        }
    }
    Ok((model, trace))
}

/// Anything that assigns a class to an example.
pub trait Predictor: Sync {
    fn predict(&self, example: &Example) -> Result<usize>;
}

impl Predictor for EncoderModel {
    fn predict(&self, example: &Example) -> Result<usize> {
        let input = self.prepare(&example.conversation)?;
        Ok(argmax(&self.logits(&input)?))
    }
}

/// Follows the query's dependency edge; see [`tree_oracle`].
pub struct TreeOracle<'a> {
    pub vocab: &'a Vocab,
    pub classes: usize,
}

impl Predictor for TreeOracle<'_> {
    fn predict(&self, example: &Example) -> Result<usize> {
        tree_oracle(&example.conversation, self.vocab, self.classes)
            .ok_or_else(|| Error::validation("conversation has no query/answer structure"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassStats>,
}

pub fn evaluate(predictor: &impl Predictor, examples: &[Example]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let preds: Vec<usize> = examples
        .par_iter()
        .map(|ex| predictor.predict(ex))
        .collect::<Result<_>>()?;
    let mut by_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (ex, &p) in examples.iter().zip(&preds) {
        let entry = by_class.entry(ex.label).or_default();
        entry.0 += 1;
        if p == ex.label {
            entry.1 += 1;
            correct += 1;
        }
    }
    Ok(EvalReport {
        total: examples.len(),
        correct,
        accuracy: correct as f64 / examples.len() as f64,
        per_class: by_class
            .into_iter()
            .map(|(class, (count, ok))| ClassStats {
                class,
                count,
                correct: ok,
                accuracy: ok as f64 / count as f64,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Mechanism,
    pub runs: Vec<SeedRun>,
    pub mean_accuracy: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub task: TaskConfig,
    pub train: TrainConfig,
    pub chance_rate: f64,
    pub variants: Vec<VariantSummary>,
}

impl CompareReport {
    pub fn variant(&self, m: Mechanism) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == m)
    }
}

/// Trains and tests every variant on one generated task per seed.
/// `train.mechanism` and `train.seed` are overridden per run.
pub fn compare(
    task: &TaskConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    variants: &[Mechanism],
) -> Result<CompareReport> {
    let mut runs: Vec<Vec<SeedRun>> = vec![Vec::new(); variants.len()];
    for &seed in seeds {
        let data = generate_task(task, seed)?;
        for (slot, &variant) in variants.iter().enumerate() {
            let cfg = TrainConfig {
                mechanism: variant,
                seed,
                scope: UpdateScope::All,
                ..train_cfg.clone()
            };
            let model = build_model(&cfg, data.vocab.len(), task.classes, task.max_sequence_len())?;
            let (model, trace) = train(model, &data.train, &cfg)?;
            let report = evaluate(&model, &data.test)?;
            log::info!("seed {seed} {variant}: test accuracy {:.4}", report.accuracy);
            runs[slot].push(SeedRun {
                seed,
                test_accuracy: report.accuracy,
                final_loss: trace.final_loss().unwrap_or(f64::NAN),
            });
        }
    }
    let variants = variants
        .iter()
        .zip(runs)
        .map(|(&variant, runs)| {
            let accs: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
            let (mean, std) = mean_std(&accs);
            VariantSummary {
                variant,
                runs,
                mean_accuracy: mean,
                std_accuracy: std,
            }
        })
        .collect();
    Ok(CompareReport {
        task: task.clone(),
        train: train_cfg.clone(),
        chance_rate: task.chance_rate(),
        variants,
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_parsing_and_validation() {
        assert_eq!("dep-only".parse::<UpdateScope>().unwrap(), UpdateScope::DependencyOnly);
        assert!("some".parse::<UpdateScope>().is_err());
        for mech in [Mechanism::Vanilla, Mechanism::Mask] {
            let cfg = TrainConfig {
                mechanism: mech,
                scope: UpdateScope::DependencyOnly,
                ..TrainConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
        let cfg = TrainConfig {
            scope: UpdateScope::DependencyOnly,
            ..TrainConfig::default()
        };
        cfg.validate().unwrap();
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn train_config_json_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"mechanism":"segment","scope":"dep-only"}"#).unwrap();
        assert_eq!(cfg.mechanism, Mechanism::Segment);
        assert_eq!(cfg.scope, UpdateScope::DependencyOnly);
        assert_eq!(cfg.momentum, 0.9);
    }
}
