//! Loss, mini-batch training with RAdam, hits@1 evaluation and checkpoints.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;
use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::RelationEncodingCache;
use crate::error::{Error, Result};
use crate::graph::{EntityId, RelationGraph};
use crate::reasoner::{answer, Model, ModelParams, RelationGrads};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{OptimizerInfo, OptimizerState};

/// Number of gradient partitions per batch. Fixed so that the summation
/// order, and therefore the result, does not depend on the thread count.
const GRADIENT_CHUNKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Examples per update; `None` picks 64 for label graphs and 16 otherwise.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub use_aux_hop_loss: bool,
    pub aux_weight: f64,
    /// Train on a random fraction of the training set.
    pub limit_train: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: None,
            seed: 7,
            use_aux_hop_loss: true,
            aux_weight: 0.01,
            limit_train: None,
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, model: &Model) -> usize {
        self.batch_size
            .unwrap_or(if model.config.form.uses_text() { 16 } else { 64 })
            .max(1)
    }
}

/// A question resolved against a graph and a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: usize,
    pub tokens: Vec<usize>,
    pub topics: Vec<EntityId>,
    pub answers: Vec<EntityId>,
    pub hop: Option<usize>,
}

/// Indicator vector of the answer set.
pub fn build_target(answers: &[EntityId], n: usize) -> Result<Vec<f64>> {
    if answers.is_empty() {
        return Err(Error::EmptyAnswers);
    }
    let mut y = vec![0.0; n];
    for a in answers {
        if a.0 >= n {
            return Err(Error::EntityOutOfRange(a.0));
        }
        y[a.0] = 1.0;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Euclidean distance between scores and target.
    pub main: f64,
    /// Cross-entropy of the hop distribution against the gold hop.
    pub aux_hop: f64,
    pub total: f64,
}

/// `gold_hop` is 1-based; it is ignored when it exceeds the number of steps.
pub fn loss(
    scores: &[f64],
    target: &[f64],
    hop: &[f64],
    gold_hop: Option<usize>,
    aux_weight: f64,
) -> Result<LossBreakdown> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("final score of entity {i}")));
    }
    if hop.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("hop distribution".into()));
    }
    let main = scores
        .iter()
        .zip(target)
        .map(|(s, y)| (s - y) * (s - y))
        .sum::<f64>()
        .sqrt();
    let aux_hop = gold_index(hop, gold_hop).map_or(0.0, |k| -hop[k].max(f64::MIN_POSITIVE).ln());
    Ok(LossBreakdown {
        main,
        aux_hop,
        total: main + aux_weight * aux_hop,
    })
}

fn gold_index(hop: &[f64], gold_hop: Option<usize>) -> Option<usize> {
    gold_hop.filter(|&h| h >= 1 && h <= hop.len()).map(|h| h - 1)
}

/// Gradients of [`loss`] with respect to the scores and the hop distribution.
pub fn loss_gradients(
    scores: &[f64],
    target: &[f64],
    hop: &[f64],
    gold_hop: Option<usize>,
    aux_weight: f64,
) -> (Vec<f64>, Vec<f64>) {
    let diff: Vec<f64> = scores.iter().zip(target).map(|(s, y)| s - y).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let d_scores = if norm > 0.0 {
        diff.iter().map(|d| d / norm).collect()
    } else {
        vec![0.0; scores.len()]
    };
    let mut d_hop = vec![0.0; hop.len()];
    if let Some(k) = gold_index(hop, gold_hop) {
        d_hop[k] = -aux_weight / hop[k].max(f64::MIN_POSITIVE);
    }
    (d_scores, d_hop)
}

/// Forward, loss and backward for one example. Gradients accumulate into
/// `grads` and `rel_grads` scaled by `weight`.
pub fn example_gradient(
    model: &Model,
    graph: &RelationGraph,
    cache: Option<&RelationEncodingCache<'_>>,
    example: &TrainingExample,
    config: &TrainConfig,
    weight: f64,
    grads: &mut ModelParams,
    rel_grads: &mut RelationGrads,
) -> Result<LossBreakdown> {
    let trace = model.forward(graph, cache, &example.tokens, &example.topics, None)?;
    let target = build_target(&example.answers, graph.num_entities())?;
    let gold = example.hop.filter(|_| config.use_aux_hop_loss);
    let parts = loss(&trace.output, &target, &trace.hop, gold, config.aux_weight)
        .map_err(|_| Error::NanLoss { example: example.id })?;
    if !parts.total.is_finite() {
        return Err(Error::NanLoss { example: example.id });
    }
    let (mut d_out, mut d_hop) = loss_gradients(&trace.output, &target, &trace.hop, gold, config.aux_weight);
    d_out.iter_mut().for_each(|g| *g *= weight);
    d_hop.iter_mut().for_each(|g| *g *= weight);
    model.backward(graph, cache, &trace, &d_out, &d_hop, grads, rel_grads);
    Ok(parts)
}

/// Mean gradient of a batch, summed over a fixed partition in order.
pub fn batch_gradient(
    model: &Model,
    graph: &RelationGraph,
    batch: &[&TrainingExample],
    config: &TrainConfig,
) -> Result<(ModelParams, LossBreakdown)> {
    let cache = model.relation_cache();
    let weight = 1.0 / batch.len() as f64;
    let chunk = batch.len().div_ceil(GRADIENT_CHUNKS).max(1);
    let parts: Vec<Result<(ModelParams, RelationGrads, LossBreakdown)>> = batch
        .par_chunks(chunk)
        .map(|examples| {
            let mut grads = model.params.zeros_like();
            let mut rel = RelationGrads::new();
            let mut sum = LossBreakdown::default();
            for ex in examples {
                let l = example_gradient(model, graph, cache.as_ref(), ex, config, weight, &mut grads, &mut rel)?;
                sum.main += l.main;
                sum.aux_hop += l.aux_hop;
                sum.total += l.total;
            }
            Ok((grads, rel, sum))
        })
        .collect();

    let mut grads = model.params.zeros_like();
    let mut rel = RelationGrads::new();
    let mut sum = LossBreakdown::default();
    for part in parts {
        let (g, r, l) = part?;
        grads.add_assign(&g);
        for (text, dr) in r {
            let acc = rel.entry(text).or_insert_with(|| vec![0.0; dr.len()]);
            acc.iter_mut().zip(&dr).for_each(|(a, b)| *a += b);
        }
        sum.main += l.main;
        sum.aux_hop += l.aux_hop;
        sum.total += l.total;
    }
    if let Some(cache) = &cache {
        model.relation_backward(cache, &rel, &mut grads);
    }
    Ok((grads, sum))
}

/// Hits@1 overall and per hop, plus the mean loss.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub hits1: f64,
    pub hits1_per_hop: BTreeMap<usize, f64>,
    pub count_per_hop: BTreeMap<usize, usize>,
    pub loss: f64,
    pub aux_loss: f64,
}

impl Metrics {
    /// Unweighted mean of the per-hop scores (overall score when there are
    /// no hop labels).
    pub fn mean_per_hop(&self) -> f64 {
        if self.hits1_per_hop.is_empty() {
            return self.hits1;
        }
        self.hits1_per_hop.values().sum::<f64>() / self.hits1_per_hop.len() as f64
    }
}

/// Rank-1 prediction for one example; `None` when every score is zero.
pub fn predict(
    model: &Model,
    graph: &RelationGraph,
    cache: Option<&RelationEncodingCache<'_>>,
    example: &TrainingExample,
) -> Result<(Option<EntityId>, LossBreakdown)> {
    let trace = model.forward(graph, cache, &example.tokens, &example.topics, None)?;
    let target = build_target(&example.answers, graph.num_entities())?;
    let parts = loss(&trace.output, &target, &trace.hop, example.hop, 0.01)?;
    Ok((answer(&trace.output).top(), parts))
}

pub fn evaluate(model: &Model, graph: &RelationGraph, examples: &[TrainingExample]) -> Result<Metrics> {
    let cache = model.relation_cache();
    let results: Vec<Result<(bool, Option<usize>, LossBreakdown)>> = examples
        .par_iter()
        .map(|ex| {
            let (top, l) = predict(model, graph, cache.as_ref(), ex)?;
            let hit = top.is_some_and(|t| ex.answers.contains(&t));
            Ok((hit, ex.hop, l))
        })
        .collect();
    let mut m = Metrics::default();
    let mut hits = 0usize;
    let mut hop_hits: BTreeMap<usize, usize> = BTreeMap::new();
    for r in results {
        let (hit, hop, l) = r?;
        m.count += 1;
        hits += usize::from(hit);
        m.loss += l.main;
        m.aux_loss += l.aux_hop;
        if let Some(h) = hop {
            *m.count_per_hop.entry(h).or_default() += 1;
            *hop_hits.entry(h).or_default() += usize::from(hit);
        }
    }
    if m.count > 0 {
        m.hits1 = hits as f64 / m.count as f64;
        m.loss /= m.count as f64;
        m.aux_loss /= m.count as f64;
    }
    for (h, c) in &m.count_per_hop {
        m.hits1_per_hop.insert(*h, hop_hits[h] as f64 / *c as f64);
    }
    Ok(m)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub aux_loss: f64,
    pub hits1_per_hop: BTreeMap<usize, f64>,
    /// Overall dev hits@1; absent on training rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hits1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LogRecord>,
    pub best_epoch: usize,
    pub best_dev: Metrics,
    pub train_examples: usize,
    pub optimizer: OptimizerInfo,
}

impl TrainReport {
    /// Dev metrics recorded after `epoch` (1-based).
    pub fn dev_at(&self, epoch: usize) -> Option<&LogRecord> {
        self.history.iter().find(|r| r.epoch == epoch && r.split == "dev")
    }
}

/// The subset of training examples actually used under `limit_train`.
pub fn training_subset<'a>(examples: &'a [TrainingExample], config: &TrainConfig) -> Vec<&'a TrainingExample> {
    let mut refs: Vec<&TrainingExample> = examples.iter().collect();
    if let Some(frac) = config.limit_train {
        let keep = ((examples.len() as f64 * frac.clamp(0.0, 1.0)).ceil() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_5ab5e7);
        refs.shuffle(&mut rng);
        refs.truncate(keep);
        refs.sort_by_key(|e| e.id);
    }
    refs
}

/// Trains `model` in place and leaves it holding the best-dev parameters.
/// One JSON line per epoch and split goes to `log` when given.
pub fn train(
    model: &mut Model,
    graph: &RelationGraph,
    train_set: &[TrainingExample],
    dev_set: &[TrainingExample],
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    let mut order = training_subset(train_set, config);
    if order.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let batch_size = config.batch_size_for(model);
    let info = OptimizerInfo::radam(config.learning_rate);
    let mut opt = OptimizerState::new(&model.params, info.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut best: Option<(usize, Metrics, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(batch_size) {
            let (grads, l) = batch_gradient(model, graph, batch, config)?;
            if !grads.is_finite() {
                return Err(Error::NanLoss { example: batch[0].id });
            }
            opt.update(&mut model.params, &grads);
            sum.main += l.main;
            sum.aux_hop += l.aux_hop;
        }
        if !model.params.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        let n = order.len() as f64;
        let train_rec = LogRecord {
            epoch,
            split: "train".into(),
            loss: sum.main / n,
            aux_loss: sum.aux_hop / n,
            hits1_per_hop: BTreeMap::new(),
            hits1: None,
        };
        let dev = evaluate(model, graph, dev_set)?;
        let dev_rec = LogRecord {
            epoch,
            split: "dev".into(),
            loss: dev.loss,
            aux_loss: dev.aux_loss,
            hits1_per_hop: dev.hits1_per_hop.clone(),
            hits1: Some(dev.hits1),
        };
        info!(
            "epoch {epoch}: train loss {:.4}, dev hits@1 {:.4} {:?}",
            train_rec.loss, dev.hits1, dev.hits1_per_hop
        );
        if let Some(w) = log.as_deref_mut() {
            for rec in [&train_rec, &dev_rec] {
                let line = serde_json::to_string(rec)?;
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
        }
        history.push(train_rec);
        history.push(dev_rec);
        if best.as_ref().is_none_or(|(_, m, _)| dev.hits1 > m.hits1) {
            best = Some((epoch, dev, model.params.clone()));
        }
    }

    let (best_epoch, best_dev) = match best {
        Some((epoch, metrics, params)) => {
            model.params = params;
            (epoch, metrics)
        }
        None => (0, Metrics::default()),
    };
    Ok(TrainReport {
        history,
        best_epoch,
        best_dev,
        train_examples: order.len(),
        optimizer: info,
    })
}
