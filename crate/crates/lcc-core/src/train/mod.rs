//! Optimization loop, learning-rate schedules, evaluation metrics, and
//! multi-stream score ensembling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::ParamSet;
use crate::data::{AugmentParams, KeypointSample, WordEmbeddingTable};
use crate::head::{concept_similarity_matrix, DropMaskSpec};
use crate::model::{LossMode, ModelError, PerHead, SignModel};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss in epoch {epoch}, sample '{sample}': first offending op '{op}'")]
    NonFinite {
        epoch: usize,
        sample: String,
        op: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Linear 0 -> base_lr over the warmup epochs, then cosine decay.
    WarmupCosine { warmup_epochs: usize },
    /// base_lr * factor^(number of milestones <= epoch)
    Multistep { milestones: Vec<usize>, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    /// Filled from the top-level run seed; never read from config files.
    #[serde(skip)]
    pub seed: u64,
    /// `None` disables keypoint augmentation.
    pub augment: Option<AugmentParams>,
    pub drop_mask: DropMaskSpec,
}

impl Default for TrainConfig {
    /// The isolated-sign preset: batch 64, lr 0.0012, decoupled weight decay
    /// 1e-4, 10 warmup epochs with cosine decay, 100 epochs.
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            base_lr: 0.0012,
            weight_decay: 1e-4,
            schedule: Schedule::WarmupCosine { warmup_epochs: 10 },
            seed: 0,
            augment: Some(AugmentParams::default()),
            drop_mask: DropMaskSpec::default(),
        }
    }
}

impl TrainConfig {
    /// The continuous-footage preset: multistep decay of 0.1 at epochs 10
    /// and 20, 25 epochs total.
    pub fn continuous_preset() -> Self {
        Self {
            epochs: 25,
            schedule: Schedule::Multistep {
                milestones: vec![10, 20],
                factor: 0.1,
            },
            ..Self::default()
        }
    }
}

/// Learning rate for a given epoch under the configured schedule.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    debug_assert!(epoch < config.epochs);
    match &config.schedule {
        Schedule::WarmupCosine { warmup_epochs } => {
            if epoch < *warmup_epochs {
                return config.base_lr * epoch as f64 / *warmup_epochs as f64;
            }
            let span = config.epochs.saturating_sub(*warmup_epochs).max(1);
            let progress = (epoch - warmup_epochs) as f64 / span as f64;
            config.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
        Schedule::Multistep { milestones, factor } => {
            let hits = milestones.iter().filter(|&&m| m <= epoch).count();
            config.base_lr * factor.powi(hits as i32)
        }
    }
}

/// Adam moment accumulators, aligned with a parameter set by index.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.iter().map(|e| vec![0.0; e.tensor.numel()]).collect(),
            v: params.iter().map(|e| vec![0.0; e.tensor.numel()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction. Weight decay is decoupled: it is
/// applied directly to the parameter, not through the moments, and only to
/// parameters flagged for decay (the embedding tables never are, since decay
/// would shrink cosine-target norms).
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) {
    assert_eq!(grads.len(), params.len(), "gradient/parameter count");
    state.step += 1;
    let bias1 = 1.0 - state.beta1.powi(state.step as i32);
    let bias2 = 1.0 - state.beta2.powi(state.step as i32);
    for idx in 0..params.len() {
        let entry = params.entry_mut(idx);
        let decay = entry.decay;
        let values = entry.tensor.values_mut();
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        for ((p, &g), (mi, vi)) in values
            .iter_mut()
            .zip(grads[idx].iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * g;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * g * g;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            let mut update = m_hat / (v_hat.sqrt() + state.epsilon);
            if decay {
                update += weight_decay * *p;
            }
            *p -= lr * update;
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1_instance: f64,
    pub top5_instance: f64,
    pub top1_class: f64,
    pub top5_class: f64,
    /// Test samples per class, vocabulary order.
    pub per_class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKMetric {
    pub k: usize,
    pub instance: f64,
    /// Unweighted mean recall over classes with at least one sample.
    pub class_mean: f64,
}

/// Whether `label` ranks inside the top `k` scores (ties broken by index,
/// matching argmax semantics).
fn in_top_k(scores: &[f64], label: usize, k: usize) -> bool {
    let target = scores[label];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > target || (s == target && i < label))
        .count();
    ahead < k
}

/// Per-instance and per-class top-k accuracy from raw score vectors.
pub fn topk_metrics(
    scores: &[Vec<f64>],
    labels: &[usize],
    vocab_size: usize,
    k_list: &[usize],
) -> Result<(Vec<TopKMetric>, Vec<usize>), TrainError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(TrainError::Invalid(format!(
            "need matching non-empty scores/labels, got {}/{}",
            scores.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0usize; vocab_size];
    for &l in labels {
        counts[l] += 1;
    }
    let mut out = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mut instance_hits = 0usize;
        let mut class_hits = vec![0usize; vocab_size];
        for (s, &l) in scores.iter().zip(labels) {
            if in_top_k(s, l, k) {
                instance_hits += 1;
                class_hits[l] += 1;
            }
        }
        let (mut class_sum, mut class_n) = (0.0, 0usize);
        for (hits, &total) in class_hits.iter().zip(&counts) {
            if total > 0 {
                class_sum += *hits as f64 / total as f64;
                class_n += 1;
            }
        }
        out.push(TopKMetric {
            k,
            instance: instance_hits as f64 / scores.len() as f64,
            class_mean: class_sum / class_n as f64,
        });
    }
    Ok((out, counts))
}

/// Evaluate a model on labelled samples (top-1 and top-5, per-instance and
/// per-class). Errors on an empty dataset.
pub fn evaluate(model: &SignModel, samples: &[KeypointSample]) -> Result<Metrics, TrainError> {
    let scored = score_samples(model, samples)?;
    metrics_from_scores(&scored.0, &scored.1, model.glosses.len())
}

pub fn metrics_from_scores(
    scores: &[Vec<f64>],
    labels: &[usize],
    vocab_size: usize,
) -> Result<Metrics, TrainError> {
    let (per_k, counts) = topk_metrics(scores, labels, vocab_size, &[1, 5])?;
    Ok(Metrics {
        top1_instance: per_k[0].instance,
        top5_instance: per_k[1].instance,
        top1_class: per_k[0].class_mean,
        top5_class: per_k[1].class_mean,
        per_class_counts: counts,
    })
}

/// Prepared-and-scored dataset: one score vector per sample plus labels.
pub fn score_samples(
    model: &SignModel,
    samples: &[KeypointSample],
) -> Result<(Vec<Vec<f64>>, Vec<usize>), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Invalid("cannot evaluate an empty dataset".into()));
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let label = s.label.ok_or_else(|| {
            TrainError::Invalid(format!("sample '{}' has no label", s.sample_id))
        })?;
        let prepared = model.prepare(s, None);
        scores.push(model.scores(&prepared)?);
        labels.push(label);
    }
    Ok((scores, labels))
}

/// Weighted mean of per-stream score vectors (uniform by default).
pub fn ensemble_streams(
    score_list: &[Vec<f64>],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>, TrainError> {
    if score_list.is_empty() {
        return Err(TrainError::Invalid("empty ensemble".into()));
    }
    let len = score_list[0].len();
    if score_list.iter().any(|s| s.len() != len) {
        return Err(TrainError::Invalid(
            "ensemble inputs have mismatched lengths".into(),
        ));
    }
    let uniform = vec![1.0 / score_list.len() as f64; score_list.len()];
    let weights = match weights {
        Some(w) => {
            if w.len() != score_list.len() {
                return Err(TrainError::Invalid(format!(
                    "{} weights for {} streams",
                    w.len(),
                    score_list.len()
                )));
            }
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x / total).collect()
        }
        None => uniform,
    };
    let mut out = vec![0.0; len];
    for (s, &w) in score_list.iter().zip(weights.iter()) {
        for (o, &v) in out.iter_mut().zip(s.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The fit loop

/// One line of the training log (newline-delimited JSON on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_rec: PerHead<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_concept: Option<PerHead<f64>>,
    pub val_top1: f64,
    pub val_top5: f64,
}

pub struct FitResult {
    /// The model at its best validation epoch.
    pub model: SignModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub optimizer_steps: usize,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Word-similarity matrix `S_F` for the model's vocabulary, as a plain
/// constant tensor.
pub fn word_similarity_matrix(words: &WordEmbeddingTable) -> Result<Tensor, TensorError> {
    let mut g = Graph::new(0);
    let w = g.constant(&words.vectors);
    Ok(concept_similarity_matrix(&mut g, &w)?.detached())
}

/// Train with shuffled seeded minibatches, per-batch Adam steps, per-epoch
/// validation, and best-checkpoint retention. Identical config and seed give
/// bitwise-identical logs and parameters.
pub fn fit(
    mut model: SignModel,
    train: &[KeypointSample],
    val: &[KeypointSample],
    words: Option<&WordEmbeddingTable>,
    config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Invalid(
            "training needs non-empty train and val splits".into(),
        ));
    }
    let s_f = match (model.config.loss_mode, words) {
        (LossMode::Lcc, Some(words)) => {
            if words.vocab != model.glosses {
                return Err(TrainError::Invalid(format!(
                    "word vocabulary ({} glosses) does not match the model ({} glosses)",
                    words.vocab.len(),
                    model.glosses.len()
                )));
            }
            Some(word_similarity_matrix(words)?)
        }
        (LossMode::Lcc, None) => {
            return Err(TrainError::Invalid(
                "embedding-head training needs word embeddings for the concept loss".into(),
            ))
        }
        (LossMode::Ce, _) => None,
    };

    let mut state = OptimizerState::new(&model.params);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let mut degenerate_clips = 0usize;

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut epoch_rec = HeadAccumulator::default();
        let mut epoch_concept = HeadAccumulator::default();
        let mut seen = 0usize;

        for batch in order.chunks(config.batch_size) {
            let mut grad_acc: Vec<Vec<f64>> = model
                .params
                .iter()
                .map(|e| vec![0.0; e.tensor.numel()])
                .collect();
            let inv_batch = 1.0 / batch.len() as f64;
            for &idx in batch {
                let sample = &train[idx];
                let label = sample.label.ok_or_else(|| {
                    TrainError::Invalid(format!("sample '{}' has no label", sample.sample_id))
                })?;
                let mut aug_rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    config.seed,
                    0x41 ^ mix_seed(epoch as u64, idx as u64),
                ));
                let prepared = model.prepare(
                    sample,
                    config.augment.as_ref().map(|p| (p, &mut aug_rng)),
                );
                let graph_seed = mix_seed(config.seed, 0xD0 ^ mix_seed(epoch as u64, idx as u64));
                let mut g = Graph::new(graph_seed);
                let mask = config.drop_mask.enabled.then_some(&config.drop_mask);
                let out = model.forward(&mut g, &prepared, mask)?;
                let (loss, values) = model.training_loss(&mut g, &out, label, s_f.as_ref())?;
                if !loss.scalar_value().is_finite() {
                    let (_, op) = g.first_non_finite().unwrap_or((0, "unknown"));
                    return Err(TrainError::NonFinite {
                        epoch,
                        sample: sample.sample_id.clone(),
                        op,
                    });
                }
                if let Some(heads) = &out.heads {
                    if heads.global.in_vocab_mass(model.glosses.len()) < 1e-9 {
                        degenerate_clips += 1;
                    }
                }
                let grads = g.backward(loss.node().expect("loss is a graph node"))?;
                for (slot, acc) in grad_acc.iter_mut().enumerate() {
                    if let Some(grad) = grads.get(slot) {
                        for (a, &gv) in acc.iter_mut().zip(grad.values()) {
                            *a += gv * inv_batch;
                        }
                    }
                }
                epoch_loss += values.total;
                epoch_rec.add(&values.rec);
                if let Some(c) = &values.concept {
                    epoch_concept.add(c);
                }
                seen += 1;
            }
            adam_step(&mut model.params, &grad_acc, &mut state, lr, config.weight_decay);
        }

        let val_metrics = evaluate(&model, val)?;
        let record = EpochRecord {
            epoch,
            lr,
            loss_total: epoch_loss / seen as f64,
            loss_rec: epoch_rec.mean(seen),
            loss_concept: matches!(model.config.loss_mode, LossMode::Lcc)
                .then(|| epoch_concept.mean(seen)),
            val_top1: val_metrics.top1_instance,
            val_top5: val_metrics.top5_instance,
        };
        let improved = best
            .as_ref()
            .map_or(true, |(top1, _, _)| record.val_top1 > *top1);
        if improved {
            best = Some((record.val_top1, epoch, model.params.clone()));
        }
        log.push(record);
    }

    if degenerate_clips > 0 {
        eprintln!(
            "warning: {degenerate_clips} forward passes put all probability mass on extended \
             slots (existence denominator ran on its guard)"
        );
    }

    let (best_val_top1, best_epoch, best_params) = best.expect("at least one epoch ran");
    model.params = best_params;
    let optimizer_steps = state.step;
    Ok(FitResult {
        model,
        log,
        best_epoch,
        best_val_top1,
        optimizer_steps,
    })
}

#[derive(Default)]
struct HeadAccumulator {
    global: f64,
    hands: Option<f64>,
    mouth: Option<f64>,
    pose: Option<f64>,
}

impl HeadAccumulator {
    fn add(&mut self, v: &PerHead<f64>) {
        self.global += v.global;
        if let Some(x) = v.hands {
            *self.hands.get_or_insert(0.0) += x;
        }
        if let Some(x) = v.mouth {
            *self.mouth.get_or_insert(0.0) += x;
        }
        if let Some(x) = v.pose {
            *self.pose.get_or_insert(0.0) += x;
        }
    }

    fn mean(&self, n: usize) -> PerHead<f64> {
        let inv = 1.0 / n as f64;
        PerHead {
            global: self.global * inv,
            hands: self.hands.map(|x| x * inv),
            mouth: self.mouth.map(|x| x * inv),
            pose: self.pose.map(|x| x * inv),
        }
    }
}

#[cfg(test)]
mod tests;
