//! Training of the SEE CNN under the weighted multi-exit loss.
//!
//! Every optimization step runs the staged forward through all exits on
//! the full segment (all slices exist at train time), so every exit's loss
//! contributes to every gradient.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{adam_step, cross_entropy_loss, softmax, AdamState};
use crate::model::{forward_all_exits, loss_and_gradients, Gradients, SeeCnnModel};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-exit loss weights; `None` uses the spec's configured weights.
    pub loss_weights: Option<Vec<f64>>,
    pub seed: u64,
    /// Early-stopping patience on held-out loss; 0 disables it.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-3,
            loss_weights: None,
            seed: 0,
            patience: 0,
        }
    }
}

/// Metrics for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted loss over the training set.
    pub train_total_loss: f64,
    /// Mean unweighted cross-entropy per exit.
    pub per_exit_train_loss: Vec<f64>,
    pub per_exit_train_accuracy: Vec<f64>,
    pub heldout_total_loss: Option<f64>,
    pub per_exit_heldout_loss: Option<Vec<f64>>,
    pub per_exit_heldout_accuracy: Option<Vec<f64>>,
}

/// Per-epoch records plus final per-exit accuracies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub final_per_exit_train_accuracy: Vec<f64>,
    pub final_per_exit_heldout_accuracy: Option<Vec<f64>>,
}

impl TrainReport {
    /// One JSON record per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.epochs {
            let _ = writeln!(out, "{}", serde_json::to_string(rec)?);
        }
        Ok(out)
    }
}

/// Weighted multi-exit loss over per-exit probability vectors.
pub fn see_loss(per_exit_probs: &[Vec<f64>], label: usize, loss_weights: &[f64]) -> Result<f64> {
    if per_exit_probs.is_empty() {
        return Err(Error::Usage("need at least one exit".into()));
    }
    if per_exit_probs.len() != loss_weights.len() {
        return Err(Error::Config(format!(
            "{} loss weights for {} exits",
            loss_weights.len(),
            per_exit_probs.len()
        )));
    }
    let mut total = 0.0;
    for (probs, weight) in per_exit_probs.iter().zip(loss_weights) {
        total += weight * cross_entropy_loss(label, probs)?;
    }
    Ok(total)
}

fn resolve_loss_weights(model: &SeeCnnModel, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let weights = cfg
        .loss_weights
        .clone()
        .unwrap_or_else(|| model.spec().loss_weights());
    if weights.len() != model.num_exits() {
        return Err(Error::Config(format!(
            "{} loss weights for {} exits",
            weights.len(),
            model.num_exits()
        )));
    }
    if weights.iter().any(|w| *w <= 0.0 || !w.is_finite()) {
        return Err(Error::Config("loss weights must be positive and finite".into()));
    }
    Ok(weights)
}

fn check_dataset_matches(model: &SeeCnnModel, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    let spec = model.spec();
    if dataset.channels() != spec.channels || dataset.segment_length() != spec.segment_length {
        return Err(Error::Config(format!(
            "dataset is {}x{}, model expects {}x{}",
            dataset.channels(),
            dataset.segment_length(),
            spec.channels,
            spec.segment_length
        )));
    }
    if dataset.num_classes() > spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model only emits {}",
            dataset.num_classes(),
            spec.num_classes
        )));
    }
    Ok(())
}

/// Mean per-exit loss/accuracy of a dataset under the current parameters.
fn dataset_metrics(model: &SeeCnnModel, data: &Dataset, weights: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = model.num_exits();
    let mut total = 0.0;
    let mut per_exit_loss = vec![0.0; n];
    let mut per_exit_correct = vec![0usize; n];
    for seg in &data.segments {
        let logits = forward_all_exits(model, &seg.data)?;
        for (e, z) in logits.iter().enumerate() {
            let probs = softmax(z);
            let loss = cross_entropy_loss(seg.label, &probs)?;
            per_exit_loss[e] += loss;
            total += weights[e] * loss;
            let pred = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            if pred == seg.label {
                per_exit_correct[e] += 1;
            }
        }
    }
    let count = data.segments.len() as f64;
    Ok((
        total / count,
        per_exit_loss.iter().map(|l| l / count).collect(),
        per_exit_correct.iter().map(|c| *c as f64 / count).collect(),
    ))
}

/// Trains with mini-batch Adam; deterministic for a fixed seed.
///
/// Returns the trained model and per-epoch report. Zero epochs leave the
/// model untouched and the report body empty.
pub fn train(
    model: SeeCnnModel,
    train_data: &Dataset,
    heldout: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(SeeCnnModel, TrainReport)> {
    let mut model = model;
    check_dataset_matches(&model, train_data)?;
    if let Some(h) = heldout {
        check_dataset_matches(&model, h)?;
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let weights = resolve_loss_weights(&model, cfg)?;

    if cfg.epochs == 0 {
        return Ok((model, TrainReport::default()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.parameter_count(), cfg.learning_rate);
    let num_exits = model.num_exits();
    let mut report = TrainReport::default();

    let mut best: Option<(f64, Vec<f64>, u64)> = None; // (heldout loss, params, step)
    let mut since_best = 0usize;

    let mut indices: Vec<usize> = (0..train_data.segments.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);

        let mut epoch_total = 0.0;
        let mut epoch_exit_loss = vec![0.0; num_exits];
        let mut epoch_exit_correct = vec![0usize; num_exits];

        for (batch_idx, batch) in indices.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model);
            for &i in batch {
                let seg = &train_data.segments[i];
                let sample = loss_and_gradients(&model, &seg.data, seg.label, &weights, &mut grads)
                    .map_err(|e| Error::Train {
                        epoch,
                        batch: batch_idx,
                        exit: 0,
                        message: e.to_string(),
                    })?;
                if !sample.total.is_finite() {
                    let exit = sample
                        .per_exit_loss
                        .iter()
                        .position(|l| !l.is_finite())
                        .unwrap_or(0);
                    return Err(Error::Train {
                        epoch,
                        batch: batch_idx,
                        exit,
                        message: format!("loss became non-finite ({})", sample.total),
                    });
                }
                epoch_total += sample.total;
                for e in 0..num_exits {
                    epoch_exit_loss[e] += sample.per_exit_loss[e];
                    if sample.per_exit_prediction[e] == seg.label {
                        epoch_exit_correct[e] += 1;
                    }
                }
            }
            grads.scale(1.0 / batch.len() as f64);

            let mut flat = model.params_flat();
            adam_step(&mut flat, &grads.flat(), &mut adam).map_err(|e| match e {
                Error::NonFiniteGradient { block } => {
                    let named = block
                        .strip_prefix("flat index ")
                        .and_then(|s| s.parse::<usize>().ok())
                        .map(|idx| name_of_flat_index(&model, idx))
                        .unwrap_or(block);
                    Error::NonFiniteGradient { block: named }
                }
                other => other,
            })?;
            model.set_params_flat(&flat).expect("congruent params");
        }

        let count = train_data.segments.len() as f64;
        let mut record = EpochRecord {
            epoch,
            train_total_loss: epoch_total / count,
            per_exit_train_loss: epoch_exit_loss.iter().map(|l| l / count).collect(),
            per_exit_train_accuracy: epoch_exit_correct.iter().map(|c| *c as f64 / count).collect(),
            heldout_total_loss: None,
            per_exit_heldout_loss: None,
            per_exit_heldout_accuracy: None,
        };

        if let Some(h) = heldout {
            let (total, per_loss, per_acc) = dataset_metrics(&model, h, &weights)?;
            record.heldout_total_loss = Some(total);
            record.per_exit_heldout_loss = Some(per_loss);
            record.per_exit_heldout_accuracy = Some(per_acc);

            if cfg.patience > 0 {
                let improved = best.as_ref().map_or(true, |(b, _, _)| total < *b);
                if improved {
                    best = Some((total, model.params_flat(), adam.step_count));
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        report.epochs.push(record);

        if cfg.patience > 0 && since_best >= cfg.patience {
            break;
        }
    }

    if let Some((_, params, _)) = best {
        model.set_params_flat(&params).expect("congruent params");
    }

    let (_, _, final_train_acc) = dataset_metrics(&model, train_data, &weights)?;
    report.final_per_exit_train_accuracy = final_train_acc;
    if let Some(h) = heldout {
        let (_, _, acc) = dataset_metrics(&model, h, &weights)?;
        report.final_per_exit_heldout_accuracy = Some(acc);
    }
    Ok((model, report))
}

fn name_of_flat_index(model: &SeeCnnModel, idx: usize) -> String {
    let mut offset = 0;
    for (name, len) in model.block_layout() {
        if idx < offset + len {
            return name;
        }
        offset += len;
    }
    format!("flat index {idx}")
}

/// Fraction of segments whose exit-`exit_index` argmax equals the label.
pub fn evaluate_exit(model: &SeeCnnModel, data: &Dataset, exit_index: usize) -> Result<f64> {
    if data.segments.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty split".into()));
    }
    check_dataset_matches(model, data)?;
    if exit_index >= model.num_exits() {
        return Err(Error::Usage(format!(
            "exit index {exit_index} out of range for {} exits",
            model.num_exits()
        )));
    }
    let mut correct = 0usize;
    for seg in &data.segments {
        let logits = forward_all_exits(model, &seg.data)?;
        let z = &logits[exit_index];
        let pred = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if pred == seg.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.segments.len() as f64)
}
