//! Minibatch training with Adam, early stopping on validation AUC, and
//! ranking evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::data::{DatasetSplit, StudentSequence};
use crate::diff::{AdamState, Tensor};
use crate::error::{DgektError, Result};
use crate::graph::GraphSet;
use crate::model::DgektModel;
use crate::scalar::Scalar;

/// Loss aggregates of one epoch. Cross entropies are means per scored
/// prediction; branches a variant does not build stay `None`.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce_concept: Option<f64>,
    pub ce_transition: Option<f64>,
    pub ce_ensemble: Option<f64>,
    pub ce_fused: Option<f64>,
    pub kd: Option<f64>,
    pub val_auc: Option<f64>,
}

/// One scored prediction: at `step - 1` the model emitted `predicted`
/// for the exercise attempted at `step`, which the student got
/// `correct`.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionRecord {
    pub sequence: usize,
    pub student_id: String,
    pub step: usize,
    pub exercise: usize,
    pub predicted: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub epochs: Vec<EpochStats>,
    pub predictions: Vec<PredictionRecord>,
}

pub struct TrainOutcome<S: Scalar> {
    pub model: DgektModel<S>,
    pub adam: AdamState<S>,
    /// Epoch whose parameters the model ended up with: the best
    /// validation epoch, or the last one when no validation AUC exists.
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    /// Generator state after initialization and shuffling.
    pub rng: ChaCha8Rng,
}

/// Area under the ROC curve by Mann-Whitney pair counting: the fraction
/// of (positive, negative) pairs ranked correctly, ties worth half.
/// Exact: counting is integer arithmetic.
pub fn evaluate_auc(scored: &[(f64, bool)]) -> Result<f64> {
    let positives = scored.iter().filter(|&&(_, r)| r).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DgektError::Data(format!(
            "AUC needs both outcomes, got {positives} positive and {negatives} negative predictions"
        )));
    }
    if let Some(&(y, _)) = scored.iter().find(|(y, _)| !y.is_finite()) {
        return Err(DgektError::Data(format!(
            "non-finite prediction {y} in AUC input"
        )));
    }
    let mut by_score = scored.to_vec();
    by_score.sort_by(|a, b| a.0.total_cmp(&b.0));
    // each positive contributes 2 per negative strictly below it and 1
    // per tied negative; doubling keeps everything integral
    let mut doubled: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < by_score.len() {
        let mut j = i;
        while j < by_score.len() && by_score[j].0 == by_score[i].0 {
            j += 1;
        }
        let pos = by_score[i..j].iter().filter(|&&(_, r)| r).count() as u128;
        let neg = (j - i) as u128 - pos;
        doubled += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(doubled as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Scores every sequence with the current parameters.
pub fn score_dataset<S: Scalar>(
    model: &DgektModel<S>,
    sequences: &[StudentSequence],
) -> Result<Vec<PredictionRecord>> {
    let tables = model.encode_tables()?;
    let mut out = Vec::new();
    for (idx, seq) in sequences.iter().enumerate() {
        for (k, (y, r)) in model.score_sequence(&tables, seq)?.into_iter().enumerate() {
            out.push(PredictionRecord {
                sequence: idx,
                student_id: seq.student_id.clone(),
                step: k + 1,
                exercise: seq.steps[k + 1].0,
                predicted: y,
                correct: r,
            });
        }
    }
    Ok(out)
}

pub fn prediction_pairs(records: &[PredictionRecord]) -> Vec<(f64, bool)> {
    records.iter().map(|r| (r.predicted, r.correct)).collect()
}

struct BestSnapshot<S: Scalar> {
    epoch: usize,
    val_auc: f64,
    data: Vec<Vec<S>>,
    step_count: u64,
    moments: Vec<(Vec<S>, Vec<S>)>,
}

/// Trains a model on `split.train`, watching `split.validation` for
/// early stopping and finally scoring `split.test`.
///
/// `graphs` must be built from the training sequences only; test-time
/// scoring must not see test-derived transition edges.
///
/// `on_epoch` observes the stats of each finished epoch and returns
/// whether training should continue; returning `false` ends the run
/// early (the best validation parameters still win).
///
/// Fully deterministic for a fixed config and seed.
pub fn train<S: Scalar>(
    split: &DatasetSplit,
    graphs: &GraphSet,
    num_exercises: usize,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats) -> bool,
) -> Result<(TrainOutcome<S>, EvalReport)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(DgektError::Data("training split has no sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = DgektModel::<S>::new(config, num_exercises, graphs, &mut rng)?;
    let params = model.parameters();
    let mut adam = AdamState::new(&params, S::of(config.learning_rate));

    let mut best: Option<BestSnapshot<S>> = None;
    let mut epochs_since_best = 0usize;
    let mut history: Vec<EpochStats> = Vec::new();
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut sequences_seen = 0usize;
        let mut ce_sums = [0.0f64; 4];
        let mut ce_steps = [0usize; 4];
        let mut kd_sum = 0.0;
        let mut kd_count = 0usize;

        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let tables = model.encode_tables()?;
            let mut batch_total: Option<Tensor<S>> = None;
            for &i in chunk {
                let loss = model.training_loss(&tables, &split.train[i])?;
                loss_sum += loss.total.item().into_f64();
                sequences_seen += 1;
                let per_branch = [
                    loss.ce_concept,
                    loss.ce_transition,
                    loss.ce_ensemble,
                    loss.ce_fused,
                ];
                for (slot, v) in per_branch.into_iter().enumerate() {
                    if let Some(v) = v {
                        ce_sums[slot] += v;
                        ce_steps[slot] += loss.predictions;
                    }
                }
                if let Some(kd) = loss.kd {
                    kd_sum += kd;
                    kd_count += 1;
                }
                batch_total = Some(match batch_total {
                    Some(t) => t.add(&loss.total)?,
                    None => loss.total,
                });
            }
            let batch_mean = batch_total
                .expect("chunks are non-empty")
                .scale(S::of(1.0 / chunk.len() as f64));
            if !batch_mean.item().into_f64().is_finite() {
                return Err(DgektError::Diverged {
                    epoch,
                    batch: batch_index + 1,
                });
            }
            batch_mean.backward()?;
            adam.step(&params);
            for p in &params {
                p.zero_grad();
            }
        }

        let val_auc = if split.validation.is_empty() {
            None
        } else {
            let preds = score_dataset(&model, &split.validation)?;
            evaluate_auc(&prediction_pairs(&preds)).ok()
        };

        let mean_ce =
            |slot: usize| (ce_steps[slot] > 0).then(|| ce_sums[slot] / ce_steps[slot] as f64);
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / sequences_seen as f64,
            ce_concept: mean_ce(0),
            ce_transition: mean_ce(1),
            ce_ensemble: mean_ce(2),
            ce_fused: mean_ce(3),
            kd: (kd_count > 0).then(|| kd_sum / kd_count as f64),
            val_auc,
        };
        let keep_going = on_epoch(&stats);
        history.push(stats);

        if let Some(auc) = val_auc {
            if best.as_ref().map_or(true, |b| auc > b.val_auc) {
                best = Some(BestSnapshot {
                    epoch,
                    val_auc: auc,
                    data: params.iter().map(|p| p.data().clone()).collect(),
                    step_count: adam.step_count(),
                    moments: adam
                        .moment_slices()
                        .into_iter()
                        .map(|(m, v)| (m.to_vec(), v.to_vec()))
                        .collect(),
                });
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
                if config.early_stop_patience > 0
                    && epochs_since_best >= config.early_stop_patience
                {
                    break;
                }
            }
        }
        if !keep_going {
            break;
        }
    }

    let (best_epoch, best_val_auc) = match best {
        Some(b) => {
            for (p, data) in params.iter().zip(&b.data) {
                p.data_mut().copy_from_slice(data);
            }
            adam = AdamState::restore(&params, adam.learning_rate(), b.step_count, b.moments)?;
            (b.epoch, Some(b.val_auc))
        }
        None => (history.len(), None),
    };

    let predictions = score_dataset(&model, &split.test)?;
    let auc = evaluate_auc(&prediction_pairs(&predictions))?;
    let positives = predictions.iter().filter(|p| p.correct).count();
    let report = EvalReport {
        auc,
        positives,
        negatives: predictions.len() - positives,
        epochs: history,
        predictions,
    };
    Ok((
        TrainOutcome {
            model,
            adam,
            best_epoch,
            best_val_auc,
            rng,
        },
        report,
    ))
}
