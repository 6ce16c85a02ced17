//! Mini-batch training with ADAM, seeded shuffling, and early stopping on
//! the validation loss.
//!
//! Each epoch shuffles the training patches, walks full batches (a trailing
//! partial batch is dropped so batch-norm statistics always see the same
//! batch size), and updates every trainable tensor. After the epoch the
//! validation set is scored in inference mode; the weights snapshot with the
//! lowest validation loss is what training returns, not the final state.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatchPair;
use crate::error::{Error, Result};
use crate::loss::{
    categorical_cross_entropy, dice_loss, metric_report, probabilities_to_masks, MetricReport,
    OneHotTarget,
};
use crate::model::{build_model, io::save_weights, EddyNetConfig, NetworkWeights, Variant};
use crate::nn::AdamHyper;
use crate::tensor::Tensor4;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Dice,
    Cce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Dice => "dice",
            LossKind::Cce => "cce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossKind::Dice),
            "cce" => Ok(LossKind::Cce),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?}; expected dice or cce"
            ))),
        }
    }
}

/// An epoch's validation loss must undercut the previous best by this much to
/// count as an improvement.
pub const MIN_DELTA: f64 = 1e-6;

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub variant: Variant,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// `None` picks the variant's default: 0.2 for standard dropout, 0.1 for
    /// alpha dropout (self-normalizing networks want lower drop rates).
    pub dropout_rate: Option<f64>,
    pub seed: u64,
    /// Encoder depth; the patch size must divide by `2^stages`.
    pub stages: usize,
    pub filters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Dice,
            variant: Variant::ReluBn,
            batch_size: 16,
            patience: 5,
            max_epochs: 200,
            learning_rate: 1e-3,
            dropout_rate: None,
            seed: 0,
            stages: 3,
            filters: 32,
        }
    }
}

impl TrainConfig {
    /// The effective dropout rate after variant defaults.
    pub fn resolved_dropout(&self) -> f64 {
        self.dropout_rate.unwrap_or(match self.variant {
            Variant::ReluBn => 0.2,
            Variant::Selu => 0.1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mean_dice: f64,
    pub seconds: f64,
}

/// Per-epoch records plus the index (1-based) of the epoch whose weights were
/// kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_mean_dice,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_mean_dice, e.seconds
            ));
        }
        out
    }
}

/// Stack patches into an input batch tensor and its one-hot target.
pub fn batch_tensors(patches: &[&PatchPair]) -> Result<(Tensor4<f32>, OneHotTarget<f32>)> {
    if patches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let size = patches[0].size;
    let mut input = Tensor4::zeros(patches.len(), 1, size, size);
    for (bn, patch) in patches.iter().enumerate() {
        if patch.size != size {
            return Err(Error::shape("batch patch size", size, patch.size));
        }
        input.plane_mut(bn, 0).copy_from_slice(&patch.ssh);
    }
    let masks: Vec<&crate::data::SegmentationMask> = patches.iter().map(|p| &p.mask).collect();
    let target = OneHotTarget::from_masks(&masks)?;
    Ok((input, target))
}

fn compute_loss(
    kind: LossKind,
    probs: &Tensor4<f32>,
    target: &OneHotTarget<f32>,
) -> Result<(f32, Tensor4<f32>)> {
    match kind {
        LossKind::Dice => dice_loss(probs, target),
        LossKind::Cce => categorical_cross_entropy(probs, target),
    }
}

/// Score a dataset in inference mode: batch-size-weighted mean loss plus the
/// pooled per-class metric report.
pub fn evaluate_validation(
    weights: &NetworkWeights<f32>,
    val_set: &[PatchPair],
    loss_kind: LossKind,
    batch_size: usize,
) -> Result<(f64, MetricReport)> {
    if val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss_sum = 0.0f64;
    let mut weight_sum = 0.0f64;
    let mut preds = Vec::with_capacity(val_set.len());
    let mut truths = Vec::with_capacity(val_set.len());
    for chunk in val_set.chunks(batch_size) {
        let refs: Vec<&PatchPair> = chunk.iter().collect();
        let (input, target) = batch_tensors(&refs)?;
        let probs = weights.forward_infer(&input)?;
        let (loss, _) = compute_loss(loss_kind, &probs, &target)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        weight_sum += chunk.len() as f64;
        preds.extend(probabilities_to_masks(&probs));
        truths.extend(chunk.iter().map(|p| p.mask.clone()));
    }
    let report = metric_report(&preds, &truths)?;
    Ok((loss_sum / weight_sum, report))
}

/// Train from scratch and return the best-validation weights with the full
/// history. Identical configs and seeds reproduce identical results.
pub fn train(
    config: &TrainConfig,
    train_set: &[PatchPair],
    val_set: &[PatchPair],
) -> Result<(NetworkWeights<f32>, TrainingHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let patch = train_set[0].size;
    let model_config = EddyNetConfig {
        variant: config.variant,
        stages: config.stages,
        filters: config.filters,
        dropout_rate: config.resolved_dropout(),
        input_size: (patch, patch),
        ..EddyNetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = build_model::<f32>(&model_config, &mut rng)?;
    let mut history = TrainingHistory::default();
    if config.max_epochs == 0 {
        return Ok((weights, history));
    }
    if train_set.len() < config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "training set of {} patches is smaller than one batch of {}",
            train_set.len(),
            config.batch_size
        )));
    }

    let hyper = AdamHyper::with_learning_rate(config.learning_rate);
    let mut adam = weights.fresh_adam_states();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best_loss = f64::INFINITY;
    let mut best_weights = weights.clone();
    let mut epochs_since_best = 0usize;
    // a zero learning rate freezes the model completely: no parameter
    // updates and no batch-norm statistics accumulation, so the validation
    // loss is exactly constant (the early-stopping fixture relies on this)
    let frozen = config.learning_rate == 0.0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let full_batches = train_set.len() / config.batch_size;
        let mut epoch_loss = 0.0f64;
        for batch_idx in 0..full_batches {
            let ids = &order[batch_idx * config.batch_size..(batch_idx + 1) * config.batch_size];
            let refs: Vec<&PatchPair> = ids.iter().map(|&i| &train_set[i]).collect();
            let (input, target) = batch_tensors(&refs)?;
            let loss = if !frozen {
                let (probs, cache) = weights.forward_train(&input, &mut rng)?;
                let (loss, grad_probs) = compute_loss(config.loss, &probs, &target)?;
                let grads = weights.backward(&cache, &grad_probs)?;
                weights.apply_gradients(&grads, &mut adam, &hyper)?;
                loss
            } else if epoch == 1 && batch_idx == 0 {
                // prime the batch-norm statistics exactly once so inference
                // has moving statistics to work with
                let (probs, _) = weights.forward_train(&input, &mut rng)?;
                compute_loss(config.loss, &probs, &target)?.0
            } else {
                let mut scratch = weights.clone();
                let (probs, _) = scratch.forward_train(&input, &mut rng)?;
                compute_loss(config.loss, &probs, &target)?.0
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_idx });
            }
            epoch_loss += loss as f64;
        }
        let train_loss = epoch_loss / full_batches as f64;
        let (val_loss, report) = evaluate_validation(&weights, val_set, config.loss, config.batch_size)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_mean_dice: report.mean_dice,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val_loss < best_loss - MIN_DELTA {
            best_loss = val_loss;
            best_weights = weights.clone();
            history.best_epoch = Some(epoch);
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    Ok((best_weights, history))
}

/// Artifacts written by [`checkpoint`].
#[derive(Debug, Clone)]
pub struct CheckpointPaths {
    pub weights: PathBuf,
    pub history: PathBuf,
}

/// Write the best-epoch weights and the history CSV into `directory`.
pub fn checkpoint(
    weights: &NetworkWeights<f32>,
    history: &TrainingHistory,
    directory: &Path,
) -> Result<CheckpointPaths> {
    std::fs::create_dir_all(directory)?;
    let paths = CheckpointPaths {
        weights: directory.join("weights.edyn"),
        history: directory.join("history.csv"),
    };
    save_weights(weights, &paths.weights)?;
    std::fs::write(&paths.history, history.to_csv())?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_scene, SynthConfig};
    use crate::data::{PatchPair, Provenance};
    use crate::model::io::{encode, load_weights};

    fn scenes(n: usize, size: usize, seed: u64) -> Vec<PatchPair> {
        let config = SynthConfig {
            grid_size: size,
            n_eddies: 2,
            radius_range: (2.0, 3.5),
            ..SynthConfig::default()
        };
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + i as u64);
                let (grid, mask) = synth_scene(&config, &mut rng).unwrap();
                PatchPair {
                    size,
                    ssh: grid.values,
                    mask,
                    provenance: Provenance {
                        grid_id: format!("synth{i}"),
                        row_offset: 0,
                        col_offset: 0,
                    },
                }
            })
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_epochs: 2,
            stages: 2,
            filters: 4,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_weights_and_empty_history() {
        let data = scenes(4, 24, 0);
        let config = TrainConfig {
            max_epochs: 0,
            ..tiny_config()
        };
        let (weights, history) = train(&config, &data, &data).unwrap();
        assert!(history.epochs.is_empty());
        assert!(history.best_epoch.is_none());
        assert_eq!(weights.config().variant, Variant::ReluBn);
    }

    #[test]
    fn identical_seeds_give_identical_histories_and_weights() {
        let data = scenes(8, 24, 1);
        let config = tiny_config();
        let (w1, h1) = train(&config, &data[..6], &data[6..]).unwrap();
        let (w2, h2) = train(&config, &data[..6], &data[6..]).unwrap();
        // wall time differs between runs; everything else must match exactly
        assert_eq!(h1.best_epoch, h2.best_epoch);
        for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_loss, b.val_loss);
            assert_eq!(a.val_mean_dice, b.val_mean_dice);
        }
        assert_eq!(encode(&w1), encode(&w2));
    }

    #[test]
    fn zero_learning_rate_stops_after_exactly_patience_epochs() {
        let data = scenes(8, 24, 2);
        let config = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 50,
            patience: 5,
            ..tiny_config()
        };
        let (_, history) = train(&config, &data[..6], &data[6..]).unwrap();
        // first epoch is the best; five non-improving epochs follow, then stop
        assert_eq!(history.best_epoch, Some(1));
        assert_eq!(history.epochs.len(), 6);
    }

    #[test]
    fn early_stopping_never_runs_past_best_plus_patience() {
        let data = scenes(10, 24, 3);
        let config = TrainConfig {
            max_epochs: 12,
            patience: 3,
            ..tiny_config()
        };
        let (_, history) = train(&config, &data[..8], &data[8..]).unwrap();
        if let Some(best) = history.best_epoch {
            assert!(history.epochs.len() <= best + 3);
        }
    }

    #[test]
    fn one_small_step_decreases_the_batch_loss() {
        // lr 1e-5 on a single batch with dropout off: the first ADAM step must
        // reduce that same batch's loss
        let data = scenes(4, 24, 4);
        let model_config = EddyNetConfig {
            variant: Variant::ReluBn,
            stages: 2,
            filters: 4,
            dropout_rate: 0.0,
            input_size: (24, 24),
            ..EddyNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut weights = build_model::<f32>(&model_config, &mut rng).unwrap();
        let refs: Vec<&PatchPair> = data.iter().collect();
        let (input, target) = batch_tensors(&refs).unwrap();

        let hyper = AdamHyper::with_learning_rate(1e-5);
        let mut adam = weights.fresh_adam_states();
        let (probs, cache) = weights.forward_train(&input, &mut rng).unwrap();
        let (loss_before, grad) = dice_loss(&probs, &target).unwrap();
        let grads = weights.backward(&cache, &grad).unwrap();
        weights.apply_gradients(&grads, &mut adam, &hyper).unwrap();
        let (probs_after, _) = weights.forward_train(&input, &mut rng).unwrap();
        let (loss_after, _) = dice_loss(&probs_after, &target).unwrap();
        assert!(
            loss_after < loss_before,
            "{loss_after} should undercut {loss_before}"
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = scenes(4, 24, 6);
        assert!(matches!(train(&tiny_config(), &[], &data), Err(Error::EmptyDataset)));
        assert!(matches!(train(&tiny_config(), &data, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn perfectly_biased_head_scores_near_zero_loss_on_background() {
        // "memorized" weights for an all-background sample: huge class-0 bias
        let size = 16;
        let sample = PatchPair {
            size,
            ssh: vec![0.0; size * size],
            mask: crate::data::SegmentationMask::zeros(size, size),
            provenance: Provenance {
                grid_id: "bg".into(),
                row_offset: 0,
                col_offset: 0,
            },
        };
        let model_config = EddyNetConfig {
            stages: 2,
            filters: 4,
            input_size: (size, size),
            ..EddyNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut weights = build_model::<f32>(&model_config, &mut rng).unwrap();
        weights.forward_train(&Tensor4::zeros(1, 1, size, size), &mut rng).unwrap();
        weights.bias_head_towards(0, 25.0);
        let (val_loss, report) = evaluate_validation(&weights, &[sample], LossKind::Dice, 4).unwrap();
        assert!(val_loss < 1e-3, "{val_loss}");
        assert_eq!(report.global_accuracy, 1.0);
        assert!(report.dice.iter().all(|&d| (0.0..=1.0).contains(&d)));
    }

    #[test]
    fn validation_matches_a_two_step_recount() {
        let data = scenes(5, 24, 9);
        let config = TrainConfig {
            max_epochs: 1,
            ..tiny_config()
        };
        let (weights, _) = train(&config, &data[..4], &data[4..]).unwrap();
        let (val_loss, report) = evaluate_validation(&weights, &data[4..], LossKind::Dice, 4).unwrap();

        // independent recount: one batch, direct loss plus metric_report
        let refs: Vec<&PatchPair> = data[4..].iter().collect();
        let (input, target) = batch_tensors(&refs).unwrap();
        let probs = weights.forward_infer(&input).unwrap();
        let (expected_loss, _) = dice_loss(&probs, &target).unwrap();
        let preds = probabilities_to_masks(&probs);
        let truths: Vec<_> = data[4..].iter().map(|p| p.mask.clone()).collect();
        let expected_report = metric_report(&preds, &truths).unwrap();
        assert!((val_loss - expected_loss as f64).abs() < 1e-9);
        assert_eq!(report, expected_report);
    }

    #[test]
    fn checkpoint_round_trips_and_reproduces_the_validation_loss() {
        let dir = tempfile::tempdir().unwrap();
        let data = scenes(8, 24, 10);
        let config = tiny_config();
        let (weights, history) = train(&config, &data[..6], &data[6..]).unwrap();
        let paths = checkpoint(&weights, &history, dir.path()).unwrap();

        let reloaded = load_weights(&paths.weights).unwrap();
        assert_eq!(encode(&weights), encode(&reloaded));

        let csv = std::fs::read_to_string(&paths.history).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss,val_mean_dice,seconds");
        assert_eq!(lines.len(), history.epochs.len() + 1);

        // the recorded best-epoch validation loss is reproducible on reload
        let (val_loss, _) = evaluate_validation(&reloaded, &data[6..], config.loss, config.batch_size).unwrap();
        let best = history.best_epoch.unwrap();
        let recorded = history.epochs[best - 1].val_loss;
        assert!((val_loss - recorded).abs() < 1e-6, "{val_loss} vs {recorded}");
    }
}
