//! The evaluation protocol (repeated random sets of test patches, mean and
//! spread of each metric) and the ghost-eddy center check.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{PatchPair, SegmentationMask, SshGrid, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::loss::{global_accuracy, hard_dice, probabilities_to_masks, DiceTally, MetricReport};
use crate::model::NetworkWeights;
use crate::tensor::Tensor4;
use crate::train::batch_tensors;

/// Protocol shape: how many random sets, how many patches per set.
#[derive(Debug, Clone)]
pub struct EvalProtocolConfig {
    pub n_sets: usize,
    pub set_size: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for EvalProtocolConfig {
    fn default() -> Self {
        EvalProtocolConfig {
            n_sets: 50,
            set_size: 360,
            patch_size: 120,
            seed: 0,
        }
    }
}

/// How per-class dice is aggregated within one set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiceAggregation {
    /// One dice per class over the set's pooled pixels (the headline mode).
    #[default]
    PooledPixels,
    /// Dice per patch, averaged over the set.
    PerPatchMean,
}

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the protocol with an arbitrary per-patch predictor: draw `n_sets`
/// seeded subsets (without replacement inside a set, independently across
/// sets), score each, and report the mean and population standard deviation
/// of every metric across sets.
pub fn evaluate_protocol_with<F>(
    mut predict: F,
    pool: &[PatchPair],
    config: &EvalProtocolConfig,
    aggregation: DiceAggregation,
) -> Result<MetricReport>
where
    F: FnMut(&PatchPair) -> Result<SegmentationMask>,
{
    if pool.len() < config.set_size {
        return Err(Error::PoolTooSmall {
            pool: pool.len(),
            set_size: config.set_size,
        });
    }
    if config.n_sets == 0 {
        return Err(Error::InvalidConfig("n_sets must be >= 1".into()));
    }
    for patch in pool {
        if patch.size != config.patch_size {
            return Err(Error::shape("evaluation patch size", config.patch_size, patch.size));
        }
    }

    // predictions are deterministic per patch: memoize across sets
    let mut predictions: Vec<Option<SegmentationMask>> = vec![None; pool.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dice_sets: [Vec<f64>; NUM_CLASSES] = Default::default();
    let mut mean_dice_sets = Vec::with_capacity(config.n_sets);
    let mut accuracy_sets = Vec::with_capacity(config.n_sets);

    for _ in 0..config.n_sets {
        // partial Fisher-Yates: the first set_size entries of a fresh shuffle
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for i in 0..config.set_size {
            let j = rng.gen_range(i..order.len());
            order.swap(i, j);
        }
        let chosen = &order[..config.set_size];
        for &idx in chosen {
            if predictions[idx].is_none() {
                predictions[idx] = Some(predict(&pool[idx])?);
            }
        }

        match aggregation {
            DiceAggregation::PooledPixels => {
                let mut tallies = [DiceTally::default(); NUM_CLASSES];
                let mut hits = 0u64;
                let mut total = 0u64;
                for &idx in chosen {
                    let pred = predictions[idx].as_ref().expect("filled above");
                    let truth = &pool[idx].mask;
                    for (class_id, tally) in tallies.iter_mut().enumerate() {
                        tally.merge(DiceTally::count(pred, truth, class_id as u8)?);
                    }
                    hits += pred.labels().iter().zip(truth.labels()).filter(|(a, b)| a == b).count() as u64;
                    total += pred.labels().len() as u64;
                }
                let dice: Vec<f64> = tallies.iter().map(|t| t.dice()).collect();
                for (class_id, d) in dice.iter().enumerate() {
                    dice_sets[class_id].push(*d);
                }
                mean_dice_sets.push(dice.iter().sum::<f64>() / NUM_CLASSES as f64);
                accuracy_sets.push(hits as f64 / total as f64);
            }
            DiceAggregation::PerPatchMean => {
                let mut per_class_sums = [0.0f64; NUM_CLASSES];
                let mut acc_sum = 0.0f64;
                for &idx in chosen {
                    let pred = predictions[idx].as_ref().expect("filled above");
                    let truth = &pool[idx].mask;
                    for (class_id, sum) in per_class_sums.iter_mut().enumerate() {
                        *sum += hard_dice(pred, truth, class_id as u8)?;
                    }
                    acc_sum += global_accuracy(pred, truth)?;
                }
                let n = config.set_size as f64;
                let dice: Vec<f64> = per_class_sums.iter().map(|s| s / n).collect();
                for (class_id, d) in dice.iter().enumerate() {
                    dice_sets[class_id].push(*d);
                }
                mean_dice_sets.push(dice.iter().sum::<f64>() / NUM_CLASSES as f64);
                accuracy_sets.push(acc_sum / n);
            }
        }
    }

    let per_class: Vec<(f64, f64)> = dice_sets.iter().map(|xs| mean_and_std(xs)).collect();
    let (mean_dice, mean_dice_std) = mean_and_std(&mean_dice_sets);
    let (accuracy, accuracy_std) = mean_and_std(&accuracy_sets);
    Ok(MetricReport {
        dice: [per_class[0].0, per_class[1].0, per_class[2].0],
        dice_std: Some([per_class[0].1, per_class[1].1, per_class[2].1]),
        mean_dice,
        mean_dice_std: Some(mean_dice_std),
        global_accuracy: accuracy,
        global_accuracy_std: Some(accuracy_std),
    })
}

/// The protocol with the network as the predictor (inference mode, batches
/// of 16).
pub fn evaluate_protocol(
    weights: &NetworkWeights<f32>,
    pool: &[PatchPair],
    config: &EvalProtocolConfig,
    aggregation: DiceAggregation,
) -> Result<MetricReport> {
    evaluate_protocol_with(
        |patch| {
            let refs = [patch];
            let (input, _) = batch_tensors(&refs)?;
            let probs = weights.forward_infer(&input)?;
            Ok(probabilities_to_masks(&probs).remove(0))
        },
        pool,
        config,
        aggregation,
    )
}

/// Table-shaped text report (JSON) with per-class mean/std, mean dice, and
/// accuracy.
pub fn format_protocol_report(report: &MetricReport) -> String {
    let std = |v: Option<f64>| v.map(|s| format!("{s:.6}")).unwrap_or_else(|| "null".into());
    let dice_std = report.dice_std.unwrap_or([f64::NAN; 3]);
    format!(
        "{{\n  \"dice\": {{\n    \"anticyclonic\": {{\"mean\": {:.6}, \"std\": {}}},\n    \"cyclonic\": {{\"mean\": {:.6}, \"std\": {}}},\n    \"non_eddy\": {{\"mean\": {:.6}, \"std\": {}}}\n  }},\n  \"mean_dice\": {{\"mean\": {:.6}, \"std\": {}}},\n  \"global_accuracy\": {{\"mean\": {:.6}, \"std\": {}}}\n}}\n",
        report.anticyclonic(),
        std(report.dice_std.map(|_| dice_std[1])),
        report.cyclonic(),
        std(report.dice_std.map(|_| dice_std[2])),
        report.non_eddy(),
        std(report.dice_std.map(|_| dice_std[0])),
        report.mean_dice,
        std(report.mean_dice_std),
        report.global_accuracy,
        std(report.global_accuracy_std),
    )
}

/// An interpolated eddy center whose pixel the network should classify.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GhostEddyRecord {
    pub row: usize,
    pub col: usize,
    /// 1 = anticyclonic, 2 = cyclonic.
    pub class: u8,
}

/// Hit statistics for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostClassRate {
    pub hits: usize,
    pub total: usize,
    pub rate: f64,
}

/// Per-class hit rates; a class absent from the record list stays `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GhostReport {
    pub anticyclonic: Option<GhostClassRate>,
    pub cyclonic: Option<GhostClassRate>,
}

/// Ghost record files: one `class;row,col` per line.
pub fn parse_ghost_records(text: &str) -> Result<Vec<GhostEddyRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let bad = |message: String| Error::Parse { line: lineno, message };
        let (class_part, coord_part) = line
            .split_once(';')
            .ok_or_else(|| bad("expected class;row,col".into()))?;
        let class: u8 = class_part
            .trim()
            .parse()
            .map_err(|_| bad("class id is not an integer".into()))?;
        if class != 1 && class != 2 {
            return Err(bad(format!("class {class} outside {{1, 2}}")));
        }
        let (row_part, col_part) = coord_part
            .split_once(',')
            .ok_or_else(|| bad("expected row,col".into()))?;
        let row = row_part.trim().parse().map_err(|_| bad("bad row".into()))?;
        let col = col_part.trim().parse().map_err(|_| bad("bad col".into()))?;
        out.push(GhostEddyRecord { row, col, class });
    }
    Ok(out)
}

/// Reflect the grid's bottom/right edge so both sides divide by `multiple`.
fn mirror_pad(grid: &SshGrid, multiple: usize) -> Tensor4<f32> {
    let pad_rows = (multiple - grid.rows % multiple) % multiple;
    let pad_cols = (multiple - grid.cols % multiple) % multiple;
    let (h, w) = (grid.rows + pad_rows, grid.cols + pad_cols);
    let mut out = Tensor4::zeros(1, 1, h, w);
    for r in 0..h {
        let src_r = if r < grid.rows { r } else { 2 * grid.rows - 1 - r };
        for c in 0..w {
            let src_c = if c < grid.cols { c } else { 2 * grid.cols - 1 - c };
            out.set(0, 0, r, c, grid.get(src_r, src_c));
        }
    }
    out
}

/// Full-grid inference: mirror-pad to the model's stride multiple, predict,
/// crop back to the grid's extent.
pub fn predict_mask(weights: &NetworkWeights<f32>, grid: &SshGrid) -> Result<SegmentationMask> {
    let multiple = 1usize << weights.config().stages;
    if grid.rows < multiple || grid.cols < multiple {
        return Err(Error::GridTooSmall {
            rows: grid.rows,
            cols: grid.cols,
            patch: multiple,
        });
    }
    let input = mirror_pad(grid, multiple);
    let probs = weights.forward_infer(&input)?;
    let full = probabilities_to_masks(&probs).remove(0);
    if full.rows() == grid.rows && full.cols() == grid.cols {
        return Ok(full);
    }
    let mut cropped = SegmentationMask::zeros(grid.rows, grid.cols);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            cropped.set(r, c, full.get(r, c));
        }
    }
    Ok(cropped)
}

/// Read the predicted label at each recorded ghost center and report the
/// per-class fraction matching the recorded class.
pub fn ghost_check(
    weights: &NetworkWeights<f32>,
    grid: &SshGrid,
    ghosts: &[GhostEddyRecord],
) -> Result<GhostReport> {
    for (i, g) in ghosts.iter().enumerate() {
        if g.row >= grid.rows || g.col >= grid.cols {
            return Err(Error::InvalidConfig(format!(
                "ghost record {i} at ({}, {}) is outside the {}x{} grid",
                g.row, g.col, grid.rows, grid.cols
            )));
        }
        if g.class != 1 && g.class != 2 {
            return Err(Error::InvalidConfig(format!(
                "ghost record {i} class {} outside {{1, 2}}",
                g.class
            )));
        }
    }
    let mask = predict_mask(weights, grid)?;
    let mut report = GhostReport::default();
    for class in [1u8, 2u8] {
        let records: Vec<&GhostEddyRecord> = ghosts.iter().filter(|g| g.class == class).collect();
        if records.is_empty() {
            continue;
        }
        let hits = records.iter().filter(|g| mask.get(g.row, g.col) == class).count();
        let rate = GhostClassRate {
            hits,
            total: records.len(),
            rate: hits as f64 / records.len() as f64,
        };
        match class {
            1 => report.anticyclonic = Some(rate),
            _ => report.cyclonic = Some(rate),
        }
    }
    Ok(report)
}

/// Text form of the ghost report; absent classes print as absent.
pub fn format_ghost_report(report: &GhostReport) -> String {
    let fmt = |r: &Option<GhostClassRate>| match r {
        Some(r) => format!("{{\"hits\": {}, \"total\": {}, \"rate\": {:.4}}}", r.hits, r.total, r.rate),
        None => "null".into(),
    };
    format!(
        "{{\n  \"anticyclonic\": {},\n  \"cyclonic\": {}\n}}\n",
        fmt(&report.anticyclonic),
        fmt(&report.cyclonic)
    )
}
