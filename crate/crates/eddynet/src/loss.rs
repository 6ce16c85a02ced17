//! Overlap metrics and training objectives: hard and soft dice, the dice
//! loss, categorical cross-entropy, and the per-class metric report.
//!
//! Dice of an absent class is defined as 1.0 on both paths (a 0/0 ratio
//! means prediction and truth agree that the class does not occur), which
//! keeps eddy-free patches well-defined during training and evaluation. The
//! soft path reaches this through a smoothing constant added to numerator
//! and denominator; it also lets a class the network confidently suppresses
//! (probability sums at float-residue scale) score ~1 against an empty
//! truth.

use crate::data::{SegmentationMask, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::tensor::Tensor4;

/// Probability clip for the cross-entropy logarithm.
pub const CCE_CLIP: f64 = 1e-7;

/// Smoothing added to the soft-dice numerator and denominator. Small enough
/// that closed-form fixtures hold to 1e-9 (the induced shift is about
/// 2.1 * SMOOTHING), large enough to dominate the float residue of saturated
/// softmax outputs on absent classes.
pub const DICE_SMOOTHING: f64 = 1e-10;

/// One-hot encoded labels: 3 binary channels whose per-pixel sum is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTarget<T>(Tensor4<T>);

impl<T: Scalar> OneHotTarget<T> {
    pub fn new(t: Tensor4<T>) -> Result<Self> {
        let (n, c, h, w) = t.shape();
        if c != NUM_CLASSES {
            return Err(Error::shape("OneHotTarget channels", NUM_CLASSES, c));
        }
        for bn in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let mut sum = T::zero();
                    for ch in 0..c {
                        let v = t.get(bn, ch, y, x);
                        if v != T::zero() && v != T::one() {
                            return Err(Error::InvalidConfig(format!(
                                "one-hot entry {v} is neither 0 nor 1"
                            )));
                        }
                        sum += v;
                    }
                    if sum != T::one() {
                        return Err(Error::InvalidConfig(
                            "one-hot channel sum differs from 1".into(),
                        ));
                    }
                }
            }
        }
        Ok(OneHotTarget(t))
    }

    /// Stack masks into a one-hot batch tensor, one batch item per mask.
    pub fn from_masks(masks: &[&SegmentationMask]) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (h, w) = (masks[0].rows(), masks[0].cols());
        let mut t = Tensor4::zeros(masks.len(), NUM_CLASSES, h, w);
        for (bn, mask) in masks.iter().enumerate() {
            if mask.rows() != h || mask.cols() != w {
                return Err(Error::shape(
                    "OneHotTarget::from_masks",
                    format!("{h}x{w}"),
                    format!("{}x{}", mask.rows(), mask.cols()),
                ));
            }
            for y in 0..h {
                for x in 0..w {
                    t.set(bn, mask.get(y, x) as usize, y, x, T::one());
                }
            }
        }
        Ok(OneHotTarget(t))
    }

    pub fn tensor(&self) -> &Tensor4<T> {
        &self.0
    }

    /// Recover the label mask of one batch item (argmax inverse).
    pub fn to_mask(&self, batch_item: usize) -> SegmentationMask {
        let (_, _, h, w) = self.0.shape();
        let mut mask = SegmentationMask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..NUM_CLASSES {
                    if self.0.get(batch_item, ch, y, x) == T::one() {
                        mask.set(y, x, ch as u8);
                    }
                }
            }
        }
        mask
    }
}

/// Pixel tallies behind a hard dice value; additive, so per-patch tallies can
/// be pooled over a whole evaluation set before taking the ratio.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiceTally {
    pub pred: u64,
    pub truth: u64,
    pub intersection: u64,
}

impl DiceTally {
    pub fn count(pred: &SegmentationMask, truth: &SegmentationMask, class_id: u8) -> Result<Self> {
        if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
            return Err(Error::shape(
                "dice masks",
                format!("{}x{}", truth.rows(), truth.cols()),
                format!("{}x{}", pred.rows(), pred.cols()),
            ));
        }
        let mut tally = DiceTally::default();
        for (p, g) in pred.labels().iter().zip(truth.labels()) {
            let pm = *p == class_id;
            let gm = *g == class_id;
            tally.pred += pm as u64;
            tally.truth += gm as u64;
            tally.intersection += (pm && gm) as u64;
        }
        Ok(tally)
    }

    pub fn merge(&mut self, other: DiceTally) {
        self.pred += other.pred;
        self.truth += other.truth;
        self.intersection += other.intersection;
    }

    /// `2|P intersect G| / (|P| + |G|)`; 1.0 when the class is absent from both.
    pub fn dice(&self) -> f64 {
        let denom = self.pred + self.truth;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }
}

/// Hard (binarized) dice coefficient of one class.
pub fn hard_dice(pred: &SegmentationMask, truth: &SegmentationMask, class_id: u8) -> Result<f64> {
    Ok(DiceTally::count(pred, truth, class_id)?.dice())
}

/// Per-class soft sums over every pixel of the batch; `(sum p*g, sum p, sum g)`.
fn soft_sums<T: Scalar>(probs: &Tensor4<T>, target: &OneHotTarget<T>, class_id: usize) -> (T, T, T) {
    let (n, _, _, _) = probs.shape();
    let mut s_pg = T::zero();
    let mut s_p = T::zero();
    let mut s_g = T::zero();
    for bn in 0..n {
        let p = probs.plane(bn, class_id);
        let g = target.0.plane(bn, class_id);
        let mut pg = T::zero();
        for (a, b) in p.iter().zip(g) {
            pg += *a * *b;
        }
        s_pg += pg;
        s_p += pairwise_sum(p);
        s_g += pairwise_sum(g);
    }
    (s_pg, s_p, s_g)
}

fn check_probs_target<T: Scalar>(probs: &Tensor4<T>, target: &OneHotTarget<T>) -> Result<()> {
    if probs.shape() != target.0.shape() {
        return Err(Error::shape(
            "probabilities vs target",
            format!("{:?}", target.0.shape()),
            format!("{:?}", probs.shape()),
        ));
    }
    Ok(())
}

/// Differentiable one-vs-all dice of one class:
/// `(2 * sum(p*g) + smoothing) / (sum(p) + sum(g) + smoothing)` over all
/// pixels of the batch; an empty class scores 1.0 through the smoothing.
pub fn soft_dice<T: Scalar>(
    probs: &Tensor4<T>,
    target: &OneHotTarget<T>,
    class_id: usize,
) -> Result<T> {
    check_probs_target(probs, target)?;
    let (s_pg, s_p, s_g) = soft_sums(probs, target, class_id);
    let smooth = T::lit(DICE_SMOOTHING);
    Ok((T::lit(2.0) * s_pg + smooth) / (s_p + s_g + smooth))
}

/// `1 - mean(soft dice over the 3 classes)` plus its analytic gradient with
/// respect to the probabilities.
pub fn dice_loss<T: Scalar>(
    probs: &Tensor4<T>,
    target: &OneHotTarget<T>,
) -> Result<(T, Tensor4<T>)> {
    check_probs_target(probs, target)?;
    let (n, _, h, w) = probs.shape();
    let classes = T::lit(NUM_CLASSES as f64);
    let two = T::lit(2.0);

    let smooth = T::lit(DICE_SMOOTHING);
    let mut mean_dice = T::zero();
    let mut grad = Tensor4::zeros(n, NUM_CLASSES, h, w);
    for class_id in 0..NUM_CLASSES {
        let (s_pg, s_p, s_g) = soft_sums(probs, target, class_id);
        let denom = s_p + s_g + smooth;
        let numer = two * s_pg + smooth;
        mean_dice += numer / denom;
        // d dice / d p_i = (2 g_i * denom - numer) / denom^2
        // d loss / d p_i = -(1/3) * that
        let denom_sq = denom * denom;
        let scale = -(T::one() / classes);
        for bn in 0..n {
            let g = target.0.plane(bn, class_id);
            let out_base = grad.idx(bn, class_id, 0, 0);
            let out = &mut grad.as_mut_slice()[out_base..out_base + h * w];
            for (o, &gv) in out.iter_mut().zip(g) {
                *o = scale * (two * gv * denom - numer) / denom_sq;
            }
        }
    }
    Ok((T::one() - mean_dice / classes, grad))
}

/// Mean over pixels of `-sum_k g_k ln(p_k)` with probabilities clipped to
/// `[1e-7, 1 - 1e-7]`, plus the gradient with respect to the probabilities.
pub fn categorical_cross_entropy<T: Scalar>(
    probs: &Tensor4<T>,
    target: &OneHotTarget<T>,
) -> Result<(T, Tensor4<T>)> {
    check_probs_target(probs, target)?;
    let (n, c, h, w) = probs.shape();
    let pixels = T::lit((n * h * w) as f64);
    let lo = T::lit(CCE_CLIP);
    let hi = T::one() - lo;

    let mut loss = T::zero();
    let mut grad = Tensor4::zeros(n, c, h, w);
    {
        let gslice = grad.as_mut_slice();
        for (i, (&p, &g)) in probs.as_slice().iter().zip(target.0.as_slice()).enumerate() {
            if g == T::one() {
                let clipped = p.max(lo).min(hi);
                loss -= clipped.ln();
                if p > lo && p < hi {
                    gslice[i] = -(T::one() / clipped) / pixels;
                }
            }
        }
    }
    Ok((loss / pixels, grad))
}

/// Collapse a probability batch to label masks by per-pixel argmax (ties to
/// the lowest class index).
pub fn probabilities_to_masks<T: Scalar>(probs: &Tensor4<T>) -> Vec<SegmentationMask> {
    let (n, c, h, w) = probs.shape();
    debug_assert_eq!(c, NUM_CLASSES);
    (0..n)
        .map(|bn| {
            let mut mask = SegmentationMask::zeros(h, w);
            for y in 0..h {
                for x in 0..w {
                    let mut best = probs.get(bn, 0, y, x);
                    let mut label = 0u8;
                    for ch in 1..c {
                        let v = probs.get(bn, ch, y, x);
                        if v > best {
                            best = v;
                            label = ch as u8;
                        }
                    }
                    mask.set(y, x, label);
                }
            }
            mask
        })
        .collect()
}

/// Fraction of pixels whose labels agree.
pub fn global_accuracy(pred: &SegmentationMask, truth: &SegmentationMask) -> Result<f64> {
    if pred.rows() != truth.rows() || pred.cols() != truth.cols() {
        return Err(Error::shape(
            "accuracy masks",
            format!("{}x{}", truth.rows(), truth.cols()),
            format!("{}x{}", pred.rows(), pred.cols()),
        ));
    }
    let total = pred.labels().len();
    let hits = pred
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(p, g)| p == g)
        .count();
    Ok(hits as f64 / total as f64)
}

/// Per-class dice, their mean, and global accuracy.
///
/// `mean_dice` is always the arithmetic mean of the three per-class values.
/// Standard deviations stay `None` here; the evaluation protocol fills them
/// in across sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Indexed by class label: `[non-eddy, anticyclonic, cyclonic]`.
    pub dice: [f64; NUM_CLASSES],
    pub dice_std: Option<[f64; NUM_CLASSES]>,
    pub mean_dice: f64,
    pub mean_dice_std: Option<f64>,
    pub global_accuracy: f64,
    pub global_accuracy_std: Option<f64>,
}

impl MetricReport {
    pub fn from_dice_and_accuracy(dice: [f64; NUM_CLASSES], global_accuracy: f64) -> Self {
        MetricReport {
            dice,
            dice_std: None,
            mean_dice: dice.iter().sum::<f64>() / NUM_CLASSES as f64,
            mean_dice_std: None,
            global_accuracy,
            global_accuracy_std: None,
        }
    }

    pub fn non_eddy(&self) -> f64 {
        self.dice[0]
    }

    pub fn anticyclonic(&self) -> f64 {
        self.dice[1]
    }

    pub fn cyclonic(&self) -> f64 {
        self.dice[2]
    }
}

/// Pool pixel tallies over matched mask pairs and assemble the report.
pub fn metric_report(preds: &[SegmentationMask], truths: &[SegmentationMask]) -> Result<MetricReport> {
    if preds.len() != truths.len() {
        return Err(Error::shape("metric_report", truths.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut tallies = [DiceTally::default(); NUM_CLASSES];
    let mut hit = 0u64;
    let mut total = 0u64;
    for (p, g) in preds.iter().zip(truths) {
        for (class_id, tally) in tallies.iter_mut().enumerate() {
            tally.merge(DiceTally::count(p, g, class_id as u8)?);
        }
        hit += p.labels().iter().zip(g.labels()).filter(|(a, b)| a == b).count() as u64;
        total += p.labels().len() as u64;
    }
    let dice = [tallies[0].dice(), tallies[1].dice(), tallies[2].dice()];
    Ok(MetricReport::from_dice_and_accuracy(dice, hit as f64 / total as f64))
}
