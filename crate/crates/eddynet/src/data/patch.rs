//! Grid sanitization, patch sampling, one-hot encoding, and the train/val
//! split.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{PatchPair, Provenance, SegmentationMask, SshGrid};
use crate::error::{Error, Result};
use crate::loss::OneHotTarget;

/// Replace every fill-value cell with zero; all other cells are untouched.
/// Eddies live in regions with nonzero SSH, so zeroing land and missing data
/// removes outliers without disturbing detections. Idempotent.
pub fn sanitize(grid: &SshGrid) -> SshGrid {
    let mut out = grid.clone();
    for v in out.values.iter_mut() {
        if grid.is_fill(*v) {
            *v = 0.0;
        }
    }
    out
}

/// Crop one aligned `size x size` (SSH, mask) pair at a uniformly random
/// offset. The grid must be sanitized first (no fill cells) and at least as
/// large as the patch.
pub fn sample_patch(
    grid: &SshGrid,
    mask: &SegmentationMask,
    grid_id: &str,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PatchPair> {
    if grid.rows < size || grid.cols < size {
        return Err(Error::GridTooSmall {
            rows: grid.rows,
            cols: grid.cols,
            patch: size,
        });
    }
    if mask.rows() != grid.rows || mask.cols() != grid.cols {
        return Err(Error::shape(
            "sample_patch mask",
            format!("{}x{}", grid.rows, grid.cols),
            format!("{}x{}", mask.rows(), mask.cols()),
        ));
    }
    if grid.has_fill() {
        return Err(Error::InvalidConfig(
            "grid still contains fill values; sanitize before sampling".into(),
        ));
    }
    let row_offset = rng.gen_range(0..=grid.rows - size);
    let col_offset = rng.gen_range(0..=grid.cols - size);
    let mut ssh = Vec::with_capacity(size * size);
    for r in 0..size {
        let start = (row_offset + r) * grid.cols + col_offset;
        ssh.extend_from_slice(&grid.values[start..start + size]);
    }
    Ok(PatchPair {
        size,
        ssh,
        mask: mask.crop(row_offset, col_offset, size),
        provenance: Provenance {
            grid_id: grid_id.to_string(),
            row_offset,
            col_offset,
        },
    })
}

/// One-hot encode a label mask as a single-item batch tensor.
pub fn one_hot(mask: &SegmentationMask) -> OneHotTarget<f32> {
    OneHotTarget::from_masks(&[mask]).expect("a valid mask always encodes")
}

/// Deterministic shuffled split; `ratio` is the training fraction.
pub fn split_train_val<T>(items: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} outside [0, 1]")));
    }
    let n = items.len();
    let n_train = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n - n_train);
    for (i, idx) in order.into_iter().enumerate() {
        let item = slots[idx].take().expect("each index visited once");
        if i < n_train {
            train.push(item);
        } else {
            val.push(item);
        }
    }
    Ok((train, val))
}
