//! Data model and preparation pipeline: georeferenced SSH grids, contour
//! annotations, segmentation masks, patch sampling, and synthetic scenes.

pub mod contour;
pub mod grid_io;
pub mod patch;
pub mod synth;

use crate::error::{Error, Result};

/// Class labels of the segmentation problem.
pub const LABEL_NON_EDDY: u8 = 0;
pub const LABEL_ANTICYCLONIC: u8 = 1;
pub const LABEL_CYCLONIC: u8 = 2;
pub const NUM_CLASSES: usize = 3;

/// A georeferenced 2-D field of sea-surface-height values.
///
/// `lat0`/`lon0` locate the center of cell `(0, 0)`; `resolution` is degrees
/// per cell along both axes. Cells equal to `fill_value` mark land or missing
/// data until [`patch::sanitize`] replaces them with zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SshGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub lat0: f64,
    pub lon0: f64,
    pub resolution: f64,
    pub fill_value: f64,
}

impl SshGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f32>,
        lat0: f64,
        lon0: f64,
        resolution: f64,
        fill_value: f64,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape("SshGrid", rows * cols, values.len()));
        }
        if resolution <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        Ok(SshGrid {
            rows,
            cols,
            values,
            lat0,
            lon0,
            resolution,
            fill_value,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn is_fill(&self, v: f32) -> bool {
        (v as f64) == self.fill_value
    }

    pub fn has_fill(&self) -> bool {
        self.values.iter().any(|&v| self.is_fill(v))
    }
}

/// Per-pixel class labels aligned with a grid or patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SegmentationMask {
            rows,
            cols,
            labels: vec![LABEL_NON_EDDY; rows * cols],
        }
    }

    pub fn from_labels(rows: usize, cols: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape("SegmentationMask", rows * cols, labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidConfig(format!(
                "mask label {bad} outside {{0, 1, 2}}"
            )));
        }
        Ok(SegmentationMask { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        debug_assert!((label as usize) < NUM_CLASSES);
        self.labels[row * self.cols + col] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Crop a `size x size` window with top-left corner `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, size: usize) -> Self {
        let mut labels = Vec::with_capacity(size * size);
        for r in 0..size {
            let start = (row0 + r) * self.cols + col0;
            labels.extend_from_slice(&self.labels[start..start + size]);
        }
        SegmentationMask { rows: size, cols: size, labels }
    }
}

/// Where a patch came from, for traceability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub grid_id: String,
    pub row_offset: usize,
    pub col_offset: usize,
}

/// An aligned (SSH values, labels) training pair cropped from one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub size: usize,
    pub ssh: Vec<f32>,
    pub mask: SegmentationMask,
    pub provenance: Provenance,
}
