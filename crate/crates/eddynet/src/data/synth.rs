//! Synthetic eddy scenes: a desk-scale stand-in for tracker-derived ground
//! truth. Anticyclones are positive sea-level-anomaly bumps, cyclones
//! negative ones, so the class semantics match the real data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::contour::{EddyContour, EddyContourSet};
use super::{SegmentationMask, SshGrid, LABEL_ANTICYCLONIC, LABEL_CYCLONIC};
use crate::error::{Error, Result};

/// Scene generator settings.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub grid_size: usize,
    pub n_eddies: usize,
    /// Gaussian radius range in cells.
    pub radius_range: (f64, f64),
    /// Peak |SLA| range; sign is drawn per eddy.
    pub amplitude_range: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_size: 64,
            n_eddies: 3,
            radius_range: (5.0, 8.0),
            amplitude_range: (0.6, 1.2),
            noise_sigma: 0.05,
        }
    }
}

/// One placed eddy: center cell, class, Gaussian radius, signed amplitude,
/// and the half-peak label radius.
#[derive(Debug, Clone)]
pub struct SynthEddy {
    pub center_row: usize,
    pub center_col: usize,
    pub class: u8,
    pub radius: f64,
    pub amplitude: f64,
    pub label_radius: f64,
}

/// A generated scene with its placement metadata.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub grid: SshGrid,
    pub mask: SegmentationMask,
    pub eddies: Vec<SynthEddy>,
}

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Sentinel matching common altimetry products; synthetic cells never hit it.
const SYNTH_FILL: f64 = -2147483647.0;

/// Generate a scene: non-overlapping Gaussian SLA bumps over zero-mean noise.
/// A pixel is labeled with an eddy's class when the bump magnitude exceeds
/// half its peak, i.e. within `radius * sqrt(2 ln 2)` of the center.
pub fn synth_scene_detailed(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SynthScene> {
    let size = config.grid_size;
    if size == 0 {
        return Err(Error::InvalidConfig("grid_size must be positive".into()));
    }
    let half_peak = (2.0 * std::f64::consts::LN_2).sqrt();

    let mut eddies: Vec<SynthEddy> = Vec::with_capacity(config.n_eddies);
    let mut attempts = 0;
    while eddies.len() < config.n_eddies {
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::PackingFailed {
                requested: config.n_eddies,
                attempts,
            });
        }
        attempts += 1;
        let radius = rng.gen_range(config.radius_range.0..=config.radius_range.1);
        let label_radius = radius * half_peak;
        let margin = label_radius.ceil() as usize + 1;
        if 2 * margin >= size {
            continue;
        }
        let center_row = rng.gen_range(margin..size - margin);
        let center_col = rng.gen_range(margin..size - margin);
        let separated = eddies.iter().all(|e| {
            let dr = e.center_row as f64 - center_row as f64;
            let dc = e.center_col as f64 - center_col as f64;
            (dr * dr + dc * dc).sqrt() > e.label_radius + label_radius + 1.0
        });
        if !separated {
            continue;
        }
        let magnitude = rng.gen_range(config.amplitude_range.0..=config.amplitude_range.1);
        let positive: bool = rng.gen();
        eddies.push(SynthEddy {
            center_row,
            center_col,
            class: if positive { LABEL_ANTICYCLONIC } else { LABEL_CYCLONIC },
            radius,
            amplitude: if positive { magnitude } else { -magnitude },
            label_radius,
        });
    }

    let mut values = vec![0f32; size * size];
    for v in values.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = (config.noise_sigma * z) as f32;
    }
    let mut mask = SegmentationMask::zeros(size, size);
    for eddy in &eddies {
        for row in 0..size {
            for col in 0..size {
                let dr = row as f64 - eddy.center_row as f64;
                let dc = col as f64 - eddy.center_col as f64;
                let d2 = dr * dr + dc * dc;
                let bump = eddy.amplitude * (-d2 / (2.0 * eddy.radius * eddy.radius)).exp();
                values[row * size + col] += bump as f32;
                if bump.abs() > eddy.amplitude.abs() / 2.0 {
                    mask.set(row, col, eddy.class);
                }
            }
        }
    }

    let grid = SshGrid::new(size, size, values, -40.0, -50.0, 0.25, SYNTH_FILL)?;
    Ok(SynthScene { grid, mask, eddies })
}

/// Shorthand for callers that only need the (grid, mask) pair.
pub fn synth_scene(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(SshGrid, SegmentationMask)> {
    let scene = synth_scene_detailed(config, rng)?;
    Ok((scene.grid, scene.mask))
}

/// Approximate each eddy's label disk as a polygon in grid coordinates, for
/// the contour-file path.
pub fn scene_contours(scene: &SynthScene, vertices_per_circle: usize) -> EddyContourSet {
    let grid = &scene.grid;
    let contours = scene
        .eddies
        .iter()
        .map(|e| {
            let polygon = (0..vertices_per_circle)
                .map(|i| {
                    let angle = 2.0 * std::f64::consts::PI * i as f64 / vertices_per_circle as f64;
                    let row = e.center_row as f64 + e.label_radius * angle.sin();
                    let col = e.center_col as f64 + e.label_radius * angle.cos();
                    (grid.lon0 + col * grid.resolution, grid.lat0 + row * grid.resolution)
                })
                .collect();
            EddyContour { class: e.class, polygon }
        })
        .collect();
    EddyContourSet { contours }
}
