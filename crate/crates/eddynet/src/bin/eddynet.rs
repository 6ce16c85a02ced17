//! Batch command-line surface: synthetic data generation, training,
//! prediction, the evaluation protocol, the ghost-center check, and the
//! gradient-verification suite.
//!
//! Exit codes: 0 on success, 2 on usage errors (clap's default), 1 on any
//! runtime failure. Diagnostics go to stderr; results go to files and stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eddynet::data::contour::save_contours;
use eddynet::data::grid_io::{load_grid, save_grid, save_mask, save_mask_ppm};
use eddynet::data::patch::{sample_patch, sanitize, split_train_val};
use eddynet::data::synth::{scene_contours, synth_scene_detailed, SynthConfig};
use eddynet::data::PatchPair;
use eddynet::error::Error;
use eddynet::eval::{
    evaluate_protocol, evaluate_protocol_with, format_ghost_report, format_protocol_report,
    ghost_check, parse_ghost_records, predict_mask, DiceAggregation, EvalProtocolConfig,
};
use eddynet::model::io::load_weights;
use eddynet::model::Variant;
use eddynet::nn::gradcheck;
use eddynet::train::{checkpoint, train, LossKind, TrainConfig};

#[derive(Parser)]
#[command(name = "eddynet", about = "Pixel-wise ocean eddy segmentation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic eddy scenes (grid, mask, and contour files plus a
    /// manifest).
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        grid_size: usize,
        #[arg(long, default_value_t = 3)]
        n_eddies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Train on a scene directory and write the best weights plus history.
    Train {
        /// Directory holding a synth manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "relu_bn")]
        variant: String,
        #[arg(long, default_value = "dice")]
        loss: String,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Dropout rate; defaults to 0.2 (relu_bn) or 0.1 (selu).
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 5)]
        patience: usize,
        #[arg(long, default_value_t = 200)]
        max_epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square patch side cropped from each scene.
        #[arg(long, default_value_t = 128)]
        patch_size: usize,
        /// Training fraction of the scene pool.
        #[arg(long, default_value_t = 0.8)]
        val_split: f64,
        #[arg(long, default_value_t = 3)]
        stages: usize,
        #[arg(long, default_value_t = 32)]
        filters: usize,
    },
    /// Predict a mask (or color pixmap) for one grid file.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Output path; `.ppm` writes a pixmap, anything else a mask file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the repeated-random-sets evaluation protocol over a scene
    /// directory.
    Eval {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        n_sets: usize,
        #[arg(long, default_value_t = 360)]
        set_size: usize,
        #[arg(long, default_value_t = 120)]
        patch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Average dice per patch instead of pooling pixels per set.
        #[arg(long)]
        per_patch: bool,
        /// Validation mode: use the ground-truth masks as the predictor.
        #[arg(long)]
        truth_oracle: bool,
    },
    /// Check predicted labels at recorded ghost-eddy centers.
    Ghost {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Text file of `class;row,col` records.
        #[arg(long)]
        ghosts: PathBuf,
    },
    /// Run the finite-difference gradient suite; nonzero exit on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        seeds_per_case: usize,
    },
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.txt")
}

/// Load every scene listed in a directory manifest as a (grid, mask) pair.
fn load_scenes(dir: &Path) -> Result<Vec<(eddynet::data::SshGrid, eddynet::data::SegmentationMask)>, Error> {
    let manifest = std::fs::read_to_string(manifest_path(dir))?;
    let mut scenes = Vec::new();
    for line in manifest.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(';');
        let grid_rel = parts
            .next()
            .ok_or_else(|| Error::InvalidConfig("manifest line missing grid".into()))?;
        let mask_rel = parts
            .next()
            .ok_or_else(|| Error::InvalidConfig("manifest line missing mask".into()))?;
        let grid = load_grid(&dir.join(grid_rel))?;
        let mask = eddynet::data::grid_io::load_mask(&dir.join(mask_rel))?;
        scenes.push((grid, mask));
    }
    Ok(scenes)
}

/// One seeded patch per scene.
fn scenes_to_patches(
    scenes: &[(eddynet::data::SshGrid, eddynet::data::SegmentationMask)],
    patch_size: usize,
    seed: u64,
) -> Result<Vec<PatchPair>, Error> {
    scenes
        .iter()
        .enumerate()
        .map(|(i, (grid, mask))| {
            let clean = sanitize(grid);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            sample_patch(&clean, mask, &format!("scene{i:04}"), patch_size, &mut rng)
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            out,
            n,
            grid_size,
            n_eddies,
            seed,
            noise,
        } => {
            std::fs::create_dir_all(&out)?;
            let config = SynthConfig {
                grid_size,
                n_eddies,
                noise_sigma: noise,
                ..SynthConfig::default()
            };
            let mut manifest = String::new();
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let scene = synth_scene_detailed(&config, &mut rng)?;
                let grid_name = format!("scene_{i:04}.sshg");
                let mask_name = format!("scene_{i:04}.mask");
                let contour_name = format!("scene_{i:04}.contours");
                save_grid(&scene.grid, &out.join(&grid_name))?;
                save_mask(&scene.mask, &out.join(&mask_name))?;
                save_contours(&scene_contours(&scene, 48), &out.join(&contour_name))?;
                manifest.push_str(&format!("{grid_name};{mask_name};{contour_name}\n"));
            }
            std::fs::write(manifest_path(&out), manifest)?;
            eprintln!("wrote {n} scenes to {}", out.display());
            Ok(())
        }
        Command::Train {
            data,
            out,
            variant,
            loss,
            lr,
            dropout,
            batch,
            patience,
            max_epochs,
            seed,
            patch_size,
            val_split,
            stages,
            filters,
        } => {
            let scenes = load_scenes(&data)?;
            let patches = scenes_to_patches(&scenes, patch_size, seed)?;
            let (train_set, val_set) = split_train_val(patches, val_split, seed)?;
            eprintln!(
                "{} training patches, {} validation patches of {patch_size}x{patch_size}",
                train_set.len(),
                val_set.len()
            );
            let config = TrainConfig {
                loss: LossKind::parse(&loss)?,
                variant: Variant::parse(&variant)?,
                batch_size: batch,
                patience,
                max_epochs,
                learning_rate: lr,
                dropout_rate: dropout,
                seed,
                stages,
                filters,
            };
            let (weights, history) = train(&config, &train_set, &val_set)?;
            println!("{}", weights.param_report());
            let paths = checkpoint(&weights, &history, &out)?;
            for record in &history.epochs {
                eprintln!(
                    "epoch {:>3}  train {:.5}  val {:.5}  dice {:.4}  {:.1}s",
                    record.epoch, record.train_loss, record.val_loss, record.val_mean_dice, record.seconds
                );
            }
            println!(
                "best epoch {:?}; weights {}; history {}",
                history.best_epoch,
                paths.weights.display(),
                paths.history.display()
            );
            Ok(())
        }
        Command::Predict { weights, grid, out } => {
            let weights = load_weights(&weights)?;
            let grid = sanitize(&load_grid(&grid)?);
            let mask = predict_mask(&weights, &grid)?;
            if out.extension().map(|e| e == "ppm").unwrap_or(false) {
                save_mask_ppm(&mask, &out)?;
            } else {
                save_mask(&mask, &out)?;
            }
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Eval {
            weights,
            data,
            n_sets,
            set_size,
            patch,
            seed,
            per_patch,
            truth_oracle,
        } => {
            let scenes = load_scenes(&data)?;
            let pool = scenes_to_patches(&scenes, patch, seed)?;
            let config = EvalProtocolConfig {
                n_sets,
                set_size,
                patch_size: patch,
                seed,
            };
            let aggregation = if per_patch {
                DiceAggregation::PerPatchMean
            } else {
                DiceAggregation::PooledPixels
            };
            let report = if truth_oracle {
                evaluate_protocol_with(|p| Ok(p.mask.clone()), &pool, &config, aggregation)?
            } else {
                let path = weights.ok_or_else(|| {
                    Error::InvalidConfig("--weights is required unless --truth-oracle is set".into())
                })?;
                let weights = load_weights(&path)?;
                evaluate_protocol(&weights, &pool, &config, aggregation)?
            };
            print!("{}", format_protocol_report(&report));
            Ok(())
        }
        Command::Ghost { weights, grid, ghosts } => {
            let weights = load_weights(&weights)?;
            let grid = sanitize(&load_grid(&grid)?);
            let records = parse_ghost_records(&std::fs::read_to_string(&ghosts)?)?;
            let report = ghost_check(&weights, &grid, &records)?;
            print!("{}", format_ghost_report(&report));
            Ok(())
        }
        Command::Gradcheck { seed, seeds_per_case } => {
            let reports = gradcheck::full_suite(seed, seeds_per_case)?;
            let mut all_pass = true;
            for report in &reports {
                println!(
                    "{:<22} seeds {:>2}  max rel err {:.3e}  {}",
                    report.case,
                    report.seeds,
                    report.max_relative_error,
                    if report.pass { "PASS" } else { "FAIL" }
                );
                all_pass &= report.pass;
            }
            if all_pass {
                Ok(())
            } else {
                Err(Error::InvalidConfig("gradient checks failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
