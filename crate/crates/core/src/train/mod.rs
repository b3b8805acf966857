//! Phased training: progressive resizing with optional encoder freezing,
//! one-cycle learning rates, plateau reduction, early stopping and
//! best-model checkpoints.

mod optim;
mod schedule;

pub use optim::{AdamConfig, AdamW};
pub use schedule::{
    early_stop_check, epochs_since_improvement, is_improvement, one_cycle_lr, plateau_step,
    EarlyStopConfig, OneCycleConfig, PlateauConfig,
};

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::ArchiveMetadata;
use crate::degrade::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::{load_image, ImageTensor};
use crate::loss::{LossConfig, PerceptualLoss};
use crate::model::{ForwardOptions, UResNet, ALIGNMENT};
use crate::nn::Module;
use crate::tensor::Tensor;

pub const HISTORY_JSON: &str = "history.json";
pub const HISTORY_CSV: &str = "history.csv";
pub const STATE_FILE: &str = "train_state.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub image_size: usize,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub max_lr: f64,
    pub encoder_frozen: bool,
}

fn default_batch_size() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phases: Vec<PhaseConfig>,
    pub one_cycle: OneCycleConfig,
    pub plateau: PlateauConfig,
    pub early_stop: EarlyStopConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let phase = |image_size, encoder_frozen, max_lr| PhaseConfig {
            image_size,
            epochs: 10,
            batch_size: 8,
            max_lr,
            encoder_frozen,
        };
        Self {
            phases: vec![phase(64, true, 1e-3), phase(128, false, 1e-4), phase(256, false, 1e-4)],
            one_cycle: OneCycleConfig::default(),
            plateau: PlateauConfig::default(),
            early_stop: EarlyStopConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.phases.is_empty() {
            return bad("at least one training phase is required".into());
        }
        let mut prev = 0;
        for (i, p) in self.phases.iter().enumerate() {
            if p.image_size == 0 || p.image_size % ALIGNMENT != 0 {
                return bad(format!("phase {i}: image_size must be a positive multiple of {ALIGNMENT}"));
            }
            if p.image_size < prev {
                return bad(format!("phase {i}: image sizes must be nondecreasing"));
            }
            prev = p.image_size;
            if p.epochs == 0 || p.batch_size == 0 {
                return bad(format!("phase {i}: epochs and batch_size must be >= 1"));
            }
            if !(p.max_lr > 0.0 && p.max_lr.is_finite()) {
                return bad(format!("phase {i}: max_lr must be positive"));
            }
        }
        let oc = &self.one_cycle;
        if !(oc.pct_start > 0.0 && oc.pct_start < 1.0) {
            return bad("one_cycle.pct_start must lie in (0, 1)".into());
        }
        if !(oc.div_start > 1.0 && oc.div_final > 1.0) {
            return bad("one_cycle divisors must exceed 1".into());
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor < 1.0) {
            return bad("plateau.factor must lie in (0, 1)".into());
        }
        if self.plateau.min_delta < 0.0 || self.early_stop.min_delta < 0.0 {
            return bad("min_delta must be >= 0".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(a.epsilon > 0.0) || a.weight_decay < 0.0 {
            return bad("adam epsilon must be > 0 and weight_decay >= 0".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based over the whole run, including resumed history.
    pub epoch: usize,
    pub phase: usize,
    pub image_size: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used for the epoch's last optimizer step.
    pub lr: f64,
    /// Plateau multiplier in effect during the epoch.
    pub lr_scale: f64,
    /// Index of the epoch's last step within its phase, and the phase
    /// length in steps: `lr = one_cycle_lr(phase_step, phase_total_steps) * lr_scale`.
    pub phase_step: usize,
    pub phase_total_steps: usize,
    pub global_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainState {
    pub global_step: u64,
    pub current_phase: usize,
    /// Running minimum of validation losses.
    pub best_val_loss: Option<f64>,
    pub epochs_since_improvement: usize,
    pub plateau_wait: usize,
    pub lr_scale: f64,
    /// Validation loss of the archive currently on disk.
    pub best_checkpoint_loss: Option<f64>,
    /// Early stopping only looks at the current phase; these are its
    /// validation losses and the best loss before it began.
    pub phase_val_losses: Vec<f64>,
    pub phase_start_best: Option<f64>,
    pub history: Vec<EpochRecord>,
}

impl Default for TrainState {
    fn default() -> Self {
        Self {
            global_step: 0,
            current_phase: 0,
            best_val_loss: None,
            epochs_since_improvement: 0,
            plateau_wait: 0,
            lr_scale: 1.0,
            best_checkpoint_loss: None,
            phase_val_losses: Vec::new(),
            phase_start_best: None,
            history: Vec::new(),
        }
    }
}

impl TrainState {
    /// Opens a new phase window for early stopping and plateau counting.
    pub fn begin_phase(&mut self, phase: usize) {
        self.current_phase = phase;
        self.phase_val_losses.clear();
        self.phase_start_best = self.best_val_loss;
        self.plateau_wait = 0;
        self.epochs_since_improvement = 0;
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Saves `model` to `dir` when `val_loss` is below every loss checkpointed
/// so far. Returns whether an archive was written.
pub fn checkpoint_best(
    state: &mut TrainState,
    model: &UResNet<f32>,
    val_loss: f64,
    dir: impl AsRef<Path>,
) -> Result<bool> {
    if !is_improvement(val_loss, state.best_checkpoint_loss, 0.0) {
        return Ok(false);
    }
    let metadata = ArchiveMetadata {
        step: state.global_step,
        epoch: state.history.last().map(|r| r.epoch),
        val_loss: Some(val_loss),
        ..Default::default()
    };
    model.save_weights(dir, metadata)?;
    state.best_checkpoint_loss = Some(val_loss);
    Ok(true)
}

/// Pair indices on each side of a split that keeps all variants of a
/// target together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles distinct targets with `seed` and assigns
/// `round(fraction * targets)` of them to validation.
pub fn split_by_target(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<Split> {
    if manifest.pairs.is_empty() {
        return Err(Error::EmptyDataset("manifest lists no pairs".into()));
    }
    let mut targets: Vec<&str> = manifest
        .pairs
        .iter()
        .map(|p| p.target.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    targets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (fraction * targets.len() as f64).round() as usize;
    if n_val == 0 {
        return Err(Error::Split(format!(
            "validation fraction {fraction} of {} targets selects no pairs",
            targets.len()
        )));
    }
    if n_val >= targets.len() {
        return Err(Error::Split("validation split leaves no training pairs".into()));
    }
    let val: BTreeSet<&str> = targets[..n_val].iter().copied().collect();
    let (validation, train) = (0..manifest.pairs.len())
        .partition(|&i| val.contains(manifest.pairs[i].target.as_str()));
    Ok(Split { train, validation })
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Directory of pretrained archives for the loss extractor.
    pub weights_cache: Option<PathBuf>,
    /// State of an earlier run to continue from (history is appended).
    pub resume: Option<TrainState>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub state: TrainState,
    /// Directory holding the best archive.
    pub best_archive: PathBuf,
}

struct Pair {
    degraded: ImageTensor,
    target: ImageTensor,
}

fn load_pairs(manifest: &DatasetManifest, root: &Path) -> Result<Vec<Pair>> {
    manifest
        .pairs
        .iter()
        .map(|p| {
            Ok(Pair {
                degraded: load_image(root.join(&p.degraded))?,
                target: load_image(root.join(&p.target))?,
            })
        })
        .collect()
}

fn resize_all(pairs: &[Pair], size: usize) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    pairs
        .iter()
        .map(|p| {
            Ok((
                p.degraded.resize_bilinear(size, size)?,
                p.target.resize_bilinear(size, size)?,
            ))
        })
        .collect()
}

fn stack(images: &[(ImageTensor, ImageTensor)], idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let x: Vec<&ImageTensor> = idx.iter().map(|&i| &images[i].0).collect();
    let y: Vec<&ImageTensor> = idx.iter().map(|&i| &images[i].1).collect();
    Ok((Tensor::from_images(&x)?, Tensor::from_images(&y)?))
}

/// Mean eval-mode loss over `idx`, weighted by pair.
fn validation_loss(
    model: &UResNet<f32>,
    loss: &mut PerceptualLoss<f32>,
    images: &[(ImageTensor, ImageTensor)],
    idx: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let (x, y) = stack(images, chunk)?;
        let pred = model.forward(&x, ForwardOptions::default())?;
        total += loss.forward(&pred, &y)?.total * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

pub fn write_history(dir: &Path, history: &[EpochRecord]) -> Result<()> {
    let json_path = dir.join(HISTORY_JSON);
    let text = serde_json::to_string_pretty(history).expect("history serializes");
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = dir.join(HISTORY_CSV);
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;
    let to_io = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    w.write_record(["epoch", "train_loss", "val_loss", "lr"]).map_err(to_io)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.lr.to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

pub fn read_history(dir: &Path) -> Result<Vec<EpochRecord>> {
    let path = dir.join(HISTORY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Trains `model` on the pairs of the manifest at `manifest_path`,
/// writing the best archive, history and final state under `out_dir`.
///
/// Runs are deterministic for a fixed configuration: batches are drawn
/// from a single seeded stream and all arithmetic runs on one thread.
pub fn fit(
    model: &mut UResNet<f32>,
    manifest_path: impl AsRef<Path>,
    config: &TrainConfig,
    loss_config: &LossConfig,
    out_dir: impl AsRef<Path>,
    options: FitOptions,
) -> Result<FitOutcome> {
    config.validate()?;
    let manifest_path = manifest_path.as_ref();
    let out_dir = out_dir.as_ref();
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let split = split_by_target(&manifest, config.validation_fraction, config.seed)?;
    let pairs = load_pairs(&manifest, root)?;
    let mut loss = PerceptualLoss::<f32>::new(loss_config, options.weights_cache.as_deref())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut state = options.resume.unwrap_or_default();
    let mut opt = AdamW::new(config.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);

    for (pi, phase) in config.phases.iter().enumerate() {
        state.begin_phase(pi);
        model.freeze_encoder(phase.encoder_frozen);
        let images = resize_all(&pairs, phase.image_size)?;
        let steps_per_epoch = split.train.len().div_ceil(phase.batch_size);
        let total_steps = steps_per_epoch * phase.epochs;
        let mut phase_step = 0;
        for _ in 0..phase.epochs {
            let mut order = split.train.clone();
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut lr = 0.0;
            let lr_scale = state.lr_scale;
            for batch in order.chunks(phase.batch_size) {
                let (x, y) = stack(&images, batch)?;
                model.zero_grad();
                let pred = model.forward_train(&x)?;
                let (terms, g) = loss.forward_backward(&pred, &y)?;
                model.backward(&g);
                lr = one_cycle_lr(
                    phase_step,
                    total_steps,
                    phase.max_lr,
                    config.one_cycle.pct_start,
                    config.one_cycle.div_start,
                    config.one_cycle.div_final,
                )? * lr_scale;
                opt.step(model, lr);
                sum += terms.total * batch.len() as f64;
                phase_step += 1;
                state.global_step += 1;
            }
            let train_loss = sum / split.train.len() as f64;
            let val_loss = validation_loss(model, &mut loss, &images, &split.validation, phase.batch_size)?;
            state.history.push(EpochRecord {
                epoch: state.history.len() + 1,
                phase: pi,
                image_size: phase.image_size,
                train_loss,
                val_loss,
                lr,
                lr_scale,
                phase_step: phase_step - 1,
                phase_total_steps: total_steps,
                global_step: state.global_step,
            });
            log::info!(
                "epoch {} phase {pi} size {} train {train_loss:.5} val {val_loss:.5} lr {lr:.3e}",
                state.history.len(),
                phase.image_size
            );
            checkpoint_best(&mut state, model, val_loss, out_dir)?;
            plateau_step(&mut state, val_loss, &config.plateau);
            state.epochs_since_improvement = epochs_since_improvement(&state, config.early_stop.min_delta);
            write_history(out_dir, &state.history)?;
            if early_stop_check(&state, &config.early_stop) {
                log::info!("early stop in phase {pi}");
                break;
            }
        }
    }
    model.freeze_encoder(false);
    state.save(out_dir.join(STATE_FILE))?;
    Ok(FitOutcome {
        state,
        best_archive: out_dir.to_path_buf(),
    })
}
