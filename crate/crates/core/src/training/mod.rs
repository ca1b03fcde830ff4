//! Objective, learning-rate schedule, window sampling, augmentation and the
//! two-pass online training procedure.

mod step;
mod trainer;

pub use step::{
    loss_var, offline_grads, two_pass_grads, two_pass_step, Pass1, StepGrads, StepReport,
};
pub use trainer::{model_from_checkpoint, LogRecord, TrainSummary, Trainer, CKPT_DIR, LOG_FILE};

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MixtureExample;
use crate::dsp::{eeg_frames_for, mix_at_snr, AUDIO_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Utterance-level training without the speaker encoder.
    Offline,
    /// Random windows with two-pass speaker-encoder dropout.
    Online,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Self::Offline),
            "online" => Ok(Self::Online),
            _ => Err(Error::Config(format!("unknown mode '{s}' (offline, online)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative scale-invariant SDR.
    SiSdr,
    /// Negative plain SNR (scale-sensitive).
    Snr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub loss: LossKind,
    pub warmup_n: u64,
    /// `lr = lr_scale · lr_dim^-0.5 · step · warmup_n^-1.5` during warmup.
    pub lr_scale: f64,
    pub lr_dim: f64,
    pub plateau_patience: u32,
    pub halving: f64,
    pub early_stop_patience: u32,
    pub batch_size: usize,
    /// Speaker-encoder dropout probability.
    pub dropout_p: f64,
    pub augment: bool,
    pub snr_range_db: (f64, f64),
    pub chunk_choices_s: Vec<f64>,
    pub buffer_range_s: (f64, f64),
    /// Optimizer steps per epoch.
    pub steps_per_epoch: u64,
    pub max_epochs: u64,
    pub max_steps: Option<u64>,
    /// Wall-clock budget; training stops at the first step boundary past it.
    pub max_seconds: Option<f64>,
    /// Offline mode: random crop of at most this many seconds per example.
    pub segment_s: Option<f64>,
    /// Validation examples used per epoch (all when `None`), cropped like training.
    pub val_limit: Option<usize>,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Offline,
            loss: LossKind::SiSdr,
            warmup_n: 15_000,
            lr_scale: 0.1,
            lr_dim: 64.0,
            plateau_patience: 6,
            halving: 0.5,
            early_stop_patience: 10,
            batch_size: 4,
            dropout_p: 0.2,
            augment: true,
            snr_range_db: (-10.0, 10.0),
            chunk_choices_s: vec![0.05, 0.1, 0.2],
            buffer_range_s: (1.0, 10.0),
            steps_per_epoch: 2000,
            max_epochs: 100,
            max_steps: None,
            max_seconds: None,
            segment_s: None,
            val_limit: None,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1]", self.dropout_p));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be >= 1".into());
        }
        if self.warmup_n == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return bad("warmup_n, batch_size and steps_per_epoch must be >= 1".into());
        }
        if self.chunk_choices_s.is_empty() || self.chunk_choices_s.iter().any(|&c| c <= 0.0) {
            return bad("chunk_choices_s must be non-empty and positive".into());
        }
        let (lo, hi) = self.buffer_range_s;
        if !(0.0 < lo && lo <= hi) {
            return bad(format!("buffer_range_s ({lo}, {hi}) is invalid"));
        }
        let (a, b) = self.snr_range_db;
        if a > b {
            return bad(format!("snr_range_db ({a}, {b}) is invalid"));
        }
        if !(0.0 < self.halving && self.halving < 1.0) {
            return bad(format!("halving factor {} outside (0, 1)", self.halving));
        }
        Ok(())
    }
}

/// Warmup learning rate; constant at the warmup peak afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let s = step.clamp(1, cfg.warmup_n) as f64;
    cfg.lr_scale * cfg.lr_dim.powf(-0.5) * s * (cfg.warmup_n as f64).powf(-1.5)
}

/// What happened at an epoch boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochDecision {
    pub improved: bool,
    pub halved: bool,
    pub stop: bool,
}

/// Plateau halving and early stopping on the validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrController {
    pub halvings: u32,
    pub best: Option<f64>,
    /// Epochs since the best validation loss.
    pub since_best: u32,
    /// Epochs since the best loss or the last halving.
    pub since_change: u32,
}

impl Default for LrController {
    fn default() -> Self {
        Self {
            halvings: 0,
            best: None,
            since_best: 0,
            since_change: 0,
        }
    }
}

impl LrController {
    pub fn lr(&self, step: u64, cfg: &TrainConfig) -> f64 {
        lr_at(step, cfg) * cfg.halving.powi(self.halvings as i32)
    }

    pub fn on_epoch(&mut self, val_loss: f64, cfg: &TrainConfig) -> EpochDecision {
        let improved = self.best.is_none_or(|b| val_loss < b);
        let mut halved = false;
        if improved {
            self.best = Some(val_loss);
            self.since_best = 0;
            self.since_change = 0;
        } else {
            self.since_best += 1;
            self.since_change += 1;
            if self.since_change >= cfg.plateau_patience {
                self.halvings += 1;
                self.since_change = 0;
                halved = true;
            }
        }
        EpochDecision {
            improved,
            halved,
            stop: self.since_best >= cfg.early_stop_patience,
        }
    }
}

/// Sample indices `m < k < n` of a training window and the aligned EEG frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainWindow {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub eeg_m: usize,
    pub eeg_k: usize,
    pub eeg_n: usize,
}

fn seconds_to_samples(s: f64) -> usize {
    (s * AUDIO_RATE as f64).round() as usize
}

/// Draws a window: chunk `n − k` from the choices, buffer `k − m` uniform in the
/// range, `m` uniform over valid starts. A buffer that does not fit is clipped
/// to the utterance; `None` when even the chunk does not fit.
pub fn sample_training_window(len: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Option<TrainWindow> {
    let chunk = seconds_to_samples(cfg.chunk_choices_s[rng.random_range(0..cfg.chunk_choices_s.len())]);
    let (lo, hi) = cfg.buffer_range_s;
    let mut buffer = seconds_to_samples(rng.random_range(lo..=hi));
    if chunk >= len {
        warn!("utterance of {len} samples is shorter than a {chunk}-sample chunk; skipped");
        return None;
    }
    buffer = buffer.min(len - chunk).max(1);
    let span = chunk + buffer;
    let m = rng.random_range(0..=len - span);
    let (k, n) = (m + buffer, m + span);
    Some(TrainWindow {
        m,
        k,
        n,
        eeg_m: eeg_frames_for(m),
        eeg_k: eeg_frames_for(k),
        eeg_n: eeg_frames_for(n),
    })
}

/// Re-mixes the target with interfering speech from another part of the
/// stories at a random SNR. Returns the example unchanged when augmentation is
/// off; falls back to the paired interferer when no candidate exists.
pub fn augment_mixture(
    ex: &MixtureExample,
    pool: &[MixtureExample],
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
) -> Result<MixtureExample> {
    if !cfg.augment {
        return Ok(ex.clone());
    }
    let len = ex.target.len();
    let other = 1 - ex.attended;
    let candidates: Vec<&[f32]> = pool
        .iter()
        .filter(|p| !p.segment.overlaps(&ex.segment) && p.target.len() >= len)
        .map(|p| {
            if p.attended == other {
                p.target.as_slice()
            } else {
                p.interferer.as_slice()
            }
        })
        .collect();
    let (a, b) = cfg.snr_range_db;
    let snr = rng.random_range(a..=b);
    let source: &[f32] = if candidates.is_empty() {
        warn!("{}: no augmentation candidate; using the paired interferer", ex.id);
        &ex.interferer
    } else {
        let c = candidates[rng.random_range(0..candidates.len())];
        let off = rng.random_range(0..=c.len() - len);
        &c[off..off + len]
    };
    let (mixture, interferer) = mix_at_snr(&ex.target, source, snr)?;
    Ok(MixtureExample {
        mixture,
        interferer,
        ..ex.clone()
    })
}

/// Random crop of at most `seconds`, snapped to EEG frame boundaries so audio
/// and EEG stay aligned.
pub fn crop_example(ex: &MixtureExample, seconds: f64, rng: &mut ChaCha8Rng) -> Result<MixtureExample> {
    let max = seconds_to_samples(seconds);
    if ex.mixture.len() <= max {
        return Ok(ex.clone());
    }
    // 125 samples == 2 EEG frames exactly
    let grid = 125;
    let start = rng.random_range(0..=(ex.mixture.len() - max) / grid) * grid;
    slice_example(ex, start, max)
}

/// Samples `[start, start + len)` with EEG frames `[start·128/8000, …)`.
pub fn slice_example(ex: &MixtureExample, start: usize, len: usize) -> Result<MixtureExample> {
    let end = start + len;
    if end > ex.mixture.len() {
        return Err(Error::invalid(format!("slice end {end} beyond {} samples", ex.mixture.len())));
    }
    let e0 = eeg_frames_for(start);
    let eeg = ex.eeg.slice_frames(e0, eeg_frames_for(len).min(ex.eeg.frames() - e0))?;
    let mut seg = ex.segment;
    seg.start += start;
    seg.len = len;
    Ok(MixtureExample {
        id: ex.id.clone(),
        split: ex.split,
        attended: ex.attended,
        segment: seg,
        mixture: ex.mixture[start..end].to_vec(),
        target: ex.target[start..end].to_vec(),
        interferer: ex.interferer[start..end].to_vec(),
        eeg,
    })
}
