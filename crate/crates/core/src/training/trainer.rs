//! Epoch loop, validation, logging and checkpoints.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MixtureExample;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelParams};
use crate::numerics::{si_sdr, snr, Adam, AdamConfig, TRAIN_CLAMP_DB};

use super::step::{offline_grads, two_pass_grads, Pass1, StepGrads};
use super::{
    augment_mixture, crop_example, sample_training_window, slice_example, EpochDecision, LossKind, LrController,
    TrainConfig, TrainMode,
};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CKPT_DIR: &str = "checkpoints";

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        epoch: u64,
        loss: f64,
        lr: f64,
        grad_norm: f64,
        passes: usize,
    },
    Epoch {
        epoch: u64,
        step: u64,
        val_loss: f64,
        best: f64,
        halvings: u32,
        decision: EpochDecision,
    },
    Checkpoint {
        step: u64,
        epoch: u64,
        path: String,
        parent: Option<String>,
    },
}

/// Training state stored alongside the parameters in a checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainState {
    step: u64,
    epoch: u64,
    steps_in_epoch: u64,
    adam: Adam,
    controller: LrController,
    rng: ChaCha8Rng,
    train: TrainConfig,
    parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: u64,
    pub best_val_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub stop_reason: String,
    pub seconds: f64,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub controller: LrController,
    pub step: u64,
    pub epoch: u64,
    pub steps_in_epoch: u64,
    pub rng: ChaCha8Rng,
    run_dir: Option<PathBuf>,
    parent: Option<String>,
    log: Option<BufWriter<File>>,
}

fn ser_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            cfg,
            adam: Adam::new(AdamConfig::default()),
            controller: LrController::default(),
            step: 0,
            epoch: 0,
            steps_in_epoch: 0,
            rng,
            run_dir: None,
            parent: None,
            log: None,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`].
    pub fn resume(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let st: TrainState = serde_json::from_value(ck.extra.get("train_state").cloned().ok_or_else(|| {
            Error::Checkpoint(format!("{} carries no training state", path.display()))
        })?)
        .map_err(ser_err)?;
        Ok(Self {
            model: Model {
                config: ck.config,
                params: ck.params,
            },
            cfg: st.train,
            adam: st.adam,
            controller: st.controller,
            step: st.step,
            epoch: st.epoch,
            steps_in_epoch: st.steps_in_epoch,
            rng: st.rng,
            run_dir: None,
            parent: Some(path.display().to_string()),
            log: None,
        })
    }

    /// Logs to `dir/train_log.jsonl` and writes checkpoints under `dir/checkpoints`.
    pub fn with_run_dir(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join(CKPT_DIR)).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        self.log = Some(BufWriter::new(f));
        self.run_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Copies parameters from another checkpoint (e.g. an offline model),
    /// which must match this model's configuration tensor for tensor.
    pub fn warm_start(&mut self, path: &Path) -> Result<()> {
        let ck = load_checkpoint(path)?;
        ck.params.validate(&self.model.config).map_err(|e| {
            Error::Checkpoint(format!("warm-start checkpoint {} is incompatible: {e}", path.display()))
        })?;
        self.model.params = ck.params;
        self.parent = Some(path.display().to_string());
        Ok(())
    }

    fn write_log(&mut self, rec: &LogRecord) -> Result<()> {
        if let Some(f) = self.log.as_mut() {
            let line = serde_json::to_string(rec).map_err(ser_err)?;
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::io(LOG_FILE, e))?;
        }
        Ok(())
    }

    fn example_grads(&mut self, train: &[MixtureExample]) -> Result<StepGrads<f32>> {
        let model = &self.model;
        loop {
            let idx = self.rng.random_range(0..train.len());
            let ex = augment_mixture(&train[idx], train, &mut self.rng, &self.cfg)?;
            match self.cfg.mode {
                TrainMode::Offline => {
                    let ex = match self.cfg.segment_s {
                        Some(s) => crop_example(&ex, s, &mut self.rng)?,
                        None => ex,
                    };
                    return offline_grads(&model.params, &model.config, &ex.mixture, &ex.eeg, &ex.target, self.cfg.loss);
                }
                TrainMode::Online => {
                    let Some(w) = sample_training_window(ex.mixture.len(), &self.cfg, &mut self.rng) else {
                        continue;
                    };
                    let dropped = self.rng.random::<f64>() < self.cfg.dropout_p;
                    return two_pass_grads(
                        &model.params,
                        &model.config,
                        &ex.mixture,
                        &ex.eeg,
                        &ex.target,
                        &w,
                        dropped,
                        self.cfg.loss,
                        Pass1::GradientFree,
                    );
                }
            }
        }
    }

    /// One optimizer step over a batch of randomly drawn examples.
    pub fn train_step(&mut self, train: &[MixtureExample]) -> Result<LogRecord> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let b = self.cfg.batch_size;
        let mut sum: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        let (mut loss, mut passes) = (0.0, 0);
        for _ in 0..b {
            let sg = self.example_grads(train)?;
            loss += sg.loss / b as f64;
            passes += sg.passes;
            for (k, g) in sg.grads {
                let acc = sum.entry(k).or_insert_with(|| vec![0.0; g.len()]);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v / b as f32;
                }
            }
        }
        let norm = sum.values().flatten().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step + 1)));
        }
        if let Some(clip) = self.cfg.grad_clip {
            if norm > clip {
                let s = (clip / norm) as f32;
                sum.values_mut().flatten().for_each(|v| *v *= s);
            }
        }
        self.step += 1;
        self.steps_in_epoch += 1;
        let lr = self.controller.lr(self.step, &self.cfg);
        self.adam.step(&mut self.model.params.tensors, &sum, lr)?;
        let rec = LogRecord::Step {
            step: self.step,
            epoch: self.epoch,
            loss,
            lr,
            grad_norm: norm,
            passes,
        };
        self.write_log(&rec)?;
        Ok(rec)
    }

    /// Mean training objective on held-out examples (clamped like the loss).
    pub fn validate(&self, val: &[MixtureExample]) -> Result<f64> {
        let limit = self.cfg.val_limit.unwrap_or(val.len()).min(val.len());
        if limit == 0 {
            return Err(Error::invalid("validation set is empty"));
        }
        let mut total = 0.0;
        for ex in &val[..limit] {
            let ex = match self.cfg.segment_s {
                Some(s) if ex.mixture.len() as f64 > s * 8000.0 => slice_example(ex, 0, (s * 8000.0) as usize)?,
                _ => ex.clone(),
            };
            let est = match self.cfg.mode {
                TrainMode::Offline => self.model.infer_offline(&ex.mixture, &ex.eeg)?,
                TrainMode::Online => {
                    let past = self.model.infer_offline(&ex.mixture, &ex.eeg)?;
                    let (a_s, _) = self.model.enroll(&past, None)?;
                    self.model.infer(&ex.mixture, &ex.eeg, a_s.as_deref())?
                }
            };
            let db = match self.cfg.loss {
                LossKind::SiSdr => si_sdr(&ex.target, &est),
                LossKind::Snr => snr(&ex.target, &est),
            };
            let db = match db {
                Ok(v) => v.clamp(-TRAIN_CLAMP_DB, TRAIN_CLAMP_DB),
                Err(Error::SiSdr(crate::numerics::SiSdrSingularity::Perfect)) => TRAIN_CLAMP_DB,
                Err(Error::SiSdr(crate::numerics::SiSdrSingularity::Orthogonal)) => -TRAIN_CLAMP_DB,
                Err(e) => return Err(e),
            };
            total -= db;
        }
        Ok(total / limit as f64)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let st = TrainState {
            step: self.step,
            epoch: self.epoch,
            steps_in_epoch: self.steps_in_epoch,
            adam: self.adam.clone(),
            controller: self.controller.clone(),
            rng: self.rng.clone(),
            train: self.cfg.clone(),
            parent: self.parent.clone(),
        };
        Ok(Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            extra: serde_json::json!({ "train_state": serde_json::to_value(st).map_err(ser_err)? }),
        })
    }

    /// Writes `checkpoints/<name>.ckpt` in the run directory.
    pub fn save(&mut self, name: &str) -> Result<PathBuf> {
        let dir = self
            .run_dir
            .clone()
            .ok_or_else(|| Error::invalid("trainer has no run directory"))?;
        let path = dir.join(CKPT_DIR).join(format!("{name}.ckpt"));
        save_checkpoint(&path, &self.checkpoint()?)?;
        let rec = LogRecord::Checkpoint {
            step: self.step,
            epoch: self.epoch,
            path: path.display().to_string(),
            parent: self.parent.clone(),
        };
        self.write_log(&rec)?;
        Ok(path)
    }

    fn end_epoch(&mut self, val: &[MixtureExample]) -> Result<EpochDecision> {
        let val_loss = self.validate(val)?;
        let decision = self.controller.on_epoch(val_loss, &self.cfg);
        self.epoch += 1;
        self.steps_in_epoch = 0;
        let rec = LogRecord::Epoch {
            epoch: self.epoch,
            step: self.step,
            val_loss,
            best: self.controller.best.unwrap_or(val_loss),
            halvings: self.controller.halvings,
            decision,
        };
        self.write_log(&rec)?;
        info!("epoch {} step {} val loss {val_loss:.3}", self.epoch, self.step);
        if self.run_dir.is_some() {
            let p = self.save(&format!("epoch-{:04}", self.epoch))?;
            self.parent = Some(p.display().to_string());
            if decision.improved {
                self.save("best")?;
            }
        }
        Ok(decision)
    }

    /// Trains until early stopping or a step, epoch or time limit.
    pub fn run(&mut self, train: &[MixtureExample], val: &[MixtureExample]) -> Result<TrainSummary> {
        let start = Instant::now();
        let mut last_loss = None;
        let reason = loop {
            if self.cfg.max_steps.is_some_and(|m| self.step >= m) {
                break "max_steps";
            }
            if self.epoch >= self.cfg.max_epochs {
                break "max_epochs";
            }
            if self.cfg.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() >= s) {
                break "max_seconds";
            }
            if let LogRecord::Step { loss, .. } = self.train_step(train)? {
                last_loss = Some(loss);
            }
            if self.steps_in_epoch >= self.cfg.steps_per_epoch && self.end_epoch(val)?.stop {
                break "early_stop";
            }
        };
        if self.run_dir.is_some() {
            self.save("last")?;
        }
        Ok(TrainSummary {
            steps: self.step,
            epochs: self.epoch,
            best_val_loss: self.controller.best,
            last_loss,
            stop_reason: reason.into(),
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Parameters of a training checkpoint, ready for inference.
pub fn model_from_checkpoint(path: &Path) -> Result<Model<f32>> {
    let ck = load_checkpoint(path)?;
    Ok(Model {
        config: ck.config,
        params: ModelParams { tensors: ck.params.tensors },
    })
}
