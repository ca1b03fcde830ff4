//! Single-example gradient computations.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MixtureExample;
use crate::dsp::EegRecording;
use crate::error::{Error, Result};
use crate::model::{forward, speaker_encode, Ctx, Model, ModelConfig, ModelParams};
use crate::numerics::{Adam, Graph, Real, Tensor, Var};

use super::{sample_training_window, LossKind, TrainConfig, TrainWindow};

/// Training loss of `est` against `reference`, clamped at ±60 dB.
pub fn loss_var<R: Real>(g: &mut Graph<R>, est: Var, reference: &[R], kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::SiSdr => g.si_sdr_loss(est, reference, true),
        LossKind::Snr => g.snr_loss(est, reference, true),
    }
}

/// Loss value and parameter gradients of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGrads<R> {
    pub loss: f64,
    pub grads: BTreeMap<String, Vec<R>>,
    /// Forward passes run (1 or 2).
    pub passes: usize,
    pub dropped: bool,
}

/// How the first (pseudo-past) pass of two-pass training is run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass1 {
    GradientFree,
    /// Recorded on a gradient tape whose output is then detached.
    RecordedDetached,
}

fn audio_var<R: Real>(g: &mut Graph<R>, x: &[R]) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![1, x.len()], x.to_vec())?))
}

fn run_forward<R: Real>(
    ctx: &mut Ctx<R>,
    cfg: &ModelConfig,
    x: &[R],
    eeg: &EegRecording,
    a_s: Option<Var>,
) -> Result<Var> {
    let xv = audio_var(ctx.g, x)?;
    let rv = ctx.g.constant(eeg.to_tensor());
    forward(ctx, cfg, xv, rv, a_s)
}

fn finish<R: Real>(mut g: Graph<R>, loss: Var, bound: BTreeMap<String, Var>, passes: usize, dropped: bool) -> Result<StepGrads<R>> {
    let value = g.value(loss).item().f64();
    let grads = g.backward(loss)?;
    let grads = bound
        .into_iter()
        .filter_map(|(k, v)| grads.get(v).map(|d| (k, d.to_vec())))
        .collect();
    Ok(StepGrads {
        loss: value,
        grads,
        passes,
        dropped,
    })
}

/// Utterance-level loss and gradients without the speaker encoder.
pub fn offline_grads<R: Real>(
    params: &ModelParams<R>,
    cfg: &ModelConfig,
    mixture: &[R],
    eeg: &EegRecording,
    target: &[R],
    kind: LossKind,
) -> Result<StepGrads<R>> {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params);
    let y = run_forward(&mut ctx, cfg, mixture, eeg, None)?;
    let loss = loss_var(ctx.g, y, target, kind)?;
    let bound = ctx.bound().clone();
    finish(g, loss, bound, 1, true)
}

fn eeg_window(eeg: &EegRecording, start: usize, end: usize) -> Result<EegRecording> {
    let end = end.min(eeg.frames());
    if end <= start {
        return Err(Error::invalid(format!("window covers no EEG frame ({start}..{end})")));
    }
    eeg.slice_frames(start, end - start)
}

/// Loss and gradients of one training window.
///
/// With `dropped`, a single pass on `x[m:n]` with a zero auditory attractor.
/// Otherwise pass 1 extracts a pseudo past `ŝ[0:k]` without the speaker
/// encoder, and pass 2 extracts `ŝ[m:n]` with the attractor enrolled from it.
#[allow(clippy::too_many_arguments)]
pub fn two_pass_grads<R: Real>(
    params: &ModelParams<R>,
    cfg: &ModelConfig,
    mixture: &[R],
    eeg: &EegRecording,
    target: &[R],
    w: &TrainWindow,
    dropped: bool,
    kind: LossKind,
    pass1: Pass1,
) -> Result<StepGrads<R>> {
    if w.n > mixture.len() || w.n > target.len() || !(w.m < w.k && w.k < w.n) {
        return Err(Error::invalid(format!(
            "window {w:?} invalid for {} samples",
            mixture.len()
        )));
    }
    let r_mn = eeg_window(eeg, w.eeg_m, w.eeg_n)?;
    let past = if dropped {
        None
    } else {
        let r_0k = eeg_window(eeg, 0, w.eeg_k)?;
        let mut g1 = match pass1 {
            Pass1::GradientFree => Graph::no_grad(),
            Pass1::RecordedDetached => Graph::new(),
        };
        let mut ctx = Ctx::new(&mut g1, params);
        let y = run_forward(&mut ctx, cfg, &mixture[..w.k], &r_0k, None)?;
        Some(g1.value(y).data().to_vec())
    };

    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params);
    let a_s = match &past {
        Some(p) => {
            let pv = audio_var(ctx.g, p)?;
            speaker_encode(&mut ctx, cfg, pv, None)?.0
        }
        None => None,
    };
    let y = run_forward(&mut ctx, cfg, &mixture[w.m..w.n], &r_mn, a_s)?;
    let loss = loss_var(ctx.g, y, &target[w.m..w.n], kind)?;
    let bound = ctx.bound().clone();
    finish(g, loss, bound, if dropped { 1 } else { 2 }, dropped)
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: f64,
    pub passes: usize,
    pub dropped: bool,
    pub window: Option<TrainWindow>,
}

/// One online training step on one example: window sampling, speaker-encoder
/// dropout, two-pass forward, backward and an Adam update. `None` when the
/// example is too short for any window.
pub fn two_pass_step(
    model: &mut Model<f32>,
    adam: &mut Adam,
    ex: &MixtureExample,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    lr: f64,
) -> Result<Option<StepReport>> {
    let Some(w) = sample_training_window(ex.mixture.len(), cfg, rng) else {
        return Ok(None);
    };
    let dropped = rng.random::<f64>() < cfg.dropout_p;
    let sg = two_pass_grads(
        &model.params,
        &model.config,
        &ex.mixture,
        &ex.eeg,
        &ex.target,
        &w,
        dropped,
        cfg.loss,
        Pass1::GradientFree,
    )?;
    adam.step(&mut model.params.tensors, &sg.grads, lr)?;
    Ok(Some(StepReport {
        loss: sg.loss,
        passes: sg.passes,
        dropped,
        window: Some(w),
    }))
}
