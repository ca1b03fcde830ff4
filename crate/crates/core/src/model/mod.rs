//! The extraction model: speech encoder, EEG encoder, speaker encoder,
//! extractor and decoder.

mod checkpoint;
mod config;
mod encoder;
mod extractor;
mod params;
mod speaker;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DprnnConfig, ExtractorKind, ModelConfig, SpeakerConfig, TcnConfig};
pub use encoder::{eeg_encode, positional_encoding, self_attention_layer, speech_decode, speech_encode};
pub use extractor::{extract, Attractors};
pub use params::{param_count, param_specs, Ctx, Init, ModelParams, ParamSpec};
pub use speaker::{speaker_encode, ResBlockState, SpeakerState};

use crate::dsp::{EegRecording, EEG_RATE};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

/// Encoder frames for `samples` audio samples: `floor((T − L)/(L/2)) + 1`.
pub fn frames_for(cfg: &ModelConfig, samples: usize) -> Option<usize> {
    (samples >= cfg.l).then(|| (samples - cfg.l) / cfg.hop() + 1)
}

/// Decoder output length for `frames` embeddings.
pub fn samples_for(cfg: &ModelConfig, frames: usize) -> usize {
    (frames.max(1) - 1) * cfg.hop() + cfg.l
}

/// Extracts the attended speaker from `x: [1, T_s]` given EEG `r: [C, T_r]`.
///
/// The mixture is zero-padded to a whole number of encoder hops and the output
/// is cut back to `T_s` samples. `a_s = None` runs with the zero auditory attractor.
pub fn forward<R: Real>(ctx: &mut Ctx<R>, cfg: &ModelConfig, x: Var, r: Var, a_s: Option<Var>) -> Result<Var> {
    let len = ctx.g.shape(x).last().copied().unwrap_or(0);
    if len < cfg.l {
        return Err(Error::invalid(format!(
            "mixture of {len} samples is shorter than one encoder frame ({})",
            cfg.l
        )));
    }
    let frames = (len - cfg.l).div_ceil(cfg.hop()) + 1;
    let padded = samples_for(cfg, frames);
    let xp = if padded > len {
        let z = ctx.g.constant(Tensor::zeros([1, padded - len]));
        ctx.g.concat(&[x, z], 1)?
    } else {
        x
    };
    let emb = speech_encode(ctx, cfg, xp)?;
    let a_r = eeg_encode(ctx, cfg, r)?;
    let mask = extract(
        ctx,
        cfg,
        emb,
        &Attractors {
            neuronal: a_r,
            auditory: a_s,
        },
    )?;
    let s = ctx.g.mul(emb, mask)?;
    let y = speech_decode(ctx, cfg, s)?;
    if padded > len {
        ctx.g.slice(y, 1, 0, len)
    } else {
        Ok(y)
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<R> {
    pub config: ModelConfig,
    pub params: ModelParams<R>,
}

fn check_eeg(cfg: &ModelConfig, eeg: &EegRecording) -> Result<()> {
    if !eeg.preprocessed || eeg.sample_rate != EEG_RATE as f64 {
        return Err(Error::invalid(format!(
            "EEG must be preprocessed to {EEG_RATE} Hz (got {} Hz, preprocessed = {})",
            eeg.sample_rate, eeg.preprocessed
        )));
    }
    if eeg.channels != cfg.eeg_channels {
        return Err(Error::invalid(format!(
            "EEG has {} channels, model expects {}",
            eeg.channels, cfg.eeg_channels
        )));
    }
    Ok(())
}

impl<R: Real> Model<R> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Gradient-free extraction; `a_s` is the auditory attractor, if any.
    pub fn infer(&self, audio: &[R], eeg: &EegRecording, a_s: Option<&[R]>) -> Result<Vec<R>> {
        check_eeg(&self.config, eeg)?;
        let mut g = Graph::no_grad();
        let mut ctx = Ctx::new(&mut g, &self.params);
        let x = ctx.g.constant(Tensor::new(vec![1, audio.len()], audio.to_vec())?);
        let r = ctx.g.constant(eeg.to_tensor());
        let a = match a_s {
            Some(v) => Some(ctx.g.constant(Tensor::from_vec(v.to_vec()))),
            None => None,
        };
        let y = forward(&mut ctx, &self.config, x, r, a)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Offline mode: utterance-level pass without the speaker encoder.
    pub fn infer_offline(&self, audio: &[R], eeg: &EegRecording) -> Result<Vec<R>> {
        self.infer(audio, eeg, None)
    }

    /// Runs the speaker encoder over new past-output samples, continuing `state`.
    pub fn enroll(&self, audio: &[R], state: Option<SpeakerState<R>>) -> Result<(Option<Vec<R>>, SpeakerState<R>)> {
        let mut g = Graph::no_grad();
        let mut ctx = Ctx::new(&mut g, &self.params);
        let x = ctx.g.constant(Tensor::new(vec![1, audio.len()], audio.to_vec())?);
        let (a, st) = speaker_encode(&mut ctx, &self.config, x, state)?;
        Ok((a.map(|v| g.value(v).data().to_vec()), st))
    }

    /// Auditory attractor implied by a speaker state without consuming audio.
    pub fn attractor_from_state(&self, state: &SpeakerState<R>) -> Result<Option<Vec<R>>> {
        if state.frames == 0 {
            return Ok(None);
        }
        let mut g = Graph::no_grad();
        let mut ctx = Ctx::new(&mut g, &self.params);
        let h = ctx.g.constant(Tensor::new(vec![1, state.lstm.h.len()], state.lstm.h.clone())?);
        let a = ctx.linear_rows(h, "spk.out")?;
        Ok(Some(g.value(a).data().to_vec()))
    }
}
