//! Push-style stream session.

use std::path::Path;

use crate::dsp::{eeg_frames_for, EegRecording};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, Model};

use super::{rtf_report, stream_init, stream_open, stream_step, RtfReport, StreamConfig, StreamState};

/// One live stream: push chunks of audio with the EEG frames that arrived
/// with them, receive extracted audio.
pub struct StreamSession {
    model: Model<f32>,
    cfg: StreamConfig,
    state: Option<StreamState<f32>>,
    /// Input held back until the initial segment is complete.
    pending_audio: Vec<f32>,
    pending_eeg: Vec<Vec<f32>>,
    received: usize,
    eeg_received: usize,
}

impl StreamSession {
    pub fn open(cfg: StreamConfig, checkpoint: &Path) -> Result<Self> {
        let ck = load_checkpoint(checkpoint)?;
        Self::with_model(
            Model {
                config: ck.config,
                params: ck.params,
            },
            cfg,
        )
    }

    pub fn with_model(model: Model<f32>, cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        let channels = model.config.eeg_channels;
        let state = if cfg.init_samples() == 0 {
            Some(stream_open(&model, &cfg)?)
        } else {
            None
        };
        Ok(Self {
            model,
            cfg,
            state,
            pending_audio: Vec::new(),
            pending_eeg: vec![Vec::new(); channels],
            received: 0,
            eeg_received: 0,
        })
    }

    /// Feeds one chunk of `w_c` samples. Returns extracted audio, which is empty
    /// while the initial segment is still being collected.
    pub fn push(&mut self, audio: &[f32], eeg: &EegRecording) -> Result<Vec<f32>> {
        let chunk = self.cfg.chunk_samples();
        if audio.len() != chunk {
            return Err(Error::invalid(format!(
                "stream chunk of {} samples; expected {chunk}",
                audio.len()
            )));
        }
        let expect = eeg_frames_for(self.received + chunk) - self.eeg_received;
        if eeg.frames() != expect {
            return Err(Error::invalid(format!(
                "EEG chunk has {} frames; {expect} are due with this audio",
                eeg.frames()
            )));
        }
        self.received += chunk;
        self.eeg_received += expect;
        if let Some(state) = self.state.as_mut() {
            return stream_step(&self.model, &self.cfg, state, audio, eeg);
        }
        self.pending_audio.extend_from_slice(audio);
        for (c, buf) in self.pending_eeg.iter_mut().enumerate() {
            buf.extend_from_slice(eeg.channel(c));
        }
        if self.pending_audio.len() < self.cfg.init_samples() {
            return Ok(Vec::new());
        }
        let data: Vec<f32> = self.pending_eeg.concat();
        let r = EegRecording::new(self.pending_eeg.len(), crate::dsp::EEG_RATE as f64, data, true)?;
        let (state, y) = stream_init(&self.model, &self.cfg, &self.pending_audio, &r)?;
        self.state = Some(state);
        self.pending_audio.clear();
        Ok(y)
    }

    pub fn state(&self) -> Option<&StreamState<f32>> {
        self.state.as_ref()
    }

    /// Ends the stream and reports its real-time behaviour.
    pub fn close(self) -> Result<RtfReport> {
        let state = self
            .state
            .ok_or_else(|| Error::invalid("stream closed before any output was produced"))?;
        rtf_report(&state, &self.cfg)
    }
}
