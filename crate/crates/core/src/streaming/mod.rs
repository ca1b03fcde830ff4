//! Online inference: sliding windows over buffered input, self-enrollment from
//! emitted output, energy normalization and real-time accounting.

mod session;

pub use session::StreamSession;

use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dsp::{eeg_frames_for, EegRecording, AUDIO_RATE};
use crate::error::{Error, Result};
use crate::model::{Model, SpeakerState};
use crate::numerics::Real;

/// Gain limits of the inference normalization.
pub const GAIN_CLAMP: (f64, f64) = (0.1, 10.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Buffered past input per window, seconds.
    pub w_b: f64,
    /// New input per step, seconds.
    pub w_c: f64,
    /// Length of the initial whole-segment pass, seconds; `None` starts
    /// sliding immediately.
    pub init_seconds: Option<f64>,
    pub normalize: bool,
    pub speaker_encoder: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            w_b: 2.5,
            w_c: 0.1,
            init_seconds: Some(1.0),
            normalize: true,
            speaker_encoder: true,
        }
    }
}

fn samples(s: f64) -> usize {
    (s * AUDIO_RATE as f64).round() as usize
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_c > 0.0) || !(self.w_b >= 0.0) {
            return Err(Error::Config(format!("need w_c > 0 and w_b >= 0 (got {}, {})", self.w_c, self.w_b)));
        }
        if samples(self.w_c) == 0 {
            return Err(Error::Config(format!("w_c = {} s is below one sample", self.w_c)));
        }
        if let Some(i) = self.init_seconds {
            if i < self.w_c {
                return Err(Error::Config(format!("init_seconds {i} is shorter than w_c {}", self.w_c)));
            }
        }
        Ok(())
    }

    pub fn chunk_samples(&self) -> usize {
        samples(self.w_c)
    }

    pub fn buffer_samples(&self) -> usize {
        samples(self.w_b)
    }

    pub fn init_samples(&self) -> usize {
        self.init_seconds.map_or(0, samples)
    }
}

/// Mutable state of one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamState<R> {
    /// Input audio since sample `buf_start`, at most `w_b + w_c` samples.
    pub audio: Vec<R>,
    pub buf_start: usize,
    /// Input EEG frames since frame `eeg_start`, channel-major.
    pub eeg: Vec<Vec<f32>>,
    pub eeg_start: usize,
    /// Every emitted output sample.
    pub emitted: Vec<R>,
    pub speaker: Option<SpeakerState<R>>,
    pub steps: usize,
    pub tail_samples: usize,
    pub init_samples: usize,
    pub gains: Vec<f64>,
    /// Processing time of the initial pass, seconds.
    pub init_seconds: f64,
    /// Processing time of every step, seconds.
    pub latencies: Vec<f64>,
}

impl<R: Real> StreamState<R> {
    /// Samples emitted so far; equals the input position.
    pub fn cursor(&self) -> usize {
        self.emitted.len()
    }

    fn push_input(&mut self, audio: &[R], eeg: &EegRecording) -> Result<()> {
        if eeg.channels != self.eeg.len() {
            return Err(Error::invalid(format!(
                "EEG chunk has {} channels, stream has {}",
                eeg.channels,
                self.eeg.len()
            )));
        }
        self.audio.extend_from_slice(audio);
        for (c, buf) in self.eeg.iter_mut().enumerate() {
            buf.extend_from_slice(eeg.channel(c));
        }
        Ok(())
    }

    fn eeg_frames_held(&self) -> usize {
        self.eeg_start + self.eeg.first().map_or(0, Vec::len)
    }

    /// Input audio `[start, end)` and EEG frames covering it.
    fn window(&self, start: usize, end: usize) -> Result<(Vec<R>, EegRecording)> {
        if start < self.buf_start || end > self.buf_start + self.audio.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {end}) outside buffered input [{}, {})",
                self.buf_start,
                self.buf_start + self.audio.len()
            )));
        }
        let (f0, f1) = (eeg_frames_for(start), eeg_frames_for(end));
        if f0 < self.eeg_start || f1 > self.eeg_frames_held() {
            return Err(Error::invalid(format!(
                "EEG frames [{f0}, {f1}) not buffered (have [{}, {}))",
                self.eeg_start,
                self.eeg_frames_held()
            )));
        }
        if f1 <= f0 {
            return Err(Error::invalid(format!("window [{start}, {end}) covers no EEG frame")));
        }
        let audio = self.audio[start - self.buf_start..end - self.buf_start].to_vec();
        let mut data = Vec::with_capacity(self.eeg.len() * (f1 - f0));
        for ch in &self.eeg {
            data.extend_from_slice(&ch[f0 - self.eeg_start..f1 - self.eeg_start]);
        }
        Ok((audio, EegRecording::new(self.eeg.len(), crate::dsp::EEG_RATE as f64, data, true)?))
    }

    /// Drops input older than `keep_from`.
    fn trim(&mut self, keep_from: usize) {
        if keep_from > self.buf_start {
            let drop = (keep_from - self.buf_start).min(self.audio.len());
            self.audio.drain(..drop);
            self.buf_start += drop;
        }
        let f = eeg_frames_for(keep_from);
        if f > self.eeg_start {
            let drop = (f - self.eeg_start).min(self.eeg.first().map_or(0, Vec::len));
            for ch in &mut self.eeg {
                ch.drain(..drop);
            }
            self.eeg_start += drop;
        }
    }
}

/// Gain that brings re-extracted audio to the energy of what was already
/// emitted over the same samples, clamped; 1 when there is nothing to compare.
pub fn normalization_gain<R: Real>(emitted: &[R], reextracted: &[R]) -> f64 {
    let e: f64 = emitted.iter().map(|v| v.f64().powi(2)).sum();
    let r: f64 = reextracted.iter().map(|v| v.f64().powi(2)).sum();
    if emitted.is_empty() {
        return 1.0;
    }
    if r == 0.0 || !r.is_finite() {
        warn!("normalization: re-extracted buffer region is silent; gain 1");
        return 1.0;
    }
    (e / r).sqrt().clamp(GAIN_CLAMP.0, GAIN_CLAMP.1)
}

/// Scales the last `chunk` samples of a window output by the buffer-region
/// energy ratio against the emitted history; returns the gain and the chunk.
pub fn inference_normalize<R: Real>(window_out: &[R], chunk: usize, emitted_region: &[R]) -> (f64, Vec<R>) {
    let split = window_out.len() - chunk;
    let gain = normalization_gain(emitted_region, &window_out[..split]);
    let g = R::lit(gain);
    (gain, window_out[split..].iter().map(|&v| v * g).collect())
}

fn enroll<R: Real>(model: &Model<R>, state: &mut StreamState<R>, audio: &[R]) -> Result<()> {
    if let Some(sp) = state.speaker.take() {
        let (_, st) = model.enroll(audio, Some(sp))?;
        state.speaker = Some(st);
    }
    Ok(())
}

/// Empty state for a stream with `channels` EEG channels.
pub fn stream_open<R: Real>(model: &Model<R>, cfg: &StreamConfig) -> Result<StreamState<R>> {
    cfg.validate()?;
    Ok(StreamState {
        audio: Vec::new(),
        buf_start: 0,
        eeg: vec![Vec::new(); model.config.eeg_channels],
        eeg_start: 0,
        emitted: Vec::new(),
        speaker: cfg.speaker_encoder.then(|| SpeakerState::new(&model.config)),
        steps: 0,
        tail_samples: 0,
        init_samples: 0,
        gains: Vec::new(),
        init_seconds: 0.0,
        latencies: Vec::new(),
    })
}

/// Whole-segment pass over the first input (zero auditory attractor); seeds the
/// emitted history and the speaker encoder.
pub fn stream_init<R: Real>(
    model: &Model<R>,
    cfg: &StreamConfig,
    x_first: &[R],
    r_first: &EegRecording,
) -> Result<(StreamState<R>, Vec<R>)> {
    let mut state = stream_open(model, cfg)?;
    if x_first.len() < model.config.l || eeg_frames_for(x_first.len()) == 0 {
        return Err(Error::invalid(format!(
            "initial segment of {} samples is too short",
            x_first.len()
        )));
    }
    let t = Instant::now();
    state.push_input(x_first, r_first)?;
    let (audio, eeg) = state.window(0, x_first.len())?;
    let y = model.infer(&audio, &eeg, None)?;
    state.emitted.extend_from_slice(&y);
    state.init_samples = y.len();
    enroll(model, &mut state, &y)?;
    state.trim(state.cursor().saturating_sub(cfg.buffer_samples()));
    state.init_seconds = t.elapsed().as_secs_f64();
    Ok((state, y))
}

/// Consumes `x_new` (normally `w_c` of audio, shorter only for the final
/// chunk) with the EEG frames that arrived alongside it, and emits as many
/// output samples.
pub fn stream_step<R: Real>(
    model: &Model<R>,
    cfg: &StreamConfig,
    state: &mut StreamState<R>,
    x_new: &[R],
    r_new: &EegRecording,
) -> Result<Vec<R>> {
    let chunk = cfg.chunk_samples();
    if x_new.is_empty() || x_new.len() > chunk {
        return Err(Error::invalid(format!(
            "stream chunk of {} samples; expected {chunk}",
            x_new.len()
        )));
    }
    if state.tail_samples > 0 {
        return Err(Error::invalid("stream already received its final short chunk"));
    }
    let t = Instant::now();
    state.push_input(x_new, r_new)?;
    let cursor = state.cursor();
    let end = cursor + x_new.len();
    let start = cursor.saturating_sub(cfg.buffer_samples());
    let (audio, eeg) = state.window(start, end)?;
    let a_s = match &state.speaker {
        Some(sp) => model.attractor_from_state(sp)?,
        None => None,
    };
    let y = model.infer(&audio, &eeg, a_s.as_deref())?;
    let (gain, out) = if cfg.normalize {
        inference_normalize(&y, x_new.len(), &state.emitted[start..cursor])
    } else {
        (1.0, y[y.len() - x_new.len()..].to_vec())
    };
    state.gains.push(gain);
    state.emitted.extend_from_slice(&out);
    enroll(model, state, &out)?;
    state.trim(state.cursor().saturating_sub(cfg.buffer_samples()));
    if x_new.len() == chunk {
        state.steps += 1;
    } else {
        state.tail_samples = x_new.len();
    }
    state.latencies.push(t.elapsed().as_secs_f64());
    Ok(out)
}

/// Real-time statistics of a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub steps: usize,
    pub emitted_seconds: f64,
    pub processing_seconds: f64,
    /// Emitted audio seconds per processing second; higher is faster.
    pub rtf: f64,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub max_latency_ms: f64,
    pub budget_ms: f64,
    /// Steps whose processing took longer than `w_c`.
    pub violations: usize,
}

pub fn rtf_report<R: Real>(state: &StreamState<R>, cfg: &StreamConfig) -> Result<RtfReport> {
    if state.latencies.is_empty() && state.init_samples == 0 {
        return Err(Error::invalid("no chunk has been processed"));
    }
    let processing = state.init_seconds + state.latencies.iter().sum::<f64>();
    let emitted = state.cursor() as f64 / AUDIO_RATE as f64;
    let mut sorted = state.latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        if sorted.is_empty() {
            0.0
        } else {
            sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1]
        }
    };
    let budget = cfg.w_c;
    Ok(RtfReport {
        steps: state.steps,
        emitted_seconds: emitted,
        processing_seconds: processing,
        rtf: if processing > 0.0 { emitted / processing } else { f64::INFINITY },
        mean_latency_ms: 1e3 * sorted.iter().sum::<f64>() / sorted.len().max(1) as f64,
        p95_latency_ms: 1e3 * pick(0.95),
        max_latency_ms: 1e3 * sorted.last().copied().unwrap_or(0.0),
        budget_ms: 1e3 * budget,
        violations: sorted.iter().filter(|&&l| l > budget).count(),
    })
}

/// Output of streaming a whole recording.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput<R> {
    pub audio: Vec<R>,
    pub steps: usize,
    pub report: RtfReport,
    pub state: StreamState<R>,
}

/// Replays a recording through the engine chunk by chunk; EEG frames are
/// delivered as soon as the audio covering them has arrived.
pub fn stream_utterance<R: Real>(
    model: &Model<R>,
    cfg: &StreamConfig,
    audio: &[R],
    eeg: &EegRecording,
) -> Result<StreamOutput<R>> {
    let chunk = cfg.chunk_samples();
    let eeg_for = |a: usize, b: usize| {
        let (f0, f1) = (eeg_frames_for(a), eeg_frames_for(b).min(eeg.frames()));
        eeg.slice_frames(f0, f1.saturating_sub(f0))
    };
    let init = cfg.init_samples().min(audio.len());
    let (mut state, mut pos) = if init > 0 {
        let (st, _) = stream_init(model, cfg, &audio[..init], &eeg_for(0, init)?)?;
        (st, init)
    } else {
        (stream_open(model, cfg)?, 0)
    };
    while pos < audio.len() {
        let end = (pos + chunk).min(audio.len());
        stream_step(model, cfg, &mut state, &audio[pos..end], &eeg_for(pos, end)?)?;
        pos = end;
    }
    let report = rtf_report(&state, cfg)?;
    Ok(StreamOutput {
        audio: state.emitted.clone(),
        steps: state.steps,
        report,
        state,
    })
}
