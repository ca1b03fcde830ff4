//! Speech and EEG surrogates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{audio_sample_for_frame, design_lowpass, eeg_frames_for, EegRecording, AUDIO_RATE, EEG_RATE};
use crate::error::{Error, Result};

/// Voice of one surrogate speaker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStyle {
    /// Mean fundamental frequency of the harmonic carrier, Hz.
    pub f0_hz: f64,
    /// One-pole tilt coefficient; positive darkens, negative brightens.
    pub tilt: f64,
}

impl SpeakerStyle {
    /// The two default voices.
    pub fn pair() -> [SpeakerStyle; 2] {
        [
            SpeakerStyle { f0_hz: 110.0, tilt: 0.85 },
            SpeakerStyle { f0_hz: 190.0, tilt: -0.3 },
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechConfig {
    /// Syllable rate range, Hz.
    pub syllable_hz: (f64, f64),
    /// Probability that a syllable slot is a pause.
    pub pause_prob: f64,
    /// Noise share of the carrier.
    pub noise_mix: f64,
    /// Random spread added to the speaker tilt per utterance.
    pub tilt_jitter: f64,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        Self {
            syllable_hz: (3.0, 6.0),
            pause_prob: 0.1,
            noise_mix: 0.3,
            tilt_jitter: 0.05,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Speech-like surrogate: a harmonic-plus-noise carrier with a spectral tilt,
/// amplitude-modulated by syllable-rate bumps, scaled to unit RMS.
pub fn synth_speech(
    duration_s: f64,
    style: &SpeakerStyle,
    cfg: &SpeechConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    if !(duration_s >= 1.0) {
        return Err(Error::invalid(format!("speech duration {duration_s} s is below 1 s")));
    }
    let fs = AUDIO_RATE as f64;
    let n = (duration_s * fs).round() as usize;
    let (r_lo, r_hi) = cfg.syllable_hz;

    let mut env = vec![0.0f64; n];
    let mut pos = 0usize;
    while pos < n {
        let len = (fs / rng.random_range(r_lo..r_hi)).round() as usize;
        let amp = if rng.random::<f64>() < cfg.pause_prob {
            0.0
        } else {
            rng.random_range(0.3..1.0)
        };
        for j in 0..len.min(n - pos) {
            let w = (std::f64::consts::PI * j as f64 / len as f64).sin();
            env[pos + j] = amp * w * w;
        }
        pos += len;
    }

    let tilt = style.tilt + rng.random_range(-cfg.tilt_jitter..=cfg.tilt_jitter);
    let vibrato_hz = rng.random_range(0.5..2.0);
    let mut phase = rng.random_range(0.0..1.0);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(n);
    for (i, e) in env.iter().enumerate() {
        let t = i as f64 / fs;
        let f0 = style.f0_hz * (1.0 + 0.06 * (2.0 * std::f64::consts::PI * vibrato_hz * t).sin());
        phase = (phase + f0 / fs).fract();
        let mut harm = 0.0;
        for h in 1..=8 {
            harm += (2.0 * std::f64::consts::PI * h as f64 * phase).sin() / h as f64;
        }
        let c = (1.0 - cfg.noise_mix) * harm + cfg.noise_mix * normal(rng);
        prev = c + tilt * prev;
        out.push(prev * e);
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::invalid("synthesized speech is silent"));
    }
    Ok(out.iter().map(|v| (v / rms) as f32).collect())
}

/// Rectified signal averaged over each EEG frame, then low-passed at
/// `cutoff_hz`; one value per 128 Hz frame.
pub fn envelope(audio: &[f32], cutoff_hz: f64) -> Result<Vec<f64>> {
    let frames = eeg_frames_for(audio.len());
    let rect: Vec<f64> = (0..frames)
        .map(|j| {
            let (a, b) = (audio_sample_for_frame(j), audio_sample_for_frame(j + 1));
            audio[a..b].iter().map(|v| v.abs() as f64).sum::<f64>() / (b - a) as f64
        })
        .collect();
    let lp = design_lowpass(cutoff_hz, EEG_RATE as f64, 65)?;
    Ok(lp.apply_same(&rect, 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegSynthConfig {
    pub channels: usize,
    pub g_att: f64,
    pub g_dis: f64,
    /// Pink-noise standard deviation relative to the mean envelope standard deviation.
    pub noise: f64,
    /// Response lag range, ms.
    pub lag_ms: (f64, f64),
    pub envelope_hz: f64,
}

impl Default for EegSynthConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            g_att: 1.0,
            g_dis: 0.3,
            noise: 1.0,
            lag_ms: (50.0, 250.0),
            envelope_hz: 8.0,
        }
    }
}

/// Per-channel lags (frames) and spatial weights, fixed for a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    pub att_lag: Vec<usize>,
    pub dis_lag: Vec<usize>,
    pub att_weight: Vec<f64>,
    pub dis_weight: Vec<f64>,
}

impl Montage {
    pub fn random(cfg: &EegSynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let to_frames = |ms: f64| (ms * EEG_RATE as f64 / 1000.0).round() as usize;
        let (lo, hi) = (to_frames(cfg.lag_ms.0), to_frames(cfg.lag_ms.1));
        let lag = |rng: &mut ChaCha8Rng| (0..cfg.channels).map(|_| rng.random_range(lo..=hi)).collect();
        let att_lag = lag(rng);
        let dis_lag = lag(rng);
        let weight = |rng: &mut ChaCha8Rng| {
            (0..cfg.channels)
                .map(|_| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * rng.random_range(0.5..1.5)
                })
                .collect()
        };
        let att_weight = weight(rng);
        let dis_weight = weight(rng);
        Self {
            att_lag,
            dis_lag,
            att_weight,
            dis_weight,
        }
    }
}

/// Pink noise by the Kellet economy filter on white noise, unit variance.
fn pink(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let out: Vec<f64> = (0..n)
        .map(|_| {
            let w = normal(rng);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n.max(1) as f64;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    out.iter().map(|v| (v - mean) / sd.max(1e-12)).collect()
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len().max(1) as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Raw (not yet preprocessed) 128 Hz EEG in which each channel is
/// `g_att·w·env_att(t − τ) + g_dis·w'·env_dis(t − τ') + noise`.
pub fn synth_eeg(
    attended: &[f32],
    distractor: &[f32],
    montage: &Montage,
    cfg: &EegSynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EegRecording> {
    if attended.len() != distractor.len() {
        return Err(Error::Shape {
            op: "synth_eeg",
            lhs: vec![attended.len()],
            rhs: vec![distractor.len()],
        });
    }
    if montage.att_lag.len() != cfg.channels {
        return Err(Error::invalid("montage channel count differs from the EEG config"));
    }
    let ea = envelope(attended, cfg.envelope_hz)?;
    let ed = envelope(distractor, cfg.envelope_hz)?;
    let t = ea.len();
    let noise_sd = cfg.noise * 0.5 * (std_dev(&ea) + std_dev(&ed));
    let lagged = |e: &[f64], lag: usize, j: usize| if j >= lag { e[j - lag] } else { 0.0 };
    let mut data = Vec::with_capacity(cfg.channels * t);
    for c in 0..cfg.channels {
        let noise = if cfg.noise > 0.0 { pink(t, rng) } else { vec![0.0; t] };
        for j in 0..t {
            let v = cfg.g_att * montage.att_weight[c] * lagged(&ea, montage.att_lag[c], j)
                + cfg.g_dis * montage.dis_weight[c] * lagged(&ed, montage.dis_lag[c], j)
                + noise_sd * noise[j];
            data.push(v as f32);
        }
    }
    EegRecording::new(cfg.channels, EEG_RATE as f64, data, false)
}
