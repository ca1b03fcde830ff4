//! Signal processing shared by data preparation and the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{for_each_interp, Real, Tensor};

/// Speech sample rate used throughout.
pub const AUDIO_RATE: u32 = 8000;
/// EEG frame rate after preprocessing.
pub const EEG_RATE: u32 = 128;

/// EEG frames covering `samples` audio samples: `floor(samples · 128 / 8000)`.
pub fn eeg_frames_for(samples: usize) -> usize {
    samples * EEG_RATE as usize / AUDIO_RATE as usize
}

/// First audio sample of EEG frame `frame` (rounded down).
pub fn audio_sample_for_frame(frame: usize) -> usize {
    frame * AUDIO_RATE as usize / EEG_RATE as usize
}

/// Sums frames `[T_x, L]` spaced `hop` apart; output length `(T_x − 1)·hop + L`.
pub fn overlap_add<R: Real>(frames: &[R], frame_len: usize, hop: usize) -> Result<Vec<R>> {
    if hop == 0 || hop > frame_len {
        return Err(Error::invalid(format!("overlap_add: hop {hop} must be in 1..={frame_len}")));
    }
    if frames.is_empty() || frames.len() % frame_len != 0 {
        return Err(Error::Empty {
            op: "overlap_add",
            detail: format!("{} values do not form whole frames of {frame_len}", frames.len()),
        });
    }
    let n = frames.len() / frame_len;
    let mut out = vec![R::zero(); (n - 1) * hop + frame_len];
    for (i, f) in frames.chunks(frame_len).enumerate() {
        out[i * hop..i * hop + frame_len]
            .iter_mut()
            .zip(f)
            .for_each(|(o, &v)| *o += v);
    }
    Ok(out)
}

/// Strided framing: `floor((T − L)/hop) + 1` frames of length `L`.
pub fn frame<R: Real>(signal: &[R], frame_len: usize, hop: usize) -> Result<Vec<R>> {
    if hop == 0 || frame_len == 0 {
        return Err(Error::invalid("frame: frame length and hop must be >= 1"));
    }
    if signal.len() < frame_len {
        return Err(Error::Empty {
            op: "frame",
            detail: format!("signal of {} samples is shorter than one frame ({frame_len})", signal.len()),
        });
    }
    let n = (signal.len() - frame_len) / hop + 1;
    let mut out = Vec::with_capacity(n * frame_len);
    for i in 0..n {
        out.extend_from_slice(&signal[i * hop..i * hop + frame_len]);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hamming,
}

/// How a filter was designed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirDesign {
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
    pub taps: usize,
    pub window: Window,
}

/// Linear-phase FIR filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub design: FirDesign,
}

fn hamming(n: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
}

/// Hamming-windowed sinc low-pass normalized to unit DC gain.
fn lowpass_taps(cutoff_hz: f64, fs: f64, taps: usize) -> Vec<f64> {
    let fc = cutoff_hz / fs;
    let mid = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            sinc * hamming(n, taps)
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

fn check_taps(taps: usize) -> Result<()> {
    if taps == 0 || taps % 2 == 0 {
        return Err(Error::invalid(format!("FIR tap count must be odd, got {taps}")));
    }
    Ok(())
}

/// Windowed-sinc low-pass with unit DC gain.
pub fn design_lowpass(cutoff_hz: f64, fs: f64, taps: usize) -> Result<FirFilter> {
    check_taps(taps)?;
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::invalid(format!("low-pass cutoff {cutoff_hz} Hz outside (0, {}) Hz", fs / 2.0)));
    }
    Ok(FirFilter {
        taps: lowpass_taps(cutoff_hz, fs, taps),
        design: FirDesign {
            low_hz: 0.0,
            high_hz: cutoff_hz,
            fs,
            taps,
            window: Window::Hamming,
        },
    })
}

/// Windowed-sinc band-pass built as the difference of two unit-DC low-passes,
/// so the tap sum (DC gain) is zero up to rounding.
pub fn design_bandpass(low_hz: f64, high_hz: f64, fs: f64, taps: usize) -> Result<FirFilter> {
    check_taps(taps)?;
    if !(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::invalid(format!(
            "band edges must satisfy 0 < {low_hz} < {high_hz} < {} Hz",
            fs / 2.0
        )));
    }
    let hi = lowpass_taps(high_hz, fs, taps);
    let lo = lowpass_taps(low_hz, fs, taps);
    Ok(FirFilter {
        taps: hi.iter().zip(&lo).map(|(a, b)| a - b).collect(),
        design: FirDesign {
            low_hz,
            high_hz,
            fs,
            taps,
            window: Window::Hamming,
        },
    })
}

impl FirFilter {
    /// Magnitude response in dB at `freq_hz`, by direct DFT of the taps.
    pub fn response_db(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.design.fs;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &h) in self.taps.iter().enumerate() {
            re += h * (w * n as f64).cos();
            im -= h * (w * n as f64).sin();
        }
        20.0 * (re * re + im * im).sqrt().max(1e-300).log10()
    }

    /// Zero-phase ('same') filtering: output sample `n` is aligned with input sample `n`
    /// (delay of `(taps − 1)/2` removed). Only every `step`-th output is computed.
    pub fn apply_same(&self, x: &[f64], step: usize) -> Vec<f64> {
        let k = self.taps.len();
        let half = (k - 1) / 2;
        let n_out = x.len() / step.max(1);
        let mut out = Vec::with_capacity(n_out);
        for m in 0..n_out {
            let n = m * step;
            // y[n] = Σ_j h[j]·x[n + half − j]
            let j_lo = (n + half + 1).saturating_sub(x.len());
            let j_hi = (n + half).min(k - 1);
            let mut acc = 0.0;
            for j in j_lo..=j_hi {
                acc += self.taps[j] * x[n + half - j];
            }
            out.push(acc);
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        let k = self.taps.len();
        (0..k / 2).all(|i| (self.taps[i] - self.taps[k - 1 - i]).abs() <= 1e-15)
    }
}

/// Multichannel EEG `[C, T]`, channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegRecording {
    pub channels: usize,
    pub sample_rate: f64,
    pub data: Vec<f32>,
    pub preprocessed: bool,
}

impl EegRecording {
    pub fn new(channels: usize, sample_rate: f64, data: Vec<f32>, preprocessed: bool) -> Result<Self> {
        if channels == 0 || data.len() % channels != 0 {
            return Err(Error::invalid(format!(
                "EEG data of {} values is not divisible into {channels} channels",
                data.len()
            )));
        }
        if sample_rate <= 0.0 {
            return Err(Error::invalid("EEG sample rate must be positive"));
        }
        Ok(Self {
            channels,
            sample_rate,
            data,
            preprocessed,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let t = self.frames();
        &self.data[c * t..(c + 1) * t]
    }

    /// Frames `[start, start + len)` of every channel.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        let t = self.frames();
        if start + len > t {
            return Err(Error::invalid(format!(
                "EEG slice [{start}, {}) beyond {t} frames",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            data.extend_from_slice(&self.data[c * t + start..c * t + start + len]);
        }
        Ok(Self { data, ..self.clone() })
    }

    /// `[C, T]` tensor view (copied).
    pub fn to_tensor<R: Real>(&self) -> Tensor<R> {
        Tensor::from_fn([self.channels, self.frames()], |i| R::lit(self.data[i] as f64))
    }
}

/// Parameters of [`preprocess_eeg`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EegPreprocess {
    pub low_hz: f64,
    pub high_hz: f64,
    pub out_rate: f64,
    /// Band-pass taps at the output rate.
    pub band_taps: usize,
    /// Anti-alias low-pass taps at the input rate (unused when no decimation).
    pub anti_alias_taps: usize,
    pub anti_alias_hz: f64,
}

impl Default for EegPreprocess {
    fn default() -> Self {
        Self {
            low_hz: 1.0,
            high_hz: 32.0,
            out_rate: EEG_RATE as f64,
            band_taps: 257,
            anti_alias_taps: 513,
            anti_alias_hz: 64.0,
        }
    }
}

/// Subtracts the per-sample mean over channels.
pub fn rereference(data: &mut [f64], channels: usize) {
    let t = data.len() / channels;
    for j in 0..t {
        let mean = (0..channels).map(|c| data[c * t + j]).sum::<f64>() / channels as f64;
        for c in 0..channels {
            data[c * t + j] -= mean;
        }
    }
}

/// Average re-reference, anti-alias low-pass and decimation to 128 Hz, then a
/// 1–32 Hz band-pass at 128 Hz. All filters are zero-phase aligned.
pub fn preprocess_eeg(raw: &EegRecording, cfg: &EegPreprocess) -> Result<EegRecording> {
    if raw.preprocessed {
        return Err(Error::invalid("EEG recording is already preprocessed"));
    }
    let ratio = raw.sample_rate / cfg.out_rate;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "decimation factor {ratio} from {} Hz to {} Hz is not an integer",
            raw.sample_rate, cfg.out_rate
        )));
    }
    let factor = factor as usize;
    let c = raw.channels;
    let mut x: Vec<f64> = raw.data.iter().map(|&v| v as f64).collect();
    rereference(&mut x, c);
    let t = raw.frames();
    let decimated: Vec<Vec<f64>> = if factor == 1 {
        x.chunks(t.max(1)).map(|ch| ch.to_vec()).collect()
    } else {
        let aa = design_lowpass(cfg.anti_alias_hz, raw.sample_rate, cfg.anti_alias_taps)?;
        x.chunks(t.max(1)).map(|ch| aa.apply_same(ch, factor)).collect()
    };
    let bp = design_bandpass(cfg.low_hz, cfg.high_hz, cfg.out_rate, cfg.band_taps)?;
    let mut data = Vec::with_capacity(c * (t / factor));
    for ch in decimated.iter().take(c) {
        data.extend(bp.apply_same(ch, 1).into_iter().map(|v| v as f32));
    }
    if t == 0 {
        data.clear();
    }
    EegRecording::new(c, cfg.out_rate, data, true)
}

/// Scales `interferer` so the target-to-interferer energy ratio is `snr_db`, then mixes.
///
/// Unequal lengths are truncated to the shorter signal. The mixture is formed as
/// `target + scaled` elementwise.
pub fn mix_at_snr<R: Real>(target: &[R], interferer: &[R], snr_db: f64) -> Result<(Vec<R>, Vec<R>)> {
    let n = target.len().min(interferer.len());
    let (t, i) = (&target[..n], &interferer[..n]);
    let et: f64 = t.iter().map(|v| v.f64().powi(2)).sum();
    let ei: f64 = i.iter().map(|v| v.f64().powi(2)).sum();
    if ei == 0.0 {
        return Err(Error::invalid("mix_at_snr: interferer has zero energy"));
    }
    if et == 0.0 {
        return Err(Error::invalid("mix_at_snr: target has zero energy"));
    }
    let gain = (et / (ei * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<R> = i.iter().map(|&v| R::lit(v.f64() * gain)).collect();
    let mixture = t.iter().zip(&scaled).map(|(&a, &b)| a + b).collect();
    Ok((mixture, scaled))
}

/// Energy ratio `10·log10(‖a‖² / ‖b‖²)`.
pub fn energy_ratio_db<R: Real>(a: &[R], b: &[R]) -> f64 {
    let ea: f64 = a.iter().map(|v| v.f64().powi(2)).sum();
    let eb: f64 = b.iter().map(|v| v.f64().powi(2)).sum();
    10.0 * (ea / eb).log10()
}

/// Endpoint-preserving linear resampling of `seq: [N, T_r]` to `[N, target_len]`.
pub fn interp_linear<R: Real>(seq: &Tensor<R>, target_len: usize) -> Result<Tensor<R>> {
    if seq.rank() != 2 || seq.dim(1) == 0 {
        return Err(Error::Empty {
            op: "interp_linear",
            detail: format!("input shape {:?}", seq.shape()),
        });
    }
    if target_len == 0 {
        return Err(Error::invalid("interp_linear: target length must be >= 1"));
    }
    let (n, t_in) = (seq.dim(0), seq.dim(1));
    let d = seq.data();
    let mut out = vec![R::zero(); n * target_len];
    for_each_interp(t_in, target_len, |to, i0, i1, w| {
        let w = R::lit(w);
        for c in 0..n {
            out[c * target_len + to] = (R::one() - w) * d[c * t_in + i0] + w * d[c * t_in + i1];
        }
    });
    Tensor::new(vec![n, target_len], out)
}
