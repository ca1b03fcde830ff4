//! Least-squares stimulus reconstruction from EEG.

use serde::{Deserialize, Serialize};

use crate::dsp::EegRecording;
use crate::error::{Error, Result};
use crate::numerics::Real;

use super::synth::envelope;
use super::MixtureExample;

/// Ridge-regularized backward model `env(t) ≈ Σ_c Σ_τ w[c, τ]·eeg_c(t + τ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDecoder {
    pub lags: Vec<usize>,
    pub channels: usize,
    pub weights: Vec<f64>,
}

fn features(eeg: &EegRecording, lags: &[usize], t: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(eeg.channels * lags.len());
    let frames = eeg.frames();
    for c in 0..eeg.channels {
        let ch = eeg.channel(c);
        for &l in lags {
            row.push(if t + l < frames { ch[t + l] as f64 } else { 0.0 });
        }
    }
    row
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len().max(1) as f64;
    x.iter().map(|v| v - m).collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (centered(a), centered(b));
    let ab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa * bb).sqrt()
    }
}

/// Solves the symmetric positive definite system `a·x = b` in place by Cholesky.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 {
            return Err(Error::invalid("decoder normal equations are not positive definite"));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

impl LinearDecoder {
    /// Fits the decoder to the attended envelopes of `examples`.
    pub fn fit(examples: &[MixtureExample], lags: &[usize], ridge: f64, envelope_hz: f64) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::invalid("decoder fit needs examples"))?;
        let channels = first.eeg.channels;
        let f = channels * lags.len();
        let mut xtx = vec![0.0f64; f * f];
        let mut xty = vec![0.0f64; f];
        for ex in examples {
            let env = centered(&envelope(&ex.target, envelope_hz)?);
            let t = env.len().min(ex.eeg.frames());
            let mut rows = Vec::with_capacity(t * f);
            for j in 0..t {
                rows.extend(features(&ex.eeg, lags, j));
            }
            f64::gemm(f, t, f, &rows, true, &rows, false, &mut xtx, true);
            for j in 0..t {
                for (k, v) in rows[j * f..(j + 1) * f].iter().enumerate() {
                    xty[k] += v * env[j];
                }
            }
        }
        let scale = (0..f).map(|i| xtx[i * f + i]).sum::<f64>() / f as f64;
        for i in 0..f {
            xtx[i * f + i] += ridge * scale;
        }
        cholesky_solve(&mut xtx, &mut xty, f)?;
        Ok(Self {
            lags: lags.to_vec(),
            channels,
            weights: xty,
        })
    }

    pub fn reconstruct(&self, eeg: &EegRecording) -> Vec<f64> {
        (0..eeg.frames())
            .map(|t| {
                features(eeg, &self.lags, t)
                    .iter()
                    .zip(&self.weights)
                    .map(|(x, w)| x * w)
                    .sum()
            })
            .collect()
    }
}

/// Outcome of the attention identifiability check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identifiability {
    pub examples: usize,
    pub attended_wins: usize,
    pub fraction: f64,
    pub mean_r_attended: f64,
    pub mean_r_distractor: f64,
}

/// Fits on `train` and counts test examples whose reconstruction correlates
/// more with the attended than with the distractor envelope.
pub fn identifiability(
    train: &[MixtureExample],
    test: &[MixtureExample],
    envelope_hz: f64,
) -> Result<Identifiability> {
    let lags: Vec<usize> = (0..=32).step_by(8).collect();
    let dec = LinearDecoder::fit(train, &lags, 1e-3, envelope_hz)?;
    let (mut wins, mut ra, mut rd) = (0, 0.0, 0.0);
    for ex in test {
        let rec = dec.reconstruct(&ex.eeg);
        let ea = envelope(&ex.target, envelope_hz)?;
        let ed = envelope(&ex.interferer, envelope_hz)?;
        let t = rec.len().min(ea.len());
        let (a, d) = (pearson(&rec[..t], &ea[..t]), pearson(&rec[..t], &ed[..t]));
        wins += usize::from(a > d);
        ra += a;
        rd += d;
    }
    let n = test.len().max(1) as f64;
    Ok(Identifiability {
        examples: test.len(),
        attended_wins: wins,
        fraction: wins as f64 / n,
        mean_r_attended: ra / n,
        mean_r_distractor: rd / n,
    })
}
