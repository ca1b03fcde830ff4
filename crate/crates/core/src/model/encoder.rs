//! Speech encoder/decoder and the EEG encoder.

use crate::error::{Error, Result};
use crate::numerics::{ConvMode, Real, Tensor, Var};

use super::config::ModelConfig;
use super::params::Ctx;

/// Waveform `[1, T_s]` to non-negative frame embeddings `[N, T_x]`.
pub fn speech_encode<R: Real>(ctx: &mut Ctx<R>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let len = ctx.g.shape(x).last().copied().unwrap_or(0);
    if len < cfg.l {
        return Err(Error::invalid(format!(
            "speech input of {len} samples is shorter than the minimum of {} (one encoder frame)",
            cfg.l
        )));
    }
    let w = ctx.p("enc.w")?;
    let y = ctx.g.conv1d(x, w, cfg.hop(), 1, ConvMode::Valid)?;
    Ok(ctx.g.relu(y))
}

/// Frame embeddings `[N, T_x]` to a waveform `[1, (T_x − 1)·L/2 + L]`.
pub fn speech_decode<R: Real>(ctx: &mut Ctx<R>, cfg: &ModelConfig, s: Var) -> Result<Var> {
    let shape = ctx.g.shape(s).to_vec();
    if shape.len() != 2 || shape[0] != cfg.n || shape[1] == 0 {
        return Err(Error::invalid(format!(
            "decoder expects [{}, T_x >= 1], got {shape:?}",
            cfg.n
        )));
    }
    let t = shape[1];
    let frames = ctx.linear_cols(s, "dec")?;
    let frames = ctx.g.transpose(frames)?;
    let frames = ctx.g.reshape(frames, &[1, t, cfg.l])?;
    ctx.g.overlap_add(frames, cfg.hop(), 0, (t - 1) * cfg.hop() + cfg.l)
}

/// Sinusoidal positional encoding `[T, N]`.
pub fn positional_encoding<R: Real>(t: usize, n: usize) -> Tensor<R> {
    Tensor::from_fn([t, n], |idx| {
        let (pos, i) = (idx / n, idx % n);
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / n as f64);
        let a = pos as f64 / rate;
        R::lit(if i % 2 == 0 { a.sin() } else { a.cos() })
    })
}

/// Post-norm single-head self-attention block on `x: [T, N]`.
///
/// Returns the block output and the `[T, T]` attention weights.
pub fn self_attention_layer<R: Real>(ctx: &mut Ctx<R>, x: Var, prefix: &str) -> Result<(Var, Var)> {
    let shape = ctx.g.shape(x).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Empty {
            op: "self_attention",
            detail: format!("input shape {shape:?}"),
        });
    }
    let n = shape[1];
    let q = ctx.linear_rows(x, &format!("{prefix}.q"))?;
    let k = ctx.linear_rows(x, &format!("{prefix}.k"))?;
    let v = ctx.linear_rows(x, &format!("{prefix}.v"))?;
    let kt = ctx.g.transpose(k)?;
    let scores = ctx.g.matmul(q, kt)?;
    let scores = ctx.g.scale(scores, R::lit(1.0 / (n as f64).sqrt()));
    let attn = ctx.g.softmax(scores)?;
    let ctxv = ctx.g.matmul(attn, v)?;
    let o = ctx.linear_rows(ctxv, &format!("{prefix}.o"))?;
    let h = ctx.g.add(x, o)?;
    let h = ctx.layer_norm(h, &format!("{prefix}.ln1"))?;
    let f = ctx.linear_rows(h, &format!("{prefix}.ff1"))?;
    let f = ctx.g.relu(f);
    let f = ctx.linear_rows(f, &format!("{prefix}.ff2"))?;
    let y = ctx.g.add(h, f)?;
    let y = ctx.layer_norm(y, &format!("{prefix}.ln2"))?;
    Ok((y, attn))
}

/// Preprocessed EEG `[C, T_r]` to the neuronal attractor `[N, T_r]`.
pub fn eeg_encode<R: Real>(ctx: &mut Ctx<R>, cfg: &ModelConfig, r: Var) -> Result<Var> {
    let shape = ctx.g.shape(r).to_vec();
    if shape.len() != 2 || shape[0] != cfg.eeg_channels {
        return Err(Error::invalid(format!(
            "EEG encoder expects [{}, T_r], got {shape:?}",
            cfg.eeg_channels
        )));
    }
    if shape[1] == 0 {
        return Err(Error::Empty {
            op: "eeg_encode",
            detail: "no EEG frames".into(),
        });
    }
    let rt = ctx.g.transpose(r)?;
    let x = ctx.linear_rows(rt, "eeg.in")?;
    let pe = ctx.g.constant(positional_encoding(shape[1], cfg.n));
    let mut x = ctx.g.add(x, pe)?;
    for i in 0..cfg.sa_layers {
        x = self_attention_layer(ctx, x, &format!("eeg.sa{i}"))?.0;
    }
    ctx.g.transpose(x)
}
