//! Mask estimators conditioned on the attractors.

use crate::error::{Error, Result};
use crate::numerics::{ConvMode, CumStats, Real, Tensor, Var};

use super::config::{ExtractorKind, ModelConfig};
use super::params::Ctx;

/// Neuronal attractor `A^r: [N, T_r]` and optional auditory attractor `a^s: [N]`.
#[derive(Clone, Copy, Debug)]
pub struct Attractors {
    pub neuronal: Var,
    pub auditory: Option<Var>,
}

/// Frame-aligned attractor features `[N, T_x]` each.
struct Fusion {
    neuronal: Var,
    auditory: Var,
}

impl Fusion {
    fn apply<R: Real>(&self, ctx: &mut Ctx<R>, x: Var, prefix: &str) -> Result<Var> {
        let cat = ctx.g.concat(&[x, self.neuronal, self.auditory], 0)?;
        ctx.linear_cols(cat, prefix)
    }
}

/// Mask `M: [N, T_x]`, non-negative, for embeddings `x: [N, T_x]`.
pub fn extract<R: Real>(ctx: &mut Ctx<R>, cfg: &ModelConfig, x: Var, att: &Attractors) -> Result<Var> {
    let xs = ctx.g.shape(x).to_vec();
    if xs.len() != 2 || xs[0] != cfg.n || xs[1] == 0 {
        return Err(Error::invalid(format!("extractor input must be [{}, T_x], got {xs:?}", cfg.n)));
    }
    let t = xs[1];
    let rs = ctx.g.shape(att.neuronal).to_vec();
    if rs.len() != 2 || rs[0] != cfg.n {
        return Err(Error::invalid(format!(
            "neuronal attractor must be [{}, T_r], got {rs:?}",
            cfg.n
        )));
    }
    let neuronal = ctx.g.interp_time(att.neuronal, t)?;
    let auditory = match att.auditory {
        Some(a) => {
            if ctx.g.shape(a) != [cfg.n] {
                return Err(Error::invalid(format!(
                    "auditory attractor must be [{}], got {:?}",
                    cfg.n,
                    ctx.g.shape(a)
                )));
            }
            ctx.g.broadcast_time(a, t)?
        }
        None => ctx.g.constant(Tensor::zeros([cfg.n, t])),
    };
    let fusion = Fusion { neuronal, auditory };
    match cfg.extractor {
        ExtractorKind::Dprnn => dprnn(ctx, cfg, x, &fusion),
        ExtractorKind::Tcn => tcn(ctx, cfg, x, &fusion, false),
        ExtractorKind::CausalTcn => tcn(ctx, cfg, x, &fusion, true),
    }
}

fn bilstm<R: Real>(ctx: &mut Ctx<R>, z: Var, prefix: &str) -> Result<Var> {
    let fw = ctx.lstm_weights(&format!("{prefix}.fw"))?;
    let bw = ctx.lstm_weights(&format!("{prefix}.bw"))?;
    let (yf, _) = ctx.g.lstm(z, fw, None, false)?;
    let (yb, _) = ctx.g.lstm(z, bw, None, true)?;
    let cat = ctx.g.concat(&[yf, yb], 2)?;
    ctx.linear_rows(cat, &format!("{prefix}.proj"))
}

/// Global layer norm over a `[B, S, K]` tensor with per-channel gain.
fn chunk_norm<R: Real>(ctx: &mut Ctx<R>, y: Var, prefix: &str) -> Result<Var> {
    let s = ctx.g.shape(y).to_vec();
    let flat = ctx.g.reshape(y, &[s[0], s[1] * s[2]])?;
    let n = ctx.global_norm(flat, prefix)?;
    ctx.g.reshape(n, &s)
}

fn dprnn<R: Real>(ctx: &mut Ctx<R>, cfg: &ModelConfig, x: Var, fusion: &Fusion) -> Result<Var> {
    let d = &cfg.dprnn;
    let t = ctx.g.shape(x)[1];
    let y = ctx.global_norm(x, "ext.in_norm")?;
    let y = ctx.linear_cols(y, "ext.bottleneck")?;
    let y = fusion.apply(ctx, y, "ext.fuse")?;

    let (k, hop) = (d.chunk, d.chunk / 2);
    let padded = (t + 2 * hop).div_ceil(hop) * hop;
    let chunks = padded / hop - 1;
    let mut h = ctx.g.frame(y, k, hop, hop, chunks)?;
    for i in 0..d.blocks {
        let p = format!("ext.block{i}");
        // intra-chunk: sequences along K, batch over chunks
        let z = ctx.g.permute(h, &[1, 2, 0])?;
        let z = bilstm(ctx, z, &format!("{p}.intra"))?;
        let z = ctx.g.permute(z, &[2, 0, 1])?;
        let z = chunk_norm(ctx, z, &format!("{p}.intra.norm"))?;
        h = ctx.g.add(h, z)?;
        // inter-chunk: sequences along S, batch over positions in a chunk
        let z = ctx.g.permute(h, &[2, 1, 0])?;
        let z = bilstm(ctx, z, &format!("{p}.inter"))?;
        let z = ctx.g.permute(z, &[2, 1, 0])?;
        let z = chunk_norm(ctx, z, &format!("{p}.inter.norm"))?;
        h = ctx.g.add(h, z)?;
    }
    let h = ctx.prelu(h, "ext.out.prelu", 0)?;
    let y = ctx.g.overlap_add(h, hop, hop, t)?;
    let m = ctx.linear_cols(y, "ext.out")?;
    Ok(ctx.g.relu(m))
}

fn tcn_norm<R: Real>(ctx: &mut Ctx<R>, x: Var, prefix: &str, causal: bool) -> Result<Var> {
    if causal {
        let g = ctx.p(&format!("{prefix}.g"))?;
        let b = ctx.p(&format!("{prefix}.b"))?;
        Ok(ctx.g.cum_norm(x, g, b, CumStats::default())?.0)
    } else {
        ctx.global_norm(x, prefix)
    }
}

fn tcn<R: Real>(ctx: &mut Ctx<R>, cfg: &ModelConfig, x: Var, fusion: &Fusion, causal: bool) -> Result<Var> {
    let tc = &cfg.tcn;
    let mode = if causal { ConvMode::Causal } else { ConvMode::Same };
    let y = tcn_norm(ctx, x, "ext.in_norm", causal)?;
    let mut y = ctx.linear_cols(y, "ext.bottleneck")?;
    for r in 0..tc.repeats {
        for j in 0..tc.blocks {
            let p = format!("ext.r{r}b{j}");
            let f = fusion.apply(ctx, y, &format!("{p}.fuse"))?;
            let h = ctx.linear_cols(f, &format!("{p}.in"))?;
            let h = ctx.prelu(h, &format!("{p}.prelu1"), 0)?;
            let h = tcn_norm(ctx, h, &format!("{p}.norm1"), causal)?;
            let w = ctx.p(&format!("{p}.dw.w"))?;
            let h = ctx.g.conv1d(h, w, 1, 1 << j, mode)?;
            let b = ctx.p(&format!("{p}.dw.b"))?;
            let h = ctx.g.add_bias(h, b, 0)?;
            let h = ctx.prelu(h, &format!("{p}.prelu2"), 0)?;
            let h = tcn_norm(ctx, h, &format!("{p}.norm2"), causal)?;
            let h = ctx.linear_cols(h, &format!("{p}.out"))?;
            y = ctx.g.add(f, h)?;
        }
    }
    let y = ctx.prelu(y, "ext.out.prelu", 0)?;
    let m = ctx.linear_cols(y, "ext.out")?;
    Ok(ctx.g.relu(m))
}
