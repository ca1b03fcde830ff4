//! Speaker encoder with carried state for incremental self-enrollment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ConvMode, CumStats, LstmState, Real, Tensor, Var};

use super::config::ModelConfig;
use super::encoder::speech_encode;
use super::params::Ctx;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResBlockState<R> {
    /// Trailing `kernel − 1` input frames of each convolution, `[N, k−1]`.
    pub ctx1: Vec<R>,
    pub ctx2: Vec<R>,
    pub cln1: CumStats,
    pub cln2: CumStats,
    /// Frame waiting for its max-pool partner, `[N, 0|1]`.
    pub pool_pending: Vec<R>,
}

/// Everything the speaker encoder needs to continue from where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerState<R> {
    /// Audio samples not yet consumed by a full encoder frame.
    pub pending: Vec<R>,
    pub blocks: Vec<ResBlockState<R>>,
    pub lstm: LstmState<R>,
    /// LSTM frames consumed so far.
    pub frames: usize,
}

impl<R: Real> SpeakerState<R> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let ctx = vec![R::zero(); cfg.n * cfg.speaker_context()];
        Self {
            pending: Vec::new(),
            blocks: (0..cfg.speaker.resnet_blocks)
                .map(|_| ResBlockState {
                    ctx1: ctx.clone(),
                    ctx2: ctx.clone(),
                    cln1: CumStats::default(),
                    cln2: CumStats::default(),
                    pool_pending: Vec::new(),
                })
                .collect(),
            lstm: LstmState::zeros(1, cfg.speaker.lstm_hidden),
            frames: 0,
        }
    }
}

fn tail_cols<R: Real>(t: &Tensor<R>, k: usize) -> Vec<R> {
    let c = t.dim(1);
    t.slice_cols(c - k, k).into_data()
}

/// Causal convolution of `[N, F]` frames continuing from `context: [N, k−1]`.
fn conv_with_context<R: Real>(
    ctx: &mut Ctx<R>,
    x: Var,
    context: &mut Vec<R>,
    weight: &str,
    n: usize,
    k: usize,
) -> Result<Var> {
    let w = ctx.p(weight)?;
    if k == 1 {
        return ctx.g.conv1d(x, w, 1, 1, ConvMode::Valid);
    }
    let c = ctx.g.constant(Tensor::new(vec![n, k - 1], context.clone())?);
    let joined = ctx.g.concat(&[c, x], 1)?;
    *context = tail_cols(ctx.g.value(joined), k - 1);
    ctx.g.conv1d(joined, w, 1, 1, ConvMode::Valid)
}

/// Feeds new past-output samples `audio: [1, T]` through the speaker encoder.
///
/// Returns the auditory attractor `a^s: [N]` (or `None` while no LSTM frame has
/// been produced yet) and the updated state. Feeding audio in any chunking gives
/// the same result as feeding it at once.
pub fn speaker_encode<R: Real>(
    ctx: &mut Ctx<R>,
    cfg: &ModelConfig,
    audio: Var,
    state: Option<SpeakerState<R>>,
) -> Result<(Option<Var>, SpeakerState<R>)> {
    let fresh = state.is_none();
    let mut st = state.unwrap_or_else(|| SpeakerState::new(cfg));
    let new_len = ctx.g.shape(audio).last().copied().unwrap_or(0);
    if fresh && new_len < cfg.l {
        return Err(Error::invalid(format!(
            "speaker encoder input of {new_len} samples is shorter than one encoder frame ({})",
            cfg.l
        )));
    }
    let (n, k, hop) = (cfg.n, cfg.speaker.kernel, cfg.hop());

    let buffer = if st.pending.is_empty() {
        audio
    } else {
        let p = ctx.g.constant(Tensor::new(vec![1, st.pending.len()], st.pending.clone())?);
        ctx.g.concat(&[p, audio], 1)?
    };
    let total = ctx.g.shape(buffer)[1];
    let mut frames = None;
    if total >= cfg.l {
        let f = (total - cfg.l) / hop + 1;
        let used = f * hop;
        st.pending = ctx.g.value(buffer).data()[used..].to_vec();
        frames = Some(speech_encode(ctx, cfg, buffer)?);
    } else {
        st.pending = ctx.g.value(buffer).data().to_vec();
    }

    for (i, bs) in st.blocks.iter_mut().enumerate() {
        let Some(x) = frames else { break };
        let p = format!("spk.res{i}");
        let y = conv_with_context(ctx, x, &mut bs.ctx1, &format!("{p}.conv1.w"), n, k)?;
        let (g1, b1) = (ctx.p(&format!("{p}.cln1.g"))?, ctx.p(&format!("{p}.cln1.b"))?);
        let (y, s1) = ctx.g.cum_norm(y, g1, b1, bs.cln1)?;
        bs.cln1 = s1;
        let y = ctx.prelu(y, &format!("{p}.prelu1"), 0)?;
        let y = conv_with_context(ctx, y, &mut bs.ctx2, &format!("{p}.conv2.w"), n, k)?;
        let (g2, b2) = (ctx.p(&format!("{p}.cln2.g"))?, ctx.p(&format!("{p}.cln2.b"))?);
        let (y, s2) = ctx.g.cum_norm(y, g2, b2, bs.cln2)?;
        bs.cln2 = s2;
        let y = ctx.g.add(y, x)?;
        let y = ctx.prelu(y, &format!("{p}.prelu2"), 0)?;

        let y = if bs.pool_pending.is_empty() {
            y
        } else {
            let pend = ctx.g.constant(Tensor::new(vec![n, 1], bs.pool_pending.clone())?);
            ctx.g.concat(&[pend, y], 1)?
        };
        let len = ctx.g.shape(y)[1];
        let pairs = len / 2;
        bs.pool_pending = if len % 2 == 1 {
            tail_cols(ctx.g.value(y), 1)
        } else {
            Vec::new()
        };
        frames = if pairs == 0 {
            None
        } else {
            let body = if len % 2 == 1 { ctx.g.slice(y, 1, 0, 2 * pairs)? } else { y };
            Some(ctx.g.max_pool1d(body, 2, 2)?)
        };
    }

    let h_last = match frames {
        Some(x) => {
            let f = ctx.g.shape(x)[1];
            let xt = ctx.g.transpose(x)?;
            let xt = ctx.g.reshape(xt, &[1, f, n])?;
            let w = ctx.lstm_weights("spk.lstm")?;
            let (y, next) = ctx.g.lstm(xt, w, Some(&st.lstm), false)?;
            st.lstm = next;
            st.frames += f;
            let last = ctx.g.slice(y, 1, f - 1, 1)?;
            Some(ctx.g.reshape(last, &[1, cfg.speaker.lstm_hidden])?)
        }
        None if st.frames > 0 => {
            let h = Tensor::new(vec![1, cfg.speaker.lstm_hidden], st.lstm.h.clone())?;
            Some(ctx.g.constant(h))
        }
        None => None,
    };
    let a_s = match h_last {
        Some(h) => {
            let a = ctx.linear_rows(h, "spk.out")?;
            Some(ctx.g.reshape(a, &[n])?)
        }
        None => None,
    };
    Ok((a_s, st))
}
