//! Fused batched LSTM with back-propagation through time.
//!
//! Gate order along the `4H` axis is input, forget, candidate, output.

use crate::error::{Error, Result};

use super::graph::{Graph, Op, Var};
use super::ops::sigmoid_scalar;
use super::tensor::{Real, Tensor};

/// Recurrent state `(h, c)`, each `[B, H]` row-major.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LstmState<R> {
    pub h: Vec<R>,
    pub c: Vec<R>,
}

impl<R: Real> LstmState<R> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: vec![R::zero(); batch * hidden],
            c: vec![R::zero(); batch * hidden],
        }
    }
}

/// Parameter handles of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[I, 4H]`
    pub w_ih: Var,
    /// `[H, 4H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

pub(crate) struct LstmTape<R> {
    x: Var,
    w: LstmWeights,
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
    reverse: bool,
    /// Activated gates per processing step, `[T, B, 4H]`.
    gates: Vec<R>,
    /// Cell states per processing step including the initial one, `[T+1, B, H]`.
    cs: Vec<R>,
    /// Hidden states, same layout as `cs`.
    hs: Vec<R>,
}

impl<R: Real> Graph<R> {
    /// Runs an LSTM over `x: [B, T, I]`, returning `y: [B, T, H]` and the final state.
    ///
    /// With `reverse`, time is processed from `T−1` down to `0` and `y[t]` is the
    /// state after consuming `x[t..]`.
    pub fn lstm(
        &mut self,
        x: Var,
        w: LstmWeights,
        init: Option<&LstmState<R>>,
        reverse: bool,
    ) -> Result<(Var, LstmState<R>)> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w.w_ih).to_vec();
        let sh = self.shape(w.w_hh).to_vec();
        if sx.len() != 3 || sw.len() != 2 || sh.len() != 2 || sw[0] != sx[2] {
            return Err(Error::Shape {
                op: "lstm",
                lhs: sx,
                rhs: sw,
            });
        }
        let (batch, steps, input) = (sx[0], sx[1], sx[2]);
        let hidden = sh[0];
        let g4 = 4 * hidden;
        if sw[1] != g4 || sh[1] != g4 || self.value(w.bias).len() != g4 {
            return Err(Error::Shape {
                op: "lstm weights",
                lhs: sw,
                rhs: sh,
            });
        }
        let state = match init {
            Some(s) => {
                if s.h.len() != batch * hidden || s.c.len() != batch * hidden {
                    return Err(Error::Shape {
                        op: "lstm state",
                        lhs: vec![batch, hidden],
                        rhs: vec![s.h.len(), s.c.len()],
                    });
                }
                s.clone()
            }
            None => LstmState::zeros(batch, hidden),
        };

        let bh = batch * hidden;
        let mut xw = vec![R::zero(); batch * steps * g4];
        R::gemm(batch * steps, input, g4, self.data(x), false, self.data(w.w_ih), false, &mut xw, false);
        let bias = self.data(w.bias);
        for row in xw.chunks_mut(g4) {
            row.iter_mut().zip(bias).for_each(|(v, &b)| *v += b);
        }
        let w_hh = self.data(w.w_hh);

        let mut gates = vec![R::zero(); steps * batch * g4];
        let mut cs = Vec::with_capacity((steps + 1) * bh);
        let mut hs = Vec::with_capacity((steps + 1) * bh);
        cs.extend_from_slice(&state.c);
        hs.extend_from_slice(&state.h);
        let mut y = vec![R::zero(); batch * steps * hidden];
        let mut pre = vec![R::zero(); batch * g4];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            for b in 0..batch {
                let src = (b * steps + t) * g4;
                pre[b * g4..(b + 1) * g4].copy_from_slice(&xw[src..src + g4]);
            }
            let hprev = &hs[s * bh..(s + 1) * bh];
            R::gemm(batch, hidden, g4, hprev, false, w_hh, false, &mut pre, true);
            let gs = &mut gates[s * batch * g4..(s + 1) * batch * g4];
            for b in 0..batch {
                let p = &pre[b * g4..(b + 1) * g4];
                let g = &mut gs[b * g4..(b + 1) * g4];
                for j in 0..hidden {
                    g[j] = sigmoid_scalar(p[j]);
                    g[hidden + j] = sigmoid_scalar(p[hidden + j]);
                    g[2 * hidden + j] = p[2 * hidden + j].tanh();
                    g[3 * hidden + j] = sigmoid_scalar(p[3 * hidden + j]);
                }
            }
            for b in 0..batch {
                let g = &gs[b * g4..(b + 1) * g4];
                for j in 0..hidden {
                    let cprev = cs[s * bh + b * hidden + j];
                    let c = g[hidden + j] * cprev + g[j] * g[2 * hidden + j];
                    let h = g[3 * hidden + j] * c.tanh();
                    cs.push(c);
                    hs.push(h);
                    y[(b * steps + t) * hidden + j] = h;
                }
            }
        }
        let final_state = LstmState {
            h: hs[steps * bh..].to_vec(),
            c: cs[steps * bh..].to_vec(),
        };
        let value = Tensor::new(vec![batch, steps, hidden], y)?;
        let var = self.push(value, &[x, w.w_ih, w.w_hh, w.bias], || {
            Op::Lstm(Box::new(LstmTape {
                x,
                w,
                batch,
                steps,
                input,
                hidden,
                reverse,
                gates,
                cs,
                hs,
            }))
        });
        Ok((var, final_state))
    }
}

impl<R: Real> LstmTape<R> {
    pub(crate) fn adjoint(&self, g: &Graph<R>, gy: &[R]) -> Vec<(Var, Vec<R>)> {
        let (batch, steps, hidden) = (self.batch, self.steps, self.hidden);
        let g4 = 4 * hidden;
        let bh = batch * hidden;
        let w_hh = g.data(self.w.w_hh);
        let mut dxw = vec![R::zero(); batch * steps * g4];
        let mut dw_hh = vec![R::zero(); hidden * g4];
        let mut dh_next = vec![R::zero(); bh];
        let mut dc_next = vec![R::zero(); bh];
        let mut dgates = vec![R::zero(); batch * g4];
        for s in (0..steps).rev() {
            let t = if self.reverse { steps - 1 - s } else { s };
            let gs = &self.gates[s * batch * g4..(s + 1) * batch * g4];
            for b in 0..batch {
                let gt = &gs[b * g4..(b + 1) * g4];
                let dg = &mut dgates[b * g4..(b + 1) * g4];
                for j in 0..hidden {
                    let k = b * hidden + j;
                    let (i, f, cand, o) = (gt[j], gt[hidden + j], gt[2 * hidden + j], gt[3 * hidden + j]);
                    let c = self.cs[(s + 1) * bh + k];
                    let cprev = self.cs[s * bh + k];
                    let tc = c.tanh();
                    let dh = gy[(b * steps + t) * hidden + j] + dh_next[k];
                    let d_o = dh * tc;
                    let dc = dh * o * (R::one() - tc * tc) + dc_next[k];
                    dg[j] = dc * cand * i * (R::one() - i);
                    dg[hidden + j] = dc * cprev * f * (R::one() - f);
                    dg[2 * hidden + j] = dc * i * (R::one() - cand * cand);
                    dg[3 * hidden + j] = d_o * o * (R::one() - o);
                    dc_next[k] = dc * f;
                }
                let dst = (b * steps + t) * g4;
                dxw[dst..dst + g4].copy_from_slice(dg);
            }
            R::gemm(batch, g4, hidden, &dgates, false, w_hh, true, &mut dh_next, false);
            let hprev = &self.hs[s * bh..(s + 1) * bh];
            R::gemm(hidden, batch, g4, hprev, true, &dgates, false, &mut dw_hh, true);
        }
        let rows = batch * steps;
        let mut dx = vec![R::zero(); rows * self.input];
        R::gemm(rows, g4, self.input, &dxw, false, g.data(self.w.w_ih), true, &mut dx, false);
        let mut dw_ih = vec![R::zero(); self.input * g4];
        R::gemm(self.input, rows, g4, g.data(self.x), true, &dxw, false, &mut dw_ih, false);
        let mut db = vec![R::zero(); g4];
        for row in dxw.chunks(g4) {
            db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        vec![
            (self.x, dx),
            (self.w.w_ih, dw_ih),
            (self.w.w_hh, dw_hh),
            (self.w.bias, db),
        ]
    }
}

/// One recurrence step on plain tensors: `x_t: [I]`, state `[H]` each.
pub fn lstm_step<R: Real>(
    x_t: &Tensor<R>,
    state: &LstmState<R>,
    w_ih: &Tensor<R>,
    w_hh: &Tensor<R>,
    bias: &Tensor<R>,
) -> Result<(Tensor<R>, LstmState<R>)> {
    let mut g = Graph::no_grad();
    let x = g.constant(x_t.clone().reshape(vec![1, 1, x_t.len()])?);
    let w = LstmWeights {
        w_ih: g.constant(w_ih.clone()),
        w_hh: g.constant(w_hh.clone()),
        bias: g.constant(bias.clone()),
    };
    let (y, next) = g.lstm(x, w, Some(state), false)?;
    let h = g.value(y).clone().reshape(vec![next.h.len()])?;
    Ok((h, next))
}
