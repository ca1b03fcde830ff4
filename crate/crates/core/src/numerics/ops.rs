//! Differentiable operations. Each forward lives on [`Graph`]; its adjoint is
//! dispatched from [`Graph::adjoint`].

use crate::error::{Error, Result};

use super::graph::{Graph, Op, Var};
use super::tensor::{same_shape, Real, Tensor};

/// Padding rule for [`Graph::conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    /// No padding.
    Valid,
    /// `dilation·(L−1)` zeros on the left: output `t` sees inputs `≤ t·stride`.
    Causal,
    /// Symmetric padding; stride 1 keeps the length.
    Same,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
    t_in: usize,
    t_out: usize,
    depthwise: bool,
}

/// Layout shared by the overlap-add and framing ops.
#[derive(Clone, Copy, Debug)]
pub(crate) struct OlaGeom {
    channels: usize,
    frames: usize,
    frame_len: usize,
    hop: usize,
    offset: usize,
    out_len: usize,
}

impl OlaGeom {
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        // f(frame_index, signal_index) for every in-range (frame, position) pair
        for fr in 0..self.frames {
            for j in 0..self.frame_len {
                let p = fr * self.hop + j;
                if p < self.offset {
                    continue;
                }
                let p = p - self.offset;
                if p >= self.out_len {
                    break;
                }
                f(fr * self.frame_len + j, p);
            }
        }
    }
}

/// Running statistics carried by cumulative layer normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CumStats {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: f64,
}

pub const NORM_EPS: f64 = 1e-5;

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn row_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn permute_data<R: Copy>(data: &[R], shape: &[usize], axes: &[usize]) -> (Vec<R>, Vec<usize>) {
    let rank = shape.len();
    let new_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides = row_strides(shape);
    let src: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return (out, new_shape);
    }
    let last = rank - 1;
    let (inner_len, inner_stride) = (new_shape[last], src[last]);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let rows = n / inner_len;
    for _ in 0..rows {
        if inner_stride == 1 {
            out.extend_from_slice(&data[off..off + inner_len]);
        } else {
            let mut o = off;
            for _ in 0..inner_len {
                out.push(data[o]);
                o += inner_stride;
            }
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            off += src[d];
            if idx[d] < new_shape[d] {
                break;
            }
            off -= src[d] * new_shape[d];
            idx[d] = 0;
        }
    }
    (out, new_shape)
}

fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

pub(crate) fn sigmoid_scalar<R: Real>(x: R) -> R {
    sigmoid(x)
}

impl<R: Real> Graph<R> {
    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(R, R) -> R, op: fn(Var, Var) -> Op<R>) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, &[a, b], || op(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, x: Var, s: R) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, &[x], || Op::Scale(x, s))
    }

    /// `x + b` with `b` broadcast along every axis except `axis`.
    pub fn add_bias(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.value(b).len() != shape[axis] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: shape,
                rhs: self.shape(b).to_vec(),
            });
        }
        let (outer, mid, inner) = outer_inner(&shape, axis);
        let bd = self.data(b);
        let mut out = self.data(x).to_vec();
        for o in 0..outer {
            for (c, &bv) in bd.iter().enumerate().take(mid) {
                let base = (o * mid + c) * inner;
                out[base..base + inner].iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[x, b], || Op::AddBias { x, b, axis }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > R::zero() { v } else { R::zero() });
        self.push(value, &[x], || Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, &[x], || Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, &[x], || Op::Tanh(x))
    }

    /// Parametric ReLU with one slope per entry of `axis` (or a single shared slope).
    pub fn prelu(&mut self, x: Var, alpha: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let na = self.value(alpha).len();
        if axis >= shape.len() || (na != 1 && na != shape[axis]) {
            return Err(Error::Shape {
                op: "prelu",
                lhs: shape,
                rhs: self.shape(alpha).to_vec(),
            });
        }
        let (outer, mid, inner) = outer_inner(&shape, axis);
        let ad = self.data(alpha);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(xd.len());
        for o in 0..outer {
            for c in 0..mid {
                let a = ad[if na == 1 { 0 } else { c }];
                let base = (o * mid + c) * inner;
                out.extend(xd[base..base + inner].iter().map(|&v| if v > R::zero() { v } else { a * v }));
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[x, alpha], || Op::Prelu { x, alpha, axis }))
    }

    /// Matrix product over the last two axes; `b` may be 2-D and shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (qb, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != qb {
            return Err(err());
        }
        let shared_b = sb.len() == 2;
        let lead_a = &sa[..sa.len() - 2];
        if !shared_b && lead_a != &sb[..sb.len() - 2] {
            return Err(err());
        }
        let batch: usize = lead_a.iter().product();
        let mut out = vec![R::zero(); batch * p * r];
        if shared_b {
            R::gemm(batch * p, q, r, self.data(a), false, self.data(b), false, &mut out, false);
        } else {
            let (ad, bd) = (self.data(a), self.data(b));
            for i in 0..batch {
                R::gemm(
                    p,
                    q,
                    r,
                    &ad[i * p * q..],
                    false,
                    &bd[i * q * r..],
                    false,
                    &mut out[i * p * r..],
                    false,
                );
            }
        }
        let mut shape = lead_a.to_vec();
        shape.extend([p, r]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[a, b], || Op::Matmul {
            a,
            b,
            batch,
            p,
            q,
            r,
            shared_b,
        }))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(format!("permute: bad axes {axes:?} for shape {shape:?}")));
        }
        let (data, new_shape) = permute_data(self.data(x), &shape, axes);
        let value = Tensor::new(new_shape, data)?;
        let axes = axes.to_vec();
        Ok(self.push(value, &[x], || Op::Permute { x, axes }))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(Error::invalid("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, &[x], || Op::Reshape(x)))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) out of range on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, mid, inner) = outer_inner(&shape, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, &[x], || Op::Slice { x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Empty {
                op: "concat",
                detail: "no inputs".into(),
            });
        };
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return Err(Error::invalid("concat axis out of range"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != s0.len() || s.iter().zip(&s0).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: s0.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let m = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * m * inner..(o + 1) * m * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let xs = xs.to_vec();
        Ok(self.push(value, &xs.clone(), || Op::Concat { xs, axis }))
    }

    /// 1-D convolution of `x: [C_in, T]` with `w: [C_out, C_in, L]` (or depthwise `[C, 1, L]`).
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, dilation: usize, mode: ConvMode) -> Result<Var> {
        let k = self.shape(w).get(2).copied().unwrap_or(0);
        let span = dilation * k.saturating_sub(1);
        let (pl, pr) = match mode {
            ConvMode::Valid => (0, 0),
            ConvMode::Causal => (span, 0),
            ConvMode::Same => (span / 2, span - span / 2),
        };
        self.conv1d_padded(x, w, stride, dilation, pl, pr)
    }

    pub fn conv1d_padded(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 2 || sw.len() != 3 {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (c_in, t_in) = (sx[0], sx[1]);
        let (c_out, w_in, k) = (sw[0], sw[1], sw[2]);
        if k == 0 || stride == 0 || dilation == 0 {
            return Err(Error::invalid("conv1d: kernel, stride and dilation must be >= 1"));
        }
        let depthwise = w_in == 1 && c_in == c_out && c_in > 1;
        if !depthwise && w_in != c_in {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let span = dilation * (k - 1) + 1;
        let padded = t_in + pad_left + pad_right;
        if padded < span {
            return Err(Error::Empty {
                op: "conv1d",
                detail: format!("input length {t_in} shorter than kernel span {span}"),
            });
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            k,
            stride,
            dilation,
            pad_left,
            t_in,
            t_out: (padded - span) / stride + 1,
            depthwise,
        };
        let out = conv_forward(&geom, self.data(x), self.data(w));
        let value = Tensor::new(vec![c_out, geom.t_out], out)?;
        Ok(self.push(value, &[x, w], || Op::Conv1d { x, w, geom }))
    }

    /// Max pooling along time of `x: [C, T]`.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || kernel == 0 || stride == 0 {
            return Err(Error::invalid(format!("max_pool1d on shape {s:?}")));
        }
        let (c, t) = (s[0], s[1]);
        if t < kernel {
            return Err(Error::Empty {
                op: "max_pool1d",
                detail: format!("length {t} < kernel {kernel}"),
            });
        }
        let t_out = (t - kernel) / stride + 1;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(c * t_out);
        let mut argmax = Vec::with_capacity(c * t_out);
        for ch in 0..c {
            for j in 0..t_out {
                let base = ch * t + j * stride;
                let mut best = base;
                for i in base + 1..base + kernel {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![c, t_out], out)?;
        Ok(self.push(value, &[x], || Op::MaxPool { x, argmax }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::invalid("softmax on scalar"))?;
        if d == 0 {
            return Err(Error::Empty {
                op: "softmax",
                detail: "zero-width axis".into(),
            });
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks(d) {
            let m = row.iter().copied().fold(R::neg_infinity(), R::max);
            let start = out.len();
            let mut z = R::zero();
            for &v in row {
                let e = (v - m).exp();
                z += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, &[x], || Op::Softmax(x)))
    }

    /// Layer normalization over the last axis with per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::invalid("layer_norm on scalar"))?;
        if d == 0 || self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: s,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let (xd, gd, bd) = (self.data(x), self.data(gain), self.data(bias));
        let rows = xd.len() / d;
        let mut xhat = Vec::with_capacity(xd.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks(d) {
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            rstd.push(R::lit(r));
            for (j, v) in row.iter().enumerate() {
                let h = R::lit((v.f64() - mean) * r);
                xhat.push(h);
                out.push(h * gd[j] + bd[j]);
            }
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, &[x, gain, bias], || Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        }))
    }

    /// Normalization with statistics over every element of `x: [C, ...]`; gain and bias per channel.
    pub fn global_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || self.value(gain).len() != s[0] || self.value(bias).len() != s[0] {
            return Err(Error::Shape {
                op: "global_norm",
                lhs: s,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let xd = self.data(x);
        if xd.is_empty() {
            return Err(Error::Empty {
                op: "global_norm",
                detail: "no frames".into(),
            });
        }
        let n = xd.len() as f64;
        let mean = xd.iter().map(|v| v.f64()).sum::<f64>() / n;
        let var = xd.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
        let rstd = 1.0 / (var + NORM_EPS).sqrt();
        let inner = xd.len() / s[0];
        let (gd, bd) = (self.data(gain), self.data(bias));
        let xhat: Vec<R> = xd.iter().map(|v| R::lit((v.f64() - mean) * rstd)).collect();
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gd[i / inner] + bd[i / inner])
            .collect();
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, &[x, gain, bias], || Op::GlobalNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        }))
    }

    /// Cumulative layer normalization of `x: [C, T]`.
    ///
    /// Frame `t` is normalized with the mean and variance over all channels of
    /// frames `0..=t`, plus whatever the carried `init` statistics hold.
    pub fn cum_norm(&mut self, x: Var, gain: Var, bias: Var, init: CumStats) -> Result<(Var, CumStats)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || self.value(gain).len() != s[0] || self.value(bias).len() != s[0] {
            return Err(Error::Shape {
                op: "cum_norm",
                lhs: s,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let (c, t) = (s[0], s[1]);
        if t == 0 {
            return Err(Error::Empty {
                op: "cum_norm",
                detail: "no frames".into(),
            });
        }
        let (xd, gd, bd) = (self.data(x), self.data(gain), self.data(bias));
        let mut stats = init;
        let mut mean = Vec::with_capacity(t);
        let mut rstd = Vec::with_capacity(t);
        let mut counts = Vec::with_capacity(t);
        for j in 0..t {
            let mut fs = 0.0;
            let mut fq = 0.0;
            for ch in 0..c {
                let v = xd[ch * t + j].f64();
                fs += v;
                fq += v * v;
            }
            stats.sum += fs;
            stats.sum_sq += fq;
            stats.count += c as f64;
            let m = stats.sum / stats.count;
            let var = (stats.sum_sq / stats.count - m * m).max(0.0);
            mean.push(m);
            rstd.push(1.0 / (var + NORM_EPS).sqrt());
            counts.push(stats.count);
        }
        if super::fault::active(super::fault::Fault::ClnLookahead) && t > 1 {
            mean.remove(0);
            mean.push(mean[t - 2]);
            rstd.remove(0);
            rstd.push(rstd[t - 2]);
        }
        let mut out = vec![R::zero(); c * t];
        for ch in 0..c {
            for j in 0..t {
                let h = (xd[ch * t + j].f64() - mean[j]) * rstd[j];
                out[ch * t + j] = R::lit(h) * gd[ch] + bd[ch];
            }
        }
        let value = Tensor::new(s, out)?;
        let v = self.push(value, &[x, gain, bias], || Op::CumNorm {
            x,
            gain,
            bias,
            mean,
            rstd,
            counts,
        });
        Ok((v, stats))
    }

    /// Linear resampling of `x: [N, T_in]` to `T_out` frames with both endpoints kept.
    pub fn interp_time(&mut self, x: Var, t_out: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::Empty {
                op: "interp",
                detail: format!("input shape {s:?}"),
            });
        }
        if t_out == 0 {
            return Err(Error::invalid("interp: target length must be >= 1"));
        }
        let (n, t_in) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = vec![R::zero(); n * t_out];
        for_each_interp(t_in, t_out, |to, i0, i1, w| {
            let w = R::lit(w);
            for c in 0..n {
                out[c * t_out + to] = (R::one() - w) * xd[c * t_in + i0] + w * xd[c * t_in + i1];
            }
        });
        let value = Tensor::new(vec![n, t_out], out)?;
        Ok(self.push(value, &[x], || Op::Interp { x, t_in, t_out }))
    }

    /// Overlap-add of `x: [C, F, Lf]` frames spaced `hop` apart into `[C, out_len]`,
    /// dropping the first `offset` output positions.
    pub fn overlap_add(&mut self, x: Var, hop: usize, offset: usize, out_len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::invalid(format!("overlap_add expects [C, F, L], got {s:?}")));
        }
        if hop == 0 || hop > s[2] {
            return Err(Error::invalid(format!("overlap_add: hop {hop} must be in 1..={}", s[2])));
        }
        let geom = OlaGeom {
            channels: s[0],
            frames: s[1],
            frame_len: s[2],
            hop,
            offset,
            out_len,
        };
        let out = ola_forward(&geom, self.data(x));
        let value = Tensor::new(vec![s[0], out_len], out)?;
        Ok(self.push(value, &[x], || Op::OverlapAdd { x, geom }))
    }

    /// Strided framing of `x: [C, T]` into `[C, frames, frame_len]`; the signal is
    /// shifted right by `offset` zeros and read past its end as zeros.
    pub fn frame(&mut self, x: Var, frame_len: usize, hop: usize, offset: usize, frames: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || hop == 0 || frame_len == 0 {
            return Err(Error::invalid(format!("frame: bad input {s:?}")));
        }
        let geom = OlaGeom {
            channels: s[0],
            frames,
            frame_len,
            hop,
            offset,
            out_len: s[1],
        };
        let out = frame_forward(&geom, self.data(x));
        let value = Tensor::new(vec![s[0], frames, frame_len], out)?;
        Ok(self.push(value, &[x], || Op::Frame { x, geom }))
    }

    /// Repeat `x: [N]` along a new trailing time axis of length `t`.
    pub fn broadcast_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(Error::invalid(format!("broadcast_time expects a vector, got {s:?}")));
        }
        let mut out = Vec::with_capacity(s[0] * t);
        for &v in self.data(x) {
            out.extend(std::iter::repeat_n(v, t));
        }
        let value = Tensor::new(vec![s[0], t], out)?;
        Ok(self.push(value, &[x], || Op::Broadcast { x, t }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: f64 = self.data(x).iter().map(|v| v.f64()).sum();
        let value = Tensor::scalar(R::lit(total));
        self.push(value, &[x], || Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, R::lit(1.0 / n as f64))
    }

    /// Records a scalar whose gradient w.r.t. `x` is already known.
    pub(crate) fn scalar_loss(&mut self, x: Var, value: R, grad: Vec<R>) -> Var {
        debug_assert_eq!(grad.len(), self.value(x).len());
        self.push(Tensor::scalar(value), &[x], || Op::ScalarLoss { x, grad })
    }

    /// Vector-Jacobian products of node `idx` given its output gradient.
    pub(crate) fn adjoint(&self, idx: usize, gy: &[R]) -> Result<Vec<(Var, Vec<R>)>> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, gy.to_vec()), (*b, gy.to_vec())],
            Op::Sub(a, b) => vec![(*a, gy.to_vec()), (*b, gy.iter().map(|&g| -g).collect())],
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                vec![
                    (*a, gy.iter().zip(bd).map(|(&g, &v)| g * v).collect()),
                    (*b, gy.iter().zip(ad).map(|(&g, &v)| g * v).collect()),
                ]
            }
            Op::Scale(x, s) => vec![(*x, gy.iter().map(|&g| g * *s).collect())],
            Op::AddBias { x, b, axis } => {
                let (outer, mid, inner) = outer_inner(node.value.shape(), *axis);
                let mut gb = vec![R::zero(); mid];
                for o in 0..outer {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        let base = (o * mid + c) * inner;
                        for &g in &gy[base..base + inner] {
                            *acc += g;
                        }
                    }
                }
                vec![(*x, gy.to_vec()), (*b, gb)]
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                vec![(*x, gy.iter().zip(xd).map(|(&g, &v)| if v > R::zero() { g } else { R::zero() }).collect())]
            }
            Op::Sigmoid(x) => vec![(*x, gy.iter().zip(y).map(|(&g, &s)| g * s * (R::one() - s)).collect())],
            Op::Tanh(x) => vec![(*x, gy.iter().zip(y).map(|(&g, &t)| g * (R::one() - t * t)).collect())],
            Op::Prelu { x, alpha, axis } => {
                let (outer, mid, inner) = outer_inner(node.value.shape(), *axis);
                let (xd, ad) = (self.data(*x), self.data(*alpha));
                let shared = ad.len() == 1;
                let mut gx = vec![R::zero(); xd.len()];
                let mut ga = vec![R::zero(); ad.len()];
                for o in 0..outer {
                    for c in 0..mid {
                        let ai = if shared { 0 } else { c };
                        let base = (o * mid + c) * inner;
                        for i in base..base + inner {
                            if xd[i] > R::zero() {
                                gx[i] = gy[i];
                            } else {
                                gx[i] = gy[i] * ad[ai];
                                ga[ai] += gy[i] * xd[i];
                            }
                        }
                    }
                }
                vec![(*x, gx), (*alpha, ga)]
            }
            Op::Matmul {
                a,
                b,
                batch,
                p,
                q,
                r,
                shared_b,
            } => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let (batch, p, q, r) = (*batch, *p, *q, *r);
                let mut ga = vec![R::zero(); batch * p * q];
                let mut gb = vec![R::zero(); bd.len()];
                if *shared_b {
                    R::gemm(batch * p, r, q, gy, false, bd, true, &mut ga, false);
                    R::gemm(q, batch * p, r, ad, true, gy, false, &mut gb, false);
                } else {
                    for i in 0..batch {
                        R::gemm(p, r, q, &gy[i * p * r..], false, &bd[i * q * r..], true, &mut ga[i * p * q..], false);
                        R::gemm(q, p, r, &ad[i * p * q..], true, &gy[i * p * r..], false, &mut gb[i * q * r..], false);
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                let (g, _) = permute_data(gy, node.value.shape(), &inv);
                vec![(*x, g)]
            }
            Op::Reshape(x) => vec![(*x, gy.to_vec())],
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, mid, inner) = outer_inner(xs, *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![R::zero(); self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&gy[src..src + len * inner]);
                }
                vec![(*x, gx)]
            }
            Op::Concat { xs, axis } => {
                let shape = node.value.shape();
                let total = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut res = Vec::with_capacity(xs.len());
                let mut off = 0;
                for &v in xs {
                    let m = self.shape(v)[*axis];
                    let mut g = Vec::with_capacity(outer * m * inner);
                    for o in 0..outer {
                        let base = (o * total + off) * inner;
                        g.extend_from_slice(&gy[base..base + m * inner]);
                    }
                    off += m;
                    res.push((v, g));
                }
                res
            }
            Op::Conv1d { x, w, geom } => {
                let (gx, gw) = conv_backward(geom, self.data(*x), self.data(*w), gy);
                vec![(*x, gx), (*w, gw)]
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![R::zero(); self.value(*x).len()];
                for (&i, &g) in argmax.iter().zip(gy) {
                    gx[i] += g;
                }
                vec![(*x, gx)]
            }
            Op::Softmax(x) => {
                let d = *node.value.shape().last().unwrap();
                let mut gx = Vec::with_capacity(gy.len());
                for (gr, yr) in gy.chunks(d).zip(y.chunks(d)) {
                    let dot: R = gr.iter().zip(yr).map(|(&g, &s)| g * s).sum();
                    gx.extend(gr.iter().zip(yr).map(|(&g, &s)| s * (g - dot)));
                }
                vec![(*x, gx)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gd = self.data(*gain);
                let d = gd.len();
                let mut gx = Vec::with_capacity(gy.len());
                let mut gg = vec![R::zero(); d];
                let mut gb = vec![R::zero(); d];
                for (row, (gr, hr)) in gy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let dh = (gr[j] * gd[j]).f64();
                        m1 += dh;
                        m2 += dh * hr[j].f64();
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    let r = rstd[row].f64();
                    for j in 0..d {
                        let dh = (gr[j] * gd[j]).f64();
                        gx.push(R::lit(r * (dh - m1 - hr[j].f64() * m2)));
                    }
                }
                vec![(*x, gx), (*gain, gg), (*bias, gb)]
            }
            Op::GlobalNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gd = self.data(*gain);
                let c = gd.len();
                let inner = gy.len() / c;
                let n = gy.len() as f64;
                let mut gg = vec![R::zero(); c];
                let mut gb = vec![R::zero(); c];
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for (i, (&g, &h)) in gy.iter().zip(xhat).enumerate() {
                    let ch = i / inner;
                    let dh = (g * gd[ch]).f64();
                    m1 += dh;
                    m2 += dh * h.f64();
                    gg[ch] += g * h;
                    gb[ch] += g;
                }
                m1 /= n;
                m2 /= n;
                let gx = gy
                    .iter()
                    .zip(xhat)
                    .enumerate()
                    .map(|(i, (&g, &h))| {
                        let dh = (g * gd[i / inner]).f64();
                        R::lit(rstd * (dh - m1 - h.f64() * m2))
                    })
                    .collect();
                vec![(*x, gx), (*gain, gg), (*bias, gb)]
            }
            Op::CumNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
                counts,
            } => {
                let (xd, gd) = (self.data(*x), self.data(*gain));
                let c = gd.len();
                let t = mean.len();
                let mut gg = vec![R::zero(); c];
                let mut gb = vec![R::zero(); c];
                // per-frame adjoints of the running sums S_t and Q_t
                let mut d_s = vec![0.0; t];
                let mut d_q = vec![0.0; t];
                for j in 0..t {
                    let (m, r) = (mean[j], rstd[j]);
                    let mut dr = 0.0;
                    let mut dmu = 0.0;
                    for ch in 0..c {
                        let i = ch * t + j;
                        let xv = xd[i].f64();
                        let g = gy[i].f64();
                        let h = (xv - m) * r;
                        gg[ch] += R::lit(g * h);
                        gb[ch] += gy[i];
                        let dh = g * gd[ch].f64();
                        dr += dh * (xv - m);
                        dmu -= dh * r;
                    }
                    let dv = -0.5 * r * r * r * dr;
                    let n = counts[j];
                    d_s[j] = (dmu - 2.0 * m * dv) / n;
                    d_q[j] = dv / n;
                }
                // suffix sums: x at frame τ feeds every S_t, Q_t with t ≥ τ
                for j in (0..t.saturating_sub(1)).rev() {
                    d_s[j] += d_s[j + 1];
                    d_q[j] += d_q[j + 1];
                }
                let mut gx = vec![R::zero(); xd.len()];
                for ch in 0..c {
                    for j in 0..t {
                        let i = ch * t + j;
                        let direct = gy[i].f64() * gd[ch].f64() * rstd[j];
                        gx[i] = R::lit(direct + d_s[j] + 2.0 * xd[i].f64() * d_q[j]);
                    }
                }
                vec![(*x, gx), (*gain, gg), (*bias, gb)]
            }
            Op::Lstm(tape) => tape.adjoint(self, gy),
            Op::Interp { x, t_in, t_out } => {
                let n = self.shape(*x)[0];
                let mut gx = vec![R::zero(); n * t_in];
                for_each_interp(*t_in, *t_out, |to, i0, i1, w| {
                    let w = R::lit(w);
                    for c in 0..n {
                        let g = gy[c * t_out + to];
                        gx[c * t_in + i0] += (R::one() - w) * g;
                        gx[c * t_in + i1] += w * g;
                    }
                });
                vec![(*x, gx)]
            }
            Op::OverlapAdd { x, geom } => vec![(*x, frame_forward(geom, gy))],
            Op::Frame { x, geom } => vec![(*x, ola_forward(geom, gy))],
            Op::Broadcast { x, t } => vec![(*x, gy.chunks(*t).map(|c| c.iter().copied().sum()).collect())],
            Op::SumAll(x) => vec![(*x, vec![gy[0]; self.value(*x).len()])],
            Op::ScalarLoss { x, grad } => vec![(*x, grad.iter().map(|&g| g * gy[0]).collect())],
        })
    }
}

/// Calls `f(out_index, i0, i1, weight)` for endpoint-aligned linear resampling.
pub(crate) fn for_each_interp(t_in: usize, t_out: usize, mut f: impl FnMut(usize, usize, usize, f64)) {
    if t_out == 1 || t_in == 1 {
        for to in 0..t_out {
            f(to, 0, 0, 0.0);
        }
        return;
    }
    let den = t_out - 1;
    for to in 0..t_out {
        let num = to * (t_in - 1);
        let i0 = num / den;
        let rem = num % den;
        let i1 = (i0 + 1).min(t_in - 1);
        f(to, i0, i1, rem as f64 / den as f64);
    }
}

fn ola_forward<R: Real>(geom: &OlaGeom, x: &[R]) -> Vec<R> {
    let per_ch_in = geom.frames * geom.frame_len;
    let mut out = vec![R::zero(); geom.channels * geom.out_len];
    for c in 0..geom.channels {
        let xs = &x[c * per_ch_in..(c + 1) * per_ch_in];
        let os = &mut out[c * geom.out_len..(c + 1) * geom.out_len];
        geom.for_each(|i, p| os[p] += xs[i]);
    }
    out
}

fn frame_forward<R: Real>(geom: &OlaGeom, x: &[R]) -> Vec<R> {
    let per_ch_out = geom.frames * geom.frame_len;
    let mut out = vec![R::zero(); geom.channels * per_ch_out];
    for c in 0..geom.channels {
        let xs = &x[c * geom.out_len..(c + 1) * geom.out_len];
        let os = &mut out[c * per_ch_out..(c + 1) * per_ch_out];
        geom.for_each(|i, p| os[i] = xs[p]);
    }
    out
}

fn conv_src(g: &ConvGeom, t: usize, kk: usize) -> Option<usize> {
    let pos = t * g.stride + kk * g.dilation;
    if pos < g.pad_left {
        return None;
    }
    let pos = pos - g.pad_left;
    (pos < g.t_in).then_some(pos)
}

fn im2col<R: Real>(g: &ConvGeom, x: &[R]) -> Vec<R> {
    let mut cols = vec![R::zero(); g.c_in * g.k * g.t_out];
    for ci in 0..g.c_in {
        for kk in 0..g.k {
            let row = &mut cols[(ci * g.k + kk) * g.t_out..(ci * g.k + kk + 1) * g.t_out];
            for (t, slot) in row.iter_mut().enumerate() {
                if let Some(p) = conv_src(g, t, kk) {
                    *slot = x[ci * g.t_in + p];
                }
            }
        }
    }
    cols
}

fn conv_forward<R: Real>(g: &ConvGeom, x: &[R], w: &[R]) -> Vec<R> {
    let mut out = vec![R::zero(); g.c_out * g.t_out];
    if g.depthwise {
        for c in 0..g.c_out {
            let o = &mut out[c * g.t_out..(c + 1) * g.t_out];
            for kk in 0..g.k {
                let wv = w[c * g.k + kk];
                for (t, slot) in o.iter_mut().enumerate() {
                    if let Some(p) = conv_src(g, t, kk) {
                        *slot += wv * x[c * g.t_in + p];
                    }
                }
            }
        }
    } else {
        let cols = im2col(g, x);
        R::gemm(g.c_out, g.c_in * g.k, g.t_out, w, false, &cols, false, &mut out, false);
    }
    out
}

fn conv_backward<R: Real>(g: &ConvGeom, x: &[R], w: &[R], gy: &[R]) -> (Vec<R>, Vec<R>) {
    let mut gx = vec![R::zero(); g.c_in * g.t_in];
    let mut gw = vec![R::zero(); w.len()];
    if g.depthwise {
        for c in 0..g.c_out {
            let go = &gy[c * g.t_out..(c + 1) * g.t_out];
            for kk in 0..g.k {
                let wv = w[c * g.k + kk];
                let mut acc = R::zero();
                for (t, &gv) in go.iter().enumerate() {
                    if let Some(p) = conv_src(g, t, kk) {
                        acc += gv * x[c * g.t_in + p];
                        gx[c * g.t_in + p] += gv * wv;
                    }
                }
                gw[c * g.k + kk] = acc;
            }
        }
    } else {
        let ck = g.c_in * g.k;
        let cols = im2col(g, x);
        R::gemm(g.c_out, g.t_out, ck, gy, false, &cols, true, &mut gw, false);
        let mut gcols = vec![R::zero(); ck * g.t_out];
        R::gemm(ck, g.c_out, g.t_out, w, true, gy, false, &mut gcols, false);
        for ci in 0..g.c_in {
            for kk in 0..g.k {
                let row = &gcols[(ci * g.k + kk) * g.t_out..(ci * g.k + kk + 1) * g.t_out];
                for (t, &gv) in row.iter().enumerate() {
                    if let Some(p) = conv_src(g, t, kk) {
                        gx[ci * g.t_in + p] += gv;
                    }
                }
            }
        }
    }
    (gx, gw)
}
