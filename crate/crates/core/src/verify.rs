//! The invariant battery behind `neuroheed verify`: gradient oracles,
//! causality, streaming contracts, metric and schedule arithmetic.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{eeg_frames_for, preprocess_eeg, rereference, EegPreprocess, EegRecording};
use crate::error::{Error, Result};
use crate::model::{
    extract, forward, frames_for, load_checkpoint, samples_for, save_checkpoint, speaker_encode, Attractors,
    Checkpoint, Ctx, ExtractorKind, Model, ModelConfig, ModelParams,
};
use crate::numerics::fault::{with_fault, Fault};
use crate::numerics::{grad_check, si_sdr, ConvMode, Coords, CumStats, Graph, LstmWeights, Tensor, Var};
use crate::streaming::{normalization_gain, stream_utterance, StreamConfig, GAIN_CLAMP};
use crate::training::{lr_at, two_pass_grads, LossKind, LrController, Pass1, TrainConfig, TrainWindow};

/// Relative error bound of every gradient check.
pub const GRAD_TOL: f64 = 1e-4;
/// Max-abs bound of the streaming-offline comparison.
pub const EQUIVALENCE_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One `PASS`/`FAIL` line per check.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{tag} {:<36} {:>7.2}s  {}\n", c.name, c.seconds, c.detail));
        }
        let bad = self.failures().len();
        s.push_str(&format!("{} checks, {} failed\n", self.checks.len(), bad));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Random points per gradient check.
    pub grad_points: u64,
    pub equivalence_utterances: usize,
    pub equivalence_seconds: f64,
    /// Defect injected for the duration of the run.
    pub fault: Option<Fault>,
    /// Only checks whose name starts with one of these prefixes (all when empty).
    pub only: Vec<String>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            grad_points: 10,
            equivalence_utterances: 10,
            equivalence_seconds: 4.0,
            fault: None,
            only: Vec::new(),
        }
    }
}

type CheckFn = fn(&VerifyOptions) -> Result<(bool, String)>;

/// Names of every check, in run order.
pub fn check_names() -> Vec<&'static str> {
    battery().iter().map(|(n, _)| *n).collect()
}

fn battery() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("grad.ops", grad_ops),
        ("grad.model.dprnn", |o| grad_model(o, ExtractorKind::Dprnn)),
        ("grad.model.tcn", |o| grad_model(o, ExtractorKind::Tcn)),
        ("grad.model.causal_tcn", |o| grad_model(o, ExtractorKind::CausalTcn)),
        ("grad.model.key_bias_zero", key_bias_zero),
        ("grad.two_pass.pass1_detached", pass1_detached),
        ("causality.conv1d", causal_conv),
        ("causality.cln", causal_cln),
        ("causality.causal_tcn", causal_tcn),
        ("sisdr.examples", sisdr_examples),
        ("sisdr.scale_invariance", sisdr_scale),
        ("lr.schedule", lr_schedule),
        ("framing.arithmetic", framing),
        ("eeg.preprocessing", eeg_preprocessing),
        ("streaming.chunk_accounting", chunk_accounting),
        ("streaming.enrollment_identity", enrollment_identity),
        ("streaming.normalization_guards", normalization_guards),
        ("streaming.offline_equivalence", offline_equivalence),
        ("checkpoint.round_trip", checkpoint_round_trip),
    ]
}

/// Runs the battery on the current thread.
pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let run = || {
        let mut report = VerifyReport::default();
        for (name, f) in battery() {
            if !opts.only.is_empty() && !opts.only.iter().any(|p| name.starts_with(p.as_str())) {
                continue;
            }
            let t = Instant::now();
            let (passed, detail) = match f(opts) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            log::info!("{name}: {}", if passed { "pass" } else { "FAIL" });
            report.checks.push(CheckResult {
                name: name.to_string(),
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            });
        }
        report
    };
    match opts.fault {
        Some(f) => with_fault(f, run),
        None => run(),
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(rand_tensor(&mut rng, g.shape(y)));
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn op_table() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    let lstm = |reverse: bool| -> OpFn {
        Box::new(move |g, v| {
            let w = LstmWeights {
                w_ih: v[1],
                w_hh: v[2],
                bias: v[3],
            };
            Ok(g.lstm(v[0], w, None, reverse)?.0)
        })
    };
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![vec![3, 4]], Box::new(|g, v| Ok(g.scale(v[0], -1.7)))),
        ("add_bias", vec![vec![2, 3, 4], vec![3]], Box::new(|g, v| g.add_bias(v[0], v[1], 1))),
        ("relu", vec![vec![3, 4]], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("sigmoid", vec![vec![3, 4]], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("tanh", vec![vec![3, 4]], Box::new(|g, v| Ok(g.tanh(v[0])))),
        ("prelu", vec![vec![3, 4], vec![3]], Box::new(|g, v| g.prelu(v[0], v[1], 0))),
        ("matmul", vec![vec![2, 3, 4], vec![2, 4, 5]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_shared", vec![vec![2, 3, 4], vec![4, 5]], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("permute", vec![vec![2, 3, 4]], Box::new(|g, v| g.permute(v[0], &[2, 0, 1]))),
        ("reshape", vec![vec![2, 3, 4]], Box::new(|g, v| g.reshape(v[0], &[6, 4]))),
        ("slice", vec![vec![2, 5, 4]], Box::new(|g, v| g.slice(v[0], 1, 1, 3))),
        ("concat", vec![vec![2, 3], vec![2, 4]], Box::new(|g, v| g.concat(&[v[0], v[1]], 1))),
        (
            "conv1d_valid",
            vec![vec![3, 12], vec![2, 3, 4]],
            Box::new(|g, v| g.conv1d(v[0], v[1], 2, 1, ConvMode::Valid)),
        ),
        (
            "conv1d_causal",
            vec![vec![3, 12], vec![2, 3, 3]],
            Box::new(|g, v| g.conv1d(v[0], v[1], 1, 2, ConvMode::Causal)),
        ),
        (
            "conv1d_same",
            vec![vec![3, 12], vec![4, 3, 3]],
            Box::new(|g, v| g.conv1d(v[0], v[1], 1, 4, ConvMode::Same)),
        ),
        (
            "conv1d_depthwise",
            vec![vec![3, 12], vec![3, 1, 3]],
            Box::new(|g, v| g.conv1d(v[0], v[1], 1, 2, ConvMode::Causal)),
        ),
        ("max_pool1d", vec![vec![3, 9]], Box::new(|g, v| g.max_pool1d(v[0], 2, 2))),
        ("softmax", vec![vec![3, 5]], Box::new(|g, v| g.softmax(v[0]))),
        ("layer_norm", vec![vec![4, 6], vec![6], vec![6]], Box::new(|g, v| g.layer_norm(v[0], v[1], v[2]))),
        ("global_norm", vec![vec![3, 6], vec![3], vec![3]], Box::new(|g, v| g.global_norm(v[0], v[1], v[2]))),
        (
            "cum_norm",
            vec![vec![3, 6], vec![3], vec![3]],
            Box::new(|g, v| {
                let init = CumStats {
                    sum: 0.4,
                    sum_sq: 5.0,
                    count: 6.0,
                };
                Ok(g.cum_norm(v[0], v[1], v[2], init)?.0)
            }),
        ),
        ("interp_up", vec![vec![3, 5]], Box::new(|g, v| g.interp_time(v[0], 13))),
        ("interp_down", vec![vec![3, 7]], Box::new(|g, v| g.interp_time(v[0], 4))),
        ("overlap_add", vec![vec![2, 5, 4]], Box::new(|g, v| g.overlap_add(v[0], 2, 1, 9))),
        ("frame", vec![vec![2, 11]], Box::new(|g, v| g.frame(v[0], 4, 2, 2, 6))),
        ("broadcast_time", vec![vec![3]], Box::new(|g, v| g.broadcast_time(v[0], 5))),
        ("lstm", vec![vec![2, 3, 4], vec![4, 12], vec![3, 12], vec![12]], lstm(false)),
        ("lstm_reverse", vec![vec![2, 3, 4], vec![4, 12], vec![3, 12], vec![12]], lstm(true)),
    ]
}

fn grad_ops(o: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (name, shapes, f) in op_table() {
        for point in 0..o.grad_points {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + point);
            let inputs: Vec<_> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            let r = grad_check(&inputs, Coords::All, |g, v| {
                let y = f(g, v)?;
                weighted_sum(g, y, 77 + point)
            })?;
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(r.max_rel_err);
        }
    }
    for point in 0..o.grad_points {
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let s = rand_vec(&mut rng, 32);
        let est = Tensor::from_fn([32], |i| s[i] + rng.random_range(-0.5..0.5));
        let r = grad_check(&[est], Coords::All, |g, v| g.si_sdr_loss(v[0], &s, false))?;
        let w = worst.entry("si_sdr_loss").or_insert(0.0);
        *w = w.max(r.max_rel_err);
    }
    let bad: Vec<String> = worst
        .iter()
        .filter(|(_, &e)| e > GRAD_TOL)
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let max = worst.values().fold(0.0f64, |a, &b| a.max(b));
    if bad.is_empty() {
        Ok((true, format!("{} ops x {} points, max rel err {max:.2e}", worst.len(), o.grad_points)))
    } else {
        Ok((false, format!("over {GRAD_TOL:e}: {}", bad.join(", "))))
    }
}

/// Parameters whose true gradient is zero: softmax ignores the key bias.
pub fn is_key_bias(name: &str) -> bool {
    name.starts_with("eeg.sa") && name.ends_with(".k.b")
}

/// Inputs of one full-model gradient check.
struct ModelPoint {
    x: Vec<f64>,
    s: Vec<f64>,
    past: Vec<f64>,
    r: Tensor<f64>,
}

impl ModelPoint {
    fn random(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            x: rand_vec(&mut rng, 40),
            s: rand_vec(&mut rng, 40),
            past: rand_vec(&mut rng, 30),
            r: rand_tensor(&mut rng, &[cfg.eeg_channels, 5]),
        }
    }

    /// SI-SDR loss of the full model with the speaker encoder on the pseudo past.
    fn loss(
        &self,
        g: &mut Graph<f64>,
        cfg: &ModelConfig,
        params: &ModelParams<f64>,
        bound: BTreeMap<String, Var>,
    ) -> Result<Var> {
        let mut ctx = Ctx::with_bound(g, params, bound);
        let xv = ctx.g.constant(Tensor::new([1, self.x.len()], self.x.clone())?);
        let rv = ctx.g.constant(self.r.clone());
        let pv = ctx.g.constant(Tensor::new([1, self.past.len()], self.past.clone())?);
        let a_s = speaker_encode(&mut ctx, cfg, pv, None)?.0;
        let y = forward(&mut ctx, cfg, xv, rv, a_s)?;
        ctx.g.si_sdr_loss(y, &self.s, false)
    }
}

/// Worst relative error of the reduced model's full gradient over `points`
/// random draws, one random direction per parameter tensor.
pub fn full_model_grad_error(kind: ExtractorKind, points: u64) -> Result<f64> {
    let cfg = ModelConfig::reduced(kind);
    let mut worst: f64 = 0.0;
    for point in 0..points {
        let params = ModelParams::<f64>::init(&cfg, 100 + point)?;
        let data = ModelPoint::random(&cfg, 200 + point);
        let names: Vec<String> = params.tensors.keys().filter(|k| !is_key_bias(k)).cloned().collect();
        let inputs: Vec<Tensor<f64>> = names.iter().map(|k| params.tensors[k].clone()).collect();
        let rep = grad_check(&inputs, Coords::Direction { seed: point }, |g, vars| {
            let bound = names.iter().cloned().zip(vars.iter().copied()).collect();
            data.loss(g, &cfg, &params, bound)
        })?;
        worst = worst.max(rep.max_rel_err);
    }
    Ok(worst)
}

fn grad_model(o: &VerifyOptions, kind: ExtractorKind) -> Result<(bool, String)> {
    let err = full_model_grad_error(kind, o.grad_points)?;
    Ok((
        err <= GRAD_TOL,
        format!("{} points, every parameter tensor, max rel err {err:.2e}", o.grad_points),
    ))
}

fn key_bias_zero(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = ModelConfig::reduced(ExtractorKind::Dprnn);
    let params = ModelParams::<f64>::init(&cfg, 3)?;
    let data = ModelPoint::random(&cfg, 4);
    let mut g2 = Graph::new();
    let mut ctx = Ctx::new(&mut g2, &params);
    for k in params.tensors.keys() {
        ctx.p(k)?;
    }
    let bound = ctx.bound().clone();
    let loss2 = data.loss(&mut g2, &cfg, &params, bound.clone())?;
    let grads2 = g2.backward(loss2)?;
    let max_of = |pred: &dyn Fn(&str) -> bool| {
        bound
            .iter()
            .filter(|(k, _)| pred(k))
            .filter_map(|(_, &v)| grads2.get(v))
            .flat_map(|d| d.iter().map(|x| x.abs()))
            .fold(0.0f64, f64::max)
    };
    let kb = max_of(&|k| is_key_bias(k));
    let qb = max_of(&|k| k.starts_with("eeg.sa") && k.ends_with(".q.b"));
    Ok((kb < 1e-12 && qb > 1e-8, format!("|d key bias| {kb:.1e}, |d query bias| {qb:.1e}")))
}

fn pass1_detached(_: &VerifyOptions) -> Result<(bool, String)> {
    let m = Model::<f64>::new(ModelConfig::reduced(ExtractorKind::Dprnn), 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_vec(&mut rng, 3000);
    let s = rand_vec(&mut rng, 3000);
    let frames = eeg_frames_for(3000);
    let eeg = EegRecording::new(
        4,
        128.0,
        (0..4 * frames).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        true,
    )?;
    let w = TrainWindow {
        m: 1000,
        k: 2500,
        n: 3000,
        eeg_m: eeg_frames_for(1000),
        eeg_k: eeg_frames_for(2500),
        eeg_n: eeg_frames_for(3000),
    };
    let run = |p| two_pass_grads(&m.params, &m.config, &x, &eeg, &s, &w, false, LossKind::SiSdr, p);
    let a = run(Pass1::GradientFree)?;
    let b = run(Pass1::RecordedDetached)?;
    let same = a.grads == b.grads && a.loss == b.loss;
    Ok((same, format!("{} gradient tensors compared bitwise", a.grads.len())))
}

/// First output frame that changed, if any, before `t0`.
fn first_change_before(a: &Tensor<f64>, b: &Tensor<f64>, t0: usize) -> Option<usize> {
    let (c, t) = (a.dim(0), a.dim(1));
    (0..t0.min(t)).find(|&j| (0..c).any(|ch| a.at2(ch, j) != b.at2(ch, j)))
}

fn causal_conv(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[3, 30]);
    let w = rand_tensor(&mut rng, &[4, 3, 3]);
    let t0 = 17;
    let mut y = x.clone();
    for ch in 0..3 {
        y.data_mut()[ch * 30 + t0] += 1.0;
    }
    let mut g = Graph::no_grad();
    let (xv, yv, wv) = (g.constant(x), g.constant(y), g.constant(w));
    let a = g.conv1d(xv, wv, 1, 4, ConvMode::Causal)?;
    let b = g.conv1d(yv, wv, 1, 4, ConvMode::Causal)?;
    let bad = first_change_before(g.value(a), g.value(b), t0);
    Ok((bad.is_none(), describe_causality(bad, t0)))
}

fn describe_causality(bad: Option<usize>, t0: usize) -> String {
    match bad {
        None => format!("outputs before frame {t0} unchanged by a perturbation at {t0}"),
        Some(j) => format!("output frame {j} depends on future frame {t0}"),
    }
}

fn causal_cln(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[4, 20]);
    let t0 = 11;
    let mut y = x.clone();
    y.data_mut()[t0] += 2.0;
    let mut g = Graph::no_grad();
    let (xv, yv) = (g.constant(x), g.constant(y));
    let gain = g.constant(Tensor::full([4], 1.0));
    let bias = g.constant(Tensor::zeros([4]));
    let a = g.cum_norm(xv, gain, bias, CumStats::default())?.0;
    let b = g.cum_norm(yv, gain, bias, CumStats::default())?.0;
    let bad = first_change_before(g.value(a), g.value(b), t0);
    Ok((bad.is_none(), describe_causality(bad, t0)))
}

fn causal_tcn(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = ModelConfig::reduced(ExtractorKind::CausalTcn);
    let params = ModelParams::<f64>::init(&cfg, 10)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let t = 24;
    let x = Tensor::from_fn([cfg.n, t], |_| rng.random_range(0.0..1.0));
    let ar = rand_tensor(&mut rng, &[cfg.n, t]);
    let a_s = rand_tensor(&mut rng, &[cfg.n]);
    let t0 = 15;
    let mut y = x.clone();
    for ch in 0..cfg.n {
        y.data_mut()[ch * t + t0] += 0.5;
    }
    let mut g = Graph::no_grad();
    let mut ctx = Ctx::new(&mut g, &params);
    let neuronal = ctx.g.constant(ar);
    let auditory = Some(ctx.g.constant(a_s));
    let att = Attractors { neuronal, auditory };
    let (xv, yv) = (ctx.g.constant(x), ctx.g.constant(y));
    let ma = extract(&mut ctx, &cfg, xv, &att)?;
    let mb = extract(&mut ctx, &cfg, yv, &att)?;
    let bad = first_change_before(g.value(ma), g.value(mb), t0);
    Ok((bad.is_none(), describe_causality(bad, t0)))
}

fn sisdr_examples(_: &VerifyOptions) -> Result<(bool, String)> {
    let s = [1.0, 0.0, 0.0, 0.0];
    let zero_db = si_sdr(&s, &[1.0, 1.0, 0.0, 0.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sv = rand_vec(&mut rng, 64);
    let mut e = rand_vec(&mut rng, 64);
    let dot: f64 = e.iter().zip(&sv).map(|(a, b)| a * b).sum::<f64>() / sv.iter().map(|v| v * v).sum::<f64>();
    for (a, b) in e.iter_mut().zip(&sv) {
        *a -= dot * b;
    }
    let scale = (sv.iter().map(|v| v * v).sum::<f64>() / e.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let est: Vec<f64> = sv.iter().zip(&e).map(|(a, b)| a + 0.1 * scale * b).collect();
    let twenty = si_sdr(&sv, &est)?;
    let scaled: Vec<f64> = [1.0, 1.0, 0.0, 0.0].iter().map(|v| 3.7 * v).collect();
    let inv = (si_sdr(&s, &scaled)? - zero_db).abs();
    let ok = zero_db.abs() <= 1e-6 && (twenty - 20.0).abs() <= 1e-6 && inv <= 1e-9;
    Ok((ok, format!("{zero_db:.2e} dB, {twenty:.9} dB, 3.7x drift {inv:.1e} dB")))
}

fn sisdr_scale(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rand_vec(&mut rng, 64);
        let e = rand_vec(&mut rng, 64);
        let k = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled: Vec<f64> = e.iter().map(|v| k * v).collect();
        worst = worst.max((si_sdr(&s, &e)? - si_sdr(&s, &scaled)?).abs());
    }
    Ok((worst <= 1e-9, format!("1000 pairs, max drift {worst:.1e} dB")))
}

fn lr_schedule(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = TrainConfig::default();
    let first = lr_at(1, &cfg);
    let peak = lr_at(15_000, &cfg);
    let halved = LrController {
        halvings: 2,
        ..LrController::default()
    }
    .lr(15_000, &cfg);
    let ok = (first / 6.80e-9 - 1.0).abs() <= 0.01
        && (peak / 1.0206e-4 - 1.0).abs() <= 0.001
        && (halved / 2.55e-5 - 1.0).abs() <= 0.001
        && lr_at(15_001, &cfg) == peak;
    Ok((ok, format!("lr(1) {first:.4e}, lr(15000) {peak:.5e}, two halvings {halved:.4e}")))
}

fn framing(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = ModelConfig::default();
    let t = frames_for(&cfg, 8000);
    let back = samples_for(&cfg, 799);
    Ok((t == Some(799) && back == 8000, format!("8000 samples -> {t:?} frames -> {back} samples")))
}

/// 50 Hz to 10 Hz power ratio after preprocessing, dB, at input rate `fs`.
pub fn mains_rejection_db(fs: f64) -> Result<f64> {
    let cfg = EegPreprocess::default();
    let probe = |freq: f64| -> Result<f64> {
        let (c, t) = (4, (fs * 12.0) as usize);
        let mut data = vec![0.0f32; c * t];
        for (j, v) in data.iter_mut().take(t).enumerate() {
            *v = (2.0 * std::f64::consts::PI * freq * j as f64 / fs).sin() as f32;
        }
        let out = preprocess_eeg(&EegRecording::new(c, fs, data, false)?, &cfg)?;
        let n = out.frames();
        Ok((0..c)
            .map(|ch| out.channel(ch)[256..n - 256].iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
            .sum())
    };
    Ok(10.0 * (probe(50.0)? / probe(10.0)?).log10())
}

/// Largest per-sample channel mean after re-referencing, relative to the peak.
pub fn rereference_residual() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (c, t) = (64, 512);
    let mut x: Vec<f64> = (0..c * t).map(|_| rng.random_range(-50.0..50.0)).collect();
    rereference(&mut x, c);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (0..t)
        .map(|j| ((0..c).map(|ch| x[ch * t + j]).sum::<f64>() / c as f64).abs() / peak)
        .fold(0.0, f64::max)
}

fn eeg_preprocessing(_: &VerifyOptions) -> Result<(bool, String)> {
    let a = mains_rejection_db(128.0)?;
    let b = mains_rejection_db(1024.0)?;
    let r = rereference_residual();
    let ok = a <= -40.0 && b <= -40.0 && r <= 1e-9;
    Ok((ok, format!("50 Hz vs 10 Hz: {a:.1} dB (128 Hz in), {b:.1} dB (1024 Hz in); re-ref residual {r:.1e}")))
}

fn random_utterance(seed: u64, samples: usize, channels: usize) -> Result<(Vec<f32>, EegRecording)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let audio = (0..samples).map(|_| rng.random_range(-1.0..1.0)).collect();
    let frames = eeg_frames_for(samples);
    let data = (0..channels * frames).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok((audio, EegRecording::new(channels, 128.0, data, true)?))
}

fn chunk_accounting(_: &VerifyOptions) -> Result<(bool, String)> {
    let m = Model::<f32>::new(ModelConfig::reduced(ExtractorKind::Tcn), 1)?;
    let cfg = StreamConfig::default();
    let (x, r) = random_utterance(14, 32000, 4)?;
    let out = stream_utterance(&m, &cfg, &x, &r)?;
    let ok = out.steps == 30
        && out.state.init_samples == 8000
        && out.audio.len() == out.state.init_samples + out.steps * cfg.chunk_samples()
        && cfg.chunk_samples() == 800
        && out.report.rtf > 0.0;
    Ok((
        ok,
        format!(
            "4 s: {} steps of {} samples after {} init samples; rtf {:.2}",
            out.steps,
            cfg.chunk_samples(),
            out.state.init_samples,
            out.report.rtf
        ),
    ))
}

/// Streams `chunks` steps and compares the carried auditory attractor with one
/// enrolled from the whole emitted history; returns (steps, bitwise equal).
pub fn enrollment_identity_check(chunks: usize) -> Result<(usize, bool)> {
    let m = Model::<f32>::new(ModelConfig::reduced(ExtractorKind::Tcn), 2)?;
    let cfg = StreamConfig {
        w_b: 0.5,
        ..StreamConfig::default()
    };
    let (x, r) = random_utterance(15, 8000 + chunks * 800, 4)?;
    let out = stream_utterance(&m, &cfg, &x, &r)?;
    let sp = out
        .state
        .speaker
        .as_ref()
        .ok_or_else(|| Error::invalid("speaker encoder state missing"))?;
    let carried = m.attractor_from_state(sp)?;
    let (whole, _) = m.enroll(&out.audio, None)?;
    Ok((out.steps, carried.is_some() && carried == whole))
}

fn enrollment_identity(_: &VerifyOptions) -> Result<(bool, String)> {
    let (steps, same) = enrollment_identity_check(24)?;
    Ok((
        same && steps >= 20,
        format!("{steps} chunks; carried a^s {} whole-history a^s", if same { "==" } else { "!=" }),
    ))
}

fn normalization_guards(_: &VerifyOptions) -> Result<(bool, String)> {
    let s: Vec<f32> = (0..400).map(|i| (i as f32 * 0.1).sin()).collect();
    let half: Vec<f32> = s.iter().map(|v| 0.5 * v).collect();
    let zeros = vec![0.0f32; 400];
    let tiny: Vec<f32> = s.iter().map(|v| 1e-4 * v).collect();
    let same = normalization_gain(&s, &s);
    let double = normalization_gain(&s, &half);
    let silent = normalization_gain(&s, &zeros);
    let clamped = normalization_gain(&s, &tiny);
    let ok = (same - 1.0).abs() <= 1e-6
        && (double - 2.0).abs() <= 1e-6
        && silent == 1.0
        && clamped == GAIN_CLAMP.1
        && [same, double, silent, clamped].iter().all(|g| g.is_finite());
    Ok((ok, format!("equal {same}, half {double:.6}, silent {silent}, clamp {clamped}")))
}

/// Worst max-abs difference between streamed and offline output of a causal
/// TCN with the speaker encoder and normalization off, over `utterances`
/// random recordings of `seconds` each.
pub fn offline_equivalence_gap(utterances: usize, seconds: f64) -> Result<f64> {
    let mcfg = ModelConfig::desk(ExtractorKind::CausalTcn);
    let m = Model::<f64>::new(mcfg.clone(), 3)?;
    let rf_samples = mcfg.tcn_receptive_field() * mcfg.hop() + mcfg.l;
    let w_b = (rf_samples as f64 / 8000.0).ceil().max(1.0);
    let cfg = StreamConfig {
        w_b,
        speaker_encoder: false,
        normalize: false,
        ..StreamConfig::default()
    };
    let samples = (seconds * 8000.0) as usize;
    let mut worst: f64 = 0.0;
    for u in 0..utterances {
        let (x, r) = random_utterance(100 + u as u64, samples, mcfg.eeg_channels)?;
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let streamed = stream_utterance(&m, &cfg, &x, &r)?.audio;
        let offline = m.infer_offline(&x, &r)?;
        let gap = streamed.iter().zip(&offline).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn offline_equivalence(o: &VerifyOptions) -> Result<(bool, String)> {
    let gap = offline_equivalence_gap(o.equivalence_utterances, o.equivalence_seconds)?;
    Ok((
        gap <= EQUIVALENCE_TOL,
        format!(
            "{} x {} s utterances, max-abs gap {gap:.3e} (bound {EQUIVALENCE_TOL:e})",
            o.equivalence_utterances, o.equivalence_seconds
        ),
    ))
}

fn checkpoint_round_trip(_: &VerifyOptions) -> Result<(bool, String)> {
    let m = Model::<f32>::new(ModelConfig::reduced(ExtractorKind::Dprnn), 4)?;
    let dir = std::env::temp_dir().join(format!("neuroheed-verify-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("rt.ckpt");
    let ck = Checkpoint {
        config: m.config.clone(),
        params: m.params.clone(),
        extra: serde_json::json!({ "note": "verify" }),
    };
    save_checkpoint(&path, &ck)?;
    let back = load_checkpoint(&path)?;
    let mut bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    let corrupt_rejected = load_checkpoint(&path).is_err();
    let _ = std::fs::remove_dir_all(&dir);
    Ok((
        back == ck && corrupt_rejected,
        format!("{} tensors round-trip; flipped bit rejected: {corrupt_rejected}", ck.params.tensors.len()),
    ))
}
