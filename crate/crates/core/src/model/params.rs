use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, LstmWeights, Real, Tensor, Var};

use super::config::{ExtractorKind, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `[-b, b]`.
    Uniform(f64),
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Default)]
struct Specs(Vec<ParamSpec>);

impl Specs {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn fan_in(fan: usize) -> Init {
        Init::Uniform(1.0 / (fan as f64).sqrt())
    }

    /// Linear map stored `[in, out]` (applied as `x · W` on `[T, in]` rows).
    fn linear_rows(&mut self, p: &str, din: usize, dout: usize) {
        self.add(format!("{p}.w"), vec![din, dout], Self::fan_in(din));
        self.add(format!("{p}.b"), vec![dout], Self::fan_in(din));
    }

    /// Linear map stored `[out, in]` (applied as `W · x` on `[in, T]` columns).
    fn linear_cols(&mut self, p: &str, din: usize, dout: usize) {
        self.add(format!("{p}.w"), vec![dout, din], Self::fan_in(din));
        self.add(format!("{p}.b"), vec![dout], Self::fan_in(din));
    }

    fn norm(&mut self, p: &str, c: usize) {
        self.add(format!("{p}.g"), vec![c], Init::Const(1.0));
        self.add(format!("{p}.b"), vec![c], Init::Const(0.0));
    }

    fn prelu(&mut self, name: String, c: usize) {
        self.add(name, vec![c], Init::Const(0.25));
    }

    fn lstm(&mut self, p: &str, din: usize, h: usize) {
        let b = Init::Uniform(1.0 / (h as f64).sqrt());
        self.add(format!("{p}.w_ih"), vec![din, 4 * h], b);
        self.add(format!("{p}.w_hh"), vec![h, 4 * h], b);
        self.add(format!("{p}.b"), vec![4 * h], b);
    }
}

/// Every parameter of the model, in initialization order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    let (n, l) = (cfg.n, cfg.l);
    s.add("enc.w".into(), vec![n, 1, l], Specs::fan_in(l));
    s.add("dec.w".into(), vec![l, n], Specs::fan_in(n));
    s.add("dec.b".into(), vec![l], Specs::fan_in(n));

    s.linear_rows("eeg.in", cfg.eeg_channels, n);
    for i in 0..cfg.sa_layers {
        let p = format!("eeg.sa{i}");
        for q in ["q", "k", "v", "o"] {
            s.linear_rows(&format!("{p}.{q}"), n, n);
        }
        s.norm(&format!("{p}.ln1"), n);
        s.linear_rows(&format!("{p}.ff1"), n, cfg.ff_mult * n);
        s.linear_rows(&format!("{p}.ff2"), cfg.ff_mult * n, n);
        s.norm(&format!("{p}.ln2"), n);
    }

    let k = cfg.speaker.kernel;
    for i in 0..cfg.speaker.resnet_blocks {
        let p = format!("spk.res{i}");
        for j in 1..=2 {
            s.add(format!("{p}.conv{j}.w"), vec![n, n, k], Specs::fan_in(n * k));
            s.norm(&format!("{p}.cln{j}"), n);
            s.prelu(format!("{p}.prelu{j}"), n);
        }
    }
    s.lstm("spk.lstm", n, cfg.speaker.lstm_hidden);
    s.linear_rows("spk.out", cfg.speaker.lstm_hidden, n);

    match cfg.extractor {
        ExtractorKind::Dprnn => {
            let d = &cfg.dprnn;
            let b = d.bottleneck;
            s.norm("ext.in_norm", n);
            s.linear_cols("ext.bottleneck", n, b);
            s.linear_cols("ext.fuse", b + 2 * n, b);
            for i in 0..d.blocks {
                for path in ["intra", "inter"] {
                    let p = format!("ext.block{i}.{path}");
                    s.lstm(&format!("{p}.fw"), b, d.hidden);
                    s.lstm(&format!("{p}.bw"), b, d.hidden);
                    s.linear_rows(&format!("{p}.proj"), 2 * d.hidden, b);
                    s.norm(&format!("{p}.norm"), b);
                }
            }
            s.prelu("ext.out.prelu".into(), b);
            s.linear_cols("ext.out", b, n);
        }
        ExtractorKind::Tcn | ExtractorKind::CausalTcn => {
            let t = &cfg.tcn;
            let (b, h) = (t.bottleneck, t.hidden);
            s.norm("ext.in_norm", n);
            s.linear_cols("ext.bottleneck", n, b);
            for r in 0..t.repeats {
                for j in 0..t.blocks {
                    let p = format!("ext.r{r}b{j}");
                    s.linear_cols(&format!("{p}.fuse"), b + 2 * n, b);
                    s.linear_cols(&format!("{p}.in"), b, h);
                    s.prelu(format!("{p}.prelu1"), h);
                    s.norm(&format!("{p}.norm1"), h);
                    s.add(format!("{p}.dw.w"), vec![h, 1, t.kernel], Specs::fan_in(t.kernel));
                    s.add(format!("{p}.dw.b"), vec![h], Specs::fan_in(t.kernel));
                    s.prelu(format!("{p}.prelu2"), h);
                    s.norm(&format!("{p}.norm2"), h);
                    s.linear_cols(&format!("{p}.out"), h, b);
                }
            }
            s.prelu("ext.out.prelu".into(), b);
            s.linear_cols("ext.out", b, n);
        }
    }
    s.0
}

/// Named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<R> {
    pub tensors: BTreeMap<String, Tensor<R>>,
}

impl<R: Real> ModelParams<R> {
    /// Seeded fan-in uniform initialization.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let t = Tensor::from_fn(spec.shape.clone(), |_| match spec.init {
                Init::Uniform(b) => R::lit(rng.random_range(-b..=b)),
                Init::Const(c) => R::lit(c),
            });
            tensors.insert(spec.name, t);
        }
        Ok(Self { tensors })
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<R>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter '{name}'")))
    }

    pub fn cast<S: Real>(&self) -> ModelParams<S> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks names and shapes against a configuration; lists every mismatch.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let mut problems = Vec::new();
        let specs = param_specs(cfg);
        for spec in &specs {
            match self.tensors.get(&spec.name) {
                None => problems.push(format!("missing {}", spec.name)),
                Some(t) if t.shape() != spec.shape.as_slice() => problems.push(format!(
                    "{}: shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )),
                _ => {}
            }
        }
        for name in self.tensors.keys() {
            if !specs.iter().any(|s| &s.name == name) {
                problems.push(format!("unexpected {name}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("parameter mismatch: {}", problems.join("; "))))
        }
    }
}

/// Parameter count of a configuration without allocating it.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.shape.iter().product::<usize>()).sum()
}

/// A graph plus lazily bound model parameters.
pub struct Ctx<'a, R: Real> {
    pub g: &'a mut Graph<R>,
    params: &'a ModelParams<R>,
    bound: BTreeMap<String, Var>,
}

impl<'a, R: Real> Ctx<'a, R> {
    pub fn new(g: &'a mut Graph<R>, params: &'a ModelParams<R>) -> Self {
        Self {
            g,
            params,
            bound: BTreeMap::new(),
        }
    }

    /// Context whose parameters are already recorded on the graph.
    pub fn with_bound(g: &'a mut Graph<R>, params: &'a ModelParams<R>, bound: BTreeMap<String, Var>) -> Self {
        Self { g, params, bound }
    }

    /// Parameter leaf, bound on first use.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?.clone();
        let v = self.g.param(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    /// Gradients of every bound parameter that the loss depends on.
    pub fn collect_grads(&self, grads: &Gradients<R>) -> BTreeMap<String, Vec<R>> {
        self.bound
            .iter()
            .filter_map(|(k, &v)| grads.get(v).map(|g| (k.clone(), g.to_vec())))
            .collect()
    }

    /// `x · W + b` on `[.., in]` rows.
    pub fn linear_rows(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let y = self.g.matmul(x, w)?;
        let axis = self.g.shape(y).len() - 1;
        self.g.add_bias(y, b, axis)
    }

    /// `W · x + b` on `[in, T]` columns.
    pub fn linear_cols(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let y = self.g.matmul(w, x)?;
        self.g.add_bias(y, b, 0)
    }

    pub fn lstm_weights(&mut self, prefix: &str) -> Result<LstmWeights> {
        Ok(LstmWeights {
            w_ih: self.p(&format!("{prefix}.w_ih"))?,
            w_hh: self.p(&format!("{prefix}.w_hh"))?,
            bias: self.p(&format!("{prefix}.b"))?,
        })
    }

    pub fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        self.g.layer_norm(x, g, b)
    }

    pub fn global_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        self.g.global_norm(x, g, b)
    }

    pub fn prelu(&mut self, x: Var, name: &str, axis: usize) -> Result<Var> {
        let a = self.p(name)?;
        self.g.prelu(x, a, axis)
    }
}
