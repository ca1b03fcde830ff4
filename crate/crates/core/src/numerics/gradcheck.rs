use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Input index and flat coordinate of the worst entry.
    pub worst: (usize, usize),
}

/// Which coordinates of each input to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// Up to this many coordinates per input, drawn with the given seed.
    Sample { per_input: usize, seed: u64 },
    /// One standard-normal direction `v` per input, scaled to `max|v| = 1`:
    /// compares `∇f·v` with the central difference along `v`, step
    /// `1e-5·max(1, max|x|)`, so no coordinate moves further than its pinned
    /// step. Reported as coordinate 0 of each input.
    Direction { seed: u64 },
}

/// Compares reverse-mode gradients of a scalar function against central differences
/// with step `1e-5·max(1, |x|)`, all at 64-bit.
pub fn grad_check<F>(inputs: &[Tensor<f64>], coords: Coords, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let y = g.value(out);
    if y.len() != 1 {
        return Err(Error::invalid("grad_check needs a scalar function"));
    }
    if !y.all_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = g.backward(out)?;

    let eval = |which: usize, perturb: &dyn Fn(&mut Tensor<f64>)| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    perturb(&mut t);
                }
                g.constant(t)
            })
            .collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check perturbed objective".into()));
        }
        Ok(v)
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: (0, 0),
    };
    let record = |report: &mut GradCheck, a: f64, numeric: f64, at: (usize, usize)| {
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        report.coords_checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = at;
        }
    };
    for (i, t) in inputs.iter().enumerate() {
        let n = t.len();
        let analytic = grads.get(vars[i]);
        let picked: Vec<usize> = match coords {
            Coords::Direction { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let vmax = v.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                v.iter_mut().for_each(|d| *d /= vmax);
                let h = 1e-5 * t.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
                let v = &v;
                let along = |sign: f64| {
                    move |t: &mut Tensor<f64>| {
                        for (x, d) in t.data_mut().iter_mut().zip(v) {
                            *x += sign * h * d;
                        }
                    }
                };
                let numeric = (eval(i, &along(1.0))? - eval(i, &along(-1.0))?) / (2.0 * h);
                let a = analytic.map_or(0.0, |g| g.iter().zip(v).map(|(g, d)| g * d).sum());
                record(&mut report, a, numeric, (i, 0));
                continue;
            }
            Coords::All => (0..n).collect(),
            Coords::Sample { per_input, seed } => {
                if per_input >= n {
                    (0..n).collect()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let mut v = sample(&mut rng, n, per_input).into_vec();
                    v.sort_unstable();
                    v
                }
            }
        };
        for c in picked {
            let x = t.data()[c];
            let h = 1e-5 * x.abs().max(1.0);
            let numeric = (eval(i, &|t| t.data_mut()[c] = x + h)? - eval(i, &|t| t.data_mut()[c] = x - h)?) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g[c]);
            record(&mut report, a, numeric, (i, c));
        }
    }
    Ok(report)
}
