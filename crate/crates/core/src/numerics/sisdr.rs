use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Real;

/// Why SI-SDR has no finite value for a pair of signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SiSdrSingularity {
    #[error("estimate is orthogonal to the reference (-inf dB)")]
    Orthogonal,
    #[error("estimate is an exact scaled copy of the reference (+inf dB)")]
    Perfect,
    #[error("reference has zero energy")]
    ZeroReference,
}

/// Clamp applied to SI-SDR inside the training loss, in dB.
pub const TRAIN_CLAMP_DB: f64 = 60.0;

pub(crate) struct SiSdrParts {
    pub db: f64,
    /// `d SI-SDR / d est`
    pub grad: Vec<f64>,
}

fn dot<R: Real>(a: &[R], b: &[R]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.f64() * y.f64()).sum()
}

fn parts<R: Real>(reference: &[R], est: &[R], want_grad: bool) -> Result<SiSdrParts, SiSdrSingularity> {
    let ss = dot(reference, reference);
    if ss == 0.0 {
        return Err(SiSdrSingularity::ZeroReference);
    }
    let p = dot(est, reference);
    if p == 0.0 {
        return Err(SiSdrSingularity::Orthogonal);
    }
    let alpha = p / ss;
    let err: Vec<f64> = est
        .iter()
        .zip(reference)
        .map(|(e, s)| e.f64() - alpha * s.f64())
        .collect();
    let d: f64 = err.iter().map(|v| v * v).sum();
    if d == 0.0 {
        return Err(SiSdrSingularity::Perfect);
    }
    let num = alpha * alpha * ss;
    let db = 10.0 * (num / d).log10();
    let grad = if want_grad {
        let k = 10.0 / std::f64::consts::LN_10;
        reference
            .iter()
            .zip(&err)
            .map(|(s, e)| k * (2.0 * s.f64() / p - 2.0 * e / d))
            .collect()
    } else {
        Vec::new()
    };
    Ok(SiSdrParts { db, grad })
}

/// Scale-invariant signal-to-distortion ratio of `est` against `reference`, in dB.
///
/// Never clamps: singular cases are returned as errors.
pub fn si_sdr<R: Real>(reference: &[R], est: &[R]) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(Error::Shape {
            op: "si_sdr",
            lhs: vec![reference.len()],
            rhs: vec![est.len()],
        });
    }
    Ok(parts(reference, est, false)?.db)
}

impl<R: Real> Graph<R> {
    /// Negative SI-SDR of `est` (any shape, flattened) against a fixed reference.
    ///
    /// With `train_clamp`, SI-SDR is clamped to ±60 dB and clamped or singular
    /// cases contribute zero gradient; without it singular cases are errors.
    pub fn si_sdr_loss(&mut self, est: Var, reference: &[R], train_clamp: bool) -> Result<Var> {
        if self.value(est).len() != reference.len() {
            return Err(Error::Shape {
                op: "si_sdr_loss",
                lhs: self.shape(est).to_vec(),
                rhs: vec![reference.len()],
            });
        }
        let n = reference.len();
        let (db, grad) = match parts(reference, self.data(est), self.requires_grad(est)) {
            Ok(p) if !train_clamp || p.db.abs() <= TRAIN_CLAMP_DB => (p.db, p.grad),
            Ok(p) => (p.db.clamp(-TRAIN_CLAMP_DB, TRAIN_CLAMP_DB), vec![0.0; n]),
            Err(SiSdrSingularity::ZeroReference) => return Err(SiSdrSingularity::ZeroReference.into()),
            Err(e) if train_clamp => {
                let db = if e == SiSdrSingularity::Perfect {
                    TRAIN_CLAMP_DB
                } else {
                    -TRAIN_CLAMP_DB
                };
                (db, vec![0.0; n])
            }
            Err(e) => return Err(e.into()),
        };
        let grad = if grad.is_empty() {
            vec![R::zero(); n]
        } else {
            grad.iter().map(|&g| R::lit(-g)).collect()
        };
        Ok(self.scalar_loss(est, R::lit(-db), grad))
    }
}

fn snr_parts<R: Real>(reference: &[R], est: &[R], want_grad: bool) -> Result<SiSdrParts, SiSdrSingularity> {
    let ss = dot(reference, reference);
    if ss == 0.0 {
        return Err(SiSdrSingularity::ZeroReference);
    }
    let err: Vec<f64> = est.iter().zip(reference).map(|(e, s)| e.f64() - s.f64()).collect();
    let d: f64 = err.iter().map(|v| v * v).sum();
    if d == 0.0 {
        return Err(SiSdrSingularity::Perfect);
    }
    let db = 10.0 * (ss / d).log10();
    let grad = if want_grad {
        let k = 10.0 / std::f64::consts::LN_10;
        err.iter().map(|e| -k * 2.0 * e / d).collect()
    } else {
        Vec::new()
    };
    Ok(SiSdrParts { db, grad })
}

/// Plain signal-to-noise ratio `10·log10(‖s‖² / ‖est − s‖²)`, in dB. Scale-sensitive.
pub fn snr<R: Real>(reference: &[R], est: &[R]) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(Error::Shape {
            op: "snr",
            lhs: vec![reference.len()],
            rhs: vec![est.len()],
        });
    }
    Ok(snr_parts(reference, est, false)?.db)
}

impl<R: Real> Graph<R> {
    /// Negative plain SNR; same clamping rules as [`Graph::si_sdr_loss`].
    pub fn snr_loss(&mut self, est: Var, reference: &[R], train_clamp: bool) -> Result<Var> {
        if self.value(est).len() != reference.len() {
            return Err(Error::Shape {
                op: "snr_loss",
                lhs: self.shape(est).to_vec(),
                rhs: vec![reference.len()],
            });
        }
        let n = reference.len();
        let (db, grad) = match snr_parts(reference, self.data(est), self.requires_grad(est)) {
            Ok(p) if !train_clamp || p.db.abs() <= TRAIN_CLAMP_DB => (p.db, p.grad),
            Ok(p) => (p.db.clamp(-TRAIN_CLAMP_DB, TRAIN_CLAMP_DB), vec![0.0; n]),
            Err(SiSdrSingularity::Perfect) if train_clamp => (TRAIN_CLAMP_DB, vec![0.0; n]),
            Err(e) => return Err(e.into()),
        };
        let grad = if grad.is_empty() {
            vec![R::zero(); n]
        } else {
            grad.iter().map(|&g| R::lit(-g)).collect()
        };
        Ok(self.scalar_loss(est, R::lit(-db), grad))
    }
}
