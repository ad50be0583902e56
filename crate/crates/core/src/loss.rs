//! Reconstruction and KL terms, each with its gradient.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BCE_CLAMP: f64 = 1e-7;

/// Relative weights of the KL and reconstruction terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_kl: 5.0,
            lambda_recon: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_kl > 0.0 && self.lambda_recon > 0.0 {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("loss weights must be positive: {self:?}")))
        }
    }
}

fn clamp_prob<S: Scalar>(p: S) -> S {
    let eps = S::lit(BCE_CLAMP);
    p.max(eps).min(S::one() - eps)
}

/// Binary cross-entropy summed over pixels and averaged over `batch`.
pub fn bce_loss<S: Scalar>(target: &[S], pred: &[S], batch: usize) -> Result<S> {
    if target.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "bce: target {} vs prediction {}",
            target.len(),
            pred.len()
        )));
    }
    let total: S = target
        .iter()
        .zip(pred)
        .map(|(&t, &p)| {
            let p = clamp_prob(p);
            -(t * p.ln() + (S::one() - t) * (S::one() - p).ln())
        })
        .sum();
    Ok(total / S::lit(batch.max(1) as f64))
}

/// Gradient of [`bce_loss`] with respect to the decoder logits, given the
/// sigmoid outputs. Clamped predictions have zero gradient.
pub fn bce_grad_logits<S: Scalar>(target: &[S], pred: &[S], batch: usize, scale: S) -> Vec<S> {
    let lo = S::lit(BCE_CLAMP);
    let hi = S::one() - lo;
    let k = scale / S::lit(batch.max(1) as f64);
    target
        .iter()
        .zip(pred)
        .map(|(&t, &p)| if p < lo || p > hi { S::zero() } else { k * (p - t) })
        .collect()
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over dims, averaged over `batch`.
pub fn kl_loss<S: Scalar>(mu: &[S], logvar: &[S], batch: usize) -> S {
    let half = S::lit(0.5);
    let total: S = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - lv - S::one()))
        .sum();
    total / S::lit(batch.max(1) as f64)
}

/// `(d/dmu, d/dlogvar)` of `scale * kl_loss`.
pub fn kl_grad<S: Scalar>(mu: &[S], logvar: &[S], batch: usize, scale: S) -> (Vec<S>, Vec<S>) {
    let k = scale / S::lit(batch.max(1) as f64);
    let half = S::lit(0.5);
    (
        mu.iter().map(|&m| k * m).collect(),
        logvar.iter().map(|&lv| k * half * (lv.exp() - S::one())).collect(),
    )
}

/// Squared error summed over elements, averaged over `batch`.
pub fn sse_loss<S: Scalar>(target: &[S], pred: &[S], batch: usize) -> S {
    let total: S = target.iter().zip(pred).map(|(&t, &p)| (t - p) * (t - p)).sum();
    total / S::lit(batch.max(1) as f64)
}
