//! AdaBelief: Adam with the second moment tracking the variance of the
//! gradient around its running mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TensorSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBeliefConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdaBeliefConfig {
    fn default() -> Self {
        AdaBeliefConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-16,
        }
    }
}

/// Per-tensor moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdaBelief<S> {
    pub config: AdaBeliefConfig,
    pub step: u64,
    m: Vec<Vec<S>>,
    s: Vec<Vec<S>>,
}

impl<S: Scalar> AdaBelief<S> {
    pub fn new<P: TensorSet<S>>(config: AdaBeliefConfig, params: &P) -> Self {
        Self::for_sizes(config, params.tensors().iter().map(|(_, t)| t.len()))
    }

    pub fn for_sizes(config: AdaBeliefConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        AdaBelief {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            s: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    pub fn belief(&self) -> &[Vec<S>] {
        &self.s
    }

    /// One update of every tensor in `params` from the matching tensor in `grads`.
    pub fn step<P: TensorSet<S>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        self.step_tensors(params.tensors_mut(), grads.tensors())
    }

    /// Same as [`step`](Self::step) over explicit, index-aligned tensor lists.
    pub fn step_tensors(&mut self, mut tensors: Vec<(String, &mut Tensor<S>)>, grads: Vec<(String, &Tensor<S>)>) -> Result<()> {
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        assert_eq!(tensors.len(), self.m.len(), "optimizer built for a different parameter set");
        assert_eq!(tensors.len(), grads.len(), "gradient list does not match parameters");
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        let eps = S::lit(c.eps);
        let t = self.step as i32;
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);
        let lr = S::lit(c.lr);
        for (k, (_, p)) in tensors.iter_mut().enumerate() {
            let g = &grads[k].1.data;
            let (m, s) = (&mut self.m[k], &mut self.s[k]);
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                let d = g[i] - m[i];
                s[i] = b2 * s[i] + one_b2 * d * d + eps;
                let m_hat = m[i] / bc1;
                let s_hat = s[i] / bc2;
                p.data[i] -= lr * m_hat / (s_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[derive(Clone, Debug, PartialEq)]
    struct One(Tensor<f64>);

    impl TensorSet<f64> for One {
        fn tensors(&self) -> Vec<(String, &Tensor<f64>)> {
            vec![("x".into(), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
            vec![("x".into(), &mut self.0)]
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = One(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]));
        let before = p.clone();
        let mut opt = AdaBelief::new(AdaBeliefConfig::default(), &p);
        let g = p.zeros_like();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_unit_step() {
        let mut p = One(Tensor::from_vec(&[1], vec![0.0]));
        let cfg = AdaBeliefConfig::default();
        let mut opt = AdaBelief::new(cfg, &p);
        let g = One(Tensor::from_vec(&[1], vec![1.0]));
        opt.step(&mut p, &g).unwrap();
        // m = 0.1, s = 0.001 * 0.81 + eps; m_hat = 1, s_hat = 0.81 + eps / 0.001
        let s_hat: f64 = (0.001 * 0.81 + 1e-16) / 0.001;
        let want = -1e-4 * 1.0 / (s_hat.sqrt() + 1e-16);
        assert!((p.0.data[0] - want).abs() < 1e-18);
        assert!((p.0.data[0] + 1e-4 / 0.9).abs() < 1e-12);
        assert!(opt.belief()[0][0] >= 0.0);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = One(Tensor::from_vec(&[1], vec![0.0]));
        let mut opt = AdaBelief::new(AdaBeliefConfig::default(), &p);
        let g = One(Tensor::from_vec(&[1], vec![f64::NAN]));
        assert!(matches!(opt.step(&mut p, &g), Err(Error::NonFiniteGradient(n)) if n == "x"));
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn constant_gradient_steps_grow_as_belief_shrinks() {
        let mut p = One(Tensor::from_vec(&[1], vec![0.0]));
        let mut opt = AdaBelief::new(AdaBeliefConfig::default(), &p);
        let g = One(Tensor::from_vec(&[1], vec![1.0]));
        let mut prev = 0.0;
        let mut steps = Vec::new();
        for _ in 0..50 {
            opt.step(&mut p, &g).unwrap();
            steps.push(prev - p.0.data[0]);
            prev = p.0.data[0];
        }
        assert!(steps.windows(2).skip(1).all(|w| w[1] >= w[0]));
        assert!(steps[49] > 2.5 * steps[0]);
    }
}
