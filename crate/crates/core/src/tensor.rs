use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Dense row-major tensor used for trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| S::lit(rng.random_range(-bound..bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }
}

/// Architecture hyperparameters shared by every network in a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels1: usize,
    pub channels2: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 28,
            channels1: 32,
            channels2: 64,
            latent_dim: 16,
            num_classes: 4,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checking.
    pub fn reduced() -> Self {
        ModelConfig {
            image_size: 8,
            channels1: 4,
            channels2: 8,
            latent_dim: 4,
            num_classes: 4,
        }
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn half(&self) -> usize {
        self.image_size / 2
    }

    pub fn quarter(&self) -> usize {
        self.image_size / 4
    }

    /// Flattened size of the second convolution's output.
    pub fn feature_dim(&self) -> usize {
        self.channels2 * self.quarter() * self.quarter()
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(crate::Error::ConfigInvalid(format!(
                "image size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        if self.channels1 == 0 || self.channels2 == 0 || self.latent_dim == 0 {
            return Err(crate::Error::ConfigInvalid("zero-width layer".into()));
        }
        Ok(())
    }
}
