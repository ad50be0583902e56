//! Two-dimensional projections of latent codes: PCA and FastICA.
//! Inputs are row-major `n x dim` in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm principal directions, largest variance first.
    pub components: [Vec<f64>; 2],
    pub variances: [f64; 2],
    pub coords: Vec<[f64; 2]>,
}

fn mean_and_covariance(x: &[f64], dim: usize) -> (Vec<f64>, Tensor<f64>) {
    let n = x.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in x.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Tensor::zeros(&[dim, dim]);
    for row in x.chunks(dim) {
        for i in 0..dim {
            let a = row[i] - mean[i];
            for j in i..dim {
                cov.data[i * dim + j] += a * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1).max(1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov.data[i * dim + j] / denom;
            cov.data[i * dim + j] = v;
            cov.data[j * dim + i] = v;
        }
    }
    (mean, cov)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pca_project(x: &[f64], dim: usize) -> Result<Pca> {
    let n = if dim == 0 { 0 } else { x.len() / dim };
    if n < 3 {
        return Err(Error::DegenerateData(format!("PCA needs at least 3 points, got {n}")));
    }
    let (mean, cov) = mean_and_covariance(x, dim);
    let trace: f64 = (0..dim).map(|i| cov.data[i * dim + i]).sum();
    if trace <= 0.0 {
        return Err(Error::DegenerateData("zero variance".into()));
    }
    let (values, vectors) = symmetric_eigen(&cov);
    let components = [vectors.data[..dim].to_vec(), vectors.data[dim..2 * dim].to_vec()];
    let coords = x
        .chunks(dim)
        .map(|row| {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
            [dot(&c, &components[0]), dot(&c, &components[1])]
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        variances: [values[0].max(0.0), values[1].max(0.0)],
        coords,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        IcaConfig {
            tol: 1e-4,
            max_iter: 200,
            seed: 0,
        }
    }
}

/// Recovered sources. `converged` is false when the iteration cap was
/// hit; `coords` then holds the last iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Ica {
    pub coords: Vec<[f64; 2]>,
    pub unmixing: [[f64; 2]; 2],
    pub iterations: usize,
    pub converged: bool,
}

/// `(W W^T)^{-1/2} W` for a 2x2 `W`.
fn sym_decorrelate(w: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let g = [
        dot(&w[0], &w[0]),
        dot(&w[0], &w[1]),
        dot(&w[1], &w[0]),
        dot(&w[1], &w[1]),
    ];
    let (vals, vecs) = symmetric_eigen(&Tensor::from_vec(&[2, 2], g.to_vec()));
    // rows of `vecs` are eigenvectors; inv_sqrt = V^T diag(1/sqrt(l)) V
    let mut inv_sqrt = [[0.0; 2]; 2];
    for k in 0..2 {
        let s = 1.0 / vals[k].max(1e-300).sqrt();
        for i in 0..2 {
            for j in 0..2 {
                inv_sqrt[i][j] += vecs.data[k * 2 + i] * s * vecs.data[k * 2 + j];
            }
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = inv_sqrt[i][0] * w[0][j] + inv_sqrt[i][1] * w[1][j];
        }
    }
    out
}

/// Whitens onto the top two principal directions, then runs symmetric
/// FastICA with the `tanh` contrast.
pub fn ica_project(x: &[f64], dim: usize, config: IcaConfig) -> Result<Ica> {
    let n = if dim == 0 { 0 } else { x.len() / dim };
    if n < 16 {
        return Err(Error::DegenerateData(format!("ICA needs at least 16 points, got {n}")));
    }
    let pca = pca_project(x, dim)?;
    if pca.variances[1] <= 1e-12 * pca.variances[0] {
        return Err(Error::DegenerateData("data spans fewer than two dimensions".into()));
    }
    let scale = [1.0 / pca.variances[0].sqrt(), 1.0 / pca.variances[1].sqrt()];
    let white: Vec<[f64; 2]> = pca.coords.iter().map(|c| [c[0] * scale[0], c[1] * scale[1]]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = [[0.0; 2]; 2];
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let mut w = sym_decorrelate(w);
    let mut converged = false;
    let mut iterations = 0;
    let nf = n as f64;
    while iterations < config.max_iter {
        iterations += 1;
        let mut next = [[0.0; 2]; 2];
        for (k, row) in next.iter_mut().enumerate() {
            let mut g_mean = 0.0;
            for p in &white {
                let g = dot(&w[k], p).tanh();
                row[0] += p[0] * g;
                row[1] += p[1] * g;
                g_mean += 1.0 - g * g;
            }
            for j in 0..2 {
                row[j] = row[j] / nf - g_mean / nf * w[k][j];
            }
        }
        let next = sym_decorrelate(next);
        let change = (0..2)
            .map(|k| (dot(&next[k], &w[k]).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(Ica {
        coords: white.iter().map(|p| [dot(&w[0], p), dot(&w[1], p)]).collect(),
        unmixing: w,
        iterations,
        converged,
    })
}
