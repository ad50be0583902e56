//! Small dense linear algebra for latent-space matrices.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::Tensor;

/// Row-major square product `a * b`.
pub fn matmul_square<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let n = a.shape[0];
    let mut out = Tensor::zeros(&[n, n]);
    gemm(Trans::No, Trans::No, n, n, n, &a.data, &b.data, &mut out.data, false);
    out
}

/// Maximum absolute column sum.
pub fn norm1<S: Scalar>(a: &Tensor<S>) -> S {
    let n = a.shape[0];
    (0..n)
        .map(|c| (0..n).map(|r| a.data[r * n + c].abs()).sum::<S>())
        .fold(S::zero(), S::max)
}

/// `PA = LU` with partial pivoting, packed in one matrix.
#[derive(Debug, Clone)]
pub struct LuDecomposition<S> {
    n: usize,
    lu: Vec<S>,
    perm: Vec<usize>,
}

impl<S: Scalar> LuDecomposition<S> {
    /// Fails with `SingularTransform(inf)` on an exactly zero pivot.
    pub fn new(a: &Tensor<S>) -> Result<Self> {
        let n = a.shape[0];
        assert_eq!(a.shape, vec![n, n], "LU needs a square matrix");
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[i * n + k].abs().partial_cmp(&lu[j * n + k].abs()).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(k);
            let pivot = lu[p * n + k];
            if pivot == S::zero() || !pivot.is_finite() {
                return Err(Error::SingularTransform(f64::INFINITY));
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            for r in k + 1..n {
                let f = lu[r * n + k] / pivot;
                lu[r * n + k] = f;
                for c in k + 1..n {
                    let v = lu[k * n + c];
                    lu[r * n + c] -= f * v;
                }
            }
        }
        Ok(LuDecomposition { n, lu, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut x: Vec<S> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                let v = self.lu[r * n + c] * x[c];
                x[r] -= v;
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                let v = self.lu[r * n + c] * x[c];
                x[r] -= v;
            }
            x[r] /= self.lu[r * n + r];
        }
        x
    }

    pub fn inverse(&self) -> Tensor<S> {
        let n = self.n;
        let mut inv = Tensor::zeros(&[n, n]);
        let mut e = vec![S::zero(); n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = S::zero());
            e[c] = S::one();
            let col = self.solve(&e);
            for r in 0..n {
                inv.data[r * n + c] = col[r];
            }
        }
        inv
    }
}

/// Inverse together with the 1-norm condition number `|A|_1 |A^-1|_1`.
pub fn inverse_with_condition<S: Scalar>(a: &Tensor<S>) -> Result<(Tensor<S>, f64)> {
    let inv = LuDecomposition::new(a)?.inverse();
    let cond = norm1(a).as_f64() * norm1(&inv).as_f64();
    if !inv.is_finite() || !cond.is_finite() {
        return Err(Error::SingularTransform(f64::INFINITY));
    }
    Ok((inv, cond))
}

pub fn condition_estimate<S: Scalar>(a: &Tensor<S>) -> f64 {
    inverse_with_condition(a).map(|(_, c)| c).unwrap_or(f64::INFINITY)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and eigenvectors as the
/// matching rows of the second result.
pub fn symmetric_eigen<S: Scalar>(a: &Tensor<S>) -> (Vec<S>, Tensor<S>) {
    let n = a.shape[0];
    let mut m = a.data.clone();
    let mut v = Tensor::<S>::identity(n).data;
    let tol = S::epsilon() * S::lit(1e-3);
    for _sweep in 0..100 {
        let off: S = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| m[r * n + c] * m[r * n + c])
            .sum();
        let scale: S = m.iter().map(|x| *x * *x).sum::<S>().max(S::min_positive_value());
        if off <= tol * tol * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (S::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (row, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors.data[row * n + k] = v[k * n + i];
        }
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
        Tensor::from_vec(&[n, n], (0..n * n).map(|i| f(i / n, i % n)).collect())
    }

    #[test]
    fn inverse_of_diagonal() {
        let a = mat(16, |r, c| if r == c { 2.0 * (r as f64 + 1.0) } else { 0.0 });
        let (inv, cond) = inverse_with_condition(&a).unwrap();
        for r in 0..16 {
            assert!((inv.data[r * 16 + r] - 0.5 / (r as f64 + 1.0)).abs() < 1e-15);
        }
        assert!((cond - 16.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_needs_pivoting() {
        let a = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]);
        let (inv, _) = inverse_with_condition(&a).unwrap();
        assert_eq!(inv.data, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = mat(4, |r, c| (r + 1) as f64 * (c + 1) as f64);
        assert!(condition_estimate(&a) > 1e12);
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = Tensor::<f64>::from_vec(&[3, 3], vec![2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let (vals, vecs) = symmetric_eigen(&a);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
        assert!((vecs.data[2].abs() - 1.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs.data[3].abs() - s).abs() < 1e-12 && (vecs.data[4].abs() - s).abs() < 1e-12);
    }
}
