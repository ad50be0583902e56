#![allow(dead_code)]

use std::path::PathBuf;

use lavae::dataset::{load_idx_images, Image, ImageSet};
use lavae::model::TensorSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-3;
/// Step for re-checking a coordinate whose `FD_STEP` stencil straddles a
/// ReLU kink or the BCE clamp, where the central difference is not a
/// derivative estimate.
pub const REFINE_STEP: f64 = 1e-5;

/// `|a - n| <= tol * max(|a|, |n|)`, with an absolute floor so that two
/// values that are both numerically zero compare equal.
pub fn rel_close(analytic: f64, numeric: f64, tol: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= tol * scale || scale < 1e-9
}

/// `count` distinct `(tensor, index)` coordinates spread over all tensors.
pub fn sample_coords<P: TensorSet<f64>>(params: &P, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    // one coordinate from each tensor first, the rest uniformly over all entries
    for (k, &n) in sizes.iter().enumerate() {
        seen.insert((k, rng.random_range(0..n)));
    }
    while seen.len() < count.min(total) {
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        seen.insert((k, flat));
    }
    seen.into_iter().collect()
}

/// Result of comparing analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub checked: usize,
    pub failures: Vec<(String, usize, f64, f64)>,
    /// Coordinates that failed at `FD_STEP` but matched at `REFINE_STEP`.
    pub refined: Vec<(String, usize)>,
    pub worst_rel: f64,
}

impl FdReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.failures.extend(other.failures);
        self.refined.extend(other.refined);
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }

    pub fn summary(&self) -> String {
        format!(
            "{} coords, {} failed, {} needed step {REFINE_STEP:e}, worst rel err at step {FD_STEP:e} among passing: {:.2e}",
            self.checked,
            self.failures.len(),
            self.refined.len(),
            self.worst_rel
        )
    }
}

fn central(h: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Compares one coordinate, refining the step once on failure.
fn compare(
    name: &str,
    i: usize,
    analytic: f64,
    tol: f64,
    shifted: impl Fn(f64) -> f64,
    report: &mut FdReport,
) {
    report.checked += 1;
    let numeric = central(FD_STEP, &shifted);
    if rel_close(analytic, numeric, tol) {
        let scale = analytic.abs().max(numeric.abs());
        if scale >= 1e-9 {
            report.worst_rel = report.worst_rel.max((analytic - numeric).abs() / scale);
        }
        return;
    }
    let fine = central(REFINE_STEP, &shifted);
    if rel_close(analytic, fine, tol) {
        report.refined.push((name.to_string(), i));
    } else {
        report.failures.push((name.to_string(), i, analytic, numeric));
    }
}

fn empty_report() -> FdReport {
    FdReport {
        checked: 0,
        failures: Vec::new(),
        refined: Vec::new(),
        worst_rel: 0.0,
    }
}

/// Checks `grads` against central differences of `loss` at `coords`.
pub fn check_param_grads<P: TensorSet<f64> + Clone>(
    params: &P,
    grads: &P,
    coords: &[(usize, usize)],
    tol: f64,
    loss: impl Fn(&P) -> f64,
) -> FdReport {
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let g: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
    let mut report = empty_report();
    for &(k, i) in coords {
        let shifted = |h: f64| {
            let mut p = params.clone();
            p.tensors_mut()[k].1.data[i] += h;
            loss(&p)
        };
        compare(&names[k], i, g[k][i], tol, shifted, &mut report);
    }
    report
}

/// Same check for a gradient with respect to a plain input vector.
pub fn check_input_grad(x: &[f64], grad: &[f64], coords: &[usize], tol: f64, loss: impl Fn(&[f64]) -> f64) -> FdReport {
    let mut report = empty_report();
    for &i in coords {
        let shifted = |h: f64| {
            let mut v = x.to_vec();
            v[i] += h;
            loss(&v)
        };
        compare("input", i, grad[i], tol, shifted, &mut report);
    }
    report
}

/// Deterministic stroke images: a few thick anti-aliased line segments on
/// black, loosely digit-like and strongly asymmetric so flips matter.
pub fn synthetic_images(n: usize, size: usize, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let images: Vec<Image> = (0..n)
        .map(|_| {
            let mut img = Image::zeros(size, size);
            let strokes = rng.random_range(1..=3);
            for _ in 0..strokes {
                let (r0, c0) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.15 * s..0.6 * s));
                let (r1, c1) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.4 * s..0.85 * s));
                let width = rng.random_range(0.06 * s..0.1 * s);
                for r in 0..size {
                    for c in 0..size {
                        let (pr, pc) = (r as f32 + 0.5, c as f32 + 0.5);
                        let (dr, dc) = (r1 - r0, c1 - c0);
                        let len2 = (dr * dr + dc * dc).max(1e-6);
                        let t = (((pr - r0) * dr + (pc - c0) * dc) / len2).clamp(0.0, 1.0);
                        let d = ((pr - r0 - t * dr).powi(2) + (pc - c0 - t * dc).powi(2)).sqrt();
                        let v = (1.0 - (d - width).max(0.0)).clamp(0.0, 1.0);
                        img.set(r, c, img.get(r, c).max(v));
                    }
                }
            }
            img
        })
        .collect();
    ImageSet::from_images(size, size, &images).unwrap()
}

/// Directory holding the MNIST IDX files, if present.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("LAVAE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").is_file().then_some(dir)
}

pub fn mnist_images(file: &str) -> Option<ImageSet> {
    mnist_dir().and_then(|d| load_idx_images(d.join(file)).ok())
}
pub mod suites;
