//! Checks shared by the focused integration tests and the acceptance runner.

use lavae::dataset::build_augmented_dataset;
use lavae::loss::LossWeights;
use lavae::model::{one_hot_rows, Cvae, CvaeMode, DecoderParams, EncoderParams, LatentTransform, Lavae, TensorSet};
use lavae::tensor::{ModelConfig, Tensor};
use lavae::training::{category_latents, decoder_loss_and_grad, stage2_loss_and_grad, vae_loss_and_grad};
use lavae::{AugmentationPair, Category};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_input_grad, check_param_grads, sample_coords, synthetic_images, FdReport};

pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_COORDS: usize = 120;

#[derive(Clone)]
struct EncDec {
    enc: EncoderParams<f64>,
    dec: DecoderParams<f64>,
}

impl TensorSet<f64> for EncDec {
    fn tensors(&self) -> Vec<(String, &Tensor<f64>)> {
        let mut v: Vec<_> = self.enc.tensors().into_iter().map(|(n, t)| (format!("encoder.{n}"), t)).collect();
        v.extend(self.dec.tensors().into_iter().map(|(n, t)| (format!("decoder.{n}"), t)));
        v
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let mut v: Vec<_> = self.enc.tensors_mut().into_iter().map(|(n, t)| (format!("encoder.{n}"), t)).collect();
        v.extend(self.dec.tensors_mut().into_iter().map(|(n, t)| (format!("decoder.{n}"), t)));
        v
    }
}

#[derive(Clone)]
struct Pair([Tensor<f64>; 2]);

impl TensorSet<f64> for Pair {
    fn tensors(&self) -> Vec<(String, &Tensor<f64>)> {
        vec![("aug1".into(), &self.0[0]), ("aug2".into(), &self.0[1])]
    }
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        let [a, b] = &mut self.0;
        vec![("aug1".into(), a), ("aug2".into(), b)]
    }
}

/// Zero biases put ReLU units exactly on their kink for black pixels;
/// checks are made at a generic point instead.
fn jitter_biases<P: TensorSet<f64>>(p: &mut P, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in p.tensors_mut() {
        if name.ends_with("bias") {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// A batch drawn from all four categories of the reduced synthetic dataset.
fn pooled_batch(cfg: ModelConfig, per_category: usize, seed: u64) -> Vec<f64> {
    let data = build_augmented_dataset(synthetic_images(per_category, cfg.image_size, seed), AugmentationPair::flips()).unwrap();
    let mut x = Vec::new();
    for c in Category::ALL {
        x.extend(data.category(c).pixels.iter().map(|&v| v as f64));
    }
    x
}

fn random_transform(rng: &mut ChaCha8Rng, d: usize) -> LatentTransform<f64> {
    let mut m = LatentTransform::<f64>::identity(d);
    for v in m.matrix.data.iter_mut() {
        *v += 0.3 * rng.random_range(-1.0..1.0);
    }
    m
}

pub fn stage1_gradients(seed: u64) -> FdReport {
    let cfg = ModelConfig::reduced();
    let model = Lavae::<f64>::init(cfg, seed);
    let mut params = EncDec {
        enc: model.encoder,
        dec: model.decoder,
    };
    jitter_biases(&mut params, seed + 10);
    let x = pooled_batch(cfg, 2, seed + 1);
    let batch = x.len() / cfg.pixels();
    let noise = normal(&mut ChaCha8Rng::seed_from_u64(seed + 2), batch * cfg.latent_dim);
    let w = LossWeights::default();
    let loss = |p: &EncDec, ge: &mut EncoderParams<f64>, gd: &mut DecoderParams<f64>| {
        vae_loss_and_grad(&p.enc, &p.dec, &x, None, &x, None, &noise, &w, ge, gd).unwrap().total
    };
    let mut grads = params.zeros_like();
    loss(&params, &mut grads.enc, &mut grads.dec);
    let coords = sample_coords(&params, GRAD_COORDS, seed + 3);
    check_param_grads(&params, &grads, &coords, GRAD_TOL, |p| {
        let mut g = p.zeros_like();
        loss(p, &mut g.enc, &mut g.dec)
    })
}

/// Every entry of both transforms, over several random problems until at
/// least `GRAD_COORDS` coordinates are covered.
pub fn stage2_gradients(seed: u64) -> FdReport {
    let mut report = stage2_gradients_once(seed);
    let mut round = 1;
    while report.checked < GRAD_COORDS {
        report.merge(stage2_gradients_once(seed + 100 * round));
        round += 1;
    }
    report
}

fn stage2_gradients_once(seed: u64) -> FdReport {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = normal(&mut rng, 7 * d);
    let t1 = normal(&mut rng, 7 * d);
    let t2 = normal(&mut rng, 7 * d);
    let params = Pair([random_transform(&mut rng, d).matrix, random_transform(&mut rng, d).matrix]);
    let as_transforms = |p: &Pair| [LatentTransform { matrix: p.0[0].clone() }, LatentTransform { matrix: p.0[1].clone() }];
    let (_, g) = stage2_loss_and_grad(&z0, [&t1, &t2], &as_transforms(&params));
    let coords: Vec<(usize, usize)> = (0..2).flat_map(|k| (0..d * d).map(move |i| (k, i))).collect();
    check_param_grads(&params, &Pair(g), &coords, GRAD_TOL, |p| {
        stage2_loss_and_grad(&z0, [&t1, &t2], &as_transforms(p)).0
    })
}

pub fn stage3_gradients(seed: u64) -> FdReport {
    let cfg = ModelConfig::reduced();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = DecoderParams::<f64>::init(cfg, 0, &mut rng);
    jitter_biases(&mut head, seed + 10);
    let data = build_augmented_dataset(synthetic_images(2, cfg.image_size, seed + 1), AugmentationPair::nested_shear()).unwrap();
    let z0 = normal(&mut rng, 2 * cfg.latent_dim);
    let transforms = [random_transform(&mut rng, cfg.latent_dim), random_transform(&mut rng, cfg.latent_dim)];
    let lat = category_latents(&z0, &transforms);
    let z: Vec<f64> = lat.concat();
    let mut target = Vec::new();
    for c in Category::ALL {
        target.extend(data.category(c).pixels.iter().map(|&v| v as f64));
    }
    let mut grads = head.zeros_like();
    decoder_loss_and_grad(&head, &z, &target, &mut grads).unwrap();
    let coords = sample_coords(&head, GRAD_COORDS, seed + 2);
    check_param_grads(&head, &grads, &coords, GRAD_TOL, |p| {
        let mut g = p.zeros_like();
        decoder_loss_and_grad(p, &z, &target, &mut g).unwrap()
    })
}

pub fn cvae_gradients(mode: CvaeMode, seed: u64) -> FdReport {
    let cfg = ModelConfig::reduced();
    let mut cvae = Cvae::<f64>::init(cfg, mode, seed);
    jitter_biases(&mut cvae, seed + 10);
    let x = pooled_batch(cfg, 1, seed + 1);
    let batch = x.len() / cfg.pixels();
    let (src, dst): (Vec<usize>, Vec<usize>) = match mode {
        CvaeMode::Traditional => (vec![0, 1, 2, 3], vec![0, 1, 2, 3]),
        CvaeMode::AugInvariant => (vec![0, 1, 2, 1], vec![2, 0, 1, 0]),
    };
    // rows of `x` hold one image per category, in category order
    let p = cfg.pixels();
    let target: Vec<f64> = dst.iter().flat_map(|&d| x[d * p..(d + 1) * p].to_vec()).collect();
    let input: Vec<f64> = src.iter().flat_map(|&s| x[s * p..(s + 1) * p].to_vec()).collect();
    let y_in = one_hot_rows::<f64>(cfg.num_classes, &src);
    let y_out = one_hot_rows::<f64>(cfg.num_classes, &dst);
    let noise = normal(&mut ChaCha8Rng::seed_from_u64(seed + 2), batch * cfg.latent_dim);
    let w = LossWeights::default();
    let loss = |c: &Cvae<f64>, g: &mut Cvae<f64>| {
        vae_loss_and_grad(&c.encoder, &c.decoder, &input, Some(&y_in), &target, Some(&y_out), &noise, &w, &mut g.encoder, &mut g.decoder)
            .unwrap()
            .total
    };
    let mut grads = cvae.zeros_like();
    loss(&cvae, &mut grads);
    let coords = sample_coords(&cvae, GRAD_COORDS, seed + 3);
    check_param_grads(&cvae, &grads, &coords, GRAD_TOL, |c| {
        let mut g = c.zeros_like();
        loss(c, &mut g)
    })
}

/// Jacobian-vector check of the encoder with respect to its input image.
pub fn encoder_input_gradients(seed: u64) -> FdReport {
    let cfg = ModelConfig::reduced();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = EncoderParams::<f64>::init(cfg, 0, &mut rng);
    jitter_biases(&mut enc, seed + 10);
    let x = pooled_batch(cfg, 1, seed + 1)[..cfg.pixels()].to_vec();
    let a = normal(&mut rng, cfg.latent_dim);
    let b = normal(&mut rng, cfg.latent_dim);
    let f = |x: &[f64]| {
        let post = enc.forward(x, None).unwrap().0;
        post.mu.iter().zip(&a).map(|(m, w)| m * w).sum::<f64>() + post.logvar.iter().zip(&b).map(|(l, w)| l * w).sum::<f64>()
    };
    let (_, cache) = enc.forward(&x, None).unwrap();
    let mut g = enc.zeros_like();
    let dx = enc.backward(&cache, &a, &b, &mut g, true).unwrap();
    let coords: Vec<usize> = (0..cfg.pixels()).collect();
    check_input_grad(&x, &dx, &coords, GRAD_TOL, f)
}

/// BCE of the decoded image with respect to the latent input.
pub fn decoder_latent_gradients(seed: u64) -> FdReport {
    let cfg = ModelConfig::reduced();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dec = DecoderParams::<f64>::init(cfg, 0, &mut rng);
    jitter_biases(&mut dec, seed + 10);
    let z = normal(&mut rng, 3 * cfg.latent_dim);
    let target: Vec<f64> = synthetic_images(3, cfg.image_size, seed).pixels.iter().map(|&v| v as f64).collect();
    let f = |z: &[f64]| {
        let p = dec.forward(z, None).unwrap().0.probs;
        lavae::loss::bce_loss(&target, &p, 3).unwrap()
    };
    let (out, cache) = dec.forward(&z, None).unwrap();
    let dlogits = lavae::loss::bce_grad_logits(&target, &out.probs, 3, 1.0);
    let mut g = dec.zeros_like();
    let dz = dec.backward(&cache, &dlogits, &mut g, true).unwrap();
    let coords: Vec<usize> = (0..z.len()).collect();
    check_input_grad(&z, &dz, &coords, GRAD_TOL, f)
}

/// Outcome of fitting transforms to an exactly linear latent relation.
#[derive(Debug, Clone)]
pub struct Stage2Oracle {
    /// `|L_fit - L_normal|_F / |L_normal|_F`, worst of the two transforms.
    pub vs_normal_equations: f64,
    /// `|L_fit - L_true|_F / |L_true|_F`, worst of the two transforms.
    pub vs_truth: f64,
}

fn frob_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Fits both transforms by the training routine on `z0 L_true = targets`
/// and compares with `(Z^T Z)^{-1} Z^T T` solved independently by nalgebra.
pub fn stage2_oracle(seed: u64, epochs: usize) -> Stage2Oracle {
    use lavae::optim::AdaBeliefConfig;
    use lavae::training::{stage2_fit_from_means, Schedule, TrainLog};
    use nalgebra::DMatrix;

    let d = 16;
    let n = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = normal(&mut rng, n * d);
    let truth = [random_transform(&mut rng, d), random_transform(&mut rng, d)];
    let zm = DMatrix::from_row_slice(n, d, &z0);
    let targets: Vec<Vec<f64>> = truth
        .iter()
        .map(|l| {
            let t = &zm * DMatrix::from_row_slice(d, d, &l.matrix.data);
            (0..n).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| t[(r, c)]).collect()
        })
        .collect();
    let schedule = Schedule {
        stage2_epochs: epochs,
        ..Schedule::default()
    };
    let opt = AdaBeliefConfig {
        lr: 1e-2,
        ..AdaBeliefConfig::default()
    };
    let init = [LatentTransform::identity(d), LatentTransform::identity(d)];
    let fitted = stage2_fit_from_means(&z0, [&targets[0], &targets[1]], init, &schedule, &opt, seed, &mut TrainLog::new()).unwrap();

    let gram = zm.transpose() * &zm;
    let chol = gram.cholesky().expect("Z^T Z is positive definite");
    let mut vs_normal: f64 = 0.0;
    let mut vs_truth: f64 = 0.0;
    for k in 0..2 {
        let t = DMatrix::from_row_slice(n, d, &targets[k]);
        let sol = chol.solve(&(zm.transpose() * t));
        let sol_rows: Vec<f64> = (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| sol[(r, c)]).collect();
        vs_normal = vs_normal.max(frob_rel(&fitted[k].matrix.data, &sol_rows));
        vs_truth = vs_truth.max(frob_rel(&fitted[k].matrix.data, &truth[k].matrix.data));
    }
    Stage2Oracle {
        vs_normal_equations: vs_normal,
        vs_truth,
    }
}

/// Largest deviation between the optimizer and a hand-written scalar
/// recurrence over ten steps of a varying gradient.
pub fn adabelief_trace_error() -> f64 {
    use lavae::optim::{AdaBelief, AdaBeliefConfig};

    let cfg = AdaBeliefConfig::default();
    let grads = [1.0, -0.5, 0.25, 2.0, 0.0, -1.0, 0.75, 0.1, -0.3, 1.5];
    let mut t = Tensor::from_vec(&[1], vec![0.5]);
    let mut opt = AdaBelief::<f64>::for_sizes(cfg, [1]);
    let (mut theta, mut m, mut s) = (0.5f64, 0.0f64, 0.0f64);
    let mut worst: f64 = 0.0;
    for (step, &g) in grads.iter().enumerate() {
        let tt = (step + 1) as i32;
        m = 0.9 * m + 0.1 * g;
        s = 0.999 * s + 0.001 * (g - m) * (g - m) + 1e-16;
        let m_hat = m / (1.0 - 0.9f64.powi(tt));
        let s_hat = s / (1.0 - 0.999f64.powi(tt));
        theta -= 1e-4 * m_hat / (s_hat.sqrt() + 1e-16);
        let gt = Tensor::from_vec(&[1], vec![g]);
        opt.step_tensors(vec![("x".into(), &mut t)], vec![("x".into(), &gt)]).unwrap();
        worst = worst.max((t.data[0] - theta).abs());
    }
    worst
}

/// Centred 10x10 white square on a 28x28 canvas; returns how many edge
/// pixels lie off the one-pixel ring around the square's boundary, how
/// many ring pixels are missing, and whether the ring is 8-connected.
pub fn canny_square_ring() -> (usize, usize, bool) {
    use lavae::augment::canny_edge;
    use lavae::Image;

    let mut img = Image::zeros(28, 28);
    for r in 9..19 {
        for c in 9..19 {
            img.set(r, c, 1.0);
        }
    }
    let edges = canny_edge(&img, 1.0, 0.1, 0.3).unwrap();
    let on = |r: usize, c: usize| edges.get(r, c) > 0.5;
    // accepted band: the boundary rows/columns just inside or outside the edge
    let near_boundary = |r: usize, c: usize| {
        let inside = |v: usize| (8..=19).contains(&v);
        inside(r) && inside(c) && !((10..=17).contains(&r) && (10..=17).contains(&c))
    };
    let stray = (0..28).flat_map(|r| (0..28).map(move |c| (r, c))).filter(|&(r, c)| on(r, c) && !near_boundary(r, c)).count();
    // along each side, exactly one of the two candidate lines must be lit
    let mut missing = 0;
    for k in 10..18 {
        for (a, b) in [((8, k), (9, k)), ((18, k), (19, k)), ((k, 8), (k, 9)), ((k, 18), (k, 19))] {
            let lit = on(a.0, a.1) as usize + on(b.0, b.1) as usize;
            if lit != 1 {
                missing += 1;
            }
        }
    }
    let lit: Vec<(usize, usize)> = (0..28).flat_map(|r| (0..28).map(move |c| (r, c))).filter(|&(r, c)| on(r, c)).collect();
    let connected = !lit.is_empty() && {
        let mut seen = vec![lit[0]];
        let mut frontier = vec![lit[0]];
        while let Some((r, c)) = frontier.pop() {
            for &(r2, c2) in &lit {
                if !seen.contains(&(r2, c2)) && r.abs_diff(r2) <= 1 && c.abs_diff(c2) <= 1 {
                    seen.push((r2, c2));
                    frontier.push((r2, c2));
                }
            }
        }
        seen.len() == lit.len()
    };
    (stray, missing, connected)
}

/// Worst orthonormality defect of the PCA components and the worst
/// disagreement (up to sign) with nalgebra's symmetric eigensolver.
pub fn pca_oracle(seed: u64) -> (f64, f64) {
    use lavae::projection::pca_project;
    use nalgebra::DMatrix;

    let (n, d) = (200, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // anisotropic data so the top two directions are well separated
    let x: Vec<f64> = (0..n * d)
        .map(|i| rng.sample::<f64, _>(StandardNormal) * (1.0 + 3.0 / (1.0 + (i % d) as f64)))
        .collect();
    let p = pca_project(&x, d).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let ortho = (dot(&p.components[0], &p.components[0]) - 1.0)
        .abs()
        .max((dot(&p.components[1], &p.components[1]) - 1.0).abs())
        .max(dot(&p.components[0], &p.components[1]).abs());

    let m = DMatrix::from_row_slice(n, d, &x);
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |r, c| m[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        let v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let sign = dot(&v, &p.components[k]).signum();
        for i in 0..d {
            worst = worst.max((p.components[k][i] - sign * v[i]).abs());
        }
        worst = worst.max((p.variances[k] - eig.eigenvalues[order[k]]).abs() / eig.eigenvalues[order[k]]);
    }
    (ortho, worst)
}

/// Two independent uniform sources mixed into 16 dimensions; returns the
/// smaller of the two best absolute correlations with the true sources.
pub fn ica_source_recovery(seed: u64) -> (f64, bool) {
    use lavae::projection::{ica_project, IcaConfig};

    let n = 2000;
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let mix: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = sources
        .iter()
        .flat_map(|s| (0..d).map(|j| s[0] * mix[j] + s[1] * mix[d + j]).collect::<Vec<_>>())
        .collect();
    let ica = ica_project(&x, d, IcaConfig { seed, ..IcaConfig::default() }).unwrap();
    let corr = |a: &[f64], b: &[f64]| {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        (cov / (va * vb).sqrt()).abs()
    };
    let rec: [Vec<f64>; 2] = [ica.coords.iter().map(|c| c[0]).collect(), ica.coords.iter().map(|c| c[1]).collect()];
    let tru: [Vec<f64>; 2] = [sources.iter().map(|s| s[0]).collect(), sources.iter().map(|s| s[1]).collect()];
    let straight = corr(&rec[0], &tru[0]).min(corr(&rec[1], &tru[1]));
    let swapped = corr(&rec[0], &tru[1]).min(corr(&rec[1], &tru[0]));
    (straight.max(swapped), ica.converged)
}
