//! Inference-time latent algebra: apply, compose, invert, recurse,
//! sample and interpolate. All operations use posterior means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::model::{HeadRef, Lavae, LatentTransform};
use crate::scalar::{gemm, Scalar, Trans};

pub use crate::linalg::matmul_square;

/// Transforms whose condition estimate reaches this are refused.
pub const MAX_CONDITION: f64 = 1e8;

/// Row-vector product `z L`.
pub fn latent_apply<S: Scalar>(l: &LatentTransform<S>, z: &[S]) -> Vec<S> {
    latent_apply_batch(l, z)
}

/// `Z L` for a `batch x d` block of row vectors.
pub fn latent_apply_batch<S: Scalar>(l: &LatentTransform<S>, z: &[S]) -> Vec<S> {
    let d = l.dim();
    let batch = z.len() / d;
    let mut out = vec![S::zero(); z.len()];
    gemm(Trans::No, Trans::No, batch, d, d, z, &l.matrix.data, &mut out, false);
    out
}

pub fn latent_invert<S: Scalar>(l: &LatentTransform<S>) -> Result<LatentTransform<S>> {
    let (inv, cond) = crate::linalg::inverse_with_condition(&l.matrix)?;
    if cond >= MAX_CONDITION {
        return Err(Error::SingularTransform(cond));
    }
    Ok(LatentTransform { matrix: inv })
}

pub fn latent_compose<S: Scalar>(first: &LatentTransform<S>, second: &LatentTransform<S>) -> LatentTransform<S> {
    LatentTransform {
        matrix: matmul_square(&first.matrix, &second.matrix),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Index of one of the model's two fitted transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformRef {
    Aug1,
    Aug2,
}

impl TransformRef {
    pub fn index(self) -> usize {
        match self {
            TransformRef::Aug1 => 0,
            TransformRef::Aug2 => 1,
        }
    }
}

/// Ordered list of transforms applied left to right to a latent row vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransformSequence(pub Vec<(TransformRef, Direction)>);

impl TransformSequence {
    pub fn forward(refs: &[TransformRef]) -> Self {
        TransformSequence(refs.iter().map(|&r| (r, Direction::Forward)).collect())
    }

    pub fn then(mut self, r: TransformRef, d: Direction) -> Self {
        self.0.push((r, d));
        self
    }

    /// Collapses the sequence into one matrix.
    pub fn resolve<S: Scalar>(&self, transforms: &[LatentTransform<S>; 2]) -> Result<LatentTransform<S>> {
        let d = transforms[0].dim();
        let mut acc = LatentTransform::identity(d);
        for &(r, dir) in &self.0 {
            let l = match dir {
                Direction::Forward => transforms[r.index()].clone(),
                Direction::Inverse => latent_invert(&transforms[r.index()])?,
            };
            acc = latent_compose(&acc, &l);
        }
        Ok(acc)
    }
}

fn to_scalar<S: Scalar>(image: &Image) -> Vec<S> {
    image.data.iter().map(|&v| S::lit(v as f64)).collect()
}

fn to_image<S: Scalar>(size: usize, v: &[S]) -> Image {
    Image::new(size, size, v.iter().map(|x| x.as_f32()).collect())
}

/// Encode, apply `seq` step by step, decode with `head`.
pub fn latent_pipeline<S: Scalar>(model: &Lavae<S>, x: &Image, seq: &TransformSequence, head: &HeadRef) -> Result<Image> {
    let mut z = model.encode_mean(&to_scalar(x))?;
    for &(r, dir) in &seq.0 {
        let l = match dir {
            Direction::Forward => model.transforms[r.index()].clone(),
            Direction::Inverse => latent_invert(&model.transforms[r.index()])?,
        };
        z = latent_apply(&l, &z);
    }
    let out = model.decode_probs(head, &z)?;
    Ok(to_image(model.config.image_size, &out))
}

/// Plain reconstruction `decode(mu(x))`.
pub fn reconstruct<S: Scalar>(model: &Lavae<S>, x: &Image, head: &HeadRef) -> Result<Image> {
    latent_pipeline(model, x, &TransformSequence::default(), head)
}

/// States visited by repeatedly augmenting in latent space and re-encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(latent, image)`; entry 0 is the encoded input and the input itself.
    pub states: Vec<(Vec<f64>, Image)>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Sum of squared pixel differences between consecutive images.
    pub fn drift(&self) -> Vec<f64> {
        self.states
            .windows(2)
            .map(|w| {
                w[0].1
                    .data
                    .iter()
                    .zip(&w[1].1.data)
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum()
            })
            .collect()
    }
}

/// `x_{k+1} = decode(mu(x_k) L)` for `steps` iterations.
pub fn recursive_trajectory<S: Scalar>(
    model: &Lavae<S>,
    x: &Image,
    l: &LatentTransform<S>,
    steps: usize,
    head: &HeadRef,
) -> Result<Trajectory> {
    let z0 = model.encode_mean(&to_scalar(x))?;
    let mut states = vec![(z0.iter().map(|v| v.as_f64()).collect(), x.clone())];
    let mut current = x.clone();
    for _ in 0..steps {
        let z = latent_apply(l, &model.encode_mean(&to_scalar(&current))?);
        let out = model.decode_probs(head, &z)?;
        current = to_image(model.config.image_size, &out);
        states.push((z.iter().map(|v| v.as_f64()).collect(), current.clone()));
    }
    Ok(Trajectory { states })
}

/// Uniform samples inside the per-dimension `[min, max]` box of `latents`
/// (`n x dim`).
pub fn sample_bbox<S: Scalar>(latents: &[S], dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<S>>> {
    if latents.is_empty() || dim == 0 {
        return Err(Error::DegenerateBox);
    }
    let mut lo = latents[..dim].to_vec();
    let mut hi = lo.clone();
    for row in latents.chunks(dim) {
        for d in 0..dim {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            (0..dim)
                .map(|d| {
                    let u: f64 = rng.random();
                    lo[d] + (hi[d] - lo[d]) * S::lit(u)
                })
                .collect()
        })
        .collect())
}

/// Latent codes at `t = 0, 1/(steps-1), ..., 1` on the segment between `a` and `b`.
pub fn interpolate_latents<S: Scalar>(a: &[S], b: &[S], steps: usize) -> Result<Vec<Vec<S>>> {
    if steps < 2 {
        return Err(Error::BadSteps(steps));
    }
    Ok((0..steps)
        .map(|i| {
            let t = S::lit(i as f64 / (steps - 1) as f64);
            a.iter().zip(b).map(|(&x, &y)| x + (y - x) * t).collect()
        })
        .collect())
}

/// Decoded linear interpolation between the posterior means of two images.
pub fn interpolate<S: Scalar>(model: &Lavae<S>, xa: &Image, xb: &Image, steps: usize, head: &HeadRef) -> Result<Vec<Image>> {
    if steps < 2 {
        return Err(Error::BadSteps(steps));
    }
    let za = model.encode_mean(&to_scalar(xa))?;
    let zb = model.encode_mean(&to_scalar(xb))?;
    let path = interpolate_latents(&za, &zb, steps)?;
    let flat: Vec<S> = path.into_iter().flatten().collect();
    let out = model.decode_probs(head, &flat)?;
    Ok(out
        .chunks(model.config.pixels())
        .map(|c| to_image(model.config.image_size, c))
        .collect())
}

/// `|z (L1 L2 - L2 L1)| / |z|`: how far the two transforms are from commuting at `z`.
pub fn commutator_ratio<S: Scalar>(l1: &LatentTransform<S>, l2: &LatentTransform<S>, z: &[S]) -> f64 {
    let a = latent_apply(&latent_compose(l1, l2), z);
    let b = latent_apply(&latent_compose(l2, l1), z);
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (*x - *y).as_f64().powi(2)).sum::<f64>().sqrt();
    let den: f64 = z.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
