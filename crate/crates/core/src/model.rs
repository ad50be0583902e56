//! Encoder, decoder heads, CVAE variants and latent transforms.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, linear_backward,
    linear_forward, relu_backward_inplace, relu_inplace, sigmoid, PatchGeometry,
};
use crate::scalar::Scalar;
use crate::tensor::{ModelConfig, Tensor};

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

/// Ordered, named view over every trainable tensor of a parameter set.
pub trait TensorSet<S: Scalar> {
    fn tensors(&self) -> Vec<(String, &Tensor<S>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Zero-filled twin with identical layout, used as a gradient buffer.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(S::zero());
        }
        z
    }
}

fn prefixed<'a, T>(prefix: &str, items: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> + 'a
where
    T: 'a,
{
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

fn conv_geometry(batch: usize, large: usize, channels_large: usize) -> PatchGeometry {
    PatchGeometry {
        batch,
        large_h: large,
        large_w: large,
        small_h: large / 2,
        small_w: large / 2,
        channels: channels_large,
        kernel: KERNEL,
        stride: STRIDE,
        pad: PAD,
    }
}

fn check_finite<S: Scalar>(v: &[S], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what))
    }
}

/// Validates a `batch x classes` block of one-hot rows.
pub fn check_one_hot<S: Scalar>(y: &[S], classes: usize) -> Result<()> {
    for row in y.chunks(classes) {
        let ones = row.iter().filter(|v| **v == S::one()).count();
        let zeros = row.iter().filter(|v| **v == S::zero()).count();
        if row.len() != classes || ones != 1 || zeros != classes - 1 {
            return Err(Error::BadOneHot(row.iter().map(|v| v.as_f64()).collect()));
        }
    }
    Ok(())
}

/// `batch x classes` one-hot block with `class` set in every row.
pub fn one_hot<S: Scalar>(batch: usize, classes: usize, class: usize) -> Vec<S> {
    one_hot_rows(classes, &vec![class; batch])
}

pub fn one_hot_rows<S: Scalar>(classes: usize, labels: &[usize]) -> Vec<S> {
    let mut out = vec![S::zero(); labels.len() * classes];
    for (i, &c) in labels.iter().enumerate() {
        out[i * classes + c] = S::one();
    }
    out
}

fn concat_rows<S: Scalar>(a: &[S], a_w: usize, b: Option<&[S]>, b_w: usize, batch: usize) -> Vec<S> {
    match b {
        None => a.to_vec(),
        Some(b) => {
            let mut out = Vec::with_capacity(batch * (a_w + b_w));
            for i in 0..batch {
                out.extend_from_slice(&a[i * a_w..(i + 1) * a_w]);
                out.extend_from_slice(&b[i * b_w..(i + 1) * b_w]);
            }
            out
        }
    }
}

fn first_columns<S: Scalar>(m: &[S], width: usize, keep: usize) -> Vec<S> {
    m.chunks(width).flat_map(|r| r[..keep].iter().copied()).collect()
}

/// Posterior parameters for a batch, each `batch x latent_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior<S> {
    pub mu: Vec<S>,
    pub logvar: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<S> {
    pub config: ModelConfig,
    /// Width of the conditional appended before the FC layer (0 for the plain VAE).
    pub cond_dim: usize,
    pub conv1_w: Tensor<S>,
    pub conv1_b: Tensor<S>,
    pub conv2_w: Tensor<S>,
    pub conv2_b: Tensor<S>,
    pub fc_w: Tensor<S>,
    pub fc_b: Tensor<S>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<S> {
    batch: usize,
    cols1: Vec<S>,
    act1: Vec<S>,
    cols2: Vec<S>,
    features: Vec<S>,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn init(config: ModelConfig, cond_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let k2 = KERNEL * KERNEL;
        let (c1, c2, l) = (config.channels1, config.channels2, config.latent_dim);
        let fc_in = config.feature_dim() + cond_dim;
        EncoderParams {
            config,
            cond_dim,
            conv1_w: Tensor::uniform(&[c1, KERNEL, KERNEL, 1], 1.0 / (k2 as f64).sqrt(), rng),
            conv1_b: Tensor::zeros(&[c1]),
            conv2_w: Tensor::uniform(&[c2, KERNEL, KERNEL, c1], 1.0 / ((k2 * c1) as f64).sqrt(), rng),
            conv2_b: Tensor::zeros(&[c2]),
            fc_w: Tensor::uniform(&[2 * l, fc_in], 1.0 / (fc_in as f64).sqrt(), rng),
            fc_b: Tensor::zeros(&[2 * l]),
        }
    }

    /// `x` is `batch x image_size^2`; `cond` is `batch x cond_dim` when conditional.
    pub fn forward(&self, x: &[S], cond: Option<&[S]>) -> Result<(Posterior<S>, EncoderCache<S>)> {
        let cfg = &self.config;
        let batch = x.len() / cfg.pixels();
        if x.len() != batch * cfg.pixels() {
            return Err(Error::ShapeMismatch(format!(
                "encoder input of {} values is not a multiple of {}",
                x.len(),
                cfg.pixels()
            )));
        }
        match (cond, self.cond_dim) {
            (None, 0) => {}
            (Some(y), d) if d > 0 && y.len() == batch * d => check_one_hot(y, d)?,
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "encoder expects a {}-wide conditional",
                    self.cond_dim
                )))
            }
        }
        let (c1, c2, l) = (cfg.channels1, cfg.channels2, cfg.latent_dim);
        let g1 = conv_geometry(batch, cfg.image_size, 1);
        let (mut act1, cols1) = conv2d_forward(x, &self.conv1_w.data, &self.conv1_b.data, &g1, c1);
        relu_inplace(&mut act1);
        let g2 = conv_geometry(batch, cfg.half(), c1);
        let (mut act2, cols2) = conv2d_forward(&act1, &self.conv2_w.data, &self.conv2_b.data, &g2, c2);
        relu_inplace(&mut act2);
        let fdim = cfg.feature_dim();
        let features = concat_rows(&act2, fdim, cond, self.cond_dim, batch);
        let out = linear_forward(&features, &self.fc_w.data, &self.fc_b.data, batch, fdim + self.cond_dim, 2 * l);
        check_finite(&out, "encoder")?;
        let mut mu = Vec::with_capacity(batch * l);
        let mut logvar = Vec::with_capacity(batch * l);
        for row in out.chunks(2 * l) {
            mu.extend_from_slice(&row[..l]);
            logvar.extend_from_slice(&row[l..]);
        }
        Ok((
            Posterior { mu, logvar },
            EncoderCache {
                batch,
                cols1,
                act1,
                cols2,
                features,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `want_dx`.
    pub fn backward(
        &self,
        cache: &EncoderCache<S>,
        dmu: &[S],
        dlogvar: &[S],
        grads: &mut EncoderParams<S>,
        want_dx: bool,
    ) -> Option<Vec<S>> {
        let cfg = &self.config;
        let (c1, c2, l) = (cfg.channels1, cfg.channels2, cfg.latent_dim);
        let batch = cache.batch;
        let fdim = cfg.feature_dim();
        let fc_in = fdim + self.cond_dim;
        let mut dout = Vec::with_capacity(batch * 2 * l);
        for i in 0..batch {
            dout.extend_from_slice(&dmu[i * l..(i + 1) * l]);
            dout.extend_from_slice(&dlogvar[i * l..(i + 1) * l]);
        }
        let dfeat = linear_backward(
            &cache.features,
            &self.fc_w.data,
            &dout,
            batch,
            fc_in,
            2 * l,
            &mut grads.fc_w.data,
            &mut grads.fc_b.data,
            true,
        )
        .expect("requested");
        let mut dact2 = first_columns(&dfeat, fc_in, fdim);
        let act2 = first_columns(&cache.features, fc_in, fdim);
        relu_backward_inplace(&mut dact2, &act2);
        let g2 = conv_geometry(batch, cfg.half(), c1);
        let mut dact1 = conv2d_backward(
            &cache.cols2,
            &self.conv2_w.data,
            &dact2,
            &g2,
            c2,
            &mut grads.conv2_w.data,
            &mut grads.conv2_b.data,
            true,
        )
        .expect("requested");
        relu_backward_inplace(&mut dact1, &cache.act1);
        let g1 = conv_geometry(batch, cfg.image_size, 1);
        conv2d_backward(
            &cache.cols1,
            &self.conv1_w.data,
            &dact1,
            &g1,
            c1,
            &mut grads.conv1_w.data,
            &mut grads.conv1_b.data,
            want_dx,
        )
    }

    pub fn cast<T: Scalar>(&self) -> EncoderParams<T> {
        EncoderParams {
            config: self.config,
            cond_dim: self.cond_dim,
            conv1_w: self.conv1_w.cast(),
            conv1_b: self.conv1_b.cast(),
            conv2_w: self.conv2_w.cast(),
            conv2_b: self.conv2_b.cast(),
            fc_w: self.fc_w.cast(),
            fc_b: self.fc_b.cast(),
        }
    }
}

impl<S: Scalar> TensorSet<S> for EncoderParams<S> {
    fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        vec![
            ("conv1.weight".into(), &self.conv1_w),
            ("conv1.bias".into(), &self.conv1_b),
            ("conv2.weight".into(), &self.conv2_w),
            ("conv2.bias".into(), &self.conv2_b),
            ("fc.weight".into(), &self.fc_w),
            ("fc.bias".into(), &self.fc_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![
            ("conv1.weight".into(), &mut self.conv1_w),
            ("conv1.bias".into(), &mut self.conv1_b),
            ("conv2.weight".into(), &mut self.conv2_w),
            ("conv2.bias".into(), &mut self.conv2_b),
            ("fc.weight".into(), &mut self.fc_w),
            ("fc.bias".into(), &mut self.fc_b),
        ]
    }
}

/// Decoded batch: pre-sigmoid logits and probabilities, both `batch x pixels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<S> {
    pub logits: Vec<S>,
    pub probs: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<S> {
    pub config: ModelConfig,
    pub cond_dim: usize,
    pub fc_w: Tensor<S>,
    pub fc_b: Tensor<S>,
    pub deconv1_w: Tensor<S>,
    pub deconv1_b: Tensor<S>,
    pub deconv2_w: Tensor<S>,
    pub deconv2_b: Tensor<S>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<S> {
    batch: usize,
    input: Vec<S>,
    act0: Vec<S>,
    act1: Vec<S>,
}

impl<S: Scalar> DecoderParams<S> {
    pub fn init(config: ModelConfig, cond_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let k2 = KERNEL * KERNEL;
        let (c1, c2) = (config.channels1, config.channels2);
        let fc_in = config.latent_dim + cond_dim;
        DecoderParams {
            config,
            cond_dim,
            fc_w: Tensor::uniform(&[config.feature_dim(), fc_in], 1.0 / (fc_in as f64).sqrt(), rng),
            fc_b: Tensor::zeros(&[config.feature_dim()]),
            deconv1_w: Tensor::uniform(&[c2, KERNEL, KERNEL, c1], 1.0 / ((k2 * c2) as f64).sqrt(), rng),
            deconv1_b: Tensor::zeros(&[c1]),
            deconv2_w: Tensor::uniform(&[c1, KERNEL, KERNEL, 1], 1.0 / ((k2 * c1) as f64).sqrt(), rng),
            deconv2_b: Tensor::zeros(&[1]),
        }
    }

    pub fn forward(&self, z: &[S], cond: Option<&[S]>) -> Result<(Decoded<S>, DecoderCache<S>)> {
        let cfg = &self.config;
        let l = cfg.latent_dim;
        let batch = z.len() / l;
        if z.len() != batch * l {
            return Err(Error::ShapeMismatch(format!("latent block of {} values, dim {l}", z.len())));
        }
        check_finite(z, "decoder input")?;
        match (cond, self.cond_dim) {
            (None, 0) => {}
            (Some(y), d) if d > 0 && y.len() == batch * d => check_one_hot(y, d)?,
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "decoder expects a {}-wide conditional",
                    self.cond_dim
                )))
            }
        }
        let (c1, c2) = (cfg.channels1, cfg.channels2);
        let input = concat_rows(z, l, cond, self.cond_dim, batch);
        let mut act0 = linear_forward(
            &input,
            &self.fc_w.data,
            &self.fc_b.data,
            batch,
            l + self.cond_dim,
            cfg.feature_dim(),
        );
        relu_inplace(&mut act0);
        let g1 = conv_geometry(batch, cfg.half(), c1);
        let mut act1 = conv_transpose2d_forward(&act0, &self.deconv1_w.data, &self.deconv1_b.data, &g1, c2);
        relu_inplace(&mut act1);
        let g2 = conv_geometry(batch, cfg.image_size, 1);
        let logits = conv_transpose2d_forward(&act1, &self.deconv2_w.data, &self.deconv2_b.data, &g2, c1);
        check_finite(&logits, "decoder")?;
        let probs = logits.iter().map(|&v| sigmoid(v)).collect();
        Ok((
            Decoded { logits, probs },
            DecoderCache {
                batch,
                input,
                act0,
                act1,
            },
        ))
    }

    /// Backpropagates `dlogits`; returns the latent gradient (conditional columns dropped).
    pub fn backward(&self, cache: &DecoderCache<S>, dlogits: &[S], grads: &mut DecoderParams<S>, want_dz: bool) -> Option<Vec<S>> {
        let cfg = &self.config;
        let (c1, c2, l) = (cfg.channels1, cfg.channels2, cfg.latent_dim);
        let batch = cache.batch;
        let g2 = conv_geometry(batch, cfg.image_size, 1);
        let mut dact1 = conv_transpose2d_backward(
            &cache.act1,
            &self.deconv2_w.data,
            dlogits,
            &g2,
            c1,
            &mut grads.deconv2_w.data,
            &mut grads.deconv2_b.data,
            true,
        )
        .expect("requested");
        relu_backward_inplace(&mut dact1, &cache.act1);
        let g1 = conv_geometry(batch, cfg.half(), c1);
        let mut dact0 = conv_transpose2d_backward(
            &cache.act0,
            &self.deconv1_w.data,
            &dact1,
            &g1,
            c2,
            &mut grads.deconv1_w.data,
            &mut grads.deconv1_b.data,
            true,
        )
        .expect("requested");
        relu_backward_inplace(&mut dact0, &cache.act0);
        let fc_in = l + self.cond_dim;
        let dinput = linear_backward(
            &cache.input,
            &self.fc_w.data,
            &dact0,
            batch,
            fc_in,
            cfg.feature_dim(),
            &mut grads.fc_w.data,
            &mut grads.fc_b.data,
            want_dz,
        );
        dinput.map(|d| first_columns(&d, fc_in, l))
    }

    pub fn cast<T: Scalar>(&self) -> DecoderParams<T> {
        DecoderParams {
            config: self.config,
            cond_dim: self.cond_dim,
            fc_w: self.fc_w.cast(),
            fc_b: self.fc_b.cast(),
            deconv1_w: self.deconv1_w.cast(),
            deconv1_b: self.deconv1_b.cast(),
            deconv2_w: self.deconv2_w.cast(),
            deconv2_b: self.deconv2_b.cast(),
        }
    }
}

impl<S: Scalar> TensorSet<S> for DecoderParams<S> {
    fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        vec![
            ("fc.weight".into(), &self.fc_w),
            ("fc.bias".into(), &self.fc_b),
            ("deconv1.weight".into(), &self.deconv1_w),
            ("deconv1.bias".into(), &self.deconv1_b),
            ("deconv2.weight".into(), &self.deconv2_w),
            ("deconv2.bias".into(), &self.deconv2_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        vec![
            ("fc.weight".into(), &mut self.fc_w),
            ("fc.bias".into(), &mut self.fc_b),
            ("deconv1.weight".into(), &mut self.deconv1_w),
            ("deconv1.bias".into(), &mut self.deconv1_b),
            ("deconv2.weight".into(), &mut self.deconv2_w),
            ("deconv2.bias".into(), &mut self.deconv2_b),
        ]
    }
}

/// Dense `d x d` matrix acting on latent row vectors from the right.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTransform<S> {
    pub matrix: Tensor<S>,
}

impl<S: Scalar> LatentTransform<S> {
    pub fn identity(dim: usize) -> Self {
        LatentTransform {
            matrix: Tensor::identity(dim),
        }
    }

    pub fn from_rows(dim: usize, data: Vec<S>) -> Self {
        LatentTransform {
            matrix: Tensor::from_vec(&[dim, dim], data),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape[0]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.matrix.data[r * self.dim() + c]
    }
}

/// Which role a decoder head plays.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeadRef {
    Base,
    Transfer(String),
}

/// Full latent-augmentation model: shared encoder, base decoder, the two
/// fitted latent transforms, and any transfer heads keyed by target pair label.
#[derive(Debug, Clone, PartialEq)]
pub struct Lavae<S> {
    pub config: ModelConfig,
    pub encoder: EncoderParams<S>,
    pub decoder: DecoderParams<S>,
    pub transforms: [LatentTransform<S>; 2],
    pub heads: BTreeMap<String, DecoderParams<S>>,
}

impl<S: Scalar> Lavae<S> {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, identity transforms.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(config, 0, &mut rng);
        let decoder = DecoderParams::init(config, 0, &mut rng);
        Lavae {
            config,
            encoder,
            decoder,
            transforms: [
                LatentTransform::identity(config.latent_dim),
                LatentTransform::identity(config.latent_dim),
            ],
            heads: BTreeMap::new(),
        }
    }

    pub fn head(&self, head: &HeadRef) -> Result<&DecoderParams<S>> {
        match head {
            HeadRef::Base => Ok(&self.decoder),
            HeadRef::Transfer(name) => self
                .heads
                .get(name)
                .ok_or_else(|| Error::ConfigInvalid(format!("no transfer head named `{name}`"))),
        }
    }

    /// Posterior means for a batch of images.
    pub fn encode_mean(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(self.encoder.forward(x, None)?.0.mu)
    }

    pub fn decode_probs(&self, head: &HeadRef, z: &[S]) -> Result<Vec<S>> {
        Ok(self.head(head)?.forward(z, None)?.0.probs)
    }

    pub fn cast<T: Scalar>(&self) -> Lavae<T> {
        Lavae {
            config: self.config,
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            transforms: [
                LatentTransform {
                    matrix: self.transforms[0].matrix.cast(),
                },
                LatentTransform {
                    matrix: self.transforms[1].matrix.cast(),
                },
            ],
            heads: self.heads.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

impl<S: Scalar> TensorSet<S> for Lavae<S> {
    fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<_> = prefixed("encoder", self.encoder.tensors()).collect();
        out.extend(prefixed("decoder", self.decoder.tensors()));
        out.push(("transform.aug1".into(), &self.transforms[0].matrix));
        out.push(("transform.aug2".into(), &self.transforms[1].matrix));
        for (name, head) in &self.heads {
            out.extend(prefixed(&format!("head.{name}"), head.tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<_> = prefixed("encoder", self.encoder.tensors_mut()).collect();
        out.extend(prefixed("decoder", self.decoder.tensors_mut()));
        let [t1, t2] = &mut self.transforms;
        out.push(("transform.aug1".into(), &mut t1.matrix));
        out.push(("transform.aug2".into(), &mut t2.matrix));
        for (name, head) in self.heads.iter_mut() {
            out.extend(prefixed(&format!("head.{name}"), head.tensors_mut()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvaeMode {
    /// Conditional is the augmentation class of the image being reconstructed.
    Traditional,
    /// Encode with the source class, decode with a target class: the latent
    /// must carry only augmentation-invariant content.
    AugInvariant,
}

impl CvaeMode {
    pub fn name(self) -> &'static str {
        match self {
            CvaeMode::Traditional => "cvae_trad",
            CvaeMode::AugInvariant => "cvae_auginv",
        }
    }
}

/// Conditional VAE with a one-hot augmentation class appended before the
/// encoder FC layer and to the decoder latent input.
#[derive(Debug, Clone, PartialEq)]
pub struct Cvae<S> {
    pub config: ModelConfig,
    pub mode: CvaeMode,
    pub encoder: EncoderParams<S>,
    pub decoder: DecoderParams<S>,
}

impl<S: Scalar> Cvae<S> {
    pub fn init(config: ModelConfig, mode: CvaeMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(config, config.num_classes, &mut rng);
        let decoder = DecoderParams::init(config, config.num_classes, &mut rng);
        Cvae {
            config,
            mode,
            encoder,
            decoder,
        }
    }

    pub fn encode(&self, x: &[S], y: &[S]) -> Result<Posterior<S>> {
        Ok(self.encoder.forward(x, Some(y))?.0)
    }

    pub fn decode(&self, z: &[S], y: &[S]) -> Result<Vec<S>> {
        Ok(self.decoder.forward(z, Some(y))?.0.probs)
    }
}

impl<S: Scalar> TensorSet<S> for Cvae<S> {
    fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<_> = prefixed("encoder", self.encoder.tensors()).collect();
        out.extend(prefixed("decoder", self.decoder.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<_> = prefixed("encoder", self.encoder.tensors_mut()).collect();
        out.extend(prefixed("decoder", self.decoder.tensors_mut()));
        out
    }
}

/// `z = mu + exp(logvar / 2) * noise`, elementwise.
pub fn reparameterize<S: Scalar>(mu: &[S], logvar: &[S], noise: &[S]) -> Result<Vec<S>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::ShapeMismatch(format!(
            "reparameterize: mu {}, logvar {}, noise {}",
            mu.len(),
            logvar.len(),
            noise.len()
        )));
    }
    let half = S::lit(0.5);
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((&m, &lv), &n)| m + (lv * half).exp() * n)
        .collect())
}
