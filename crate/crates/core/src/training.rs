//! Stage losses with gradients, the three-stage schedule, and CVAE baselines.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{batch_iterator, AugmentedDataset, BatchPlan, Category, ImageSet};
use crate::error::{Error, Result};
use crate::latent::{latent_apply_batch, matmul_square};
use crate::loss::{bce_grad_logits, bce_loss, kl_grad, kl_loss, LossWeights};
use crate::model::{one_hot_rows, Cvae, CvaeMode, DecoderParams, EncoderParams, Lavae, LatentTransform, TensorSet};
use crate::optim::{AdaBelief, AdaBeliefConfig};
use crate::scalar::{gemm, Scalar, Trans};
use crate::tensor::Tensor;

/// Epoch counts per stage and the mini-batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub cvae_epochs: usize,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            stage1_epochs: 100,
            stage2_epochs: 60,
            stage3_epochs: 100,
            cvae_epochs: 100,
            batch_size: 64,
        }
    }
}

impl Schedule {
    /// Same epoch count for every stage.
    pub fn uniform(epochs: usize, batch_size: usize) -> Self {
        Schedule {
            stage1_epochs: epochs,
            stage2_epochs: epochs,
            stage3_epochs: epochs,
            cvae_epochs: epochs,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::ZeroBatchSize);
        }
        Ok(())
    }
}

/// Derives an independent stream seed from the run seed and a purpose label.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub components: Vec<(String, f64)>,
}

impl EpochRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.stage, self.epoch)?;
        for (name, v) in &self.components {
            write!(f, "\t{name}={v:.6}")?;
        }
        Ok(())
    }
}

/// Collects epoch records and optionally streams them to a writer.
#[derive(Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    sink: Option<Box<dyn Write>>,
}

impl TrainLog {
    pub fn new() -> Self {
        TrainLog::default()
    }

    pub fn with_sink(sink: Box<dyn Write>) -> Self {
        TrainLog {
            records: Vec::new(),
            sink: Some(sink),
        }
    }

    pub fn push(&mut self, rec: EpochRecord) {
        if let Some(w) = self.sink.as_mut() {
            // Logging failures must not abort training.
            let _ = writeln!(w, "{rec}").and_then(|_| w.flush());
        }
        self.records.push(rec);
    }

    pub fn last(&self, stage: &str) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.stage == stage)
    }
}

/// Converts the listed images of `set` into a contiguous batch.
pub fn gather_batch<S: Scalar>(set: &ImageSet, indices: &[usize]) -> Vec<S> {
    let mut out = Vec::with_capacity(indices.len() * set.image_len());
    for &i in indices {
        out.extend(set.slice(i).iter().map(|&v| S::lit(v as f64)));
    }
    out
}

pub fn image_set_to_vec<S: Scalar>(set: &ImageSet) -> Vec<S> {
    set.pixels.iter().map(|&v| S::lit(v as f64)).collect()
}

fn standard_normal<S: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<S> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            S::lit(v)
        })
        .collect()
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

const ENCODE_CHUNK: usize = 256;

/// Posterior means of every image in `set`, `count x latent_dim`.
pub fn encode_means<S: Scalar>(encoder: &EncoderParams<S>, set: &ImageSet) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(set.count * encoder.config.latent_dim);
    let idx: Vec<usize> = (0..set.count).collect();
    for chunk in idx.chunks(ENCODE_CHUNK) {
        let x = gather_batch::<S>(set, chunk);
        out.extend(encoder.forward(&x, None)?.0.mu);
    }
    Ok(out)
}

/// Loss values of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss<S> {
    pub total: S,
    pub recon: S,
    pub kl: S,
}

/// Weighted ELBO loss of an encoder/decoder pair and its gradients.
///
/// `cond_in`/`cond_out` are the encoder/decoder conditionals (CVAE only);
/// `target` is what the decoder output is scored against.
#[allow(clippy::too_many_arguments)]
pub fn vae_loss_and_grad<S: Scalar>(
    encoder: &EncoderParams<S>,
    decoder: &DecoderParams<S>,
    x: &[S],
    cond_in: Option<&[S]>,
    target: &[S],
    cond_out: Option<&[S]>,
    noise: &[S],
    weights: &LossWeights,
    enc_grads: &mut EncoderParams<S>,
    dec_grads: &mut DecoderParams<S>,
) -> Result<VaeLoss<S>> {
    let batch = noise.len() / encoder.config.latent_dim;
    let (post, enc_cache) = encoder.forward(x, cond_in)?;
    let z = crate::model::reparameterize(&post.mu, &post.logvar, noise)?;
    let (dec, dec_cache) = decoder.forward(&z, cond_out)?;
    let (wr, wk) = (S::lit(weights.lambda_recon), S::lit(weights.lambda_kl));
    let recon = bce_loss(target, &dec.probs, batch)?;
    let kl = kl_loss(&post.mu, &post.logvar, batch);
    let dlogits = bce_grad_logits(target, &dec.probs, batch, wr);
    let dz = decoder.backward(&dec_cache, &dlogits, dec_grads, true).expect("requested");
    let (kmu, klv) = kl_grad(&post.mu, &post.logvar, batch, wk);
    let half = S::lit(0.5);
    let dmu: Vec<S> = dz.iter().zip(&kmu).map(|(a, b)| *a + *b).collect();
    let dlogvar: Vec<S> = dz
        .iter()
        .zip(&post.logvar)
        .zip(noise)
        .zip(&klv)
        .map(|(((d, lv), n), k)| *d * half * (*lv * half).exp() * *n + *k)
        .collect();
    encoder.backward(&enc_cache, &dmu, &dlogvar, enc_grads, false);
    Ok(VaeLoss {
        total: wr * recon + wk * kl,
        recon,
        kl,
    })
}

fn split_items(items: &[usize], n: usize) -> (Vec<usize>, Vec<usize>) {
    items.iter().map(|&it| (it / n, it % n)).unzip()
}

/// Stage 1: encoder/decoder trained on all four categories pooled.
pub fn stage1_train<S: Scalar>(
    model: &mut Lavae<S>,
    data: &AugmentedDataset,
    schedule: &Schedule,
    weights: &LossWeights,
    opt: &AdaBeliefConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<()> {
    schedule.validate()?;
    weights.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let l = model.config.latent_dim;
    let plan = BatchPlan::new(schedule.batch_size, sub_seed(seed, "stage1/batches"));
    let noise_seed = sub_seed(seed, "stage1/noise");
    let sizes = model.encoder.tensors().into_iter().chain(model.decoder.tensors()).map(|(_, t)| t.len());
    let mut optimizer = AdaBelief::<S>::for_sizes(*opt, sizes.collect::<Vec<_>>());
    for epoch in 0..schedule.stage1_epochs {
        let mut rng = epoch_rng(noise_seed, epoch);
        let (mut sum_total, mut sum_recon, mut sum_kl) = (0.0, 0.0, 0.0);
        for items in batch_iterator(4 * n, &plan, epoch as u64)? {
            let (cats, idx) = split_items(&items, n);
            let mut x = Vec::with_capacity(items.len() * model.config.pixels());
            for (&c, &i) in cats.iter().zip(&idx) {
                x.extend(gather_batch::<S>(data.category(Category::from_index(c)), &[i]));
            }
            let noise = standard_normal::<S>(&mut rng, items.len() * l);
            let mut ge = model.encoder.zeros_like();
            let mut gd = model.decoder.zeros_like();
            let loss = vae_loss_and_grad(
                &model.encoder,
                &model.decoder,
                &x,
                None,
                &x,
                None,
                &noise,
                weights,
                &mut ge,
                &mut gd,
            )?;
            let params = prefixed_mut(&mut model.encoder, &mut model.decoder);
            let grads = ge.tensors().into_iter().chain(gd.tensors()).collect();
            optimizer.step_tensors(params, grads)?;
            let b = items.len() as f64;
            sum_total += loss.total.as_f64() * b;
            sum_recon += loss.recon.as_f64() * b;
            sum_kl += loss.kl.as_f64() * b;
        }
        let m = (4 * n) as f64;
        log.push(EpochRecord {
            stage: "stage1".into(),
            epoch: epoch + 1,
            components: vec![
                ("total".into(), sum_total / m),
                ("recon".into(), sum_recon / m),
                ("kl".into(), sum_kl / m),
            ],
        });
    }
    Ok(())
}

fn prefixed_mut<'a, S: Scalar>(
    enc: &'a mut EncoderParams<S>,
    dec: &'a mut DecoderParams<S>,
) -> Vec<(String, &'a mut Tensor<S>)> {
    enc.tensors_mut().into_iter().chain(dec.tensors_mut()).collect()
}

/// Stage-2 objective for one batch: `sum_k ||target_k - z L_k||^2 / batch`
/// and its gradient with respect to each `L_k`.
pub fn stage2_loss_and_grad<S: Scalar>(
    z0: &[S],
    targets: [&[S]; 2],
    transforms: &[LatentTransform<S>; 2],
) -> (S, [Tensor<S>; 2]) {
    let d = transforms[0].dim();
    let batch = z0.len() / d;
    let scale = S::lit(-2.0 / batch.max(1) as f64);
    let mut loss = S::zero();
    let mut grads = [Tensor::zeros(&[d, d]), Tensor::zeros(&[d, d])];
    for k in 0..2 {
        let pred = latent_apply_batch(&transforms[k], z0);
        let resid: Vec<S> = targets[k].iter().zip(&pred).map(|(t, p)| *t - *p).collect();
        loss += resid.iter().map(|r| *r * *r).sum::<S>();
        gemm(Trans::Yes, Trans::No, d, d, batch, z0, &resid, &mut grads[k].data, false);
        grads[k].data.iter_mut().for_each(|g| *g *= scale);
    }
    (loss / S::lit(batch.max(1) as f64), grads)
}

/// Fits both latent transforms by AdaBelief on precomputed latent codes
/// (`z0`, `targets[k]` are `n x d`). Starts from `init`.
pub fn stage2_fit_from_means<S: Scalar>(
    z0: &[S],
    targets: [&[S]; 2],
    init: [LatentTransform<S>; 2],
    schedule: &Schedule,
    opt: &AdaBeliefConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<[LatentTransform<S>; 2]> {
    schedule.validate()?;
    let d = init[0].dim();
    let n = z0.len() / d;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut transforms = init;
    let plan = BatchPlan::new(schedule.batch_size, sub_seed(seed, "stage2/batches"));
    let mut optimizer = AdaBelief::<S>::for_sizes(*opt, [d * d, d * d]);
    let rows = |m: &[S], idx: &[usize]| -> Vec<S> { idx.iter().flat_map(|&i| m[i * d..(i + 1) * d].iter().copied()).collect() };
    for epoch in 0..schedule.stage2_epochs {
        let mut sum = 0.0;
        for idx in batch_iterator(n, &plan, epoch as u64)? {
            let zb = rows(z0, &idx);
            let t1 = rows(targets[0], &idx);
            let t2 = rows(targets[1], &idx);
            let (loss, grads) = stage2_loss_and_grad(&zb, [&t1, &t2], &transforms);
            let [a, b] = &mut transforms;
            optimizer.step_tensors(
                vec![("transform.aug1".into(), &mut a.matrix), ("transform.aug2".into(), &mut b.matrix)],
                vec![("transform.aug1".into(), &grads[0]), ("transform.aug2".into(), &grads[1])],
            )?;
            sum += loss.as_f64() * idx.len() as f64;
        }
        log.push(EpochRecord {
            stage: "stage2".into(),
            epoch: epoch + 1,
            components: vec![("latent_sse".into(), sum / n as f64)],
        });
    }
    Ok(transforms)
}

/// Stage 2 on a trained model: frozen encoder, posterior means, only
/// `L_aug1`/`L_aug2` updated. The composed category is never used.
pub fn stage2_fit_transforms<S: Scalar>(
    model: &mut Lavae<S>,
    data: &AugmentedDataset,
    schedule: &Schedule,
    opt: &AdaBeliefConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<()> {
    let z0 = encode_means(&model.encoder, &data.originals)?;
    let z1 = encode_means(&model.encoder, &data.aug1)?;
    let z2 = encode_means(&model.encoder, &data.aug2)?;
    let init = model.transforms.clone();
    model.transforms = stage2_fit_from_means(&z0, [&z1, &z2], init, schedule, opt, seed, log)?;
    Ok(())
}

/// BCE of a decoder head against fixed latent inputs, with its gradient.
pub fn decoder_loss_and_grad<S: Scalar>(
    head: &DecoderParams<S>,
    z: &[S],
    target: &[S],
    grads: &mut DecoderParams<S>,
) -> Result<S> {
    let batch = z.len() / head.config.latent_dim;
    let (dec, cache) = head.forward(z, None)?;
    let loss = bce_loss(target, &dec.probs, batch)?;
    let dlogits = bce_grad_logits(target, &dec.probs, batch, S::one());
    head.backward(&cache, &dlogits, grads, false);
    Ok(loss)
}

/// Latent inputs for the four categories given original means: `z0`,
/// `z0 L1`, `z0 L2`, `z0 L1 L2`.
pub fn category_latents<S: Scalar>(z0: &[S], transforms: &[LatentTransform<S>; 2]) -> [Vec<S>; 4] {
    let l12 = LatentTransform {
        matrix: matmul_square(&transforms[0].matrix, &transforms[1].matrix),
    };
    [
        z0.to_vec(),
        latent_apply_batch(&transforms[0], z0),
        latent_apply_batch(&transforms[1], z0),
        latent_apply_batch(&l12, z0),
    ]
}

/// Stage 3: trains a fresh decoder head on a target augmentation pair,
/// reusing the frozen encoder and transforms. Inserts the head under the
/// target pair's label and returns that label.
pub fn stage3_train_transfer<S: Scalar>(
    model: &mut Lavae<S>,
    target: &AugmentedDataset,
    schedule: &Schedule,
    opt: &AdaBeliefConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<String> {
    schedule.validate()?;
    let n = target.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let name = target.pair.label();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("stage3/init/{name}")));
    let mut head = DecoderParams::<S>::init(model.config, 0, &mut rng);
    let z0 = encode_means(&model.encoder, &target.originals)?;
    let latents = category_latents(&z0, &model.transforms);
    let l = model.config.latent_dim;
    let plan = BatchPlan::new(schedule.batch_size, sub_seed(seed, &format!("stage3/batches/{name}")));
    let mut optimizer = AdaBelief::new(*opt, &head);
    for epoch in 0..schedule.stage3_epochs {
        let mut sum = 0.0;
        for items in batch_iterator(4 * n, &plan, epoch as u64)? {
            let (cats, idx) = split_items(&items, n);
            let mut z = Vec::with_capacity(items.len() * l);
            let mut x = Vec::with_capacity(items.len() * model.config.pixels());
            for (&c, &i) in cats.iter().zip(&idx) {
                z.extend_from_slice(&latents[c][i * l..(i + 1) * l]);
                x.extend(gather_batch::<S>(target.category(Category::from_index(c)), &[i]));
            }
            let mut grads = head.zeros_like();
            let loss = decoder_loss_and_grad(&head, &z, &x, &mut grads)?;
            optimizer.step(&mut head, &grads)?;
            sum += loss.as_f64() * items.len() as f64;
        }
        log.push(EpochRecord {
            stage: format!("stage3:{name}"),
            epoch: epoch + 1,
            components: vec![("recon".into(), sum / (4 * n) as f64)],
        });
    }
    model.heads.insert(name.clone(), head);
    Ok(name)
}

/// Trains a CVAE baseline in the given mode.
///
/// Traditional: each of the four categories is encoded and decoded with
/// its own class. Augmentation-invariant: each item encodes a source
/// category in {orig, aug1, aug2} and decodes toward a target category
/// drawn uniformly from the same set.
pub fn train_cvae<S: Scalar>(
    cvae: &mut Cvae<S>,
    data: &AugmentedDataset,
    schedule: &Schedule,
    weights: &LossWeights,
    opt: &AdaBeliefConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<()> {
    schedule.validate()?;
    weights.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mode = cvae.mode;
    let classes = cvae.config.num_classes;
    let l = cvae.config.latent_dim;
    let sources = match mode {
        CvaeMode::Traditional => 4,
        CvaeMode::AugInvariant => 3,
    };
    let plan = BatchPlan::new(schedule.batch_size, sub_seed(seed, &format!("{}/batches", mode.name())));
    let noise_seed = sub_seed(seed, &format!("{}/noise", mode.name()));
    let target_seed = sub_seed(seed, &format!("{}/targets", mode.name()));
    let mut optimizer = AdaBelief::new(*opt, cvae);
    for epoch in 0..schedule.cvae_epochs {
        let mut rng = epoch_rng(noise_seed, epoch);
        let mut target_rng = epoch_rng(target_seed, epoch);
        let (mut sum_total, mut sum_recon, mut sum_kl) = (0.0, 0.0, 0.0);
        for items in batch_iterator(sources * n, &plan, epoch as u64)? {
            let (src, idx) = split_items(&items, n);
            let dst: Vec<usize> = match mode {
                CvaeMode::Traditional => src.clone(),
                CvaeMode::AugInvariant => (0..items.len()).map(|_| target_rng.random_range(0..3)).collect(),
            };
            let mut x = Vec::new();
            let mut t = Vec::new();
            for ((&s, &d), &i) in src.iter().zip(&dst).zip(&idx) {
                x.extend(gather_batch::<S>(data.category(Category::from_index(s)), &[i]));
                t.extend(gather_batch::<S>(data.category(Category::from_index(d)), &[i]));
            }
            let y_in = one_hot_rows::<S>(classes, &src);
            let y_out = one_hot_rows::<S>(classes, &dst);
            let noise = standard_normal::<S>(&mut rng, items.len() * l);
            let mut grads = cvae.zeros_like();
            let loss = vae_loss_and_grad(
                &cvae.encoder,
                &cvae.decoder,
                &x,
                Some(&y_in),
                &t,
                Some(&y_out),
                &noise,
                weights,
                &mut grads.encoder,
                &mut grads.decoder,
            )?;
            optimizer.step(cvae, &grads)?;
            let b = items.len() as f64;
            sum_total += loss.total.as_f64() * b;
            sum_recon += loss.recon.as_f64() * b;
            sum_kl += loss.kl.as_f64() * b;
        }
        let m = (sources * n) as f64;
        log.push(EpochRecord {
            stage: mode.name().into(),
            epoch: epoch + 1,
            components: vec![
                ("total".into(), sum_total / m),
                ("recon".into(), sum_recon / m),
                ("kl".into(), sum_kl / m),
            ],
        });
    }
    Ok(())
}
