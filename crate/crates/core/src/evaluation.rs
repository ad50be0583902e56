//! Reconstruction metrics, the four-category error table, and the
//! transfer heatmap.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{AugmentedDataset, Category, ImageSet};
use crate::error::{Error, Result};
use crate::latent::{latent_apply_batch, matmul_square};
use crate::model::{one_hot, Cvae, CvaeMode, HeadRef, Lavae, LatentTransform};
use crate::scalar::Scalar;
use crate::training::gather_batch;

const CHUNK: usize = 256;

/// Mean over images of the per-image sum of squared pixel errors.
pub fn recon_error(truth: &ImageSet, pred: &ImageSet) -> Result<f64> {
    if truth.count != pred.count || truth.rows != pred.rows || truth.cols != pred.cols {
        return Err(Error::ShapeMismatch(format!(
            "recon_error: {}x{}x{} vs {}x{}x{}",
            truth.count, truth.rows, truth.cols, pred.count, pred.rows, pred.cols
        )));
    }
    if truth.count == 0 {
        return Err(Error::EmptyDataset);
    }
    let sse: f64 = truth
        .pixels
        .iter()
        .zip(&pred.pixels)
        .map(|(t, p)| {
            let d = (*t - *p) as f64;
            d * d
        })
        .sum();
    Ok(sse / truth.count as f64)
}

fn to_image_set<S: Scalar>(rows: usize, cols: usize, v: Vec<S>) -> ImageSet {
    ImageSet {
        count: v.len() / (rows * cols),
        rows,
        cols,
        pixels: v.into_iter().map(|x| x.as_f32()).collect(),
    }
}

/// Runs `f` over consecutive index chunks of `0..n` and concatenates the outputs.
fn chunked<S>(n: usize, mut f: impl FnMut(&[usize]) -> Result<Vec<S>>) -> Result<Vec<S>> {
    let idx: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    for c in idx.chunks(CHUNK) {
        out.extend(f(c)?);
    }
    Ok(out)
}

/// Column values in category order (orig, aug1, aug2, composed).
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub model: String,
    pub values: [f64; 4],
}

impl MseRow {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MseTable {
    pub rows: Vec<MseRow>,
}

impl MseTable {
    pub fn get(&self, model: &str) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("model\torig\taug1\taug2\tcomposed\ttotal\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                r.model,
                r.values[0],
                r.values[1],
                r.values[2],
                r.values[3],
                r.total()
            );
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Decoded outputs of a LAVAE head for all four categories of `data`:
/// `mu(x0)`, `mu(x0) L1`, `mu(x0) L2`, `mu(x0) L1 L2`.
pub fn lavae_predictions<S: Scalar>(model: &Lavae<S>, data: &AugmentedDataset, head: &HeadRef) -> Result<[ImageSet; 4]> {
    let l12 = LatentTransform {
        matrix: matmul_square(&model.transforms[0].matrix, &model.transforms[1].matrix),
    };
    let maps = [
        None,
        Some(&model.transforms[0]),
        Some(&model.transforms[1]),
        Some(&l12),
    ];
    let size = model.config.image_size;
    let decoder = model.head(head)?;
    let mut outs = Vec::with_capacity(4);
    for map in maps {
        let v = chunked(data.len(), |idx| {
            let z0 = model.encode_mean(&gather_batch::<S>(&data.originals, idx))?;
            let z = match map {
                Some(l) => latent_apply_batch(l, &z0),
                None => z0,
            };
            Ok(decoder.forward(&z, None)?.0.probs)
        })?;
        outs.push(to_image_set(size, size, v));
    }
    Ok(outs.try_into().expect("four categories"))
}

/// Reverse-order composition `mu(x0) L2 L1`, decoded with the base head.
pub fn lavae_reverse_composition<S: Scalar>(model: &Lavae<S>, data: &AugmentedDataset) -> Result<ImageSet> {
    let l21 = LatentTransform {
        matrix: matmul_square(&model.transforms[1].matrix, &model.transforms[0].matrix),
    };
    let size = model.config.image_size;
    let v = chunked(data.len(), |idx| {
        let z0 = model.encode_mean(&gather_batch::<S>(&data.originals, idx))?;
        model.decode_probs(&HeadRef::Base, &latent_apply_batch(&l21, &z0))
    })?;
    Ok(to_image_set(size, size, v))
}

/// Per-category errors of predictions against the dataset's four categories.
pub fn category_errors(data: &AugmentedDataset, preds: &[ImageSet; 4]) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for c in Category::ALL {
        out[c.index()] = recon_error(data.category(c), &preds[c.index()])?;
    }
    Ok(out)
}

pub fn lavae_row<S: Scalar>(model: &Lavae<S>, data: &AugmentedDataset, head: &HeadRef, name: &str) -> Result<MseRow> {
    let preds = lavae_predictions(model, data, head)?;
    Ok(MseRow {
        model: name.into(),
        values: category_errors(data, &preds)?,
    })
}

/// CVAE outputs for the four categories. Every column starts from the
/// posterior mean of `(x0, orig)`. Traditional mode decodes with each
/// category's own class. Augmentation-invariant mode has no composed
/// class, so the composed column decodes with aug1, re-encodes that
/// output with aug1, and decodes with aug2.
pub fn cvae_predictions<S: Scalar>(cvae: &Cvae<S>, data: &AugmentedDataset) -> Result<[ImageSet; 4]> {
    let size = cvae.config.image_size;
    let classes = cvae.config.num_classes;
    let mut outs = Vec::with_capacity(4);
    for c in Category::ALL {
        let v = chunked(data.len(), |idx| {
            let b = idx.len();
            let x0 = gather_batch::<S>(&data.originals, idx);
            let z = cvae.encode(&x0, &one_hot(b, classes, 0))?.mu;
            match (cvae.mode, c) {
                (CvaeMode::AugInvariant, Category::Composed) => {
                    let x1 = cvae.decode(&z, &one_hot(b, classes, 1))?;
                    let z1 = cvae.encode(&x1, &one_hot(b, classes, 1))?.mu;
                    cvae.decode(&z1, &one_hot(b, classes, 2))
                }
                _ => cvae.decode(&z, &one_hot(b, classes, c.index())),
            }
        })?;
        outs.push(to_image_set(size, size, v));
    }
    Ok(outs.try_into().expect("four categories"))
}

pub fn cvae_row<S: Scalar>(cvae: &Cvae<S>, data: &AugmentedDataset) -> Result<MseRow> {
    let preds = cvae_predictions(cvae, data)?;
    Ok(MseRow {
        model: cvae.mode.name().into(),
        values: category_errors(data, &preds)?,
    })
}

/// LAVAE row followed by whichever CVAE baselines are supplied.
pub fn build_mse_table<S: Scalar>(lavae: &Lavae<S>, cvaes: &[&Cvae<S>], test: &AugmentedDataset) -> Result<MseTable> {
    let mut rows = vec![lavae_row(lavae, test, &HeadRef::Base, "lavae")?];
    for c in cvaes {
        rows.push(cvae_row(c, test)?);
    }
    Ok(MseTable { rows })
}

/// Total transfer error for every (initial pair, transfer pair) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMatrix {
    pub labels: Vec<String>,
    /// `values[p][q]`: head trained for pair `q` on a latent space fitted to pair `p`.
    pub values: Vec<Vec<f64>>,
}

impl HeatmapMatrix {
    /// Off-diagonal entries that beat the directly trained `(q, q)` baseline.
    pub fn improvements(&self) -> Vec<(usize, usize)> {
        let n = self.labels.len();
        let mut out = Vec::new();
        for p in 0..n {
            for q in 0..n {
                if p != q && self.values[p][q] < self.values[q][q] {
                    out.push((p, q));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("initial\\transfer");
        for l in &self.labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            s.push_str(l);
            for v in row {
                let _ = write!(s, ",{v:.4}");
            }
            s.push('\n');
        }
        s
    }

    /// One line per flagged entry; a single summary line when none.
    pub fn report(&self) -> String {
        let flagged = self.improvements();
        if flagged.is_empty() {
            return "no transfer beat its directly trained baseline\n".into();
        }
        let mut s = String::new();
        for (p, q) in flagged {
            let _ = writeln!(
                s,
                "IMPROVED\t{} -> {}\t{:.4} < {:.4}",
                self.labels[p], self.labels[q], self.values[p][q], self.values[q][q]
            );
        }
        s
    }
}

/// Fills the grid by calling `total(p, q)` in row-major order.
pub fn transfer_heatmap(labels: Vec<String>, mut total: impl FnMut(usize, usize) -> Result<f64>) -> Result<HeatmapMatrix> {
    let n = labels.len();
    let mut values = vec![vec![0.0; n]; n];
    for (p, row) in values.iter_mut().enumerate() {
        for (q, v) in row.iter_mut().enumerate() {
            *v = total(p, q)?;
            if !(*v >= 0.0) {
                return Err(Error::DegenerateData(format!("heatmap entry ({p}, {q}) is {v}")));
            }
        }
    }
    Ok(HeatmapMatrix { labels, values })
}
