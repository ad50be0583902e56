//! End-to-end runs driven by a [`RunConfig`]: each step reads its inputs
//! from and writes its outputs to the configured output directory.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use crate::augment::AugmentationPair;
use crate::checkpoint::{load_cvae, load_lavae, save_cvae, save_lavae, TrainingMeta};
use crate::config::RunConfig;
use crate::dataset::{build_augmented_dataset, load_idx_images, load_idx_labels, AugmentedDataset, Category, Image, ImageSet};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_mse_table, lavae_predictions, lavae_reverse_composition, lavae_row, recon_error, transfer_heatmap,
    HeatmapMatrix, MseTable,
};
use crate::latent::{commutator_ratio, interpolate, recursive_trajectory, sample_bbox};
use crate::model::{Cvae, CvaeMode, HeadRef, LatentTransform, Lavae};
use crate::projection::{ica_project, pca_project, IcaConfig};
use crate::render::{export_grid, write_scatter};
use crate::scalar::Scalar;
use crate::training::{
    encode_means, stage1_train, stage2_fit_transforms, stage3_train_transfer, sub_seed, train_cvae, TrainLog,
};

pub const STAGE1_CKPT: &str = "stage1.ckpt";
pub const LAVAE_CKPT: &str = "lavae.ckpt";
pub const TRANSFER_CKPT: &str = "lavae_transfer.ckpt";
pub const TABLE_FILE: &str = "table.tsv";

pub fn cvae_ckpt(mode: CvaeMode) -> String {
    format!("{}.ckpt", mode.name())
}

pub struct Pipeline {
    pub config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        let d = &self.config.out_dir;
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))
    }

    fn log(&self, name: &str) -> Result<TrainLog> {
        self.ensure_out()?;
        let path = self.out(name);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(TrainLog::with_sink(Box::new(BufWriter::new(f))))
    }

    fn check_size(&self, set: &ImageSet) -> Result<()> {
        let s = self.config.architecture.image_size;
        if set.rows != s || set.cols != s {
            return Err(Error::ConfigInvalid(format!(
                "images are {}x{} but the architecture expects {s}x{s}",
                set.rows, set.cols
            )));
        }
        Ok(())
    }

    pub fn load_train(&self) -> Result<ImageSet> {
        self.config.require_train_data()?;
        let set = load_idx_images(&self.config.data.train_images)?;
        self.check_size(&set)?;
        Ok(match self.config.subset {
            Some(n) => set.take(n),
            None => set,
        })
    }

    pub fn load_test(&self) -> Result<ImageSet> {
        self.config.require_test_data()?;
        let set = load_idx_images(&self.config.data.test_images)?;
        self.check_size(&set)?;
        Ok(match self.config.test_subset {
            Some(n) => set.take(n),
            None => set,
        })
    }

    /// Digit labels aligned with [`load_test`](Self::load_test), when configured and present.
    pub fn load_test_labels(&self) -> Option<Vec<u8>> {
        let path = self.config.data.test_labels.as_ref().filter(|p| p.is_file())?;
        let labels = load_idx_labels(path).ok()?;
        Some(match self.config.test_subset {
            Some(n) => labels.into_iter().take(n).collect(),
            None => labels,
        })
    }

    pub fn train_data(&self, pair: AugmentationPair) -> Result<AugmentedDataset> {
        build_augmented_dataset(self.load_train()?, pair)
    }

    pub fn test_data(&self, pair: AugmentationPair) -> Result<AugmentedDataset> {
        build_augmented_dataset(self.load_test()?, pair)
    }

    fn meta(&self, stage: &str, epochs: usize, pair: &AugmentationPair) -> TrainingMeta {
        TrainingMeta {
            stage: stage.into(),
            epoch: epochs,
            seed: self.config.seed,
            pair: pair.to_string(),
        }
    }

    /// Stage 1 from fresh initialization, without writing anything.
    pub fn run_stage1<S: Scalar>(&self, data: &AugmentedDataset, seed: u64, log: &mut TrainLog) -> Result<Lavae<S>> {
        let c = &self.config;
        let mut model = Lavae::<S>::init(c.architecture, sub_seed(seed, "init/lavae"));
        stage1_train(&mut model, data, &c.schedule, &c.weights, &c.optimizer, sub_seed(seed, "stage1"), log)?;
        Ok(model)
    }

    /// Stage 2 starting from identity transforms, so reruns are idempotent.
    pub fn run_stage2<S: Scalar>(&self, model: &mut Lavae<S>, data: &AugmentedDataset, seed: u64, log: &mut TrainLog) -> Result<()> {
        let d = model.config.latent_dim;
        model.transforms = [LatentTransform::identity(d), LatentTransform::identity(d)];
        stage2_fit_transforms(model, data, &self.config.schedule, &self.config.optimizer, sub_seed(seed, "stage2"), log)
    }

    /// `train`: stage 1 on the configured pair, written to `stage1.ckpt`.
    pub fn train<S: Scalar>(&self) -> Result<Lavae<S>> {
        let c = &self.config;
        let data = self.train_data(c.pair)?;
        let mut log = self.log("stage1.log")?;
        let model = self.run_stage1(&data, c.seed, &mut log)?;
        save_lavae(&model, self.meta("stage1", c.schedule.stage1_epochs, &c.pair), self.out(STAGE1_CKPT))?;
        Ok(model)
    }

    /// `fit-transforms`: stage 2 on a stage-1 checkpoint, written to `lavae.ckpt`.
    pub fn fit_transforms<S: Scalar>(&self, mut model: Lavae<S>) -> Result<Lavae<S>> {
        let c = &self.config;
        let data = self.train_data(c.pair)?;
        let mut log = self.log("stage2.log")?;
        self.run_stage2(&mut model, &data, c.seed, &mut log)?;
        save_lavae(&model, self.meta("stage2", c.schedule.stage2_epochs, &c.pair), self.out(LAVAE_CKPT))?;
        Ok(model)
    }

    /// `transfer`: stage 3 toward the target pair, written to `lavae_transfer.ckpt`.
    pub fn transfer<S: Scalar>(&self, mut model: Lavae<S>) -> Result<(Lavae<S>, String)> {
        let c = &self.config;
        let data = self.train_data(c.target_pair)?;
        let mut log = self.log("stage3.log")?;
        let name = stage3_train_transfer(&mut model, &data, &c.schedule, &c.optimizer, sub_seed(c.seed, "stage3"), &mut log)?;
        save_lavae(&model, self.meta("stage3", c.schedule.stage3_epochs, &c.target_pair), self.out(TRANSFER_CKPT))?;
        Ok((model, name))
    }

    pub fn run_cvae<S: Scalar>(&self, data: &AugmentedDataset, mode: CvaeMode, seed: u64, log: &mut TrainLog) -> Result<Cvae<S>> {
        let c = &self.config;
        let mut cvae = Cvae::<S>::init(c.architecture, mode, sub_seed(seed, &format!("init/{}", mode.name())));
        train_cvae(&mut cvae, data, &c.schedule, &c.weights, &c.optimizer, sub_seed(seed, mode.name()), log)?;
        Ok(cvae)
    }

    /// `cvae-train`: one baseline, written to `<mode>.ckpt`.
    pub fn cvae_train<S: Scalar>(&self, mode: CvaeMode) -> Result<Cvae<S>> {
        let c = &self.config;
        let data = self.train_data(c.pair)?;
        let mut log = self.log(&format!("{}.log", mode.name()))?;
        let cvae = self.run_cvae(&data, mode, c.seed, &mut log)?;
        save_cvae(&cvae, self.meta(mode.name(), c.schedule.cvae_epochs, &c.pair), self.out(&cvae_ckpt(mode)))?;
        Ok(cvae)
    }

    pub fn load_lavae<S: Scalar>(&self, path: Option<PathBuf>) -> Result<Lavae<S>> {
        load_lavae(path.unwrap_or_else(|| self.out(LAVAE_CKPT)))
    }

    pub fn load_stage1<S: Scalar>(&self, path: Option<PathBuf>) -> Result<Lavae<S>> {
        load_lavae(path.unwrap_or_else(|| self.out(STAGE1_CKPT)))
    }

    /// Baselines present in the output directory.
    pub fn load_cvaes<S: Scalar>(&self) -> Result<Vec<Cvae<S>>> {
        let mut out = Vec::new();
        for mode in [CvaeMode::Traditional, CvaeMode::AugInvariant] {
            let p = self.out(&cvae_ckpt(mode));
            if p.is_file() {
                out.push(load_cvae(p)?);
            }
        }
        Ok(out)
    }

    /// `eval-table`: writes `table.tsv` and the composition-order report
    /// `composition.tsv`.
    pub fn eval_table<S: Scalar>(&self, lavae: &Lavae<S>, cvaes: &[Cvae<S>]) -> Result<MseTable> {
        self.ensure_out()?;
        let test = self.test_data(self.config.pair)?;
        let refs: Vec<&Cvae<S>> = cvaes.iter().collect();
        let table = build_mse_table(lavae, &refs, &test)?;
        table.write(self.out(TABLE_FILE))?;
        let report = composition_report(lavae, &test)?;
        let path = self.out("composition.tsv");
        std::fs::write(&path, report.to_tsv()).map_err(|e| Error::io(&path, e))?;
        Ok(table)
    }

    /// `heatmap`: for every initial pair P, stages 1 and 2 on P, then one
    /// transfer head per target pair Q, scored on Q's test set.
    pub fn heatmap<S: Scalar>(&self) -> Result<HeatmapMatrix> {
        self.ensure_out()?;
        let c = &self.config;
        let pairs = c.heatmap_pairs.clone();
        let labels: Vec<String> = pairs.iter().map(|p| p.label()).collect();
        let train = self.load_train()?;
        let test = self.load_test()?;
        let mut log = self.log("heatmap.log")?;
        let mut current: Option<(usize, Lavae<S>)> = None;
        let matrix = transfer_heatmap(labels, |p, q| {
            if current.as_ref().map(|(i, _)| *i) != Some(p) {
                let seed = sub_seed(c.seed, &format!("heatmap/{}", pairs[p]));
                let data = build_augmented_dataset(train.clone(), pairs[p])?;
                let mut model = self.run_stage1::<S>(&data, seed, &mut log)?;
                self.run_stage2(&mut model, &data, seed, &mut log)?;
                current = Some((p, model));
            }
            let (_, model) = current.as_mut().expect("set above");
            let target = build_augmented_dataset(train.clone(), pairs[q])?;
            let seed = sub_seed(c.seed, &format!("heatmap/{}/{}", pairs[p], pairs[q]));
            let name = stage3_train_transfer(model, &target, &c.schedule, &c.optimizer, seed, &mut log)?;
            let test_q = build_augmented_dataset(test.clone(), pairs[q])?;
            Ok(lavae_row(model, &test_q, &HeadRef::Transfer(name), "")?.total())
        })?;
        let csv = self.out("heatmap.csv");
        std::fs::write(&csv, matrix.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let rep = self.out("heatmap_report.txt");
        std::fs::write(&rep, matrix.report()).map_err(|e| Error::io(&rep, e))?;
        Ok(matrix)
    }

    fn probes(&self) -> Result<ImageSet> {
        Ok(self.load_test()?.take(self.config.figures.probes.max(1)))
    }

    /// `augment`: image-space augmentation grid, one row per category.
    pub fn augment_grid(&self) -> Result<PathBuf> {
        self.ensure_out()?;
        let data = build_augmented_dataset(self.probes()?, self.config.pair)?;
        let cols = data.len();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in Category::ALL {
            images.extend(data.category(c).images());
            labels.extend((0..cols).map(|_| c.name().to_string()));
        }
        let path = self.out("augment.pgm");
        export_grid(&images, 4, cols, &path, Some(&labels))?;
        Ok(path)
    }

    /// `export-grid`: truth and LAVAE prediction rows for each category,
    /// plus the reverse-order composition.
    pub fn reconstruction_grid<S: Scalar>(&self, model: &Lavae<S>) -> Result<PathBuf> {
        self.ensure_out()?;
        let data = build_augmented_dataset(self.probes()?, self.config.pair)?;
        let preds = lavae_predictions(model, &data, &HeadRef::Base)?;
        let reverse = lavae_reverse_composition(model, &data)?;
        let cols = data.len();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in Category::ALL {
            images.extend(data.category(c).images());
            labels.extend((0..cols).map(|_| format!("{} truth", c.name())));
            images.extend(preds[c.index()].images());
            labels.extend((0..cols).map(|_| format!("{} latent", c.name())));
        }
        images.extend(reverse.images());
        labels.extend((0..cols).map(|_| "reverse composition".to_string()));
        let path = self.out("reconstructions.pgm");
        export_grid(&images, 9, cols, &path, Some(&labels))?;
        Ok(path)
    }

    /// `sample`: decoded bounding-box samples over training-original latents.
    pub fn sample<S: Scalar>(&self, model: &Lavae<S>) -> Result<PathBuf> {
        self.ensure_out()?;
        let z = encode_means(&model.encoder, &self.load_train()?)?;
        let count = self.config.figures.sample_count.max(1);
        let samples = sample_bbox(&z, model.config.latent_dim, count, sub_seed(self.config.seed, "sample"))?;
        let flat: Vec<S> = samples.into_iter().flatten().collect();
        let images = to_images(model.config.image_size, &model.decode_probs(&HeadRef::Base, &flat)?);
        let cols = count.min(8);
        let path = self.out("sample.pgm");
        export_grid(&images, count.div_ceil(cols), cols, &path, None)?;
        Ok(path)
    }

    /// `interpolate`: decoded path between test images `a` and `b`.
    pub fn interpolate<S: Scalar>(&self, model: &Lavae<S>, a: usize, b: usize) -> Result<PathBuf> {
        self.ensure_out()?;
        let test = self.load_test()?;
        for i in [a, b] {
            if i >= test.count {
                return Err(Error::ConfigInvalid(format!("test image {i} out of range ({} loaded)", test.count)));
            }
        }
        let steps = self.config.figures.interpolate_steps;
        let images = interpolate(model, &test.image(a), &test.image(b), steps, &HeadRef::Base)?;
        let path = self.out("interpolate.pgm");
        let labels: Vec<String> = (0..steps).map(|i| format!("t={:.4}", i as f64 / (steps - 1) as f64)).collect();
        export_grid(&images, 1, steps, &path, Some(&labels))?;
        Ok(path)
    }

    /// `recurse`: repeated latent augmentation of each probe with the given
    /// transform; grid, per-step drift, and a 2-D projection of the latents.
    pub fn recurse<S: Scalar>(&self, model: &Lavae<S>, transform: usize) -> Result<PathBuf> {
        self.ensure_out()?;
        let probes = self.probes()?;
        let steps = self.config.figures.recurse_steps;
        let l = &model.transforms[transform];
        let mut images = Vec::new();
        let mut latents = Vec::new();
        let mut labels = Vec::new();
        let mut drift = String::from("probe\tstep\tsse_to_previous\n");
        for (p, x) in probes.images().enumerate() {
            let t = recursive_trajectory(model, &x, l, steps, &HeadRef::Base)?;
            for (k, d) in t.drift().iter().enumerate() {
                let _ = writeln!(drift, "{p}\t{}\t{d:.6}", k + 1);
            }
            for (k, (z, img)) in t.states.into_iter().enumerate() {
                images.push(img);
                latents.extend(z);
                labels.push(format!("{p}:{k}"));
            }
        }
        let path = self.out("recurse.pgm");
        export_grid(&images, probes.count, steps + 1, &path, Some(&labels))?;
        let dp = self.out("recurse_drift.tsv");
        std::fs::write(&dp, drift).map_err(|e| Error::io(&dp, e))?;
        if let Ok(pca) = pca_project(&latents, model.config.latent_dim) {
            write_scatter(self.out("recurse_pca.csv"), &pca.coords, &labels)?;
        }
        Ok(path)
    }

    /// `project`: PCA and ICA scatter files of test latents for all four
    /// categories, labelled `category:digit`.
    pub fn project<S: Scalar>(&self, model: &Lavae<S>) -> Result<(PathBuf, PathBuf)> {
        self.ensure_out()?;
        let n = self.config.figures.project_points;
        let test = self.load_test()?.take(n);
        let digits = self.load_test_labels();
        let data = build_augmented_dataset(test, self.config.pair)?;
        let mut latents = Vec::new();
        let mut labels = Vec::new();
        for c in Category::ALL {
            let z = encode_means(&model.encoder, data.category(c))?;
            latents.extend(z.iter().map(|v| v.as_f64()));
            for i in 0..data.len() {
                let digit = digits.as_ref().and_then(|d| d.get(i)).map_or("?".to_string(), |d| d.to_string());
                labels.push(format!("{}:{digit}", c.name()));
            }
        }
        let d = model.config.latent_dim;
        let pca = pca_project(&latents, d)?;
        let pca_path = self.out("project_pca.csv");
        write_scatter(&pca_path, &pca.coords, &labels)?;
        let ica = ica_project(
            &latents,
            d,
            IcaConfig {
                seed: sub_seed(self.config.seed, "ica"),
                ..IcaConfig::default()
            },
        )?;
        let ica_path = self.out("project_ica.csv");
        write_scatter(&ica_path, &ica.coords, &labels)?;
        Ok((pca_path, ica_path))
    }
}

fn to_images<S: Scalar>(size: usize, v: &[S]) -> Vec<Image> {
    v.chunks(size * size)
        .map(|c| Image::new(size, size, c.iter().map(|x| x.as_f32()).collect()))
        .collect()
}

/// Forward (`L1 L2`) against reverse (`L2 L1`) latent composition, both
/// scored against the image-space composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionReport {
    pub forward: f64,
    pub reverse: f64,
    pub mean_commutator: f64,
}

impl CompositionReport {
    pub fn ratio(&self) -> f64 {
        self.reverse / self.forward
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "forward_sse\treverse_sse\treverse_over_forward\tmean_commutator\n{:.4}\t{:.4}\t{:.4}\t{:.6}\n",
            self.forward,
            self.reverse,
            self.ratio(),
            self.mean_commutator
        )
    }
}

pub fn composition_report<S: Scalar>(model: &Lavae<S>, test: &AugmentedDataset) -> Result<CompositionReport> {
    let preds = lavae_predictions(model, test, &HeadRef::Base)?;
    let reverse = lavae_reverse_composition(model, test)?;
    let forward = recon_error(&test.composed, &preds[Category::Composed.index()])?;
    let reverse = recon_error(&test.composed, &reverse)?;
    let z = encode_means(&model.encoder, &test.originals)?;
    let d = model.config.latent_dim;
    let n = z.len() / d;
    let mean_commutator = z
        .chunks(d)
        .map(|row| commutator_ratio(&model.transforms[0], &model.transforms[1], row))
        .sum::<f64>()
        / n as f64;
    Ok(CompositionReport {
        forward,
        reverse,
        mean_commutator,
    })
}
