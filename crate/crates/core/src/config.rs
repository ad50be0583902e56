//! Run configuration. Every field has a default, so `{}` is a complete
//! config describing the full Flips schedule.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPair;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::optim::AdaBeliefConfig;
use crate::tensor::ModelConfig;
use crate::training::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelect {
    #[default]
    Lavae,
    CvaeTrad,
    CvaeAuginv,
}

impl std::str::FromStr for ModelSelect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lavae" => Ok(ModelSelect::Lavae),
            "cvae_trad" => Ok(ModelSelect::CvaeTrad),
            "cvae_auginv" => Ok(ModelSelect::CvaeAuginv),
            _ => Err(Error::ConfigInvalid(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub test_images: PathBuf,
    /// Digit labels, only used to annotate projections.
    pub test_labels: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            train_images: "data/mnist/train-images-idx3-ubyte".into(),
            test_images: "data/mnist/t10k-images-idx3-ubyte".into(),
            test_labels: Some("data/mnist/t10k-labels-idx1-ubyte".into()),
        }
    }
}

/// Sizes of the figure-style outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FigureConfig {
    pub sample_count: usize,
    pub interpolate_steps: usize,
    pub recurse_steps: usize,
    /// Test images shown per grid.
    pub probes: usize,
    pub project_points: usize,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig {
            sample_count: 16,
            interpolate_steps: 8,
            recurse_steps: 10,
            probes: 8,
            project_points: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataPaths,
    pub pair: AugmentationPair,
    pub target_pair: AugmentationPair,
    pub heatmap_pairs: Vec<AugmentationPair>,
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub optimizer: AdaBeliefConfig,
    pub architecture: ModelConfig,
    pub model: ModelSelect,
    pub out_dir: PathBuf,
    /// First `n` training images only.
    pub subset: Option<usize>,
    /// First `n` test images only.
    pub test_subset: Option<usize>,
    pub figures: FigureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataPaths::default(),
            pair: AugmentationPair::flips(),
            target_pair: AugmentationPair::nested_shear(),
            heatmap_pairs: vec![
                AugmentationPair::flips(),
                AugmentationPair::nested_shear(),
                AugmentationPair::shear_canny(),
            ],
            schedule: Schedule::default(),
            weights: LossWeights::default(),
            optimizer: AdaBeliefConfig::default(),
            architecture: ModelConfig::default(),
            model: ModelSelect::Lavae,
            out_dir: "runs/default".into(),
            subset: None,
            test_subset: None,
            figures: FigureConfig::default(),
        }
    }
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::ConfigInvalid(format!("{what} `{}` does not exist", path.display())))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks values that do not depend on the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.schedule
            .validate()
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        self.weights.validate()?;
        self.architecture.validate()?;
        for p in std::iter::once(&self.pair).chain([&self.target_pair]).chain(&self.heatmap_pairs) {
            if p.first == p.second {
                return Err(Error::ConfigInvalid(format!("pair `{p}` repeats one augmentation")));
            }
            p.first.validate().and(p.second.validate()).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps >= 0.0) {
            return Err(Error::ConfigInvalid(format!("bad optimizer settings {o:?}")));
        }
        if self.subset == Some(0) || self.test_subset == Some(0) {
            return Err(Error::ConfigInvalid("subset must be positive".into()));
        }
        Ok(())
    }

    pub fn require_train_data(&self) -> Result<()> {
        require_file("training images", &self.data.train_images)
    }

    pub fn require_test_data(&self) -> Result<()> {
        require_file("test images", &self.data.test_images)
    }
}
