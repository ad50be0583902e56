//! Latent augmentation VAE: a convolutional VAE whose latent space carries
//! learned linear maps that stand in for image-space augmentations.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); images and
//! checkpoints are always `f32`.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod latent;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod projection;
pub mod render;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use augment::{AugmentationKind, AugmentationPair, AugmentationSpec};
pub use config::RunConfig;
pub use dataset::{AugmentedDataset, Category, Image, ImageSet};
pub use error::{Error, Result};
pub use model::{Cvae, CvaeMode, HeadRef, LatentTransform, Lavae};
pub use scalar::Scalar;
pub use training::Schedule;

pub type Lavae32 = Lavae<f32>;
pub type Lavae64 = Lavae<f64>;
pub type Cvae32 = Cvae<f32>;
pub type Cvae64 = Cvae<f64>;
pub type LatentTransform32 = LatentTransform<f32>;
pub type LatentTransform64 = LatentTransform<f64>;
