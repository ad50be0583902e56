//! MNIST IDX ingestion, the four-way augmented dataset, and seeded batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{apply_spec, AugmentationPair, AugmentationSpec};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// A single grayscale raster, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "image buffer size");
        Image { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Image::new(rows, cols, vec![0.0; rows * cols])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }
}

/// `count` images of identical size stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
}

impl ImageSet {
    pub fn empty(rows: usize, cols: usize) -> Self {
        ImageSet {
            count: 0,
            rows,
            cols,
            pixels: Vec::new(),
        }
    }

    pub fn from_images(rows: usize, cols: usize, images: &[Image]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(images.len() * rows * cols);
        for img in images {
            if img.rows != rows || img.cols != cols {
                return Err(Error::ShapeMismatch(format!(
                    "image {}x{} in a {rows}x{cols} set",
                    img.rows, img.cols
                )));
            }
            pixels.extend_from_slice(&img.data);
        }
        Ok(ImageSet {
            count: images.len(),
            rows,
            cols,
            pixels,
        })
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn slice(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Image {
        Image::new(self.rows, self.cols, self.slice(i).to_vec())
    }

    pub fn images(&self) -> impl Iterator<Item = Image> + '_ {
        (0..self.count).map(|i| self.image(i))
    }

    pub fn push(&mut self, img: &Image) {
        assert_eq!((img.rows, img.cols), (self.rows, self.cols));
        self.pixels.extend_from_slice(&img.data);
        self.count += 1;
    }

    /// First `n` images (or all of them if fewer).
    pub fn take(&self, n: usize) -> ImageSet {
        let n = n.min(self.count);
        ImageSet {
            count: n,
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.image_len()].to_vec(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> ImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.slice(i));
        }
        ImageSet {
            count: indices.len(),
            rows: self.rows,
            cols: self.cols,
            pixels,
        }
    }

    /// Serializes back to the IDX image format (intensities rounded to bytes).
    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend(
            self.pixels
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }
}

fn read_be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            needed: at + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageSet> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let pixels = bytes[16..needed].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(ImageSet {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

pub fn labels_to_idx_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_labels(&bytes)
}

/// Image category inside an augmented dataset, in the order used for
/// one-hot conditionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Original,
    Aug1,
    Aug2,
    Composed,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Original,
        Category::Aug1,
        Category::Aug2,
        Category::Composed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Category {
        Category::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Original => "orig",
            Category::Aug1 => "aug1",
            Category::Aug2 => "aug2",
            Category::Composed => "composed",
        }
    }
}

/// Originals plus both augmentations and their ordered composition,
/// all index-aligned.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub originals: ImageSet,
    pub aug1: ImageSet,
    pub aug2: ImageSet,
    pub composed: ImageSet,
    pub pair: AugmentationPair,
}

impl AugmentedDataset {
    pub fn len(&self) -> usize {
        self.originals.count
    }

    pub fn is_empty(&self) -> bool {
        self.originals.count == 0
    }

    pub fn category(&self, c: Category) -> &ImageSet {
        match c {
            Category::Original => &self.originals,
            Category::Aug1 => &self.aug1,
            Category::Aug2 => &self.aug2,
            Category::Composed => &self.composed,
        }
    }
}

pub fn build_augmented_dataset(originals: ImageSet, pair: AugmentationPair) -> Result<AugmentedDataset> {
    if pair.first == pair.second {
        return Err(Error::DuplicatePair);
    }
    let apply_all = |set: &ImageSet, spec: &AugmentationSpec| -> Result<ImageSet> {
        let mut out = ImageSet::empty(set.rows, set.cols);
        out.pixels.reserve(set.pixels.len());
        for img in set.images() {
            out.push(&apply_spec(spec, &img)?);
        }
        Ok(out)
    };
    let aug1 = apply_all(&originals, &pair.first)?;
    let aug2 = apply_all(&originals, &pair.second)?;
    let composed = apply_all(&aug1, &pair.second)?;
    Ok(AugmentedDataset {
        originals,
        aug1,
        aug2,
        composed,
        pair,
    })
}

/// Shuffled mini-batch schedule, a pure function of `(seed, epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        BatchPlan { batch_size, seed }
    }

    pub fn permutation(&self, n: usize, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }
}

pub fn batch_iterator(n: usize, plan: &BatchPlan, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(plan
        .permutation(n, epoch)
        .chunks(plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}
