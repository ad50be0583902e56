//! Deterministic image-space augmentations.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::error::{Error, Result};

pub const DEFAULT_SHEAR: f32 = 0.3;
pub const DEFAULT_CANNY_SIGMA: f32 = 1.0;
pub const DEFAULT_CANNY_LOW: f32 = 0.1;
pub const DEFAULT_CANNY_HIGH: f32 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentationKind {
    FlipLr,
    FlipUd,
    Rotate90Cw,
    ShearX,
    CannyEdge,
    NestedMini,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 6] = [
        AugmentationKind::FlipLr,
        AugmentationKind::FlipUd,
        AugmentationKind::Rotate90Cw,
        AugmentationKind::ShearX,
        AugmentationKind::CannyEdge,
        AugmentationKind::NestedMini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::FlipLr => "flip_lr",
            AugmentationKind::FlipUd => "flip_ud",
            AugmentationKind::Rotate90Cw => "rotate90_cw",
            AugmentationKind::ShearX => "shear_x",
            AugmentationKind::CannyEdge => "canny_edge",
            AugmentationKind::NestedMini => "nested_mini",
        }
    }
}

impl FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// One augmentation with its parameters.
///
/// Text form is `kind[:p1[:p2...]]`, e.g. `shear_x:0.3` or
/// `canny_edge:1.0:0.1:0.3`; omitted parameters take the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationSpec {
    FlipLr,
    FlipUd,
    #[serde(rename = "rotate90_cw")]
    Rotate90Cw,
    ShearX {
        factor: f32,
    },
    CannyEdge {
        sigma: f32,
        low: f32,
        high: f32,
    },
    NestedMini,
}

impl AugmentationSpec {
    /// Spec for `kind` with default parameters.
    pub fn new(kind: AugmentationKind) -> Self {
        match kind {
            AugmentationKind::FlipLr => AugmentationSpec::FlipLr,
            AugmentationKind::FlipUd => AugmentationSpec::FlipUd,
            AugmentationKind::Rotate90Cw => AugmentationSpec::Rotate90Cw,
            AugmentationKind::ShearX => AugmentationSpec::ShearX {
                factor: DEFAULT_SHEAR,
            },
            AugmentationKind::CannyEdge => AugmentationSpec::CannyEdge {
                sigma: DEFAULT_CANNY_SIGMA,
                low: DEFAULT_CANNY_LOW,
                high: DEFAULT_CANNY_HIGH,
            },
            AugmentationKind::NestedMini => AugmentationSpec::NestedMini,
        }
    }

    pub fn kind(&self) -> AugmentationKind {
        match self {
            AugmentationSpec::FlipLr => AugmentationKind::FlipLr,
            AugmentationSpec::FlipUd => AugmentationKind::FlipUd,
            AugmentationSpec::Rotate90Cw => AugmentationKind::Rotate90Cw,
            AugmentationSpec::ShearX { .. } => AugmentationKind::ShearX,
            AugmentationSpec::CannyEdge { .. } => AugmentationKind::CannyEdge,
            AugmentationSpec::NestedMini => AugmentationKind::NestedMini,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentationSpec::ShearX { factor } if !(factor.abs() <= 1.0) => {
                Err(Error::FactorOutOfRange(factor))
            }
            AugmentationSpec::CannyEdge { sigma, low, high }
                if !(sigma > 0.0 && low > 0.0 && low < high && high <= 1.0) =>
            {
                Err(Error::BadThresholds { sigma, low, high })
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentationSpec::ShearX { factor } => write!(f, "shear_x:{factor}"),
            AugmentationSpec::CannyEdge { sigma, low, high } => {
                write!(f, "canny_edge:{sigma}:{low}:{high}")
            }
            other => f.write_str(other.kind().name()),
        }
    }
}

impl FromStr for AugmentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind: AugmentationKind = parts.next().unwrap_or_default().parse()?;
        let params = parts
            .map(|p| {
                p.parse::<f32>()
                    .map_err(|_| Error::ConfigInvalid(format!("bad augmentation parameter `{p}` in `{s}`")))
            })
            .collect::<Result<Vec<f32>>>()?;
        let mut spec = AugmentationSpec::new(kind);
        match &mut spec {
            AugmentationSpec::ShearX { factor } if params.len() <= 1 => {
                if let Some(&v) = params.first() {
                    *factor = v;
                }
            }
            AugmentationSpec::CannyEdge { sigma, low, high } if params.len() <= 3 => {
                for (slot, &v) in [sigma, low, high].into_iter().zip(&params) {
                    *slot = v;
                }
            }
            _ if params.is_empty() => {}
            _ => {
                return Err(Error::ConfigInvalid(format!(
                    "too many parameters for `{}` in `{s}`",
                    kind.name()
                )))
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Two distinct augmentations; the composition applies `first` then `second`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPair {
    pub first: AugmentationSpec,
    pub second: AugmentationSpec,
}

impl AugmentationPair {
    pub fn new(first: AugmentationSpec, second: AugmentationSpec) -> Result<Self> {
        if first == second {
            return Err(Error::DuplicatePair);
        }
        first.validate()?;
        second.validate()?;
        Ok(AugmentationPair { first, second })
    }

    /// Horizontal then vertical flip.
    pub fn flips() -> Self {
        AugmentationPair {
            first: AugmentationSpec::FlipLr,
            second: AugmentationSpec::FlipUd,
        }
    }

    pub fn nested_shear() -> Self {
        AugmentationPair {
            first: AugmentationSpec::NestedMini,
            second: AugmentationSpec::new(AugmentationKind::ShearX),
        }
    }

    pub fn shear_canny() -> Self {
        AugmentationPair {
            first: AugmentationSpec::new(AugmentationKind::ShearX),
            second: AugmentationSpec::new(AugmentationKind::CannyEdge),
        }
    }

    pub fn rotate_flip() -> Self {
        AugmentationPair {
            first: AugmentationSpec::Rotate90Cw,
            second: AugmentationSpec::FlipLr,
        }
    }

    pub fn get(&self, k: usize) -> &AugmentationSpec {
        match k {
            0 => &self.first,
            1 => &self.second,
            _ => panic!("augmentation pair index {k} out of range"),
        }
    }

    /// Filesystem- and table-friendly label, e.g. `flip_lr+flip_ud`.
    pub fn label(&self) -> String {
        format!("{}+{}", self.first.kind().name(), self.second.kind().name())
    }
}

impl fmt::Display for AugmentationPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.first, self.second)
    }
}

impl FromStr for AugmentationPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| Error::ConfigInvalid(format!("pair `{s}` must be `a,b`")))?;
        AugmentationPair::new(a.parse()?, b.parse()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermuteMode {
    FlipLr,
    FlipUd,
    Rotate90Cw,
}

pub fn permute_flip_rotate(image: &Image, mode: PermuteMode) -> Image {
    let (rows, cols) = (image.rows, image.cols);
    match mode {
        PermuteMode::FlipLr => {
            let mut out = Image::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    out.set(r, c, image.get(r, cols - 1 - c));
                }
            }
            out
        }
        PermuteMode::FlipUd => {
            let mut out = Image::zeros(rows, cols);
            for r in 0..rows {
                out.data[r * cols..(r + 1) * cols].copy_from_slice(&image.data[(rows - 1 - r) * cols..(rows - r) * cols]);
            }
            out
        }
        PermuteMode::Rotate90Cw => {
            let mut out = Image::zeros(cols, rows);
            for r in 0..cols {
                for c in 0..rows {
                    out.set(r, c, image.get(rows - 1 - c, r));
                }
            }
            out
        }
    }
}

/// Horizontal shear about the image centre row with linear resampling:
/// `out(r, c) = in(r, c - factor * (r - centre))`, zero outside the image.
pub fn shear_x(image: &Image, factor: f32) -> Result<Image> {
    if !(factor.abs() <= 1.0) {
        return Err(Error::FactorOutOfRange(factor));
    }
    let centre = (image.rows as f64 - 1.0) / 2.0;
    let factor = factor as f64;
    let read = |r: usize, c: i64| -> f64 {
        if c < 0 || c >= image.cols as i64 {
            0.0
        } else {
            image.get(r, c as usize) as f64
        }
    };
    let mut out = Image::zeros(image.rows, image.cols);
    for r in 0..image.rows {
        let shift = factor * (r as f64 - centre);
        for c in 0..image.cols {
            let x = c as f64 - shift;
            let x0 = x.floor();
            let t = x - x0;
            let x0 = x0 as i64;
            let v = (1.0 - t) * read(r, x0) + t * read(r, x0 + 1);
            out.set(r, c, v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn gaussian_blur(src: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            tmp[r * cols + c] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * src[r * cols + clamp(c as i64 + i as i64 - radius, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * tmp[clamp(r as i64 + i as i64 - radius, rows) * cols + c])
                .sum();
        }
    }
    out
}

/// Binary Canny edge map: Gaussian blur, Sobel gradients, non-maximum
/// suppression over four quantized directions, then hysteresis with
/// thresholds relative to the maximum gradient magnitude.
pub fn canny_edge(image: &Image, sigma: f32, low: f32, high: f32) -> Result<Image> {
    AugmentationSpec::CannyEdge { sigma, low, high }.validate()?;
    let (rows, cols) = (image.rows, image.cols);
    let src: Vec<f64> = image.data.iter().map(|&v| v as f64).collect();
    let blurred = gaussian_blur(&src, rows, cols, sigma as f64);

    let at = |r: i64, c: i64| -> f64 {
        let r = r.clamp(0, rows as i64 - 1) as usize;
        let c = c.clamp(0, cols as i64 - 1) as usize;
        blurred[r * cols + c]
    };
    let mut mag = vec![0.0; rows * cols];
    let mut dir = vec![0u8; rows * cols];
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            let i = r as usize * cols + c as usize;
            mag[i] = gx.hypot(gy);
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(Image::zeros(rows, cols));
    }

    let mag_at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
            0.0
        } else {
            mag[r as usize * cols + c as usize]
        }
    };
    // (dr, dc) of the neighbour along the positive gradient direction.
    const STEP: [(i64, i64); 4] = [(0, 1), (1, 1), (1, 0), (1, -1)];
    let mut thin = vec![0.0; rows * cols];
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            let i = r as usize * cols + c as usize;
            let m = mag[i];
            let (dr, dc) = STEP[dir[i] as usize];
            // Strict on one side so that a plateau straddling an edge keeps one pixel.
            if m > 0.0 && m > mag_at(r - dr, c - dc) && m >= mag_at(r + dr, c + dc) {
                thin[i] = m;
            }
        }
    }

    let (lo, hi) = (low as f64 * max, high as f64 * max);
    let mut out = Image::zeros(rows, cols);
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= hi {
            out.data[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / cols) as i64, (i % cols) as i64);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                    continue;
                }
                let j = nr as usize * cols + nc as usize;
                if out.data[j] == 0.0 && thin[j] >= lo && thin[j] > 0.0 {
                    out.data[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}

/// Max-blends a half-scale, 2x2 box-averaged copy into the centre of the image.
pub fn nested_mini(image: &Image) -> Image {
    let (rows, cols) = (image.rows, image.cols);
    let (h, w) = (rows / 2, cols / 2);
    let (r0, c0) = ((rows - h) / 2, (cols - w) / 2);
    let mut out = image.clone();
    for r in 0..h {
        for c in 0..w {
            let avg = (image.get(2 * r, 2 * c)
                + image.get(2 * r, 2 * c + 1)
                + image.get(2 * r + 1, 2 * c)
                + image.get(2 * r + 1, 2 * c + 1))
                / 4.0;
            let (rr, cc) = (r0 + r, c0 + c);
            out.set(rr, cc, out.get(rr, cc).max(avg));
        }
    }
    out
}

pub fn apply_spec(spec: &AugmentationSpec, image: &Image) -> Result<Image> {
    match *spec {
        AugmentationSpec::FlipLr => Ok(permute_flip_rotate(image, PermuteMode::FlipLr)),
        AugmentationSpec::FlipUd => Ok(permute_flip_rotate(image, PermuteMode::FlipUd)),
        AugmentationSpec::Rotate90Cw => Ok(permute_flip_rotate(image, PermuteMode::Rotate90Cw)),
        AugmentationSpec::ShearX { factor } => shear_x(image, factor),
        AugmentationSpec::CannyEdge { sigma, low, high } => canny_edge(image, sigma, low, high),
        AugmentationSpec::NestedMini => Ok(nested_mini(image)),
    }
}
