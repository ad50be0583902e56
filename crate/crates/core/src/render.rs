//! Image grids as binary PGM plus small text sidecars.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dataset::Image;
use crate::error::{Error, Result};

/// Grey level of the 1-pixel separators between tiles.
pub const SEPARATOR: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Pgm {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::DegenerateData(format!("not a binary PGM: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("magic"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("dimension"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("maxval must be 255"));
        }
        let data = &bytes[(pos + 1).min(bytes.len())..];
        if data.len() < width * height {
            return Err(Error::Truncated {
                needed: width * height,
                available: data.len(),
            });
        }
        Ok(Pgm {
            width,
            height,
            pixels: data[..width * height].to_vec(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tiles `images` row-major into a `rows x cols` grid; unused tiles stay black.
pub fn tile_grid(images: &[Image], rows: usize, cols: usize) -> Result<Pgm> {
    let first = images
        .first()
        .ok_or_else(|| Error::DegenerateData("grid needs at least one image".into()))?;
    if rows * cols < images.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images do not fit a {rows}x{cols} grid",
            images.len()
        )));
    }
    let (h, w) = (first.rows, first.cols);
    if images.iter().any(|i| i.rows != h || i.cols != w) {
        return Err(Error::ShapeMismatch("grid images differ in size".into()));
    }
    let width = cols * w + cols - 1;
    let height = rows * h + rows - 1;
    let mut pixels = vec![SEPARATOR; width * height];
    for r in 0..rows {
        for c in 0..cols {
            let img = images.get(r * cols + c);
            for y in 0..h {
                for x in 0..w {
                    let v = img.map_or(0, |i| to_byte(i.get(y, x)));
                    pixels[(r * (h + 1) + y) * width + c * (w + 1) + x] = v;
                }
            }
        }
    }
    Ok(Pgm { width, height, pixels })
}

/// Sidecar path for tile labels: `<path>.labels.txt`.
pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels.txt");
    PathBuf::from(s)
}

/// Writes the grid and, when `labels` is given, a `row\tcol\tlabel` sidecar.
pub fn export_grid(images: &[Image], rows: usize, cols: usize, path: impl AsRef<Path>, labels: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    tile_grid(images, rows, cols)?.write(path)?;
    if let Some(labels) = labels {
        let mut s = String::new();
        for (i, l) in labels.iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{l}", i / cols, i % cols);
        }
        let lp = labels_path(path);
        std::fs::write(&lp, s).map_err(|e| Error::io(lp, e))?;
    }
    Ok(())
}

/// `label,x,y` rows for 2-D scatter plots.
pub fn write_scatter(path: impl AsRef<Path>, coords: &[[f64; 2]], labels: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("label,x,y\n");
    for (i, c) in coords.iter().enumerate() {
        let l = labels.get(i).map_or("", String::as_str);
        let _ = writeln!(s, "{l},{:.9},{:.9}", c[0], c[1]);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
