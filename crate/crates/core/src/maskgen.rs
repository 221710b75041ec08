//! Pseudo-annotated masks: synthesis from labeled segments, nearest-neighbour
//! resizing and 8-bit grayscale PNG storage.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::graphseg::SegmentSet;

/// Label of pixels that belong to noisy segments.
pub const UNLABELED: u8 = 255;

/// Per-pixel u8 label image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl PseudoMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Count of every label value 0..=255.
    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn labeled_pixels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }
}

/// Paints every patch with its segment's label; patches of unlabeled
/// segments get [`UNLABELED`]. The mask is `rows·t x cols·t`.
pub fn synthesize_mask(labeled: &SegmentSet, patch_side: usize) -> Result<PseudoMask> {
    if patch_side == 0 {
        return Err(Error::InvalidArgument("patch side must be positive".into()));
    }
    let grid = labeled.grid;
    let mut patch_labels = vec![UNLABELED; grid.len()];
    for seg in &labeled.segments {
        let label = seg.label.unwrap_or(UNLABELED);
        for &p in &seg.patches {
            if p >= grid.len() {
                return Err(Error::DimensionMismatch(format!(
                    "patch {p} outside {}x{} grid",
                    grid.rows, grid.cols
                )));
            }
            patch_labels[p] = label;
        }
    }
    let height = grid.rows * patch_side;
    let width = grid.cols * patch_side;
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        let row = y / patch_side;
        for x in 0..width {
            labels.push(patch_labels[grid.index(row, x / patch_side)]);
        }
    }
    PseudoMask::new(height, width, labels)
}

/// Nearest-neighbour resampling: target `(y, x)` reads source
/// `(floor(y·h_src/h), floor(x·w_src/w))`.
pub fn resize_mask(mask: &PseudoMask, height: usize, width: usize) -> Result<PseudoMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "target size must be positive".into(),
        ));
    }
    let src_rows: Vec<usize> = (0..height).map(|y| y * mask.height / height).collect();
    let src_cols: Vec<usize> = (0..width).map(|x| x * mask.width / width).collect();
    let mut labels = Vec::with_capacity(height * width);
    for &sy in &src_rows {
        for &sx in &src_cols {
            labels.push(mask.get(sy, sx));
        }
    }
    PseudoMask::new(height, width, labels)
}

pub fn write_mask_png(mask: &PseudoMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(mask.width as u32, mask.height as u32, mask.labels.clone())
        .expect("buffer size matches dimensions");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| png_error(path, e))
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<PseudoMask> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| png_error(path, e))?;
    match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            PseudoMask::new(h as usize, w as usize, gray.into_raw())
        }
        other => Err(Error::NotGrayscale(format!("{:?}", other.color()))),
    }
}

fn png_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Png {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Debug rendering with a fixed palette; UNLABELED is black.
pub fn colorize(mask: &PseudoMask) -> RgbImage {
    RgbImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        let l = mask.get(y as usize, x as usize);
        if l == UNLABELED {
            return Rgb([0, 0, 0]);
        }
        // golden-ratio hue walk keeps neighbouring ids apart
        let h = (l as f64 * 0.618_033_988_75).fract() * 6.0;
        let sector = h.floor() as u8;
        let f = h.fract();
        let (hi, lo) = (230.0, 50.0);
        let up = lo + (hi - lo) * f;
        let down = hi - (hi - lo) * f;
        let (r, g, b) = match sector {
            0 => (hi, up, lo),
            1 => (down, hi, lo),
            2 => (lo, hi, up),
            3 => (lo, down, hi),
            4 => (up, lo, hi),
            _ => (hi, lo, down),
        };
        Rgb([r as u8, g as u8, b as u8])
    })
}
