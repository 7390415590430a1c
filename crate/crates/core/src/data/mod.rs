//! Images, masks, file formats and datasets.

mod pnm;
mod synth;
mod volume;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{at_path, config_err, dim_err, Error, Result};

pub use pnm::{load_pnm, read_pnm, write_pgm, write_pnm};
pub use synth::gen_synthetic;
pub use volume::{load_volume, read_volume, write_volume};

/// A dense 2D (`[H, W]`) or 3D (`[D, H, W]`) array with interleaved
/// channels, stored row-major with the channel index fastest.
///
/// Used for input images (values in `[0, 1]`), binary masks, soft
/// predictions and raw logits alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: Vec<usize>,
    channels: usize,
    data: Vec<f64>,
    bit_depth: Option<u32>,
}

/// Single-channel image holding `{0, 1}` labels or per-pixel scores.
pub type Mask = Image;

impl Image {
    pub fn new(dims: Vec<usize>, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(dim_err(format!("images must be 2D or 3D, got dims {dims:?}")));
        }
        if channels == 0 || dims.contains(&0) {
            return Err(dim_err(format!(
                "image extents must be >= 1, got dims {dims:?} with {channels} channels"
            )));
        }
        let len = dims.iter().product::<usize>() * channels;
        if len != data.len() {
            return Err(dim_err(format!(
                "image {dims:?}x{channels} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            channels,
            data,
            bit_depth: None,
        })
    }

    pub fn zeros(dims: Vec<usize>, channels: usize) -> Result<Self> {
        let len = dims.iter().product::<usize>() * channels;
        Self::new(dims, channels, vec![0.0; len])
    }

    pub fn with_bit_depth(mut self, bits: u32) -> Self {
        self.bit_depth = Some(bits);
        self
    }

    /// Spatial extents, `[H, W]` or `[D, H, W]`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spatial_rank(&self) -> usize {
        self.dims.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Bit depth of the file the image was decoded from, if any.
    pub fn bit_depth(&self) -> Option<u32> {
        self.bit_depth
    }

    pub fn pixel(&self, linear: usize) -> &[f64] {
        &self.data[linear * self.channels..(linear + 1) * self.channels]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Min-max rescaling of all values to `[0, 1]`; constant images map to zeros.
    pub fn normalized(&self) -> Self {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        let data = if range > 0.0 && range.is_finite() {
            self.data.iter().map(|v| (v - lo) / range).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Self { data, ..self.clone() }
    }

    /// Mirror along the last (x) axis.
    pub fn flip_x(&self) -> Self {
        let w = *self.dims.last().unwrap();
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(w * c) {
            for px in row.chunks_exact(c).rev() {
                data.extend_from_slice(px);
            }
        }
        Self { data, ..self.clone() }
    }

    /// Quarter turn in the (y, x) plane; `[.., H, W]` becomes `[.., W, H]`.
    pub fn rot90(&self) -> Self {
        let r = self.dims.len();
        let (h, w) = (self.dims[r - 2], self.dims[r - 1]);
        let c = self.channels;
        let plane = h * w * c;
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(plane).zip(data.chunks_exact_mut(plane)) {
            for y in 0..h {
                for x in 0..w {
                    // (y, x) -> (w - 1 - x, y) in the new [W, H] plane
                    let to = ((w - 1 - x) * h + y) * c;
                    let from = (y * w + x) * c;
                    dst[to..to + c].copy_from_slice(&src[from..from + c]);
                }
            }
        }
        let mut dims = self.dims.clone();
        dims.swap(r - 2, r - 1);
        Self {
            dims,
            data,
            ..self.clone()
        }
    }

    /// Binary copy: 1 where the first channel is at least `threshold`.
    pub fn thresholded(&self, threshold: f64) -> Mask {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| if px[0] >= threshold { 1.0 } else { 0.0 })
            .collect();
        Self {
            dims: self.dims.clone(),
            channels: 1,
            data,
            bit_depth: None,
        }
    }
}

/// An image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, mask: Mask) -> Result<Self> {
        let id = id.into();
        if image.dims() != mask.dims() {
            return Err(dim_err(format!(
                "sample {id}: image dims {:?} differ from mask dims {:?}",
                image.dims(),
                mask.dims()
            )));
        }
        if mask.channels() != 1 || !mask.is_binary() {
            return Err(config_err(format!("sample {id}: mask must be single-channel binary")));
        }
        Ok(Self { id, image, mask })
    }

    /// Same flip/rotation applied to image and mask.
    pub fn transformed(&self, flip: bool, quarter_turns: usize) -> Self {
        let mut image = if flip { self.image.flip_x() } else { self.image.clone() };
        let mut mask = if flip { self.mask.flip_x() } else { self.mask.clone() };
        for _ in 0..quarter_turns % 4 {
            image = image.rot90();
            mask = mask.rot90();
        }
        Self {
            id: self.id.clone(),
            image,
            mask,
        }
    }
}

/// Seeded shuffle followed by a train/val/test partition.
///
/// Partition sizes are `round(f_train · n)`, `round(f_val · n)` and the rest.
pub fn split(samples: &[Sample], fractions: [f64; 3], seed: u64) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(config_err(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = samples.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(config_err(format!(
            "split of {n} samples by {fractions:?} leaves an empty partition ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| samples[i].clone()).collect();
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    ))
}

const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "ppm", "stv"];

/// Loads a `.stv` volume or a PNM image, chosen by extension.
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("stv") => load_volume(path),
        _ => load_pnm(path),
    }
}

/// Reads `root/images/*.{pgm,ppm,stv}` paired with `root/masks/<stem>.{pgm,stv}`.
///
/// Samples are returned sorted by stem. Masks are binarised at half their
/// maximum value.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    let entries =
        std::fs::read_dir(&images_dir).map_err(|e| config_err(format!("cannot read {}: {e}", images_dir.display())))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e))
        {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(config_err(format!("no images found in {}", images_dir.display())));
    }
    let mut samples = Vec::with_capacity(paths.len());
    for path in paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let mask_path = ["pgm", "stv"]
            .iter()
            .map(|ext| masks_dir.join(format!("{stem}.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| config_err(format!("no mask for image {}", path.display())))?;
        let image = load_image(&path)?;
        let mask = load_image(&mask_path)?.thresholded(0.5);
        samples.push(Sample::new(stem, image, mask)?);
    }
    Ok(samples)
}

/// Writes samples in the [`load_dataset`] layout: 8-bit PGM/PPM for 2D,
/// STV1 volumes for 3D, masks as `{0, 255}` PGM (2D) or STV1 (3D).
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    for dir in [&images_dir, &masks_dir] {
        std::fs::create_dir_all(dir).map_err(|e| at_path(dir)(e.into()))?;
    }
    for s in samples {
        match s.image.spatial_rank() {
            2 => {
                let ext = if s.image.channels() == 3 { "ppm" } else { "pgm" };
                write_pnm(&images_dir.join(format!("{}.{ext}", s.id)), &s.image, 255)?;
                write_pgm(&masks_dir.join(format!("{}.pgm", s.id)), &s.mask, 255)?;
            }
            _ => {
                write_volume(&images_dir.join(format!("{}.stv", s.id)), &s.image)?;
                write_volume(&masks_dir.join(format!("{}.stv", s.id)), &s.mask)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}
