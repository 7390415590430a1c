//! Non-overlapping `K×K` (or `K×K×K`) patch tiling.
//!
//! `ravel` zero-pads an image on the high side of every axis up to a
//! multiple of `K`, enumerates patches row-major over the patch lattice and
//! flattens each patch row-major (z, then y, then x) into a pixel sequence.
//! `unravel` is the inverse for per-pixel predictions, cropping the padding.

use crate::data::Image;
use crate::error::{config_err, dim_err, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    image_dims: Vec<usize>,
    patch: usize,
    padded_dims: Vec<usize>,
    lattice: Vec<usize>,
    channels: usize,
}

impl PatchGrid {
    pub fn new(image_dims: &[usize], patch: usize, channels: usize) -> Result<Self> {
        if patch < 2 {
            return Err(config_err(format!("patch size K must be >= 2, got {patch}")));
        }
        if !(2..=3).contains(&image_dims.len()) || image_dims.contains(&0) {
            return Err(dim_err(format!("cannot tile image dims {image_dims:?}")));
        }
        let lattice: Vec<usize> = image_dims.iter().map(|d| d.div_ceil(patch)).collect();
        Ok(Self {
            image_dims: image_dims.to_vec(),
            patch,
            padded_dims: lattice.iter().map(|l| l * patch).collect(),
            lattice,
            channels,
        })
    }

    pub fn image_dims(&self) -> &[usize] {
        &self.image_dims
    }

    pub fn padded_dims(&self) -> &[usize] {
        &self.padded_dims
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_count(&self) -> usize {
        self.lattice.iter().product()
    }

    /// Pixels per patch: `K²` or `K³`.
    pub fn pixels_per_patch(&self) -> usize {
        self.patch.pow(self.image_dims.len() as u32)
    }

    /// Image coordinates (z, y, x order; 2D has two entries) of every pixel
    /// of patch `p`, in sequence order. Coordinates may fall in the padding.
    fn patch_coords(&self, p: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let rank = self.image_dims.len();
        let mut origin = vec![0; rank];
        let mut rest = p;
        for axis in (0..rank).rev() {
            origin[axis] = (rest % self.lattice[axis]) * self.patch;
            rest /= self.lattice[axis];
        }
        (0..self.pixels_per_patch()).map(move |q| {
            let mut coord = origin.clone();
            let mut rest = q;
            for axis in (0..rank).rev() {
                coord[axis] += rest % self.patch;
                rest /= self.patch;
            }
            coord
        })
    }

    fn linear_index(&self, coord: &[usize]) -> Option<usize> {
        let mut idx = 0;
        for (&c, &d) in coord.iter().zip(&self.image_dims) {
            if c >= d {
                return None;
            }
            idx = idx * d + c;
        }
        Some(idx)
    }

    /// Per-patch lookup table: original pixel index of each sequence
    /// position, or `None` for padding.
    pub fn source_indices(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.patch_count())
            .map(|p| self.patch_coords(p).map(|c| self.linear_index(&c)).collect())
            .collect()
    }
}

/// Splits `image` into flattened patches of `K^dims · C` values each
/// (pixel-major, channels interleaved).
pub fn ravel(image: &Image, patch: usize) -> Result<(PatchGrid, Vec<Vec<f64>>)> {
    let grid = PatchGrid::new(image.dims(), patch, image.channels())?;
    let c = image.channels();
    let patches = grid
        .source_indices()
        .into_iter()
        .map(|seq| {
            let mut out = vec![0.0; seq.len() * c];
            for (slot, src) in out.chunks_exact_mut(c).zip(seq) {
                if let Some(i) = src {
                    slot.copy_from_slice(image.pixel(i));
                }
            }
            out
        })
        .collect();
    Ok((grid, patches))
}

/// Tiles per-patch predictions (`K^dims · M` values each, pixel-major)
/// back into an `M`-channel image of the original extent.
pub fn unravel(grid: &PatchGrid, predictions: &[Vec<f64>]) -> Result<Image> {
    if predictions.len() != grid.patch_count() {
        return Err(dim_err(format!(
            "expected {} patch predictions, got {}",
            grid.patch_count(),
            predictions.len()
        )));
    }
    let ppp = grid.pixels_per_patch();
    let first = predictions[0].len();
    if first == 0 || !first.is_multiple_of(ppp) {
        return Err(dim_err(format!(
            "patch prediction length {first} is not a multiple of {ppp}"
        )));
    }
    let m = first / ppp;
    let mut out = Image::zeros(grid.image_dims.clone(), m)?;
    let data = out.data_mut();
    for (p, (seq, pred)) in grid.source_indices().into_iter().zip(predictions).enumerate() {
        if pred.len() != first {
            return Err(dim_err(format!(
                "patch {p} prediction has length {}, expected {first}",
                pred.len()
            )));
        }
        for (src, vals) in seq.into_iter().zip(pred.chunks_exact(m)) {
            if let Some(i) = src {
                data[i * m..(i + 1) * m].copy_from_slice(vals);
            }
        }
    }
    Ok(out)
}
