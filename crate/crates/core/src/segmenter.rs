//! A trained (or trainable) strided segmenter: tiling, local features and
//! one weight-shared MPS applied to every patch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{config_err, Result};
use crate::featuremaps::LocalFeatureMap;
use crate::mps::MpsModel;
use crate::patching::{ravel, unravel, PatchGrid};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spatial rank of the inputs: 2 or 3.
    pub dims: usize,
    /// Patch edge (and stride) `K`.
    pub patch_size: usize,
    /// Bond dimension `β`.
    pub bond_dim: usize,
    pub feature_map: LocalFeatureMap,
    /// Input channels `C`.
    pub channels: usize,
    /// Prediction channels per pixel `M`.
    #[serde(default = "one")]
    pub classes: usize,
}

fn one() -> usize {
    1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dims) {
            return Err(config_err(format!("dims must be 2 or 3, got {}", self.dims)));
        }
        if self.patch_size < 2 {
            return Err(config_err(format!("patch_size must be >= 2, got {}", self.patch_size)));
        }
        if self.bond_dim == 0 || self.channels == 0 || self.classes == 0 {
            return Err(config_err("bond_dim, channels and classes must be >= 1"));
        }
        Ok(())
    }

    /// Sites per chain: `K^dims`.
    pub fn sites(&self) -> usize {
        self.patch_size.pow(self.dims as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmenter {
    config: ModelConfig,
    mps: MpsModel,
}

/// One image cut into patches and lifted to feature space.
pub struct Featurized {
    pub grid: PatchGrid,
    /// Per patch: `N` feature vectors of length `C·d`, concatenated.
    pub features: Vec<Vec<f64>>,
}

impl Segmenter {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mps = MpsModel::init(
            config.patch_size,
            config.dims,
            config.classes,
            config.channels,
            &config.feature_map,
            config.bond_dim,
            seed,
        )?;
        Ok(Self { config, mps })
    }

    pub fn from_parts(config: ModelConfig, mps: MpsModel) -> Result<Self> {
        config.validate()?;
        let n = config.sites();
        if mps.n_sites() != n
            || mps.feature_dim() != config.channels * config.feature_map.dim()
            || mps.out_dim() != n * config.classes
            || mps.bond_dim() != config.bond_dim
        {
            return Err(config_err("MPS shapes do not match the model configuration"));
        }
        Ok(Self { config, mps })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mps(&self) -> &MpsModel {
        &self.mps
    }

    pub fn mps_mut(&mut self) -> &mut MpsModel {
        &mut self.mps
    }

    /// Rejects images of the wrong spatial rank or channel count.
    pub fn check_image(&self, image: &Image) -> Result<()> {
        if image.spatial_rank() != self.config.dims {
            return Err(config_err(format!(
                "model expects {}D inputs, image has dims {:?}",
                self.config.dims,
                image.dims()
            )));
        }
        if image.channels() != self.config.channels {
            return Err(config_err(format!(
                "model expects {} channel(s), image has {}",
                self.config.channels,
                image.channels()
            )));
        }
        Ok(())
    }

    /// Maps `K^dims · C` raw patch values to `N · C·d` features.
    pub fn patch_features(&self, patch: &[f64]) -> Vec<f64> {
        let c = self.config.channels;
        let fd = c * self.config.feature_map.dim();
        let mut out = vec![0.0; patch.len() / c * fd];
        for (px, slot) in patch.chunks_exact(c).zip(out.chunks_exact_mut(fd)) {
            self.config.feature_map.apply_channels_into(px, slot);
        }
        out
    }

    pub fn featurize(&self, image: &Image) -> Result<Featurized> {
        self.check_image(image)?;
        let (grid, patches) = ravel(image, self.config.patch_size)?;
        let features = patches.iter().map(|p| self.patch_features(p)).collect();
        Ok(Featurized { grid, features })
    }

    /// Raw per-pixel logits, `M` channels. Expects values already in `[0, 1]`.
    pub fn predict_logits(&self, image: &Image) -> Result<Image> {
        let f = self.featurize(image)?;
        let preds = f
            .features
            .par_iter()
            .map(|feat| self.mps.forward(feat))
            .collect::<Result<Vec<_>>>()?;
        unravel(&f.grid, &preds)
    }

    /// Per-pixel foreground probabilities.
    pub fn predict_soft(&self, image: &Image) -> Result<Image> {
        let mut logits = self.predict_logits(image)?;
        logits.data_mut().iter_mut().for_each(|z| *z = sigmoid(*z));
        Ok(logits)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
