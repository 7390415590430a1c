//! Synthetic blob segmentation data: bright ellipses (ellipsoids in 3D) on a
//! darker noisy background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Image, Sample};
use crate::error::{config_err, Result};

const NOISE_SIGMA: f64 = 0.05;

struct Blob {
    center: [f64; 3],
    radii: [f64; 3],
    angle: f64,
    intensity: f64,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, size: f64, dims: usize) -> Self {
        let mut center = [0.0; 3];
        let mut radii = [1.0; 3];
        for axis in 0..dims {
            center[axis] = rng.random_range(0.2..0.8) * size;
            radii[axis] = rng.random_range(0.1..0.25) * size;
        }
        Self {
            center,
            radii,
            angle: rng.random_range(0.0..std::f64::consts::PI),
            intensity: rng.random_range(0.6..0.9),
        }
    }

    /// `p` in (z, y, x) order; only the trailing `dims` entries matter.
    fn contains(&self, p: [f64; 3], dims: usize) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dy = p[1] - self.center[1];
        let dx = p[2] - self.center[2];
        // rotate in the (y, x) plane
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let mut r = (u / self.radii[2]).powi(2) + (v / self.radii[1]).powi(2);
        if dims == 3 {
            r += ((p[0] - self.center[0]) / self.radii[0]).powi(2);
        }
        r <= 1.0
    }
}

fn one_sample(rng: &mut ChaCha8Rng, size: usize, dims: usize) -> (Vec<f64>, Vec<f64>) {
    let count = rng.random_range(1..=4);
    // In 3D the blob axes are drawn in (z, y, x); reuse the same slots in 2D.
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let mut b = Blob::random(rng, size as f64, 3);
            if dims == 2 {
                b.center[0] = 0.0;
            }
            b
        })
        .collect();
    let background = rng.random_range(0.1..0.3);
    let noise = Normal::new(0.0, NOISE_SIGMA).unwrap();
    let depth = if dims == 3 { size } else { 1 };
    let n = depth * size * size;
    let mut image = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for z in 0..depth {
        for y in 0..size {
            for x in 0..size {
                let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
                let inside = blobs
                    .iter()
                    .filter(|b| b.contains(p, dims))
                    .map(|b| b.intensity)
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
                let base = inside.unwrap_or(background);
                image.push((base + noise.sample(rng)).clamp(0.0, 1.0));
                mask.push(if inside.is_some() { 1.0 } else { 0.0 });
            }
        }
    }
    (image, mask)
}

/// Generates `n` samples of `size`² (or `size`³ when `dims == 3`) pixels.
///
/// Each image holds one to four ellipses of intensity 0.6–0.9 over a
/// background of 0.1–0.3 with additive Gaussian noise (σ = 0.05), clamped to
/// `[0, 1]`. The mask is the union of the ellipses and is never empty or
/// full. Output depends only on the arguments.
pub fn gen_synthetic(n: usize, size: usize, seed: u64, dims: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(config_err("synthetic dataset needs n >= 1"));
    }
    if size < 16 {
        return Err(config_err(format!("synthetic size must be >= 16, got {size}")));
    }
    if !(2..=3).contains(&dims) {
        return Err(config_err(format!("dims must be 2 or 3, got {dims}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spatial = if dims == 3 { vec![size; 3] } else { vec![size; 2] };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (image, mask) = one_sample(&mut rng, size, dims);
        let fg = mask.iter().sum::<f64>();
        if fg == 0.0 || fg == mask.len() as f64 {
            continue;
        }
        out.push(Sample::new(
            format!("synth_{:04}", out.len()),
            Image::new(spatial.clone(), 1, image)?,
            Image::new(spatial.clone(), 1, mask)?,
        )?);
    }
    Ok(out)
}
