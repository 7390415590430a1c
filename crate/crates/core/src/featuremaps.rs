//! Local feature maps lifting a single pixel intensity in `[0, 1]` to a
//! `d`-dimensional vector.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensors::DenseTensor;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// `sqrt(C(d-1, k)) cos(πx/2)^(d-1-k) sin(πx/2)^k`, `k = 0..d`.
    BinomialSinusoidal,
    /// `[x, 1 - x]`; `d` must be 2.
    LinearComplement,
    /// `[sin(2^i πx), cos(2^i πx)]` for `i = 1..=d/2`; `d` must be even.
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureMap")]
pub struct LocalFeatureMap {
    kind: FeatureKind,
    d: usize,
}

#[derive(Deserialize)]
struct RawFeatureMap {
    kind: FeatureKind,
    d: usize,
}

impl TryFrom<RawFeatureMap> for LocalFeatureMap {
    type Error = crate::Error;

    fn try_from(raw: RawFeatureMap) -> Result<Self> {
        Self::new(raw.kind, raw.d)
    }
}

impl Default for LocalFeatureMap {
    fn default() -> Self {
        Self {
            kind: FeatureKind::BinomialSinusoidal,
            d: 4,
        }
    }
}

impl LocalFeatureMap {
    pub fn new(kind: FeatureKind, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(config_err(format!("feature_map.d must be >= 2, got {d}")));
        }
        match kind {
            FeatureKind::LinearComplement if d != 2 => Err(config_err(format!(
                "feature_map.d must be 2 for linear-complement, got {d}"
            ))),
            FeatureKind::Fourier if !d.is_multiple_of(2) => {
                Err(config_err(format!("feature_map.d must be even for fourier, got {d}")))
            }
            _ => Ok(Self { kind, d }),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn apply(&self, x: f64) -> DenseTensor {
        let mut out = vec![0.0; self.d];
        self.apply_into(x, &mut out);
        DenseTensor::vector(out)
    }

    /// Writes `ψ(x)` into `out[..d]`. Values outside `[0, 1]` are clamped.
    pub fn apply_into(&self, x: f64, out: &mut [f64]) {
        let x = clamp_unit(x);
        let out = &mut out[..self.d];
        match self.kind {
            FeatureKind::BinomialSinusoidal => {
                let (s, c) = (FRAC_PI_2 * x).sin_cos();
                let n = self.d - 1;
                let mut binom: f64 = 1.0;
                for (k, o) in out.iter_mut().enumerate() {
                    *o = binom.sqrt() * c.powi((n - k) as i32) * s.powi(k as i32);
                    binom = binom * (n - k) as f64 / (k + 1) as f64;
                }
            }
            FeatureKind::LinearComplement => {
                out[0] = x;
                out[1] = 1.0 - x;
            }
            FeatureKind::Fourier => {
                for (i, pair) in out.chunks_exact_mut(2).enumerate() {
                    let (s, c) = (2f64.powi(i as i32 + 1) * PI * x).sin_cos();
                    pair[0] = s;
                    pair[1] = c;
                }
            }
        }
    }

    /// `dψ/dx` at `x` (after clamping).
    pub fn derivative(&self, x: f64) -> DenseTensor {
        let x = clamp_unit(x);
        let mut out = vec![0.0; self.d];
        match self.kind {
            FeatureKind::BinomialSinusoidal => {
                let (s, c) = (FRAC_PI_2 * x).sin_cos();
                let n = self.d - 1;
                let mut binom: f64 = 1.0;
                for (k, o) in out.iter_mut().enumerate() {
                    let (a, b) = ((n - k) as i32, k as i32);
                    // d/dθ c^a s^b = b c^(a+1) s^(b-1) - a c^(a-1) s^(b+1)
                    let up = if b > 0 {
                        b as f64 * c.powi(a + 1) * s.powi(b - 1)
                    } else {
                        0.0
                    };
                    let down = if a > 0 {
                        a as f64 * c.powi(a - 1) * s.powi(b + 1)
                    } else {
                        0.0
                    };
                    *o = binom.sqrt() * FRAC_PI_2 * (up - down);
                    binom = binom * (n - k) as f64 / (k + 1) as f64;
                }
            }
            FeatureKind::LinearComplement => {
                out[0] = 1.0;
                out[1] = -1.0;
            }
            FeatureKind::Fourier => {
                for (i, pair) in out.chunks_exact_mut(2).enumerate() {
                    let w = 2f64.powi(i as i32 + 1) * PI;
                    let (s, c) = (w * x).sin_cos();
                    pair[0] = w * c;
                    pair[1] = -w * s;
                }
            }
        }
        DenseTensor::vector(out)
    }

    /// Concatenated per-channel features, channel 0 first.
    pub fn apply_channels(&self, pixel: &[f64]) -> DenseTensor {
        let mut out = vec![0.0; pixel.len() * self.d];
        self.apply_channels_into(pixel, &mut out);
        DenseTensor::vector(out)
    }

    pub fn apply_channels_into(&self, pixel: &[f64], out: &mut [f64]) {
        for (x, chunk) in pixel.iter().zip(out.chunks_exact_mut(self.d)) {
            self.apply_into(*x, chunk);
        }
    }

    /// Coefficients `u` with `u · ψ(x) ≈ 1` across `[0, 1]` (least squares on
    /// a dense grid). Used to bias freshly initialised MPS sites towards an
    /// identity transfer matrix. Returns `None` when no combination of the
    /// features approximates a constant.
    pub fn unit_response(&self) -> Option<Vec<f64>> {
        const GRID: usize = 257;
        let d = self.d;
        let mut rows = Vec::with_capacity(GRID * d);
        let mut buf = vec![0.0; d];
        for g in 0..GRID {
            self.apply_into(g as f64 / (GRID - 1) as f64, &mut buf);
            rows.extend_from_slice(&buf);
        }
        let a = DMatrix::from_row_slice(GRID, d, &rows);
        let ones = DVector::from_element(GRID, 1.0);
        let mut normal = a.transpose() * &a;
        for i in 0..d {
            normal[(i, i)] += 1e-10;
        }
        let u = normal.cholesky()?.solve(&(a.transpose() * &ones));
        let rms = ((&a * &u - &ones).norm_squared() / GRID as f64).sqrt();
        (rms < 0.25).then(|| u.iter().copied().collect())
    }
}

fn clamp_unit(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        return x;
    }
    if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("pixel value {x} outside [0, 1]; clamping (further occurrences not reported)");
    }
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}
