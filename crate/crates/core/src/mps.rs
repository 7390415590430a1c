//! Weight-shared matrix product state mapping one patch to per-pixel logits.
//!
//! The chain holds `N` order-3 site tensors `[left, C·d, right]` and one
//! output tensor `[β, P, β]` without a physical leg, inserted before site
//! `⌈N/2⌉`. Outer bonds have extent 1, inner bonds extent `β`. For a patch
//! with per-pixel feature vectors `f_1 … f_N`,
//!
//! ```text
//! logits[p] = l_c · O[:, p, :] · r_c
//! l_c = e_0 · M_1 ⋯ M_c,   r_c = M_{c+1} ⋯ M_N · e_0,   M_j = Σ_i A_j[:, i, :] f_j[i]
//! ```
//!
//! which equals the inner product of the materialized weight tensor with
//! the tensor product of the feature vectors. Contractions always sweep
//! bond vectors, never chain products of matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, dim_err, Error, Result};
use crate::featuremaps::LocalFeatureMap;
use crate::tensors::{sweep_left, sweep_right, DenseTensor, EXPLICIT_LIMIT};

/// Noise amplitude used by [`MpsModel::init`].
pub const INIT_NOISE: f64 = 1e-2;

/// How fresh parameters are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct InitScheme {
    /// Per-physical-index weight `u` placed on the bond diagonal:
    /// `A[a, i, b] = δ_ab u[i] + noise`. `None` leaves only the noise.
    pub site_bias: Option<Vec<f64>>,
    /// Half-width of the uniform noise added to every site and output entry.
    pub noise: f64,
}

impl InitScheme {
    /// Every entry uniform in `[-1, 1]`; handy for oracle checks.
    pub fn uniform() -> Self {
        Self {
            site_bias: None,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsModel {
    sites: Vec<DenseTensor>,
    output: DenseTensor,
    center: usize,
    feature_dim: usize,
    out_dim: usize,
    bond_dim: usize,
}

/// Partial contractions of one forward pass.
///
/// `left(j)` contracts sites `0..j` with their features (`j ≤ center`);
/// `right(j)` contracts sites `j..N` (`j ≥ center`). Boundary vectors are
/// `[1.0]`.
#[derive(Debug, Clone)]
pub struct EnvironmentCache {
    center: usize,
    stride: usize,
    left: Vec<f64>,
    left_len: Vec<usize>,
    right: Vec<f64>,
    right_len: Vec<usize>,
}

impl EnvironmentCache {
    pub fn left(&self, j: usize) -> &[f64] {
        let at = j * self.stride;
        &self.left[at..at + self.left_len[j]]
    }

    pub fn right(&self, j: usize) -> &[f64] {
        let k = j - self.center;
        let at = k * self.stride;
        &self.right[at..at + self.right_len[k]]
    }
}

/// Parameter-shaped gradient blocks, ordered like [`MpsModel::params`]:
/// sites `0..N`, then the output tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(model: &MpsModel) -> Self {
        Self(model.params().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl MpsModel {
    /// Chain of `n_sites` sites with physical extent `feature_dim` and an
    /// output tensor with `out_dim` entries per bond pair.
    pub fn new(
        n_sites: usize,
        feature_dim: usize,
        out_dim: usize,
        bond_dim: usize,
        init: &InitScheme,
        seed: u64,
    ) -> Result<Self> {
        if n_sites == 0 || feature_dim == 0 || out_dim == 0 || bond_dim == 0 {
            return Err(config_err(format!(
                "MPS extents must be >= 1 (sites {n_sites}, features {feature_dim}, outputs {out_dim}, bond {bond_dim})"
            )));
        }
        if let Some(bias) = &init.site_bias {
            if bias.len() != feature_dim {
                return Err(dim_err(format!(
                    "site bias has length {}, feature dim is {feature_dim}",
                    bias.len()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = n_sites.div_ceil(2);
        // element order: sites 0..center, output, sites center..N
        let elements = n_sites + 1;
        let bond = |k: usize| if k == 0 || k == elements { 1 } else { bond_dim };
        let mut noise = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if init.noise == 0.0 {
                        0.0
                    } else {
                        init.noise * rng.random_range(-1.0..=1.0)
                    }
                })
                .collect()
        };
        let mut sites = Vec::with_capacity(n_sites);
        let mut output = None;
        for k in 0..elements {
            let (bl, br) = (bond(k), bond(k + 1));
            if k == center {
                output = Some(DenseTensor::new(vec![bl, out_dim, br], noise(bl * out_dim * br))?);
                continue;
            }
            let mut data = noise(bl * feature_dim * br);
            if let Some(bias) = &init.site_bias {
                for a in 0..bl.min(br) {
                    for (i, u) in bias.iter().enumerate() {
                        data[(a * feature_dim + i) * br + a] += u;
                    }
                }
            }
            sites.push(DenseTensor::new(vec![bl, feature_dim, br], data)?);
        }
        Ok(Self {
            sites,
            output: output.expect("output slot is always visited"),
            center,
            feature_dim,
            out_dim,
            bond_dim,
        })
    }

    /// Model for `K^dims`-pixel patches with `channels` input channels lifted
    /// by `feature_map`, predicting `classes` values per pixel.
    ///
    /// Sites start close to an identity transfer matrix: the bond diagonal
    /// carries `u / C` per channel where `u · ψ(x) ≈ 1`, so products along
    /// long chains stay of order one. Maps with no such `u` fall back to
    /// `1 / (C·d)`. Noise is uniform with half-width [`INIT_NOISE`].
    pub fn init(
        patch: usize,
        dims: usize,
        classes: usize,
        channels: usize,
        feature_map: &LocalFeatureMap,
        bond_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if patch < 2 || !(2..=3).contains(&dims) || classes == 0 || channels == 0 {
            return Err(config_err(format!(
                "invalid model shape: K={patch}, dims={dims}, M={classes}, C={channels}"
            )));
        }
        let d = feature_map.dim();
        let feature_dim = channels * d;
        let bias = match feature_map.unit_response() {
            Some(u) => u
                .iter()
                .map(|v| v / channels as f64)
                .cycle()
                .take(feature_dim)
                .collect(),
            None => vec![1.0 / feature_dim as f64; feature_dim],
        };
        let pixels = patch.pow(dims as u32);
        Self::new(
            pixels,
            feature_dim,
            pixels * classes,
            bond_dim,
            &InitScheme {
                site_bias: Some(bias),
                noise: INIT_NOISE,
            },
            seed,
        )
    }

    /// Rebuilds a model from parameter blocks in [`params`](Self::params) order.
    pub fn from_parts(sites: Vec<DenseTensor>, output: DenseTensor) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(dim_err("MPS needs at least one site"));
        }
        let center = n.div_ceil(2);
        let feature_dim = sites[0].shape().get(1).copied().unwrap_or(0);
        let bond_dim = if n > 1 { sites[0].shape()[2] } else { output.shape()[0] };
        let mut elements: Vec<&DenseTensor> = sites.iter().collect();
        elements.insert(center, &output);
        let mut prev = 1;
        for (k, t) in elements.iter().enumerate() {
            let s = t.shape();
            let last = k == elements.len() - 1;
            let phys_ok = k == center || s[1] == feature_dim;
            if s.len() != 3 || s[0] != prev || !phys_ok || s[2] != if last { 1 } else { bond_dim } {
                return Err(dim_err(format!("inconsistent MPS element {k} with shape {s:?}")));
            }
            prev = s[2];
        }
        Ok(Self {
            out_dim: output.shape()[1],
            sites,
            output,
            center,
            feature_dim,
            bond_dim,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn bond_dim(&self) -> usize {
        self.bond_dim
    }

    /// Index of the first site to the right of the output tensor.
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn output(&self) -> &DenseTensor {
        &self.output
    }

    /// Parameter blocks: sites `0..N`, then the output tensor.
    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.sites.iter().chain(std::iter::once(&self.output)).map(|t| t.data())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.sites
            .iter_mut()
            .chain(std::iter::once(&mut self.output))
            .map(|t| t.data_mut())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.sites
            .iter()
            .chain(std::iter::once(&self.output))
            .map(|t| t.shape().to_vec())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().map(<[f64]>::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().flatten().all(|v| v.is_finite())
    }

    fn site_dims(&self, j: usize) -> [usize; 3] {
        let s = self.sites[j].shape();
        [s[0], s[1], s[2]]
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        let expected = self.sites.len() * self.feature_dim;
        if features.len() != expected {
            return Err(dim_err(format!(
                "expected {} sites x {} features = {expected} values, got {}",
                self.sites.len(),
                self.feature_dim,
                features.len()
            )));
        }
        Ok(())
    }

    fn feature<'a>(&self, features: &'a [f64], j: usize) -> &'a [f64] {
        let fd = self.feature_dim;
        &features[j * fd..(j + 1) * fd]
    }

    /// Logits for one patch. `features` holds the `N` per-site feature
    /// vectors back to back.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(features)?.0)
    }

    /// Forward pass that also keeps the environments for [`accumulate_gradients`](Self::accumulate_gradients).
    pub fn forward_cached(&self, features: &[f64]) -> Result<(Vec<f64>, EnvironmentCache)> {
        self.check_features(features)?;
        let n = self.sites.len();
        let c = self.center;
        let stride = self.bond_dim.max(1);

        let mut left = vec![0.0; (c + 1) * stride];
        let mut left_len = vec![1; c + 1];
        left[0] = 1.0;
        for j in 0..c {
            let dims = self.site_dims(j);
            let (done, rest) = left.split_at_mut((j + 1) * stride);
            let prev = &done[j * stride..j * stride + left_len[j]];
            sweep_right(
                self.sites[j].data(),
                dims,
                prev,
                self.feature(features, j),
                &mut rest[..dims[2]],
            );
            left_len[j + 1] = dims[2];
        }

        let count = n - c + 1;
        let mut right = vec![0.0; count * stride];
        let mut right_len = vec![1; count];
        right[(count - 1) * stride] = 1.0;
        for j in (c..n).rev() {
            let k = j - c;
            let dims = self.site_dims(j);
            let (head, tail) = right.split_at_mut((k + 1) * stride);
            let next = &tail[..right_len[k + 1]];
            sweep_left(
                self.sites[j].data(),
                dims,
                next,
                self.feature(features, j),
                &mut head[k * stride..k * stride + dims[0]],
            );
            right_len[k] = dims[0];
        }

        let cache = EnvironmentCache {
            center: c,
            stride,
            left,
            left_len,
            right,
            right_len,
        };
        let logits = self.output_logits(cache.left(c), cache.right(c));
        Ok((logits, cache))
    }

    fn output_logits(&self, l: &[f64], r: &[f64]) -> Vec<f64> {
        let s = self.output.shape();
        let (bl, p, br) = (s[0], s[1], s[2]);
        let o = self.output.data();
        let mut out = vec![0.0; p];
        for (a, &la) in l.iter().enumerate().take(bl) {
            if la == 0.0 {
                continue;
            }
            for (m, slot) in out.iter_mut().enumerate() {
                let base = (a * p + m) * br;
                let dot: f64 = o[base..base + br].iter().zip(r).map(|(x, y)| x * y).sum();
                *slot += la * dot;
            }
        }
        out
    }

    /// Gradients of `upstream · logits` with respect to every parameter.
    pub fn backward(&self, features: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let (_, cache) = self.forward_cached(features)?;
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradients(features, &cache, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient of `upstream · logits` to `grads`, reusing the
    /// environments of a previous [`forward_cached`](Self::forward_cached)
    /// on the same features. Cost is `O(N·β²·C·d + β²·P)`.
    pub fn accumulate_gradients(
        &self,
        features: &[f64],
        cache: &EnvironmentCache,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        self.check_features(features)?;
        if upstream.len() != self.out_dim {
            return Err(dim_err(format!(
                "upstream gradient has length {}, model outputs {}",
                upstream.len(),
                self.out_dim
            )));
        }
        if grads.0.len() != self.sites.len() + 1 {
            return Err(dim_err("gradient buffer does not match the model"));
        }
        let n = self.sites.len();
        let c = self.center;
        let s = self.output.shape();
        let (bl, p, br) = (s[0], s[1], s[2]);
        let (lc, rc) = (cache.left(c), cache.right(c));
        let o = self.output.data();

        // output tensor, and G = Σ_p g_p O[:, p, :]
        let mut g_mat = vec![0.0; bl * br];
        let g_out = &mut grads.0[n];
        for a in 0..bl {
            for (m, &g) in upstream.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let base = (a * p + m) * br;
                let ga = g * lc[a];
                for b in 0..br {
                    g_out[base + b] += ga * rc[b];
                    g_mat[a * br + b] += g * o[base + b];
                }
            }
        }

        // sites left of the output: w = G · r_c swept leftwards
        let mut w: Vec<f64> = (0..bl)
            .map(|a| (0..br).map(|b| g_mat[a * br + b] * rc[b]).sum())
            .collect();
        let mut scratch = vec![0.0; self.bond_dim.max(1)];
        for j in (0..c).rev() {
            let dims = self.site_dims(j);
            let f = self.feature(features, j);
            outer3_add(&mut grads.0[j], cache.left(j), f, &w);
            if j > 0 {
                sweep_left(self.sites[j].data(), dims, &w, f, &mut scratch[..dims[0]]);
                w.clear();
                w.extend_from_slice(&scratch[..dims[0]]);
            }
        }

        // sites right of the output: v = l_c · G swept rightwards
        let mut v: Vec<f64> = (0..br)
            .map(|b| (0..bl).map(|a| lc[a] * g_mat[a * br + b]).sum())
            .collect();
        for j in c..n {
            let dims = self.site_dims(j);
            let f = self.feature(features, j);
            outer3_add(&mut grads.0[j], &v, f, cache.right(j + 1));
            if j + 1 < n {
                sweep_right(self.sites[j].data(), dims, &v, f, &mut scratch[..dims[2]]);
                v.clear();
                v.extend_from_slice(&scratch[..dims[2]]);
            }
        }
        Ok(())
    }

    /// Explicit weight tensor `Θ[p, i_1, …, i_N]`, built by growing the left
    /// and right halves of the chain as matrices and joining them through the
    /// output tensor. Refuses anything over [`EXPLICIT_LIMIT`] entries.
    pub fn materialize(&self) -> Result<DenseTensor> {
        let n = self.sites.len();
        let fd = self.feature_dim;
        let needed = (fd as u128)
            .checked_pow(n as u32)
            .and_then(|v| v.checked_mul(self.out_dim as u128))
            .unwrap_or(u128::MAX);
        if needed > EXPLICIT_LIMIT as u128 {
            return Err(Error::Capacity {
                what: "materialized MPS",
                needed,
                limit: EXPLICIT_LIMIT as u128,
            });
        }
        let c = self.center;

        // left half: rows = multi-index (i_1..i_c), cols = bond
        let (mut lrows, mut lcols, mut lmat) = (1usize, 1usize, vec![1.0]);
        for site in &self.sites[..c] {
            let [a_dim, phys, b_dim] = [site.shape()[0], site.shape()[1], site.shape()[2]];
            debug_assert_eq!(a_dim, lcols);
            let mut next = vec![0.0; lrows * phys * b_dim];
            for r in 0..lrows {
                for a in 0..a_dim {
                    let l = lmat[r * lcols + a];
                    for i in 0..phys {
                        for b in 0..b_dim {
                            next[(r * phys + i) * b_dim + b] += l * site.data()[(a * phys + i) * b_dim + b];
                        }
                    }
                }
            }
            lrows *= phys;
            lcols = b_dim;
            lmat = next;
        }

        // right half: rows = bond, cols = multi-index (i_{c+1}..i_N)
        let (mut rrows, mut rcols, mut rmat) = (1usize, 1usize, vec![1.0]);
        for site in self.sites[c..].iter().rev() {
            let [a_dim, phys, b_dim] = [site.shape()[0], site.shape()[1], site.shape()[2]];
            debug_assert_eq!(b_dim, rrows);
            let mut next = vec![0.0; a_dim * phys * rcols];
            for a in 0..a_dim {
                for i in 0..phys {
                    for b in 0..b_dim {
                        let s = site.data()[(a * phys + i) * b_dim + b];
                        for col in 0..rcols {
                            next[(a * phys + i) * rcols + col] += s * rmat[b * rcols + col];
                        }
                    }
                }
            }
            rrows = a_dim;
            rcols *= phys;
            rmat = next;
        }

        let os = self.output.shape();
        let (bl, p, br) = (os[0], os[1], os[2]);
        debug_assert_eq!((bl, br), (lcols, rrows));
        let mut theta = vec![0.0; p * lrows * rcols];
        for m in 0..p {
            for a in 0..bl {
                for b in 0..br {
                    let ob = self.output.data()[(a * p + m) * br + b];
                    if ob == 0.0 {
                        continue;
                    }
                    for r in 0..lrows {
                        let w = lmat[r * lcols + a] * ob;
                        let dst = &mut theta[(m * lrows + r) * rcols..(m * lrows + r + 1) * rcols];
                        for (t, rv) in dst.iter_mut().zip(&rmat[b * rcols..(b + 1) * rcols]) {
                            *t += w * rv;
                        }
                    }
                }
            }
        }
        let mut shape = vec![p];
        shape.extend(std::iter::repeat_n(fd, n));
        DenseTensor::new(shape, theta)
    }
}

/// `block[a, i, b] += x[a] · y[i] · z[b]`
fn outer3_add(block: &mut [f64], x: &[f64], y: &[f64], z: &[f64]) {
    let (ny, nz) = (y.len(), z.len());
    for (a, &xa) in x.iter().enumerate() {
        if xa == 0.0 {
            continue;
        }
        for (i, &yi) in y.iter().enumerate() {
            let w = xa * yi;
            let row = &mut block[(a * ny + i) * nz..(a * ny + i + 1) * nz];
            for (r, &zb) in row.iter_mut().zip(z) {
                *r += w * zb;
            }
        }
    }
}

/// Number of MPS parameters for `K^dims`-pixel patches:
/// `2·C·d·β + (N − 2)·β²·C·d + β²·P` with `N = K^dims` and `P = N·M`.
pub fn param_count(patch: usize, classes: usize, channels: usize, d: usize, bond: usize, dims: u32) -> usize {
    let n = patch.pow(dims);
    let phys = channels * d;
    let p = n * classes;
    2 * phys * bond + n.saturating_sub(2) * bond * bond * phys + bond * bond * p
}
