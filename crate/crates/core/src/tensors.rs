//! Dense row-major tensors and the handful of contractions the MPS needs.
//!
//! Everything here is `f64`. Shapes are stored explicitly and every
//! extent is at least one, so a scalar is a tensor of shape `[1]`.

use crate::error::{dim_err, Error, Result};

/// Largest explicit tensor [`outer_product_chain`] and MPS materialization
/// will build.
pub const EXPLICIT_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(dim_err(format!("invalid shape {shape:?}: extents must be >= 1")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(dim_err(format!(
                "shape {shape:?} holds {len} entries but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    /// Rank-1 tensor owning `values`. Panics on an empty vector.
    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(dim_err(format!(
                "index {index:?} has rank {} but tensor shape is {:?}",
                index.len(),
                self.shape
            )));
        }
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            if i >= e {
                return Err(dim_err(format!("index {index:?} out of bounds for {:?}", self.shape)));
            }
            off = off * e + i;
        }
        Ok(off)
    }

    /// Inverse of [`offset`](Self::offset).
    pub fn index_of(&self, mut offset: usize) -> Result<Vec<usize>> {
        if offset >= self.data.len() {
            return Err(dim_err(format!("offset {offset} out of bounds for {:?}", self.shape)));
        }
        let mut index = vec![0; self.shape.len()];
        for (slot, &e) in index.iter_mut().zip(&self.shape).rev() {
            *slot = offset % e;
            offset /= e;
        }
        Ok(index)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    /// Same data viewed under a new shape with the same number of entries.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn expect_rank(t: &DenseTensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(dim_err(format!(
            "{what} must be rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Matrix-vector product `m · v`.
pub fn matvec(m: &DenseTensor, v: &DenseTensor) -> Result<DenseTensor> {
    expect_rank(m, 2, "matrix")?;
    expect_rank(v, 1, "vector")?;
    let (rows, cols) = (m.shape[0], m.shape[1]);
    if cols != v.shape[0] {
        return Err(dim_err(format!("matvec of {:?} with {:?}", m.shape(), v.shape())));
    }
    let out = m
        .data
        .chunks_exact(cols)
        .map(|row| row.iter().zip(&v.data).map(|(a, b)| a * b).sum())
        .collect::<Vec<f64>>();
    debug_assert_eq!(out.len(), rows);
    Ok(DenseTensor::vector(out))
}

/// Contracts an MPS site `[left, phys, right]` with a feature vector over
/// the physical index, giving the `[left, right]` transfer matrix.
pub fn contract_site(site: &DenseTensor, feat: &DenseTensor) -> Result<DenseTensor> {
    expect_rank(site, 3, "site tensor")?;
    expect_rank(feat, 1, "feature vector")?;
    let (bl, phys, br) = (site.shape[0], site.shape[1], site.shape[2]);
    if phys != feat.shape[0] {
        return Err(dim_err(format!(
            "site {:?} cannot contract with feature {:?}",
            site.shape(),
            feat.shape()
        )));
    }
    let mut out = vec![0.0; bl * br];
    for a in 0..bl {
        let row = &mut out[a * br..(a + 1) * br];
        for (i, &f) in feat.data.iter().enumerate() {
            let base = (a * phys + i) * br;
            for (o, s) in row.iter_mut().zip(&site.data[base..base + br]) {
                *o += s * f;
            }
        }
    }
    DenseTensor::matrix(bl, br, out)
}

/// Explicit tensor product `v_1 ⊗ v_2 ⊗ … ⊗ v_n`.
///
/// Only meant for small oracle checks; refuses to build anything larger
/// than [`EXPLICIT_LIMIT`] entries.
pub fn outer_product_chain(vectors: &[DenseTensor]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(dim_err("outer product of an empty list"));
    }
    let mut needed: u128 = 1;
    for v in vectors {
        expect_rank(v, 1, "outer product factor")?;
        needed = needed.saturating_mul(v.len() as u128);
    }
    if needed > EXPLICIT_LIMIT as u128 {
        return Err(Error::Capacity {
            what: "outer product",
            needed,
            limit: EXPLICIT_LIMIT as u128,
        });
    }
    let mut data = vec![1.0];
    for v in vectors {
        data = data
            .iter()
            .flat_map(|&acc| v.data.iter().map(move |&x| acc * x))
            .collect();
    }
    let shape = vectors.iter().map(|v| v.len()).collect();
    DenseTensor::new(shape, data)
}

/// `out[b] = Σ_a Σ_i left[a] · site[a, i, b] · feat[i]`, accumulating one
/// step of a left-to-right sweep without forming the transfer matrix.
pub(crate) fn sweep_right(site: &[f64], dims: [usize; 3], left: &[f64], feat: &[f64], out: &mut [f64]) {
    let [bl, phys, br] = dims;
    out.iter_mut().for_each(|o| *o = 0.0);
    for (a, &la) in left.iter().enumerate().take(bl) {
        if la == 0.0 {
            continue;
        }
        for (i, &f) in feat.iter().enumerate().take(phys) {
            let w = la * f;
            let base = (a * phys + i) * br;
            for (o, s) in out.iter_mut().zip(&site[base..base + br]) {
                *o += w * s;
            }
        }
    }
}

/// `out[a] = Σ_i Σ_b site[a, i, b] · feat[i] · right[b]`, one step of a
/// right-to-left sweep.
pub(crate) fn sweep_left(site: &[f64], dims: [usize; 3], right: &[f64], feat: &[f64], out: &mut [f64]) {
    let [bl, phys, br] = dims;
    for (a, o) in out.iter_mut().enumerate().take(bl) {
        let mut acc = 0.0;
        for (i, &f) in feat.iter().enumerate().take(phys) {
            let base = (a * phys + i) * br;
            let dot: f64 = site[base..base + br].iter().zip(right).map(|(s, r)| s * r).sum();
            acc += f * dot;
        }
        *o = acc;
    }
}
