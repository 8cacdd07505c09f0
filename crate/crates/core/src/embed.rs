//! One-hot encoding, PCA projection onto the unit sphere, and argmax decoding.
//!
//! A sequence of length `L` is encoded as a `20L` vector of per-position
//! indicator blocks in [`AMINO_ACIDS`] order. Gaps encode as an all-zero
//! block. The PCA model keeps the family frequency profile (the column mean)
//! and the leading left singular vectors of the centered one-hot matrix; each
//! stored sequence is projected and normalized to unit length to form one
//! column of the [`MemoryMatrix`].

use nalgebra::{DMatrix, DVector, SVD};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::msa::{aa_index, CleanAlignment, AMINO_ACIDS};

/// Width of one position block in the one-hot encoding.
pub const BLOCK: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMatrix {
    /// `20L x K`, one column per sequence.
    pub data: DMatrix<f64>,
    pub l: usize,
}

impl OneHotMatrix {
    pub fn k(&self) -> usize {
        self.data.ncols()
    }
}

/// Encode one aligned sequence. Gaps and anything non-canonical give a zero block.
pub fn one_hot_sequence(seq: &[u8]) -> DVector<f64> {
    let mut x = DVector::zeros(BLOCK * seq.len());
    for (pos, &res) in seq.iter().enumerate() {
        if let Some(a) = aa_index(res) {
            x[BLOCK * pos + a] = 1.0;
        }
    }
    x
}

pub fn one_hot_encode(aln: &CleanAlignment) -> OneHotMatrix {
    let l = aln.l();
    let mut data = DMatrix::zeros(BLOCK * l, aln.k());
    for (k, row) in aln.rows.iter().enumerate() {
        for (pos, &res) in row.iter().enumerate() {
            if let Some(a) = aa_index(res) {
                data[(BLOCK * pos + a, k)] = 1.0;
            }
        }
    }
    OneHotMatrix { data, l }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Family frequency profile, length `20L`.
    pub mean: DVector<f64>,
    /// `20L x d` orthonormal projection basis.
    pub basis: DMatrix<f64>,
    /// All non-zero singular values of the centered matrix, descending.
    pub singular_values: Vec<f64>,
    pub d: usize,
    pub rho_min: f64,
    pub total_variance: f64,
    pub l: usize,
}

impl PcaModel {
    pub fn full_dim(&self) -> usize {
        self.mean.len()
    }

    /// Fraction of variance captured by the first `p` components.
    pub fn cumulative_fraction(&self, p: usize) -> f64 {
        let captured: f64 = self.singular_values.iter().take(p).map(|s| s * s).sum();
        captured / self.total_variance
    }

    /// Centered coordinates `W^T (x - mean)` without normalization.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.full_dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} for a model over {} coordinates",
                x.len(),
                self.full_dim()
            )));
        }
        Ok(self.basis.tr_mul(&(x - &self.mean)))
    }

    /// Inverse projection `mean + W xi`.
    pub fn reconstruct(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.basis * xi
    }

    pub fn to_container(&self, c: &mut Container) {
        c.push_vector("pca.mean", self.mean.as_slice());
        c.push("pca.basis", self.basis.clone());
        c.push_vector("pca.singular_values", &self.singular_values);
        c.push_vector(
            "pca.scalars",
            &[self.d as f64, self.rho_min, self.total_variance, self.l as f64],
        );
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let scalars = c.get_vector("pca.scalars")?;
        let [d, rho_min, total_variance, l] = scalars[..] else {
            return Err(Error::Artifact("pca.scalars must hold 4 values".into()));
        };
        let model = Self {
            mean: DVector::from_vec(c.get_vector("pca.mean")?),
            basis: c.get("pca.basis")?.clone(),
            singular_values: c.get_vector("pca.singular_values")?,
            d: d as usize,
            rho_min,
            total_variance,
            l: l as usize,
        };
        if model.basis.nrows() != model.mean.len()
            || model.basis.ncols() != model.d
            || model.mean.len() != BLOCK * model.l
        {
            return Err(Error::Artifact("inconsistent PCA dimensions".into()));
        }
        Ok(model)
    }
}

/// Centered economy SVD, keeping the smallest `d` whose cumulative variance
/// fraction reaches `rho_min`.
///
/// Each retained left singular vector is sign-fixed so that its
/// largest-magnitude entry is positive.
pub fn fit_pca(x: &OneHotMatrix, rho_min: f64) -> Result<PcaModel> {
    if !(rho_min > 0.0 && rho_min <= 1.0) {
        return Err(Error::Config(format!("rho_min must lie in (0, 1], got {rho_min}")));
    }
    let k = x.k();
    if k < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 sequences, got {k}")));
    }
    let mean = x.data.column_mean();
    let mut centered = x.data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    let svd = SVD::new(centered, true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let sigma_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let tol = sigma_max * x.data.nrows().max(k) as f64 * f64::EPSILON;
    let ranked: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    if ranked.is_empty() || sigma_max == 0.0 {
        return Err(Error::Degenerate(
            "all sequences are identical after encoding (rank-0 centered matrix)".into(),
        ));
    }
    let singular_values: Vec<f64> = ranked.iter().map(|&i| svd.singular_values[i]).collect();
    let total_variance: f64 = singular_values.iter().map(|s| s * s).sum();

    let mut cumulative = 0.0;
    let mut d = singular_values.len();
    for (p, s) in singular_values.iter().enumerate() {
        cumulative += s * s;
        if cumulative / total_variance >= rho_min {
            d = p + 1;
            break;
        }
    }

    let mut basis = DMatrix::zeros(x.data.nrows(), d);
    for (j, &src) in ranked.iter().take(d).enumerate() {
        let col = u.column(src);
        // Near-ties in magnitude resolve to the first coordinate so the sign
        // does not depend on rounding noise.
        let max_abs = col.amax();
        let pivot = col
            .iter()
            .copied()
            .find(|v| v.abs() >= max_abs * (1.0 - 1e-9))
            .unwrap_or(0.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        basis.set_column(j, &(col * sign));
    }

    Ok(PcaModel {
        mean,
        basis,
        singular_values,
        d,
        rho_min,
        total_variance,
        l: x.l,
    })
}

/// Project and scale to unit length.
pub fn project_normalize(model: &PcaModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let z = model.project(x)?;
    let norm = z.norm();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Error::Degenerate(format!(
            "projection norm {norm:e}; the sequence coincides with the family mean in the retained subspace"
        )));
    }
    Ok(z / norm)
}

/// The stored patterns: a `d x K` matrix of unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMatrix {
    patterns: DMatrix<f64>,
    pub source_ids: Vec<String>,
}

impl MemoryMatrix {
    /// Wrap columns that are already unit norm (checked to 1e-9).
    pub fn new(patterns: DMatrix<f64>, source_ids: Vec<String>) -> Result<Self> {
        if patterns.ncols() == 0 || patterns.nrows() == 0 {
            return Err(Error::EmptyFamily("memory matrix has no patterns".into()));
        }
        if source_ids.len() != patterns.ncols() {
            return Err(Error::Dimension(format!(
                "{} ids for {} patterns",
                source_ids.len(),
                patterns.ncols()
            )));
        }
        for (k, col) in patterns.column_iter().enumerate() {
            let n = col.norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric(format!("pattern {k} has norm {n}")));
            }
        }
        Ok(Self {
            patterns,
            source_ids,
        })
    }

    /// Normalize every column and wrap. Ids default to the column index.
    pub fn from_columns_normalized(mut patterns: DMatrix<f64>) -> Result<Self> {
        for (k, mut col) in patterns.column_iter_mut().enumerate() {
            let n = col.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::Degenerate(format!("pattern {k} has norm {n}")));
            }
            col /= n;
        }
        let ids = (0..patterns.ncols()).map(|k| k.to_string()).collect();
        Self::new(patterns, ids)
    }

    pub fn d(&self) -> usize {
        self.patterns.nrows()
    }

    pub fn k(&self) -> usize {
        self.patterns.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.patterns
    }

    pub fn pattern(&self, k: usize) -> DVector<f64> {
        self.patterns.column(k).into_owned()
    }

    pub fn to_container(&self, c: &mut Container) {
        c.push("memory", self.patterns.clone());
    }

    pub fn from_container(c: &Container, source_ids: Vec<String>) -> Result<Self> {
        Self::new(c.get("memory")?.clone(), source_ids)
    }
}

/// Unnormalized PCA coordinates of every row of an alignment.
pub fn project_alignment(model: &PcaModel, aln: &CleanAlignment) -> Result<Vec<DVector<f64>>> {
    aln.rows
        .iter()
        .map(|row| model.project(&one_hot_sequence(row)))
        .collect()
}

/// Encode, fit PCA and assemble the memory matrix in alignment order.
pub fn build_memory(aln: &CleanAlignment, rho_min: f64) -> Result<(PcaModel, MemoryMatrix)> {
    if aln.k() < 2 {
        return Err(Error::Degenerate(format!(
            "a memory needs at least 2 sequences, got {}",
            aln.k()
        )));
    }
    let x = one_hot_encode(aln);
    let model = fit_pca(&x, rho_min)?;
    let mut patterns = DMatrix::zeros(model.d, aln.k());
    for (k, col) in x.data.column_iter().enumerate() {
        let m = project_normalize(&model, &col.into_owned()).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!("sequence '{}': {msg}", aln.ids[k])),
            other => other,
        })?;
        patterns.set_column(k, &m);
    }
    let memory = MemoryMatrix::new(patterns, aln.ids.clone())?;
    Ok((model, memory))
}

/// Inverse PCA followed by a per-position argmax over the 20 residue coordinates.
///
/// Ties go to the earlier residue in [`AMINO_ACIDS`]; gaps are never emitted.
pub fn decode(model: &PcaModel, xi: &DVector<f64>) -> Result<Vec<u8>> {
    if xi.len() != model.d {
        return Err(Error::Dimension(format!(
            "state of length {} for a model with d = {}",
            xi.len(),
            model.d
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot decode a non-finite state".into()));
    }
    let x_hat = model.reconstruct(xi);
    Ok((0..model.l)
        .map(|pos| {
            let block = &x_hat.as_slice()[BLOCK * pos..BLOCK * (pos + 1)];
            let mut best = 0;
            for a in 1..BLOCK {
                if block[a] > block[best] {
                    best = a;
                }
            }
            AMINO_ACIDS[best]
        })
        .collect())
}
