//! Modern Hopfield energy, its exact score, attention entropy and the
//! critical inverse temperature.
//!
//! With stored unit patterns as the columns of `X` (d x K):
//!
//! ```text
//! E(xi)     = 0.5 |xi|^2 - (1/beta) * logsumexp(beta X^T xi)
//! T(xi)     = X softmax(beta X^T xi)
//! score(xi) = -beta grad E = beta (T(xi) - xi)
//! dH/dbeta  = -beta Var_p(e),  e = X^T xi
//! ```

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::MemoryMatrix;
use crate::error::{Error, Result};

/// Numerically stable `ln sum exp(v)`.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Scratch buffers for repeated attention evaluations.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub sims: DVector<f64>,
    pub weights: DVector<f64>,
    pub retrieved: DVector<f64>,
}

impl Workspace {
    pub fn new(memory: &MemoryMatrix) -> Self {
        Self {
            sims: DVector::zeros(memory.k()),
            weights: DVector::zeros(memory.k()),
            retrieved: DVector::zeros(memory.d()),
        }
    }

    /// Fill similarities, softmax weights and `T(xi)`; return
    /// `logsumexp(beta * sims)`.
    pub fn evaluate(&mut self, memory: &MemoryMatrix, beta: f64, xi: &DVector<f64>) -> f64 {
        let x = memory.matrix();
        x.tr_mul_to(xi, &mut self.sims);
        let max = self.sims.max() * beta;
        let mut total = 0.0;
        for (w, s) in self.weights.iter_mut().zip(self.sims.iter()) {
            *w = (beta * s - max).exp();
            total += *w;
        }
        self.weights /= total;
        x.mul_to(&self.weights, &mut self.retrieved);
        max + total.ln()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("inverse temperature must be positive, got {beta}")))
    }
}

fn check_state(memory: &MemoryMatrix, xi: &DVector<f64>) -> Result<()> {
    if xi.len() != memory.d() {
        return Err(Error::Dimension(format!(
            "state of length {} for memory with d = {}",
            xi.len(),
            memory.d()
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("state has non-finite coordinates".into()));
    }
    Ok(())
}

/// Hopfield energy of `xi`.
pub fn energy(memory: &MemoryMatrix, beta: f64, xi: &DVector<f64>) -> Result<f64> {
    check_beta(beta)?;
    check_state(memory, xi)?;
    let scaled: Vec<f64> = memory.matrix().tr_mul(xi).iter().map(|s| beta * s).collect();
    Ok(0.5 * xi.norm_squared() - logsumexp(&scaled) / beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    /// Softmax weights over stored patterns.
    pub weights: DVector<f64>,
    /// `T(xi)`.
    pub retrieved: DVector<f64>,
    /// Shannon entropy of the weights, nats.
    pub entropy: f64,
    pub similarity_mean: f64,
    pub similarity_variance: f64,
    /// `logsumexp(beta X^T xi)`.
    pub log_partition: f64,
}

/// Entropy and similarity moments of `softmax(beta * sims)`.
pub(crate) fn softmax_stats(sims: &[f64], beta: f64) -> (f64, f64, f64) {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut first = 0.0;
    let mut second = 0.0;
    for &s in sims {
        let w = (beta * (s - max)).exp();
        z += w;
        first += w * s;
        second += w * s * s;
    }
    let mean = first / z;
    let var = (second / z - mean * mean).max(0.0);
    // H = ln Z' - beta * E_p[s - max] with Z' the shifted partition sum.
    let entropy = (z.ln() - beta * (mean - max)).max(0.0);
    (entropy, mean, var)
}

/// Softmax attention over stored patterns.
pub fn attention(memory: &MemoryMatrix, beta: f64, xi: &DVector<f64>) -> AttentionResult {
    let mut ws = Workspace::new(memory);
    let log_partition = ws.evaluate(memory, beta, xi);
    let (entropy, similarity_mean, similarity_variance) = softmax_stats(ws.sims.as_slice(), beta);
    AttentionResult {
        weights: ws.weights,
        retrieved: ws.retrieved,
        entropy,
        similarity_mean,
        similarity_variance,
        log_partition,
    }
}

/// Exact score `beta (T(xi) - xi)` of the Boltzmann density.
pub fn score(memory: &MemoryMatrix, beta: f64, xi: &DVector<f64>) -> DVector<f64> {
    let att = attention(memory, beta, xi);
    (att.retrieved - xi) * beta
}

/// Analytic `dH/dbeta = -beta Var_p(e)` next to a central difference of `H`.
pub fn entropy_derivative_check(memory: &MemoryMatrix, beta: f64, xi: &DVector<f64>) -> (f64, f64) {
    let sims: Vec<f64> = memory.matrix().tr_mul(xi).iter().copied().collect();
    let (_, _, var) = softmax_stats(&sims, beta);
    let analytic = -beta * var;
    let h = 1e-4f64.min(beta / 2.0);
    let up = softmax_stats(&sims, beta + h).0;
    let down = softmax_stats(&sims, beta - h).0;
    (analytic, (up - down) / (2.0 * h))
}

/// Log-spaced inverse-temperature grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self {
            min: 0.1,
            max: 50.0,
            points: 200,
        }
    }
}

impl BetaGrid {
    pub fn values(&self) -> Vec<f64> {
        log_grid(self.min, self.max, self.points)
    }
}

pub(crate) fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    let (lo, hi) = (min.ln(), max.ln());
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| (lo + step * i as f64).exp()).collect()
}

/// Index of the interior grid point maximizing `|d^2 y / d(ln x)^2|` on a
/// uniform log grid. Ties resolve to the smaller index.
pub(crate) fn max_log_curvature(curve: &[f64]) -> usize {
    let mut best = 1;
    let mut best_val = f64::NEG_INFINITY;
    for i in 1..curve.len() - 1 {
        let c = (curve[i + 1] - 2.0 * curve[i] + curve[i - 1]).abs();
        if c > best_val {
            best_val = c;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    StoredPatterns,
    RandomSphere,
}

impl ProbeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeKind::StoredPatterns => "stored_patterns",
            ProbeKind::RandomSphere => "random_sphere",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaStarResult {
    pub beta_star: f64,
    pub grid_index: usize,
    pub grid: Vec<f64>,
    pub grid_spec: BetaGrid,
    /// Mean attention entropy over probes at each grid point.
    pub mean_entropy_curve: Vec<f64>,
    pub probe_kind: ProbeKind,
}

/// Critical inverse temperature from the entropy curve probed at every stored pattern.
pub fn find_beta_star(memory: &MemoryMatrix, grid: BetaGrid) -> Result<BetaStarResult> {
    if memory.k() < 2 {
        return Err(Error::Degenerate("beta* needs at least 2 stored patterns".into()));
    }
    let gram = memory.matrix().tr_mul(memory.matrix());
    beta_star_from_similarities(&gram, grid, ProbeKind::StoredPatterns)
}

/// Same search, probing at uniform random points of the sphere.
pub fn find_beta_star_random_probes(
    memory: &MemoryMatrix,
    grid: BetaGrid,
    n_probes: usize,
    seed: u64,
) -> Result<BetaStarResult> {
    if memory.k() < 2 {
        return Err(Error::Degenerate("beta* needs at least 2 stored patterns".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut probes = DMatrix::zeros(memory.d(), n_probes);
    for mut col in probes.column_iter_mut() {
        col.copy_from(&random_unit(memory.d(), &mut rng));
    }
    let sims = memory.matrix().tr_mul(&probes);
    beta_star_from_similarities(&sims, grid, ProbeKind::RandomSphere)
}

/// Each column of `sims` is one probe's similarity vector.
fn beta_star_from_similarities(
    sims: &DMatrix<f64>,
    grid: BetaGrid,
    probe_kind: ProbeKind,
) -> Result<BetaStarResult> {
    if grid.points < 3 || !(grid.min > 0.0) || grid.max <= grid.min {
        return Err(Error::Config(format!("invalid beta grid {grid:?}")));
    }
    let betas = grid.values();
    let n_probes = sims.ncols() as f64;
    let curve: Vec<f64> = betas
        .par_iter()
        .map(|&beta| {
            sims.column_iter()
                .map(|col| softmax_stats(col.as_slice(), beta).0)
                .sum::<f64>()
                / n_probes
        })
        .collect();
    let (lo, hi) = curve
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)));
    if hi - lo < 1e-9 {
        return Err(Error::NoTransition { delta: hi - lo });
    }
    let idx = max_log_curvature(&curve);
    Ok(BetaStarResult {
        beta_star: betas[idx],
        grid_index: idx,
        grid: betas,
        grid_spec: grid,
        mean_entropy_curve: curve,
        probe_kind,
    })
}

pub const BETA_STAR_TSV_HEADER: &str =
    "family\td\tbeta_star\tgrid_min\tgrid_max\tgrid_points\tprobe_kind";

pub fn beta_star_tsv_row(family: &str, d: usize, r: &BetaStarResult) -> String {
    format!(
        "{family}\t{d}\t{:.6}\t{}\t{}\t{}\t{}",
        r.beta_star,
        r.grid_spec.min,
        r.grid_spec.max,
        r.grid_spec.points,
        r.probe_kind.as_str()
    )
}

/// `beta\tmean_entropy` rows for plotting.
pub fn entropy_curve_tsv(r: &BetaStarResult) -> String {
    let mut out = String::from("beta\tmean_entropy\n");
    for (b, h) in r.grid.iter().zip(&r.mean_entropy_curve) {
        out.push_str(&format!("{b:.8}\t{h:.10}\n"));
    }
    out
}

/// Largest singular value of the memory matrix.
pub fn largest_singular_value(memory: &MemoryMatrix) -> f64 {
    memory
        .matrix()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Gradient Lipschitz constant `1 + beta sigma_max^2 / 2`.
pub fn lipschitz_bound(memory: &MemoryMatrix, beta: f64) -> f64 {
    let s = largest_singular_value(memory);
    1.0 + beta * s * s / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarityGap {
    /// `1 - max_{j != k} m_j . m_k` for every pattern.
    pub per_pattern: Vec<f64>,
    pub min: f64,
    /// Patterns whose gap is at most 1e-12 (duplicates of another pattern).
    pub duplicates: Vec<usize>,
}

pub fn self_similarity_gap(memory: &MemoryMatrix) -> Result<SelfSimilarityGap> {
    let k = memory.k();
    if k < 2 {
        return Err(Error::Degenerate("self-similarity gap needs K >= 2".into()));
    }
    let gram = memory.matrix().tr_mul(memory.matrix());
    let per_pattern: Vec<f64> = (0..k)
        .map(|i| {
            let nearest = (0..k)
                .filter(|&j| j != i)
                .map(|j| gram[(j, i)])
                .fold(f64::NEG_INFINITY, f64::max);
            1.0 - nearest
        })
        .collect();
    let min = per_pattern.iter().copied().fold(f64::INFINITY, f64::min);
    let duplicates = per_pattern
        .iter()
        .enumerate()
        .filter(|(_, &g)| g <= 1e-12)
        .map(|(i, _)| i)
        .collect();
    Ok(SelfSimilarityGap {
        per_pattern,
        min,
        duplicates,
    })
}

/// Uniform draw from the unit sphere in `d` dimensions.
pub(crate) fn random_unit<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n: f64 = z.norm();
        if n > 0.0 {
            return z / n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProbe {
    /// `d * Var(m_k . xi)` pooled over patterns and probes.
    pub scaled_variance: f64,
    pub excess_kurtosis: f64,
    pub mean: f64,
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`).
fn random_orthogonal<R: rand::Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// How probe directions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDesign {
    /// Independent uniform directions.
    Independent,
    /// A randomly rotated unit-norm tight frame: each probe is marginally
    /// uniform, but the set satisfies `sum u u^T = (n/d) I` and `sum u = 0`,
    /// so the pooled first and second moments are exact for any memory.
    /// Falls back to independent probes when `n` is odd or `n <= d`.
    #[default]
    TightFrame,
}

/// `n` unit vectors in `R^d` with frame operator `(n/d) I` and zero sum:
/// cosine/sine pairs at distinct frequencies below `n/2`, plus the
/// alternating sequence at frequency `n/2` when `d` is odd.
fn harmonic_frame<R: rand::Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Option<DMatrix<f64>> {
    let pairs = d / 2;
    if n % 2 == 1 || pairs + 1 > n / 2 {
        return None;
    }
    let mut freqs: Vec<usize> = (1..n / 2).collect();
    for i in 0..pairs {
        let j = rng.random_range(i..freqs.len());
        freqs.swap(i, j);
    }
    let scale = (2.0 / d as f64).sqrt();
    let mut f = DMatrix::zeros(d, n);
    for j in 0..n {
        for (k, &fr) in freqs[..pairs].iter().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * (fr * j % n) as f64 / n as f64;
            f[(2 * k, j)] = scale * angle.cos();
            f[(2 * k + 1, j)] = scale * angle.sin();
        }
        if d % 2 == 1 {
            f[(d - 1, j)] = if j % 2 == 0 { 1.0 } else { -1.0 } / (d as f64).sqrt();
        }
    }
    Some(f)
}

/// Similarity statistics of random unit probes against the memory.
pub fn similarity_variance_probe(memory: &MemoryMatrix, n_probes: usize, seed: u64) -> SimilarityProbe {
    similarity_variance_probe_with(memory, n_probes, seed, ProbeDesign::default())
}

pub fn similarity_variance_probe_with(
    memory: &MemoryMatrix,
    n_probes: usize,
    seed: u64,
    design: ProbeDesign,
) -> SimilarityProbe {
    let d = memory.d();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let frame = match design {
        ProbeDesign::TightFrame => harmonic_frame(d, n_probes, &mut rng)
            .map(|f| random_orthogonal(d, &mut rng) * f),
        ProbeDesign::Independent => None,
    };
    let probes = frame.unwrap_or_else(|| {
        let mut p = DMatrix::zeros(d, n_probes);
        for mut col in p.column_iter_mut() {
            col.copy_from(&random_unit(d, &mut rng));
        }
        p
    });
    let sims = memory.matrix().tr_mul(&probes);
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let (m2, m4) = sims.iter().fold((0.0, 0.0), |(a, b), &s| {
        let c = s - mean;
        (a + c * c, b + c * c * c * c)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    SimilarityProbe {
        scaled_variance: d as f64 * m2,
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        mean,
    }
}
