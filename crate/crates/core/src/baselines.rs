//! Reference generators that share the sampler's output format.
//!
//! Each sample is tagged with a pseudo-provenance: samples are grouped into
//! consecutive blocks of `group_size` so standard errors are computed the same
//! way as for Langevin chains.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{one_hot_sequence, MemoryMatrix, PcaModel};
use crate::error::{Error, Result};
use crate::msa::{consensus, CleanAlignment};
use crate::sampler::{decode_states, Provenance, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Bootstrap,
    Gaussian,
    Convex,
    ConsensusNoise,
}

impl BaselineMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineMethod::Bootstrap => "bootstrap",
            BaselineMethod::Gaussian => "gaussian",
            BaselineMethod::Convex => "convex",
            BaselineMethod::ConsensusNoise => "consensus_noise",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(Self::Bootstrap),
            "gaussian" => Ok(Self::Gaussian),
            "convex" => Ok(Self::Convex),
            "consensus_noise" | "consensus" => Ok(Self::ConsensusNoise),
            other => Err(Error::Config(format!("unknown baseline method '{other}'"))),
        }
    }
}

/// Budget and bookkeeping shared by all baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub n_samples: usize,
    pub group_size: usize,
    pub seed: u64,
    /// Recorded in FASTA headers; the Gaussian baseline also uses it for its
    /// noise scale.
    pub beta: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n_samples: 150,
            group_size: 5,
            seed: 42,
            beta: 8.0,
        }
    }
}

fn provenance(cfg: &BaselineConfig) -> Vec<Provenance> {
    let g = cfg.group_size.max(1);
    (0..cfg.n_samples)
        .map(|i| Provenance {
            chain: i / g,
            iteration: i % g,
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Uniform draws with replacement from the stored columns.
pub fn bootstrap_replay(
    memory: &MemoryMatrix,
    model: &PcaModel,
    family: &str,
    cfg: &BaselineConfig,
) -> Result<SampleSet> {
    let (set, _) = bootstrap_with_indices(memory, model, family, cfg)?;
    Ok(set)
}

/// Bootstrap replay that also returns the drawn column indices.
pub fn bootstrap_with_indices(
    memory: &MemoryMatrix,
    model: &PcaModel,
    family: &str,
    cfg: &BaselineConfig,
) -> Result<(SampleSet, Vec<usize>)> {
    let mut r = rng(cfg.seed);
    let picks: Vec<usize> = (0..cfg.n_samples)
        .map(|_| r.random_range(0..memory.k()))
        .collect();
    let states = picks.iter().map(|&k| memory.pattern(k)).collect();
    let set = decode_states(model, family, "bootstrap", cfg.beta, states, provenance(cfg))?;
    Ok((set, picks))
}

/// `sqrt(2 alpha / beta)`: the per-step Langevin noise scale.
pub fn matched_noise_scale(alpha: f64, beta: f64) -> f64 {
    (2.0 * alpha / beta).sqrt()
}

/// A random stored pattern plus isotropic noise of scale `sigma`.
pub fn gaussian_perturbation(
    memory: &MemoryMatrix,
    model: &PcaModel,
    family: &str,
    cfg: &BaselineConfig,
    sigma: f64,
) -> Result<SampleSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise scale must be non-negative, got {sigma}")));
    }
    let mut r = rng(cfg.seed);
    let states = (0..cfg.n_samples)
        .map(|_| {
            let k = r.random_range(0..memory.k());
            memory.pattern(k) + normal_vector(memory.d(), &mut r) * sigma
        })
        .collect();
    decode_states(model, family, "gaussian", cfg.beta, states, provenance(cfg))
}

/// Uniform draw from the probability simplex (Dirichlet with unit
/// concentration) via normalized exponentials.
pub fn dirichlet_uniform<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `X w` with `w` uniform on the simplex. Returns the weights too.
pub fn convex_combination(
    memory: &MemoryMatrix,
    model: &PcaModel,
    family: &str,
    cfg: &BaselineConfig,
) -> Result<(SampleSet, Vec<Vec<f64>>)> {
    if memory.k() < 2 {
        return Err(Error::Degenerate("convex combination needs K >= 2".into()));
    }
    let mut r = rng(cfg.seed);
    let weights: Vec<Vec<f64>> = (0..cfg.n_samples)
        .map(|_| dirichlet_uniform(memory.k(), &mut r))
        .collect();
    let states = weights
        .iter()
        .map(|w| memory.matrix() * DVector::from_column_slice(w))
        .collect();
    let set = decode_states(model, family, "convex", cfg.beta, states, provenance(cfg))?;
    Ok((set, weights))
}

/// Mean Euclidean distance of the projected stored sequences from their
/// centroid, in unnormalized PCA coordinates.
pub fn centroid_spread(aln: &CleanAlignment, model: &PcaModel) -> Result<f64> {
    let projected = aln
        .rows
        .iter()
        .map(|r| model.project(&one_hot_sequence(r)))
        .collect::<Result<Vec<_>>>()?;
    let n = projected.len() as f64;
    let centroid = projected
        .iter()
        .fold(DVector::zeros(model.d), |acc, p| acc + p)
        / n;
    Ok(projected.iter().map(|p| (p - &centroid).norm()).sum::<f64>() / n)
}

/// Consensus sequence projected (without normalization) plus isotropic noise.
/// `sigma = None` uses [`centroid_spread`].
pub fn consensus_with_noise(
    aln: &CleanAlignment,
    model: &PcaModel,
    family: &str,
    cfg: &BaselineConfig,
    sigma: Option<f64>,
) -> Result<SampleSet> {
    let sigma = match sigma {
        Some(s) => s,
        None => centroid_spread(aln, model)?,
    };
    let center = model.project(&one_hot_sequence(&consensus(aln)?))?;
    let mut r = rng(cfg.seed);
    let states = (0..cfg.n_samples)
        .map(|_| &center + normal_vector(model.d, &mut r) * sigma)
        .collect();
    decode_states(model, family, "consensus_noise", cfg.beta, states, provenance(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_on_simplex() {
        let mut r = rng(3);
        for k in [1, 2, 10] {
            let w = dirichlet_uniform(k, &mut r);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            BaselineMethod::Bootstrap,
            BaselineMethod::Gaussian,
            BaselineMethod::Convex,
            BaselineMethod::ConsensusNoise,
        ] {
            assert_eq!(m.as_str().parse::<BaselineMethod>().unwrap(), m);
        }
        assert!("hmm".parse::<BaselineMethod>().is_err());
    }

    #[test]
    fn provenance_groups() {
        let cfg = BaselineConfig {
            n_samples: 7,
            group_size: 5,
            ..Default::default()
        };
        let p = provenance(&cfg);
        assert_eq!(p[4].chain, 0);
        assert_eq!(p[5].chain, 1);
        assert_eq!(p[6].iteration, 1);
    }
}
