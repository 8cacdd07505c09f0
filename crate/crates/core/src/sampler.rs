//! Langevin sampling of `p(xi) ∝ exp(-beta E(xi))` and the multi-chain
//! generation protocol.
//!
//! # Random streams
//!
//! Every draw comes from a ChaCha20 generator keyed by the master seed. The
//! 64-bit stream id selects the consumer:
//!
//! * stream 0: ensemble-level draws (which stored pattern each chain starts at);
//! * stream `4 (c + 1) + p` for chain `c`, purpose `p` in
//!   {0: initialization, 1: Langevin noise, 2: Metropolis uniforms}.
//!
//! Within a stream, draws are consumed in step order. Chains therefore do not
//! depend on each other or on scheduling, and ULA and MALA runs with the same
//! seed see the same Langevin noise.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{decode, MemoryMatrix, PcaModel};
use crate::energy::{random_unit, Workspace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Ula,
    Mala,
}

impl Kernel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kernel::Ula => "ula",
            Kernel::Mala => "mala",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    NearPattern { sigma: f64 },
    RandomSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Noise = 1,
    Accept = 2,
}

/// Generator for one chain and purpose.
pub fn chain_rng(master_seed: u64, chain_index: usize, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(4 * (chain_index as u64 + 1) + stream as u64);
    rng
}

/// Generator for ensemble-level draws.
pub fn ensemble_rng(master_seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(0);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub beta: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub samples_per_chain: usize,
    pub n_chains: usize,
    pub init: Init,
    pub master_seed: u64,
    pub kernel: Kernel,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            beta: 8.0,
            alpha: 0.01,
            iterations: 5000,
            burn_in: 2000,
            thin: 100,
            samples_per_chain: 5,
            n_chains: 30,
            init: Init::NearPattern { sigma: 0.01 },
            master_seed: 42,
            kernel: Kernel::Ula,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.burn_in >= self.iterations {
            return fail(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            ));
        }
        if self.samples_per_chain == 0 || self.n_chains == 0 || self.thin == 0 {
            return fail("chains, samples per chain and thinning must be positive".into());
        }
        if self.samples_per_chain * self.thin > self.iterations - self.burn_in + self.thin {
            return fail(format!(
                "{} samples thinned by {} do not fit in {} post-burn-in iterations",
                self.samples_per_chain,
                self.thin,
                self.iterations - self.burn_in
            ));
        }
        if let Init::NearPattern { sigma } = self.init {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return fail(format!("init sigma must be non-negative, got {sigma}"));
            }
        }
        Ok(())
    }

    /// Iterations `T_b + j * floor((T - T_b) / s)` for `j = 1..=s`.
    pub fn sample_iterations(&self) -> Vec<usize> {
        let spacing = (self.iterations - self.burn_in) / self.samples_per_chain;
        (1..=self.samples_per_chain)
            .map(|j| self.burn_in + j * spacing)
            .collect()
    }

    /// Total number of retained samples.
    pub fn total_samples(&self) -> usize {
        self.n_chains * self.samples_per_chain
    }
}

/// Rounding used to turn `2 beta*` into a generation temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureRounding {
    #[default]
    Nearest,
    Ceil,
}

/// `max(round(2 beta*), 5)`, or with a ceiling when requested.
pub fn generation_temperature(beta_star: f64, rounding: TemperatureRounding) -> f64 {
    let doubled = 2.0 * beta_star;
    let rounded = match rounding {
        TemperatureRounding::Nearest => doubled.round(),
        TemperatureRounding::Ceil => doubled.ceil(),
    };
    rounded.max(5.0)
}

/// `round(20 beta*)`.
pub fn retrieval_temperature(beta_star: f64) -> f64 {
    (20.0 * beta_star).round()
}

fn noise_scale(alpha: f64, beta: f64) -> f64 {
    (2.0 * alpha / beta).sqrt()
}

/// One unadjusted Langevin step with caller-supplied standard normal noise.
pub fn ula_step(
    memory: &MemoryMatrix,
    beta: f64,
    alpha: f64,
    xi: &DVector<f64>,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    if xi.iter().chain(noise.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ULA step on a non-finite state".into()));
    }
    if xi.len() != memory.d() || noise.len() != memory.d() {
        return Err(Error::Dimension("state and noise must have length d".into()));
    }
    let mut ws = Workspace::new(memory);
    ws.evaluate(memory, beta, xi);
    Ok(xi * (1.0 - alpha) + &ws.retrieved * alpha + noise * noise_scale(alpha, beta))
}

/// Energy, drift mean `(1 - alpha) xi + alpha T(xi)` at a point.
#[derive(Debug, Clone)]
struct Evaluated {
    xi: DVector<f64>,
    energy: f64,
    drift: DVector<f64>,
}

fn evaluate(
    memory: &MemoryMatrix,
    beta: f64,
    alpha: f64,
    xi: DVector<f64>,
    ws: &mut Workspace,
) -> Evaluated {
    let lse = ws.evaluate(memory, beta, &xi);
    let energy = 0.5 * xi.norm_squared() - lse / beta;
    let drift = &xi * (1.0 - alpha) + &ws.retrieved * alpha;
    Evaluated { xi, energy, drift }
}

/// `ln` of the Metropolis-Hastings ratio for moving `from -> to`.
fn log_acceptance(beta: f64, alpha: f64, from: &Evaluated, to: &Evaluated) -> f64 {
    let inv_two_var = beta / (4.0 * alpha);
    let forward = -(&to.xi - &from.drift).norm_squared() * inv_two_var;
    let backward = -(&from.xi - &to.drift).norm_squared() * inv_two_var;
    -beta * to.energy + beta * from.energy + backward - forward
}

/// Log acceptance ratio of the MALA proposal `from -> to`.
pub fn mala_log_acceptance(
    memory: &MemoryMatrix,
    beta: f64,
    alpha: f64,
    from: &DVector<f64>,
    to: &DVector<f64>,
) -> f64 {
    let mut ws = Workspace::new(memory);
    let a = evaluate(memory, beta, alpha, from.clone(), &mut ws);
    let b = evaluate(memory, beta, alpha, to.clone(), &mut ws);
    log_acceptance(beta, alpha, &a, &b)
}

/// One Metropolis-adjusted Langevin step. Non-finite proposals are rejected.
pub fn mala_step<R: Rng + ?Sized>(
    memory: &MemoryMatrix,
    beta: f64,
    alpha: f64,
    xi: &DVector<f64>,
    rng: &mut R,
) -> (DVector<f64>, bool) {
    let mut ws = Workspace::new(memory);
    let current = evaluate(memory, beta, alpha, xi.clone(), &mut ws);
    let noise = DVector::from_fn(memory.d(), |_, _| StandardNormal.sample(rng));
    let proposal = &current.drift + noise * noise_scale(alpha, beta);
    let u: f64 = rng.random();
    if proposal.iter().any(|v| !v.is_finite()) {
        return (xi.clone(), false);
    }
    let candidate = evaluate(memory, beta, alpha, proposal, &mut ws);
    let log_a = log_acceptance(beta, alpha, &current, &candidate);
    if candidate.energy.is_finite() && u.ln() < log_a {
        (candidate.xi, true)
    } else {
        (xi.clone(), false)
    }
}

/// `m_k + sigma * eta` with standard normal `eta`.
pub fn init_near_pattern<R: Rng + ?Sized>(
    memory: &MemoryMatrix,
    pattern_index: usize,
    sigma: f64,
    rng: &mut R,
) -> DVector<f64> {
    let eta = DVector::from_fn(memory.d(), |_, _| StandardNormal.sample(rng));
    memory.pattern(pattern_index) + eta * sigma
}

/// Uniform point on the unit sphere.
pub fn init_random_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    random_unit(d, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub chain_index: usize,
    pub init_pattern_index: Option<usize>,
    /// `(iteration, state)` pairs.
    pub samples: Vec<(usize, Vec<f64>)>,
    /// Energy after each of the `T` steps.
    pub energy_trace: Vec<f64>,
    /// Measured for MALA; 1.0 for ULA.
    pub acceptance_rate: f64,
    /// MALA proposals rejected for being non-finite.
    pub non_finite_rejections: usize,
}

/// Run one chain. `init_pattern` is used by near-pattern initialization.
pub fn run_chain(
    memory: &MemoryMatrix,
    cfg: &ChainConfig,
    chain_index: usize,
    init_pattern: usize,
) -> Result<ChainResult> {
    cfg.validate()?;
    if init_pattern >= memory.k() {
        return Err(Error::Dimension(format!(
            "init pattern {init_pattern} out of range for K = {}",
            memory.k()
        )));
    }
    let (beta, alpha) = (cfg.beta, cfg.alpha);
    let scale = noise_scale(alpha, beta);
    let d = memory.d();

    let mut init_rng = chain_rng(cfg.master_seed, chain_index, Stream::Init);
    let mut noise_rng = chain_rng(cfg.master_seed, chain_index, Stream::Noise);
    let mut accept_rng = chain_rng(cfg.master_seed, chain_index, Stream::Accept);

    let (xi0, init_pattern_index) = match cfg.init {
        Init::NearPattern { sigma } => (
            init_near_pattern(memory, init_pattern, sigma, &mut init_rng),
            Some(init_pattern),
        ),
        Init::RandomSphere => (init_random_sphere(d, &mut init_rng), None),
    };

    let mut ws = Workspace::new(memory);
    let mut current = evaluate(memory, beta, alpha, xi0, &mut ws);
    let sample_at = cfg.sample_iterations();
    let mut next_sample = 0;
    let mut samples = Vec::with_capacity(sample_at.len());
    let mut energy_trace = Vec::with_capacity(cfg.iterations);
    let mut accepted = 0usize;
    let mut non_finite = 0usize;
    let mut noise = DVector::zeros(d);

    for t in 1..=cfg.iterations {
        for v in noise.iter_mut() {
            *v = StandardNormal.sample(&mut noise_rng);
        }
        let proposal = &current.drift + &noise * scale;
        match cfg.kernel {
            Kernel::Ula => {
                current = evaluate(memory, beta, alpha, proposal, &mut ws);
                accepted += 1;
            }
            Kernel::Mala => {
                let u: f64 = accept_rng.random();
                if proposal.iter().all(|v| v.is_finite()) {
                    let candidate = evaluate(memory, beta, alpha, proposal, &mut ws);
                    let log_a = log_acceptance(beta, alpha, &current, &candidate);
                    if !candidate.energy.is_finite() || log_a.is_nan() {
                        non_finite += 1;
                    } else if u.ln() < log_a {
                        current = candidate;
                        accepted += 1;
                    }
                } else {
                    non_finite += 1;
                }
            }
        }
        energy_trace.push(current.energy);

        if t % 100 == 0 || t == cfg.iterations {
            if !current.energy.is_finite() || current.xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::ChainAborted {
                    chain: chain_index,
                    iteration: t,
                    reason: "state became non-finite".into(),
                });
            }
        }
        if next_sample < sample_at.len() && t == sample_at[next_sample] {
            samples.push((t, current.xi.as_slice().to_vec()));
            next_sample += 1;
        }
    }

    Ok(ChainResult {
        chain_index,
        init_pattern_index,
        samples,
        energy_trace,
        acceptance_rate: accepted as f64 / cfg.iterations as f64,
        non_finite_rejections: non_finite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub chain: usize,
    pub iteration: usize,
}

/// Generated states with their decoded sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub family_id: String,
    /// Generator tag, e.g. `sa`, `bootstrap`, `convex`.
    pub method: String,
    /// Inverse temperature recorded in FASTA headers.
    pub beta: f64,
    pub states: Vec<Vec<f64>>,
    pub sequences: Vec<Vec<u8>>,
    pub provenance: Vec<Provenance>,
    pub config: Option<ChainConfig>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn state_vectors(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| DVector::from_column_slice(s)).collect()
    }

    /// FASTA with `>fam|chain=<c>|iter=<t>|beta=<b>` headers
    /// (plus `|method=<m>` for anything other than the sampler).
    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (seq, p) in self.sequences.iter().zip(&self.provenance) {
            out.push_str(&format!(
                ">{}|chain={}|iter={}|beta={}",
                self.family_id, p.chain, p.iteration, self.beta
            ));
            if self.method != "sa" {
                out.push_str(&format!("|method={}", self.method));
            }
            out.push('\n');
            out.push_str(&String::from_utf8_lossy(seq));
            out.push('\n');
        }
        out
    }
}

/// Decode states into a sample set.
pub fn decode_states(
    model: &PcaModel,
    family_id: &str,
    method: &str,
    beta: f64,
    states: Vec<DVector<f64>>,
    provenance: Vec<Provenance>,
) -> Result<SampleSet> {
    let sequences = states
        .iter()
        .map(|s| decode(model, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        family_id: family_id.to_string(),
        method: method.to_string(),
        beta,
        states: states.iter().map(|s| s.as_slice().to_vec()).collect(),
        sequences,
        provenance,
        config: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub samples: SampleSet,
    /// Per-chain results ordered by chain index.
    pub chains: Vec<ChainResult>,
}

/// Run `n_chains` independent chains and decode their samples.
///
/// `threads = None` uses the global rayon pool. The result does not depend
/// on the thread count.
pub fn run_ensemble(
    memory: &MemoryMatrix,
    model: &PcaModel,
    cfg: &ChainConfig,
    family_id: &str,
    threads: Option<usize>,
) -> Result<Ensemble> {
    cfg.validate()?;
    if model.d != memory.d() {
        return Err(Error::Dimension(format!(
            "PCA model has d = {} but memory has d = {}",
            model.d,
            memory.d()
        )));
    }
    let mut rng = ensemble_rng(cfg.master_seed);
    let starts: Vec<usize> = (0..cfg.n_chains)
        .map(|_| rng.random_range(0..memory.k()))
        .collect();

    let run = || -> Vec<Result<ChainResult>> {
        starts
            .par_iter()
            .enumerate()
            .map(|(c, &k)| run_chain(memory, cfg, c, k))
            .collect()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut states = Vec::with_capacity(cfg.total_samples());
    let mut provenance = Vec::with_capacity(cfg.total_samples());
    for chain in &chains {
        for (t, s) in &chain.samples {
            states.push(DVector::from_column_slice(s));
            provenance.push(Provenance {
                chain: chain.chain_index,
                iteration: *t,
            });
        }
    }
    let mut samples = decode_states(model, family_id, "sa", cfg.beta, states, provenance)?;
    samples.config = Some(cfg.clone());
    Ok(Ensemble { samples, chains })
}
