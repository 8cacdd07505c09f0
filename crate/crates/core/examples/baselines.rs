//! Compare the Langevin sampler with simple reference generators at the
//! same sample budget.

use hopfield_seqgen::baselines::{self, BaselineConfig};
use hopfield_seqgen::embed::build_memory;
use hopfield_seqgen::energy::{find_beta_star, BetaGrid};
use hopfield_seqgen::metrics::{self, EvalOptions};
use hopfield_seqgen::sampler::{self, ChainConfig, SampleSet, TemperatureRounding};
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let aln = synthetic::family(&FamilySpec::default())?;
    let (model, memory) = build_memory(&aln, 0.95)?;
    let beta = sampler::generation_temperature(
        find_beta_star(&memory, BetaGrid::default())?.beta_star,
        TemperatureRounding::Nearest,
    );
    let chain = ChainConfig {
        beta,
        ..ChainConfig::default()
    };
    let cfg = BaselineConfig {
        beta,
        ..BaselineConfig::default()
    };
    let sigma = baselines::matched_noise_scale(chain.alpha, beta);

    let sets: Vec<SampleSet> = vec![
        sampler::run_ensemble(&memory, &model, &chain, "family", None)?.samples,
        baselines::bootstrap_replay(&memory, &model, "family", &cfg)?,
        baselines::gaussian_perturbation(&memory, &model, "family", &cfg, sigma)?,
        baselines::convex_combination(&memory, &model, "family", &cfg)?.0,
        baselines::consensus_with_noise(&aln, &model, "family", &cfg, None)?,
    ];
    println!("{:<18}{:>8}{:>10}{:>10}{:>11}", "method", "n", "KL", "novelty", "identity");
    for set in &sets {
        let m = metrics::evaluate(set, &aln, &memory, &EvalOptions::default())?;
        println!(
            "{:<18}{:>8}{:>10.4}{:>10.4}{:>11.4}",
            set.method, m.n_samples, m.kl_aa, m.novelty_mean, m.seq_identity_mean
        );
    }
    Ok(())
}
