//! Draw sequences from the Hopfield energy with the unadjusted and the
//! Metropolis-adjusted Langevin kernels.
//!
//!     cargo run --release --example langevin_sampling

use hopfield_seqgen::embed::build_memory;
use hopfield_seqgen::energy::{find_beta_star, BetaGrid};
use hopfield_seqgen::sampler::{self, ChainConfig, Kernel, TemperatureRounding};
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let aln = synthetic::family(&FamilySpec::default())?;
    let (model, memory) = build_memory(&aln, 0.95)?;
    let beta_star = find_beta_star(&memory, BetaGrid::default())?.beta_star;
    let beta = sampler::generation_temperature(beta_star, TemperatureRounding::Nearest);

    for kernel in [Kernel::Ula, Kernel::Mala] {
        let cfg = ChainConfig {
            beta,
            kernel,
            n_chains: 10,
            ..ChainConfig::default()
        };
        let run = sampler::run_ensemble(&memory, &model, &cfg, "synthetic", None)?;
        let acc: f64 = run.chains.iter().map(|c| c.acceptance_rate).sum::<f64>() / run.chains.len() as f64;
        println!("{kernel:?}: {} samples at beta {beta}, mean acceptance {acc:.4}", run.samples.len());
        for (seq, p) in run.samples.sequences.iter().zip(&run.samples.provenance).take(3) {
            println!("  chain {:>2} iter {:>4}  {}", p.chain, p.iteration, String::from_utf8_lossy(seq));
        }
    }

    println!("\nstored sequences for comparison:");
    for row in aln.rows.iter().take(3) {
        println!("                     {}", String::from_utf8_lossy(row));
    }
    Ok(())
}
