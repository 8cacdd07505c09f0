//! End to end: build a memory from an alignment, sample at the generation
//! temperature and score the result.
//!
//!     cargo run --release --example generate_and_evaluate [-- family.fasta]

use hopfield_seqgen::embed::build_memory;
use hopfield_seqgen::energy::{find_beta_star, BetaGrid};
use hopfield_seqgen::metrics::{self, EvalOptions};
use hopfield_seqgen::msa;
use hopfield_seqgen::sampler::{self, ChainConfig, TemperatureRounding};
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let aln = match std::env::args().nth(1) {
        Some(path) => msa::clean(&msa::parse_fasta(&std::fs::read_to_string(path)?)?, 0.5, 0.3)?,
        None => synthetic::family(&FamilySpec::default())?,
    };
    let (model, memory) = build_memory(&aln, 0.95)?;
    let beta_star = find_beta_star(&memory, BetaGrid::default())?.beta_star;
    let cfg = ChainConfig {
        beta: sampler::generation_temperature(beta_star, TemperatureRounding::Nearest),
        ..ChainConfig::default()
    };
    let run = sampler::run_ensemble(&memory, &model, &cfg, "family", None)?;
    let report = metrics::full_report(&run.samples, &aln, &memory, &EvalOptions::default(), true)?;
    let m = &report.metrics;

    println!("{} sequences at beta {} (beta* = {beta_star:.3})", m.n_samples, cfg.beta);
    println!("composition KL      {:.4}", m.kl_aa);
    println!("novelty             {:.4}", m.novelty_mean);
    println!("max identity        {:.4}", m.seq_identity_mean);
    if let Some(d) = m.diversity_mean {
        println!("diversity           {d:.4}");
    }
    for (t, f) in &report.near_duplicates.above_identity {
        println!("fraction >= {t:.2} identical to a stored row: {f:.3}");
    }
    if let Some(mi) = &report.mi {
        println!("MI pearson          {:?}", mi.pearson_r);
    }
    if let Some(b) = &report.biophysics {
        println!("biophysics          {b:?}");
    }
    print!("\n{}", run.samples.to_fasta().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
