//! Locate the critical inverse temperature of a family and show how the
//! attention entropy collapses as the memory sharpens.
//!
//!     cargo run --example energy_landscape [-- family.fasta]

use hopfield_seqgen::embed::build_memory;
use hopfield_seqgen::energy::{self, BetaGrid};
use hopfield_seqgen::msa;
use hopfield_seqgen::sampler::{generation_temperature, retrieval_temperature, TemperatureRounding};
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let aln = match std::env::args().nth(1) {
        Some(path) => msa::clean(&msa::parse_fasta(&std::fs::read_to_string(path)?)?, 0.5, 0.3)?,
        None => synthetic::family(&FamilySpec::default())?,
    };
    let (_, memory) = build_memory(&aln, 0.95)?;
    println!("K = {}, d = {}", memory.k(), memory.d());

    let r = energy::find_beta_star(&memory, BetaGrid::default())?;
    println!("beta*     = {:.3}", r.beta_star);
    println!("beta_gen  = {}", generation_temperature(r.beta_star, TemperatureRounding::Nearest));
    println!("beta_ret  = {}", retrieval_temperature(r.beta_star));

    println!("\n{:>8}  {:>10}", "beta", "mean H");
    for i in (0..r.grid.len()).step_by(20) {
        println!("{:>8.3}  {:>10.4}", r.grid[i], r.mean_entropy_curve[i]);
    }

    let gap = energy::self_similarity_gap(&memory)?;
    println!("\nsmallest gap between self- and cross-similarity: {:.4}", gap.min);
    println!("largest singular value of the memory: {:.4}", energy::largest_singular_value(&memory));

    let xi = memory.pattern(0);
    for beta in [1.0, r.beta_star, 4.0 * r.beta_star] {
        let a = energy::attention(&memory, beta, &xi);
        println!(
            "pattern 0 at beta {beta:>7.3}: E = {:>8.4}, H = {:.4}, max weight = {:.3}",
            energy::energy(&memory, beta, &xi)?,
            a.entropy,
            a.weights.max()
        );
    }
    Ok(())
}
