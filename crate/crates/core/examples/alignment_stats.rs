//! Clean an alignment and print the family summary statistics, with a
//! column-shuffled control for comparison.
//!
//!     cargo run --example alignment_stats [-- family.fasta]

use hopfield_seqgen::msa;
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let raw = match std::env::args().nth(1) {
        Some(path) => msa::parse_fasta(&std::fs::read_to_string(path)?)?,
        None => {
            let aln = synthetic::family(&FamilySpec {
                gap_rate: 0.05,
                ..FamilySpec::default()
            })?;
            msa::parse_fasta(&aln.to_fasta())?
        }
    };
    let aln = msa::clean(&raw, 0.5, 0.3)?;
    println!("kept {} of {} columns", aln.l(), raw.records.first().map_or(0, |r| r.seq.len()));

    let permuted = msa::permute_columns(&aln, 42);
    println!("\n{:<28}{:>12}{:>12}", "", "real", "permuted");
    let (a, b) = (msa::alignment_stats(&aln), msa::alignment_stats(&permuted));
    println!("{:<28}{:>12}{:>12}", "sequences", a.k, b.k);
    println!("{:<28}{:>12}{:>12}", "columns", a.l, b.l);
    println!("{:<28}{:>12.4}{:>12.4}", "mean column entropy", a.mean_column_entropy, b.mean_column_entropy);
    println!("{:<28}{:>12.2}{:>12.2}", "effective sequences", a.k_eff, b.k_eff);
    println!("{:<28}{:>12.4}{:>12.4}", "mean pairwise identity", a.mean_pairwise_identity, b.mean_pairwise_identity);
    println!("{:<28}{:>12.4}{:>12.4}", "spectral concentration", a.spectral_concentration, b.spectral_concentration);

    println!("\nconsensus {}", String::from_utf8_lossy(&msa::consensus(&aln)?));
    Ok(())
}
