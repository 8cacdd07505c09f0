//! Project stored sequences into the PCA memory and decode them back.

use hopfield_seqgen::embed::{decode, fit_pca, one_hot_encode, project_alignment};
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let aln = synthetic::family(&FamilySpec::default())?;
    let x = one_hot_encode(&aln);
    println!("one-hot dimension {}", aln.l() * 20);

    for rho in [0.5, 0.8, 0.95, 0.99] {
        let model = fit_pca(&x, rho)?;
        let states = project_alignment(&model, &aln)?;
        let mut exact = 0;
        let mut residues = 0;
        for (state, row) in states.iter().zip(&aln.rows) {
            let back = decode(&model, state)?;
            exact += usize::from(&back == row);
            residues += back.iter().zip(row).filter(|(a, b)| a == b).count();
        }
        println!(
            "rho {rho:.2}: d = {:>3}, variance kept {:.3}, exact rows {exact}/{}, residues {:.4}",
            model.d,
            model.cumulative_fraction(model.d),
            aln.k(),
            residues as f64 / (aln.k() * aln.l()) as f64
        );
    }
    Ok(())
}
