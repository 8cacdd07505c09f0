//! Mixing diagnostics from the energy traces of a sampling run.

use hopfield_seqgen::diagnostics;
use hopfield_seqgen::embed::build_memory;
use hopfield_seqgen::sampler::{self, ChainConfig, Kernel};
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let aln = synthetic::family(&FamilySpec::default())?;
    let (model, memory) = build_memory(&aln, 0.95)?;

    for kernel in [Kernel::Ula, Kernel::Mala] {
        let cfg = ChainConfig {
            beta: 16.0,
            kernel,
            n_chains: 8,
            ..ChainConfig::default()
        };
        let run = sampler::run_ensemble(&memory, &model, &cfg, "family", None)?;
        let per_chain = run
            .chains
            .iter()
            .map(|c| diagnostics::diagnose_chain(c.chain_index, &c.energy_trace, cfg.burn_in, c.acceptance_rate))
            .collect::<hopfield_seqgen::Result<Vec<_>>>()?;
        let s = diagnostics::summarize(&per_chain, cfg.burn_in)?;
        println!(
            "{kernel:?}: tau {:.2}, ESS {:.0}, acceptance {:.4}, converged by {:?} (burn-in margin {:?})",
            s.tau_int, s.ess, s.acceptance_rate, s.convergence_iter, s.margin
        );
        let c = &per_chain[0];
        let lags: Vec<String> = c.autocorr.iter().take(8).map(|r| format!("{r:.3}")).collect();
        println!("  chain 0 autocorrelation: {}", lags.join(" "));
    }
    Ok(())
}
