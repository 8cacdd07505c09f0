//! Seeded synthetic families for tests, examples and benchmarks.
//!
//! A family is grown as a two-level tree: a root sequence, clade founders
//! mutated from the root, and members mutated from their founder. Each
//! column draws replacements from its own small residue set, so columns have
//! realistic low entropy and clades share correlated substitutions.

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::MemoryMatrix;
use crate::error::{Error, Result};
use crate::msa::{CleanAlignment, AMINO_ACIDS, GAP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub k: usize,
    pub l: usize,
    pub n_clades: usize,
    /// Per-site substitution probability from root to clade founder.
    pub clade_divergence: f64,
    /// Per-site substitution probability from founder to member.
    pub member_divergence: f64,
    /// Fraction of columns that never mutate.
    pub conserved_fraction: f64,
    /// Residues available to a variable column.
    pub column_alphabet: usize,
    /// Per-site probability that a member carries a gap.
    pub gap_rate: f64,
    pub seed: u64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            k: 60,
            l: 40,
            n_clades: 4,
            clade_divergence: 0.3,
            member_divergence: 0.15,
            conserved_fraction: 0.2,
            column_alphabet: 5,
            gap_rate: 0.0,
            seed: 7,
        }
    }
}

/// Generate a family. Rows are named `syn<i>|clade<c>`.
pub fn family(spec: &FamilySpec) -> Result<CleanAlignment> {
    if spec.k < 2 || spec.l == 0 || spec.n_clades == 0 {
        return Err(Error::Config("need K >= 2, L >= 1 and at least one clade".into()));
    }
    if !(1..=20).contains(&spec.column_alphabet) {
        return Err(Error::Config("column alphabet must hold 1..=20 residues".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let columns: Vec<Vec<u8>> = (0..spec.l)
        .map(|_| {
            if rng.random::<f64>() < spec.conserved_fraction {
                vec![*AMINO_ACIDS.choose(&mut rng).unwrap()]
            } else {
                AMINO_ACIDS
                    .choose_multiple(&mut rng, spec.column_alphabet)
                    .copied()
                    .collect()
            }
        })
        .collect();
    let root: Vec<u8> = columns.iter().map(|c| c[0]).collect();
    let mutate = |seq: &[u8], rate: f64, rng: &mut ChaCha20Rng| -> Vec<u8> {
        seq.iter()
            .zip(&columns)
            .map(|(&s, col)| {
                if col.len() > 1 && rng.random::<f64>() < rate {
                    *col.choose(rng).unwrap()
                } else {
                    s
                }
            })
            .collect()
    };
    let founders: Vec<Vec<u8>> = (0..spec.n_clades)
        .map(|_| mutate(&root, spec.clade_divergence, &mut rng))
        .collect();
    let mut ids = Vec::with_capacity(spec.k);
    let mut rows = Vec::with_capacity(spec.k);
    for i in 0..spec.k {
        let c = i % spec.n_clades;
        let mut row = mutate(&founders[c], spec.member_divergence, &mut rng);
        for r in row.iter_mut() {
            if rng.random::<f64>() < spec.gap_rate {
                *r = GAP;
            }
        }
        ids.push(format!("syn{i}|clade{c}"));
        rows.push(row);
    }
    CleanAlignment::from_rows(ids, rows)
}

/// `K` independent uniform unit vectors in `R^d`.
pub fn random_memory(d: usize, k: usize, seed: u64) -> Result<MemoryMatrix> {
    if d == 0 || k == 0 {
        return Err(Error::Config("need d >= 1 and K >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
    MemoryMatrix::from_columns_normalized(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let spec = FamilySpec::default();
        let a = family(&spec).unwrap();
        assert_eq!(a, family(&spec).unwrap());
        assert_eq!((a.k(), a.l()), (60, 40));
        assert!(a.rows.iter().flatten().all(|c| AMINO_ACIDS.contains(c)));
    }

    #[test]
    fn gaps_appear_when_requested() {
        let a = family(&FamilySpec {
            gap_rate: 0.1,
            ..Default::default()
        })
        .unwrap();
        assert!(a.rows.iter().flatten().any(|&c| c == GAP));
    }

    #[test]
    fn random_memory_unit_columns() {
        let m = random_memory(10, 5, 1).unwrap();
        for k in 0..5 {
            assert!((m.pattern(k).norm() - 1.0).abs() < 1e-12);
        }
    }
}
