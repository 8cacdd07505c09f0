//! Quality metrics for generated sequence sets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::MemoryMatrix;
use crate::error::{Error, Result};
use crate::msa::{aa_index, identity_unchecked, symbol_index, CleanAlignment, GAP, N_SYMBOLS_WITH_GAP};
use crate::sampler::SampleSet;

pub const KL_PSEUDOCOUNT: f64 = 0.5;
pub const KL_BOOTSTRAP: usize = 1000;
pub const MI_PSEUDOCOUNT: f64 = 1.0;
pub const TOP_MI_PAIRS: usize = 50;
pub const IDENTITY_THRESHOLDS: [f64; 3] = [0.95, 0.90, 0.80];
pub const SUBSTITUTION_COUNTS: [usize; 3] = [1, 2, 5];

// ---------------------------------------------------------------- composition

/// Pooled frequency of the 20 residues over all positions, gaps skipped,
/// with `pseudocount` added to each residue count.
pub fn composition<S: AsRef<[u8]>>(seqs: &[S], pseudocount: f64) -> Result<[f64; 20]> {
    let mut counts = [pseudocount; 20];
    for s in seqs {
        for &c in s.as_ref() {
            if let Some(a) = aa_index(c) {
                counts[a] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Undefined("composition of a set with no residues".into()));
    }
    counts.iter_mut().for_each(|c| *c /= total);
    Ok(counts)
}

/// `sum p ln(p / q)`; terms with `p = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub kl: f64,
    /// Standard deviation over bootstrap resamples of the generated set.
    pub se: Option<f64>,
}

/// `KL(generated || stored)` on pooled composition, with a bootstrap SE over
/// generated sequences (`n_boot = 0` skips it).
pub fn aa_kl<S: AsRef<[u8]> + Sync>(
    generated: &[S],
    stored: &CleanAlignment,
    pseudocount: f64,
    n_boot: usize,
    seed: u64,
) -> Result<KlEstimate> {
    if generated.is_empty() {
        return Err(Error::Undefined("KL of an empty generated set".into()));
    }
    let q = composition(&stored.rows, pseudocount)?;
    let p = composition(generated, pseudocount)?;
    let kl = kl_divergence(&p, &q);
    if n_boot < 2 {
        return Ok(KlEstimate { kl, se: None });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = generated.len();
    let mut draws = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let resample: Vec<&[u8]> = (0..n)
            .map(|_| generated[rng.random_range(0..n)].as_ref())
            .collect();
        draws.push(kl_divergence(&composition(&resample, pseudocount)?, &q));
    }
    Ok(KlEstimate {
        kl,
        se: sample_sd(&draws),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

// ---------------------------------------------------------------- PCA-space

/// `1 - max_k cos(xi, m_k)`. A state identical to a stored pattern scores
/// exactly 0 rather than a rounding residue.
pub fn novelty(xi: &DVector<f64>, memory: &MemoryMatrix) -> Result<f64> {
    if xi.len() != memory.d() {
        return Err(Error::Dimension(format!(
            "state of length {} against d = {}",
            xi.len(),
            memory.d()
        )));
    }
    let norm = xi.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Undefined("novelty of a zero or non-finite state".into()));
    }
    if memory.matrix().column_iter().any(|m| m == *xi) {
        return Ok(0.0);
    }
    let sims = memory.matrix().tr_mul(xi) / norm;
    Ok((1.0 - sims.max()).max(0.0))
}

/// Mean pairwise cosine distance.
pub fn diversity(states: &[DVector<f64>]) -> Result<f64> {
    if states.len() < 2 {
        return Err(Error::Undefined("diversity needs at least two states".into()));
    }
    let units = states
        .iter()
        .map(|s| {
            let n = s.norm();
            if n > 0.0 && n.is_finite() {
                Ok(s / n)
            } else {
                Err(Error::Undefined("diversity of a zero or non-finite state".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            total += 1.0 - units[i].dot(&units[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

// ---------------------------------------------------------------- identity

fn check_lengths<S: AsRef<[u8]>>(gen: &[S], stored: &CleanAlignment) -> Result<()> {
    for g in gen {
        if g.as_ref().len() != stored.l() {
            return Err(Error::Dimension(format!(
                "sequence of length {} against alignment length {}",
                g.as_ref().len(),
                stored.l()
            )));
        }
    }
    Ok(())
}

/// Highest identity to any stored row.
pub fn max_seq_identity(gen: &[u8], stored: &CleanAlignment) -> Result<f64> {
    check_lengths(&[gen], stored)?;
    Ok(stored
        .rows
        .iter()
        .map(|r| identity_unchecked(gen, r))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearDuplicateStats {
    /// `(threshold, fraction of samples with max identity strictly above)`.
    pub above_identity: Vec<(f64, f64)>,
    /// `(count, fraction of samples within that many substitutions)`.
    pub within_substitutions: Vec<(usize, f64)>,
    pub max_identity: Vec<f64>,
    pub min_substitutions: Vec<usize>,
}

pub fn near_duplicate_stats<S: AsRef<[u8]> + Sync>(
    gen: &[S],
    stored: &CleanAlignment,
) -> Result<NearDuplicateStats> {
    if gen.is_empty() {
        return Err(Error::Undefined("no generated sequences".into()));
    }
    check_lengths(gen, stored)?;
    let l = stored.l();
    let min_subs: Vec<usize> = gen
        .par_iter()
        .map(|g| {
            stored
                .rows
                .iter()
                .map(|r| g.as_ref().iter().zip(r).filter(|(a, b)| a != b).count())
                .min()
                .unwrap_or(l)
        })
        .collect();
    let max_identity: Vec<f64> = min_subs.iter().map(|&m| (l - m) as f64 / l as f64).collect();
    let n = gen.len() as f64;
    Ok(NearDuplicateStats {
        above_identity: IDENTITY_THRESHOLDS
            .iter()
            .map(|&t| (t, max_identity.iter().filter(|&&x| x > t).count() as f64 / n))
            .collect(),
        within_substitutions: SUBSTITUTION_COUNTS
            .iter()
            .map(|&c| (c, min_subs.iter().filter(|&&m| m <= c).count() as f64 / n))
            .collect(),
        max_identity,
        min_substitutions: min_subs,
    })
}

/// Fraction of positions holding one of the 20 canonical residues.
pub fn valid_fraction<S: AsRef<[u8]>>(seqs: &[S]) -> f64 {
    let (mut valid, mut total) = (0usize, 0usize);
    for s in seqs {
        total += s.as_ref().len();
        valid += s.as_ref().iter().filter(|&&c| aa_index(c).is_some()).count();
    }
    if total == 0 {
        0.0
    } else {
        valid as f64 / total as f64
    }
}

// ---------------------------------------------------------------- MI

/// Pairwise mutual information over 21 symbols (gap included), with
/// `pseudocount` added to every joint cell. Symmetric, zero diagonal.
pub fn mi_matrix<S: AsRef<[u8]> + Sync>(seqs: &[S], pseudocount: f64) -> Result<DMatrix<f64>> {
    if seqs.len() < 2 {
        return Err(Error::Undefined("mutual information needs at least two sequences".into()));
    }
    let l = seqs[0].as_ref().len();
    let mut coded = Vec::with_capacity(seqs.len());
    for (r, s) in seqs.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != l {
            return Err(Error::Dimension("sequences of unequal length".into()));
        }
        let row = s
            .iter()
            .enumerate()
            .map(|(p, &c)| {
                symbol_index(c).ok_or(Error::Character {
                    record: format!("#{r}"),
                    position: p + 1,
                    ch: c as char,
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        coded.push(row);
    }
    const Q: usize = N_SYMBOLS_WITH_GAP;
    let n = seqs.len() as f64;
    let total = n + pseudocount * (Q * Q) as f64;
    let rows: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; l];
            let mut joint = [[0.0f64; Q]; Q];
            for (j, slot) in out.iter_mut().enumerate().skip(i + 1) {
                for row in joint.iter_mut() {
                    row.fill(pseudocount);
                }
                for s in &coded {
                    joint[s[i]][s[j]] += 1.0;
                }
                let mut pi = [0.0; Q];
                let mut pj = [0.0; Q];
                for a in 0..Q {
                    for b in 0..Q {
                        let p = joint[a][b] / total;
                        joint[a][b] = p;
                        pi[a] += p;
                        pj[b] += p;
                    }
                }
                let mut mi = 0.0;
                for a in 0..Q {
                    for b in 0..Q {
                        let p = joint[a][b];
                        if p > 0.0 {
                            mi += p * (p / (pi[a] * pj[b])).ln();
                        }
                    }
                }
                *slot = mi.max(0.0);
            }
            out
        })
        .collect();
    let mut m = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in i + 1..l {
            m[(i, j)] = rows[i][j];
            m[(j, i)] = rows[i][j];
        }
    }
    Ok(m)
}

fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let l = m.nrows();
    let mut v = Vec::with_capacity(l * l.saturating_sub(1) / 2);
    for i in 0..l {
        for j in i + 1..l {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Indices of the `k` largest values, ties broken by lower index.
fn top_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiComparison {
    /// `None` when either MI vector is constant.
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub top50_overlap: f64,
}

/// Compare upper triangles of two MI matrices.
pub fn mi_correlation(generated: &DMatrix<f64>, stored: &DMatrix<f64>) -> Result<MiComparison> {
    if generated.shape() != stored.shape() {
        return Err(Error::Dimension("MI matrices of different shapes".into()));
    }
    let (g, s) = (upper_triangle(generated), upper_triangle(stored));
    if g.is_empty() {
        return Err(Error::Undefined("MI comparison needs at least two positions".into()));
    }
    let k = TOP_MI_PAIRS.min(g.len());
    let (tg, ts) = (top_indices(&g, k), top_indices(&s, k));
    let shared = tg.iter().filter(|i| ts.binary_search(i).is_ok()).count();
    Ok(MiComparison {
        pearson_r: pearson(&g, &s),
        spearman_rho: spearman(&g, &s),
        top50_overlap: shared as f64 / k as f64,
    })
}

// ---------------------------------------------------------------- biophysics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeModel {
    /// K, R = +1; D, E = -1; H = +0.5.
    #[default]
    WithHistidine,
    /// Histidine counted as neutral.
    WithoutHistidine,
}

pub const HYDROPHOBIC: &[u8] = b"AVILMFWP";

/// Kyte-Doolittle hydropathy in alphabet order `ARNDCQEGHILKMFPSTWYV`.
pub const KYTE_DOOLITTLE: [f64; 20] = [
    1.8, -4.5, -3.5, -3.5, 2.5, -3.5, -3.5, -0.4, -3.2, 4.5, 3.8, -3.9, 1.9, 2.8, -1.6, -0.8,
    -0.7, -0.9, -1.3, 4.2,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiophysProfile {
    pub net_charge: f64,
    pub hydrophobic_fraction: f64,
    pub kyte_doolittle_mean: f64,
    pub cysteine_count: usize,
    pub passes_amp_filter: bool,
}

/// Profile of a sequence with its gaps removed.
pub fn biophysics(seq: &[u8], charge: ChargeModel) -> Result<BiophysProfile> {
    let mut residues = Vec::with_capacity(seq.len());
    for (p, &c) in seq.iter().enumerate() {
        if c == GAP {
            continue;
        }
        let a = aa_index(c).ok_or(Error::Character {
            record: String::from_utf8_lossy(seq).into_owned(),
            position: p + 1,
            ch: c as char,
        })?;
        residues.push((c.to_ascii_uppercase(), a));
    }
    if residues.is_empty() {
        return Err(Error::Undefined("biophysics of an all-gap sequence".into()));
    }
    let n = residues.len() as f64;
    let mut net_charge = 0.0;
    let (mut hydrophobic, mut kd, mut cys) = (0usize, 0.0, 0usize);
    for &(c, a) in &residues {
        net_charge += match c {
            b'K' | b'R' => 1.0,
            b'D' | b'E' => -1.0,
            b'H' if charge == ChargeModel::WithHistidine => 0.5,
            _ => 0.0,
        };
        hydrophobic += HYDROPHOBIC.contains(&c) as usize;
        kd += KYTE_DOOLITTLE[a];
        cys += (c == b'C') as usize;
    }
    let hydrophobic_fraction = hydrophobic as f64 / n;
    Ok(BiophysProfile {
        net_charge,
        hydrophobic_fraction,
        kyte_doolittle_mean: kd / n,
        cysteine_count: cys,
        passes_amp_filter: net_charge >= 2.0
            && (0.3..=0.7).contains(&hydrophobic_fraction)
            && cys >= 4,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiophysSummary {
    pub amp_pass_rate: f64,
    pub net_charge_mean: f64,
    pub hydrophobic_fraction_mean: f64,
    pub kyte_doolittle_mean: f64,
    pub cysteine_count_mean: f64,
}

pub fn biophysics_summary<S: AsRef<[u8]>>(seqs: &[S], charge: ChargeModel) -> Result<BiophysSummary> {
    if seqs.is_empty() {
        return Err(Error::Undefined("no sequences".into()));
    }
    let p = seqs
        .iter()
        .map(|s| biophysics(s.as_ref(), charge))
        .collect::<Result<Vec<_>>>()?;
    let n = p.len() as f64;
    let avg = |f: fn(&BiophysProfile) -> f64| p.iter().map(f).sum::<f64>() / n;
    Ok(BiophysSummary {
        amp_pass_rate: avg(|b| b.passes_amp_filter as u8 as f64),
        net_charge_mean: avg(|b| b.net_charge),
        hydrophobic_fraction_mean: avg(|b| b.hydrophobic_fraction),
        kyte_doolittle_mean: avg(|b| b.kyte_doolittle_mean),
        cysteine_count_mean: avg(|b| b.cysteine_count as f64),
    })
}

// ---------------------------------------------------------------- aggregate

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub kl_pseudocount: f64,
    pub kl_bootstrap: usize,
    pub seed: u64,
    pub charge_model: ChargeModel,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            kl_pseudocount: KL_PSEUDOCOUNT,
            kl_bootstrap: KL_BOOTSTRAP,
            seed: 42,
            charge_model: ChargeModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMetrics {
    pub chain: usize,
    pub n: usize,
    pub novelty_mean: f64,
    pub seq_identity_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub n_samples: usize,
    pub kl_aa: f64,
    pub kl_se: Option<f64>,
    pub novelty_mean: f64,
    /// SD of chain means over the square root of the chain count.
    pub novelty_se: Option<f64>,
    pub diversity_mean: Option<f64>,
    pub seq_identity_mean: f64,
    pub seq_identity_se: Option<f64>,
    pub valid_fraction: f64,
    pub per_chain: Vec<ChainMetrics>,
    pub novelty: Vec<f64>,
    pub seq_identity: Vec<f64>,
}

fn chain_se(values: &[f64], groups: &[usize]) -> (Vec<(usize, usize, f64)>, Option<f64>) {
    let mut by_chain: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (&v, &g) in values.iter().zip(groups) {
        let e = by_chain.entry(g).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += v;
    }
    let means: Vec<(usize, usize, f64)> = by_chain
        .into_iter()
        .map(|(c, (n, s))| (c, n, s / n as f64))
        .collect();
    let m: Vec<f64> = means.iter().map(|x| x.2).collect();
    let se = sample_sd(&m).map(|sd| sd / (m.len() as f64).sqrt());
    (means, se)
}

/// All set-level metrics for one sample set.
pub fn evaluate(
    samples: &SampleSet,
    stored: &CleanAlignment,
    memory: &MemoryMatrix,
    opts: &EvalOptions,
) -> Result<GenerationMetrics> {
    if samples.is_empty() {
        return Err(Error::Undefined("empty sample set".into()));
    }
    if samples.states.len() != samples.len() || samples.provenance.len() != samples.len() {
        return Err(Error::Dimension("sample set fields have different lengths".into()));
    }
    check_lengths(&samples.sequences, stored)?;
    let states = samples.state_vectors();
    let novelty = states
        .iter()
        .map(|s| novelty(s, memory))
        .collect::<Result<Vec<_>>>()?;
    let seq_identity: Vec<f64> = samples
        .sequences
        .par_iter()
        .map(|g| max_seq_identity(g, stored))
        .collect::<Result<Vec<_>>>()?;
    let kl = aa_kl(
        &samples.sequences,
        stored,
        opts.kl_pseudocount,
        opts.kl_bootstrap,
        opts.seed,
    )?;
    let chains: Vec<usize> = samples.provenance.iter().map(|p| p.chain).collect();
    let (nov_chain, novelty_se) = chain_se(&novelty, &chains);
    let (id_chain, seq_identity_se) = chain_se(&seq_identity, &chains);
    let per_chain = nov_chain
        .iter()
        .zip(&id_chain)
        .map(|(&(chain, n, nm), &(_, _, im))| ChainMetrics {
            chain,
            n,
            novelty_mean: nm,
            seq_identity_mean: im,
        })
        .collect();
    Ok(GenerationMetrics {
        n_samples: samples.len(),
        kl_aa: kl.kl,
        kl_se: kl.se,
        novelty_mean: mean(&novelty),
        novelty_se,
        diversity_mean: diversity(&states).ok(),
        seq_identity_mean: mean(&seq_identity),
        seq_identity_se,
        valid_fraction: valid_fraction(&samples.sequences),
        per_chain,
        novelty,
        seq_identity,
    })
}

/// Metrics plus near-duplicate, MI and biophysics analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub family: String,
    pub method: String,
    pub metrics: GenerationMetrics,
    pub near_duplicates: NearDuplicateStats,
    pub mi: Option<MiComparison>,
    pub biophysics: Option<BiophysSummary>,
    pub stored_biophysics: Option<BiophysSummary>,
}

pub fn full_report(
    samples: &SampleSet,
    stored: &CleanAlignment,
    memory: &MemoryMatrix,
    opts: &EvalOptions,
    with_biophysics: bool,
) -> Result<EvaluationReport> {
    let metrics = evaluate(samples, stored, memory, opts)?;
    let near_duplicates = near_duplicate_stats(&samples.sequences, stored)?;
    let mi = if samples.len() >= 2 && stored.l() >= 2 {
        let g = mi_matrix(&samples.sequences, MI_PSEUDOCOUNT)?;
        let s = mi_matrix(&stored.rows, MI_PSEUDOCOUNT)?;
        Some(mi_correlation(&g, &s)?)
    } else {
        None
    };
    let (biophysics, stored_biophysics) = if with_biophysics {
        (
            Some(biophysics_summary(&samples.sequences, opts.charge_model)?),
            Some(biophysics_summary(&stored.rows, opts.charge_model)?),
        )
    } else {
        (None, None)
    };
    Ok(EvaluationReport {
        family: samples.family_id.clone(),
        method: samples.method.clone(),
        metrics,
        near_duplicates,
        mi,
        biophysics,
        stored_biophysics,
    })
}

pub const METRICS_TSV_HEADER: &str =
    "family\tmethod\tkl\tkl_se\tnovelty\tnovelty_se\tseqid\tseqid_se\tdiversity\tvalid_fraction";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn metrics_tsv_row(family: &str, method: &str, m: &GenerationMetrics) -> String {
    format!(
        "{family}\t{method}\t{:.6}\t{}\t{:.6}\t{}\t{:.6}\t{}\t{}\t{:.6}",
        m.kl_aa,
        fmt_opt(m.kl_se),
        m.novelty_mean,
        fmt_opt(m.novelty_se),
        m.seq_identity_mean,
        fmt_opt(m.seq_identity_se),
        fmt_opt(m.diversity_mean),
        m.valid_fraction
    )
}
