//! Property tests for the invariants each module promises.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use hopfield_seqgen::baselines::{self, BaselineConfig};
use hopfield_seqgen::betafit::{self, BetaDataset};
use hopfield_seqgen::diagnostics;
use hopfield_seqgen::embed::{decode, fit_pca, one_hot_encode, one_hot_sequence, MemoryMatrix};
use hopfield_seqgen::energy::{self, BetaGrid};
use hopfield_seqgen::metrics::{self, ChargeModel};
use hopfield_seqgen::msa::{self, CleanAlignment, AMINO_ACIDS};
use hopfield_seqgen::sampler::{self, ChainConfig, Kernel};
use hopfield_seqgen::synthetic::{self, FamilySpec};

// ---------------------------------------------------------------- strategies

fn raw_rows(alphabet: &'static [u8]) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (2usize..10, 1usize..14).prop_flat_map(move |(k, l)| {
        prop::collection::vec(prop::collection::vec(prop::sample::select(alphabet), l), k)
    })
}

fn to_raw(rows: &[Vec<u8>]) -> msa::RawAlignment {
    let text: String = rows
        .iter()
        .enumerate()
        .map(|(i, r)| format!(">s{i}\n{}\n", String::from_utf8_lossy(r)))
        .collect();
    msa::parse_fasta(&text).unwrap()
}

fn gapped_alignment() -> impl Strategy<Value = CleanAlignment> {
    raw_rows(b"ACDEG-").prop_filter_map("cleaning removed everything", |rows| {
        msa::clean(&to_raw(&rows), 0.5, 0.3).ok()
    })
}

fn gap_free_alignment() -> impl Strategy<Value = CleanAlignment> {
    raw_rows(b"ACDEGHKLMW").prop_map(|rows| {
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        CleanAlignment::from_rows(ids, rows).unwrap()
    })
}

fn memory(max_d: usize, max_k: usize) -> impl Strategy<Value = MemoryMatrix> {
    (1..=max_d, 1..=max_k)
        .prop_flat_map(|(d, k)| prop::collection::vec(-1.0f64..1.0, d * k).prop_map(move |v| (d, k, v)))
        .prop_filter_map("zero column", |(d, k, v)| {
            let m = DMatrix::from_vec(d, k, v);
            if m.column_iter().any(|c| c.norm() < 1e-3) {
                None
            } else {
                MemoryMatrix::from_columns_normalized(m).ok()
            }
        })
}

fn state(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0f64..2.0, d).prop_map(DVector::from_vec)
}

fn memory_and_state(max_d: usize, max_k: usize) -> impl Strategy<Value = (MemoryMatrix, DVector<f64>)> {
    memory(max_d, max_k).prop_flat_map(|m| {
        let d = m.d();
        (Just(m), state(d))
    })
}

/// Orthogonal matrix from the QR factors of a random square matrix.
fn orthogonal(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_filter_map("singular", move |v| {
        let a = DMatrix::from_vec(d, d, v);
        if a.determinant().abs() < 1e-3 {
            return None;
        }
        Some(a.qr().q())
    })
}

fn column_counts(aln: &CleanAlignment, c: usize) -> Vec<u8> {
    let mut v: Vec<u8> = aln.column(c).collect();
    v.sort_unstable();
    v
}

// ---------------------------------------------------------------- msa

proptest! {
    #[test]
    fn clean_is_idempotent(rows in raw_rows(b"ACDEG-"), col in 0.1f64..0.9, seq in 0.1f64..0.9) {
        let Ok(once) = msa::clean(&to_raw(&rows), col, seq) else { return Ok(()) };
        let twice = msa::clean(&once.to_raw(), col, seq).unwrap();
        prop_assert_eq!(&once.ids, &twice.ids);
        prop_assert_eq!(&once.rows, &twice.rows);
    }

    #[test]
    fn permutation_preserves_columns(aln in gapped_alignment(), seed in any::<u64>()) {
        let p = msa::permute_columns(&aln, seed);
        for c in 0..aln.l() {
            prop_assert_eq!(column_counts(&aln, c), column_counts(&p, c));
        }
        let (a, b) = (msa::column_entropy(&aln).mean, msa::column_entropy(&p).mean);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn effective_sequences_bounded(aln in gapped_alignment(), t in 0.001f64..=1.0) {
        let k = msa::effective_sequences(&aln, t);
        prop_assert!(k >= 1.0 - 1e-12 && k <= aln.k() as f64 + 1e-12);
    }

    #[test]
    fn identity_symmetric_and_one_iff_equal(aln in gapped_alignment()) {
        for a in &aln.rows {
            for b in &aln.rows {
                let ab = msa::pairwise_identity(a, b).unwrap();
                prop_assert_eq!(ab, msa::pairwise_identity(b, a).unwrap());
                prop_assert_eq!(ab == 1.0, a == b);
            }
        }
    }
}

// ---------------------------------------------------------------- embed

proptest! {
    #[test]
    fn pca_basis_orthonormal_and_ordered(aln in gapped_alignment(), rho in 0.3f64..=1.0) {
        let Ok(model) = fit_pca(&one_hot_encode(&aln), rho) else { return Ok(()) };
        let gram = model.basis.tr_mul(&model.basis);
        let err = (gram - DMatrix::identity(model.d, model.d)).abs().max();
        prop_assert!(err < 1e-10);
        prop_assert!(model.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(model.cumulative_fraction(model.d - 1) < rho);
        prop_assert!(model.cumulative_fraction(model.d) >= rho - 1e-12);
    }

    #[test]
    fn reconstruction_error_falls_with_dimension(aln in gapped_alignment()) {
        let x = one_hot_encode(&aln);
        let mut by_d: Vec<(usize, f64)> = Vec::new();
        for rho in [0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 1.0] {
            let Ok(model) = fit_pca(&x, rho) else { return Ok(()) };
            let err: f64 = aln
                .rows
                .iter()
                .map(|r| {
                    let v = one_hot_sequence(r);
                    (&v - model.reconstruct(&model.project(&v).unwrap())).norm_squared()
                })
                .sum();
            by_d.push((model.d, err));
        }
        by_d.sort_by_key(|p| p.0);
        for w in by_d.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-9);
        }
    }

    #[test]
    fn decode_is_total_and_deterministic(aln in gapped_alignment(), seed in any::<u64>()) {
        let Ok(model) = fit_pca(&one_hot_encode(&aln), 0.95) else { return Ok(()) };
        let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(seed);
        let xi = DVector::from_fn(model.d, |_, _| rand::Rng::random_range(&mut rng, -5.0..5.0));
        let a = decode(&model, &xi).unwrap();
        prop_assert_eq!(a.len(), aln.l());
        prop_assert!(a.iter().all(|c| AMINO_ACIDS.contains(c)));
        prop_assert_eq!(a, decode(&model, &xi).unwrap());
    }
}

// ---------------------------------------------------------------- energy

proptest! {
    #[test]
    fn entropy_bounded_and_monotone((mem, xi) in memory_and_state(8, 12)) {
        let ln_k = (mem.k() as f64).ln();
        let mut last = f64::INFINITY;
        for beta in BetaGrid::default().values() {
            let h = energy::attention(&mem, beta, &xi).entropy;
            prop_assert!(h >= 0.0 && h <= ln_k + 1e-12);
            prop_assert!(h <= last + 1e-6);
            last = h;
        }
        for k in 0..mem.k() {
            let mut last = f64::INFINITY;
            for beta in BetaGrid::default().values() {
                let h = energy::attention(&mem, beta, &mem.pattern(k)).entropy;
                prop_assert!(h <= last + 1e-6);
                last = h;
            }
        }
    }

    #[test]
    fn rotation_covariance(
        (mem, xi, r) in memory_and_state(6, 8).prop_flat_map(|(m, x)| {
            let d = m.d();
            (Just(m), Just(x), orthogonal(d))
        }),
        beta in 0.1f64..20.0,
    ) {
        let rotated = MemoryMatrix::new(&r * mem.matrix(), mem.source_ids.clone()).unwrap();
        let rxi = &r * &xi;
        let (e0, e1) = (energy::energy(&mem, beta, &xi).unwrap(), energy::energy(&rotated, beta, &rxi).unwrap());
        prop_assert!((e0 - e1).abs() < 1e-9 * (1.0 + e0.abs()));
        let (a0, a1) = (energy::attention(&mem, beta, &xi), energy::attention(&rotated, beta, &rxi));
        prop_assert!((a0.entropy - a1.entropy).abs() < 1e-9);
        prop_assert!((&a0.weights - &a1.weights).abs().max() < 1e-9);
        let s0 = &r * energy::score(&mem, beta, &xi);
        let s1 = energy::score(&rotated, beta, &rxi);
        prop_assert!((s0 - s1).abs().max() < 1e-8 * beta.max(1.0));
    }

    #[test]
    fn energy_finite_at_huge_beta((mem, xi) in memory_and_state(10, 20), log_beta in 0.0f64..6.0) {
        let beta = 10f64.powf(log_beta);
        prop_assert!(energy::energy(&mem, beta, &xi).unwrap().is_finite());
        prop_assert!(energy::score(&mem, beta, &xi).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn similarity_concentration(mem in memory(12, 30), seed in any::<u64>()) {
        let p = energy::similarity_variance_probe(&mem, 1000, seed);
        prop_assert!(p.scaled_variance >= 0.9 && p.scaled_variance <= 1.1, "{}", p.scaled_variance);
    }
}

// ---------------------------------------------------------------- sampler

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cold_deterministic_map_reaches_fixed_point(seed in any::<u64>(), k in 2usize..8) {
        let mem = synthetic::random_memory(10, k, seed).unwrap();
        prop_assume!(energy::self_similarity_gap(&mem).unwrap().min > 0.2);
        let beta = 200.0;
        let zero = DVector::zeros(10);
        let mut xi = mem.pattern(0) * 0.9;
        for _ in 0..200 {
            xi = sampler::ula_step(&mem, beta, 1.0, &xi, &zero).unwrap();
        }
        let t = energy::attention(&mem, beta, &xi).retrieved;
        prop_assert!((&xi - t).norm() < 1e-8);
    }
}

#[test]
fn sampling_is_independent_of_thread_count() {
    let aln = synthetic::family(&FamilySpec::default()).unwrap();
    let (model, mem) = hopfield_seqgen::embed::build_memory(&aln, 0.95).unwrap();
    let cfg = ChainConfig {
        n_chains: 7,
        kernel: Kernel::Mala,
        ..ChainConfig::default()
    };
    let one = sampler::run_ensemble(&mem, &model, &cfg, "f", Some(1)).unwrap();
    let many = sampler::run_ensemble(&mem, &model, &cfg, "f", Some(5)).unwrap();
    assert_eq!(one.samples.states, many.samples.states);
    assert_eq!(one.samples.to_fasta(), many.samples.to_fasta());
}

#[test]
fn single_pattern_stationary_mean() {
    // With one pattern the density is a Gaussian centred on it with
    // covariance I / beta; ULA keeps the mean exact.
    let mem = synthetic::random_memory(6, 1, 4).unwrap();
    let cfg = ChainConfig {
        beta: 8.0,
        n_chains: 30,
        ..ChainConfig::default()
    };
    let target = mem.pattern(0);
    let means: Vec<DVector<f64>> = (0..cfg.n_chains)
        .map(|c| {
            let r = sampler::run_chain(&mem, &cfg, c, 0).unwrap();
            let n = r.samples.len() as f64;
            r.samples
                .iter()
                .fold(DVector::zeros(6), |acc, (_, s)| acc + DVector::from_column_slice(s))
                / n
        })
        .collect();
    let n = means.len() as f64;
    let grand = means.iter().fold(DVector::zeros(6), |a, m| a + m) / n;
    for i in 0..6 {
        let sd = (means.iter().map(|m| (m[i] - grand[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        assert!((grand[i] - target[i]).abs() <= 3.0 * se, "coordinate {i}: {} vs {} (se {se})", grand[i], target[i]);
    }
}

#[test]
fn mala_acceptance_falls_with_step_size() {
    let mem = synthetic::random_memory(20, 15, 9).unwrap();
    let rate = |alpha: f64| {
        let cfg = ChainConfig {
            beta: 8.0,
            alpha,
            iterations: 10_000,
            burn_in: 1000,
            thin: 1000,
            samples_per_chain: 5,
            n_chains: 1,
            kernel: Kernel::Mala,
            ..ChainConfig::default()
        };
        sampler::run_chain(&mem, &cfg, 0, 0).unwrap().acceptance_rate
    };
    let (a, b, c) = (rate(0.001), rate(0.01), rate(0.1));
    assert!(a >= b && b >= c, "{a} {b} {c}");
}

// ---------------------------------------------------------------- diagnostics

proptest! {
    #[test]
    fn autocorrelation_normalized(trace in prop::collection::vec(-10.0f64..10.0, 10..200)) {
        let Ok(rho) = diagnostics::autocorrelation(&trace, trace.len() / 2) else { return Ok(()) };
        prop_assert_eq!(rho[0], 1.0);
        prop_assert!(rho.iter().all(|r| r.abs() <= 1.0));
        let tau = diagnostics::integrated_autocorr_time(&rho).unwrap().tau_int;
        let ess = diagnostics::effective_sample_size(trace.len(), tau);
        prop_assert!((ess * tau - trace.len() as f64).abs() <= trace.len() as f64 * f64::EPSILON);
    }

    #[test]
    fn truncating_the_front_shifts_convergence(
        prefix in prop::collection::vec(-5.0f64..5.0, 0..400),
        level in 1.0f64..5.0,
        cut in 0usize..400,
    ) {
        // A constant tail longer than the whole prefix keeps the final-half
        // mean equal to `level` under any truncation of the prefix.
        let window = diagnostics::BURN_IN_WINDOW;
        let tail = prefix.len() + 2 * window + 10;
        let trace: Vec<f64> = prefix.iter().copied().chain(std::iter::repeat_n(level, tail)).collect();
        let cut = cut.min(prefix.len());
        let full = diagnostics::burn_in_convergence(&trace, window, 0.01).unwrap();
        let short = diagnostics::burn_in_convergence(&trace[cut..], window, 0.01).unwrap();
        if full >= cut + window {
            prop_assert_eq!(short, full - cut);
        }
        prop_assert!(short <= (prefix.len() - cut) + window);
    }
}

// ---------------------------------------------------------------- metrics

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 2..21).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn kl_properties(p in distribution(), q_raw in prop::collection::vec(0.01f64..1.0, 21)) {
        prop_assert!(metrics::kl_divergence(&p, &p).abs() < 1e-15);
        let q: Vec<f64> = q_raw[..p.len()].to_vec();
        let s: f64 = q.iter().sum();
        let q: Vec<f64> = q.into_iter().map(|x| x / s).collect();
        prop_assert!(metrics::kl_divergence(&p, &q) >= -1e-15);
    }

    #[test]
    fn novelty_properties((mem, xi) in memory_and_state(8, 10), scale in 0.01f64..100.0) {
        for k in 0..mem.k() {
            prop_assert_eq!(metrics::novelty(&mem.pattern(k), &mem).unwrap(), 0.0);
        }
        prop_assume!(xi.norm() > 1e-6);
        let a = metrics::novelty(&xi, &mem).unwrap();
        let b = metrics::novelty(&(&xi * scale), &mem).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn diversity_properties(
        (states, r) in (2usize..6).prop_flat_map(|d| {
            (prop::collection::vec(state(d), 2..8), orthogonal(d))
        }),
    ) {
        prop_assume!(states.iter().all(|s| s.norm() > 1e-3));
        let dup = vec![states[0].clone(), states[0].clone()];
        prop_assert!(metrics::diversity(&dup).unwrap().abs() < 1e-12);
        let rotated: Vec<DVector<f64>> = states.iter().map(|s| &r * s).collect();
        let (a, b) = (metrics::diversity(&states).unwrap(), metrics::diversity(&rotated).unwrap());
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn mi_symmetric_nonnegative(aln in gapped_alignment()) {
        prop_assume!(aln.k() >= 2);
        let m = metrics::mi_matrix(&aln.rows, 1.0).unwrap();
        for i in 0..aln.l() {
            prop_assert_eq!(m[(i, i)], 0.0);
            for j in 0..aln.l() {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                prop_assert!(m[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn near_duplicate_thresholds_nest(stored in gap_free_alignment(), seed in any::<u64>()) {
        let gen: Vec<Vec<u8>> = stored
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut g = r.clone();
                let pos = (seed as usize + i) % g.len();
                g[pos] = AMINO_ACIDS[(seed as usize + 3 * i) % 20];
                g
            })
            .collect();
        let s = metrics::near_duplicate_stats(&gen, &stored).unwrap();
        let frac = |t: f64| s.above_identity.iter().find(|x| x.0 == t).unwrap().1;
        prop_assert!(frac(0.95) <= frac(0.90) && frac(0.90) <= frac(0.80));
        for w in s.within_substitutions.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn amp_filter_is_a_conjunction(seq in prop::collection::vec(prop::sample::select(b"ACDEFGHIKLMNPQRSTVWY-".as_slice()), 1..60)) {
        prop_assume!(seq.iter().any(|&c| c != b'-'));
        for charge in [ChargeModel::WithHistidine, ChargeModel::WithoutHistidine] {
            let p = metrics::biophysics(&seq, charge).unwrap();
            let clauses = p.net_charge >= 2.0
                && (0.3..=0.7).contains(&p.hydrophobic_fraction)
                && p.cysteine_count >= 4;
            prop_assert_eq!(p.passes_amp_filter, clauses);
        }
    }
}

// ---------------------------------------------------------------- baselines

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn baselines_share_budget_and_geometry(seed in any::<u64>(), n in 1usize..40) {
        let aln = synthetic::family(&FamilySpec { k: 12, l: 15, seed: seed % 100, ..FamilySpec::default() }).unwrap();
        let Ok((model, mem)) = hopfield_seqgen::embed::build_memory(&aln, 0.95) else { return Ok(()) };
        let cfg = BaselineConfig { n_samples: n, seed, ..BaselineConfig::default() };
        let (boot, picks) = baselines::bootstrap_with_indices(&mem, &model, "f", &cfg).unwrap();
        for (s, &k) in boot.states.iter().zip(&picks) {
            let stored = mem.pattern(k);
            prop_assert_eq!(s.as_slice(), stored.as_slice());
        }
        let (convex, weights) = baselines::convex_combination(&mem, &model, "f", &cfg).unwrap();
        for (s, w) in convex.states.iter().zip(&weights) {
            // The weights are a feasibility certificate for hull membership.
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let hull_point = mem.matrix() * DVector::from_column_slice(w);
            prop_assert!((hull_point - DVector::from_column_slice(s)).norm() < 1e-10);
        }
        let gauss = baselines::gaussian_perturbation(&mem, &model, "f", &cfg, 0.05).unwrap();
        let cons = baselines::consensus_with_noise(&aln, &model, "f", &cfg, None).unwrap();
        for set in [&boot, &convex, &gauss, &cons] {
            prop_assert_eq!(set.len(), n);
            prop_assert_eq!(set.states.len(), n);
            prop_assert_eq!(set.provenance.len(), n);
            prop_assert!(set.sequences.iter().all(|s| s.len() == aln.l()));
        }
    }
}

// ---------------------------------------------------------------- betafit

proptest! {
    #[test]
    fn ols_residuals_orthogonal(
        pts in prop::collection::vec((1.0f64..400.0, -5.0f64..10.0), 3..20),
    ) {
        let x = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { pts[i].0.sqrt() });
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let Ok(fit) = betafit::ols(&x, &y) else { return Ok(()) };
        let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        for j in 0..2 {
            let dot: f64 = (0..y.len()).map(|i| x[(i, j)] * fit.residuals[i]).sum();
            let col_norm = x.column(j).norm();
            prop_assert!(dot.abs() < 1e-8 * scale * col_norm);
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let sse: f64 = fit.residuals.iter().map(|r| r * r).sum();
        if sst > 0.0 {
            prop_assert!((fit.r2 - (1.0 - sse / sst)).abs() <= 1e-12 * (1.0 + fit.r2.abs()));
        }
    }

    #[test]
    fn prediction_increases_with_dimension(d in 1usize..1000, a in -2.0f64..2.0, b in 0.01f64..1.0) {
        prop_assert!(betafit::predict_beta_star(d + 1, (a, b)) > betafit::predict_beta_star(d, (a, b)));
    }
}

#[test]
fn loocv_does_not_beat_in_sample_fit() {
    let data = BetaDataset::reference();
    let fit = betafit::fit_sqrt_d(&data).unwrap();
    let cv = betafit::leave_one_family_out(&data).unwrap();
    assert!(cv.r2 <= fit.r2);
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let data = BetaDataset::reference();
    let a = betafit::bootstrap_coefficients(&data, 500, 3).unwrap();
    let b = betafit::bootstrap_coefficients(&data, 500, 3).unwrap();
    assert_eq!(a, b);
}
