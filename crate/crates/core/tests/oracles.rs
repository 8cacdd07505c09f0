//! Independent oracles: each check recomputes a quantity by a different
//! route (hand arithmetic, dense grids, power iteration, closed forms).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use hopfield_seqgen::baselines::{self, BaselineConfig};
use hopfield_seqgen::betafit::{self, TAU_GRID};
use hopfield_seqgen::diagnostics;
use hopfield_seqgen::embed::{build_memory, one_hot_sequence, MemoryMatrix};
use hopfield_seqgen::energy::{self, BetaGrid};
use hopfield_seqgen::metrics;
use hopfield_seqgen::msa::{self, CleanAlignment, AMINO_ACIDS};
use hopfield_seqgen::pipeline::{self, BuildParams, EvalSettings, Regime};
use hopfield_seqgen::sampler::{self, ChainConfig, Stream};
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn log_grid(min: f64, max: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (min.ln() + (max.ln() - min.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn argmax_abs_second_difference(y: &[f64]) -> usize {
    (1..y.len() - 1)
        .max_by(|&a, &b| {
            let ca = (y[a + 1] - 2.0 * y[a] + y[a - 1]).abs();
            let cb = (y[b + 1] - 2.0 * y[b] + y[b - 1]).abs();
            ca.partial_cmp(&cb).unwrap()
        })
        .unwrap()
}

fn binary_entropy_of_scores(a: f64, b: f64, beta: f64) -> f64 {
    let p = 1.0 / (1.0 + (beta * (b - a)).exp());
    let xlnx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    -(xlnx(p) + xlnx(1.0 - p))
}

#[test]
fn generated_fasta_reingests_with_all_records() {
    let aln = synthetic::family(&FamilySpec::default()).unwrap();
    let build = pipeline::build_from_alignment("fam", aln, &BuildParams::default()).unwrap();
    let chain = ChainConfig {
        n_chains: 4,
        ..ChainConfig::default()
    };
    let run = pipeline::sample_build(&build, Regime::Generation, &chain, None, &EvalSettings::default()).unwrap();
    let samples = &run.ensemble.samples;
    let raw = msa::parse_fasta(&samples.to_fasta()).unwrap();
    assert_eq!(raw.len(), samples.len());
    for (r, s) in raw.records.iter().zip(&samples.sequences) {
        assert_eq!(&r.seq, s);
    }
}

#[test]
fn toy_alignment_memory_matches_gram_oracle() {
    // At full rank the projection is an isometry of the centered one-hot
    // data, so cosines between memory columns equal cosines of centered rows.
    let rows: Vec<Vec<u8>> = vec![b"ACD".to_vec(), b"ACE".to_vec(), b"GCE".to_vec()];
    let aln = CleanAlignment::from_rows(vec!["a".into(), "b".into(), "c".into()], rows.clone()).unwrap();
    let (model, memory) = build_memory(&aln, 1.0).unwrap();
    let x: Vec<DVector<f64>> = rows.iter().map(|r| one_hot_sequence(r)).collect();
    let mean = x.iter().fold(DVector::zeros(x[0].len()), |a, v| a + v) / 3.0;
    let c: Vec<DVector<f64>> = x.iter().map(|v| v - &mean).collect();
    assert_eq!(model.d, 2, "three centered points span a plane");
    for i in 0..3 {
        for j in 0..3 {
            let oracle = c[i].dot(&c[j]) / (c[i].norm() * c[j].norm());
            let got = memory.pattern(i).dot(&memory.pattern(j));
            assert!((oracle - got).abs() < 1e-12, "({i},{j}) {oracle} vs {got}");
        }
    }
}

#[test]
fn antipodal_pair_beta_star_matches_dense_grid() {
    let m = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
    let memory = MemoryMatrix::from_columns_normalized(m).unwrap();
    let grid = BetaGrid::default();
    let found = energy::find_beta_star(&memory, grid).unwrap();
    let dense = log_grid(grid.min, grid.max, 10_000);
    let curve: Vec<f64> = dense.iter().map(|&b| binary_entropy_of_scores(1.0, -1.0, b)).collect();
    let oracle = dense[argmax_abs_second_difference(&curve)];
    let step = (grid.max / grid.min).powf(1.0 / (grid.points - 1) as f64);
    let ratio = found.beta_star / oracle;
    assert!(ratio <= step && ratio >= 1.0 / step, "{} vs dense {oracle}", found.beta_star);
}

#[test]
fn largest_singular_value_matches_power_iteration() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for (d, k) in [(5, 9), (20, 4), (12, 12)] {
        let m = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
        let memory = MemoryMatrix::from_columns_normalized(m).unwrap();
        let a = memory.matrix().tr_mul(memory.matrix());
        let mut v = DVector::from_element(k, 1.0);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let w = &a * &v;
            lambda = w.norm();
            v = w / lambda;
        }
        let sigma = energy::largest_singular_value(&memory);
        assert!((sigma - lambda.sqrt()).abs() < 1e-8, "{sigma} vs {}", lambda.sqrt());
    }
}

#[test]
fn ula_step_matches_scalar_arithmetic() {
    let cols = [
        [0.5, 0.5, 0.5, 0.5],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.6, 0.0, 0.8],
    ];
    let m = DMatrix::from_fn(4, 3, |i, j| cols[j][i]);
    let memory = MemoryMatrix::from_columns_normalized(m).unwrap();
    let xi = [0.3, -0.2, 0.9, 0.1];
    let noise = [0.5, -1.0, 0.25, 2.0];
    let (beta, alpha) = (3.0, 0.05);

    let mut sims = [0.0; 3];
    for k in 0..3 {
        for i in 0..4 {
            sims[k] += cols[k][i] * xi[i];
        }
    }
    let top = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = sims.iter().map(|s| (beta * (s - top)).exp()).collect();
    let z: f64 = w.iter().sum();
    let scale = (2.0 * alpha / beta).sqrt();
    let got = sampler::ula_step(
        &memory,
        beta,
        alpha,
        &DVector::from_column_slice(&xi),
        &DVector::from_column_slice(&noise),
    )
    .unwrap();
    for i in 0..4 {
        let mut t = 0.0;
        for k in 0..3 {
            t += cols[k][i] * w[k] / z;
        }
        let want = (1.0 - alpha) * xi[i] + alpha * t + scale * noise[i];
        assert!((got[i] - want).abs() < 1e-12);
    }
}

#[test]
fn mala_ratio_matches_explicit_hastings_formula() {
    let (m1, m2) = ([0.8, 0.6], [-0.6, 0.8]);
    let memory = MemoryMatrix::from_columns_normalized(DMatrix::from_column_slice(2, 2, &[m1[0], m1[1], m2[0], m2[1]])).unwrap();
    let (beta, alpha) = (4.0, 0.1);
    let energy = |x: [f64; 2]| {
        let a = beta * (m1[0] * x[0] + m1[1] * x[1]);
        let b = beta * (m2[0] * x[0] + m2[1] * x[1]);
        0.5 * (x[0] * x[0] + x[1] * x[1]) - (a.exp() + b.exp()).ln() / beta
    };
    let drift = |x: [f64; 2]| {
        let a = (beta * (m1[0] * x[0] + m1[1] * x[1])).exp();
        let b = (beta * (m2[0] * x[0] + m2[1] * x[1])).exp();
        let (pa, pb) = (a / (a + b), b / (a + b));
        [
            (1.0 - alpha) * x[0] + alpha * (pa * m1[0] + pb * m2[0]),
            (1.0 - alpha) * x[1] + alpha * (pa * m1[1] + pb * m2[1]),
        ]
    };
    let log_q = |to: [f64; 2], from: [f64; 2]| {
        let mu = drift(from);
        -beta * ((to[0] - mu[0]).powi(2) + (to[1] - mu[1]).powi(2)) / (4.0 * alpha)
    };
    let x = [0.4, 0.7];
    let y = [0.1, 0.9];
    let want = -beta * energy(y) + beta * energy(x) + log_q(x, y) - log_q(y, x);
    let got = sampler::mala_log_acceptance(
        &memory,
        beta,
        alpha,
        &DVector::from_column_slice(&x),
        &DVector::from_column_slice(&y),
    );
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn sphere_marginal_passes_kolmogorov_smirnov() {
    // First coordinate on S^{d-1} has density proportional to (1 - t^2)^((d-3)/2).
    let n = 4000;
    let critical = 1.63 / (n as f64).sqrt(); // 1% level
    let mut rng = sampler::chain_rng(11, 0, Stream::Init);
    let d3: Vec<f64> = (0..n).map(|_| sampler::init_random_sphere(3, &mut rng)[0]).collect();
    assert!(ks_statistic(d3, |t| (t + 1.0) / 2.0) < critical);
    let d5: Vec<f64> = (0..n).map(|_| sampler::init_random_sphere(5, &mut rng)[0]).collect();
    assert!(ks_statistic(d5, |t| (3.0 * t - t.powi(3) + 2.0) / 4.0) < critical);
}

#[test]
fn retrieval_temperature_traps_chains_in_their_start_basin() {
    let memory = synthetic::random_memory(30, 5, 21).unwrap();
    assert!(energy::self_similarity_gap(&memory).unwrap().min > 0.5);
    let beta_star = energy::find_beta_star(&memory, BetaGrid::default()).unwrap().beta_star;
    let cfg = ChainConfig {
        beta: sampler::retrieval_temperature(beta_star),
        n_chains: 5,
        ..ChainConfig::default()
    };
    for c in 0..5 {
        let r = sampler::run_chain(&memory, &cfg, c, c).unwrap();
        let (_, last) = r.samples.last().unwrap();
        let last = DVector::from_column_slice(last);
        let cos = last.dot(&memory.pattern(c)) / last.norm();
        assert!(1.0 - cos < 0.5, "chain {c} drifted: cosine {cos}");
    }
}

fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let s = (1.0 - phi * phi).sqrt();
    let mut x: f64 = StandardNormal.sample(&mut rng);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x = phi * x + s * z;
            x
        })
        .collect()
}

#[test]
fn ar1_autocorrelation_is_geometric() {
    let rho = diagnostics::autocorrelation(&ar1(0.9, 100_000, 3), 20).unwrap();
    for (lag, r) in rho.iter().enumerate() {
        assert!((r - 0.9f64.powi(lag as i32)).abs() < 0.05, "lag {lag}: {r}");
    }
}

#[test]
fn ar1_integrated_time_near_analytic() {
    let rho = diagnostics::autocorrelation(&ar1(0.9, 100_000, 4), 1000).unwrap();
    let tau = diagnostics::integrated_autocorr_time(&rho).unwrap().tau_int;
    assert!((tau - 19.0).abs() < 0.2 * 19.0, "{tau}");
}

#[test]
fn white_noise_has_unit_integrated_time() {
    let rho = diagnostics::autocorrelation(&ar1(0.0, 50_000, 5), 100).unwrap();
    let tau = diagnostics::integrated_autocorr_time(&rho).unwrap().tau_int;
    assert!((tau - 1.0).abs() < 0.1, "{tau}");
}

#[test]
fn random_sequences_have_low_identity_to_a_family() {
    let aln = synthetic::family(&FamilySpec {
        l: 48,
        ..FamilySpec::default()
    })
    .unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let random: Vec<Vec<u8>> = (0..200)
        .map(|_| (0..48).map(|_| AMINO_ACIDS[rng.random_range(0..20)]).collect())
        .collect();
    let mean = random
        .iter()
        .map(|s| metrics::max_seq_identity(s, &aln).unwrap())
        .sum::<f64>()
        / 200.0;
    assert!(mean > 0.05 && mean < 0.25, "{mean}");
}

/// Smoothed MI of a two-column table where only symbols `A` and `C` occur,
/// written out cell class by cell class over the 21 x 21 table.
fn smoothed_mi(counts: [[f64; 2]; 2], pc: f64) -> f64 {
    let q = 21.0;
    let n: f64 = counts.iter().flatten().sum();
    let total = n + pc * q * q;
    let row = |a: usize| (counts[a][0] + counts[a][1] + pc * q) / total;
    let col = |b: usize| (counts[0][b] + counts[1][b] + pc * q) / total;
    let other = pc * q / total;
    let cell = pc / total;
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let p = (counts[a][b] + pc) / total;
            mi += p * (p / (row(a) * col(b))).ln();
        }
        // Observed row symbol against the 19 unobserved column symbols, and
        // the mirror image.
        mi += 19.0 * cell * (cell / (row(a) * other)).ln();
        mi += 19.0 * cell * (cell / (other * col(a))).ln();
    }
    mi += 19.0 * 19.0 * cell * (cell / (other * other)).ln();
    mi
}

fn two_column_sequences(counts: [[usize; 2]; 2]) -> Vec<Vec<u8>> {
    let sym = [b'A', b'C'];
    let mut out = Vec::new();
    for a in 0..2 {
        for b in 0..2 {
            for _ in 0..counts[a][b] {
                out.push(vec![sym[a], sym[b]]);
            }
        }
    }
    out
}

fn pair_mi(counts: [[usize; 2]; 2]) -> f64 {
    metrics::mi_matrix(&two_column_sequences(counts), 1.0).unwrap()[(0, 1)]
}

#[test]
fn mi_matches_closed_form_for_independent_columns() {
    for n in [25, 2500] {
        let oracle = smoothed_mi([[n as f64; 2]; 2], 1.0);
        assert!((pair_mi([[n; 2]; 2]) - oracle).abs() < 1e-12);
    }
    // Smoothing bias vanishes as the sample grows.
    let big = pair_mi([[250_000; 2]; 2]);
    assert!(big < pair_mi([[2500; 2]; 2]));
    assert!(big < 0.005, "{big}");
}

#[test]
fn mi_matches_closed_form_for_coupled_columns() {
    for n in [50, 5000] {
        let oracle = smoothed_mi([[n as f64, 0.0], [0.0, n as f64]], 1.0);
        assert!((pair_mi([[n, 0], [0, n]]) - oracle).abs() < 1e-12);
    }
    let big = pair_mi([[500_000, 0], [0, 500_000]]);
    assert!((big - 2f64.ln()).abs() < 0.01, "{big}");
}

#[test]
fn bootstrap_draws_are_uniform() {
    let aln = synthetic::family(&FamilySpec {
        k: 20,
        ..FamilySpec::default()
    })
    .unwrap();
    let (model, fam_memory) = build_memory(&aln, 0.95).unwrap();
    let cfg = BaselineConfig {
        n_samples: 10_000,
        ..BaselineConfig::default()
    };
    let (_, picks) = baselines::bootstrap_with_indices(&fam_memory, &model, "f", &cfg).unwrap();
    let k = fam_memory.k() as f64;
    let s = cfg.n_samples as f64;
    let p = 1.0 / k;
    let bound = 3.0 * (s * p * (1.0 - p)).sqrt();
    let mut counts = vec![0usize; fam_memory.k()];
    for i in picks {
        counts[i] += 1;
    }
    for c in counts {
        assert!((c as f64 - s * p).abs() <= bound, "count {c} vs {}", s * p);
    }
}

#[test]
fn two_score_tau_star_matches_dense_grid() {
    let grid = log_grid(TAU_GRID.0, TAU_GRID.1, TAU_GRID.2);
    let got = betafit::tau_star_for_scores(&[vec![0.7, -0.7]], &grid);
    let dense = log_grid(TAU_GRID.0, TAU_GRID.1, 20_000);
    let curve: Vec<f64> = dense.iter().map(|&t| binary_entropy_of_scores(0.7, -0.7, t)).collect();
    let oracle = dense[argmax_abs_second_difference(&curve)];
    let step = (TAU_GRID.1 / TAU_GRID.0).powf(1.0 / (TAU_GRID.2 - 1) as f64);
    assert!(got / oracle <= step && oracle / got <= step, "{got} vs {oracle}");
}

#[test]
fn isotropic_patterns_give_exact_bifurcation() {
    // +-e_i for every axis: zero mean, covariance I / d.
    for d in [2usize, 5, 9] {
        let m = DMatrix::from_fn(d, 2 * d, |i, j| {
            if j / 2 == i {
                if j % 2 == 0 { 1.0 } else { -1.0 }
            } else {
                0.0
            }
        });
        let memory = MemoryMatrix::from_columns_normalized(m).unwrap();
        let b = betafit::bifurcation_predictor(&memory).unwrap();
        assert!((b.lambda1 - 1.0 / d as f64).abs() < 1e-14);
        assert!((b.beta_c.unwrap() - d as f64).abs() < 1e-10);
        assert!(!b.rank_deficient);
    }
}
