//! Predicting the critical inverse temperature from alignment statistics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::MemoryMatrix;
use crate::energy::{log_grid, max_log_curvature, softmax_stats};
use crate::error::{Error, Result};

/// `(intercept, slope)` of `beta* = a + b sqrt(d)` used when no fit is given.
pub const DEFAULT_COEFFICIENTS: (f64, f64) = (1.565, 0.281);

/// Reference eight-family table shipped with the crate.
pub const REFERENCE_FAMILIES_TSV: &str = include_str!("../data/reference_families.tsv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub family: String,
    pub d: usize,
    pub beta_star: f64,
    pub h_col: Option<f64>,
    pub k_eff: Option<f64>,
    pub spectral_concentration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BetaDataset {
    pub points: Vec<BetaPoint>,
}

pub const DATASET_TSV_HEADER: &str = "family\td\tbeta_star\th_col\tk_eff\tspectral_concentration";

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

impl BetaDataset {
    pub fn reference() -> Self {
        Self::from_tsv(REFERENCE_FAMILIES_TSV).expect("bundled table parses")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim_end() == DATASET_TSV_HEADER => {}
            Some((i, _)) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected header '{DATASET_TSV_HEADER}'"),
                })
            }
            None => return Err(Error::EmptyFamily("empty dataset".into())),
        }
        let mut points = Vec::new();
        for (i, line) in lines {
            let err = |message: String| Error::Parse { line: i + 1, message };
            let f: Vec<&str> = line.trim_end().split('\t').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s == "NA" {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| err(format!("bad number '{s}'")))
                }
            };
            let d: usize = f[1].parse().map_err(|_| err(format!("bad dimension '{}'", f[1])))?;
            let beta_star: f64 = f[2].parse().map_err(|_| err(format!("bad beta* '{}'", f[2])))?;
            if d == 0 || !(beta_star > 0.0) {
                return Err(err("need d >= 1 and beta* > 0".into()));
            }
            points.push(BetaPoint {
                family: f[0].to_string(),
                d,
                beta_star,
                h_col: opt(f[3])?,
                k_eff: opt(f[4])?,
                spectral_concentration: opt(f[5])?,
            });
        }
        Ok(Self { points })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{DATASET_TSV_HEADER}\n");
        for p in &self.points {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                p.family,
                p.d,
                p.beta_star,
                na(p.h_col),
                na(p.k_eff),
                na(p.spectral_concentration)
            ));
        }
        out
    }

    fn sqrt_d(&self) -> Vec<f64> {
        self.points.iter().map(|p| (p.d as f64).sqrt()).collect()
    }

    fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.beta_star).collect()
    }
}

// ---------------------------------------------------------------- OLS

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r2: f64,
    pub rmse: f64,
}

/// Least squares of `y` on the columns of `x` (include a column of ones for
/// an intercept).
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} design rows but {} targets", y.len())));
    }
    if n < p {
        return Err(Error::Degenerate(format!("{n} points for {p} coefficients")));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * n.max(p) as f64 * f64::EPSILON;
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::Degenerate("design matrix is rank deficient".into()));
    }
    let yv = DVector::from_column_slice(y);
    let beta = svd
        .solve(&yv, tol)
        .map_err(|e| Error::Numeric(format!("least squares solve: {e}")))?;
    let residuals = &yv - x * &beta;
    let sse = residuals.norm_squared();
    let ybar = yv.mean();
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    let standard_errors = if n > p {
        let sigma2 = sse / (n - p) as f64;
        let xtx_inv = (x.transpose() * x)
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular normal equations".into()))?;
        (0..p).map(|j| (sigma2 * xtx_inv[(j, j)]).max(0.0).sqrt()).collect()
    } else {
        vec![f64::NAN; p]
    };
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        residuals: residuals.iter().copied().collect(),
        r2,
        rmse: (sse / n as f64).sqrt(),
    })
}

fn design(columns: &[&[f64]]) -> DMatrix<f64> {
    let n = columns[0].len();
    DMatrix::from_fn(n, columns.len() + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] })
}

fn fit_line(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() < 2 || x.iter().all(|&v| v == x[0]) {
        return Err(Error::Degenerate("all regressor values are equal".into()));
    }
    ols(&design(&[x]), y)
}

// ---------------------------------------------------------------- sqrt(d) model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub resamples: usize,
    pub skipped: usize,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub intercept_ci95: (f64, f64),
    pub slope_ci95: (f64, f64),
    pub median_r2: f64,
    pub r2_ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvResult {
    pub r2: f64,
    pub rmse: f64,
    /// `(family, number of held-out points, mean absolute error)`.
    pub per_family: Vec<(String, usize, f64)>,
    pub slope_range: (f64, f64),
    pub intercept_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub n: usize,
    pub intercept: f64,
    pub intercept_se: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub r2: f64,
    pub rmse: f64,
    pub bootstrap: Option<BootstrapSummary>,
    pub loocv: Option<LoocvResult>,
}

/// OLS of `beta*` on `(1, sqrt(d))`. Standard errors are the classical ones.
pub fn fit_sqrt_d(data: &BetaDataset) -> Result<FitResult> {
    if data.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", data.len())));
    }
    let fit = fit_line(&data.sqrt_d(), &data.targets())?;
    Ok(FitResult {
        n: data.len(),
        intercept: fit.coefficients[0],
        intercept_se: fit.standard_errors[0],
        slope: fit.coefficients[1],
        slope_se: fit.standard_errors[1],
        r2: fit.r2,
        rmse: fit.rmse,
        bootstrap: None,
        loocv: None,
    })
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Case-resampling bootstrap of the `sqrt(d)` fit. Resample `i` draws from
/// its own ChaCha stream, so results do not depend on scheduling. Resamples
/// whose `d` values are all equal are skipped and counted.
pub fn bootstrap_coefficients(data: &BetaDataset, n_resamples: usize, seed: u64) -> Result<BootstrapSummary> {
    let x = data.sqrt_d();
    let y = data.targets();
    let n = x.len();
    if n < 3 {
        return Err(Error::Degenerate("bootstrap needs at least 3 points".into()));
    }
    let fits: Vec<Option<(f64, f64, f64)>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let xs: Vec<f64> = idx.iter().map(|&j| x[j]).collect();
            let ys: Vec<f64> = idx.iter().map(|&j| y[j]).collect();
            fit_line(&xs, &ys)
                .ok()
                .map(|f| (f.coefficients[0], f.coefficients[1], f.r2))
        })
        .collect();
    let ok: Vec<(f64, f64, f64)> = fits.iter().flatten().copied().collect();
    if ok.len() < 2 {
        return Err(Error::Degenerate("fewer than two usable bootstrap resamples".into()));
    }
    let a = sorted(ok.iter().map(|f| f.0).collect());
    let b = sorted(ok.iter().map(|f| f.1).collect());
    let r = sorted(ok.iter().map(|f| f.2).collect());
    Ok(BootstrapSummary {
        resamples: ok.len(),
        skipped: n_resamples - ok.len(),
        intercept_se: sd(&a),
        slope_se: sd(&b),
        intercept_ci95: (quantile(&a, 0.025), quantile(&a, 0.975)),
        slope_ci95: (quantile(&b, 0.025), quantile(&b, 0.975)),
        median_r2: quantile(&r, 0.5),
        r2_ci95: (quantile(&r, 0.025), quantile(&r, 0.975)),
    })
}

/// Hold out every point of one family at a time, refit, predict; errors are
/// pooled over all held-out points.
pub fn leave_one_family_out(data: &BetaDataset) -> Result<LoocvResult> {
    let mut families: Vec<&str> = Vec::new();
    for p in &data.points {
        if !families.contains(&p.family.as_str()) {
            families.push(&p.family);
        }
    }
    if families.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 families, got {}",
            families.len()
        )));
    }
    let mut sse = 0.0;
    let mut per_family = Vec::new();
    let (mut slopes, mut intercepts) = (Vec::new(), Vec::new());
    for fam in &families {
        let (test, train): (Vec<&BetaPoint>, Vec<&BetaPoint>) =
            data.points.iter().partition(|p| p.family == *fam);
        let x: Vec<f64> = train.iter().map(|p| (p.d as f64).sqrt()).collect();
        let y: Vec<f64> = train.iter().map(|p| p.beta_star).collect();
        let fit = fit_line(&x, &y).map_err(|_| {
            Error::Degenerate(format!("fold without '{fam}' has a degenerate design"))
        })?;
        let (a, b) = (fit.coefficients[0], fit.coefficients[1]);
        intercepts.push(a);
        slopes.push(b);
        let mut abs = 0.0;
        for p in &test {
            let e = p.beta_star - predict_beta_star(p.d, (a, b));
            sse += e * e;
            abs += e.abs();
        }
        per_family.push((fam.to_string(), test.len(), abs / test.len() as f64));
    }
    let y = data.targets();
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let range = |v: &[f64]| {
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    Ok(LoocvResult {
        r2: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
        rmse: (sse / y.len() as f64).sqrt(),
        per_family,
        slope_range: range(&slopes),
        intercept_range: range(&intercepts),
    })
}

/// `a + b sqrt(d)`.
pub fn predict_beta_star(d: usize, coefficients: (f64, f64)) -> f64 {
    coefficients.0 + coefficients.1 * (d as f64).sqrt()
}

// ---------------------------------------------------------------- extra features

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedModel {
    pub features: Vec<String>,
    pub n: usize,
    pub r2: f64,
    pub delta_r2: f64,
}

/// `sqrt(d)` alone and with each available extra feature added, fitted on
/// the points where every feature of the model is present.
pub fn nested_feature_report(data: &BetaDataset) -> Result<Vec<NestedModel>> {
    type Getter = fn(&BetaPoint) -> Option<f64>;
    let extras: [(&str, Getter); 3] = [
        ("h_col", |p| p.h_col),
        ("log_k_eff", |p| p.k_eff.filter(|k| *k > 0.0).map(f64::ln)),
        ("spectral_concentration", |p| p.spectral_concentration),
    ];
    let mut out = Vec::new();
    for (name, get) in extras {
        let pts: Vec<(&BetaPoint, f64)> = data
            .points
            .iter()
            .filter_map(|p| get(p).map(|v| (p, v)))
            .collect();
        if pts.len() < 4 {
            continue;
        }
        let x: Vec<f64> = pts.iter().map(|(p, _)| (p.d as f64).sqrt()).collect();
        let z: Vec<f64> = pts.iter().map(|(_, v)| *v).collect();
        let y: Vec<f64> = pts.iter().map(|(p, _)| p.beta_star).collect();
        let base = fit_line(&x, &y)?;
        let Ok(full) = ols(&design(&[&x, &z]), &y) else {
            continue;
        };
        if out.is_empty() {
            out.push(NestedModel {
                features: vec!["sqrt_d".into()],
                n: pts.len(),
                r2: base.r2,
                delta_r2: 0.0,
            });
        }
        out.push(NestedModel {
            features: vec!["sqrt_d".into(), name.into()],
            n: pts.len(),
            r2: full.r2,
            delta_r2: full.r2 - base.r2,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- tau*

pub const TAU_GRID: (f64, f64, usize) = (0.01, 100.0, 400);

/// Inflection of the mean softmax entropy of the given score vectors on
/// the log grid `grid`.
pub fn tau_star_for_scores(scores: &[Vec<f64>], grid: &[f64]) -> f64 {
    let mut curve = vec![0.0; grid.len()];
    for z in scores {
        for (c, &tau) in curve.iter_mut().zip(grid) {
            *c += softmax_stats(z, tau).0;
        }
    }
    grid[max_log_curvature(&curve)]
}

/// Dimensionless entropy inflection for `K` i.i.d. standard normal scores,
/// averaged over `n_realizations` draws.
pub fn tau_star_gaussian(k: usize, n_realizations: usize, seed: u64) -> Result<f64> {
    if k < 2 || n_realizations == 0 {
        return Err(Error::Config("need K >= 2 and at least one realization".into()));
    }
    let grid = log_grid(TAU_GRID.0, TAU_GRID.1, TAU_GRID.2);
    let curves: Vec<Vec<f64>> = (0..n_realizations)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            grid.iter().map(|&t| softmax_stats(&z, t).0).collect()
        })
        .collect();
    let mut mean = vec![0.0; grid.len()];
    for c in &curves {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    Ok(grid[max_log_curvature(&mean)])
}

// ---------------------------------------------------------------- bifurcation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bifurcation {
    /// Leading eigenvalue of the pattern covariance (`1/K` normalization).
    pub lambda1: f64,
    /// `1 / lambda1`; `None` when the covariance vanishes.
    pub beta_c: Option<f64>,
    /// Covariance rank below `d`.
    pub rank_deficient: bool,
}

pub fn bifurcation_predictor(memory: &MemoryMatrix) -> Result<Bifurcation> {
    let k = memory.k();
    if k < 2 {
        return Err(Error::Degenerate("bifurcation predictor needs K >= 2".into()));
    }
    let x = memory.matrix();
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let cov = &centered * centered.transpose() / k as f64;
    let eig = SymmetricEigen::new(cov);
    let lambda1 = eig.eigenvalues.max();
    let tol = lambda1.abs().max(f64::MIN_POSITIVE) * memory.d() as f64 * f64::EPSILON * 10.0;
    let rank = eig.eigenvalues.iter().filter(|&&l| l > tol).count();
    Ok(Bifurcation {
        lambda1,
        beta_c: (lambda1 > 1e-300).then(|| 1.0 / lambda1),
        rank_deficient: rank < memory.d(),
    })
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFitReport {
    pub fit: FitResult,
    pub nested: Vec<NestedModel>,
    pub sqrt_d_baseline_rmse: f64,
}

/// Fit plus bootstrap, cross-validation and the extra-feature comparison.
pub fn full_report(data: &BetaDataset, n_resamples: usize, seed: u64, loocv: bool) -> Result<BetaFitReport> {
    let mut fit = fit_sqrt_d(data)?;
    if n_resamples > 0 {
        fit.bootstrap = Some(bootstrap_coefficients(data, n_resamples, seed)?);
    }
    if loocv {
        fit.loocv = Some(leave_one_family_out(data)?);
    }
    let naive: f64 = data
        .points
        .iter()
        .map(|p| (p.beta_star - (p.d as f64).sqrt()).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    Ok(BetaFitReport {
        fit,
        nested: nested_feature_report(data)?,
        sqrt_d_baseline_rmse: naive.sqrt(),
    })
}

pub const LOOCV_TSV_HEADER: &str = "family\tn_points\tabs_error";

pub fn loocv_tsv(r: &LoocvResult) -> String {
    let mut out = format!("{LOOCV_TSV_HEADER}\n");
    for (f, n, e) in &r.per_family {
        out.push_str(&format!("{f}\t{n}\t{e:.6}\n"));
    }
    out
}
