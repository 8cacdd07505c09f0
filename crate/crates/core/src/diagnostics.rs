//! Energy-trace diagnostics: autocorrelation, integrated autocorrelation
//! time, effective sample size and burn-in detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Autocorrelations at or above this value count toward `tau_int`.
pub const AUTOCORR_CUTOFF: f64 = 0.05;
pub const BURN_IN_WINDOW: usize = 200;
pub const BURN_IN_TOL: f64 = 0.01;
/// Below this magnitude the stationary mean is compared absolutely.
const NEAR_ZERO_MEAN: f64 = 1e-9;

/// `rho(tau) = c(tau) / c(0)` for `tau = 0..=max_lag`, with the biased
/// (`1/n`) covariance of the mean-subtracted trace.
pub fn autocorrelation(trace: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = trace.len();
    if max_lag == 0 || n <= max_lag {
        return Err(Error::Dimension(format!(
            "need trace length > max_lag >= 1, got n = {n}, max_lag = {max_lag}"
        )));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>();
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::Undefined("autocorrelation of a zero-variance trace".into()));
    }
    let mut rho = Vec::with_capacity(max_lag + 1);
    rho.push(1.0);
    for lag in 1..=max_lag {
        let c: f64 = centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum();
        rho.push((c / c0).clamp(-1.0, 1.0));
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutocorrTime {
    pub tau_int: f64,
    /// First lag with `rho < 0.05`; `None` means the sum ran out of lags and
    /// `tau_int` is a lower bound.
    pub cutoff_lag: Option<usize>,
}

/// `1 + 2 * sum rho(tau)` over the lags before the first one below 0.05.
pub fn integrated_autocorr_time(rho: &[f64]) -> Result<AutocorrTime> {
    if rho.first() != Some(&1.0) {
        return Err(Error::Undefined("autocorrelation must start with rho(0) = 1".into()));
    }
    let mut sum = 0.0;
    for (lag, &r) in rho.iter().enumerate().skip(1) {
        if r < AUTOCORR_CUTOFF {
            return Ok(AutocorrTime {
                tau_int: 1.0 + 2.0 * sum,
                cutoff_lag: Some(lag),
            });
        }
        sum += r;
    }
    Ok(AutocorrTime {
        tau_int: 1.0 + 2.0 * sum,
        cutoff_lag: None,
    })
}

pub fn effective_sample_size(n: usize, tau_int: f64) -> f64 {
    n as f64 / tau_int
}

/// Earliest iteration `t >= window` whose trailing `window`-step mean lies
/// within `tol` (relative) of the mean of the final half of the trace.
pub fn burn_in_convergence(trace: &[f64], window: usize, tol: f64) -> Option<usize> {
    let n = trace.len();
    if window == 0 || n <= window {
        return None;
    }
    let tail = &trace[n / 2..];
    let stationary = tail.iter().sum::<f64>() / tail.len() as f64;
    let within = |m: f64| {
        let diff = (m - stationary).abs();
        if stationary.abs() < NEAR_ZERO_MEAN {
            diff <= NEAR_ZERO_MEAN
        } else {
            diff <= tol * stationary.abs()
        }
    };
    // Prefix sums keep every window mean independent of earlier rounding.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in trace {
        acc += x;
        prefix.push(acc);
    }
    (window..=n).find(|&t| within((prefix[t] - prefix[t - window]) / window as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    /// Length of the post-burn-in trace the autocorrelation was computed on.
    pub n: usize,
    pub tau_int: f64,
    pub tau_cutoff_reached: bool,
    pub ess: f64,
    pub convergence_iter: Option<usize>,
    pub acceptance_rate: f64,
    pub autocorr: Vec<f64>,
}

/// Diagnose one chain from its full energy trace.
///
/// Autocorrelation uses the trace after `burn_in`; convergence uses the
/// whole trace.
pub fn diagnose_chain(
    chain: usize,
    energy_trace: &[f64],
    burn_in: usize,
    acceptance_rate: f64,
) -> Result<ChainDiagnostics> {
    if burn_in + 2 > energy_trace.len() {
        return Err(Error::Dimension(format!(
            "trace of length {} leaves nothing after burn-in {burn_in}",
            energy_trace.len()
        )));
    }
    let post = &energy_trace[burn_in..];
    let max_lag = (post.len() / 2).max(1);
    let autocorr = autocorrelation(post, max_lag)?;
    let t = integrated_autocorr_time(&autocorr)?;
    Ok(ChainDiagnostics {
        chain,
        n: post.len(),
        tau_int: t.tau_int,
        tau_cutoff_reached: t.cutoff_lag.is_some(),
        ess: effective_sample_size(post.len(), t.tau_int),
        convergence_iter: burn_in_convergence(energy_trace, BURN_IN_WINDOW, BURN_IN_TOL),
        acceptance_rate,
        autocorr,
    })
}

/// Ensemble summary over chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub tau_int: f64,
    pub ess: f64,
    pub acceptance_rate: f64,
    /// Latest convergence iteration over chains; `None` if any chain never
    /// converged.
    pub convergence_iter: Option<usize>,
    /// `burn_in / convergence_iter`.
    pub margin: Option<f64>,
}

pub fn summarize(chains: &[ChainDiagnostics], burn_in: usize) -> Result<DiagnosticsSummary> {
    if chains.is_empty() {
        return Err(Error::Undefined("no chains to summarize".into()));
    }
    let n = chains.len() as f64;
    let mean = |f: fn(&ChainDiagnostics) -> f64| chains.iter().map(f).sum::<f64>() / n;
    let convergence_iter = chains
        .iter()
        .map(|c| c.convergence_iter)
        .collect::<Option<Vec<_>>>()
        .and_then(|v| v.into_iter().max());
    Ok(DiagnosticsSummary {
        tau_int: mean(|c| c.tau_int),
        ess: mean(|c| c.ess),
        acceptance_rate: mean(|c| c.acceptance_rate),
        convergence_iter,
        margin: convergence_iter.map(|t| burn_in as f64 / t as f64),
    })
}

pub const DIAGNOSTICS_TSV_HEADER: &str =
    "family\tkernel\ttau_int\tess\tacceptance_rate\tconvergence_iter\tmargin";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn diagnostics_tsv_row(family: &str, kernel: &str, s: &DiagnosticsSummary) -> String {
    format!(
        "{family}\t{kernel}\t{:.2}\t{:.2}\t{:.4}\t{}\t{}",
        s.tau_int,
        s.ess,
        s.acceptance_rate,
        opt(s.convergence_iter),
        opt(s.margin.map(|m| format!("{m:.2}")))
    )
}

pub const CHAIN_DIAGNOSTICS_TSV_HEADER: &str =
    "family\tkernel\tchain\ttau_int\tess\tacceptance_rate\tconvergence_iter\tcutoff_reached";

pub fn chain_diagnostics_tsv_row(family: &str, kernel: &str, c: &ChainDiagnostics) -> String {
    format!(
        "{family}\t{kernel}\t{}\t{:.2}\t{:.2}\t{:.4}\t{}\t{}",
        c.chain,
        c.tau_int,
        c.ess,
        c.acceptance_rate,
        opt(c.convergence_iter),
        c.tau_cutoff_reached
    )
}
