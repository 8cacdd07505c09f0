//! Regress the critical temperature on sqrt(d) across families and estimate
//! the Gaussian-pattern transition temperature.
//!
//!     cargo run --release --example critical_temperature_fit

use hopfield_seqgen::betafit::{self, BetaDataset};
use hopfield_seqgen::embed::build_memory;
use hopfield_seqgen::synthetic::{self, FamilySpec};

fn main() -> hopfield_seqgen::Result<()> {
    let data = BetaDataset::reference();
    let report = betafit::full_report(&data, 2000, 42, true)?;
    let f = &report.fit;
    println!("{} families", data.len());
    println!("beta* = {:.3} (+/- {:.3}) + {:.4} (+/- {:.4}) sqrt(d)", f.intercept, f.intercept_se, f.slope, f.slope_se);
    println!("R^2 = {:.3}, RMSE = {:.3}", f.r2, f.rmse);
    if let Some(b) = &f.bootstrap {
        println!("bootstrap slope 95% interval [{:.4}, {:.4}]", b.slope_ci95.0, b.slope_ci95.1);
    }
    if let Some(cv) = &f.loocv {
        println!("leave-one-family-out R^2 = {:.3}", cv.r2);
    }
    for d in [50, 200, 800] {
        println!("predicted beta* at d = {d}: {:.2}", betafit::predict_beta_star(d, (f.intercept, f.slope)));
    }

    let aln = synthetic::family(&FamilySpec::default())?;
    let (_, memory) = build_memory(&aln, 0.95)?;
    let b = betafit::bifurcation_predictor(&memory)?;
    println!("\nsynthetic family: d = {}, leading covariance eigenvalue {:.4}, 1/lambda = {:?}", memory.d(), b.lambda1, b.beta_c);

    println!("\nGaussian-score transition temperature:");
    for k in [10, 30, 100] {
        println!("  K = {k:>3}: tau* = {:.3}", betafit::tau_star_gaussian(k, 200, 42)?);
    }
    Ok(())
}
