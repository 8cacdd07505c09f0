use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hopfield_seqgen::energy::BetaGrid;
use hopfield_seqgen::pipeline::{self, *};
use hopfield_seqgen::sampler::{ChainConfig, TemperatureRounding};
use hopfield_seqgen::{Error, Result};

#[derive(Parser)]
#[command(name = "hseqgen", version, about = "Protein family sequence generation by Hopfield-energy Langevin sampling")]
struct Cli {
    /// Master seed for every random draw (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for chain-level parallelism; output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BuildArgs {
    /// Minimum fraction of variance kept by PCA.
    #[arg(long)]
    rho_min: Option<f64>,
    /// Drop columns whose gap fraction exceeds this.
    #[arg(long)]
    col_gap_max: Option<f64>,
    /// Drop sequences whose gap fraction exceeds this (after column filtering).
    #[arg(long)]
    seq_gap_max: Option<f64>,
    /// Round the generation temperature up instead of to nearest.
    #[arg(long)]
    beta_ceil: bool,
}

#[derive(Args, Clone)]
struct ChainArgs {
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    samples_per_chain: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// `stored` (near a random stored pattern) or `random` (uniform on the sphere).
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    init_sigma: Option<f64>,
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Add charge, hydrophobicity and antimicrobial-filter columns.
    #[arg(long)]
    biophysics: bool,
    /// `with-his` (+0.5 per His) or `no-his`.
    #[arg(long)]
    charge_model: Option<String>,
}

#[derive(Args, Clone)]
struct MsaArgs {
    /// Stockholm or aligned FASTA file.
    #[arg(long)]
    msa: PathBuf,
    #[arg(long)]
    format: Option<InputFormat>,
    /// Family label (defaults to the file stem).
    #[arg(long)]
    family: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean an alignment, fit the PCA memory and locate the critical temperature.
    Build {
        #[command(flatten)]
        msa: MsaArgs,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run multi-chain Langevin sampling from a build.
    Sample {
        #[arg(long)]
        build_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// `generation`, `retrieval` or an explicit inverse temperature.
        #[arg(long)]
        regime: Option<Regime>,
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Score an aligned FASTA of generated sequences.
    Evaluate {
        #[arg(long)]
        build_dir: PathBuf,
        #[arg(long)]
        fasta: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Generate and score a reference baseline.
    Baseline {
        #[arg(long)]
        build_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// bootstrap, gaussian, convex or consensus_noise.
        #[arg(long)]
        method: String,
        #[arg(long)]
        n_samples: Option<usize>,
        /// Step size whose Langevin noise the Gaussian baseline matches.
        #[arg(long)]
        alpha: Option<f64>,
        /// Explicit noise scale for gaussian / consensus_noise.
        #[arg(long)]
        sigma: Option<f64>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Full pipeline on the real alignment and on a column-permuted copy.
    ControlPermute {
        #[command(flatten)]
        msa: MsaArgs,
        #[command(flatten)]
        build: BuildArgs,
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Rebuild and resample on random row subsets of several sizes.
    Scaling {
        #[command(flatten)]
        msa: MsaArgs,
        /// Comma-separated subset sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        build: BuildArgs,
        #[command(flatten)]
        chain: ChainArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Autocorrelation, ESS and burn-in diagnostics of a sample run.
    Diagnose {
        /// Output directory of a `sample` run.
        #[arg(long)]
        sample_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit the critical temperature against sqrt(d).
    Betafit {
        /// TSV with family, d, beta_star, h_col, k_eff, spectral_concentration.
        #[arg(long, conflicts_with = "build_dirs")]
        dataset: Option<PathBuf>,
        /// Build directories to collect points from.
        #[arg(long, num_args = 1..)]
        build_dirs: Vec<PathBuf>,
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Also report leave-one-family-out cross-validation.
        #[arg(long)]
        loocv: bool,
        /// Memory sizes for the random-pattern transition estimate.
        #[arg(long, value_delimiter = ',')]
        tau_star: Vec<usize>,
        #[arg(long)]
        tau_realizations: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

struct Ctx {
    cfg: ConfigFile,
    seed: u64,
    threads: Option<usize>,
    force: bool,
}

impl Ctx {
    fn build_params(&self, a: &BuildArgs) -> Result<BuildParams> {
        let d = BuildParams::default();
        let ceil = a.beta_ceil || self.cfg.get::<bool>("beta_ceil")?.unwrap_or(false);
        Ok(BuildParams {
            rho_min: self.cfg.resolve(a.rho_min, "rho_min", d.rho_min)?,
            clean: CleanParams {
                col_gap_max: self.cfg.resolve(a.col_gap_max, "col_gap_max", d.clean.col_gap_max)?,
                seq_gap_max: self.cfg.resolve(a.seq_gap_max, "seq_gap_max", d.clean.seq_gap_max)?,
            },
            grid: BetaGrid::default(),
            rounding: if ceil {
                TemperatureRounding::Ceil
            } else {
                TemperatureRounding::Nearest
            },
        })
    }

    fn chain(&self, a: &ChainArgs) -> Result<ChainConfig> {
        let d = ChainConfig::default();
        let c = &self.cfg;
        let sigma = c.resolve(a.init_sigma, "init_sigma", 0.01)?;
        let init = c.resolve(a.init.clone(), "init", "stored".to_string())?;
        let kernel = c.resolve(a.kernel.clone(), "kernel", "ula".to_string())?;
        Ok(ChainConfig {
            beta: d.beta,
            alpha: c.resolve(a.alpha, "alpha", d.alpha)?,
            iterations: c.resolve(a.iterations, "iterations", d.iterations)?,
            burn_in: c.resolve(a.burn_in, "burn_in", d.burn_in)?,
            thin: c.resolve(a.thin, "thin", d.thin)?,
            samples_per_chain: c.resolve(a.samples_per_chain, "samples_per_chain", d.samples_per_chain)?,
            n_chains: c.resolve(a.chains, "chains", d.n_chains)?,
            init: parse_init(&init, sigma)?,
            master_seed: self.seed,
            kernel: parse_kernel(&kernel)?,
        })
    }

    fn eval(&self, a: &EvalArgs) -> Result<EvalSettings> {
        let biophysics = a.biophysics || self.cfg.get::<bool>("biophysics")?.unwrap_or(false);
        let charge = self.cfg.resolve(a.charge_model.clone(), "charge_model", "with-his".into())?;
        Ok(EvalSettings {
            seed: self.seed,
            biophysics,
            charge_model: parse_charge_model(&charge)?,
        })
    }

    fn pipeline(&self, msa: MsaArgs, b: &BuildArgs, c: &ChainArgs, e: &EvalArgs, out: PathBuf) -> Result<PipelineOptions> {
        Ok(PipelineOptions {
            msa: msa.msa,
            format: msa.format,
            family: msa.family,
            build: self.build_params(b)?,
            chain: self.chain(c)?,
            threads: self.threads,
            eval: self.eval(e)?,
            out_dir: out,
            force: self.force,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = cfg.resolve(cli.seed, "seed", DEFAULT_SEED)?;
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => cfg.get("threads")?,
    };
    if threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let ctx = Ctx {
        cfg,
        seed,
        threads,
        force: cli.force,
    };
    match cli.command {
        Command::Build { msa, build, out_dir } => {
            let m = pipeline::cmd_build(&BuildOptions {
                msa: msa.msa,
                format: msa.format,
                family: msa.family,
                params: ctx.build_params(&build)?,
                out_dir,
                force: ctx.force,
            })?;
            eprintln!(
                "{}: K={} L={} d={} beta*={:.3} beta_gen={}",
                m.family, m.k, m.l, m.d, m.beta_star, m.beta_gen
            );
        }
        Command::Sample { build_dir, out_dir, regime, chain, eval } => {
            let regime = ctx.cfg.resolve(regime, "regime", Regime::Generation)?;
            let m = pipeline::cmd_sample(&SampleOptions {
                regime,
                chain: ctx.chain(&chain)?,
                threads: ctx.threads,
                eval: ctx.eval(&eval)?,
                force: ctx.force,
                ..SampleOptions::new(build_dir, out_dir)
            })?;
            eprintln!("{}: wrote {} sequences", m.family, m.n_samples);
        }
        Command::Evaluate { build_dir, fasta, label, out_dir, eval } => {
            let e = ctx.eval(&eval)?;
            let r = pipeline::cmd_evaluate(&EvaluateOptions {
                build_dir,
                fasta,
                label,
                out_dir,
                seed: ctx.cfg.get("seed")?.or(cli.seed),
                biophysics: e.biophysics,
                charge_model: e.charge_model,
                force: ctx.force,
            })?;
            eprintln!("{} {}: KL={:.4} novelty={:.4}", r.family, r.method, r.metrics.kl_aa, r.metrics.novelty_mean);
        }
        Command::Baseline { build_dir, out_dir, method, n_samples, alpha, sigma, eval } => {
            let mut o = BaselineOptions::new(build_dir, out_dir, method.parse()?);
            o.seed = ctx.seed;
            o.n_samples = ctx.cfg.resolve(n_samples, "n_samples", o.n_samples)?;
            o.alpha = ctx.cfg.resolve(alpha, "alpha", o.alpha)?;
            o.sigma = sigma.or(ctx.cfg.get("sigma")?);
            o.eval = ctx.eval(&eval)?;
            o.force = ctx.force;
            let m = pipeline::cmd_baseline(&o)?;
            eprintln!("{} {}: wrote {} sequences", m.family, m.method, m.n_samples);
        }
        Command::ControlPermute { msa, build, chain, eval, out_dir } => {
            let o = ctx.pipeline(msa, &build, &chain, &eval, out_dir)?;
            pipeline::cmd_control_permute(&o)?;
        }
        Command::Scaling { msa, sizes, repeats, build, chain, eval, out_dir } => {
            let repeats = ctx.cfg.resolve(repeats, "repeats", 5)?;
            let o = ctx.pipeline(msa, &build, &chain, &eval, out_dir)?;
            pipeline::cmd_scaling(&o, &sizes, repeats)?;
        }
        Command::Diagnose { sample_dir, out_dir } => {
            let m = pipeline::cmd_diagnose(&sample_dir, &out_dir, ctx.force)?;
            eprintln!(
                "{} {}: tau_int={:.1} ess={:.1} acceptance={:.4}",
                m.family, m.kernel, m.summary.tau_int, m.summary.ess, m.summary.acceptance_rate
            );
        }
        Command::Betafit { dataset, build_dirs, bootstrap, loocv, tau_star, tau_realizations, out_dir } => {
            let source = match (dataset, build_dirs.is_empty()) {
                (Some(p), _) => BetaSource::Dataset(p),
                (None, false) => BetaSource::Builds(build_dirs),
                (None, true) => BetaSource::Reference,
            };
            let mut o = BetafitOptions::new(source, out_dir);
            o.bootstrap = ctx.cfg.resolve(bootstrap, "bootstrap", o.bootstrap)?;
            o.tau_realizations = ctx.cfg.resolve(tau_realizations, "tau_realizations", o.tau_realizations)?;
            o.seed = ctx.seed;
            o.loocv = loocv || ctx.cfg.get::<bool>("loocv")?.unwrap_or(false);
            o.tau_star = tau_star;
            o.force = ctx.force;
            let m = pipeline::cmd_betafit(&o)?;
            let f = &m.report.fit;
            eprintln!("beta* = {:.3} + {:.3} sqrt(d)  (R^2 = {:.3}, n = {})", f.intercept, f.slope, f.r2, f.n);
            for (k, t) in &m.tau_star {
                eprintln!("tau*(K={k}) = {t:.3}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if t > 0 {
            // Only the first initialization wins; nothing else builds the pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
