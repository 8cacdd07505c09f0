//! File-level commands: each reads its inputs from disk, writes FASTA / TSV /
//! JSON / binary outputs into a directory, and records a manifest with all
//! effective parameters and SHA-256 checksums of everything it wrote.
//!
//! Outputs depend only on inputs and seeds, never on thread count or time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, BaselineConfig, BaselineMethod};
use crate::betafit::{self, BetaDataset, BetaPoint};
use crate::container::Container;
use crate::diagnostics;
use crate::embed::{build_memory, decode, one_hot_sequence, MemoryMatrix, PcaModel};
use crate::energy::{self, BetaGrid};
use crate::error::{Error, Result};
use crate::metrics::{self, ChargeModel, EvalOptions, EvaluationReport};
use crate::msa::{self, CleanAlignment};
use crate::sampler::{
    self, ChainConfig, Init, Kernel, Provenance, SampleSet, TemperatureRounding,
};

pub const DEFAULT_SEED: u64 = 42;
pub const MANIFEST: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.bin";
pub const ALIGNMENT_FILE: &str = "alignment.fasta";
pub const SAMPLES_FILE: &str = "samples.fasta";
pub const STATES_FILE: &str = "states.bin";
pub const TRACES_FILE: &str = "traces.bin";

// ---------------------------------------------------------------- helpers

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Output directory that records checksums of what is written into it.
struct OutDir {
    path: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutDir {
    fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let non_empty = fs::read_dir(path)?.next().is_some();
            if non_empty && !force {
                return Err(Error::Config(format!(
                    "output directory {} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
        }
        fs::create_dir_all(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_manifest<T: Serialize>(&self, manifest: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        fs::write(self.path.join(MANIFEST), text)?;
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn tsv(header: &str, rows: &[String]) -> String {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

// ---------------------------------------------------------------- config file

/// Flat `key = value` configuration. `#` starts a comment; keys use the
/// long flag names with dashes or underscores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected 'key = value'".into(),
            })?;
            values.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(&key.replace('-', "_")) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value '{v}' for config key '{key}'"))),
        }
    }

    /// Flag value if given, else config value, else the default.
    pub fn resolve<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

// ---------------------------------------------------------------- input

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Stockholm,
    Fasta,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stockholm" | "sto" | "stk" => Ok(Self::Stockholm),
            "fasta" | "fa" | "afa" => Ok(Self::Fasta),
            other => Err(Error::Config(format!("unknown alignment format '{other}'"))),
        }
    }
}

/// Extension first, then the first non-blank line.
pub fn detect_format(path: &Path, text: &str) -> InputFormat {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("sto" | "stk" | "sth" | "stockholm") => return InputFormat::Stockholm,
        Some("fa" | "fasta" | "afa" | "fas" | "aln") => return InputFormat::Fasta,
        _ => {}
    }
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.starts_with("# STOCKHOLM") {
        InputFormat::Stockholm
    } else {
        InputFormat::Fasta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub format: InputFormat,
    pub sha256: String,
    pub raw_k: usize,
    pub raw_l: usize,
    pub replaced_non_canonical: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanParams {
    pub col_gap_max: f64,
    pub seq_gap_max: f64,
}

impl Default for CleanParams {
    fn default() -> Self {
        Self {
            col_gap_max: 0.5,
            seq_gap_max: 0.3,
        }
    }
}

/// Read, parse and clean an alignment file.
pub fn load_alignment(
    path: &Path,
    format: Option<InputFormat>,
    clean: CleanParams,
) -> Result<(CleanAlignment, InputRecord)> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::Parse { line: 0, message: "input is not UTF-8".into() })?;
    let format = format.unwrap_or_else(|| detect_format(path, &text));
    let raw = match format {
        InputFormat::Stockholm => msa::parse_stockholm(&text)?,
        InputFormat::Fasta => msa::parse_fasta(&text)?,
    };
    let record = InputRecord {
        path: path.display().to_string(),
        format,
        sha256: sha256_hex(&bytes),
        raw_k: raw.len(),
        raw_l: raw.width(),
        replaced_non_canonical: raw.replaced_non_canonical,
    };
    let aln = msa::clean(&raw, clean.col_gap_max, clean.seq_gap_max)?;
    Ok((aln, record))
}

fn family_from_path(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("family")
        .to_string()
}

// ---------------------------------------------------------------- build

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub rho_min: f64,
    pub clean: CleanParams,
    pub grid: BetaGrid,
    pub rounding: TemperatureRounding,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            rho_min: 0.95,
            clean: CleanParams::default(),
            grid: BetaGrid::default(),
            rounding: TemperatureRounding::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub command: String,
    pub version: String,
    pub family: String,
    pub input: Option<InputRecord>,
    pub params: BuildParams,
    pub k: usize,
    pub l: usize,
    pub d: usize,
    pub beta_star: f64,
    pub beta_gen: f64,
    pub beta_ret: f64,
    pub mean_column_entropy: f64,
    pub k_eff: f64,
    pub mean_pairwise_identity: f64,
    pub spectral_concentration: f64,
    pub kept_columns: Vec<usize>,
    pub files: BTreeMap<String, String>,
}

/// Everything derived from one cleaned alignment.
#[derive(Debug, Clone)]
pub struct Build {
    pub family: String,
    pub alignment: CleanAlignment,
    pub model: PcaModel,
    pub memory: MemoryMatrix,
    pub stats: msa::AlignmentStats,
    pub beta_star: energy::BetaStarResult,
    pub beta_gen: f64,
    pub beta_ret: f64,
}

/// Build the model in memory.
pub fn build_from_alignment(family: &str, aln: CleanAlignment, params: &BuildParams) -> Result<Build> {
    let (model, memory) = build_memory(&aln, params.rho_min)?;
    let beta_star = energy::find_beta_star(&memory, params.grid)?;
    Ok(Build {
        family: family.to_string(),
        stats: msa::alignment_stats(&aln),
        beta_gen: sampler::generation_temperature(beta_star.beta_star, params.rounding),
        beta_ret: sampler::retrieval_temperature(beta_star.beta_star),
        alignment: aln,
        model,
        memory,
        beta_star,
    })
}

fn write_build(
    build: &Build,
    input: Option<InputRecord>,
    params: &BuildParams,
    out_dir: &Path,
    force: bool,
) -> Result<BuildManifest> {
    let mut out = OutDir::create(out_dir, force)?;
    let mut c = Container::new();
    build.model.to_container(&mut c);
    build.memory.to_container(&mut c);
    out.write(MODEL_FILE, &c.to_bytes())?;
    out.write(ALIGNMENT_FILE, build.alignment.to_fasta().as_bytes())?;
    out.write(
        "stats.tsv",
        tsv(msa::STATS_TSV_HEADER, &[msa::stats_tsv_row(&build.family, &build.stats)]).as_bytes(),
    )?;
    out.write(
        "beta_star.tsv",
        tsv(
            energy::BETA_STAR_TSV_HEADER,
            &[energy::beta_star_tsv_row(&build.family, build.memory.d(), &build.beta_star)],
        )
        .as_bytes(),
    )?;
    out.write("entropy_curve.tsv", energy::entropy_curve_tsv(&build.beta_star).as_bytes())?;
    let manifest = BuildManifest {
        command: "build".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        family: build.family.clone(),
        input,
        params: params.clone(),
        k: build.alignment.k(),
        l: build.alignment.l(),
        d: build.memory.d(),
        beta_star: build.beta_star.beta_star,
        beta_gen: build.beta_gen,
        beta_ret: build.beta_ret,
        mean_column_entropy: build.stats.mean_column_entropy,
        k_eff: build.stats.k_eff,
        mean_pairwise_identity: build.stats.mean_pairwise_identity,
        spectral_concentration: build.stats.spectral_concentration,
        kept_columns: build.alignment.kept_column_indices.clone(),
        files: out.files.clone(),
    };
    out.write_manifest(&manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub msa: PathBuf,
    pub format: Option<InputFormat>,
    pub family: Option<String>,
    pub params: BuildParams,
    pub out_dir: PathBuf,
    pub force: bool,
}

/// Parse, clean, encode, fit PCA, find `beta*` and persist everything.
pub fn cmd_build(opts: &BuildOptions) -> Result<BuildManifest> {
    if opts.out_dir.exists() && fs::read_dir(&opts.out_dir)?.next().is_some() && !opts.force {
        return Err(Error::Config(format!(
            "output directory {} already exists; pass --force to overwrite",
            opts.out_dir.display()
        )));
    }
    let (aln, input) = load_alignment(&opts.msa, opts.format, opts.params.clean)?;
    let family = opts.family.clone().unwrap_or_else(|| family_from_path(&opts.msa));
    let build = build_from_alignment(&family, aln, &opts.params)?;
    write_build(&build, Some(input), &opts.params, &opts.out_dir, opts.force)
}

/// Reload a build directory.
pub fn load_build(dir: &Path) -> Result<(Build, BuildManifest)> {
    let manifest: BuildManifest = read_json(&dir.join(MANIFEST))?;
    let c = Container::from_bytes(&fs::read(dir.join(MODEL_FILE))?)?;
    let raw = msa::parse_fasta(&fs::read_to_string(dir.join(ALIGNMENT_FILE))?)?;
    let alignment = CleanAlignment::from_rows(
        raw.records.iter().map(|r| r.id.clone()).collect(),
        raw.records.into_iter().map(|r| r.seq).collect(),
    )?;
    let model = PcaModel::from_container(&c)?;
    let memory = MemoryMatrix::from_container(&c, alignment.ids.clone())?;
    // The curve is cheap to recompute and not stored in binary form.
    let beta_star = energy::find_beta_star(&memory, manifest.params.grid)?;
    let build = Build {
        family: manifest.family.clone(),
        stats: msa::alignment_stats(&alignment),
        alignment,
        model,
        memory,
        beta_star,
        beta_gen: manifest.beta_gen,
        beta_ret: manifest.beta_ret,
    };
    Ok((build, manifest))
}

// ---------------------------------------------------------------- sample

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "beta")]
pub enum Regime {
    Generation,
    Retrieval,
    Explicit(f64),
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generation" | "gen" => Ok(Self::Generation),
            "retrieval" | "ret" => Ok(Self::Retrieval),
            other => other
                .parse::<f64>()
                .map(Self::Explicit)
                .map_err(|_| Error::Config(format!("unknown regime '{other}'"))),
        }
    }
}

impl Regime {
    pub fn beta(&self, build: &Build) -> f64 {
        match *self {
            Regime::Generation => build.beta_gen,
            Regime::Retrieval => build.beta_ret,
            Regime::Explicit(b) => b,
        }
    }
}

/// Evaluation settings shared by every command that scores a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub seed: u64,
    pub biophysics: bool,
    pub charge_model: ChargeModel,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            biophysics: false,
            charge_model: ChargeModel::WithHistidine,
        }
    }
}

impl EvalSettings {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            seed: self.seed,
            charge_model: self.charge_model,
            ..EvalOptions::default()
        }
    }
}

/// Full evaluation of a sample set against a build.
pub fn evaluate_against(build: &Build, samples: &SampleSet, eval: &EvalSettings) -> Result<EvaluationReport> {
    metrics::full_report(
        samples,
        &build.alignment,
        &build.memory,
        &eval.options(),
        eval.biophysics,
    )
}

fn write_evaluation(out: &mut OutDir, report: &EvaluationReport) -> Result<()> {
    let row = metrics::metrics_tsv_row(&report.family, &report.method, &report.metrics);
    out.write("metrics.tsv", tsv(metrics::METRICS_TSV_HEADER, &[row]).as_bytes())?;
    out.write("metrics.json", &to_json(report)?)?;
    Ok(())
}

fn states_container(samples: &SampleSet) -> Container {
    let d = samples.states.first().map_or(0, Vec::len);
    let mut c = Container::new();
    c.push(
        "states",
        DMatrix::from_fn(samples.len(), d, |i, j| samples.states[i][j]),
    );
    c.push(
        "provenance",
        DMatrix::from_fn(samples.len(), 2, |i, j| {
            let p = samples.provenance[i];
            if j == 0 {
                p.chain as f64
            } else {
                p.iteration as f64
            }
        }),
    );
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub command: String,
    pub version: String,
    pub family: String,
    pub method: String,
    pub build_manifest_sha256: String,
    pub regime: Option<Regime>,
    pub beta_star: f64,
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub config: Option<ChainConfig>,
    pub baseline: Option<BaselineConfig>,
    pub baseline_sigma: Option<f64>,
    pub eval: EvalSettings,
    pub n_samples: usize,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOptions {
    pub build_dir: PathBuf,
    pub out_dir: PathBuf,
    pub regime: Regime,
    /// Chain settings; `beta` is overwritten from the regime.
    pub chain: ChainConfig,
    pub threads: Option<usize>,
    pub eval: EvalSettings,
    pub force: bool,
}

impl SampleOptions {
    pub fn new(build_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            build_dir: build_dir.into(),
            out_dir: out_dir.into(),
            regime: Regime::Generation,
            chain: ChainConfig::default(),
            threads: None,
            eval: EvalSettings::default(),
            force: false,
        }
    }
}

/// Result of running the sampler on a build, before anything is written.
pub struct SampleRun {
    pub ensemble: sampler::Ensemble,
    pub report: EvaluationReport,
    pub config: ChainConfig,
}

pub fn sample_build(
    build: &Build,
    regime: Regime,
    chain: &ChainConfig,
    threads: Option<usize>,
    eval: &EvalSettings,
) -> Result<SampleRun> {
    let config = ChainConfig {
        beta: regime.beta(build),
        ..chain.clone()
    };
    let ensemble = sampler::run_ensemble(&build.memory, &build.model, &config, &build.family, threads)?;
    let report = evaluate_against(build, &ensemble.samples, eval)?;
    Ok(SampleRun {
        ensemble,
        report,
        config,
    })
}

fn write_sample_run(
    build: &Build,
    build_manifest_sha: String,
    run: &SampleRun,
    regime: Regime,
    eval: &EvalSettings,
    out_dir: &Path,
    force: bool,
) -> Result<SampleManifest> {
    let mut out = OutDir::create(out_dir, force)?;
    let samples = &run.ensemble.samples;
    out.write(SAMPLES_FILE, samples.to_fasta().as_bytes())?;
    out.write(STATES_FILE, &states_container(samples).to_bytes())?;
    let t = run.config.iterations;
    let chains = &run.ensemble.chains;
    let mut traces = Container::new();
    traces.push(
        "energy_traces",
        DMatrix::from_fn(chains.len(), t, |c, i| chains[c].energy_trace[i]),
    );
    traces.push_vector(
        "acceptance",
        &chains.iter().map(|c| c.acceptance_rate).collect::<Vec<_>>(),
    );
    out.write(TRACES_FILE, &traces.to_bytes())?;
    write_evaluation(&mut out, &run.report)?;
    let manifest = SampleManifest {
        command: "sample".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        family: build.family.clone(),
        method: "sa".into(),
        build_manifest_sha256: build_manifest_sha,
        regime: Some(regime),
        beta_star: build.beta_star.beta_star,
        d: build.memory.d(),
        k: build.memory.k(),
        l: build.alignment.l(),
        config: Some(run.config.clone()),
        baseline: None,
        baseline_sigma: None,
        eval: *eval,
        n_samples: samples.len(),
        files: out.files.clone(),
    };
    out.write_manifest(&manifest)?;
    Ok(manifest)
}

fn manifest_sha(dir: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(dir.join(MANIFEST))?))
}

/// Multi-chain Langevin generation from a build directory.
pub fn cmd_sample(opts: &SampleOptions) -> Result<SampleManifest> {
    let (build, _) = load_build(&opts.build_dir)?;
    let run = sample_build(&build, opts.regime, &opts.chain, opts.threads, &opts.eval)?;
    write_sample_run(
        &build,
        manifest_sha(&opts.build_dir)?,
        &run,
        opts.regime,
        &opts.eval,
        &opts.out_dir,
        opts.force,
    )
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    pub build_dir: PathBuf,
    pub fasta: PathBuf,
    pub label: Option<String>,
    pub out_dir: PathBuf,
    /// `None` reuses the seed recorded next to the FASTA, else the default.
    pub seed: Option<u64>,
    pub biophysics: bool,
    pub charge_model: ChargeModel,
    pub force: bool,
}

fn header_field(id: &str, key: &str) -> Option<usize> {
    id.split('|')
        .find_map(|f| f.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

fn header_method(id: &str) -> Option<String> {
    id.split('|')
        .find_map(|f| f.strip_prefix("method=").map(str::to_string))
}

/// States stored beside `fasta`, if they decode to exactly its sequences.
fn sibling_states(fasta: &Path, model: &PcaModel, seqs: &[Vec<u8>]) -> Option<Vec<DVector<f64>>> {
    let path = fasta.parent()?.join(STATES_FILE);
    let c = Container::from_bytes(&fs::read(path).ok()?).ok()?;
    let m = c.get("states").ok()?;
    if m.nrows() != seqs.len() || m.ncols() != model.d {
        return None;
    }
    let states: Vec<DVector<f64>> = m.row_iter().map(|r| r.transpose()).collect();
    for (s, seq) in states.iter().zip(seqs) {
        if decode(model, s).ok()? != *seq {
            return None;
        }
    }
    Some(states)
}

/// Turn an arbitrary aligned FASTA into a sample set. Provenance comes from
/// `chain=` / `iter=` header fields when present, else consecutive groups of
/// five. States come from a sibling state dump when it matches, else from
/// the (unnormalized) PCA projection of each sequence.
pub fn sample_set_from_fasta(
    build: &Build,
    fasta: &Path,
    label: Option<&str>,
) -> Result<SampleSet> {
    let raw = msa::parse_fasta(&fs::read_to_string(fasta)?)?;
    let l = build.alignment.l();
    for r in &raw.records {
        if r.seq.len() != l {
            return Err(Error::Dimension(format!(
                "record '{}' has length {} but the family has L = {l}",
                r.id,
                r.seq.len()
            )));
        }
    }
    let seqs: Vec<Vec<u8>> = raw.records.iter().map(|r| r.seq.clone()).collect();
    let provenance: Vec<Provenance> = raw
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| Provenance {
            chain: header_field(&r.id, "chain").unwrap_or(i / 5),
            iteration: header_field(&r.id, "iter").unwrap_or(i % 5),
        })
        .collect();
    let states = match sibling_states(fasta, &build.model, &seqs) {
        Some(s) => s,
        None => seqs
            .iter()
            .map(|s| build.model.project(&one_hot_sequence(s)))
            .collect::<Result<Vec<_>>>()?,
    };
    let beta = raw
        .records
        .first()
        .and_then(|r| r.id.split('|').find_map(|f| f.strip_prefix("beta=")?.parse().ok()))
        .unwrap_or(f64::NAN);
    let method = label
        .map(str::to_string)
        .or_else(|| raw.records.first().and_then(|r| header_method(&r.id)))
        .unwrap_or_else(|| "sa".to_string());
    Ok(SampleSet {
        family_id: build.family.clone(),
        method,
        beta,
        states: states.iter().map(|s| s.as_slice().to_vec()).collect(),
        sequences: seqs,
        provenance,
        config: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateManifest {
    pub command: String,
    pub version: String,
    pub family: String,
    pub method: String,
    pub fasta_sha256: String,
    pub eval: EvalSettings,
    pub n_samples: usize,
    pub files: BTreeMap<String, String>,
}

/// Score any aligned FASTA of length-`L` sequences against a build.
pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<EvaluationReport> {
    let (build, _) = load_build(&opts.build_dir)?;
    let samples = sample_set_from_fasta(&build, &opts.fasta, opts.label.as_deref())?;
    let seed = match opts.seed {
        Some(s) => s,
        None => opts
            .fasta
            .parent()
            .and_then(|p| read_json::<SampleManifest>(&p.join(MANIFEST)).ok())
            .map_or(DEFAULT_SEED, |m| m.eval.seed),
    };
    let eval = EvalSettings {
        seed,
        biophysics: opts.biophysics,
        charge_model: opts.charge_model,
    };
    let report = evaluate_against(&build, &samples, &eval)?;
    let mut out = OutDir::create(&opts.out_dir, opts.force)?;
    write_evaluation(&mut out, &report)?;
    out.write_manifest(&EvaluateManifest {
        command: "evaluate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        family: build.family.clone(),
        method: samples.method.clone(),
        fasta_sha256: sha256_hex(&fs::read(&opts.fasta)?),
        eval,
        n_samples: samples.len(),
        files: out.files.clone(),
    })?;
    Ok(report)
}

// ---------------------------------------------------------------- baseline

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOptions {
    pub build_dir: PathBuf,
    pub out_dir: PathBuf,
    pub method: BaselineMethod,
    pub seed: u64,
    pub n_samples: usize,
    /// Step size whose Langevin noise scale the Gaussian baseline matches.
    pub alpha: f64,
    /// Overrides the default noise scale of the Gaussian and consensus
    /// baselines.
    pub sigma: Option<f64>,
    pub eval: EvalSettings,
    pub force: bool,
}

impl BaselineOptions {
    pub fn new(build_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, method: BaselineMethod) -> Self {
        Self {
            build_dir: build_dir.into(),
            out_dir: out_dir.into(),
            method,
            seed: DEFAULT_SEED,
            n_samples: 150,
            alpha: 0.01,
            sigma: None,
            eval: EvalSettings::default(),
            force: false,
        }
    }
}

/// Generate baseline samples; returns the set and the noise scale used.
pub fn run_baseline(build: &Build, opts: &BaselineOptions) -> Result<(SampleSet, Option<f64>)> {
    let cfg = BaselineConfig {
        n_samples: opts.n_samples,
        group_size: 5,
        seed: opts.seed,
        beta: build.beta_gen,
    };
    let fam = &build.family;
    Ok(match opts.method {
        BaselineMethod::Bootstrap => (baselines::bootstrap_replay(&build.memory, &build.model, fam, &cfg)?, None),
        BaselineMethod::Gaussian => {
            let sigma = opts
                .sigma
                .unwrap_or_else(|| baselines::matched_noise_scale(opts.alpha, build.beta_gen));
            (
                baselines::gaussian_perturbation(&build.memory, &build.model, fam, &cfg, sigma)?,
                Some(sigma),
            )
        }
        BaselineMethod::Convex => (baselines::convex_combination(&build.memory, &build.model, fam, &cfg)?.0, None),
        BaselineMethod::ConsensusNoise => {
            let sigma = match opts.sigma {
                Some(s) => s,
                None => baselines::centroid_spread(&build.alignment, &build.model)?,
            };
            (
                baselines::consensus_with_noise(&build.alignment, &build.model, fam, &cfg, Some(sigma))?,
                Some(sigma),
            )
        }
    })
}

pub fn cmd_baseline(opts: &BaselineOptions) -> Result<SampleManifest> {
    let (build, _) = load_build(&opts.build_dir)?;
    let (samples, sigma) = run_baseline(&build, opts)?;
    let eval = EvalSettings {
        seed: opts.seed,
        ..opts.eval
    };
    let report = evaluate_against(&build, &samples, &eval)?;
    let mut out = OutDir::create(&opts.out_dir, opts.force)?;
    out.write(SAMPLES_FILE, samples.to_fasta().as_bytes())?;
    out.write(STATES_FILE, &states_container(&samples).to_bytes())?;
    write_evaluation(&mut out, &report)?;
    let manifest = SampleManifest {
        command: "baseline".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        family: build.family.clone(),
        method: samples.method.clone(),
        build_manifest_sha256: manifest_sha(&opts.build_dir)?,
        regime: None,
        beta_star: build.beta_star.beta_star,
        d: build.memory.d(),
        k: build.memory.k(),
        l: build.alignment.l(),
        config: None,
        baseline: Some(BaselineConfig {
            n_samples: opts.n_samples,
            group_size: 5,
            seed: opts.seed,
            beta: build.beta_gen,
        }),
        baseline_sigma: sigma,
        eval,
        n_samples: samples.len(),
        files: out.files.clone(),
    };
    out.write_manifest(&manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- control-permute

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub msa: PathBuf,
    pub format: Option<InputFormat>,
    pub family: Option<String>,
    pub build: BuildParams,
    pub chain: ChainConfig,
    pub threads: Option<usize>,
    pub eval: EvalSettings,
    pub out_dir: PathBuf,
    pub force: bool,
}

impl PipelineOptions {
    pub fn new(msa: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            msa: msa.into(),
            format: None,
            family: None,
            build: BuildParams::default(),
            chain: ChainConfig::default(),
            threads: None,
            eval: EvalSettings::default(),
            out_dir: out_dir.into(),
            force: false,
        }
    }
}

pub const COMPARISON_TSV_HEADER: &str =
    "family\talignment\td\tbeta_star\tbeta_gen\tkl\tnovelty\tseqid\tdiversity\tmi_pearson\tmi_spearman\tmi_top50";

fn comparison_row(label: &str, build: &Build, r: &EvaluationReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
    let m = &r.metrics;
    format!(
        "{}\t{label}\t{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
        build.family,
        build.memory.d(),
        build.beta_star.beta_star,
        build.beta_gen,
        m.kl_aa,
        m.novelty_mean,
        m.seq_identity_mean,
        opt(m.diversity_mean),
        opt(r.mi.and_then(|x| x.pearson_r)),
        opt(r.mi.and_then(|x| x.spearman_rho)),
        opt(r.mi.map(|x| x.top50_overlap)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlManifest {
    pub command: String,
    pub version: String,
    pub family: String,
    pub input: InputRecord,
    pub permutation_seed: u64,
    pub build: BuildParams,
    pub chain: ChainConfig,
    pub eval: EvalSettings,
    pub files: BTreeMap<String, String>,
}

/// Run build + sample + evaluate on the real alignment and on a
/// column-permuted copy, writing both runs and a side-by-side table.
pub fn cmd_control_permute(opts: &PipelineOptions) -> Result<ControlManifest> {
    let mut out = OutDir::create(&opts.out_dir, opts.force)?;
    let (aln, input) = load_alignment(&opts.msa, opts.format, opts.build.clean)?;
    let family = opts.family.clone().unwrap_or_else(|| family_from_path(&opts.msa));
    let permuted = msa::permute_columns(&aln, opts.chain.master_seed);
    for c in 0..aln.l() {
        let mut a: Vec<u8> = aln.column(c).collect();
        let mut b: Vec<u8> = permuted.column(c).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Numeric(format!("permutation changed the counts of column {c}")));
        }
    }
    let mut rows = Vec::new();
    for (label, alignment) in [("real", aln), ("permuted", permuted)] {
        let build = build_from_alignment(&family, alignment, &opts.build)?;
        let dir = opts.out_dir.join(label);
        write_build(&build, Some(input.clone()), &opts.build, &dir.join("build"), opts.force)?;
        let run = sample_build(&build, Regime::Generation, &opts.chain, opts.threads, &opts.eval)?;
        let sha = manifest_sha(&dir.join("build"))?;
        write_sample_run(&build, sha, &run, Regime::Generation, &opts.eval, &dir.join("sample"), opts.force)?;
        rows.push(comparison_row(label, &build, &run.report));
    }
    out.write("comparison.tsv", tsv(COMPARISON_TSV_HEADER, &rows).as_bytes())?;
    let manifest = ControlManifest {
        command: "control-permute".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        family,
        input,
        permutation_seed: opts.chain.master_seed,
        build: opts.build.clone(),
        chain: opts.chain.clone(),
        eval: opts.eval,
        files: out.files.clone(),
    };
    out.write_manifest(&manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- scaling

pub const SCALING_TSV_HEADER: &str =
    "family\tsize\trepeat\tk\td\tbeta_star\tbeta_gen\tkl\tnovelty\tseqid\tdiversity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingManifest {
    pub command: String,
    pub version: String,
    pub family: String,
    pub input: InputRecord,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub build: BuildParams,
    pub chain: ChainConfig,
    pub eval: EvalSettings,
    pub files: BTreeMap<String, String>,
}

/// Rows kept for `(size, repeat)`: a seeded subset without replacement,
/// in original order.
pub fn scaling_subset(k: usize, size: usize, repeat: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((size as u64) << 16) | repeat as u64);
    let mut idx = index::sample(&mut rng, k, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Rebuild and resample on random subsets of the family for each size.
pub fn cmd_scaling(opts: &PipelineOptions, sizes: &[usize], repeats: usize) -> Result<ScalingManifest> {
    let (aln, input) = load_alignment(&opts.msa, opts.format, opts.build.clean)?;
    if let Some(&bad) = sizes.iter().find(|&&s| s > aln.k() || s < 2) {
        return Err(Error::Config(format!(
            "subset size {bad} outside [2, K = {}]",
            aln.k()
        )));
    }
    if repeats == 0 {
        return Err(Error::Config("need at least one repeat".into()));
    }
    let mut out = OutDir::create(&opts.out_dir, opts.force)?;
    let family = opts.family.clone().unwrap_or_else(|| family_from_path(&opts.msa));
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
    let mut rows = Vec::new();
    for &size in sizes {
        for rep in 0..repeats {
            let idx = scaling_subset(aln.k(), size, rep, opts.chain.master_seed);
            let sub = aln.select_rows(&idx)?;
            let build = build_from_alignment(&family, sub, &opts.build)?;
            let run = sample_build(&build, Regime::Generation, &opts.chain, opts.threads, &opts.eval)?;
            let m = &run.report.metrics;
            rows.push(format!(
                "{family}\t{size}\t{rep}\t{}\t{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                build.memory.k(),
                build.memory.d(),
                build.beta_star.beta_star,
                build.beta_gen,
                m.kl_aa,
                m.novelty_mean,
                m.seq_identity_mean,
                opt(m.diversity_mean)
            ));
        }
    }
    out.write("scaling.tsv", tsv(SCALING_TSV_HEADER, &rows).as_bytes())?;
    let manifest = ScalingManifest {
        command: "scaling".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        family,
        input,
        sizes: sizes.to_vec(),
        repeats,
        build: opts.build.clone(),
        chain: opts.chain.clone(),
        eval: opts.eval,
        files: out.files.clone(),
    };
    out.write_manifest(&manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- diagnose

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseManifest {
    pub command: String,
    pub version: String,
    pub family: String,
    pub kernel: String,
    pub sample_manifest_sha256: String,
    pub summary: diagnostics::DiagnosticsSummary,
    pub files: BTreeMap<String, String>,
}

/// Energy-trace diagnostics for a sample directory.
pub fn cmd_diagnose(sample_dir: &Path, out_dir: &Path, force: bool) -> Result<DiagnoseManifest> {
    let manifest: SampleManifest = read_json(&sample_dir.join(MANIFEST))?;
    let cfg = manifest
        .config
        .clone()
        .ok_or_else(|| Error::Artifact("sample manifest has no chain configuration".into()))?;
    let traces = Container::from_bytes(
        &fs::read(sample_dir.join(TRACES_FILE))
            .map_err(|e| Error::Artifact(format!("missing energy traces: {e}")))?,
    )?;
    let energy = traces.get("energy_traces")?;
    let acceptance = traces.get_vector("acceptance")?;
    if acceptance.len() != energy.nrows() {
        return Err(Error::Artifact("trace and acceptance counts differ".into()));
    }
    let chains = (0..energy.nrows())
        .map(|c| {
            let trace: Vec<f64> = energy.row(c).iter().copied().collect();
            diagnostics::diagnose_chain(c, &trace, cfg.burn_in, acceptance[c])
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = diagnostics::summarize(&chains, cfg.burn_in)?;
    let kernel = cfg.kernel.as_str();
    let mut out = OutDir::create(out_dir, force)?;
    out.write(
        "diagnostics.tsv",
        tsv(
            diagnostics::DIAGNOSTICS_TSV_HEADER,
            &[diagnostics::diagnostics_tsv_row(&manifest.family, kernel, &summary)],
        )
        .as_bytes(),
    )?;
    let rows: Vec<String> = chains
        .iter()
        .map(|c| diagnostics::chain_diagnostics_tsv_row(&manifest.family, kernel, c))
        .collect();
    out.write(
        "diagnostics_chains.tsv",
        tsv(diagnostics::CHAIN_DIAGNOSTICS_TSV_HEADER, &rows).as_bytes(),
    )?;
    let m = DiagnoseManifest {
        command: "diagnose".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        family: manifest.family,
        kernel: kernel.into(),
        sample_manifest_sha256: manifest_sha(sample_dir)?,
        summary,
        files: out.files.clone(),
    };
    out.write_manifest(&m)?;
    Ok(m)
}

// ---------------------------------------------------------------- betafit

#[derive(Debug, Clone, PartialEq)]
pub enum BetaSource {
    Reference,
    Dataset(PathBuf),
    Builds(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetafitOptions {
    pub source: BetaSource,
    pub bootstrap: usize,
    pub seed: u64,
    pub loocv: bool,
    pub tau_star: Vec<usize>,
    pub tau_realizations: usize,
    pub out_dir: PathBuf,
    pub force: bool,
}

impl BetafitOptions {
    pub fn new(source: BetaSource, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            source,
            bootstrap: 10_000,
            seed: DEFAULT_SEED,
            loocv: false,
            tau_star: Vec::new(),
            tau_realizations: 500,
            out_dir: out_dir.into(),
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetafitManifest {
    pub command: String,
    pub version: String,
    pub n_points: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub loocv: bool,
    pub tau_star: Vec<(usize, f64)>,
    pub report: betafit::BetaFitReport,
    pub files: BTreeMap<String, String>,
}

pub fn dataset_from_builds(dirs: &[PathBuf]) -> Result<BetaDataset> {
    let points = dirs
        .iter()
        .map(|d| {
            let m: BuildManifest = read_json(&d.join(MANIFEST))?;
            Ok(BetaPoint {
                family: m.family,
                d: m.d,
                beta_star: m.beta_star,
                h_col: Some(m.mean_column_entropy),
                k_eff: Some(m.k_eff),
                spectral_concentration: Some(m.spectral_concentration),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaDataset { points })
}

pub fn cmd_betafit(opts: &BetafitOptions) -> Result<BetafitManifest> {
    let data = match &opts.source {
        BetaSource::Reference => BetaDataset::reference(),
        BetaSource::Dataset(p) => BetaDataset::from_tsv(&fs::read_to_string(p)?)?,
        BetaSource::Builds(dirs) => dataset_from_builds(dirs)?,
    };
    let report = betafit::full_report(&data, opts.bootstrap, opts.seed, opts.loocv)?;
    let tau_star = opts
        .tau_star
        .iter()
        .map(|&k| Ok((k, betafit::tau_star_gaussian(k, opts.tau_realizations, opts.seed)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = OutDir::create(&opts.out_dir, opts.force)?;
    out.write("dataset.tsv", data.to_tsv().as_bytes())?;
    let f = &report.fit;
    let mut fit_row = format!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        f.n, f.intercept, f.intercept_se, f.slope, f.slope_se, f.r2, f.rmse
    );
    if let Some(l) = &f.loocv {
        fit_row.push_str(&format!("\t{:.6}\t{:.6}", l.r2, l.rmse));
    } else {
        fit_row.push_str("\tNA\tNA");
    }
    out.write(
        "fit.tsv",
        tsv("n\tintercept\tintercept_se\tslope\tslope_se\tr2\trmse\tloocv_r2\tloocv_rmse", &[fit_row]).as_bytes(),
    )?;
    if let Some(l) = &f.loocv {
        out.write("loocv.tsv", betafit::loocv_tsv(l).as_bytes())?;
    }
    if !tau_star.is_empty() {
        let rows: Vec<String> = tau_star.iter().map(|(k, t)| format!("{k}\t{t:.6}")).collect();
        out.write("tau_star.tsv", tsv("k\ttau_star", &rows).as_bytes())?;
    }
    out.write("report.json", &to_json(&report)?)?;
    let m = BetafitManifest {
        command: "betafit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        n_points: data.len(),
        bootstrap: opts.bootstrap,
        seed: opts.seed,
        loocv: opts.loocv,
        tau_star,
        report,
        files: out.files.clone(),
    };
    out.write_manifest(&m)?;
    Ok(m)
}

/// Default chain settings with an init override by name.
pub fn parse_init(name: &str, sigma: f64) -> Result<Init> {
    match name {
        "stored" | "near-pattern" | "near_pattern" => Ok(Init::NearPattern { sigma }),
        "random" | "sphere" | "random-sphere" => Ok(Init::RandomSphere),
        other => Err(Error::Config(format!("unknown init '{other}'"))),
    }
}

pub fn parse_kernel(name: &str) -> Result<Kernel> {
    match name {
        "ula" => Ok(Kernel::Ula),
        "mala" => Ok(Kernel::Mala),
        other => Err(Error::Config(format!("unknown kernel '{other}'"))),
    }
}

pub fn parse_charge_model(name: &str) -> Result<ChargeModel> {
    match name {
        "with-his" | "with_histidine" | "his" => Ok(ChargeModel::WithHistidine),
        "no-his" | "without_histidine" => Ok(ChargeModel::WithoutHistidine),
        other => Err(Error::Config(format!("unknown charge model '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_precedence() {
        let c = ConfigFile::parse("rho-min = 0.9 # comment\n\nseed=7\n").unwrap();
        assert_eq!(c.resolve(Some(0.8), "rho_min", 0.95).unwrap(), 0.8);
        assert_eq!(c.resolve(None, "rho_min", 0.95).unwrap(), 0.9);
        assert_eq!(c.resolve(None, "alpha", 0.01).unwrap(), 0.01);
        assert_eq!(c.resolve::<u64>(None, "seed", 42).unwrap(), 7);
        assert!(ConfigFile::parse("novalue\n").is_err());
        assert!(c.get::<u64>("rho_min").is_err());
    }

    #[test]
    fn headers() {
        let id = "fam|chain=3|iter=2600|beta=8|method=convex";
        assert_eq!(header_field(id, "chain"), Some(3));
        assert_eq!(header_field(id, "iter"), Some(2600));
        assert_eq!(header_method(id).as_deref(), Some("convex"));
        assert_eq!(header_field("plain", "chain"), None);
    }

    #[test]
    fn format_detection() {
        assert_eq!(detect_format(Path::new("x.sto"), ""), InputFormat::Stockholm);
        assert_eq!(detect_format(Path::new("x"), "# STOCKHOLM 1.0\n"), InputFormat::Stockholm);
        assert_eq!(detect_format(Path::new("x"), ">a\nAC\n"), InputFormat::Fasta);
    }

    #[test]
    fn subsets_sorted_and_distinct() {
        let s = scaling_subset(50, 20, 1, 42);
        assert_eq!(s.len(), 20);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(scaling_subset(10, 10, 0, 1), (0..10).collect::<Vec<_>>());
        assert_ne!(scaling_subset(50, 20, 0, 42), s);
    }

    #[test]
    fn regimes() {
        assert_eq!("generation".parse::<Regime>().unwrap(), Regime::Generation);
        assert_eq!("12.5".parse::<Regime>().unwrap(), Regime::Explicit(12.5));
        assert!("hot".parse::<Regime>().is_err());
    }
}
