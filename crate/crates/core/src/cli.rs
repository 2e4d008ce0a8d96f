//! The `zshub` command line.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 verification failure.
//! Reports start with a `# config_digest <hex>` line (TSV) or carry a
//! `config_digest` field (JSON); the digest covers every resolved parameter
//! and the SHA-256 of every input file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{self, SyntheticConfig, DEFAULT_SIG_DIGITS};
use crate::error::{Error, Result};
use crate::eval::{self, Averaging, EvalReport, ExperimentConfig, LambdaChoice, Measure, MethodSpec};
use crate::hubness::HubnessReport;
use crate::neighbors::{self, DEFAULT_NICDM_K};
use crate::rng;
use crate::theory::{self, Check, VerifyConfig};

#[derive(Debug, Parser)]
#[command(name = "zshub", version, about = "Ridge-regression zero-shot learning and hubness diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset and a train/test manifest.
    Synth(SynthArgs),
    /// Fit, rank and evaluate one or more methods.
    Experiment(ExperimentArgs),
    /// Check the closed-form results against simulation.
    Verify(VerifyArgs),
    /// N_k counts and skewness for raw query and target files.
    Hubness(HubnessArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Tsv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingArg {
    Micro,
    Macro,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::Macro => Averaging::Macro,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of pairs.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Latent dimension.
    #[arg(long, default_value_t = 1000)]
    pub latent: usize,
    /// Shorthand for equal source and target dimensions.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub source_dim: Option<usize>,
    #[arg(long)]
    pub target_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of pairs listed as train in the manifest.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SIG_DIGITS)]
    pub sig_digits: usize,
    /// Output directory; receives source.vec, target.vec, manifest.tsv, synth.json.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Source embedding file.
    #[arg(long)]
    pub source: PathBuf,
    /// Target embedding file.
    #[arg(long)]
    pub target: PathBuf,
    /// Lexicon of "source target" pairs; defaults to tokens present in both files.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Keep repeated lexicon entries.
    #[arg(long)]
    pub keep_duplicates: bool,
    /// Train/test manifest; without it the pairs are split at random.
    #[arg(long, conflicts_with = "train_fraction")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Seed for the random split and the cross-validation folds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated methods: ridge-xy, ridge-yx, optionally suffixed +nicdm.
    #[arg(long, value_delimiter = ',', default_value = "ridge-xy,ridge-yx")]
    pub methods: Vec<String>,
    /// Add a NICDM variant of every method.
    #[arg(long)]
    pub nicdm: bool,
    #[arg(long, default_value_t = DEFAULT_NICDM_K)]
    pub nicdm_k: usize,
    /// Fixed λ; skips cross-validation.
    #[arg(long, conflicts_with = "grid")]
    pub lambda: Option<f64>,
    /// Comma-separated λ grid for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = eval::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Comma-separated k values for Acc_k and N_k.
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
    pub averaging: AveragingArg,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Smaller shrinkage and two-configuration workloads.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Offset added to every closed-form Δ.
    #[arg(long, hide = true, default_value_t = 0.0)]
    pub corrupt_closed_form: f64,
}

#[derive(Debug, Args)]
pub struct HubnessArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    pub k: Vec<usize>,
    /// Rank by NICDM instead of Euclidean distance.
    #[arg(long)]
    pub nicdm: bool,
    #[arg(long, default_value_t = DEFAULT_NICDM_K)]
    pub nicdm_k: usize,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::VerificationFailed => 2,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|()| Outcome::Success),
        Command::Experiment(a) => cmd_experiment(&a).map(|()| Outcome::Success),
        Command::Verify(a) => cmd_verify(&a),
        Command::Hubness(a) => cmd_hubness(&a).map(|()| Outcome::Success),
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Shortest round-trip formatting; `NA` for missing values.
fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x}"))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        num_pairs: a.n,
        latent_dim: a.latent,
        source_dim: a.source_dim.or(a.dim).unwrap_or(100),
        target_dim: a.target_dim.or(a.dim).unwrap_or(100),
        seed: a.seed,
    };
    cfg.validate()?;
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {}",
            a.train_fraction
        )));
    }
    let ds = data::generate_synthetic(&cfg)?;
    let (train, test) = data::split(&ds, a.train_fraction, rng::derive_seed(a.seed, 1))?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let src = data::Embeddings::new(ds.source_ids().to_vec(), ds.source().clone())?;
    let tgt = data::Embeddings::new(ds.target_ids().to_vec(), ds.target().clone())?;
    data::save_embeddings(&a.out.join("source.vec"), &src, a.sig_digits)?;
    data::save_embeddings(&a.out.join("target.vec"), &tgt, a.sig_digits)?;
    let manifest = a.out.join("manifest.tsv");
    let mut buf = Vec::new();
    data::write_manifest(&mut buf, &train, &test).map_err(|e| Error::io(&manifest, e))?;
    fs::write(&manifest, buf).map_err(|e| Error::io(&manifest, e))?;

    #[derive(Serialize)]
    struct SynthRecord<'a> {
        config_digest: String,
        args: &'a SynthArgs,
        resolved: &'a SyntheticConfig,
        num_train: usize,
        num_test: usize,
    }
    let record = SynthRecord {
        config_digest: eval::digest_json(&(a, &cfg))?,
        args: a,
        resolved: &cfg,
        num_train: train.len(),
        num_test: test.len(),
    };
    let path = a.out.join("synth.json");
    fs::write(&path, to_json(&record)?).map_err(|e| Error::io(&path, e))
}

/// Methods in the order given; `--nicdm` inserts a NICDM variant after each.
fn resolve_methods(names: &[String], nicdm: bool) -> Result<Vec<MethodSpec>> {
    let mut out: Vec<MethodSpec> = Vec::new();
    for name in names {
        let m: MethodSpec = name.parse()?;
        let mut push = |m| {
            if !out.contains(&m) {
                out.push(m);
            }
        };
        push(m);
        if nicdm && m.measure == Measure::Euclidean {
            push(m.with_nicdm());
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    Ok(out)
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum SplitSpec {
    Manifest,
    Random { train_fraction: f64, seed: u64 },
}

#[derive(Serialize)]
struct ResolvedExperiment<'a> {
    inputs: BTreeMap<&'static str, String>,
    split: SplitSpec,
    keep_duplicates: bool,
    methods: Vec<String>,
    eval: &'a ExperimentConfig,
    data_digest: &'a str,
}

#[derive(Serialize)]
struct ExperimentRecord<'a> {
    config_digest: &'a str,
    reports: &'a [EvalReport],
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let methods = resolve_methods(&a.methods, a.nicdm)?;
    let src = data::load_embeddings(&a.source, None)?;
    let tgt = data::load_embeddings(&a.target, None)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("source", file_digest(&a.source)?);
    inputs.insert("target", file_digest(&a.target)?);

    let lexicon = match &a.pairs {
        Some(p) => {
            inputs.insert("pairs", file_digest(p)?);
            data::load_lexicon(p)?
        }
        None => data::shared_token_lexicon(&src, &tgt),
    };
    let pairing = data::pair_by_lexicon(&src, &tgt, &lexicon, !a.keep_duplicates)?;
    if pairing.skipped > 0 || pairing.duplicates_removed > 0 {
        eprintln!(
            "pairing: {} pairs, {} skipped, {} duplicates removed",
            pairing.dataset.len(),
            pairing.skipped,
            pairing.duplicates_removed
        );
    }
    let ds = pairing.dataset;

    let (split, (train, test)) = match &a.manifest {
        Some(p) => {
            inputs.insert("manifest", file_digest(p)?);
            (SplitSpec::Manifest, data::split_by_manifest(&ds, &data::read_manifest(p)?)?)
        }
        None => {
            let f = a.train_fraction.unwrap_or(0.8);
            (
                SplitSpec::Random {
                    train_fraction: f,
                    seed: a.seed,
                },
                data::split(&ds, f, a.seed)?,
            )
        }
    };

    let cfg = ExperimentConfig {
        lambda: match a.lambda {
            Some(l) => LambdaChoice::Fixed(l),
            None => LambdaChoice::CrossValidate {
                grid: a.grid.clone().unwrap_or_else(eval::default_lambda_grid),
                folds: a.folds,
                seed: a.seed,
            },
        },
        k_list: a.k.clone(),
        nicdm_k: a.nicdm_k,
        averaging: a.averaging.into(),
    };
    let mut reports = eval::run_experiment(&train, &test, &methods, &cfg)?;
    let digest = eval::digest_json(&ResolvedExperiment {
        inputs,
        split,
        keep_duplicates: a.keep_duplicates,
        methods: methods.iter().map(ToString::to_string).collect(),
        eval: &cfg,
        data_digest: &reports[0].config_digest,
    })?;
    for r in &mut reports {
        r.config_digest.clone_from(&digest);
    }

    let text = match a.format {
        Format::Json => to_json(&ExperimentRecord {
            config_digest: &digest,
            reports: &reports,
        })?,
        Format::Tsv => experiment_tsv(&digest, &reports, &cfg.k_list),
    };
    emit(a.out.as_deref(), &text)
}

/// Columns: method, MAP, Acc_k for each k, N{k}_skew for each k, lambda.
pub fn experiment_tsv(digest: &str, reports: &[EvalReport], k_list: &[usize]) -> String {
    let mut s = format!("# config_digest {digest}\nmethod\tMAP");
    for k in k_list {
        let _ = write!(s, "\tAcc_{k}");
    }
    for k in k_list {
        let _ = write!(s, "\tN{k}_skew");
    }
    s.push_str("\tlambda\n");
    for r in reports {
        let _ = write!(s, "{}\t{}", r.method, num(Some(r.map)));
        for k in k_list {
            let _ = write!(s, "\t{}", num(r.acc.get(k).copied()));
        }
        for k in k_list {
            let _ = write!(s, "\t{}", num(r.nk_skewness.get(k).copied().flatten()));
        }
        let _ = writeln!(s, "\t{}", num(Some(r.lambda)));
    }
    s
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<Outcome> {
    let mut cfg = if a.quick {
        VerifyConfig::quick()
    } else {
        VerifyConfig::default()
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.closed_form_offset = a.corrupt_closed_form;
    let digest = eval::digest_json(&cfg)?;
    let checks = theory::run_verification(&cfg)?;
    let failed = checks.iter().filter(|c| !c.passed).count();

    #[derive(Serialize)]
    struct VerifyRecord<'a> {
        config_digest: &'a str,
        config: &'a VerifyConfig,
        passed: bool,
        checks: &'a [Check],
    }
    let text = match a.format {
        Format::Json => to_json(&VerifyRecord {
            config_digest: &digest,
            config: &cfg,
            passed: failed == 0,
            checks: &checks,
        })?,
        Format::Tsv => {
            let mut s = format!("# config_digest {digest}\ncheck\tparams\testimate\treference\ttolerance\tresult\n");
            for c in &checks {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    c.name,
                    c.params,
                    c.estimate,
                    c.reference,
                    c.tolerance,
                    if c.passed { "PASS" } else { "FAIL" }
                );
            }
            s
        }
    };
    emit(a.out.as_deref(), &text)?;
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", checks.len());
        Ok(Outcome::VerificationFailed)
    } else {
        Ok(Outcome::Success)
    }
}

pub fn cmd_hubness(a: &HubnessArgs) -> Result<()> {
    let q = data::load_embeddings(&a.queries, None)?;
    let t = data::load_embeddings(&a.targets, None)?;
    let vocab = t.ids.len();
    if a.k.is_empty() {
        return Err(Error::invalid("no k values requested"));
    }
    if let Some(&k) = a.k.iter().find(|&&k| k == 0 || k >= vocab) {
        return Err(Error::KOutOfRange {
            k,
            max: vocab.saturating_sub(1),
        });
    }
    let mut dist = neighbors::pairwise_euclidean(&q.vectors, &t.vectors)?;
    if a.nicdm {
        dist = neighbors::nicdm(&dist, a.nicdm_k)?;
    }
    let reports = a
        .k
        .iter()
        .map(|&k| HubnessReport::from_dissimilarities(&dist, k))
        .collect::<Result<Vec<_>>>()?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        queries: String,
        targets: String,
        k: &'a [usize],
        nicdm_k: Option<usize>,
    }
    let digest = eval::digest_json(&Resolved {
        queries: file_digest(&a.queries)?,
        targets: file_digest(&a.targets)?,
        k: &a.k,
        nicdm_k: a.nicdm.then_some(a.nicdm_k),
    })?;

    #[derive(Serialize)]
    struct HubnessRecord<'a> {
        config_digest: &'a str,
        target_ids: &'a [String],
        reports: &'a [HubnessReport],
    }
    let text = match a.format {
        Format::Json => to_json(&HubnessRecord {
            config_digest: &digest,
            target_ids: &t.ids,
            reports: &reports,
        })?,
        Format::Tsv => {
            let mut s = format!("# config_digest {digest}\nk\tskewness\tcounts\n");
            for r in &reports {
                let counts: Vec<String> = r.counts.iter().map(ToString::to_string).collect();
                let _ = writeln!(s, "{}\t{}\t{}", r.k, r.skewness, counts.join(","));
            }
            s
        }
    };
    emit(a.out.as_deref(), &text)
}
