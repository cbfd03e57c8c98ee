//! The `addrtag` command line. [`run_cli`] is the whole program so tests can
//! drive it in-process; `main` only wires the standard streams.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime or model error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use addrtag::country::CountrySet;
use addrtag::data::{
    build_incomplete_dataset, by_country, dataset_hash, load_dataset, reorder_probe_assigned, write_dataset,
    IncompletePolicy, Manifest, ProbePattern,
};
use addrtag::embeddings::{EmbeddingProvider, ProviderKind};
use addrtag::evaluation::{
    fmt2, mean_accuracy, mean_row, random_baseline, reports_from_csv, reports_to_csv, reports_to_text, run_suite,
    EvalSuite, SuiteKind,
};
use addrtag::tagger::{greedy_parse, Architecture, DecoderKind};
use addrtag::training::{multi_seed_train, Checkpoint, TrainConfig};
use addrtag::{Error, Tag, TagVocabulary};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Dataset root used when `--data-dir` is absent.
pub const DATA_DIR_ENV: &str = "ADDRTAG_DATA_DIR";

const DEFAULT_OUT_DIR: &str = "addrtag-out";

#[derive(Debug, Parser)]
#[command(name = "addrtag", version, about = "Multinational address tagging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model per seed and save checkpoints.
    Train(TrainArgs),
    /// Evaluate checkpoints on a holdout, zero-shot or incomplete suite.
    Eval(EvalArgs),
    /// Tag addresses with a trained checkpoint.
    Parse(ParseArgs),
    /// Build an incomplete-address dataset from complete records.
    MakeIncomplete(MakeIncompleteArgs),
    /// Build a reordered probe set, optionally scoring a checkpoint on it.
    ProbeReorder(ProbeReorderArgs),
    /// Render report CSV files as a table with a mean row.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct EmbeddingArgs {
    /// Embedding provider.
    #[arg(long, value_parser = ["word_subword", "bpe_combined", "fallback"])]
    embeddings: Option<String>,
    /// Pretrained vector file (word vectors, or byte-pair unit vectors).
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Byte-pair merge table; the bundled table is used when absent.
    #[arg(long)]
    merges: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = ["base", "attention"])]
    variant: Option<String>,
    /// Add the domain discriminator and train with domain pairing.
    #[arg(long)]
    adversarial: bool,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[arg(long)]
    grl_lambda: Option<f64>,
    /// Training seeds, repeated or comma separated.
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    attention_dim: Option<usize>,
    #[arg(long)]
    tag_dim: Option<usize>,
    #[arg(long, value_parser = ["learned", "onehot"])]
    tag_repr: Option<String>,
    /// Stop once validation accuracy reaches this fraction.
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Training records; defaults to `<data-dir>/train.jsonl`.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation records; defaults to `<data-dir>/val.jsonl`.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
    /// Key-value file overriding defaults; a previous run manifest works too.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_parser = ["holdout", "zero_shot", "incomplete"])]
    suite: String,
    /// Country codes or names, comma separated. Defaults to every eligible
    /// country with a dataset file.
    #[arg(long, value_delimiter = ',')]
    countries: Vec<String>,
    /// Checkpoint, one per seed.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Directory holding `<CC>.jsonl`; defaults to `<data-dir>/<suite>`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ParseArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    /// Whitespace-tokenized addresses.
    #[arg(required = true)]
    addresses: Vec<String>,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct MakeIncompleteArgs {
    /// Complete records to draw from.
    #[arg(long)]
    input: PathBuf,
    /// Incomplete training records per country.
    #[arg(long)]
    train_n: usize,
    /// Incomplete holdout records per country.
    #[arg(long)]
    holdout_n: usize,
    #[arg(long, default_value_t = 1)]
    min_dropped: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ProbeReorderArgs {
    #[arg(long)]
    input: PathBuf,
    /// Tag-class order, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pattern_a: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pattern_b: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score this checkpoint on the probe.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    embeddings: EmbeddingArgs,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report CSV files; rows are concatenated.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_parser = ["text", "csv"], default_value = "text")]
    format: String,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Output(PathBuf, std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(e) if e.is_data_error() => EXIT_DATA,
            Failure::Core(_) | Failure::Output(..) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => format!("usage error: {m}"),
            Failure::Core(e) if e.is_data_error() => format!("data error: {e}"),
            Failure::Core(e) => format!("error: {e}"),
            Failure::Output(p, e) => format!("error: cannot write {}: {e}", p.display()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Run one command. `argv[0]` is the program name.
pub fn run_cli(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a, out, err),
        Command::Eval(a) => eval(a, out),
        Command::Parse(a) => parse(a, out),
        Command::MakeIncomplete(a) => make_incomplete(a, out),
        Command::ProbeReorder(a) => probe_reorder(a, out),
        Command::Report(a) => report(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "{}", f.message());
            f.code()
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::Output(path.to_path_buf(), e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Output(dir.to_path_buf(), e))
}

fn data_root(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

fn path_str(p: Option<&Path>) -> String {
    p.map(|p| p.display().to_string()).unwrap_or_default()
}

fn provider_kind(name: &str) -> CliResult<ProviderKind> {
    name.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn build_provider(kind: ProviderKind, vectors: Option<&Path>, merges: Option<&Path>) -> CliResult<EmbeddingProvider> {
    if kind == ProviderKind::WordSubword && vectors.is_none() {
        return Err(Failure::Usage("--embeddings word_subword needs --vectors".into()));
    }
    Ok(EmbeddingProvider::from_parts(kind, vectors, merges)?)
}

/// Provider for scoring `checkpoint`: the flag if given, otherwise the kind
/// the checkpoint was trained with.
fn provider_for(args: &EmbeddingArgs, checkpoint: &Checkpoint) -> CliResult<EmbeddingProvider> {
    let kind = match &args.embeddings {
        Some(k) => provider_kind(k)?,
        None => checkpoint.meta.provider,
    };
    if kind != checkpoint.meta.provider {
        return Err(Failure::Usage(format!(
            "checkpoint was trained with {} embeddings, not {kind}",
            checkpoint.meta.provider
        )));
    }
    build_provider(kind, args.vectors.as_deref(), args.merges.as_deref())
}

fn embedding_manifest(m: &mut Manifest, kind: ProviderKind, args: &EmbeddingArgs) {
    m.set("embeddings", kind)
        .set("vectors", path_str(args.vectors.as_deref()))
        .set("merges", path_str(args.merges.as_deref()));
}

/// Keys of a train manifest that describe the run rather than configure it.
fn is_output_key(k: &str) -> bool {
    k == "command" || k == "out_dir" || k == "config_hash" || k.starts_with("out.")
}

/// Command-level settings a config file may carry besides [`TrainConfig`] keys.
#[derive(Debug, Default)]
struct RunKeys {
    variant: Option<String>,
    adversarial: Option<bool>,
    embeddings: Option<String>,
    vectors: Option<PathBuf>,
    merges: Option<PathBuf>,
    train_data: Option<PathBuf>,
    val_data: Option<PathBuf>,
}

fn split_config(m: &Manifest) -> CliResult<(RunKeys, Manifest)> {
    let mut run = RunKeys::default();
    let mut rest = Manifest::new();
    let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
    for (k, v) in m.entries() {
        match k.as_str() {
            "variant" => run.variant = Some(v.clone()),
            "adversarial" => {
                run.adversarial = Some(
                    v.parse()
                        .map_err(|_| Failure::Usage(format!("bad value `{v}` for `adversarial`")))?,
                )
            }
            "embeddings" => run.embeddings = Some(v.clone()),
            "vectors" => run.vectors = path(v),
            "merges" => run.merges = path(v),
            "train_data" => run.train_data = path(v),
            "val_data" => run.val_data = path(v),
            k if is_output_key(k) => {}
            _ => {
                rest.set(k, v);
            }
        }
    }
    Ok((run, rest))
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let (run, overrides) = match &a.config {
        Some(p) => split_config(&Manifest::load(p)?)?,
        None => (RunKeys::default(), Manifest::new()),
    };
    let mut config = TrainConfig::default();
    config
        .apply_manifest(&overrides)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let mut flags = Manifest::new();
    if !a.seeds.is_empty() {
        flags.set("seeds", a.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    }
    if let Some(v) = a.epochs {
        flags.set("epochs", v);
    }
    if let Some(v) = a.batch_size {
        flags.set("batch_size", v);
    }
    if let Some(v) = a.lr {
        flags.set("lr0", v);
    }
    if let Some(v) = a.grl_lambda {
        flags.set("grl_lambda", v);
    }
    if let Some(v) = a.hidden_dim {
        flags.set("hidden_dim", v);
    }
    if let Some(v) = a.attention_dim {
        flags.set("attention_dim", v);
    }
    if let Some(v) = &a.tag_repr {
        flags.set("tag_repr", v);
    }
    if let Some(v) = a.tag_dim {
        flags.set("tag_dim", v);
    }
    if let Some(v) = a.target_accuracy {
        flags.set("target_accuracy", v);
    }
    config
        .apply_manifest(&flags)
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let variant = a.variant.or(run.variant).unwrap_or_else(|| "base".into());
    let decoder: DecoderKind = variant.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let adversarial = a.adversarial || run.adversarial.unwrap_or(false);
    if adversarial && decoder == DecoderKind::Attention {
        return Err(Failure::Usage(
            "--adversarial selects its own model family and cannot be combined with --variant attention".into(),
        ));
    }
    let arch = Architecture { decoder, adversarial };

    let kind = provider_kind(
        a.embeddings
            .embeddings
            .as_deref()
            .or(run.embeddings.as_deref())
            .unwrap_or("fallback"),
    )?;
    let emb = EmbeddingArgs {
        embeddings: Some(kind.to_string()),
        vectors: a.embeddings.vectors.or(run.vectors),
        merges: a.embeddings.merges.or(run.merges),
    };

    let root = data_root(a.data_dir.as_deref());
    let resolve = |flag: Option<PathBuf>, from_config: Option<PathBuf>, file: &str| {
        flag.or(from_config)
            .or_else(|| root.as_ref().map(|r| r.join(file)))
            .ok_or_else(|| {
                Failure::Usage(format!(
                    "no {file}: pass it explicitly, or --data-dir, or set {DATA_DIR_ENV}"
                ))
            })
    };
    let train_path = resolve(a.train, run.train_data, "train.jsonl")?;
    let val_path = resolve(a.val, run.val_data, "val.jsonl")?;

    let countries = CountrySet::standard();
    let train_data = load_dataset(&train_path, Some(countries))?;
    let val_data = load_dataset(&val_path, Some(countries))?;
    let provider = build_provider(kind, emb.vectors.as_deref(), emb.merges.as_deref())?;

    let mut manifest = Manifest::new();
    manifest
        .set("command", "train")
        .set("variant", decoder)
        .set("adversarial", adversarial);
    embedding_manifest(&mut manifest, kind, &emb);
    manifest
        .set("train_data", train_path.display())
        .set("val_data", val_path.display());
    manifest.extend(&config.to_manifest());
    manifest
        .set("config_hash", config.hash(arch, &provider))
        .set("out.train_data_sha256", dataset_hash(&train_data))
        .set("out.val_data_sha256", dataset_hash(&val_data));

    create_dir(&a.out_dir)?;
    let _ = writeln!(
        err,
        "training {} on {} samples ({} validation), seeds {:?}",
        arch.name(),
        train_data.len(),
        val_data.len(),
        config.seeds
    );
    let result = multi_seed_train(&config, arch, &provider, &train_data, &val_data)?;
    for (k, v) in result.manifest.entries() {
        manifest.set(&format!("out.{k}"), v);
    }
    for r in &result.runs {
        let model = a.out_dir.join(format!("model-seed{}.ckpt", r.requested_seed));
        r.checkpoint.save(&model)?;
        r.log
            .write(&a.out_dir.join(format!("train-seed{}.jsonl", r.requested_seed)))?;
        manifest.set(&format!("out.model.{}", r.requested_seed), model.display());
        let _ = writeln!(
            out,
            "seed {} (ran {}): best epoch {}, validation accuracy {}%{}",
            r.requested_seed,
            r.used_seed,
            r.log.best_epoch,
            fmt2(100.0 * r.log.best_val_accuracy()),
            if r.converged { "" } else { ", did not converge" }
        );
    }
    write_file(&a.out_dir.join("train-manifest.txt"), &manifest.to_string())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let kind = SuiteKind::parse(&a.suite).map_err(|e| Failure::Usage(e.to_string()))?;
    let countries = CountrySet::standard();
    let codes = a
        .countries
        .iter()
        .map(|c| countries.code_for(c.trim()))
        .collect::<addrtag::Result<Vec<_>>>()?;
    if let Some(c) = codes.iter().find(|c| !kind.allows(countries, c)) {
        return Err(Error::CountryNotAllowed(c.clone()).into());
    }
    if a.models.is_empty() {
        return Err(Failure::Usage("at least one --model is required".into()));
    }
    let dir = match a.data {
        Some(d) => d,
        None => data_root(a.data_dir.as_deref())
            .map(|r| r.join(kind.as_str()))
            .ok_or_else(|| {
                Failure::Usage(format!("no dataset directory: pass --data, --data-dir or set {DATA_DIR_ENV}"))
            })?,
    };
    let codes = if codes.is_empty() {
        let found: Vec<String> = kind
            .eligible(countries)
            .iter()
            .filter(|c| dir.join(format!("{c}.jsonl")).is_file())
            .cloned()
            .collect();
        if found.is_empty() {
            return Err(Error::EmptyInput(format!("no eligible country files in {}", dir.display())).into());
        }
        found
    } else {
        codes
    };
    let checkpoints = a
        .models
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<addrtag::Result<Vec<_>>>()?;
    let provider = provider_for(&a.embeddings, &checkpoints[0])?;
    let suite = EvalSuite::from_dir(kind, &dir, &codes, countries)?;
    let result = run_suite(&suite, &checkpoints, &provider)?;

    let mut manifest = Manifest::new();
    manifest.set("command", "eval").set("data", dir.display()).set(
        "models",
        a.models
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    embedding_manifest(&mut manifest, provider.kind(), &a.embeddings);
    manifest.set("countries", codes.join(","));
    manifest.extend(&result.manifest);

    create_dir(&a.out_dir)?;
    let csv = reports_to_csv(&result.reports, result.mean.as_ref());
    let text = reports_to_text(&result.reports, result.mean.as_ref(), countries);
    write_file(&a.out_dir.join("report.csv"), &csv)?;
    write_file(&a.out_dir.join("report.txt"), &text)?;
    write_file(&a.out_dir.join("eval-manifest.txt"), &manifest.to_string())?;
    let _ = write!(out, "{text}");
    Ok(())
}

fn parse(a: ParseArgs, out: &mut dyn Write) -> CliResult<()> {
    let checkpoint = Checkpoint::load(&a.model)?;
    let provider = provider_for(&a.embeddings, &checkpoint)?;
    let mut lines = Vec::new();
    for (i, address) in a.addresses.iter().enumerate() {
        let tokens: Vec<String> = address.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyInput(format!("address {} has no tokens", i + 1)).into());
        }
        let tags = greedy_parse(&checkpoint.params, &provider, &tokens)?;
        if i > 0 {
            lines.push(String::new());
        }
        lines.extend(tokens.iter().zip(&tags).map(|(w, t)| format!("{w}\t{t}")));
    }
    let mut manifest = Manifest::new();
    manifest
        .set("command", "parse")
        .set("model", a.model.display())
        .set("model_sha256", checkpoint.fingerprint())
        .set("variant", checkpoint.params.arch.name());
    embedding_manifest(&mut manifest, provider.kind(), &a.embeddings);
    manifest.set("addresses", a.addresses.len());
    create_dir(&a.out_dir)?;
    write_file(&a.out_dir.join("parse-manifest.txt"), &manifest.to_string())?;
    for l in lines {
        let _ = writeln!(out, "{l}");
    }
    Ok(())
}

fn make_incomplete(a: MakeIncompleteArgs, out: &mut dyn Write) -> CliResult<()> {
    let policy = IncompletePolicy::new(a.min_dropped, a.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let countries = CountrySet::standard();
    let samples = load_dataset(&a.input, Some(countries))?;
    let (train, holdout) = build_incomplete_dataset(&samples, &policy, a.train_n, a.holdout_n)?;

    create_dir(&a.out_dir)?;
    let holdout_dir = a.out_dir.join(SuiteKind::IncompleteHoldout.as_str());
    create_dir(&holdout_dir)?;
    let train_path = a.out_dir.join("incomplete-train.jsonl");
    write_dataset(&train_path, &train)?;

    let mut manifest = Manifest::new();
    manifest
        .set("command", "make-incomplete")
        .set("input", a.input.display())
        .set("input_sha256", dataset_hash(&samples))
        .set("seed", a.seed)
        .set("min_dropped", a.min_dropped)
        .set(
            "droppable",
            policy.droppable.iter().map(|t| t.name()).collect::<Vec<_>>().join(","),
        )
        .set("drop_count", "uniform over min_dropped..=feasible, then a uniform subset")
        .set("train_n", a.train_n)
        .set("holdout_n", a.holdout_n)
        .set("train", train_path.display())
        .set("train_sha256", dataset_hash(&train));
    for (country, idx) in by_country(&holdout) {
        let rows: Vec<_> = idx.iter().map(|&i| holdout[i].clone()).collect();
        let path = holdout_dir.join(format!("{country}.jsonl"));
        write_dataset(&path, &rows)?;
        manifest
            .set(&format!("count.train.{country}"), a.train_n)
            .set(&format!("count.holdout.{country}"), rows.len())
            .set(&format!("holdout.{country}"), path.display());
    }
    write_file(&a.out_dir.join("make-incomplete-manifest.txt"), &manifest.to_string())?;
    let _ = writeln!(
        out,
        "{} training and {} holdout incomplete records written to {}",
        train.len(),
        holdout.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn parse_pattern(names: &[String]) -> CliResult<Vec<Tag>> {
    names
        .iter()
        .map(|n| n.trim().parse::<Tag>().map_err(|e| Failure::Usage(e.to_string())))
        .collect()
}

fn probe_reorder(a: ProbeReorderArgs, out: &mut dyn Write) -> CliResult<()> {
    let pattern_a = parse_pattern(&a.pattern_a)?;
    let pattern_b = parse_pattern(&a.pattern_b)?;
    let samples = load_dataset(&a.input, Some(CountrySet::standard()))?;
    let assigned = reorder_probe_assigned(&samples, &pattern_a, &pattern_b, a.seed)?;
    let n_a = assigned.iter().filter(|(_, p)| *p == ProbePattern::A).count();
    let probe: Vec<_> = assigned.into_iter().map(|(s, _)| s).collect();

    create_dir(&a.out_dir)?;
    let probe_path = a.out_dir.join("probe.jsonl");
    write_dataset(&probe_path, &probe)?;
    let join = |p: &[Tag]| p.iter().map(|t| t.name()).collect::<Vec<_>>().join(",");
    let mut manifest = Manifest::new();
    manifest
        .set("command", "probe-reorder")
        .set("input", a.input.display())
        .set("input_sha256", dataset_hash(&samples))
        .set("pattern_a", join(&pattern_a))
        .set("pattern_b", join(&pattern_b))
        .set("seed", a.seed)
        .set("count.a", n_a)
        .set("count.b", probe.len() - n_a)
        .set("probe", probe_path.display())
        .set("probe_sha256", dataset_hash(&probe));
    let _ = writeln!(
        out,
        "{} probe records ({} pattern A, {} pattern B) written to {}",
        probe.len(),
        n_a,
        probe.len() - n_a,
        probe_path.display()
    );
    if let Some(model) = &a.model {
        let checkpoint = Checkpoint::load(model)?;
        let provider = provider_for(&a.embeddings, &checkpoint)?;
        let original = mean_accuracy(&checkpoint.params, &provider, &samples)?;
        let reordered = mean_accuracy(&checkpoint.params, &provider, &probe)?;
        let baseline = random_baseline(&probe, &TagVocabulary::default(), a.seed)?;
        manifest
            .set("model", model.display())
            .set("model_sha256", checkpoint.fingerprint());
        embedding_manifest(&mut manifest, provider.kind(), &a.embeddings);
        manifest
            .set("accuracy.original", fmt2(original))
            .set("accuracy.probe", fmt2(reordered))
            .set("accuracy.random", fmt2(baseline));
        let _ = writeln!(out, "original order: {}%", fmt2(original));
        let _ = writeln!(out, "reordered probe: {}%", fmt2(reordered));
        let _ = writeln!(out, "random tagging: {}%", fmt2(baseline));
    }
    write_file(&a.out_dir.join("probe-reorder-manifest.txt"), &manifest.to_string())
}

fn report(a: ReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut reports = Vec::new();
    for p in &a.inputs {
        let text = fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        reports.extend(reports_from_csv(&text)?.into_iter().filter(|r| r.country != "Mean"));
    }
    reports.sort_by(|x, y| x.country.cmp(&y.country));
    let mean = mean_row(&reports);
    let rendered = match a.format.as_str() {
        "csv" => reports_to_csv(&reports, mean.as_ref()),
        _ => reports_to_text(&reports, mean.as_ref(), CountrySet::standard()),
    };
    let mut manifest = Manifest::new();
    manifest.set("command", "report").set("format", &a.format).set(
        "inputs",
        a.inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set("countries", reports.len());
    create_dir(&a.out_dir)?;
    write_file(&a.out_dir.join("report-manifest.txt"), &manifest.to_string())?;
    let _ = write!(out, "{rendered}");
    Ok(())
}
