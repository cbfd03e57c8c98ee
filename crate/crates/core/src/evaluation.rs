//! Token accuracy, per-country aggregation across seeds, and evaluation suites.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::country::CountrySet;
use crate::data::{dataset_hash, load_dataset, Manifest};
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::tagger::{predict, ModelParams};
use crate::tags::{AddressSample, TagVocabulary};
use crate::training::Checkpoint;

/// Fraction of positions where `pred` equals `gold`.
pub fn sequence_accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    if pred.len() != gold.len() || gold.is_empty() {
        return Err(Error::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountryReport {
    pub country: String,
    /// Percent.
    pub mean_accuracy: f64,
    /// Population standard deviation across seeds, percent.
    pub std_accuracy: f64,
    pub n_seeds: usize,
    pub n_samples: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `per_seed[s][i]` is the accuracy of sample `i` under seed `s`.
pub fn aggregate_country(country: &str, per_seed: &[Vec<f64>]) -> Result<CountryReport> {
    if per_seed.is_empty() || per_seed.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput(format!("no accuracies for {country}")));
    }
    let seed_acc: Vec<f64> = per_seed
        .iter()
        .map(|s| 100.0 * s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let (mean, std) = mean_std(&seed_acc);
    Ok(CountryReport {
        country: country.to_string(),
        mean_accuracy: mean,
        std_accuracy: std,
        n_seeds: per_seed.len(),
        n_samples: per_seed[0].len(),
    })
}

/// The `Mean` row: mean and population std of the country means.
pub fn mean_row(reports: &[CountryReport]) -> Option<CountryReport> {
    if reports.is_empty() {
        return None;
    }
    let means: Vec<f64> = reports.iter().map(|r| r.mean_accuracy).collect();
    let (mean, std) = mean_std(&means);
    Some(CountryReport {
        country: "Mean".into(),
        mean_accuracy: mean,
        std_accuracy: std,
        n_seeds: reports.iter().map(|r| r.n_seeds).min().unwrap_or(0),
        n_samples: reports.iter().map(|r| r.n_samples).sum(),
    })
}

/// Mean accuracy, in percent, of tagging every token uniformly at random.
pub fn random_baseline(samples: &[AddressSample], vocab: &TagVocabulary, rng_seed: u64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("random baseline over no samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut total = 0.0;
    for s in samples {
        let pred: Vec<usize> = (0..s.len()).map(|_| rng.gen_range(0..vocab.num_tags())).collect();
        total += sequence_accuracy(&pred, &s.tag_indices())?;
    }
    Ok(100.0 * total / samples.len() as f64)
}

/// Per-sample accuracies of a model.
pub fn evaluate_samples(
    params: &ModelParams,
    provider: &EmbeddingProvider,
    samples: &[AddressSample],
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let x = provider.embed_sequence(&s.tokens, params.combiner.as_ref())?;
            sequence_accuracy(&predict(params, &x)?, &s.tag_indices())
        })
        .collect()
}

/// Mean accuracy, in percent.
pub fn mean_accuracy(params: &ModelParams, provider: &EmbeddingProvider, samples: &[AddressSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate".into()));
    }
    let acc = evaluate_samples(params, provider, samples)?;
    Ok(100.0 * acc.iter().sum::<f64>() / acc.len() as f64)
}

/// Accuracy on a reordered probe set, in percent.
pub fn reorder_probe_eval(
    checkpoint: &Checkpoint,
    provider: &EmbeddingProvider,
    probe: &[AddressSample],
) -> Result<f64> {
    mean_accuracy(&checkpoint.params, provider, probe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    Holdout,
    ZeroShot,
    IncompleteHoldout,
}

impl SuiteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SuiteKind::Holdout => "holdout",
            SuiteKind::ZeroShot => "zero_shot",
            SuiteKind::IncompleteHoldout => "incomplete",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "holdout" => Ok(SuiteKind::Holdout),
            "zero_shot" => Ok(SuiteKind::ZeroShot),
            "incomplete" | "incomplete_holdout" => Ok(SuiteKind::IncompleteHoldout),
            other => Err(Error::InvalidConfig(format!("unknown suite `{other}`"))),
        }
    }

    /// Holdout suites cover training countries; zero-shot covers the rest.
    pub fn allows(self, countries: &CountrySet, code: &str) -> bool {
        match self {
            SuiteKind::Holdout | SuiteKind::IncompleteHoldout => countries.is_training(code),
            SuiteKind::ZeroShot => countries.is_zero_shot(code),
        }
    }

    pub fn eligible(self, countries: &CountrySet) -> &[String] {
        match self {
            SuiteKind::Holdout | SuiteKind::IncompleteHoldout => countries.training(),
            SuiteKind::ZeroShot => countries.zero_shot(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CountryData {
    pub country: String,
    pub source: Option<PathBuf>,
    pub samples: Vec<AddressSample>,
}

#[derive(Debug, Clone)]
pub struct EvalSuite {
    pub kind: SuiteKind,
    pub data: Vec<CountryData>,
}

impl EvalSuite {
    /// Checks every country against the suite's eligible set.
    pub fn new(kind: SuiteKind, data: Vec<CountryData>, countries: &CountrySet) -> Result<Self> {
        for d in &data {
            if !kind.allows(countries, &d.country) {
                return Err(Error::CountryNotAllowed(d.country.clone()));
            }
        }
        Ok(EvalSuite { kind, data })
    }

    /// Load `<dir>/<code>.jsonl` for each country.
    pub fn from_dir(kind: SuiteKind, dir: &Path, codes: &[String], countries: &CountrySet) -> Result<Self> {
        if let Some(c) = codes.iter().find(|c| !kind.allows(countries, c)) {
            return Err(Error::CountryNotAllowed(c.clone()));
        }
        let data = codes
            .iter()
            .map(|c| {
                let path = dir.join(format!("{c}.jsonl"));
                Ok(CountryData {
                    country: c.clone(),
                    samples: load_dataset(&path, Some(countries))?,
                    source: Some(path),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EvalSuite::new(kind, data, countries)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub reports: Vec<CountryReport>,
    pub mean: Option<CountryReport>,
    pub manifest: Manifest,
}

/// Evaluate every checkpoint (one per seed) on every country of the suite.
/// Reports come back sorted by country code.
pub fn run_suite(
    suite: &EvalSuite,
    checkpoints: &[Checkpoint],
    provider: &EmbeddingProvider,
) -> Result<SuiteResult> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::InvalidConfig("no checkpoints to evaluate".into()))?;
    for c in checkpoints {
        if c.params.arch != first.params.arch || c.meta.provider != first.meta.provider {
            return Err(Error::InvalidConfig(
                "checkpoints must share variant and embedding kind".into(),
            ));
        }
    }
    if provider.kind() != first.meta.provider {
        return Err(Error::InvalidConfig(format!(
            "checkpoints were trained with {} embeddings, provider is {}",
            first.meta.provider,
            provider.kind()
        )));
    }
    let mut data: Vec<&CountryData> = suite.data.iter().collect();
    data.sort_by(|a, b| a.country.cmp(&b.country));

    let mut manifest = Manifest::new();
    manifest
        .set("suite", suite.kind.as_str())
        .set("variant", first.params.arch.name())
        .set("embeddings", first.meta.provider)
        .set("std", "population")
        .set(
            "checkpoints",
            checkpoints
                .iter()
                .map(|c| format!("{}:{}", c.meta.seed, c.fingerprint()))
                .collect::<Vec<_>>()
                .join(","),
        );
    let mut reports = Vec::with_capacity(data.len());
    for d in data {
        let per_seed = checkpoints
            .iter()
            .map(|c| evaluate_samples(&c.params, provider, &d.samples))
            .collect::<Result<Vec<_>>>()?;
        reports.push(aggregate_country(&d.country, &per_seed)?);
        manifest.set(&format!("dataset.{}", d.country), dataset_hash(&d.samples));
        if let Some(p) = &d.source {
            manifest.set(&format!("source.{}", d.country), p.display());
        }
    }
    Ok(SuiteResult {
        mean: mean_row(&reports),
        reports,
        manifest,
    })
}

/// Two decimals; exact ties round half to even.
pub fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

pub fn reports_to_csv(reports: &[CountryReport], mean: Option<&CountryReport>) -> String {
    let mut s = String::from("country,mean,std,n_seeds,n_samples\n");
    for r in reports.iter().chain(mean) {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.country,
            fmt2(r.mean_accuracy),
            fmt2(r.std_accuracy),
            r.n_seeds,
            r.n_samples
        );
    }
    s
}

pub fn reports_to_text(reports: &[CountryReport], mean: Option<&CountryReport>, countries: &CountrySet) -> String {
    let mut s = String::new();
    for r in reports.iter().chain(mean) {
        let name = countries.name_of(&r.country).unwrap_or(&r.country);
        let _ = writeln!(
            s,
            "{:<24} {:>6} ± {:<5}  ({} seeds, {} samples)",
            name,
            fmt2(r.mean_accuracy),
            fmt2(r.std_accuracy),
            r.n_seeds,
            r.n_samples
        );
    }
    s
}

/// Parse a CSV produced by [`reports_to_csv`]. Values are read at their
/// printed precision.
pub fn reports_from_csv(text: &str) -> Result<Vec<CountryReport>> {
    let mut lines = text.lines();
    if lines.next() != Some("country,mean,std,n_seeds,n_samples") {
        return Err(Error::BadFormat("report header is missing".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::BadFormat(format!("bad report line `{l}`"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(CountryReport {
                country: f[0].to_string(),
                mean_accuracy: f[1].parse().map_err(|_| bad())?,
                std_accuracy: f[2].parse().map_err(|_| bad())?,
                n_seeds: f[3].parse().map_err(|_| bad())?,
                n_samples: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
