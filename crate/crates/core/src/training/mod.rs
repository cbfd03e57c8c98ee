//! SGD training with teacher forcing, plateau learning-rate decay, early
//! stopping, ADANN sweeps for the adversarial variants, and multi-seed runs.

mod checkpoint;

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, FORMAT_VERSION};

use crate::adversarial::{adann_pairing, adversarial_batch_loss, DomainGradient, GradReversal, PairInputGrads};
use crate::data::{batch_order, by_country, derive_seed, hex, Manifest};
use crate::embeddings::{EmbeddedSequence, EmbeddingProvider, SubwordTrace};
use crate::error::{Error, Result};
use crate::evaluation::sequence_accuracy;
use crate::tagger::model::{predict, task_batch_loss, Example};
use crate::tagger::{Architecture, ModelDims, ModelParams, TagRepr};
use crate::tags::AddressSample;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` picks 512, or 256 for the adversarial variants.
    pub batch_size: Option<usize>,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_patience_epochs: usize,
    pub early_stop_patience: usize,
    /// Minimum absolute decrease of the validation loss that counts as improvement.
    pub improvement_tol: f64,
    pub seeds: Vec<u64>,
    pub retry_seed: u64,
    pub grl_lambda: f64,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub tag_dim: usize,
    pub tag_repr: TagRepr,
    /// Best validation token accuracy below this marks a run as non-converged.
    pub nonconvergence_threshold: f64,
    /// Stop as soon as validation accuracy reaches this fraction.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: None,
            lr0: 0.1,
            lr_decay_factor: 0.1,
            lr_patience_epochs: 10,
            early_stop_patience: 15,
            improvement_tol: 1e-6,
            seeds: vec![5, 10, 15, 20, 25],
            retry_seed: 30,
            grl_lambda: 1.0,
            hidden_dim: 1024,
            attention_dim: 1024,
            tag_dim: 32,
            tag_repr: TagRepr::Learned,
            nonconvergence_threshold: 0.80,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// Small model for desk experiments.
    pub fn desk(hidden: usize) -> Self {
        TrainConfig {
            hidden_dim: hidden,
            attention_dim: hidden,
            ..TrainConfig::default()
        }
    }

    pub fn batch_size_for(&self, arch: Architecture) -> usize {
        self.batch_size
            .unwrap_or(if arch.adversarial { 256 } else { 512 })
    }

    pub fn dims(&self, input: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: self.hidden_dim,
            attention: self.attention_dim,
            tag_dim: self.tag_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.lr_patience_epochs == 0 || self.early_stop_patience == 0 {
            return bad("epoch counts must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr decay factor must be in (0, 1]");
        }
        if self.hidden_dim == 0 || self.attention_dim == 0 || self.tag_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return bad("seeds must be distinct");
            }
        }
        GradReversal::new(self.grl_lambda)?;
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("epochs", self.epochs)
            .set(
                "batch_size",
                self.batch_size.map_or("auto".to_string(), |b| b.to_string()),
            )
            .set("lr0", self.lr0)
            .set("lr_decay_factor", self.lr_decay_factor)
            .set("lr_patience_epochs", self.lr_patience_epochs)
            .set("early_stop_patience", self.early_stop_patience)
            .set("improvement_tol", self.improvement_tol)
            .set(
                "seeds",
                self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            )
            .set("retry_seed", self.retry_seed)
            .set("grl_lambda", self.grl_lambda)
            .set("hidden_dim", self.hidden_dim)
            .set("attention_dim", self.attention_dim)
            .set("tag_dim", self.tag_dim)
            .set("tag_repr", self.tag_repr.as_str())
            .set("nonconvergence_threshold", self.nonconvergence_threshold)
            .set(
                "target_accuracy",
                self.target_accuracy.map_or("none".to_string(), |t| t.to_string()),
            )
            .set("teacher_forcing", 1.0)
            .set("optimizer", "sgd");
        m
    }

    /// Apply the known keys of `m` on top of `self`. Unknown keys are rejected.
    pub fn apply_manifest(&mut self, m: &Manifest) -> Result<()> {
        let bad = |k: &str, v: &str| Error::InvalidConfig(format!("bad value `{v}` for `{k}`"));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for `{k}`")))
        }
        for (k, v) in m.entries() {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "epochs" => self.epochs = num(k, v)?,
                "batch_size" => {
                    self.batch_size = if v == "auto" { None } else { Some(num(k, v)?) }
                }
                "lr0" | "lr" => self.lr0 = num(k, v)?,
                "lr_decay_factor" => self.lr_decay_factor = num(k, v)?,
                "lr_patience_epochs" => self.lr_patience_epochs = num(k, v)?,
                "early_stop_patience" => self.early_stop_patience = num(k, v)?,
                "improvement_tol" => self.improvement_tol = num(k, v)?,
                "seeds" => {
                    self.seeds = v
                        .split(',')
                        .map(|s| num(k, s.trim()))
                        .collect::<Result<_>>()?
                }
                "retry_seed" => self.retry_seed = num(k, v)?,
                "grl_lambda" => self.grl_lambda = num(k, v)?,
                "hidden_dim" => self.hidden_dim = num(k, v)?,
                "attention_dim" => self.attention_dim = num(k, v)?,
                "tag_dim" => self.tag_dim = num(k, v)?,
                "tag_repr" => self.tag_repr = v.parse()?,
                "nonconvergence_threshold" => self.nonconvergence_threshold = num(k, v)?,
                "target_accuracy" => {
                    self.target_accuracy = if v == "none" { None } else { Some(num(k, v)?) }
                }
                "teacher_forcing" => {
                    if num::<f64>(k, v)? != 1.0 {
                        return Err(bad(k, v));
                    }
                }
                "optimizer" => {
                    if v != "sgd" {
                        return Err(bad(k, v));
                    }
                }
                other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
            }
        }
        self.validate()
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_manifest(m)?;
        Ok(c)
    }

    /// Hex SHA-256 over the resolved configuration, variant and embedding kind.
    pub fn hash(&self, arch: Architecture, provider: &EmbeddingProvider) -> String {
        let mut m = self.to_manifest();
        m.set("variant", arch.name()).set("embeddings", provider.kind());
        hex(&Sha256::digest(m.to_string().as_bytes()))
    }
}

/// Plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct LrState {
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub factor: f64,
    pub patience: usize,
    pub tol: f64,
}

impl LrState {
    pub fn new(config: &TrainConfig) -> Self {
        LrState {
            lr: config.lr0,
            best: f64::INFINITY,
            bad_epochs: 0,
            factor: config.lr_decay_factor,
            patience: config.lr_patience_epochs,
            tol: config.improvement_tol,
        }
    }
}

fn improves(loss: f64, best: f64, tol: f64) -> bool {
    best.is_infinite() || loss <= best - tol
}

/// Feed one epoch's validation loss; returns the learning rate for the next epoch.
pub fn lr_schedule_step(state: &mut LrState, epoch_val_loss: f64) -> f64 {
    if improves(epoch_val_loss, state.best, state.tol) {
        state.best = epoch_val_loss;
        state.bad_epochs = 0;
    } else {
        state.bad_epochs += 1;
        if state.bad_epochs >= state.patience {
            state.lr *= state.factor;
            state.bad_epochs = 0;
        }
    }
    state.lr
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub best: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub patience: usize,
    pub tol: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize, tol: f64) -> Self {
        EarlyStopping {
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            patience,
            tol,
        }
    }

    /// Record an epoch's validation loss; true when it is the new best.
    pub fn update(&mut self, epoch: usize, loss: f64) -> bool {
        if improves(loss, self.best, self.tol) {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_loss: Option<f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn best_val_accuracy(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max)
    }

    pub fn best_val_loss(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min)
    }

    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("records serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                    line_no: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<EpochRecord>>>()?;
        let best_epoch = epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .map_or(0, |e| e.epoch);
        Ok(TrainLog {
            epochs,
            best_epoch,
            stopped_early: false,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// True when the best validation token accuracy stays below `threshold`.
pub fn detect_nonconvergence(log: &TrainLog, threshold: f64) -> bool {
    log.best_val_accuracy() < threshold
}

/// Embedded inputs, precomputed for stateless providers.
struct Inputs<'a> {
    provider: &'a EmbeddingProvider,
    samples: &'a [AddressSample],
    gold: Vec<Vec<usize>>,
    cached: Option<Vec<EmbeddedSequence>>,
}

impl<'a> Inputs<'a> {
    fn new(provider: &'a EmbeddingProvider, samples: &'a [AddressSample]) -> Result<Self> {
        let cached = if provider.trainable() {
            None
        } else {
            Some(
                samples
                    .iter()
                    .map(|s| provider.embed_sequence(&s.tokens, None))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok(Inputs {
            provider,
            samples,
            gold: samples.iter().map(AddressSample::tag_indices).collect(),
            cached,
        })
    }

    /// Embeddings of `idx`, with combiner traces when the combiner trains.
    fn embed(&self, params: &ModelParams, idx: &[usize]) -> Result<Embedded<'_>> {
        match &self.cached {
            Some(c) => Ok(Embedded::Cached(idx.iter().map(|&i| &c[i]).collect())),
            None => {
                let combiner = params.combiner.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("byte-pair embeddings need combiner parameters".into())
                })?;
                let (xs, traces) = idx
                    .iter()
                    .map(|&i| self.provider.embed_sequence_traced(&self.samples[i].tokens, combiner))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip();
                Ok(Embedded::Traced(xs, traces))
            }
        }
    }
}

enum Embedded<'a> {
    Cached(Vec<&'a EmbeddedSequence>),
    Traced(Vec<EmbeddedSequence>, Vec<SubwordTrace>),
}

impl Embedded<'_> {
    fn seqs(&self) -> Vec<&EmbeddedSequence> {
        match self {
            Embedded::Cached(v) => v.clone(),
            Embedded::Traced(v, _) => v.iter().collect(),
        }
    }

    fn traces(&self) -> Option<&[SubwordTrace]> {
        match self {
            Embedded::Cached(_) => None,
            Embedded::Traced(_, t) => Some(t),
        }
    }
}

fn examples<'a>(xs: &[&'a EmbeddedSequence], gold: &'a [Vec<usize>], idx: &[usize]) -> Vec<Example<'a>> {
    xs.iter()
        .zip(idx)
        .map(|(x, &i)| Example { x, gold: &gold[i] })
        .collect()
}

/// Push input gradients into the subword combiner.
fn combiner_backward(params: &ModelParams, traces: &[SubwordTrace], dxs: &[Vec<Vec<f64>>], grads: &mut ModelParams) {
    let (Some(c), Some(g)) = (params.combiner.as_ref(), grads.combiner.as_mut()) else {
        return;
    };
    for (trace, dx) in traces.iter().zip(dxs) {
        for (t, d) in trace.tokens.iter().zip(dx) {
            c.backward(t, d, g);
        }
    }
}

struct Validation {
    loss: f64,
    accuracy: f64,
}

fn validate(params: &ModelParams, val: &Inputs<'_>) -> Result<Validation> {
    let idx: Vec<usize> = (0..val.samples.len()).collect();
    let emb = val.embed(params, &idx)?;
    let xs = emb.seqs();
    let loss = task_batch_loss(params, &examples(&xs, &val.gold, &idx), None, None)?;
    let mut acc = 0.0;
    for (x, g) in xs.iter().zip(&val.gold) {
        acc += sequence_accuracy(&predict(params, x)?, g)?;
    }
    Ok(Validation {
        loss,
        accuracy: acc / idx.len() as f64,
    })
}

/// One task-only epoch; returns the token-weighted mean training loss.
fn plain_epoch(params: &mut ModelParams, train: &Inputs<'_>, batch: usize, seed: u64, lr: f64) -> Result<f64> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut tokens = 0usize;
    for idx in batch_order(train.samples.len(), batch, Some(seed))? {
        for (_, g) in grads.blocks_mut() {
            g.fill(0.0);
        }
        let emb = train.embed(params, &idx)?;
        let xs = emb.seqs();
        let ex = examples(&xs, &train.gold, &idx);
        let mut dxs = Vec::new();
        let want_dx = emb.traces().is_some();
        let l = task_batch_loss(params, &ex, Some(&mut grads), want_dx.then_some(&mut dxs))?;
        if let Some(t) = emb.traces() {
            combiner_backward(params, t, &dxs, &mut grads);
        }
        let n: usize = ex.iter().map(|e| e.gold.len()).sum();
        loss += l * n as f64;
        tokens += n;
        params.sgd_step(&grads, lr);
    }
    Ok(loss / tokens as f64)
}

/// One ADANN sweep set. Returns (task loss, domain loss), each averaged over pairs.
fn adversarial_epoch(
    params: &mut ModelParams,
    train: &Inputs<'_>,
    batch: usize,
    seed: u64,
    lr: f64,
    lambda: f64,
) -> Result<(f64, f64)> {
    let groups = by_country(train.samples);
    let countries: Vec<String> = groups.iter().map(|(c, _)| c.clone()).collect();
    if countries.len() < 2 {
        return Err(Error::TooFewDomains(countries.len()));
    }
    let batches: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|(c, idx)| {
            Ok(batch_order(idx.len(), batch, Some(derive_seed(seed, c)))?
                .into_iter()
                .map(|b| b.into_iter().map(|j| idx[j]).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    let total: usize = batches.iter().map(Vec::len).sum();
    let rounds = total.div_ceil(countries.len());
    let mut src_cursor = vec![0usize; countries.len()];
    let mut tgt_cursor = vec![0usize; countries.len()];
    let path = DomainGradient::Reversed(GradReversal::new(lambda)?);
    let mut grads = params.zeros_like();
    let (mut task, mut domain, mut pairs) = (0.0, 0.0, 0usize);
    for r in 0..rounds {
        for pair in adann_pairing(&countries, derive_seed(seed, &format!("pairing-{r}")))? {
            let s = countries.iter().position(|c| *c == pair.source).unwrap();
            let t = countries.iter().position(|c| *c == pair.target).unwrap();
            let src_idx = &batches[s][src_cursor[s] % batches[s].len()];
            let tgt_idx = &batches[t][tgt_cursor[t] % batches[t].len()];
            src_cursor[s] += 1;
            tgt_cursor[t] += 1;
            for (_, g) in grads.blocks_mut() {
                g.fill(0.0);
            }
            let src_emb = train.embed(params, src_idx)?;
            let tgt_emb = train.embed(params, tgt_idx)?;
            let (sx, tx) = (src_emb.seqs(), tgt_emb.seqs());
            let src = examples(&sx, &train.gold, src_idx);
            let tgt = examples(&tx, &train.gold, tgt_idx);
            let mut dx = PairInputGrads::default();
            let want_dx = src_emb.traces().is_some();
            let l = adversarial_batch_loss(params, &src, &tgt, path, Some(&mut grads), want_dx.then_some(&mut dx))?;
            if let (Some(ts), Some(tt)) = (src_emb.traces(), tgt_emb.traces()) {
                combiner_backward(params, ts, &dx.source, &mut grads);
                combiner_backward(params, tt, &dx.target, &mut grads);
            }
            task += l.task;
            domain += l.domain_source + l.domain_target;
            pairs += 1;
            params.sgd_step(&grads, lr);
        }
    }
    Ok((task / pairs as f64, domain / pairs as f64))
}

/// Train one model from `seed`. Returns the best-validation-loss checkpoint.
pub fn train(
    config: &TrainConfig,
    arch: Architecture,
    provider: &EmbeddingProvider,
    train_data: &[AddressSample],
    val_data: &[AddressSample],
    seed: u64,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    let dims = config.dims(provider.dimension());
    let mut params = ModelParams::init_with(arch, dims, config.tag_repr, provider.trainable(), seed);
    let train_in = Inputs::new(provider, train_data)?;
    let val_in = Inputs::new(provider, val_data)?;
    let batch = config.batch_size_for(arch);

    let mut lr = LrState::new(config);
    let mut stopper = EarlyStopping::new(config.early_stop_patience, config.improvement_tol);
    let mut best = params.clone();
    let mut log = TrainLog::default();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let used_lr = lr.lr;
        let epoch_seed = derive_seed(seed, &format!("epoch-{epoch}"));
        let (train_loss, domain_loss) = if arch.adversarial {
            let (t, d) = adversarial_epoch(&mut params, &train_in, batch, epoch_seed, used_lr, config.grl_lambda)?;
            (t, Some(d))
        } else {
            (plain_epoch(&mut params, &train_in, batch, epoch_seed, used_lr)?, None)
        };
        if !train_loss.is_finite() || !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("training loss {train_loss} at learning rate {used_lr}"),
            });
        }
        let v = validate(&params, &val_in)?;
        if !v.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("validation loss {}", v.loss),
            });
        }
        if stopper.update(epoch, v.loss) {
            best = params.clone();
        }
        lr_schedule_step(&mut lr, v.loss);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            domain_loss,
            val_loss: v.loss,
            val_accuracy: v.accuracy,
            lr: used_lr,
            seconds: start.elapsed().as_secs_f64(),
        });
        let reached = config.target_accuracy.is_some_and(|t| v.accuracy >= t);
        if stopper.should_stop() || reached {
            log.stopped_early = epoch < config.epochs;
            break;
        }
    }
    log.best_epoch = stopper.best_epoch;
    let checkpoint = Checkpoint {
        params: best,
        meta: CheckpointMeta {
            provider: provider.kind(),
            config_hash: config.hash(arch, provider),
            seed,
            epoch: stopper.best_epoch,
            best_val_loss: stopper.best,
        },
    };
    Ok((checkpoint, log))
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub requested_seed: u64,
    pub used_seed: u64,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MultiSeedResult {
    pub runs: Vec<SeedRun>,
    pub manifest: Manifest,
}

/// Run `trainer` once per configured seed. A non-converged seed is retried
/// once with `config.retry_seed`; if that fails too the run is kept and
/// flagged as non-converged.
pub fn multi_seed_run<F>(config: &TrainConfig, mut trainer: F) -> Result<MultiSeedResult>
where
    F: FnMut(u64) -> Result<(Checkpoint, TrainLog)>,
{
    if config.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let mut runs = Vec::with_capacity(config.seeds.len());
    let mut manifest = Manifest::new();
    for &seed in &config.seeds {
        let (mut ckpt, mut log) = trainer(seed)?;
        let mut used = seed;
        let mut converged = !detect_nonconvergence(&log, config.nonconvergence_threshold);
        if !converged {
            let (c, l) = trainer(config.retry_seed)?;
            ckpt = c;
            log = l;
            used = config.retry_seed;
            converged = !detect_nonconvergence(&log, config.nonconvergence_threshold);
            manifest.set(&format!("substitute.{seed}"), used);
            if !converged {
                manifest.set(&format!("still_nonconverged.{seed}"), true);
            }
        }
        manifest.set(&format!("seed.{seed}"), ckpt.fingerprint());
        runs.push(SeedRun {
            requested_seed: seed,
            used_seed: used,
            checkpoint: ckpt,
            log,
            converged,
        });
    }
    Ok(MultiSeedResult { runs, manifest })
}

/// [`multi_seed_run`] over [`train`].
pub fn multi_seed_train(
    config: &TrainConfig,
    arch: Architecture,
    provider: &EmbeddingProvider,
    train_data: &[AddressSample],
    val_data: &[AddressSample],
) -> Result<MultiSeedResult> {
    multi_seed_run(config, |seed| train(config, arch, provider, train_data, val_data, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_stays_on_improvement() {
        let mut s = LrState::new(&TrainConfig::default());
        for i in 0..30 {
            assert_eq!(lr_schedule_step(&mut s, 1.0 - i as f64 * 0.01), 0.1);
        }
    }

    #[test]
    fn lr_decays_after_plateaus() {
        let mut s = LrState::new(&TrainConfig::default());
        lr_schedule_step(&mut s, 1.0);
        for _ in 0..9 {
            assert_eq!(lr_schedule_step(&mut s, 1.0), 0.1);
        }
        assert!((lr_schedule_step(&mut s, 1.0) - 0.01).abs() < 1e-15);
        for _ in 0..10 {
            lr_schedule_step(&mut s, 1.0);
        }
        assert!((s.lr - 0.001).abs() < 1e-15);
        // float noise below the tolerance does not count as improvement
        s = LrState::new(&TrainConfig::default());
        lr_schedule_step(&mut s, 1.0);
        lr_schedule_step(&mut s, 1.0 - 1e-9);
        assert_eq!(s.bad_epochs, 1);
    }

    #[test]
    fn early_stopping_patience() {
        let mut e = EarlyStopping::new(15, 1e-6);
        assert!(e.update(1, 0.5));
        for epoch in 2..=15 {
            e.update(epoch, 0.5);
            assert!(!e.should_stop());
        }
        e.update(16, 0.5);
        assert!(e.should_stop());
        assert_eq!(e.best_epoch, 1);
    }

    #[test]
    fn nonconvergence_threshold() {
        let log = |acc: f64| TrainLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.0,
                domain_loss: None,
                val_loss: 1.0,
                val_accuracy: acc,
                lr: 0.1,
                seconds: 0.0,
            }],
            ..TrainLog::default()
        };
        assert!(!detect_nonconvergence(&log(0.99), 0.8));
        assert!(detect_nonconvergence(&log(0.2), 0.8));
        assert!(!detect_nonconvergence(&log(0.0), 0.0));
        let text = log(0.5).to_jsonl();
        assert_eq!(TrainLog::from_jsonl(&text).unwrap().epochs, log(0.5).epochs);
    }

    #[test]
    fn config_manifest_round_trip() {
        let mut c = TrainConfig::desk(16);
        c.batch_size = Some(8);
        c.target_accuracy = Some(0.99);
        assert_eq!(TrainConfig::from_manifest(&c.to_manifest()).unwrap(), c);
        assert_eq!(TrainConfig::from_manifest(&TrainConfig::default().to_manifest()).unwrap(), TrainConfig::default());
        let mut m = Manifest::new();
        m.set("bogus", 1);
        assert!(TrainConfig::from_manifest(&m).is_err());
        let mut m = Manifest::new();
        m.set("seeds", "5,5");
        assert!(TrainConfig::from_manifest(&m).is_err());
        assert_eq!(TrainConfig::default().batch_size_for(Architecture::BASE), 512);
        assert_eq!(TrainConfig::default().batch_size_for(Architecture::ATTENTION_ADVERSARIAL), 256);
    }
}
