//! Per-token 300-dimensional word vectors.
//!
//! Three providers are available:
//!
//! * `word_subword`: a pretrained word table; out-of-vocabulary tokens are
//!   built from the table's character n-gram entries when it has any, and from
//!   the hashed n-gram table otherwise.
//! * `bpe_combined`: byte-pair units looked up in a unit table (hashed vectors
//!   for missing units), merged by a trainable [`SubwordCombinerParams`].
//! * `fallback`: the hashed n-gram embedder alone, for offline use.

pub mod bpe;
pub mod combiner;
pub mod fallback;
pub mod vectors;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use bpe::BpeSegmenter;
pub use combiner::{CombinerTrace, SubwordCombinerParams};
pub use fallback::FallbackEmbedder;
pub use vectors::VectorTable;

use crate::error::{Error, Result};

/// Width of every word vector.
pub const EMBEDDING_DIM: usize = 300;

const UNIT_SALT: u64 = 0xb9e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProviderKind {
    WordSubword,
    BpeCombined,
    Fallback,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::WordSubword => "word_subword",
            ProviderKind::BpeCombined => "bpe_combined",
            ProviderKind::Fallback => "fallback",
        }
    }

    pub fn is_trainable(self) -> bool {
        self == ProviderKind::BpeCombined
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word_subword" => Ok(ProviderKind::WordSubword),
            "bpe_combined" => Ok(ProviderKind::BpeCombined),
            "fallback" => Ok(ProviderKind::Fallback),
            other => Err(Error::InvalidConfig(format!(
                "unknown embedding provider `{other}`"
            ))),
        }
    }
}

/// A 300-dimensional finite word vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVector(Vec<f64>);

impl WordVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::DimensionMismatch {
                expected: EMBEDDING_DIM,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("word vector"));
        }
        Ok(WordVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence {
    rows: Vec<Vec<f64>>,
}

impl EmbeddedSequence {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("embedded sequence has no tokens".into()));
        }
        let dim = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
        Ok(EmbeddedSequence { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

/// Unit vectors and combiner traces for every token of a sequence, kept so
/// the combiner can be trained.
#[derive(Debug, Clone)]
pub struct SubwordTrace {
    pub tokens: Vec<CombinerTrace>,
}

#[derive(Debug, Clone)]
struct BpeEmbedder {
    segmenter: BpeSegmenter,
    units: Option<VectorTable>,
    unit_fallback: FallbackEmbedder,
}

#[derive(Debug, Clone)]
enum Inner {
    Fallback(FallbackEmbedder),
    WordSubword(Option<VectorTable>),
    Bpe(BpeEmbedder),
}

#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    inner: Inner,
}

impl EmbeddingProvider {
    pub fn fallback() -> Self {
        EmbeddingProvider {
            inner: Inner::Fallback(FallbackEmbedder::new(EMBEDDING_DIM)),
        }
    }

    /// A word-level provider with no vectors loaded yet; every lookup fails
    /// with [`Error::ProviderUnavailable`].
    pub fn word_subword_unloaded() -> Self {
        EmbeddingProvider {
            inner: Inner::WordSubword(None),
        }
    }

    pub fn word_subword(table: VectorTable) -> Result<Self> {
        check_dim(&table)?;
        Ok(EmbeddingProvider {
            inner: Inner::WordSubword(Some(table)),
        })
    }

    /// Byte-pair provider. Without a unit table every unit gets a hashed vector.
    pub fn bpe_combined(segmenter: BpeSegmenter, units: Option<VectorTable>) -> Result<Self> {
        if let Some(t) = &units {
            check_dim(t)?;
        }
        Ok(EmbeddingProvider {
            inner: Inner::Bpe(BpeEmbedder {
                segmenter,
                units,
                unit_fallback: FallbackEmbedder::with_salt(EMBEDDING_DIM, UNIT_SALT),
            }),
        })
    }

    /// Load a pretrained vector file (text or binary form) for `kind`.
    /// The fallback kind needs no file and ignores `path`.
    pub fn load_pretrained_vectors(path: &Path, kind: ProviderKind) -> Result<Self> {
        match kind {
            ProviderKind::Fallback => Ok(Self::fallback()),
            ProviderKind::WordSubword => Self::word_subword(VectorTable::load(path)?),
            ProviderKind::BpeCombined => {
                Self::bpe_combined(BpeSegmenter::bundled(), Some(VectorTable::load(path)?))
            }
        }
    }

    /// Build a provider from optional files, as the command line does.
    pub fn from_parts(
        kind: ProviderKind,
        vectors: Option<&Path>,
        merges: Option<&Path>,
    ) -> Result<Self> {
        match kind {
            ProviderKind::Fallback => Ok(Self::fallback()),
            ProviderKind::WordSubword => match vectors {
                Some(p) => Self::load_pretrained_vectors(p, kind),
                None => Ok(Self::word_subword_unloaded()),
            },
            ProviderKind::BpeCombined => {
                let segmenter = match merges {
                    Some(p) => BpeSegmenter::load(p)?,
                    None => BpeSegmenter::bundled(),
                };
                let units = vectors.map(VectorTable::load).transpose()?;
                Self::bpe_combined(segmenter, units)
            }
        }
    }

    pub fn kind(&self) -> ProviderKind {
        match self.inner {
            Inner::Fallback(_) => ProviderKind::Fallback,
            Inner::WordSubword(_) => ProviderKind::WordSubword,
            Inner::Bpe(_) => ProviderKind::BpeCombined,
        }
    }

    pub fn dimension(&self) -> usize {
        EMBEDDING_DIM
    }

    pub fn trainable(&self) -> bool {
        self.kind().is_trainable()
    }

    /// Byte-pair units of `token`; other providers use the token itself.
    pub fn subword_segment(&self, token: &str) -> Vec<String> {
        match &self.inner {
            Inner::Bpe(b) => b.segmenter.segment(token),
            _ => vec![token.to_string()],
        }
    }

    /// Frozen unit vectors for a token (byte-pair provider only).
    pub fn unit_vectors(&self, token: &str) -> Result<Vec<Vec<f64>>> {
        let Inner::Bpe(b) = &self.inner else {
            return Err(Error::InvalidConfig(
                "unit vectors exist only for the bpe_combined provider".into(),
            ));
        };
        Ok(b.segmenter
            .segment(token)
            .iter()
            .map(|u| match b.units.as_ref().and_then(|t| t.get(u)) {
                Some(v) => v.to_vec(),
                None => b.unit_fallback.embed(u),
            })
            .collect())
    }

    /// Embed one token. `combiner` is required for the byte-pair provider and
    /// ignored otherwise.
    pub fn embed_word(
        &self,
        token: &str,
        combiner: Option<&SubwordCombinerParams>,
    ) -> Result<WordVector> {
        if token.is_empty() {
            return Err(Error::EmptyInput("empty token".into()));
        }
        let values = match &self.inner {
            Inner::Fallback(f) => f.embed(token),
            Inner::WordSubword(None) => {
                return Err(Error::ProviderUnavailable(
                    "word_subword vectors are not loaded".into(),
                ))
            }
            Inner::WordSubword(Some(table)) => word_subword_lookup(table, token),
            Inner::Bpe(_) => {
                let combiner = require_combiner(combiner)?;
                combiner.combine(&self.unit_vectors(token)?)?
            }
        };
        WordVector::new(values)
    }

    pub fn embed_sequence(
        &self,
        tokens: &[String],
        combiner: Option<&SubwordCombinerParams>,
    ) -> Result<EmbeddedSequence> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("cannot embed an empty token list".into()));
        }
        let rows = tokens
            .iter()
            .map(|t| self.embed_word(t, combiner).map(WordVector::into_inner))
            .collect::<Result<Vec<_>>>()?;
        EmbeddedSequence::new(rows)
    }

    /// Like [`embed_sequence`](Self::embed_sequence) but also returns the
    /// combiner traces needed for training the byte-pair combiner.
    pub fn embed_sequence_traced(
        &self,
        tokens: &[String],
        combiner: &SubwordCombinerParams,
    ) -> Result<(EmbeddedSequence, SubwordTrace)> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("cannot embed an empty token list".into()));
        }
        let mut rows = Vec::with_capacity(tokens.len());
        let mut traces = Vec::with_capacity(tokens.len());
        for t in tokens {
            let (v, trace) = combiner.combine_traced(&self.unit_vectors(t)?)?;
            rows.push(v);
            traces.push(trace);
        }
        Ok((EmbeddedSequence::new(rows)?, SubwordTrace { tokens: traces }))
    }
}

fn check_dim(table: &VectorTable) -> Result<()> {
    if table.dim() != EMBEDDING_DIM {
        return Err(Error::DimensionMismatch {
            expected: EMBEDDING_DIM,
            found: table.dim(),
        });
    }
    Ok(())
}

fn require_combiner(c: Option<&SubwordCombinerParams>) -> Result<&SubwordCombinerParams> {
    c.ok_or_else(|| {
        Error::ProviderUnavailable("bpe_combined needs subword combiner parameters".into())
    })
}

fn word_subword_lookup(table: &VectorTable, token: &str) -> Vec<f64> {
    if let Some(v) = table.get(token) {
        return v.to_vec();
    }
    let grams = fallback::char_ngrams(token);
    let mut sum = vec![0.0; table.dim()];
    let mut hits = 0usize;
    for g in &grams {
        if let Some(v) = table.get(g) {
            hits += 1;
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
    }
    if hits == 0 {
        return FallbackEmbedder::new(table.dim()).embed(token);
    }
    sum.iter_mut().for_each(|s| *s /= hits as f64);
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_table() -> VectorTable {
        let mut t = VectorTable::new(EMBEDDING_DIM);
        t.insert("Baker", &vec![0.5; EMBEDDING_DIM]).unwrap();
        t.insert("<NW", &vec![1.0; EMBEDDING_DIM]).unwrap();
        t
    }

    #[test]
    fn fallback_provider() {
        let p = EmbeddingProvider::fallback();
        assert_eq!(p.kind(), ProviderKind::Fallback);
        assert!(!p.trainable());
        let a = p.embed_word("Baker", None).unwrap();
        assert_eq!(a.values().len(), 300);
        assert_eq!(a, p.embed_word("Baker", None).unwrap());
        assert_ne!(a, p.embed_word("baker", None).unwrap());
        assert!(matches!(p.embed_word("", None), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn unloaded_word_provider_fails() {
        let p = EmbeddingProvider::word_subword_unloaded();
        assert!(matches!(
            p.embed_word("Baker", None),
            Err(Error::ProviderUnavailable(_))
        ));
    }

    #[test]
    fn word_provider_in_and_out_of_vocabulary() {
        let p = EmbeddingProvider::word_subword(small_table()).unwrap();
        assert_eq!(p.embed_word("Baker", None).unwrap().values()[0], 0.5);
        // "NW16XE" shares the "<NW" n-gram with the table
        let oov = p.embed_word("NW16XE", None).unwrap();
        assert_eq!(oov.values()[0], 1.0);
        let unseen = p.embed_word("Zzyzx", None).unwrap();
        assert!(unseen.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn word_provider_rejects_wrong_dimension() {
        assert!(matches!(
            EmbeddingProvider::word_subword(VectorTable::new(100)),
            Err(Error::DimensionMismatch { expected: 300, found: 100 })
        ));
    }

    #[test]
    fn sequence_embedding() {
        let p = EmbeddingProvider::fallback();
        let toks: Vec<String> = ["221", "B", "Baker", "B"].iter().map(|s| s.to_string()).collect();
        let seq = p.embed_sequence(&toks, None).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(seq.dim(), 300);
        assert_eq!(seq.row(1), seq.row(3));
        assert!(matches!(p.embed_sequence(&[], None), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bpe_provider_needs_combiner() {
        let p = EmbeddingProvider::bpe_combined(BpeSegmenter::bundled(), None).unwrap();
        assert!(p.trainable());
        assert!(matches!(
            p.embed_word("street", None),
            Err(Error::ProviderUnavailable(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = SubwordCombinerParams::init(300, 300, &mut rng);
        let v = p.embed_word("street", Some(&c)).unwrap();
        assert_eq!(v, p.embed_word("street", Some(&c)).unwrap());
        let toks = vec!["rue".to_string(), "Victoria".to_string()];
        let (seq, trace) = p.embed_sequence_traced(&toks, &c).unwrap();
        assert_eq!(seq, p.embed_sequence(&toks, Some(&c)).unwrap());
        assert_eq!(trace.tokens.len(), 2);
    }

    #[test]
    fn load_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.vec");
        small_table().save_text(&good).unwrap();
        let p = EmbeddingProvider::load_pretrained_vectors(&good, ProviderKind::WordSubword).unwrap();
        assert_eq!(p.dimension(), 300);

        let bad_dim = dir.path().join("dim100.vec");
        let mut t = VectorTable::new(100);
        t.insert("a", &vec![0.0; 100]).unwrap();
        t.save_text(&bad_dim).unwrap();
        assert!(matches!(
            EmbeddingProvider::load_pretrained_vectors(&bad_dim, ProviderKind::WordSubword),
            Err(Error::DimensionMismatch { .. })
        ));

        let truncated = dir.path().join("trunc.vec");
        let text = small_table().to_text();
        std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            EmbeddingProvider::load_pretrained_vectors(&truncated, ProviderKind::WordSubword),
            Err(Error::BadFormat(_))
        ));

        let bin = dir.path().join("good.bin");
        std::fs::write(&bin, small_table().to_binary()).unwrap();
        let p = EmbeddingProvider::load_pretrained_vectors(&bin, ProviderKind::WordSubword).unwrap();
        assert_eq!(p.embed_word("Baker", None).unwrap().values()[3], 0.5);
    }
}
