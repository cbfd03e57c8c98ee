//! Dataset IO, batching and dataset synthesis.

mod incomplete;
pub mod manifest;
mod reorder;
pub mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::country::CountrySet;
use crate::error::{Error, Result};
use crate::tags::{validate_sample_in, AddressSample, Record, TagVocabulary, ValidationResult, Violation};

pub use incomplete::{
    build_incomplete_dataset, drop_classes, is_incomplete, make_incomplete_variant,
    make_incomplete_variant_with, IncompletePolicy, DROPPABLE,
};
pub use manifest::Manifest;
pub use reorder::{reorder_probe, reorder_probe_assigned, reorder_to_pattern, ProbePattern};

/// Placeholder written into padded token positions.
pub const PAD_TOKEN: &str = "<pad>";

/// Parse dataset records, one JSON object per line. Blank lines are skipped.
pub fn parse_dataset(text: &str, expected: Option<&CountrySet>) -> Result<Vec<AddressSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord { line_no, reason };
        let record: Record = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let sample = record.into_sample().map_err(|e| malformed(e.to_string()))?;
        let countries = expected.unwrap_or(CountrySet::standard());
        if let ValidationResult::Violations(vs) = validate_sample_in(&sample, countries) {
            for v in &vs {
                if let Violation::UnknownCountry(c) = v {
                    if expected.is_some() {
                        return Err(Error::UnknownCountry(c.clone()));
                    }
                } else {
                    return Err(malformed(v.to_string()));
                }
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Read a dataset file. With `expected`, every country must belong to that set.
pub fn load_dataset(path: &Path, expected: Option<&CountrySet>) -> Result<Vec<AddressSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, expected)
}

pub fn dataset_to_string(samples: &[AddressSample]) -> String {
    let mut s = String::new();
    for sample in samples {
        s.push_str(&serde_json::to_string(&sample.to_record()).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_dataset(path: &Path, samples: &[AddressSample]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(dataset_to_string(samples).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of the serialized dataset.
pub fn dataset_hash(samples: &[AddressSample]) -> String {
    hex(&Sha256::digest(dataset_to_string(samples).as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A per-label seed derived from a base seed, e.g. one stream per country.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Group samples by country, keeping first-appearance order of countries.
pub fn by_country(samples: &[AddressSample]) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match groups.iter_mut().find(|(c, _)| *c == s.country) {
            Some((_, v)) => v.push(i),
            None => groups.push((s.country.clone(), vec![i])),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub token_matrix: Vec<Vec<String>>,
    pub tag_matrix: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub countries: Vec<String>,
    pub mask: Vec<Vec<bool>>,
    /// Position of each row in the input sample list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    /// Strip padding and rebuild the samples of this batch.
    pub fn unbatch(&self) -> Vec<AddressSample> {
        (0..self.len())
            .map(|i| {
                let n = self.lengths[i];
                AddressSample::new(
                    self.token_matrix[i][..n].to_vec(),
                    self.tag_matrix[i][..n]
                        .iter()
                        .map(|&t| crate::tags::Tag::from_index(t).expect("real position"))
                        .collect(),
                    self.countries[i].clone(),
                )
            })
            .collect()
    }
}

/// Partition `n` sample positions into batches, optionally shuffled.
pub fn batch_order(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn make_batches(
    samples: &[AddressSample],
    batch_size: usize,
    vocab: &TagVocabulary,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    let pad = vocab.pad_index();
    Ok(batch_order(samples.len(), batch_size, shuffle_seed)?
        .into_iter()
        .map(|idx| {
            let max_len = idx.iter().map(|&i| samples[i].len()).max().unwrap_or(0);
            let mut b = Batch {
                token_matrix: Vec::with_capacity(idx.len()),
                tag_matrix: Vec::with_capacity(idx.len()),
                lengths: Vec::with_capacity(idx.len()),
                countries: Vec::with_capacity(idx.len()),
                mask: Vec::with_capacity(idx.len()),
                indices: idx.clone(),
            };
            for &i in &idx {
                let s = &samples[i];
                let n = s.len();
                let mut toks = s.tokens.clone();
                toks.resize(max_len, PAD_TOKEN.to_string());
                let mut tags = s.tag_indices();
                tags.resize(max_len, pad);
                b.token_matrix.push(toks);
                b.tag_matrix.push(tags);
                b.lengths.push(n);
                b.countries.push(s.country.clone());
                b.mask.push((0..max_len).map(|j| j < n).collect());
            }
            b
        })
        .collect())
}
