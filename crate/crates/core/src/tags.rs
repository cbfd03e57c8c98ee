//! Address component tags, the label vocabulary and the dataset record type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::country::CountrySet;
use crate::error::{Error, Result};

/// One of the eight address component labels.
///
/// The discriminant is the label index used by the model's output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    StreetNumber = 0,
    StreetName = 1,
    Unit = 2,
    Municipality = 3,
    Province = 4,
    PostalCode = 5,
    Orientation = 6,
    GeneralDelivery = 7,
}

/// Number of semantic tags the model predicts.
pub const NUM_TAGS: usize = 8;

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [
        Tag::StreetNumber,
        Tag::StreetName,
        Tag::Unit,
        Tag::Municipality,
        Tag::Province,
        Tag::PostalCode,
        Tag::Orientation,
        Tag::GeneralDelivery,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Tag> {
        Tag::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::StreetNumber => "StreetNumber",
            Tag::StreetName => "StreetName",
            Tag::Unit => "Unit",
            Tag::Municipality => "Municipality",
            Tag::Province => "Province",
            Tag::PostalCode => "PostalCode",
            Tag::Orientation => "Orientation",
            Tag::GeneralDelivery => "GeneralDelivery",
        }
    }
}

/// Case-sensitive lookup of a tag by its name.
pub fn tag_from_name(name: &str) -> Result<Tag> {
    Tag::ALL
        .iter()
        .copied()
        .find(|t| t.name() == name)
        .ok_or_else(|| Error::UnknownTag(name.to_string()))
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        tag_from_name(s)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Label space of the decoder: the eight tags plus BOS and PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: Vec<Tag>,
    bos_index: usize,
    pad_index: usize,
}

impl Default for TagVocabulary {
    fn default() -> Self {
        TagVocabulary {
            tags: Tag::ALL.to_vec(),
            bos_index: NUM_TAGS,
            pad_index: NUM_TAGS + 1,
        }
    }
}

impl TagVocabulary {
    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn bos_index(&self) -> usize {
        self.bos_index
    }

    pub fn pad_index(&self) -> usize {
        self.pad_index
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    /// Tags plus BOS and PAD.
    pub fn label_space(&self) -> usize {
        self.tags.len() + 2
    }

    /// Comma separated tag names in index order, as recorded in manifests.
    pub fn describe(&self) -> String {
        let names: Vec<&str> = self.tags.iter().map(|t| t.name()).collect();
        names.join(",")
    }
}

/// A tokenized address with its gold tags and source country.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSample {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    pub country: String,
}

/// Country code used for ad-hoc parsing input that has no known origin.
pub const UNKNOWN_COUNTRY: &str = "??";

impl AddressSample {
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>, country: impl Into<String>) -> Self {
        AddressSample {
            tokens,
            tags,
            country: country.into(),
        }
    }

    /// Build a sample from a whitespace separated address.
    pub fn from_address(address: &str, tags: Vec<Tag>, country: impl Into<String>) -> Self {
        AddressSample::new(
            address.split_whitespace().map(str::to_string).collect(),
            tags,
            country,
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn address(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn tag_indices(&self) -> Vec<usize> {
        self.tags.iter().map(|t| t.index()).collect()
    }

    /// Whether any token carries `tag`.
    pub fn has_tag(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }

    pub fn to_record(&self) -> Record {
        Record {
            address: self.address(),
            tags: self.tags.iter().map(|t| t.name().to_string()).collect(),
            country: self.country.clone(),
        }
    }
}

/// One line of the dataset file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub address: String,
    pub tags: Vec<String>,
    pub country: String,
}

impl Record {
    /// Convert into a sample; tokens are the whitespace separated fields of `address`.
    pub fn into_sample(self) -> Result<AddressSample> {
        let tags = self
            .tags
            .iter()
            .map(|t| tag_from_name(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(AddressSample::from_address(&self.address, tags, self.country))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptySequence,
    LengthMismatch { tokens: usize, tags: usize },
    EmptyToken { position: usize },
    UnknownCountry(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySequence => write!(f, "empty sequence"),
            Violation::LengthMismatch { tokens, tags } => {
                write!(f, "length mismatch: {tokens} tokens, {tags} tags")
            }
            Violation::EmptyToken { position } => write!(f, "empty token at position {position}"),
            Violation::UnknownCountry(c) => write!(f, "unknown country `{c}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationResult {
    Ok,
    Violations(Vec<Violation>),
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationResult::Ok)
    }
}

/// Check a sample against the record invariants, using the standard country split.
pub fn validate_sample(sample: &AddressSample) -> ValidationResult {
    validate_sample_in(sample, CountrySet::standard())
}

pub fn validate_sample_in(sample: &AddressSample, countries: &CountrySet) -> ValidationResult {
    let mut violations = Vec::new();
    if sample.tokens.is_empty() && sample.tags.is_empty() {
        violations.push(Violation::EmptySequence);
    } else if sample.tokens.len() != sample.tags.len() {
        violations.push(Violation::LengthMismatch {
            tokens: sample.tokens.len(),
            tags: sample.tags.len(),
        });
    }
    for (position, token) in sample.tokens.iter().enumerate() {
        if token.is_empty() {
            violations.push(Violation::EmptyToken { position });
        }
    }
    if sample.country != UNKNOWN_COUNTRY && !countries.contains(&sample.country) {
        violations.push(Violation::UnknownCountry(sample.country.clone()));
    }
    if violations.is_empty() {
        ValidationResult::Ok
    } else {
        ValidationResult::Violations(violations)
    }
}
