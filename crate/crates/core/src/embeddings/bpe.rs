//! Byte-pair segmentation driven by a ranked merge table.
//!
//! Units follow the SentencePiece convention: the first unit of a word carries
//! the `▁` word-start marker.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const WORD_START: char = '▁';

const BUNDLED_MERGES: &str = include_str!("../../data/bpe_merges.txt");

#[derive(Debug, Clone)]
pub struct BpeSegmenter {
    ranks: HashMap<(String, String), usize>,
}

impl BpeSegmenter {
    /// The small merge table shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_MERGES).expect("bundled merge table is valid")
    }

    /// One `left right` pair per line, highest priority first. `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ranks = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => {
                    let rank = ranks.len();
                    ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
                }
                _ => {
                    return Err(Error::BadFormat(format!(
                        "merge table line {}: expected two symbols",
                        i + 1
                    )))
                }
            }
        }
        Ok(BpeSegmenter { ranks })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn num_merges(&self) -> usize {
        self.ranks.len()
    }

    pub fn segment(&self, token: &str) -> Vec<String> {
        let mut symbols: Vec<String> = token.chars().map(String::from).collect();
        if symbols.is_empty() {
            return symbols;
        }
        symbols[0].insert(0, WORD_START);
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self.ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }
}

/// Undo a segmentation: concatenate and drop the word-start marker.
pub fn join_units(units: &[String]) -> String {
    let joined: String = units.concat();
    joined
        .strip_prefix(WORD_START)
        .map(str::to_string)
        .unwrap_or(joined)
}
