//! Pretrained vector files.
//!
//! Text form (the common `.vec` layout):
//!
//! ```text
//! <count> <dim>
//! <word> <v1> ... <v_dim>
//! ```
//!
//! Binary form: the magic `ADDRVEC1`, then `count` and `dim` as little-endian
//! `u64`, then per entry a little-endian `u32` byte length, the UTF-8 word and
//! `dim` little-endian `f32` values.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"ADDRVEC1";

#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<f64>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        VectorTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Insert or replace the vector for `word`.
    pub fn insert(&mut self, word: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(&i) = self.index.get(word) {
            self.values[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector);
        } else {
            self.index.insert(word.to_string(), self.words.len());
            self.words.push(word.to_string());
            self.values.extend_from_slice(vector);
        }
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::BadFormat("missing header line".into()))?;
        let mut fields = header.split_whitespace();
        let count: usize = parse_field(fields.next(), "count")?;
        let dim: usize = parse_field(fields.next(), "dim")?;
        if fields.next().is_some() {
            return Err(Error::BadFormat("header must be `<count> <dim>`".into()));
        }
        let mut table = VectorTable::new(dim);
        let mut row = Vec::with_capacity(dim);
        for n in 0..count {
            let line = lines.next().ok_or_else(|| {
                Error::BadFormat(format!("expected {count} vectors, file ends after {n}"))
            })?;
            // words may not contain the separator; values are space separated
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let word = parts
                .next()
                .ok_or_else(|| Error::BadFormat(format!("empty vector line {}", n + 2)))?;
            row.clear();
            for p in parts {
                let v: f64 = p.parse().map_err(|_| {
                    Error::BadFormat(format!("line {}: bad value `{p}`", n + 2))
                })?;
                row.push(v);
            }
            if row.len() != dim {
                return Err(Error::BadFormat(format!(
                    "line {}: expected {dim} values, found {}",
                    n + 2,
                    row.len()
                )));
            }
            table.insert(word, &row)?;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::BadFormat(format!(
                "more than the declared {count} vectors"
            )));
        }
        Ok(table)
    }

    pub fn parse_binary(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != BINARY_MAGIC {
            return Err(Error::BadFormat("missing binary magic".into()));
        }
        let count = cur.u64()? as usize;
        let dim = cur.u64()? as usize;
        let mut table = VectorTable::new(dim);
        let mut row = vec![0.0; dim];
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let word = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::BadFormat("word is not UTF-8".into()))?
                .to_string();
            for v in row.iter_mut() {
                *v = f64::from(cur.f32()?);
            }
            table.insert(&word, &row)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::BadFormat("trailing bytes after last vector".into()));
        }
        Ok(table)
    }

    /// Read either form, sniffing the binary magic.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::parse_binary(&bytes)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::BadFormat("vector file is not UTF-8".into()))?;
            Self::parse_text(&text)
        }
    }

    /// Text form; values use the shortest representation that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (i, word) in self.words.iter().enumerate() {
            out.push_str(word);
            for v in &self.values[i * self.dim..(i + 1) * self.dim] {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for (i, word) in self.words.iter().enumerate() {
            out.extend_from_slice(&(word.len() as u32).to_le_bytes());
            out.extend_from_slice(word.as_bytes());
            for v in &self.values[i * self.dim..(i + 1) * self.dim] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn parse_field(field: Option<&str>, what: &str) -> Result<usize> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::BadFormat(format!("header: bad or missing {what}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::BadFormat("truncated binary vector file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
