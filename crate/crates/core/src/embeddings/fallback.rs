//! Deterministic hashed character n-gram embedder.
//!
//! Every n-gram (n = 3..=6) of `<token>` is hashed with FNV-1a into one of
//! [`NUM_BUCKETS`] buckets; each bucket owns a fixed pseudo-random vector drawn
//! from a ChaCha stream keyed by the bucket id. The token vector is the mean of
//! its bucket vectors. No table is materialized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NUM_BUCKETS: u64 = 2_000_000;
pub const MIN_N: usize = 3;
pub const MAX_N: usize = 6;

const TABLE_SEED: u64 = 0x5eed_add7_a600_0001;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Character n-grams of `<token>`, n in `MIN_N..=MAX_N`. Never empty for a
/// non-empty token since the bracketed form has at least three characters.
pub fn char_ngrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut grams = Vec::new();
    for n in MIN_N..=MAX_N {
        if n > chars.len() {
            break;
        }
        for window in chars.windows(n) {
            grams.push(window.iter().collect());
        }
    }
    grams
}

#[derive(Debug, Clone)]
pub struct FallbackEmbedder {
    dim: usize,
    salt: u64,
}

impl FallbackEmbedder {
    pub fn new(dim: usize) -> Self {
        FallbackEmbedder { dim, salt: 0 }
    }

    /// A table independent from the default one, e.g. for subword units.
    pub fn with_salt(dim: usize, salt: u64) -> Self {
        FallbackEmbedder { dim, salt }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, gram: &str) -> u64 {
        fnv1a(gram.as_bytes()) % NUM_BUCKETS
    }

    pub fn bucket_vector(&self, bucket: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(TABLE_SEED ^ self.salt.rotate_left(32) ^ bucket);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn embed(&self, token: &str) -> Vec<f64> {
        let grams = char_ngrams(token);
        let mut out = vec![0.0; self.dim];
        for gram in &grams {
            let v = self.bucket_vector(self.bucket(gram));
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let n = grams.len() as f64;
        out.iter_mut().for_each(|x| *x /= n);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn ngrams_of_short_token() {
        assert_eq!(char_ngrams("B"), vec!["<B>".to_string()]);
        let grams = char_ngrams("ab");
        assert_eq!(grams, vec!["<ab", "ab>", "<ab>"]);
    }

    #[test]
    fn ngrams_are_char_based() {
        // multi-byte characters must not be split
        let grams = char_ngrams("Ré");
        assert!(grams.contains(&"<Ré".to_string()));
    }

    #[test]
    fn deterministic_and_case_sensitive() {
        let e = FallbackEmbedder::new(300);
        let a = e.embed("Baker");
        assert_eq!(a.len(), 300);
        assert_eq!(a, e.embed("Baker"));
        assert_ne!(a, e.embed("baker"));
        assert!(a.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn salted_tables_differ() {
        let a = FallbackEmbedder::new(8).embed("rue");
        let b = FallbackEmbedder::with_salt(8, 1).embed("rue");
        assert_ne!(a, b);
    }
}
