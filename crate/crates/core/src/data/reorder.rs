use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tags::{AddressSample, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbePattern {
    A,
    B,
}

/// Rearrange the token groups of `sample` so that classes appear in `pattern`
/// order. Tokens of one class keep their relative order.
pub fn reorder_to_pattern(sample: &AddressSample, pattern: &[Tag]) -> Result<AddressSample> {
    for (i, t) in pattern.iter().enumerate() {
        if pattern[..i].contains(t) {
            return Err(Error::PatternMismatch(format!("{t} appears twice in the pattern")));
        }
    }
    if let Some(t) = sample.tags.iter().find(|t| !pattern.contains(t)) {
        return Err(Error::PatternMismatch(format!("{t} is not covered by the pattern")));
    }
    let mut tokens = Vec::with_capacity(sample.len());
    let mut tags = Vec::with_capacity(sample.len());
    for &class in pattern {
        for (w, &t) in sample.tokens.iter().zip(&sample.tags) {
            if t == class {
                tokens.push(w.clone());
                tags.push(t);
            }
        }
    }
    Ok(AddressSample::new(tokens, tags, sample.country.clone()))
}

/// Like [`reorder_probe`] but also reports which pattern each sample got.
pub fn reorder_probe_assigned(
    samples: &[AddressSample],
    pattern_a: &[Tag],
    pattern_b: &[Tag],
    rng_seed: u64,
) -> Result<Vec<(AddressSample, ProbePattern)>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut assigned = vec![ProbePattern::B; samples.len()];
    for &i in &order[..samples.len().div_ceil(2)] {
        assigned[i] = ProbePattern::A;
    }
    samples
        .iter()
        .zip(assigned)
        .map(|(s, p)| {
            let pattern = match p {
                ProbePattern::A => pattern_a,
                ProbePattern::B => pattern_b,
            };
            Ok((reorder_to_pattern(s, pattern)?, p))
        })
        .collect()
}

/// Reorder half of the samples (rounded up) into `pattern_a` and the rest into
/// `pattern_b`, choosing the halves at random. Output keeps input order.
pub fn reorder_probe(
    samples: &[AddressSample],
    pattern_a: &[Tag],
    pattern_b: &[Tag],
    rng_seed: u64,
) -> Result<Vec<AddressSample>> {
    Ok(reorder_probe_assigned(samples, pattern_a, pattern_b, rng_seed)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::Tag::*;
    use proptest::prelude::*;

    const A: [Tag; 4] = [StreetNumber, StreetName, Municipality, Province];
    const B: [Tag; 4] = [Province, Municipality, StreetName, StreetNumber];

    fn kr() -> AddressSample {
        AddressSample::from_address(
            "Seoul Gangnam Teheran ro 152",
            vec![Province, Municipality, StreetName, StreetName, StreetNumber],
            "KR",
        )
    }

    #[test]
    fn reverses_class_blocks() {
        let out = reorder_to_pattern(&kr(), &A).unwrap();
        assert_eq!(out.address(), "152 Teheran ro Gangnam Seoul");
        assert_eq!(out.tags, vec![StreetNumber, StreetName, StreetName, Municipality, Province]);
        assert_eq!(reorder_to_pattern(&kr(), &B).unwrap(), kr());
    }

    #[test]
    fn missing_class_in_pattern() {
        assert!(matches!(
            reorder_to_pattern(&kr(), &[StreetName, StreetNumber]),
            Err(Error::PatternMismatch(_))
        ));
        assert!(reorder_to_pattern(&kr(), &[Province, Province]).is_err());
    }

    #[test]
    fn equal_halves() {
        let s = vec![kr(); 6000];
        let out = reorder_probe_assigned(&s, &A, &B, 3).unwrap();
        let a = out.iter().filter(|(_, p)| *p == ProbePattern::A).count();
        assert_eq!(a, 3000);
        for (x, p) in &out {
            let expected = if *p == ProbePattern::A { &A } else { &B };
            assert_eq!(x, &reorder_to_pattern(&kr(), expected).unwrap());
        }
    }

    proptest! {
        #[test]
        fn conserves_token_tag_pairs(v in prop::collection::vec((0usize..4, "[a-z]{1,5}"), 1..10), seed in any::<u64>()) {
            let (tags, toks): (Vec<Tag>, Vec<String>) = v.into_iter().map(|(t, w)| (A[t], w)).unzip();
            let s = AddressSample::new(toks, tags, "KR");
            let out = reorder_probe(std::slice::from_ref(&s), &A, &B, seed).unwrap();
            let mut before: Vec<(String, Tag)> = s.tokens.iter().cloned().zip(s.tags.iter().copied()).collect();
            let mut after: Vec<(String, Tag)> = out[0].tokens.iter().cloned().zip(out[0].tags.iter().copied()).collect();
            before.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.index().cmp(&b.1.index())));
            after.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.index().cmp(&b.1.index())));
            prop_assert_eq!(before, after);
        }
    }
}
