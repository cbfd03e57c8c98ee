use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{by_country, derive_seed};
use crate::error::{Error, Result};
use crate::tags::{AddressSample, Tag};

/// Tag classes whose absence makes an address incomplete.
pub const DROPPABLE: [Tag; 4] = [Tag::StreetName, Tag::PostalCode, Tag::Municipality, Tag::Province];

/// An address is incomplete when it lacks at least one droppable class.
pub fn is_incomplete(sample: &AddressSample) -> bool {
    DROPPABLE.iter().any(|&t| !sample.has_tag(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IncompletePolicy {
    pub droppable: [Tag; 4],
    pub min_dropped: usize,
    pub rng_seed: u64,
}

impl IncompletePolicy {
    pub fn new(min_dropped: usize, rng_seed: u64) -> Result<Self> {
        if min_dropped == 0 || min_dropped > DROPPABLE.len() {
            return Err(Error::InvalidConfig(format!(
                "min_dropped must be in 1..=4, got {min_dropped}"
            )));
        }
        Ok(IncompletePolicy {
            droppable: DROPPABLE,
            min_dropped,
            rng_seed,
        })
    }

    /// Droppable classes present in `s` and the largest number that can go
    /// without emptying the address.
    fn candidates(&self, s: &AddressSample) -> (Vec<Tag>, usize) {
        let present: Vec<Tag> = self.droppable.iter().copied().filter(|&t| s.has_tag(t)).collect();
        let keeps_other = s.tags.iter().any(|t| !self.droppable.contains(t));
        let max = if keeps_other {
            present.len()
        } else {
            present.len().saturating_sub(1)
        };
        (present, max)
    }

    pub fn is_eligible(&self, s: &AddressSample) -> bool {
        let (_, max) = self.candidates(s);
        max >= self.min_dropped
    }
}

impl Default for IncompletePolicy {
    fn default() -> Self {
        IncompletePolicy::new(1, 0).unwrap()
    }
}

/// Remove every token of the given classes.
pub fn drop_classes(s: &AddressSample, classes: &[Tag]) -> Result<AddressSample> {
    if let Some(t) = classes.iter().find(|t| !DROPPABLE.contains(t)) {
        return Err(Error::CannotDrop(format!("{t} is not a droppable class")));
    }
    if !classes.iter().any(|&t| s.has_tag(t)) {
        return Err(Error::CannotDrop("none of the classes occur in the address".into()));
    }
    let (tokens, tags): (Vec<String>, Vec<Tag>) = s
        .tokens
        .iter()
        .zip(&s.tags)
        .filter(|(_, t)| !classes.contains(t))
        .map(|(w, &t)| (w.clone(), t))
        .unzip();
    if tokens.is_empty() {
        return Err(Error::CannotDrop("dropping would empty the address".into()));
    }
    Ok(AddressSample::new(tokens, tags, s.country.clone()))
}

/// Drop between `min_dropped` and all feasible droppable classes, chosen
/// uniformly, drawing from `rng`.
pub fn make_incomplete_variant_with<R: Rng>(
    s: &AddressSample,
    policy: &IncompletePolicy,
    rng: &mut R,
) -> Result<AddressSample> {
    let (present, max) = policy.candidates(s);
    if present.is_empty() {
        return Err(Error::CannotDrop("no droppable class in the address".into()));
    }
    if max < policy.min_dropped {
        return Err(Error::CannotDrop("dropping would empty the address".into()));
    }
    let k = rng.gen_range(policy.min_dropped..=max);
    let chosen: Vec<Tag> = index::sample(rng, present.len(), k)
        .into_iter()
        .map(|i| present[i])
        .collect();
    drop_classes(s, &chosen)
}

/// Deterministic in `policy.rng_seed`.
pub fn make_incomplete_variant(s: &AddressSample, policy: &IncompletePolicy) -> Result<AddressSample> {
    make_incomplete_variant_with(s, policy, &mut ChaCha8Rng::seed_from_u64(policy.rng_seed))
}

/// Per country, pick `train_n + holdout_n` distinct eligible samples and make
/// each incomplete. Countries keep their first-appearance order.
pub fn build_incomplete_dataset(
    samples: &[AddressSample],
    policy: &IncompletePolicy,
    train_n: usize,
    holdout_n: usize,
) -> Result<(Vec<AddressSample>, Vec<AddressSample>)> {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (country, idx) in by_country(samples) {
        let mut eligible: Vec<usize> = idx.into_iter().filter(|&i| policy.is_eligible(&samples[i])).collect();
        let needed = train_n + holdout_n;
        if eligible.len() < needed {
            return Err(Error::InsufficientData {
                country,
                needed,
                available: eligible.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(policy.rng_seed, &country));
        eligible.shuffle(&mut rng);
        for (j, &i) in eligible[..needed].iter().enumerate() {
            let v = make_incomplete_variant_with(&samples[i], policy, &mut rng)?;
            if j < train_n {
                train.push(v);
            } else {
                holdout.push(v);
            }
        }
    }
    Ok((train, holdout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::Tag::*;
    use proptest::prelude::*;

    fn baker() -> AddressSample {
        AddressSample::from_address(
            "221 B Baker Street London NW1 6XE",
            vec![StreetNumber, Unit, StreetName, StreetName, Municipality, PostalCode, PostalCode],
            "GB",
        )
    }

    #[test]
    fn drops_city_and_postal_code() {
        let out = drop_classes(&baker(), &[Municipality, PostalCode]).unwrap();
        assert_eq!(out.address(), "221 B Baker Street");
        assert_eq!(out.tags, vec![StreetNumber, Unit, StreetName, StreetName]);
        assert!(is_incomplete(&out));
    }

    #[test]
    fn street_only_sample() {
        let s = AddressSample::from_address("221 Baker", vec![StreetNumber, StreetName], "GB");
        let out = drop_classes(&s, &[StreetName]).unwrap();
        assert_eq!(out.address(), "221");
        let v = make_incomplete_variant(&s, &IncompletePolicy::default()).unwrap();
        assert_eq!(v.tags, vec![StreetNumber]);
    }

    #[test]
    fn cannot_drop() {
        let p = IncompletePolicy::default();
        let s = AddressSample::from_address("221 B", vec![StreetNumber, Unit], "GB");
        assert!(matches!(make_incomplete_variant(&s, &p), Err(Error::CannotDrop(_))));
        let only = AddressSample::from_address("London", vec![Municipality], "GB");
        assert!(matches!(make_incomplete_variant(&only, &p), Err(Error::CannotDrop(_))));
        assert!(drop_classes(&only, &[Municipality]).is_err());
        assert!(drop_classes(&baker(), &[Unit]).is_err());
        assert!(IncompletePolicy::new(0, 1).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = IncompletePolicy::new(1, 99).unwrap();
        assert_eq!(
            make_incomplete_variant(&baker(), &p).unwrap(),
            make_incomplete_variant(&baker(), &p).unwrap()
        );
    }

    #[test]
    fn dataset_split_sizes() {
        let s: Vec<AddressSample> = (0..3)
            .map(|i| {
                AddressSample::from_address(
                    &format!("{i} Main London"),
                    vec![StreetNumber, StreetName, Municipality],
                    "GB",
                )
            })
            .collect();
        let p = IncompletePolicy::default();
        let (tr, ho) = build_incomplete_dataset(&s, &p, 2, 1).unwrap();
        assert_eq!((tr.len(), ho.len()), (2, 1));
        let numbers: std::collections::HashSet<&String> =
            tr.iter().chain(&ho).map(|x| &x.tokens[0]).collect();
        assert_eq!(numbers.len(), 3);
        assert!(matches!(
            build_incomplete_dataset(&s, &p, 5, 0),
            Err(Error::InsufficientData { needed: 5, available: 3, .. })
        ));
    }

    fn arb_sample() -> impl Strategy<Value = AddressSample> {
        prop::collection::vec((0usize..8, "[a-z0-9]{1,6}"), 1..12).prop_map(|v| {
            let (tags, toks): (Vec<Tag>, Vec<String>) =
                v.into_iter().map(|(t, w)| (Tag::from_index(t).unwrap(), w)).unzip();
            AddressSample::new(toks, tags, "US")
        })
    }

    proptest! {
        #[test]
        fn variants_are_incomplete_and_aligned(s in arb_sample(), seed in any::<u64>()) {
            let p = IncompletePolicy::new(1, seed).unwrap();
            match make_incomplete_variant(&s, &p) {
                Ok(v) => {
                    prop_assert!(is_incomplete(&v));
                    prop_assert!(!v.is_empty());
                    prop_assert_eq!(v.tokens.len(), v.tags.len());
                    // whole classes vanish: every remaining class keeps all its tokens
                    for t in Tag::ALL {
                        let before = s.tags.iter().filter(|&&x| x == t).count();
                        let after = v.tags.iter().filter(|&&x| x == t).count();
                        prop_assert!(after == 0 || after == before);
                    }
                    prop_assert!(DROPPABLE.iter().any(|&t| s.has_tag(t) && !v.has_tag(t)));
                }
                Err(Error::CannotDrop(_)) => prop_assert!(!p.is_eligible(&s)),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
