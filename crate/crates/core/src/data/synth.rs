//! A small generative address grammar for experiments that cannot use the
//! real corpus. Street names, municipalities and provinces come from disjoint
//! pools; street numbers and postal codes are both digit strings. Suffixes,
//! provinces and postal prefixes lean towards the locale of each pattern and
//! pattern C draws from every pool.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tags::{AddressSample, Tag};

const STREET_NAMES: &[&str] = &[
    "Oak", "Maple", "Cedar", "Pine", "Elm", "Birch", "Willow", "Aspen", "Hill", "Lake", "River",
    "Brook", "Spring", "Meadow", "Forest", "Stone", "Lincoln", "Franklin", "Madison", "Jackson",
    "Baker", "Mill", "Church", "Park", "Teheran", "Sejong", "Yulgok", "Dosan",
];
const MUNICIPALITIES: &[&str] = &[
    "Clinton", "Salem", "Fairview", "Riverside", "Georgetown", "Ashland", "Milton", "Dover",
    "Arlington", "Auburn", "Bristol", "Chester", "Clayton", "Dayton", "Hudson", "Kingston",
    "Marion", "Newport", "Oxford", "Winchester", "Gangnam", "Jongno", "Mapo", "Haeundae",
    "Suwon", "Daejeon",
];
const SUFFIXES_A: &[&str] = &["Street", "Avenue", "Road", "Lane", "Drive", "Boulevard"];
const SUFFIXES_B: &[&str] = &["ro", "gil", "daero"];
const SUFFIXES_C: &[&str] = &[
    "Street", "Avenue", "Road", "Lane", "Drive", "Boulevard", "ro", "gil", "daero",
];
const PROVINCES_A: &[&str] = &[
    "Ontario", "Quebec", "Texas", "Ohio", "Oregon", "Nevada", "Vermont", "Alberta", "Manitoba",
];
const PROVINCES_B: &[&str] = &["Gyeonggi", "Busan", "Jeolla", "Gangwon", "Chungbuk", "Seoul"];
const PROVINCES_C: &[&str] = &[
    "Ontario", "Quebec", "Texas", "Ohio", "Oregon", "Nevada", "Vermont", "Alberta", "Manitoba",
    "Gyeonggi", "Busan", "Jeolla", "Gangwon", "Chungbuk", "Seoul",
];
const POSTAL_PREFIXES_A: &[&str] = &["100", "200", "331", "606", "941"];
const POSTAL_PREFIXES_B: &[&str] = &["035", "061", "135", "463", "614"];
const POSTAL_PREFIXES_C: &[&str] = &[
    "100", "200", "331", "606", "941", "035", "061", "135", "463", "614",
];
const ORIENTATIONS: &[&str] = &["North", "South", "East", "West"];

/// Address layouts of the toy grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// Number first, province and postal code last.
    A,
    /// Largest unit first: province, municipality, street, number.
    B,
    /// Street, number, postal code, municipality, province.
    C,
}

impl Pattern {
    /// Order in which the classes appear. Covers every tag so it can drive the reorder probe.
    pub fn class_order(self) -> [Tag; 8] {
        use Tag::*;
        match self {
            Pattern::A => [
                StreetNumber, StreetName, Orientation, Unit, Municipality, Province, PostalCode,
                GeneralDelivery,
            ],
            Pattern::B => [
                Province, Municipality, StreetName, Orientation, StreetNumber, Unit, PostalCode,
                GeneralDelivery,
            ],
            Pattern::C => [
                StreetName, Orientation, StreetNumber, Unit, PostalCode, Municipality, Province,
                GeneralDelivery,
            ],
        }
    }

    fn suffixes(self) -> &'static [&'static str] {
        match self {
            Pattern::A => SUFFIXES_A,
            Pattern::B => SUFFIXES_B,
            Pattern::C => SUFFIXES_C,
        }
    }

    fn provinces(self) -> &'static [&'static str] {
        match self {
            Pattern::A => PROVINCES_A,
            Pattern::B => PROVINCES_B,
            Pattern::C => PROVINCES_C,
        }
    }

    fn postal_prefixes(self) -> &'static [&'static str] {
        match self {
            Pattern::A => POSTAL_PREFIXES_A,
            Pattern::B => POSTAL_PREFIXES_B,
            Pattern::C => POSTAL_PREFIXES_C,
        }
    }

    /// Country code the pattern is generated under by default.
    pub fn country(self) -> &'static str {
        match self {
            Pattern::A => "US",
            Pattern::B => "KR",
            Pattern::C => "BE",
        }
    }
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

fn component<R: Rng>(tag: Tag, pattern: Pattern, rng: &mut R) -> Vec<String> {
    match tag {
        Tag::StreetNumber => vec![rng.gen_range(1..100).to_string()],
        Tag::StreetName => vec![
            pick(rng, STREET_NAMES).to_string(),
            pick(rng, pattern.suffixes()).to_string(),
        ],
        Tag::Unit => vec!["Apt".to_string(), rng.gen_range(1..40).to_string()],
        Tag::Municipality => vec![pick(rng, MUNICIPALITIES).to_string()],
        Tag::Province => vec![pick(rng, pattern.provinces()).to_string()],
        Tag::PostalCode => vec![format!(
            "{}{:02}",
            pick(rng, pattern.postal_prefixes()),
            rng.gen_range(0..100)
        )],
        Tag::Orientation => vec![pick(rng, ORIENTATIONS).to_string()],
        Tag::GeneralDelivery => vec!["GD".to_string()],
    }
}

/// How often the optional components appear. General delivery never occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grammar {
    pub unit_rate: f64,
    pub orientation_rate: f64,
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar {
            unit_rate: 0.2,
            orientation_rate: 0.15,
        }
    }
}

impl Grammar {
    /// Every address of a pattern has the same component layout.
    pub fn fixed() -> Self {
        Grammar {
            unit_rate: 0.0,
            orientation_rate: 0.0,
        }
    }

    pub fn generate_one<R: Rng>(&self, pattern: Pattern, country: &str, rng: &mut R) -> AddressSample {
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for tag in pattern.class_order() {
            let present = match tag {
                Tag::Unit => rng.gen_bool(self.unit_rate),
                Tag::Orientation => rng.gen_bool(self.orientation_rate),
                Tag::GeneralDelivery => false,
                _ => true,
            };
            if present {
                for w in component(tag, pattern, rng) {
                    tokens.push(w);
                    tags.push(tag);
                }
            }
        }
        AddressSample::new(tokens, tags, country)
    }

    pub fn generate(&self, pattern: Pattern, country: &str, n: usize, seed: u64) -> Vec<AddressSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.generate_one(pattern, country, &mut rng)).collect()
    }

    /// `n` samples alternating between patterns A and B, each under its own country.
    pub fn generate_two_patterns(&self, n: usize, seed: u64) -> Vec<AddressSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let p = if i % 2 == 0 { Pattern::A } else { Pattern::B };
                self.generate_one(p, p.country(), &mut rng)
            })
            .collect()
    }
}

/// One address under the default grammar.
pub fn generate_one<R: Rng>(pattern: Pattern, country: &str, rng: &mut R) -> AddressSample {
    Grammar::default().generate_one(pattern, country, rng)
}

pub fn generate(pattern: Pattern, country: &str, n: usize, seed: u64) -> Vec<AddressSample> {
    Grammar::default().generate(pattern, country, n, seed)
}

pub fn generate_two_patterns(n: usize, seed: u64) -> Vec<AddressSample> {
    Grammar::default().generate_two_patterns(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{is_incomplete, reorder_to_pattern};
    use crate::tags::validate_sample;

    #[test]
    fn samples_are_valid_and_complete() {
        for p in [Pattern::A, Pattern::B, Pattern::C] {
            for s in generate(p, p.country(), 200, 1) {
                assert!(validate_sample(&s).is_ok());
                assert!(!is_incomplete(&s));
                assert_eq!(reorder_to_pattern(&s, &p.class_order()).unwrap(), s);
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(Pattern::A, "US", 10, 3), generate(Pattern::A, "US", 10, 3));
        assert_ne!(generate(Pattern::A, "US", 10, 3), generate(Pattern::A, "US", 10, 4));
        let mixed = generate_two_patterns(4, 0);
        assert_eq!(mixed[0].country, "US");
        assert_eq!(mixed[1].country, "KR");
    }
}
