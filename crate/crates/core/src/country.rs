//! Country identifiers and the training / zero-shot split.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const COUNTRY_TABLE: &str = include_str!("../data/countries.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Training,
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Country {
    pub code: String,
    pub name: String,
    pub split: Split,
}

/// Disjoint training and zero-shot country lists (ISO-3166 alpha-2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountrySet {
    training: Vec<String>,
    zero_shot: Vec<String>,
    names: Vec<(String, String)>,
}

impl CountrySet {
    /// The 20 training / 41 zero-shot split shipped with the crate.
    pub fn standard() -> &'static CountrySet {
        static SET: OnceLock<CountrySet> = OnceLock::new();
        SET.get_or_init(|| {
            CountrySet::parse_table(COUNTRY_TABLE).expect("bundled country table is valid")
        })
    }

    pub fn new(training: Vec<String>, zero_shot: Vec<String>) -> Result<Self> {
        if let Some(c) = training.iter().find(|c| zero_shot.contains(c)) {
            return Err(Error::InvalidConfig(format!(
                "country {c} is both a training and a zero-shot country"
            )));
        }
        Ok(CountrySet {
            training,
            zero_shot,
            names: Vec::new(),
        })
    }

    /// Parse a `code<TAB>name<TAB>split` table; `#` starts a comment line.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut training = Vec::new();
        let mut zero_shot = Vec::new();
        let mut names = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidConfig(format!(
                    "country table line {}: expected 3 tab separated fields",
                    i + 1
                )));
            }
            let code = fields[0].to_string();
            match fields[2] {
                "training" => training.push(code.clone()),
                "zero_shot" => zero_shot.push(code.clone()),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "country table line {}: unknown split `{other}`",
                        i + 1
                    )))
                }
            }
            names.push((fields[1].to_string(), code));
        }
        let mut set = CountrySet::new(training, zero_shot)?;
        set.names = names;
        Ok(set)
    }

    pub fn training(&self) -> &[String] {
        &self.training
    }

    pub fn zero_shot(&self) -> &[String] {
        &self.zero_shot
    }

    pub fn contains(&self, code: &str) -> bool {
        self.is_training(code) || self.is_zero_shot(code)
    }

    pub fn is_training(&self, code: &str) -> bool {
        self.training.iter().any(|c| c == code)
    }

    pub fn is_zero_shot(&self, code: &str) -> bool {
        self.zero_shot.iter().any(|c| c == code)
    }

    /// Normalize a country given either by code or by its English name.
    pub fn code_for(&self, name_or_code: &str) -> Result<String> {
        if self.contains(name_or_code) {
            return Ok(name_or_code.to_string());
        }
        self.names
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(name_or_code))
            .map(|(_, code)| code.clone())
            .ok_or_else(|| Error::UnknownCountry(name_or_code.to_string()))
    }

    pub fn name_of(&self, code: &str) -> Option<&str> {
        self.names
            .iter()
            .find(|(_, c)| c == code)
            .map(|(name, _)| name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_split_sizes() {
        let set = CountrySet::standard();
        assert_eq!(set.training().len(), 20);
        assert_eq!(set.zero_shot().len(), 41);
        for c in set.training() {
            assert!(!set.is_zero_shot(c));
        }
    }

    #[test]
    fn name_normalization() {
        let set = CountrySet::standard();
        assert_eq!(set.code_for("South Korea").unwrap(), "KR");
        assert_eq!(set.code_for("japan").unwrap(), "JP");
        assert_eq!(set.code_for("GB").unwrap(), "GB");
        assert_eq!(set.name_of("RE"), Some("Réunion"));
        assert!(set.code_for("Atlantis").is_err());
    }

    #[test]
    fn overlapping_sets_rejected() {
        assert!(CountrySet::new(vec!["US".into()], vec!["US".into()]).is_err());
    }
}
