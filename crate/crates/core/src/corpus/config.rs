use serde::{Deserialize, Serialize};

use super::{CorpusError, MAX_PAGES};

/// Fractions of questions per reasoning type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningMix {
    pub single_hop: f64,
    pub multi_hop: f64,
    pub numerical: f64,
    /// Share of numerical questions that need arithmetic. The remainder is
    /// split evenly between counting and comparison.
    pub arithmetic_share: f64,
}

impl Default for ReasoningMix {
    fn default() -> Self {
        Self {
            single_hop: 0.507,
            multi_hop: 0.139,
            numerical: 1.0 - 0.507 - 0.139,
            arithmetic_share: 0.255,
        }
    }
}

/// Relative split sizes; scaled to the deck count with largest remainder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 10617.0, dev: 1652.0, test: 2215.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metric {
    pub name: String,
    /// Values are printed with a trailing '%'.
    pub percent: bool,
}

/// Word lists the templates draw from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    pub companies: Vec<String>,
    pub metrics: Vec<Metric>,
    pub topics: Vec<String>,
    pub cities: Vec<String>,
    pub people: Vec<String>,
    pub filler_titles: Vec<String>,
    pub filler_lines: Vec<String>,
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        let metric = |name: &str, percent| Metric { name: name.to_string(), percent };
        Self {
            companies: strings(&[
                "Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Soylent", "Stark",
                "Wayne", "Wonka", "Cyberdyne", "Tyrell", "Aperture", "Monarch", "Oscorp", "Nakatomi",
                "Virtucon", "Gekko", "Duff", "Krusty",
            ]),
            metrics: vec![
                metric("Revenue", false),
                metric("Sales", false),
                metric("Profit", false),
                metric("Users", false),
                metric("Employees", false),
                metric("Orders", false),
                metric("Share", true),
                metric("Growth", true),
                metric("Margin", true),
                metric("Churn", true),
            ],
            topics: strings(&[
                "Retail", "Energy", "Media", "Finance", "Health", "Travel", "Gaming", "Logistics",
            ]),
            cities: strings(&[
                "Paris", "Tokyo", "Berlin", "Austin", "Lagos", "Lima", "Oslo", "Seoul", "Dubai",
                "Boston", "Madrid", "Toronto",
            ]),
            people: strings(&[
                "Smith", "Garcia", "Tanaka", "Okafor", "Novak", "Silva", "Kim", "Rossi", "Dubois",
                "Jensen",
            ]),
            filler_titles: strings(&[
                "Agenda", "Key Takeaways", "Thank You", "Questions", "Methodology", "Next Steps",
            ]),
            filler_lines: strings(&[
                "market conditions remain stable",
                "customer focus drives results",
                "we invest in new channels",
                "teams work across regions",
                "data collected from annual filings",
                "partners expand our reach",
                "costs are under review",
                "priorities for the coming quarter",
            ]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_decks: usize,
    /// Slides per deck.
    pub pages_per_deck: usize,
    pub questions_per_deck: usize,
    pub splits: SplitRatios,
    pub mix: ReasoningMix,
    pub lexicon: Lexicon,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            num_decks: 50,
            pages_per_deck: 20,
            questions_per_deck: 6,
            splits: SplitRatios::default(),
            mix: ReasoningMix::default(),
            lexicon: Lexicon::default(),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Config { field: field.to_string(), message: message.into() }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let m = &self.mix;
        for (name, v) in [
            ("mix.single_hop", m.single_hop),
            ("mix.multi_hop", m.multi_hop),
            ("mix.numerical", m.numerical),
            ("mix.arithmetic_share", m.arithmetic_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(name, format!("{v} is outside [0, 1]")));
            }
        }
        let total = m.single_hop + m.multi_hop + m.numerical;
        if (total - 1.0).abs() > 1e-9 {
            return Err(config_err("mix", format!("fractions sum to {total}, expected 1")));
        }
        if !(2..=MAX_PAGES).contains(&self.pages_per_deck) {
            return Err(config_err("pages_per_deck", format!("must be in [2, {MAX_PAGES}]")));
        }
        let s = &self.splits;
        if [s.train, s.dev, s.test].iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(config_err("splits", "ratios must be finite and nonnegative"));
        }
        if s.train + s.dev + s.test <= 0.0 {
            return Err(config_err("splits", "ratios must not all be zero"));
        }
        let lx = &self.lexicon;
        if lx.companies.len() < 3 {
            return Err(config_err("lexicon.companies", "need at least 3 companies"));
        }
        if lx.metrics.is_empty() {
            return Err(config_err("lexicon.metrics", "need at least 1 metric"));
        }
        if lx.topics.is_empty() || lx.filler_titles.is_empty() || lx.filler_lines.is_empty() {
            return Err(config_err("lexicon", "topics, filler_titles and filler_lines must be non-empty"));
        }
        if lx.cities.len() < 3 || lx.people.len() < 3 {
            return Err(config_err("lexicon", "need at least 3 cities and 3 people"));
        }
        let single_word = lx
            .companies
            .iter()
            .chain(lx.cities.iter())
            .chain(lx.people.iter())
            .chain(lx.metrics.iter().map(|m| &m.name));
        for w in single_word {
            if w.is_empty() || !w.chars().all(|c| c.is_alphanumeric()) {
                return Err(config_err("lexicon", format!("{w:?} must be a single alphanumeric word")));
            }
        }
        Ok(())
    }
}
