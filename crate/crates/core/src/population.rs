//! Strategy identities and integer population counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// The ten hand-coded strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassicStrategy {
    TitForTat,
    GrimTrigger,
    WinStayLoseShift,
    GenerousTFT,
    SuspiciousTFT,
    Prober,
    Random,
    Gradual,
    Alternator,
    Bayesian,
}

impl ClassicStrategy {
    pub const ALL: [ClassicStrategy; 10] = [
        ClassicStrategy::TitForTat,
        ClassicStrategy::GrimTrigger,
        ClassicStrategy::WinStayLoseShift,
        ClassicStrategy::GenerousTFT,
        ClassicStrategy::SuspiciousTFT,
        ClassicStrategy::Prober,
        ClassicStrategy::Random,
        ClassicStrategy::Gradual,
        ClassicStrategy::Alternator,
        ClassicStrategy::Bayesian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassicStrategy::TitForTat => "TitForTat",
            ClassicStrategy::GrimTrigger => "GrimTrigger",
            ClassicStrategy::WinStayLoseShift => "WinStayLoseShift",
            ClassicStrategy::GenerousTFT => "GenerousTFT",
            ClassicStrategy::SuspiciousTFT => "SuspiciousTFT",
            ClassicStrategy::Prober => "Prober",
            ClassicStrategy::Random => "Random",
            ClassicStrategy::Gradual => "Gradual",
            ClassicStrategy::Alternator => "Alternator",
            ClassicStrategy::Bayesian => "Bayesian",
        }
    }

    /// Column abbreviation used in population tables.
    pub fn abbreviation(self) -> &'static str {
        match self {
            ClassicStrategy::TitForTat => "TFT",
            ClassicStrategy::GrimTrigger => "Grim",
            ClassicStrategy::WinStayLoseShift => "WSLS",
            ClassicStrategy::GenerousTFT => "GTFT",
            ClassicStrategy::SuspiciousTFT => "STFT",
            ClassicStrategy::Prober => "Prob",
            ClassicStrategy::Random => "Rand",
            ClassicStrategy::Gradual => "Grad",
            ClassicStrategy::Alternator => "Alt",
            ClassicStrategy::Bayesian => "Bayes",
        }
    }

    pub fn id(self) -> StrategyId {
        StrategyId(self.name().to_string())
    }

    /// Accepts the canonical name, the table abbreviation, or a few common
    /// spellings ("TFT", "Pavlov", "Grim Trigger", ...), case-insensitively.
    pub fn parse(text: &str) -> Option<ClassicStrategy> {
        let key: String = text
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let found = match key.as_str() {
            "titfortat" | "tft" => ClassicStrategy::TitForTat,
            "grimtrigger" | "grim" | "trigger" | "gt" => ClassicStrategy::GrimTrigger,
            "winstayloseshift" | "wsls" | "pavlov" => {
                ClassicStrategy::WinStayLoseShift
            }
            "generoustft" | "generoustitfortat" | "gtft" => ClassicStrategy::GenerousTFT,
            "suspicioustft" | "suspicioustitfortat" | "stft" => ClassicStrategy::SuspiciousTFT,
            "prober" | "prob" => ClassicStrategy::Prober,
            "random" | "rand" => ClassicStrategy::Random,
            "gradual" | "grad" => ClassicStrategy::Gradual,
            "alternator" | "alt" => ClassicStrategy::Alternator,
            "bayesian" | "bayes" => ClassicStrategy::Bayesian,
            _ => return None,
        };
        Some(found)
    }
}

impl fmt::Display for ClassicStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identity of a strategy in a population: a classic strategy name or the
/// label of an LLM-backed agent (e.g. `Gemini`, `OpenAI`, `Anthropic`).
///
/// Ordering is lexicographic on the canonical name; every deterministic
/// tie-break in the crate relies on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyId(String);

/// Short names used for the LLM columns of population tables.
const LLM_ABBREVIATIONS: [(&str, &str); 1] = [("Gemini", "Gem")];

impl StrategyId {
    /// Resolves abbreviations and alternative spellings of classic strategies
    /// to their canonical name; any other non-empty label is kept verbatim.
    pub fn new(label: impl AsRef<str>) -> Result<Self, ConfigError> {
        let label = label.as_ref().trim();
        if label.is_empty() {
            return Err(ConfigError::Invalid("empty strategy id".into()));
        }
        if let Some(classic) = ClassicStrategy::parse(label) {
            return Ok(classic.id());
        }
        if let Some((full, _)) = LLM_ABBREVIATIONS.iter().find(|(_, abbr)| *abbr == label) {
            return Ok(StrategyId((*full).to_string()));
        }
        if label.contains(',') || label.contains('"') || label.contains('\n') {
            return Err(ConfigError::Invalid(format!("strategy id {label:?} contains a CSV delimiter")));
        }
        Ok(StrategyId(label.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn classic(&self) -> Option<ClassicStrategy> {
        ClassicStrategy::ALL.into_iter().find(|c| c.name() == self.0)
    }

    pub fn abbreviation(&self) -> &str {
        if let Some(c) = self.classic() {
            return c.abbreviation();
        }
        LLM_ABBREVIATIONS
            .iter()
            .find(|(full, _)| *full == self.0)
            .map(|(_, abbr)| *abbr)
            .unwrap_or(&self.0)
    }

    pub fn random() -> Self {
        ClassicStrategy::Random.id()
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for StrategyId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyId::new(s)
    }
}

impl From<ClassicStrategy> for StrategyId {
    fn from(c: ClassicStrategy) -> Self {
        c.id()
    }
}

/// Integer agent counts per strategy, `N_{i,t}`.
///
/// Strategies that went extinct keep a zero entry so that every phase of a
/// tournament shares the same strategy universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Population {
    counts: BTreeMap<StrategyId, u32>,
    target_size: u32,
}

impl Population {
    /// A population whose target size is the sum of the given counts.
    pub fn new(counts: impl IntoIterator<Item = (StrategyId, u32)>) -> Self {
        let mut map = BTreeMap::new();
        for (id, n) in counts {
            *map.entry(id).or_insert(0) += n;
        }
        let target_size = map.values().sum();
        Population { counts: map, target_size }
    }

    pub fn with_target(
        counts: impl IntoIterator<Item = (StrategyId, u32)>,
        target_size: u32,
    ) -> Self {
        let mut pop = Population::new(counts);
        pop.target_size = target_size;
        pop
    }

    pub fn count(&self, id: &StrategyId) -> u32 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn set_count(&mut self, id: StrategyId, count: u32) {
        self.counts.insert(id, count);
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn target_size(&self) -> u32 {
        self.target_size
    }

    /// All strategies in the universe, including extinct ones, in id order.
    pub fn strategies(&self) -> impl Iterator<Item = &StrategyId> {
        self.counts.keys()
    }

    /// `(id, count)` pairs in id order, including zero counts.
    pub fn iter(&self) -> impl Iterator<Item = (&StrategyId, u32)> {
        self.counts.iter().map(|(k, v)| (k, *v))
    }

    /// Strategies with at least one agent.
    pub fn present(&self) -> impl Iterator<Item = (&StrategyId, u32)> {
        self.iter().filter(|(_, n)| *n > 0)
    }

    /// Expands the population into agent instances, grouped by strategy in
    /// id order.
    pub fn instances(&self) -> Vec<StrategyId> {
        self.present()
            .flat_map(|(id, n)| std::iter::repeat_n(id.clone(), n as usize))
            .collect()
    }

    /// Ensures `id` is part of the universe (with count 0 if new).
    pub fn include(&mut self, id: StrategyId) {
        self.counts.entry(id).or_insert(0);
    }

    /// Number of round-robin matches among the current agents, `n(n-1)/2`.
    pub fn match_count(&self) -> u64 {
        round_robin_matches(self.total() as u64)
    }
}

/// `n(n-1)/2`.
pub fn round_robin_matches(agents: u64) -> u64 {
    agents * agents.saturating_sub(1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abbreviations_resolve_to_canonical_ids() {
        assert_eq!(StrategyId::new("WSLS").unwrap(), ClassicStrategy::WinStayLoseShift.id());
        assert_eq!(StrategyId::new("Rand").unwrap(), StrategyId::random());
        assert_eq!(StrategyId::new("Gem").unwrap().as_str(), "Gemini");
        assert_eq!(StrategyId::new("Gemini").unwrap().abbreviation(), "Gem");
        assert_eq!(StrategyId::new("OpenAI").unwrap().abbreviation(), "OpenAI");
        assert_eq!(StrategyId::new("Win-Stay, Lose-Shift").unwrap().as_str(), "WinStayLoseShift");
        assert!(StrategyId::new("  ").is_err());
        assert!(StrategyId::new("a,b").is_err());
    }

    #[test]
    fn every_classic_abbreviation_round_trips() {
        for c in ClassicStrategy::ALL {
            assert_eq!(StrategyId::new(c.abbreviation()).unwrap(), c.id());
            assert_eq!(StrategyId::new(c.name()).unwrap().classic(), Some(c));
        }
    }

    #[test]
    fn match_counts() {
        assert_eq!(round_robin_matches(24), 276);
        assert_eq!(round_robin_matches(2), 1);
        assert_eq!(round_robin_matches(20), 190);
        assert_eq!(round_robin_matches(1), 0);
        assert_eq!(round_robin_matches(0), 0);
    }

    #[test]
    fn instances_expand_in_id_order() {
        let pop = Population::new([
            (ClassicStrategy::TitForTat.id(), 2),
            (ClassicStrategy::Alternator.id(), 1),
            (ClassicStrategy::Random.id(), 0),
        ]);
        assert_eq!(pop.total(), 3);
        assert_eq!(pop.target_size(), 3);
        let names: Vec<_> = pop.instances().iter().map(|s| s.to_string()).collect();
        assert_eq!(names, ["Alternator", "TitForTat", "TitForTat"]);
        assert_eq!(pop.strategies().count(), 3);
    }
}
