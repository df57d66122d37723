//! Tournament configuration files (TOML).
//!
//! ```toml
//! tournament_id = "classic-p10"
//! termination_probability = 0.10
//! phases = 5
//! master_seed = 42
//! mutation = false
//! output_dir = "runs/classic-p10"
//!
//! [roster]
//! TitForTat = 2
//! Gemini = 2
//!
//! [providers.Gemini]
//! provider = "gemini-compatible"
//! model_name = "gemini-2.5-flash"
//! api_key_env = "GEMINI_API_KEY"
//! ```
//!
//! Roster keys are classic strategy names (or their table abbreviations) or
//! labels of LLM strategies, each of which needs a `[providers.<label>]`
//! table. `target_size` defaults to the roster total.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, PersistError};
use crate::evolution::TournamentSettings;
use crate::game::{MatchConfig, PayoffMatrix, StrategyRegistry};
use crate::llm::{LlmClient, LlmFactory, ProviderConfig};
use crate::population::{Population, StrategyId};
use crate::strategies::ClassicParams;

fn default_phases() -> u32 {
    5
}
fn default_hard_cap() -> u32 {
    30
}
fn default_window() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TournamentConfig {
    pub tournament_id: String,
    pub termination_probability: f64,
    #[serde(default = "default_phases")]
    pub phases: u32,
    #[serde(default)]
    pub target_size: Option<u32>,
    pub master_seed: u64,
    #[serde(default)]
    pub mutation: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_hard_cap")]
    pub hard_cap: u32,
    #[serde(default = "default_window")]
    pub history_window: usize,
    #[serde(default)]
    pub payoffs: PayoffMatrix,
    #[serde(default)]
    pub classic: ClassicParams,
    pub roster: BTreeMap<String, u32>,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
}

impl TournamentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: TournamentConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative mock fixture paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PersistError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = TournamentConfig::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.providers.values_mut() {
            if let Some(fixture) = &p.mock_fixture {
                if fixture.is_relative() {
                    p.mock_fixture = Some(base.join(fixture));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            termination_probability: self.termination_probability,
            hard_cap: self.hard_cap,
            history_window: self.history_window,
            rng_seed: self.master_seed,
            payoffs: self.payoffs,
        }
    }

    /// Roster with keys resolved to canonical strategy ids.
    pub fn initial_population(&self) -> Result<Population, ConfigError> {
        let mut counts = Vec::with_capacity(self.roster.len());
        for (label, n) in &self.roster {
            counts.push((StrategyId::new(label)?, *n));
        }
        let total: u32 = counts.iter().map(|(_, n)| n).sum();
        Ok(Population::with_target(counts, self.target_size.unwrap_or(total)))
    }

    /// Provider configs keyed by canonical strategy id.
    pub fn llm_strategies(&self) -> Result<BTreeMap<StrategyId, &ProviderConfig>, ConfigError> {
        self.providers
            .iter()
            .map(|(label, p)| Ok((StrategyId::new(label)?, p)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.match_config().validate()?;
        if self.phases < 1 {
            return Err(ConfigError::Invalid("phases must be at least 1".into()));
        }
        if self.tournament_id.trim().is_empty() || self.tournament_id.contains([',', '"', '\n', '/', '\\']) {
            return Err(ConfigError::Invalid(format!("unusable tournament_id {:?}", self.tournament_id)));
        }
        let pop = self.initial_population()?;
        if pop.total() != pop.target_size() {
            return Err(ConfigError::Invalid(format!(
                "roster holds {} agents but target_size is {}",
                pop.total(),
                pop.target_size()
            )));
        }
        if pop.total() < 2 {
            return Err(ConfigError::Invalid("roster needs at least two agents".into()));
        }
        let llms = self.llm_strategies()?;
        for (id, p) in &llms {
            if id.classic().is_some() {
                return Err(ConfigError::Invalid(format!("provider label {id} names a classic strategy")));
            }
            p.validate()?;
        }
        for (id, _) in pop.iter() {
            if id.classic().is_none() && !llms.contains_key(id) {
                return Err(ConfigError::Invalid(format!("roster entry {id} is neither classic nor a provider")));
            }
        }
        let p = self.classic.generous_forgiveness;
        let q = self.classic.random_cooperation;
        let e = self.classic.bayesian_epsilon;
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) || !(e > 0.0 && e < 1.0) {
            return Err(ConfigError::Invalid("classic strategy parameters out of range".into()));
        }
        Ok(())
    }

    pub fn settings(&self) -> Result<TournamentSettings, ConfigError> {
        Ok(TournamentSettings {
            tournament_id: self.tournament_id.clone(),
            initial: self.initial_population()?,
            match_config: self.match_config(),
            phases: self.phases,
            mutation: self.mutation,
        })
    }

    /// Registry with every classic strategy plus one client per provider.
    /// Fails if an API key is missing.
    pub fn registry(&self) -> Result<StrategyRegistry, Error> {
        let mut registry = StrategyRegistry::with_classics(self.classic);
        for (id, p) in self.llm_strategies()? {
            let client = LlmClient::from_config(p).map_err(|e| ConfigError::Invalid(format!("{id}: {e}")))?;
            registry.register(id, Arc::new(LlmFactory { client }));
        }
        Ok(registry)
    }

    pub fn match_count(&self) -> Result<u64, ConfigError> {
        Ok(self.initial_population()?.match_count())
    }
}
