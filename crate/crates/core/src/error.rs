use std::path::PathBuf;

use thiserror::Error;

use crate::population::StrategyId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Why a single agent could not produce a move.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("agent failed after {attempts} attempt(s): {last_error}")]
    Failure { attempts: u32, last_error: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// A match that could not be completed. It is logged and left out of
/// fitness sums rather than scored.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("match {match_id} ({agent_a} vs {agent_b}) aborted in round {round}: {source}")]
pub struct MatchAborted {
    pub match_id: u32,
    pub agent_a: StrategyId,
    pub agent_b: StrategyId,
    pub round: u32,
    #[source]
    pub source: AgentError,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("a phase needs at least two agents, population has {0}")]
    TooFewAgents(u32),
    #[error("no agent factory registered for strategy {0}")]
    UnknownStrategy(StrategyId),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("phase log contains no completed moves")]
    EmptyPhase,
    #[error("every strategy's raw offspring count fell below 0.5")]
    AllExtinct,
    #[error("no fitness value for present strategy {0}")]
    MissingFitness(StrategyId),
    #[error("random strategy is not registered for mutation")]
    NoRandomStrategy,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("strategy {0} does not appear in the log")]
    StrategyAbsent(StrategyId),
    #[error("no match between {0} and {1} in the log")]
    PairingAbsent(StrategyId, StrategyId),
    #[error("populations do not share a strategy universe")]
    MismatchedUniverse,
    #[error("instability needs at least two phases, got {0}")]
    TooFewPhases(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodingError {
    #[error("no rationales to sample")]
    EmptyCorpus,
    #[error("sampling fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("the two coders share no labelled rationale")]
    NoOverlap,
    #[error("expected agreement is 1; kappa is undefined")]
    DegenerateMarginals,
    #[error("malformed coder response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("schema mismatch in {path}: {detail}")]
    SchemaMismatch { path: PathBuf, detail: String },
    #[error("could not parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("phase {phase} failed: {source}")]
    Phase {
        phase: u32,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
