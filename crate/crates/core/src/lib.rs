//! Evolutionary iterated prisoner's dilemma tournaments.
//!
//! Classic strategies and LLM-backed agents meet in round-robin matches of
//! random length; each phase's fitness decides the next population. The
//! analysis and coding modules turn run logs into the usual tables.

pub mod analysis;
pub mod archive;
pub mod coding;
pub mod config;
pub mod error;
pub mod evolution;
pub mod game;
pub mod llm;
pub mod persist;
pub mod population;
pub mod report;
pub mod scalar;
pub mod strategies;

pub use config::TournamentConfig;
pub use error::{Error, Result};
pub use evolution::{run_tournament, TournamentLog, TournamentSettings};
pub use game::{MatchConfig, MatchRecord, Move, PayoffMatrix, PhaseLog};
pub use population::{ClassicStrategy, Population, StrategyId};
pub use scalar::Scalar;

/// Exact rational used for fitness during tournaments.
pub type Rational = num_rational::BigRational;

pub type ExactFitnessReport = evolution::FitnessReport<Rational>;
pub type FitnessReport64 = evolution::FitnessReport<f64>;
pub type HeadToHead64 = analysis::HeadToHead<f64>;
pub type Instability64 = analysis::InstabilityScore<f64>;
pub type KappaReport64 = coding::KappaReport<f64>;
pub type CrossTabCell64 = coding::CrossTabCell<f64>;
