//! Match play and round-robin phases.
//!
//! A match is a sequence of simultaneous rounds between two agent instances.
//! After every round one uniform draw `u` in `[0, 1)` ends the match iff
//! `u < p`; a match that reaches the hard cap ends without a further draw.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, ConfigError, EngineError, MatchAborted};
use crate::llm::RationaleRecord;
use crate::population::{Population, StrategyId};

/// Points scored in a round; all tallies are integral.
pub type Points = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    C,
    D,
}

impl Move {
    pub fn as_char(self) -> char {
        match self {
            Move::C => 'C',
            Move::D => 'D',
        }
    }

    pub fn flip(self) -> Move {
        match self {
            Move::C => Move::D,
            Move::D => Move::C,
        }
    }

    pub fn parse(text: &str) -> Option<Move> {
        match text.trim() {
            "C" | "c" => Some(Move::C),
            "D" | "d" => Some(Move::D),
            _ => None,
        }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Prisoner's dilemma payoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub reward: Points,
    pub sucker: Points,
    pub temptation: Points,
    pub punishment: Points,
}

impl Default for PayoffMatrix {
    fn default() -> Self {
        PayoffMatrix { reward: 3, sucker: 0, temptation: 5, punishment: 1 }
    }
}

impl PayoffMatrix {
    /// Checks `T > R > P > S` and `2R > T + S`.
    pub fn new(
        reward: Points,
        sucker: Points,
        temptation: Points,
        punishment: Points,
    ) -> Result<Self, ConfigError> {
        let m = PayoffMatrix { reward, sucker, temptation, punishment };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let PayoffMatrix { reward: r, sucker: s, temptation: t, punishment: p } = *self;
        if !(t > r && r > p && p > s) {
            return Err(ConfigError::Invalid(format!(
                "payoffs must satisfy T > R > P > S, got T={t} R={r} P={p} S={s}"
            )));
        }
        if 2 * r <= t + s {
            return Err(ConfigError::Invalid(format!(
                "payoffs must satisfy 2R > T + S, got R={r} T={t} S={s}"
            )));
        }
        Ok(())
    }

    /// Payoffs `(a, b)` for the simultaneous moves `(a, b)`.
    pub fn payoff(&self, a: Move, b: Move) -> (Points, Points) {
        match (a, b) {
            (Move::C, Move::C) => (self.reward, self.reward),
            (Move::C, Move::D) => (self.sucker, self.temptation),
            (Move::D, Move::C) => (self.temptation, self.sucker),
            (Move::D, Move::D) => (self.punishment, self.punishment),
        }
    }
}

/// Free-function form of [`PayoffMatrix::payoff`].
pub fn payoff(a: Move, b: Move, matrix: &PayoffMatrix) -> (Points, Points) {
    matrix.payoff(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub termination_probability: f64,
    pub hard_cap: u32,
    pub history_window: usize,
    pub rng_seed: u64,
    pub payoffs: PayoffMatrix,
}

impl MatchConfig {
    pub fn new(termination_probability: f64, rng_seed: u64) -> Result<Self, ConfigError> {
        let cfg = MatchConfig {
            termination_probability,
            hard_cap: 30,
            history_window: 20,
            rng_seed,
            payoffs: PayoffMatrix::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.termination_probability;
        if !(p > 0.0 && p < 1.0) {
            return Err(ConfigError::Invalid(format!("termination probability {p} outside (0, 1)")));
        }
        if self.hard_cap < 1 {
            return Err(ConfigError::Invalid("hard cap must be at least 1".into()));
        }
        if self.history_window < 1 {
            return Err(ConfigError::Invalid("history window must be at least 1".into()));
        }
        self.payoffs.validate()
    }

    /// Expected match length under the geometric stopping rule with the cap:
    /// `(1 - (1-p)^cap) / p`.
    pub fn expected_length(&self) -> f64 {
        let q = 1.0 - self.termination_probability;
        (1.0 - q.powi(self.hard_cap as i32)) / self.termination_probability
    }

    /// Probability that a match reaches the hard cap: `(1-p)^(cap-1)`.
    pub fn cap_probability(&self) -> f64 {
        (1.0 - self.termination_probability).powi(self.hard_cap as i32 - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub move_a: Move,
    pub move_b: Move,
    pub payoff_a: Points,
    pub payoff_b: Points,
    pub rationale_a: Option<u64>,
    pub rationale_b: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    ProbabilityDraw,
    HardCap,
}

impl TerminatedBy {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminatedBy::ProbabilityDraw => "probability_draw",
            TerminatedBy::HardCap => "hard_cap",
        }
    }
}

/// One agent instance in a phase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentRef {
    pub instance: u32,
    pub strategy: StrategyId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: u32,
    pub agent_a: AgentRef,
    pub agent_b: AgentRef,
    pub rounds: Vec<RoundOutcome>,
    pub terminated_by: TerminatedBy,
}

impl MatchRecord {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn score_a(&self) -> Points {
        self.rounds.iter().map(|r| r.payoff_a).sum()
    }

    pub fn score_b(&self) -> Points {
        self.rounds.iter().map(|r| r.payoff_b).sum()
    }
}

/// What an agent sees when deciding: the paired history from its own
/// perspective, truncated to the history window.
#[derive(Debug, Clone, Copy)]
pub struct MatchView<'a> {
    pub my_moves: &'a [Move],
    pub their_moves: &'a [Move],
    /// Rounds completed so far, independent of truncation.
    pub rounds_played: u32,
    pub termination_probability: f64,
}

impl<'a> MatchView<'a> {
    pub fn new(my_moves: &'a [Move], their_moves: &'a [Move], termination_probability: f64) -> Self {
        assert_eq!(my_moves.len(), their_moves.len(), "paired history lengths differ");
        MatchView {
            my_moves,
            their_moves,
            rounds_played: my_moves.len() as u32,
            termination_probability,
        }
    }

    pub fn is_first_round(&self) -> bool {
        self.rounds_played == 0
    }

    pub fn last(&self) -> Option<(Move, Move)> {
        Some((*self.my_moves.last()?, *self.their_moves.last()?))
    }

    pub fn their_last(&self) -> Option<Move> {
        self.their_moves.last().copied()
    }

    pub fn len(&self) -> usize {
        self.my_moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.my_moves.is_empty()
    }
}

/// Prose reasoning attached to a move by an LLM-backed agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRationale {
    pub text: String,
    pub provider: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub mv: Move,
    pub rationale: Option<AgentRationale>,
}

impl From<Move> for Decision {
    fn from(mv: Move) -> Self {
        Decision { mv, rationale: None }
    }
}

/// A player. One instance lives for exactly one match.
pub trait Agent: Send {
    fn decide(&mut self, view: &MatchView<'_>, rng: &mut dyn RngCore) -> Result<Decision, AgentError>;
}

/// Creates fresh agent instances for a strategy.
pub trait AgentFactory: Send + Sync {
    fn create(&self, cfg: &MatchConfig) -> Box<dyn Agent>;
}

impl<F> AgentFactory for F
where
    F: Fn(&MatchConfig) -> Box<dyn Agent> + Send + Sync,
{
    fn create(&self, cfg: &MatchConfig) -> Box<dyn Agent> {
        self(cfg)
    }
}

/// Maps strategy ids to agent factories.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    factories: BTreeMap<StrategyId, Arc<dyn AgentFactory>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: StrategyId, factory: Arc<dyn AgentFactory>) {
        self.factories.insert(id, factory);
    }

    pub fn get(&self, id: &StrategyId) -> Option<&Arc<dyn AgentFactory>> {
        self.factories.get(id)
    }

    pub fn contains(&self, id: &StrategyId) -> bool {
        self.factories.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &StrategyId> {
        self.factories.keys()
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

/// Independent random streams derived from one master seed.
///
/// Every stream is a ChaCha8 stream of the master seed, so adding or
/// reordering matches never perturbs another match's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Termination { phase: u32, match_id: u32 },
    AgentA { phase: u32, match_id: u32 },
    AgentB { phase: u32, match_id: u32 },
    Sampling,
}

impl RngStream {
    fn id(self) -> u64 {
        let (phase, match_id, role) = match self {
            RngStream::Termination { phase, match_id } => (phase, match_id, 1),
            RngStream::AgentA { phase, match_id } => (phase, match_id, 2),
            RngStream::AgentB { phase, match_id } => (phase, match_id, 3),
            RngStream::Sampling => (0, 0, 4),
        };
        ((phase as u64) << 40) | ((match_id as u64) << 8) | role
    }

    pub fn rng(self, master_seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(self.id());
        rng
    }
}

/// One side of a match being played.
pub struct Seat<'a> {
    pub agent_ref: AgentRef,
    pub agent: &'a mut dyn Agent,
    pub rng: &'a mut dyn RngCore,
}

/// A rationale that has not yet been given a tournament-wide id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRationale {
    pub round_idx: u32,
    pub side_a: bool,
    pub rationale: AgentRationale,
    pub chosen_move: Move,
}

/// Output of [`play_match`]: the record plus any rationales produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPlay {
    pub record: MatchRecord,
    pub rationales: Vec<PendingRationale>,
}

fn window(moves: &[Move], size: usize) -> &[Move] {
    &moves[moves.len().saturating_sub(size)..]
}

/// Plays one match. Each agent sees the paired history from its own side,
/// truncated to `cfg.history_window` rounds.
pub fn play_match<R: Rng + ?Sized>(
    match_id: u32,
    a: Seat<'_>,
    b: Seat<'_>,
    cfg: &MatchConfig,
    termination: &mut R,
) -> Result<MatchPlay, MatchAborted> {
    let cap = cfg.hard_cap as usize;
    let mut a_moves = Vec::with_capacity(cap.min(64));
    let mut b_moves = Vec::with_capacity(cap.min(64));
    let mut rounds = Vec::with_capacity(cap.min(64));
    let mut rationales = Vec::new();

    let abort = |round: usize, source: AgentError| MatchAborted {
        match_id,
        agent_a: a.agent_ref.strategy.clone(),
        agent_b: b.agent_ref.strategy.clone(),
        round: round as u32 + 1,
        source,
    };

    let terminated_by = loop {
        let round = rounds.len();
        let view_a = MatchView {
            my_moves: window(&a_moves, cfg.history_window),
            their_moves: window(&b_moves, cfg.history_window),
            rounds_played: round as u32,
            termination_probability: cfg.termination_probability,
        };
        let view_b = MatchView {
            my_moves: window(&b_moves, cfg.history_window),
            their_moves: window(&a_moves, cfg.history_window),
            rounds_played: round as u32,
            termination_probability: cfg.termination_probability,
        };
        let da = a.agent.decide(&view_a, a.rng).map_err(|e| abort(round, e))?;
        let db = b.agent.decide(&view_b, b.rng).map_err(|e| abort(round, e))?;

        let (payoff_a, payoff_b) = cfg.payoffs.payoff(da.mv, db.mv);
        for (decision, side_a) in [(da.clone(), true), (db.clone(), false)] {
            if let Some(rationale) = decision.rationale {
                rationales.push(PendingRationale {
                    round_idx: round as u32 + 1,
                    side_a,
                    rationale,
                    chosen_move: decision.mv,
                });
            }
        }
        a_moves.push(da.mv);
        b_moves.push(db.mv);
        rounds.push(RoundOutcome {
            move_a: da.mv,
            move_b: db.mv,
            payoff_a,
            payoff_b,
            rationale_a: None,
            rationale_b: None,
        });

        if rounds.len() >= cap {
            break TerminatedBy::HardCap;
        }
        let u: f64 = termination.random();
        if u < cfg.termination_probability {
            break TerminatedBy::ProbabilityDraw;
        }
    };

    Ok(MatchPlay {
        record: MatchRecord {
            match_id,
            agent_a: a.agent_ref,
            agent_b: b.agent_ref,
            rounds,
            terminated_by,
        },
        rationales,
    })
}

/// Score and move totals of one agent instance over a phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTotals {
    pub agent: AgentRef,
    pub score: Points,
    pub moves: u64,
}

/// Everything that happened in one round-robin phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLog {
    /// 1-based phase number.
    pub phase: u32,
    pub population: Population,
    /// Completed matches, sorted by match id.
    pub matches: Vec<MatchRecord>,
    /// Matches that could not be completed; excluded from all sums.
    pub aborted: Vec<MatchAborted>,
    pub rationales: Vec<RationaleRecord>,
}

impl PhaseLog {
    /// Per-instance totals over completed matches, in instance order.
    pub fn agent_totals(&self) -> Vec<AgentTotals> {
        let mut totals: BTreeMap<u32, AgentTotals> = BTreeMap::new();
        for m in &self.matches {
            for (agent, score) in [(&m.agent_a, m.score_a()), (&m.agent_b, m.score_b())] {
                let entry = totals.entry(agent.instance).or_insert_with(|| AgentTotals {
                    agent: agent.clone(),
                    score: 0,
                    moves: 0,
                });
                entry.score += score;
                entry.moves += m.rounds.len() as u64;
            }
        }
        totals.into_values().collect()
    }

    pub fn total_rounds(&self) -> usize {
        self.matches.iter().map(|m| m.rounds.len()).sum()
    }
}

/// Coordinates passed to [`run_phase`].
#[derive(Debug, Clone)]
pub struct PhaseContext<'a> {
    pub tournament_id: &'a str,
    pub phase: u32,
    /// Id given to the first rationale produced in this phase.
    pub first_rationale_id: u64,
}

/// Every unordered pair of distinct agent instances `(i, j)`, `i < j`, in
/// lexicographic order; the pair's index is its match id.
pub fn round_robin_pairs(agents: usize) -> Vec<(usize, usize)> {
    (0..agents)
        .flat_map(|i| (i + 1..agents).map(move |j| (i, j)))
        .collect()
}

/// Plays a full round robin over the population. Matches run concurrently;
/// the result is identical to sequential play for a given master seed.
pub fn run_phase(
    ctx: &PhaseContext<'_>,
    population: &Population,
    cfg: &MatchConfig,
    registry: &StrategyRegistry,
) -> Result<PhaseLog, EngineError> {
    cfg.validate()?;
    let instances = population.instances();
    if instances.len() < 2 {
        return Err(EngineError::TooFewAgents(instances.len() as u32));
    }
    for id in population.present().map(|(id, _)| id) {
        if !registry.contains(id) {
            return Err(EngineError::UnknownStrategy(id.clone()));
        }
    }

    let phase = ctx.phase;
    let pairs = round_robin_pairs(instances.len());
    let mut results: Vec<Result<MatchPlay, MatchAborted>> = pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(i, j))| {
            let match_id = idx as u32;
            let factory_a = registry.get(&instances[i]).expect("checked above");
            let factory_b = registry.get(&instances[j]).expect("checked above");
            let mut agent_a = factory_a.create(cfg);
            let mut agent_b = factory_b.create(cfg);
            let mut rng_a = RngStream::AgentA { phase, match_id }.rng(cfg.rng_seed);
            let mut rng_b = RngStream::AgentB { phase, match_id }.rng(cfg.rng_seed);
            let mut term = RngStream::Termination { phase, match_id }.rng(cfg.rng_seed);
            play_match(
                match_id,
                Seat {
                    agent_ref: AgentRef { instance: i as u32, strategy: instances[i].clone() },
                    agent: agent_a.as_mut(),
                    rng: &mut rng_a,
                },
                Seat {
                    agent_ref: AgentRef { instance: j as u32, strategy: instances[j].clone() },
                    agent: agent_b.as_mut(),
                    rng: &mut rng_b,
                },
                cfg,
                &mut term,
            )
        })
        .collect();
    results.sort_by_key(|r| match r {
        Ok(play) => play.record.match_id,
        Err(aborted) => aborted.match_id,
    });

    let mut matches = Vec::with_capacity(results.len());
    let mut aborted = Vec::new();
    let mut rationales = Vec::new();
    let mut next_id = ctx.first_rationale_id;
    for result in results {
        match result {
            Ok(MatchPlay { mut record, rationales: pending }) => {
                for p in pending {
                    let id = next_id;
                    next_id += 1;
                    let round = &mut record.rounds[p.round_idx as usize - 1];
                    let agent = if p.side_a {
                        round.rationale_a = Some(id);
                        &record.agent_a
                    } else {
                        round.rationale_b = Some(id);
                        &record.agent_b
                    };
                    rationales.push(RationaleRecord {
                        rationale_id: id,
                        tournament_id: ctx.tournament_id.to_string(),
                        phase,
                        match_id: record.match_id,
                        round_idx: p.round_idx,
                        strategy: agent.strategy.clone(),
                        provider: p.rationale.provider,
                        model: p.rationale.model,
                        text: p.rationale.text,
                        chosen_move: p.chosen_move,
                    });
                }
                matches.push(record);
            }
            Err(e) => {
                log::warn!("phase {phase}: {e}");
                aborted.push(e);
            }
        }
    }

    Ok(PhaseLog { phase, population: population.clone(), matches, aborted, rationales })
}
