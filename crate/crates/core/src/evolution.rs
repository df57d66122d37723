//! Fitness, reproduction and the phase loop of a tournament.
//!
//! Fitness of strategy `i` in phase `t` is its average score per move,
//! `F = S / M`. The next count is `N' = N (F / F̄)²` where `F̄` is the
//! unweighted mean fitness over the `k` strategies present, rounded half
//! away from zero, with raw counts below one half going extinct. Counts are
//! then nudged back to the target size.

use std::collections::BTreeMap;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Error, EvolutionError};
use crate::game::{run_phase, MatchConfig, PhaseContext, PhaseLog, Points, StrategyRegistry};
use crate::population::{Population, StrategyId};
use crate::scalar::{whole_to_u64, Scalar};

/// Score and move tallies of one strategy in one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyFitness<S> {
    pub total_score: Points,
    pub total_moves: u64,
    pub fitness: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport<S> {
    pub strategies: BTreeMap<StrategyId, StrategyFitness<S>>,
    /// Unweighted mean fitness over the strategies present.
    pub mean: S,
}

impl<S: Scalar> FitnessReport<S> {
    /// Builds a report from `(strategy, total score, total moves)` tallies.
    pub fn from_totals(
        totals: impl IntoIterator<Item = (StrategyId, Points, u64)>,
    ) -> Result<Self, EvolutionError> {
        let mut strategies = BTreeMap::new();
        for (id, total_score, total_moves) in totals {
            if total_moves == 0 {
                return Err(EvolutionError::MissingFitness(id));
            }
            let fitness = S::from_ratio(total_score, total_moves as i64);
            strategies.insert(id, StrategyFitness { total_score, total_moves, fitness });
        }
        if strategies.is_empty() {
            return Err(EvolutionError::EmptyPhase);
        }
        let sum = strategies.values().fold(S::zero(), |acc, s| acc + s.fitness.clone());
        let mean = sum / S::from_i64(strategies.len() as i64);
        Ok(FitnessReport { strategies, mean })
    }

    /// Number of strategies present, `k`.
    pub fn unique_strategies(&self) -> usize {
        self.strategies.len()
    }

    pub fn fitness(&self, id: &StrategyId) -> Option<&S> {
        self.strategies.get(id).map(|s| &s.fitness)
    }

    pub fn to_f64(&self) -> FitnessReport<f64> {
        FitnessReport {
            strategies: self
                .strategies
                .iter()
                .map(|(id, s)| {
                    let converted = StrategyFitness {
                        total_score: s.total_score,
                        total_moves: s.total_moves,
                        fitness: s.fitness.to_f64(),
                    };
                    (id.clone(), converted)
                })
                .collect(),
            mean: self.mean.to_f64(),
        }
    }
}

/// Per-strategy fitness over the completed matches of a phase. Aborted
/// matches contribute neither score nor moves.
pub fn compute_fitness<S: Scalar>(log: &PhaseLog) -> Result<FitnessReport<S>, EvolutionError> {
    let mut totals: BTreeMap<StrategyId, (Points, u64)> = BTreeMap::new();
    for t in log.agent_totals() {
        let entry = totals.entry(t.agent.strategy).or_insert((0, 0));
        entry.0 += t.score;
        entry.1 += t.moves;
    }
    if totals.values().all(|(_, moves)| *moves == 0) {
        return Err(EvolutionError::EmptyPhase);
    }
    for (id, _) in log.population.present() {
        if !totals.contains_key(id) {
            return Err(EvolutionError::MissingFitness(id.clone()));
        }
    }
    FitnessReport::from_totals(totals.into_iter().map(|(id, (s, m))| (id, s, m)))
}

/// Next-phase counts from current counts and fitness.
///
/// When every present strategy has zero fitness the relative fitness is
/// undefined and the population is returned unchanged.
pub fn reproduce<S: Scalar>(pop: &Population, fit: &FitnessReport<S>) -> Result<Population, EvolutionError> {
    let present: Vec<(&StrategyId, u32, &S)> = pop
        .present()
        .map(|(id, n)| {
            fit.fitness(id)
                .map(|f| (id, n, f))
                .ok_or_else(|| EvolutionError::MissingFitness(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    if present.is_empty() {
        return Err(EvolutionError::EmptyPhase);
    }

    // F / F̄ = F k / ΣF over the strategies present in this population.
    let k = S::from_i64(present.len() as i64);
    let sum = present.iter().fold(S::zero(), |acc, (_, _, f)| acc + (*f).clone());
    if sum == S::zero() {
        return Ok(pop.clone());
    }
    let sum_sq = sum.clone() * sum;
    let half = S::from_ratio(1, 2);

    let mut next = pop.clone();
    for (id, n, f) in &present {
        let scaled = (*f).clone() * k.clone();
        let raw = S::from_i64(*n as i64) * scaled.clone() * scaled / sum_sq.clone();
        let count = if raw < half { 0 } else { whole_to_u64(&raw.round_half_away()) };
        next.set_count((*id).clone(), count.min(u32::MAX as u64) as u32);
    }
    if next.total() == 0 {
        return Err(EvolutionError::AllExtinct);
    }

    // Fitness order, ties broken by id: lowest first.
    let mut order: Vec<(&StrategyId, &S)> = present.iter().map(|(id, _, f)| (*id, *f)).collect();
    order.sort_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    let target = pop.target_size();
    while next.total() > target {
        let (victim, _) = order
            .iter()
            .find(|(id, _)| next.count(id) > 0)
            .expect("a positive total has a holder");
        let id = (*victim).clone();
        next.set_count(id.clone(), next.count(&id) - 1);
    }
    if next.total() < target {
        // Highest fitness; among equals the lexicographically first id.
        let best = order
            .iter()
            .rev()
            .fold(None::<(&StrategyId, &S)>, |best, &(id, f)| match best {
                Some((_, bf)) if bf > f => best,
                _ => Some((id, f)),
            })
            .map(|(id, _)| id.clone())
            .expect("present is not empty");
        let deficit = target - next.total();
        next.set_count(best.clone(), next.count(&best) + deficit);
    }
    Ok(next)
}

/// Makes sure a Random agent is present: when Random has no agents, one
/// agent of the most populous strategy becomes Random. Ties among donors go
/// to the lower fitness, then to the lexicographically first id.
pub fn inject_mutation<S: Scalar>(pop: &Population, fit: &FitnessReport<S>) -> Population {
    let random = StrategyId::random();
    let mut next = pop.clone();
    next.include(random.clone());
    if next.count(&random) > 0 {
        return next;
    }
    let donor = pop
        .present()
        .filter(|(id, _)| **id != random)
        .max_by(|(a_id, a_n), (b_id, b_n)| {
            a_n.cmp(b_n)
                .then_with(|| {
                    // lower fitness wins the tie, so it compares as greater
                    let (fa, fb) = (fit.fitness(a_id), fit.fitness(b_id));
                    match (fa, fb) {
                        (Some(fa), Some(fb)) => fb.partial_cmp(fa).unwrap_or(std::cmp::Ordering::Equal),
                        (None, Some(_)) => std::cmp::Ordering::Greater,
                        (Some(_), None) => std::cmp::Ordering::Less,
                        (None, None) => std::cmp::Ordering::Equal,
                    }
                })
                .then_with(|| b_id.cmp(a_id))
        })
        .map(|(id, _)| id.clone());
    if let Some(donor) = donor {
        next.set_count(donor.clone(), next.count(&donor) - 1);
        next.set_count(random, 1);
    }
    next
}

/// Parameters of one evolutionary tournament.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentSettings {
    pub tournament_id: String,
    pub initial: Population,
    pub match_config: MatchConfig,
    pub phases: u32,
    pub mutation: bool,
}

/// All phases played so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TournamentLog {
    pub tournament_id: String,
    pub match_config: MatchConfig,
    pub phases: Vec<PhaseLog>,
}

impl TournamentLog {
    pub fn new(tournament_id: impl Into<String>, match_config: MatchConfig) -> Self {
        TournamentLog { tournament_id: tournament_id.into(), match_config, phases: Vec::new() }
    }

    /// Population at the start of every played phase.
    pub fn populations(&self) -> Vec<Population> {
        self.phases.iter().map(|p| p.population.clone()).collect()
    }

    pub fn rationales(&self) -> impl Iterator<Item = &crate::llm::RationaleRecord> {
        self.phases.iter().flat_map(|p| p.rationales.iter())
    }

    /// Id for the next rationale to be recorded.
    pub fn next_rationale_id(&self) -> u64 {
        self.rationales().map(|r| r.rationale_id + 1).max().unwrap_or(1)
    }

    /// Exact fitness of every played phase.
    pub fn fitness(&self) -> Result<Vec<FitnessReport<BigRational>>, EvolutionError> {
        self.phases.iter().map(compute_fitness).collect()
    }
}

/// Population for the phase after `log`.
pub fn next_population(log: &PhaseLog, mutation: bool) -> Result<Population, EvolutionError> {
    let fit: FitnessReport<BigRational> = compute_fitness(log)?;
    let next = reproduce(&log.population, &fit)?;
    Ok(if mutation { inject_mutation(&next, &fit) } else { next })
}

/// Runs phase → fitness → reproduction (→ mutation) until `settings.phases`
/// phases have been played.
///
/// `resume` holds phases already completed by an earlier run with the same
/// settings. `checkpoint` is called after every newly completed phase, so a
/// failure mid-tournament leaves all finished phases persisted.
pub fn run_tournament(
    settings: &TournamentSettings,
    registry: &StrategyRegistry,
    resume: Option<TournamentLog>,
    mut checkpoint: impl FnMut(&TournamentLog) -> Result<(), Error>,
) -> Result<TournamentLog, Error> {
    settings.match_config.validate()?;
    if settings.phases == 0 {
        return Err(crate::error::ConfigError::Invalid("phases must be at least 1".into()).into());
    }
    if settings.mutation && !registry.contains(&StrategyId::random()) {
        return Err(EvolutionError::NoRandomStrategy.into());
    }
    for (id, _) in settings.initial.present() {
        if !registry.contains(id) {
            return Err(EngineError::UnknownStrategy(id.clone()).into());
        }
    }

    let mut log = resume.unwrap_or_else(|| TournamentLog::new(&settings.tournament_id, settings.match_config.clone()));
    let mut population = match log.phases.last() {
        None => settings.initial.clone(),
        Some(last) => next_population(last, settings.mutation).map_err(|e| phase_error(last.phase, e.into()))?,
    };
    if settings.mutation {
        population.include(StrategyId::random());
    }

    for phase in log.phases.len() as u32 + 1..=settings.phases {
        log::info!("{}: phase {phase} with {} agents", settings.tournament_id, population.total());
        let ctx = PhaseContext {
            tournament_id: &settings.tournament_id,
            phase,
            first_rationale_id: log.next_rationale_id(),
        };
        let played =
            run_phase(&ctx, &population, &settings.match_config, registry).map_err(|e| phase_error(phase, e.into()))?;
        log.phases.push(played);
        checkpoint(&log)?;
        if phase < settings.phases {
            let last = log.phases.last().expect("just pushed");
            population = next_population(last, settings.mutation).map_err(|e| phase_error(phase, e.into()))?;
        }
    }
    Ok(log)
}

fn phase_error(phase: u32, source: Error) -> Error {
    Error::Phase { phase, source: Box::new(source) }
}
