//! Metrics over tournament logs: fingerprints, cooperation, score per move,
//! head-to-head summaries and population instability.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Float;

use crate::error::AnalysisError;
use crate::evolution::TournamentLog;
use crate::game::{MatchRecord, Move, Points};
use crate::population::{Population, StrategyId};
use crate::scalar::Scalar;

/// Rendering of a fingerprint state that never occurred.
pub const ABSENT: &str = "N/A";

/// Previous-round outcome from the deciding agent's side: own move first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrevState {
    CC,
    DC,
    CD,
    DD,
}

impl PrevState {
    /// Column order of fingerprint tables.
    pub const ALL: [PrevState; 4] = [PrevState::CC, PrevState::DC, PrevState::CD, PrevState::DD];

    pub fn of(mine: Move, theirs: Move) -> PrevState {
        match (mine, theirs) {
            (Move::C, Move::C) => PrevState::CC,
            (Move::D, Move::C) => PrevState::DC,
            (Move::C, Move::D) => PrevState::CD,
            (Move::D, Move::D) => PrevState::DD,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            PrevState::CC => "CC",
            PrevState::DC => "DC",
            PrevState::CD => "CD",
            PrevState::DD => "DD",
        }
    }
}

/// Conditional cooperation counts per previous-round state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Fingerprint {
    pub cooperations: [u64; 4],
    pub occurrences: [u64; 4],
}

impl Fingerprint {
    pub fn record(&mut self, previous: PrevState, decision: Move) {
        let i = previous.index();
        self.occurrences[i] += 1;
        if decision == Move::C {
            self.cooperations[i] += 1;
        }
    }

    pub fn merge(&mut self, other: &Fingerprint) {
        for i in 0..4 {
            self.cooperations[i] += other.cooperations[i];
            self.occurrences[i] += other.occurrences[i];
        }
    }

    pub fn count(&self, state: PrevState) -> u64 {
        self.occurrences[state.index()]
    }

    /// `P(C | state)`, or `None` if the state never occurred.
    pub fn probability<S: Scalar>(&self, state: PrevState) -> Option<S> {
        let i = state.index();
        (self.occurrences[i] > 0).then(|| S::from_ratio(self.cooperations[i] as i64, self.occurrences[i] as i64))
    }

    /// `(P(C|CC), P(C|DC), P(C|CD), P(C|DD))`.
    pub fn probabilities<S: Scalar>(&self) -> [Option<S>; 4] {
        PrevState::ALL.map(|s| self.probability(s))
    }

    /// Probabilities to three decimals, [`ABSENT`] for unseen states.
    pub fn formatted(&self) -> [String; 4] {
        PrevState::ALL.map(|s| fmt_probability(self.probability::<f64>(s)))
    }
}

pub fn fmt_probability(p: Option<f64>) -> String {
    match p {
        Some(p) => format!("{p:.3}"),
        None => ABSENT.to_string(),
    }
}

/// One side of a match as seen by the agent sitting there.
#[derive(Debug, Clone, Copy)]
pub struct Side<'a> {
    pub record: &'a MatchRecord,
    pub is_a: bool,
}

impl<'a> Side<'a> {
    pub fn strategy(&self) -> &'a StrategyId {
        if self.is_a {
            &self.record.agent_a.strategy
        } else {
            &self.record.agent_b.strategy
        }
    }

    pub fn opponent(&self) -> &'a StrategyId {
        if self.is_a {
            &self.record.agent_b.strategy
        } else {
            &self.record.agent_a.strategy
        }
    }

    /// `(my move, their move, my payoff)` per round.
    pub fn rounds(&self) -> impl Iterator<Item = (Move, Move, Points)> + 'a {
        let is_a = self.is_a;
        self.record.rounds.iter().map(move |r| {
            if is_a {
                (r.move_a, r.move_b, r.payoff_a)
            } else {
                (r.move_b, r.move_a, r.payoff_b)
            }
        })
    }
}

/// Every seat occupied by `strategy` in the given matches; a same-strategy
/// match contributes both seats.
pub fn sides_of<'a>(
    matches: impl IntoIterator<Item = &'a MatchRecord>,
    strategy: &'a StrategyId,
) -> impl Iterator<Item = Side<'a>> {
    matches.into_iter().flat_map(move |m| {
        [true, false]
            .into_iter()
            .map(move |is_a| Side { record: m, is_a })
            .filter(move |s| s.strategy() == strategy)
    })
}

fn all_matches(log: &TournamentLog) -> impl Iterator<Item = &MatchRecord> {
    log.phases.iter().flat_map(|p| p.matches.iter())
}

/// Fingerprint of one side of one match, from round 2 onward.
pub fn side_fingerprint(side: Side<'_>) -> Fingerprint {
    let mut fp = Fingerprint::default();
    let mut previous: Option<PrevState> = None;
    for (mine, theirs, _) in side.rounds() {
        if let Some(state) = previous {
            fp.record(state, mine);
        }
        previous = Some(PrevState::of(mine, theirs));
    }
    fp
}

/// Fingerprint aggregated over all matches of `strategy` in `matches`.
pub fn fingerprint_of<'a>(
    matches: impl IntoIterator<Item = &'a MatchRecord>,
    strategy: &'a StrategyId,
) -> Result<Fingerprint, AnalysisError> {
    let mut fp = Fingerprint::default();
    let mut seen = false;
    for side in sides_of(matches, strategy) {
        seen = true;
        fp.merge(&side_fingerprint(side));
    }
    if seen {
        Ok(fp)
    } else {
        Err(AnalysisError::StrategyAbsent(strategy.clone()))
    }
}

pub fn fingerprint(log: &TournamentLog, strategy: &StrategyId) -> Result<Fingerprint, AnalysisError> {
    fingerprint_of(all_matches(log), strategy)
}

/// Move and score totals of a strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveTally {
    pub cooperations: u64,
    pub moves: u64,
    pub score: Points,
}

impl MoveTally {
    pub fn add_side(&mut self, side: Side<'_>) {
        for (mine, _, payoff) in side.rounds() {
            self.moves += 1;
            self.score += payoff;
            if mine == Move::C {
                self.cooperations += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &MoveTally) {
        self.cooperations += other.cooperations;
        self.moves += other.moves;
        self.score += other.score;
    }

    /// `None` when no moves were made.
    pub fn cooperation_rate<S: Scalar>(&self) -> Option<S> {
        (self.moves > 0).then(|| S::from_ratio(self.cooperations as i64, self.moves as i64))
    }

    pub fn score_per_move<S: Scalar>(&self) -> Option<S> {
        (self.moves > 0).then(|| S::from_ratio(self.score, self.moves as i64))
    }
}

pub fn tally_of<'a>(
    matches: impl IntoIterator<Item = &'a MatchRecord>,
    strategy: &'a StrategyId,
) -> Result<MoveTally, AnalysisError> {
    let mut tally = MoveTally::default();
    for side in sides_of(matches, strategy) {
        tally.add_side(side);
    }
    if tally.moves == 0 {
        Err(AnalysisError::StrategyAbsent(strategy.clone()))
    } else {
        Ok(tally)
    }
}

pub fn tally(log: &TournamentLog, strategy: &StrategyId) -> Result<MoveTally, AnalysisError> {
    tally_of(all_matches(log), strategy)
}

/// Fraction of the strategy's moves that were C.
pub fn cooperation_rate<S: Scalar>(log: &TournamentLog, strategy: &StrategyId) -> Result<S, AnalysisError> {
    Ok(tally(log, strategy)?.cooperation_rate().expect("tally has moves"))
}

/// Average payoff per move.
pub fn score_per_move<S: Scalar>(log: &TournamentLog, strategy: &StrategyId) -> Result<S, AnalysisError> {
    Ok(tally(log, strategy)?.score_per_move().expect("tally has moves"))
}

/// Summary of all matches between two strategies, from `a`'s side.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadToHead<S> {
    pub matches: u64,
    /// Mean total score of `a` per match.
    pub avg_score: S,
    /// Share of `a`'s moves that were C, pooled over the matches.
    pub cooperation_rate: S,
}

pub fn head_to_head_of<'a, S: Scalar>(
    matches: impl IntoIterator<Item = &'a MatchRecord>,
    a: &StrategyId,
    b: &StrategyId,
) -> Result<HeadToHead<S>, AnalysisError> {
    let mut count = 0u64;
    let mut tally = MoveTally::default();
    for m in matches {
        let is_a = if m.agent_a.strategy == *a && m.agent_b.strategy == *b {
            true
        } else if m.agent_b.strategy == *a && m.agent_a.strategy == *b {
            false
        } else {
            continue;
        };
        count += 1;
        tally.add_side(Side { record: m, is_a });
    }
    if count == 0 || tally.moves == 0 {
        return Err(AnalysisError::PairingAbsent(a.clone(), b.clone()));
    }
    Ok(HeadToHead {
        matches: count,
        avg_score: S::from_ratio(tally.score, count as i64),
        cooperation_rate: tally.cooperation_rate().expect("moves > 0"),
    })
}

pub fn head_to_head<S: Scalar>(
    log: &TournamentLog,
    a: &StrategyId,
    b: &StrategyId,
) -> Result<HeadToHead<S>, AnalysisError> {
    head_to_head_of(all_matches(log), a, b)
}

/// Euclidean distances between consecutive population vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityScore<F> {
    pub transitions: Vec<F>,
    pub mean: F,
}

/// Euclidean distance between two count vectors over the same strategies.
pub fn population_distance<F: Float>(a: &Population, b: &Population) -> Result<F, AnalysisError> {
    if !a.strategies().eq(b.strategies()) {
        return Err(AnalysisError::MismatchedUniverse);
    }
    let sum = a.iter().zip(b.iter()).fold(F::zero(), |acc, ((_, x), (_, y))| {
        let d = F::from(x as i64 - y as i64).expect("count fits");
        acc + d * d
    });
    Ok(sum.sqrt())
}

pub fn instability<F: Float>(populations: &[Population]) -> Result<InstabilityScore<F>, AnalysisError> {
    if populations.len() < 2 {
        return Err(AnalysisError::TooFewPhases(populations.len()));
    }
    let transitions = populations
        .windows(2)
        .map(|w| population_distance(&w[0], &w[1]))
        .collect::<Result<Vec<F>, _>>()?;
    let sum = transitions.iter().fold(F::zero(), |acc, d| acc + *d);
    let mean = sum / F::from(transitions.len()).expect("small count");
    Ok(InstabilityScore { transitions, mean })
}

/// Strategies appearing in any match of the log, in id order.
pub fn strategies_in(log: &TournamentLog) -> Vec<StrategyId> {
    let mut seen: BTreeMap<StrategyId, ()> = BTreeMap::new();
    for m in all_matches(log) {
        seen.insert(m.agent_a.strategy.clone(), ());
        seen.insert(m.agent_b.strategy.clone(), ());
    }
    seen.into_keys().collect()
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [cc, dc, cd, dd] = self.formatted();
        write!(f, "P(C|CC)={cc} P(C|DC)={dc} P(C|CD)={cd} P(C|DD)={dd}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{AgentRef, MatchConfig, PayoffMatrix, PhaseLog, RoundOutcome, TerminatedBy};
    use Move::{C, D};

    fn id(s: &str) -> StrategyId {
        StrategyId::new(s).unwrap()
    }

    fn record(match_id: u32, a: &str, b: &str, moves: &[(Move, Move)]) -> MatchRecord {
        let m = PayoffMatrix::default();
        MatchRecord {
            match_id,
            agent_a: AgentRef { instance: 0, strategy: id(a) },
            agent_b: AgentRef { instance: 1, strategy: id(b) },
            rounds: moves
                .iter()
                .map(|&(x, y)| {
                    let (pa, pb) = m.payoff(x, y);
                    RoundOutcome { move_a: x, move_b: y, payoff_a: pa, payoff_b: pb, rationale_a: None, rationale_b: None }
                })
                .collect(),
            terminated_by: TerminatedBy::ProbabilityDraw,
        }
    }

    fn log_of(matches: Vec<MatchRecord>) -> TournamentLog {
        let mut log = TournamentLog::new("t", MatchConfig::new(0.1, 0).unwrap());
        log.phases.push(PhaseLog {
            phase: 1,
            population: Population::new([(id("A"), 1), (id("B"), 1)]),
            matches,
            aborted: vec![],
            rationales: vec![],
        });
        log
    }

    #[test]
    fn all_mutual_cooperation_fingerprint() {
        let log = log_of(vec![record(0, "A", "B", &[(C, C); 5])]);
        let fp = fingerprint(&log, &id("A")).unwrap();
        assert_eq!(fp.probability::<f64>(PrevState::CC), Some(1.0));
        assert_eq!(fp.count(PrevState::CC), 4);
        assert_eq!(fp.formatted(), ["1.000", ABSENT, ABSENT, ABSENT]);
    }

    #[test]
    fn hand_log_fingerprint() {
        let log = log_of(vec![record(0, "A", "B", &[(C, C), (C, D), (D, D)])]);
        let fp = fingerprint(&log, &id("A")).unwrap();
        assert_eq!(fp.probability::<f64>(PrevState::CC), Some(1.0));
        assert_eq!(fp.count(PrevState::CC), 1);
        assert_eq!(fp.probability::<f64>(PrevState::CD), Some(0.0));
        assert_eq!(fp.count(PrevState::CD), 1);
        assert_eq!(fp.probability::<f64>(PrevState::DC), None);
        assert_eq!(fp.probability::<f64>(PrevState::DD), None);
        // B sees the same rounds with roles swapped: CC then DC
        let fb = fingerprint(&log, &id("B")).unwrap();
        assert_eq!(fb.probability::<f64>(PrevState::CC), Some(0.0));
        assert_eq!(fb.probability::<f64>(PrevState::DC), Some(0.0));
        assert!(fingerprint(&log, &id("Z")).is_err());
    }

    #[test]
    fn rates_and_scores() {
        let log = log_of(vec![record(0, "A", "B", &[(C, C), (C, D), (C, C), (D, C)])]);
        assert_eq!(cooperation_rate::<f64>(&log, &id("A")).unwrap(), 0.75);
        assert_eq!(score_per_move::<f64>(&log, &id("A")).unwrap(), 11.0 / 4.0);
        let cc = log_of(vec![record(0, "A", "B", &[(C, C); 3])]);
        assert_eq!(score_per_move::<f64>(&cc, &id("A")).unwrap(), 3.0);
        let dd = log_of(vec![record(0, "A", "B", &[(D, D); 3])]);
        assert_eq!(score_per_move::<f64>(&dd, &id("B")).unwrap(), 1.0);
        assert_eq!(cooperation_rate::<f64>(&dd, &id("B")).unwrap(), 0.0);
    }

    #[test]
    fn same_strategy_match_counts_both_seats() {
        let log = log_of(vec![record(0, "A", "A", &[(C, D), (C, D)])]);
        let t = tally(&log, &id("A")).unwrap();
        assert_eq!(t.moves, 4);
        assert_eq!(t.cooperations, 2);
    }

    #[test]
    fn head_to_head_two_matches() {
        let log = log_of(vec![
            record(0, "A", "B", &[(C, C), (D, C)]),
            record(1, "B", "A", &[(D, C), (D, D), (C, C)]),
            record(2, "A", "C", &[(C, C)]),
        ]);
        let h = head_to_head::<f64>(&log, &id("A"), &id("B")).unwrap();
        assert_eq!(h.matches, 2);
        // A scores 3 + 5 = 8, then 0 + 1 + 3 = 4
        assert_eq!(h.avg_score, 6.0);
        // A's moves: C D C D C
        assert_eq!(h.cooperation_rate, 0.6);
        assert!(head_to_head::<f64>(&log, &id("B"), &id("C")).is_err());
    }

    #[test]
    fn instability_examples() {
        let ids = ["TFT", "Grim", "WSLS", "Rand"];
        let mk = |counts: [u32; 4]| Population::new(ids.iter().zip(counts).map(|(s, n)| (id(s), n)));
        let p1 = mk([2, 2, 2, 2]);
        let p2 = mk([2, 3, 2, 1]);
        let score: InstabilityScore<f64> = instability(&[p1.clone(), p2.clone()]).unwrap();
        assert!((score.mean - 2f64.sqrt()).abs() < 1e-12);
        let flat: InstabilityScore<f64> = instability(&vec![p1.clone(); 5]).unwrap();
        assert_eq!(flat.mean, 0.0);
        assert_eq!(flat.transitions.len(), 4);
        assert!(instability::<f64>(&[p1.clone()]).is_err());
        let other = Population::new([(id("TFT"), 8)]);
        assert_eq!(instability::<f64>(&[p1, other]), Err(AnalysisError::MismatchedUniverse));
    }
}
