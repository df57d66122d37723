//! The ten hand-coded strategies.
//!
//! Each strategy is a small state machine driven by the [`MatchView`] it is
//! shown every round. State that must outlive the history window (Grim's
//! trigger, Gradual's defection count, the Bayesian belief) is updated
//! incrementally from the most recent round, so it is window-independent.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::AgentError;
use crate::game::{Agent, AgentFactory, Decision, MatchConfig, MatchView, Move, PayoffMatrix, StrategyRegistry};
use crate::population::ClassicStrategy;
use crate::scalar::Scalar;

/// Tunables of the stochastic and Bayesian strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicParams {
    /// Probability that Generous TFT forgives a defection.
    pub generous_forgiveness: f64,
    /// Probability Random cooperates.
    pub random_cooperation: f64,
    /// Likelihood given to a move a candidate model did not predict.
    pub bayesian_epsilon: f64,
}

impl Default for ClassicParams {
    fn default() -> Self {
        ClassicParams { generous_forgiveness: 0.10, random_cooperation: 0.5, bayesian_epsilon: 0.1 }
    }
}

/// A decision rule without fallible I/O.
pub trait Strategy: Send {
    fn next_move(&mut self, view: &MatchView<'_>, rng: &mut dyn RngCore) -> Move;
}

impl<T: Strategy> Agent for T {
    fn decide(&mut self, view: &MatchView<'_>, rng: &mut dyn RngCore) -> Result<Decision, AgentError> {
        Ok(self.next_move(view, rng).into())
    }
}

#[derive(Debug, Default, Clone)]
pub struct TitForTat;

impl Strategy for TitForTat {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        view.their_last().unwrap_or(Move::C)
    }
}

#[derive(Debug, Default, Clone)]
pub struct GrimTrigger {
    triggered: bool,
}

impl Strategy for GrimTrigger {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        if view.their_last() == Some(Move::D) {
            self.triggered = true;
        }
        if self.triggered {
            Move::D
        } else {
            Move::C
        }
    }
}

/// Pavlov: repeat the last move after a win (own payoff T or R), switch
/// after a loss (P or S).
#[derive(Debug, Clone)]
pub struct WinStayLoseShift {
    payoffs: PayoffMatrix,
}

impl WinStayLoseShift {
    pub fn new(payoffs: PayoffMatrix) -> Self {
        WinStayLoseShift { payoffs }
    }
}

impl Strategy for WinStayLoseShift {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        let Some((mine, theirs)) = view.last() else {
            return Move::C;
        };
        let (own, _) = self.payoffs.payoff(mine, theirs);
        let won = own == self.payoffs.temptation || own == self.payoffs.reward;
        if won {
            mine
        } else {
            mine.flip()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerousTitForTat {
    forgiveness: f64,
}

impl GenerousTitForTat {
    pub fn new(forgiveness: f64) -> Self {
        GenerousTitForTat { forgiveness }
    }
}

impl Strategy for GenerousTitForTat {
    fn next_move(&mut self, view: &MatchView<'_>, rng: &mut dyn RngCore) -> Move {
        match view.their_last() {
            None | Some(Move::C) => Move::C,
            Some(Move::D) => {
                if rng.random_bool(self.forgiveness) {
                    Move::C
                } else {
                    Move::D
                }
            }
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct SuspiciousTitForTat;

impl Strategy for SuspiciousTitForTat {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        view.their_last().unwrap_or(Move::D)
    }
}

/// Opens C, D, C; then plays TFT if the opponent cooperated on both its
/// second and third moves, otherwise defects for the rest of the match.
#[derive(Debug, Default, Clone)]
pub struct Prober {
    opponent_second: Option<Move>,
    opponent_third: Option<Move>,
}

impl Strategy for Prober {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        match view.rounds_played {
            2 => self.opponent_second = view.their_last(),
            3 => self.opponent_third = view.their_last(),
            _ => {}
        }
        match view.rounds_played {
            0 | 2 => Move::C,
            1 => Move::D,
            _ => {
                let cooperative =
                    self.opponent_second == Some(Move::C) && self.opponent_third == Some(Move::C);
                if cooperative {
                    view.their_last().unwrap_or(Move::C)
                } else {
                    Move::D
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomPlayer {
    cooperation: f64,
}

impl RandomPlayer {
    pub fn new(cooperation: f64) -> Self {
        RandomPlayer { cooperation }
    }
}

impl Strategy for RandomPlayer {
    fn next_move(&mut self, _: &MatchView<'_>, rng: &mut dyn RngCore) -> Move {
        if rng.random_bool(self.cooperation) {
            Move::C
        } else {
            Move::D
        }
    }
}

/// Answers a defection with as many defections as the opponent has made so
/// far, then two cooperations. Defections seen while a burst or its two
/// calming moves are still queued are counted but do not re-trigger.
#[derive(Debug, Default, Clone)]
pub struct Gradual {
    opponent_defections: u32,
    queued: std::collections::VecDeque<Move>,
}

impl Gradual {
    pub fn opponent_defections(&self) -> u32 {
        self.opponent_defections
    }
}

impl Strategy for Gradual {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        let their_last = view.their_last();
        if their_last == Some(Move::D) {
            self.opponent_defections += 1;
        }
        if let Some(mv) = self.queued.pop_front() {
            return mv;
        }
        if their_last == Some(Move::D) {
            self.queued.extend(std::iter::repeat_n(Move::D, self.opponent_defections as usize));
            self.queued.extend([Move::C, Move::C]);
            return self.queued.pop_front().expect("burst is non-empty");
        }
        Move::C
    }
}

/// C, D, C, D, ... by own move number.
#[derive(Debug, Default, Clone)]
pub struct Alternator;

impl Strategy for Alternator {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        if view.rounds_played % 2 == 0 {
            Move::C
        } else {
            Move::D
        }
    }
}

/// Opponent models tracked by [`Bayesian`], in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpponentModel {
    TitForTat,
    GrimTrigger,
    AlwaysCooperate,
    AlwaysDefect,
}

impl OpponentModel {
    pub const ALL: [OpponentModel; 4] = [
        OpponentModel::TitForTat,
        OpponentModel::GrimTrigger,
        OpponentModel::AlwaysCooperate,
        OpponentModel::AlwaysDefect,
    ];
}

/// Probability distribution over [`OpponentModel::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianBelief<S> {
    pub probabilities: [S; 4],
}

impl<S: Scalar> BayesianBelief<S> {
    pub fn uniform() -> Self {
        let q = S::from_ratio(1, 4);
        BayesianBelief { probabilities: [q.clone(), q.clone(), q.clone(), q] }
    }

    pub fn certain(model: OpponentModel) -> Self {
        let mut probabilities = [S::zero(), S::zero(), S::zero(), S::zero()];
        let idx = OpponentModel::ALL.iter().position(|m| *m == model).expect("known model");
        probabilities[idx] = S::one();
        BayesianBelief { probabilities }
    }

    pub fn get(&self, model: OpponentModel) -> &S {
        let idx = OpponentModel::ALL.iter().position(|m| *m == model).expect("known model");
        &self.probabilities[idx]
    }

    /// Most probable model; ties go to the earlier model in
    /// [`OpponentModel::ALL`].
    pub fn most_likely(&self) -> OpponentModel {
        let mut best = 0;
        for i in 1..4 {
            if self.probabilities[i] > self.probabilities[best] {
                best = i;
            }
        }
        OpponentModel::ALL[best]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("every opponent model has zero posterior mass")]
pub struct DegenerateBelief;

/// One Bayes step: `posterior ∝ prior × likelihood`, with likelihood
/// `1 - epsilon` when a model predicted the observed move and `epsilon`
/// otherwise.
pub fn bayesian_update<S: Scalar>(
    belief: &BayesianBelief<S>,
    predicted: [Move; 4],
    observed: Move,
    epsilon: &S,
) -> Result<BayesianBelief<S>, DegenerateBelief> {
    let hit = S::one() - epsilon.clone();
    let masses: Vec<S> = belief
        .probabilities
        .iter()
        .zip(predicted)
        .map(|(prior, pred)| {
            let likelihood = if pred == observed { hit.clone() } else { epsilon.clone() };
            prior.clone() * likelihood
        })
        .collect();
    let total = masses.iter().cloned().fold(S::zero(), |a, b| a + b);
    if total <= S::zero() {
        return Err(DegenerateBelief);
    }
    let mut probabilities = belief.probabilities.clone();
    for (p, m) in probabilities.iter_mut().zip(masses) {
        *p = m / total.clone();
    }
    Ok(BayesianBelief { probabilities })
}

/// Best response to the most likely opponent model. Against TFT or Grim,
/// cooperate iff `(R - P)(1 - p)/p >= T - R`, comparing endless mutual
/// cooperation with defecting into mutual punishment over a geometric
/// horizon.
pub fn bayesian_best_response<S: Scalar>(
    belief: &BayesianBelief<S>,
    termination_probability: f64,
    payoffs: &PayoffMatrix,
) -> Move {
    match belief.most_likely() {
        OpponentModel::AlwaysCooperate | OpponentModel::AlwaysDefect => Move::D,
        OpponentModel::TitForTat | OpponentModel::GrimTrigger => {
            let p = termination_probability;
            let gain = (payoffs.reward - payoffs.punishment) as f64 * (1.0 - p) / p;
            if gain >= (payoffs.temptation - payoffs.reward) as f64 {
                Move::C
            } else {
                Move::D
            }
        }
    }
}

/// Infers which of four simple opponents it faces and best-responds.
#[derive(Debug, Clone)]
pub struct Bayesian {
    belief: BayesianBelief<f64>,
    epsilon: f64,
    payoffs: PayoffMatrix,
    /// Own move before the most recent round (what TFT would copy).
    my_previous: Option<Move>,
    /// Whether I defected before the most recent round (what Grim reacts to).
    i_defected_before: bool,
}

impl Bayesian {
    pub fn new(epsilon: f64, payoffs: PayoffMatrix) -> Self {
        Bayesian {
            belief: BayesianBelief::uniform(),
            epsilon,
            payoffs,
            my_previous: None,
            i_defected_before: false,
        }
    }

    pub fn belief(&self) -> &BayesianBelief<f64> {
        &self.belief
    }

    fn predictions(&self) -> [Move; 4] {
        let tft = self.my_previous.unwrap_or(Move::C);
        let grim = if self.i_defected_before { Move::D } else { Move::C };
        [tft, grim, Move::C, Move::D]
    }
}

impl Strategy for Bayesian {
    fn next_move(&mut self, view: &MatchView<'_>, _: &mut dyn RngCore) -> Move {
        if let Some((mine, theirs)) = view.last() {
            let predicted = self.predictions();
            // epsilon > 0 keeps every mass positive
            if let Ok(posterior) = bayesian_update(&self.belief, predicted, theirs, &self.epsilon) {
                self.belief = posterior;
            }
            self.my_previous = Some(mine);
            self.i_defected_before |= mine == Move::D;
        }
        bayesian_best_response(&self.belief, view.termination_probability, &self.payoffs)
    }
}

impl ClassicStrategy {
    /// A fresh instance for one match.
    pub fn instantiate(self, params: &ClassicParams, payoffs: PayoffMatrix) -> Box<dyn Agent> {
        match self {
            ClassicStrategy::TitForTat => Box::new(TitForTat),
            ClassicStrategy::GrimTrigger => Box::new(GrimTrigger::default()),
            ClassicStrategy::WinStayLoseShift => Box::new(WinStayLoseShift::new(payoffs)),
            ClassicStrategy::GenerousTFT => Box::new(GenerousTitForTat::new(params.generous_forgiveness)),
            ClassicStrategy::SuspiciousTFT => Box::new(SuspiciousTitForTat),
            ClassicStrategy::Prober => Box::new(Prober::default()),
            ClassicStrategy::Random => Box::new(RandomPlayer::new(params.random_cooperation)),
            ClassicStrategy::Gradual => Box::new(Gradual::default()),
            ClassicStrategy::Alternator => Box::new(Alternator),
            ClassicStrategy::Bayesian => Box::new(Bayesian::new(params.bayesian_epsilon, payoffs)),
        }
    }
}

/// Factory for one classic strategy.
#[derive(Debug, Clone, Copy)]
pub struct ClassicFactory {
    pub strategy: ClassicStrategy,
    pub params: ClassicParams,
}

impl AgentFactory for ClassicFactory {
    fn create(&self, cfg: &MatchConfig) -> Box<dyn Agent> {
        self.strategy.instantiate(&self.params, cfg.payoffs)
    }
}

impl StrategyRegistry {
    /// A registry holding all ten classic strategies.
    pub fn with_classics(params: ClassicParams) -> Self {
        let mut registry = StrategyRegistry::new();
        for strategy in ClassicStrategy::ALL {
            registry.register(strategy.id(), Arc::new(ClassicFactory { strategy, params }));
        }
        registry
    }
}
