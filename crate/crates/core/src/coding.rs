//! Content coding of rationales: sampling, machine coders, inter-coder
//! agreement and cross-tabulation against cooperation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CodingError;
use crate::game::{Move, RngStream};
use crate::llm::{LlmClient, RationaleRecord};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Horizon {
    Explicit,
    Implicit,
    None,
}

impl Horizon {
    pub const ALL: [Horizon; 3] = [Horizon::Explicit, Horizon::Implicit, Horizon::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Horizon::Explicit => "Explicit",
            Horizon::Implicit => "Implicit",
            Horizon::None => "None",
        }
    }

    /// Explicit and implicit awareness both count as aware.
    pub fn is_aware(self) -> bool {
        self != Horizon::None
    }
}

impl FromStr for Horizon {
    type Err = CodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "explicit" => Ok(Horizon::Explicit),
            "implicit" => Ok(Horizon::Implicit),
            "none" | "no" => Ok(Horizon::None),
            _ => Err(CodingError::MalformedResponse(format!("unknown horizon label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpponentModelling {
    Yes,
    No,
}

impl OpponentModelling {
    pub const ALL: [OpponentModelling; 2] = [OpponentModelling::Yes, OpponentModelling::No];

    pub fn as_str(self) -> &'static str {
        match self {
            OpponentModelling::Yes => "Yes",
            OpponentModelling::No => "No",
        }
    }
}

impl FromStr for OpponentModelling {
    type Err = CodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" => Ok(OpponentModelling::Yes),
            "no" | "n" | "false" => Ok(OpponentModelling::No),
            _ => Err(CodingError::MalformedResponse(format!("unknown opponent label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    Horizon,
    Opponent,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Horizon => "horizon",
            Dimension::Opponent => "opponent",
        }
    }

    pub fn categories(self) -> &'static [&'static str] {
        match self {
            Dimension::Horizon => &["Explicit", "Implicit", "None"],
            Dimension::Opponent => &["Yes", "No"],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = CodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "horizon" => Ok(Dimension::Horizon),
            "opponent" | "opponent_modelling" | "opponent_modeling" => Ok(Dimension::Opponent),
            _ => Err(CodingError::MalformedResponse(format!("unknown dimension {s:?}"))),
        }
    }
}

/// One coder's labels for one rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingLabel {
    pub rationale_id: u64,
    pub coder: String,
    pub horizon: Horizon,
    pub opponent: OpponentModelling,
}

impl CodingLabel {
    fn category(&self, dimension: Dimension) -> usize {
        match dimension {
            Dimension::Horizon => self.horizon as usize,
            Dimension::Opponent => self.opponent as usize,
        }
    }
}

/// Uniform sample without replacement of `floor(fraction * N)` records,
/// returned in input order.
pub fn sample_rationales(
    records: &[RationaleRecord],
    fraction: f64,
    seed: u64,
) -> Result<Vec<RationaleRecord>, CodingError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CodingError::BadFraction(fraction));
    }
    if records.is_empty() {
        return Err(CodingError::EmptyCorpus);
    }
    let size = sample_size(records.len(), fraction);
    let mut rng = RngStream::Sampling.rng(seed);
    let mut picked = index::sample(&mut rng, records.len(), size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

/// `floor(fraction * n)`, tolerant of binary representation error so that
/// e.g. `0.29 * 100` gives 29.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 1e-9).floor().min(n as f64) as usize
}

/// Bumped whenever [`CODER_PROMPT_TEMPLATE`] changes.
pub const CODER_PROMPT_VERSION: u32 = 1;

pub const CODER_PROMPT_TEMPLATE: &str = "\
You are coding the written reasoning of a player in an iterated Prisoner's Dilemma, where each match ends after any round with a fixed probability.

Answer two questions about the reasoning below.

1. Horizon awareness: does the reasoning consider how long the match may last, the chance it ends, or the number of rounds left?
   Explicit = it states this directly. Implicit = it alludes to future rounds or the long run without stating it. None = no such consideration.
2. Opponent modelling: does the reasoning form a view of the opponent's strategy, type or likely next move?
   Yes or No.

Reasoning:
\"\"\"
{RATIONALE}
\"\"\"

Reply with a single line in exactly this format:
horizon=<Explicit|Implicit|None>; opponent=<Yes|No>";

pub fn coder_prompt_hash() -> String {
    hex::encode(Sha256::digest(CODER_PROMPT_TEMPLATE.as_bytes()))
}

pub fn build_coder_prompt(rationale: &str) -> String {
    CODER_PROMPT_TEMPLATE.replace("{RATIONALE}", rationale)
}

/// Reads `horizon=...; opponent=...` from a coder reply. Keys are
/// case-insensitive and pairs may be separated by `;`, `,` or newlines; the
/// last occurrence of each key wins.
pub fn parse_coder_response(raw: &str) -> Result<(Horizon, OpponentModelling), CodingError> {
    let mut horizon = None;
    let mut opponent = None;
    for pair in raw.split([';', ',', '\n']) {
        let Some((key, value)) = pair.split_once(['=', ':']) else {
            continue;
        };
        let key = key.trim().trim_matches(|c: char| !c.is_ascii_alphanumeric()).to_ascii_lowercase();
        let value = value.trim().trim_matches(|c: char| !c.is_ascii_alphanumeric());
        match key.as_str() {
            "horizon" => horizon = Some(value.parse::<Horizon>()?),
            "opponent" => opponent = Some(value.parse::<OpponentModelling>()?),
            _ => {}
        }
    }
    match (horizon, opponent) {
        (Some(h), Some(o)) => Ok((h, o)),
        _ => Err(CodingError::MalformedResponse(raw.chars().take(200).collect())),
    }
}

/// Asks one machine coder to label one rationale.
pub fn code_rationale(client: &LlmClient, coder: &str, record: &RationaleRecord) -> Result<CodingLabel, CodingError> {
    let prompt = build_coder_prompt(&record.text);
    let ((horizon, opponent), _) = client.query(&prompt, parse_coder_response)?;
    Ok(CodingLabel { rationale_id: record.rationale_id, coder: coder.to_string(), horizon, opponent })
}

/// Labels every record, concurrently up to the client's in-flight bound.
/// Output order follows input order.
pub fn code_all(client: &LlmClient, coder: &str, records: &[RationaleRecord]) -> Result<Vec<CodingLabel>, CodingError> {
    records.par_iter().map(|r| code_rationale(client, coder, r)).collect()
}

/// Agreement statistics for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaReport<S> {
    pub dimension: Dimension,
    pub items: u64,
    pub raw_agreement: S,
    pub expected_agreement: S,
    pub kappa: S,
    /// Rows: first coder's category, columns: second coder's.
    pub confusion: Vec<Vec<u64>>,
}

/// `(p_o, p_e, kappa)` from a square confusion matrix.
pub fn kappa_from_confusion<S: Scalar>(confusion: &[Vec<u64>]) -> Result<(S, S, S), CodingError> {
    let k = confusion.len();
    let n: u64 = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(CodingError::NoOverlap);
    }
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let p_o = S::from_ratio(trace as i64, n as i64);
    let mut marginal_products: i64 = 0;
    for i in 0..k {
        let row: u64 = confusion[i].iter().sum();
        let col: u64 = confusion.iter().map(|r| r[i]).sum();
        marginal_products += (row * col) as i64;
    }
    let n_sq = (n * n) as i64;
    if marginal_products == n_sq {
        return Err(CodingError::DegenerateMarginals);
    }
    let p_e = S::from_ratio(marginal_products, n_sq);
    let kappa = (p_o.clone() - p_e.clone()) / (S::one() - p_e.clone());
    Ok((p_o, p_e, kappa))
}

/// Cohen's kappa over the rationales both coders labelled.
pub fn cohens_kappa<S: Scalar>(
    labels_a: &[CodingLabel],
    labels_b: &[CodingLabel],
    dimension: Dimension,
) -> Result<KappaReport<S>, CodingError> {
    let k = dimension.categories().len();
    let by_id: BTreeMap<u64, &CodingLabel> = labels_b.iter().map(|l| (l.rationale_id, l)).collect();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut items = 0;
    for a in labels_a {
        if let Some(b) = by_id.get(&a.rationale_id) {
            confusion[a.category(dimension)][b.category(dimension)] += 1;
            items += 1;
        }
    }
    if items == 0 {
        return Err(CodingError::NoOverlap);
    }
    let (raw_agreement, expected_agreement, kappa) = kappa_from_confusion(&confusion)?;
    Ok(KappaReport { dimension, items, raw_agreement, expected_agreement, kappa, confusion })
}

/// A rationale both coders placed on the same side of a binary question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgreedLabel {
    pub rationale_id: u64,
    pub yes: bool,
}

/// Rationales on which both coders agree for `dimension`. Horizon is
/// compared after collapsing Explicit and Implicit into "aware".
pub fn agreed_labels(labels_a: &[CodingLabel], labels_b: &[CodingLabel], dimension: Dimension) -> Vec<AgreedLabel> {
    let binary = |l: &CodingLabel| match dimension {
        Dimension::Horizon => l.horizon.is_aware(),
        Dimension::Opponent => l.opponent == OpponentModelling::Yes,
    };
    let by_id: BTreeMap<u64, &CodingLabel> = labels_b.iter().map(|l| (l.rationale_id, l)).collect();
    labels_a
        .iter()
        .filter_map(|a| {
            let b = by_id.get(&a.rationale_id)?;
            (binary(a) == binary(b)).then_some(AgreedLabel { rationale_id: a.rationale_id, yes: binary(a) })
        })
        .collect()
}

/// Cooperation among agreed rationales in one condition × label cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTabCell<S> {
    pub condition: String,
    pub label: bool,
    pub cooperations: u64,
    pub n: u64,
    /// `None` for empty cells.
    pub cooperation_rate: Option<S>,
}

/// Cooperation rate by condition and binary label. Every condition present
/// in `records` gets both a "Yes" and a "No" cell, possibly with `n = 0`.
pub fn cross_tab<S: Scalar>(
    agreed: &[AgreedLabel],
    records: &[RationaleRecord],
    group_by: impl Fn(&RationaleRecord) -> String,
) -> Vec<CrossTabCell<S>> {
    let labels: BTreeMap<u64, bool> = agreed.iter().map(|a| (a.rationale_id, a.yes)).collect();
    let mut cells: BTreeMap<(String, bool), (u64, u64)> = BTreeMap::new();
    for r in records {
        let condition = group_by(r);
        for label in [true, false] {
            cells.entry((condition.clone(), label)).or_insert((0, 0));
        }
        if let Some(&yes) = labels.get(&r.rationale_id) {
            let cell = cells.get_mut(&(condition, yes)).expect("inserted above");
            cell.1 += 1;
            if r.chosen_move == Move::C {
                cell.0 += 1;
            }
        }
    }
    // "Yes" before "No" within a condition
    let mut out: Vec<CrossTabCell<S>> = cells
        .into_iter()
        .map(|((condition, label), (cooperations, n))| CrossTabCell {
            condition,
            label,
            cooperations,
            n,
            cooperation_rate: (n > 0).then(|| S::from_ratio(cooperations as i64, n as i64)),
        })
        .collect();
    out.sort_by(|a, b| a.condition.cmp(&b.condition).then(b.label.cmp(&a.label)));
    out
}
