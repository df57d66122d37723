//! Reading CSV files whose layout differs from ours, such as previously
//! published tournament logs and labeling samples.
//!
//! Each logical field is looked up under a list of candidate column names
//! (case-insensitive); the first one present in the header wins. The
//! defaults cover this crate's own files and common alternatives, and can be
//! overridden from a TOML mapping file:
//!
//! ```toml
//! [rounds]
//! match_id = ["game_id"]
//! move_a = ["p1_move"]
//!
//! [labeling]
//! coder_a_horizon = ["gemini_horizon"]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coding::{CodingLabel, Horizon, OpponentModelling};
use crate::error::PersistError;
use crate::game::{AgentRef, MatchRecord, Move, PayoffMatrix, RoundOutcome, TerminatedBy};
use crate::llm::RationaleRecord;
use crate::population::StrategyId;

/// Candidate column names per logical field.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ColumnMap(pub BTreeMap<String, Vec<String>>);

impl ColumnMap {
    fn from_pairs(pairs: &[(&str, &[&str])]) -> Self {
        ColumnMap(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
    }

    /// Overrides put their candidates ahead of the defaults.
    fn overlay(mut self, overrides: &ColumnMap) -> Self {
        for (field, names) in &overrides.0 {
            let entry = self.0.entry(field.clone()).or_default();
            let mut merged = names.clone();
            merged.extend(entry.drain(..));
            *entry = merged;
        }
        self
    }

    fn resolve(&self, header: &csv::StringRecord) -> BTreeMap<String, usize> {
        let lower: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
        let mut found = BTreeMap::new();
        for (field, names) in &self.0 {
            if let Some(idx) = names.iter().find_map(|n| lower.iter().position(|h| *h == n.to_ascii_lowercase())) {
                found.insert(field.clone(), idx);
            }
        }
        found
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveMapping {
    #[serde(default)]
    pub rounds: ColumnMap,
    #[serde(default)]
    pub labeling: ColumnMap,
}

impl ArchiveMapping {
    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let text = fs::read_to_string(path).map_err(|source| PersistError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| PersistError::Parse { path: path.to_path_buf(), detail: e.to_string() })
    }

    pub fn round_columns(&self) -> ColumnMap {
        ColumnMap::from_pairs(&[
            ("tournament_id", &["tournament_id", "tournament", "condition", "run"]),
            ("phase", &["phase", "generation"]),
            ("match_id", &["match_id", "match", "game_id", "match_number"]),
            ("round_idx", &["round_idx", "round", "round_number", "turn"]),
            ("strategy_a", &["strategy_a", "agent_a", "player1", "player_1", "p1", "strategy1"]),
            ("strategy_b", &["strategy_b", "agent_b", "player2", "player_2", "p2", "strategy2"]),
            ("move_a", &["move_a", "player1_move", "p1_move", "move1", "action_a"]),
            ("move_b", &["move_b", "player2_move", "p2_move", "move2", "action_b"]),
            ("payoff_a", &["payoff_a", "player1_score", "p1_score", "score_a", "payoff1"]),
            ("payoff_b", &["payoff_b", "player2_score", "p2_score", "score_b", "payoff2"]),
        ])
        .overlay(&self.rounds)
    }

    pub fn labeling_columns(&self) -> ColumnMap {
        ColumnMap::from_pairs(&[
            ("rationale_id", &["rationale_id", "id", "sample_id"]),
            ("tournament_id", &["tournament_id", "tournament", "condition"]),
            ("strategy", &["strategy", "agent", "model_name", "player"]),
            ("chosen_move", &["chosen_move", "move", "action"]),
            ("text", &["text", "rationale", "reasoning"]),
            ("coder_a_horizon", &["coder_a_horizon", "coder1_horizon", "horizon_coder1", "horizon_1"]),
            ("coder_a_opponent", &["coder_a_opponent", "coder1_opponent", "opponent_coder1", "opponent_1"]),
            ("coder_b_horizon", &["coder_b_horizon", "coder2_horizon", "horizon_coder2", "horizon_2"]),
            ("coder_b_opponent", &["coder_b_opponent", "coder2_opponent", "opponent_coder2", "opponent_2"]),
        ])
        .overlay(&self.labeling)
    }
}

fn parse_err(path: &Path, detail: impl Into<String>) -> PersistError {
    PersistError::Parse { path: path.to_path_buf(), detail: detail.into() }
}

fn read_all(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), PersistError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|source| PersistError::Csv { path: path.to_path_buf(), source })?;
    let header = reader.headers().map_err(|source| PersistError::Csv { path: path.to_path_buf(), source })?.clone();
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| PersistError::Csv { path: path.to_path_buf(), source })?;
    Ok((header, rows))
}

fn require(path: &Path, cols: &BTreeMap<String, usize>, fields: &[&str]) -> Result<(), PersistError> {
    let missing: Vec<&str> = fields.iter().copied().filter(|f| !cols.contains_key(*f)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(PersistError::SchemaMismatch {
            path: path.to_path_buf(),
            detail: format!("no column for {missing:?}; add them to the mapping file"),
        })
    }
}

fn cell<'r>(row: &'r csv::StringRecord, cols: &BTreeMap<String, usize>, field: &str) -> Option<&'r str> {
    cols.get(field).and_then(|&i| row.get(i)).map(str::trim).filter(|s| !s.is_empty())
}

/// Accepts `C`/`D` and spelled-out forms.
pub fn parse_move_label(text: &str) -> Option<Move> {
    match text.trim().to_ascii_lowercase().as_str() {
        "c" | "cooperate" | "cooperation" => Some(Move::C),
        "d" | "defect" | "defection" => Some(Move::D),
        _ => None,
    }
}

/// A match from an archived log together with its condition label.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedMatch {
    pub tournament_id: Option<String>,
    pub phase: Option<u32>,
    pub record: MatchRecord,
}

/// Reads a per-round log. Rows are grouped into matches by
/// `(tournament, phase, match)`; missing payoff columns are filled from the
/// default payoff matrix and a missing round column means file order.
pub fn load_archived_rounds(path: &Path, mapping: &ArchiveMapping) -> Result<Vec<ArchivedMatch>, PersistError> {
    let (header, rows) = read_all(path)?;
    let cols = mapping.round_columns().resolve(&header);
    require(path, &cols, &["match_id", "strategy_a", "strategy_b", "move_a", "move_b"])?;
    let matrix = PayoffMatrix::default();

    type Key = (Option<String>, Option<u32>, String);
    let mut order: Vec<Key> = Vec::new();
    let mut grouped: BTreeMap<Key, Vec<(u32, StrategyId, StrategyId, RoundOutcome)>> = BTreeMap::new();
    for (line, row) in rows.iter().enumerate() {
        let at = |field: &str| cell(row, &cols, field);
        let bad = |what: &str| parse_err(path, format!("row {}: {what}", line + 2));
        let tournament = at("tournament_id").map(str::to_string);
        let phase = at("phase").map(|s| s.parse::<u32>().map_err(|_| bad("phase"))).transpose()?;
        let match_key = at("match_id").ok_or_else(|| bad("match id"))?.to_string();
        let a = StrategyId::new(at("strategy_a").ok_or_else(|| bad("strategy_a"))?).map_err(|e| bad(&e.to_string()))?;
        let b = StrategyId::new(at("strategy_b").ok_or_else(|| bad("strategy_b"))?).map_err(|e| bad(&e.to_string()))?;
        let move_a = at("move_a").and_then(parse_move_label).ok_or_else(|| bad("move_a"))?;
        let move_b = at("move_b").and_then(parse_move_label).ok_or_else(|| bad("move_b"))?;
        let (default_a, default_b) = matrix.payoff(move_a, move_b);
        let payoff = |field: &str, default| -> Result<i64, PersistError> {
            match at(field) {
                Some(s) => s.parse::<f64>().map(|v| v.round() as i64).map_err(|_| bad(field)),
                None => Ok(default),
            }
        };
        let outcome = RoundOutcome {
            move_a,
            move_b,
            payoff_a: payoff("payoff_a", default_a)?,
            payoff_b: payoff("payoff_b", default_b)?,
            rationale_a: None,
            rationale_b: None,
        };
        let round = match at("round_idx") {
            Some(s) => s.parse::<u32>().map_err(|_| bad("round"))?,
            None => line as u32,
        };
        let key = (tournament, phase, match_key);
        let entry = grouped.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push((round, a, b, outcome));
    }

    let mut out = Vec::with_capacity(order.len());
    for (idx, key) in order.into_iter().enumerate() {
        let mut rounds = grouped.remove(&key).expect("grouped");
        rounds.sort_by_key(|r| r.0);
        let (_, a, b, _) = rounds[0].clone();
        let len = rounds.len();
        out.push(ArchivedMatch {
            tournament_id: key.0,
            phase: key.1,
            record: MatchRecord {
                match_id: key.2.parse().unwrap_or(idx as u32),
                agent_a: AgentRef { instance: 0, strategy: a },
                agent_b: AgentRef { instance: 1, strategy: b },
                rounds: rounds.into_iter().map(|r| r.3).collect(),
                terminated_by: if len >= 30 { TerminatedBy::HardCap } else { TerminatedBy::ProbabilityDraw },
            },
        });
    }
    Ok(out)
}

/// One row of a labeling sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingRow {
    pub rationale_id: u64,
    pub tournament_id: String,
    pub strategy: String,
    pub chosen_move: Option<Move>,
    pub text: String,
    pub coder_a: Option<(Horizon, OpponentModelling)>,
    pub coder_b: Option<(Horizon, OpponentModelling)>,
}

impl LabelingRow {
    pub fn from_record(r: &RationaleRecord) -> Self {
        LabelingRow {
            rationale_id: r.rationale_id,
            tournament_id: r.tournament_id.clone(),
            strategy: r.strategy.to_string(),
            chosen_move: Some(r.chosen_move),
            text: r.text.clone(),
            coder_a: None,
            coder_b: None,
        }
    }

    /// A rationale record carrying only what the sample knows.
    pub fn to_record(&self) -> Option<RationaleRecord> {
        Some(RationaleRecord {
            rationale_id: self.rationale_id,
            tournament_id: self.tournament_id.clone(),
            phase: 0,
            match_id: 0,
            round_idx: 0,
            strategy: StrategyId::new(&self.strategy).ok()?,
            provider: String::new(),
            model: String::new(),
            text: self.text.clone(),
            chosen_move: self.chosen_move?,
        })
    }
}

/// Labels of the two coders, over the rows each of them labelled.
pub fn coder_labels(rows: &[LabelingRow]) -> (Vec<CodingLabel>, Vec<CodingLabel>) {
    let pick = |coder: &str, f: fn(&LabelingRow) -> Option<(Horizon, OpponentModelling)>| {
        rows.iter()
            .filter_map(|r| {
                f(r).map(|(horizon, opponent)| CodingLabel {
                    rationale_id: r.rationale_id,
                    coder: coder.to_string(),
                    horizon,
                    opponent,
                })
            })
            .collect()
    };
    (pick("a", |r| r.coder_a), pick("b", |r| r.coder_b))
}

pub const LABELING_COLUMNS: [&str; 9] = [
    "rationale_id",
    "tournament_id",
    "strategy",
    "chosen_move",
    "text",
    "coder_a_horizon",
    "coder_a_opponent",
    "coder_b_horizon",
    "coder_b_opponent",
];

pub fn write_labeling_sample<W: Write>(rows: &[LabelingRow], w: W) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().from_writer(w);
    out.write_record(LABELING_COLUMNS)?;
    for r in rows {
        let (ah, ao) = split_label(r.coder_a);
        let (bh, bo) = split_label(r.coder_b);
        out.write_record([
            r.rationale_id.to_string().as_str(),
            &r.tournament_id,
            &r.strategy,
            r.chosen_move.map(|m| m.to_string()).as_deref().unwrap_or(""),
            &r.text,
            ah,
            ao,
            bh,
            bo,
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn split_label(label: Option<(Horizon, OpponentModelling)>) -> (&'static str, &'static str) {
    match label {
        Some((h, o)) => (h.as_str(), o.as_str()),
        None => ("", ""),
    }
}

/// Reads a labeling sample in this crate's layout or, through `mapping`,
/// another one. Coder columns may be blank for unlabelled rows.
pub fn load_labeling_sample(path: &Path, mapping: &ArchiveMapping) -> Result<Vec<LabelingRow>, PersistError> {
    let (header, rows) = read_all(path)?;
    let cols = mapping.labeling_columns().resolve(&header);
    require(path, &cols, &["rationale_id"])?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows.iter().enumerate() {
        let at = |field: &str| cell(row, &cols, field);
        let bad = |what: String| parse_err(path, format!("row {}: {what}", line + 2));
        let id_text = at("rationale_id").ok_or_else(|| bad("missing rationale_id".into()))?;
        let rationale_id = id_text
            .parse::<u64>()
            .or_else(|_| id_text.parse::<f64>().map(|v| v as u64))
            .map_err(|_| bad(format!("rationale_id {id_text:?}")))?;
        let label = |h: &str, o: &str| -> Result<Option<(Horizon, OpponentModelling)>, PersistError> {
            match (at(h), at(o)) {
                (Some(hv), Some(ov)) => Ok(Some((
                    hv.parse().map_err(|e: crate::error::CodingError| bad(e.to_string()))?,
                    ov.parse().map_err(|e: crate::error::CodingError| bad(e.to_string()))?,
                ))),
                _ => Ok(None),
            }
        };
        out.push(LabelingRow {
            rationale_id,
            tournament_id: at("tournament_id").unwrap_or("").to_string(),
            strategy: at("strategy").unwrap_or("").to_string(),
            chosen_move: at("chosen_move").and_then(parse_move_label),
            text: at("text").unwrap_or("").to_string(),
            coder_a: label("coder_a_horizon", "coder_a_opponent")?,
            coder_b: label("coder_b_horizon", "coder_b_opponent")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_foreign_round_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        fs::write(
            &path,
            "condition,game_id,turn,p1,p2,p1_move,p2_move\n\
             adv75,7,2,Gemini,WSLS,Defect,D\n\
             adv75,7,1,Gemini,WSLS,C,C\n\
             adv75,8,1,TFT,Gemini,C,D\n",
        )
        .unwrap();
        let mapping: ArchiveMapping = toml::from_str("[rounds]\nround_idx = [\"turn\"]").unwrap();
        let matches = load_archived_rounds(&path, &mapping).unwrap();
        assert_eq!(matches.len(), 2);
        let m = &matches[0].record;
        assert_eq!(matches[0].tournament_id.as_deref(), Some("adv75"));
        assert_eq!(m.agent_b.strategy.as_str(), "WinStayLoseShift");
        assert_eq!(m.rounds[0].move_a, Move::C);
        assert_eq!(m.rounds[1].move_a, Move::D);
        assert_eq!(m.rounds[1].payoff_a, 1);
        assert_eq!(matches[1].record.rounds[0].payoff_b, 5);
    }

    #[test]
    fn missing_columns_are_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            load_archived_rounds(&path, &ArchiveMapping::default()),
            Err(PersistError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn labeling_sample_round_trips() {
        let rows = vec![
            LabelingRow {
                rationale_id: 3,
                tournament_id: "t".into(),
                strategy: "Gemini".into(),
                chosen_move: Some(Move::D),
                text: "With few turns left, I defect".into(),
                coder_a: Some((Horizon::Explicit, OpponentModelling::No)),
                coder_b: None,
            },
            LabelingRow {
                rationale_id: 9,
                tournament_id: "t".into(),
                strategy: "OpenAI".into(),
                chosen_move: Some(Move::C),
                text: "line one\nline \"two\", still".into(),
                coder_a: None,
                coder_b: Some((Horizon::None, OpponentModelling::Yes)),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.csv");
        let mut buf = Vec::new();
        write_labeling_sample(&rows, &mut buf).unwrap();
        fs::write(&path, buf).unwrap();
        let back = load_labeling_sample(&path, &ArchiveMapping::default()).unwrap();
        assert_eq!(back, rows);
        let (a, b) = coder_labels(&back);
        assert_eq!((a.len(), b.len()), (1, 1));
    }
}
