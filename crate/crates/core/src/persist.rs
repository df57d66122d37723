//! Run directories: a JSON manifest plus CSV logs of every round,
//! rationale, population and aborted match.
//!
//! ```text
//! <run>/manifest.json     config snapshot, seeds, prompt hash, providers, progress
//! <run>/populations.csv   phase, <abbreviation>...
//! <run>/rounds.csv        one row per played round
//! <run>/rationales.csv    one row per LLM move
//! <run>/aborted.csv       matches that could not be completed
//! <run>/fitness.csv       per-phase fitness (derived, not read back)
//! ```
//!
//! Files are rewritten in full after every phase through a temporary file
//! and a rename; the manifest goes last, so it never claims a phase whose
//! rows are missing.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::TournamentConfig;
use crate::error::{AgentError, Error, MatchAborted, PersistError};
use crate::evolution::{compute_fitness, FitnessReport, TournamentLog};
use crate::game::{
    round_robin_pairs, AgentRef, MatchRecord, Move, PhaseLog, Points, RoundOutcome, TerminatedBy,
};
use crate::llm::{prompt_template_hash, RationaleRecord, PROMPT_TEMPLATE_VERSION};
use crate::population::{Population, StrategyId};

pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const RATIONALES_FILE: &str = "rationales.csv";
pub const POPULATIONS_FILE: &str = "populations.csv";
pub const ABORTED_FILE: &str = "aborted.csv";
pub const FITNESS_FILE: &str = "fitness.csv";

pub const ROUND_COLUMNS: [&str; 12] = [
    "tournament_id",
    "phase",
    "match_id",
    "round_idx",
    "strategy_a",
    "strategy_b",
    "move_a",
    "move_b",
    "payoff_a",
    "payoff_b",
    "rationale_id_a",
    "rationale_id_b",
];

pub const RATIONALE_COLUMNS: [&str; 10] = [
    "rationale_id",
    "tournament_id",
    "phase",
    "match_id",
    "round_idx",
    "strategy",
    "provider",
    "model",
    "chosen_move",
    "text",
];

pub const ABORTED_COLUMNS: [&str; 9] = [
    "tournament_id",
    "phase",
    "match_id",
    "strategy_a",
    "strategy_b",
    "round",
    "error_kind",
    "attempts",
    "message",
];

pub const FITNESS_COLUMNS: [&str; 6] = ["phase", "strategy", "total_score", "total_moves", "fitness", "mean_fitness"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub strategy: String,
    pub provider: String,
    pub model: String,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub tournament_id: String,
    pub master_seed: u64,
    pub prompt_template_version: u32,
    pub prompt_template_hash: String,
    pub providers: Vec<ProviderInfo>,
    pub completed_phases: u32,
    pub config: TournamentConfig,
}

impl Manifest {
    pub fn new(config: &TournamentConfig) -> Self {
        let providers = config
            .providers
            .iter()
            .map(|(label, p)| ProviderInfo {
                strategy: label.clone(),
                provider: p.provider.to_string(),
                model: p.model_name.clone(),
                temperature: p.effective_temperature(),
            })
            .collect();
        Manifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            tournament_id: config.tournament_id.clone(),
            master_seed: config.master_seed,
            prompt_template_version: PROMPT_TEMPLATE_VERSION,
            prompt_template_hash: prompt_template_hash(),
            providers,
            completed_phases: 0,
            config: config.clone(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PersistError + '_ {
    move |source| PersistError::Csv { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, detail: impl Into<String>) -> PersistError {
    PersistError::Parse { path: path.to_path_buf(), detail: detail.into() }
}

#[derive(Debug, Serialize, Deserialize)]
struct RoundRow {
    tournament_id: String,
    phase: u32,
    match_id: u32,
    round_idx: u32,
    strategy_a: String,
    strategy_b: String,
    move_a: Move,
    move_b: Move,
    payoff_a: Points,
    payoff_b: Points,
    rationale_id_a: Option<u64>,
    rationale_id_b: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RationaleRow {
    rationale_id: u64,
    tournament_id: String,
    phase: u32,
    match_id: u32,
    round_idx: u32,
    strategy: String,
    provider: String,
    model: String,
    chosen_move: Move,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct AbortedRow {
    tournament_id: String,
    phase: u32,
    match_id: u32,
    strategy_a: String,
    strategy_b: String,
    round: u32,
    error_kind: String,
    attempts: Option<u32>,
    message: String,
}

#[derive(Debug, Serialize)]
struct FitnessRow<'a> {
    phase: u32,
    strategy: &'a str,
    total_score: Points,
    total_moves: u64,
    fitness: f64,
    mean_fitness: f64,
}

fn writer<W: Write>(w: W, columns: &[&str]) -> csv::Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(columns)?;
    Ok(out)
}

/// One row per played round of every completed match.
pub fn write_round_rows<W: Write>(log: &TournamentLog, w: W) -> csv::Result<()> {
    let mut out = writer(w, &ROUND_COLUMNS)?;
    for phase in &log.phases {
        for m in &phase.matches {
            for (i, r) in m.rounds.iter().enumerate() {
                out.serialize(RoundRow {
                    tournament_id: log.tournament_id.clone(),
                    phase: phase.phase,
                    match_id: m.match_id,
                    round_idx: i as u32 + 1,
                    strategy_a: m.agent_a.strategy.to_string(),
                    strategy_b: m.agent_b.strategy.to_string(),
                    move_a: r.move_a,
                    move_b: r.move_b,
                    payoff_a: r.payoff_a,
                    payoff_b: r.payoff_b,
                    rationale_id_a: r.rationale_a,
                    rationale_id_b: r.rationale_b,
                })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_rationales<'a, W: Write>(
    records: impl IntoIterator<Item = &'a RationaleRecord>,
    w: W,
) -> csv::Result<()> {
    let mut out = writer(w, &RATIONALE_COLUMNS)?;
    for r in records {
        out.serialize(RationaleRow {
            rationale_id: r.rationale_id,
            tournament_id: r.tournament_id.clone(),
            phase: r.phase,
            match_id: r.match_id,
            round_idx: r.round_idx,
            strategy: r.strategy.to_string(),
            provider: r.provider.clone(),
            model: r.model.clone(),
            chosen_move: r.chosen_move,
            text: r.text.clone(),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Population table: one row per phase, one column per strategy
/// abbreviation, strategies in id order.
pub fn write_populations<W: Write>(populations: &[(u32, Population)], w: W) -> csv::Result<()> {
    let universe: Vec<StrategyId> = {
        let mut all: BTreeMap<StrategyId, ()> = BTreeMap::new();
        for (_, p) in populations {
            for id in p.strategies() {
                all.insert(id.clone(), ());
            }
        }
        all.into_keys().collect()
    };
    let mut columns = vec!["phase".to_string()];
    columns.extend(universe.iter().map(|id| id.abbreviation().to_string()));
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(&columns)?;
    for (phase, p) in populations {
        let mut row = vec![phase.to_string()];
        row.extend(universe.iter().map(|id| p.count(id).to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn error_parts(e: &AgentError) -> (&'static str, Option<u32>, String) {
    match e {
        AgentError::Failure { attempts, last_error } => ("failure", Some(*attempts), last_error.clone()),
        AgentError::Auth(m) => ("auth", None, m.clone()),
        AgentError::Config(m) => ("config", None, m.clone()),
    }
}

pub fn write_aborted<W: Write>(log: &TournamentLog, w: W) -> csv::Result<()> {
    let mut out = writer(w, &ABORTED_COLUMNS)?;
    for phase in &log.phases {
        for a in &phase.aborted {
            let (kind, attempts, message) = error_parts(&a.source);
            out.serialize(AbortedRow {
                tournament_id: log.tournament_id.clone(),
                phase: phase.phase,
                match_id: a.match_id,
                strategy_a: a.agent_a.to_string(),
                strategy_b: a.agent_b.to_string(),
                round: a.round,
                error_kind: kind.to_string(),
                attempts,
                message,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_fitness<W: Write>(reports: &[(u32, FitnessReport<f64>)], w: W) -> csv::Result<()> {
    let mut out = writer(w, &FITNESS_COLUMNS)?;
    for (phase, fit) in reports {
        for (id, s) in &fit.strategies {
            out.serialize(FitnessRow {
                phase: *phase,
                strategy: id.as_str(),
                total_score: s.total_score,
                total_moves: s.total_moves,
                fitness: s.fitness,
                mean_fitness: fit.mean,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<(), PersistError>) -> Result<(), PersistError> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// A tournament's output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn exists(&self) -> bool {
        self.path(MANIFEST_FILE).exists()
    }

    /// Writes every file for the phases in `log` and marks them complete.
    pub fn save(&self, manifest: &Manifest, log: &TournamentLog) -> Result<(), Error> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;

        let rounds = self.path(ROUNDS_FILE);
        write_atomic(&rounds, |buf| write_round_rows(log, buf).map_err(csv_err(&rounds)))?;
        let rationales = self.path(RATIONALES_FILE);
        write_atomic(&rationales, |buf| write_rationales(log.rationales(), buf).map_err(csv_err(&rationales)))?;
        let populations = self.path(POPULATIONS_FILE);
        let pops: Vec<(u32, Population)> = log.phases.iter().map(|p| (p.phase, p.population.clone())).collect();
        write_atomic(&populations, |buf| write_populations(&pops, buf).map_err(csv_err(&populations)))?;
        let aborted = self.path(ABORTED_FILE);
        write_atomic(&aborted, |buf| write_aborted(log, buf).map_err(csv_err(&aborted)))?;
        let fitness = self.path(FITNESS_FILE);
        // A phase whose every match aborted has no fitness; it is logged
        // but leaves no fitness rows.
        let reports: Vec<(u32, FitnessReport<f64>)> = log
            .phases
            .iter()
            .filter_map(|p| match compute_fitness::<num_rational::BigRational>(p) {
                Ok(f) => Some((p.phase, f.to_f64())),
                Err(e) => {
                    log::warn!("phase {}: no fitness: {e}", p.phase);
                    None
                }
            })
            .collect();
        write_atomic(&fitness, |buf| write_fitness(&reports, buf).map_err(csv_err(&fitness)))?;

        let mut manifest = manifest.clone();
        manifest.completed_phases = log.phases.len() as u32;
        let manifest_path = self.path(MANIFEST_FILE);
        write_atomic(&manifest_path, |buf| {
            serde_json::to_writer_pretty(&mut *buf, &manifest).map_err(|e| parse_err(&manifest_path, e.to_string()))?;
            buf.push(b'\n');
            Ok(())
        })?;
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<Manifest, PersistError> {
        let path = self.path(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(&path, e.to_string()))?;
        match raw.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(PersistError::SchemaMismatch {
                    path,
                    detail: format!("schema version {v}, this build reads {SCHEMA_VERSION}"),
                })
            }
            None => return Err(PersistError::SchemaMismatch { path, detail: "no schema_version".into() }),
        }
        serde_json::from_value(raw).map_err(|e| parse_err(&path, e.to_string()))
    }

    /// Loads the manifest and every completed phase. Rows of phases past
    /// `completed_phases` (left by an interrupted write) are ignored.
    pub fn load(&self) -> Result<(Manifest, TournamentLog), PersistError> {
        let manifest = self.load_manifest()?;
        let completed = manifest.completed_phases;
        let cfg = &manifest.config;
        let target = cfg
            .initial_population()
            .map_err(|e| parse_err(&self.path(MANIFEST_FILE), e.to_string()))?
            .target_size();

        let populations = read_populations(&self.path(POPULATIONS_FILE), Some(target))?;
        let rounds: Vec<RoundRow> = read_rows(&self.path(ROUNDS_FILE), &ROUND_COLUMNS)?;
        let rationales: Vec<RationaleRow> = read_rows(&self.path(RATIONALES_FILE), &RATIONALE_COLUMNS)?;
        let aborted: Vec<AbortedRow> = read_rows(&self.path(ABORTED_FILE), &ABORTED_COLUMNS)?;

        let mut log = TournamentLog::new(&manifest.tournament_id, cfg.match_config());
        for phase in 1..=completed {
            let population = populations
                .get(&phase)
                .cloned()
                .ok_or_else(|| parse_err(&self.path(POPULATIONS_FILE), format!("no row for phase {phase}")))?;
            log.phases.push(PhaseLog {
                phase,
                population,
                matches: Vec::new(),
                aborted: Vec::new(),
                rationales: Vec::new(),
            });
        }
        let phase_slot = |phase: u32| (phase >= 1 && phase <= completed).then(|| phase as usize - 1);

        let rounds_path = self.path(ROUNDS_FILE);
        let mut grouped: BTreeMap<(u32, u32), Vec<RoundRow>> = BTreeMap::new();
        for row in rounds {
            if phase_slot(row.phase).is_some() {
                grouped.entry((row.phase, row.match_id)).or_default().push(row);
            }
        }
        let mut instances: BTreeMap<u32, (Vec<StrategyId>, Vec<(usize, usize)>)> = BTreeMap::new();
        for ((phase, match_id), mut rows) in grouped {
            let slot = phase_slot(phase).expect("filtered");
            let (agents, pairs) = instances.entry(phase).or_insert_with(|| {
                let agents = log.phases[slot].population.instances();
                let pairs = round_robin_pairs(agents.len());
                (agents, pairs)
            });
            let &(i, j) = pairs
                .get(match_id as usize)
                .ok_or_else(|| parse_err(&rounds_path, format!("phase {phase} has no match {match_id}")))?;
            rows.sort_by_key(|r| r.round_idx);
            let first = &rows[0];
            let a = strategy_id(&rounds_path, &first.strategy_a)?;
            let b = strategy_id(&rounds_path, &first.strategy_b)?;
            if a != agents[i] || b != agents[j] {
                return Err(parse_err(
                    &rounds_path,
                    format!("phase {phase} match {match_id} pairs {a} and {b}, population implies {} and {}", agents[i], agents[j]),
                ));
            }
            for (k, r) in rows.iter().enumerate() {
                if r.round_idx != k as u32 + 1 {
                    return Err(parse_err(&rounds_path, format!("phase {phase} match {match_id} skips round {}", k + 1)));
                }
            }
            let len = rows.len() as u32;
            let record = MatchRecord {
                match_id,
                agent_a: AgentRef { instance: i as u32, strategy: a },
                agent_b: AgentRef { instance: j as u32, strategy: b },
                rounds: rows
                    .into_iter()
                    .map(|r| RoundOutcome {
                        move_a: r.move_a,
                        move_b: r.move_b,
                        payoff_a: r.payoff_a,
                        payoff_b: r.payoff_b,
                        rationale_a: r.rationale_id_a,
                        rationale_b: r.rationale_id_b,
                    })
                    .collect(),
                terminated_by: if len >= cfg.hard_cap { TerminatedBy::HardCap } else { TerminatedBy::ProbabilityDraw },
            };
            log.phases[slot].matches.push(record);
        }

        let rationale_path = self.path(RATIONALES_FILE);
        for r in rationales {
            if let Some(slot) = phase_slot(r.phase) {
                log.phases[slot].rationales.push(RationaleRecord {
                    rationale_id: r.rationale_id,
                    tournament_id: r.tournament_id,
                    phase: r.phase,
                    match_id: r.match_id,
                    round_idx: r.round_idx,
                    strategy: strategy_id(&rationale_path, &r.strategy)?,
                    provider: r.provider,
                    model: r.model,
                    text: r.text,
                    chosen_move: r.chosen_move,
                });
            }
        }

        let aborted_path = self.path(ABORTED_FILE);
        for r in aborted {
            if let Some(slot) = phase_slot(r.phase) {
                let source = match r.error_kind.as_str() {
                    "failure" => AgentError::Failure { attempts: r.attempts.unwrap_or(0), last_error: r.message },
                    "auth" => AgentError::Auth(r.message),
                    "config" => AgentError::Config(r.message),
                    other => return Err(parse_err(&aborted_path, format!("unknown error kind {other:?}"))),
                };
                log.phases[slot].aborted.push(MatchAborted {
                    match_id: r.match_id,
                    agent_a: strategy_id(&aborted_path, &r.strategy_a)?,
                    agent_b: strategy_id(&aborted_path, &r.strategy_b)?,
                    round: r.round,
                    source,
                });
            }
        }
        Ok((manifest, log))
    }
}

fn strategy_id(path: &Path, label: &str) -> Result<StrategyId, PersistError> {
    StrategyId::new(label).map_err(|e| parse_err(path, e.to_string()))
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<(), PersistError> {
    if found.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(PersistError::SchemaMismatch {
            path: path.to_path_buf(),
            detail: format!("header {:?}, expected {:?}", found.iter().collect::<Vec<_>>(), expected),
        })
    }
}

fn open(path: &Path) -> Result<csv::Reader<Box<dyn Read>>, PersistError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().from_reader(Box::new(file) as Box<dyn Read>))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<Vec<T>, PersistError> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    check_header(path, &header, columns)?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err(path))
}

/// Reads a population table: a `phase` column followed by one count column
/// per strategy (full ids or abbreviations). Each population's target size
/// is its row total.
pub fn load_populations(path: &Path) -> Result<BTreeMap<u32, Population>, PersistError> {
    read_populations(path, None)
}

fn read_populations(path: &Path, target: Option<u32>) -> Result<BTreeMap<u32, Population>, PersistError> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.get(0) != Some("phase") {
        return Err(PersistError::SchemaMismatch { path: path.to_path_buf(), detail: "first column must be phase".into() });
    }
    let ids = header.iter().skip(1).map(|h| strategy_id(path, h)).collect::<Result<Vec<_>, _>>()?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        let number = |s: &str| s.trim().parse::<u32>().map_err(|e| parse_err(path, format!("{s:?}: {e}")));
        let phase = number(&record[0])?;
        let mut counts = Vec::with_capacity(ids.len());
        for (id, cell) in ids.iter().zip(record.iter().skip(1)) {
            counts.push((id.clone(), number(cell)?));
        }
        let total = counts.iter().map(|(_, n)| n).sum();
        out.insert(phase, Population::with_target(counts, target.unwrap_or(total)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_round_log_gives_one_row() {
        let mut log = TournamentLog::new("t1", crate::game::MatchConfig::new(0.1, 0).unwrap());
        let id = |s: &str| StrategyId::new(s).unwrap();
        log.phases.push(PhaseLog {
            phase: 1,
            population: Population::new([(id("TFT"), 1), (id("Alt"), 1)]),
            matches: vec![MatchRecord {
                match_id: 0,
                agent_a: AgentRef { instance: 0, strategy: id("Alt") },
                agent_b: AgentRef { instance: 1, strategy: id("TFT") },
                rounds: vec![RoundOutcome {
                    move_a: Move::C,
                    move_b: Move::D,
                    payoff_a: 0,
                    payoff_b: 5,
                    rationale_a: None,
                    rationale_b: Some(7),
                }],
                terminated_by: TerminatedBy::ProbabilityDraw,
            }],
            aborted: vec![],
            rationales: vec![],
        });
        let mut buf = Vec::new();
        write_round_rows(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "tournament_id,phase,match_id,round_idx,strategy_a,strategy_b,move_a,move_b,payoff_a,payoff_b,rationale_id_a,rationale_id_b\n\
             t1,1,0,1,Alternator,TitForTat,C,D,0,5,,7\n"
        );
    }

    #[test]
    fn population_table_uses_abbreviations() {
        let id = |s: &str| StrategyId::new(s).unwrap();
        let p = Population::new([(id("TFT"), 2), (id("Gemini"), 3), (id("Rand"), 0)]);
        let mut buf = Vec::new();
        write_populations(&[(1, p)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "phase,Gem,Rand,TFT\n1,3,0,2\n");
    }
}
