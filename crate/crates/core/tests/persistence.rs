use std::fs;
use std::path::Path;

use evoipd_core::error::PersistError;
use evoipd_core::persist::{
    write_round_rows, Manifest, RunDir, ABORTED_FILE, FITNESS_FILE, MANIFEST_FILE, POPULATIONS_FILE, RATIONALES_FILE,
    ROUNDS_FILE,
};
use evoipd_core::{run_tournament, TournamentConfig, TournamentLog};

const FILES: [&str; 6] = [MANIFEST_FILE, ROUNDS_FILE, RATIONALES_FILE, POPULATIONS_FILE, ABORTED_FILE, FITNESS_FILE];

fn mock_config(dir: &Path) -> TournamentConfig {
    let fixture = dir.join("replies.json");
    fs::write(
        &fixture,
        r#"{"mode": "prompt_hash", "replies": [
            "Cooperation has paid off, so I keep it up.\nC",
            "The end could come any round; \"grab\" the points now,\nthen see.\nD"
        ]}"#,
    )
    .unwrap();
    let text = format!(
        r#"
tournament_id = "persist"
termination_probability = 0.25
phases = 4
master_seed = 99
mutation = true

[roster]
TitForTat = 2
Grim = 1
Alternator = 2
Mocky = 2

[providers.Mocky]
provider = "mock"
model_name = "mock-1"
mock_fixture = {:?}
"#,
        fixture.display().to_string()
    );
    TournamentConfig::from_toml_str(&text).unwrap()
}

fn run(cfg: &TournamentConfig, dir: &RunDir, resume: Option<TournamentLog>) -> TournamentLog {
    let manifest = Manifest::new(cfg);
    run_tournament(&cfg.settings().unwrap(), &cfg.registry().unwrap(), resume, |log| dir.save(&manifest, log)).unwrap()
}

#[test]
fn saved_runs_load_back_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mock_config(tmp.path());
    let dir = RunDir::new(tmp.path().join("run"));
    let log = run(&cfg, &dir, None);
    assert!(log.rationales().count() > 0);

    let (manifest, loaded) = dir.load().unwrap();
    assert_eq!(manifest.completed_phases, 4);
    assert_eq!(manifest.config, cfg);
    assert_eq!(loaded, log);
}

#[test]
fn resuming_reproduces_an_uninterrupted_run_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mock_config(tmp.path());
    let whole = RunDir::new(tmp.path().join("whole"));
    run(&cfg, &whole, None);

    let split = RunDir::new(tmp.path().join("split"));
    let mut first_half = cfg.settings().unwrap();
    first_half.phases = 2;
    let manifest = Manifest::new(&cfg);
    run_tournament(&first_half, &cfg.registry().unwrap(), None, |log| split.save(&manifest, log)).unwrap();
    let (_, partial) = split.load().unwrap();
    assert_eq!(partial.phases.len(), 2);
    run(&cfg, &split, Some(partial));

    for file in FILES {
        let a = fs::read(whole.path(file)).unwrap();
        let b = fs::read(split.path(file)).unwrap();
        assert!(a == b, "{file} differs after resume");
    }
}

#[test]
fn rows_of_unfinished_phases_are_ignored() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mock_config(tmp.path());
    let dir = RunDir::new(tmp.path().join("run"));
    let log = run(&cfg, &dir, None);

    // a crash after rounds.csv was rewritten but before the manifest was
    let mut manifest = dir.load_manifest().unwrap();
    manifest.completed_phases = 3;
    fs::write(dir.path(MANIFEST_FILE), serde_json::to_string(&manifest).unwrap()).unwrap();
    let (_, loaded) = dir.load().unwrap();
    assert_eq!(loaded.phases.len(), 3);
    assert_eq!(loaded.phases[..], log.phases[..3]);
}

#[test]
fn one_round_log_has_one_row() {
    use evoipd_core::game::{AgentRef, MatchRecord, RoundOutcome, TerminatedBy};
    use evoipd_core::{MatchConfig, Move, PhaseLog, Population, StrategyId};

    let tft = StrategyId::new("TFT").unwrap();
    let mut log = TournamentLog::new("one", MatchConfig::new(0.5, 1).unwrap());
    log.phases.push(PhaseLog {
        phase: 1,
        population: Population::new([(tft.clone(), 2)]),
        matches: vec![MatchRecord {
            match_id: 0,
            agent_a: AgentRef { instance: 0, strategy: tft.clone() },
            agent_b: AgentRef { instance: 1, strategy: tft },
            rounds: vec![RoundOutcome {
                move_a: Move::C,
                move_b: Move::D,
                payoff_a: 0,
                payoff_b: 5,
                rationale_a: None,
                rationale_b: None,
            }],
            terminated_by: TerminatedBy::ProbabilityDraw,
        }],
        aborted: vec![],
        rationales: vec![],
    });
    let mut buf = Vec::new();
    write_round_rows(&log, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1], "one,1,0,1,TitForTat,TitForTat,C,D,0,5,,");
}

#[test]
fn schema_and_header_mismatches_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mock_config(tmp.path());
    let dir = RunDir::new(tmp.path().join("run"));
    run(&cfg, &dir, None);

    let rounds = fs::read_to_string(dir.path(ROUNDS_FILE)).unwrap();
    fs::write(dir.path(ROUNDS_FILE), rounds.replacen("move_a", "action_a", 1)).unwrap();
    assert!(matches!(dir.load(), Err(PersistError::SchemaMismatch { .. })));
    fs::write(dir.path(ROUNDS_FILE), rounds).unwrap();
    dir.load().unwrap();

    let manifest = fs::read_to_string(dir.path(MANIFEST_FILE)).unwrap();
    fs::write(dir.path(MANIFEST_FILE), manifest.replace("\"schema_version\": 1", "\"schema_version\": 7")).unwrap();
    assert!(matches!(dir.load(), Err(PersistError::SchemaMismatch { .. })));
}
