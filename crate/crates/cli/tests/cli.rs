use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn evoipd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evoipd"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn dry_run_reports_the_match_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("full-roster.toml");
    let text = stdout_of(&evoipd(&["run", cfg.to_str().unwrap(), "--dry-run"], tmp.path()));
    assert!(text.contains("agents: 24"), "{text}");
    assert!(text.contains("matches per phase: 276"), "{text}");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn run_resume_analyze_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("mock-llm.toml");
    let out = tmp.path().join("run");
    let run = |extra: &[&str]| {
        let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        stdout_of(&evoipd(&args, tmp.path()))
    };
    let first = run(&[]);
    assert!(first.starts_with("phase,"), "{first}");
    let rounds = fs::read(out.join("rounds.csv")).unwrap();
    assert!(run(&[]).contains("already complete"));
    run(&["--fresh"]);
    assert_eq!(fs::read(out.join("rounds.csv")).unwrap(), rounds);

    let run_arg = out.to_str().unwrap();
    let fp = stdout_of(&evoipd(&["analyze", "fingerprints", "--run", run_arg], tmp.path()));
    assert!(fp.starts_with("tournament_id,strategy,p_c_after_CC"), "{fp}");
    assert!(fp.contains("mock-p25,TitForTat,1.000"), "{fp}");
    for table in ["cooperation", "head2head", "scores", "instability"] {
        let text = stdout_of(&evoipd(&["analyze", table, "--run", run_arg], tmp.path()));
        assert!(text.lines().count() > 1, "{table}: {text}");
    }

    let report_dir = tmp.path().join("report");
    stdout_of(&evoipd(&["report", "--run", run_arg, "--out", report_dir.to_str().unwrap()], tmp.path()));
    for file in ["fingerprints.csv", "instability.csv", "fingerprints-mock-p25.svg", "populations-mock-p25.svg"] {
        assert!(report_dir.join(file).exists(), "missing {file}");
    }
    let svg = fs::read_to_string(report_dir.join("populations-mock-p25.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let sample = tmp.path().join("sample.csv");
    let said = stdout_of(&evoipd(
        &["code", "sample", "--run", run_arg, "--fraction", "0.5", "--seed", "3", "--out", sample.to_str().unwrap()],
        tmp.path(),
    ));
    assert!(said.starts_with("sampled "), "{said}");
    let header = fs::read_to_string(&sample).unwrap();
    assert!(header.starts_with("rationale_id,tournament_id,strategy,chosen_move,text,coder_a_horizon"));
}

#[test]
fn constant_populations_have_zero_instability() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("adv25.csv");
    fs::write(&table, "phase,TFT,Grim,Rand,Gemini\n1,2,2,2,2\n2,2,2,2,2\n3,2,2,2,2\n4,2,2,2,2\n5,2,2,2,2\n").unwrap();
    let text = stdout_of(&evoipd(&["analyze", "instability", "--populations", table.to_str().unwrap()], tmp.path()));
    assert!(text.contains("adv25,mean,,0.000"), "{text}");

    fs::write(&table, "phase,Grim,Rand,TFT\n1,2,2,2\n2,3,1,2\n").unwrap();
    let text = stdout_of(&evoipd(&["analyze", "instability", "--populations", table.to_str().unwrap()], tmp.path()));
    assert!(text.contains("adv25,1,2,1.414"), "{text}");
}

#[test]
fn labeling_and_agreement_with_mock_coders() {
    let tmp = tempfile::tempdir().unwrap();
    let sample = tmp.path().join("sample.csv");
    fs::write(
        &sample,
        "rationale_id,tournament_id,strategy,chosen_move,text\n\
         1,adv75,Gemini,D,Only a few rounds are likely left.\n\
         2,adv75,Gemini,C,They seem to copy me.\n\
         3,adv10,Gemini,C,Cooperating pays off.\n\
         4,adv10,Gemini,D,\"The end may be near, so I defect.\"\n",
    )
    .unwrap();
    fs::write(
        tmp.path().join("a.json"),
        r#"{"mode": "prompt_hash", "replies": ["horizon=explicit; opponent=no", "horizon=none; opponent=yes"]}"#,
    )
    .unwrap();
    fs::write(
        tmp.path().join("b.json"),
        r#"{"mode": "prompt_hash", "replies": ["horizon=implicit; opponent=no", "horizon=none; opponent=yes"]}"#,
    )
    .unwrap();
    let coders = tmp.path().join("coders.toml");
    fs::write(
        &coders,
        "[a]\nprovider = \"mock\"\nmodel_name = \"coder-a\"\nmock_fixture = \"a.json\"\n\
         [b]\nprovider = \"mock\"\nmodel_name = \"coder-b\"\nmock_fixture = \"b.json\"\n",
    )
    .unwrap();
    let labelled = tmp.path().join("labelled.csv");
    stdout_of(&evoipd(
        &[
            "code",
            "label",
            "--sample",
            sample.to_str().unwrap(),
            "--coders",
            coders.to_str().unwrap(),
            "--out",
            labelled.to_str().unwrap(),
        ],
        tmp.path(),
    ));
    let text = fs::read_to_string(&labelled).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| !l.ends_with(",,,,")), "{text}");

    let crosstab = stdout_of(&evoipd(&["code", "crosstab", "--sample", labelled.to_str().unwrap(), "--by", "tournament"], tmp.path()));
    assert!(crosstab.starts_with("condition,label,cooperations,n,cooperation_rate"), "{crosstab}");
    assert_eq!(crosstab.lines().count(), 5);
    let kappa = evoipd(&["code", "kappa", "--sample", labelled.to_str().unwrap()], tmp.path());
    // both coders agree on horizon awareness but not on its kind, so kappa exists or the marginals are degenerate
    assert!(kappa.status.success() || String::from_utf8_lossy(&kappa.stderr).contains("marginal"));
}

#[test]
fn bad_configs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "tournament_id = \"x\"\ntermination_probability = 2.0\nmaster_seed = 1\n[roster]\nTFT = 2\n").unwrap();
    let out = evoipd(&["run", cfg.to_str().unwrap(), "--dry-run"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("termination probability"));
}
