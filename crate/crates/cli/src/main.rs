//! `evoipd`: run, analyze and report evolutionary IPD tournaments.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evoipd_core::analysis::{self, strategies_in};
use evoipd_core::archive::{
    coder_labels, load_archived_rounds, load_labeling_sample, write_labeling_sample, ArchiveMapping, LabelingRow,
};
use evoipd_core::coding::{agreed_labels, code_all, cohens_kappa, cross_tab, sample_rationales, Dimension};
use evoipd_core::llm::{LlmClient, ProviderConfig, RationaleRecord};
use evoipd_core::persist::{load_populations, Manifest, RunDir};
use evoipd_core::report::{self, Table};
use evoipd_core::{run_tournament, PhaseLog, Population, StrategyId, TournamentConfig, TournamentLog};

#[derive(Parser)]
#[command(name = "evoipd", version, about = "Evolutionary iterated prisoner's dilemma tournaments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or resume a tournament described by a TOML config.
    Run(RunArgs),
    /// Print one analysis table as CSV.
    Analyze {
        #[arg(value_enum)]
        table: AnalyzeTable,
        #[command(flatten)]
        input: Input,
        /// Restrict head-to-head rows to this strategy.
        #[arg(long)]
        strategy: Option<String>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Content coding of rationales.
    Code {
        #[command(subcommand)]
        step: CodeStep,
    },
    /// Write every table as CSV plus SVG charts into a directory.
    Report {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Print the population size and match count without playing.
    #[arg(long)]
    dry_run: bool,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Discard an existing run in the output directory instead of resuming.
    #[arg(long)]
    fresh: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum AnalyzeTable {
    Fingerprints,
    Cooperation,
    Instability,
    Head2head,
    Scores,
}

/// Where analysis reads from. Several `--run` directories may be given.
#[derive(Args, Default)]
struct Input {
    /// Run directory written by `evoipd run`.
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
    /// Round log in another layout, read through the archive adapter.
    #[arg(long)]
    archive: Vec<PathBuf>,
    /// Column mapping for `--archive` and labeling files.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Population table (`phase` column plus one column per strategy).
    #[arg(long)]
    populations: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum CodeStep {
    /// Draw a uniform sample of rationales for labeling.
    Sample {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill empty coder columns using the machine coders in a TOML file
    /// with `[a]` and `[b]` provider tables.
    Label {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        coders: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Cohen's kappa per dimension between the two coders.
    Kappa {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Cooperation rate by condition and coder-agreed label.
    Crosstab {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, default_value = "horizon")]
        dimension: Dimension,
        #[arg(long, value_enum, default_value = "tournament-strategy")]
        by: GroupBy,
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum GroupBy {
    Tournament,
    Strategy,
    TournamentStrategy,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Analyze { table, input, strategy, out } => {
            let t = analyze(table, &input, strategy.as_deref())?;
            emit(&t, out.as_deref())
        }
        Command::Code { step } => code(step),
        Command::Report { input, out } => write_report(&input, &out),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = TournamentConfig::load(&args.config)?;
    let initial = cfg.initial_population()?;
    if args.dry_run {
        println!("tournament: {}", cfg.tournament_id);
        println!("agents: {}", initial.total());
        println!("matches per phase: {}", initial.match_count());
        println!("phases: {}", cfg.phases);
        return Ok(());
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.tournament_id));
    let dir = RunDir::new(&out);
    let resume = if dir.exists() && !args.fresh {
        let (manifest, log) = dir.load().with_context(|| format!("reading {}", out.display()))?;
        if manifest.config != cfg {
            bail!("{} holds a run with a different config; pass --fresh to overwrite", out.display());
        }
        log::info!("resuming after {} completed phases", log.phases.len());
        Some(log)
    } else {
        None
    };
    if resume.as_ref().is_some_and(|l| l.phases.len() as u32 >= cfg.phases) {
        println!("{} is already complete ({} phases)", out.display(), cfg.phases);
        return Ok(());
    }
    let registry = cfg.registry()?;
    let manifest = Manifest::new(&cfg);
    let log = run_tournament(&cfg.settings()?, &registry, resume, |log| dir.save(&manifest, log))?;
    let table = report::population_table(&log.populations());
    print!("{}", table.to_csv_string());
    let aborted: usize = log.phases.iter().map(|p| p.aborted.len()).sum();
    if aborted > 0 {
        log::warn!("{aborted} matches aborted; see aborted.csv");
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// A loaded run or archive, labelled for tables that span several inputs.
struct Source {
    label: String,
    log: TournamentLog,
}

fn mapping(path: Option<&Path>) -> Result<ArchiveMapping> {
    Ok(match path {
        Some(p) => ArchiveMapping::load(p)?,
        None => ArchiveMapping::default(),
    })
}

fn load_sources(input: &Input) -> Result<Vec<Source>> {
    let mut sources = Vec::new();
    for dir in &input.runs {
        let (manifest, log) = RunDir::new(dir).load().with_context(|| format!("reading {}", dir.display()))?;
        sources.push(Source { label: manifest.tournament_id, log });
    }
    let map = mapping(input.mapping.as_deref())?;
    for path in &input.archive {
        let matches = load_archived_rounds(path, &map)?;
        let mut by_tournament: BTreeMap<String, BTreeMap<u32, Vec<_>>> = BTreeMap::new();
        for m in matches {
            let label = m.tournament_id.unwrap_or_else(|| file_stem(path));
            by_tournament.entry(label).or_default().entry(m.phase.unwrap_or(1)).or_default().push(m.record);
        }
        for (label, phases) in by_tournament {
            let cfg = evoipd_core::MatchConfig::new(0.5, 0).expect("valid");
            let mut log = TournamentLog::new(&label, cfg);
            for (phase, matches) in phases {
                log.phases.push(PhaseLog {
                    phase,
                    population: Population::new(Vec::new()),
                    matches,
                    aborted: Vec::new(),
                    rationales: Vec::new(),
                });
            }
            sources.push(Source { label, log });
        }
    }
    Ok(sources)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn population_runs(input: &Input, sources: &[Source]) -> Result<Vec<(String, Vec<Population>)>> {
    let mut runs: Vec<(String, Vec<Population>)> = sources
        .iter()
        .filter(|s| s.log.phases.iter().any(|p| p.population.total() > 0))
        .map(|s| (s.label.clone(), s.log.populations()))
        .collect();
    for path in &input.populations {
        let table = load_populations(path)?;
        runs.push((file_stem(path), table.into_values().collect()));
    }
    Ok(runs)
}

fn need_sources(sources: &[Source]) -> Result<()> {
    if sources.is_empty() {
        bail!("no input; pass --run or --archive");
    }
    Ok(())
}

fn merge_tables(sources: &[Source], build: impl Fn(&TournamentLog) -> Result<Table>) -> Result<Table> {
    let mut merged: Option<Table> = None;
    for s in sources {
        let t = build(&s.log)?;
        let labelled = Table {
            columns: std::iter::once("tournament_id".to_string()).chain(t.columns).collect(),
            rows: t.rows.into_iter().map(|r| std::iter::once(s.label.clone()).chain(r).collect()).collect(),
        };
        match &mut merged {
            None => merged = Some(labelled),
            Some(m) => m.rows.extend(labelled.rows),
        }
    }
    Ok(merged.unwrap_or_default())
}

fn analyze(table: AnalyzeTable, input: &Input, strategy: Option<&str>) -> Result<Table> {
    let sources = load_sources(input)?;
    let focus = strategy.map(StrategyId::new).transpose()?;
    Ok(match table {
        AnalyzeTable::Instability => {
            let runs = population_runs(input, &sources)?;
            if runs.is_empty() {
                bail!("no populations; pass --run or --populations");
            }
            report::instability_table(&runs)?
        }
        AnalyzeTable::Fingerprints => {
            need_sources(&sources)?;
            merge_tables(&sources, |log| Ok(report::fingerprint_table(log, &selected(log, focus.as_ref()))?))?
        }
        AnalyzeTable::Cooperation => {
            need_sources(&sources)?;
            merge_tables(&sources, |log| Ok(report::cooperation_table(log, &selected(log, focus.as_ref()))?))?
        }
        AnalyzeTable::Head2head => {
            need_sources(&sources)?;
            merge_tables(&sources, |log| Ok(report::head_to_head_table(log, focus.as_ref())))?
        }
        AnalyzeTable::Scores => {
            need_sources(&sources)?;
            merge_tables(&sources, |log| Ok(report::scores_table(log)))?
        }
    })
}

fn selected(log: &TournamentLog, focus: Option<&StrategyId>) -> Vec<StrategyId> {
    strategies_in(log).into_iter().filter(|s| focus.is_none_or(|f| f == s)).collect()
}

fn emit(table: &Table, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            table.write_csv(file)?;
        }
        None => {
            let stdout = std::io::stdout();
            table.write_csv(stdout.lock())?;
        }
    }
    Ok(())
}

fn write_report(input: &Input, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let sources = load_sources(input)?;
    let runs = population_runs(input, &sources)?;
    let save = |name: &str, t: &Table| emit(t, Some(&out.join(name)));
    let svg = |name: &str, body: String| -> Result<()> {
        fs::write(out.join(name), body).with_context(|| format!("writing {name}"))
    };

    if !sources.is_empty() {
        save("fingerprints.csv", &analyze(AnalyzeTable::Fingerprints, input, None)?)?;
        save("cooperation.csv", &analyze(AnalyzeTable::Cooperation, input, None)?)?;
        save("head2head.csv", &analyze(AnalyzeTable::Head2head, input, None)?)?;
        save("scores.csv", &analyze(AnalyzeTable::Scores, input, None)?)?;
    }
    let runs_with_transitions: Vec<_> = runs.iter().filter(|(_, p)| p.len() >= 2).cloned().collect();
    if !runs_with_transitions.is_empty() {
        save("instability.csv", &report::instability_table(&runs_with_transitions)?)?;
    }
    for s in &sources {
        let name = sanitize(&s.label);
        let mut fps = Vec::new();
        let mut rates = Vec::new();
        for id in strategies_in(&s.log) {
            fps.push((id.clone(), analysis::fingerprint(&s.log, &id)?));
            if let Some(rate) = analysis::tally(&s.log, &id)?.cooperation_rate::<f64>() {
                rates.push((id, rate));
            }
        }
        svg(&format!("fingerprints-{name}.svg"), report::fingerprint_svg(&format!("Fingerprints: {}", s.label), &fps))?;
        svg(&format!("cooperation-{name}.svg"), report::cooperation_svg(&format!("Cooperation: {}", s.label), &rates))?;
    }
    for (label, pops) in &runs {
        let name = sanitize(label);
        save(&format!("populations-{name}.csv"), &report::population_table(pops))?;
        svg(&format!("populations-{name}.svg"), report::population_svg(&format!("Population: {label}"), pops))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn code(step: CodeStep) -> Result<()> {
    match step {
        CodeStep::Sample { runs, fraction, seed, out } => {
            let mut records: Vec<RationaleRecord> = Vec::new();
            for dir in &runs {
                let (_, log) = RunDir::new(dir).load().with_context(|| format!("reading {}", dir.display()))?;
                records.extend(log.rationales().cloned());
            }
            let picked = sample_rationales(&records, fraction, seed)?;
            let rows: Vec<LabelingRow> = picked.iter().map(LabelingRow::from_record).collect();
            write_labeling_sample(&rows, fs::File::create(&out)?)?;
            println!("sampled {} of {} rationales into {}", rows.len(), records.len(), out.display());
        }
        CodeStep::Label { sample, coders, out, mapping: map } => {
            let mut rows = load_labeling_sample(&sample, &mapping(map.as_deref())?)?;
            let text = fs::read_to_string(&coders).with_context(|| format!("reading {}", coders.display()))?;
            let mut configs: BTreeMap<String, ProviderConfig> = toml::from_str(&text)?;
            let base = coders.parent().unwrap_or(Path::new(""));
            for key in ["a", "b"] {
                let mut cfg = configs.remove(key).with_context(|| format!("{} has no [{key}] table", coders.display()))?;
                if let Some(fixture) = cfg.mock_fixture.as_mut().filter(|f| f.is_relative()) {
                    *fixture = base.join(&*fixture);
                }
                let client = LlmClient::from_config(&cfg)?;
                let todo: Vec<(usize, RationaleRecord)> = rows
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| if key == "a" { r.coder_a.is_none() } else { r.coder_b.is_none() })
                    .filter_map(|(i, r)| r.to_record().map(|rec| (i, rec)))
                    .collect();
                let records: Vec<RationaleRecord> = todo.iter().map(|(_, r)| r.clone()).collect();
                let labels = code_all(&client, key, &records)?;
                for ((i, _), label) in todo.iter().zip(labels) {
                    let value = Some((label.horizon, label.opponent));
                    if key == "a" {
                        rows[*i].coder_a = value;
                    } else {
                        rows[*i].coder_b = value;
                    }
                }
                log::info!("coder {key} labelled {} rationales", records.len());
            }
            write_labeling_sample(&rows, fs::File::create(&out)?)?;
            println!("wrote {}", out.display());
        }
        CodeStep::Kappa { sample, mapping: map } => {
            let rows = load_labeling_sample(&sample, &mapping(map.as_deref())?)?;
            let (a, b) = coder_labels(&rows);
            let reports = [Dimension::Horizon, Dimension::Opponent]
                .into_iter()
                .map(|d| cohens_kappa::<f64>(&a, &b, d))
                .collect::<Result<Vec<_>, _>>()?;
            emit(&report::kappa_table(&reports), None)?;
        }
        CodeStep::Crosstab { sample, dimension, by, mapping: map } => {
            let rows = load_labeling_sample(&sample, &mapping(map.as_deref())?)?;
            let (a, b) = coder_labels(&rows);
            let agreed = agreed_labels(&a, &b, dimension);
            let records: Vec<RationaleRecord> = rows.iter().filter_map(LabelingRow::to_record).collect();
            let cells = cross_tab::<f64>(&agreed, &records, |r| match by {
                GroupBy::Tournament => r.tournament_id.clone(),
                GroupBy::Strategy => r.strategy.to_string(),
                GroupBy::TournamentStrategy => format!("{} {}", r.tournament_id, r.strategy),
            });
            emit(&report::cross_tab_table(&cells), None)?;
        }
    }
    std::io::stdout().flush()?;
    Ok(())
}
