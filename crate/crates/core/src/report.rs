//! Analysis tables (CSV) and SVG charts.

use std::fmt::Write as _;
use std::io::Write;

use crate::analysis::{
    self, fmt_probability, head_to_head_of, instability, Fingerprint, PrevState, ABSENT,
};
use crate::coding::{CrossTabCell, KappaReport};
use crate::error::AnalysisError;
use crate::evolution::TournamentLog;
use crate::game::MatchRecord;
use crate::population::{Population, StrategyId};
use crate::scalar::Scalar;

/// A rectangular table of already formatted cells.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 cells")
    }
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn fmt_opt<S: Scalar>(x: Option<S>) -> String {
    x.map(|v| fmt3(v.to_f64())).unwrap_or_else(|| ABSENT.to_string())
}

fn all_matches(log: &TournamentLog) -> impl Iterator<Item = &MatchRecord> {
    log.phases.iter().flat_map(|p| p.matches.iter())
}

/// P(C | previous state) per strategy, with occurrence counts.
pub fn fingerprint_table(log: &TournamentLog, strategies: &[StrategyId]) -> Result<Table, AnalysisError> {
    let mut cols = vec!["strategy"];
    let prob_cols: Vec<String> = PrevState::ALL.iter().map(|s| format!("p_c_after_{}", s.label())).collect();
    let n_cols: Vec<String> = PrevState::ALL.iter().map(|s| format!("n_{}", s.label())).collect();
    cols.extend(prob_cols.iter().map(String::as_str));
    cols.extend(n_cols.iter().map(String::as_str));
    let mut table = Table::new(&cols);
    for id in strategies {
        let fp = analysis::fingerprint(log, id)?;
        let mut row = vec![id.to_string()];
        row.extend(fp.formatted());
        row.extend(PrevState::ALL.iter().map(|s| fp.count(*s).to_string()));
        table.push(row);
    }
    Ok(table)
}

/// Move-level cooperation rate and score per move per strategy.
pub fn cooperation_table(log: &TournamentLog, strategies: &[StrategyId]) -> Result<Table, AnalysisError> {
    let mut table = Table::new(&["strategy", "moves", "cooperations", "cooperation_rate", "score", "score_per_move"]);
    for id in strategies {
        let t = analysis::tally(log, id)?;
        table.push(vec![
            id.to_string(),
            t.moves.to_string(),
            t.cooperations.to_string(),
            fmt_opt(t.cooperation_rate::<f64>()),
            t.score.to_string(),
            fmt_opt(t.score_per_move::<f64>()),
        ]);
    }
    Ok(table)
}

/// Fitness per phase and strategy with the phase mean.
pub fn scores_table(log: &TournamentLog) -> Table {
    let mut table = Table::new(&["phase", "strategy", "agents", "total_score", "total_moves", "fitness", "mean_fitness"]);
    for phase in &log.phases {
        let Ok(report) = crate::evolution::compute_fitness::<f64>(phase) else {
            continue;
        };
        for (id, f) in &report.strategies {
            table.push(vec![
                phase.phase.to_string(),
                id.to_string(),
                phase.population.count(id).to_string(),
                f.total_score.to_string(),
                f.total_moves.to_string(),
                format!("{:.4}", f.fitness),
                format!("{:.4}", report.mean),
            ]);
        }
    }
    table
}

/// Population counts by phase, one column per strategy abbreviation.
pub fn population_table(populations: &[Population]) -> Table {
    let strategies: Vec<StrategyId> = populations
        .iter()
        .flat_map(|p| p.strategies().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut cols = vec!["phase".to_string()];
    cols.extend(strategies.iter().map(|s| s.abbreviation().to_string()));
    let mut table = Table { columns: cols, rows: Vec::new() };
    for (i, p) in populations.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(strategies.iter().map(|s| p.count(s).to_string()));
        table.push(row);
    }
    table
}

/// Per-transition distances and the mean for each labelled run.
pub fn instability_table(runs: &[(String, Vec<Population>)]) -> Result<Table, AnalysisError> {
    let mut table = Table::new(&["tournament_id", "from_phase", "to_phase", "distance"]);
    for (label, pops) in runs {
        let score = instability::<f64>(&align(pops))?;
        for (i, d) in score.transitions.iter().enumerate() {
            table.push(vec![label.clone(), (i + 1).to_string(), (i + 2).to_string(), fmt3(*d)]);
        }
        table.push(vec![label.clone(), "mean".into(), String::new(), fmt3(score.mean)]);
    }
    Ok(table)
}

/// Puts every population on the union of their strategies so that
/// snapshots taken before a strategy was injected still compare.
pub fn align(pops: &[Population]) -> Vec<Population> {
    let mut all: Vec<StrategyId> = pops.iter().flat_map(|p| p.strategies().cloned()).collect();
    all.sort();
    all.dedup();
    pops.iter()
        .map(|p| {
            let mut q = p.clone();
            for id in &all {
                q.include(id.clone());
            }
            q
        })
        .collect()
}

/// Head-to-head summary of every ordered pair that met.
pub fn head_to_head_table(log: &TournamentLog, focus: Option<&StrategyId>) -> Table {
    let mut table = Table::new(&["strategy", "opponent", "matches", "avg_score", "cooperation_rate"]);
    let strategies = analysis::strategies_in(log);
    for a in &strategies {
        if focus.is_some_and(|f| f != a) {
            continue;
        }
        for b in &strategies {
            if let Ok(h) = head_to_head_of::<f64>(all_matches(log), a, b) {
                table.push(vec![
                    a.to_string(),
                    b.to_string(),
                    h.matches.to_string(),
                    format!("{:.2}", h.avg_score),
                    fmt3(h.cooperation_rate),
                ]);
            }
        }
    }
    table
}

pub fn kappa_table<S: Scalar>(reports: &[KappaReport<S>]) -> Table {
    let mut table = Table::new(&["dimension", "items", "raw_agreement", "expected_agreement", "kappa"]);
    for r in reports {
        table.push(vec![
            r.dimension.to_string(),
            r.items.to_string(),
            format!("{:.4}", r.raw_agreement.to_f64()),
            format!("{:.4}", r.expected_agreement.to_f64()),
            format!("{:.4}", r.kappa.to_f64()),
        ]);
    }
    table
}

pub fn cross_tab_table<S: Scalar>(cells: &[CrossTabCell<S>]) -> Table {
    let mut table = Table::new(&["condition", "label", "cooperations", "n", "cooperation_rate"]);
    for c in cells {
        table.push(vec![
            c.condition.clone(),
            if c.label { "Yes" } else { "No" }.into(),
            c.cooperations.to_string(),
            c.n.to_string(),
            c.cooperation_rate.as_ref().map(|r| format!("{:.2}%", 100.0 * r.to_f64())).unwrap_or_else(|| ABSENT.into()),
        ]);
    }
    table
}

const PALETTE: [&str; 10] =
    ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Canvas {
    body: String,
    width: f64,
    height: f64,
}

impl Canvas {
    const LEFT: f64 = 60.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;
    const RIGHT: f64 = 160.0;

    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut c = Canvas { body: String::new(), width, height };
        c.text(width / 2.0, 22.0, title, "middle", 15.0);
        c
    }

    fn plot_w(&self) -> f64 {
        self.width - Self::LEFT - Self::RIGHT
    }

    fn plot_h(&self) -> f64 {
        self.height - Self::TOP - Self::BOTTOM
    }

    fn y_of(&self, v: f64, max: f64) -> f64 {
        Self::TOP + self.plot_h() * (1.0 - v / max)
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="{size}" font-family="sans-serif">{}</text>"#,
            escape(s)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="{fill}"/>"#);
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"/>"#
        );
    }

    fn axes(&mut self, max: f64, ticks: usize, fmt: impl Fn(f64) -> String) {
        let x0 = Self::LEFT;
        let x1 = Self::LEFT + self.plot_w();
        for i in 0..=ticks {
            let v = max * i as f64 / ticks as f64;
            let y = self.y_of(v, max);
            self.line(x0, y, x1, y, "#dddddd");
            self.text(x0 - 6.0, y + 4.0, &fmt(v), "end", 11.0);
        }
        let bottom = Self::TOP + self.plot_h();
        self.line(x0, bottom, x1, bottom, "#333333");
        self.line(x0, Self::TOP, x0, bottom, "#333333");
    }

    fn legend(&mut self, labels: &[String]) {
        let x = Self::LEFT + self.plot_w() + 16.0;
        for (i, label) in labels.iter().enumerate() {
            let y = Self::TOP + 18.0 * i as f64;
            self.rect(x, y, 12.0, 12.0, PALETTE[i % PALETTE.len()]);
            self.text(x + 18.0, y + 10.0, label, "start", 12.0);
        }
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Grouped bars of P(C | previous state), one group per state. States a
/// strategy never reached are drawn as an "N/A" marker instead of a bar.
pub fn fingerprint_svg(title: &str, fingerprints: &[(StrategyId, Fingerprint)]) -> String {
    let mut c = Canvas::new(760.0, 380.0, title);
    c.axes(1.0, 5, |v| format!("{v:.1}"));
    let groups = PrevState::ALL.len() as f64;
    let group_w = c.plot_w() / groups;
    let bar_w = (group_w * 0.8) / fingerprints.len().max(1) as f64;
    for (g, state) in PrevState::ALL.iter().enumerate() {
        let gx = Canvas::LEFT + group_w * g as f64 + group_w * 0.1;
        for (i, (_, fp)) in fingerprints.iter().enumerate() {
            let x = gx + bar_w * i as f64;
            match fp.probability::<f64>(*state) {
                Some(p) => {
                    let y = c.y_of(p, 1.0);
                    let h = Canvas::TOP + c.plot_h() - y;
                    c.rect(x, y, bar_w * 0.9, h, PALETTE[i % PALETTE.len()]);
                }
                None => {
                    let y = Canvas::TOP + c.plot_h() - 4.0;
                    c.text(x + bar_w * 0.45, y, ABSENT, "middle", 9.0);
                }
            }
        }
        let label_y = Canvas::TOP + c.plot_h() + 18.0;
        c.text(gx + group_w * 0.4, label_y, &format!("after {}", state.label()), "middle", 12.0);
    }
    c.legend(&fingerprints.iter().map(|(id, _)| id.to_string()).collect::<Vec<_>>());
    c.finish()
}

/// Agent counts per strategy across phases.
pub fn population_svg(title: &str, populations: &[Population]) -> String {
    let mut c = Canvas::new(760.0, 380.0, title);
    let aligned = align(populations);
    let max = aligned.iter().flat_map(|p| p.iter().map(|(_, n)| n)).max().unwrap_or(1).max(1) as f64;
    let max = max.ceil();
    c.axes(max, max.min(10.0) as usize, |v| format!("{v:.0}"));
    let steps = aligned.len().saturating_sub(1).max(1) as f64;
    let x_of = |c: &Canvas, i: usize| Canvas::LEFT + c.plot_w() * i as f64 / steps;
    for i in 0..aligned.len() {
        let x = x_of(&c, i);
        c.text(x, Canvas::TOP + c.plot_h() + 18.0, &format!("phase {}", i + 1), "middle", 12.0);
    }
    let ids: Vec<StrategyId> = aligned.first().map(|p| p.strategies().cloned().collect()).unwrap_or_default();
    for (k, id) in ids.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = aligned
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.1},{:.1}", x_of(&c, i), c.y_of(p.count(id) as f64, max)))
            .collect();
        let _ = writeln!(
            c.body,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        );
    }
    c.legend(&ids.iter().map(|id| id.to_string()).collect::<Vec<_>>());
    c.finish()
}

/// One bar per strategy with its move-level cooperation rate.
pub fn cooperation_svg(title: &str, rates: &[(StrategyId, f64)]) -> String {
    let mut c = Canvas::new(760.0, 380.0, title);
    c.axes(1.0, 5, |v| format!("{:.0}%", v * 100.0));
    let slot = c.plot_w() / rates.len().max(1) as f64;
    for (i, (id, rate)) in rates.iter().enumerate() {
        let x = Canvas::LEFT + slot * i as f64 + slot * 0.15;
        let y = c.y_of(*rate, 1.0);
        let h = Canvas::TOP + c.plot_h() - y;
        c.rect(x, y, slot * 0.7, h, PALETTE[i % PALETTE.len()]);
        c.text(x + slot * 0.35, Canvas::TOP + c.plot_h() + 18.0, id.abbreviation(), "middle", 12.0);
        c.text(x + slot * 0.35, y - 4.0, &fmt_probability(Some(*rate)), "middle", 10.0);
    }
    c.finish()
}
