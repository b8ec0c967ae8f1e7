//! Run reports and their json, csv and text renderings.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::benders::{BendersOutcome, IterationRecord, RunStatus, Timing};
use crate::contingency::{ReactiveState, RealState};
use crate::grid::{ContingencyKind, Grid, Units};
use crate::relaxation::{recover_voltages, tightness, RelaxError};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected json, csv or text)")]
    UnknownFormat(String),
    #[error("report needs a per-unit grid")]
    NotPerUnit,
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("csv output is not utf-8")]
    Utf8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "text" => Ok(Format::Text),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// A contingency column of the voltage and AGC tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContingencyColumn {
    pub id: usize,
    pub kind: ContingencyKind,
    pub element: usize,
    /// AGC scale in MW.
    pub delta_mw: f64,
    pub mismatch: f64,
    pub agc_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoltageRow {
    pub bus: usize,
    pub base: f64,
    /// One entry per contingency column.
    pub contingencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgcEntry {
    pub p: f64,
    pub q: f64,
    pub real: RealState,
    pub reactive: ReactiveState,
}

/// One generator of the AGC table, in MW and MVAr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgcRow {
    pub generator: usize,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub alpha: f64,
    pub p_base: f64,
    pub q_base: f64,
    /// `None` where the generator is the outaged element.
    pub contingencies: Vec<Option<AgcEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TightnessRow {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScopfReport {
    pub status: RunStatus,
    pub objective: Option<f64>,
    pub z_lower: Option<f64>,
    pub z_upper: Option<f64>,
    pub contingencies: Vec<ContingencyColumn>,
    pub iterations: Vec<IterationRecord>,
    pub voltages: Vec<VoltageRow>,
    pub agc: Vec<AgcRow>,
    pub tightness: Vec<TightnessRow>,
    pub islanded: Vec<usize>,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl ScopfReport {
    /// Assemble the tables from a finished run on a per-unit grid. Powers
    /// are reported in MW and MVAr, voltages in p.u.
    pub fn from_outcome(grid: &Grid, outcome: &BendersOutcome) -> Result<Self, ReportError> {
        if grid.units != Units::PerUnit {
            return Err(ReportError::NotPerUnit);
        }
        let mva = grid.base_mva;
        let mut report = ScopfReport {
            status: outcome.status,
            objective: finite(outcome.objective),
            z_lower: finite(outcome.z_lower),
            z_upper: finite(outcome.z_upper),
            contingencies: Vec::new(),
            iterations: outcome.ledger.clone(),
            voltages: Vec::new(),
            agc: Vec::new(),
            tightness: Vec::new(),
            islanded: outcome.islanded.clone(),
            warnings: Vec::new(),
            timing: outcome.timing.clone(),
        };
        let Some(base) = &outcome.base else {
            return Ok(report);
        };
        report.contingencies = outcome
            .selected
            .iter()
            .zip(&outcome.results)
            .map(|(c, r)| ContingencyColumn {
                id: c.id,
                kind: c.kind,
                element: c.element,
                delta_mw: r.delta * mva,
                mismatch: r.mismatch_cost,
                agc_iterations: r.agc_iterations,
            })
            .collect();
        report.warnings = outcome
            .results
            .iter()
            .flat_map(|r| r.warnings.iter().cloned())
            .collect();

        let u_base = recover_voltages(&base.lifted)?;
        let u_ctg: Vec<Vec<f64>> = outcome
            .results
            .iter()
            .map(|r| recover_voltages(&r.lifted))
            .collect::<Result<_, _>>()?;
        report.voltages = grid
            .buses
            .iter()
            .enumerate()
            .map(|(i, bus)| VoltageRow {
                bus: bus.id,
                base: u_base[i],
                contingencies: u_ctg.iter().map(|u| u[i]).collect(),
            })
            .collect();

        report.agc = grid
            .generators
            .iter()
            .enumerate()
            .map(|(g, gen)| AgcRow {
                generator: gen.id,
                bus: gen.bus,
                p_min: gen.pmin * mva,
                p_max: gen.pmax * mva,
                q_min: gen.qmin * mva,
                q_max: gen.qmax * mva,
                alpha: gen.alpha,
                p_base: base.p_gen[g] * mva,
                q_base: base.q_gen[g] * mva,
                contingencies: outcome
                    .results
                    .iter()
                    .map(|r| {
                        let real = *r.branch_state.real.get(&g)?;
                        let reactive = *r.branch_state.reactive.get(&g)?;
                        Some(AgcEntry {
                            p: r.p_gen[g] * mva,
                            q: r.q_gen[g] * mva,
                            real,
                            reactive,
                        })
                    })
                    .collect(),
            })
            .collect();

        report.tightness = tightness(&base.lifted)
            .into_iter()
            .map(|t| TightnessRow {
                from: grid.buses[t.pair.0].id,
                to: grid.buses[t.pair.1].id,
                value: t.value,
            })
            .collect();
        Ok(report)
    }
}

/// `1234567.89` → `1,234,567.9`.
pub fn thousands(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.*}", decimals, x.abs());
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s.as_str(), None),
    };
    let mut grouped = String::new();
    for (k, ch) in int.chars().enumerate() {
        if k > 0 && (int.len() - k) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    let negative = x < 0.0 && s.chars().any(|c| c.is_ascii_digit() && c != '0');
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    out.push_str(&grouped);
    if let Some(f) = frac {
        out.push('.');
        out.push_str(f);
    }
    out
}

fn opt_thousands(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| thousands(v, 1))
}

fn list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(", ")
}

fn table(s: &mut String, header: &[String], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(s, "{}", line(header));
    for row in rows {
        let _ = writeln!(s, "{}", line(row));
    }
}

fn render_text(r: &ScopfReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Status: {}", r.status);
    let _ = writeln!(s, "Objective: {}", opt_thousands(r.objective));
    let _ = writeln!(
        s,
        "Bounds: [{}, {}]",
        opt_thousands(r.z_lower),
        opt_thousands(r.z_upper)
    );
    if !r.islanded.is_empty() {
        let _ = writeln!(s, "Skipped (islanding): {}", list(&r.islanded, |k| k.to_string()));
    }

    let _ = writeln!(s, "\nTable 1: Bus voltages during base and contingency cases");
    let mut header = vec!["Bus Index".to_string(), "u_i".to_string()];
    header.extend(r.contingencies.iter().map(|c| format!("u_ik (k={})", c.id)));
    let rows: Vec<Vec<String>> = r
        .voltages
        .iter()
        .map(|v| {
            let mut row = vec![v.bus.to_string(), format!("{:.3}", v.base)];
            row.extend(v.contingencies.iter().map(|u| format!("{u:.3}")));
            row
        })
        .collect();
    table(&mut s, &header, &rows);

    let _ = writeln!(s, "\nTable 2: Automatic generation control response");
    let gens = &r.agc;
    let _ = writeln!(s, "Generator: {}", list(gens, |g| g.generator.to_string()));
    let _ = writeln!(s, "Bus: {}", list(gens, |g| g.bus.to_string()));
    let _ = writeln!(s, "p_min: {}", list(gens, |g| format!("{:.2}", g.p_min)));
    let _ = writeln!(s, "p_max: {}", list(gens, |g| format!("{:.2}", g.p_max)));
    let _ = writeln!(s, "q_min: {}", list(gens, |g| format!("{:.2}", g.q_min)));
    let _ = writeln!(s, "q_max: {}", list(gens, |g| format!("{:.2}", g.q_max)));
    let _ = writeln!(s, "α: {}", list(gens, |g| g.alpha.to_string()));
    let _ = writeln!(s, "p_g: {}", list(gens, |g| format!("{:.2}", g.p_base)));
    let _ = writeln!(s, "q_g: {}", list(gens, |g| format!("{:.2}", g.q_base)));
    for (k, c) in r.contingencies.iter().enumerate() {
        let cell = |f: &dyn Fn(&AgcEntry) -> String| {
            list(gens, |g| g.contingencies[k].as_ref().map_or("-".to_string(), f))
        };
        let _ = writeln!(s, "p_gk (k={}): {}", c.id, cell(&|e| format!("{:.2}", e.p)));
        let _ = writeln!(s, "q_gk (k={}): {}", c.id, cell(&|e| format!("{:.2}", e.q)));
        let _ = writeln!(
            s,
            "state (k={}): {}",
            c.id,
            cell(&|e| format!("{}/{}", e.real, e.reactive))
        );
    }
    if !r.contingencies.is_empty() {
        let _ = writeln!(
            s,
            "Δ_k: {}",
            list(&r.contingencies, |c| format!("{:.2}", c.delta_mw))
        );
    }

    let _ = writeln!(s, "\nTable 3: Tightness of the relaxation");
    let rows: Vec<Vec<String>> = r
        .tightness
        .iter()
        .map(|t| vec![format!("({},{})", t.from, t.to), format!("{:.4}", t.value)])
        .collect();
    table(&mut s, &["Pair".to_string(), "T_ij".to_string()], &rows);

    let _ = writeln!(s, "\nTable 4: Iterations");
    let header: Vec<String> = ["Iterations", "Violations", "Objective", "Mismatch", "z_lower", "z_upper"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    let rows: Vec<Vec<String>> = r
        .iterations
        .iter()
        .map(|it| {
            vec![
                it.iteration.to_string(),
                it.violations.to_string(),
                thousands(it.objective, 1),
                thousands(it.total_mismatch, 1),
                thousands(it.z_lower, 1),
                thousands(it.z_upper, 1),
            ]
        })
        .collect();
    table(&mut s, &header, &rows);

    if !r.warnings.is_empty() {
        let _ = writeln!(s, "\nWarnings:");
        for w in &r.warnings {
            let _ = writeln!(s, "{w}");
        }
    }
    s
}

fn render_csv(r: &ScopfReport) -> Result<String, ReportError> {
    let mut out = Vec::new();
    let section = |out: &mut Vec<u8>,
                   title: &str,
                   header: Vec<String>,
                   rows: Vec<Vec<String>>|
     -> Result<(), ReportError> {
        if !out.is_empty() {
            out.push(b'\n');
        }
        out.extend_from_slice(format!("# {title}\n").as_bytes());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        out.extend(w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))?);
        Ok(())
    };
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    section(
        &mut out,
        "summary",
        vec!["status".into(), "objective".into(), "zLower".into(), "zUpper".into()],
        vec![vec![
            r.status.to_string(),
            opt(r.objective),
            opt(r.z_lower),
            opt(r.z_upper),
        ]],
    )?;
    let mut header = vec!["bus".to_string(), "u_i".to_string()];
    header.extend(r.contingencies.iter().map(|c| format!("u_ik_{}", c.id)));
    section(
        &mut out,
        "voltages",
        header,
        r.voltages
            .iter()
            .map(|v| {
                let mut row = vec![v.bus.to_string(), v.base.to_string()];
                row.extend(v.contingencies.iter().map(|u| u.to_string()));
                row
            })
            .collect(),
    )?;
    let mut header: Vec<String> = [
        "generator", "bus", "p_min", "p_max", "q_min", "q_max", "alpha", "p_g", "q_g",
    ]
    .iter()
    .map(|h| h.to_string())
    .collect();
    for c in &r.contingencies {
        header.push(format!("p_gk_{}", c.id));
        header.push(format!("q_gk_{}", c.id));
        header.push(format!("state_{}", c.id));
    }
    section(
        &mut out,
        "agc",
        header,
        r.agc
            .iter()
            .map(|g| {
                let mut row: Vec<String> = [
                    g.generator as f64,
                    g.bus as f64,
                    g.p_min,
                    g.p_max,
                    g.q_min,
                    g.q_max,
                    g.alpha,
                    g.p_base,
                    g.q_base,
                ]
                .iter()
                .map(|v| v.to_string())
                .collect();
                for e in &g.contingencies {
                    match e {
                        Some(e) => {
                            row.push(e.p.to_string());
                            row.push(e.q.to_string());
                            row.push(format!("{}/{}", e.real, e.reactive));
                        }
                        None => row.extend([String::new(), String::new(), "outaged".to_string()]),
                    }
                }
                row
            })
            .collect(),
    )?;
    section(
        &mut out,
        "contingencies",
        vec![
            "id".into(),
            "kind".into(),
            "element".into(),
            "delta_mw".into(),
            "mismatch".into(),
            "agc_iterations".into(),
        ],
        r.contingencies
            .iter()
            .map(|c| {
                vec![
                    c.id.to_string(),
                    c.kind.to_string(),
                    c.element.to_string(),
                    c.delta_mw.to_string(),
                    c.mismatch.to_string(),
                    c.agc_iterations.to_string(),
                ]
            })
            .collect(),
    )?;
    section(
        &mut out,
        "tightness",
        vec!["from".into(), "to".into(), "t_ij".into()],
        r.tightness
            .iter()
            .map(|t| vec![t.from.to_string(), t.to.to_string(), t.value.to_string()])
            .collect(),
    )?;
    section(
        &mut out,
        "iterations",
        [
            "iteration",
            "violations",
            "objective",
            "total_mismatch",
            "z_lower",
            "z_upper",
        ]
        .iter()
        .map(|h| h.to_string())
        .collect(),
        r.iterations
            .iter()
            .map(|it| {
                vec![
                    it.iteration.to_string(),
                    it.violations.to_string(),
                    it.objective.to_string(),
                    it.total_mismatch.to_string(),
                    it.z_lower.to_string(),
                    it.z_upper.to_string(),
                ]
            })
            .collect(),
    )?;
    String::from_utf8(out).map_err(|_| ReportError::Utf8)
}

/// Render a report. Text and csv leave out wall-clock timings so that
/// identical runs give identical bytes; json carries everything.
pub fn render_tables(report: &ScopfReport, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Csv => render_csv(report),
        Format::Text => Ok(render_text(report)),
    }
}
