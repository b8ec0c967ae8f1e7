mod common;

use common::*;
use scacopf::benders::{run, RunStatus};
use scacopf::config::SolverConfig;
use scacopf::report::{render_tables, Format, ReportError, ScopfReport};

fn report_for(name: &str, workers: usize) -> ScopfReport {
    let grid = load_case(name);
    let config = SolverConfig {
        workers,
        ..SolverConfig::default()
    };
    let out = run(&grid, &config).unwrap();
    ScopfReport::from_outcome(&grid, &out).unwrap()
}

fn text(r: &ScopfReport) -> String {
    render_tables(r, Format::Text).unwrap()
}

fn csv_section<'a>(csv: &'a str, title: &str) -> &'a str {
    let start = csv.find(&format!("# {title}\n")).unwrap() + title.len() + 3;
    let rest = &csv[start..];
    rest.find("\n# ").map_or(rest, |end| &rest[..end + 1])
}

#[test]
fn json_round_trip_is_exact() {
    let r = report_for("case14", 1);
    let json = render_tables(&r, Format::Json).unwrap();
    let back: ScopfReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in [
        "status",
        "objective",
        "zLower",
        "zUpper",
        "iterations",
        "voltages",
        "agc",
        "tightness",
        "timing",
    ] {
        assert!(value.get(key).is_some(), "missing {key}");
    }
    assert_eq!(value["status"], "optimal");
}

#[test]
fn ieee14_agc_block() {
    let r = report_for("case14", 1);
    let t = text(&r);
    assert!(t.contains("\nα: 5, 19, 49.3, 38.8, 3\n"), "{t}");
    assert!(t.contains("\np_max: "));
    assert!(t.contains("\nq_min: "));
    let p_max = t.lines().find(|l| l.starts_with("p_max: ")).unwrap();
    assert!(p_max.contains("110.50"), "{p_max}");
    // Every contingency has a column in both tables.
    let header = t.lines().find(|l| l.trim_start().starts_with("Bus Index")).unwrap();
    for c in &r.contingencies {
        assert!(header.contains(&format!("u_ik (k={})", c.id)));
        assert!(t.contains(&format!("\np_gk (k={}): ", c.id)));
    }
    assert_eq!(r.voltages.len(), 14);
    assert_eq!(r.agc.len(), 5);
}

#[test]
fn no_contingencies_leave_a_single_voltage_column() {
    let r = report_for("case2", 1);
    let t = text(&r);
    let header = t.lines().find(|l| l.trim_start().starts_with("Bus Index")).unwrap();
    assert_eq!(header.split_whitespace().collect::<Vec<_>>(), ["Bus", "Index", "u_i"]);
    assert!(!t.contains("p_gk"));
    assert!(!t.contains("Δ_k"));
}

#[test]
fn infeasible_report() {
    let grid = load_case("islanded");
    let out = run(&grid, &SolverConfig::default()).unwrap();
    let r = ScopfReport::from_outcome(&grid, &out).unwrap();
    assert_eq!(r.status, RunStatus::Infeasible);
    assert_eq!(r.objective, None);
    assert!(r.voltages.is_empty() && r.iterations.is_empty());
    assert!(text(&r).starts_with("Status: infeasible\nObjective: -\n"));
    let json = render_tables(&r, Format::Json).unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(value["objective"].is_null());
}

#[test]
fn physical_units_are_refused() {
    let grid = load_case("case3");
    let out = run(&grid, &SolverConfig::default()).unwrap();
    let physical = grid.from_per_unit().unwrap();
    assert!(matches!(
        ScopfReport::from_outcome(&physical, &out),
        Err(ReportError::NotPerUnit)
    ));
}

#[test]
fn text_and_csv_are_stable_across_runs_and_workers() {
    let a = report_for("case3", 1);
    let b = report_for("case3", 1);
    let c = report_for("case3", 3);
    for format in [Format::Text, Format::Csv] {
        let reference = render_tables(&a, format).unwrap();
        assert_eq!(reference, render_tables(&b, format).unwrap());
        assert_eq!(reference, render_tables(&c, format).unwrap());
    }
}

#[test]
fn text_numbers_are_rounded_in_memory_values() {
    let r = report_for("case14", 1);
    let t = text(&r);
    let table1: Vec<&str> = t
        .lines()
        .skip_while(|l| !l.trim_start().starts_with("Bus Index"))
        .skip(1)
        .take(r.voltages.len())
        .collect();
    for (line, v) in table1.iter().zip(&r.voltages) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells[0], v.bus.to_string());
        assert_eq!(cells[1], format!("{:.3}", v.base));
        for (cell, u) in cells[2..].iter().zip(&v.contingencies) {
            assert_eq!(*cell, format!("{u:.3}"));
        }
    }
    for row in &r.tightness {
        let expected = format!("({},{})", row.from, row.to);
        let line = t
            .lines()
            .find(|l| l.split_whitespace().next() == Some(expected.as_str()))
            .unwrap();
        assert!(line.ends_with(&format!("{:.4}", row.value)));
    }
    let last = r.iterations.last().unwrap();
    let objective = scacopf::report::thousands(r.objective.unwrap(), 1);
    assert!(t.contains(&format!("Objective: {objective}\n")));
    assert!(t.contains(&scacopf::report::thousands(last.z_upper, 1)));
}

#[test]
fn csv_sections_hold_the_exact_values() {
    let r = report_for("case14", 1);
    let csv = render_tables(&r, Format::Csv).unwrap();
    let titles: Vec<&str> = csv
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .collect();
    assert_eq!(
        titles,
        ["summary", "voltages", "agc", "contingencies", "tightness", "iterations"]
    );
    let mut reader = csv::Reader::from_reader(csv_section(&csv, "voltages").as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), r.voltages.len());
    for (row, v) in rows.iter().zip(&r.voltages) {
        assert_eq!(row[0].parse::<usize>().unwrap(), v.bus);
        assert_eq!(row[1].parse::<f64>().unwrap(), v.base);
        for (cell, u) in row.iter().skip(2).zip(&v.contingencies) {
            assert_eq!(cell.parse::<f64>().unwrap(), *u);
        }
    }
    let mut reader = csv::Reader::from_reader(csv_section(&csv, "iterations").as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), r.iterations.len());
    for (row, it) in rows.iter().zip(&r.iterations) {
        assert_eq!(row[2].parse::<f64>().unwrap(), it.objective);
        assert_eq!(row[5].parse::<f64>().unwrap(), it.z_upper);
    }
    assert!(!csv.contains("wall"));
}
