mod common;

use common::*;
use proptest::prelude::*;
use scacopf::benders::{
    filter, parallel_map, partition, rank_contingencies, run, utilization, BendersError,
    Executor, RunStatus,
};
use scacopf::config::{ConfigError, SolverConfig};
use scacopf::contingency::solve_with_agc;
use scacopf::grid::{Contingency, ContingencyKind};

fn config_with(f: impl FnOnce(&mut SolverConfig)) -> SolverConfig {
    let mut c = SolverConfig::default();
    f(&mut c);
    c
}

#[test]
fn filter_examples() {
    let ids: Vec<usize> = (1..=10).collect();
    assert_eq!(filter(&ids, 0.25), vec![1, 2, 3]);
    assert_eq!(filter(&ids, 1.0), ids);
    assert_eq!(filter(&ids, 0.01), vec![1]);
    assert!(filter::<usize>(&[], 0.5).is_empty());
}

#[test]
fn partition_examples() {
    assert_eq!(partition(12, 6), vec![0..2, 2..4, 4..6, 6..8, 8..10, 10..12]);
    assert_eq!(partition(5, 2), vec![0..3, 3..5]);
    assert_eq!(partition(2, 6), vec![0..1, 1..2]);
    assert!(partition(0, 4).is_empty());
}

#[test]
fn ranking_breaks_ties_by_id() {
    let grid = load_case("case3");
    let base = solve_base(&grid, &SolverConfig::default());
    let same = |id| Contingency {
        id,
        ..grid.contingencies[0].clone()
    };
    let ctgs = vec![same(5), same(2), same(9)];
    let ranked: Vec<usize> = rank_contingencies(&grid, &base, &ctgs)
        .iter()
        .map(|c| c.id)
        .collect();
    assert_eq!(ranked, vec![2, 5, 9]);
}

#[test]
fn ranking_orders_by_utilization() {
    let grid = load_case("case30");
    let base = solve_base(&grid, &SolverConfig::default());
    let ranked = rank_contingencies(&grid, &base, &grid.contingencies);
    assert_eq!(ranked.len(), grid.contingencies.len());
    for w in ranked.windows(2) {
        let (a, b) = (utilization(&grid, &base, w[0]), utilization(&grid, &base, w[1]));
        assert!(a > b || (a == b && w[0].id < w[1].id));
    }
    let g4 = grid.contingencies.iter().find(|c| c.kind == ContingencyKind::GeneratorOutage);
    if let Some(c) = g4 {
        let g = grid.gen_position(c.element).unwrap();
        let u = utilization(&grid, &base, c);
        assert!((u - base.p_gen[g] / grid.generators[g].pmax).abs() < 1e-15);
    }
}

#[test]
fn no_contingencies_stop_at_iteration_zero() {
    let grid = load_case("case2");
    let out = run(&grid, &SolverConfig::default()).unwrap();
    assert_eq!(out.status, RunStatus::Optimal);
    assert_eq!(out.ledger.len(), 1);
    assert_eq!(out.ledger[0].iteration, 0);
    assert_eq!(out.ledger[0].violations, 0);
    assert!(out.cuts.is_empty() && out.selected.is_empty());
    let base = out.base.unwrap();
    assert_eq!(out.objective, base.generation_cost);
    // 80 MW at 10 per MW plus losses.
    assert!(out.objective >= 800.0 && out.objective < 820.0, "{}", out.objective);
}

#[test]
fn bounds_move_monotonically() {
    for name in ["case3", "case14", "case30"] {
        let grid = load_case(name);
        let config = SolverConfig::default();
        let out = run(&grid, &config).unwrap();
        assert_eq!(out.status, RunStatus::Optimal, "{name}");
        let noise = 10.0 * config.solver_tol;
        for (n, row) in out.ledger.iter().enumerate() {
            assert_eq!(row.iteration, n + 1);
            assert!(row.z_upper >= row.z_lower - noise, "{name}: {row:?}");
        }
        for w in out.ledger.windows(2) {
            assert!(w[1].z_lower >= w[0].z_lower, "{name}");
            assert!(w[1].z_upper <= w[0].z_upper, "{name}");
        }
        let last = out.ledger.last().unwrap();
        assert_eq!(out.objective, last.z_upper);
        assert_eq!((out.z_lower, out.z_upper), (last.z_lower, last.z_upper));
        assert_eq!(out.results.len(), out.selected.len());
        for cut in &out.cuts {
            assert!(out.selected.iter().any(|c| c.id == cut.contingency));
            assert!(cut.iteration_added >= 1 && cut.iteration_added < out.ledger.len());
        }
        let ids: Vec<usize> = out.selected.iter().map(|c| c.id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn cuts_pass_through_the_point_they_were_taken_at() {
    let grid = load_case("case3");
    let config = SolverConfig::default();
    let base = solve_base(&grid, &config);
    for ctg in &grid.contingencies {
        let r = solve_with_agc(&grid, ctg, &base, &config).unwrap();
        let cut = scacopf::benders::build_cut(&grid, &r, &base, 1).unwrap();
        let value = cut.evaluate(&base.p_gen, &base.lifted.c_self);
        assert!((value - r.mismatch_cost).abs() <= 1e-9 * r.mismatch_cost.max(1.0));
        let mut missing = r.clone();
        missing.coupling_duals.p_gen.clear();
        assert!(scacopf::benders::build_cut(&grid, &missing, &base, 1).is_err());
    }
}

#[test]
fn worker_count_does_not_change_the_run() {
    let grid = load_case("case3");
    let reference = run(&grid, &SolverConfig::default()).unwrap();
    for workers in [2, 3] {
        let out = run(&grid, &config_with(|c| c.workers = workers)).unwrap();
        let a: Vec<_> = reference.ledger.iter().map(|r| r.deterministic()).collect();
        let b: Vec<_> = out.ledger.iter().map(|r| r.deterministic()).collect();
        assert_eq!(a, b);
        assert_eq!(reference.objective.to_bits(), out.objective.to_bits());
        assert_eq!(reference.cuts, out.cuts);
        assert_eq!(out.timing.workers, workers);
    }
}

#[test]
fn parallel_sweep_matches_one_by_one() {
    let grid = load_case("case30");
    let config = SolverConfig::default();
    let base = solve_base(&grid, &config);
    let ctgs = &grid.contingencies[..8];
    let sweep = parallel_map(&Executor::new(4).unwrap(), &grid, ctgs, &base, &config).unwrap();
    for (c, r) in ctgs.iter().zip(&sweep) {
        let alone = solve_with_agc(&grid, c, &base, &config).unwrap();
        assert_eq!(r.contingency, c.id);
        assert_eq!(r.mismatch_cost.to_bits(), alone.mismatch_cost.to_bits());
        assert_eq!(r.branch_state, alone.branch_state);
    }
}

#[test]
fn disconnected_base_is_infeasible() {
    let out = run(&load_case("islanded"), &SolverConfig::default()).unwrap();
    assert_eq!(out.status, RunStatus::Infeasible);
    assert!(out.base.is_none() && out.ledger.is_empty());
    assert!(out.objective.is_nan());
}

#[test]
fn islanding_contingencies_are_skipped() {
    let mut file = load_case("case2").from_per_unit().unwrap().to_case_file();
    file.contingencies = vec![line_outage(4, 1)];
    let grid = grid_from(file);
    let out = run(&grid, &SolverConfig::default()).unwrap();
    assert_eq!(out.islanded, vec![4]);
    assert_eq!(out.status, RunStatus::Optimal);
    assert!(out.selected.is_empty());
}

#[test]
fn iteration_limit() {
    let grid = load_case("case3");
    let out = run(&grid, &config_with(|c| c.max_iterations = 1)).unwrap();
    assert_eq!(out.status, RunStatus::IterationLimit);
    assert_eq!(out.ledger.len(), 1);
    assert!(out.ledger[0].violations > 0);
}

#[test]
fn invalid_configuration_is_rejected() {
    let grid = load_case("case3");
    let err = run(&grid, &config_with(|c| c.filter_level = 0.0)).unwrap_err();
    assert!(matches!(err, BendersError::Config(ConfigError::FilterLevel(_))));
    let err = run(&grid, &config_with(|c| c.workers = 0)).unwrap_err();
    assert!(matches!(err, BendersError::Config(ConfigError::Workers)));
    let err = run(&grid, &config_with(|c| c.penalty.q = -1.0)).unwrap_err();
    assert!(matches!(err, BendersError::Config(ConfigError::Penalty)));
}

proptest! {
    #[test]
    fn filter_keeps_a_ceiling_prefix(n in 0usize..60, level in 0.001f64..=1.0) {
        let ranked: Vec<usize> = (0..n).collect();
        let kept = filter(&ranked, level);
        let expected = if n == 0 { 0 } else { ((level * n as f64).ceil() as usize).clamp(1, n) };
        prop_assert_eq!(kept.len(), expected);
        prop_assert_eq!(&kept[..], &ranked[..kept.len()]);
        let more = filter(&ranked, (level * 1.5).min(1.0));
        prop_assert!(more.len() >= kept.len());
    }

    #[test]
    fn partition_covers_in_order(n in 0usize..200, workers in 1usize..16) {
        let blocks = partition(n, workers);
        prop_assert!(blocks.len() <= workers);
        let mut next = 0;
        for b in &blocks {
            prop_assert_eq!(b.start, next);
            prop_assert!(b.end > b.start && b.len() <= n.div_ceil(workers));
            next = b.end;
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn executor_preserves_order(items in proptest::collection::vec(any::<i32>(), 0..50), workers in 1usize..6) {
        let exec = Executor::new(workers).unwrap();
        let out = exec.map(&items, |x| i64::from(*x) * 2);
        let expected: Vec<i64> = items.iter().map(|x| i64::from(*x) * 2).collect();
        prop_assert_eq!(out, expected);
    }
}
