use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scacopf::conic::{
    solve, AffineExpr, ConicProblem, ConstraintHandle, ProblemBuilder, SolveStatus, SolverSettings,
    VarId,
};

struct RandomLp {
    c: Vec<f64>,
    g: Vec<Vec<f64>>,
    h: Vec<f64>,
    bound: f64,
}

fn random_lp(seed: u64, n: usize, m: usize) -> RandomLp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    // The origin is strictly feasible.
    let h = (0..m).map(|_| rng.gen_range(0.2..2.0)).collect();
    RandomLp { c, g, h, bound: 3.0 }
}

fn build_lp(lp: &RandomLp) -> (ConicProblem, Vec<ConstraintHandle>) {
    let mut b = ProblemBuilder::new();
    let x: Vec<VarId> = (0..lp.c.len())
        .map(|j| b.add_variable(format!("x{j}"), -lp.bound, lp.bound))
        .collect();
    let mut obj = AffineExpr::new();
    for (j, &cj) in lp.c.iter().enumerate() {
        obj.add_term(x[j], cj);
    }
    b.set_objective(obj);
    let handles = lp
        .g
        .iter()
        .zip(&lp.h)
        .enumerate()
        .map(|(i, (row, &hi))| {
            let mut e = AffineExpr::constant(-hi);
            for (j, &a) in row.iter().enumerate() {
                e.add_term(x[j], a);
            }
            b.add_inequality(format!("r{i}"), e)
        })
        .collect();
    (b.build().unwrap(), handles)
}

/// Minimum over all feasible vertices of the polytope.
fn vertex_enumeration(lp: &RandomLp) -> f64 {
    let n = lp.c.len();
    let mut rows: Vec<(Vec<f64>, f64)> = lp.g.iter().cloned().zip(lp.h.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), lp.bound));
        e[j] = -1.0;
        rows.push((e, lp.bound));
    }
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; n];
    fn rec(
        start: usize,
        depth: usize,
        pick: &mut Vec<usize>,
        rows: &[(Vec<f64>, f64)],
        c: &[f64],
        best: &mut f64,
    ) {
        let n = c.len();
        if depth == n {
            let a = DMatrix::from_fn(n, n, |r, col| rows[pick[r]].0[col]);
            let rhs = DVector::from_fn(n, |r, _| rows[pick[r]].1);
            let Some(x) = a.lu().solve(&rhs) else { return };
            let feasible = rows
                .iter()
                .all(|(g, h)| g.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() <= h + 1e-9);
            if feasible {
                let v: f64 = c.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                *best = best.min(v);
            }
            return;
        }
        for k in start..rows.len() {
            pick[depth] = k;
            rec(k + 1, depth + 1, pick, rows, c, best);
        }
    }
    rec(0, 0, &mut pick, &rows, &lp.c, &mut best);
    best
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let settings = SolverSettings::default();
    for seed in 0..40 {
        let n = 2 + (seed as usize % 2);
        let lp = random_lp(seed, n, 3 + seed as usize % 4);
        let (problem, _) = build_lp(&lp);
        let sol = solve(&problem, &settings);
        assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
        let oracle = vertex_enumeration(&lp);
        assert!(
            (sol.objective_value - oracle).abs() <= 1e-6,
            "seed {seed}: {} vs {oracle}",
            sol.objective_value
        );
        assert!(problem.max_violation(&sol.primal) <= 1e-7);
    }
}

#[test]
fn ball_minimization_matches_closed_form() {
    // minimize cᵀx subject to ‖x - x0‖ ≤ r: optimum cᵀx0 - r‖c‖.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let d = rng.gen_range(2..5);
        let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = rng.gen_range(0.1..3.0);
        let mut b = ProblemBuilder::new();
        let x: Vec<VarId> = (0..d).map(|j| b.free_variable(format!("x{j}"))).collect();
        let mut obj = AffineExpr::new();
        for j in 0..d {
            obj.add_term(x[j], c[j]);
        }
        b.set_objective(obj);
        let vector = (0..d).map(|j| AffineExpr::var(x[j]).plus(-x0[j])).collect();
        b.add_soc("ball", vector, AffineExpr::constant(r));
        let sol = solve(&b.build().unwrap(), &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected: f64 = c.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>() - r * cn;
        assert!((sol.objective_value - expected).abs() < 1e-6);
    }
}

#[test]
fn inequality_duals_match_finite_differences() {
    let lp = random_lp(11, 3, 6);
    let (problem, handles) = build_lp(&lp);
    let settings = SolverSettings::default();
    let base = solve(&problem, &settings);
    let eps = 1e-5;
    for (i, h) in handles.iter().enumerate() {
        let mut shifted = RandomLp {
            c: lp.c.clone(),
            g: lp.g.clone(),
            h: lp.h.clone(),
            bound: lp.bound,
        };
        shifted.h[i] += eps;
        let (p2, _) = build_lp(&shifted);
        let s2 = solve(&p2, &settings);
        // Relaxing the right-hand side lowers the optimum by the multiplier.
        let fd = (base.objective_value - s2.objective_value) / eps;
        let mu = base.dual(*h).unwrap();
        assert!((fd - mu).abs() < 1e-3, "row {i}: fd {fd} dual {mu}");
    }
}

#[test]
fn rotated_cone_products() {
    // maximize v subject to v² ≤ x y, x ≤ 2, y ≤ 8: optimum v = 4.
    let mut b = ProblemBuilder::new();
    let x = b.add_variable("x", 0.0, 2.0);
    let y = b.add_variable("y", 0.0, 8.0);
    let v = b.free_variable("v");
    b.add_objective_term(v, -1.0);
    b.add_rotated_soc("rot", AffineExpr::var(x), AffineExpr::var(y), vec![AffineExpr::var(v)]);
    let sol = solve(&b.build().unwrap(), &SolverSettings::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.value(v) - 4.0).abs() < 1e-6);
}

#[test]
fn infeasible_problem_is_detected() {
    let mut b = ProblemBuilder::new();
    let x = b.add_variable("x", 0.0, 1.0);
    b.add_objective_term(x, 1.0);
    b.add_inequality("x>=2", AffineExpr::constant(2.0).term(x, -1.0));
    let sol = solve(&b.build().unwrap(), &SolverSettings::default());
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn solves_are_bit_identical() {
    let lp = random_lp(3, 3, 5);
    let (problem, _) = build_lp(&lp);
    let a = solve(&problem, &SolverSettings::default());
    let b = solve(&problem, &SolverSettings::default());
    assert_eq!(a.primal, b.primal);
    assert_eq!(a.dual_ineq, b.dual_ineq);
    assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weak_duality_and_complementarity(seed in 0u64..10_000, n in 2usize..5, m in 2usize..8) {
        let settings = SolverSettings::default();
        let lp = random_lp(seed, n, m);
        let (problem, handles) = build_lp(&lp);
        let sol = solve(&problem, &settings);
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        prop_assert!((sol.objective_value - sol.dual_objective).abs() <= 10.0 * settings.tol);
        for (i, h) in handles.iter().enumerate() {
            let mu = sol.dual(*h).unwrap();
            let slack: f64 = lp.h[i] - lp.g[i].iter().zip(&sol.primal).map(|(a, b)| a * b).sum::<f64>();
            prop_assert!(mu >= -1e-9);
            prop_assert!((mu * slack).abs() <= 1e-6, "row {}: mu {} slack {}", i, mu, slack);
        }
    }
}
