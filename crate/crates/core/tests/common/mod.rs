#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use scacopf::config::SolverConfig;
use scacopf::conic::{solve, SolveStatus};
use scacopf::contingency::{build_with, AgcBranchState, BuildOptions, ReactiveState, RealState};
use scacopf::grid::{
    parse_case, Bus, CaseFile, Contingency, ContingencyKind, ContingencySpec, CostSegment,
    Generator, Grid, Line, Units,
};
use scacopf::relaxation::{build_base_relaxation, extract_base_point, BasePoint};

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("cases")
        .join(format!("{name}.json"))
}

pub fn load_case(name: &str) -> Grid {
    parse_case(&std::fs::read(case_path(name)).unwrap()).unwrap()
}

/// The base point, or `None` when the relaxation is not solved to optimality.
pub fn try_base(grid: &Grid, config: &SolverConfig) -> Option<BasePoint> {
    let (problem, index) = build_base_relaxation(grid, config).ok()?;
    let sol = solve(&problem, &config.solver_settings());
    (sol.status == SolveStatus::Optimal).then(|| extract_base_point(grid, &index, &sol))
}

pub fn solve_base(grid: &Grid, config: &SolverConfig) -> BasePoint {
    let (problem, index) = build_base_relaxation(grid, config).unwrap();
    let sol = solve(&problem, &config.solver_settings());
    assert_eq!(sol.status, SolveStatus::Optimal);
    extract_base_point(grid, &index, &sol)
}

pub fn bus(id: usize, p: f64, q: f64) -> Bus {
    Bus {
        id,
        g_fs: 0.0,
        b_fs: 0.0,
        vmin_base: 0.9,
        vmax_base: 1.1,
        vmin_ctg: 0.85,
        vmax_ctg: 1.15,
        p_load: p,
        q_load: q,
    }
}

pub fn generator(id: usize, bus: usize, pmax: f64, marginal: f64) -> Generator {
    Generator {
        id,
        bus,
        pmin: 0.0,
        pmax,
        qmin: -pmax,
        qmax: pmax,
        alpha: 1.0,
        cost: vec![CostSegment {
            breakpoint: 0.0,
            marginal,
        }],
    }
}

pub fn line(id: usize, from: usize, to: usize, r: f64, x: f64, bch: f64, rating: f64) -> Line {
    let z2 = r * r + x * x;
    Line {
        id,
        from,
        to,
        g: r / z2,
        b: -x / z2,
        bch,
        rating_base: rating,
        rating_ctg: rating,
    }
}

pub fn grid_from(file: CaseFile) -> Grid {
    Grid::from_case(file, Units::Physical)
        .and_then(|g| g.to_per_unit())
        .unwrap()
}

/// A random tree on 2 to 6 buses with one generator at bus 1, in MW.
pub fn random_radial(rng: &mut impl Rng) -> CaseFile {
    let n = rng.gen_range(2..=6);
    let mut buses = vec![bus(1, 0.0, 0.0)];
    for i in 2..=n {
        buses.push(bus(i, rng.gen_range(5.0..40.0), rng.gen_range(-5.0..15.0)));
    }
    let lines = (2..=n)
        .map(|i| {
            let parent = rng.gen_range(1..i);
            let x = rng.gen_range(0.02..0.12);
            let r = x * rng.gen_range(0.1..0.5);
            line(i - 1, parent, i, r, x, rng.gen_range(0.0..0.03), 1000.0)
        })
        .collect();
    CaseFile {
        base_mva: 100.0,
        buses,
        generators: vec![generator(1, 1, 1000.0, rng.gen_range(5.0..30.0))],
        lines,
        transformers: Vec::new(),
        contingencies: Vec::new(),
    }
}

/// Bus admittance matrix of the in-service network.
pub fn ybus(grid: &Grid, lines: &[usize], xfmrs: &[usize]) -> DMatrix<Complex<f64>> {
    let n = grid.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
    for (i, b) in grid.buses.iter().enumerate() {
        y[(i, i)] += Complex::new(b.g_fs, b.b_fs);
    }
    for &e in lines {
        let l = &grid.lines[e];
        let (f, t) = grid.line_ends(e);
        let ys = Complex::new(l.g, l.b);
        let sh = Complex::new(0.0, l.bch / 2.0);
        y[(f, f)] += ys + sh;
        y[(t, t)] += ys + sh;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    for &k in xfmrs {
        let x = &grid.transformers[k];
        let (f, t) = grid.xfmr_ends(k);
        let ys = Complex::new(x.g, x.b);
        let ym = Complex::new(x.g_m, x.b_m);
        let a = Complex::new(x.tr, x.ti);
        // Ideal ratio a:1 on the from side, |a| = tm.
        y[(f, f)] += (ys + ym) / (x.tm * x.tm);
        y[(f, t)] -= ys / a.conj();
        y[(t, f)] -= ys / a;
        y[(t, t)] += ys;
    }
    y
}

/// Newton–Raphson power flow with `slack` fixed at `v_slack∠0` and every
/// other bus a PQ bus with net injection `s_inj`. Returns complex voltages.
pub fn newton_raphson(
    y: &DMatrix<Complex<f64>>,
    slack: usize,
    v_slack: f64,
    s_inj: &[Complex<f64>],
    tol: f64,
) -> Option<Vec<Complex<f64>>> {
    let n = s_inj.len();
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = pq.len();
    let mut theta = vec![0.0; n];
    let mut vm = vec![1.0; n];
    vm[slack] = v_slack;
    let voltages = |theta: &[f64], vm: &[f64]| -> Vec<Complex<f64>> {
        (0..n).map(|i| Complex::from_polar(vm[i], theta[i])).collect()
    };
    let mismatch = |theta: &[f64], vm: &[f64]| -> DVector<f64> {
        let v = voltages(theta, vm);
        let mut out = DVector::zeros(2 * m);
        for (k, &i) in pq.iter().enumerate() {
            let current: Complex<f64> = (0..n).map(|j| y[(i, j)] * v[j]).sum();
            let s = v[i] * current.conj();
            out[k] = s.re - s_inj[i].re;
            out[m + k] = s.im - s_inj[i].im;
        }
        out
    };
    for _ in 0..50 {
        let f = mismatch(&theta, &vm);
        if f.amax() < tol {
            return Some(voltages(&theta, &vm));
        }
        // Central-difference Jacobian.
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        let h = 1e-7;
        for (k, &i) in pq.iter().enumerate() {
            for (col, is_angle) in [(k, true), (m + k, false)] {
                let (mut tp, mut vp) = (theta.clone(), vm.clone());
                let (mut tm, mut vmm) = (theta.clone(), vm.clone());
                if is_angle {
                    tp[i] += h;
                    tm[i] -= h;
                } else {
                    vp[i] += h;
                    vmm[i] -= h;
                }
                let d = (mismatch(&tp, &vp) - mismatch(&tm, &vmm)) / (2.0 * h);
                jac.set_column(col, &d);
            }
        }
        let step = jac.lu().solve(&(-f))?;
        for (k, &i) in pq.iter().enumerate() {
            theta[i] += step[k];
            vm[i] += step[m + k];
        }
    }
    None
}

/// Every combination of real and reactive branch for the surviving
/// generators.
pub fn all_assignments(ctg: &Contingency) -> Vec<AgcBranchState> {
    let mut out = vec![AgcBranchState {
        real: Default::default(),
        reactive: Default::default(),
    }];
    for &g in &ctg.active_gens {
        let reals: &[RealState] = if ctg.participating.contains(&g) {
            &[RealState::Follow, RealState::AtMax, RealState::AtMin]
        } else {
            &[RealState::Fixed]
        };
        let mut next = Vec::new();
        for s in &out {
            for &r in reals {
                for q in [
                    ReactiveState::HoldV,
                    ReactiveState::AtQmax,
                    ReactiveState::AtQmin,
                ] {
                    let mut t = s.clone();
                    t.real.insert(g, r);
                    t.reactive.insert(g, q);
                    next.push(t);
                }
            }
        }
        out = next;
    }
    out
}

/// A solved assignment from [`enumerate_branches`].
#[derive(Debug, Clone)]
pub struct Branch {
    pub state: AgcBranchState,
    pub mismatch: f64,
}

/// Every assignment whose sub-problem is feasible and whose solution obeys
/// the AGC rules: FOLLOW units have their target inside `[p̲, p̄]` and HOLD_V
/// units their reactive output inside `[q̲, q̄]`, both to `tol`. Pinned units
/// carry their direction constraint inside the problem.
pub fn enumerate_branches(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    config: &SolverConfig,
    tol: f64,
) -> Vec<Branch> {
    let options = BuildOptions {
        strict: false,
        loss_weight: config.loss_weight,
    };
    all_assignments(ctg)
        .into_iter()
        .filter_map(|state| {
            let (problem, vars) = build_with(grid, ctg, base, &state, config, options).ok()?;
            let sol = solve(&problem, &config.solver_settings());
            if sol.status != SolveStatus::Optimal {
                return None;
            }
            let delta = sol.value(vars.delta);
            for &g in &ctg.active_gens {
                let gen = &grid.generators[g];
                match state.real[&g] {
                    RealState::Follow => {
                        let target = base.p_gen[g] + gen.alpha * delta;
                        if target > gen.pmax + tol || target < gen.pmin - tol {
                            return None;
                        }
                    }
                    RealState::AtMax | RealState::AtMin | RealState::Fixed => {}
                }
                match state.reactive[&g] {
                    ReactiveState::HoldV => {
                        let q = sol.value(vars.q_gen[g].expect("active"));
                        if q > gen.qmax + tol || q < gen.qmin - tol {
                            return None;
                        }
                    }
                    ReactiveState::AtQmax | ReactiveState::AtQmin => {}
                }
            }
            Some(Branch {
                state,
                mismatch: vars.mismatch.eval(&sol.primal),
            })
        })
        .collect()
}

/// Single-line-outage contingency on a case file.
pub fn line_outage(id: usize, line: usize) -> ContingencySpec {
    ContingencySpec {
        id,
        kind: ContingencyKind::LineOutage,
        element: line,
    }
}
