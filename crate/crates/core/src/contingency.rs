//! Security-check sub-problems with AGC response.
//!
//! Each contingency is a relaxed ACOPF over the surviving network with soft
//! nodal balance and soft ratings. Generator behaviour is fixed by an
//! [`AgcBranchState`]; [`solve_with_agc`] walks the states to a fixed point,
//! then descends among consistent states while mismatch remains, so that the
//! returned dispatch satisfies the product constraints
//!
//! ```text
//! (p_gk - (p_g + α_g Δ_k)) (p_gk - p̄_g) ≤ 0
//! (p_gk - (p_g + α_g Δ_k)) (p̲_g - p_gk) ≥ 0
//! (c_ii - c_ii,k) (q_gk - q̄_g) ≥ 0
//! (c_ii,k - c_ii) (q̲_g - q_gk) ≥ 0
//! ```
//!
//! without handing the bilinear terms to the conic solver.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::config::{PenaltyWeights, SolverConfig};
use crate::conic::{
    AffineExpr, ConicProblem, ConicSolution, ConstraintHandle, ProblemBuilder, SolveStatus, VarId,
};
use crate::grid::{validate_connectivity, Contingency, Grid};
use crate::network::{bus_flow_sums, Branch, LiftedVars, Topology};
use crate::relaxation::{BasePoint, LiftedVoltage};

/// Tolerance for deciding that a free quantity left its limits.
const PIN_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RealState {
    Follow,
    AtMax,
    AtMin,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReactiveState {
    HoldV,
    AtQmax,
    AtQmin,
}

impl fmt::Display for RealState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RealState::Follow => "FOLLOW",
            RealState::AtMax => "AT_MAX",
            RealState::AtMin => "AT_MIN",
            RealState::Fixed => "FIXED",
        })
    }
}

impl fmt::Display for ReactiveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReactiveState::HoldV => "HOLD_V",
            ReactiveState::AtQmax => "AT_QMAX",
            ReactiveState::AtQmin => "AT_QMIN",
        })
    }
}

/// Per-generator AGC branch, keyed by generator position. Outaged
/// generators appear in neither map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgcBranchState {
    pub real: BTreeMap<usize, RealState>,
    pub reactive: BTreeMap<usize, ReactiveState>,
}

impl AgcBranchState {
    /// Participating generators follow the AGC signal, the rest keep their
    /// base output; every generator holds its bus voltage.
    pub fn initial(ctg: &Contingency) -> Self {
        let real = ctg
            .active_gens
            .iter()
            .map(|&g| {
                let s = if ctg.participating.contains(&g) {
                    RealState::Follow
                } else {
                    RealState::Fixed
                };
                (g, s)
            })
            .collect();
        let reactive = ctg
            .active_gens
            .iter()
            .map(|&g| (g, ReactiveState::HoldV))
            .collect();
        AgcBranchState { real, reactive }
    }

    /// Number of pinned states, used to bound the fixed point.
    pub fn pinned(&self) -> usize {
        self.real
            .values()
            .filter(|s| matches!(s, RealState::AtMax | RealState::AtMin))
            .count()
            + self
                .reactive
                .values()
                .filter(|s| **s != ReactiveState::HoldV)
                .count()
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ContingencyError {
    #[error("contingency {0} islands the network")]
    Islanded(usize),
    #[error("contingency {id}: sub-problem solve ended with status {status:?}")]
    Internal { id: usize, status: SolveStatus },
    #[error("contingency {id}: AGC cycling after {iterations} iterations\n{trace}")]
    AgcCycling {
        id: usize,
        iterations: usize,
        trace: String,
    },
    #[error("negative slack {value} in mismatch")]
    NegativeSlack { value: f64 },
    #[error("contingency {0}: coupling duals are missing")]
    MissingDuals(usize),
    #[error("building contingency {id}: {message}")]
    Build { id: usize, message: String },
}

/// Where the base-case quantities a contingency couples to come from.
#[derive(Debug, Clone, Copy)]
pub enum Coupling<'a> {
    /// Constants from a solved master.
    Base(&'a BasePoint),
    /// Master variables inside one extensive-form problem.
    Master {
        p_gen: &'a [VarId],
        c_bus: &'a [VarId],
    },
}

impl Coupling<'_> {
    fn p_hat(&self, g: usize) -> AffineExpr {
        match self {
            Coupling::Base(bp) => AffineExpr::constant(bp.p_gen[g]),
            Coupling::Master { p_gen, .. } => AffineExpr::var(p_gen[g]),
        }
    }

    fn c_hat(&self, bus: usize) -> AffineExpr {
        match self {
            Coupling::Base(bp) => AffineExpr::constant(bp.lifted.c_self[bus]),
            Coupling::Master { c_bus, .. } => AffineExpr::var(c_bus[bus]),
        }
    }
}

/// A constraint whose constant term moves with a coupled base quantity;
/// `slope` is the derivative of that constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingLink {
    pub handle: ConstraintHandle,
    pub slope: f64,
}

/// Variables and handles of one contingency inside a problem.
#[derive(Debug, Clone)]
pub struct ContingencyVars {
    pub lifted: LiftedVars,
    pub delta: VarId,
    pub p_gen: Vec<Option<VarId>>,
    pub q_gen: Vec<Option<VarId>>,
    pub sigma_p: Vec<[VarId; 2]>,
    pub sigma_q: Vec<[VarId; 2]>,
    pub sigma_line: Vec<Option<VarId>>,
    pub sigma_xfmr: Vec<Option<VarId>>,
    pub p_links: Vec<Vec<CouplingLink>>,
    pub c_links: Vec<Vec<CouplingLink>>,
    /// Penalty-weighted slack sum.
    pub mismatch: AffineExpr,
    /// Total generation of the surviving units.
    pub generation: AffineExpr,
}

/// Options for [`add_contingency`] and [`build_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Also impose the limits of free quantities: `p̲ ≤ p_g + α Δ ≤ p̄` for
    /// FOLLOW and `q̲ ≤ q ≤ q̄` for HOLD_V.
    pub strict: bool,
    /// Weight of total generation in a stand-alone objective.
    pub loss_weight: f64,
}

fn delta_box(grid: &Grid, ctg: &Contingency, coupling: &Coupling<'_>) -> (f64, f64) {
    // Only meaningful with constant base dispatch; the master form uses the
    // widest box the limits allow.
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for &g in &ctg.participating {
        let gen = &grid.generators[g];
        let (pl, pu) = match coupling {
            Coupling::Base(bp) => (gen.pmin - bp.p_gen[g], gen.pmax - bp.p_gen[g]),
            Coupling::Master { .. } => (gen.pmin - gen.pmax, gen.pmax - gen.pmin),
        };
        lo = lo.min(pl / gen.alpha);
        hi = hi.max(pu / gen.alpha);
    }
    if ctg.participating.is_empty() {
        (0.0, 0.0)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// Append the constraints of contingency `ctg` under `state` to `b`.
pub fn add_contingency(
    b: &mut ProblemBuilder,
    grid: &Grid,
    ctg: &Contingency,
    coupling: Coupling<'_>,
    state: &AgcBranchState,
    weights: PenaltyWeights,
    options: BuildOptions,
) -> ContingencyVars {
    let tag = format!("k{}:", ctg.id);
    let ngen = grid.generators.len();
    let (dlo, dhi) = delta_box(grid, ctg, &coupling);
    let delta = b.add_variable(format!("{tag}delta"), dlo, dhi);

    let mut p_gen = vec![None; ngen];
    let mut q_gen = vec![None; ngen];
    let mut p_links = vec![Vec::new(); ngen];
    let mut c_links = vec![Vec::new(); ngen];
    let mut generation = AffineExpr::new();

    let topo = Topology {
        lines: &ctg.active_lines,
        xfmrs: &ctg.active_xfmrs,
    };
    let vbounds: Vec<(f64, f64)> = grid
        .buses
        .iter()
        .map(|bus| (bus.vmin_ctg, bus.vmax_ctg))
        .collect();
    let lifted = LiftedVars::add(b, grid, &vbounds, topo, &tag);

    for &g in &ctg.active_gens {
        let gen = &grid.generators[g];
        let gid = gen.id;
        let rs = state.real[&g];
        let qs = state.reactive[&g];

        let p = match rs {
            RealState::Follow if options.strict => {
                b.add_variable(format!("{tag}p_g{gid}"), gen.pmin, gen.pmax)
            }
            RealState::Follow | RealState::Fixed => b.free_variable(format!("{tag}p_g{gid}")),
            RealState::AtMax => b.add_variable(format!("{tag}p_g{gid}"), gen.pmax, gen.pmax),
            RealState::AtMin => b.add_variable(format!("{tag}p_g{gid}"), gen.pmin, gen.pmin),
        };
        let target = {
            let mut t = coupling.p_hat(g);
            if rs != RealState::Fixed {
                t.add_term(delta, gen.alpha);
            }
            t
        };
        match rs {
            RealState::Follow | RealState::Fixed => {
                // p_gk - target = 0
                let mut e = AffineExpr::var(p);
                e.add_expr(&target, -1.0);
                let h = b.add_equality(format!("{tag}agc g{gid}"), e);
                p_links[g].push(CouplingLink {
                    handle: h,
                    slope: -1.0,
                });
            }
            RealState::AtMax => {
                // p̄ - target ≤ 0
                let e = target.scaled(-1.0).plus(gen.pmax);
                let h = b.add_inequality(format!("{tag}agc max g{gid}"), e);
                p_links[g].push(CouplingLink {
                    handle: h,
                    slope: -1.0,
                });
            }
            RealState::AtMin => {
                // target - p̲ ≤ 0
                let e = target.plus(-gen.pmin);
                let h = b.add_inequality(format!("{tag}agc min g{gid}"), e);
                p_links[g].push(CouplingLink {
                    handle: h,
                    slope: 1.0,
                });
            }
        }

        let q = match qs {
            ReactiveState::HoldV if options.strict => {
                b.add_variable(format!("{tag}q_g{gid}"), gen.qmin, gen.qmax)
            }
            ReactiveState::HoldV => b.free_variable(format!("{tag}q_g{gid}")),
            ReactiveState::AtQmax => b.add_variable(format!("{tag}q_g{gid}"), gen.qmax, gen.qmax),
            ReactiveState::AtQmin => b.add_variable(format!("{tag}q_g{gid}"), gen.qmin, gen.qmin),
        };
        let bus = grid.gen_bus(g);
        let ck = AffineExpr::var(lifted.c_bus[bus]);
        let chat = coupling.c_hat(bus);
        let mut diff = ck.clone();
        diff.add_expr(&chat, -1.0);
        let link = match qs {
            ReactiveState::HoldV => CouplingLink {
                handle: b.add_equality(format!("{tag}volt g{gid}"), diff),
                slope: -1.0,
            },
            // c_k - ĉ ≤ 0
            ReactiveState::AtQmax => CouplingLink {
                handle: b.add_inequality(format!("{tag}volt max g{gid}"), diff),
                slope: -1.0,
            },
            // ĉ - c_k ≤ 0
            ReactiveState::AtQmin => CouplingLink {
                handle: b.add_inequality(format!("{tag}volt min g{gid}"), diff.scaled(-1.0)),
                slope: 1.0,
            },
        };
        c_links[g].push(link);
        generation.add_term(p, 1.0);
        p_gen[g] = Some(p);
        q_gen[g] = Some(q);
    }

    let mut mismatch = AffineExpr::new();
    let (p_out, q_out) = bus_flow_sums(grid, &lifted, topo);
    let mut sigma_p = Vec::with_capacity(grid.buses.len());
    let mut sigma_q = Vec::with_capacity(grid.buses.len());
    for (i, bus) in grid.buses.iter().enumerate() {
        let bid = bus.id;
        let sp = [
            b.add_variable(format!("{tag}sp+_{bid}"), 0.0, f64::INFINITY),
            b.add_variable(format!("{tag}sp-_{bid}"), 0.0, f64::INFINITY),
        ];
        let sq = [
            b.add_variable(format!("{tag}sq+_{bid}"), 0.0, f64::INFINITY),
            b.add_variable(format!("{tag}sq-_{bid}"), 0.0, f64::INFINITY),
        ];
        let mut ep = AffineExpr::constant(-bus.p_load)
            .term(sp[0], 1.0)
            .term(sp[1], -1.0);
        let mut eq = AffineExpr::constant(-bus.q_load)
            .term(sq[0], 1.0)
            .term(sq[1], -1.0);
        for &g in &ctg.active_gens {
            if grid.gen_bus(g) == i {
                ep.add_term(p_gen[g].expect("active"), 1.0);
                eq.add_term(q_gen[g].expect("active"), 1.0);
            }
        }
        ep.add_term(lifted.c_bus[i], -bus.g_fs);
        eq.add_term(lifted.c_bus[i], bus.b_fs);
        ep.add_expr(&p_out[i], -1.0);
        eq.add_expr(&q_out[i], -1.0);
        b.add_equality(format!("{tag}balance p bus {bid}"), ep);
        b.add_equality(format!("{tag}balance q bus {bid}"), eq);
        for v in sp {
            mismatch.add_term(v, weights.p);
        }
        for v in sq {
            mismatch.add_term(v, weights.q);
        }
        sigma_p.push(sp);
        sigma_q.push(sq);
    }

    let mut sigma_line = vec![None; grid.lines.len()];
    let mut sigma_xfmr = vec![None; grid.transformers.len()];
    for br in topo.branches() {
        let (name, slot) = match br {
            Branch::Line(e) => (format!("line {}", grid.lines[e].id), &mut sigma_line[e]),
            Branch::Xfmr(f) => (
                format!("transformer {}", grid.transformers[f].id),
                &mut sigma_xfmr[f],
            ),
        };
        let sigma = b.add_variable(format!("{tag}ss {name}"), 0.0, f64::INFINITY);
        let (_, limit) = br.ratings(grid);
        let [pf, qf, pt, qt] = lifted.flow_exprs(grid, br);
        let bound = AffineExpr::constant(limit).term(sigma, 1.0);
        b.add_soc(format!("{tag}rating {name} from"), vec![pf, qf], bound.clone());
        b.add_soc(format!("{tag}rating {name} to"), vec![pt, qt], bound);
        mismatch.add_term(sigma, weights.s);
        *slot = Some(sigma);
    }

    ContingencyVars {
        lifted,
        delta,
        p_gen,
        q_gen,
        sigma_p,
        sigma_q,
        sigma_line,
        sigma_xfmr,
        p_links,
        c_links,
        mismatch,
        generation,
    }
}

/// The stand-alone sub-problem for a fixed branch state.
pub fn build_subproblem(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    state: &AgcBranchState,
    config: &SolverConfig,
) -> Result<(ConicProblem, ContingencyVars), ContingencyError> {
    let options = BuildOptions {
        strict: false,
        loss_weight: config.loss_weight,
    };
    build_with(grid, ctg, base, state, config, options)
}

/// Same as [`build_subproblem`] with explicit options.
pub fn build_with(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    state: &AgcBranchState,
    config: &SolverConfig,
    options: BuildOptions,
) -> Result<(ConicProblem, ContingencyVars), ContingencyError> {
    if validate_connectivity(grid, ctg) {
        return Err(ContingencyError::Islanded(ctg.id));
    }
    let mut b = ProblemBuilder::new();
    let vars = add_contingency(
        &mut b,
        grid,
        ctg,
        Coupling::Base(base),
        state,
        config.penalty,
        options,
    );
    let mut obj = vars.mismatch.clone();
    if options.loss_weight != 0.0 {
        obj.add_expr(&vars.generation, options.loss_weight);
    }
    b.set_objective(obj);
    let problem = b.build().map_err(|e| ContingencyError::Build {
        id: ctg.id,
        message: e.to_string(),
    })?;
    Ok((problem, vars))
}

/// Sensitivities of the sub-problem value to the coupled base quantities,
/// per generator position (zero for outaged units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CouplingDuals {
    /// `∂V/∂p_g`
    pub p_gen: Vec<f64>,
    /// `∂V/∂c_ii` at the generator's bus.
    pub c_bus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceEntry {
    pub iteration: usize,
    pub mismatch: f64,
    pub sigma_total: f64,
    pub delta: f64,
    pub changes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubproblemResult {
    pub contingency: usize,
    /// `(σ⁺, σ⁻)` per bus.
    pub sigma_bus_p: Vec<(f64, f64)>,
    pub sigma_bus_q: Vec<(f64, f64)>,
    /// Per line position; zero for the outaged line.
    pub sigma_line: Vec<f64>,
    pub sigma_xfmr: Vec<f64>,
    pub delta: f64,
    /// Per generator position; zero for an outaged unit.
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub lifted: LiftedVoltage,
    pub mismatch_cost: f64,
    pub branch_state: AgcBranchState,
    pub coupling_duals: CouplingDuals,
    pub agc_iterations: usize,
    pub warnings: Vec<String>,
    pub trace: Vec<TraceEntry>,
}

/// Penalty-weighted slack sum.
pub fn mismatch_cost(result: &SubproblemResult, w: PenaltyWeights) -> Result<f64, ContingencyError> {
    let mut total = 0.0;
    let mut add = |v: f64, weight: f64| -> Result<(), ContingencyError> {
        if v < -1e-9 {
            return Err(ContingencyError::NegativeSlack { value: v });
        }
        total += weight * v.max(0.0);
        Ok(())
    };
    for &(a, b) in &result.sigma_bus_p {
        add(a, w.p)?;
        add(b, w.p)?;
    }
    for &(a, b) in &result.sigma_bus_q {
        add(a, w.q)?;
        add(b, w.q)?;
    }
    for &s in result.sigma_line.iter().chain(&result.sigma_xfmr) {
        add(s, w.s)?;
    }
    Ok(total)
}

fn link_sensitivity(sol: &ConicSolution, links: &[CouplingLink]) -> Option<f64> {
    let mut total = 0.0;
    for l in links {
        let d = sol.dual(l.handle).ok()?;
        total += match l.handle {
            ConstraintHandle::Eq(_) => -d * l.slope,
            _ => d * l.slope,
        };
    }
    Some(total)
}

/// Read a solved sub-problem into a result (without trace bookkeeping).
pub fn extract_result(
    grid: &Grid,
    ctg: &Contingency,
    vars: &ContingencyVars,
    sol: &ConicSolution,
    state: &AgcBranchState,
    config: &SolverConfig,
) -> Result<SubproblemResult, ContingencyError> {
    let val = |v: &Option<VarId>| v.map(|v| sol.value(v)).unwrap_or(0.0);
    let pair = |s: &[VarId; 2]| (sol.value(s[0]), sol.value(s[1]));
    let ngen = grid.generators.len();
    let mut coupling = CouplingDuals {
        p_gen: vec![0.0; ngen],
        c_bus: vec![0.0; ngen],
    };
    for g in 0..ngen {
        coupling.p_gen[g] =
            link_sensitivity(sol, &vars.p_links[g]).ok_or(ContingencyError::MissingDuals(ctg.id))?;
        coupling.c_bus[g] =
            link_sensitivity(sol, &vars.c_links[g]).ok_or(ContingencyError::MissingDuals(ctg.id))?;
    }
    let mut result = SubproblemResult {
        contingency: ctg.id,
        sigma_bus_p: vars.sigma_p.iter().map(pair).collect(),
        sigma_bus_q: vars.sigma_q.iter().map(pair).collect(),
        sigma_line: vars.sigma_line.iter().map(val).collect(),
        sigma_xfmr: vars.sigma_xfmr.iter().map(val).collect(),
        delta: sol.value(vars.delta),
        p_gen: vars.p_gen.iter().map(val).collect(),
        q_gen: vars.q_gen.iter().map(val).collect(),
        lifted: LiftedVoltage::from_solution(&vars.lifted, sol),
        mismatch_cost: 0.0,
        branch_state: state.clone(),
        coupling_duals: coupling,
        agc_iterations: 0,
        warnings: Vec::new(),
        trace: Vec::new(),
    };
    result.mismatch_cost = mismatch_cost(&result, config.penalty)?;
    Ok(result)
}

/// States that must change at a solved point: FOLLOW units whose AGC target
/// left `[p̲, p̄]`, HOLD_V units whose reactive output left `[q̲, q̄]`.
pub fn pin_updates(
    grid: &Grid,
    base_p: &[f64],
    result: &SubproblemResult,
    state: &AgcBranchState,
) -> AgcBranchState {
    let mut next = state.clone();
    for (&g, s) in next.real.iter_mut() {
        if *s != RealState::Follow {
            continue;
        }
        let gen = &grid.generators[g];
        let target = base_p[g] + gen.alpha * result.delta;
        if target > gen.pmax + PIN_TOL {
            *s = RealState::AtMax;
        } else if target < gen.pmin - PIN_TOL {
            *s = RealState::AtMin;
        }
    }
    for (&g, s) in next.reactive.iter_mut() {
        if *s != ReactiveState::HoldV {
            continue;
        }
        let gen = &grid.generators[g];
        let q = result.q_gen[g];
        if q > gen.qmax + PIN_TOL {
            *s = ReactiveState::AtQmax;
        } else if q < gen.qmin - PIN_TOL {
            *s = ReactiveState::AtQmin;
        }
    }
    next
}

pub(crate) fn describe_changes(grid: &Grid, from: &AgcBranchState, to: &AgcBranchState) -> Vec<String> {
    let mut out = Vec::new();
    for (g, s) in &to.real {
        if from.real[g] != *s {
            out.push(format!("g{} {} -> {}", grid.generators[*g].id, from.real[g], s));
        }
    }
    for (g, s) in &to.reactive {
        if from.reactive[g] != *s {
            out.push(format!("g{} {} -> {}", grid.generators[*g].id, from.reactive[g], s));
        }
    }
    out
}

fn sigma_total(r: &SubproblemResult) -> f64 {
    r.sigma_bus_p
        .iter()
        .chain(&r.sigma_bus_q)
        .map(|(a, b)| a + b)
        .chain(r.sigma_line.iter().copied())
        .chain(r.sigma_xfmr.iter().copied())
        .sum()
}

/// Iteration cap of the AGC fixed point.
pub fn agc_iteration_cap(ctg: &Contingency) -> usize {
    2 * (2 * ctg.participating.len() + 2 * ctg.active_gens.len()).max(1)
}

fn solve_state(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    state: &AgcBranchState,
    config: &SolverConfig,
    round: usize,
) -> Result<SubproblemResult, ContingencyError> {
    let (problem, vars) = build_subproblem(grid, ctg, base, state, config)?;
    let sol = crate::conic::solve(&problem, &config.solver_settings());
    if sol.status != SolveStatus::Optimal {
        log::warn!(
            "contingency {} AGC round {round}: solver stopped with {:?} after {} iterations, residuals {:?}",
            ctg.id,
            sol.status,
            sol.iterations,
            sol.kkt
        );
        return Err(ContingencyError::Internal {
            id: ctg.id,
            status: sol.status,
        });
    }
    extract_result(grid, ctg, &vars, &sol, state, config)
}

/// The other reactive branches of one generator.
fn neighbours(state: &AgcBranchState, g: usize) -> Vec<AgcBranchState> {
    [ReactiveState::HoldV, ReactiveState::AtQmax, ReactiveState::AtQmin]
        .into_iter()
        .filter(|&q| q != state.reactive[&g])
        .map(|q| {
            let mut next = state.clone();
            next.reactive.insert(g, q);
            next
        })
        .collect()
}

/// Improve a consistent state while mismatch remains. Pinning alone stops
/// at the first consistent state, but the product constraints can admit
/// several (a unit at a reactive limit with its voltage off setpoint, or the
/// same unit holding voltage). Each round tries every other branch of one
/// generator at a time and moves to the consistent neighbour with the
/// smallest mismatch, if it is smaller by more than the pinning tolerance.
fn descend(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    config: &SolverConfig,
    mut state: AgcBranchState,
    mut result: SubproblemResult,
    trace: &mut Vec<TraceEntry>,
) -> Result<(AgcBranchState, SubproblemResult), ContingencyError> {
    let w = config.penalty;
    let margin = PIN_TOL * w.p.max(w.q).max(w.s);
    let cap = agc_iteration_cap(ctg);
    for _ in 0..cap {
        if result.mismatch_cost <= margin {
            break;
        }
        let mut best: Option<(AgcBranchState, SubproblemResult)> = None;
        for &g in &ctg.active_gens {
            for cand in neighbours(&state, g) {
                let round = trace.len() + 1;
                let Ok(r) = solve_state(grid, ctg, base, &cand, config, round) else {
                    continue;
                };
                if pin_updates(grid, &base.p_gen, &r, &cand) != cand {
                    continue;
                }
                let bar = best.as_ref().map_or(result.mismatch_cost - margin, |(_, b)| {
                    b.mismatch_cost
                });
                if r.mismatch_cost < bar {
                    best = Some((cand, r));
                }
            }
        }
        let Some((next, r)) = best else { break };
        let mut changes = describe_changes(grid, &state, &next);
        for c in &mut changes {
            c.insert_str(0, "descent: ");
        }
        trace.push(TraceEntry {
            iteration: trace.len() + 1,
            mismatch: r.mismatch_cost,
            sigma_total: sigma_total(&r),
            delta: r.delta,
            changes,
        });
        state = next;
        result = r;
    }
    Ok((state, result))
}

/// Solve one contingency, walking the AGC branch states to a fixed point.
pub fn solve_with_agc(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    config: &SolverConfig,
) -> Result<SubproblemResult, ContingencyError> {
    let mut state = AgcBranchState::initial(ctg);
    let cap = agc_iteration_cap(ctg);
    let mut trace: Vec<TraceEntry> = Vec::new();
    for iteration in 1..=cap {
        let result = solve_state(grid, ctg, base, &state, config, iteration)?;
        let next = pin_updates(grid, &base.p_gen, &result, &state);
        let changes = describe_changes(grid, &state, &next);
        trace.push(TraceEntry {
            iteration,
            mismatch: result.mismatch_cost,
            sigma_total: sigma_total(&result),
            delta: result.delta,
            changes: changes.clone(),
        });
        if changes.is_empty() {
            let (state, mut result) = descend(grid, ctg, base, config, state, result, &mut trace)?;
            if config.loss_weight != 0.0 {
                result.coupling_duals = pure_mismatch_duals(grid, ctg, base, &state, config)?;
            }
            result.agc_iterations = trace.len();
            result.warnings = valid_constraint_warnings(grid, ctg, base, &result);
            result.trace = trace;
            return Ok(result);
        }
        state = next;
    }
    Err(ContingencyError::AgcCycling {
        id: ctg.id,
        iterations: cap,
        trace: render_trace(ctg, &trace),
    })
}

/// Coupling sensitivities of the mismatch alone at a fixed branch state. The
/// generation term only selects among mismatch-optimal points; leaving it in
/// would tilt the cut slopes by its own gradient.
fn pure_mismatch_duals(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    state: &AgcBranchState,
    config: &SolverConfig,
) -> Result<CouplingDuals, ContingencyError> {
    let (problem, vars) = build_with(grid, ctg, base, state, config, BuildOptions::default())?;
    let sol = crate::conic::solve(&problem, &config.solver_settings());
    if sol.status != SolveStatus::Optimal {
        return Err(ContingencyError::Internal {
            id: ctg.id,
            status: sol.status,
        });
    }
    Ok(extract_result(grid, ctg, &vars, &sol, state, config)?.coupling_duals)
}

/// The four product constraints at a generator, each rearranged so that the
/// correct side is `≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidConstraintValues {
    pub generator: usize,
    pub upper_real: f64,
    pub lower_real: f64,
    pub upper_reactive: f64,
    pub lower_reactive: f64,
}

impl ValidConstraintValues {
    pub fn worst(&self) -> f64 {
        self.upper_real
            .max(self.lower_real)
            .max(self.upper_reactive)
            .max(self.lower_reactive)
    }
}

/// Evaluate the product constraints for every surviving generator. The real
/// pair applies only to participating units and is reported as 0 otherwise.
pub fn valid_constraints(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    result: &SubproblemResult,
) -> Vec<ValidConstraintValues> {
    ctg.active_gens
        .iter()
        .map(|&g| {
            let gen = &grid.generators[g];
            let bus = grid.gen_bus(g);
            let p = result.p_gen[g];
            let q = result.q_gen[g];
            let (upper_real, lower_real) = if ctg.participating.contains(&g) {
                let t = base.p_gen[g] + gen.alpha * result.delta;
                ((p - t) * (p - gen.pmax), -((p - t) * (gen.pmin - p)))
            } else {
                (0.0, 0.0)
            };
            let c = base.lifted.c_self[bus];
            let ck = result.lifted.c_self[bus];
            ValidConstraintValues {
                generator: g,
                upper_real,
                lower_real,
                upper_reactive: -((c - ck) * (q - gen.qmax)),
                lower_reactive: -((ck - c) * (gen.qmin - q)),
            }
        })
        .collect()
}

fn valid_constraint_warnings(
    grid: &Grid,
    ctg: &Contingency,
    base: &BasePoint,
    result: &SubproblemResult,
) -> Vec<String> {
    let mut out = Vec::new();
    for v in valid_constraints(grid, ctg, base, result) {
        let gen = &grid.generators[v.generator];
        if v.worst() > 1e-7 {
            out.push(format!(
                "contingency {}: generator {} violates an AGC product constraint by {:.3e}",
                ctg.id,
                gen.id,
                v.worst()
            ));
        }
        let p = result.p_gen[v.generator];
        if p > gen.pmax + 1e-6 || p < gen.pmin - 1e-6 {
            out.push(format!(
                "contingency {}: generator {} output {p:.6} outside its limits",
                ctg.id, gen.id
            ));
        }
    }
    for w in &out {
        log::warn!("{w}");
    }
    out
}

/// Deterministic text form of an AGC fixed-point trace.
pub fn render_trace(ctg: &Contingency, trace: &[TraceEntry]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "contingency {} ({} {})", ctg.id, ctg.kind, ctg.element);
    for t in trace {
        let _ = writeln!(
            s,
            "iter {}: mismatch={:.9e} sigma_total={:.9e} delta={:.9e}",
            t.iteration, t.mismatch, t.sigma_total, t.delta
        );
        for c in &t.changes {
            let _ = writeln!(s, "  {c}");
        }
    }
    s
}
