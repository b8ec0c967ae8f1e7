//! Benders decomposition over the contingency set.
//!
//! The master is the base relaxation plus one epigraph variable `z_k` per
//! contingency, charged `δ/|K|` each in the objective. Every round solves the
//! master, evaluates the selected contingencies at the new base point and
//! adds one optimality cut per violated contingency.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, SolverConfig};
use crate::conic::{self, AffineExpr, ProblemBuilder, SolveStatus, VarId};
use crate::contingency::{
    add_contingency, agc_iteration_cap, pin_updates, solve_with_agc, AgcBranchState, BuildOptions,
    ContingencyError, ContingencyVars, Coupling, SubproblemResult,
};
use crate::grid::{validate_connectivity, Contingency, ContingencyKind, Grid};
use crate::relaxation::{base_builder, extract_base_point, BasePoint, RelaxError, RelaxationIndex};

#[derive(Debug, thiserror::Error)]
pub enum BendersError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Contingency(#[from] ContingencyError),
    #[error("master problem solve ended with status {0:?}")]
    Master(SolveStatus),
    #[error("extensive form did not settle its AGC states within {0} rounds")]
    ExtensiveCycling(usize),
    #[error("could not start the worker pool: {0}")]
    Pool(String),
}

/// A master quantity a cut can depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MasterVar {
    /// Real output of the generator at this position.
    PGen(usize),
    /// Squared voltage magnitude of the bus at this position.
    CBus(usize),
}

/// `z_k ≥ constant + Σ coeff · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BendersCut {
    pub contingency: usize,
    pub constant: f64,
    pub coeffs: Vec<(MasterVar, f64)>,
    pub iteration_added: usize,
}

impl BendersCut {
    pub fn evaluate(&self, p_gen: &[f64], c_bus: &[f64]) -> f64 {
        self.constant
            + self
                .coeffs
                .iter()
                .map(|&(v, a)| match v {
                    MasterVar::PGen(g) => a * p_gen[g],
                    MasterVar::CBus(i) => a * c_bus[i],
                })
                .sum::<f64>()
    }
}

/// Linearize a solved sub-problem around the base point it was solved at.
pub fn build_cut(
    grid: &Grid,
    result: &SubproblemResult,
    base: &BasePoint,
    iteration: usize,
) -> Result<BendersCut, ContingencyError> {
    let duals = &result.coupling_duals;
    let ngen = grid.generators.len();
    if duals.p_gen.len() != ngen || duals.c_bus.len() != ngen {
        return Err(ContingencyError::MissingDuals(result.contingency));
    }
    let mut coeffs = Vec::new();
    let mut constant = result.mismatch_cost;
    for g in 0..ngen {
        let a = duals.p_gen[g];
        if a != 0.0 {
            coeffs.push((MasterVar::PGen(g), a));
            constant -= a * base.p_gen[g];
        }
    }
    for g in 0..ngen {
        let a = duals.c_bus[g];
        if a != 0.0 {
            let bus = grid.gen_bus(g);
            coeffs.push((MasterVar::CBus(bus), a));
            constant -= a * base.lifted.c_self[bus];
        }
    }
    Ok(BendersCut {
        contingency: result.contingency,
        constant,
        coeffs,
        iteration_added: iteration,
    })
}

/// Base-case utilization of the element a contingency removes.
pub fn utilization(grid: &Grid, base: &BasePoint, ctg: &Contingency) -> f64 {
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    match ctg.kind {
        ContingencyKind::LineOutage => grid
            .line_position(ctg.element)
            .map(|e| ratio(base.line_flows[e].max_apparent(), grid.lines[e].rating_base))
            .unwrap_or(0.0),
        ContingencyKind::TransformerOutage => grid
            .xfmr_position(ctg.element)
            .map(|f| {
                ratio(
                    base.xfmr_flows[f].max_apparent(),
                    grid.transformers[f].rating_base,
                )
            })
            .unwrap_or(0.0),
        ContingencyKind::GeneratorOutage => grid
            .gen_position(ctg.element)
            .map(|g| ratio(base.p_gen[g], grid.generators[g].pmax))
            .unwrap_or(0.0),
    }
}

/// Order contingencies by utilization, highest first, ties by id.
pub fn rank_contingencies<'a>(
    grid: &Grid,
    base: &BasePoint,
    ctgs: &'a [Contingency],
) -> Vec<&'a Contingency> {
    let mut scored: Vec<(f64, &Contingency)> =
        ctgs.iter().map(|c| (utilization(grid, base, c), c)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    scored.into_iter().map(|(_, c)| c).collect()
}

/// Keep the top `⌈level·K⌉` entries of a ranking.
pub fn filter<T: Clone>(ranked: &[T], level: f64) -> Vec<T> {
    if ranked.is_empty() {
        return Vec::new();
    }
    let keep = ((level * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
    ranked[..keep].to_vec()
}

/// Contiguous blocks of `⌈n / workers⌉` indices, one per busy worker.
pub fn partition(n: usize, workers: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let size = n.div_ceil(workers.max(1));
    (0..n).step_by(size).map(|lo| lo..(lo + size).min(n)).collect()
}

/// Runs sub-problems on a fixed number of workers.
pub struct Executor {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self, BendersError> {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = if workers > 1 {
                Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .build()
                        .map_err(|e| BendersError::Pool(e.to_string()))?,
                )
            } else {
                None
            };
            Ok(Executor { workers, pool })
        }
        #[cfg(not(feature = "parallel"))]
        Ok(Executor { workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Apply `f` to every item. Items are split into contiguous blocks of
    /// `⌈n / workers⌉`, one per worker, and results come back in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        if items.is_empty() {
            return Vec::new();
        }
        let blocks = partition(items.len(), self.workers);
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            let out: Vec<Vec<R>> = pool.install(|| {
                blocks
                    .par_iter()
                    .map(|r| items[r.clone()].iter().map(&f).collect())
                    .collect()
            });
            return out.into_iter().flatten().collect();
        }
        blocks
            .into_iter()
            .flat_map(|r| items[r].iter().map(&f).collect::<Vec<_>>())
            .collect()
    }
}

/// Solve the given contingencies at one base point. Results are in the order
/// of `ctgs`; a failed sub-problem is retried once on the calling thread.
pub fn parallel_map(
    exec: &Executor,
    grid: &Grid,
    ctgs: &[Contingency],
    base: &BasePoint,
    config: &SolverConfig,
) -> Result<Vec<SubproblemResult>, ContingencyError> {
    let first = exec.map(ctgs, |c| solve_with_agc(grid, c, base, config));
    first
        .into_iter()
        .zip(ctgs)
        .map(|(r, c)| match r {
            Ok(r) => Ok(r),
            Err(e) => {
                log::warn!("contingency {} failed ({e}); retrying", c.id);
                solve_with_agc(grid, c, base, config)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Optimal,
    IterationLimit,
    Infeasible,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Optimal => "optimal",
            RunStatus::IterationLimit => "iteration-limit",
            RunStatus::Infeasible => "infeasible",
        })
    }
}

/// One row of the iteration ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationRecord {
    pub iteration: usize,
    pub violations: usize,
    /// Master objective with the cuts known at this iteration.
    pub objective: f64,
    pub total_mismatch: f64,
    pub z_lower: f64,
    pub z_upper: f64,
    /// Seconds spent in this iteration.
    pub wall_time: f64,
}

impl IterationRecord {
    /// The record without its wall time, which is the only field that
    /// depends on the machine.
    pub fn deterministic(&self) -> IterationRecord {
        IterationRecord {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Timing {
    pub master: f64,
    pub subproblems: f64,
    pub total: f64,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct BendersOutcome {
    pub status: RunStatus,
    /// `generation cost + δ/|K| · Σ mismatch` at the reported base point.
    pub objective: f64,
    pub z_lower: f64,
    pub z_upper: f64,
    pub ledger: Vec<IterationRecord>,
    /// Absent only when the base problem is infeasible.
    pub base: Option<BasePoint>,
    /// Contingencies evaluated by the loop, in id order.
    pub selected: Vec<Contingency>,
    /// Results at the reported base point, aligned with `selected`.
    pub results: Vec<SubproblemResult>,
    pub cuts: Vec<BendersCut>,
    /// Contingencies left out because they island the network.
    pub islanded: Vec<usize>,
    pub timing: Timing,
}

impl BendersOutcome {
    fn infeasible(islanded: Vec<usize>, timing: Timing) -> Self {
        BendersOutcome {
            status: RunStatus::Infeasible,
            objective: f64::NAN,
            z_lower: f64::NAN,
            z_upper: f64::NAN,
            ledger: Vec::new(),
            base: None,
            selected: Vec::new(),
            results: Vec::new(),
            cuts: Vec::new(),
            islanded,
            timing,
        }
    }
}

/// Master problem: base relaxation, epigraph variables and cuts.
struct Master {
    builder: ProblemBuilder,
    index: RelaxationIndex,
}

fn build_master(
    grid: &Grid,
    config: &SolverConfig,
    selected: &[Contingency],
    weight: f64,
    cuts: &[BendersCut],
) -> Result<Master, BendersError> {
    let (mut builder, index) = base_builder(grid, config)?;
    let z: Vec<VarId> = selected
        .iter()
        .map(|c| {
            let v = builder.add_variable(format!("z_k{}", c.id), 0.0, f64::INFINITY);
            builder.add_objective_term(v, weight);
            v
        })
        .collect();
    for (n, cut) in cuts.iter().enumerate() {
        let k = selected
            .iter()
            .position(|c| c.id == cut.contingency)
            .expect("cuts belong to selected contingencies");
        let mut e = AffineExpr::constant(cut.constant).term(z[k], -1.0);
        for &(v, a) in &cut.coeffs {
            let var = match v {
                MasterVar::PGen(g) => index.p_gen[g],
                MasterVar::CBus(i) => index.lifted.c_bus[i],
            };
            e.add_term(var, a);
        }
        builder.add_inequality(format!("cut {n} k{}", cut.contingency), e);
    }
    Ok(Master { builder, index })
}

/// Contingencies that keep the network connected, and the ids of those that
/// do not.
pub fn split_islanded(grid: &Grid, ctgs: &[Contingency]) -> (Vec<Contingency>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut islanded = Vec::new();
    for c in ctgs {
        if validate_connectivity(grid, c) {
            log::warn!("contingency {} islands the network and is skipped", c.id);
            islanded.push(c.id);
        } else {
            kept.push(c.clone());
        }
    }
    (kept, islanded)
}

/// Run the decomposition on the grid's own contingency list.
pub fn run(grid: &Grid, config: &SolverConfig) -> Result<BendersOutcome, BendersError> {
    config.validate()?;
    let start = Instant::now();
    let mut timing = Timing {
        workers: config.workers,
        ..Timing::default()
    };
    let (all, islanded) = split_islanded(grid, &grid.contingencies);
    if !grid.is_connected() {
        timing.total = start.elapsed().as_secs_f64();
        return Ok(BendersOutcome::infeasible(islanded, timing));
    }
    let weight = if all.is_empty() {
        0.0
    } else {
        config.delta / all.len() as f64
    };
    let exec = Executor::new(config.workers)?;
    let settings = config.solver_settings();
    let per_ctg_tol = |n: usize| config.tol_mismatch / (n.max(1) as f64);

    let mut cuts: Vec<BendersCut> = Vec::new();
    let mut ledger = Vec::new();
    let mut selected: Vec<Contingency> = Vec::new();
    let mut z_lower = f64::NEG_INFINITY;
    let mut z_upper = f64::INFINITY;
    let mut incumbent: Option<(f64, BasePoint, Vec<SubproblemResult>)> = None;

    for iteration in 0..config.max_iterations {
        let t_iter = Instant::now();
        let t_master = Instant::now();
        let master = build_master(grid, config, &selected, weight, &cuts)?;
        let index = master.index;
        let problem = master
            .builder
            .build()
            .map_err(|e| BendersError::Relax(RelaxError::Build(e)))?;
        let sol = conic::solve(&problem, &settings);
        timing.master += t_master.elapsed().as_secs_f64();
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible if iteration == 0 => {
                timing.total = start.elapsed().as_secs_f64();
                return Ok(BendersOutcome::infeasible(islanded, timing));
            }
            s => return Err(BendersError::Master(s)),
        }
        let base = extract_base_point(grid, &index, &sol);
        // Each z_k at its smallest value the cuts allow at this dispatch,
        // rather than the solver's slightly interior iterate.
        let z_total: f64 = selected
            .iter()
            .map(|c| {
                cuts.iter()
                    .filter(|cut| cut.contingency == c.id)
                    .map(|cut| cut.evaluate(&base.p_gen, &base.lifted.c_self))
                    .fold(0.0, f64::max)
            })
            .sum();
        let master_objective = base.generation_cost + weight * z_total;
        z_lower = z_lower.max(master_objective);

        if iteration == 0 {
            let ranked = rank_contingencies(grid, &base, &all);
            let mut kept: Vec<Contingency> = filter(&ranked, config.filter_level)
                .into_iter()
                .cloned()
                .collect();
            kept.sort_by_key(|c| c.id);
            selected = kept;
            if selected.is_empty() {
                z_upper = base.generation_cost;
                ledger.push(IterationRecord {
                    iteration: 0,
                    violations: 0,
                    objective: master_objective,
                    total_mismatch: 0.0,
                    z_lower,
                    z_upper,
                    wall_time: t_iter.elapsed().as_secs_f64(),
                });
                timing.total = start.elapsed().as_secs_f64();
                return Ok(BendersOutcome {
                    status: RunStatus::Optimal,
                    objective: base.generation_cost,
                    z_lower,
                    z_upper,
                    ledger,
                    base: Some(base),
                    selected,
                    results: Vec::new(),
                    cuts,
                    islanded,
                    timing,
                });
            }
        }

        let t_sub = Instant::now();
        let results = parallel_map(&exec, grid, &selected, &base, config)?;
        timing.subproblems += t_sub.elapsed().as_secs_f64();
        let total_mismatch: f64 = results.iter().map(|r| r.mismatch_cost).sum();
        let upper = base.generation_cost + weight * total_mismatch;
        let threshold = per_ctg_tol(selected.len());
        let violated: Vec<&SubproblemResult> = results
            .iter()
            .filter(|r| r.mismatch_cost > threshold)
            .collect();
        if upper < z_upper {
            z_upper = upper;
        }
        ledger.push(IterationRecord {
            iteration: iteration + 1,
            violations: violated.len(),
            objective: master_objective,
            total_mismatch,
            z_lower,
            z_upper,
            wall_time: t_iter.elapsed().as_secs_f64(),
        });
        log::info!(
            "iteration {}: violations {} mismatch {total_mismatch:.6} bounds [{z_lower:.6}, {z_upper:.6}]",
            iteration + 1,
            violated.len()
        );

        let improves = incumbent.as_ref().map_or(true, |(u, _, _)| upper < *u);
        let converged = total_mismatch <= config.tol_mismatch
            || z_upper - z_lower <= config.tol_mismatch + 10.0 * config.solver_tol;
        let new_cuts: Vec<BendersCut> = if converged {
            Vec::new()
        } else {
            violated
                .iter()
                .map(|r| build_cut(grid, r, &base, iteration + 1))
                .collect::<Result<_, _>>()?
        };
        if improves {
            incumbent = Some((upper, base, results));
        }
        if converged || new_cuts.is_empty() || iteration + 1 == config.max_iterations {
            let status = if converged || new_cuts.is_empty() {
                RunStatus::Optimal
            } else {
                RunStatus::IterationLimit
            };
            let (objective, base, results) = incumbent.expect("set in the first round");
            timing.total = start.elapsed().as_secs_f64();
            return Ok(BendersOutcome {
                status,
                objective,
                z_lower,
                z_upper,
                ledger,
                base: Some(base),
                selected,
                results,
                cuts,
                islanded,
                timing,
            });
        }
        cuts.extend(new_cuts);
    }
    unreachable!("the loop returns on its last iteration")
}

/// Result of solving every contingency jointly with the base case.
#[derive(Debug, Clone)]
pub struct ExtensiveForm {
    /// `generation cost + δ/|K| · Σ mismatch`.
    pub objective: f64,
    pub base: BasePoint,
    pub mismatch: Vec<f64>,
    pub states: Vec<AgcBranchState>,
    pub rounds: usize,
}

/// Solve base case and contingencies as one problem, settling the AGC
/// states of all contingencies by the same pinning rule as the
/// sub-problems. The contingency weight is `δ / ctgs.len()`.
pub fn solve_extensive_form(
    grid: &Grid,
    ctgs: &[Contingency],
    config: &SolverConfig,
) -> Result<ExtensiveForm, BendersError> {
    config.validate()?;
    let weight = if ctgs.is_empty() {
        0.0
    } else {
        config.delta / ctgs.len() as f64
    };
    let mut states: Vec<AgcBranchState> = ctgs.iter().map(AgcBranchState::initial).collect();
    let cap: usize = ctgs.iter().map(agc_iteration_cap).sum::<usize>().max(1);
    for round in 1..=cap {
        let (mut b, index) = base_builder(grid, config)?;
        let c_bus = index.lifted.c_bus.clone();
        let mut parts: Vec<ContingencyVars> = Vec::with_capacity(ctgs.len());
        for (c, state) in ctgs.iter().zip(&states) {
            if validate_connectivity(grid, c) {
                return Err(ContingencyError::Islanded(c.id).into());
            }
            let vars = add_contingency(
                &mut b,
                grid,
                c,
                Coupling::Master {
                    p_gen: &index.p_gen,
                    c_bus: &c_bus,
                },
                state,
                config.penalty,
                BuildOptions::default(),
            );
            let mut obj = vars.mismatch.scaled(weight);
            obj.add_expr(&vars.generation, config.loss_weight);
            for &(v, a) in &obj.terms {
                b.add_objective_term(v, a);
            }
            parts.push(vars);
        }
        let problem = b
            .build()
            .map_err(|e| BendersError::Relax(RelaxError::Build(e)))?;
        let sol = conic::solve(&problem, &config.solver_settings());
        if sol.status != SolveStatus::Optimal {
            return Err(BendersError::Master(sol.status));
        }
        let base = extract_base_point(grid, &index, &sol);
        let mut changed = false;
        let mut mismatch = Vec::with_capacity(ctgs.len());
        let mut next_states = Vec::with_capacity(ctgs.len());
        for ((c, vars), state) in ctgs.iter().zip(&parts).zip(&states) {
            let r = crate::contingency::extract_result(grid, c, vars, &sol, state, config)?;
            let next = pin_updates(grid, &base.p_gen, &r, state);
            changed |= next != *state;
            mismatch.push(r.mismatch_cost);
            next_states.push(next);
        }
        if !changed {
            let objective = base.generation_cost + weight * mismatch.iter().sum::<f64>();
            return Ok(ExtensiveForm {
                objective,
                base,
                mismatch,
                states,
                rounds: round,
            });
        }
        states = next_states;
    }
    Err(BendersError::ExtensiveCycling(cap))
}
