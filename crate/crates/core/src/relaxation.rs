//! Second-order cone relaxation of the base-case ACOPF.

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::conic::{
    AffineExpr, BuildError, ConicProblem, ConicSolution, ConstraintHandle, ProblemBuilder, VarId,
};
use crate::grid::{Grid, Units};
use crate::network::{bus_flow_sums, BranchFlow, LiftedVars, Topology};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RelaxError {
    #[error("the network is islanded")]
    Islanded,
    #[error("grid must be in per-unit")]
    NotPerUnit,
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("no lifted variables for bus pair ({0}, {1})")]
    MissingPair(usize, usize),
    #[error("bus {bus} has negative squared voltage {value}")]
    NegativeVoltage { bus: usize, value: f64 },
}

/// Variables and constraint handles of the base relaxation.
#[derive(Debug, Clone)]
pub struct RelaxationIndex {
    pub p_gen: Vec<VarId>,
    pub q_gen: Vec<VarId>,
    /// Epigraph variable of each generator's cost.
    pub cost: Vec<VarId>,
    pub lifted: LiftedVars,
    pub balance_p: Vec<ConstraintHandle>,
    pub balance_q: Vec<ConstraintHandle>,
    /// Rating cones at the from and to end of every line.
    pub line_rating: Vec<[ConstraintHandle; 2]>,
    pub xfmr_rating: Vec<[ConstraintHandle; 2]>,
}

/// Lifted voltage values. Pairs are sorted bus positions with `i < j`; `s_pair`
/// holds `s_ij` for that orientation, and `s_ji = -s_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LiftedVoltage {
    pub c_self: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub c_pair: Vec<f64>,
    pub s_pair: Vec<f64>,
}

impl LiftedVoltage {
    pub fn from_solution(lv: &LiftedVars, sol: &ConicSolution) -> Self {
        LiftedVoltage {
            c_self: lv.c_bus.iter().map(|&v| sol.value(v)).collect(),
            pairs: lv.pairs.clone(),
            c_pair: lv.c_pair.iter().map(|&v| sol.value(v)).collect(),
            s_pair: lv.s_pair.iter().map(|&v| sol.value(v)).collect(),
        }
    }

    /// `(c_ij, s_ij)` for the ordered pair `(i, j)`.
    pub fn pair(&self, i: usize, j: usize) -> Result<(f64, f64), RelaxError> {
        let key = (i.min(j), i.max(j));
        let k = self
            .pairs
            .binary_search(&key)
            .map_err(|_| RelaxError::MissingPair(i, j))?;
        let s = if i < j { self.s_pair[k] } else { -self.s_pair[k] };
        Ok((self.c_pair[k], s))
    }
}

/// Base-case decision snapshot handed from the master to sub-problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BasePoint {
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub lifted: LiftedVoltage,
    pub line_flows: Vec<BranchFlow>,
    pub xfmr_flows: Vec<BranchFlow>,
    pub generation_cost: f64,
    /// Generation cost plus the weighted contingency term.
    pub objective: f64,
}

/// Builder holding the base relaxation, for callers that extend it.
pub fn base_builder(
    grid: &Grid,
    _config: &SolverConfig,
) -> Result<(ProblemBuilder, RelaxationIndex), RelaxError> {
    if grid.units != Units::PerUnit {
        return Err(RelaxError::NotPerUnit);
    }
    if !grid.is_connected() {
        return Err(RelaxError::Islanded);
    }
    let mut b = ProblemBuilder::new();
    let mut p_gen = Vec::with_capacity(grid.generators.len());
    let mut q_gen = Vec::with_capacity(grid.generators.len());
    let mut cost = Vec::with_capacity(grid.generators.len());
    for g in &grid.generators {
        p_gen.push(b.add_variable(format!("p_g{}", g.id), g.pmin, g.pmax));
        q_gen.push(b.add_variable(format!("q_g{}", g.id), g.qmin, g.qmax));
    }
    for (pos, g) in grid.generators.iter().enumerate() {
        let t = b.free_variable(format!("cost_g{}", g.id));
        for (k, (seg, c0)) in g.cost.iter().zip(g.segment_offsets()).enumerate() {
            // c0 + m (p - b) - t <= 0
            let e = AffineExpr::constant(c0 - seg.marginal * seg.breakpoint)
                .term(p_gen[pos], seg.marginal)
                .term(t, -1.0);
            b.add_inequality(format!("cost g{} seg {k}", g.id), e);
        }
        b.add_objective_term(t, 1.0);
        cost.push(t);
    }

    let lines: Vec<usize> = (0..grid.lines.len()).collect();
    let xfmrs: Vec<usize> = (0..grid.transformers.len()).collect();
    let topo = Topology {
        lines: &lines,
        xfmrs: &xfmrs,
    };
    let vbounds: Vec<(f64, f64)> = grid
        .buses
        .iter()
        .map(|bus| (bus.vmin_base, bus.vmax_base))
        .collect();
    let lifted = LiftedVars::add(&mut b, grid, &vbounds, topo, "");

    let (p_out, q_out) = bus_flow_sums(grid, &lifted, topo);
    let mut balance_p = Vec::with_capacity(grid.buses.len());
    let mut balance_q = Vec::with_capacity(grid.buses.len());
    for (i, bus) in grid.buses.iter().enumerate() {
        let mut ep = AffineExpr::constant(-bus.p_load);
        let mut eq = AffineExpr::constant(-bus.q_load);
        for (pos, _) in grid
            .generators
            .iter()
            .enumerate()
            .filter(|(g, _)| grid.gen_bus(*g) == i)
        {
            ep.add_term(p_gen[pos], 1.0);
            eq.add_term(q_gen[pos], 1.0);
        }
        ep.add_term(lifted.c_bus[i], -bus.g_fs);
        eq.add_term(lifted.c_bus[i], bus.b_fs);
        ep.add_expr(&p_out[i], -1.0);
        eq.add_expr(&q_out[i], -1.0);
        balance_p.push(b.add_equality(format!("balance p bus {}", bus.id), ep));
        balance_q.push(b.add_equality(format!("balance q bus {}", bus.id), eq));
    }

    let mut rating = |name: String, exprs: [AffineExpr; 4], limit: f64| {
        let [pf, qf, pt, qt] = exprs;
        [
            b.add_soc(format!("{name} from"), vec![pf, qf], AffineExpr::constant(limit)),
            b.add_soc(format!("{name} to"), vec![pt, qt], AffineExpr::constant(limit)),
        ]
    };
    let mut line_rating = Vec::with_capacity(lines.len());
    let mut xfmr_rating = Vec::with_capacity(xfmrs.len());
    for br in topo.branches() {
        let exprs = lifted.flow_exprs(grid, br);
        let (limit, _) = br.ratings(grid);
        match br {
            crate::network::Branch::Line(e) => line_rating.push(rating(
                format!("rating line {}", grid.lines[e].id),
                exprs,
                limit,
            )),
            crate::network::Branch::Xfmr(f) => xfmr_rating.push(rating(
                format!("rating transformer {}", grid.transformers[f].id),
                exprs,
                limit,
            )),
        }
    }

    Ok((
        b,
        RelaxationIndex {
            p_gen,
            q_gen,
            cost,
            lifted,
            balance_p,
            balance_q,
            line_rating,
            xfmr_rating,
        },
    ))
}

/// The base relaxation as a frozen problem.
pub fn build_base_relaxation(
    grid: &Grid,
    config: &SolverConfig,
) -> Result<(ConicProblem, RelaxationIndex), RelaxError> {
    let (b, index) = base_builder(grid, config)?;
    Ok((b.build()?, index))
}

/// Read the base decisions out of a solved relaxation (or master problem).
pub fn extract_base_point(grid: &Grid, index: &RelaxationIndex, sol: &ConicSolution) -> BasePoint {
    let lifted = LiftedVoltage::from_solution(&index.lifted, sol);
    let flow = |br: crate::network::Branch| {
        let (i, j) = br.ends(grid);
        let (c, s) = lifted.pair(i, j).expect("every branch has a pair");
        br.two_port(grid)
            .flows(lifted.c_self[i], lifted.c_self[j], c, s)
    };
    let line_flows = (0..grid.lines.len())
        .map(|e| flow(crate::network::Branch::Line(e)))
        .collect();
    let xfmr_flows = (0..grid.transformers.len())
        .map(|f| flow(crate::network::Branch::Xfmr(f)))
        .collect();
    let p_gen: Vec<f64> = index.p_gen.iter().map(|&v| sol.value(v)).collect();
    let generation_cost = grid
        .generators
        .iter()
        .zip(&p_gen)
        .map(|(g, &p)| g.cost_at(p))
        .sum();
    BasePoint {
        q_gen: index.q_gen.iter().map(|&v| sol.value(v)).collect(),
        p_gen,
        lifted,
        line_flows,
        xfmr_flows,
        generation_cost,
        objective: sol.objective_value,
    }
}

pub const EXACT_TIGHTNESS: f64 = 16.0;

/// `-log10 |c_ij² + s_ij² - c_ii c_jj|`, clamped to 16 when the residual
/// is below 1e-16. The flag reports the clamp.
pub fn pair_tightness(c_ii: f64, c_jj: f64, c_ij: f64, s_ij: f64) -> (f64, bool) {
    let r = (c_ij * c_ij + s_ij * s_ij - c_ii * c_jj).abs();
    if r < 1e-16 {
        (EXACT_TIGHTNESS, true)
    } else {
        (-r.log10(), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessEntry {
    /// Bus positions.
    pub pair: (usize, usize),
    pub value: f64,
    pub exact: bool,
}

pub fn tightness(lifted: &LiftedVoltage) -> Vec<TightnessEntry> {
    lifted
        .pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let (value, exact) = pair_tightness(
                lifted.c_self[i],
                lifted.c_self[j],
                lifted.c_pair[k],
                lifted.s_pair[k],
            );
            TightnessEntry {
                pair: (i, j),
                value,
                exact,
            }
        })
        .collect()
}

/// Tightness of a single pair.
pub fn tightness_of(lifted: &LiftedVoltage, i: usize, j: usize) -> Result<f64, RelaxError> {
    let (c, s) = lifted.pair(i, j)?;
    Ok(pair_tightness(lifted.c_self[i], lifted.c_self[j], c, s).0)
}

/// Voltage magnitudes `u_i = √c_ii`.
pub fn recover_voltages(lifted: &LiftedVoltage) -> Result<Vec<f64>, RelaxError> {
    lifted
        .c_self
        .iter()
        .enumerate()
        .map(|(bus, &c)| {
            if c < -1e-9 {
                Err(RelaxError::NegativeVoltage { bus, value: c })
            } else {
                Ok(c.max(0.0).sqrt())
            }
        })
        .collect()
}

/// Base-case utilization per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    /// `max(|S_from|, |S_to|) / rating`
    pub lines: Vec<f64>,
    pub xfmrs: Vec<f64>,
    /// `p_g / p̄_g`
    pub gens: Vec<f64>,
}

pub fn flow_report(base: &BasePoint, grid: &Grid) -> FlowReport {
    let util = |f: &BranchFlow, rating: f64| f.max_apparent() / rating;
    FlowReport {
        lines: base
            .line_flows
            .iter()
            .zip(&grid.lines)
            .map(|(f, l)| util(f, l.rating_base))
            .collect(),
        xfmrs: base
            .xfmr_flows
            .iter()
            .zip(&grid.transformers)
            .map(|(f, t)| util(f, t.rating_base))
            .collect(),
        gens: base
            .p_gen
            .iter()
            .zip(&grid.generators)
            .map(|(&p, g)| if g.pmax > 0.0 { p / g.pmax } else { 0.0 })
            .collect(),
    }
}
