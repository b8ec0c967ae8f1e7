//! Second-order cone programs: a builder-produced immutable problem, a
//! reference primal-dual interior-point solver and dual extraction.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    cᵀx
//! subject to  aᵢᵀx + a0ᵢ = 0        (equalities)
//!             aⱼᵀx + a0ⱼ ≤ 0        (inequalities)
//!             ‖v_k(x)‖₂ ≤ t_k(x)    (second-order cones)
//!             l ≤ x ≤ u             (bounds, possibly infinite)
//! ```
//!
//! Dual sign conventions: the multiplier of an equality is the derivative
//! of the optimal value with respect to its right-hand side when the
//! constraint is read as `aᵀx = -a0`; inequality and bound multipliers are
//! nonnegative.

mod cones;
mod ipm;
mod ldl;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

pub use ipm::InteriorPoint;

/// Index of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// `Σ coef·x + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        AffineExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        AffineExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn add_expr(&mut self, other: &AffineExpr, scale: f64) {
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn scaled(&self, scale: f64) -> AffineExpr {
        let mut out = AffineExpr::new();
        out.add_expr(self, scale);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// Merge repeated variables and drop zero coefficients, keeping the
    /// first-appearance order.
    pub fn compacted(&self) -> AffineExpr {
        let mut order: Vec<VarId> = Vec::new();
        let mut acc: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            let e = acc.entry(v).or_insert_with(|| {
                order.push(v);
                0.0
            });
            *e += c;
        }
        AffineExpr {
            terms: order
                .into_iter()
                .filter_map(|v| {
                    let c = acc[&v];
                    (c != 0.0).then_some((v, c))
                })
                .collect(),
            constant: self.constant,
        }
    }
}

/// Handle to a constraint of a built problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintHandle {
    Eq(usize),
    Ineq(usize),
    Soc(usize),
    Lower(VarId),
    Upper(VarId),
}

#[derive(Debug, Clone, PartialEq)]
struct Variable {
    name: String,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct LinearRow {
    label: String,
    expr: AffineExpr,
}

#[derive(Debug, Clone, PartialEq)]
struct SocRow {
    label: String,
    vector: Vec<AffineExpr>,
    scalar: AffineExpr,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BuildError {
    #[error("constraint `{label}` references variable {var} but only {num_vars} variables exist")]
    DanglingVariable {
        label: String,
        var: usize,
        num_vars: usize,
    },
    #[error("variable `{name}` has lower bound {lower} above upper bound {upper}")]
    EmptyBounds { name: String, lower: f64, upper: f64 },
    #[error("constraint `{label}` has a non-finite coefficient")]
    NonFinite { label: String },
}

/// Incremental assembly of a [`ConicProblem`].
#[derive(Debug, Clone, Default)]
pub struct ProblemBuilder {
    vars: Vec<Variable>,
    objective: AffineExpr,
    eqs: Vec<LinearRow>,
    ineqs: Vec<LinearRow>,
    socs: Vec<SocRow>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn free_variable(&mut self, name: impl Into<String>) -> VarId {
        self.add_variable(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// `expr = 0`
    pub fn add_equality(&mut self, label: impl Into<String>, expr: AffineExpr) -> ConstraintHandle {
        self.eqs.push(LinearRow {
            label: label.into(),
            expr,
        });
        ConstraintHandle::Eq(self.eqs.len() - 1)
    }

    /// `expr ≤ 0`
    pub fn add_inequality(&mut self, label: impl Into<String>, expr: AffineExpr) -> ConstraintHandle {
        self.ineqs.push(LinearRow {
            label: label.into(),
            expr,
        });
        ConstraintHandle::Ineq(self.ineqs.len() - 1)
    }

    /// `‖vector‖₂ ≤ scalar`
    pub fn add_soc(
        &mut self,
        label: impl Into<String>,
        vector: Vec<AffineExpr>,
        scalar: AffineExpr,
    ) -> ConstraintHandle {
        self.socs.push(SocRow {
            label: label.into(),
            vector,
            scalar,
        });
        ConstraintHandle::Soc(self.socs.len() - 1)
    }

    /// `x·y ≥ ‖v‖²` with `x, y ≥ 0`, written as the cone
    /// `‖(2v, x - y)‖ ≤ x + y`.
    pub fn add_rotated_soc(
        &mut self,
        label: impl Into<String>,
        x: AffineExpr,
        y: AffineExpr,
        v: Vec<AffineExpr>,
    ) -> ConstraintHandle {
        let mut vector: Vec<AffineExpr> = v.iter().map(|e| e.scaled(2.0)).collect();
        let mut diff = x.clone();
        diff.add_expr(&y, -1.0);
        vector.push(diff);
        let mut sum = x;
        sum.add_expr(&y, 1.0);
        self.add_soc(label, vector, sum)
    }

    pub fn set_objective(&mut self, expr: AffineExpr) {
        self.objective = expr;
    }

    pub fn add_objective_term(&mut self, v: VarId, coef: f64) {
        self.objective.add_term(v, coef);
    }

    pub fn build(self) -> Result<ConicProblem, BuildError> {
        let n = self.vars.len();
        let check = |label: &str, e: &AffineExpr| -> Result<(), BuildError> {
            if !e.constant.is_finite() {
                return Err(BuildError::NonFinite {
                    label: label.to_string(),
                });
            }
            for &(v, c) in &e.terms {
                if v.0 >= n {
                    return Err(BuildError::DanglingVariable {
                        label: label.to_string(),
                        var: v.0,
                        num_vars: n,
                    });
                }
                if !c.is_finite() {
                    return Err(BuildError::NonFinite {
                        label: label.to_string(),
                    });
                }
            }
            Ok(())
        };
        check("objective", &self.objective)?;
        for r in self.eqs.iter().chain(&self.ineqs) {
            check(&r.label, &r.expr)?;
        }
        for c in &self.socs {
            check(&c.label, &c.scalar)?;
            for e in &c.vector {
                check(&c.label, e)?;
            }
        }
        for v in &self.vars {
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() {
                return Err(BuildError::EmptyBounds {
                    name: v.name.clone(),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
        }
        let compact_row = |r: LinearRow| LinearRow {
            expr: r.expr.compacted(),
            label: r.label,
        };
        Ok(ConicProblem {
            objective: self.objective.compacted(),
            eqs: self.eqs.into_iter().map(compact_row).collect(),
            ineqs: self.ineqs.into_iter().map(compact_row).collect(),
            socs: self
                .socs
                .into_iter()
                .map(|c| SocRow {
                    label: c.label,
                    vector: c.vector.iter().map(AffineExpr::compacted).collect(),
                    scalar: c.scalar.compacted(),
                })
                .collect(),
            vars: self.vars,
        })
    }
}

/// Frozen second-order cone program.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    vars: Vec<Variable>,
    objective: AffineExpr,
    eqs: Vec<LinearRow>,
    ineqs: Vec<LinearRow>,
    socs: Vec<SocRow>,
}

impl ConicProblem {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.eqs.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.ineqs.len()
    }

    pub fn num_cones(&self) -> usize {
        self.socs.len()
    }

    /// Dimension of each cone, counting the scalar side.
    pub fn cone_dims(&self) -> Vec<usize> {
        self.socs.iter().map(|c| c.vector.len() + 1).collect()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn bounds(&self, v: VarId) -> (f64, f64) {
        (self.vars[v.0].lower, self.vars[v.0].upper)
    }

    pub fn objective(&self) -> &AffineExpr {
        &self.objective
    }

    pub fn label(&self, h: ConstraintHandle) -> String {
        match h {
            ConstraintHandle::Eq(i) => self.eqs[i].label.clone(),
            ConstraintHandle::Ineq(i) => self.ineqs[i].label.clone(),
            ConstraintHandle::Soc(i) => self.socs[i].label.clone(),
            ConstraintHandle::Lower(v) => format!("{} >= lower", self.vars[v.0].name),
            ConstraintHandle::Upper(v) => format!("{} <= upper", self.vars[v.0].name),
        }
    }

    /// Deterministic text dump, one item per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let fmt_expr = |e: &AffineExpr| {
            let mut s = String::new();
            for &(v, c) in &e.terms {
                let _ = write!(s, "{c:+e}*{} ", self.vars[v.0].name);
            }
            let _ = write!(s, "{:+e}", e.constant);
            s
        };
        let _ = writeln!(out, "vars {}", self.vars.len());
        for v in &self.vars {
            let _ = writeln!(out, "var {} [{:e}, {:e}]", v.name, v.lower, v.upper);
        }
        let _ = writeln!(out, "min {}", fmt_expr(&self.objective));
        for r in &self.eqs {
            let _ = writeln!(out, "eq {}: {} = 0", r.label, fmt_expr(&r.expr));
        }
        for r in &self.ineqs {
            let _ = writeln!(out, "ineq {}: {} <= 0", r.label, fmt_expr(&r.expr));
        }
        for c in &self.socs {
            let parts: Vec<String> = c.vector.iter().map(fmt_expr).collect();
            let _ = writeln!(
                out,
                "soc {}: ||({})|| <= {}",
                c.label,
                parts.join(", "),
                fmt_expr(&c.scalar)
            );
        }
        out
    }

    /// Residual of each constraint at `x` (positive means violated).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for r in &self.eqs {
            worst = worst.max(r.expr.eval(x).abs());
        }
        for r in &self.ineqs {
            worst = worst.max(r.expr.eval(x));
        }
        for c in &self.socs {
            let nrm = c.vector.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(nrm - c.scalar.eval(x));
        }
        for (i, v) in self.vars.iter().enumerate() {
            worst = worst.max(v.lower - x[i]).max(x[i] - v.upper);
        }
        worst
    }
}

impl fmt::Display for ConicProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Scaled residual norms at the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
    pub dual_soc: Vec<Vec<f64>>,
    pub dual_lower: Vec<f64>,
    pub dual_upper: Vec<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DualError {
    #[error("duals requested from a solution with status {0:?}")]
    NotOptimal(SolveStatus),
    #[error("cone constraint {0} has a vector multiplier, not a scalar one")]
    ConeHandle(usize),
}

impl ConicSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.primal[v.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Scalar multiplier of a linear constraint or bound.
    pub fn dual(&self, h: ConstraintHandle) -> Result<f64, DualError> {
        if self.status != SolveStatus::Optimal {
            return Err(DualError::NotOptimal(self.status));
        }
        Ok(match h {
            ConstraintHandle::Eq(i) => self.dual_eq[i],
            ConstraintHandle::Ineq(i) => self.dual_ineq[i],
            ConstraintHandle::Lower(v) => self.dual_lower[v.0],
            ConstraintHandle::Upper(v) => self.dual_upper[v.0],
            ConstraintHandle::Soc(i) => return Err(DualError::ConeHandle(i)),
        })
    }
}

/// One entry of a labeled dual map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDual {
    pub handle: ConstraintHandle,
    pub label: String,
    pub value: f64,
}

/// Look up the multipliers of `handles`, labelled with their constraint names.
pub fn extract_duals(
    problem: &ConicProblem,
    solution: &ConicSolution,
    handles: &[ConstraintHandle],
) -> Result<Vec<LabeledDual>, DualError> {
    handles
        .iter()
        .map(|&h| {
            Ok(LabeledDual {
                handle: h,
                label: problem.label(h),
                value: solution.dual(h)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

/// A conic solver usable by the rest of the crate. Implementations must be
/// pure functions of their inputs.
pub trait ConicBackend: Sync {
    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution;
}

/// Solve with the built-in interior-point method.
pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution {
    InteriorPoint.solve(problem, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn bound_only_problem() {
        let mut b = ProblemBuilder::new();
        let x = b.add_variable("x0", 1.0, f64::INFINITY);
        b.add_objective_term(x, 1.0);
        let p = b.build().unwrap();
        assert_eq!(p.num_vars(), 1);
        assert_eq!(p.num_cones(), 0);
        let s = solve(&p, &tol());
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value(x) - 1.0).abs() < 1e-7);
        assert!((s.dual(ConstraintHandle::Lower(x)).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn single_cone_dimension() {
        let mut b = ProblemBuilder::new();
        let x: Vec<VarId> = (0..3).map(|i| b.free_variable(format!("x{i}"))).collect();
        b.add_soc(
            "cone",
            vec![AffineExpr::var(x[1]), AffineExpr::var(x[2])],
            AffineExpr::var(x[0]),
        );
        let p = b.build().unwrap();
        assert_eq!(p.cone_dims(), vec![3]);
    }

    #[test]
    fn euclidean_norm_problem() {
        // min c s.t. ‖(3, 4)‖ ≤ c
        let mut b = ProblemBuilder::new();
        let c = b.free_variable("c");
        b.add_soc(
            "norm",
            vec![AffineExpr::constant(3.0), AffineExpr::constant(4.0)],
            AffineExpr::var(c),
        );
        b.add_objective_term(c, 1.0);
        let s = solve(&b.build().unwrap(), &tol());
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.value(c) - 5.0).abs() < 1e-6, "{}", s.value(c));
        assert!((s.objective_value - 5.0).abs() < 1e-6);
    }

    #[test]
    fn equality_dual_is_objective_gradient() {
        let mut b = ProblemBuilder::new();
        let x = b.free_variable("x");
        let h = b.add_equality("fix", AffineExpr::var(x).plus(-2.0));
        b.add_objective_term(x, 1.0);
        let p = b.build().unwrap();
        let s = solve(&p, &tol());
        assert!((s.value(x) - 2.0).abs() < 1e-7);
        let duals = extract_duals(&p, &s, &[h]).unwrap();
        assert_eq!(duals[0].label, "fix");
        assert!((duals[0].value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn complementary_slackness_on_bounds() {
        // min x s.t. x ≥ 1, x ≥ 0
        let mut b = ProblemBuilder::new();
        let x = b.free_variable("x");
        let active = b.add_inequality("x>=1", AffineExpr::constant(1.0).term(x, -1.0));
        let inactive = b.add_inequality("x>=0", AffineExpr::new().term(x, -1.0));
        b.add_objective_term(x, 1.0);
        let s = solve(&b.build().unwrap(), &tol());
        assert!((s.dual(active).unwrap() - 1.0).abs() < 1e-7);
        assert!(s.dual(inactive).unwrap().abs() < 1e-7);
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let mut b = ProblemBuilder::new();
        let _x = b.free_variable("x");
        b.add_equality("bad", AffineExpr::var(VarId(3)));
        match b.build() {
            Err(BuildError::DanglingVariable { label, var, .. }) => {
                assert_eq!(label, "bad");
                assert_eq!(var, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duals_refused_for_non_optimal() {
        let mut b = ProblemBuilder::new();
        let x = b.add_variable("x", 0.0, 1.0);
        let h = b.add_inequality("x>=2", AffineExpr::constant(2.0).term(x, -1.0));
        let p = b.build().unwrap();
        let s = solve(&p, &tol());
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(matches!(extract_duals(&p, &s, &[h]), Err(DualError::NotOptimal(_))));
    }

    #[test]
    fn unbounded_is_detected() {
        let mut b = ProblemBuilder::new();
        let x = b.free_variable("x");
        b.add_inequality("x<=1", AffineExpr::var(x).plus(-1.0));
        b.add_objective_term(x, -1.0);
        b.add_objective_term(x, 2.0);
        b.add_objective_term(x, -2.0);
        let s = solve(&b.build().unwrap(), &tol());
        assert_eq!(s.status, SolveStatus::Optimal);
        let mut b = ProblemBuilder::new();
        let x = b.free_variable("x");
        b.add_inequality("x<=1", AffineExpr::var(x).plus(-1.0));
        b.add_objective_term(x, 1.0);
        let s = solve(&b.build().unwrap(), &tol());
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn dump_is_deterministic() {
        let build = || {
            let mut b = ProblemBuilder::new();
            let x = b.add_variable("x", 0.0, 2.0);
            let y = b.free_variable("y");
            b.add_equality("e", AffineExpr::var(x).term(y, -1.0));
            b.add_soc("c", vec![AffineExpr::var(x)], AffineExpr::var(y).plus(1.0));
            b.add_objective_term(y, 1.0);
            b.build().unwrap()
        };
        let text = build().dump();
        assert_eq!(text, build().dump());
        assert!(text.contains("eq e: +1e0*x -1e0*y +0e0 = 0"));
        assert_eq!(text.lines().count(), 6);
    }
}
