//! Branch physics in lifted voltage variables.
//!
//! With `W_ij = V_i V̄_j = c_ij + j s_ij`, a branch with two-port admittance
//! matrix `[Y_ff Y_ft; Y_tf Y_tt]` carries `S_f = Ȳ_ff c_ff + Ȳ_ft W_ft` into
//! its from end and `S_t = Ȳ_tt c_tt + Ȳ_tf W̄_ft` into its to end. Both are
//! linear in `(c_ff, c_tt, c_ft, s_ft)`.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::conic::{AffineExpr, ConstraintHandle, ProblemBuilder, VarId};
use crate::grid::{Grid, Line, Transformer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPort {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

impl TwoPort {
    pub fn line(l: &Line) -> Self {
        let y = Complex64::new(l.g, l.b);
        let half = Complex64::new(0.0, l.bch / 2.0);
        TwoPort {
            yff: y + half,
            yft: -y,
            ytf: -y,
            ytt: y + half,
        }
    }

    /// Ideal complex-ratio transformer on the from side, magnetizing branch
    /// behind the ratio.
    pub fn transformer(t: &Transformer) -> Self {
        let y = Complex64::new(t.g, t.b);
        let ym = Complex64::new(t.g_m, t.b_m);
        let ratio = Complex64::new(t.tr, t.ti);
        TwoPort {
            yff: (y + ym) / (t.tm * t.tm),
            yft: -y / ratio.conj(),
            ytf: -y / ratio,
            ytt: y,
        }
    }

    /// Coefficients of `(c_ff, c_tt, c_ft, s_ft)` in `(p_f, q_f, p_t, q_t)`.
    pub fn coefficients(&self) -> [[f64; 4]; 4] {
        let (ff, ft, tf, tt) = (self.yff, self.yft, self.ytf, self.ytt);
        [
            [ff.re, 0.0, ft.re, ft.im],
            [-ff.im, 0.0, -ft.im, ft.re],
            [0.0, tt.re, tf.re, -tf.im],
            [0.0, -tt.im, -tf.im, -tf.re],
        ]
    }

    /// Evaluate the four flows at a lifted point.
    pub fn flows(&self, c_ff: f64, c_tt: f64, c_ft: f64, s_ft: f64) -> BranchFlow {
        let x = [c_ff, c_tt, c_ft, s_ft];
        let k = self.coefficients();
        let v = |r: usize| (0..4).map(|c| k[r][c] * x[c]).sum::<f64>();
        BranchFlow {
            p_from: v(0),
            q_from: v(1),
            p_to: v(2),
            q_to: v(3),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

impl BranchFlow {
    pub fn max_apparent(&self) -> f64 {
        self.p_from.hypot(self.q_from).max(self.p_to.hypot(self.q_to))
    }
}

/// Which branches are in service.
#[derive(Debug, Clone, Copy)]
pub struct Topology<'a> {
    pub lines: &'a [usize],
    pub xfmrs: &'a [usize],
}

/// A branch in service, by kind and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Line(usize),
    Xfmr(usize),
}

impl Branch {
    pub fn ends(self, grid: &Grid) -> (usize, usize) {
        match self {
            Branch::Line(e) => grid.line_ends(e),
            Branch::Xfmr(f) => grid.xfmr_ends(f),
        }
    }

    pub fn two_port(self, grid: &Grid) -> TwoPort {
        match self {
            Branch::Line(e) => TwoPort::line(&grid.lines[e]),
            Branch::Xfmr(f) => TwoPort::transformer(&grid.transformers[f]),
        }
    }

    pub fn ratings(self, grid: &Grid) -> (f64, f64) {
        match self {
            Branch::Line(e) => (grid.lines[e].rating_base, grid.lines[e].rating_ctg),
            Branch::Xfmr(f) => (
                grid.transformers[f].rating_base,
                grid.transformers[f].rating_ctg,
            ),
        }
    }
}

impl Topology<'_> {
    pub fn branches(&self) -> impl Iterator<Item = Branch> + '_ {
        self.lines
            .iter()
            .map(|&e| Branch::Line(e))
            .chain(self.xfmrs.iter().map(|&f| Branch::Xfmr(f)))
    }
}

/// Lifted voltage variables of one network snapshot.
#[derive(Debug, Clone)]
pub struct LiftedVars {
    pub c_bus: Vec<VarId>,
    /// Bus-position pairs `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(usize, usize)>,
    pub c_pair: Vec<VarId>,
    pub s_pair: Vec<VarId>,
    pub pair_index: BTreeMap<(usize, usize), usize>,
    pub cones: Vec<ConstraintHandle>,
}

impl LiftedVars {
    /// Add `c_ii` with squared voltage bounds, one `(c_ij, s_ij)` per
    /// connected pair and the rotated cone `c_ij² + s_ij² ≤ c_ii c_jj`.
    pub fn add(
        b: &mut ProblemBuilder,
        grid: &Grid,
        vbounds: &[(f64, f64)],
        topo: Topology<'_>,
        tag: &str,
    ) -> LiftedVars {
        let c_bus: Vec<VarId> = grid
            .buses
            .iter()
            .zip(vbounds)
            .map(|(bus, &(lo, hi))| b.add_variable(format!("{tag}c_{}", bus.id), lo * lo, hi * hi))
            .collect();
        let keys: std::collections::BTreeSet<(usize, usize)> = topo
            .branches()
            .map(|br| {
                let (i, j) = br.ends(grid);
                (i.min(j), i.max(j))
            })
            .collect();
        let pairs: Vec<(usize, usize)> = keys.into_iter().collect();
        let pair_index: BTreeMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let mut c_pair = Vec::with_capacity(pairs.len());
        let mut s_pair = Vec::with_capacity(pairs.len());
        let mut cones = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let (bi, bj) = (grid.buses[i].id, grid.buses[j].id);
            let c = b.free_variable(format!("{tag}c_{bi}_{bj}"));
            let s = b.free_variable(format!("{tag}s_{bi}_{bj}"));
            cones.push(b.add_rotated_soc(
                format!("{tag}cone {bi}-{bj}"),
                AffineExpr::var(c_bus[i]),
                AffineExpr::var(c_bus[j]),
                vec![AffineExpr::var(c), AffineExpr::var(s)],
            ));
            c_pair.push(c);
            s_pair.push(s);
        }
        LiftedVars {
            c_bus,
            pairs,
            c_pair,
            s_pair,
            pair_index,
            cones,
        }
    }

    /// Flow expressions `(p_f, q_f, p_t, q_t)` of a branch.
    pub fn flow_exprs(&self, grid: &Grid, br: Branch) -> [AffineExpr; 4] {
        let (i, j) = br.ends(grid);
        let k = self.pair_index[&(i.min(j), i.max(j))];
        // s is stored for the ordered pair (min, max).
        let s_sign = if i < j { 1.0 } else { -1.0 };
        let coef = br.two_port(grid).coefficients();
        let vars = [self.c_bus[i], self.c_bus[j], self.c_pair[k], self.s_pair[k]];
        coef.map(|row| {
            let mut e = AffineExpr::new();
            for (col, &v) in vars.iter().enumerate() {
                let w = if col == 3 { row[col] * s_sign } else { row[col] };
                if w != 0.0 {
                    e.add_term(v, w);
                }
            }
            e
        })
    }
}

/// Per-bus accumulation of affine injections.
pub fn bus_flow_sums(grid: &Grid, lv: &LiftedVars, topo: Topology<'_>) -> (Vec<AffineExpr>, Vec<AffineExpr>) {
    let n = grid.buses.len();
    let mut p_out = vec![AffineExpr::new(); n];
    let mut q_out = vec![AffineExpr::new(); n];
    for br in topo.branches() {
        let (i, j) = br.ends(grid);
        let [pf, qf, pt, qt] = lv.flow_exprs(grid, br);
        p_out[i].add_expr(&pf, 1.0);
        q_out[i].add_expr(&qf, 1.0);
        p_out[j].add_expr(&pt, 1.0);
        q_out[j].add_expr(&qt, 1.0);
    }
    (p_out, q_out)
}
