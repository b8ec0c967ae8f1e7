//! Homogeneous self-dual primal-dual interior-point method with
//! Nesterov–Todd scaling and a Mehrotra predictor–corrector.
//!
//! The embedding works on
//!
//! ```text
//! minimize cᵀx  s.t.  A x = b,  G x + s = h,  s ∈ K
//! ```
//!
//! with dual `A ᵀy + Gᵀz + c = 0, z ∈ K`. Infeasibility and unboundedness
//! are reported from the standard certificates once `κ` dominates `τ`.

use super::cones::{dot, norm, ConeLayout, NtScaling};
use super::ldl::SymbolicLdl;
use super::{ConicBackend, ConicProblem, ConicSolution, KktResiduals, SolveStatus, SolverSettings, VarId};

/// The reference solver. Stateless; every call is a cold start.
#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint;

impl ConicBackend for InteriorPoint {
    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution {
        let std = StandardForm::from_problem(problem);
        let raw = hsd(&std, settings);
        std.recover(problem, raw)
    }
}

type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy)]
enum EqOrigin {
    Row(usize),
    Fixed(usize),
}

#[derive(Debug, Clone, Copy)]
enum LpOrigin {
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

/// Scaled standard-form data.
struct StandardForm {
    n: usize,
    c: Vec<f64>,
    c_scale: f64,
    obj_const: f64,
    a: Vec<SparseRow>,
    b: Vec<f64>,
    a_scale: Vec<f64>,
    eq_origin: Vec<EqOrigin>,
    g: Vec<SparseRow>,
    h: Vec<f64>,
    g_scale: Vec<f64>,
    lp_origin: Vec<LpOrigin>,
    layout: ConeLayout,
}

fn row_inf_norm(row: &SparseRow) -> f64 {
    row.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()))
}

impl StandardForm {
    fn from_problem(p: &ConicProblem) -> Self {
        let n = p.vars.len();
        let mut c = vec![0.0; n];
        for &(v, coef) in &p.objective.terms {
            c[v.0] += coef;
        }
        let c_scale = c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        c.iter_mut().for_each(|v| *v /= c_scale);

        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut a_scale = Vec::new();
        let mut eq_origin = Vec::new();
        for (i, r) in p.eqs.iter().enumerate() {
            let row: SparseRow = r.expr.terms.iter().map(|&(v, c)| (v.0, c)).collect();
            let sc = row_inf_norm(&row).max(1e-12);
            a.push(row.into_iter().map(|(j, v)| (j, v / sc)).collect());
            b.push(-r.expr.constant / sc);
            a_scale.push(sc);
            eq_origin.push(EqOrigin::Row(i));
        }
        for (j, v) in p.vars.iter().enumerate() {
            if v.lower == v.upper {
                a.push(vec![(j, 1.0)]);
                b.push(v.lower);
                a_scale.push(1.0);
                eq_origin.push(EqOrigin::Fixed(j));
            }
        }

        let mut g = Vec::new();
        let mut h = Vec::new();
        let mut g_scale = Vec::new();
        let mut lp_origin = Vec::new();
        for (i, r) in p.ineqs.iter().enumerate() {
            let row: SparseRow = r.expr.terms.iter().map(|&(v, c)| (v.0, c)).collect();
            let sc = row_inf_norm(&row).max(1e-12);
            g.push(row.into_iter().map(|(j, v)| (j, v / sc)).collect());
            h.push(-r.expr.constant / sc);
            g_scale.push(sc);
            lp_origin.push(LpOrigin::Ineq(i));
        }
        for (j, v) in p.vars.iter().enumerate() {
            if v.lower == v.upper {
                continue;
            }
            if v.lower.is_finite() {
                g.push(vec![(j, -1.0)]);
                h.push(-v.lower);
                g_scale.push(1.0);
                lp_origin.push(LpOrigin::Lower(j));
            }
            if v.upper.is_finite() {
                g.push(vec![(j, 1.0)]);
                h.push(v.upper);
                g_scale.push(1.0);
                lp_origin.push(LpOrigin::Upper(j));
            }
        }
        let lp = g.len();
        let mut soc = Vec::new();
        for cone in &p.socs {
            // s = (t(x), v(x)) = h - G x, scaled uniformly per block.
            let mut rows: Vec<SparseRow> = Vec::new();
            let mut rhs = Vec::new();
            for e in std::iter::once(&cone.scalar).chain(cone.vector.iter()) {
                rows.push(e.terms.iter().map(|&(v, c)| (v.0, -c)).collect());
                rhs.push(e.constant);
            }
            let sc = rows
                .iter()
                .map(row_inf_norm)
                .fold(0.0f64, f64::max)
                .max(1e-12);
            for (row, r) in rows.into_iter().zip(rhs) {
                g.push(row.into_iter().map(|(j, v)| (j, v / sc)).collect());
                h.push(r / sc);
                g_scale.push(sc);
            }
            soc.push(cone.vector.len() + 1);
        }
        StandardForm {
            n,
            c,
            c_scale,
            obj_const: p.objective.constant,
            a,
            b,
            a_scale,
            eq_origin,
            g,
            h,
            g_scale,
            lp_origin,
            layout: ConeLayout { lp, soc },
        }
    }

    fn recover(&self, p: &ConicProblem, raw: RawResult) -> ConicSolution {
        let n = self.n;
        let mut dual_eq = vec![0.0; p.eqs.len()];
        let mut dual_ineq = vec![0.0; p.ineqs.len()];
        let mut dual_lower = vec![0.0; n];
        let mut dual_upper = vec![0.0; n];
        // Fixed variables: split the equality multiplier onto the bound
        // that it acts as.
        for (k, origin) in self.eq_origin.iter().enumerate() {
            let val = raw.y[k] * self.c_scale / self.a_scale[k];
            match *origin {
                EqOrigin::Row(i) => dual_eq[i] = -val,
                EqOrigin::Fixed(j) => {
                    if val < 0.0 {
                        dual_lower[j] = -val;
                    } else {
                        dual_upper[j] = val;
                    }
                }
            }
        }
        for (k, origin) in self.lp_origin.iter().enumerate() {
            let val = raw.z[k] * self.c_scale / self.g_scale[k];
            match *origin {
                LpOrigin::Ineq(i) => dual_ineq[i] = val,
                LpOrigin::Lower(j) => dual_lower[j] = val,
                LpOrigin::Upper(j) => dual_upper[j] = val,
            }
        }
        let mut dual_soc = Vec::with_capacity(self.layout.soc.len());
        for (off, &d) in self.layout.soc_offsets().iter().zip(&self.layout.soc) {
            dual_soc.push(
                (0..d)
                    .map(|k| raw.z[off + k] * self.c_scale / self.g_scale[off + k])
                    .collect(),
            );
        }
        let mut primal = raw.x;
        if matches!(raw.status, SolveStatus::Optimal | SolveStatus::IterationLimit) {
            // Simple bounds are met only up to the primal residual; snap the
            // values back inside them.
            for (j, x) in primal.iter_mut().enumerate() {
                let (lo, hi) = p.bounds(VarId(j));
                *x = x.max(lo).min(hi);
            }
        }
        ConicSolution {
            status: raw.status,
            objective_value: raw.pcost * self.c_scale + self.obj_const,
            dual_objective: raw.dcost * self.c_scale + self.obj_const,
            primal,
            dual_eq,
            dual_ineq,
            dual_soc,
            dual_lower,
            dual_upper,
            kkt: raw.kkt,
            iterations: raw.iterations,
        }
    }
}

struct RawResult {
    status: SolveStatus,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    pcost: f64,
    dcost: f64,
    kkt: KktResiduals,
    iterations: usize,
}

fn mul(rows: &[SparseRow], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(rows) {
        *o = row.iter().map(|&(j, v)| v * x[j]).sum();
    }
}

fn mul_t_add(rows: &[SparseRow], v: &[f64], out: &mut [f64]) {
    for (row, &vi) in rows.iter().zip(v) {
        if vi != 0.0 {
            for &(j, a) in row {
                out[j] += a * vi;
            }
        }
    }
}

const STATIC_REG: f64 = 1e-9;
const DYNAMIC_EPS: f64 = 1e-13;
const DYNAMIC_DELTA: f64 = 1e-8;
const STEP_FRACTION: f64 = 0.99;
const MAX_REFINE: usize = 10;

/// KKT system `[δI Aᵀ Gᵀ; A -δI 0; G 0 -WᵀW]` with fixed sparsity.
struct Kkt<'a> {
    sf: &'a StandardForm,
    sym: SymbolicLdl,
    values: Vec<f64>,
    /// Start of the z-block diagonal values inside `values`.
    zblock_start: usize,
    signs: Vec<f64>,
    slots: Vec<f64>,
    work: Vec<f64>,
}

impl<'a> Kkt<'a> {
    fn new(sf: &'a StandardForm) -> Self {
        let (n, p, m) = (sf.n, sf.a.len(), sf.layout.dim());
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            entries.push((j, j));
            values.push(STATIC_REG);
        }
        for (i, row) in sf.a.iter().enumerate() {
            for &(j, v) in row {
                entries.push((j, n + i));
                values.push(v);
            }
            entries.push((n + i, n + i));
            values.push(-STATIC_REG);
        }
        for (r, row) in sf.g.iter().enumerate() {
            for &(j, v) in row {
                entries.push((j, n + p + r));
                values.push(v);
            }
        }
        let zblock_start = entries.len();
        let base = n + p;
        for r in 0..sf.layout.lp {
            entries.push((base + r, base + r));
            values.push(-1.0);
        }
        for (off, &d) in sf.layout.soc_offsets().iter().zip(&sf.layout.soc) {
            for c in 0..d {
                for r in 0..=c {
                    entries.push((base + off + r, base + off + c));
                    values.push(if r == c { -1.0 } else { 0.0 });
                }
            }
        }
        let sym = SymbolicLdl::analyse(n + p + m, &entries);
        let mut signs = vec![-1.0; n + p + m];
        signs[..n].fill(1.0);
        Kkt {
            sf,
            sym,
            values,
            zblock_start,
            signs,
            slots: Vec::new(),
            work: Vec::new(),
        }
    }

    /// Refill the z-block with `-WᵀW` (or `-I` when `scaling` is `None`).
    fn set_scaling(&mut self, scaling: Option<&NtScaling>) {
        let layout = &self.sf.layout;
        let mut k = self.zblock_start;
        for r in 0..layout.lp {
            self.values[k] = match scaling {
                Some(w) => -(w.lp_w[r] * w.lp_w[r]),
                None => -1.0,
            };
            k += 1;
        }
        for (c, &d) in layout.soc.iter().enumerate() {
            let wtw = scaling.map(|w| w.soc_wtw(c, d));
            for col in 0..d {
                for r in 0..=col {
                    self.values[k] = match &wtw {
                        Some(m) => -m[r * d + col],
                        None => {
                            if r == col {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    k += 1;
                }
            }
        }
    }

    fn factor(&mut self) -> super::ldl::NumericLdl {
        self.sym.gather(&self.values, &mut self.slots);
        let num = self
            .sym
            .factor(&self.slots, &self.signs, DYNAMIC_EPS, DYNAMIC_DELTA);
        if num.regularized > 0 {
            log::trace!("{} pivots regularized", num.regularized);
        }
        num
    }

    /// Unregularized product with the KKT matrix.
    fn apply(&self, scaling: Option<&NtScaling>, u: &[f64], out: &mut [f64]) {
        let sf = self.sf;
        let (n, p, m) = (sf.n, sf.a.len(), sf.layout.dim());
        let (ux, rest) = u.split_at(n);
        let (uy, uz) = rest.split_at(p);
        out.fill(0.0);
        {
            let (ox, rest) = out.split_at_mut(n);
            let (oy, oz) = rest.split_at_mut(p);
            mul_t_add(&sf.a, uy, ox);
            mul_t_add(&sf.g, uz, ox);
            mul(&sf.a, ux, oy);
            mul(&sf.g, ux, oz);
            let mut wz = vec![0.0; m];
            let mut wtwz = vec![0.0; m];
            match scaling {
                Some(w) => {
                    w.apply_w(&sf.layout, uz, &mut wz);
                    w.apply_w(&sf.layout, &wz, &mut wtwz);
                }
                None => wtwz.copy_from_slice(uz),
            }
            for (o, v) in oz.iter_mut().zip(&wtwz) {
                *o -= v;
            }
        }
    }

    fn solve(
        &mut self,
        num: &super::ldl::NumericLdl,
        scaling: Option<&NtScaling>,
        rhs: &[f64],
    ) -> Vec<f64> {
        let dim = rhs.len();
        let mut sol = rhs.to_vec();
        let mut work = std::mem::take(&mut self.work);
        self.sym.solve(num, &mut sol, &mut work);
        let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut resid = vec![0.0; dim];
        let mut prev = f64::INFINITY;
        for _ in 0..MAX_REFINE {
            self.apply(scaling, &sol, &mut resid);
            for (r, b) in resid.iter_mut().zip(rhs) {
                *r = b - *r;
            }
            let err = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if err <= 1e-14 * (1.0 + rhs_norm) || err >= prev * 0.9 {
                break;
            }
            prev = err;
            self.sym.solve(num, &mut resid, &mut work);
            for (s, d) in sol.iter_mut().zip(&resid) {
                *s += d;
            }
        }
        self.work = work;
        sol
    }
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: Vec<f64>,
    rtau: f64,
    cx: f64,
    by_hz: f64,
    aty_gtz_norm: f64,
    ax_norm: f64,
    gxs_norm: f64,
}

fn residuals(sf: &StandardForm, it: &Iterate) -> Residuals {
    let (n, p, m) = (sf.n, sf.a.len(), sf.layout.dim());
    let mut aty_gtz = vec![0.0; n];
    mul_t_add(&sf.a, &it.y, &mut aty_gtz);
    mul_t_add(&sf.g, &it.z, &mut aty_gtz);
    let mut ax = vec![0.0; p];
    mul(&sf.a, &it.x, &mut ax);
    let mut gx = vec![0.0; m];
    mul(&sf.g, &it.x, &mut gx);
    let gxs: Vec<f64> = gx.iter().zip(&it.s).map(|(a, b)| a + b).collect();

    let rx: Vec<f64> = (0..n).map(|j| aty_gtz[j] + sf.c[j] * it.tau).collect();
    let ry: Vec<f64> = (0..p).map(|i| ax[i] - sf.b[i] * it.tau).collect();
    let rz: Vec<f64> = (0..m).map(|i| gxs[i] - sf.h[i] * it.tau).collect();
    let cx = dot(&sf.c, &it.x);
    let by_hz = dot(&sf.b, &it.y) + dot(&sf.h, &it.z);
    Residuals {
        rtau: it.kappa + cx + by_hz,
        rx,
        ry,
        rz,
        cx,
        by_hz,
        aty_gtz_norm: norm(&aty_gtz),
        ax_norm: norm(&ax),
        gxs_norm: norm(&gxs),
    }
}

/// Iterations without halving the best residual before giving up.
const STALL_ITERS: usize = 15;

fn reduced_tolerance(tol: f64) -> f64 {
    (tol * 1e3).min(1e-4).max(tol)
}

fn hsd(sf: &StandardForm, settings: &SolverSettings) -> RawResult {
    let (n, p, m) = (sf.n, sf.a.len(), sf.layout.dim());
    let layout = &sf.layout;
    let tol = settings.tol;
    let mut kkt = Kkt::new(sf);

    // Initial point from two least-squares style solves with W = I.
    kkt.set_scaling(None);
    let num = kkt.factor();
    let mut rhs = vec![0.0; n + p + m];
    rhs[n..n + p].copy_from_slice(&sf.b);
    rhs[n + p..].copy_from_slice(&sf.h);
    let primal = kkt.solve(&num, None, &rhs);
    let mut s: Vec<f64> = primal[n + p..].iter().map(|v| -v).collect();
    layout.shift_interior(&mut s);
    rhs.fill(0.0);
    for j in 0..n {
        rhs[j] = -sf.c[j];
    }
    let dual = kkt.solve(&num, None, &rhs);
    let mut z = dual[n + p..].to_vec();
    layout.shift_interior(&mut z);

    let mut it = Iterate {
        x: primal[..n].to_vec(),
        y: dual[n..n + p].to_vec(),
        z,
        s,
        tau: 1.0,
        kappa: 1.0,
    };

    let b_norm = norm(&sf.b);
    let h_norm = norm(&sf.h);
    let c_norm = norm(&sf.c);
    let degree = layout.degree() as f64 + 1.0;

    let mut best: Option<(f64, RawResult)> = None;
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;
    let mut last_progress = 0;

    let mut rhs1 = vec![0.0; n + p + m];
    for j in 0..n {
        rhs1[j] = -sf.c[j];
    }
    rhs1[n..n + p].copy_from_slice(&sf.b);
    rhs1[n + p..].copy_from_slice(&sf.h);

    let mut tmp = vec![0.0; m];
    let mut tmp2 = vec![0.0; m];
    let mut e = vec![0.0; m];
    layout.identity(&mut e);

    for iter in 0..=settings.max_iters {
        iterations = iter;
        let r = residuals(sf, &it);
        let tau = it.tau;
        let pres = (norm(&r.ry) / (1.0 + b_norm)).max(norm(&r.rz) / (1.0 + h_norm)) / tau;
        let dres = norm(&r.rx) / (1.0 + c_norm) / tau;
        let pcost = r.cx / tau;
        let dcost = -r.by_hz / tau;
        let gap = (pcost - dcost).abs() / 1f64.max(pcost.abs().min(dcost.abs()));
        let kkt_res = KktResiduals {
            primal: pres,
            dual: dres,
            gap,
        };
        let snapshot = |status| RawResult {
            status,
            x: it.x.iter().map(|v| v / tau).collect(),
            y: it.y.iter().map(|v| v / tau).collect(),
            z: it.z.iter().map(|v| v / tau).collect(),
            pcost,
            dcost,
            kkt: kkt_res,
            iterations: iter,
        };

        if pres <= tol && dres <= tol && gap <= tol {
            status = SolveStatus::Optimal;
            best = Some((0.0, snapshot(status)));
            break;
        }
        // Certificates of infeasibility.
        if it.kappa > tau {
            if r.by_hz < 0.0 && r.aty_gtz_norm / (-r.by_hz) <= tol {
                status = SolveStatus::Infeasible;
                let scale = -r.by_hz;
                best = Some((
                    0.0,
                    RawResult {
                        status,
                        x: it.x.clone(),
                        y: it.y.iter().map(|v| v / scale).collect(),
                        z: it.z.iter().map(|v| v / scale).collect(),
                        pcost: f64::NAN,
                        dcost: f64::NAN,
                        kkt: kkt_res,
                        iterations: iter,
                    },
                ));
                break;
            }
            if r.cx < 0.0 && r.ax_norm.max(r.gxs_norm) / (-r.cx) <= tol {
                status = SolveStatus::Unbounded;
                let scale = -r.cx;
                best = Some((
                    0.0,
                    RawResult {
                        status,
                        x: it.x.iter().map(|v| v / scale).collect(),
                        y: it.y.clone(),
                        z: it.z.clone(),
                        pcost: f64::NEG_INFINITY,
                        dcost: f64::NAN,
                        kkt: kkt_res,
                        iterations: iter,
                    },
                ));
                break;
            }
        }
        log::debug!(
            "iter {iter}: pcost {pcost:.9e} dcost {dcost:.9e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {tau:.2e} kappa {:.2e}",
            it.kappa
        );
        let merit = pres.max(dres).max(gap);
        if merit.is_finite() && best.as_ref().is_none_or(|(b, _)| merit < *b) {
            if best.as_ref().is_none_or(|(b, _)| merit < 0.5 * *b) {
                last_progress = iter;
            }
            best = Some((merit, snapshot(SolveStatus::IterationLimit)));
        }
        if iter == settings.max_iters || iter - last_progress >= STALL_ITERS {
            break;
        }

        let mu = (dot(&it.s, &it.z) + tau * it.kappa) / degree;
        let w = NtScaling::compute(layout, &it.s, &it.z);
        kkt.set_scaling(Some(&w));
        let num = kkt.factor();
        let sol1 = kkt.solve(&num, Some(&w), &rhs1);
        let (x1, rest) = sol1.split_at(n);
        let (y1, z1) = rest.split_at(p);
        let denom1 = dot(&sf.c, x1) + dot(&sf.b, y1) + dot(&sf.h, z1) - it.kappa / tau;

        // Solve for one direction given the complementarity right-hand sides.
        let mut direction = |eta: f64, ds: &[f64], dkappa: f64| {
            let mut rhs2 = vec![0.0; n + p + m];
            for j in 0..n {
                rhs2[j] = -eta * r.rx[j];
            }
            for i in 0..p {
                rhs2[n + i] = -eta * r.ry[i];
            }
            let mut inv = vec![0.0; m];
            layout.inverse_product(&w.lambda, ds, &mut inv);
            let mut w_inv = vec![0.0; m];
            w.apply_w(layout, &inv, &mut w_inv);
            for i in 0..m {
                rhs2[n + p + i] = -eta * r.rz[i] - w_inv[i];
            }
            let sol2 = kkt.solve(&num, Some(&w), &rhs2);
            let (x2, rest) = sol2.split_at(n);
            let (y2, z2) = rest.split_at(p);
            let dtau_num = -eta * r.rtau - dkappa / tau
                - (dot(&sf.c, x2) + dot(&sf.b, y2) + dot(&sf.h, z2));
            let dtau = dtau_num / denom1;
            let dx: Vec<f64> = (0..n).map(|j| x2[j] + dtau * x1[j]).collect();
            let dy: Vec<f64> = (0..p).map(|i| y2[i] + dtau * y1[i]).collect();
            let dz: Vec<f64> = (0..m).map(|i| z2[i] + dtau * z1[i]).collect();
            // Δs = W (λ \ d_s - W Δz)
            let mut wdz = vec![0.0; m];
            w.apply_w(layout, &dz, &mut wdz);
            let diff: Vec<f64> = (0..m).map(|i| inv[i] - wdz[i]).collect();
            let mut ds_out = vec![0.0; m];
            w.apply_w(layout, &diff, &mut ds_out);
            let dkap = (dkappa - it.kappa * dtau) / tau;
            (dx, dy, dz, ds_out, dtau, dkap)
        };

        let step_len = |dz: &[f64], ds: &[f64], dtau: f64, dkap: f64, cap: f64| {
            let mut a = layout.max_step(&it.s, ds, cap).min(layout.max_step(&it.z, dz, cap));
            if dtau < 0.0 {
                a = a.min(-tau / dtau);
            }
            if dkap < 0.0 {
                a = a.min(-it.kappa / dkap);
            }
            a
        };

        // Affine (predictor) direction.
        layout.product(&w.lambda, &w.lambda, &mut tmp);
        let ds_aff: Vec<f64> = tmp.iter().map(|v| -v).collect();
        let (_, _, dz_a, ds_a, dtau_a, dkap_a) = direction(1.0, &ds_aff, -it.kappa * tau);
        let alpha_aff = step_len(&dz_a, &ds_a, dtau_a, dkap_a, 1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(1e-6, 1.0);

        // Combined direction with second-order correction.
        w.apply_winv(layout, &ds_a, &mut tmp);
        let mut wdz_a = vec![0.0; m];
        w.apply_w(layout, &dz_a, &mut wdz_a);
        layout.product(&tmp, &wdz_a, &mut tmp2);
        let mut lam2 = vec![0.0; m];
        layout.product(&w.lambda, &w.lambda, &mut lam2);
        let ds_comb: Vec<f64> = (0..m)
            .map(|i| -lam2[i] - tmp2[i] + sigma * mu * e[i])
            .collect();
        let dkappa_comb = -it.kappa * tau - dkap_a * dtau_a + sigma * mu;
        let (dx, dy, dz, ds, dtau, dkap) = direction(1.0 - sigma, &ds_comb, dkappa_comb);
        let alpha = (STEP_FRACTION * step_len(&dz, &ds, dtau, dkap, f64::INFINITY)).min(1.0);
        if !(alpha > 1e-12) {
            break;
        }
        for j in 0..n {
            it.x[j] += alpha * dx[j];
        }
        for i in 0..p {
            it.y[i] += alpha * dy[i];
        }
        for i in 0..m {
            it.z[i] += alpha * dz[i];
            it.s[i] += alpha * ds[i];
        }
        it.tau += alpha * dtau;
        it.kappa += alpha * dkap;
    }

    // Stalled just short of the target: accept the best iterate when it
    // meets a reduced tolerance.
    if status == SolveStatus::IterationLimit {
        if let Some((merit, _)) = &best {
            if *merit <= reduced_tolerance(tol) {
                log::debug!("accepting iterate at reduced accuracy {merit:.2e}");
                status = SolveStatus::Optimal;
            }
        }
    }
    let mut out = best.map(|(_, r)| r).unwrap_or_else(|| RawResult {
        status: SolveStatus::IterationLimit,
        x: vec![0.0; n],
        y: vec![0.0; p],
        z: vec![0.0; m],
        pcost: f64::NAN,
        dcost: f64::NAN,
        kkt: KktResiduals::default(),
        iterations,
    });
    out.status = status;
    out.iterations = iterations;
    out
}
