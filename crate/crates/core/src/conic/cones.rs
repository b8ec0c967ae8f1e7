//! Cone arithmetic for the product of a nonnegative orthant and second-order
//! cones: Jordan products, Nesterov–Todd scalings and step-to-boundary.

/// Layout of the slack vector `s` (and the dual `z`): `lp` orthant entries
/// followed by second-order cones of the listed dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeLayout {
    pub lp: usize,
    pub soc: Vec<usize>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.lp + self.soc.iter().sum::<usize>()
    }

    /// Degree of the cone (number of "units" in the barrier).
    pub fn degree(&self) -> usize {
        self.lp + self.soc.len()
    }

    /// Start offsets of each SOC block within the slack vector.
    pub fn soc_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.soc.len());
        let mut off = self.lp;
        for &d in &self.soc {
            out.push(off);
            off += d;
        }
        out
    }

    /// Write the cone identity element into `e`.
    pub fn identity(&self, e: &mut [f64]) {
        e[..self.lp].fill(1.0);
        for (off, &d) in self.soc_offsets().iter().zip(&self.soc) {
            e[*off] = 1.0;
            e[off + 1..off + d].fill(0.0);
        }
    }

    /// Shift `v` into the interior of the cone, the way a standard
    /// initialization does: if `v` is not strictly interior, add `(1 + a) e`
    /// where `a` is the largest "eigenvalue deficit".
    pub fn shift_interior(&self, v: &mut [f64]) {
        let mut deficit = f64::NEG_INFINITY;
        for &x in &v[..self.lp] {
            deficit = deficit.max(-x);
        }
        for (off, &d) in self.soc_offsets().iter().zip(&self.soc) {
            let blk = &v[*off..off + d];
            deficit = deficit.max(norm(&blk[1..]) - blk[0]);
        }
        if deficit >= 0.0 {
            let shift = 1.0 + deficit;
            for x in &mut v[..self.lp] {
                *x += shift;
            }
            for &off in &self.soc_offsets() {
                v[off] += shift;
            }
        }
    }

    /// Largest `alpha` (capped at `cap`) such that `x + alpha * dx` stays in the cone.
    pub fn max_step(&self, x: &[f64], dx: &[f64], cap: f64) -> f64 {
        let mut alpha = cap;
        for i in 0..self.lp {
            if dx[i] < 0.0 {
                alpha = alpha.min(-x[i] / dx[i]);
            }
        }
        for (off, &d) in self.soc_offsets().iter().zip(&self.soc) {
            alpha = alpha.min(soc_max_step(&x[*off..off + d], &dx[*off..off + d]));
        }
        alpha.max(0.0)
    }

    /// Jordan product `x ∘ y`.
    pub fn product(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for i in 0..self.lp {
            out[i] = x[i] * y[i];
        }
        for (off, &d) in self.soc_offsets().iter().zip(&self.soc) {
            let (xs, ys) = (&x[*off..off + d], &y[*off..off + d]);
            out[*off] = dot(xs, ys);
            for k in 1..d {
                out[off + k] = xs[0] * ys[k] + ys[0] * xs[k];
            }
        }
    }

    /// Inverse Jordan product: solve `lambda ∘ u = v` for `u`.
    pub fn inverse_product(&self, lambda: &[f64], v: &[f64], out: &mut [f64]) {
        for i in 0..self.lp {
            out[i] = v[i] / lambda[i];
        }
        for (off, &d) in self.soc_offsets().iter().zip(&self.soc) {
            let (l, w) = (&lambda[*off..off + d], &v[*off..off + d]);
            let det = soc_det(l);
            let u0 = (l[0] * w[0] - dot(&l[1..], &w[1..])) / det;
            out[*off] = u0;
            for k in 1..d {
                out[off + k] = (w[k] - u0 * l[k]) / l[0];
            }
        }
    }
}

/// `x0² - ‖x1‖²` computed as a product of sums to limit cancellation.
pub fn soc_det(x: &[f64]) -> f64 {
    let r = norm(&x[1..]);
    (x[0] - r) * (x[0] + r)
}

fn soc_max_step(x: &[f64], dx: &[f64]) -> f64 {
    // f(a) = (x0 + a dx0)^2 - ‖x1 + a dx1‖^2 = c + 2 b a + q a^2, f(0) > 0.
    let q = dx[0] * dx[0] - dot(&dx[1..], &dx[1..]);
    let b = x[0] * dx[0] - dot(&x[1..], &dx[1..]);
    let c = soc_det(x);
    let mut alpha = f64::INFINITY;
    if q.abs() <= 1e-300 {
        if b < 0.0 {
            alpha = -c / (2.0 * b);
        }
    } else {
        let disc = b * b - q * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let t = -(b + b.signum() * sq);
            let mut roots = [f64::INFINITY; 2];
            if t != 0.0 {
                roots[0] = t / q;
                roots[1] = c / t;
            }
            for r in roots {
                if r > 0.0 && r < alpha {
                    alpha = r;
                }
            }
        }
    }
    // The leading component must not cross zero either.
    if dx[0] < 0.0 {
        alpha = alpha.min(-x[0] / dx[0]);
    }
    alpha
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Nesterov–Todd scaling for the whole cone product.
///
/// For orthant entries `W = diag(sqrt(s/z))`; for each second-order block
/// `W = eta (2 v vᵀ - J)` with `J = diag(1, -1, ..., -1)`. `W` is symmetric
/// and satisfies `W z = W⁻¹ s = lambda`.
#[derive(Debug, Clone)]
pub struct NtScaling {
    pub lp_w: Vec<f64>,
    /// Dense row-major `W` per SOC block.
    pub soc_w: Vec<Vec<f64>>,
    pub soc_winv: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
}

impl NtScaling {
    pub fn compute(layout: &ConeLayout, s: &[f64], z: &[f64]) -> Self {
        let lp_w: Vec<f64> = (0..layout.lp).map(|i| (s[i] / z[i]).sqrt()).collect();
        let mut soc_w = Vec::with_capacity(layout.soc.len());
        let mut soc_winv = Vec::with_capacity(layout.soc.len());
        for (off, &d) in layout.soc_offsets().iter().zip(&layout.soc) {
            let (sb, zb) = (&s[*off..off + d], &z[*off..off + d]);
            let s_norm = soc_det(sb).max(f64::MIN_POSITIVE).sqrt();
            let z_norm = soc_det(zb).max(f64::MIN_POSITIVE).sqrt();
            let sbar: Vec<f64> = sb.iter().map(|v| v / s_norm).collect();
            let zbar: Vec<f64> = zb.iter().map(|v| v / z_norm).collect();
            let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
            let mut wbar = vec![0.0; d];
            wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
            for k in 1..d {
                wbar[k] = (sbar[k] - zbar[k]) / (2.0 * gamma);
            }
            // v = (w̄ + e) / sqrt(2 (w̄₀ + 1)), so that 2 v vᵀ - J is the scaling.
            let vs = (2.0 * (wbar[0] + 1.0)).sqrt();
            let mut w = wbar;
            w[0] += 1.0;
            w.iter_mut().for_each(|x| *x /= vs);
            let eta = (s_norm / z_norm).sqrt();
            let mut wm = vec![0.0; d * d];
            let mut wi = vec![0.0; d * d];
            for r in 0..d {
                for c in 0..d {
                    let j = if r == c {
                        if r == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    } else {
                        0.0
                    };
                    wm[r * d + c] = eta * (2.0 * w[r] * w[c] - j);
                    // W⁻¹ = (1/eta) (2 J w wᵀ J - J)
                    let jr = if r == 0 { 1.0 } else { -1.0 };
                    let jc = if c == 0 { 1.0 } else { -1.0 };
                    wi[r * d + c] = (2.0 * jr * w[r] * jc * w[c] - j) / eta;
                }
            }
            soc_w.push(wm);
            soc_winv.push(wi);
        }
        let mut scaling = NtScaling {
            lp_w,
            soc_w,
            soc_winv,
            lambda: vec![0.0; layout.dim()],
        };
        let mut lambda = vec![0.0; layout.dim()];
        scaling.apply_w(layout, z, &mut lambda);
        scaling.lambda = lambda;
        scaling
    }

    pub fn apply_w(&self, layout: &ConeLayout, v: &[f64], out: &mut [f64]) {
        for i in 0..layout.lp {
            out[i] = self.lp_w[i] * v[i];
        }
        for (c, (off, &d)) in layout.soc_offsets().iter().zip(&layout.soc).enumerate() {
            dense_mul(&self.soc_w[c], d, &v[*off..off + d], &mut out[*off..off + d]);
        }
    }

    pub fn apply_winv(&self, layout: &ConeLayout, v: &[f64], out: &mut [f64]) {
        for i in 0..layout.lp {
            out[i] = v[i] / self.lp_w[i];
        }
        for (c, (off, &d)) in layout.soc_offsets().iter().zip(&layout.soc).enumerate() {
            dense_mul(&self.soc_winv[c], d, &v[*off..off + d], &mut out[*off..off + d]);
        }
    }

    /// `WᵀW` restricted to SOC block `c`, row-major.
    pub fn soc_wtw(&self, c: usize, d: usize) -> Vec<f64> {
        let w = &self.soc_w[c];
        let mut out = vec![0.0; d * d];
        for r in 0..d {
            for col in 0..d {
                out[r * d + col] = (0..d).map(|k| w[k * d + r] * w[k * d + col]).sum();
            }
        }
        out
    }
}

fn dense_mul(m: &[f64], d: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..d {
        out[r] = (0..d).map(|c| m[r * d + c] * v[c]).sum();
    }
}
