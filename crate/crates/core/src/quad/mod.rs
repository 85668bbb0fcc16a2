//! Quadrature toolkit: Gauss rules, tanh-sinh, graded panels, adaptive Simpson.

mod gauss;
mod tanh_sinh;

pub use gauss::{hermite_rule, jacobi_rule, legendre_rule, Rule};
pub(crate) use gauss::{jacobi01, legendre, normal};
pub use tanh_sinh::{integrate as tanh_sinh, DeOptions, Estimate};

use serde::{Deserialize, Serialize};

/// Accuracy controls shared by every nested integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Gauss-Legendre nodes on each regular panel.
    pub panel_nodes: usize,
    /// Gauss-Jacobi nodes on the innermost weighted panel.
    pub jacobi_nodes: usize,
    /// Geometric growth factor of graded panels.
    pub grade_ratio: f64,
    /// Smallest innermost panel width as a fraction of the half interval.
    pub min_width_frac: f64,
    pub max_level: u32,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            rel_tol: 1e-7,
            abs_tol: 1e-12,
            panel_nodes: 20,
            jacobi_nodes: 20,
            grade_ratio: 6.0,
            min_width_frac: 1e-24,
            max_level: 7,
        }
    }
}

impl QuadConfig {
    /// The same scheme with twice the resolution everywhere; used for self-checks.
    pub fn refined(&self) -> Self {
        QuadConfig {
            rel_tol: self.rel_tol * 1e-3,
            abs_tol: self.abs_tol * 1e-3,
            panel_nodes: self.panel_nodes * 2,
            jacobi_nodes: self.jacobi_nodes * 2,
            grade_ratio: self.grade_ratio.sqrt().max(1.5),
            min_width_frac: self.min_width_frac * 1e-6,
            max_level: (self.max_level + 1).min(8),
        }
    }

    pub(crate) fn de(&self) -> DeOptions {
        DeOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol * 1e-3,
            min_level: 3,
            max_level: self.max_level,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("min_width_frac", self.min_width_frac),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(crate::Error::param(name, "must be positive and finite"));
            }
        }
        if self.panel_nodes < 2 || self.jacobi_nodes < 4 {
            return Err(crate::Error::param(
                "panel_nodes/jacobi_nodes",
                "need at least 2 panel nodes and 4 Jacobi nodes",
            ));
        }
        if !(self.grade_ratio > 1.0) {
            return Err(crate::Error::param("grade_ratio", "must exceed 1"));
        }
        if self.max_level == 0 {
            return Err(crate::Error::param("max_level", "must be at least 1"));
        }
        Ok(())
    }
}

/// Integrates `f(x, x - a, b - x)` over `[a, b]`.
///
/// `near_a` and `near_b` give the distance from each endpoint to the closest
/// singularity of `f` outside the interval (`f64::INFINITY` if none). The
/// endpoints themselves may be integrable singularities. Interior breakpoints
/// split the range into pieces whose ends are treated as kinks.
pub fn integrate<F>(f: F, a: f64, b: f64, near_a: f64, near_b: f64, breaks: &[f64], cfg: &QuadConfig) -> f64
where
    F: Fn(f64, f64, f64) -> f64,
{
    if !(b > a) {
        return 0.0;
    }
    let len = b - a;
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&c| c - a > 1e-12 * len && b - c > 1e-12 * len)
        .collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);
    let last = edges.len() - 2;
    let mut total = 0.0;
    for i in 0..=last {
        let (p, q) = (edges[i], edges[i + 1]);
        let np = if i == 0 { near_a } else { f64::INFINITY };
        let nq = if i == last { near_b } else { f64::INFINITY };
        total += piece(&f, a, b, p, q, np, nq, cfg);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn piece<F>(f: &F, a: f64, b: f64, p: f64, q: f64, np: f64, nq: f64, cfg: &QuadConfig) -> f64
where
    F: Fn(f64, f64, f64) -> f64,
{
    // distances to the original endpoints from an offset measured at p or at q
    let from_p = |off: f64| {
        let da = (p - a) + off;
        f(p + off, da, (b - p) - off)
    };
    let from_q = |off: f64| {
        let db = (b - q) + off;
        f(q - off, (q - a) - off, db)
    };
    if np.is_infinite() && nq.is_infinite() {
        let (pa, qb) = (p - a, b - q);
        return tanh_sinh(
            |x, d1, d2| {
                let (da, db) = (pa + d1, qb + d2);
                if da <= 0.0 || db <= 0.0 {
                    0.0
                } else {
                    f(x, da, db)
                }
            },
            p,
            q,
            &cfg.de(),
        )
        .value;
    }
    let half = 0.5 * (q - p);
    graded(&from_p, half, np, cfg) + graded(&from_q, half, nq, cfg)
}

/// Integrates `g(off)` for `off` in `[0, len]`, grading panels toward `off = 0`.
pub(crate) fn graded<G: Fn(f64) -> f64>(g: &G, len: f64, near: f64, cfg: &QuadConfig) -> f64 {
    if !(len > 0.0) {
        return 0.0;
    }
    let w0 = (2.0 * near).max(len * cfg.min_width_frac).min(len);
    let de = cfg.de();
    let inner = tanh_sinh(|_, d, _| if d <= 0.0 { 0.0 } else { g(d) }, 0.0, w0, &de).value;
    inner + panels(g, w0, len, cfg)
}

/// Gauss-Legendre on geometrically growing panels covering `[start, len]`.
pub(crate) fn panels<G: Fn(f64) -> f64>(g: &G, start: f64, len: f64, cfg: &QuadConfig) -> f64 {
    let rule = legendre(cfg.panel_nodes);
    let mut lo = start;
    let mut total = 0.0;
    while lo < len {
        let hi = (lo * cfg.grade_ratio).min(len);
        // avoid a sliver panel at the end
        let hi = if len - hi < 0.25 * (hi - lo) { len } else { hi };
        let c = 0.5 * (hi + lo);
        let r = 0.5 * (hi - lo);
        let mut s = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            s += w * g(c + r * x);
        }
        total += r * s;
        lo = hi;
    }
    total
}

/// Fixed-order Gauss-Legendre over `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let rule = legendre(n);
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    r * rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| w * f(c + r * x))
        .sum::<f64>()
}

/// Adaptive Simpson with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
