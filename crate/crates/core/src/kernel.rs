//! Gaussian Volterra kernels K(t, s) and their t-derivatives.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::functions::HurstFunction;
use crate::quad::{self, jacobi01, QuadConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Multifractional Brownian motion.
    Mbm,
    /// Multifractional Ornstein-Uhlenbeck process driven by mbm.
    Mou,
    /// Liouville-type multifractional Brownian motion, `(t - s)^(h(t) - 1/2)`.
    Lmbm,
    /// Fractional Brownian motion (constant Hurst exponent).
    Fbm,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KernelKind::Mbm => "mbm",
            KernelKind::Mou => "mou",
            KernelKind::Lmbm => "lmbm",
            KernelKind::Fbm => "fbm",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOptions {
    /// Slack added to the upper Hurst bound in the derivative-bound exponent.
    pub epsilon: f64,
    /// Derivative-bound constant; estimated from a dense grid when `None`.
    pub h2_const: Option<f64>,
    pub quad: QuadConfig,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            epsilon: 0.01,
            h2_const: None,
            quad: QuadConfig::default(),
        }
    }
}

/// Safety factor applied to the empirical derivative-bound constant.
pub const H2_SAFETY: f64 = 1.1;
const H2_ESTIMATE_POINTS: usize = 64;

#[derive(Debug, Clone)]
pub struct VolterraKernel {
    kind: KernelKind,
    hurst: HurstFunction,
    theta: f64,
    horizon: f64,
    epsilon: f64,
    h2_const: OnceLock<f64>,
    quad: QuadConfig,
    breaks: Vec<f64>,
}

/// Outcome of checking `|dK/dt| <= c (t-s)^(alpha-1) (t/s)^beta` on a set of pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Report {
    pub alpha: f64,
    pub beta: f64,
    pub bound: f64,
    pub max_ratio: f64,
    pub argmax: Option<(f64, f64)>,
    pub pass: bool,
    pub violations: Vec<H2Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Violation {
    pub s: f64,
    pub t: f64,
    pub ratio: f64,
}

impl VolterraKernel {
    pub fn new(
        kind: KernelKind,
        hurst: HurstFunction,
        theta: Option<f64>,
        horizon: f64,
        opts: KernelOptions,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", "must be positive and finite"));
        }
        hurst.validate(horizon, "hurst")?;
        opts.quad.validate()?;
        if !(opts.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        let (_, b) = hurst.bounds(horizon);
        if b + opts.epsilon - 0.5 >= 0.5 {
            return Err(Error::param("epsilon", "b + epsilon must stay below 1"));
        }
        if kind == KernelKind::Fbm && !hurst.is_constant() {
            return Err(Error::param("hurst", "fbm needs a constant Hurst exponent"));
        }
        let theta = match (kind, theta) {
            (KernelKind::Mou, Some(th)) if th > 0.0 && th.is_finite() => th,
            (KernelKind::Mou, _) => return Err(Error::param("theta", "mou needs a positive rate")),
            (_, _) => 0.0,
        };
        let h2_const = OnceLock::new();
        if let Some(c) = opts.h2_const {
            if !(c > 0.0) {
                return Err(Error::param("h2_const", "must be positive"));
            }
            let _ = h2_const.set(c);
        }
        let breaks = hurst
            .breakpoints()
            .into_iter()
            .filter(|&x| x > 0.0 && x < horizon)
            .collect();
        Ok(VolterraKernel {
            kind,
            hurst,
            theta,
            horizon,
            epsilon: opts.epsilon,
            h2_const,
            quad: opts.quad,
            breaks,
        })
    }

    pub fn fbm(hurst: f64, horizon: f64) -> Result<Self> {
        Self::new(
            KernelKind::Fbm,
            HurstFunction::constant(hurst),
            None,
            horizon,
            KernelOptions::default(),
        )
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn hurst(&self) -> &HurstFunction {
        &self.hurst
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn quad(&self) -> &QuadConfig {
        &self.quad
    }

    /// Same kernel with a different quadrature configuration.
    pub fn with_quad(&self, quad: QuadConfig) -> Self {
        let mut k = self.clone();
        k.quad = quad;
        k
    }

    /// Knots of the Hurst function inside `(0, T)`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    fn check_time(&self, t: f64, name: &str) -> Result<()> {
        if !(t.is_finite() && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::domain(format!("{name} = {t} lies outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// K(t, s).
    pub fn eval_k(&self, t: f64, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::domain(format!("K(t, s) needs s > 0, got s = {s}")));
        }
        self.check_time(t, "t")?;
        self.check_time(s, "s")?;
        if t <= s {
            return Ok(0.0);
        }
        Ok(self.k_gap(t, s, t - s))
    }

    /// dK/dt (t, s) for `0 < s < t`.
    pub fn eval_dkdt(&self, t: f64, s: f64) -> Result<f64> {
        if !(s > 0.0) || s >= t {
            return Err(Error::domain(format!(
                "dK/dt(t, s) needs 0 < s < t, got t = {t}, s = {s}"
            )));
        }
        self.check_time(t, "t")?;
        Ok(self.dk_gap(t, s, t - s))
    }

    /// K(s + gap, s), with the lag passed separately so tiny lags keep full precision.
    pub fn eval_k_offset(&self, s: f64, gap: f64) -> Result<f64> {
        if !(s > 0.0 && gap >= 0.0) {
            return Err(Error::domain(format!("K needs s > 0 and gap >= 0, got s = {s}, gap = {gap}")));
        }
        self.check_time(s + gap, "t")?;
        if gap == 0.0 {
            return Ok(0.0);
        }
        Ok(self.k_gap(s + gap, s, gap))
    }

    /// dK/dt (s + gap, s) for `gap > 0`.
    pub fn eval_dkdt_offset(&self, s: f64, gap: f64) -> Result<f64> {
        if !(s > 0.0 && gap > 0.0) {
            return Err(Error::domain(format!("dK/dt needs s > 0 and gap > 0, got s = {s}, gap = {gap}")));
        }
        self.check_time(s + gap, "t")?;
        Ok(self.dk_gap(s + gap, s, gap))
    }

    /// K(t, s) with `gap = t - s > 0` supplied exactly by the caller.
    pub(crate) fn k_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        match self.kind {
            KernelKind::Fbm => fbm_k(self.hurst.eval(t) - 0.5, t, s, gap),
            KernelKind::Mbm => mbm_k(self.hurst.eval(t) - 0.5, s, gap, &self.quad),
            KernelKind::Lmbm => gap.powf(self.hurst.eval(t) - 0.5),
            KernelKind::Mou => self.mou_k(t, s, gap),
        }
    }

    /// dK/dt (t, s) with `gap = t - s > 0` supplied exactly by the caller.
    pub(crate) fn dk_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        let p = self.hurst.eval(t) - 0.5;
        match self.kind {
            KernelKind::Fbm => (t / s).powf(p) * gap.powf(p - 1.0),
            KernelKind::Mbm => mbm_dk(p, self.hurst.deriv(t), t, s, gap, &self.quad),
            KernelKind::Lmbm => gap.powf(p) * (self.hurst.deriv(t) * gap.ln() + p / gap),
            KernelKind::Mou => {
                mbm_dk(p, self.hurst.deriv(t), t, s, gap, &self.quad) - self.theta * self.mou_k(t, s, gap)
            }
        }
    }

    fn mou_k(&self, t: f64, r: f64, gap: f64) -> f64 {
        let base = |u: f64, d: f64| mbm_k(self.hurst.eval(u) - 0.5, r, d, &self.quad);
        let th = self.theta;
        let breaks: Vec<f64> = self.breaks.iter().copied().filter(|&x| x > r && x < t).collect();
        let conv = quad::integrate(
            |u, da, db| (-th * db).exp() * base(u, da),
            r,
            r + gap,
            r,
            f64::INFINITY,
            &breaks,
            &self.quad,
        );
        base(t, gap) - th * conv
    }

    /// Exponents (alpha, beta) of the derivative bound.
    pub fn h2_params(&self) -> (f64, f64) {
        let (a, b) = self.hurst.bounds(self.horizon);
        (a - 0.5, b + self.epsilon - 0.5)
    }

    /// Constant c of the derivative bound (declared, or estimated on a dense grid).
    pub fn h2_const(&self) -> f64 {
        *self.h2_const.get_or_init(|| {
            let pairs = h2_grid(self.horizon, H2_ESTIMATE_POINTS);
            self.h2_ratios(&pairs)
                .into_iter()
                .fold(0.0f64, f64::max)
                * H2_SAFETY
        })
    }

    fn h2_ratios(&self, pairs: &[(f64, f64)]) -> Vec<f64> {
        let (alpha, beta) = self.h2_params();
        pairs
            .iter()
            .map(|&(s, t)| {
                let d = self.dk_gap(t, s, t - s).abs();
                d / ((t - s).powf(alpha - 1.0) * (t / s).powf(beta))
            })
            .collect()
    }

    /// Checks the derivative bound over `(s, t)` pairs with `0 < s < t`.
    pub fn verify_h2(&self, pairs: &[(f64, f64)]) -> Result<H2Report> {
        self.verify_h2_with(pairs, self.h2_const())
    }

    /// As [`verify_h2`](Self::verify_h2) against an explicit constant.
    pub fn verify_h2_with(&self, pairs: &[(f64, f64)], bound: f64) -> Result<H2Report> {
        for &(s, t) in pairs {
            if !(s > 0.0 && s < t && t <= self.horizon) {
                return Err(Error::domain(format!(
                    "derivative-bound grid needs 0 < s < t <= T, got (s, t) = ({s}, {t})"
                )));
            }
        }
        let (alpha, beta) = self.h2_params();
        let ratios = self.h2_ratios(pairs);
        let mut max_ratio = 0.0;
        let mut argmax = None;
        let mut violations = Vec::new();
        for (&(s, t), &ratio) in pairs.iter().zip(&ratios) {
            if ratio > max_ratio || ratio.is_nan() {
                max_ratio = ratio;
                argmax = Some((s, t));
            }
            if !(ratio <= bound) {
                violations.push(H2Violation { s, t, ratio });
            }
        }
        Ok(H2Report {
            alpha,
            beta,
            bound,
            max_ratio,
            argmax,
            pass: violations.is_empty(),
            violations,
        })
    }
}

/// All pairs `s < t` from the points `k T / (n + 1)`, `k = 1..=n`.
pub fn h2_grid(horizon: f64, n: usize) -> Vec<(f64, f64)> {
    let pts: Vec<f64> = (1..=n).map(|k| k as f64 * horizon / (n + 1) as f64).collect();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for (i, &s) in pts.iter().enumerate() {
        for &t in &pts[i + 1..] {
            pairs.push((s, t));
        }
    }
    pairs
}

/// `int_0^1 w^(p-1) (c+w)^p dw` for `c = s / (t - s)`.
fn mbm_j(p: f64, c: f64, cfg: &QuadConfig) -> f64 {
    let gamma = p - 1.0;
    let w0 = (2.0 * c).max(cfg.min_width_frac).min(1.0);
    let rule = jacobi01(cfg.jacobi_nodes, gamma);
    let inner: f64 = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(v, w)| w * (c + w0 * v).powf(p))
        .sum::<f64>()
        * w0.powf(p);
    if w0 >= 1.0 {
        return inner;
    }
    inner + quad::panels(&|w: f64| w.powf(gamma) * (c + w).powf(p), w0, 1.0, cfg)
}

fn mbm_k(p: f64, s: f64, gap: f64, cfg: &QuadConfig) -> f64 {
    s.powf(-p) * gap.powf(2.0 * p) * mbm_j(p, s / gap, cfg)
}

fn mbm_dk(p: f64, dh: f64, t: f64, s: f64, gap: f64, cfg: &QuadConfig) -> f64 {
    let boundary = (t / s).powf(p) * gap.powf(p - 1.0);
    if dh == 0.0 {
        return boundary;
    }
    let gamma = p - 1.0;
    let c = s / gap;
    let l0 = 2.0 * gap.ln() - s.ln();
    let f = |w: f64| w.powf(gamma) * (c + w).powf(p) * (l0 + (c + w).ln() + w.ln());
    let w0 = (2.0 * c).max(cfg.min_width_frac).min(1.0);
    let inner = quad::tanh_sinh(|_, d, _| if d > 0.0 { f(d) } else { 0.0 }, 0.0, w0, &cfg.de()).value;
    let rest = if w0 < 1.0 { quad::panels(&f, w0, 1.0, cfg) } else { 0.0 };
    boundary + dh * s.powf(-p) * gap.powf(2.0 * p) * (inner + rest)
}

/// Closed-form fbm kernel through the Gauss hypergeometric function.
fn fbm_k(p: f64, t: f64, s: f64, gap: f64) -> f64 {
    let z = gap / t;
    let f = if z <= 0.5 {
        hyp2f1_series(-p, 1.0, p + 1.0, z)
    } else {
        // connection formula around z = 1; the second series collapses to z^(-p)
        let x = s / t;
        let b = gamma(p + 1.0) * gamma(-2.0 * p) / gamma(-p);
        0.5 * hyp2f1_series(-p, 1.0, 1.0 - 2.0 * p, x) + b * x.powf(2.0 * p) * z.powf(-p)
    };
    s.powf(-p) * gap.powf(p) * t.powf(p) * f / p
}

fn hyp2f1_series(a: f64, b: f64, c: f64, z: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..2000 {
        let nf = n as f64;
        term *= (a + nf) * (b + nf) / ((c + nf) * (nf + 1.0)) * z;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_of_negative_arguments() {
        // Gamma(-1/2) = -2 sqrt(pi)
        assert_relative_eq!(gamma(-0.5), -2.0 * std::f64::consts::PI.sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn hypergeometric_branches_agree_at_the_seam() {
        let p = 0.25;
        let (t, s) = (1.0, 0.5);
        let below = fbm_k(p, t, s * (1.0 + 1e-9), t - s * (1.0 + 1e-9));
        let above = fbm_k(p, t, s * (1.0 - 1e-9), t - s * (1.0 - 1e-9));
        assert_relative_eq!(below, above, max_relative = 1e-8);
    }

    #[test]
    fn mbm_j_small_and_large_c() {
        let cfg = QuadConfig::default();
        // c -> 0: J -> 1/(2p)
        assert_relative_eq!(mbm_j(0.25, 1e-14, &cfg), 2.0, max_relative = 1e-6);
        // c large: J ~ c^p / p
        let c: f64 = 1e8;
        assert_relative_eq!(mbm_j(0.25, c, &cfg), c.powf(0.25) / 0.25, max_relative = 1e-7);
    }
}
