//! The linear BSDE problem: driver components, coefficients and terminal payoff.

use serde::Serialize;

use crate::covariance::var_n;
use crate::functions::{TerminalFn, TimeFn};
use crate::kernel::VolterraKernel;
use crate::quad::adaptive_simpson;
use crate::{Error, Result};

/// Tolerance for the one-dimensional time integrals of the coefficients.
pub const TIME_TOL: f64 = 1e-10;

/// Largest dimension handled by the tensor Gauss-Hermite solver.
pub const MAX_DIM: usize = 4;

/// One driver `N^j_t = b^j_t + int_0^t sigma^j_s dX^j_s` with its coefficient `A2^j`.
#[derive(Debug, Clone)]
pub struct Component {
    pub kernel: VolterraKernel,
    pub drift: TimeFn,
    pub sigma: TimeFn,
    pub a2: TimeFn,
}

impl Component {
    /// `r^j_s = sigma^j_s A2^j(s) - d/ds b^j_s`
    pub fn rate(&self, s: f64) -> f64 {
        self.sigma.eval(s) * self.a2.eval(s) - self.drift.deriv(s)
    }

    fn breaks(&self) -> Vec<f64> {
        let mut b = self.sigma.breakpoints();
        b.extend(self.a2.breakpoints());
        b.extend(self.drift.breakpoints());
        b
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub t0: f64,
    pub horizon: f64,
    pub components: Vec<Component>,
    pub a1: TimeFn,
    pub f: TimeFn,
    pub g: TerminalFn,
    /// Growth rate `lambda'` claimed for g; chosen automatically when absent.
    pub lambda_prime: Option<f64>,
}

impl ProblemSpec {
    pub fn new(
        t0: f64,
        horizon: f64,
        components: Vec<Component>,
        a1: TimeFn,
        f: TimeFn,
        g: TerminalFn,
    ) -> Result<Self> {
        let spec = Self { t0, horizon, components, a1, f, g, lambda_prime: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_lambda_prime(mut self, lambda_prime: f64) -> Result<Self> {
        if !(lambda_prime >= 0.0 && lambda_prime.is_finite()) {
            return Err(Error::param("lambda_prime", "must be finite and non-negative"));
        }
        self.lambda_prime = Some(lambda_prime);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 >= 0.0 && self.horizon > self.t0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", "need 0 <= t0 < T < infinity"));
        }
        let n = self.components.len();
        if n == 0 || n > MAX_DIM {
            return Err(Error::param(
                "components",
                format!("dimension must be between 1 and {MAX_DIM}, found {n}"),
            ));
        }
        for (j, c) in self.components.iter().enumerate() {
            if (c.kernel.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
                return Err(Error::param(
                    format!("components[{j}].kernel"),
                    "kernel horizon differs from the problem horizon",
                ));
            }
            c.drift.validate(&format!("components[{j}].drift"))?;
            c.sigma.validate(&format!("components[{j}].sigma"))?;
            c.a2.validate(&format!("components[{j}].a2"))?;
        }
        self.a1.validate("a1")?;
        self.f.validate("f")?;
        self.g.validate(n, "g")
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// `int_t^s A1`
    pub fn a1_integral(&self, t: f64, s: f64) -> f64 {
        self.a1.integral(t, s)
    }

    /// `exp(-int_t^T A1)`
    pub fn discount(&self, t: f64) -> f64 {
        (-self.a1_integral(t, self.horizon)).exp()
    }

    /// `int_t^T exp(int_s^t A1) f(s) ds`, entering u with a minus sign.
    pub fn source_term(&self, t: f64) -> f64 {
        if self.f.is_identically_zero() || t >= self.horizon {
            return 0.0;
        }
        let mut breaks = self.a1.breakpoints();
        breaks.extend(self.f.breakpoints());
        piecewise_simpson(
            |s| (-self.a1_integral(t, s)).exp() * self.f.eval(s),
            t,
            self.horizon,
            &breaks,
        )
    }

    /// `m^j_t = int_t^T r^j_s ds`
    pub fn shift(&self, j: usize, t: f64) -> f64 {
        let c = &self.components[j];
        let drift = c.drift.eval(self.horizon) - c.drift.eval(t);
        let vol = if c.sigma.is_identically_zero() || c.a2.is_identically_zero() {
            0.0
        } else if c.sigma.is_constant() {
            c.sigma.eval(t) * c.a2.integral(t, self.horizon)
        } else if c.a2.is_constant() {
            c.a2.eval(t) * c.sigma.integral(t, self.horizon)
        } else {
            piecewise_simpson(|s| c.sigma.eval(s) * c.a2.eval(s), t, self.horizon, &c.breaks())
        };
        vol - drift
    }

    /// `sup_t Var(N^j_t)` over `[0, T]`, sampled on 33 points.
    pub fn sup_variance(&self, j: usize) -> Result<f64> {
        let c = &self.components[j];
        let mut sup = 0.0f64;
        for i in 1..=32 {
            let t = self.horizon * i as f64 / 32.0;
            sup = sup.max(var_n(&c.kernel, &c.sigma, t)?);
        }
        Ok(sup)
    }

    /// Upper limit `(16 max_j sup_t Var(N^j_t))^(-1)` for the growth rate of g.
    pub fn h4_cap(&self) -> Result<f64> {
        let mut sup = 0.0f64;
        for j in 0..self.dim() {
            sup = sup.max(self.sup_variance(j)?);
        }
        Ok(if sup > 0.0 { 1.0 / (16.0 * sup) } else { f64::INFINITY })
    }

    /// Coefficient bounds on `[0, T]`.
    pub fn check_h3(&self) -> H3Report {
        let mut entries = Vec::new();
        let mut bound = |field: String, func: &TimeFn, positive: bool| {
            let (lo, hi) = func.range(0.0, self.horizon);
            let finite = lo.is_finite() && hi.is_finite();
            let pass = finite && (!positive || lo > 0.0);
            let detail = if !finite {
                "unbounded on [0, T]".to_string()
            } else if !pass {
                format!("not bounded away from zero: min {lo}")
            } else {
                String::new()
            };
            entries.push(H3Entry { field, min: lo, max: hi, pass, detail });
        };
        for (j, c) in self.components.iter().enumerate() {
            bound(format!("components[{j}].sigma"), &c.sigma, true);
            bound(format!("components[{j}].a2"), &c.a2, false);
        }
        bound("a1".into(), &self.a1, false);
        bound("f".into(), &self.f, false);
        let pass = entries.iter().all(|e| e.pass);
        H3Report { pass, entries }
    }

    /// Growth condition on g with the configured or default `lambda'`.
    ///
    /// Without an explicit value, bounded payoffs use 0 and the rest half the cap.
    pub fn check_h4(&self) -> Result<H4Report> {
        let cap = self.h4_cap()?;
        let lambda_prime = match self.lambda_prime {
            Some(l) => l,
            None if self.g.is_bounded() => 0.0,
            None => 0.5 * cap,
        };
        let growth_constant = self.g.growth_constant(lambda_prime);
        let pass = lambda_prime < cap && growth_constant.is_some();
        Ok(H4Report { lambda_prime, cap, growth_constant, pass })
    }
}

fn piecewise_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut lo = a;
    let mut total = 0.0;
    for hi in cuts.into_iter().chain(std::iter::once(b)) {
        total += adaptive_simpson(&f, lo, hi, TIME_TOL);
        lo = hi;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H3Entry {
    pub field: String,
    pub min: f64,
    pub max: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H3Report {
    pub pass: bool,
    pub entries: Vec<H3Entry>,
}

impl H3Report {
    pub fn violations(&self) -> Vec<&H3Entry> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H4Report {
    pub lambda_prime: f64,
    pub cap: f64,
    pub growth_constant: Option<f64>,
    pub pass: bool,
}
