//! Explicit solution of the terminal-value PDE by Gaussian convolution.
//!
//! `u(t,x) = -int_t^T e^{int_s^t A1} f(s) ds + e^{-int_t^T A1} E[g(x - m_t + sqrt(D_t) Z)]`
//! with Z standard normal in R^n, evaluated by tensor Gauss-Hermite quadrature.

use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{dvar_dt, var_n};
use crate::problem::ProblemSpec;
use crate::quad::normal;
use crate::{Error, Result};

/// Gauss-Hermite nodes per axis on the first pass; the first comparison is
/// against half as many.
pub const BASE_NODES: usize = 32;
/// Relative change between successive node doublings accepted as converged.
pub const NODE_TOL: f64 = 1e-8;

/// Node cap per axis so that tensor grids stay below a few million points.
pub fn node_cap(dim: usize) -> usize {
    match dim {
        0..=2 => 256,
        3 => 64,
        _ => 32,
    }
}

/// Gaussian parameters of one component at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatKernelParams {
    /// `D_t = Var(N_T) - Var(N_t)`
    pub variance: f64,
    /// `m_t = int_t^T r_s ds`
    pub shift: f64,
}

/// Value, gradient and diagonal Hessian of u at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub nodes: usize,
    pub converged: bool,
}

pub struct SolutionField<'a> {
    spec: &'a ProblemSpec,
    terminal_var: Vec<f64>,
}

/// Everything about u at a fixed time that does not depend on x.
#[derive(Debug, Clone)]
pub struct TimeSlice<'a> {
    spec: &'a ProblemSpec,
    pub t: f64,
    pub params: Vec<HeatKernelParams>,
    pub discount: f64,
    pub source: f64,
}

impl<'a> SolutionField<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let terminal_var = spec
            .components
            .par_iter()
            .map(|c| var_n(&c.kernel, &c.sigma, spec.horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, terminal_var })
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    pub fn terminal_variance(&self) -> &[f64] {
        &self.terminal_var
    }

    pub fn params(&self, t: f64) -> Result<Vec<HeatKernelParams>> {
        self.check_time(t)?;
        self.spec
            .components
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let d = if t >= self.spec.horizon {
                    0.0
                } else {
                    self.terminal_var[j] - var_n(&c.kernel, &c.sigma, t)?
                };
                Ok(HeatKernelParams { variance: d, shift: self.spec.shift(j, t) })
            })
            .collect()
    }

    pub fn slice(&self, t: f64) -> Result<TimeSlice<'a>> {
        let params = self.params(t)?;
        Ok(TimeSlice {
            spec: self.spec,
            t,
            params,
            discount: self.spec.discount(t),
            source: self.spec.source_term(t),
        })
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Evaluation> {
        self.slice(t)?.eval(x)
    }

    pub fn solve_u(&self, t: f64, x: &[f64]) -> Result<f64> {
        if t == self.spec.horizon {
            self.check_point(x)?;
            return Ok(self.spec.g.eval(x));
        }
        Ok(self.eval(t, x)?.u)
    }

    pub fn grad_u(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if t == self.spec.horizon {
            self.check_point(x)?;
            return Ok(self.spec.g.gradient(x));
        }
        Ok(self.eval(t, x)?.grad)
    }

    pub fn hess_diag_u(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if t >= self.spec.horizon {
            return Err(Error::domain("the Hessian is only evaluated for t < T"));
        }
        Ok(self.eval(t, x)?.hess)
    }

    /// Batch evaluation over arbitrary points, in input order.
    pub fn eval_batch(&self, points: &[(f64, Vec<f64>)]) -> Result<Vec<Evaluation>> {
        points.par_iter().map(|(t, x)| self.eval(*t, x)).collect()
    }

    /// `du/dt - RHS` with du/dt from a central difference in t.
    pub fn pde_residual(&self, t: f64, x: &[f64]) -> Result<PdeResidual> {
        Ok(self.pde_residual_grid(&[t], &[x.to_vec()])?.remove(0))
    }

    /// Residuals on a `(t, x)` tensor grid, sharing all per-time work; rows ordered by t.
    pub fn pde_residual_grid(&self, times: &[f64], xs: &[Vec<f64>]) -> Result<Vec<PdeResidual>> {
        let spec = self.spec;
        let rows = times
            .par_iter()
            .map(|&t| -> Result<Vec<PdeResidual>> {
                if !(t > spec.t0 && t < spec.horizon) {
                    return Err(Error::domain("the PDE residual is evaluated at interior times"));
                }
                let eps = 1e-4 * (spec.horizon - t).min(t - spec.t0).min(1.0);
                let up = self.slice(t + eps)?;
                let dn = self.slice(t - eps)?;
                let mid = self.slice(t)?;
                let dvar = spec
                    .components
                    .iter()
                    .map(|c| dvar_dt(&c.kernel, &c.sigma, t))
                    .collect::<Result<Vec<_>>>()?;
                xs.iter()
                    .map(|x| {
                        let dudt = (up.eval(x)?.u - dn.eval(x)?.u) / (2.0 * eps);
                        let e = mid.eval(x)?;
                        let mut diffusion = 0.0;
                        let mut drift = 0.0;
                        for (j, c) in spec.components.iter().enumerate() {
                            diffusion -= 0.5 * dvar[j] * e.hess[j];
                            drift += c.rate(t) * e.grad[j];
                        }
                        let a1u = spec.a1.eval(t) * e.u;
                        let source = spec.f.eval(t);
                        let residual = dudt - (diffusion + drift + a1u + source);
                        let max_term = [dudt, diffusion, drift, a1u, source]
                            .iter()
                            .fold(0.0f64, |m, v| m.max(v.abs()));
                        Ok(PdeResidual {
                            t,
                            x: x.clone(),
                            dudt,
                            diffusion,
                            drift,
                            a1u,
                            source,
                            residual,
                            max_term,
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(rows.into_iter().flatten().collect())
    }

    /// Exponential growth bounds on u and its derivatives over sample points.
    pub fn growth_check(&self, sample: &[(f64, Vec<f64>)]) -> Result<GrowthReport> {
        let h4 = self.spec.check_h4()?;
        let lp = h4.lambda_prime;
        let lambda = 4.0 * lp;
        let mut violations = Vec::new();
        let mut nonconverged = Vec::new();
        let mut m_sup = 0.0f64;
        let mut m_deriv = 0.0f64;
        let mut finite = h4.growth_constant.is_some();
        let rows: Vec<_> = sample
            .par_iter()
            .map(|(t, x)| -> Result<_> {
                let slice = self.slice(*t)?;
                let e = slice.eval(x)?;
                Ok((slice, e))
            })
            .collect::<Result<_>>()?;
        for (slice, e) in &rows {
            let c_prime = h4.growth_constant.unwrap_or(f64::INFINITY);
            let bounds = slice.growth_bounds(lp, c_prime);
            if !e.converged {
                nonconverged.push((e.t, e.x.clone()));
            }
            let Some((mu, mg, mh)) = bounds else {
                finite = false;
                continue;
            };
            m_sup = m_sup.max(mu);
            m_deriv = mg.iter().chain(&mh).fold(m_deriv, |a, &b| a.max(b));
            let w = (lambda * e.x.iter().map(|v| v * v).sum::<f64>()).exp();
            let mut push = |quantity: String, value: f64, bound: f64| {
                if !(value.abs() <= bound * (1.0 + 1e-9)) {
                    violations.push(GrowthViolation { t: e.t, x: e.x.clone(), quantity, value, bound });
                }
            };
            push("u".into(), e.u, mu * w);
            for (j, p) in slice.params.iter().enumerate() {
                push(format!("du/dx{}", j + 1), e.grad[j], mg[j] * w / p.variance.sqrt());
                push(format!("d2u/dx{}^2", j + 1), e.hess[j], mh[j] * w / p.variance);
            }
        }
        let pass = h4.pass && finite && violations.is_empty() && nonconverged.is_empty();
        Ok(GrowthReport {
            lambda_prime: lp,
            lambda,
            cap: h4.cap,
            h4_pass: h4.pass,
            growth_constant: h4.growth_constant,
            m: if finite { m_sup } else { f64::INFINITY },
            m_derivatives: if finite { m_deriv } else { f64::INFINITY },
            points: sample.len(),
            violations,
            nonconverged,
            pass,
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= self.spec.t0 && t <= self.spec.horizon) {
            return Err(Error::domain(format!(
                "t = {t} outside [{}, {}]",
                self.spec.t0, self.spec.horizon
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.dim() {
            return Err(Error::domain(format!(
                "point has dimension {}, expected {}",
                x.len(),
                self.spec.dim()
            )));
        }
        Ok(())
    }
}

impl TimeSlice<'_> {
    pub fn eval(&self, x: &[f64]) -> Result<Evaluation> {
        let (center, scale) = self.standardize(x)?;
        let cap = node_cap(x.len());
        let mut nodes = (BASE_NODES / 2).min(cap);
        let mut prev = self.convolve(&center, &scale, nodes);
        let mut converged = false;
        while nodes < cap {
            let next_nodes = (2 * nodes).min(cap);
            let next = self.convolve(&center, &scale, next_nodes);
            let close = moments_close(&prev, &next);
            prev = next;
            nodes = next_nodes;
            if close {
                converged = true;
                break;
            }
        }
        Ok(self.assemble(x, &scale, prev, nodes, converged))
    }

    /// A single pass with a fixed number of nodes per axis.
    pub fn eval_with_nodes(&self, x: &[f64], nodes: usize) -> Result<Evaluation> {
        if nodes == 0 {
            return Err(Error::param("nodes", "must be positive"));
        }
        let (center, scale) = self.standardize(x)?;
        let m = self.convolve(&center, &scale, nodes);
        Ok(self.assemble(x, &scale, m, nodes, true))
    }

    fn standardize(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.spec.dim();
        if x.len() != n {
            return Err(Error::domain(format!("point has dimension {}, expected {n}", x.len())));
        }
        if self.t >= self.spec.horizon {
            return Err(Error::domain("at t = T use the terminal function directly"));
        }
        for (j, p) in self.params.iter().enumerate() {
            if !(p.variance > 0.0) {
                return Err(Error::Hypothesis {
                    hypothesis: "H5".into(),
                    detail: format!(
                        "remaining variance D = {} is not positive for component {j} at t = {}",
                        p.variance, self.t
                    ),
                });
            }
        }
        let center = x.iter().zip(&self.params).map(|(xi, p)| xi - p.shift).collect();
        let scale = self.params.iter().map(|p| p.variance.sqrt()).collect();
        Ok((center, scale))
    }

    fn assemble(&self, x: &[f64], scale: &[f64], m: Moments, nodes: usize, converged: bool) -> Evaluation {
        let (c0, c1, c2) = m;
        let d = self.discount;
        Evaluation {
            t: self.t,
            x: x.to_vec(),
            u: -self.source + d * c0,
            grad: c1.iter().zip(scale).map(|(v, s)| d * v / s).collect(),
            hess: c2.iter().zip(scale).map(|(v, s)| d * v / (s * s)).collect(),
            nodes,
            converged,
        }
    }

    /// `E[g]`, `E[g Z_j]` and `E[g (Z_j^2 - 1)]` on a tensor rule; the centre value is
    /// subtracted in the weighted sums so constant payoffs give exact zeros.
    fn convolve(&self, center: &[f64], scale: &[f64], nodes: usize) -> Moments {
        let n = center.len();
        let rule = normal(nodes);
        let (z, w) = (&rule.nodes, &rule.weights);
        let g = &self.spec.g;
        let g0 = g.eval(center);
        if n == 1 {
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for (zk, wk) in z.iter().zip(w) {
                let dg = g.eval(&[center[0] + scale[0] * zk]) - g0;
                s0 += wk * dg;
                s1 += wk * zk * dg;
                s2 += wk * (zk * zk - 1.0) * dg;
            }
            return (g0 + s0, vec![s1], vec![s2]);
        }
        let mut idx = vec![0usize; n];
        let mut y = vec![0.0; n];
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        loop {
            let mut weight = 1.0;
            for k in 0..n {
                y[k] = center[k] + scale[k] * z[idx[k]];
                weight *= w[idx[k]];
            }
            let gv = g.eval(&y);
            let dg = gv - g0;
            s0 += weight * dg;
            for k in 0..n {
                let zk = z[idx[k]];
                s1[k] += weight * zk * dg;
                s2[k] += weight * (zk * zk - 1.0) * dg;
            }
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < nodes {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        (g0 + s0, s1, s2)
    }

    /// Constants bounding `|u|`, `sqrt(D_j)|du/dx_j|` and `D_j|d2u/dx_j^2|` by
    /// multiples of `exp(4 lambda' |x|^2)`, or `None` when the bound is infinite.
    fn growth_bounds(&self, lp: f64, c_prime: f64) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        if !c_prime.is_finite() {
            return None;
        }
        // |y|^2 <= 4|x|^2 + 4|m|^2 + 2 D |z|^2, then Gaussian moments of exp(a z^2)
        let m2: f64 = self.params.iter().map(|p| p.shift * p.shift).sum();
        let a: Vec<f64> = self.params.iter().map(|p| 2.0 * lp * p.variance).collect();
        if a.iter().any(|&ai| 2.0 * ai >= 1.0) {
            return None;
        }
        let base = c_prime * self.discount * (4.0 * lp * m2).exp();
        let e0: Vec<f64> = a.iter().map(|ai| (1.0 - 2.0 * ai).powf(-0.5)).collect();
        let prod: f64 = e0.iter().product();
        let n = a.len();
        let mu = base * prod + self.source.abs();
        let mut mg = vec![0.0; n];
        let mut mh = vec![0.0; n];
        for j in 0..n {
            let others = prod / e0[j];
            let q = 1.0 - 2.0 * a[j];
            mg[j] = base * others * (2.0 / std::f64::consts::PI).sqrt() / q;
            mh[j] = base * others * (q.powf(-1.5) + q.powf(-0.5));
        }
        Some((mu, mg, mh))
    }
}

type Moments = (f64, Vec<f64>, Vec<f64>);

fn moments_close(a: &Moments, b: &Moments) -> bool {
    let floor = 1e-14 * (a.0.abs().max(b.0.abs()) + 1e-300);
    let near = |x: f64, y: f64, extra: f64| (x - y).abs() <= NODE_TOL * y.abs().max(x.abs()) + extra;
    if !near(a.0, b.0, 0.0) {
        return false;
    }
    a.1.iter().zip(&b.1).all(|(x, y)| near(*x, *y, floor))
        && a.2.iter().zip(&b.2).all(|(x, y)| near(*x, *y, floor))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeResidual {
    pub t: f64,
    pub x: Vec<f64>,
    pub dudt: f64,
    /// `-1/2 sum_j d/dt Var(N^j_t) d2u/dx_j^2`
    pub diffusion: f64,
    /// `sum_j r^j_t du/dx_j`
    pub drift: f64,
    pub a1u: f64,
    pub source: f64,
    pub residual: f64,
    pub max_term: f64,
}

impl PdeResidual {
    pub fn relative(&self) -> f64 {
        if self.max_term == 0.0 {
            self.residual.abs()
        } else {
            self.residual.abs() / self.max_term
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthViolation {
    pub t: f64,
    pub x: Vec<f64>,
    pub quantity: String,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub lambda_prime: f64,
    pub lambda: f64,
    pub cap: f64,
    pub h4_pass: bool,
    pub growth_constant: Option<f64>,
    /// Constant M in the bound on |u| over the sample.
    pub m: f64,
    /// Largest constant in the gradient and Hessian bounds.
    pub m_derivatives: f64,
    pub points: usize,
    pub violations: Vec<GrowthViolation>,
    /// Points where node doubling hit the cap without settling.
    pub nonconverged: Vec<(f64, Vec<f64>)>,
    pub pass: bool,
}

/// CSV with columns `t, x1..xn, u, du_dx1..du_dxn`.
pub fn solution_csv(evals: &[Evaluation]) -> String {
    let n = evals.first().map_or(0, |e| e.x.len());
    let mut s = String::from("t");
    for j in 1..=n {
        s.push_str(&format!(",x{j}"));
    }
    s.push_str(",u");
    for j in 1..=n {
        s.push_str(&format!(",du_dx{j}"));
    }
    s.push('\n');
    for e in evals {
        s.push_str(&format!("{}", e.t));
        for v in &e.x {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}", e.u));
        for v in &e.grad {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}
