//! Adjoint transform, covariance density, variance profile and its diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::functions::TimeFn;
use crate::kernel::VolterraKernel;
use crate::quad;
use crate::{Error, Result};

const INF: f64 = f64::INFINITY;

fn merged_breaks(kernel: &VolterraKernel, sigma: &TimeFn) -> Vec<f64> {
    let mut b: Vec<f64> = kernel.breakpoints().to_vec();
    b.extend(sigma.breakpoints());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup();
    b
}

fn inside(breaks: &[f64], a: f64, b: f64) -> Vec<f64> {
    breaks.iter().copied().filter(|&x| x > a && x < b).collect()
}

/// Integrand-level evaluator tying a kernel to a volatility function.
pub(crate) struct Adjoint<'a> {
    pub kernel: &'a VolterraKernel,
    pub sigma: &'a TimeFn,
    breaks: Vec<f64>,
}

impl<'a> Adjoint<'a> {
    pub fn new(kernel: &'a VolterraKernel, sigma: &'a TimeFn) -> Self {
        Adjoint {
            kernel,
            sigma,
            breaks: merged_breaks(kernel, sigma),
        }
    }

    fn cfg(&self) -> &quad::QuadConfig {
        self.kernel.quad()
    }

    /// `int_u^{u+g} sigma_r dK/dr(r, u) dr`.
    pub fn kstar(&self, u: f64, g: f64) -> f64 {
        if !(g > 0.0) || self.sigma.is_identically_zero() {
            return 0.0;
        }
        let k = self.kernel;
        let s = self.sigma;
        if s.is_constant() {
            // the kernel vanishes on the diagonal, so the adjoint of a constant is exact
            return s.eval(u) * k.k_gap(u + g, u, g);
        }
        quad::integrate(
            |r, da, _| s.eval(r) * k.dk_gap(r, u, da),
            u,
            u + g,
            u,
            INF,
            &inside(&self.breaks, u, u + g),
            self.cfg(),
        )
    }

    /// `int_t^T sigma_r dK/dr(r, s) dr` for `s < t`.
    pub fn tail(&self, t: f64, s: f64, horizon: f64) -> f64 {
        let k = self.kernel;
        let sg = self.sigma;
        let lag = t - s;
        quad::integrate(
            |r, da, _| sg.eval(r) * k.dk_gap(r, s, lag + da),
            t,
            horizon,
            lag,
            INF,
            &inside(&self.breaks, t, horizon),
            self.cfg(),
        )
    }

    /// phi(r, s) for `r > s`, `g = r - s`.
    pub fn phi_gap(&self, r: f64, s: f64, g: f64) -> f64 {
        let k = self.kernel;
        quad::integrate(
            |_, da, db| k.dk_gap(r, da, g + db) * k.dk_gap(s, da, db),
            0.0,
            s,
            INF,
            g,
            &inside(self.kernel.breakpoints(), 0.0, s),
            self.cfg(),
        )
    }

    pub fn var(&self, t: f64) -> f64 {
        if !(t > 0.0) || self.sigma.is_identically_zero() {
            return 0.0;
        }
        quad::integrate(
            |_, da, db| {
                let v = self.kstar(da, db);
                v * v
            },
            0.0,
            t,
            INF,
            INF,
            &inside(&self.breaks, 0.0, t),
            self.cfg(),
        )
    }

    pub fn cov(&self, t: f64, s: f64) -> f64 {
        let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
        if !(lo > 0.0) {
            return 0.0;
        }
        if hi == lo {
            return self.var(hi);
        }
        let lag = hi - lo;
        quad::integrate(
            |_, da, db| self.kstar(da, lag + db) * self.kstar(da, db),
            0.0,
            lo,
            INF,
            lag,
            &inside(&self.breaks, 0.0, lo),
            self.cfg(),
        )
    }

    /// `2 sigma_t int_0^t (K*_t sigma)_v dK/dt(t, v) dv`, the phi-weighted
    /// integral after exchanging the order of integration.
    pub fn dvar_exchanged(&self, t: f64) -> f64 {
        if !(t > 0.0) || self.sigma.is_identically_zero() {
            return 0.0;
        }
        let k = self.kernel;
        let inner = quad::integrate(
            |_, da, db| self.kstar(da, db) * k.dk_gap(t, da, db),
            0.0,
            t,
            INF,
            INF,
            &inside(&self.breaks, 0.0, t),
            self.cfg(),
        );
        2.0 * self.sigma.eval(t) * inner
    }

    /// `2 sigma_t int_0^t sigma_u phi(t, u) du`.
    ///
    /// For constant sigma the exchanged form is a single integral of `K dK/dt`.
    pub fn dvar(&self, t: f64) -> f64 {
        if !(t > 0.0) || self.sigma.is_identically_zero() {
            return 0.0;
        }
        if self.sigma.is_constant() {
            return self.dvar_exchanged(t);
        }
        let s = self.sigma;
        let inner = quad::integrate(
            |u, da, db| s.eval(u) * self.phi_gap(t, da, db),
            0.0,
            t,
            INF,
            INF,
            &inside(&self.breaks, 0.0, t),
            self.cfg(),
        );
        2.0 * s.eval(t) * inner
    }

    pub fn a3(&self, t: f64, horizon: f64) -> f64 {
        if !(t < horizon) {
            return 0.0;
        }
        quad::integrate(
            |_, _, db| {
                let v = self.kstar(horizon - db, db);
                v * v
            },
            t,
            horizon,
            INF,
            INF,
            &inside(&self.breaks, t, horizon),
            self.cfg(),
        )
    }
}

fn check_t(kernel: &VolterraKernel, t: f64, name: &str) -> Result<()> {
    if !(t >= 0.0 && t <= kernel.horizon() * (1.0 + 1e-12)) {
        return Err(Error::domain(format!(
            "{name} = {t} lies outside [0, {}]",
            kernel.horizon()
        )));
    }
    Ok(())
}

/// `(K*_t sigma)_u = int_u^t sigma_r dK/dr(r, u) dr`.
pub fn kstar_sigma(kernel: &VolterraKernel, sigma: &TimeFn, t: f64, u: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::domain(format!("adjoint needs u > 0, got {u}")));
    }
    check_t(kernel, t, "t")?;
    if u >= t {
        return Ok(0.0);
    }
    Ok(Adjoint::new(kernel, sigma).kstar(u, t - u))
}

/// Covariance density `phi(r, s) = int_0^{min} dK/dr(r, v) dK/ds(s, v) dv`.
pub fn phi(kernel: &VolterraKernel, r: f64, s: f64) -> Result<f64> {
    if r == s {
        return Err(Error::domain("phi is not finite on the diagonal r = s"));
    }
    if !(r > 0.0 && s > 0.0) {
        return Err(Error::domain(format!("phi needs r, s > 0, got ({r}, {s})")));
    }
    check_t(kernel, r, "r")?;
    check_t(kernel, s, "s")?;
    let one = TimeFn::constant(1.0);
    let adj = Adjoint::new(kernel, &one);
    let (hi, lo) = if r > s { (r, s) } else { (s, r) };
    Ok(adj.phi_gap(hi, lo, hi - lo))
}

/// Covariance `R(t, s) = E[X_t X_s]` of the Volterra process.
pub fn covariance_r(kernel: &VolterraKernel, t: f64, s: f64) -> Result<f64> {
    check_t(kernel, t, "t")?;
    check_t(kernel, s, "s")?;
    let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
    if lo == 0.0 {
        return Ok(0.0);
    }
    let near = if hi > lo { hi - lo } else { INF };
    let lag = hi - lo;
    Ok(quad::integrate(
        |_, da, db| {
            let a = kernel.k_gap(hi, da, lag + db);
            let b = if lag == 0.0 { a } else { kernel.k_gap(lo, da, db) };
            a * b
        },
        0.0,
        lo,
        INF,
        near,
        &inside(kernel.breakpoints(), 0.0, lo),
        kernel.quad(),
    ))
}

/// `Var(N_t) = int_0^t (K*_t sigma)_u^2 du`.
pub fn var_n(kernel: &VolterraKernel, sigma: &TimeFn, t: f64) -> Result<f64> {
    check_t(kernel, t, "t")?;
    Ok(Adjoint::new(kernel, sigma).var(t))
}

/// `Cov(N_t, N_s) = int_0^{min} (K*_t sigma)_u (K*_s sigma)_u du`.
pub fn cov_n(kernel: &VolterraKernel, sigma: &TimeFn, t: f64, s: f64) -> Result<f64> {
    check_t(kernel, t, "t")?;
    check_t(kernel, s, "s")?;
    Ok(Adjoint::new(kernel, sigma).cov(t, s))
}

/// `d/dt Var(N_t) = 2 sigma_t int_0^t sigma_u phi(t, u) du`.
pub fn dvar_dt(kernel: &VolterraKernel, sigma: &TimeFn, t: f64) -> Result<f64> {
    check_t(kernel, t, "t")?;
    Ok(Adjoint::new(kernel, sigma).dvar(t))
}

/// `d/dt Var(N_t)` through `2 sigma_t int_0^t (K*_t sigma)_v dK/dt(t, v) dv`,
/// which avoids phi altogether; an independent route to [`dvar_dt`].
pub fn dvar_dt_exchanged(kernel: &VolterraKernel, sigma: &TimeFn, t: f64) -> Result<f64> {
    check_t(kernel, t, "t")?;
    Ok(Adjoint::new(kernel, sigma).dvar_exchanged(t))
}

/// The three parts of `Var(N_T) - Var(N_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    /// Cross term `2 int_0^t int_t^T sigma sigma' phi`.
    pub a1: f64,
    /// `int_0^t (int_t^T sigma_r dK/dr(r, s) dr)^2 ds`.
    pub a2: f64,
    /// `int_t^T (K*_T sigma)_s^2 ds`.
    pub a3: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.a1 + self.a2 + self.a3
    }
}

pub fn variance_increment_decomposition(
    kernel: &VolterraKernel,
    sigma: &TimeFn,
    t: f64,
) -> Result<Decomposition> {
    check_t(kernel, t, "t")?;
    let horizon = kernel.horizon();
    if !(t < horizon) {
        return Ok(Decomposition {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
        });
    }
    let adj = Adjoint::new(kernel, sigma);
    let brk = inside(&adj.breaks, 0.0, t);
    let (a1, a2) = if t > 0.0 {
        let a1 = quad::integrate(
            |_, da, db| 2.0 * adj.kstar(da, db) * adj.tail(t, da, horizon),
            0.0,
            t,
            INF,
            INF,
            &brk,
            kernel.quad(),
        );
        let a2 = quad::integrate(
            |_, da, _| {
                let j = adj.tail(t, da, horizon);
                j * j
            },
            0.0,
            t,
            INF,
            INF,
            &brk,
            kernel.quad(),
        );
        (a1, a2)
    } else {
        (0.0, 0.0)
    };
    Ok(Decomposition {
        a1,
        a2,
        a3: adj.a3(t, horizon),
    })
}

/// Per-component variance data on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceProfile {
    pub grid: Vec<f64>,
    pub components: Vec<ComponentVariance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentVariance {
    pub var: Vec<f64>,
    pub dvar: Vec<f64>,
    /// `Var(N_T) - Var(N_t)`; exactly zero at the last grid point.
    pub remaining: Vec<f64>,
}

impl VarianceProfile {
    pub fn compute(components: &[(&VolterraKernel, &TimeFn)], grid: &[f64]) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::param("grid", "must contain at least one time"));
        }
        let mut out = Vec::with_capacity(components.len());
        for &(kernel, sigma) in components {
            for &t in grid {
                check_t(kernel, t, "grid time")?;
            }
            let adj = Adjoint::new(kernel, sigma);
            let var: Vec<f64> = grid.par_iter().map(|&t| adj.var(t)).collect();
            let dvar: Vec<f64> = grid.par_iter().map(|&t| adj.dvar(t)).collect();
            let last = *grid.last().unwrap();
            let var_t = if last == kernel.horizon() {
                *var.last().unwrap()
            } else {
                adj.var(kernel.horizon())
            };
            let remaining = grid
                .iter()
                .zip(&var)
                .map(|(&t, &v)| if t >= kernel.horizon() { 0.0 } else { var_t - v })
                .collect();
            out.push(ComponentVariance {
                var,
                dvar,
                remaining,
            });
        }
        Ok(VarianceProfile {
            grid: grid.to_vec(),
            components: out,
        })
    }

    /// CSV with columns `t,j,var,dvar,D`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,j,var,dvar,D\n");
        for (j, c) in self.components.iter().enumerate() {
            for (i, t) in self.grid.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    t, j, c.var[i], c.dvar[i], c.remaining[i]
                ));
            }
        }
        s
    }
}

/// Diagnostics for variance monotonicity and integrability of `D_t^(-1/2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H5Report {
    pub pass: bool,
    pub components: Vec<H5Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H5Component {
    pub component: usize,
    pub min_dvar: f64,
    pub argmin_t: f64,
    pub positivity_pass: bool,
    /// Times where the derivative of the variance is not positive.
    pub violations: Vec<f64>,
    /// Least-squares slope of `log A3_t` against `log(T - t)` over the last quarter.
    pub fitted_a: f64,
    pub exponent_pass: bool,
    /// Local exponent of `D_t` near `T`, used for the analytic tail.
    pub remaining_exponent: f64,
    pub integral_estimate: f64,
    pub integral_finite: bool,
    pub pass: bool,
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn check_h5(components: &[(&VolterraKernel, &TimeFn)], profile: &VarianceProfile) -> Result<H5Report> {
    let grid = &profile.grid;
    let m = grid.len();
    if m < 5 {
        return Err(Error::param("grid", "variance diagnostics need at least 5 grid points"));
    }
    let horizon = grid[m - 1];
    let mut reports = Vec::new();
    for (j, (&(kernel, sigma), cv)) in components.iter().zip(&profile.components).enumerate() {
        let (mut min_dvar, mut argmin_t) = (INF, grid[0]);
        let mut violations = Vec::new();
        for (i, (&t, &d)) in grid.iter().zip(&cv.dvar).enumerate() {
            if d < min_dvar || d.is_nan() {
                min_dvar = d;
                argmin_t = t;
            }
            // the derivative always vanishes at t = 0; ask for immediate growth instead
            let ok = if t == 0.0 { cv.var[i + 1] > cv.var[i] } else { d > 0.0 };
            if !ok {
                violations.push(t);
            }
        }
        let positivity_pass = violations.is_empty();

        let start = m - 1 - (m - 1) / 4;
        let idx: Vec<usize> = (start..m - 1).collect();
        let adj = Adjoint::new(kernel, sigma);
        let a3: Vec<f64> = idx.par_iter().map(|&i| adj.a3(grid[i], horizon)).collect();
        let lx: Vec<f64> = idx.iter().map(|&i| (horizon - grid[i]).ln()).collect();
        let fitted_a = if a3.iter().all(|&v| v > 0.0) {
            ls_slope(&lx, &a3.iter().map(|v| v.ln()).collect::<Vec<_>>())
        } else {
            f64::NAN
        };
        let exponent_pass = fitted_a > 0.0 && fitted_a < 2.0;

        let rem: Vec<f64> = idx.iter().map(|&i| cv.remaining[i]).collect();
        let remaining_exponent = if rem.iter().all(|&v| v > 0.0) {
            ls_slope(&lx, &rem.iter().map(|v| v.ln()).collect::<Vec<_>>())
        } else {
            f64::NAN
        };
        let mut integral = 0.0;
        let mut finite = cv.remaining[..m - 1].iter().all(|&d| d > 0.0);
        if finite {
            for i in 0..m - 2 {
                let f0 = cv.remaining[i].powf(-0.5);
                let f1 = cv.remaining[i + 1].powf(-0.5);
                integral += 0.5 * (grid[i + 1] - grid[i]) * (f0 + f1);
            }
            let tau = grid[m - 2];
            let a = remaining_exponent;
            if a < 2.0 {
                integral += cv.remaining[m - 2].powf(-0.5) * (horizon - tau) / (1.0 - 0.5 * a);
            } else {
                finite = false;
            }
        }
        let integral_finite = finite && integral.is_finite();
        let integral_estimate = if integral_finite { integral } else { INF };
        reports.push(H5Component {
            component: j,
            min_dvar,
            argmin_t,
            positivity_pass,
            violations,
            fitted_a,
            exponent_pass,
            remaining_exponent,
            integral_estimate,
            integral_finite,
            pass: positivity_pass && exponent_pass && integral_finite,
        });
    }
    Ok(H5Report {
        pass: reports.iter().all(|r| r.pass),
        components: reports,
    })
}
