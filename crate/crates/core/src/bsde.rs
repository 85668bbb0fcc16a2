//! The BSDE solution `Y_t = u(t, N_t)`, `Z^j_t = -sigma^j_t du/dx_j(t, N_t)`
//! along simulated paths, its expectation identity and the hedging map.

use rayon::prelude::*;
use serde::Serialize;

use crate::feynman_kac::SolutionField;
use crate::functions::{TerminalFn, TimeFn};
use crate::kernel::VolterraKernel;
use crate::problem::{Component, ProblemSpec};
use crate::simulate::{GaussianLaw, PathEnsemble};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeOutput {
    pub grid: Vec<f64>,
    pub dim: usize,
    pub paths: usize,
    pub seed: u64,
    pub problem_hash: Option<String>,
    /// `Y[p * M + i]`
    pub y: Vec<f64>,
    /// `Z[(p * M + i) * n + j]`
    pub z: Vec<f64>,
}

impl BsdeOutput {
    pub fn y(&self, p: usize, i: usize) -> f64 {
        self.y[p * self.grid.len() + i]
    }

    pub fn z(&self, p: usize, i: usize) -> &[f64] {
        let start = (p * self.grid.len() + i) * self.dim;
        &self.z[start..start + self.dim]
    }

    /// CSV with columns `path_id, t, Y, Z1..Zn`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path_id,t,Y");
        for j in 1..=self.dim {
            s.push_str(&format!(",Z{j}"));
        }
        s.push('\n');
        for p in 0..self.paths {
            for (i, t) in self.grid.iter().enumerate() {
                s.push_str(&format!("{p},{t},{}", self.y(p, i)));
                for v in self.z(p, i) {
                    s.push_str(&format!(",{v}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Evaluate Y and Z on every path and grid time; at `T` the payoff is used directly.
pub fn evaluate_yz(field: &SolutionField, ens: &PathEnsemble) -> Result<BsdeOutput> {
    let spec = field.spec();
    let n = spec.dim();
    if ens.dim != n {
        return Err(Error::param("ensemble", format!("dimension {} differs from the problem ({n})", ens.dim)));
    }
    let m = ens.grid.len();
    if ens.grid.iter().any(|&t| t < spec.t0 || t > spec.horizon) {
        return Err(Error::param("ensemble", "grid leaves [t0, T]"));
    }
    // per-time work first, then one column of paths at a time
    let columns = ens
        .grid
        .par_iter()
        .enumerate()
        .map(|(i, &t)| -> Result<(Vec<f64>, Vec<f64>)> {
            let sig: Vec<f64> = spec.components.iter().map(|c| c.sigma.eval(t)).collect();
            let mut ys = Vec::with_capacity(ens.paths);
            let mut zs = Vec::with_capacity(ens.paths * n);
            if t >= spec.horizon {
                for p in 0..ens.paths {
                    let x = ens.point(p, i);
                    ys.push(spec.g.eval(x));
                    zs.extend(spec.g.gradient(x).iter().zip(&sig).map(|(d, s)| -s * d));
                }
            } else {
                let slice = field.slice(t)?;
                for p in 0..ens.paths {
                    let e = slice.eval(ens.point(p, i))?;
                    ys.push(e.u);
                    zs.extend(e.grad.iter().zip(&sig).map(|(d, s)| -s * d));
                }
            }
            Ok((ys, zs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y = vec![0.0; ens.paths * m];
    let mut z = vec![0.0; ens.paths * m * n];
    for (i, (ys, zs)) in columns.iter().enumerate() {
        for p in 0..ens.paths {
            y[p * m + i] = ys[p];
            z[(p * m + i) * n..(p * m + i + 1) * n].copy_from_slice(&zs[p * n..(p + 1) * n]);
        }
    }
    Ok(BsdeOutput { grid: ens.grid.clone(), dim: n, paths: ens.paths, seed: ens.seed, problem_hash: None, y, z })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationReport {
    pub t0: f64,
    pub paths: usize,
    /// Mean of `u(t0, N_t0)`.
    pub side_a: f64,
    pub se_a: f64,
    /// Mean of `g(N_T) - int [f + A1 Y - A2 . Z] ds` on the full grid.
    pub side_b: f64,
    pub se_b: f64,
    /// Side (b) on every other grid point, when the grid allows it.
    pub side_b_coarse: Option<f64>,
    /// `|side_b - side_b_coarse|`, the discretization allowance.
    pub allowance: f64,
    pub combined_se: f64,
    pub difference: f64,
    pub pass: bool,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if v.iter().all(|&x| x == v[0]) {
        return (v[0], 0.0);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Compare `E[Y_t0]` with the expectation of the right-hand side of the BSDE,
/// where the divergence integral has mean zero.
pub fn expectation_identity_check(spec: &ProblemSpec, out: &BsdeOutput, ens: &PathEnsemble, n_se: f64) -> Result<ExpectationReport> {
    let m = out.grid.len();
    if m < 2 || out.paths == 0 {
        return Err(Error::param("output", "need at least two grid times and one path"));
    }
    if out.grid[m - 1] != spec.horizon {
        return Err(Error::param("output", "grid must end at T"));
    }
    let n = spec.dim();
    let gen: Vec<(f64, f64, Vec<f64>)> = out
        .grid
        .iter()
        .map(|&t| (spec.f.eval(t), spec.a1.eval(t), spec.components.iter().map(|c| c.a2.eval(t)).collect()))
        .collect();
    let integrand = |p: usize, i: usize| {
        let (f, a1, a2) = &gen[i];
        let z = out.z(p, i);
        f + a1 * out.y(p, i) - (0..n).map(|j| a2[j] * z[j]).sum::<f64>()
    };
    let side = |stride: usize| -> Vec<f64> {
        (0..out.paths)
            .map(|p| {
                let mut integral = 0.0;
                let mut i = 0;
                while i + stride < m {
                    let h = out.grid[i + stride] - out.grid[i];
                    integral += 0.5 * h * (integrand(p, i) + integrand(p, i + stride));
                    i += stride;
                }
                spec.g.eval(ens.point(p, m - 1)) - integral
            })
            .collect()
    };
    let a: Vec<f64> = (0..out.paths).map(|p| out.y(p, 0)).collect();
    let b = side(1);
    let (side_a, se_a) = mean_se(&a);
    let (side_b, se_b) = mean_se(&b);
    let side_b_coarse = if (m - 1).is_multiple_of(2) { Some(mean_se(&side(2)).0) } else { None };
    let allowance = side_b_coarse.map_or(0.0, |c| (side_b - c).abs());
    let combined_se = (se_a * se_a + se_b * se_b).sqrt();
    let difference = side_a - side_b;
    let pass = difference.abs() <= n_se * combined_se + allowance + 1e-12 * side_a.abs().max(side_b.abs());
    Ok(ExpectationReport {
        t0: out.grid[0],
        paths: out.paths,
        side_a,
        se_a,
        side_b,
        se_b,
        side_b_coarse,
        allowance,
        combined_se,
        difference,
        pass,
    })
}

/// One risky asset `dP = P (b dt + sigma dX)` and the driver `N = drift + int sigma dX`.
#[derive(Debug, Clone)]
pub struct Asset {
    pub kernel: VolterraKernel,
    pub appreciation: TimeFn,
    pub sigma: TimeFn,
    pub driver_drift: TimeFn,
}

#[derive(Debug, Clone)]
pub struct HedgingProblem {
    pub t0: f64,
    pub horizon: f64,
    pub rate: TimeFn,
    pub assets: Vec<Asset>,
    pub claim: TerminalFn,
}

impl HedgingProblem {
    /// `theta^j_t = (b^j_t - r_t) / sigma^j_t`
    pub fn risk_premium(&self, j: usize, t: f64) -> f64 {
        let a = &self.assets[j];
        (a.appreciation.eval(t) - self.rate.eval(t)) / a.sigma.eval(t)
    }

    /// The BSDE with `A1 = r`, `A2^j = theta^j sigma^j = b^j - r` and `f = 0`.
    pub fn to_spec(&self) -> Result<ProblemSpec> {
        for (j, a) in self.assets.iter().enumerate() {
            let (lo, hi) = a.sigma.range(0.0, self.horizon);
            if !(lo > 0.0 || hi < 0.0) {
                return Err(Error::Hypothesis {
                    hypothesis: "H3".into(),
                    detail: format!("volatility of asset {j} reaches zero; risk premium undefined"),
                });
            }
        }
        let components = self
            .assets
            .iter()
            .map(|a| Component {
                kernel: a.kernel.clone(),
                drift: a.driver_drift.clone(),
                sigma: a.sigma.clone(),
                a2: a.appreciation.minus(&self.rate),
            })
            .collect();
        ProblemSpec::new(self.t0, self.horizon, components, self.rate.clone(), TimeFn::constant(0.0), self.claim.clone())
    }

    /// Replicate the claim along `paths` simulated drivers on `grid`.
    pub fn hedge(&self, grid: &[f64], paths: usize, seed: u64) -> Result<Hedge> {
        let spec = self.to_spec()?;
        let field = SolutionField::new(&spec)?;
        let law = GaussianLaw::from_spec(&spec, grid)?;
        let ens = law.sample(paths, seed);
        let out = evaluate_yz(&field, &ens)?;
        let n = spec.dim();
        let m = grid.len();
        // pi^j sigma^j takes the place of -Z^j in the noise term
        let mut pi = vec![0.0; out.z.len()];
        for p in 0..paths {
            for (i, &t) in grid.iter().enumerate() {
                for j in 0..n {
                    let k = (p * m + i) * n + j;
                    pi[k] = -out.z[k] / spec.components[j].sigma.eval(t);
                }
            }
        }
        let v0: Vec<f64> = (0..paths).map(|p| out.y(p, 0)).collect();
        let (v0_mean, v0_se) = mean_se(&v0);
        let mut quantiles = Vec::new();
        for j in 0..n {
            for (i, &t) in grid.iter().enumerate() {
                let mut col: Vec<f64> = (0..paths).map(|p| pi[(p * m + i) * n + j]).collect();
                col.sort_by(|a, b| a.total_cmp(b));
                let q = |f: f64| col[((f * (paths - 1) as f64).round()) as usize];
                if paths > 0 {
                    quantiles.push(PiQuantiles {
                        asset: j,
                        t,
                        q05: q(0.05),
                        q25: q(0.25),
                        q50: q(0.5),
                        q75: q(0.75),
                        q95: q(0.95),
                    });
                }
            }
        }
        let report = HedgeReport { v0: v0_mean, v0_se, paths, seed, grid: grid.to_vec(), pi_quantiles: quantiles };
        Ok(Hedge { report, output: out, pi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiQuantiles {
    pub asset: usize,
    pub t: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeReport {
    /// Replication cost: mean wealth at t0.
    pub v0: f64,
    pub v0_se: f64,
    pub paths: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub pi_quantiles: Vec<PiQuantiles>,
}

#[derive(Debug, Clone)]
pub struct Hedge {
    pub report: HedgeReport,
    /// Wealth `V = Y` and `Z` along the paths.
    pub output: BsdeOutput,
    /// Positions `pi[(p * M + i) * n + j]`.
    pub pi: Vec<f64>,
}
