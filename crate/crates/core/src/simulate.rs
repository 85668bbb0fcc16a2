//! Exact Gaussian sampling of the drivers on a time grid.
//!
//! Each component `N^j = b^j + L_j xi` uses its own factor `L_j` of the grid
//! covariance. Normals for path `p` and component `j` come from a ChaCha8 stream:
//! the generator is seeded with `seed` and switched to stream `p * n + j`, then
//! emits one standard normal per grid time in order. Paths are therefore
//! independent of thread count and scheduling.
//!
//! Binary layout (all integers u64 and floats f64, little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | `b"VBSDE1\0\0"` |
//! | 8 | number of paths P |
//! | 8 | number of grid times M |
//! | 8 | dimension n |
//! | 8 | seed |
//! | 32 | config hash (zero when absent) |
//! | 8 M | grid times |
//! | 8 P M n | values, row-major in (path, time, component) |

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::cov_n;
use crate::functions::TimeFn;
use crate::kernel::VolterraKernel;
use crate::problem::ProblemSpec;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VBSDE1\0\0";
/// Negative eigenvalues below `-PSD_TOL * |C|` are rejected; milder ones are clipped.
pub const PSD_TOL: f64 = 1e-10;

/// `C[i,k] = Cov(N_{t_i}, N_{t_k})` for one component.
pub fn build_covariance(kernel: &VolterraKernel, sigma: &TimeFn, grid: &[f64]) -> Result<DMatrix<f64>> {
    check_grid(grid, kernel.horizon())?;
    let m = grid.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |k| (i, k))).collect();
    let vals = pairs
        .par_iter()
        .map(|&(i, k)| cov_n(kernel, sigma, grid[i], grid[k]))
        .collect::<Result<Vec<_>>>()?;
    let mut c = DMatrix::zeros(m, m);
    for (&(i, k), v) in pairs.iter().zip(vals) {
        c[(i, k)] = v;
        c[(k, i)] = v;
    }
    Ok(c)
}

fn check_grid(grid: &[f64], horizon: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must contain at least one time"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("grid", "times must be strictly increasing"));
    }
    if grid[0] < 0.0 || grid[grid.len() - 1] > horizon * (1.0 + 1e-12) {
        return Err(Error::param("grid", format!("times must lie in [0, {horizon}]")));
    }
    Ok(())
}

/// A factor L with `L L^T = C` from the symmetric eigendecomposition.
///
/// Rows with zero variance stay exactly zero so deterministic times reproduce
/// the drift bit for bit.
pub fn psd_factor(c: &DMatrix<f64>, component: usize) -> Result<DMatrix<f64>> {
    let m = c.nrows();
    if c.ncols() != m {
        return Err(Error::param("covariance", "matrix must be square"));
    }
    let live: Vec<usize> = (0..m).filter(|&i| c[(i, i)] != 0.0).collect();
    let mut l = DMatrix::zeros(m, m);
    if live.is_empty() {
        return Ok(l);
    }
    for i in (0..m).filter(|i| !live.contains(i)) {
        if (0..m).any(|k| c[(i, k)] != 0.0) {
            return Err(Error::NotPsd {
                component,
                min_eigenvalue: f64::NAN,
                norm: c.amax(),
            });
        }
    }
    let r = live.len();
    let sub = DMatrix::from_fn(r, r, |a, b| 0.5 * (c[(live[a], live[b])] + c[(live[b], live[a])]));
    let eig = SymmetricEigen::new(sub);
    let norm = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * norm {
        return Err(Error::NotPsd { component, min_eigenvalue: min, norm });
    }
    for (a, &i) in live.iter().enumerate() {
        for b in 0..r {
            let lam = eig.eigenvalues[b].max(0.0);
            l[(i, live[b])] = eig.eigenvectors[(a, b)] * lam.sqrt();
        }
    }
    Ok(l)
}

/// The joint law of the drivers on a grid.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    pub grid: Vec<f64>,
    /// `b^j(t_i)` per component.
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl GaussianLaw {
    pub fn new(grid: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if means.len() != covariances.len() || means.is_empty() {
            return Err(Error::param("law", "need one mean vector per covariance matrix"));
        }
        let m = grid.len();
        for (j, (mu, c)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != m || c.nrows() != m || c.ncols() != m {
                return Err(Error::param(format!("law[{j}]"), "sizes do not match the grid"));
            }
        }
        let factors = covariances
            .iter()
            .enumerate()
            .map(|(j, c)| psd_factor(c, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, means, covariances, factors })
    }

    pub fn from_spec(spec: &ProblemSpec, grid: &[f64]) -> Result<Self> {
        let means = spec
            .components
            .iter()
            .map(|c| grid.iter().map(|&t| c.drift.eval(t)).collect())
            .collect();
        let covs = spec
            .components
            .iter()
            .map(|c| build_covariance(&c.kernel, &c.sigma, grid))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid.to_vec(), means, covs)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn sample(&self, paths: usize, seed: u64) -> PathEnsemble {
        let m = self.grid.len();
        let n = self.dim();
        let mut data = vec![0.0; paths * m * n];
        data.par_chunks_mut(m * n).enumerate().for_each(|(p, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for j in 0..n {
                rng.set_stream((p * n + j) as u64);
                rng.set_word_pos(0);
                let xi = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
                let v = &self.factors[j] * xi;
                for i in 0..m {
                    chunk[i * n + j] = self.means[j][i] + v[i];
                }
            }
        });
        PathEnsemble {
            grid: self.grid.clone(),
            dim: n,
            paths,
            seed,
            data,
            means: self.means.clone(),
            covariances: self.covariances.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: Vec<f64>,
    pub dim: usize,
    pub paths: usize,
    pub seed: u64,
    /// Values in (path, time, component) order.
    pub data: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl PathEnsemble {
    pub fn value(&self, p: usize, i: usize, j: usize) -> f64 {
        self.data[(p * self.grid.len() + i) * self.dim + j]
    }

    /// The n-vector `N_{t_i}` on path p.
    pub fn point(&self, p: usize, i: usize) -> &[f64] {
        let start = (p * self.grid.len() + i) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("path_id,t");
        for j in 1..=self.dim {
            s.push_str(&format!(",N{j}"));
        }
        s.push('\n');
        for p in 0..self.paths {
            for (i, t) in self.grid.iter().enumerate() {
                s.push_str(&format!("{p},{t}"));
                for v in self.point(p, i) {
                    s.push_str(&format!(",{v}"));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn write_binary<W: Write>(&self, mut w: W, config_hash: Option<&[u8; 32]>) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.paths as u64, self.grid.len() as u64, self.dim as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(config_hash.unwrap_or(&[0u8; 32]))?;
        for v in self.grid.iter().chain(&self.data) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Paths read back from the binary form.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryEnsemble {
    pub grid: Vec<f64>,
    pub dim: usize,
    pub paths: usize,
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub data: Vec<f64>,
}

pub fn read_binary<R: Read>(mut r: R) -> Result<BinaryEnsemble> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("not a VBSDE1 ensemble".into()));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let paths = next(&mut r)? as usize;
    let m = next(&mut r)? as usize;
    let dim = next(&mut r)? as usize;
    let seed = next(&mut r)?;
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash)?;
    let mut floats = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let grid = floats(m)?;
    let data = floats(paths * m * dim)?;
    Ok(BinaryEnsemble { grid, dim, paths, seed, config_hash, data })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovEntry {
    pub component: usize,
    pub i: usize,
    pub k: usize,
    pub empirical: f64,
    pub expected: f64,
    pub standard_error: f64,
}

impl CovEntry {
    pub fn z_score(&self) -> f64 {
        let d = (self.empirical - self.expected).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.standard_error
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovCheckReport {
    pub paths: usize,
    pub entries_checked: usize,
    pub max_z: f64,
    pub failures: Vec<CovEntry>,
    pub pass: bool,
}

/// Empirical `E[(N_i - b_i)(N_k - b_k)]` against the quadrature covariance.
///
/// The standard error of the centred product mean is `sqrt((C_ii C_kk + C_ik^2) / P)`.
pub fn empirical_cov_check(ens: &PathEnsemble, n_se: f64) -> CovCheckReport {
    let m = ens.grid.len();
    let mut failures = Vec::new();
    let mut max_z = 0.0f64;
    let mut checked = 0;
    if ens.paths > 0 {
        for j in 0..ens.dim {
            let c = &ens.covariances[j];
            let mut acc = DMatrix::<f64>::zeros(m, m);
            let mut dev = vec![0.0; m];
            for p in 0..ens.paths {
                for (i, d) in dev.iter_mut().enumerate() {
                    *d = ens.value(p, i, j) - ens.means[j][i];
                }
                for i in 0..m {
                    for k in i..m {
                        acc[(i, k)] += dev[i] * dev[k];
                    }
                }
            }
            let pf = ens.paths as f64;
            for i in 0..m {
                for k in i..m {
                    let e = CovEntry {
                        component: j,
                        i,
                        k,
                        empirical: acc[(i, k)] / pf,
                        expected: c[(i, k)],
                        standard_error: ((c[(i, i)] * c[(k, k)] + c[(i, k)] * c[(i, k)]) / pf).sqrt(),
                    };
                    let z = e.z_score();
                    max_z = max_z.max(z);
                    checked += 1;
                    if !(z <= n_se) {
                        failures.push(e);
                    }
                }
            }
        }
    }
    CovCheckReport {
        paths: ens.paths,
        entries_checked: checked,
        max_z,
        pass: failures.is_empty(),
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub component: usize,
    pub t: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub pass: bool,
}

/// Skewness and excess kurtosis of standardised marginals, with standard errors
/// `sqrt(6/P)` and `sqrt(24/P)`; deterministic times are skipped.
pub fn moment_check(ens: &PathEnsemble, n_se: f64) -> Vec<MomentRow> {
    let mut rows = Vec::new();
    let pf = ens.paths as f64;
    if ens.paths == 0 {
        return rows;
    }
    for j in 0..ens.dim {
        for (i, &t) in ens.grid.iter().enumerate() {
            let var = ens.covariances[j][(i, i)];
            if var <= 0.0 {
                continue;
            }
            let sd = var.sqrt();
            let (mut m3, mut m4) = (0.0, 0.0);
            for p in 0..ens.paths {
                let z = (ens.value(p, i, j) - ens.means[j][i]) / sd;
                let z2 = z * z;
                m3 += z2 * z;
                m4 += z2 * z2;
            }
            let skewness = m3 / pf;
            let excess_kurtosis = m4 / pf - 3.0;
            let pass = skewness.abs() <= n_se * (6.0 / pf).sqrt()
                && excess_kurtosis.abs() <= n_se * (24.0 / pf).sqrt();
            rows.push(MomentRow { component: j, t, skewness, excess_kurtosis, pass });
        }
    }
    rows
}

/// Largest z-score of the cross-covariance between distinct components at equal times.
pub fn cross_component_max_z(ens: &PathEnsemble) -> f64 {
    let pf = ens.paths as f64;
    let mut max_z = 0.0f64;
    for a in 0..ens.dim {
        for b in a + 1..ens.dim {
            for i in 0..ens.grid.len() {
                let va = ens.covariances[a][(i, i)];
                let vb = ens.covariances[b][(i, i)];
                if va <= 0.0 || vb <= 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for p in 0..ens.paths {
                    s += (ens.value(p, i, a) - ens.means[a][i]) * (ens.value(p, i, b) - ens.means[b][i]);
                }
                let se = (va * vb / pf).sqrt();
                max_z = max_z.max((s / pf).abs() / se);
            }
        }
    }
    max_z
}
