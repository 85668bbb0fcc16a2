//! Experiment configuration: a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vbsde::bsde::{Asset, HedgingProblem};
use vbsde::grid::{GridSpec, TimeGrid};
use vbsde::problem::{Component, ProblemSpec};
use vbsde::quad::QuadConfig;
use vbsde::{
    HurstFunction, KernelKind, KernelOptions, TerminalFn, TimeFn, VolterraKernel,
};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hedging: Option<HedgingConfig>,
    #[serde(default)]
    pub kernel_options: KernelOptionsConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub quadrature: QuadConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub commands: CommandOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub hurst: HurstFunction,
    /// Mean-reversion rate, mou only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub kernel: KernelConfig,
    #[serde(default = "zero_fn")]
    pub drift: TimeFn,
    pub sigma: TimeFn,
    #[serde(default = "zero_fn")]
    pub a2: TimeFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub components: Vec<ComponentConfig>,
    #[serde(default = "zero_fn")]
    pub a1: TimeFn,
    #[serde(default = "zero_fn")]
    pub f: TimeFn,
    pub g: TerminalFn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub kernel: KernelConfig,
    pub appreciation: TimeFn,
    pub sigma: TimeFn,
    #[serde(default = "zero_fn")]
    pub driver_drift: TimeFn,
}

/// Market model for the `hedge` command; shares `t0` and the horizon with `problem`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgingConfig {
    pub rate: TimeFn,
    pub assets: Vec<AssetConfig>,
    pub claim: TerminalFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelOptionsConfig {
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2_const: Option<f64>,
}

impl Default for KernelOptionsConfig {
    fn default() -> Self {
        let d = KernelOptions::default();
        KernelOptionsConfig { epsilon: d.epsilon, h2_const: d.h2_const }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig { paths: 10_000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a generation timestamp into every output header.
    pub timestamp: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), timestamp: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommandOptions {
    pub kernel_table: KernelTableOptions,
    pub check_hyp: CheckHypOptions,
    pub solve: SolveOptions,
    pub simulate: SimulateOptions,
    pub validate: ValidateOptions,
    pub hedge: HedgeOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelTableOptions {
    /// Interior points `k T / (points + 1)`; the table holds every pair `s < t`.
    pub points: usize,
}

impl Default for KernelTableOptions {
    fn default() -> Self {
        KernelTableOptions { points: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckHypOptions {
    /// Points per axis of the derivative-bound grid.
    pub h2_points: usize,
    /// Radius of the sample used for the growth bounds of u.
    pub growth_radius: f64,
    pub growth_points: usize,
}

impl Default for CheckHypOptions {
    fn default() -> Self {
        CheckHypOptions { h2_points: 50, growth_radius: 3.0, growth_points: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Times `t0 + i (T - t0) / times`, `i = 0..times`.
    pub times: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Points per axis; the x grid is the tensor product over components.
    pub x_points: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { times: 5, x_min: -2.0, x_max: 2.0, x_points: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    /// Overrides `monte_carlo.paths`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    pub csv: bool,
    pub binary: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions { paths: None, csv: true, binary: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateOptions {
    /// Interior times `t0 + i (T - t0) / (n + 1)`, `i = 1..=n`.
    pub residual_times: usize,
    pub residual_x_min: f64,
    pub residual_x_max: f64,
    /// Points on the diagonal `x (1, ..., 1)`.
    pub residual_x_points: usize,
    pub residual_tol: f64,
    /// Covariance check times `t0 + k (T - t0) / n`, `k = 1..=n`.
    pub cov_points: usize,
    pub cov_n_se: f64,
    pub identity_n_se: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            residual_times: 8,
            residual_x_min: -2.0,
            residual_x_max: 2.0,
            residual_x_points: 8,
            residual_tol: 1e-4,
            cov_points: 8,
            cov_n_se: 4.0,
            identity_n_se: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HedgeOptions {
    /// Overrides `monte_carlo.paths`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
}

fn zero_fn() -> TimeFn {
    TimeFn::constant(0.0)
}

fn field_err(prefix: &str, e: vbsde::Error) -> CliError {
    match e {
        vbsde::Error::InvalidParameter { field, reason } => CliError::ConfigField {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => CliError::ConfigField { field: prefix.to_string(), reason: other.to_string() },
    }
}

fn positive_count(field: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::ConfigField { field: field.into(), reason: "must be positive".into() });
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::ConfigField {
            field: field.into(),
            reason: "must be positive and finite".into(),
        });
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the compact JSON of everything except the output section.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Counts and tolerances, before any model object is built.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid.validate().map_err(|e| field_err("grid", e))?;
        self.quadrature.validate().map_err(|e| field_err("quadrature", e))?;
        positive("kernel_options.epsilon", self.kernel_options.epsilon)?;
        positive_count("monte_carlo.paths", self.monte_carlo.paths)?;
        let c = &self.commands;
        positive_count("commands.kernel_table.points", c.kernel_table.points)?;
        positive_count("commands.check_hyp.h2_points", c.check_hyp.h2_points)?;
        positive_count("commands.check_hyp.growth_points", c.check_hyp.growth_points)?;
        positive("commands.check_hyp.growth_radius", c.check_hyp.growth_radius)?;
        positive_count("commands.solve.times", c.solve.times)?;
        positive_count("commands.solve.x_points", c.solve.x_points)?;
        if let Some(p) = c.simulate.paths {
            positive_count("commands.simulate.paths", p)?;
        }
        if let Some(p) = c.hedge.paths {
            positive_count("commands.hedge.paths", p)?;
        }
        positive_count("commands.validate.residual_times", c.validate.residual_times)?;
        positive_count("commands.validate.residual_x_points", c.validate.residual_x_points)?;
        positive_count("commands.validate.cov_points", c.validate.cov_points)?;
        positive("commands.validate.residual_tol", c.validate.residual_tol)?;
        positive("commands.validate.cov_n_se", c.validate.cov_n_se)?;
        positive("commands.validate.identity_n_se", c.validate.identity_n_se)?;
        for (field, lo, hi) in [
            ("commands.solve", c.solve.x_min, c.solve.x_max),
            ("commands.validate", c.validate.residual_x_min, c.validate.residual_x_max),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CliError::ConfigField {
                    field: field.into(),
                    reason: "x range must be finite with min <= max".into(),
                });
            }
        }
        Ok(())
    }

    fn kernel_options(&self) -> KernelOptions {
        KernelOptions {
            epsilon: self.kernel_options.epsilon,
            h2_const: self.kernel_options.h2_const,
            quad: self.quadrature,
        }
    }

    fn build_kernel(&self, k: &KernelConfig, prefix: &str) -> Result<VolterraKernel, CliError> {
        VolterraKernel::new(k.kind, k.hurst.clone(), k.theta, self.problem.horizon, self.kernel_options())
            .map_err(|e| field_err(prefix, e))
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let p = &self.problem;
        let mut components = Vec::with_capacity(p.components.len());
        for (j, c) in p.components.iter().enumerate() {
            components.push(Component {
                kernel: self.build_kernel(&c.kernel, &format!("problem.components[{j}].kernel"))?,
                drift: c.drift.clone(),
                sigma: c.sigma.clone(),
                a2: c.a2.clone(),
            });
        }
        let spec = ProblemSpec::new(p.t0, p.horizon, components, p.a1.clone(), p.f.clone(), p.g.clone())
            .map_err(|e| field_err("problem", e))?;
        match p.lambda_prime {
            Some(l) => spec.with_lambda_prime(l).map_err(|e| field_err("problem", e)),
            None => Ok(spec),
        }
    }

    pub fn hedging_problem(&self) -> Result<HedgingProblem, CliError> {
        let h = self.hedging.as_ref().ok_or_else(|| CliError::ConfigField {
            field: "hedging".into(),
            reason: "the hedge command needs a hedging section".into(),
        })?;
        let mut assets = Vec::with_capacity(h.assets.len());
        for (j, a) in h.assets.iter().enumerate() {
            let prefix = format!("hedging.assets[{j}]");
            for (name, func) in [("appreciation", &a.appreciation), ("sigma", &a.sigma), ("driver_drift", &a.driver_drift)] {
                func.validate(name).map_err(|e| field_err(&prefix, e))?;
            }
            assets.push(Asset {
                kernel: self.build_kernel(&a.kernel, &format!("{prefix}.kernel"))?,
                appreciation: a.appreciation.clone(),
                sigma: a.sigma.clone(),
                driver_drift: a.driver_drift.clone(),
            });
        }
        h.rate.validate("rate").map_err(|e| field_err("hedging", e))?;
        h.claim.validate(assets.len(), "claim").map_err(|e| field_err("hedging", e))?;
        Ok(HedgingProblem {
            t0: self.problem.t0,
            horizon: self.problem.horizon,
            rate: h.rate.clone(),
            assets,
            claim: h.claim.clone(),
        })
    }

    /// The refined grid on `[t0, T]`.
    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::refined(self.problem.t0, self.problem.horizon, &self.grid).map_err(|e| field_err("grid", e))
    }

    /// The refined grid with both interval counts doubled.
    pub fn fine_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::refined(self.problem.t0, self.problem.horizon, &self.grid.doubled())
            .map_err(|e| field_err("grid", e))
    }
}
