//! The seven subcommands.

use rayon::prelude::*;
use serde::Serialize;
use vbsde::bsde::{evaluate_yz, expectation_identity_check, ExpectationReport, HedgeReport};
use vbsde::covariance::{check_h5, H5Report, VarianceProfile};
use vbsde::feynman_kac::{solution_csv, GrowthReport, PdeResidual, SolutionField};
use vbsde::kernel::{h2_grid, H2Report};
use vbsde::problem::{H3Report, H4Report, ProblemSpec};
use vbsde::simulate::{empirical_cov_check, CovCheckReport, GaussianLaw};
use vbsde::{KernelKind, TimeFn, VolterraKernel};

use crate::config::ExperimentConfig;
use crate::output::{describe, Artifacts};
use crate::{CliError, Command};

pub fn dispatch(command: Command, cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    match command {
        Command::KernelTable => kernel_table(cfg),
        Command::Variance => variance(cfg),
        Command::CheckHyp => check_hyp(cfg),
        Command::Solve => solve(cfg),
        Command::Simulate => simulate(cfg),
        Command::Validate => validate(cfg),
        Command::Hedge => hedge(cfg),
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// All points of the `n`-fold tensor grid over `axis`.
fn tensor(axis: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for _ in 0..n {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

fn components(spec: &ProblemSpec) -> Vec<(&VolterraKernel, &TimeFn)> {
    spec.components.iter().map(|c| (&c.kernel, &c.sigma)).collect()
}

/// Coefficient bounds and the growth condition, needed before u is evaluated.
pub fn require_hypotheses(spec: &ProblemSpec) -> Result<(), CliError> {
    let h3 = spec.check_h3();
    if !h3.pass {
        let detail = h3
            .violations()
            .iter()
            .map(|e| format!("{}: {}", e.field, e.detail))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(CliError::Hypothesis { hypothesis: "H3".into(), detail });
    }
    let h4 = spec.check_h4()?;
    if !h4.pass {
        return Err(CliError::Hypothesis {
            hypothesis: "H4".into(),
            detail: format!(
                "growth rate {} of g is not below the cap {} or exceeds the payoff growth",
                h4.lambda_prime, h4.cap
            ),
        });
    }
    Ok(())
}

fn kernel_table(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let spec = cfg.problem_spec()?;
    let pairs = h2_grid(spec.horizon, cfg.commands.kernel_table.points);
    let mut body = String::from("j,t,s,K,dKdt\n");
    for (j, c) in spec.components.iter().enumerate() {
        let rows = pairs
            .par_iter()
            .map(|&(s, t)| {
                let k = c.kernel.eval_k(t, s)?;
                let dk = c.kernel.eval_dkdt(t, s)?;
                Ok(format!("{j},{t},{s},{k},{dk}\n"))
            })
            .collect::<vbsde::Result<Vec<_>>>()?;
        body.extend(rows);
    }
    let art = Artifacts::new(cfg)?;
    Ok(vec![describe(&art.csv("kernel_table.csv", &body)?)])
}

fn variance(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let spec = cfg.problem_spec()?;
    let grid = cfg.time_grid()?;
    let profile = VarianceProfile::compute(&components(&spec), &grid.times)?;
    let art = Artifacts::new(cfg)?;
    Ok(vec![describe(&art.csv("variance.csv", &profile.to_csv())?)])
}

#[derive(Debug, Serialize)]
struct H2Entry {
    component: usize,
    kind: KernelKind,
    #[serde(flatten)]
    report: H2Report,
}

#[derive(Debug, Serialize)]
struct HypothesisReport {
    pass: bool,
    failed: Vec<String>,
    h2: Vec<H2Entry>,
    h3: H3Report,
    h4: H4Report,
    /// Computed only when the coefficient bounds and the variance condition hold.
    growth: Option<GrowthReport>,
    h5: H5Report,
}

fn check_hyp(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let spec = cfg.problem_spec()?;
    let opts = &cfg.commands.check_hyp;
    let pairs = h2_grid(spec.horizon, opts.h2_points);
    let mut h2 = Vec::new();
    for (j, c) in spec.components.iter().enumerate() {
        h2.push(H2Entry { component: j, kind: c.kernel.kind(), report: c.kernel.verify_h2(&pairs)? });
    }
    let h3 = spec.check_h3();
    let h4 = spec.check_h4()?;
    let grid = cfg.time_grid()?;
    let profile = VarianceProfile::compute(&components(&spec), &grid.times)?;
    let h5 = check_h5(&components(&spec), &profile)?;
    let growth = if h3.pass && h5.pass {
        let field = SolutionField::new(&spec)?;
        let times: Vec<f64> = (0..4).map(|i| spec.t0 + (spec.horizon - spec.t0) * i as f64 / 4.0).collect();
        let axis = linspace(-opts.growth_radius, opts.growth_radius, opts.growth_points);
        let n = spec.dim();
        let sample: Vec<(f64, Vec<f64>)> = times
            .iter()
            .flat_map(|&t| axis.iter().map(move |&x| (t, vec![x; n])))
            .collect();
        Some(field.growth_check(&sample)?)
    } else {
        None
    };

    let mut failed = Vec::new();
    if !h2.iter().all(|e| e.report.pass) {
        failed.push("H2".to_string());
    }
    if !h3.pass {
        failed.push("H3".to_string());
    }
    if !h4.pass || growth.as_ref().is_some_and(|g| !g.pass) {
        failed.push("H4".to_string());
    }
    if !h5.pass {
        failed.push("H5".to_string());
    }
    let report = HypothesisReport { pass: failed.is_empty(), failed: failed.clone(), h2, h3, h4, growth, h5 };
    let art = Artifacts::new(cfg)?;
    let path = art.json("hypotheses.json", "check-hyp", &report)?;
    if !report.pass {
        return Err(CliError::Hypothesis {
            hypothesis: failed.join(", "),
            detail: format!("see {}", path.display()),
        });
    }
    Ok(vec![describe(&path), "all hypotheses hold".into()])
}

fn solve(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let spec = cfg.problem_spec()?;
    require_hypotheses(&spec)?;
    let field = SolutionField::new(&spec)?;
    let opts = &cfg.commands.solve;
    let xs = tensor(&linspace(opts.x_min, opts.x_max, opts.x_points), spec.dim());
    let mut evals = Vec::new();
    for i in 0..opts.times {
        let t = spec.t0 + (spec.horizon - spec.t0) * i as f64 / opts.times as f64;
        let slice = field.slice(t)?;
        let row = xs.par_iter().map(|x| slice.eval(x)).collect::<vbsde::Result<Vec<_>>>()?;
        evals.extend(row);
    }
    let art = Artifacts::new(cfg)?;
    let mut lines = vec![describe(&art.csv("solution.csv", &solution_csv(&evals))?)];
    let unsettled = evals.iter().filter(|e| !e.converged).count();
    if unsettled > 0 {
        lines.push(format!("warning: {unsettled} points reached the quadrature node cap"));
    }
    Ok(lines)
}

fn simulate(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let spec = cfg.problem_spec()?;
    let grid = cfg.time_grid()?;
    let opts = &cfg.commands.simulate;
    let paths = opts.paths.unwrap_or(cfg.monte_carlo.paths);
    let law = GaussianLaw::from_spec(&spec, &grid.times)?;
    let ens = law.sample(paths, cfg.monte_carlo.seed);
    let art = Artifacts::new(cfg)?;
    let mut lines = Vec::new();
    if opts.csv {
        lines.push(describe(&art.csv("paths.csv", &ens.to_csv())?));
    }
    if opts.binary {
        let mut bytes = Vec::new();
        ens.write_binary(&mut bytes, Some(art.hash()))?;
        lines.push(describe(&art.binary("paths.bin", &bytes)?));
    }
    Ok(lines)
}

#[derive(Debug, Serialize)]
pub struct ResidualReport {
    pub tolerance: f64,
    pub max_relative: f64,
    pub pass: bool,
    pub points: Vec<PdeResidual>,
}

#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub seed: u64,
    pub pde_residual: ResidualReport,
    pub expectation_identity: ExpectationReport,
    pub covariance: CovCheckReport,
}

/// Runs the three property checks without writing anything.
pub fn validation_report(cfg: &ExperimentConfig) -> Result<ValidationReport, CliError> {
    let spec = cfg.problem_spec()?;
    require_hypotheses(&spec)?;
    let field = SolutionField::new(&spec)?;
    let opts = &cfg.commands.validate;
    let (t0, horizon, n) = (spec.t0, spec.horizon, spec.dim());
    let seed = cfg.monte_carlo.seed;
    let paths = cfg.monte_carlo.paths;

    let rt = opts.residual_times;
    let times: Vec<f64> = (1..=rt).map(|i| t0 + (horizon - t0) * i as f64 / (rt + 1) as f64).collect();
    let xs: Vec<Vec<f64>> = linspace(opts.residual_x_min, opts.residual_x_max, opts.residual_x_points)
        .into_iter()
        .map(|x| vec![x; n])
        .collect();
    let points = field.pde_residual_grid(&times, &xs)?;
    let max_relative = points.iter().map(|r| r.relative()).fold(0.0, f64::max);
    let pde_residual = ResidualReport {
        tolerance: opts.residual_tol,
        max_relative,
        pass: points.iter().all(|r| r.relative() <= opts.residual_tol),
        points,
    };

    let fine = cfg.fine_grid()?;
    let ens = GaussianLaw::from_spec(&spec, &fine.times)?.sample(paths, seed);
    let out = evaluate_yz(&field, &ens)?;
    let expectation_identity = expectation_identity_check(&spec, &out, &ens, opts.identity_n_se)?;
    drop((out, ens));

    let cp = opts.cov_points;
    let cov_times: Vec<f64> = (1..=cp).map(|k| t0 + (horizon - t0) * k as f64 / cp as f64).collect();
    let cov_ens = GaussianLaw::from_spec(&spec, &cov_times)?.sample(paths, seed);
    let covariance = empirical_cov_check(&cov_ens, opts.cov_n_se);

    Ok(ValidationReport {
        pass: pde_residual.pass && expectation_identity.pass && covariance.pass,
        seed,
        pde_residual,
        expectation_identity,
        covariance,
    })
}

fn validate(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let report = validation_report(cfg)?;
    let art = Artifacts::new(cfg)?;
    let path = art.json("validation.json", "validate", &report)?;
    if !report.pass {
        let mut failed = Vec::new();
        if !report.pde_residual.pass {
            failed.push("pde_residual");
        }
        if !report.expectation_identity.pass {
            failed.push("expectation_identity");
        }
        if !report.covariance.pass {
            failed.push("covariance");
        }
        return Err(CliError::CheckFailed {
            command: "validate".into(),
            detail: failed.join(", "),
            report: path,
        });
    }
    Ok(vec![describe(&path), "all checks pass".into()])
}

#[derive(Debug, Serialize)]
struct HedgeSummary {
    /// `exp(-int r)` over `[t0, T]`, the price of a unit riskless claim.
    zero_coupon: f64,
    #[serde(flatten)]
    report: HedgeReport,
}

fn hedge(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let hp = cfg.hedging_problem()?;
    let spec = hp.to_spec()?;
    require_hypotheses(&spec)?;
    let grid = cfg.time_grid()?;
    let paths = cfg.commands.hedge.paths.unwrap_or(cfg.monte_carlo.paths);
    let h = hp.hedge(&grid.times, paths, cfg.monte_carlo.seed)?;
    let summary = HedgeSummary { zero_coupon: (-hp.rate.integral(hp.t0, hp.horizon)).exp(), report: h.report };
    let art = Artifacts::new(cfg)?;
    Ok(vec![describe(&art.json("hedge.json", "hedge", &summary)?)])
}
