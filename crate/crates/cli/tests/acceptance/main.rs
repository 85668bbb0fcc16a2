//! Acceptance criteria 1-10, one PASS/FAIL line each, plus command-line behaviour.

mod cli_runner;

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use vbsde::bsde::{evaluate_yz, expectation_identity_check, HedgingProblem, Asset};
use vbsde::covariance::{check_h5, phi, var_n, VarianceProfile};
use vbsde::feynman_kac::SolutionField;
use vbsde::grid::{GridSpec, TimeGrid};
use vbsde::problem::{Component, ProblemSpec};
use vbsde::simulate::{empirical_cov_check, GaussianLaw};
use vbsde::{TerminalFn, TimeFn, VolterraKernel};
use vbsde_cli::ExperimentConfig;

/// `Var(X_1)` for the fbm kernel with H = 3/4, from the closed-form covariance.
const C_FBM: f64 = 13.984_306_956_224_6;

/// Writes past the test harness capture so every criterion line is always shown.
fn report(n: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2} [{name}]: {verdict} {detail}");
    let _ = out.flush();
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn fbm_problem(a2: f64, a1: f64, f: f64, g: TerminalFn) -> ProblemSpec {
    let comp = Component {
        kernel: VolterraKernel::fbm(0.75, 1.0).unwrap(),
        drift: TimeFn::constant(0.0),
        sigma: TimeFn::constant(1.0),
        a2: TimeFn::constant(a2),
    };
    ProblemSpec::new(0.0, 1.0, vec![comp], TimeFn::constant(a1), TimeFn::constant(f), g).unwrap()
}

#[test]
fn criterion_01_fbm_self_similarity() {
    let start = Instant::now();
    let k = VolterraKernel::fbm(0.75, 1.0).unwrap();
    let one = TimeFn::constant(1.0);
    let c = var_n(&k, &one, 1.0).unwrap();
    let mut worst = 0.0f64;
    for t in [0.25, 0.5, 0.75, 1.0] {
        let v = var_n(&k, &one, t).unwrap();
        worst = worst.max(rel(v / t.powf(1.5), c));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs < 10.0;
    report(1, "fbm self-similarity", pass, format!("max rel dev {worst:.2e} (tol 1e-4), {secs:.2}s (< 10s)"));
    assert!(pass);
}

#[test]
fn criterion_02_phi_power_law() {
    let k = VolterraKernel::fbm(0.75, 1.0).unwrap();
    let pairs = [
        (0.1, 0.9),
        (0.2, 0.25),
        (0.3, 0.7),
        (0.45, 0.5),
        (0.5, 0.95),
        (0.6, 0.65),
        (0.7, 0.2),
        (0.8, 0.05),
        (0.9, 1.0),
        (1.0, 0.35),
    ];
    let scaled: Vec<f64> = pairs
        .iter()
        .map(|&(r, s)| phi(&k, r, s).unwrap() * (r - s).abs().powf(0.5))
        .collect();
    let worst = scaled.iter().map(|&v| rel(v, scaled[0])).fold(0.0, f64::max);
    let positive = scaled.iter().all(|&v| v > 0.0);
    let pass = worst <= 1e-4 && positive;
    report(
        2,
        "phi power law",
        pass,
        format!("constant {:.10}, max rel dev {worst:.2e} (tol 1e-4)", scaled[0]),
    );
    assert!(pass);
}

#[test]
fn criterion_03_h5_exponent() {
    let k = VolterraKernel::fbm(0.75, 1.0).unwrap();
    let one = TimeFn::constant(1.0);
    let grid = TimeGrid::refined(0.0, 1.0, &GridSpec::default()).unwrap();
    let comps = [(&k, &one)];
    let profile = VarianceProfile::compute(&comps, &grid.times).unwrap();
    let h5 = check_h5(&comps, &profile).unwrap();
    let a = h5.components[0].fitted_a;
    let pass = (a - 1.25).abs() <= 0.05;
    report(3, "(H5) exponent", pass, format!("fitted a = {a:.6}, expected 1.25 +- 0.05"));
    assert!(pass, "fitted a = {a}");
}

#[test]
fn criterion_04_feynman_kac_closed_forms() {
    let linear = TerminalFn::Polynomial2 { constant: 0.0, linear: vec![1.0], quadratic: vec![0.0] };
    let square = TerminalFn::Polynomial2 { constant: 0.0, linear: vec![0.0], quadratic: vec![1.0] };
    let a2 = 0.1;
    let mut worst = 0.0f64;
    for (g, quadratic) in [(linear, false), (square, true)] {
        let spec = fbm_problem(a2, 0.0, 0.0, g);
        let field = SolutionField::new(&spec).unwrap();
        for i in 0..5 {
            let t = i as f64 / 5.0;
            let m = a2 * (1.0 - t);
            let d = C_FBM * (1.0 - t.powf(1.5));
            for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                let expected = if quadratic { (x - m) * (x - m) + d } else { x - m };
                worst = worst.max(rel(field.solve_u(t, &[x]).unwrap(), expected));
            }
        }
    }
    let pass = worst <= 1e-8;
    report(4, "Feynman-Kac closed forms", pass, format!("max rel err {worst:.2e} (tol 1e-8)"));
    assert!(pass);
}

#[test]
fn criterion_05_pde_residual() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["fbm_quadratic.json", "mbm_exponential.json"] {
        let cfg = config(name);
        let spec = cfg.problem_spec().unwrap();
        let field = SolutionField::new(&spec).unwrap();
        let times: Vec<f64> = (1..=8).map(|i| i as f64 / 9.0).collect();
        let xs: Vec<Vec<f64>> = (0..8).map(|k| vec![-2.0 + 4.0 * k as f64 / 7.0; spec.dim()]).collect();
        let res = field.pde_residual_grid(&times, &xs).unwrap();
        let worst = res.iter().map(|r| r.residual.abs() / r.max_term).fold(0.0, f64::max);
        pass &= res.len() == 64 && worst <= 1e-4;
        details.push(format!("{name} worst {worst:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    report(5, "PDE residual", pass, format!("{} (tol 1e-4), {secs:.2}s (< 60s)", details.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_06_derivative_checks() {
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    let mut checked = 0;
    for name in ["fbm_quadratic.json", "mbm_exponential.json"] {
        let cfg = config(name);
        let spec = cfg.problem_spec().unwrap();
        let field = SolutionField::new(&spec).unwrap();
        let n = spec.dim();
        for t in [0.0, 0.3, 0.6, 0.9, 0.99] {
            let params = field.params(t).unwrap();
            if params.iter().any(|p| p.variance < 1e-3) {
                continue;
            }
            for x0 in [-1.5, 0.0, 0.7, 2.0] {
                let x: Vec<f64> = (0..n).map(|j| x0 + 0.3 * j as f64).collect();
                let grad = field.grad_u(t, &x).unwrap();
                let hess = field.hess_diag_u(t, &x).unwrap();
                let u0 = field.solve_u(t, &x).unwrap();
                for j in 0..n {
                    let at = |h: f64| {
                        let mut y = x.clone();
                        y[j] += h;
                        field.solve_u(t, &y).unwrap()
                    };
                    let hg = 1e-4;
                    let fd_grad = (at(hg) - at(-hg)) / (2.0 * hg);
                    let hh = 1e-2;
                    let fd_hess = (at(hh) - 2.0 * u0 + at(-hh)) / (hh * hh);
                    worst_grad = worst_grad.max(rel(grad[j], fd_grad));
                    worst_hess = worst_hess.max(rel(hess[j], fd_hess));
                    checked += 1;
                }
            }
        }
    }
    let pass = checked > 0 && worst_grad <= 1e-5 && worst_hess <= 1e-4;
    report(
        6,
        "derivative checks",
        pass,
        format!("{checked} checks, grad rel {worst_grad:.2e} (tol 1e-5), hess rel {worst_hess:.2e} (tol 1e-4)"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_covariance_simulation() {
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["fbm_quadratic.json", "mbm_exponential.json"] {
        let cfg = config(name);
        let spec = cfg.problem_spec().unwrap();
        let grid: Vec<f64> = (1..=8).map(|k| k as f64 / 8.0).collect();
        let ens = GaussianLaw::from_spec(&spec, &grid).unwrap().sample(100_000, cfg.monte_carlo.seed);
        let rep = empirical_cov_check(&ens, 4.0);
        pass &= rep.pass && rep.entries_checked == 36 * spec.dim();
        details.push(format!("{name} {} entries, max z {:.2}", rep.entries_checked, rep.max_z));
    }
    report(7, "covariance/simulation", pass, format!("{} (tol 4 SE)", details.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_08_expectation_identity() {
    let start = Instant::now();
    let cfg = config("fbm_quadratic.json");
    let spec = cfg.problem_spec().unwrap();
    let field = SolutionField::new(&spec).unwrap();
    let grid = TimeGrid::refined(0.0, 1.0, &GridSpec::default().doubled()).unwrap();
    let ens = GaussianLaw::from_spec(&spec, &grid.times).unwrap().sample(100_000, cfg.monte_carlo.seed);
    let out = evaluate_yz(&field, &ens).unwrap();
    let rep = expectation_identity_check(&spec, &out, &ens, 3.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let bound = 3.0 * rep.combined_se + rep.allowance;
    let pass = rep.pass && rep.difference.abs() <= bound * (1.0 + 1e-12) && secs < 300.0;
    report(
        8,
        "BSDE expectation identity",
        pass,
        format!(
            "a = {:.6}, b = {:.6}, |a - b| = {:.3e} <= {:.3e} (3 SE + allowance {:.2e}), {} grid points, {secs:.1}s (< 300s)",
            rep.side_a,
            rep.side_b,
            rep.difference.abs(),
            bound,
            rep.allowance,
            grid.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_hedging_sanity() {
    let rate = TimeFn::linear(0.02, 0.01);
    let hp = HedgingProblem {
        t0: 0.0,
        horizon: 1.0,
        rate: rate.clone(),
        assets: vec![Asset {
            kernel: VolterraKernel::fbm(0.75, 1.0).unwrap(),
            appreciation: TimeFn::constant(0.08),
            sigma: TimeFn::constant(0.25),
            driver_drift: TimeFn::constant(0.0),
        }],
        claim: TerminalFn::Constant { value: 1.0 },
    };
    let grid = TimeGrid::refined(0.0, 1.0, &GridSpec::default()).unwrap();
    let h = hp.hedge(&grid.times, 200, 7).unwrap();
    let exact = (-(0.02 + 0.005f64)).exp();
    let err = (h.report.v0 - exact).abs();
    let pi_zero = h.pi.iter().all(|&p| p == 0.0);
    let pass = err <= 1e-10 && pi_zero;
    report(
        9,
        "hedging sanity",
        pass,
        format!("|V0 - exp(-int r)| = {err:.2e} (tol 1e-10), pi identically zero: {pi_zero}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_vbsde"))
            .arg("--config")
            .arg(config_path("fbm_quadratic.json"))
            .arg("--out")
            .arg(&out)
            .arg("--no-timestamp")
            .arg("validate")
            .output()
            .unwrap();
        (status, std::fs::read(out.join("validation.json")).unwrap())
    };
    let (first, a) = run("a");
    let (second, b) = run("b");
    let exit_ok = first.status.code() == Some(0) && second.status.code() == Some(0);
    let report_json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let all_pass = report_json["pass"] == serde_json::Value::Bool(true);
    let identical = a == b;
    let pass = exit_ok && all_pass && identical;
    report(
        10,
        "determinism",
        pass,
        format!("exit codes {:?}/{:?}, report all-pass {all_pass}, byte-identical {identical} ({} bytes)",
            first.status.code(), second.status.code(), a.len()),
    );
    assert!(pass);
}
