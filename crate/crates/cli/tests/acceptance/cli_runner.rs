//! Exit codes, diagnostics and artifact provenance of the `vbsde` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use vbsde::simulate::read_binary;
use vbsde::{HurstFunction, TerminalFn, TimeFn};
use vbsde_cli::config::{ComponentConfig, KernelConfig};
use vbsde_cli::ExperimentConfig;

const SMALL: &str = r#"{
  "problem": {
    "horizon": 1.0,
    "components": [
      {
        "kernel": { "kind": "fbm", "hurst": { "preset": "constant", "value": 0.75 } },
        "sigma": { "preset": "constant", "value": 1.0 },
        "a2": { "preset": "constant", "value": 0.1 }
      }
    ],
    "a1": { "preset": "constant", "value": 0.05 },
    "f": { "preset": "constant", "value": 0.01 },
    "g": { "preset": "polynomial2", "constant": 0.0, "linear": [0.0], "quadratic": [1.0] }
  },
  "hedging": {
    "rate": { "preset": "constant", "value": 0.03 },
    "assets": [
      {
        "kernel": { "kind": "fbm", "hurst": { "preset": "constant", "value": 0.75 } },
        "appreciation": { "preset": "constant", "value": 0.07 },
        "sigma": { "preset": "constant", "value": 0.2 }
      }
    ],
    "claim": { "preset": "polynomial2", "constant": 0.0, "linear": [1.0], "quadratic": [0.0] }
  },
  "grid": { "intervals": 16, "refine_fraction": 0.1, "refine_intervals": 4, "ratio": 0.5 },
  "monte_carlo": { "paths": 300, "seed": 11 },
  "commands": {
    "kernel_table": { "points": 5 },
    "check_hyp": { "h2_points": 12, "growth_radius": 2.0, "growth_points": 3 },
    "solve": { "times": 3, "x_min": -1.0, "x_max": 1.0, "x_points": 3 }
  }
}"#;

fn vbsde(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vbsde"));
    for var in ["VBSDE_CONFIG", "VBSDE_OUT", "VBSDE_SEED", "VBSDE_THREADS", "VBSDE_NO_TIMESTAMP"] {
        cmd.env_remove(var);
    }
    cmd.args(args).envs(envs.iter().copied()).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_in(dir: &Path, cfg: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    vbsde(&args, &[])
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn bundled_configs_round_trip() {
    for name in ["fbm_quadratic.json", "mbm_exponential.json"] {
        let path = bundled(name);
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        let text = cfg.to_json();
        let again = ExperimentConfig::from_json(&text, &path).unwrap();
        assert_eq!(cfg, again, "{name}");
        assert_eq!(text, again.to_json());
        assert_eq!(cfg.hash_hex(), again.hash_hex());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip_is_identity(
        horizon in 0.1f64..10.0,
        hurst in 0.5001f64..0.98,
        slope in -0.1f64..0.1,
        sigma in -3.0f64..3.0,
        coeffs in proptest::collection::vec(-1.0f64..1.0, 1..4),
        paths in 1usize..1_000_000,
        seed in any::<u64>(),
        tol in 1e-12f64..1e-3,
    ) {
        let mut cfg = ExperimentConfig::from_json(SMALL, Path::new("small.json")).unwrap();
        cfg.problem.horizon = horizon;
        cfg.problem.components = coeffs
            .iter()
            .map(|&c| ComponentConfig {
                kernel: KernelConfig {
                    kind: vbsde::KernelKind::Mbm,
                    hurst: HurstFunction::linear(hurst, slope),
                    theta: None,
                },
                drift: TimeFn::linear(c, sigma),
                sigma: TimeFn::constant(sigma),
                a2: TimeFn::Piecewise { points: vec![[0.0, c], [horizon, sigma]] },
            })
            .collect();
        cfg.problem.g = TerminalFn::ExpLinear { scale: sigma, coeffs: coeffs.clone() };
        cfg.problem.lambda_prime = Some(tol);
        cfg.monte_carlo.paths = paths;
        cfg.monte_carlo.seed = seed;
        cfg.quadrature.rel_tol = tol;
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text, Path::new("generated.json")).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}

#[test]
fn missing_config_file_names_the_path() {
    let o = vbsde(&["--config", "/nonexistent/dir/experiment.json", "solve"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/dir/experiment.json"), "{}", stderr(&o));
}

#[test]
fn no_config_is_a_config_error() {
    let o = vbsde(&["variance"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn unknown_field_reports_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"horizon\": 1.0", "\"horizon\": 1.0,\n    \"horizn\": 2.0");
    let cfg = write(dir.path(), "typo.json", &text);
    let o = run_in(dir.path(), &cfg, "out", &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("horizn") && err.contains("line 4"), "{err}");
    assert!(err.contains("typo.json"), "{err}");
}

#[test]
fn malformed_json_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"problem\": {\n    \"horizon\": ,\n");
    let o = run_in(dir.path(), &cfg, "out", &["variance"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_preset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"preset\": \"polynomial2\", \"constant\": 0.0, \"linear\": [0.0]", "\"preset\": \"cubic\", \"constant\": 0.0, \"linear\": [0.0]");
    let cfg = write(dir.path(), "preset.json", &text);
    let o = run_in(dir.path(), &cfg, "out", &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cubic"), "{}", stderr(&o));
}

#[test]
fn non_positive_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (from, to, field) in [
        ("\"paths\": 300", "\"paths\": 0", "monte_carlo.paths"),
        ("\"points\": 5", "\"points\": 0", "commands.kernel_table.points"),
        ("\"intervals\": 16", "\"intervals\": 0", "grid"),
    ] {
        let cfg = write(dir.path(), "zero.json", &SMALL.replace(from, to));
        let o = run_in(dir.path(), &cfg, "out", &["variance"]);
        assert_eq!(o.status.code(), Some(2), "{field}");
        assert!(stderr(&o).contains(field), "{field}: {}", stderr(&o));
    }
}

#[test]
fn invalid_hurst_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replacen("\"value\": 0.75", "\"value\": 0.4", 1);
    let cfg = write(dir.path(), "hurst.json", &text);
    let o = run_in(dir.path(), &cfg, "out", &["kernel-table"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("problem.components[0].kernel.hurst"), "{}", stderr(&o));
}

#[test]
fn zero_volatility_solve_names_h3() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replacen("\"sigma\": { \"preset\": \"constant\", \"value\": 1.0 }", "\"sigma\": { \"preset\": \"constant\", \"value\": 0.0 }", 1);
    let cfg = write(dir.path(), "flat.json", &text);
    let o = run_in(dir.path(), &cfg, "out", &["solve"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("H3") && err.contains("components[0].sigma"), "{err}");
    assert!(!dir.path().join("out/solution.csv").exists());

    let o = run_in(dir.path(), &cfg, "out", &["check-hyp"]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/hypotheses.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    let failed: Vec<&str> = report["failed"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(failed.contains(&"H3") && failed.contains(&"H5"), "{failed:?}");
}

#[test]
fn hedge_needs_its_section_and_positive_volatility() {
    let dir = tempfile::tempdir().unwrap();
    let cut = SMALL.find("  \"hedging\"").unwrap();
    let end = SMALL.find("  \"grid\"").unwrap();
    let text = format!("{}{}", &SMALL[..cut], &SMALL[end..]);
    let cfg = write(dir.path(), "nohedge.json", &text);
    let o = run_in(dir.path(), &cfg, "out", &["hedge"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hedging"), "{}", stderr(&o));

    let text = SMALL.replace("\"sigma\": { \"preset\": \"constant\", \"value\": 0.2 }", "\"sigma\": { \"preset\": \"constant\", \"value\": 0.0 }");
    let cfg = write(dir.path(), "flathedge.json", &text);
    let o = run_in(dir.path(), &cfg, "out", &["hedge"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("H3"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    assert_eq!(vbsde(&["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(vbsde(&["--help"], &[]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    assert_eq!(run_in(dir.path(), &cfg, "out", &["--threads", "0", "variance"]).status.code(), Some(2));
    assert_eq!(run_in(dir.path(), &cfg, "out", &["--seed", "abc", "variance"]).status.code(), Some(2));
}

fn header_hash(text: &str) -> &str {
    text.lines().next().unwrap().strip_prefix("# config_hash=").unwrap()
}

#[test]
fn every_output_embeds_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.json", SMALL);
    let hash = ExperimentConfig::from_json(SMALL, &cfg_path).unwrap().hash_hex();
    for cmd in ["kernel-table", "variance", "check-hyp", "solve", "simulate", "hedge"] {
        let o = run_in(dir.path(), &cfg_path, "out", &[cmd]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    let out = dir.path().join("out");
    for name in ["kernel_table.csv", "variance.csv", "solution.csv", "paths.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(header_hash(&text), hash, "{name}");
        assert!(text.lines().nth(1).unwrap().starts_with("# generated_unix="), "{name}");
    }
    for name in ["hypotheses.json", "hedge.json"] {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join(name)).unwrap()).unwrap();
        assert_eq!(v["config_hash"], hash.as_str(), "{name}");
        assert!(v["generated_unix"].is_u64(), "{name}");
    }
    let ens = read_binary(std::fs::File::open(out.join("paths.bin")).unwrap()).unwrap();
    let hex: String = ens.config_hash.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hex, hash);
}

#[test]
fn seed_changes_the_hash_but_the_output_directory_does_not() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.json", SMALL);
    let read = |out: &str| std::fs::read_to_string(dir.path().join(out).join("paths.csv")).unwrap();
    run_in(dir.path(), &cfg_path, "a", &["--no-timestamp", "simulate"]);
    run_in(dir.path(), &cfg_path, "b", &["--no-timestamp", "simulate"]);
    run_in(dir.path(), &cfg_path, "c", &["--no-timestamp", "--seed", "12", "simulate"]);
    assert_eq!(read("a"), read("b"));
    assert_ne!(header_hash(&read("a")), header_hash(&read("c")));
    let body = |s: String| s.lines().skip(1).map(String::from).collect::<Vec<_>>();
    assert_ne!(body(read("a")), body(read("c")));
}

#[test]
fn csv_outputs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.json", SMALL);
    for (out, threads) in [("one", "1"), ("two", "2"), ("three", "3")] {
        for cmd in ["simulate", "solve", "variance", "kernel-table"] {
            let o = run_in(dir.path(), &cfg_path, out, &["--no-timestamp", "--threads", threads, cmd]);
            assert_eq!(o.status.code(), Some(0));
        }
    }
    for name in ["paths.csv", "paths.bin", "solution.csv", "variance.csv", "kernel_table.csv"] {
        let one = std::fs::read(dir.path().join("one").join(name)).unwrap();
        for other in ["two", "three"] {
            assert_eq!(one, std::fs::read(dir.path().join(other).join(name)).unwrap(), "{name}");
        }
    }
    let text = std::fs::read_to_string(dir.path().join("one/paths.csv")).unwrap();
    assert!(!text.contains("generated_unix"));
}

#[test]
fn environment_overrides_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.json", SMALL);
    let env_out = dir.path().join("env");
    let o = vbsde(
        &["simulate"],
        &[
            ("VBSDE_CONFIG", cfg_path.to_str().unwrap()),
            ("VBSDE_OUT", env_out.to_str().unwrap()),
            ("VBSDE_SEED", "12"),
            ("VBSDE_NO_TIMESTAMP", "1"),
            ("VBSDE_THREADS", "1"),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    run_in(dir.path(), &cfg_path, "flag", &["--no-timestamp", "--seed", "12", "simulate"]);
    let env_csv = std::fs::read(env_out.join("paths.csv")).unwrap();
    assert_eq!(env_csv, std::fs::read(dir.path().join("flag/paths.csv")).unwrap());

    let flag_out = dir.path().join("both");
    let o = vbsde(
        &["--seed", "11", "--out", flag_out.to_str().unwrap(), "simulate"],
        &[("VBSDE_CONFIG", cfg_path.to_str().unwrap()), ("VBSDE_SEED", "12"), ("VBSDE_NO_TIMESTAMP", "false")],
    );
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(flag_out.join("paths.csv")).unwrap();
    assert!(text.contains("generated_unix"));
    run_in(dir.path(), &cfg_path, "plain", &["--no-timestamp", "simulate"]);
    let plain = std::fs::read_to_string(dir.path().join("plain/paths.csv")).unwrap();
    assert_eq!(text.lines().skip(2).collect::<Vec<_>>(), plain.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn binary_ensemble_matches_csv_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.json", SMALL);
    run_in(dir.path(), &cfg_path, "out", &["--no-timestamp", "simulate"]);
    let ens = read_binary(std::fs::File::open(dir.path().join("out/paths.bin")).unwrap()).unwrap();
    assert_eq!((ens.paths, ens.dim, ens.seed), (300, 1, 11));
    let text = std::fs::read_to_string(dir.path().join("out/paths.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), ens.paths * ens.grid.len());
    for (k, row) in rows.iter().enumerate() {
        let (p, i) = (k / ens.grid.len(), k % ens.grid.len());
        assert_eq!(row[0], p as f64);
        assert_eq!(row[1], ens.grid[i]);
        assert_eq!(row[2], ens.data[k]);
    }
}

#[test]
fn tables_match_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.json", SMALL);
    run_in(dir.path(), &cfg_path, "out", &["kernel-table"]);
    run_in(dir.path(), &cfg_path, "out", &["solve"]);
    let cfg = ExperimentConfig::from_json(SMALL, &cfg_path).unwrap();
    let spec = cfg.problem_spec().unwrap();
    let rows = |name: &str| -> Vec<Vec<f64>> {
        std::fs::read_to_string(dir.path().join("out").join(name))
            .unwrap()
            .lines()
            .skip(3)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let kt = rows("kernel_table.csv");
    assert_eq!(kt.len(), 10);
    let kernel = &spec.components[0].kernel;
    for r in &kt {
        assert_eq!(r[3], kernel.eval_k(r[1], r[2]).unwrap());
        assert_eq!(r[4], kernel.eval_dkdt(r[1], r[2]).unwrap());
    }
    let sol = rows("solution.csv");
    assert_eq!(sol.len(), 9);
    let field = vbsde::feynman_kac::SolutionField::new(&spec).unwrap();
    for r in &sol {
        assert_eq!(r[2], field.solve_u(r[0], &[r[1]]).unwrap());
        assert_eq!(r[3], field.grad_u(r[0], &[r[1]]).unwrap()[0]);
    }
}

#[test]
fn hedge_report_for_a_linear_claim() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(dir.path(), "small.json", SMALL);
    let o = run_in(dir.path(), &cfg_path, "out", &["hedge"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/hedge.json")).unwrap()).unwrap();
    // claim N_T: one unit of the driver at every time and state
    for q in v["pi_quantiles"].as_array().unwrap() {
        for key in ["q05", "q50", "q95"] {
            let pi = q[key].as_f64().unwrap();
            let t = q["t"].as_f64().unwrap();
            let disc = (-0.03 * (1.0 - t)).exp();
            assert!((pi - disc).abs() < 1e-9, "t = {t}: {pi} vs {disc}");
        }
    }
    assert_eq!(v["paths"], 300);
    assert!((v["zero_coupon"].as_f64().unwrap() - (-0.03f64).exp()).abs() < 1e-15);
}
