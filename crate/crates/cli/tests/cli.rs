use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lyapsens_cli::{delta_ci, emit_plot_data, run, CliError, ExperimentConfig, PlotSeries};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lyapsens"));
    c.env_remove("LYAPSENS_OUT_DIR");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_bin(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn csv_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no row {key} in\n{text}"))
        .parse()
        .unwrap()
}

fn plot_points(text: &str) -> Vec<(f64, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect()
}

#[test]
fn identity_norm_summary_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_bin(&configs().join("norm_identity.toml"), tmp.path(), &[]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l == "operator_norm = 1"), "{stdout}");
    let summary = std::fs::read_to_string(tmp.path().join("summary.txt")).unwrap();
    assert!(summary.lines().any(|l| l == "operator_norm = 1"));
}

#[test]
fn two_state_stationary_derivative_in_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_bin(&configs().join("stat_deriv_two_state.toml"), tmp.path(), &[]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("stat_deriv.csv")).unwrap();
    assert!((csv_value(&csv, "derivative") - 0.3 / 0.36).abs() < 1e-12, "{csv}");
    // second derivative of theta/(q + theta) is -2q/(q + theta)^3
    assert!((csv_value(&csv, "derivative_2") + 0.6 / 0.216).abs() < 1e-10, "{csv}");
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    for (name, text) in [
        ("unknown_top.toml", "kind = \"norm\"\nbogus = 1\n[params]\n"),
        (
            "unknown_param.toml",
            "kind = \"delta-ci\"\n[params]\nalpha_hat = 1.0\ngrad_hat = 1.0\nc_hat = 1.0\nn = 10\nlevel = 0.1\n",
        ),
        ("unknown_kind.toml", "kind = \"solve-everything\"\n[params]\n"),
        ("not_toml.toml", "kind = = \n"),
        (
            "missing_params.toml",
            "kind = \"stat-deriv\"\n[model]\ntype = \"two-state\"\nq = 0.3\ntheta0 = 0.3\n",
        ),
        (
            "bad_model.toml",
            "kind = \"norm\"\n[model]\ntype = \"kernel\"\nkernel = [[1.0]]\nextra = 2\n[params]\n",
        ),
    ] {
        let cfg = write_config(tmp.path(), name, text);
        let out = run_bin(&cfg, &out_dir, &[]);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out_dir.exists(), "{name} produced outputs");
    }
}

#[test]
fn semantic_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "short_reward.toml",
        "kind = \"stat-deriv\"\n[model]\ntype = \"two-state\"\nq = 0.3\ntheta0 = 0.3\n[params]\nreward = [1.0]\n",
    );
    let out = run_bin(&cfg, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn failed_contraction_is_a_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    // interior state 1 never leaves: K = [1] cannot contract
    let cfg = write_config(
        tmp.path(),
        "stuck.toml",
        "kind = \"rh-solve\"\n[model]\ntype = \"scalar\"\nkernel = [[1.0, 0.0], [0.0, 1.0]]\ntheta0 = 1.0\n[params]\ninterior = [1]\nreward = [0.0, 1.0]\n",
    );
    let out = run_bin(&cfg, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("[contraction]"), "{err}");
    assert!(!out_dir.exists());
}

#[test]
fn unstable_queue_is_a_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "unstable.toml",
        "kind = \"gg1\"\n[model]\ntype = \"gg1\"\nalpha = 5.0\ntheta0 = 0.2\np = 1.0\neps = 0.01\ninterarrival = { type = \"exponential\", rate = 1.0 }\n[params]\nmode = \"derivative\"\n",
    );
    let out = run_bin(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("[stability]"));
}

#[test]
fn endless_path_is_truncation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "endless.toml",
        "kind = \"mc-estimate\"\n[model]\ntype = \"scalar\"\nkernel = [[1.0, 0.0], [0.0, 1.0]]\ntheta0 = 1.0\n\
         [params]\nestimator = \"u-star\"\ninterior = [1]\nreward = [0.0, 1.0]\nx0 = 1\nn_paths = 1\ncompare_exact = false\n",
    );
    let out = run_bin(&cfg, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn error_classes_map_to_exit_codes() {
    let codes = [
        (CliError::Io(String::new()), 1),
        (CliError::Schema(String::new()), 2),
        (CliError::Refusal(String::new()), 3),
        (CliError::Numerical(String::new()), 4),
        (CliError::Truncation(String::new()), 5),
    ];
    for (e, c) in codes {
        assert_eq!(e.exit_code(), c);
    }
    assert_eq!(
        CliError::from(lyapsens_core::Error::Numerical("x".into())).exit_code(),
        4
    );
    assert_eq!(
        CliError::from(lyapsens_sim::SimError::Truncation { cap: 3 }).exit_code(),
        5
    );
}

#[test]
fn missing_config_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_bin(&tmp.path().join("absent.toml"), &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn delta_ci_examples() {
    let ci = delta_ci(1.0, 2.0, 1.0, 100, 0.05).unwrap();
    // z = 1.96 to three decimals
    assert!((ci.half_width - 0.392).abs() < 1e-3, "{ci:?}");
    assert!((ci.lower - 0.608).abs() < 1e-3 && (ci.upper - 1.392).abs() < 1e-3);
    assert!((ci.upper + ci.lower - 2.0).abs() < 1e-15);
    let wide = delta_ci(1.0, 2.0, 1.0, 100, 0.05).unwrap().half_width;
    let narrow = delta_ci(1.0, 2.0, 1.0, 1_000_000, 0.05).unwrap().half_width;
    assert!(narrow < wide);
    assert!((wide / narrow - 100.0).abs() < 1e-9);
    let e = delta_ci(1.0, 0.0, 1.0, 100, 0.05).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains("[variance]"));
    assert_eq!(delta_ci(1.0, 2.0, 0.0, 100, 0.05).unwrap_err().exit_code(), 3);
    assert_eq!(delta_ci(1.0, 2.0, 1.0, 100, 1.5).unwrap_err().exit_code(), 2);
}

#[test]
fn delta_ci_via_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_bin(&configs().join("delta_ci.toml"), tmp.path(), &[]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("delta_ci.csv")).unwrap();
    assert!((csv_value(&csv, "half_width") - 0.392).abs() < 1e-3);
    let cfg = write_config(
        tmp.path(),
        "zero.toml",
        "kind = \"delta-ci\"\n[params]\nalpha_hat = 1.0\ngrad_hat = 0.0\nc_hat = 1.0\nn = 100\n",
    );
    let out = run_bin(&cfg, &tmp.path().join("z"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("grad C grad^T > 0"));
}

#[test]
fn empty_sweep_gives_header_only() {
    let files = emit_plot_data(&[PlotSeries::new("empty", "theta", "alpha", vec![])]);
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].name, "plot_empty.csv");
    assert_eq!(files[0].contents, "theta,alpha\n");
}

#[test]
fn alpha_sweep_matches_closed_form() {
    let cfg = ExperimentConfig::load(&configs().join("stat_deriv_two_state.toml")).unwrap();
    let outcome = run(&cfg).unwrap();
    let pts = plot_points(outcome.file("plot_alpha_sweep.csv").unwrap());
    assert_eq!(pts.len(), 11);
    for w in pts.windows(2) {
        assert!(w[1].1 > w[0].1);
    }
    for (t, a) in &pts {
        assert!((a - t / (0.3 + t)).abs() < 1e-12);
    }
    for (t, d) in plot_points(outcome.file("plot_alpha_derivative_sweep.csv").unwrap()) {
        assert!((d - 0.3 / ((0.3 + t) * (0.3 + t))).abs() < 1e-10);
    }
}

#[test]
fn rh_derivative_and_sweep() {
    let cfg = ExperimentConfig::load(&configs().join("rh_deriv_geometric.toml")).unwrap();
    let outcome = run(&cfg).unwrap();
    let csv = outcome.file("rh_deriv.csv").unwrap();
    let row: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    // u* = 1/theta, u*' = -1/theta^2, u*'' = 2/theta^3 at theta = 0.5
    assert_eq!(row[0], 1.0);
    assert!((row[1] - 2.0).abs() < 1e-12 && (row[2] + 4.0).abs() < 1e-10 && (row[3] - 16.0).abs() < 1e-8);
    for (t, u) in plot_points(outcome.file("plot_u_star_sweep.csv").unwrap()) {
        assert!((u - 1.0 / t).abs() < 1e-10);
    }
    for (t, d) in plot_points(outcome.file("plot_u_star_derivative_sweep.csv").unwrap()) {
        assert!((d + 1.0 / (t * t)).abs() < 1e-8);
    }
}

#[test]
fn drift_slack_file_has_one_row_per_grid_point() {
    let mut text = std::fs::read_to_string(configs().join("gg1_drift.toml")).unwrap();
    text = text.replace("points = 100", "points = 17");
    let outcome = run(&ExperimentConfig::parse(&text).unwrap()).unwrap();
    for name in ["plot_drift_slack_v0.csv", "plot_drift_slack_v1.csv", "drift.csv"] {
        assert_eq!(outcome.file(name).unwrap().lines().count(), 18, "{name}");
    }
    assert!(outcome.summary.contains("passed = true"));
}

#[test]
fn lyapunov_minorization_and_mc_configs_run() {
    for (name, needle) in [
        ("lyapunov_rh.toml", "passed = true"),
        ("minorization_two_state.toml", "power = 1"),
        ("rh_solve_geometric.toml", "max_abs_u_star = 2"),
    ] {
        let cfg = ExperimentConfig::load(&configs().join(name)).unwrap();
        let outcome = run(&cfg).unwrap();
        assert!(outcome.summary.contains(needle), "{name}: {}", outcome.summary);
    }
}

#[test]
fn mc_estimate_reports_exact_and_se_budget() {
    let cfg = ExperimentConfig::load(&configs().join("mc_u_star_derivative.toml")).unwrap();
    let outcome = run(&cfg).unwrap();
    let csv = outcome.file("mc_estimate.csv").unwrap();
    assert!(csv.starts_with("method,point,std_error,n,seed,exact\n"));
    let f: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let (point, se, exact): (f64, f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap(), f[5].parse().unwrap());
    assert_eq!(exact, -4.0);
    assert!((point - exact).abs() <= 3.0 * se);
    let se_rows = plot_points(outcome.file("plot_se_budget.csv").unwrap());
    assert_eq!(se_rows.len(), 3);
    assert!(se_rows[2].1 < se_rows[0].1);
}

#[test]
fn seed_and_env_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("delta_ci.toml");
    let env_dir = tmp.path().join("from_env");
    let out = bin().arg(&cfg).env("LYAPSENS_OUT_DIR", &env_dir).output().unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("delta_ci.csv").exists());
    // the flag wins over the environment
    let flag_dir = tmp.path().join("from_flag");
    let out = bin()
        .arg(&cfg)
        .args(["--seed", "42", "--out-dir"])
        .arg(&flag_dir)
        .env("LYAPSENS_OUT_DIR", tmp.path().join("unused"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(!tmp.path().join("unused").exists());
    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(env_dir.join("run.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(flag_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(a["seed"], 0);
    assert_eq!(b["seed"], 42);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn run_record_manifest_matches_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_bin(&configs().join("stat_deriv_two_state.toml"), tmp.path(), &[]);
    assert!(out.status.success());
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run.json")).unwrap()).unwrap();
    let outputs = rec["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for o in outputs {
        let bytes = std::fs::read(tmp.path().join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(o["sha256"].as_str().unwrap(), lyapsens_cli::output::sha256_hex(&bytes));
    }
    assert_eq!(rec["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn csv_floats_round_trip() {
    let outcome = run(&ExperimentConfig::load(&configs().join("stat_deriv_two_state.toml")).unwrap()).unwrap();
    let csv = outcome.file("stat_deriv.csv").unwrap();
    let d = csv.lines().find(|l| l.starts_with("derivative,")).unwrap();
    let text = d.split(',').nth(1).unwrap();
    assert_eq!(text, "8.3333333333333337e-1");
    assert_eq!(text.parse::<f64>().unwrap(), 0.3 / 0.36);
}

#[test]
fn mc_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("mc_stationary_derivative.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_bin(&cfg, &a, &["--seed", "3"]).status.success());
    assert!(run_bin(&cfg, &b, &["--seed", "3"]).status.success());
    for f in ["mc_estimate.csv", "summary.txt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = tmp.path().join("c");
    assert!(run_bin(&cfg, &c, &["--seed", "4"]).status.success());
    assert_ne!(
        std::fs::read(a.join("mc_estimate.csv")).unwrap(),
        std::fs::read(c.join("mc_estimate.csv")).unwrap()
    );
}
