use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ouarea::cli::{FigureConfig, RunConfig};
use ouarea::estimate::{area_rate, two_stage_entropy};
use ouarea::hypotest::BootstrapOptions;
use ouarea::simulate::{read_csv_path, simulate};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ouarea"));
    c.env_remove("OUAREA_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn small_config(dir: &TempDir, standard: &str, n: usize, seed: u64) -> String {
    write(
        dir,
        &format!("cfg_{seed}.json"),
        &format!(r#"{{"standard": {standard}, "sim": {{"dt": 0.001, "n_steps": {n}, "seed": {seed}}}}}"#),
    )
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const CANONICAL: &str = r#"{"lambda_bar": 1, "mu": 0.5, "omega": 1}"#;

#[test]
fn simulate_writes_n_plus_one_rows_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, CANONICAL, 500, 9);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(run(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(
        run(&["--threads", "3", "simulate", "--config", &cfg, "--out", b.to_str().unwrap()]).status.code(),
        Some(0)
    );
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 1 + 501);
    let c = dir.path().join("c.csv");
    run(&["simulate", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "10"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn unstable_drift_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "bad.json",
        r#"{"model": {"A": [[-1, 0], [0, 2]], "G": [[1, 0], [0, 1]]}, "sim": {"dt": 0.01, "n_steps": 10}}"#,
    );
    let o = run(&["simulate", "--config", &cfg, "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UnstableDrift"));
}

#[test]
fn malformed_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    for (name, text) in [
        ("syntax.json", "{not json"),
        ("both.json", r#"{"standard": {"lambda_bar": 1, "mu": 0, "omega": 0}, "model": {"A": [[1]], "G": [[1]]}, "sim": {"dt": 0.1, "n_steps": 3}}"#),
        ("neither.json", r#"{"sim": {"dt": 0.1, "n_steps": 3}}"#),
        ("mu.json", r#"{"standard": {"lambda_bar": 1, "mu": 1.5, "omega": 0}, "sim": {"dt": 0.1, "n_steps": 3}}"#),
        ("init.json", r#"{"standard": {"lambda_bar": 1, "mu": 0, "omega": 0}, "sim": {"dt": 0.1, "n_steps": 3, "init": {"kind": "point", "x0": [1]}}}"#),
    ] {
        let cfg = write(&dir, name, text);
        let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["simulate", "--config", dir.path().join("missing.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn committed_configs_parse_and_build() {
    for name in ["canonical.json", "equilibrium.json", "strong_circulation.json", "matrix3d.json"] {
        let cfg = RunConfig::load(&configs().join(name)).unwrap();
        cfg.build_model().unwrap();
    }
    let text = std::fs::read_to_string(configs().join("figures.json")).unwrap();
    let figs: FigureConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(figs, FigureConfig::default());
}

#[test]
fn area_on_square_loop() {
    let dir = TempDir::new().unwrap();
    let traj = write(&dir, "sq.csv", "t,x1,x2\n0,0,0\n1,1,0\n2,1,1\n3,0,1\n4,0,0\n");
    let j = stdout_json(&run(&["estimate", "area", "--traj", &traj, "--n-boot", "0"]));
    assert_eq!(j["value"].as_f64().unwrap(), 0.25);
    assert_eq!(j["alpha"][1][0].as_f64().unwrap(), -0.25);
    assert!(j["std_error"].is_null());
    let j = stdout_json(&run(&["estimate", "area", "--traj", &traj, "--n-boot", "0", "--plane", "2,1"]));
    assert_eq!(j["value"].as_f64().unwrap(), -0.25);
}

#[test]
fn simulate_then_area_matches_library_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, CANONICAL, 3000, 21);
    let csv = dir.path().join("t.csv");
    run(&["simulate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    let j = stdout_json(&run(&["estimate", "area", "--traj", csv.to_str().unwrap(), "--n-boot", "0"]));
    let rc = RunConfig::load(Path::new(&cfg)).unwrap();
    let lib = area_rate(&simulate(&rc.build_model().unwrap(), &rc.sim).unwrap()).unwrap();
    assert_eq!(j["value"].as_f64().unwrap().to_bits(), lib[(0, 1)].to_bits());
}

#[test]
fn entropy_report_matches_library_call() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, CANONICAL, 20_000, 5);
    let csv = dir.path().join("t.csv");
    run(&["simulate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    let j = stdout_json(&run(&[
        "estimate", "entropy", "--traj", csv.to_str().unwrap(), "--split", "0.5", "--n-boot", "200", "--seed", "3",
    ]));
    let tr = read_csv_path(&csv).unwrap();
    let lib = two_stage_entropy(&tr, 0.5, &BootstrapOptions { n_boot: 200, block_len: None, seed: 3 }).unwrap();
    assert_eq!(j["value"].as_f64().unwrap(), lib.value);
    assert_eq!(j["std_error"].as_f64().unwrap(), lib.std_error);
    assert_eq!(j["method"], "two_stage/block_bootstrap");
}

#[test]
fn estimate_input_errors() {
    let dir = TempDir::new().unwrap();
    let nonuniform = write(&dir, "nu.csv", "t,x1,x2\n0,1,0\n1,0,1\n2.5,1,1\n");
    assert_eq!(run(&["estimate", "area", "--traj", &nonuniform]).status.code(), Some(2));
    let garbage = write(&dir, "g.csv", "time,a\n0,1\n");
    assert_eq!(run(&["estimate", "area", "--traj", &garbage]).status.code(), Some(2));
    let short = write(&dir, "s.csv", "t,x1,x2\n0,1,0\n1,0,1\n2,1,1\n");
    assert_eq!(run(&["estimate", "entropy", "--traj", &short]).status.code(), Some(4));
    let o = run(&["estimate", "observable", "--traj", &short]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn observable_and_winding_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, CANONICAL, 20_000, 8);
    let csv = dir.path().join("t.csv");
    run(&["simulate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    let obs = configs().join("observable_optimal_canonical.json");
    let j = stdout_json(&run(&[
        "estimate", "observable", "--traj", csv.to_str().unwrap(), "--observable", obs.to_str().unwrap(),
        "--discretization", "midpoint", "--config", &cfg,
    ]));
    assert_eq!(j["method"], "observable_midpoint/plugin");
    let j = stdout_json(&run(&["estimate", "winding", "--traj", csv.to_str().unwrap(), "--n-boot", "50"]));
    assert!(j["flags"].as_array().unwrap().iter().any(|f| f == "non_convergent"));
}

#[test]
fn detailed_balance_test_on_fixtures() {
    let dir = TempDir::new().unwrap();
    let eq = dir.path().join("eq.csv");
    let strong = dir.path().join("strong.csv");
    run(&["simulate", "--config", configs().join("equilibrium.json").to_str().unwrap(), "--out", eq.to_str().unwrap()]);
    run(&[
        "simulate", "--config", configs().join("strong_circulation.json").to_str().unwrap(), "--out",
        strong.to_str().unwrap(),
    ]);
    let j = stdout_json(&run(&["test", "--traj", eq.to_str().unwrap(), "--seed", "1"]));
    assert!(j["p_value"].as_f64().unwrap() >= 0.05, "{j}");
    let j = stdout_json(&run(&["test", "--traj", strong.to_str().unwrap(), "--seed", "1"]));
    assert!(j["p_value"].as_f64().unwrap() < 0.01, "{j}");
    assert_eq!(j["n_boot"], 500);
    let o = run(&["test", "--traj", strong.to_str().unwrap(), "--method", "permutation"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["test", "--traj", strong.to_str().unwrap(), "--method", "plugin_z"]);
    assert_eq!(o.status.code(), Some(2), "plugin_z without a model");
    let cfg = configs().join("strong_circulation.json");
    let j = stdout_json(&run(&[
        "test", "--traj", strong.to_str().unwrap(), "--method", "plugin_z", "--config", cfg.to_str().unwrap(),
    ]));
    assert_eq!(j["method"], "plugin_z");
}

#[test]
fn geometry_single_and_sweep() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("g0");
    stdout_json(&run(&["geometry", "--omega", "0", "--out", out.to_str().unwrap()]));
    let rows = csv_rows(&out.join("summary.csv"));
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
    let curves: std::collections::BTreeSet<String> = csv_rows(&out.join("ellipses.csv")).into_iter().map(|r| r[3].clone()).collect();
    assert_eq!(curves.into_iter().collect::<Vec<_>>(), ["inner", "outer", "steady"]);

    let out = dir.path().join("sweep");
    let j = stdout_json(&run(&["geometry", "--omega-sweep", "-4:4:41", "--out", out.to_str().unwrap()]));
    assert_eq!(j["degenerate"], false);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 41);
    let det: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    let peak = det.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(rows[peak][0].parse::<f64>().unwrap(), 0.0);
    assert!(det[..=peak].windows(2).all(|w| w[0] < w[1]));
    assert!(det[peak..].windows(2).all(|w| w[0] > w[1]));

    let out = dir.path().join("tilt0");
    run(&["geometry", "--omega-sweep", "0:0:3", "--out", out.to_str().unwrap()]);
    assert!(csv_rows(&out.join("sweep.csv")).iter().all(|r| r[1].parse::<f64>().unwrap() == 0.0));

    let out = dir.path().join("mu0");
    let o = run(&["geometry", "--mu", "0", "--omega", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(stdout_json(&o)["degenerate"], true);
    assert_eq!(csv_rows(&out.join("summary.csv"))[0][11], "true");

    let o = run(&["geometry", "--lambda-bar", "-1", "--omega", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn figures_pipelines() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("figs");
    let o = out.to_str().unwrap();
    stdout_json(&run(&["figures", "fig2", "--seed", "2", "--out-dir", o]));
    let traces = csv_rows(&out.join("fig2_traces.csv"));
    let ids: std::collections::BTreeSet<&str> = traces.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids.len(), 60);
    assert_eq!(csv_rows(&out.join("fig2_bands.csv")).len(), 31);
    let first = std::fs::read(out.join("fig2_bands.csv")).unwrap();
    stdout_json(&run(&["--threads", "1", "figures", "fig2", "--seed", "2", "--out-dir", o]));
    assert_eq!(first, std::fs::read(out.join("fig2_bands.csv")).unwrap());

    stdout_json(&run(&["figures", "fig4", "--out-dir", o]));
    let curves: std::collections::BTreeSet<String> =
        csv_rows(&out.join("fig4_ellipses.csv")).into_iter().map(|r| r[3].clone()).collect();
    assert_eq!(curves.into_iter().collect::<Vec<_>>(), ["inner", "outer", "steady"]);
    assert_eq!(csv_rows(&out.join("fig4_tangency.csv")).len(), 8);

    for fig in ["fig1", "fig3"] {
        let j = stdout_json(&run(&["figures", fig, "--out-dir", o]));
        for f in j["files"].as_array().unwrap() {
            assert!(out.join(f.as_str().unwrap()).exists());
        }
        assert!(out.join(format!("{fig}_params.json")).exists());
    }
    assert_eq!(run(&["figures", "fig5", "--out-dir", o]).status.code(), Some(2));
}

#[test]
fn thread_env_var_and_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, CANONICAL, 100, 1);
    let out = dir.path().join("x.csv");
    let o = bin().env("OUAREA_THREADS", "lots").args(["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    // the flag overrides the environment
    let o = bin()
        .env("OUAREA_THREADS", "lots")
        .args(["--threads", "2", "simulate", "--config", &cfg, "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = bin().env("OUAREA_THREADS", "2").args(["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}
