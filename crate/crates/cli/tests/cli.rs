use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn copt() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_copt"));
    cmd.env_remove("COPT_THREADS");
    cmd
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn without_timings(dir: &Path) -> String {
    let mut v = report(dir);
    v.as_object_mut().unwrap().remove("timings");
    serde_json::to_string_pretty(&v).unwrap()
}

/// 2 clusters x 3 periods, 2 individuals per cell: 12 units in 6 classes.
fn miniature(m: usize, algorithm: &str, extra: &str) -> String {
    format!(
        r#"{{
  "space": {{"cluster_trial": {{"clusters": 2, "periods": 3, "per_cell": 2, "treatment": "stepped_wedge"}}}},
  "models": [{{"family": "gaussian", "link": "identity",
              "mean": {{"linear_indicators": {{}}}},
              "covariance": {{"kind": "exchangeable", "sigma1": 0.25, "sigma2": 0.1}}}}],
  "m": {m},
  "c": [1, 0, 0, 0],
  "search": {{"algorithm": "{algorithm}", "starts": 4, "seed": 3}}{extra}
}}"#
    )
}

#[test]
fn stepped_wedge_reverse_greedy_gives_100_observations() {
    let tmp = TempDir::new().unwrap();
    let out = run(copt()
        .args(["optimize", "--histogram", "-o"])
        .arg(tmp.path())
        .arg(configs_dir().join("stepped_wedge.json")));
    assert!(out.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("design.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    let r = report(tmp.path());
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["result"]["units"].as_array().unwrap().len(), 100);
    assert_eq!(r["problem"]["duplicate_classes"], 30);
    assert!(r["timings"]["total_seconds"].as_f64().unwrap() < 60.0);
    assert!(tmp.path().join("histogram.csv").exists());
}

#[test]
fn whole_space_is_returned_when_m_equals_j() {
    for alg in ["local", "greedy", "reverse_greedy"] {
        let tmp = TempDir::new().unwrap();
        let cfg = write(tmp.path(), "c.json", &miniature(12, alg, ""));
        assert!(run(copt().args(["optimize", "-o"]).arg(tmp.path()).arg(&cfg)).status.success());
        let units: Vec<u64> =
            report(tmp.path())["result"]["units"].as_array().unwrap().iter().map(|u| u.as_u64().unwrap()).collect();
        assert_eq!(units, (0..12).collect::<Vec<_>>(), "{alg}");
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    // syntax error: config error with the line
    let cfg = write(tmp.path(), "bad.json", &miniature(4, "local", "").replace("\"m\": 4,", "\"m\": 4,,"));
    let out = copt().args(["optimize", "-o"]).arg(tmp.path()).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 6"));
    // unknown field
    let cfg = write(tmp.path(), "unknown.json", &miniature(4, "local", ", \"seeds\": 3"));
    let out = copt().args(["optimize", "-o"]).arg(tmp.path()).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `seeds`"));
    // m larger than the space
    let cfg = write(tmp.path(), "big.json", &miniature(13, "local", ""));
    assert_eq!(copt().args(["optimize", "-o"]).arg(tmp.path()).arg(&cfg).output().unwrap().status.code(), Some(3));
    // treatment never applied: the treatment effect is not estimable
    let never = miniature(4, "local", "").replace("\"stepped_wedge\"", "[[0, 0, 0], [0, 0, 0]]");
    let cfg = write(tmp.path(), "never.json", &never);
    let out = copt().args(["optimize", "-o"]).arg(tmp.path()).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not estimable"));
    // bad thread count
    let cfg = write(tmp.path(), "ok.json", &miniature(4, "local", ""));
    let out = copt().env("COPT_THREADS", "zero").args(["optimize", "-o"]).arg(tmp.path()).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let cfg = configs_dir().join("robust_trial.json");
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    assert!(run(copt().args(["--threads", "1", "optimize", "-o"]).arg(a.path()).arg(&cfg)).status.success());
    assert!(run(copt().env("COPT_THREADS", "4").args(["--threads", "1", "optimize", "-o"]).arg(b.path()).arg(&cfg))
        .status
        .success());
    assert!(run(copt().args(["optimize", "-o"]).arg(c.path()).arg(&cfg)).status.success());
    let ra = without_timings(a.path());
    assert_eq!(ra, without_timings(b.path()));
    assert_eq!(ra, without_timings(c.path()));
    assert_eq!(
        std::fs::read(a.path().join("design.csv")).unwrap(),
        std::fs::read(b.path().join("design.csv")).unwrap()
    );
}

#[test]
fn echoed_config_reruns_to_the_same_result() {
    let first = TempDir::new().unwrap();
    assert!(run(copt()
        .args(["optimize", "--algorithm", "local", "--seed", "9", "-o"])
        .arg(first.path())
        .arg(configs_dir().join("spatial.json")))
    .status
    .success());
    let r1 = report(first.path());
    let second = TempDir::new().unwrap();
    let cfg = write(second.path(), "echo.json", &serde_json::to_string(&r1["config"]).unwrap());
    assert!(run(copt().args(["optimize", "-o"]).arg(second.path()).arg(&cfg)).status.success());
    let r2 = report(second.path());
    assert_eq!(r1["config"], r2["config"]);
    assert_eq!(r1["result"], r2["result"]);
}

#[test]
fn evaluate_reproduces_the_optimized_objective() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs_dir().join("robust_trial.json");
    assert!(run(copt().args(["optimize", "-o"]).arg(tmp.path()).arg(&cfg)).status.success());
    let eval = tmp.path().join("eval");
    assert!(run(copt()
        .args(["evaluate", "--design"])
        .arg(tmp.path().join("design.csv"))
        .arg("-o")
        .arg(&eval)
        .arg(&cfg))
    .status
    .success());
    let g_opt = report(tmp.path())["result"]["objective"].as_f64().unwrap();
    let g_eval = report(&eval)["result"]["objective"].as_f64().unwrap();
    assert!((g_opt - g_eval).abs() <= 1e-10 * g_opt);
    let models = report(&eval)["result"]["model_objectives"].as_array().unwrap().len();
    assert_eq!(models, 2);
    // unit outside the space
    let out = copt().args(["evaluate", "--units", "0,9999", "-o"]).arg(&eval).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uniform_weights_make_all_rounding_methods_agree() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &miniature(6, "local", ""));
    let w = write(tmp.path(), "w.json", r#"{"weights": [1, 1, 1, 1, 1, 1]}"#);
    // dense weights must sum to one
    assert_eq!(copt().args(["round", "-o"]).arg(tmp.path()).arg(&cfg).arg(&w).output().unwrap().status.code(), Some(2));
    let w = write(tmp.path(), "w.json", &format!(r#"{{"weights": [{}]}}"#, ["0.1666666666666667"; 6].join(", ")));
    assert!(run(copt().args(["round", "-o"]).arg(tmp.path()).arg(&cfg).arg(&w)).status.success());
    let r = report(tmp.path());
    assert_eq!(r["result"]["distinct_designs"], 1);
    for m in r["result"]["methods"].as_array().unwrap() {
        assert_eq!(m["counts"], serde_json::json!([1, 1, 1, 1, 1, 1]));
    }
    let mismatch = write(tmp.path(), "bad.json", r#"{"weights": [0.5, 0.5]}"#);
    let out = copt().args(["round", "-o"]).arg(tmp.path()).arg(&cfg).arg(&mismatch).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_against_exhaustive_search_never_beats_the_optimum() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &miniature(8, "local", ""));
    let w = write(
        tmp.path(),
        "w.json",
        r#"{"weights": [{"class": 0, "weight": 0.25}, {"class": 1, "weight": 0.1}, {"class": 2, "weight": 0.15},
                        {"class": 3, "weight": 0.15}, {"class": 4, "weight": 0.1}, {"class": 5, "weight": 0.25}]}"#,
    );
    assert!(run(copt().args(["compare", "--brute-force", "-o"]).arg(tmp.path()).arg(&cfg).arg(&w)).status.success());
    let r = report(tmp.path());
    let ratio = r["result"]["ratio"].as_f64().unwrap();
    assert!(ratio >= 1.0 - 1e-9, "{ratio}");
    assert_eq!(r["result"]["ratio_4dp"].as_str().unwrap(), format!("{ratio:.4}"));
    assert_eq!(r["result"]["method_ratios"].as_array().unwrap().len(), 4);
    let table = std::fs::read_to_string(tmp.path().join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);

    let search = tmp.path().join("search");
    assert!(run(copt().args(["compare", "-o"]).arg(&search).arg(&cfg).arg(&w)).status.success());
    let sources: Vec<String> = report(&search)["result"]["combinatorial"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["source"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(sources, ["local", "greedy", "reverse_greedy"]);
}

#[test]
fn verify_small_designs() {
    let tmp = TempDir::new().unwrap();
    let gaussian = write(tmp.path(), "g.json", &miniature(4, "local", ""));
    let out = run(copt().args(["verify", "--brute-force", "--mc-iter", "20000", "-o"]).arg(tmp.path()).arg(&gaussian));
    assert!(out.status.success());
    let r = report(tmp.path());
    assert_eq!(r["result"]["passed"], true);
    let names: Vec<&str> =
        r["result"]["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"global_optimum_not_above_design"));
    assert!(names.contains(&"model_0_monte_carlo"));
    assert!(r["result"]["models"][0]["exact_variance"].is_null());

    let binomial = r#"{
  "space": {"cluster_trial": {"clusters": 2, "periods": 2, "per_cell": 2, "treatment": [[0, 1], [0, 0]]}},
  "models": [{"family": "binomial", "link": "logit",
              "mean": {"linear_indicators": {"beta0": 0.5, "beta1": [0.1, -0.2]}},
              "covariance": {"kind": "exchangeable", "sigma1": 0.5, "sigma2": 0.0}}],
  "m": 8,
  "c": [1, 0, 0],
  "search": {"algorithm": "reverse_greedy"}
}"#;
    let cfg = write(tmp.path(), "b.json", binomial);
    let out_dir = tmp.path().join("binomial");
    assert!(run(copt().args(["verify", "--mc-iter", "20000", "--mc-seed", "5", "-o"]).arg(&out_dir).arg(&cfg))
        .status
        .success());
    let r = report(&out_dir);
    let model = &r["result"]["models"][0];
    assert!(model["exact_variance"].as_f64().unwrap() > 0.0);
    assert!(model["monte_carlo"]["std_error"].as_f64().unwrap() > 0.0);
    let mc =
        r["result"]["checks"].as_array().unwrap().iter().find(|c| c["name"] == "model_0_monte_carlo").unwrap().clone();
    assert_eq!(mc["passed"], true);
}
