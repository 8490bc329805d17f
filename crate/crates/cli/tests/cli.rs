use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn icsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icsim")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_HEATMAP: &str =
    "experiment = \"heatmap\"\ntau_grid = [0.0, 5.0]\nzeta_grid = [0.5]\ntrials = 2\nrounds = 2\n";

#[test]
fn heatmap_writes_csv_and_meta_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hm.toml");
    std::fs::write(&cfg, SMALL_HEATMAP).unwrap();
    let out = dir.path().join("nested/hm.csv");
    let run = icsim(&["heatmap", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(run.stdout.is_empty());

    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "tau,zeta_star,mean_err,stderr,best_eta_mode,mean_err_global,stderr_global,config_hash"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);

    let meta = read_json(&dir.path().join("nested/hm.csv.meta.json"));
    assert_eq!(meta["experiment"], "heatmap");
    assert_eq!(meta["rows"], 2);
    assert_eq!(meta["config"]["trials"], 2);
    assert!(meta["config"].get("workers").is_none());
    let hash = meta["config_hash"].as_str().unwrap();
    assert!(rows.iter().all(|r| r.ends_with(hash)));
}

#[test]
fn stdout_matches_the_written_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fp.csv");
    let to_file = icsim(&["fixed-point", "--out", path(&out)]);
    let to_stdout = icsim(&["fixed-point"]);
    assert_eq!(code(&to_file), 0);
    assert_eq!(std::fs::read(&out).unwrap(), to_stdout.stdout);
    let report = read_json(&dir.path().join("fp.csv.report.json"));
    assert_eq!(report["mode"], "strongly-convex");
    assert_eq!(report["results"].as_array().unwrap().len(), 21);
}

#[test]
fn toml_and_json_configs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("c.toml");
    let json = dir.path().join("c.json");
    std::fs::write(&toml, "horizons = [64, 128]\ntrials = 2\nalgorithms = [\"nc-ogd\"]\n").unwrap();
    std::fs::write(
        &json,
        r#"{"horizons": [64, 128], "trials": 2, "algorithms": ["nc-ogd"]}"#,
    )
    .unwrap();
    let a = icsim(&["online-regret", "--config", path(&toml)]);
    let b = icsim(&["online-regret", "--config", path(&json), "--workers", "3"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn seed_flag_overrides_the_config_and_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hm.toml");
    std::fs::write(&cfg, format!("seed = 3\n{SMALL_HEATMAP}")).unwrap();
    let from_file = icsim(&["heatmap", "--config", path(&cfg)]);
    let flag = icsim(&["heatmap", "--config", path(&cfg), "--seed", "3"]);
    let other = icsim(&["heatmap", "--config", path(&cfg), "--seed", "4"]);
    assert_eq!(from_file.stdout, flag.stdout);
    let hash = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .nth(1)
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .to_string()
    };
    assert_ne!(hash(&flag), hash(&other));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "trials = 2\nbogus = 1\n").unwrap();
    let wrong_tag = dir.path().join("tag.toml");
    std::fs::write(&wrong_tag, "experiment = \"fixed-point\"\n").unwrap();
    let bad_grid = dir.path().join("grid.json");
    std::fs::write(&bad_grid, r#"{"tau_grid": [-1.0]}"#).unwrap();
    let missing = dir.path().join("missing.toml");

    for args in [
        vec!["heatmap", "--config", path(&unknown)],
        vec!["heatmap", "--config", path(&wrong_tag)],
        vec!["comm-complexity", "--config", path(&bad_grid)],
        vec!["online-regret", "--config", path(&missing)],
        vec!["fixed-point", "--workers", "0"],
        vec!["instance", "inspect", path(&missing)],
        vec!["validate", "--inject-fault", "no-such-check"],
        vec!["frobnicate"],
    ] {
        let out = icsim(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn validate_reports_and_fault_injection_exits_with_one() {
    let ok = icsim(&["validate", "--suite", "hard-instances"]);
    assert_eq!(code(&ok), 0);
    let report: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 6);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let bad = icsim(&[
        "validate",
        "--suite",
        "hard-instances",
        "--inject-fault",
        "offset-instance-optimum-norms",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&bad), 1);
    let report = read_json(&out);
    assert_eq!(report["passed"], false);
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, vec!["offset-instance-optimum-norms"]);
}

#[test]
fn generated_instances_feed_inspect_and_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("pair.json");
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "[instance]\nkind = \"tau-decoupled-pair\"\nh = 2.0\ntau = 0.25\nx_star = [1.0, 0.0, -1.0]\n",
    )
    .unwrap();
    assert_eq!(
        code(&icsim(&[
            "instance",
            "generate",
            "--config",
            path(&spec),
            "--out",
            path(&inst)
        ])),
        0
    );
    let meta = read_json(&dir.path().join("pair.json.meta.json"));
    assert_eq!(meta["config"]["spec"]["tau"], 0.25);

    let inspect = icsim(&["instance", "inspect", path(&inst)]);
    assert_eq!(code(&inspect), 0);
    let report: Value = serde_json::from_slice(&inspect.stdout).unwrap();
    assert_eq!(report["machines"], 2);
    assert!((report["heterogeneity"]["tau"].as_f64().unwrap() - 0.25).abs() < 1e-12);

    let cfg = dir.path().join("fp.json");
    std::fs::write(
        &cfg,
        serde_json::json!({"instance": inst, "local_steps": [1, 4]}).to_string(),
    )
    .unwrap();
    let fp = icsim(&["fixed-point", "--config", path(&cfg)]);
    assert_eq!(code(&fp), 0, "{}", String::from_utf8_lossy(&fp.stderr));
    assert_eq!(String::from_utf8_lossy(&fp.stdout).lines().count(), 7);

    let both = icsim(&[
        "instance",
        "generate",
        "--kind",
        "rotated-pair",
        "--config",
        path(&spec),
    ]);
    assert_eq!(code(&both), 2);
}

#[test]
fn comm_complexity_censors_unreachable_targets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cc.toml");
    std::fs::write(
        &cfg,
        "tau_grid = [0.0, 10.0]\ntrials = 2\ntarget = 1e-9\nmax_rounds = 3\n",
    )
    .unwrap();
    let out = icsim(&["comm-complexity", "--config", path(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for row in text.lines().skip(1) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[1].parse::<f64>().unwrap(), 4.0);
        assert_eq!(cells[3].parse::<f64>().unwrap(), 1.0);
    }
}
