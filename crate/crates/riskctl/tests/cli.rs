use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riskctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskctl"))
        .args(args)
        .env_remove("RISKCTL_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "users = 40\nitems = 200\ngroups = 4\nslates_per_user = 3\nslate_width = 10\nflag_rate = 0.05\n";

fn gen(dir: &Path, seed: &str) -> std::path::PathBuf {
    let cfg = dir.join("synth.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.join(format!("data{seed}"));
    let o = riskctl(&["gen-data", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "5");
    let b = dir.path().join("again");
    fs::create_dir(&b).unwrap();
    let o = riskctl(&[
        "gen-data", "--config", dir.path().join("synth.toml").to_str().unwrap(),
        "--seed", "5", "--out", b.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for f in ["interactions.csv", "items.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = gen(dir.path(), "6");
    assert_ne!(fs::read(a.join("interactions.csv")).unwrap(), fs::read(c.join("interactions.csv")).unwrap());

    let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["config"]["users"], 40);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"], serde_json::json!(["interactions.csv", "items.csv"]));
}

#[test]
fn calibrate_reports_thresholds_and_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "1");
    let d = data.to_str().unwrap();

    let o = riskctl(&["calibrate", "--data", d, "--alpha", "1", "--k", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("lambda_hat 0 (Q = 60)"), "{}", stdout(&o));

    let o = riskctl(&["calibrate", "--data", d, "--alpha", "0.001", "--k", "10"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("minimal feasible alpha is 0.016"), "{}", stderr(&o));

    let snap = dir.path().join("snap.csv");
    let o = riskctl(&[
        "calibrate", "--data", d, "--alpha", "0.2", "--k", "10", "--scope", "user",
        "--users", "0,1,999", "--out", snap.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&snap).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("user,999,0.2,1.001,0,true"), "{text}");

    let o = riskctl(&["evaluate", "--data", d, "--k", "10", "--snapshot", snap.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("test_risk"));
}

#[test]
fn zero_threshold_serves_logged_slates() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "2");
    let out = dir.path().join("m.csv");
    let o = riskctl(&[
        "evaluate", "--data", data.to_str().unwrap(), "--k", "10", "--lambda", "0",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.contains("repeated_fraction,0\n"), "{text}");
    assert!(text.contains("recall,1\n"), "{text}");
}

#[test]
fn attack_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "3");
    let out = dir.path().join("reports.csv");
    let o = riskctl(&[
        "attack", "--data", data.to_str().unwrap(), "--k", "10", "--strategy", "low_risk",
        "--gamma", "0.05", "--beta", "0.1", "--alpha", "0.5", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 members of 20 calibration users, 4 reports"), "{}", stdout(&o));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.starts_with("user_id,item_id,strategy\n"));
    assert_eq!(text.lines().count(), 5);

    let o = riskctl(&["attack", "--data", data.to_str().unwrap(), "--strategy", "random", "--gamma", "0.5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = riskctl(&["attack", "--data", data.to_str().unwrap(), "--strategy", "tag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_2() {
    let o = riskctl(&["experiment", "rq9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown experiment"), "{}", stderr(&o));

    let o = riskctl(&["experiment", "rq1", "--config", "/nonexistent/rq1.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/rq1.toml"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "runz = 3\n").unwrap();
    let o = riskctl(&["experiment", "rq1", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml"), "{}", stderr(&o));

    fs::write(&bad, "runs = 0\n").unwrap();
    let o = riskctl(&["experiment", "rq1", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = riskctl(&["--jobs", "0", "report", "--in", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rq3.toml");
    fs::write(
        &cfg,
        "runs = 2\nbetas = [0.05]\n[data.synthetic]\nusers = 200\nitems = 400\nslates_per_user = 8\ngroups = 4\nflag_rate = 0.05\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = |jobs: &str| {
        let o = riskctl(&[
            "--jobs", jobs, "experiment", "rq3", "--config", cfg.to_str().unwrap(),
            "--seed", "7", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("rq3.csv")).unwrap()
    };
    let one = run("1");
    assert_eq!(one, run("3"));
    let text = String::from_utf8(one).unwrap();
    assert!(text.starts_with("experiment,run,seed,strategy,alpha,beta,gamma,k,metric,population,value\n"));
    assert!(text.contains(",none,"), "baseline rows are emitted");
    assert!(text.contains("rq3,all,7,tag,"));

    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["runs"], 2);
    assert_eq!(m["outputs"], serde_json::json!(["rq3.csv"]));

    let o = riskctl(&["report", "--in", out.join("rq3.csv").to_str().unwrap(), "--metric", "exposure_diff"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3, "{}", stdout(&o));
}
