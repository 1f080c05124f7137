use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use apid::control::PidGains;
use apid::dynamics::ArmModel;
use apid::formats::{controllers_to_json, scenario_to_json};
use apid::harness::{ControllerAssignment, Scenario};
use tempfile::TempDir;

fn apid(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_apid"));
    cmd.args(args).env_remove("APID_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn short_scenario() -> Scenario {
    let mut s = Scenario::default_mobile_manipulator();
    s.duration = 2.0;
    for r in &mut s.joint_references {
        r.0.retain(|p| p.time <= 2.0);
    }
    s
}

fn gains() -> Vec<PidGains> {
    vec![PidGains { kp: 99.0, ki: 180.0, kd: 13.6 }, PidGains { kp: 205.0, ki: 966.0, kd: 10.9 }, PidGains { kp: 600.0, ki: 15_500.0, kd: 5.8 }]
}

/// Rows of a CSV file, header first.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn shipped_default_scenario_matches_builtin() {
    let shipped = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.json")).unwrap();
    assert_eq!(shipped, scenario_to_json(&Scenario::default_mobile_manipulator()));
}

#[test]
fn sim_writes_one_row_per_step_and_joint() {
    let dir = TempDir::new().unwrap();
    let scenario = write(dir.path(), "scenario.json", &scenario_to_json(&short_scenario()));
    let controllers = write(dir.path(), "controllers.json", &controllers_to_json(&ControllerAssignment::baseline(&gains())));
    let out = dir.path().join("out");
    let o = apid(&["sim", "--scenario", &scenario, "--controllers", &controllers, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("rollout.csv"));
    assert_eq!(rows[0].join(","), "t,joint,theta,theta_ref,u,kp,kd");
    assert_eq!(rows.len(), 1 + 2000 * 3);
    assert!(rows[1..].iter().all(|r| r[4].parse::<f64>().unwrap().abs() <= 150.0));
    assert!(out.join("costs.json").exists());
}

#[test]
fn malformed_controllers_exit_with_config_error() {
    let dir = TempDir::new().unwrap();
    let scenario = write(dir.path(), "scenario.json", &scenario_to_json(&short_scenario()));
    let out = dir.path().join("out");
    for (text, key) in [
        (r#"{"joints": 3}"#, "joints"),
        (r#"{"joints":[{"type":"baseline","kp":1.0,"ki":0.0}]}"#, "kd"),
        (r#"{"joints":[{"type":"adaptive","kp_min":5.0,"kp_max":1.0,"tau_p":1.0,"kd_max":1.0,"tau_d":1.0,"ki":0.0}]}"#, "joints[0].kp_max"),
    ] {
        let controllers = write(dir.path(), "controllers.json", text);
        let o = apid(&["sim", "--scenario", &scenario, "--controllers", &controllers, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains(key), "{text}: {}", stderr(&o));
    }
    let bad_scenario = write(dir.path(), "bad.json", r#"{"arm": {"link_lengths": [1.0]}, "joint_references": []}"#);
    let o = apid(&["zn", "--scenario", &bad_scenario, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("arm"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_time() {
    let dir = TempDir::new().unwrap();
    // Without saturation, a proportional gain far past the ultimate gain
    // grows without bound.
    let mut s = short_scenario();
    s.arm.torque_limit = 1e9;
    let scenario = write(dir.path(), "scenario.json", &scenario_to_json(&s));
    let hot = vec![PidGains { kp: 5_000.0, ki: 0.0, kd: 0.0 }; 3];
    let controllers = write(dir.path(), "controllers.json", &controllers_to_json(&ControllerAssignment::baseline(&hot)));
    let out = dir.path().join("out");
    let o = apid(&["sim", "--scenario", &scenario, "--controllers", &controllers, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let msg = stderr(&o);
    let t: f64 = msg.split("t = ").nth(1).and_then(|r| r.split_whitespace().next()).unwrap().parse().unwrap();
    assert!(t > 0.0 && t <= 2.0, "{msg}");
}

#[test]
fn zn_failure_exits_with_code_four() {
    let dir = TempDir::new().unwrap();
    // A light link in heavy friction is overdamped at every gain below the cap.
    let mut arm = ArmModel::with_defaults(vec![0.5], vec![1.0], 0.0).unwrap();
    arm.joint_viscous_friction = vec![1_000.0];
    let s = Scenario::step_response(arm, &[0.0], &[0.2], 1.0, 1e-3);
    let scenario = write(dir.path(), "scenario.json", &scenario_to_json(&s));
    let out = dir.path().join("out");
    let o = apid(&["zn", "--scenario", &scenario, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("joint"), "{}", stderr(&o));
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn tune_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let scenario = write(dir.path(), "scenario.json", &scenario_to_json(&short_scenario()));
    let run = |name: &str, envs: &[(&str, &str)]| {
        let out = dir.path().join(name);
        let o = apid(&["tune", "--scenario", &scenario, "--seed", "7", "--budget", "6", "--out", out.to_str().unwrap()], envs);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &[("APID_THREADS", "4")]);
    for j in 1..=3 {
        let rows = csv_rows(&a.join(format!("bo_trace_joint{j}.csv")));
        assert_eq!(rows[0].join(","), "iteration,kp_min,kp_ratio,tau_p,kd_max,tau_d,cost,best_so_far");
        assert_eq!(rows.len(), 7);
        let best: Vec<f64> = rows[1..].iter().map(|r| r[7].parse().unwrap()).collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }
    let files = read_dir_sorted(&a);
    assert_eq!(files.len(), 9);
    assert_eq!(files, read_dir_sorted(&b));
    assert_eq!(files, read_dir_sorted(&c));
}

#[test]
fn tune_rejects_small_budget() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "run.json", r#"{"budget_per_joint": 5}"#);
    let o = apid(&["tune", "--config", &config, "--out", dir.path().join("out").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("budget_per_joint"), "{}", stderr(&o));
}

#[test]
fn thread_count_must_be_positive() {
    let dir = TempDir::new().unwrap();
    for bad in ["0", "many"] {
        let o = apid(&["compliance", "--grid", "0,1,2", "--out", dir.path().to_str().unwrap()], &[("APID_THREADS", bad)]);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("APID_THREADS"));
    }
    let o = apid(&["compliance", "--grid", "0,1,2", "--out", dir.path().to_str().unwrap()], &[("APID_THREADS", "2")]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn compliance(dir: &Path, scenario: &Scenario, grid: &str) -> (Output, Vec<Vec<String>>) {
    let path = write(dir, "scenario.json", &scenario_to_json(scenario));
    let out = dir.join("out");
    let o = apid(&["compliance", "--scenario", &path, "--grid", grid, "--out", out.to_str().unwrap()], &[]);
    let rows = if o.status.success() { csv_rows(&out.join("compliance.csv")) } else { Vec::new() };
    (o, rows)
}

#[test]
fn compliance_grid_and_singular_rows() {
    let dir = TempDir::new().unwrap();
    let mut arm = ArmModel::with_defaults(vec![1.0, 1.0], vec![1.0, 1.0], 0.0).unwrap();
    arm.joint_stiffness = vec![50.0, 50.0];
    let s = Scenario::step_response(arm, &[0.0, 0.0], &[0.0, 0.0], 1.0, 1e-3);
    let (o, rows) = compliance(dir.path(), &s, "0:1:3,0:1.5:4");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rows[0].join(","), "q1,q2,axis_major,axis_minor,major_x,major_y,minor_x,minor_y,singular");
    assert_eq!(rows.len(), 1 + 3 * 4);
    // q2 = 0 is fully stretched.
    for r in &rows[1..] {
        let singular = r[1].parse::<f64>().unwrap() == 0.0;
        assert_eq!(r[8], if singular { "true" } else { "false" });
        assert_eq!(r[2].is_empty(), singular);
    }

    let mut stiffer = s.clone();
    stiffer.arm.joint_stiffness = vec![100.0, 100.0];
    let (_, doubled) = compliance(dir.path(), &stiffer, "0:1:3,0:1.5:4");
    for (a, b) in rows[1..].iter().zip(&doubled[1..]) {
        if a[8] == "false" {
            for col in [2, 3] {
                let (x, y): (f64, f64) = (a[col].parse().unwrap(), b[col].parse().unwrap());
                assert!((x - 2.0 * y).abs() <= 1e-8 * x, "{x} vs {y}");
            }
        }
    }

    let (o, _) = compliance(dir.path(), &s, "0:1:3");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid"));
    let (o, _) = compliance(dir.path(), &s, "0:1:x,0");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid[0]"));
}
