use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_liegal"))
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("liegal-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_stdout(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn check_rotor_lgsc_holds() {
    let o = run(&["check", "--model", "rotor", "--n", "8", "--kind", "lgsc"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json_stdout(&o);
    assert_eq!(r["holds"], true);
    assert_eq!(r["closure"]["dim"], 63);
    assert!(!r["closure"]["certificate"].as_array().unwrap().is_empty());
}

#[test]
fn check_well_lgsc_holds() {
    let o = run(&["check", "--model", "well", "--n", "4", "--kind", "lgsc"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json_stdout(&o)["closure"]["dim"], 15);
}

#[test]
fn check_fails_on_invariant_subspace() {
    let d = tmp("toy");
    let f = d.join("toy.json");
    std::fs::write(
        &f,
        r#"{"name":"toy","p":1,"n_max":3,"eigenvalues":[-1.0,-3.0,-7.0],
            "bounds":[{"kind":"symmetric","delta":1.0}],
            "couplings":[[[1,2,0.0,1.0]]],
            "guarantees":{"bandwidth":1,"s_weakly_coupled":false}}"#,
    )
    .unwrap();
    let o = run(&["check", "--model-file", f.to_str().unwrap(), "--n", "3", "--kind", "lgsc"]);
    assert_eq!(o.status.code(), Some(1));
    let r = json_stdout(&o);
    assert_eq!(r["holds"], false);
    assert_eq!(r["closure"]["dim"], 3);
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(run(&["check", "--n", "1"]).status.code(), Some(2));
    assert_eq!(run(&["check", "--n", "4", "--N", "3"]).status.code(), Some(2));
    assert_eq!(run(&["check", "--tol-rank", "0"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let d = tmp("badctl");
    let f = d.join("c.csv");
    std::fs::write(&f, "s_start,s_end,u1\n0,1,abc\n").unwrap();
    let o = run(&["simulate", "--control", f.to_str().unwrap(), "--psi0", "e1", "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["check", "--model-file", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synthesize_well_and_replay() {
    let a = tmp("synth-a");
    let b = tmp("synth-b");
    for d in [&a, &b] {
        let o = run(&["synthesize", "--from", "e1", "--to", "e2", "--n", "4", "--N", "8", "--seed", "3", "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.json", "schedule.json", "control.json", "control.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["config"]["seed"], 3);
    assert_eq!(m["conforming"], true);
    let t = m["t_schedule"].as_f64().unwrap();
    assert!(m["l1_norms"][0].as_f64().unwrap() <= t);
    let fid = m["fidelities"][0].as_f64().unwrap();
    assert!(fid >= 0.9, "{fid}");

    let sim = tmp("synth-sim");
    let o = run(&[
        "simulate", "--control", a.join("control.csv").to_str().unwrap(), "--psi0", "e1", "--target", "e2", "--N", "8",
        "--stride", "1000", "--out", sim.to_str().unwrap(), "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json_stdout(&o);
    assert!((s["fidelity"].as_f64().unwrap() - fid).abs() < 1e-9);
    assert!(s["max_unitarity_defect"].as_f64().unwrap() < 1e-9);
}

#[test]
fn identity_target_gives_empty_control() {
    let d = tmp("ident");
    let o = run(&["synthesize", "--from", "e1", "--to", "e1", "--n", "2", "--N", "4", "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&d.join("manifest.json"));
    assert_eq!(m["total_time"].as_f64().unwrap(), 0.0);
    let csv = std::fs::read_to_string(d.join("control.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn zero_control_keeps_populations() {
    let d = tmp("zero");
    let f = d.join("zero.csv");
    std::fs::write(&f, "s_start,s_end,u1\n0,0.5,0\n0.5,1.25,0\n").unwrap();
    let o = run(&[
        "simulate", "--control", f.to_str().unwrap(), "--psi0", "0.6,0.8i", "--N", "6", "--check-consistency", "--s", "0,0.5",
        "--sub-grid", "3", "--out", d.to_str().unwrap(), "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json_stdout(&o);
    let p = s["final_populations"].as_array().unwrap();
    assert!((p[0].as_f64().unwrap() - 0.36).abs() < 1e-12);
    assert!((p[1].as_f64().unwrap() - 0.64).abs() < 1e-12);
    assert_eq!(s["consistency"]["max_deviation"].as_f64().unwrap(), 0.0);
    assert_eq!(s["samples"], 9);
    let traj = std::fs::read_to_string(d.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 10);
    assert!(traj.starts_with("t,re1,im1,"));
}

#[test]
fn track_constant_and_ramp() {
    let d = tmp("track");
    let c = d.join("const.json");
    std::fs::write(&c, r#"[{"t":0,"moduli":[1,0]},{"t":1,"moduli":[1,0]},{"t":2,"moduli":[1,0]}]"#).unwrap();
    let o = run(&["track", "--curve", c.to_str().unwrap(), "--N", "8", "--out", d.join("c").to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json_stdout(&o)["max_distance"].as_f64().unwrap() < 1e-9);

    let pts: Vec<String> = (0..=10)
        .map(|i| {
            let s = i as f64 / 10.0;
            format!(r#"{{"t":{i},"moduli":[{},{}]}}"#, (1.0 - s).sqrt(), s.sqrt())
        })
        .collect();
    let r = d.join("ramp.json");
    std::fs::write(&r, format!("[{}]", pts.join(","))).unwrap();
    let o = run(&["track", "--curve", r.to_str().unwrap(), "--N", "8", "--tol-eps", "0.1", "--out", d.join("r").to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json_stdout(&o);
    assert!(rep["max_distance"].as_f64().unwrap() < 0.1);
    assert_eq!(rep["within_eps"], true);
    let csv = std::fs::read_to_string(d.join("r").join("tracking.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);

    let bad = d.join("bad.json");
    std::fs::write(&bad, r#"[{"t":0,"moduli":[1,1]}]"#).unwrap();
    assert_eq!(run(&["track", "--curve", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn models_export_roundtrip() {
    let d = tmp("models");
    let o = run(&["models", "--model", "well", "--export", "6", "--out", d.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let list = json_stdout(&o);
    assert_eq!(list.as_array().unwrap().len(), 2);
    let f = d.join("model.json");
    let o = run(&["check", "--model-file", f.to_str().unwrap(), "--n", "4", "--kind", "lgsc"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_stdout(&o)["closure"]["dim"], 15);
}
