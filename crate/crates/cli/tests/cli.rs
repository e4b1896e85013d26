use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn stiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stiv"))
        .args(args)
        .env("STIV_LOG", "error")
        .output()
        .expect("spawn stiv")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// xorshift plus Box-Muller; enough for a fixed test design.
struct Normals(u64);

impl Normals {
    fn uniform(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        ((self.0 >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    fn next(&mut self) -> f64 {
        let (u, v) = (self.uniform(), self.uniform());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

/// `y = x1 - 0.5 x3 + u`, `x1` endogenous, `x2, x3` exogenous and equal to `z3, z4`;
/// `zbar1` correlates with `u`, `zbar2` does not.
fn write_dataset(dir: &Path) -> PathBuf {
    let mut g = Normals(0x9e37_79b9_7f4a_7c15);
    let mut text = String::from("y,x1,x2,x3,z1,z2,z3,z4,zbar1,zbar2\n");
    for _ in 0..300 {
        let z: Vec<f64> = (0..4).map(|_| g.next()).collect();
        let u = g.next();
        let x1 = z[0] + 0.5 * z[1] + 0.5 * u;
        let y = x1 - 0.5 * z[3] + 0.5 * u;
        let zb1 = g.next() + 0.8 * u;
        let zb2 = g.next();
        let row = [y, x1, z[2], z[3], z[0], z[1], z[2], z[3], zb1, zb2];
        text += &row.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",");
        text.push('\n');
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path());
    let p = path.to_str().unwrap().to_string();
    (dir, p)
}

fn without_timings(mut v: Value) -> Value {
    v["manifest"]["timings"] = Value::Null;
    v
}

#[test]
fn estimate_happy_path() {
    let (_dir, data) = setup();
    let v = json(&stiv(&["estimate", "--variant", "stiv", "--c", "0.1", "--alpha", "0.05", "--endogenous", "1", &data]));
    assert_eq!(v["schema"], "stiv/1");
    assert_eq!(v["command"], "estimate");
    let beta: Vec<f64> = serde_json::from_value(v["result"]["beta"].clone()).unwrap();
    assert_eq!(beta.len(), 3);
    assert!((beta[0] - 1.0).abs() < 0.3, "beta = {beta:?}");
    assert!(v["result"]["sigma"].as_f64().unwrap() > 0.0);
    assert!(v["result"]["r"].as_f64().unwrap() > 0.0);
    assert_eq!(v["manifest"]["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn manifest_digest_matches_input_bytes() {
    let (_dir, data) = setup();
    let v = json(&stiv(&["inspect", "--endogenous", "1", &data]));
    let expected = hex::encode(Sha256::digest(std::fs::read(&data).unwrap()));
    assert_eq!(v["manifest"]["inputs"][0]["sha256"], expected.as_str());
    assert_eq!(v["result"]["exogenous_map"][0]["regressor"], 2);
    assert_eq!(v["result"]["exogenous_map"][0]["instrument"], 3);
}

#[test]
fn identical_runs_match_except_timings() {
    let (_dir, data) = setup();
    let args = ["ci", "--endogenous", "1", "--normalization", "rms", &data];
    let a = without_timings(json(&stiv(&args)));
    let b = without_timings(json(&stiv(&args)));
    assert_eq!(a, b);
}

#[test]
fn infinite_widths_round_trip_as_strings() {
    let (dir, data) = setup();
    let out = dir.path().join("ci.json");
    let o = stiv(&["ci", "--endogenous", "1", "--s", "3", "--out", out.to_str().unwrap(), &data]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    for c in v["result"]["coordinates"].as_array().unwrap() {
        let h = &c["half_width"];
        assert!(h.is_f64() || h == "inf", "half_width = {h}");
    }
    let again = serde_json::to_string_pretty(&v).unwrap();
    assert_eq!(serde_json::from_str::<Value>(&again).unwrap(), v);
}

#[test]
fn select_reports_signed_support() {
    let (_dir, data) = setup();
    let v = json(&stiv(&["select", "--endogenous", "1", "--normalization", "rms", &data]));
    let coords = v["result"]["coordinates"].as_array().unwrap();
    let support: Vec<u64> = serde_json::from_value(v["result"]["support"].clone()).unwrap();
    for c in coords {
        let idx = c["index"].as_u64().unwrap();
        assert_eq!(c["selected"].as_bool().unwrap(), support.contains(&idx));
        if c["selected"].as_bool().unwrap() {
            assert_eq!(c["sign"].as_i64().unwrap().signum(), c["beta"].as_f64().unwrap().signum() as i64);
        }
    }
    assert!(support.contains(&1));
}

#[test]
fn sensitivity_methods() {
    let (dir, data) = setup();
    let direct = json(&stiv(&["sensitivity", "--k", "1", "--J", "1,3", &data]));
    assert!(direct["result"]["value"].as_f64().unwrap() > 0.0);
    assert_eq!(direct["result"]["query"]["k"], 1);
    let cert = json(&stiv(&["sensitivity", "--method", "certificate", "--k", "1", "--s", "2", &data]));
    assert!(cert["result"]["value"].as_f64().unwrap() <= direct["result"]["value"].as_f64().unwrap() + 1e-7);

    let psi = dir.path().join("psi.csv");
    std::fs::write(&psi, "1,0\n0,1\n").unwrap();
    let psi = psi.to_str().unwrap();
    let coh = json(&stiv(&["sensitivity", "--psi", psi, "--method", "coherence", "--J", "1,2", "--c", "0"]));
    assert_eq!(coh["result"]["witnesses"], serde_json::json!([[1, 1], [2, 2]]));
    let inf = json(&stiv(&["sensitivity", "--psi", psi, "--J", "1,2", "--p", "inf", "--c", "0"]));
    assert_eq!(inf["result"]["query"]["p"], "inf");
}

#[test]
fn nv_with_exact_pilot_file() {
    let (dir, data) = setup();
    let pilot = dir.path().join("pilot.json");
    std::fs::write(&pilot, r#"{"beta": [1.0, 0.0, -0.5], "b_hat": 0.0}"#).unwrap();
    let v = json(&stiv(&[
        "nv",
        "--endogenous",
        "1",
        "--pilot",
        "file",
        "--pilot-file",
        pilot.to_str().unwrap(),
        &data,
    ]));
    let theta: Vec<f64> = serde_json::from_value(v["result"]["theta"].clone()).unwrap();
    assert_eq!(theta.len(), 2);
    assert!(theta[0] > 0.2, "theta = {theta:?}");
    assert!(theta[1].abs() < 0.1, "theta = {theta:?}");
    assert_eq!(v["manifest"]["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_writes_csv_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.csv");
    let o = stiv(&["simulate", "--preset", "table3", "--reps", "3", "--seed", "7", "--out", out.to_str().unwrap()]);
    let v = json(&o);
    assert_eq!(v["result"]["reps"], 3);
    assert_eq!(v["manifest"]["seed"], 7);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("metric,coordinate,value\n"));
    assert!(csv.contains("sigma_p50"));
}

#[test]
fn exit_codes() {
    let (dir, data) = setup();
    let code = |args: &[&str]| stiv(args).status.code();

    let o = stiv(&["estimate", &data]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--endogenous"));

    assert_eq!(code(&["estimate", "--endogenous", "1", "--no-such-flag", &data]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["estimate", "--endogenous", "9", &data]), Some(3));
    assert_eq!(code(&["estimate", "--endogenous", "1", "--c", "1.5", &data]), Some(3));
    assert_eq!(code(&["estimate", "--endogenous", "1", "--variant", "nonpivotal", &data]), Some(3));

    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&["estimate", "--endogenous", "1", missing.to_str().unwrap()]), Some(5));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,x1,z1\n1,2,3\n1,oops,3\n").unwrap();
    let o = stiv(&["estimate", "--endogenous", "1", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row"));
}
