use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reachcert::certcheck::{residual_check, Certificate, ResidualReport};
use reachcert::problem::ProblemFile;
use serde_json::Value;

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reachcert"))
        .args(args)
        .env("REACHCERT_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn solve_ex1(dir: &Path) -> PathBuf {
    let cert = dir.join("ex1.json");
    let out = run(&["solve", problem("ex1_population.json").to_str().unwrap(), "--out", cert.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["stats"]["status"], "Optimal");
    cert
}

#[test]
fn solve_then_verify_reproduces_the_in_process_report() {
    let dir = tempfile::tempdir().unwrap();
    let cert_path = solve_ex1(dir.path());
    let ex1 = problem("ex1_population.json");
    let out = run(&["verify", cert_path.to_str().unwrap(), ex1.to_str().unwrap(), "--samples", "2000", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert_eq!(report["passed"], true);

    let cert = Certificate::from_json(&std::fs::read_to_string(&cert_path).unwrap()).unwrap();
    let prob = ProblemFile::load(&std::fs::read_to_string(&ex1).unwrap()).unwrap().problem;
    let local = residual_check(&cert, &prob, 2000, 7).unwrap();
    let remote: ResidualReport = serde_json::from_value(report["residual"].clone()).unwrap();
    assert_eq!(local, remote);
}

#[test]
fn doubled_v_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let cert_path = solve_ex1(dir.path());
    let mut cert = Certificate::from_json(&std::fs::read_to_string(&cert_path).unwrap()).unwrap();
    cert.v = cert.v.scale(2.0);
    std::fs::write(&cert_path, cert.to_json().unwrap()).unwrap();
    let out = run(&["verify", cert_path.to_str().unwrap(), problem("ex1_population.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    let report = json(&out);
    let target = report["residual"]["constraints"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "target")
        .unwrap()
        .clone();
    assert!(target["violations"].as_u64().unwrap() > 0);
}

#[test]
fn missing_gram_blocks_skip_the_psd_check() {
    let dir = tempfile::tempdir().unwrap();
    let cert_path = solve_ex1(dir.path());
    let mut raw: Value = serde_json::from_str(&std::fs::read_to_string(&cert_path).unwrap()).unwrap();
    raw.as_object_mut().unwrap().remove("gram");
    std::fs::write(&cert_path, raw.to_string()).unwrap();
    let out = run(&["verify", cert_path.to_str().unwrap(), problem("ex1_population.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert!(report["gram"].is_null());
    assert_eq!(report["passed"], true);
}

#[test]
fn malformed_polynomial_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(problem("ex1_population.json")).unwrap().replace("100*x1^2", "100*x1^^2");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text).unwrap();
    let out = run(&["solve", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("column") && err.contains(" g "), "{err}");
}

#[test]
fn low_degrees_never_answer_silently_wrong() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("c.json");
    let out = run(&[
        "solve",
        problem("ex2_nonlinear_drift.json").to_str().unwrap(),
        "--degree-v=2",
        "--degree-u=2",
        "--degree-s=2",
        "--degree-p=2",
        "--out",
        cert.to_str().unwrap(),
    ]);
    match out.status.code() {
        Some(0) => {
            let check = run(&["verify", cert.to_str().unwrap(), problem("ex2_nonlinear_drift.json").to_str().unwrap()]);
            assert_eq!(check.status.code(), Some(0));
        }
        Some(4) => {}
        other => panic!("exit {other:?}: {}", String::from_utf8_lossy(&out.stderr)),
    }
    let out = run(&["solve", problem("ex2_nonlinear_drift.json").to_str().unwrap(), "--degree-v=1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_trivial_and_oracle_points() {
    let ex1 = problem("ex1_population.json");
    let ex1 = ex1.to_str().unwrap();
    let est = json(&run(&["simulate", ex1, "--x0", "0.05"]));
    assert_eq!((est["estimate"].as_f64(), est["upper"].as_f64()), (Some(1.0), Some(1.0)));
    let est = json(&run(&["simulate", ex1, "--x0=-1"]));
    assert_eq!(est["estimate"].as_f64(), Some(0.0));

    // hitting 0.1 before 1 from 0.5: (1 - 0.5^5) / (1 - 0.1^5)
    let exact = (1.0 - 0.5f64.powi(5)) / (1.0 - 1e-5);
    let est = json(&run(&["simulate", ex1, "--x0", "0.5", "--paths", "4000", "--seed", "3"]));
    let (lo, hi) = (est["lower"].as_f64().unwrap(), est["upper"].as_f64().unwrap());
    assert!(lo - 0.005 <= exact && exact <= hi + 0.005, "[{lo}, {hi}] vs {exact}");

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = run(&["simulate", ex1, "--x0", "0.5", "--paths", "10", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(std::fs::read_to_string(trace).unwrap().starts_with("t,x1\n"));
}

#[test]
fn levelset_and_sdpa_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("c.json");
    let dump = dir.path().join("ex1.dat-s");
    let out = run(&[
        "solve",
        problem("ex1_population.json").to_str().unwrap(),
        "--out",
        cert.to_str().unwrap(),
        "--sdpa-dump",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let sdp = reachcert::sdp::sdpa::read_sdpa(&std::fs::read_to_string(dump).unwrap()).unwrap();
    assert!(sdp.n_constraints() > 0);

    let out = run(&[
        "levelset",
        cert.to_str().unwrap(),
        problem("ex1_population.json").to_str().unwrap(),
        "--levels",
        "0.9,0.5",
        "--grid",
        "21",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x1,v,member_p1,member_p2"));
    // 0.9 members are 0.5 members
    for row in lines {
        let f: Vec<&str> = row.split(',').collect();
        assert!(!(f[2] == "1" && f[3] == "0"), "{row}");
    }
}

#[test]
fn safety_needs_an_initial_set() {
    let out = run(&["safety", problem("ex1_population.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["safety", problem("ex1_safety.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let cert = json(&out);
    assert_eq!(cert["mode"], "safety");
    // INI contains the target, so the bound cannot drop below 1
    assert!(cert["p_threshold"].as_f64().unwrap() >= 1.0 - 1e-6);
}
