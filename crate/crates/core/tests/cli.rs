use std::process::{Command, Output};

use qconf::spectral::{EigenReport, SpectralBoundReport};
use qconf::verify::{DualExponents, InequalityReport};
use serde_json::Value;

fn qconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qconf")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn dilatation_example() {
    let o = qconf(&["dilatation", "--map", "affine:2,0,0,1", "--point", "0.5,0.5", "--kind", "outer"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["value"], 2.0);
}

#[test]
fn spectral_alpha_4_round_trips() {
    let o = qconf(&["spectral", "--alpha", "4"]);
    assert_eq!(code(&o), 0);
    let r: SpectralBoundReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r.antiderivative_mode);
    assert!((r.closed_form_bound - 1.0 / (11.7 * std::f64::consts::PI.powi(3))).abs() < 1e-12);
    assert_eq!(serde_json::to_value(&r).unwrap(), json(&o));
}

#[test]
fn dual_round_trips() {
    let o = qconf(&["dual", "--p", "3", "--q", "2.5", "--n", "3", "--mode", "sobolev"]);
    assert_eq!(code(&o), 0);
    let d: DualExponents = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((d.p_dual, d.q_dual), (3.0, 5.0));
}

#[test]
fn unsatisfied_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wrong.json");
    std::fs::write(
        &path,
        r#"{"checks": [{"kind": "opnorm", "map": "cusp:alpha=1.5", "domain": "diamond", "p": 2, "q": 1,
            "norm": "frobenius", "expect": 3.0}]}"#,
    )
    .unwrap();
    let o = qconf(&["suite", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let reports: Vec<InequalityReport> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(!reports[0].satisfied);
}

#[test]
fn parameter_errors_exit_2() {
    assert_eq!(code(&qconf(&["no-such-command"])), 2);
    assert_eq!(code(&qconf(&["spectral", "--alpha", "2"])), 2);
    assert_eq!(code(&qconf(&["evaluate", "--map", "cusp:alpha=0.5", "--point", "0,0"])), 2);
    assert_eq!(code(&qconf(&["dilatation", "--map", "identity", "--point", "0,0", "--kind", "bogus"])), 2);
    let negative_slack = ["verify-measure", "--map", "identity", "--box", "0,1,0,0.5", "--h", "0.0625", "--slack=-0.5"];
    assert_eq!(code(&qconf(&negative_slack)), 2);
}

#[test]
fn divergent_and_inconclusive_exit_3() {
    let o = qconf(&["opnorm", "--map", "cusp:alpha=4", "--domain", "diamond", "--p", "2", "--q", "1", "--norm", "frobenius"]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&o)["quadrature"]["divergent"], true);
    let coarse = qconf(&["verify-q", "--map", "identity", "--domain", "unitsquare", "--family", "opposite-sides:x", "--h", "0.125"]);
    assert_eq!(code(&coarse), 3);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let runs = [
        vec!["verify-q", "--map", "affine:1.5,0.5,0,1", "--domain", "unitsquare", "--family", "opposite-sides:x", "--h", "0.0625"],
        vec!["spectral", "--domain", "unitsquare", "--h", "0.0625"],
        vec!["modulus", "--domain", "rect:1x2", "--family", "opposite-sides:y", "--h", "0.0625"],
    ];
    for args in runs {
        let a = qconf(&args);
        let b = qconf(&args);
        assert_eq!(code(&a), 0, "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn eigen_report_round_trips() {
    let o = qconf(&["spectral", "--domain", "unitsquare", "--h", "0.0625"]);
    assert_eq!(code(&o), 0);
    let r: EigenReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.cells, 256);
    assert!((r.mu1 - std::f64::consts::PI.powi(2)).abs() < 0.1);
}

#[test]
fn suites() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"checks": []}"#).unwrap();
    let o = qconf(&["suite", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o), Value::Array(vec![]));

    let divergent = dir.path().join("divergent.json");
    std::fs::write(
        &divergent,
        r#"{"checks": [{"kind": "opnorm", "map": "cusp:alpha=2.5", "domain": "paper-triangle", "p": 2, "q": 1, "norm": "frobenius"}]}"#,
    )
    .unwrap();
    assert_eq!(code(&qconf(&["suite", divergent.to_str().unwrap()])), 3);

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&qconf(&["suite", missing.to_str().unwrap()])), 2);
}

#[test]
fn csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let density = dir.path().join("rho.csv");
    let o = qconf(&[
        "modulus",
        "--domain",
        "unitsquare",
        "--family",
        "opposite-sides:x",
        "--h",
        "0.0625",
        "--format",
        "csv",
        "-o",
        density.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&density).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,rho"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 256);
    assert!(rows.iter().all(|r| r.len() == 3 && r[2] >= 0.0));

    let table = dir.path().join("table.csv");
    let o = qconf(&[
        "spectral",
        "--domain",
        "unitsquare",
        "--table",
        "0.0625,0.03125",
        "--format",
        "csv",
        "-o",
        table.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "h,mu1,residual");
    assert_eq!(lines.len(), 3);
    let mu: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let exact = std::f64::consts::PI.powi(2);
    assert!((mu[1] - exact).abs() < (mu[0] - exact).abs());
}
