//! The `crossfit` binary end to end: outputs, exit codes and determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use crossfit::sim::{generate, SimConfig};

fn crossfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossfit"))
        .args(args)
        .env("CROSSFIT_THREADS", "2")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_replicate(path: &Path, g: usize, h: usize, m: usize, seed: u64) {
    let config = SimConfig {
        g,
        h,
        m,
        seed,
        ..SimConfig::default()
    };
    let rep = generate(&config, 0).unwrap();
    rep.write_csv(fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn fit_with_decomposition_writes_a_nine_row_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_replicate(&data, 12, 10, 4, 1);
    let out = crossfit(&["fit", "--data", data.to_str().unwrap(), "--decompose", "x", "--method", "ml"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["method"], "ml");
    assert_eq!(json["estimates"].as_array().unwrap().len(), 9);
}

#[test]
fn fit_with_level_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = SimConfig {
        g: 10,
        h: 9,
        m: 3,
        seed: 2,
        ..SimConfig::default()
    };
    let rep = generate(&config, 0).unwrap();
    let d = rep.design;
    let p = &rep.covariate.parts;
    let mut w = csv::Writer::from_path(dir.path().join("levels.csv")).unwrap();
    w.write_record(["i", "j", "k", "y", "xa", "xb", "xab", "xw"]).unwrap();
    for i in 0..d.g {
        for j in 0..d.h {
            for k in 0..d.m {
                let t = d.index(i, j, k);
                let fields = [
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    (k + 1).to_string(),
                    rep.y[t].to_string(),
                    p.row[i].to_string(),
                    p.col[j].to_string(),
                    p.inter[d.cell(i, j)].to_string(),
                    p.within[t].to_string(),
                ];
                w.write_record(&fields).unwrap();
            }
        }
    }
    w.flush().unwrap();
    let report = dir.path().join("report.json");
    let out = crossfit(&[
        "fit",
        "--data",
        dir.path().join("levels.csv").to_str().unwrap(),
        "--row-cols",
        "xa",
        "--col-cols",
        "xb",
        "--inter-cols",
        "xab",
        "--within-cols",
        "xw",
        "--out",
        report.to_str().unwrap(),
        "--table",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["estimates"].as_array().unwrap().len(), 9);
    assert_eq!(json["covariates"], serde_json::json!(["xa", "xb", "xab", "xw"]));
    // the table goes to stdout when the report goes to a file
    assert!(String::from_utf8_lossy(&out.stdout).contains("xw"));
}

#[test]
fn identical_input_gives_identical_report_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_replicate(&data, 8, 7, 3, 5);
    let run = || crossfit(&["fit", "--data", data.to_str().unwrap(), "--decompose", "x"]);
    let (a, b) = (run(), run());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    // the report parses back to the same value
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let again = serde_json::to_string(&v).unwrap();
    assert_eq!(serde_json::from_str::<serde_json::Value>(&again).unwrap(), v);
}

#[test]
fn malformed_csv_is_a_data_error_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "i,j,k,y,x\n1,1,1,2.0,0.5\n1,2,1,oops,0.1\n").unwrap();
    let out = crossfit(&["fit", "--data", data.to_str().unwrap(), "--decompose", "x"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains('3'), "{}", stderr(&out));
}

#[test]
fn simulate_reads_a_mixture_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(
        &cfg,
        r#"{"g": 8, "h": 8, "m": 3, "replicates": 10, "seed": 4,
            "effects": {"alpha": "mixture", "e": "mixture"}}"#,
    )
    .unwrap();
    let csv_path = dir.path().join("cov.csv");
    let json_path = dir.path().join("rep.json");
    let out = crossfit(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--csv",
        csv_path.to_str().unwrap(),
        "--out",
        json_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(&csv_path).unwrap();
    assert!(table.starts_with("Estimate,g,h,m,Cvge,Len"));
    assert_eq!(table.lines().count(), 10);
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(reports[0]["config"]["effects"]["alpha"], "mixture");
}

#[test]
fn small_simulation_is_quick() {
    let start = Instant::now();
    let out = crossfit(&["simulate", "--reps", "10", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn bad_simulation_config_exits_four() {
    let out = crossfit(&["simulate", "--g", "1", "--reps", "5"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let out = crossfit(&["simulate", "--reps", "0"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn too_many_failed_replicates_exits_five() {
    // four observations cannot identify five coefficients
    let out = crossfit(&["simulate", "--g", "2", "--h", "2", "--m", "1", "--reps", "5"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn validation_is_deterministic_and_passes() {
    let a = crossfit(&["validate", "--seed", "3", "--instances", "50"]);
    let b = crossfit(&["validate", "--seed", "3", "--instances", "50"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
}
