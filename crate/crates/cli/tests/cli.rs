use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cdpa::io::write_matrix_text;
use cdpa::simulate::{generate_setup, SimulationConfig};
use cdpa::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

fn cdpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdpa")).args(args).env_remove("CDPA_THREADS").output().expect("spawn cdpa")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn write(dir: &Path, name: &str, m: &Matrix) -> String {
    let p = dir.join(name);
    write_matrix_text(&p, m, b',').unwrap();
    p.display().to_string()
}

fn low_rank(p: usize, n: usize, r: usize, seed: u64) -> Matrix {
    gaussian(p, r, seed) * gaussian(r, n, seed + 1) + gaussian(p, n, seed + 2) * 0.1
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn oracle_reports_six_values_and_warns_outside_sweep() {
    let v = json(&cdpa(&["oracle"]));
    let got: Vec<f64> = v.as_array().unwrap().iter().map(|o| o["matrix"].as_f64().unwrap()).collect();
    for (g, want) in got.iter().zip([0.890, 0.479, 0.213, 0.126, 0.092, 0.088]) {
        assert!((g - want).abs() < 2e-3);
    }
    assert_eq!(got.len(), 6);
    let out = cdpa(&["oracle", "--theta", "90"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn decompose_identical_inputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let y = write(dir.path(), "y.csv", &low_rank(30, 80, 3, 1));
    let out_dir = dir.path().join("out");
    let v = json(&cdpa(&["decompose", &y, &y, "--ranks", "3,3,3", "--out", &s(&out_dir)]));
    assert!((v["explained"].as_f64().unwrap() - 1.0).abs() < 1e-8);

    let on_disk = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    let parsed: Value = serde_json::from_str(&on_disk).unwrap();
    assert_eq!(parsed, v);
    for a in v["artifacts"].as_array().unwrap() {
        assert!(PathBuf::from(a.as_str().unwrap()).exists(), "{a}");
    }
    let c = cdpa::io::read_matrix::<f64>(out_dir.join("c.bin")).unwrap();
    assert_eq!(c.shape(), (30, 80));
}

#[test]
fn decompose_is_deterministic_except_timings() {
    let dir = tempfile::tempdir().unwrap();
    let y1 = write(dir.path(), "a.csv", &low_rank(25, 60, 2, 3));
    let y2 = write(dir.path(), "b.csv", &low_rank(20, 60, 2, 3).rows(0, 20).into_owned());
    let run = |name: &str| {
        let mut v =
            json(&cdpa(&["decompose", &y1, &y2, "--auto-ranks", "--perm", "dspfp", "--seed", "7", "--out", &s(&dir.path().join(name))]));
        v.as_object_mut().unwrap().remove("timings");
        v.as_object_mut().unwrap().remove("artifacts");
        v
    };
    assert_eq!(run("x"), run("y"));
    let a = std::fs::read(dir.path().join("x").join("c.bin")).unwrap();
    let b = std::fs::read(dir.path().join("y").join("c.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decompose_records_positive_sign() {
    let dir = tempfile::tempdir().unwrap();
    let x = low_rank(30, 100, 3, 11);
    let y1 = write(dir.path(), "a.csv", &x);
    let y2 = write(dir.path(), "b.csv", &(&x + gaussian(30, 100, 12) * 0.5));
    let v = json(&cdpa(&["decompose", &y1, &y2, "--ranks", "3,3,3", "--sign", "auto", "--out", &s(&dir.path().join("o"))]));
    assert_eq!(v["sign"]["sign"], 1);
    let neg = write(dir.path(), "neg.csv", &(-(&x + gaussian(30, 100, 12) * 0.5)));
    let v = json(&cdpa(&["decompose", &y1, &neg, "--ranks", "3,3,3", "--out", &s(&dir.path().join("n"))]));
    assert_eq!(v["sign"]["sign"], -1);
}

#[test]
fn decompose_with_bootstrap_and_permutation_file() {
    let dir = tempfile::tempdir().unwrap();
    let x = low_rank(12, 60, 2, 21);
    let y1 = write(dir.path(), "a.csv", &x);
    let y2 = write(dir.path(), "b.csv", &(&x + gaussian(12, 60, 22) * 0.3));
    let perm = dir.path().join("perm.txt");
    std::fs::write(&perm, (0..12).map(|i| i.to_string()).collect::<Vec<_>>().join(" ")).unwrap();
    let v = json(&cdpa(&[
        "decompose",
        &y1,
        &y2,
        "--ranks",
        "2,2,2",
        "--perm",
        &s(&perm),
        "--bootstrap",
        "100",
        "--seed",
        "3",
        "--out",
        &s(&dir.path().join("o")),
    ]));
    assert_eq!(v["permutation_method"], "provided");
    let ci = &v["bootstrap"];
    assert!(ci["lower"].as_f64().unwrap() <= ci["upper"].as_f64().unwrap());
    assert_eq!(ci["replicates"], 100);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", &gaussian(10, 20, 1));
    let b = write(dir.path(), "b.csv", &gaussian(10, 21, 2));
    let z = write(dir.path(), "z.csv", &Matrix::zeros(10, 20));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,x\n").unwrap();
    let o = s(&dir.path().join("o"));

    assert_eq!(cdpa(&["decompose", &a, &b, "--ranks", "1,1,1", "--out", &o]).status.code(), Some(2));
    let out = cdpa(&["decompose", &a, &s(&bad), "--ranks", "1,1,1", "--out", &o]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(cdpa(&["decompose", &a, &a, "--ranks", "1,1,1", "--perm", "missing.txt", "--out", &o]).status.code(), Some(2));
    assert_eq!(cdpa(&["decompose", &a, &a, "--ranks", "1,1"]).status.code(), Some(2));
    assert_eq!(cdpa(&["decompose", &z, &z, "--ranks", "1,1,1", "--out", &o]).status.code(), Some(3));
    let out = cdpa(&["decompose", &z, &z, "--ranks", "1,1,1", "--out", &o]);
    assert!(out.stdout.is_empty());
}

#[test]
fn ranks_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulationConfig { seed: 5, ..SimulationConfig::setup1(15.0, 300, 1.0) };
    let (y1, y2, _) = generate_setup(&cfg).unwrap();
    let f1 = write(dir.path(), "y1.csv", y1.values());
    let f2 = write(dir.path(), "y2.csv", y2.values());
    let v = json(&cdpa(&["ranks", &f1, &f2]));
    assert_eq!((v["r1"].as_u64(), v["r2"].as_u64(), v["r12"].as_u64()), (Some(5), Some(5), Some(5)));
    assert_eq!(v["screen"], true);

    let v = json(&cdpa(&["ranks", &f1, &f1]));
    assert_eq!(v["r12"], v["r1"]);

    let n1 = write(dir.path(), "n1.csv", &gaussian(60, 300, 40));
    let n2 = write(dir.path(), "n2.csv", &gaussian(60, 300, 41));
    let v = json(&cdpa(&["ranks", &n1, &n2]));
    assert_eq!(v["screen"], false);
}

#[test]
fn simulate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let v = json(&cdpa(&["simulate", "--theta", "0,15", "--p1", "40", "--reps", "1", "--n", "100", "--out", &s(&out)]));
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    assert!((cells[0]["oracle"].as_f64().unwrap() - 0.890).abs() < 2e-3);
    assert!((cells[1]["oracle"].as_f64().unwrap() - 0.479).abs() < 2e-3);
    for a in v["artifacts"].as_array().unwrap() {
        assert!(PathBuf::from(a.as_str().unwrap()).exists());
    }
    let csv = std::fs::read_to_string(out.join("cell_000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let v = json(&cdpa(&["--threads", "1", "simulate", "--setup", "2", "--p1", "40", "--reps", "1", "--n", "100", "--out", &s(&out)]));
    assert_eq!(v["cells"][0]["config"]["p2"], 900);
}

#[test]
fn match_recovers_scrambled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let b1 = gaussian(6, 2, 9);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let mut b2 = Matrix::zeros(6, 2);
    for i in 0..6 {
        b2.row_mut(perm[i]).copy_from(&b1.row(i));
    }
    let f1 = write(dir.path(), "b1.csv", &b1);
    let f2 = write(dir.path(), "b2.csv", &b2);
    let out = dir.path().join("perm.json");
    for method in ["exhaustive", "dspfp"] {
        let v = json(&cdpa(&["match", &f1, &f2, "--method", method, "--out", &s(&out)]));
        assert!((v["objective"].as_f64().unwrap() - 2.0).abs() < 1e-10, "{method}");
    }
    let written: Vec<usize> = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written.len(), 6);
}

#[test]
fn bootstrap_command() {
    let dir = tempfile::tempdir().unwrap();
    let x = low_rank(10, 50, 2, 31);
    let y1 = write(dir.path(), "a.csv", &x);
    let y2 = write(dir.path(), "b.csv", &(&x + gaussian(10, 50, 32) * 0.3));
    let v = json(&cdpa(&["bootstrap", &y1, &y2, "--ranks", "2,2,1", "--reps", "100", "--seed", "4"]));
    assert!(v["lower"].as_f64().unwrap() <= v["point"].as_f64().unwrap() + 0.1);
    assert_eq!(v["replicates"], 100);
    assert_eq!(cdpa(&["bootstrap", &y1, &y2, "--ranks", "2,2,1", "--reps", "10"]).status.code(), Some(2));
}
