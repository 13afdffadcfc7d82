use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sqdiv_core::Rational;

fn sqdiv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqdiv")).arg("--out").arg(dir).args(args).output().expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn construct_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = sqdiv(dir.path(), &["sd-construct", "--grid", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file = dir.path().join("sd_witness.json");
    let out = sqdiv(dir.path(), &["sd-verify", file.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("condition_iii") && !stdout.contains("FAIL"));
}

#[test]
fn corrupted_witness_names_the_condition() {
    let dir = tempfile::tempdir().unwrap();
    assert!(sqdiv(dir.path(), &["sd-construct", "--grid", "3"]).status.success());
    let file = dir.path().join("sd_witness.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    doc["body"]["cond_iii"]["pieces"] = serde_json::json!([]);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = sqdiv(dir.path(), &["sd-verify", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("condition_iii"), "{stderr}");
    assert!(!stderr.contains("condition_ii\""), "{stderr}");
}

#[test]
fn decay_bound_column_nonincreasing() {
    let dir = tempfile::tempdir().unwrap();
    let out = sqdiv(dir.path(), &["decay", "--from", "5", "--to", "10", "--svg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("decay.csv"));
    assert_eq!(rows.len(), 6);
    let bounds: Vec<Rational> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(bounds.windows(2).all(|p| p[1] <= p[0]));
    let svg = fs::read_to_string(dir.path().join("decay.svg")).unwrap();
    assert!(svg.contains("<polyline") && svg.contains("seed=0"));
}

#[test]
fn same_seed_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        for args in [
            &["--seed", "5", "castle", "--random", "0.2"][..],
            &["--seed", "5", "tile", "--instances", "2"],
            &["--seed", "5", "nilpotency", "--trials", "1"],
        ] {
            let out = sqdiv(dir, args);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    for name in ["castle.json", "castle.csv", "tile_params.json", "tiling.csv", "nilpotency.json"] {
        let (x, y) = (fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        assert_eq!(x, y, "{name}");
    }
    let header: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("castle.json")).unwrap()).unwrap();
    assert_eq!(header["schema_version"], 1);
    assert_eq!(header["seed"], 5);
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        Command::new(env!("CARGO_BIN_EXE_sqdiv")).env("SQDIV_OUT_DIR", dir.path()).args(["sofic"]).output().unwrap();
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("sofic.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[3] == "true"));
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = sqdiv(dir.path(), &["sofic", "--e", "a, c"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
