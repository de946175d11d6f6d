use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reprdist::constructions::{build_circle_pair, CircleSpec};
use reprdist::io::{read_csv, write_model};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reprdist")).args(args).output().expect("binary runs")
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let p = std::env::temp_dir().join(format!("reprdist-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&p).unwrap();
        Self(p)
    }

    fn file(&self, name: &str) -> String {
        self.0.join(name).to_str().unwrap().to_string()
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn csv_rows(path: &str) -> (Vec<String>, Vec<Vec<String>>) {
    read_csv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn table1_is_byte_identical_across_runs() {
    let dir = TempDir::new("t1");
    let (a, b) = (dir.file("a.csv"), dir.file("b.csv"));
    assert!(bin(&["table1", "--out", &a]).status.success());
    assert!(bin(&["table1", "--out", &b]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (_, rows) = csv_rows(&a);
    assert_eq!(rows.len(), 6);
}

#[test]
fn table1_json_records_pivots_and_config() {
    let dir = TempDir::new("t1json");
    let (csv, json) = (dir.file("t.csv"), dir.file("t.json"));
    assert!(bin(&["table1", "--rho", "3,18", "--out", &csv, "--json", &json]).status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["command"], "table1");
    assert_eq!(v["config"]["rho"].as_array().unwrap().len(), 2);
    assert!(v["result"]["pivots"]["x_llv"].is_array());
}

#[test]
fn table1_rejects_empty_rho_list() {
    let out = bin(&["table1", "--rho", ""]);
    assert!(!out.status.success());
}

#[test]
fn bound_sweep_zero_noise_row_is_exact() {
    let dir = TempDir::new("bound");
    let out = dir.file("b.csv");
    let res = bin(&["bound-sweep", "--sigmas", "0.1,0,0.05", "--out", &out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (h, rows) = csv_rows(&out);
    let sig: Vec<f64> = rows.iter().map(|r| r[col(&h, "param")].parse().unwrap()).collect();
    assert_eq!(sig, vec![0.0, 0.05, 0.1]);
    let first = &rows[0];
    assert_eq!(first[col(&h, "epsilon")].parse::<f64>().unwrap(), 0.0);
    assert!(first[col(&h, "lhs_emb")].parse::<f64>().unwrap() < 1e-9);
    for r in &rows {
        assert_ne!(r[col(&h, "holds")], "false");
    }
}

#[test]
fn width_sweep_with_two_seeds_leaves_std_empty() {
    let dir = TempDir::new("width");
    let out = dir.file("w.csv");
    let res = bin(&[
        "width-sweep",
        "--widths",
        "16",
        "--seeds",
        "2",
        "--steps",
        "1500",
        "--min-retained",
        "1",
        "--out",
        &out,
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (h, rows) = csv_rows(&out);
    let r = &rows[0];
    assert_eq!(r[col(&h, "width")], "16");
    assert_eq!(r[col(&h, "n_retained")], "2");
    assert!(!r[col(&h, "mean_d_llv")].is_empty());
    assert!(r[col(&h, "std_d_llv")].is_empty());
    assert!(r[col(&h, "std_max_d_svd")].is_empty());
}

fn write_reference(dir: &TempDir, name: &str, rho: f64) -> String {
    let pair = build_circle_pair(&CircleSpec::new(6, 20, 0).unwrap(), rho).unwrap();
    let path = dir.file(name);
    write_model(Path::new(&path), &pair.first, Some(&pair.weights)).unwrap();
    path
}

#[test]
fn compare_model_with_itself_is_zero() {
    let dir = TempDir::new("cmp");
    let a = write_reference(&dir, "a.json", 3.0);
    let report = dir.file("r.json");
    let res = bin(&["compare", &a, &a, "--out", &report]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let r = &v["result"];
    assert!(r["d_kl_ab"].as_f64().unwrap().abs() < 1e-12);
    assert!(r["llv"]["value"].as_f64().unwrap() < 1e-9);
    assert!((r["similarity"]["m_cca"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(r["max_d_svd"]["value"].as_f64().unwrap() < 1e-9);
}

#[test]
fn compare_reports_every_schema_problem() {
    let dir = TempDir::new("schema");
    let bad = dir.file("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 1, "M": 2, "input_ids": [0, 1], "embeddings": [1.0]}"#).unwrap();
    let good = write_reference(&dir, "good.json", 3.0);
    let res = bin(&["compare", &good, &bad]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    for field in ["label_ids", "unembeddings"] {
        assert!(err.contains(field), "missing {field} in {err}");
    }
}

#[test]
fn compare_rejects_mismatched_grids() {
    let dir = TempDir::new("grid");
    let a = write_reference(&dir, "a.json", 3.0);
    let pair = build_circle_pair(&CircleSpec::new(6, 10, 0).unwrap(), 3.0).unwrap();
    let b = dir.file("b.json");
    write_model(Path::new(&b), &pair.first, Some(&pair.weights)).unwrap();
    let res = bin(&["compare", &a, &b]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("input_ids"));
}

#[test]
fn gen_data_then_train_writes_checkpoint_and_table() {
    let dir = TempDir::new("train");
    let (data, ckpt, table) = (dir.file("d.json"), dir.file("c.json"), dir.file("t.json"));
    assert!(bin(&["gen-data", "--c", "4", "--n", "2000", "--out", &data]).status.success());
    let res = bin(&[
        "train",
        "--data",
        &data,
        "--width",
        "16",
        "--steps",
        "200",
        "--out",
        &ckpt,
        "--table-out",
        &table,
        "--eval-points",
        "100",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(t["input_ids"].as_array().unwrap().len(), 100);
    assert_eq!(t["label_ids"].as_array().unwrap().len(), 4);
    let res = bin(&["compare", &table, &table]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}
