use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use asbart::model_io::load_model;

fn asbart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asbart"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("train{seed}.csv"));
    let o = asbart(&["gen-friedman", "--n", &n.to_string(), "--seed", &seed.to_string(), "--noise", "low", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn quick_fit(data: &Path, model: &Path, gate: &str) -> Output {
    asbart(&[
        "fit", "--data", p(data), "--target", "y", "--trees", "8", "--sweeps", "6", "--burnin", "2",
        "--gate", gate, "--seed", "3", "--out", p(model),
    ])
}

fn predictions(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row_index,prediction"));
    lines
        .enumerate()
        .map(|(i, l)| {
            let (idx, v) = l.split_once(',').unwrap();
            assert_eq!(idx.parse::<usize>().unwrap(), i);
            v.parse().unwrap()
        })
        .collect()
}

/// Rewrites a CSV with its columns in reverse order.
fn reverse_columns(src: &Path, dst: &Path) {
    let text = fs::read_to_string(src).unwrap();
    let out: Vec<String> = text
        .lines()
        .map(|l| l.split(',').rev().collect::<Vec<_>>().join(","))
        .collect();
    fs::write(dst, out.join("\n") + "\n").unwrap();
}

#[test]
fn missing_data_flag_is_a_usage_error() {
    let o = asbart(&["fit", "--out", "never.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--data"));
    assert!(!Path::new("never.json").exists());
}

#[test]
fn fit_then_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), 150, 1);
    let model = dir.path().join("m.json");
    let o = quick_fit(&train, &model, "linear");
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("sweeps: 6") && text.contains("final sigma^2") && text.contains("elapsed seconds"));
    load_model(&model).unwrap();

    let out = dir.path().join("pred.csv");
    let o = asbart(&["predict", "--model", p(&model), "--data", p(&train), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = predictions(&out);
    assert_eq!(pred.len(), 150);
    assert!(pred.iter().all(|v| v.is_finite()));

    // name-keyed columns: order does not matter
    let permuted = dir.path().join("permuted.csv");
    reverse_columns(&train, &permuted);
    let out2 = dir.path().join("pred2.csv");
    let o = asbart(&["predict", "--model", p(&model), "--data", p(&permuted), "--out", p(&out2)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(predictions(&out2), pred);

    // an unknown extra column is reported and ignored
    let extra = dir.path().join("extra.csv");
    let text = fs::read_to_string(&train).unwrap();
    let widened: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l},junk") } else { format!("{l},{i}") })
        .collect();
    fs::write(&extra, widened.join("\n")).unwrap();
    let out3 = dir.path().join("pred3.csv");
    let o = asbart(&["predict", "--model", p(&model), "--data", p(&extra), "--out", p(&out3)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("junk"), "no warning: {}", stderr(&o));
    assert_eq!(predictions(&out3), pred);
}

#[test]
fn hard_gate_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), 80, 2);
    let model = dir.path().join("h.json");
    let o = quick_fit(&train, &model, "hard");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("hard mode"));
    let m = load_model(&model).unwrap();
    assert_eq!(m.bandwidth.percents, vec![0.0]);
    assert!(m.forests.iter().flat_map(|f| &f.trees).all(|t| t.tau == 0.0));
}

#[test]
fn runtime_errors_exit_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), 40, 3);
    let model = dir.path().join("m.json");
    let o = asbart(&["fit", "--data", p(&train), "--target", "nope", "--out", p(&model)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!model.exists());

    let o = asbart(&["predict", "--model", p(&dir.path().join("absent.json")), "--data", p(&train), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("x.csv").exists());

    let o = asbart(&["bench", "--methods", "bogus", "--reps", "1"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn predict_rejects_missing_feature_column() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), 60, 4);
    let model = dir.path().join("m.json");
    assert!(quick_fit(&train, &model, "linear").status.success());
    let text = fs::read_to_string(&train).unwrap();
    let dropped: Vec<String> = text.lines().map(|l| l.split_once(',').unwrap().1.to_string()).collect();
    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, dropped.join("\n")).unwrap();
    let out = dir.path().join("p.csv");
    let o = asbart(&["predict", "--model", p(&model), "--data", p(&narrow), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("x1"));
    assert!(!out.exists());
}

#[test]
fn categorical_schema_is_expanded() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cat.csv");
    let mut rows = vec!["colour,size,y".to_string()];
    for i in 0..90 {
        let colour = ["red", "green", "blue"][i % 3];
        let y = if colour == "green" { 5.0 } else { 0.0 } + (i % 7) as f64 * 0.1;
        rows.push(format!("{colour},{},{y}", i % 10));
    }
    fs::write(&csv, rows.join("\n")).unwrap();
    let schema = dir.path().join("schema.json");
    fs::write(
        &schema,
        r#"{"target": "y", "columns": [
            {"name": "colour", "kind": "categorical", "levels": ["red", "green", "blue"]},
            {"name": "size", "kind": "ordinal"}]}"#,
    )
    .unwrap();
    let model = dir.path().join("m.json");
    let o = asbart(&[
        "fit", "--data", p(&csv), "--schema", p(&schema), "--target", "y", "--trees", "5", "--sweeps", "6",
        "--burnin", "2", "--out", p(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = load_model(&model).unwrap();
    assert_eq!(m.feature_names, ["colour=red", "colour=green", "colour=blue", "size"]);
    assert_eq!(m.is_dummy, [true, true, true, false]);
    let out = dir.path().join("p.csv");
    let o = asbart(&["predict", "--model", p(&model), "--data", p(&csv), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = predictions(&out);
    assert!(pred[1] > pred[0] + 2.0, "green {} vs red {}", pred[1], pred[0]);
}

#[test]
fn full_fit_on_friedman_writes_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let train = gen(dir.path(), 500, 5);
    let model = dir.path().join("full.json");
    let o = asbart(&["fit", "--data", p(&train), "--target", "y", "--seed", "1", "--out", p(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = load_model(&model).unwrap();
    assert_eq!(m.forests.len(), 25);
    assert_eq!(m.forests[0].trees.len(), 50);
}

#[test]
fn bench_command_writes_csv_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = asbart(&[
        "bench", "--noise", "low", "--reps", "2", "--n", "100", "--trees", "5", "--seed", "4",
        "--methods", "hard,soft-linear,truth", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rep,method,rmse,seconds");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,hard,") && lines[6].starts_with("1,truth,0,"));
    let table = stdout(&o);
    assert!(table.contains("soft-linear") && table.contains("ratio"));
}
