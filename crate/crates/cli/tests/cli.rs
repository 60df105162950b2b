use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use advbound::ReportDocument;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn advbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advbound"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> ReportDocument {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    ReportDocument::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap()
}

/// Two labelled blobs in the positive quadrant, label in column 2.
fn write_blobs(dir: &Path, n: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut text = String::from("x,y,label\n");
    for i in 0..n {
        let c = i % 2;
        let (cx, cy) = if c == 0 { (1.0, 0.3) } else { (0.3, 1.0) };
        let x: f64 = cx + rng.random_range(-0.35..0.35);
        let y: f64 = cy + rng.random_range(-0.35..0.35);
        text.push_str(&format!("{},{},{c}\n", x.abs(), y.abs()));
    }
    let path = dir.join("blobs.csv");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_alpha_is_a_usage_error() {
    let out = advbound(&["bound", "--input", "x.csv", "--epsilon", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--alpha"));
}

#[test]
fn bound_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_blobs(dir.path(), 200);
    let args = [
        "bound", "--input", csv.to_str().unwrap(), "--label-column", "2", "--epsilon", "0.1", "--alpha", "0.1",
        "--iterations", "4", "--seed", "3",
    ];
    let a = report(&advbound(&args));
    let b = report(&advbound(&args));
    assert_eq!(a.body().unwrap(), b.body().unwrap());
    assert_eq!(a.schema_version, "1");
    assert_eq!(a.config["bound"]["seed"], 3);
    assert_eq!(a.result["points"].as_array().unwrap().len(), 4);
}

#[test]
fn cached_distances_give_the_same_bound() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_blobs(dir.path(), 150);
    let cache = dir.path().join("d.advd");
    let csv = csv.to_str().unwrap();
    let out = advbound(&[
        "distances", "--input", csv, "--label-column", "2", "--metric", "trace-amplitude", "--output",
        cache.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let common = ["--epsilon", "0.1", "--alpha", "0.1", "--iterations", "3"];
    let mut from_csv = vec!["bound", "--input", csv, "--label-column", "2", "--metric", "trace-amplitude"];
    from_csv.extend(common);
    let mut from_cache = vec!["bound", "--input", cache.to_str().unwrap(), "--format", "binary-cache"];
    from_cache.extend(common);
    let a = report(&advbound(&from_csv));
    let b = report(&advbound(&from_cache));
    assert_eq!(a.result, b.result);

    let mut mismatch = from_cache.clone();
    mismatch.extend(["--metric", "l2"]);
    assert_eq!(advbound(&mismatch).status.code(), Some(2));
}

#[test]
fn zero_strength_attack_matches_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_blobs(dir.path(), 120);
    let model = dir.path().join("model.json");
    for attack in ["pgd-l2", "td-pgd"] {
        let out = advbound(&[
            "attack", "--input", csv.to_str().unwrap(), "--label-column", "2", "--attack", attack, "--epsilon", "0",
            "--train", "--model-out", model.to_str().unwrap(),
        ]);
        let r = report(&out);
        assert_eq!(r.result["clean_error"], r.result["adversarial_error"]);
        assert_eq!(r.result["violations"], 0);
    }
    let trained = report(&advbound(&[
        "attack", "--input", csv.to_str().unwrap(), "--label-column", "2", "--attack", "td-pgd", "--epsilon", "0.2",
        "--train",
    ]));
    let loaded = report(&advbound(&[
        "attack", "--input", csv.to_str().unwrap(), "--label-column", "2", "--attack", "td-pgd", "--epsilon", "0.2",
        "--model-in", model.to_str().unwrap(),
    ]));
    assert_eq!(trained.result, loaded.result);
    let adv = trained.result["adversarial_error"].as_f64().unwrap();
    assert!(adv >= trained.result["clean_error"].as_f64().unwrap());
}

#[test]
fn attack_without_model_source_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_blobs(dir.path(), 20);
    let out = advbound(&[
        "attack", "--input", csv.to_str().unwrap(), "--label-column", "2", "--attack", "pgd-l2", "--epsilon", "0.1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = advbound(&[
        "attack", "--input", csv.to_str().unwrap(), "--attack", "pgd-l2", "--epsilon", "0.1", "--train",
    ]);
    assert_eq!(out.status.code(), Some(2), "unlabelled input must be rejected");
}

#[test]
fn sweep_writes_one_row_per_sphere_count() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_blobs(dir.path(), 200);
    let table = dir.path().join("sweep.csv");
    let r = report(&advbound(&[
        "sweep-t", "--input", csv.to_str().unwrap(), "--label-column", "2", "--epsilon", "0.1", "--alpha", "0.1",
        "--iterations", "2", "--t-values", "1,5,20", "--csv", table.to_str().unwrap(),
    ]));
    assert_eq!(r.result.as_array().unwrap().len(), 3);
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("spheres,"));
}

#[test]
fn invert_below_zero_strength_bound_is_a_bracket_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_blobs(dir.path(), 200);
    let out = advbound(&[
        "invert", "--input", csv.to_str().unwrap(), "--label-column", "2", "--alpha", "0.1", "--iterations", "2",
        "--risk-budget", "0.01", "--eps-hi", "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bracket"));
    let r = report(&advbound(&[
        "invert", "--input", csv.to_str().unwrap(), "--label-column", "2", "--alpha", "0.1", "--iterations", "2",
        "--risk-budget", "1.0", "--eps-hi", "0.5",
    ]));
    assert_eq!(r.result["c_epsilon"], 0.5);
}

#[test]
fn malformed_inputs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    let out = advbound(&["bound", "--input", bad.to_str().unwrap(), "--format", "idx", "--epsilon", "0.1", "--alpha", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
    let out = advbound(&["bound", "--input", "/nonexistent.csv", "--epsilon", "0.1", "--alpha", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let csv = write_blobs(dir.path(), 20);
    let out = advbound(&[
        "bound", "--input", csv.to_str().unwrap(), "--metric", "trace-amplitude", "--epsilon", "1.5", "--alpha", "0.1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
