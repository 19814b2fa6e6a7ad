use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fairlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairlens"))
        .args(args)
        .env("FAIRLENS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn synth(dir: &Path, n: usize) -> PathBuf {
    let out = fairlens(&["synth", "--out", dir.to_str().unwrap(), "--n", &n.to_string(), "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("synthetic.json")
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn validate_accepts_matching_counts_and_rejects_tampered_ones() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 60);
    assert_eq!(code(&fairlens(&["validate", "--manifest", manifest.to_str().unwrap()])), 0);

    let text = std::fs::read_to_string(&manifest).unwrap();
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, text.replace("\"n\": 60", "\"n\": 61")).unwrap();
    let out = fairlens(&["validate", "--manifest", tampered.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"matches\": false"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&fairlens(&["validate", "--manifest", missing.to_str().unwrap()])), 2);

    let manifest = synth(dir.path(), 40);
    let out = fairlens(&["audit", "--manifest", manifest.to_str().unwrap(), "--metrics", "dp,nonsense"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));

    assert_eq!(code(&fairlens(&["audit", "--bogus-flag"])), 2);
    assert_eq!(code(&fairlens(&["bench", "--metrics", "xyz", "--sizes", "100"])), 2);
}

#[test]
fn bench_rows_scale_with_sizes() {
    let rows = |sizes: &str| {
        let out = fairlens(&["bench", "--sizes", sizes, "--value-counts", "2,6", "--no-hfm"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap().lines().count() - 1
    };
    let one = rows("1000");
    assert_eq!(rows("1000,2000"), 2 * one);
}

#[test]
fn audit_and_experiment_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 150);
    let before = snapshot(dir.path());
    let out_dir = tempfile::tempdir().unwrap();
    let m = manifest.to_str().unwrap();

    let audit = fairlens(&["audit", "--manifest", m, "--learners", "stump", "--format", "csv", "--out", out_dir.path().to_str().unwrap()]);
    assert_eq!(code(&audit), 0, "{}", String::from_utf8_lossy(&audit.stderr));
    assert!(out_dir.path().join("report.json").exists());
    assert!(out_dir.path().join("metrics.csv").exists());

    let exp_dir = out_dir.path().join("exp");
    let exp = fairlens(&[
        "experiment", "--manifest", m, "--learners", "stump,logreg(20,0.5)", "--k", "3", "--sizes", "200",
        "--value-counts", "2,6", "--out", exp_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&exp), 0, "{}", String::from_utf8_lossy(&exp.stderr));
    for f in ["underestimation.csv", "timing.csv", "correlation.csv", "tradeoff.csv", "relation.csv", "report.json"] {
        assert!(exp_dir.join(f).exists(), "{f} missing");
    }
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn external_predictions_are_audited() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 80);
    let preds = dir.path().join("preds.csv");
    let mut text = String::from("row_id,hard,score\n");
    for r in 0..80 {
        let s = (r % 10) as f64 / 10.0;
        text.push_str(&format!("{r},{},{s}\n", u8::from(s >= 0.5)));
    }
    std::fs::write(&preds, text).unwrap();
    let out = fairlens(&[
        "audit", "--manifest", manifest.to_str().unwrap(), "--predictions", preds.to_str().unwrap(),
        "--metrics", "dp,eo,dr,bgl",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("\"dp.alt\""));
    // DR needs the model, which external predictions do not provide
    assert!(stdout.contains("\"skipped\""));
}
