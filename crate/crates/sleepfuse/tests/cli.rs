//! Drives the `sleepfuse` binary end to end on tiny cohorts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sleepfuse::exchange::write_store;
use sleepfuse_core::encoders::{ExternalEmbeddingStore, Modality};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sleepfuse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_MODEL: &str = "[encoder]\nmodel_dim = 8\nhead_count = 2\nff_hidden = 8\nembedding_dim = 4\n";

fn cohort(dir: &Path, patients: &str, epochs: &str) -> std::path::PathBuf {
    let out = dir.join("cohort");
    let o = run(&["synth", "--patients", patients, "--epochs", epochs, "--seed", "7", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.json")
}

#[test]
fn synth_rejects_zero_patients_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--patients", "0", "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = run(&["synth", "--patients", "3", "--epochs", "2", "--seed", "7", "--out", p(d), "--threads", "1"]);
        assert_eq!(code(&o), 0);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 13);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn train_evaluate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cohort(dir.path(), "4", "3");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("folds = 2\n[train]\ninitial_lr = 0.01\nepochs = 1\n{SMALL_MODEL}")).unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "train", "--config", p(&cfg), "--data", p(&manifest), "--out", p(&out), "--lr", "0.002", "--mode", "eog_only",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("toy_encoders"));
    for f in ["report.json", "report.txt", "dataset.json", "fold0.sfck", "fold0.meta", "fold1.sfck", "fold1.meta"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    // Flag beats file, file beats default.
    assert_eq!(report["hyperparameters"]["initial_lr"], 0.002);
    assert_eq!(report["hyperparameters"]["epochs"], 1);
    assert_eq!(report["hyperparameters"]["batch_size"], 12);
    assert_eq!(report["mode"], "eog_only");
    assert_eq!(report["fingerprint"].as_str().unwrap().len(), 64);

    let o = run(&["evaluate", "--checkpoint", p(&out.join("fold1.sfck")), "--data", p(&manifest)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let total: u64 = eval["confusion"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()))
        .sum();
    assert_eq!(total, 12);

    let rj = out.join("report.json");
    let o = run(&["report", p(&rj), p(&rj)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("toy_encoders ") && l.contains(" fine_tune ")).count(), 2, "{text}");
    let o = run(&["report", p(&rj), "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 1);
    assert_eq!(doc["rows"][0]["modality"], "eog_only");

    let o = run(&["report", p(&dir.path().join("missing.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn external_embeddings_probe_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cohort(dir.path(), "4", "5");
    let mut eog = ExternalEmbeddingStore::new(Modality::Audio, 6).unwrap();
    let mut psm = ExternalEmbeddingStore::new(Modality::Video, 3).unwrap();
    let labels: Vec<String> = (0..4)
        .map(|i| fs::read_to_string(dir.path().join(format!("cohort/P{i:03}_labels.txt"))).unwrap())
        .collect();
    for (i, text) in labels.iter().enumerate() {
        for (e, label) in text.lines().enumerate() {
            let code = label.len() as f64;
            eog.insert(format!("P{i:03}"), e as u32, vec![code; 6]).unwrap();
            psm.insert(format!("P{i:03}"), e as u32, vec![-code; 3]).unwrap();
        }
    }
    let (e, ps) = (dir.path().join("e.sfeb"), dir.path().join("p.sfeb"));
    write_store(&e, &eog).unwrap();
    write_store(&ps, &psm).unwrap();
    let out = dir.path().join("run");
    let base = ["train", "--data", p(&manifest), "--out", p(&out), "--folds", "2", "--eog-embeddings", p(&e)];

    let o = run(&[&base[..], &["--psm-embeddings", p(&ps), "--regime", "fine_tune"]].concat());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fine_tune"));

    let o = run(&[&base[..], &["--psm-embeddings", p(&ps), "--regime", "linear_probe", "--lr", "0.01"]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta = fs::read_to_string(out.join("fold0.meta")).unwrap();
    assert!(meta.contains("method=external_embeddings\n"));
    assert!(meta.contains("eog_dim=6\npsm_dim=3\n"));

    // Files swapped between modalities are a configuration error.
    let o = run(&["train", "--data", p(&manifest), "--out", p(&out), "--folds", "2", "--regime", "linear_probe",
        "--eog-embeddings", p(&ps), "--psm-embeddings", p(&e)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_gradient() {
    let o = run(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("pass ")).count(), 9, "{text}");

    let o = run(&["gradcheck", "--seeds", "3", "--corrupt", "dense", "--fragment", "dense"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("FAIL dense"));

    let o = run(&["gradcheck", "--fragment", "conv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn export_spectrograms_writes_raw_log_mel() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cohort(dir.path(), "2", "3");
    let out = dir.path().join("spec");
    let o = run(&["export-spectrograms", "--data", p(&manifest), "--out", p(&out), "--patient", "P001", "--limit", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["P001_0000.bin", "P001_0001.bin"]);
    let spec = sleepfuse::formats::read_spectrogram(&out.join(&names[0])).unwrap();
    assert_eq!((spec.channels, spec.n_mels, spec.n_frames), (2, 128, 2998));
    // Raw log-mel: untouched high bins sit at ln(1e-6).
    let top = spec.values[127 * 2998];
    assert!((f64::from(top) - 1e-6f64.ln()).abs() < 1e-3, "{top}");

    let o = run(&["export-spectrograms", "--data", p(&manifest), "--out", p(&out), "--patient", "P404"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&["train", "--mode", "triple"])), 1);
    assert_eq!(code(&run(&["bogus"])), 1);
    assert_eq!(code(&run(&["train"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}
