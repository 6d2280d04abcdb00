//! Behaviour of the `cfaug` binary.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::{Command, Output};

use cfaug_cli::Manifest;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cfaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfaug")).args(args).output().unwrap()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

#[test]
fn help_on_every_subcommand() {
    let subcommands: &[&[&str]] = &[
        &[],
        &["gen-synth"],
        &["detect-outliers"],
        &["mine-cfpairs"],
        &["augment"],
        &["predict"],
        &["evaluate"],
        &["evaluate", "expt1a"],
        &["evaluate", "expt1b"],
        &["evaluate", "expt2"],
        &["evaluate", "augmented"],
        &["replicate-all"],
    ];
    for sub in subcommands {
        let mut args = sub.to_vec();
        args.push("--help");
        let out = cfaug(&args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{args:?}");
    }
    assert_eq!(cfaug(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_and_validation_errors_exit_2() {
    let out = cfaug(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");

    let config = repo().join("data/ref.json");
    let config = config.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for args in [
        vec!["evaluate", "expt1a", "--config", config, "--k", "0", "--out", out_dir],
        vec!["--threads", "0", "detect-outliers", "--config", config, "--out", out_dir],
        vec!["augment", "--config", config, "--n", "0", "--out", out_dir],
        vec!["detect-outliers", "--train", "/nonexistent.csv", "--out", out_dir],
    ] {
        let out = cfaug(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_json(&out)["error"], "validation", "{args:?}");
    }
}

#[test]
fn malformed_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = cfaug(&["detect-outliers", "--train", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_synth_reproduces_reference_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth.csv");
    let status = cfaug(&["gen-synth", "--out", out.to_str().unwrap()]).status;
    assert!(status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(repo().join("data/synth_ref.csv")).unwrap());
}

/// Splits the reference CSV into train and test files.
fn split_reference(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    let text = std::fs::read_to_string(repo().join("data/synth_ref.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let (mut train, mut test) = (vec![header], vec![header]);
    for line in lines {
        if line.split(',').nth(5) == Some("2018") {
            test.push(line);
        } else {
            train.push(line);
        }
    }
    let (a, b) = (dir.join("train.csv"), dir.join("test.csv"));
    std::fs::write(&a, train.join("\n") + "\n").unwrap();
    std::fs::write(&b, test.join("\n") + "\n").unwrap();
    (a, b)
}

#[test]
fn stage_subcommands_write_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = split_reference(dir.path());
    let (train, test) = (train.to_str().unwrap(), test.to_str().unwrap());
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();

    let pred = out.join("pred.csv");
    assert!(cfaug(&["predict", "--train", train, "--test", test, "--k", "5", "--out", pred.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(&pred).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("test_case_id,month,predicted_growth"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[5].split('|').count(), 5);
    assert_eq!(text.lines().count(), 60 * 38 + 1);

    assert!(cfaug(&["detect-outliers", "--train", train, "--test", test, "--out", o]).status.success());
    let labels = std::fs::read_to_string(out.join("boundary/labels.csv")).unwrap();
    assert!(labels.starts_with("case_id,rain_label,temperature_label,solar_label,is_outlier\n"));
    assert!(out.join("boundary/labels_test.csv").exists());

    assert!(cfaug(&["mine-cfpairs", "--train", train, "--delta", "1.0", "--max-diff", "1", "--out", o]).status.success());
    let pairs = std::fs::read_to_string(out.join("mining/pairs.csv")).unwrap();
    assert!(pairs.starts_with("normal_id,outlier_id,diff_features,pair_distance\n"));
    assert!(pairs.lines().skip(1).all(|l| !l.split(',').nth(2).unwrap().contains('|')));

    let args = ["augment", "--train", train, "--method", "cfa", "--n", "100", "--selections", "2", "--target-policy", "delta", "--out", o];
    assert!(cfaug(&args).status.success());
    let cfa = std::fs::read_to_string(out.join("augment/cfa_2.csv")).unwrap();
    assert_eq!(cfa.lines().count(), 101);
    assert!(!out.join("augment/perturb_1.csv").exists());
    let prov = std::fs::read_to_string(out.join("augment/cfa_1_provenance.csv")).unwrap();
    assert!(prov.lines().skip(1).all(|l| l.ends_with(",delta")));
}

/// Artifact hashes of `replicate-all` on the reference config. Regenerate
/// with `CFAUG_BLESS=1` after an intended output change.
#[test]
fn replicate_all_matches_golden_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = repo().join("data/ref.json");
    let out = cfaug(&["replicate-all", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 42);
    assert!(manifest.config.out.is_none());
    let got: BTreeMap<String, String> = manifest.artifacts.into_iter().map(|a| (a.path, a.sha256)).collect();
    assert_eq!(
        got["synth.csv"],
        hex_sha256(&std::fs::read(repo().join("data/synth_ref.csv")).unwrap())
    );

    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ref_manifest.json");
    if std::env::var_os("CFAUG_BLESS").is_some() {
        std::fs::write(&golden, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let want: BTreeMap<String, String> = serde_json::from_str(&std::fs::read_to_string(&golden).unwrap()).unwrap();
    let differing: Vec<_> = want.keys().filter(|k| got.get(*k) != want.get(*k)).collect();
    assert!(differing.is_empty() && got.len() == want.len(), "changed artifacts: {differing:?}");
}

fn hex_sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
