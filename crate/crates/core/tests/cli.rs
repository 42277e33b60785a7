// SPDX-License-Identifier: MIT OR Apache-2.0

//! The command-line tool driven end to end on a small corpus.

use std::path::Path;
use std::process::{Command, Output};

use orthoeraser::corpus::Corpus;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthoeraser"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (corpus, sae, plan, erased, report) = (
        p(d, "corpus.json"),
        p(d, "sae.json"),
        p(d, "plan.json"),
        p(d, "erased.json"),
        p(d, "report"),
    );

    ok(&[
        "generate",
        "--dim", "16",
        "--features", "8",
        "--sensitive-features", "2",
        "--n-sens", "64",
        "--n-non", "64",
        "--layers", "6",
        "--peak-layer", "4",
        "--out", &corpus,
    ]);

    let localized = ok(&["localize", "--corpus", &corpus]);
    assert!(localized.contains("selected layer: 4"), "{localized}");

    ok(&["train-sae", "--corpus", &corpus, "--epochs", "20", "--k", "4", "--out", &sae]);
    let detected = ok(&["detect", "--corpus", &corpus, "--sae", &sae, "--k-coupled", "4", "--out", &plan]);
    assert!(detected.contains("sensitive:"));

    ok(&["erase", "--corpus", &corpus, "--sae", &sae, "--plan", &plan, "--out", &erased]);
    let before = Corpus::load(Path::new(&corpus)).unwrap();
    let after = Corpus::load(Path::new(&erased)).unwrap();
    assert_eq!(after.len(), before.len());
    let provenance = after.provenance.expect("erased corpus records its plan");
    assert_eq!(provenance.plan_hash.len(), 64);

    // invariant failures on an undertrained model exit 1; errors exit 2
    let ablated = run(&[
        "ablate", "--suite", "strategies", "--corpus", &corpus, "--sae", &sae, "--plan", &plan, "--out", &report,
    ]);
    assert!(matches!(ablated.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&ablated.stderr));
    assert!(d.join("report/results.json").exists());
    assert!(d.join("report/strategies.csv").exists());

    let rendered = p(d, "rendered");
    ok(&["report", "--in", &report, "--format", "csv", "--out", &rendered]);
    assert!(d.join("rendered/strategies.csv").exists());
}

#[test]
fn bad_input_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let junk = p(dir.path(), "junk.json");
    std::fs::write(&junk, "{\"schema\": ").unwrap();
    let out = run(&["localize", "--corpus", &junk]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed file"));
}
