// SPDX-License-Identifier: MIT OR Apache-2.0

//! Artifact files: round trips and the errors raised by damaged ones.

use serde_json::Value;

use orthoeraser::corpus::{generate, Corpus, CorpusConfig};
use orthoeraser::detector::{detect, DetectionPlan};
use orthoeraser::io::encode_f64s;
use orthoeraser::sae::SaeModel;
use orthoeraser::Error;

fn small_corpus() -> Corpus {
    generate(&CorpusConfig {
        dim: 8,
        n_features: 6,
        n_sensitive_features: 2,
        n_sensitive: 12,
        n_non_sensitive: 12,
        traces: None,
        ..Default::default()
    })
    .unwrap()
}

fn edit(text: &str, f: impl FnOnce(&mut Value)) -> String {
    let mut v: Value = serde_json::from_str(text).unwrap();
    f(&mut v);
    v.to_string()
}

#[test]
fn truncated_corpus_is_malformed() {
    let text = small_corpus().to_json();
    let cut = &text[..text.len() / 2];
    assert!(matches!(Corpus::from_json(cut), Err(Error::MalformedFile(_))));
}

#[test]
fn short_activation_vector_is_inconsistent() {
    let text = edit(&small_corpus().to_json(), |v| {
        v["activations"][3]["values"] = Value::String(encode_f64s(&[0.5; 7]));
    });
    assert!(matches!(Corpus::from_json(&text), Err(Error::DimensionInconsistency(_))));
}

#[test]
fn garbage_payload_is_malformed() {
    let text = edit(&small_corpus().to_json(), |v| {
        v["activations"][0]["values"] = Value::String("not base64!".into());
    });
    assert!(matches!(Corpus::from_json(&text), Err(Error::MalformedFile(_))));
}

#[test]
fn wrong_schema_or_version_is_rejected() {
    let corpus = small_corpus().to_json();
    let other = edit(&corpus, |v| v["schema"] = "orthoeraser-sae/1".into());
    assert!(matches!(Corpus::from_json(&other), Err(Error::VersionMismatch { .. })));
    let newer = edit(&corpus, |v| v["version"] = 99.into());
    assert!(matches!(Corpus::from_json(&newer), Err(Error::VersionMismatch { .. })));
}

#[test]
fn schemas_are_named() {
    let corpus = small_corpus();
    let model = SaeModel::init(8, 16, 2, 3).unwrap();
    let plan = detect(&model, &corpus, 2, 3).unwrap();
    let schema = |text: &str| serde_json::from_str::<Value>(text).unwrap()["schema"].clone();
    assert_eq!(schema(&corpus.to_json()), "orthoeraser-corpus/1");
    assert_eq!(schema(&model.to_json()), "orthoeraser-sae/1");
    assert_eq!(schema(&plan.to_json()), "orthoeraser-plan/1");
}

#[test]
fn files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus();
    let model = SaeModel::init(8, 16, 2, 3).unwrap();
    let plan = detect(&model, &corpus, 2, 3).unwrap();

    corpus.save(&dir.path().join("c.json")).unwrap();
    model.save(&dir.path().join("m.json")).unwrap();
    plan.save(&dir.path().join("p.json")).unwrap();

    assert_eq!(Corpus::load(&dir.path().join("c.json")).unwrap(), corpus);
    assert_eq!(SaeModel::load(&dir.path().join("m.json")).unwrap(), model);
    assert_eq!(DetectionPlan::load(&dir.path().join("p.json")).unwrap(), plan);
}

#[test]
fn damaged_model_is_rejected() {
    let text = SaeModel::init(8, 16, 2, 3).unwrap().to_json();
    assert!(matches!(SaeModel::from_json(&text[..40]), Err(Error::MalformedFile(_))));
    let short = edit(&text, |v| v["b_dec"] = Value::String(encode_f64s(&[0.0; 7])));
    assert!(matches!(SaeModel::from_json(&short), Err(Error::DimensionInconsistency(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Corpus::load(&dir.path().join("absent.json")), Err(Error::Io(_))));
}
