// SPDX-License-Identifier: MIT OR Apache-2.0

//! Generate the default planted corpus, check its geometry, and round-trip
//! it through the on-disk format.
//!
//! `cargo run --example generate_corpus -- [out.json]`

use orthoeraser::corpus::{generate, Corpus, CorpusConfig, PromptClass};
use orthoeraser::linalg::dot;

fn main() -> orthoeraser::Result<()> {
    let cfg = CorpusConfig::default();
    let corpus = generate(&cfg)?;
    let truth = corpus.ground_truth()?;
    println!(
        "{} activations in R^{}: {} sensitive, {} non-sensitive",
        corpus.len(),
        corpus.d,
        corpus.count(PromptClass::Sensitive),
        corpus.count(PromptClass::NonSensitive)
    );
    for &(s, b) in &truth.pairs {
        println!("  cos(sensitive {s}, benign {b}) = {:.9}", dot(truth.column(s), truth.column(b)));
    }

    let path = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("orthoeraser-corpus.json"));
    corpus.save(&path)?;
    let back = Corpus::load(&path)?;
    println!(
        "saved to {} ({} bytes); reload identical: {}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        back == corpus
    );
    Ok(())
}
