// SPDX-License-Identifier: MIT OR Apache-2.0

//! Residual sensitive energy and protected drift across suppression
//! strengths.
//!
//! `cargo run --release --example lambda_sweep`

use orthoeraser::corpus::{generate, CorpusConfig};
use orthoeraser::detector::detect;
use orthoeraser::harness::lambda_sweep;
use orthoeraser::sae::{train, TrainConfig};

fn main() -> orthoeraser::Result<()> {
    let corpus = generate(&CorpusConfig { traces: None, ..Default::default() })?;
    let (model, _) = train(&corpus, &TrainConfig::default())?;
    let k_sens = corpus.ground_truth()?.sensitive_indices().len();
    let plan = detect(&model, &corpus, k_sens, 10)?;
    println!("{:>6} {:>10} {:>10} {:>12}", "λ", "sens", "benign", "prot.drift");
    for p in lambda_sweep(&corpus, &model, &plan, &[0.0, 0.5, 1.0, 2.0, 3.0, 4.0])? {
        println!(
            "{:>6.1} {:>10.4} {:>10.4} {:>12.2e}",
            p.lambda,
            p.metrics.sensitive_ratio(),
            p.metrics.benign_change(),
            p.metrics.protected_drift
        );
    }
    Ok(())
}
