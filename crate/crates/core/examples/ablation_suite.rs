// SPDX-License-Identifier: MIT OR Apache-2.0

//! Full pipeline on the default planted corpus, followed by every
//! intervention strategy at λ = 3.
//!
//! `cargo run --example ablation_suite -- [seed]`

use std::time::Instant;

use orthoeraser::corpus::{generate, CorpusConfig};
use orthoeraser::detector::detect;
use orthoeraser::harness::run_suite;
use orthoeraser::sae::{train, TrainConfig};

fn main() -> orthoeraser::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = generate(&CorpusConfig { seed, traces: None, ..Default::default() })?;
    let t = Instant::now();
    let (model, report) = train(&corpus, &TrainConfig { seed, ..Default::default() })?;
    println!(
        "trained in {:.1?}: loss {:.4e} -> {:.4e}, relative reconstruction error {:.4}",
        t.elapsed(),
        report.loss_history[0],
        report.loss_history.last().unwrap(),
        model.reconstruction_error(&corpus)?
    );
    let k_sens = corpus.ground_truth()?.sensitive_indices().len();
    let plan = detect(&model, &corpus, k_sens, 10)?;
    println!("sensitive {:?}\ncoupled   {:?}", plan.sensitive.indices, plan.coupled.indices);
    println!("{:<16} {:>10} {:>10} {:>12} {:>10}", "strategy", "sens", "benign", "prot.drift", "recon");
    for r in run_suite(&corpus, &model, &plan, 3.0, seed)? {
        let m = r.metrics;
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>12.3e} {:>10.4}",
            r.strategy.name(),
            m.sensitive_ratio(),
            m.benign_change(),
            m.protected_drift,
            m.reconstruction_drift
        );
    }
    Ok(())
}
