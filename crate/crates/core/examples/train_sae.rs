// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train the Top-K SAE on the default corpus and report how well its
//! decoder recovers the planted dictionary.
//!
//! `cargo run --release --example train_sae -- [epochs] [seed]`

use std::time::Instant;

use orthoeraser::corpus::{generate, CorpusConfig};
use orthoeraser::linalg::dot;
use orthoeraser::sae::{train, TrainConfig};

fn main() -> orthoeraser::Result<()> {
    let mut args = std::env::args().skip(1);
    let defaults = TrainConfig::default();
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(defaults.epochs);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = generate(&CorpusConfig { seed, traces: None, ..Default::default() })?;

    let t = Instant::now();
    let (model, report) = train(&corpus, &TrainConfig { epochs, seed, ..defaults })?;
    println!("{} steps in {:.1?}", report.steps, t.elapsed());
    let h = &report.loss_history;
    for e in (0..h.len()).step_by((h.len() / 8).max(1)).chain([h.len().saturating_sub(1)]) {
        if let Some(l) = h.get(e) {
            println!("  epoch {e:>5}: loss {l:.4e}");
        }
    }
    println!("relative reconstruction error {:.4}", model.reconstruction_error(&corpus)?);
    println!("decoder norm error {:.2e}", model.decoder_norm_error());

    let truth = corpus.ground_truth()?;
    println!("planted feature -> best decoder column (cosine)");
    for f in 0..truth.n_features() {
        let (best, cos) = (0..model.d_sae())
            .map(|i| (i, dot(model.decoder_column(i), truth.column(f))))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        println!("  {f:>2} ({:>9}) -> neuron {best:>3} ({cos:.3})", truth.labels[f].name());
    }
    Ok(())
}
