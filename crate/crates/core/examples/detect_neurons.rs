// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rank SAE neurons by ΔWFS, then zero-ablate the sensitive set and list
//! the benign neurons whose activations shift the most.
//!
//! `cargo run --release --example detect_neurons -- [k_sens] [k_coupled]`

use orthoeraser::corpus::{generate, CorpusConfig};
use orthoeraser::detector::detect;
use orthoeraser::linalg::dot;
use orthoeraser::sae::{train, TrainConfig};

fn main() -> orthoeraser::Result<()> {
    let corpus = generate(&CorpusConfig { traces: None, ..Default::default() })?;
    let truth = corpus.ground_truth()?;
    let mut args = std::env::args().skip(1);
    let k_sens = args.next().and_then(|s| s.parse().ok()).unwrap_or(truth.sensitive_indices().len());
    let k_coupled = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);

    let (model, _) = train(&corpus, &TrainConfig::default())?;
    let plan = detect(&model, &corpus, k_sens, k_coupled)?;
    // closest planted column, for orientation only
    let label = |i: usize| {
        let (f, c) = (0..truth.n_features())
            .map(|f| (f, dot(model.decoder_column(i), truth.column(f))))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        format!("{} {f} @ {c:.2}", truth.labels[f].name())
    };

    let s = &plan.stats;
    println!("sensitive set (top {k_sens} by ΔWFS)");
    for &i in &plan.sensitive.indices {
        println!(
            "  n{i:<4} ΔWFS {:>7.4}  f {:.2}/{:.2}  μ {:.3}/{:.3}  [{}]",
            s.delta_wfs[i],
            s.sensitive.frequency[i],
            s.non_sensitive.frequency[i],
            s.sensitive.mean_magnitude[i],
            s.non_sensitive.mean_magnitude[i],
            label(i)
        );
    }
    println!("coupled set (top {k_coupled} by δ){}", if plan.coupled.degenerate { " — degenerate" } else { "" });
    for (&j, &delta) in plan.coupled.indices.iter().zip(&plan.coupled.strengths) {
        println!("  n{j:<4} δ {delta:.5}  [{}]", label(j));
    }
    Ok(())
}
