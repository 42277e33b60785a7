// SPDX-License-Identifier: MIT OR Apache-2.0

//! Erase a sensitive direction while leaving every coupled projection
//! untouched: first on a three-dimensional toy, then on the trained
//! pipeline.
//!
//! `cargo run --release --example null_space_erasure`

use nalgebra::DMatrix;
use orthoeraser::corpus::{generate, CorpusConfig};
use orthoeraser::detector::detect;
use orthoeraser::harness::{run_ablation, Strategy};
use orthoeraser::linalg::dot;
use orthoeraser::projector::{orthogonalize, ProtectedBasis, DEFAULT_LAMBDA};
use orthoeraser::sae::{train, TrainConfig};

fn main() -> orthoeraser::Result<()> {
    // A sensitive direction tilted towards a protected benign one.
    let benign = [0.0, 1.0, 0.0];
    let sensitive = [0.8, 0.6, 0.0];
    let basis = ProtectedBasis::from_columns(DMatrix::from_column_slice(3, 1, &benign))?;
    let d_star = orthogonalize(&sensitive, &basis)?;
    println!("d_raw {sensitive:?} -> d* {d_star:?}");
    let h = [1.0, 0.9, 0.2];
    let erased: Vec<f64> = h.iter().zip(&d_star).map(|(x, d)| x - d / 0.8).collect();
    println!(
        "h {h:?} -> {erased:?}; benign readout {} -> {}",
        dot(&h, &benign),
        dot(&erased, &benign)
    );

    let corpus = generate(&CorpusConfig { traces: None, ..Default::default() })?;
    let (model, _) = train(&corpus, &TrainConfig::default())?;
    let k_sens = corpus.ground_truth()?.sensitive_indices().len();
    let plan = detect(&model, &corpus, k_sens, 10)?;
    for strategy in [Strategy::Ortho, Strategy::OnlySensitive] {
        let m = run_ablation(strategy, &corpus, &model, &plan, DEFAULT_LAMBDA, 0)?.metrics;
        println!(
            "{:<15} residual sensitive {:.4}  benign change {:.4}  max ‖W_Cᵀ(h̃−h)‖ {:.2e}",
            strategy.name(),
            m.sensitive_ratio(),
            m.benign_change(),
            m.protected_drift
        );
    }
    Ok(())
}
