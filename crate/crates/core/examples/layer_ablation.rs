// SPDX-License-Identifier: MIT OR Apache-2.0

//! Localize on a 12-layer trace set, then erase at several layers and
//! compare how much of the concept still reaches the output.
//!
//! `cargo run --release --example layer_ablation`

use orthoeraser::corpus::CorpusConfig;
use orthoeraser::harness::{layer_ablation, layered_scenario, LayerSetup, Strategy, DEFAULT_LEAK};
use orthoeraser::localizer::TraceConfig;
use orthoeraser::sae::TrainConfig;

fn main() -> orthoeraser::Result<()> {
    let cfg = CorpusConfig {
        n_sensitive: 256,
        n_non_sensitive: 256,
        ..Default::default()
    };
    let scenario = layered_scenario(&cfg, &TraceConfig::default(), DEFAULT_LEAK)?;
    let setup = LayerSetup {
        train: TrainConfig::default(),
        k_sens: cfg.n_sensitive_features,
        k_coupled: 10,
        lambda: 3.0,
        strategy: Strategy::Ortho,
    };
    let table = layer_ablation(&scenario.traces, &scenario.layers, &[3, 9, 10, 11], &setup)?;
    println!("selected layer {}; output concept energy {:.4}", table.selected_layer, table.baseline_energy);
    println!("{:>5} {:>8} {:>10} {:>8}", "layer", "SS", "residual", "ratio");
    for r in &table.rows {
        println!(
            "{:>5} {:>8.4} {:>10.4} {:>8.4}{}",
            r.layer,
            r.sensitive_score,
            r.residual_energy,
            r.residual_ratio,
            if r.selected { "  <- selected" } else { "" }
        );
    }
    Ok(())
}
