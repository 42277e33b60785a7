// SPDX-License-Identifier: MIT OR Apache-2.0

//! Score every layer of a synthetic 12-layer trace set and pick the layer
//! where sensitive modifiers attend most distinctly to their target.
//!
//! `cargo run --example localize_layer -- [peak_layer]`

use orthoeraser::localizer::{select_layer, synthetic_traces, TraceConfig};

fn main() -> orthoeraser::Result<()> {
    let peak_layer = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let traces = synthetic_traces(&TraceConfig { peak_layer, ..Default::default() }, 0)?;
    let report = select_layer(&traces)?;
    println!("{:>5} {:>8} {:>8} {:>8}", "layer", "SA", "CD", "SS");
    for l in 0..report.sensitive_score.len() {
        println!(
            "{:>5} {:>8.4} {:>8.4} {:>8.4}{}",
            l + 1,
            report.sensitive_attention[l],
            report.contextual_disturbance[l],
            report.sensitive_score[l],
            if l + 1 == report.selected_layer { "  <- selected" } else { "" }
        );
    }
    println!("planted peak {peak_layer}, selected {} over {} pairs", report.selected_layer, report.n_pairs);
    Ok(())
}
