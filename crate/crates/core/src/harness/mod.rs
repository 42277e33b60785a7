// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ablation harness on planted ground truth: intervention strategies,
//! suppression-strength sweeps, layer-wise erasure and report files.

mod ablation;
mod layers;
mod metrics;
pub mod report;

pub use ablation::{
    intervene, lambda_sweep, random_neuron_set, run_ablation, run_suite, AblationResult, Strategy,
    SweepPoint,
};
pub use layers::{
    bypass_gains, layer_ablation, layered_scenario, LayerAblationRow, LayerAblationTable,
    LayerSetup, LayeredScenario, DEFAULT_LEAK,
};
pub use metrics::{check_aligned, evaluate, presence_energy, ErasureMetrics, MetricDirections};
pub use report::{check_invariants, write_report, DetectionSummary, Format, InvariantCheck, Report};
