// SPDX-License-Identifier: MIT OR Apache-2.0

//! Report assembly: one JSON document plus CSV tables and standalone SVG
//! plots. Output is a pure function of the report, byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ablation::{AblationResult, Strategy, SweepPoint};
use super::layers::LayerAblationTable;
use crate::detector::DetectionPlan;
use crate::error::{Error, Result};
use crate::io;

pub const REPORT_SCHEMA: &str = "orthoeraser-report/1";
pub const REPORT_FILE: &str = "results.json";

/// Relative protected-drift tolerance used by the invariant checks.
pub const DRIFT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub sensitive: Vec<usize>,
    pub coupled: Vec<usize>,
    pub delta_wfs: Vec<f64>,
    pub coupling: Vec<f64>,
    pub degenerate_coupling: bool,
}

impl From<&DetectionPlan> for DetectionSummary {
    fn from(p: &DetectionPlan) -> Self {
        DetectionSummary {
            sensitive: p.sensitive.indices.clone(),
            coupled: p.coupled.indices.clone(),
            delta_wfs: p.stats.delta_wfs.clone(),
            coupling: p.coupling.clone(),
            degenerate_coupling: p.coupled.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub strategies: Vec<AblationResult>,
    pub sweep: Vec<SweepPoint>,
    pub layers: Option<LayerAblationTable>,
    pub detection: Option<DetectionSummary>,
    pub invariants: Vec<InvariantCheck>,
}

#[derive(Serialize, Deserialize)]
struct ReportDoc {
    schema: String,
    version: u32,
    #[serde(flatten)]
    report: Report,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        io::to_pretty_json(&ReportDoc {
            schema: REPORT_SCHEMA.to_owned(),
            version: io::FORMAT_VERSION,
            report: self.clone(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ReportDoc = io::parse_document(text, REPORT_SCHEMA)?;
        Ok(doc.report)
    }

    /// Read `results.json` from a report directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(dir.join(REPORT_FILE))?)
    }
}

/// Check the orderings every healthy run must satisfy.
pub fn check_invariants(strategies: &[AblationResult], sweep: &[SweepPoint]) -> Vec<InvariantCheck> {
    let mut out = Vec::new();
    let find = |s: Strategy| strategies.iter().find(|r| r.strategy == s);
    if let (Some(o), Some(s)) = (find(Strategy::Ortho), find(Strategy::OnlySensitive)) {
        let (a, b) = (o.metrics.protected_drift, s.metrics.protected_drift);
        out.push(InvariantCheck {
            name: "ortho_drift_below_only_sensitive".into(),
            passed: a < b,
            detail: format!("{a:e} < {b:e}"),
        });
        let (a, b) = (o.metrics.sensitive_ratio(), s.metrics.sensitive_ratio());
        out.push(InvariantCheck {
            name: "ortho_residual_at_most_only_sensitive".into(),
            passed: a <= b,
            detail: format!("{a:e} <= {b:e}"),
        });
        let rel = o.metrics.relative_protected_drift();
        out.push(InvariantCheck {
            name: "ortho_protected_invariance".into(),
            passed: rel < DRIFT_TOLERANCE,
            detail: format!("{rel:e} < {DRIFT_TOLERANCE:e}"),
        });
    }
    if let Some(a) = find(Strategy::Amplify) {
        let m = a.metrics;
        out.push(InvariantCheck {
            name: "amplify_increases_sensitive_energy".into(),
            // at λ = 0 every strategy is the identity
            passed: a.lambda == 0.0 || m.sensitive_energy_after > m.sensitive_energy_before,
            detail: format!("{:e} -> {:e}", m.sensitive_energy_before, m.sensitive_energy_after),
        });
    }
    if !sweep.is_empty() {
        let monotone = sweep
            .windows(2)
            .all(|w| w[1].lambda < w[0].lambda || w[1].metrics.sensitive_energy_after <= w[0].metrics.sensitive_energy_after);
        out.push(InvariantCheck {
            name: "lambda_sweep_monotone".into(),
            passed: monotone,
            detail: sweep
                .iter()
                .map(|p| format!("{}:{:e}", p.lambda, p.metrics.sensitive_energy_after))
                .collect::<Vec<_>>()
                .join(" "),
        });
        let worst = sweep
            .iter()
            .map(|p| p.metrics.relative_protected_drift())
            .fold(0.0, f64::max);
        out.push(InvariantCheck {
            name: "lambda_sweep_protected_invariance".into(),
            passed: worst < DRIFT_TOLERANCE,
            detail: format!("{worst:e} < {DRIFT_TOLERANCE:e}"),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

/// Parse a comma-separated format list such as `csv,svg,json`.
pub fn parse_formats(list: &str) -> Result<Vec<Format>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(Format::from_str).collect()
}

/// Write the requested files into `dir` (created if missing) and return
/// their paths in a fixed order.
pub fn write_report(report: &Report, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, String)> = Vec::new();
    if formats.contains(&Format::Json) {
        files.push((REPORT_FILE, report.to_json()));
    }
    if formats.contains(&Format::Csv) {
        files.push(("strategies.csv", strategies_csv(&report.strategies)));
        files.push(("lambda_sweep.csv", sweep_csv(&report.sweep)));
        files.push(("layers.csv", layers_csv(report.layers.as_ref())));
        files.push(("invariants.csv", invariants_csv(&report.invariants)));
        if let Some(d) = &report.detection {
            files.push(("neurons.csv", neurons_csv(d)));
        }
    }
    if formats.contains(&Format::Svg) {
        files.push(("lambda_sweep.svg", sweep_svg(&report.sweep)));
        if let Some(d) = &report.detection {
            files.push(("delta_wfs.svg", delta_wfs_svg(d)));
            files.push(("coupling_hist.svg", coupling_hist_svg(d)));
        }
    }
    let mut paths = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}

const METRIC_HEADER: &str = "sensitive_energy_before,sensitive_energy_after,sensitive_ratio,benign_energy_before,benign_energy_after,benign_change,protected_drift,reconstruction_drift";

fn metric_cells(m: &super::metrics::ErasureMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        m.sensitive_energy_before,
        m.sensitive_energy_after,
        m.sensitive_ratio(),
        m.benign_energy_before,
        m.benign_energy_after,
        m.benign_change(),
        m.protected_drift,
        m.reconstruction_drift
    )
}

fn strategies_csv(rows: &[AblationResult]) -> String {
    let mut s = format!("strategy,lambda,seed,k_sens,k_coupled,{METRIC_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.strategy,
            r.lambda,
            r.seed,
            r.k_sens,
            r.k_coupled,
            metric_cells(&r.metrics)
        );
    }
    s
}

fn sweep_csv(rows: &[SweepPoint]) -> String {
    let mut s = format!("lambda,{METRIC_HEADER}\n");
    for p in rows {
        let _ = writeln!(s, "{},{}", p.lambda, metric_cells(&p.metrics));
    }
    s
}

fn layers_csv(table: Option<&LayerAblationTable>) -> String {
    let mut s = String::from("layer,sensitive_score,residual_energy,residual_ratio,selected\n");
    if let Some(t) = table {
        for r in &t.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.layer, r.sensitive_score, r.residual_energy, r.residual_ratio, r.selected
            );
        }
    }
    s
}

fn invariants_csv(rows: &[InvariantCheck]) -> String {
    let mut s = String::from("name,passed,detail\n");
    for c in rows {
        let _ = writeln!(s, "{},{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'"));
    }
    s
}

fn neurons_csv(d: &DetectionSummary) -> String {
    let mut s = String::from("neuron,delta_wfs,coupling,sensitive,coupled\n");
    for (i, (w, c)) in d.delta_wfs.iter().zip(&d.coupling).enumerate() {
        let _ = writeln!(
            s,
            "{i},{w},{c},{},{}",
            d.sensitive.contains(&i),
            d.coupled.contains(&i)
        );
    }
    s
}

// --- SVG -------------------------------------------------------------------

const W: f64 = 480.0;
const H: f64 = 320.0;
const M: f64 = 48.0;

fn svg_open(title: &str, data: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<!-- data: {data} -->");
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>",
        W / 2.0
    );
    let _ = writeln!(
        s,
        "<path d=\"M{M} {M} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        H - M,
        W - M
    );
    s
}

fn axis_labels(s: &mut String, x: &str, y: &str, y_max: f64) {
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{x}</text>",
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{y}</text>",
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{y_max:.3e}</text>",
        M - 4.0,
        M + 4.0
    );
}

fn sx(t: f64) -> f64 {
    M + t * (W - 2.0 * M)
}

fn sy(t: f64) -> f64 {
    H - M - t * (H - 2.0 * M)
}

fn sweep_svg(points: &[SweepPoint]) -> String {
    let data: Vec<String> = points
        .iter()
        .map(|p| format!("{}:{}", p.lambda, p.metrics.sensitive_ratio()))
        .collect();
    let mut s = svg_open("Residual sensitive energy vs suppression strength", &data.join(" "));
    let x_max = points.iter().map(|p| p.lambda).fold(0.0, f64::max).max(1e-12);
    let y_max = points
        .iter()
        .map(|p| p.metrics.sensitive_ratio())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(1e-12);
    axis_labels(&mut s, "lambda", "residual / baseline", y_max);
    if !points.is_empty() {
        let path: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let y = p.metrics.sensitive_ratio();
                let y = if y.is_finite() { y } else { y_max };
                format!(
                    "{}{:.3} {:.3}",
                    if i == 0 { "M" } else { " L" },
                    sx(p.lambda / x_max),
                    sy(y / y_max)
                )
            })
            .collect();
        let _ = writeln!(s, "<path d=\"{}\" stroke=\"#1f77b4\" stroke-width=\"2\" fill=\"none\"/>", path.concat());
        for p in points {
            let y = p.metrics.sensitive_ratio();
            let y = if y.is_finite() { y } else { y_max };
            let _ = writeln!(
                s,
                "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"3\" fill=\"#1f77b4\"/>",
                sx(p.lambda / x_max),
                sy(y / y_max)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Largest 50 ΔWFS values, sorted descending.
fn delta_wfs_svg(d: &DetectionSummary) -> String {
    let mut ranked: Vec<(usize, f64)> = d.delta_wfs.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked.truncate(50);
    let data: Vec<String> = ranked.iter().map(|(i, v)| format!("{i}:{v}")).collect();
    let mut s = svg_open("Top neurons by delta WFS", &data.join(" "));
    let y_max = ranked.iter().map(|r| r.1.abs()).fold(0.0, f64::max).max(1e-12);
    axis_labels(&mut s, "neuron rank", "delta WFS", y_max);
    let n = ranked.len().max(1) as f64;
    let bw = (W - 2.0 * M) / n;
    for (rank, (i, v)) in ranked.iter().enumerate() {
        let hgt = (v.max(0.0) / y_max) * (H - 2.0 * M);
        let color = if d.sensitive.contains(i) { "#d62728" } else { "#7f7f7f" };
        let _ = writeln!(
            s,
            "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{color}\"/>",
            M + rank as f64 * bw,
            H - M - hgt,
            (bw - 1.0).max(0.5),
            hgt
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Histogram of coupling strengths over non-sensitive neurons.
fn coupling_hist_svg(d: &DetectionSummary) -> String {
    const BINS: usize = 20;
    let values: Vec<f64> = d
        .coupling
        .iter()
        .enumerate()
        .filter(|(i, _)| !d.sensitive.contains(i))
        .map(|(_, v)| *v)
        .collect();
    let hi = values.iter().copied().fold(0.0, f64::max).max(1e-12);
    let mut counts = [0usize; BINS];
    for v in &values {
        let b = ((v / hi) * BINS as f64) as usize;
        counts[b.min(BINS - 1)] += 1;
    }
    let data: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
    let mut s = svg_open(
        "Coupling strength distribution",
        &format!("max={hi} counts={}", data.join(",")),
    );
    let y_max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    axis_labels(&mut s, "coupling strength", "neurons", y_max);
    let bw = (W - 2.0 * M) / BINS as f64;
    for (b, &c) in counts.iter().enumerate() {
        let hgt = c as f64 / y_max * (H - 2.0 * M);
        let _ = writeln!(
            s,
            "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"#2ca02c\"/>",
            M + b as f64 * bw,
            H - M - hgt,
            bw - 1.0,
            hgt
        );
    }
    s.push_str("</svg>\n");
    s
}
