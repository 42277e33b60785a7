// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end: one subcommand per pipeline stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use orthoeraser::corpus::{generate, Corpus, CorpusConfig, Provenance};
use orthoeraser::detector::{detect, DetectionPlan};
use orthoeraser::harness::{
    check_invariants, lambda_sweep, layer_ablation, layered_scenario, report, run_suite, write_report,
    DetectionSummary, LayerSetup, Report, Strategy, DEFAULT_LEAK,
};
use orthoeraser::localizer::{select_layer, TraceConfig};
use orthoeraser::projector::{ProjectionPlan, DEFAULT_LAMBDA};
use orthoeraser::sae::{train, SaeModel, TrainConfig};
use orthoeraser::Result;

#[derive(Parser)]
#[command(name = "orthoeraser", version, about = "Concept erasure by null-space projection of SAE features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Full,
    Strategies,
    Lambda,
    Layers,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a planted dictionary.
    Generate {
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        features: usize,
        #[arg(long, default_value_t = 4)]
        sensitive_features: usize,
        #[arg(long, default_value_t = 0.6)]
        overlap: f64,
        #[arg(long, visible_alias = "n-sens", default_value_t = 512)]
        n_sensitive: usize,
        #[arg(long, visible_alias = "n-non", default_value_t = 512)]
        n_non_sensitive: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Traced layers (0 disables attention traces).
        #[arg(long, default_value_t = 12)]
        layers: usize,
        #[arg(long, default_value_t = 10)]
        peak_layer: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score layers from the corpus's attention traces.
    Localize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a Top-K sparse autoencoder.
    TrainSae {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        expansion: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Fraction of final epochs over which the learning rate decays to 0.
        #[arg(long)]
        lr_decay: Option<f64>,
        #[arg(long, visible_alias = "batch")]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find sensitive and coupled neurons.
    Detect {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        sae: PathBuf,
        /// Defaults to the planted sensitive count, else 50.
        #[arg(long)]
        k_sens: Option<usize>,
        #[arg(long, default_value_t = 10)]
        k_coupled: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the projected intervention to every activation.
    Erase {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        sae: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ablation suite and write a report directory.
    Ablate {
        #[arg(long, value_enum, default_value_t = Suite::Full)]
        suite: Suite,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        sae: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a report directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv,svg,json")]
        format: String,
        /// Output directory (defaults to the input directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn train_config(
    epochs: Option<usize>,
    lr: Option<f64>,
    lr_decay: Option<f64>,
    batch: Option<usize>,
    seed: u64,
    expansion: usize,
    k: usize,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: epochs.unwrap_or(d.epochs),
        learning_rate: lr.unwrap_or(d.learning_rate),
        decay_fraction: lr_decay.unwrap_or(d.decay_fraction),
        batch_size: batch.unwrap_or(d.batch_size),
        seed,
        expansion_factor: expansion,
        k,
    }
}

fn need(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| orthoeraser::Error::InvalidConfig(format!("--{flag} is required for this suite")))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate {
            dim,
            features,
            sensitive_features,
            overlap,
            n_sensitive,
            n_non_sensitive,
            noise,
            seed,
            layers,
            peak_layer,
            out,
        } => {
            let cfg = CorpusConfig {
                dim,
                n_features: features,
                n_sensitive_features: sensitive_features,
                overlap,
                n_sensitive,
                n_non_sensitive,
                noise,
                seed,
                traces: (layers > 0).then(|| TraceConfig {
                    n_layers: layers,
                    peak_layer,
                    ..TraceConfig::default()
                }),
                ..CorpusConfig::default()
            };
            let corpus = generate(&cfg)?;
            corpus.save(&out)?;
            println!("wrote {} activations (d = {dim}) to {}", corpus.len(), out.display());
        }
        Command::Localize { corpus, out } => {
            let corpus = Corpus::load(&corpus)?;
            let traces = corpus
                .attention
                .as_deref()
                .ok_or_else(|| orthoeraser::Error::InvalidConfig("corpus has no attention traces".into()))?;
            let rep = select_layer(traces)?;
            println!("layer,sensitive_attention,contextual_disturbance,sensitive_score");
            for l in 0..rep.sensitive_score.len() {
                println!(
                    "{},{},{},{}",
                    l + 1,
                    rep.sensitive_attention[l],
                    rep.contextual_disturbance[l],
                    rep.sensitive_score[l]
                );
            }
            println!("selected layer: {}", rep.selected_layer);
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&rep).expect("serializable") + "\n")?;
            }
        }
        Command::TrainSae {
            corpus,
            expansion,
            k,
            epochs,
            lr,
            lr_decay,
            batch_size,
            seed,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let cfg = train_config(epochs, lr, lr_decay, batch_size, seed, expansion, k);
            let (model, rep) = train(&corpus, &cfg)?;
            model.save_with_history(&out, Some(&rep.loss_history))?;
            println!(
                "trained {}x{} SAE in {} steps; final loss {:.6e}; relative reconstruction error {:.4}",
                model.d(),
                model.d_sae(),
                rep.steps,
                rep.loss_history.last().copied().unwrap_or(f64::NAN),
                model.reconstruction_error(&corpus)?
            );
        }
        Command::Detect {
            corpus,
            sae,
            k_sens,
            k_coupled,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let model = SaeModel::load(&sae)?;
            let k_sens = k_sens.unwrap_or_else(|| match &corpus.ground_truth {
                Some(gt) => gt.sensitive_indices().len(),
                None => 50.min(model.d_sae()),
            });
            let plan = detect(&model, &corpus, k_sens, k_coupled)?;
            plan.save(&out)?;
            println!("sensitive: {:?}", plan.sensitive.indices);
            println!("coupled:   {:?}", plan.coupled.indices);
            if plan.coupled.degenerate {
                println!("warning: every coupling strength is zero");
            }
        }
        Command::Erase {
            corpus,
            sae,
            plan,
            lambda,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let model = SaeModel::load(&sae)?;
            let plan_bytes = std::fs::read(&plan)?;
            let detection = DetectionPlan::from_json(&String::from_utf8_lossy(&plan_bytes))?;
            let projection = ProjectionPlan::new(&model, detection.sensitive.clone(), &detection.coupled, lambda)?;
            let mut erased = corpus.map_values(|a| projection.apply(&a.values))?;
            let hash: String = Sha256::digest(&plan_bytes).iter().map(|b| format!("{b:02x}")).collect();
            erased.provenance = Some(Provenance { plan_hash: hash, lambda });
            erased.save(&out)?;
            println!("erased {} activations at lambda = {lambda}", erased.len());
        }
        Command::Ablate {
            suite,
            corpus,
            sae,
            plan,
            lambda,
            lambdas,
            seed,
            out,
        } => {
            let mut rep = Report::default();
            if matches!(suite, Suite::Full | Suite::Strategies | Suite::Lambda) {
                let corpus = Corpus::load(&need(corpus.clone(), "corpus")?)?;
                let model = SaeModel::load(&need(sae.clone(), "sae")?)?;
                let detection = DetectionPlan::load(&need(plan.clone(), "plan")?)?;
                if matches!(suite, Suite::Full | Suite::Strategies) {
                    rep.strategies = run_suite(&corpus, &model, &detection, lambda, seed)?;
                }
                if matches!(suite, Suite::Full | Suite::Lambda) {
                    rep.sweep = lambda_sweep(&corpus, &model, &detection, &lambdas)?;
                }
                rep.detection = Some(DetectionSummary::from(&detection));
            }
            if matches!(suite, Suite::Full | Suite::Layers) {
                let dim = match &corpus {
                    Some(p) => Corpus::load(p)?.d,
                    None => CorpusConfig::default().dim,
                };
                let cfg = CorpusConfig {
                    dim,
                    seed,
                    n_sensitive: 256,
                    n_non_sensitive: 256,
                    ..CorpusConfig::default()
                };
                let traces = TraceConfig::default();
                let scenario = layered_scenario(&cfg, &traces, DEFAULT_LEAK)?;
                let setup = LayerSetup {
                    train: TrainConfig {
                        seed,
                        ..TrainConfig::default()
                    },
                    k_sens: cfg.n_sensitive_features,
                    k_coupled: 10,
                    lambda,
                    strategy: Strategy::Ortho,
                };
                let all: Vec<usize> = (1..=traces.n_layers).collect();
                let table = layer_ablation(&scenario.traces, &scenario.layers, &all, &setup)?;
                let best = table.rows.iter().find(|r| r.selected).map(|r| r.residual_energy);
                let strict = best.is_some_and(|b| table.rows.iter().all(|r| r.selected || r.residual_energy > b));
                rep.invariants.push(report::InvariantCheck {
                    name: "selected_layer_has_lowest_residual".into(),
                    passed: strict,
                    detail: format!("selected layer {}", table.selected_layer),
                });
                rep.layers = Some(table);
            }
            let mut checks = check_invariants(&rep.strategies, &rep.sweep);
            checks.append(&mut rep.invariants);
            rep.invariants = checks;
            write_report(&rep, &out, &[report::Format::Json, report::Format::Csv, report::Format::Svg])?;
            for c in &rep.invariants {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(rep.all_passed());
        }
        Command::Report { input, format, out } => {
            let rep = Report::load_dir(&input)?;
            let formats = report::parse_formats(&format)?;
            let dir = out.unwrap_or(input);
            for p in write_report(&rep, &dir, &formats)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
