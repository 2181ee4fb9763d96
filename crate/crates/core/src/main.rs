use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vowelgraph::dataset::SplitPart;
use vowelgraph::explain::aggregate_importance;
use vowelgraph::io_util::write_text;
use vowelgraph::model::{evaluate, tune_and_fit, Forest};
use vowelgraph::pipeline::{
    self, explain_rows, grid_csv, importance_csv, load_segments, metrics_csv, prepare_inputs, run_tables,
    selection_json, with_pool, Histogram, PipelineConfig, RunInputs, Spectral,
};
use vowelgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "vowelgraph", version, about = "Speaker identification from vowel spectra via visibility graphs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (run r uses seed + r).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Permute training and validation labels (randomized control).
    #[arg(long, global = true)]
    control_permute_labels: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus as WAV files.
    Synth {
        /// Target directory (default: <out>/corpus).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Resample, gate and split the input; write the segments as WAV files.
    Preprocess,
    /// Write the LPC log-power spectrum of every segment.
    Spectra,
    /// Select representative spectra per subject and vowel.
    Select,
    /// Build visibility graphs of the representatives and their metrics.
    Graphs,
    /// Write the train/validation/test feature tables of one run.
    Features {
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Grid-search and fit the forest of one run.
    Train {
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Evaluate a run's forest on its test table.
    Evaluate {
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// Saved model (trained from scratch when absent).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Shapley attributions for a run's test rows.
    Explain {
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Experiment at each LPC order.
    SweepLpc {
        /// Comma-separated orders (default from config: 10..=20).
        #[arg(long, value_delimiter = ',')]
        orders: Vec<usize>,
    },
    /// Experiment at each correlation threshold.
    SweepThreshold {
        /// Comma-separated thresholds (default from config: 0.50..=0.95 step 0.05).
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
    },
    /// Full experiment: all runs, reports, models and tables.
    Run,
}

fn config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(r) = g.runs {
        cfg.n_runs = r;
    }
    if g.control_permute_labels {
        cfg.control_permute_labels = true;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_ms(m: &Option<pipeline::MeanStd>) -> String {
    m.map_or("n/a".into(), |m| format!("{:.3} ± {:.3}", m.mean, m.std))
}

/// Upstream stages shared by the single-step subcommands.
struct Prepared {
    spectral: Spectral,
    selections: Vec<pipeline::GroupSelection>,
    metrics: std::collections::BTreeMap<vowelgraph::corpus::SegmentKey, vowelgraph::graph_metrics::MetricVector>,
    graphs: std::collections::BTreeMap<vowelgraph::corpus::SegmentKey, vowelgraph::graph::Graph>,
}

fn prepare(cfg: &PipelineConfig, keep_graphs: bool) -> Result<Prepared> {
    let segments = load_segments(cfg).map_err(Error::stage("load"))?;
    let spectral = Spectral::compute(cfg, &segments)?;
    let (selections, metrics, graphs) = prepare_inputs(cfg, &spectral, keep_graphs)?;
    Ok(Prepared {
        spectral,
        selections,
        metrics,
        graphs,
    })
}

fn load_or_train(cfg: &PipelineConfig, p: &Prepared, run: usize, model: &Option<PathBuf>) -> Result<(Forest, pipeline::RunTables)> {
    let inputs = RunInputs {
        selections: &p.selections,
        metrics: &p.metrics,
    };
    let tables = run_tables(cfg, &inputs, run)?;
    let forest = match model {
        Some(path) => Forest::load(path)?,
        None => {
            let data = tables.labeled()?;
            tune_and_fit(&data[0], &data[1], &cfg.grid, tables.seed)
                .map_err(Error::stage("train"))?
                .1
        }
    };
    Ok((forest, tables))
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = config(&cli.global)?;
    let out = cfg.out.clone();
    with_pool(cfg.threads, || -> Result<()> {
        match cli.command {
            Command::Synth { dir } => {
                let dir = dir.unwrap_or_else(|| out.join("corpus"));
                let mut c = cfg.clone();
                c.input = None;
                let segments = load_segments(&c)?;
                vowelgraph::synth::write_segments(&dir, segments.iter().map(|(k, a)| (k, a)))?;
                println!("wrote {} segments to {}", segments.len(), dir.display());
            }
            Command::Preprocess => {
                let segments = load_segments(&cfg)?;
                let dir = out.join("segments");
                vowelgraph::synth::write_segments(&dir, segments.iter().map(|(k, a)| (k, a)))?;
                println!("wrote {} segments to {}", segments.len(), dir.display());
            }
            Command::Spectra => {
                let segments = load_segments(&cfg)?;
                let spectral = Spectral::compute(&cfg, &segments)?;
                pipeline::write_spectra(&out, &spectral.spectra)?;
                println!("wrote {} spectra", spectral.spectra.len());
            }
            Command::Select => {
                let p = prepare(&cfg, false)?;
                write_text(&out.join("reports/selection.json"), &selection_json(&p.selections)?)?;
                write_text(
                    &out.join("tables/correlation_distribution.csv"),
                    &Histogram::of(p.spectral.correlation_values(), 200).to_csv(),
                )?;
                let total = p.spectral.spectra.len();
                println!(
                    "kept {} of {} segments ({:.1}%)",
                    p.metrics.len(),
                    total,
                    100.0 * p.metrics.len() as f64 / total.max(1) as f64
                );
            }
            Command::Graphs => {
                let p = prepare(&cfg, true)?;
                pipeline::write_graphs(&out, &p.graphs)?;
                write_text(&out.join("tables/metrics.csv"), &metrics_csv(&p.metrics))?;
                println!("wrote {} graphs", p.graphs.len());
            }
            Command::Features { run } => {
                let p = prepare(&cfg, false)?;
                let inputs = RunInputs {
                    selections: &p.selections,
                    metrics: &p.metrics,
                };
                let t = run_tables(&cfg, &inputs, run)?;
                for table in &t.tables {
                    let path = out.join("tables").join(format!("run_{run:02}_features_{}.csv", table.part));
                    write_text(&path, &table.to_csv())?;
                }
                for note in &t.capped {
                    println!("capped: {note}");
                }
                println!("wrote feature tables for run {run} (seed {})", t.seed);
            }
            Command::Train { run } => {
                let p = prepare(&cfg, false)?;
                let inputs = RunInputs {
                    selections: &p.selections,
                    metrics: &p.metrics,
                };
                let t = run_tables(&cfg, &inputs, run)?;
                let data = t.labeled()?;
                let (grid, forest) = tune_and_fit(&data[0], &data[1], &cfg.grid, t.seed)?;
                forest.save(&out.join("models").join(format!("run_{run:02}.json")))?;
                write_text(&out.join("tables").join(format!("run_{run:02}_grid.csv")), &grid_csv(&grid))?;
                println!(
                    "best n_estimators={} max_depth={} val_accuracy={:.4}",
                    grid.n_estimators, grid.max_depth, grid.val_accuracy
                );
            }
            Command::Evaluate { run, model } => {
                let p = prepare(&cfg, false)?;
                let (forest, t) = load_or_train(&cfg, &p, run, &model)?;
                let test = vowelgraph::model::LabeledData::from_table(&t.tables[SplitPart::Test as usize], &forest.classes)?;
                let report = evaluate(&forest, &test)?;
                write_text(&out.join("reports").join(format!("run_{run:02}_eval.json")), &report.to_json()?)?;
                write_text(&out.join("tables").join(format!("run_{run:02}_eval.csv")), &report.to_csv())?;
                println!(
                    "macro precision={:.4} recall={:.4} f1={:.4}",
                    report.macro_precision, report.macro_recall, report.macro_f1
                );
            }
            Command::Explain { run, model } => {
                let p = prepare(&cfg, false)?;
                let (forest, t) = load_or_train(&cfg, &p, run, &model)?;
                let train = vowelgraph::model::LabeledData::from_table(&t.tables[0], &forest.classes)?;
                let test = vowelgraph::model::LabeledData::from_table(&t.tables[2], &forest.classes)?;
                let table = explain_rows(&cfg, &forest, &train, &test, &t.tables[2], t.seed)?;
                let imp = aggregate_importance(std::slice::from_ref(&table))?;
                write_text(&out.join("tables").join(format!("run_{run:02}_shapley.csv")), &table.to_csv())?;
                write_text(&out.join("reports").join(format!("run_{run:02}_importance.json")), &imp.to_json()?)?;
                write_text(&out.join("tables").join(format!("run_{run:02}_importance.csv")), &importance_csv(&imp))?;
                let worst = table.rows.iter().map(|r| r.local_accuracy_error()).fold(0.0, f64::max);
                println!("explained {} rows; max local-accuracy error {worst:.2e}", table.rows.len());
            }
            Command::SweepLpc { orders } => {
                let orders = if orders.is_empty() { cfg.sweep_orders.clone() } else { orders };
                let report = pipeline::sweep_lpc_order(&cfg, &orders)?;
                for c in &report.cells {
                    println!("order {:>2}: f1 {}  p={}", c.value, fmt_ms(&c.summary.f1), c.p_value.map_or("n/a".into(), |p| format!("{p:.4}")));
                }
            }
            Command::SweepThreshold { thresholds } => {
                let thresholds = if thresholds.is_empty() { cfg.sweep_thresholds.clone() } else { thresholds };
                let report = pipeline::sweep_threshold(&cfg, &thresholds)?;
                for c in &report.cells {
                    println!(
                        "threshold {:.2}: f1 {}  retained {}  p={}",
                        c.value,
                        fmt_ms(&c.summary.f1),
                        c.retained_fraction.map_or("n/a".into(), |r| format!("{r:.3}")),
                        c.p_value.map_or("n/a".into(), |p| format!("{p:.4}"))
                    );
                }
            }
            Command::Run => {
                let report = pipeline::run_experiment(&cfg)?;
                for r in &report.runs {
                    match &r.error {
                        None => println!("run {:>2} (seed {}): f1 {:.4}", r.run, r.seed, r.f1.unwrap_or(f64::NAN)),
                        Some(e) => println!("run {:>2} (seed {}): failed: {e}", r.run, r.seed),
                    }
                }
                println!(
                    "retained {:.1}% of segments; precision {}  recall {}  f1 {}",
                    100.0 * report.retained_fraction,
                    fmt_ms(&report.summary.precision),
                    fmt_ms(&report.summary.recall),
                    fmt_ms(&report.summary.f1)
                );
            }
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
