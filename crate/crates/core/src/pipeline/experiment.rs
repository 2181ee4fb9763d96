use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::stages::{
    compute_graphs, compute_spectra, group_correlations, load_segments, select_groups, GroupSelection, Histogram,
};
use crate::community::CommunityDetector;
use crate::corpus::SegmentKey;
use crate::dataset::{feature_names, sample_combinations, split_segments, FeatureTable, GroupKey, SplitPart};
use crate::error::{Error, Result};
use crate::explain::{aggregate_importance, background_rows, EstimatorParams, ImportanceReport, ShapleyTable};
use crate::graph::Graph;
use crate::graph_metrics::MetricVector;
use crate::io_util::write_text;
use crate::model::{evaluate, tune_and_fit, EvalReport, Forest, GridOutcome, LabeledData};
use crate::rep_select::CorrelationMatrix;
use crate::rng::{derive_seed, rng_for};
use crate::spectrum::SpectralProfile;
use crate::visgraph::VisibilityBuilder;

const CONTROL_STREAM: u64 = 0xC0_47_20_1;
const SHAPLEY_STREAM: u64 = 0x5A_A9;

/// Run `f` on a pool of `threads` workers (0 = all cores).
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub(crate) fn strategies(cfg: &PipelineConfig) -> Result<(Box<dyn VisibilityBuilder>, Box<dyn CommunityDetector>)> {
    Ok((
        crate::visgraph::registry().create(&cfg.builder, &())?,
        crate::community::registry().create(&cfg.community, &())?,
    ))
}

/// Spectra and per-group correlations of the whole corpus at one LPC order.
pub struct Spectral {
    pub spectra: BTreeMap<SegmentKey, SpectralProfile>,
    pub correlations: BTreeMap<GroupKey, (Vec<SegmentKey>, CorrelationMatrix)>,
}

impl Spectral {
    pub fn compute(cfg: &PipelineConfig, segments: &[(SegmentKey, crate::audio_io::AudioBuffer)]) -> Result<Self> {
        let spectra = compute_spectra(segments, cfg.lpc_order, cfg.n_bins)?;
        let correlations = group_correlations(&spectra)?;
        Ok(Self { spectra, correlations })
    }

    pub fn correlation_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.correlations.values().flat_map(|(_, c)| c.upper_triangle())
    }

    /// Fraction of within-group pairs correlated at or above `threshold`.
    pub fn edge_fraction(&self, threshold: f64) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for v in self.correlation_values() {
            total += 1;
            hit += usize::from(v >= threshold);
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Everything a run needs: the retained segments and their graph metrics.
pub struct RunInputs<'a> {
    pub selections: &'a [GroupSelection],
    pub metrics: &'a BTreeMap<SegmentKey, MetricVector>,
}

pub struct RunOutput {
    pub run: usize,
    pub seed: u64,
    pub grid: GridOutcome,
    pub report: EvalReport,
    pub forest: Forest,
    pub tables: Vec<FeatureTable>,
    pub shapley: Option<ShapleyTable>,
    /// Subjects and partitions whose combination space was smaller than k.
    pub capped: Vec<String>,
}

pub fn run_seed(master: u64, run: usize) -> u64 {
    master.wrapping_add(run as u64)
}

/// Shuffle the labels of a table in place (randomized-label control).
pub fn permute_labels(table: &mut FeatureTable, seed: u64) {
    let mut labels: Vec<String> = table.rows.iter().map(|r| r.label.clone()).collect();
    labels.shuffle(&mut rng_for(seed, &[CONTROL_STREAM, table.part as u64]));
    for (row, label) in table.rows.iter_mut().zip(labels) {
        row.label = label;
    }
}

/// Feature tables of one run, before any training.
pub struct RunTables {
    pub seed: u64,
    pub classes: Vec<String>,
    /// Train, validation and test, in that order.
    pub tables: Vec<FeatureTable>,
    pub capped: Vec<String>,
}

impl RunTables {
    pub fn labeled(&self) -> Result<Vec<LabeledData>> {
        self.tables
            .iter()
            .map(|t| LabeledData::from_table(t, &self.classes))
            .collect::<Result<_>>()
            .map_err(Error::stage("features"))
    }
}

/// Split the retained segments with the run's seed and sample combinations.
pub fn run_tables(cfg: &PipelineConfig, inputs: &RunInputs, run: usize) -> Result<RunTables> {
    let seed = run_seed(cfg.seed, run);
    let groups: BTreeMap<GroupKey, Vec<SegmentKey>> = inputs
        .selections
        .iter()
        .map(|g| {
            let vowel = g.vowel.parse().expect("stored vowel parses");
            ((g.subject.clone(), vowel), g.kept.clone())
        })
        .collect();
    let splits = split_segments(&groups, cfg.ratios, seed).map_err(Error::stage("split"))?;
    let classes = splits.subjects();
    let mut tables = Vec::with_capacity(3);
    let mut capped = Vec::new();
    for part in SplitPart::ALL {
        let mut table = FeatureTable::new(part, seed);
        for subject in &classes {
            let sampled = sample_combinations(&splits, inputs.metrics, subject, part, cfg.k_combinations, seed)
                .map_err(Error::stage("features"))?;
            if let Some(n) = sampled.capped_at {
                capped.push(format!("{subject}/{part}: {n}"));
            }
            table.rows.extend(sampled.table.rows);
        }
        if cfg.control_permute_labels && part != SplitPart::Test {
            permute_labels(&mut table, seed);
        }
        tables.push(table);
    }
    Ok(RunTables {
        seed,
        classes,
        tables,
        capped,
    })
}

/// One split/sample/train/evaluate/explain pass.
pub fn run_once(cfg: &PipelineConfig, inputs: &RunInputs, run: usize, with_shapley: bool) -> Result<RunOutput> {
    let RunTables {
        seed,
        classes,
        tables,
        capped,
    } = run_tables(cfg, inputs, run)?;
    let data: Vec<LabeledData> = tables
        .iter()
        .map(|t| LabeledData::from_table(t, &classes))
        .collect::<Result<_>>()
        .map_err(Error::stage("features"))?;
    let (grid, forest) = tune_and_fit(&data[0], &data[1], &cfg.grid, seed).map_err(Error::stage("train"))?;
    let report = evaluate(&forest, &data[2]).map_err(Error::stage("evaluate"))?;
    let shapley = if with_shapley && cfg.shapley.enabled {
        Some(explain_rows(cfg, &forest, &data[0], &data[2], &tables[2], seed).map_err(Error::stage("explain"))?)
    } else {
        None
    };
    Ok(RunOutput {
        run,
        seed,
        grid,
        report,
        forest,
        tables,
        shapley,
        capped,
    })
}

/// Explain a seeded subset of test rows (`rows_per_subject` per class).
pub fn explain_rows(
    cfg: &PipelineConfig,
    forest: &Forest,
    train: &LabeledData,
    test: &LabeledData,
    test_table: &FeatureTable,
    seed: u64,
) -> Result<ShapleyTable> {
    use rayon::prelude::*;
    let estimator = crate::explain::registry().create(
        &cfg.shapley.estimator,
        &EstimatorParams {
            n_perm: cfg.shapley.n_perm,
        },
    )?;
    let background = background_rows(train, cfg.shapley.background, derive_seed(seed, &[SHAPLEY_STREAM]));
    let mut chosen = Vec::new();
    for class in 0..test.n_classes() {
        let mut idx: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] == class).collect();
        idx.shuffle(&mut rng_for(seed, &[SHAPLEY_STREAM, class as u64]));
        idx.truncate(cfg.shapley.rows_per_subject);
        chosen.extend(idx);
    }
    chosen.sort_unstable();
    let rows = chosen
        .par_iter()
        .map(|&i| {
            let mut row = estimator.explain(
                forest,
                test.row(i),
                &background,
                derive_seed(seed, &[SHAPLEY_STREAM, 1, i as u64]),
            )?;
            let prov: Vec<String> = test_table.rows[i].provenance.iter().map(|k| k.to_string()).collect();
            row.id = format!("{i}:{}", prov.join("+"));
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapleyTable {
        feature_names: feature_names(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub n_estimators: Option<usize>,
    pub max_depth: Option<usize>,
    pub val_accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

impl RunSummary {
    pub fn from_result(run: usize, seed: u64, result: &Result<RunOutput>) -> Self {
        match result {
            Ok(o) => Self {
                run,
                seed,
                ok: true,
                error: None,
                n_estimators: Some(o.grid.n_estimators),
                max_depth: Some(o.grid.max_depth),
                val_accuracy: Some(o.grid.val_accuracy),
                precision: Some(o.report.macro_precision),
                recall: Some(o.report.macro_recall),
                f1: Some(o.report.macro_f1),
                accuracy: Some(o.report.accuracy),
            },
            Err(e) => Self {
                run,
                seed,
                ok: false,
                error: Some(e.to_string()),
                n_estimators: None,
                max_depth: None,
                val_accuracy: None,
                precision: None,
                recall: None,
                f1: None,
                accuracy: None,
            },
        }
    }
}

pub(crate) fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn runs_csv(runs: &[RunSummary]) -> String {
    let mut out = String::from("run,seed,ok,n_estimators,max_depth,val_accuracy,precision,recall,f1,accuracy,error\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.seed,
            r.ok,
            opt(&r.n_estimators),
            opt(&r.max_depth),
            opt(&r.val_accuracy),
            opt(&r.precision),
            opt(&r.recall),
            opt(&r.f1),
            opt(&r.accuracy),
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
}

impl Summary {
    pub fn of(runs: &[RunSummary]) -> Self {
        let pick = |f: fn(&RunSummary) -> Option<f64>| MeanStd::of(&runs.iter().filter_map(f).collect::<Vec<_>>());
        Self {
            precision: pick(|r| r.precision),
            recall: pick(|r| r.recall),
            f1: pick(|r| r.f1),
            accuracy: pick(|r| r.accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub lpc_order: usize,
    pub corr_threshold: f64,
    pub n_runs: usize,
    pub seed: u64,
    pub control_permute_labels: bool,
    pub segments: usize,
    pub retained: usize,
    pub retained_fraction: f64,
    pub runs: Vec<RunSummary>,
    pub summary: Summary,
    pub importance: Option<ImportanceReport>,
}

fn stem(key: &SegmentKey) -> String {
    format!("{}_{}_{:03}", key.subject, key.vowel, key.index)
}

pub fn metrics_csv(metrics: &BTreeMap<SegmentKey, MetricVector>) -> String {
    let mut out = String::from("segment,density,aspl,cc,q\n");
    for (k, m) in metrics {
        let _ = writeln!(out, "{k},{},{},{},{}", m.density, m.aspl, m.cc, m.q);
    }
    out
}

pub fn selection_json(selections: &[GroupSelection]) -> Result<String> {
    Ok(serde_json::to_string_pretty(selections)?)
}

pub fn write_spectra(out: &Path, spectra: &BTreeMap<SegmentKey, SpectralProfile>) -> Result<()> {
    for (k, p) in spectra {
        write_text(&out.join("spectra").join(format!("{}.csv", stem(k))), &p.to_csv())?;
    }
    Ok(())
}

pub fn write_graphs(out: &Path, graphs: &BTreeMap<SegmentKey, Graph>) -> Result<()> {
    for (k, g) in graphs {
        write_text(&out.join("graphs").join(format!("{}.edges", stem(k))), &g.to_edge_list())?;
    }
    Ok(())
}

pub fn grid_csv(grid: &GridOutcome) -> String {
    let mut out = String::from("n_estimators,max_depth,val_accuracy\n");
    for c in &grid.cells {
        let _ = writeln!(out, "{},{},{}", c.n_estimators, c.max_depth, c.val_accuracy);
    }
    out
}

pub fn importance_csv(report: &ImportanceReport) -> String {
    let mut out = String::from("vowel");
    for m in MetricVector::NAMES {
        out.push(',');
        out.push_str(m);
    }
    out.push_str(",total\n");
    for (vowel, cells) in &report.by_vowel {
        out.push_str(vowel);
        for m in MetricVector::NAMES {
            let _ = write!(out, ",{}", cells[m]);
        }
        let _ = writeln!(out, ",{}", report.vowel_totals[vowel]);
    }
    out.push_str("total");
    for m in MetricVector::NAMES {
        let _ = write!(out, ",{}", report.metric_totals[m]);
    }
    let total: f64 = report.metric_totals.values().sum();
    let _ = writeln!(out, ",{total}");
    out
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct RunFile<'a> {
    run: usize,
    seed: u64,
    capped: &'a [String],
    grid: &'a GridOutcome,
    evaluation: &'a EvalReport,
}

fn write_run(out: &Path, o: &RunOutput, artifacts: bool) -> Result<()> {
    let tag = format!("run_{:02}", o.run);
    let file = RunFile {
        run: o.run,
        seed: o.seed,
        capped: &o.capped,
        grid: &o.grid,
        evaluation: &o.report,
    };
    write_text(&out.join("reports").join(format!("{tag}.json")), &serde_json::to_string_pretty(&file)?)?;
    write_text(&out.join("tables").join(format!("{tag}_eval.csv")), &o.report.to_csv())?;
    write_text(&out.join("tables").join(format!("{tag}_grid.csv")), &grid_csv(&o.grid))?;
    o.forest.save(&out.join("models").join(format!("{tag}.json")))?;
    if let Some(s) = &o.shapley {
        write_text(&out.join("tables").join(format!("{tag}_shapley.csv")), &s.to_csv())?;
    }
    if artifacts {
        for t in &o.tables {
            write_text(&out.join("tables").join(format!("{tag}_features_{}.csv", t.part)), &t.to_csv())?;
        }
    }
    Ok(())
}

/// Retained segments and their metric vectors for one threshold.
pub fn prepare_inputs(
    cfg: &PipelineConfig,
    spectral: &Spectral,
    keep_graphs: bool,
) -> Result<(Vec<GroupSelection>, BTreeMap<SegmentKey, MetricVector>, BTreeMap<SegmentKey, Graph>)> {
    let (builder, detector) = strategies(cfg)?;
    let selections = select_groups(&spectral.correlations, cfg.corr_threshold, detector.as_ref())?;
    let kept: Vec<SegmentKey> = selections.iter().flat_map(|g| g.kept.iter().cloned()).collect();
    let (metrics, graphs) = compute_graphs(&spectral.spectra, &kept, builder.as_ref(), detector.as_ref(), keep_graphs)?;
    Ok((selections, metrics, graphs))
}

/// Runs `0..cfg.n_runs`; a failing run is reported and the others continue.
pub fn execute_runs(cfg: &PipelineConfig, inputs: &RunInputs, with_shapley: bool) -> Vec<Result<RunOutput>> {
    (0..cfg.n_runs).map(|r| run_once(cfg, inputs, r, with_shapley)).collect()
}

/// The full experiment: corpus, spectra, selection, graphs, then `n_runs`
/// seeded runs. Writes reports, tables, models and (optionally) per-segment
/// artifacts under `cfg.out`.
pub fn run_experiment(cfg: &PipelineConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    with_pool(cfg.threads, || run_experiment_inner(cfg))?
}

fn run_experiment_inner(cfg: &PipelineConfig) -> Result<ExperimentReport> {
    let out = cfg.out.as_path();
    let segments = load_segments(cfg).map_err(Error::stage("load"))?;
    let spectral = Spectral::compute(cfg, &segments)?;
    drop(segments);
    let (selections, metrics, graphs) = prepare_inputs(cfg, &spectral, cfg.artifacts)?;
    let inputs = RunInputs {
        selections: &selections,
        metrics: &metrics,
    };
    let results = execute_runs(cfg, &inputs, true);

    let runs: Vec<RunSummary> = results
        .iter()
        .enumerate()
        .map(|(r, res)| RunSummary::from_result(r, run_seed(cfg.seed, r), res))
        .collect();
    let tables: Vec<ShapleyTable> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().and_then(|o| o.shapley.clone()))
        .collect();
    let importance = if tables.is_empty() {
        None
    } else {
        Some(aggregate_importance(&tables)?)
    };
    let total = spectral.spectra.len();
    let retained = metrics.len();
    let report = ExperimentReport {
        lpc_order: cfg.lpc_order,
        corr_threshold: cfg.corr_threshold,
        n_runs: cfg.n_runs,
        seed: cfg.seed,
        control_permute_labels: cfg.control_permute_labels,
        segments: total,
        retained,
        retained_fraction: retained as f64 / total.max(1) as f64,
        summary: Summary::of(&runs),
        runs,
        importance,
    };

    write_text(&out.join("reports/experiment.json"), &serde_json::to_string_pretty(&report)?)?;
    write_text(&out.join("reports/selection.json"), &selection_json(&selections)?)?;
    write_text(&out.join("tables/runs.csv"), &runs_csv(&report.runs))?;
    write_text(&out.join("tables/metrics.csv"), &metrics_csv(&metrics))?;
    write_text(
        &out.join("tables/correlation_distribution.csv"),
        &Histogram::of(spectral.correlation_values(), 200).to_csv(),
    )?;
    if let Some(imp) = &report.importance {
        write_text(&out.join("reports/importance.json"), &imp.to_json()?)?;
        write_text(&out.join("tables/importance.csv"), &importance_csv(imp))?;
    }
    for o in results.iter().flatten() {
        write_run(out, o, cfg.artifacts)?;
    }
    if cfg.artifacts {
        write_spectra(out, &spectral.spectra)?;
        write_graphs(out, &graphs)?;
    }
    Ok(report)
}
