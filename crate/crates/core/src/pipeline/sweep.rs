use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::experiment::{
    csv_field, execute_runs, opt, prepare_inputs, run_seed, strategies, with_pool, MeanStd, RunInputs, RunSummary,
    Spectral, Summary,
};
use super::stages::{compute_graphs, load_segments, select_groups, Histogram};
use crate::corpus::SegmentKey;
use crate::error::{Error, Result};
use crate::io_util::write_text;
use crate::stats::ranksum;

pub const REFERENCE_ORDER: usize = 13;
pub const REFERENCE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    #[serde(flatten)]
    pub run: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub ok_runs: usize,
    pub summary: Summary,
    /// Two-sided rank-sum p-value of this cell's F1 values against the reference cell.
    pub p_value: Option<f64>,
    pub retained_fraction: Option<f64>,
    /// Fraction of within-group spectrum pairs at or above the threshold.
    pub edge_fraction: Option<f64>,
    /// Mean number of communities per (subject, vowel) group.
    pub communities: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: String,
    pub reference: f64,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    fn f1s(&self, value: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.value == value)
            .filter_map(|r| r.run.f1)
            .collect()
    }

    fn attach_p_values(&mut self) {
        let reference = self.f1s(self.reference);
        let own: Vec<Vec<f64>> = self.cells.iter().map(|c| self.f1s(c.value)).collect();
        for (cell, f1s) in self.cells.iter_mut().zip(own) {
            cell.p_value = ranksum(&f1s, &reference).ok().map(|r| r.p);
        }
    }

    pub fn cells_csv(&self) -> String {
        let name = &self.parameter;
        let mut out = format!(
            "{name},ok_runs,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,accuracy_mean,accuracy_std,retained_fraction,edge_fraction,communities,p_value_f1_vs_{},error\n",
            self.reference
        );
        let ms = |m: &Option<MeanStd>| match m {
            Some(m) => format!("{},{}", m.mean, m.std),
            None => ",".into(),
        };
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.value,
                c.ok_runs,
                ms(&c.summary.precision),
                ms(&c.summary.recall),
                ms(&c.summary.f1),
                ms(&c.summary.accuracy),
                opt(&c.retained_fraction),
                opt(&c.edge_fraction),
                opt(&c.communities),
                opt(&c.p_value),
                csv_field(c.error.as_deref().unwrap_or(""))
            );
        }
        out
    }

    pub fn rows_csv(&self) -> String {
        let mut out = format!(
            "{},run,seed,ok,n_estimators,max_depth,val_accuracy,precision,recall,f1,accuracy,error\n",
            self.parameter
        );
        for row in &self.rows {
            let r = &row.run;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                row.value,
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

    fn write(&self, cfg: &PipelineConfig) -> Result<()> {
        let out = &cfg.out;
        let stem = format!("sweep_{}", self.parameter);
        write_text(&out.join("tables").join(format!("{stem}.csv")), &self.cells_csv())?;
        write_text(&out.join("tables").join(format!("{stem}_runs.csv")), &self.rows_csv())?;
        write_text(
            &out.join("reports").join(format!("{stem}.json")),
            &serde_json::to_string_pretty(self)?,
        )
    }
}

fn failed_cell(value: f64, cfg: &PipelineConfig, error: &Error) -> (SweepCell, Vec<SweepRow>) {
    let rows = (0..cfg.n_runs)
        .map(|r| SweepRow {
            value,
            run: RunSummary::from_result(r, run_seed(cfg.seed, r), &Err(Error::Config(error.to_string()))),
        })
        .collect();
    let cell = SweepCell {
        value,
        ok_runs: 0,
        summary: Summary::of(&[]),
        p_value: None,
        retained_fraction: None,
        edge_fraction: None,
        communities: None,
        error: Some(error.to_string()),
    };
    (cell, rows)
}

fn run_cell(
    value: f64,
    cfg: &PipelineConfig,
    inputs: &RunInputs,
    retained_fraction: f64,
    edge_fraction: Option<f64>,
) -> (SweepCell, Vec<SweepRow>) {
    let results = execute_runs(cfg, inputs, false);
    let runs: Vec<RunSummary> = results
        .iter()
        .enumerate()
        .map(|(r, res)| RunSummary::from_result(r, run_seed(cfg.seed, r), res))
        .collect();
    let ok_runs = runs.iter().filter(|r| r.ok).count();
    let error = runs.iter().find_map(|r| r.error.clone());
    let communities = inputs
        .selections
        .iter()
        .map(|g| g.selection.community_sizes.len() as f64)
        .sum::<f64>()
        / inputs.selections.len().max(1) as f64;
    let cell = SweepCell {
        value,
        ok_runs,
        summary: Summary::of(&runs),
        p_value: None,
        retained_fraction: Some(retained_fraction),
        edge_fraction,
        communities: Some(communities),
        error,
    };
    let rows = runs.into_iter().map(|run| SweepRow { value, run }).collect();
    (cell, rows)
}

/// Full experiment (without attributions) at each LPC order.
pub fn sweep_lpc_order(cfg: &PipelineConfig, orders: &[usize]) -> Result<SweepReport> {
    cfg.validate()?;
    with_pool(cfg.threads, || {
        let segments = load_segments(cfg).map_err(Error::stage("load"))?;
        let mut report = SweepReport {
            parameter: "order".into(),
            reference: REFERENCE_ORDER as f64,
            cells: Vec::new(),
            rows: Vec::new(),
        };
        for &order in orders {
            let mut c = cfg.clone();
            c.lpc_order = order;
            let prepared = c.validate().and_then(|_| {
                let spectral = Spectral::compute(&c, &segments)?;
                let (selections, metrics, _) = prepare_inputs(&c, &spectral, false)?;
                Ok((spectral.spectra.len(), selections, metrics))
            });
            let (cell, rows) = match prepared {
                Ok((total, selections, metrics)) => {
                    let inputs = RunInputs {
                        selections: &selections,
                        metrics: &metrics,
                    };
                    run_cell(order as f64, &c, &inputs, metrics.len() as f64 / total.max(1) as f64, None)
                }
                Err(e) => failed_cell(order as f64, &c, &e),
            };
            report.cells.push(cell);
            report.rows.extend(rows);
        }
        report.attach_p_values();
        report.write(cfg)?;
        Ok(report)
    })?
}

/// Full experiment (without attributions) at each correlation threshold,
/// plus the distribution of within-group spectrum correlations.
pub fn sweep_threshold(cfg: &PipelineConfig, thresholds: &[f64]) -> Result<SweepReport> {
    cfg.validate()?;
    with_pool(cfg.threads, || {
        let segments = load_segments(cfg).map_err(Error::stage("load"))?;
        let spectral = Spectral::compute(cfg, &segments)?;
        drop(segments);
        let (builder, detector) = strategies(cfg)?;
        // Metric vectors do not depend on the threshold: compute them once.
        let all: Vec<SegmentKey> = spectral.spectra.keys().cloned().collect();
        let (metrics, _) = compute_graphs(&spectral.spectra, &all, builder.as_ref(), detector.as_ref(), false)?;
        let mut report = SweepReport {
            parameter: "threshold".into(),
            reference: REFERENCE_THRESHOLD,
            cells: Vec::new(),
            rows: Vec::new(),
        };
        for &t in thresholds {
            let mut c = cfg.clone();
            c.corr_threshold = t;
            let selected = c
                .validate()
                .and_then(|_| select_groups(&spectral.correlations, t, detector.as_ref()));
            let (cell, rows) = match selected {
                Ok(selections) => {
                    let kept: BTreeMap<SegmentKey, _> = selections
                        .iter()
                        .flat_map(|g| g.kept.iter())
                        .map(|k| (k.clone(), metrics[k]))
                        .collect();
                    let inputs = RunInputs {
                        selections: &selections,
                        metrics: &kept,
                    };
                    let retained = kept.len() as f64 / all.len().max(1) as f64;
                    run_cell(t, &c, &inputs, retained, Some(spectral.edge_fraction(t)))
                }
                Err(e) => failed_cell(t, &c, &e),
            };
            report.cells.push(cell);
            report.rows.extend(rows);
        }
        report.attach_p_values();
        report.write(cfg)?;
        write_text(
            &cfg.out.join("tables/correlation_distribution.csv"),
            &Histogram::of(spectral.correlation_values(), 200).to_csv(),
        )?;
        Ok(report)
    })?
}
