use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::audio_io::{resample, AudioBuffer};
use crate::community::CommunityDetector;
use crate::corpus::SegmentKey;
use crate::dataset::GroupKey;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::graph_metrics::{metric_vector_with, MetricVector, METRIC_SEED};
use crate::preprocess::{spectral_gate, split_on_silence};
use crate::rep_select::{correlation_matrix, select_representatives, CorrelationMatrix, Selection};
use crate::spectrum::{spectral_profile, SpectralProfile};
use crate::synth::{default_profiles, parse_profiles, synth_corpus};
use crate::visgraph::VisibilityBuilder;

/// Seed for community detection during representative selection; selection
/// is shared by all runs.
pub const SELECTION_SEED: u64 = 0;

/// Audio segments at the pipeline rate, ordered by key.
pub fn load_segments(cfg: &PipelineConfig) -> Result<Vec<(SegmentKey, AudioBuffer)>> {
    match &cfg.input {
        None => {
            let profiles = match &cfg.synth.speakers {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    parse_profiles(&text)?
                }
                None => default_profiles(),
            };
            let corpus = synth_corpus(&profiles, cfg.synth.segments_per_vowel, cfg.sample_rate, cfg.synth.seed)?;
            Ok(corpus.into_iter().map(|s| (s.key, s.audio)).collect())
        }
        Some(dir) => {
            let files = crate::synth::read_corpus(dir)?;
            let processed: Vec<(SegmentKey, Vec<AudioBuffer>)> = files
                .into_par_iter()
                .map(|(key, audio)| {
                    let tag = |e: Error| Error::Stage {
                        stage: "preprocess",
                        source: Box::new(Error::Config(format!("{key}: {e}"))),
                    };
                    let audio = resample(&audio, cfg.sample_rate).map_err(tag)?;
                    let audio = if cfg.preprocess.gate {
                        spectral_gate(&audio, &cfg.preprocess.gate_params).map_err(tag)?
                    } else {
                        audio
                    };
                    let chunks = split_on_silence(&audio, &cfg.preprocess.silence).map_err(tag)?;
                    Ok((key, chunks))
                })
                .collect::<Result<_>>()?;
            let mut next: BTreeMap<GroupKey, usize> = BTreeMap::new();
            let mut out = Vec::new();
            for (key, chunks) in processed {
                for chunk in chunks {
                    let counter = next.entry((key.subject.clone(), key.vowel)).or_insert(0);
                    out.push((SegmentKey::new(key.subject.clone(), key.vowel, *counter), chunk));
                    *counter += 1;
                }
            }
            Ok(out)
        }
    }
}

pub fn compute_spectra(
    segments: &[(SegmentKey, AudioBuffer)],
    order: usize,
    n_bins: usize,
) -> Result<BTreeMap<SegmentKey, SpectralProfile>> {
    let profiles: Vec<SpectralProfile> = segments
        .par_iter()
        .map(|(key, audio)| {
            spectral_profile(&audio.samples, order, n_bins, audio.sample_rate, Some(key.clone())).map_err(|e| {
                Error::Stage {
                    stage: "spectra",
                    source: Box::new(Error::Config(format!("{key}: {e}"))),
                }
            })
        })
        .collect::<Result<_>>()?;
    Ok(profiles
        .into_iter()
        .map(|p| (p.key.clone().expect("profile key"), p))
        .collect())
}

/// Segment keys per (subject, vowel), sorted.
pub fn group_keys<'a>(keys: impl IntoIterator<Item = &'a SegmentKey>) -> BTreeMap<GroupKey, Vec<SegmentKey>> {
    let mut groups: BTreeMap<GroupKey, Vec<SegmentKey>> = BTreeMap::new();
    for k in keys {
        groups.entry((k.subject.clone(), k.vowel)).or_default().push(k.clone());
    }
    groups.values_mut().for_each(|v| v.sort());
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub subject: String,
    pub vowel: String,
    pub selection: Selection,
    pub kept: Vec<SegmentKey>,
}

/// Per-group correlation matrices (computed once per spectral configuration).
pub fn group_correlations(
    spectra: &BTreeMap<SegmentKey, SpectralProfile>,
) -> Result<BTreeMap<GroupKey, (Vec<SegmentKey>, CorrelationMatrix)>> {
    group_keys(spectra.keys())
        .into_iter()
        .map(|(group, keys)| {
            let profiles: Vec<&SpectralProfile> = keys.iter().map(|k| &spectra[k]).collect();
            let corr = correlation_matrix(&profiles).map_err(|e| Error::Stage {
                stage: "select",
                source: Box::new(Error::Config(format!("{}/{}: {e}", group.0, group.1))),
            })?;
            Ok((group, (keys, corr)))
        })
        .collect()
}

pub fn select_groups(
    correlations: &BTreeMap<GroupKey, (Vec<SegmentKey>, CorrelationMatrix)>,
    threshold: f64,
    detector: &dyn CommunityDetector,
) -> Result<Vec<GroupSelection>> {
    correlations
        .iter()
        .map(|((subject, vowel), (keys, corr))| {
            let selection = select_representatives(corr, threshold, detector, SELECTION_SEED)?;
            let kept = selection.kept.iter().map(|&i| keys[i].clone()).collect();
            Ok(GroupSelection {
                subject: subject.clone(),
                vowel: vowel.to_string(),
                selection,
                kept,
            })
        })
        .collect::<Result<_>>()
        .map_err(Error::stage("select"))
}

/// Visibility graph and metric vector for each listed segment.
pub fn compute_graphs(
    spectra: &BTreeMap<SegmentKey, SpectralProfile>,
    keys: &[SegmentKey],
    builder: &dyn VisibilityBuilder,
    detector: &dyn CommunityDetector,
    keep_graphs: bool,
) -> Result<(BTreeMap<SegmentKey, MetricVector>, BTreeMap<SegmentKey, Graph>)> {
    let results: Vec<(SegmentKey, MetricVector, Option<Graph>)> = keys
        .par_iter()
        .map(|key| {
            let wrap = |e: Error| Error::Stage {
                stage: "graphs",
                source: Box::new(Error::Config(format!("{key}: {e}"))),
            };
            let g = builder.build(&spectra[key].log_power).map_err(wrap)?;
            let mv = metric_vector_with(&g, detector, METRIC_SEED).map_err(wrap)?;
            Ok((key.clone(), mv, keep_graphs.then_some(g)))
        })
        .collect::<Result<_>>()?;
    let mut metrics = BTreeMap::new();
    let mut graphs = BTreeMap::new();
    for (k, mv, g) in results {
        if let Some(g) = g {
            graphs.insert(k.clone(), g);
        }
        metrics.insert(k, mv);
    }
    Ok((metrics, graphs))
}

/// Histogram of correlations over `[-1, 1]` in `bins` equal bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: impl IntoIterator<Item = f64>, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for v in values {
            let pos = ((v + 1.0) / 2.0 * bins as f64).floor();
            let i = (pos.max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let edges = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let total: usize = self.counts.iter().sum();
        let width = self.edges[1] - self.edges[0];
        let mut out = String::from("bin_lo,bin_hi,count,density\n");
        for (i, &c) in self.counts.iter().enumerate() {
            let density = if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) };
            out.push_str(&format!("{},{},{},{}\n", self.edges[i], self.edges[i + 1], c, density));
        }
        out
    }
}
