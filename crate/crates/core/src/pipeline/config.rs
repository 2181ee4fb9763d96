use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio_io::PIPELINE_RATE;
use crate::dataset::{SplitRatios, DEFAULT_COMBINATIONS};
use crate::error::{Error, Result};
use crate::explain::{DEFAULT_BACKGROUND, DEFAULT_PERMUTATIONS};
use crate::model::Grid;
use crate::preprocess::{GateParams, SilenceParams};
use crate::rep_select::DEFAULT_THRESHOLD;
use crate::spectrum::{DEFAULT_BINS, DEFAULT_ORDER};
use crate::synth::DEFAULT_SEGMENTS_PER_VOWEL;

/// Synthetic corpus used when no input directory is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// TOML speaker file; the built-in seven speakers when absent.
    pub speakers: Option<PathBuf>,
    pub segments_per_vowel: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            speakers: None,
            segments_per_vowel: DEFAULT_SEGMENTS_PER_VOWEL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Apply spectral gating to recordings read from disk.
    pub gate: bool,
    pub gate_params: GateParams,
    pub silence: SilenceParams,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            gate: true,
            gate_params: GateParams::default(),
            silence: SilenceParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapleyConfig {
    pub enabled: bool,
    pub estimator: String,
    pub n_perm: usize,
    pub background: usize,
    /// Test rows explained per subject and run.
    pub rows_per_subject: usize,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            estimator: "sampled".into(),
            n_perm: DEFAULT_PERMUTATIONS,
            background: DEFAULT_BACKGROUND,
            rows_per_subject: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of `{subject}/{vowel}/*.wav`; synthetic speakers when absent.
    pub input: Option<PathBuf>,
    pub synth: SynthSpec,
    pub sample_rate: u32,
    pub lpc_order: usize,
    pub n_bins: usize,
    pub corr_threshold: f64,
    pub ratios: SplitRatios,
    pub k_combinations: usize,
    pub grid: Grid,
    pub n_runs: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub preprocess: PreprocessConfig,
    pub builder: String,
    pub community: String,
    pub shapley: ShapleyConfig,
    pub control_permute_labels: bool,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Write per-segment spectra, graphs and feature tables.
    pub artifacts: bool,
    pub sweep_orders: Vec<usize>,
    pub sweep_thresholds: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            synth: SynthSpec::default(),
            sample_rate: PIPELINE_RATE,
            lpc_order: DEFAULT_ORDER,
            n_bins: DEFAULT_BINS,
            corr_threshold: DEFAULT_THRESHOLD,
            ratios: SplitRatios::default(),
            k_combinations: DEFAULT_COMBINATIONS,
            grid: Grid::default(),
            n_runs: 10,
            seed: 0,
            out: PathBuf::from("out"),
            preprocess: PreprocessConfig::default(),
            builder: "divide-conquer".into(),
            community: "louvain".into(),
            shapley: ShapleyConfig::default(),
            control_permute_labels: false,
            threads: 0,
            artifacts: true,
            sweep_orders: (10..=20).collect(),
            sweep_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(1..=40).contains(&self.lpc_order) {
            return bad(format!("lpc_order {} outside [1, 40]", self.lpc_order));
        }
        if self.n_bins < 2 {
            return bad("n_bins must be at least 2".into());
        }
        if !(self.corr_threshold > 0.0 && self.corr_threshold < 1.0) {
            return bad(format!("corr_threshold {} outside (0, 1)", self.corr_threshold));
        }
        let r = self.ratios;
        if [r.train, r.val, r.test].iter().any(|&v| !(v > 0.0)) || ((r.train + r.val + r.test) - 1.0).abs() > 1e-9 {
            return bad("split ratios must be positive and sum to 1".into());
        }
        if self.k_combinations == 0 || self.n_runs == 0 {
            return bad("k_combinations and n_runs must be positive".into());
        }
        self.grid.validate()?;
        self.preprocess.gate_params.validate()?;
        crate::visgraph::registry().create(&self.builder, &())?;
        crate::community::registry().create(&self.community, &())?;
        if self.shapley.enabled {
            crate::explain::registry().create(&self.shapley.estimator, &Default::default())?;
            if self.shapley.background == 0 || self.shapley.n_perm == 0 {
                return bad("shapley background and n_perm must be positive".into());
            }
        }
        if self.sweep_orders.iter().any(|o| !(1..=40).contains(o)) {
            return bad("sweep orders must lie in [1, 40]".into());
        }
        if self.sweep_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("sweep thresholds must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.sweep_thresholds.len(), 10);
        assert_eq!(cfg.sweep_thresholds[0], 0.5);
        assert_eq!(cfg.sweep_thresholds[9], 0.95);
        assert_eq!(cfg.sweep_orders, (10..=20).collect::<Vec<_>>());
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml("lpc_order = 11\n[grid]\nmax_depth = [3]\n").unwrap();
        assert_eq!(cfg.lpc_order, 11);
        assert_eq!(cfg.grid.max_depth, vec![3]);
        assert_eq!(cfg.grid.n_estimators.len(), 10);
        assert_eq!(cfg.n_runs, 10);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "lpc_order = 0",
            "lpc_order = 41",
            "corr_threshold = 1.0",
            "builder = \"quantum\"",
            "[ratios]\ntrain = 0.5\nval = 0.3\ntest = 0.3",
        ] {
            assert!(PipelineConfig::from_toml(text).unwrap().validate().is_err(), "{text}");
        }
        assert!(PipelineConfig::from_toml("no_such_key = 1").is_err());
    }
}
