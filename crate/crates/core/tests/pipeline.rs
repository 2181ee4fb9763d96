use std::process::Command;

use vowelgraph::audio_io::PIPELINE_RATE;
use vowelgraph::model::Forest;
use vowelgraph::pipeline::{run_experiment, PipelineConfig};
use vowelgraph::synth::{default_profiles, synth_corpus, write_corpus};

fn small_config(out: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth.segments_per_vowel = 6;
    cfg.n_runs = 2;
    cfg.k_combinations = 200;
    cfg.shapley.n_perm = 16;
    cfg.shapley.background = 20;
    cfg.shapley.rows_per_subject = 2;
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn small_synthetic_experiment_identifies_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.segments, 7 * 5 * 6);
    assert_eq!(report.runs.len(), 2);
    assert!(report.runs.iter().all(|r| r.ok));
    let f1 = report.summary.f1.as_ref().unwrap().mean;
    assert!(f1 >= 0.9, "macro F1 {f1}");
    let importance = report.importance.as_ref().unwrap();
    assert_eq!(importance.feature_names.len(), 20);

    for file in ["reports/experiment.json", "reports/selection.json", "tables/runs.csv", "tables/metrics.csv"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let forest = Forest::load(&dir.path().join("models/run_00.json")).unwrap();
    assert_eq!(forest.classes.len(), 7);
    assert_eq!(forest.feature_count, 20);
}

#[test]
fn wav_directory_input() {
    let wavs = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(&default_profiles()[..3], 6, PIPELINE_RATE, 11).unwrap();
    write_corpus(wavs.path(), &corpus).unwrap();

    let out = tempfile::tempdir().unwrap();
    let mut cfg = small_config(out.path());
    cfg.input = Some(wavs.path().to_path_buf());
    cfg.preprocess.gate = false;
    cfg.n_runs = 1;
    cfg.shapley.enabled = false;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.segments, 3 * 5 * 6);
    assert!(report.runs[0].ok, "{:?}", report.runs[0].error);
    let forest = Forest::load(&out.path().join("models/run_00.json")).unwrap();
    assert_eq!(forest.classes, vec!["S01", "S02", "S03"]);
}

#[test]
fn cli_synth_writes_wav_tree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.toml");
    std::fs::write(&cfg_path, "[synth]\nsegments_per_vowel = 5\n").unwrap();
    let wavs = dir.path().join("wavs");
    let status = Command::new(env!("CARGO_BIN_EXE_vowelgraph"))
        .args(["--config", cfg_path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .args(["synth", "--dir", wavs.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let count = walk_count(&wavs);
    assert_eq!(count, 7 * 5 * 5);
    assert!(wavs.join("S07/u/4.wav").exists());
}

#[test]
fn cli_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.toml");
    std::fs::write(&cfg_path, "lpc_ordr = 12\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_vowelgraph"))
        .args(["--config", cfg_path.to_str().unwrap(), "run"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("lpc_ordr"));
}

fn walk_count(dir: &std::path::Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| if p.is_dir() { walk_count(&p) } else { 1 })
        .sum()
}
