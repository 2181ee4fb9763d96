//! Source-filter synthetic vowels: a jittered glottal pulse train shaped by
//! cascaded formant resonators.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, write_wav, AudioBuffer};
use crate::corpus::{Segment, SegmentKey, Vowel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_str, rng_for};

pub const DEFAULT_SEGMENTS_PER_VOWEL: usize = 25;
pub const MIN_DURATION: f64 = 0.2;
pub const DURATION_RANGE: (f64, f64) = (0.4, 1.0);
/// Pole radius of the two-pole glottal lowpass (about -12 dB/octave above ~100 Hz).
const GLOTTAL_POLE: f64 = 0.94;
/// Aspiration noise level relative to the excitation RMS (-40 dB).
const NOISE_LEVEL: f64 = 0.01;
/// Onset and offset ramp length.
const RAMP_SECONDS: f64 = 0.01;

const DEFAULT_SPEAKERS: &str = include_str!("../config/speakers.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VowelFormants {
    pub formants: Vec<f64>,
    pub bandwidths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_formant_jitter")]
    pub formant_jitter: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    pub vowels: BTreeMap<Vowel, VowelFormants>,
}

fn default_jitter() -> f64 {
    0.01
}

fn default_formant_jitter() -> f64 {
    0.02
}

fn default_amplitude() -> f64 {
    0.8
}

#[derive(Deserialize)]
struct SpeakerFile {
    speaker: Vec<SpeakerProfile>,
}

impl SpeakerProfile {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProfile(format!("{}: {msg}", self.id)));
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return bad(format!("f0 {} must be positive", self.f0));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return bad(format!("amplitude {} outside [0, 1]", self.amplitude));
        }
        if self.jitter < 0.0 || self.formant_jitter < 0.0 {
            return bad("jitter must be non-negative".into());
        }
        let nyquist = sample_rate as f64 / 2.0;
        for v in Vowel::ALL {
            let Some(f) = self.vowels.get(&v) else {
                return bad(format!("missing vowel {v}"));
            };
            if f.formants.is_empty() || f.formants.len() != f.bandwidths.len() {
                return bad(format!("vowel {v} needs matching formants and bandwidths"));
            }
            if f.formants.windows(2).any(|w| w[0] >= w[1]) || f.formants[0] <= 0.0 {
                return bad(format!("vowel {v} formants must be positive and increasing"));
            }
            if let Some(&hi) = f.formants.iter().find(|&&x| x >= nyquist) {
                return bad(format!("vowel {v} formant {hi} Hz is not below Nyquist {nyquist} Hz"));
            }
            if f.bandwidths.iter().any(|&b| b <= 0.0) {
                return bad(format!("vowel {v} bandwidths must be positive"));
            }
        }
        Ok(())
    }
}

/// Parse a TOML speaker file (`[[speaker]]` tables).
pub fn parse_profiles(text: &str) -> Result<Vec<SpeakerProfile>> {
    let file: SpeakerFile = toml::from_str(text).map_err(|e| Error::Config(format!("speaker profiles: {e}")))?;
    Ok(file.speaker)
}

/// The seven built-in speakers.
pub fn default_profiles() -> Vec<SpeakerProfile> {
    parse_profiles(DEFAULT_SPEAKERS).expect("built-in speaker profiles parse")
}

fn resonate(x: &mut [f64], freq: f64, bandwidth: f64, rate: f64) {
    let r = (-PI * bandwidth / rate).exp();
    let theta = 2.0 * PI * freq / rate;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let gain = 1.0 - a1 - a2;
    let (mut y1, mut y2) = (0.0, 0.0);
    for s in x.iter_mut() {
        let y = gain * *s + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *s = y;
    }
}

/// Synthesize one sustained vowel.
pub fn synth_vowel(profile: &SpeakerProfile, vowel: Vowel, duration: f64, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    if !(duration >= MIN_DURATION) {
        return Err(Error::Config(format!("duration {duration} s is below {MIN_DURATION} s")));
    }
    profile.validate(sample_rate)?;
    let rate = sample_rate as f64;
    let nyquist = rate / 2.0;
    let n = (duration * rate).round() as usize;
    let mut rng = rng_for(seed, &[]);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let spec = &profile.vowels[&vowel];
    let mut formants: Vec<f64> = spec
        .formants
        .iter()
        .map(|f| f * (1.0 + profile.formant_jitter * normal()))
        .collect();
    formants.sort_by(f64::total_cmp);
    if let Some(&hi) = formants.iter().find(|&&f| f >= nyquist || f <= 0.0) {
        return Err(Error::InvalidProfile(format!(
            "{}: jittered formant {hi} Hz is outside (0, {nyquist}) Hz",
            profile.id
        )));
    }
    let f0 = profile.f0 * (1.0 + profile.jitter * normal());

    let mut excitation = vec![0.0; n];
    let mut t = 0.0;
    while (t as usize) < n {
        excitation[t as usize] = 1.0;
        t += rate / (f0 * (1.0 + profile.jitter * normal())).max(1.0);
    }
    let (mut y1, mut y2) = (0.0, 0.0);
    let p = GLOTTAL_POLE;
    for s in excitation.iter_mut() {
        let y = *s + 2.0 * p * y1 - p * p * y2;
        y2 = y1;
        y1 = y;
        *s = y;
    }
    let rms = (excitation.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    for s in excitation.iter_mut() {
        *s += NOISE_LEVEL * rms * normal();
    }
    for (f, b) in formants.iter().zip(&spec.bandwidths) {
        resonate(&mut excitation, *f, *b, rate);
    }
    apply_ramps(&mut excitation, (RAMP_SECONDS * rate).round() as usize);
    let peak = excitation.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { profile.amplitude / peak } else { 0.0 };
    Ok(AudioBuffer::new(excitation.into_iter().map(|v| v * scale).collect(), sample_rate))
}

/// Raised-cosine fade over the first and last `len` samples, so segments
/// start and stop like a sustained vowel instead of a hard cut.
fn apply_ramps(samples: &mut [f64], len: usize) {
    let n = samples.len();
    let len = len.min(n / 2);
    for k in 0..len {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / len as f64).cos();
        samples[k] *= w;
        samples[n - 1 - k] *= w;
    }
}

/// Seed of a synthetic segment, independent of generation order.
pub fn segment_seed(seed: u64, key: &SegmentKey) -> u64 {
    derive_seed(seed, &[hash_str(&key.subject), key.vowel.index() as u64, key.index as u64])
}

/// `segments_per_vowel` segments per (speaker, vowel), ordered by key.
pub fn synth_corpus(profiles: &[SpeakerProfile], segments_per_vowel: usize, sample_rate: u32, seed: u64) -> Result<Vec<Segment>> {
    if segments_per_vowel < 5 {
        return Err(Error::Config(format!(
            "segments_per_vowel must be at least 5, got {segments_per_vowel}"
        )));
    }
    let mut ids: Vec<&str> = profiles.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidProfile("duplicate speaker ids".into()));
    }
    let mut keys = Vec::new();
    for p in profiles {
        p.validate(sample_rate)?;
        for v in Vowel::ALL {
            for i in 0..segments_per_vowel {
                keys.push((p, SegmentKey::new(p.id.clone(), v, i)));
            }
        }
    }
    keys.sort_by(|a, b| a.1.cmp(&b.1));
    keys.into_iter()
        .map(|(p, key)| {
            let s = segment_seed(seed, &key);
            let duration = rng_for(s, &[1]).gen_range(DURATION_RANGE.0..=DURATION_RANGE.1);
            let audio = synth_vowel(p, key.vowel, duration, sample_rate, s)?;
            Ok(Segment { key, audio })
        })
        .collect()
}

/// Write segments as `{subject}/{vowel}/{index}.wav` under `dir`.
pub fn write_corpus(dir: &Path, segments: &[Segment]) -> Result<()> {
    write_segments(dir, segments.iter().map(|s| (&s.key, &s.audio)))
}

/// Write keyed buffers as a `{subject}/{vowel}/{index}.wav` tree.
pub fn write_segments<'a>(dir: &Path, items: impl IntoIterator<Item = (&'a SegmentKey, &'a AudioBuffer)>) -> Result<()> {
    for (key, audio) in items {
        let path = dir.join(&key.subject).join(key.vowel.as_str()).join(format!("{}.wav", key.index));
        write_wav(&path, audio)?;
    }
    Ok(())
}

/// Read a `{subject}/{vowel}/{index}.wav` tree, ordered by key. Files whose
/// stem is not an integer get ordinals after the numbered ones.
pub fn read_corpus(dir: &Path) -> Result<Vec<(SegmentKey, AudioBuffer)>> {
    let list = |p: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut entries: Vec<_> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        Ok(entries)
    };
    let mut out = Vec::new();
    for subject_dir in list(dir)?.into_iter().filter(|p| p.is_dir()) {
        let subject = subject_dir.file_name().unwrap().to_string_lossy().into_owned();
        for vowel_dir in list(&subject_dir)?.into_iter().filter(|p| p.is_dir()) {
            let Ok(vowel) = vowel_dir.file_name().unwrap().to_string_lossy().parse::<Vowel>() else {
                continue;
            };
            let mut numbered = Vec::new();
            let mut named = Vec::new();
            for file in list(&vowel_dir)? {
                if file.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("wav")) != Some(true) {
                    continue;
                }
                match file.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
                    Some(i) => numbered.push((i, file)),
                    None => named.push(file),
                }
            }
            numbered.sort();
            let next = numbered.last().map_or(0, |(i, _)| i + 1);
            let files = numbered
                .into_iter()
                .chain(named.into_iter().enumerate().map(|(k, f)| (next + k, f)));
            for (index, file) in files {
                out.push((SegmentKey::new(subject.clone(), vowel, index), read_wav(&file)?));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
