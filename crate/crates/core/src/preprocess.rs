//! Stationary spectral-gating noise reduction and silence-based splitting.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateParams {
    pub frame_len: usize,
    pub hop: usize,
    pub noise_k: f64,
    pub strength: f64,
    pub smooth_freq_bins: usize,
    pub smooth_time_frames: usize,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            frame_len: 1024,
            hop: 256,
            noise_k: 1.5,
            strength: 1.0,
            smooth_freq_bins: 3,
            smooth_time_frames: 3,
        }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        if !self.frame_len.is_power_of_two() || self.frame_len < 4 {
            return Err(Error::Config("frame_len must be a power of two >= 4".into()));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config("hop must be in 1..=frame_len".into()));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Config("strength must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Attenuate time-frequency bins that do not rise above a per-frequency
/// noise floor estimated from the whole buffer.
///
/// The floor for bin `k` is `mean + noise_k * std` of its STFT magnitude over
/// all frames. The soft mask `clamp((mag - floor) / floor, 0, 1)` is box
/// smoothed and applied as `1 - strength * (1 - mask)`; synthesis uses
/// weighted overlap-add, so `strength = 0` reconstructs the input.
pub fn spectral_gate(buf: &AudioBuffer, p: &GateParams) -> Result<AudioBuffer> {
    p.validate()?;
    let n = buf.len();
    let frame = p.frame_len;
    if n < frame {
        return Err(Error::TooShort {
            needed: frame,
            got: n,
        });
    }
    let hop = p.hop;
    let lead = frame;
    let mut frames_count = (n + lead).div_ceil(hop) + 1;
    while (frames_count - 1) * hop < n + lead {
        frames_count += 1;
    }
    let padded_len = (frames_count - 1) * hop + frame;
    let mut padded = vec![0.0; padded_len];
    padded[lead..lead + n].copy_from_slice(&buf.samples);

    let window = hann(frame);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(frame);
    let inv = planner.plan_fft_inverse(frame);
    let bins = frame / 2 + 1;

    let mut spec: Vec<Vec<Complex<f64>>> = (0..frames_count)
        .map(|f| {
            let start = f * hop;
            let mut data: Vec<Complex<f64>> = (0..frame)
                .map(|i| Complex::new(padded[start + i] * window[i], 0.0))
                .collect();
            fwd.process(&mut data);
            data
        })
        .collect();

    let mut gain = vec![vec![1.0; bins]; frames_count];
    if p.strength > 0.0 {
        let mut mask = vec![vec![0.0; bins]; frames_count];
        for k in 0..bins {
            let mags: Vec<f64> = spec.iter().map(|s| s[k].norm()).collect();
            let mean = mags.iter().sum::<f64>() / frames_count as f64;
            let var = mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / frames_count as f64;
            let floor = mean + p.noise_k * var.sqrt();
            for (f, &m) in mags.iter().enumerate() {
                mask[f][k] = if floor > 0.0 {
                    ((m - floor) / floor).clamp(0.0, 1.0)
                } else if m > 0.0 {
                    1.0
                } else {
                    0.0
                };
            }
        }
        let mask = box_smooth(&mask, p.smooth_time_frames, p.smooth_freq_bins);
        for f in 0..frames_count {
            for k in 0..bins {
                gain[f][k] = 1.0 - p.strength * (1.0 - mask[f][k]);
            }
        }
    }

    let mut out = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    for (f, data) in spec.iter_mut().enumerate() {
        for k in 0..frame {
            let mirrored = if k < bins { k } else { frame - k };
            data[k] *= gain[f][mirrored];
        }
        inv.process(data);
        let start = f * hop;
        for i in 0..frame {
            out[start + i] += data[i].re / frame as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let samples = (lead..lead + n)
        .map(|i| if norm[i] > 1e-12 { out[i] / norm[i] } else { 0.0 })
        .collect();
    Ok(AudioBuffer::new(samples, buf.sample_rate))
}

fn box_smooth(grid: &[Vec<f64>], time_span: usize, freq_span: usize) -> Vec<Vec<f64>> {
    let rows = grid.len();
    let cols = grid.first().map_or(0, Vec::len);
    let ht = time_span.max(1) / 2;
    let hf = freq_span.max(1) / 2;
    let ht_hi = time_span.max(1) - 1 - ht;
    let hf_hi = freq_span.max(1) - 1 - hf;
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let r0 = r.saturating_sub(ht);
                    let r1 = (r + ht_hi).min(rows - 1);
                    let c0 = c.saturating_sub(hf);
                    let c1 = (c + hf_hi).min(cols - 1);
                    let mut sum = 0.0;
                    for row in &grid[r0..=r1] {
                        sum += row[c0..=c1].iter().sum::<f64>();
                    }
                    sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SilenceParams {
    pub min_silence_ms: f64,
    pub silence_thresh_db: f64,
    pub keep_ms: f64,
    pub min_segment_ms: f64,
}

impl Default for SilenceParams {
    fn default() -> Self {
        Self {
            min_silence_ms: 300.0,
            silence_thresh_db: -40.0,
            keep_ms: 50.0,
            min_segment_ms: 150.0,
        }
    }
}

/// Sample ranges of one detected vocalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpan {
    /// Non-silent core, `[start, end)`.
    pub core: (usize, usize),
    /// Core widened by the keep margin and clamped to the buffer.
    pub padded: (usize, usize),
}

const WINDOW_MS: f64 = 10.0;

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Locate non-silent chunks. Silence is a run of 10 ms windows, each below
/// `silence_thresh_db` RMS (dBFS), lasting at least `min_silence_ms`.
pub fn silence_spans(buf: &AudioBuffer, p: &SilenceParams) -> Result<Vec<ChunkSpan>> {
    if !(p.min_silence_ms > 0.0) {
        return Err(Error::Config("min_silence_ms must be positive".into()));
    }
    let n = buf.len();
    let win = ms_to_samples(WINDOW_MS, buf.sample_rate).max(1);
    let quiet: Vec<bool> = buf
        .samples
        .chunks(win)
        .map(|w| {
            let rms = (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt();
            let db = if rms > 0.0 { 20.0 * rms.log10() } else { f64::NEG_INFINITY };
            db < p.silence_thresh_db
        })
        .collect();
    let min_silent_windows = (p.min_silence_ms / WINDOW_MS).ceil().max(1.0) as usize;

    // Mark windows belonging to long-enough quiet runs.
    let mut silent = vec![false; quiet.len()];
    let mut i = 0;
    while i < quiet.len() {
        if quiet[i] {
            let start = i;
            while i < quiet.len() && quiet[i] {
                i += 1;
            }
            if i - start >= min_silent_windows {
                silent[start..i].iter_mut().for_each(|s| *s = true);
            }
        } else {
            i += 1;
        }
    }

    let keep = ms_to_samples(p.keep_ms, buf.sample_rate);
    let min_len = ms_to_samples(p.min_segment_ms, buf.sample_rate);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < silent.len() {
        if silent[i] {
            i += 1;
            continue;
        }
        let start_w = i;
        while i < silent.len() && !silent[i] {
            i += 1;
        }
        let core = (start_w * win, (i * win).min(n));
        if core.1 - core.0 >= min_len {
            spans.push(ChunkSpan {
                core,
                padded: (core.0.saturating_sub(keep), (core.1 + keep).min(n)),
            });
        }
    }
    Ok(spans)
}

pub fn split_on_silence(buf: &AudioBuffer, p: &SilenceParams) -> Result<Vec<AudioBuffer>> {
    Ok(silence_spans(buf, p)?
        .into_iter()
        .map(|s| buf.slice(s.padded.0, s.padded.1))
        .collect())
}
