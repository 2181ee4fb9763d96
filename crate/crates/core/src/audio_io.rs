//! WAV decoding, mono mixdown and rational-ratio resampling.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// Pipeline working rate in Hz.
pub const PIPELINE_RATE: u32 = 11025;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn slice(&self, start: usize, end: usize) -> AudioBuffer {
        AudioBuffer::new(self.samples[start..end].to_vec(), self.sample_rate)
    }
}

fn saturate(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Decode a RIFF/WAVE byte stream into a mono buffer.
///
/// Integer PCM is scaled by the magnitude of the most negative code, so
/// `i16::MIN` maps to exactly -1.0. Channels are averaged per frame.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    if spec.sample_rate == 0 {
        return Err(Error::Format("zero sample rate".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(map_hound)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };
    let channels = spec.channels as usize;
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let v = frame.iter().sum::<f64>() / channels as f64;
            if v.is_finite() {
                saturate(v)
            } else {
                0.0
            }
        })
        .collect();
    Ok(AudioBuffer::new(samples, spec.sample_rate))
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding("codec not supported".into()),
        hound::Error::FormatError(msg) => Error::Format(msg.to_string()),
        hound::Error::TooWide => Error::UnsupportedEncoding("sample width too large".into()),
        hound::Error::UnfinishedSample => Error::Format("truncated sample data".into()),
        hound::Error::InvalidSampleFormat => Error::UnsupportedEncoding("invalid sample format".into()),
        hound::Error::IoError(e) => Error::Format(e.to_string()),
    }
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Encode as 16-bit mono PCM.
pub fn encode_wav(buf: &AudioBuffer) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut out, spec).map_err(map_hound)?;
        for &s in &buf.samples {
            let v = (saturate(s) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(map_hound)?;
        }
        writer.finalize().map_err(map_hound)?;
    }
    Ok(out.into_inner())
}

pub fn write_wav(path: &Path, buf: &AudioBuffer) -> Result<()> {
    crate::io_util::write_bytes(path, &encode_wav(buf)?)
}

const KAISER_BETA: f64 = 8.6;
/// Sinc zero crossings on each side of the kernel centre, counted at the
/// lower of the two rates.
const HALF_TAPS: usize = 32;
const ROLLOFF: f64 = 0.95;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Polyphase windowed-sinc kernel for an `up`/`down` rational ratio.
struct PolyphaseKernel {
    up: u64,
    down: u64,
    /// First input offset (relative to the integer input position) of each phase.
    first: i64,
    taps: Vec<Vec<f64>>,
}

impl PolyphaseKernel {
    fn new(up: u64, down: u64) -> Self {
        let ratio = up as f64 / down as f64;
        let stretch = (1.0 / ratio).max(1.0);
        let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF; // cycles per input sample
        let half_width = HALF_TAPS as f64 * stretch;
        let reach = half_width.ceil() as i64;
        let first = -reach + 1;
        let i0_beta = bessel_i0(KAISER_BETA);
        let taps = (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                let mut row: Vec<f64> = (first..=reach)
                    .map(|j| {
                        let tau = frac - j as f64;
                        let x = tau / half_width;
                        if x.abs() >= 1.0 {
                            return 0.0;
                        }
                        let window = bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / i0_beta;
                        let arg = 2.0 * cutoff * tau;
                        let sinc = if arg == 0.0 {
                            1.0
                        } else {
                            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                        };
                        2.0 * cutoff * sinc * window
                    })
                    .collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|t| *t /= sum);
                row
            })
            .collect();
        Self {
            up,
            down,
            first,
            taps,
        }
    }

    fn apply(&self, input: &[f64], out_len: usize) -> Vec<f64> {
        let n = input.len() as i64;
        (0..out_len as u64)
            .map(|k| {
                let pos = k as u128 * self.down as u128;
                let base = (pos / self.up as u128) as i64;
                let phase = (pos % self.up as u128) as usize;
                let row = &self.taps[phase];
                let start = base + self.first;
                let mut acc = 0.0;
                for (j, &h) in row.iter().enumerate() {
                    let idx = start + j as i64;
                    if idx >= 0 && idx < n {
                        acc += h * input[idx as usize];
                    }
                }
                saturate(acc)
            })
            .collect()
    }
}

/// Resample to `target_rate` with a Kaiser-windowed sinc polyphase filter.
///
/// Equal rates return an identical copy. Output length is
/// `round(n * target / source)`.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if buf.sample_rate == target_rate {
        return Ok(buf.clone());
    }
    let g = gcd(buf.sample_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = buf.sample_rate as u64 / g;
    let n = buf.samples.len() as u128;
    let out_len = ((2 * n * up as u128 + down as u128) / (2 * down as u128)) as usize;
    let kernel = PolyphaseKernel::new(up, down);
    Ok(AudioBuffer::new(
        kernel.apply(&buf.samples, out_len),
        target_rate,
    ))
}
