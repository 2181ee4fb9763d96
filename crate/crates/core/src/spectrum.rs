//! All-pole (LPC) spectral envelopes.
//!
//! A segment is summarised by an order-`m` predictor `d_1..d_m` and the log
//! power of `H(f) = d_0 / (1 - sum_k d_k exp(i k 2 pi f / fs))` evaluated on
//! `n_bins` frequencies spanning `[0, fs/2)`.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::corpus::SegmentKey;
use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 13;
pub const DEFAULT_BINS: usize = 512;

/// Reflection coefficients are clamped to this magnitude if rounding pushes
/// them onto or past the unit circle.
const REFLECTION_LIMIT: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpcModel {
    pub order: usize,
    /// Predictor coefficients `d_1..d_m`.
    pub coeffs: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Numerator `d_0`, fixed to 1.
    pub gain: f64,
    /// Sampling interval in seconds.
    pub delta: f64,
    /// Set when a reflection coefficient had to be clamped.
    pub clamped: bool,
}

impl LpcModel {
    /// The flat model `H(f) = 1`.
    pub fn flat(sample_rate: u32) -> Self {
        Self {
            order: 0,
            coeffs: Vec::new(),
            reflection: Vec::new(),
            gain: 1.0,
            delta: 1.0 / sample_rate as f64,
            clamped: false,
        }
    }
}

/// Biased autocorrelation `r_0..=r_max_lag` of the whole sequence.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            if lag >= x.len() {
                0.0
            } else {
                x[lag..].iter().zip(x).map(|(a, b)| a * b).sum()
            }
        })
        .collect()
}

/// Levinson-Durbin recursion on `r_0..=r_m`.
///
/// Returns predictor coefficients in the `x_t ~ sum_k d_k x_{t-k}`
/// convention, reflection coefficients, and whether any reflection
/// coefficient was clamped.
pub fn levinson_durbin(r: &[f64]) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let order = r.len().saturating_sub(1);
    if r.is_empty() || !(r[0] > 0.0) {
        return Err(Error::DegenerateSignal("zero-lag autocorrelation is not positive".into()));
    }
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    let mut clamped = false;
    for i in 0..order {
        let acc = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let mut k = acc / err;
        if !k.is_finite() {
            return Err(Error::DegenerateSignal(format!("prediction error vanished at step {}", i + 1)));
        }
        if k.abs() > REFLECTION_LIMIT {
            k = k.signum() * REFLECTION_LIMIT;
            clamped = true;
        }
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        a[i] = k;
        reflection.push(k);
        err *= 1.0 - k * k;
    }
    Ok((a, reflection, clamped))
}

/// Fit an order-`order` predictor to the whole segment by the
/// autocorrelation method.
pub fn lpc_fit(samples: &[f64], order: usize, sample_rate: u32) -> Result<LpcModel> {
    if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput {
            index,
            reason: "non-finite sample".into(),
        });
    }
    if samples.len() <= order {
        return Err(Error::DegenerateSignal(format!(
            "{} samples cannot support order {order}",
            samples.len()
        )));
    }
    let r = autocorrelation(samples, order);
    if r[0] == 0.0 {
        return Err(Error::DegenerateSignal("all-zero segment".into()));
    }
    let (coeffs, reflection, clamped) = levinson_durbin(&r)?;
    Ok(LpcModel {
        order,
        coeffs,
        reflection,
        gain: 1.0,
        delta: 1.0 / sample_rate as f64,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub freqs: Vec<f64>,
    pub log_power: Vec<f64>,
    pub key: Option<SegmentKey>,
}

impl SpectralProfile {
    pub fn len(&self) -> usize {
        self.log_power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_power.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq,log_power\n");
        for (f, p) in self.freqs.iter().zip(&self.log_power) {
            let _ = writeln!(out, "{f},{p}");
        }
        out
    }
}

/// Evaluate `log |H(f)|^2` at `f_j = j * (fs/2) / n_bins`, `j = 0..n_bins`.
pub fn frequency_response(model: &LpcModel, n_bins: usize, sample_rate: u32) -> Result<SpectralProfile> {
    if n_bins < 2 {
        return Err(Error::Config("n_bins must be at least 2".into()));
    }
    let fs = sample_rate as f64;
    let delta = 1.0 / fs;
    let mut freqs = Vec::with_capacity(n_bins);
    let mut log_power = Vec::with_capacity(n_bins);
    for j in 0..n_bins {
        let f = j as f64 * (fs / 2.0) / n_bins as f64;
        let w = 2.0 * std::f64::consts::PI * f * delta;
        let mut denom = Complex::new(1.0, 0.0);
        for (k, d) in model.coeffs.iter().enumerate() {
            denom -= Complex::from_polar(*d, w * (k + 1) as f64);
        }
        let mag2 = denom.norm_sqr();
        if mag2.sqrt() < 1e-300 {
            return Err(Error::PoleOnUnitCircle { bin: j });
        }
        freqs.push(f);
        log_power.push((model.gain * model.gain / mag2).ln());
    }
    Ok(SpectralProfile {
        freqs,
        log_power,
        key: None,
    })
}

/// Fit and evaluate in one step.
pub fn spectral_profile(
    samples: &[f64],
    order: usize,
    n_bins: usize,
    sample_rate: u32,
    key: Option<SegmentKey>,
) -> Result<SpectralProfile> {
    let model = lpc_fit(samples, order, sample_rate)?;
    let mut profile = frequency_response(&model, n_bins, sample_rate)?;
    profile.key = key;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn order_zero_is_flat() {
        let m = lpc_fit(&white(100, 1), 0, 11025).unwrap();
        assert!(m.coeffs.is_empty());
        let p = frequency_response(&m, 512, 11025).unwrap();
        assert!(p.log_power.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_grid_is_half_open() {
        let p = frequency_response(&LpcModel::flat(11025), 512, 11025).unwrap();
        assert_eq!(p.freqs.len(), 512);
        assert_eq!(p.freqs[0], 0.0);
        assert!(p.freqs[511] == 511.0 * 11025.0 / 1024.0 && p.freqs[511] < 5512.5);
        assert!(p.freqs.windows(2).all(|w| w[0] < w[1]));
        assert!(frequency_response(&LpcModel::flat(11025), 1, 11025).is_err());
    }

    #[test]
    fn white_noise_reflections_are_small() {
        let m = lpc_fit(&white(100_000, 2), 13, 11025).unwrap();
        assert!(m.reflection.iter().all(|k| k.abs() < 0.05), "{:?}", m.reflection);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(lpc_fit(&[0.0; 50], 4, 11025), Err(Error::DegenerateSignal(_))));
        assert!(matches!(lpc_fit(&[1.0; 4], 4, 11025), Err(Error::DegenerateSignal(_))));
        assert!(matches!(
            lpc_fit(&[1.0, f64::NAN, 0.0, 1.0, 2.0], 2, 11025),
            Err(Error::InvalidInput { index: 1, .. })
        ));
    }

    #[test]
    fn scaling_leaves_coefficients_unchanged() {
        let x = white(4000, 9);
        let a = lpc_fit(&x, 13, 11025).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.5).collect();
        let b = lpc_fit(&scaled, 13, 11025).unwrap();
        for (p, q) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn pole_on_unit_circle_is_reported() {
        // 1 - d_1 e^{iw} vanishes at w = 0 for d_1 = 1.
        let m = LpcModel {
            order: 1,
            coeffs: vec![1.0],
            ..LpcModel::flat(11025)
        };
        assert!(matches!(
            frequency_response(&m, 512, 11025),
            Err(Error::PoleOnUnitCircle { bin: 0 })
        ));
    }

    #[test]
    fn clamping_flags_the_model() {
        // Perfectly predictable alternating sequence drives |k| to 1.
        let x: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = vec![1.0, -1.0, 1.0];
        let (_, refl, clamped) = levinson_durbin(&r).unwrap();
        assert!(clamped);
        assert!(refl.iter().all(|k| k.abs() <= REFLECTION_LIMIT));
        assert!(lpc_fit(&x, 2, 11025).is_ok());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let p = frequency_response(&LpcModel::flat(11025), 4, 11025).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("freq,log_power\n0,0\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
