//! Log-mel spectrogram features for real-audio ingestion.
//!
//! 16 kHz samples, 50 ms Hann window shifted by 12.5 ms, magnitude
//! spectrum through 80 triangular mel filters, log with a floor.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::FeatureSequence;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: usize,
    pub n_mels: usize,
    /// Window length in samples (50 ms at 16 kHz).
    pub window: usize,
    /// Hop between frames in samples (12.5 ms at 16 kHz).
    pub shift: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            n_mels: 80,
            window: 800,
            shift: 200,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-10,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Filter center frequencies in Hz (`n_mels + 2` boundary points; filter
/// `m` peaks at point `m + 1`).
pub fn mel_points(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank over the FFT bins: `n_mels` rows of
/// `window/2 + 1` weights.
fn filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.window / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.window as f64;
    let points = mel_points(cfg);
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Frame count: `floor((len - window) / shift) + 1`.
pub fn frame_count(samples: usize, cfg: &MelConfig) -> Option<usize> {
    if samples < cfg.window {
        None
    } else {
        Some((samples - cfg.window) / cfg.shift + 1)
    }
}

pub fn mel_features(waveform: &[f32], cfg: &MelConfig) -> Result<FeatureSequence> {
    let n_frames = frame_count(waveform.len(), cfg).ok_or_else(|| {
        Error::Data(format!(
            "waveform of {} samples shorter than one {}-sample window",
            waveform.len(),
            cfg.window
        ))
    })?;
    let filters = filterbank(cfg);
    let hann: Vec<f64> = (0..cfg.window)
        .map(|i| {
            let x = std::f64::consts::PI * 2.0 * i as f64 / cfg.window as f64;
            0.5 - 0.5 * x.cos()
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.window);
    let n_bins = cfg.window / 2 + 1;

    let mut data = Vec::with_capacity(n_frames * cfg.n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window];
    for frame in 0..n_frames {
        let start = frame * cfg.shift;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(waveform[start + i] as f64 * hann[i], 0.0);
        }
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm()).collect();
        for filter in &filters {
            let energy: f64 = filter.iter().zip(&mags).map(|(&w, &m)| w * m).sum();
            data.push(energy.max(cfg.log_floor).ln() as f32);
        }
    }
    FeatureSequence::new(n_frames, cfg.n_mels, data)
}
