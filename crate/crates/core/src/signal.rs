//! Segmentation of multichannel recordings and FFT magnitude features.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::FftPlan;

/// Default segment length; three channels give 7,500 spectral bins.
pub const DEFAULT_WINDOW_LEN: usize = 5000;

/// A raw multichannel vibration recording, samples laid out
/// `[n_samples x n_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub source_id: String,
    pub channels: Array2<f64>,
    pub sample_rate_hz: f64,
    pub label: usize,
    pub meta: BTreeMap<String, String>,
}

impl RawRecording {
    pub fn new(
        source_id: impl Into<String>,
        channels: Array2<f64>,
        sample_rate_hz: f64,
        label: usize,
    ) -> Result<Self> {
        let rec = Self {
            source_id: source_id.into(),
            channels,
            sample_rate_hz,
            label,
            meta: BTreeMap::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_samples(&self) -> usize {
        self.channels.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples() == 0 || self.n_channels() == 0 {
            return Err(Error::InvalidArgument(format!(
                "recording `{}` is empty",
                self.source_id
            )));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "recording `{}` has sample rate {}",
                self.source_id, self.sample_rate_hz
            )));
        }
        if let Some(i) = self.channels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(())
    }
}

/// One fixed-length slice of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentWindow {
    pub samples: Array2<f64>,
    pub label: usize,
    pub source_id: String,
    pub offset: usize,
}

impl SegmentWindow {
    pub fn window_len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFeatureVector {
    pub values: Vec<f64>,
    pub label: usize,
}

/// Number of windows produced by [`segment`].
pub fn window_count(n_samples: usize, window_len: usize, hop: usize) -> usize {
    if window_len == 0 || hop == 0 || window_len > n_samples {
        0
    } else {
        (n_samples - window_len) / hop + 1
    }
}

/// Slice `rec` into windows of `window_len` samples starting every `hop`
/// samples. A trailing remainder shorter than a window is dropped.
pub fn segment(rec: &RawRecording, window_len: usize, hop: usize) -> Result<Vec<SegmentWindow>> {
    if window_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument(format!(
            "window_len ({window_len}) and hop ({hop}) must be positive"
        )));
    }
    if rec.n_samples() < window_len {
        return Err(Error::RecordingTooShort {
            source_id: rec.source_id.clone(),
            n_samples: rec.n_samples(),
            window_len,
        });
    }
    let n = window_count(rec.n_samples(), window_len, hop);
    Ok((0..n)
        .map(|i| {
            let offset = i * hop;
            SegmentWindow {
                samples: rec
                    .channels
                    .slice(s![offset..offset + window_len, ..])
                    .to_owned(),
                label: rec.label,
                source_id: rec.source_id.clone(),
                offset,
            }
        })
        .collect())
}

/// Computes FFT magnitude spectra, reusing one plan per window length.
#[derive(Debug, Clone)]
pub struct SpectralExtractor {
    plan: FftPlan,
}

impl SpectralExtractor {
    pub fn new(window_len: usize) -> Result<Self> {
        if window_len < 2 || window_len % 2 != 0 {
            return Err(Error::InvalidWindowLength(window_len));
        }
        Ok(Self {
            plan: FftPlan::new(window_len),
        })
    }

    pub fn window_len(&self) -> usize {
        self.plan.len()
    }

    /// Full complex spectrum `X_0 .. X_{N-1}`.
    pub fn full_spectrum(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        if x.len() != self.plan.len() {
            return Err(Error::InvalidWindowLength(x.len()));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(self.plan.forward_real(x))
    }

    /// `|X_k|` for `k = 1 ..= N/2`.
    pub fn magnitude(&self, x: &[f64]) -> Result<Vec<f64>> {
        let spec = self.full_spectrum(x)?;
        let half = x.len() / 2;
        Ok(spec[1..=half].iter().map(|c| c.norm()).collect())
    }

    pub fn extract(&self, w: &SegmentWindow) -> Result<SpectralFeatureVector> {
        if w.window_len() != self.window_len() {
            return Err(Error::InvalidWindowLength(w.window_len()));
        }
        let half = w.window_len() / 2;
        let mut values = Vec::with_capacity(half * w.n_channels());
        let mut buf = vec![0.0; w.window_len()];
        for channel in w.samples.columns() {
            for (dst, &src) in buf.iter_mut().zip(channel.iter()) {
                *dst = src;
            }
            values.extend(self.magnitude(&buf)?);
        }
        Ok(SpectralFeatureVector {
            values,
            label: w.label,
        })
    }
}

/// Magnitude spectrum of one real channel, DC dropped, bins `1 ..= N/2`.
pub fn fft_magnitude(x: &[f64]) -> Result<Vec<f64>> {
    SpectralExtractor::new(x.len())?.magnitude(x)
}

/// Full complex spectrum of one real channel.
pub fn full_spectrum(x: &[f64]) -> Result<Vec<Complex64>> {
    SpectralExtractor::new(x.len())?.full_spectrum(x)
}

/// Concatenated per-channel magnitude spectra of a window.
pub fn extract_spectral_features(w: &SegmentWindow) -> Result<SpectralFeatureVector> {
    SpectralExtractor::new(w.window_len())?.extract(w)
}
