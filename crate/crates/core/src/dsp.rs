//! Spectral estimation and band-power reduction.
//!
//! Convention: periodic Hann window, one-sided power spectrum, and power
//! normalised by `1/n²` so the bins of one channel sum exactly to the mean
//! square of the windowed signal.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datatree::DataTree;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("window length {0} must be a power of two and at least 32")]
    BadWindowLength(usize),
    #[error("band {name} [{lo_hz}, {hi_hz}) is invalid or exceeds Nyquist {nyquist_hz} Hz")]
    BandOutOfRange {
        name: String,
        lo_hz: f64,
        hi_hz: f64,
        nyquist_hz: f64,
    },
    #[error("band list is empty")]
    NoBands,
    #[error("window has no channels")]
    NoChannels,
    #[error("channel {channel} has {actual} samples, expected {expected}")]
    RaggedWindow {
        channel: usize,
        expected: usize,
        actual: usize,
    },
    #[error("spectrum channel {channel} has {actual} bins, expected {expected}")]
    BadBinCount {
        channel: usize,
        expected: usize,
        actual: usize,
    },
}

/// Named frequency range `[lo_hz, hi_hz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, lo_hz: f64, hi_hz: f64) -> Self {
        BandSpec {
            name: name.into(),
            lo_hz,
            hi_hz,
        }
    }

    pub fn center_hz(&self) -> f64 {
        0.5 * (self.lo_hz + self.hi_hz)
    }

    fn check(&self, nyquist_hz: f64) -> Result<(), DspError> {
        let ok = self.lo_hz >= 0.0
            && self.lo_hz < self.hi_hz
            && self.hi_hz <= nyquist_hz + NYQUIST_EPS
            && self.lo_hz.is_finite()
            && self.hi_hz.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DspError::BandOutOfRange {
                name: self.name.clone(),
                lo_hz: self.lo_hz,
                hi_hz: self.hi_hz,
                nyquist_hz,
            })
        }
    }
}

const NYQUIST_EPS: f64 = 1e-9;

/// delta, theta, alpha, beta, gamma.
pub fn default_bands() -> Vec<BandSpec> {
    vec![
        BandSpec::new("delta", 0.5, 4.0),
        BandSpec::new("theta", 4.0, 8.0),
        BandSpec::new("alpha", 8.0, 12.0),
        BandSpec::new("beta", 12.0, 30.0),
        BandSpec::new("gamma", 30.0, 50.0),
    ]
}

/// Sensorimotor Mu rhythm, 8–13 Hz.
pub fn mu_band() -> BandSpec {
    BandSpec::new("mu", 8.0, 13.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub fs_hz: f64,
    pub n_fft: usize,
    /// One row per channel, `n_fft / 2 + 1` non-negative bins each.
    pub bins: Vec<Vec<f64>>,
}

impl Spectrum {
    /// Wraps bins received in an FFT frame. `n_fft` is inferred from the bin count.
    pub fn from_bins(fs_hz: f64, bins: Vec<Vec<f64>>) -> Result<Self, DspError> {
        let first = bins.first().ok_or(DspError::NoChannels)?;
        let n_bins = first.len();
        if n_bins < 2 {
            return Err(DspError::BadBinCount {
                channel: 0,
                expected: 2,
                actual: n_bins,
            });
        }
        for (channel, row) in bins.iter().enumerate() {
            if row.len() != n_bins {
                return Err(DspError::BadBinCount {
                    channel,
                    expected: n_bins,
                    actual: row.len(),
                });
            }
        }
        Ok(Spectrum {
            fs_hz,
            n_fft: 2 * (n_bins - 1),
            bins,
        })
    }

    pub fn bin_hz(&self) -> f64 {
        self.fs_hz / self.n_fft as f64
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.fs_hz / 2.0
    }

    pub fn channels(&self) -> usize {
        self.bins.len()
    }

    /// Sum of all bins per channel.
    pub fn total_power(&self) -> Vec<f64> {
        self.bins.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Per-channel power spectrum of a `channels × n` window.
pub fn fft_spectrum(window: &[Vec<f64>], fs_hz: f64) -> Result<Spectrum, DspError> {
    let n = window.first().ok_or(DspError::NoChannels)?.len();
    if n < 32 || !n.is_power_of_two() {
        return Err(DspError::BadWindowLength(n));
    }
    let taper = hann(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let norm = 1.0 / (n as f64 * n as f64);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut bins = Vec::with_capacity(window.len());
    for (channel, samples) in window.iter().enumerate() {
        if samples.len() != n {
            return Err(DspError::RaggedWindow {
                channel,
                expected: n,
                actual: samples.len(),
            });
        }
        for ((b, &x), &w) in buf.iter_mut().zip(samples).zip(&taper) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        bins.push(one_sided_power(&buf, norm));
    }
    Ok(Spectrum { fs_hz, n_fft: n, bins })
}

/// Folds a two-sided DFT into `n/2 + 1` one-sided power bins.
pub(crate) fn one_sided_power(dft: &[Complex<f64>], norm: f64) -> Vec<f64> {
    let n = dft.len();
    let half = n / 2;
    (0..=half)
        .map(|k| {
            let p = dft[k].norm_sqr() * norm;
            if k == 0 || k == half {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Bin indices whose centre frequency lies in `[lo, hi)`. A band whose upper
/// edge reaches Nyquist also takes the Nyquist bin, so a cover of
/// `[0, Nyquist]` partitions every bin.
fn bin_range(spec: &Spectrum, band: &BandSpec) -> std::ops::Range<usize> {
    let df = spec.bin_hz();
    let last = spec.n_fft / 2;
    let lo = (band.lo_hz / df - NYQUIST_EPS).ceil().max(0.0) as usize;
    let hi = if band.hi_hz >= spec.nyquist_hz() - NYQUIST_EPS {
        last + 1
    } else {
        ((band.hi_hz / df - NYQUIST_EPS).ceil() as usize).min(last + 1)
    };
    lo.min(hi)..hi
}

/// Power per channel in `band`; zero when no bin centre falls inside.
pub fn band_power(spec: &Spectrum, band: &BandSpec) -> Result<Vec<f64>, DspError> {
    band.check(spec.nyquist_hz())?;
    let range = bin_range(spec, band);
    Ok(spec
        .bins
        .iter()
        .map(|row| row[range.clone()].iter().sum())
        .collect())
}

/// Channels × bands tree: branch `{c}` holds channel `c`'s powers in band order.
pub fn band_matrix(spec: &Spectrum, bands: &[BandSpec]) -> Result<DataTree, DspError> {
    if bands.is_empty() {
        return Err(DspError::NoBands);
    }
    let per_band: Vec<Vec<f64>> = bands
        .iter()
        .map(|b| band_power(spec, b))
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<f64>> = (0..spec.channels())
        .map(|c| per_band.iter().map(|p| p[c]).collect())
        .collect();
    DataTree::from_matrix(&rows).map_err(|_| DspError::NoChannels)
}
