//! Short-time Fourier analysis and synthesis.
//!
//! Frames are columns: a spectrogram of `F` frequency bins and `N` frames is
//! stored as an `F x N` matrix. The signal is zero-padded at both ends by
//! `window_length - hop` samples so that every original sample is covered by
//! the same number of frames, and `istft` divides the overlap-added frames by
//! the summed squared window.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi j / L)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / len as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_length: usize,
    pub hop: usize,
    pub window: Window,
    pub sample_rate: u32,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_length: 512,
            hop: 256,
            window: Window::Hann,
            sample_rate: 16_000,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.hop == 0 {
            return Err(Error::InvalidInput(
                "window_length and hop must be positive".into(),
            ));
        }
        if !self.window_length.is_multiple_of(self.hop) {
            return Err(Error::InvalidInput(format!(
                "hop {} does not divide window_length {}",
                self.hop, self.window_length
            )));
        }
        if !self.window_length.is_multiple_of(2) {
            return Err(Error::InvalidInput("window_length must be even".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of frequency bins, `window_length / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    pub fn padding(&self) -> usize {
        self.window_length - self.hop
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.padding();
        (padded - self.window_length).div_ceil(self.hop) + 1
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.window_length as f64
    }

    /// Largest deviation from a constant of the overlap-added analysis window.
    ///
    /// Zero (up to rounding) means the window is constant-overlap-add at this
    /// hop, e.g. periodic Hann at 50% overlap.
    pub fn cola_deviation(&self) -> f64 {
        let w = self.window.coefficients(self.window_length);
        let sums: Vec<f64> = (0..self.hop)
            .map(|r| w.iter().skip(r).step_by(self.hop).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        sums.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub coeffs: DMatrix<Complex64>,
    pub params: StftParams,
    pub original_length: usize,
}

impl ComplexSpectrogram {
    pub fn shape(&self) -> (usize, usize) {
        self.coeffs.shape()
    }

    /// Entrywise product with a real mask of the same shape.
    pub fn masked(&self, mask: &DMatrix<f64>) -> Result<ComplexSpectrogram> {
        check_shape(self.shape(), mask.shape())?;
        let coeffs = self.coeffs.zip_map(mask, |c, m| c * m);
        Ok(ComplexSpectrogram {
            coeffs,
            params: self.params,
            original_length: self.original_length,
        })
    }
}

/// Nonnegative `F x N` power spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpectrogram {
    values: DMatrix<f64>,
}

impl MixtureSpectrogram {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "spectrogram entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.norm()
    }
}

pub fn stft(signal: &[f64], params: &StftParams) -> Result<ComplexSpectrogram> {
    params.validate()?;
    if signal.is_empty() {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("signal contains non-finite samples".into()));
    }

    let len = params.window_length;
    let pad = params.padding();
    let frames = params.num_frames(signal.len());
    let bins = params.num_bins();

    // Zero-pad both ends, plus whatever the last frame runs past the end.
    let total = (frames - 1) * params.hop + len;
    let mut padded = vec![0.0; total];
    padded[pad..pad + signal.len()].copy_from_slice(signal);

    let window = params.window.coefficients(len);
    let fft = FftPlanner::new().plan_fft_forward(len);
    let mut coeffs = DMatrix::zeros(bins, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for n in 0..frames {
        let start = n * params.hop;
        for (j, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + j] * window[j], 0.0);
        }
        fft.process(&mut buf);
        coeffs.column_mut(n).copy_from_slice(&buf[..bins]);
    }

    Ok(ComplexSpectrogram {
        coeffs,
        params: *params,
        original_length: signal.len(),
    })
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    let params = &spec.params;
    params.validate()?;
    let len = params.window_length;
    let bins = params.num_bins();
    let frames = spec.coeffs.ncols();
    if spec.coeffs.nrows() != bins {
        return Err(Error::InvalidInput(format!(
            "spectrogram has {} rows, expected {bins}",
            spec.coeffs.nrows()
        )));
    }
    if spec.original_length == 0 || frames != params.num_frames(spec.original_length) {
        return Err(Error::InvalidInput(format!(
            "{frames} frames inconsistent with original length {}",
            spec.original_length
        )));
    }

    let window = params.window.coefficients(len);
    let ifft = FftPlanner::new().plan_fft_inverse(len);
    let total = (frames - 1) * params.hop + len;
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let scale = 1.0 / len as f64;

    for n in 0..frames {
        let col = spec.coeffs.column(n);
        for k in 0..bins {
            buf[k] = col[k];
        }
        // DC and Nyquist must be real for a real signal.
        buf[0].im = 0.0;
        buf[bins - 1].im = 0.0;
        for k in bins..len {
            buf[k] = col[len - k].conj();
        }
        ifft.process(&mut buf);
        let start = n * params.hop;
        for j in 0..len {
            out[start + j] += buf[j].re * scale * window[j];
            norm[start + j] += window[j] * window[j];
        }
    }

    let pad = params.padding();
    Ok(out[pad..pad + spec.original_length]
        .iter()
        .zip(&norm[pad..pad + spec.original_length])
        .map(|(y, w)| if *w > 1e-10 { y / w } else { 0.0 })
        .collect())
}

pub fn power_spectrogram(spec: &ComplexSpectrogram) -> MixtureSpectrogram {
    MixtureSpectrogram {
        values: spec.coeffs.map(|c| c.norm_sqr()),
    }
}
