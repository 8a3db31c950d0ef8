//! Triangular filterbanks on warped frequency axes.
//!
//! The MFCC frontend uses the mel warp; the spectrogram frontend uses a
//! logarithmic warp. Both build the same triangle shape: unit-height filters
//! at equally spaced centers in the warped domain, which makes adjacent
//! filters sum to one everywhere between the first and last center.

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Mel-spaced triangular filterbank, `n_filters` rows by `n_bins` columns.
///
/// Bin `k` sits at `k * fs / fft_size` Hz. Filters are evaluated on the
/// continuous triangle rather than snapped to bins.
pub fn mel_filterbank(
    n_filters: usize,
    fft_size: usize,
    fs: u32,
    fmin_hz: f64,
    fmax_hz: f64,
) -> Result<Array2<f64>> {
    warped_filterbank(n_filters, fft_size, fs, fmin_hz, fmax_hz, hz_to_mel)
}

/// Log-spaced triangular filterbank; `fmin_hz` must be positive.
pub fn log_filterbank(
    n_filters: usize,
    fft_size: usize,
    fs: u32,
    fmin_hz: f64,
    fmax_hz: f64,
) -> Result<Array2<f64>> {
    if fmin_hz <= 0.0 {
        return Err(Error::Feature(format!(
            "log filterbank needs a positive lower edge, got {fmin_hz} Hz"
        )));
    }
    warped_filterbank(n_filters, fft_size, fs, fmin_hz, fmax_hz, f64::ln)
}

fn warped_filterbank(
    n_filters: usize,
    fft_size: usize,
    fs: u32,
    fmin_hz: f64,
    fmax_hz: f64,
    warp: fn(f64) -> f64,
) -> Result<Array2<f64>> {
    let nyquist = fs as f64 / 2.0;
    if !(fmin_hz < fmax_hz && fmax_hz <= nyquist) {
        return Err(Error::Feature(format!(
            "invalid filter band [{fmin_hz}, {fmax_hz}] Hz for fs {fs}"
        )));
    }
    if n_filters == 0 {
        return Err(Error::Feature("need at least one filter".into()));
    }
    let n_bins = fft_size / 2 + 1;
    let lo = warp(fmin_hz);
    let hi = warp(fmax_hz);
    let step = (hi - lo) / (n_filters + 1) as f64;
    let mut bank = Array2::<f64>::zeros((n_filters, n_bins));
    for j in 0..n_filters {
        let center = lo + (j + 1) as f64 * step;
        for k in 0..n_bins {
            let f = k as f64 * fs as f64 / fft_size as f64;
            if f < fmin_hz || f > fmax_hz {
                continue;
            }
            let w = 1.0 - (warp(f) - center).abs() / step;
            if w > 0.0 {
                bank[[j, k]] = w;
            }
        }
    }
    Ok(bank)
}
