//! Log-filterbank spectrograms and the sliding excerpt windows fed to the
//! convolutional classifier.

use ndarray::{s, Array1, Array2, ArrayView1};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::features::mel::log_filterbank;
use crate::features::window::{gather_clamped, hann};
use crate::features::FeatureMatrix;

/// Settings for the spectrogram frontend.
///
/// The frame rate is non-integer in samples (22050 / 31.25 = 705.6), so frame
/// starts are the rounded ideal positions; the average rate is exact.
#[derive(Debug, Clone)]
pub struct SpectrogramConfig {
    pub sample_rate_hz: u32,
    pub fft_size: usize,
    pub frame_rate_fps: f64,
    pub n_bands: usize,
    pub passband_hz: (f64, f64),
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 22050,
            fft_size: 2048,
            frame_rate_fps: 31.25,
            n_bands: 149,
            passband_hz: (20.0, 16000.0),
            log_floor: 1e-10,
        }
    }
}

impl SpectrogramConfig {
    fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if !(self.frame_rate_fps > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        if self.n_bands == 0 {
            return Err(Error::Config("need at least one band".into()));
        }
        Ok(())
    }
}

/// STFT magnitudes through a logarithmically spaced triangular filterbank,
/// log-compressed. Output is frames by `n_bands` at `frame_rate_fps`.
///
/// The passband's upper edge is clamped to the Nyquist frequency.
pub fn log_mel_spectrogram(
    signal: ArrayView1<f64>,
    fs: u32,
    cfg: &SpectrogramConfig,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if fs != cfg.sample_rate_hz {
        return Err(Error::Feature(format!(
            "signal is at {fs} Hz, spectrogram frontend expects {}",
            cfg.sample_rate_hz
        )));
    }
    if signal.len() < cfg.fft_size {
        return Err(Error::Feature(format!(
            "signal of {} samples shorter than one {}-sample analysis window",
            signal.len(),
            cfg.fft_size
        )));
    }
    let fs_f = fs as f64;
    let n_frames = (signal.len() as f64 * cfg.frame_rate_fps / fs_f).floor() as usize;
    let fmax = cfg.passband_hz.1.min(fs_f / 2.0);
    let bank = log_filterbank(cfg.n_bands, cfg.fft_size, fs, cfg.passband_hz.0, fmax)?;
    let taper = hann(cfg.fft_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.fft_size / 2 + 1;

    let mut out = Array2::<f64>::zeros((n_frames, cfg.n_bands));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut mags = Array1::<f64>::zeros(n_bins);
    for t in 0..n_frames {
        let start = (t as f64 * fs_f / cfg.frame_rate_fps).round() as isize;
        let frame = gather_clamped(signal, start, cfg.fft_size);
        for i in 0..cfg.fft_size {
            buf[i] = Complex::new(frame[i] * taper[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            mags[k] = buf[k].norm();
        }
        let banded = bank.dot(&mags);
        for (j, &e) in banded.iter().enumerate() {
            out[[t, j]] = (e + cfg.log_floor).ln();
        }
    }
    FeatureMatrix::new(out, cfg.frame_rate_fps)
}

/// A bands-by-width patch cut from one clip's spectrogram.
#[derive(Debug, Clone)]
pub struct Excerpt {
    pub patch: Array2<f64>,
    pub clip_id: String,
    pub start_frame: usize,
}

/// Cut sliding patches of `width` frames every `stride` frames, plus one
/// final patch flush with the end of the clip.
pub fn excerpt_windows(
    spec: &FeatureMatrix,
    clip_id: &str,
    width: usize,
    stride: usize,
) -> Result<Vec<Excerpt>> {
    if width == 0 || stride == 0 {
        return Err(Error::Feature("width and stride must be positive".into()));
    }
    let n = spec.n_frames();
    if n < width {
        return Err(Error::Feature(format!(
            "clip '{clip_id}' has {n} frames, need at least {width} for one excerpt"
        )));
    }
    let mut offsets: Vec<usize> = (0..=n - width).step_by(stride).collect();
    let flush = n - width;
    if *offsets.last().unwrap() != flush {
        offsets.push(flush);
    }
    Ok(offsets
        .into_iter()
        .map(|o| Excerpt {
            patch: spec.data.slice(s![o..o + width, ..]).t().to_owned(),
            clip_id: clip_id.to_string(),
            start_frame: o,
        })
        .collect())
}
