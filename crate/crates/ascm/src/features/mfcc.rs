//! The boosted MFCC stack: 23 static coefficients from 20 ms windows plus
//! deltas and double deltas computed from wider 60 ms windows, concatenated
//! per base frame into one 61-dimensional vector.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::features::mel::mel_filterbank;
use crate::features::window::{frame_slices, gather_clamped, hann};
use crate::features::FeatureMatrix;

/// Settings for the MFCC frontend.
///
/// Defaults give the boosted 61-dimensional stack: 23 statics without the
/// 0th coefficient, 18 deltas and 20 double deltas both including it, with
/// the delta streams observed through 60 ms windows.
#[derive(Debug, Clone)]
pub struct MfccConfig {
    pub frame_ms: f64,
    pub static_window_ms: f64,
    pub delta_window_ms: f64,
    pub n_static: usize,
    pub n_delta: usize,
    pub n_double_delta: usize,
    pub n_mel_filters: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub include_c0_static: bool,
    pub delta_span: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            static_window_ms: 20.0,
            delta_window_ms: 60.0,
            n_static: 23,
            n_delta: 18,
            n_double_delta: 20,
            n_mel_filters: 30,
            fmin_hz: 0.0,
            fmax_hz: 11000.0,
            include_c0_static: false,
            delta_span: 2,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn total_dims(&self) -> usize {
        self.n_static + self.n_delta + self.n_double_delta
    }

    fn validate(&self) -> Result<()> {
        if self.static_window_ms > self.delta_window_ms {
            return Err(Error::Config(
                "static window must not exceed the delta window".into(),
            ));
        }
        if self.delta_span == 0 {
            return Err(Error::Config("delta_span must be at least 1".into()));
        }
        let max_coeffs = [
            self.n_static + usize::from(!self.include_c0_static),
            self.n_delta,
            self.n_double_delta,
        ]
        .into_iter()
        .max()
        .unwrap();
        if self.n_mel_filters < max_coeffs {
            return Err(Error::Config(format!(
                "{} mel filters cannot produce {} cepstral coefficients",
                self.n_mel_filters, max_coeffs
            )));
        }
        Ok(())
    }
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Per-frame log mel filterbank energies: taper, zero-padded power spectrum,
/// triangular mel filters, then `ln(energy + log_floor)`.
///
/// This is the stage the cepstral transform consumes; it is public so the
/// spectral path can be checked against independent references.
pub fn mel_log_energies(
    signal: ArrayView1<f64>,
    fs: u32,
    window_ms: f64,
    cfg: &MfccConfig,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let slices = frame_slices(signal.len(), fs, window_ms, cfg.frame_ms)?;
    let win_len = slices[0].len;
    let n_fft = next_pow2(win_len);
    let n_bins = n_fft / 2 + 1;
    let fmax = cfg.fmax_hz.min(fs as f64 / 2.0);
    let bank = mel_filterbank(cfg.n_mel_filters, n_fft, fs, cfg.fmin_hz, fmax)?;
    let taper = hann(win_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut out = Array2::<f64>::zeros((slices.len(), cfg.n_mel_filters));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = Array1::<f64>::zeros(n_bins);
    for (t, slice) in slices.iter().enumerate() {
        let frame = gather_clamped(signal, slice.start, slice.len);
        for i in 0..n_fft {
            let x = if i < win_len { frame[i] * taper[i] } else { 0.0 };
            buf[i] = Complex::new(x, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            power[k] = buf[k].norm_sqr();
        }
        let energies = bank.dot(&power);
        for (j, &e) in energies.iter().enumerate() {
            out[[t, j]] = (e + cfg.log_floor).ln();
        }
    }
    FeatureMatrix::new(out, 1000.0 / cfg.frame_ms)
}

/// Orthonormal type-II DCT matrix, `n_out` rows by `n_in` columns.
fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let mut d = Array2::<f64>::zeros((n_out, n_in));
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for m in 0..n_in {
            d[[k, m]] = scale
                * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / (2 * n_in) as f64).cos();
        }
    }
    d
}

/// MFCCs from `window_ms` observation windows on a 20 ms frame grid.
///
/// The output has `n_coeffs` columns; the selection starts at coefficient 0
/// when `include_c0` is set and at coefficient 1 otherwise.
pub fn extract_mfcc(
    signal: ArrayView1<f64>,
    fs: u32,
    window_ms: f64,
    n_coeffs: usize,
    include_c0: bool,
    cfg: &MfccConfig,
) -> Result<FeatureMatrix> {
    let first = usize::from(!include_c0);
    if cfg.n_mel_filters < first + n_coeffs {
        return Err(Error::Config(format!(
            "{} mel filters cannot produce coefficients {}..{}",
            cfg.n_mel_filters,
            first,
            first + n_coeffs
        )));
    }
    let energies = mel_log_energies(signal, fs, window_ms, cfg)?;
    let dct = dct_matrix(first + n_coeffs, cfg.n_mel_filters);
    let cepstra = energies.data.dot(&dct.t());
    let selected = cepstra.slice(s![.., first..]).to_owned();
    FeatureMatrix::new(selected, energies.frame_rate)
}

/// Regression deltas with half-width `span` and edge-frame replication.
pub fn compute_deltas(features: &FeatureMatrix, span: usize) -> FeatureMatrix {
    let data = &features.data;
    let t_max = data.nrows() as isize - 1;
    let denom: f64 = 2.0 * (1..=span).map(|d| (d * d) as f64).sum::<f64>();
    let mut out = Array2::<f64>::zeros(data.raw_dim());
    for t in 0..data.nrows() {
        for d in 1..=span as isize {
            let fwd = data.row((t as isize + d).clamp(0, t_max) as usize);
            let bwd = data.row((t as isize - d).clamp(0, t_max) as usize);
            let mut row = out.row_mut(t);
            row.scaled_add(d as f64 / denom, &(&fwd - &bwd));
        }
    }
    FeatureMatrix {
        data: out,
        frame_rate: features.frame_rate,
    }
}

/// The full boosted stack: statics from narrow windows, deltas and double
/// deltas of wide-window MFCCs that include the 0th coefficient. All three
/// streams share the base frame grid, so their frame counts always agree.
pub fn extract_boosted_features(
    signal: ArrayView1<f64>,
    fs: u32,
    cfg: &MfccConfig,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let statics = extract_mfcc(
        signal,
        fs,
        cfg.static_window_ms,
        cfg.n_static,
        cfg.include_c0_static,
        cfg,
    )?;
    let n_wide = cfg.n_delta.max(cfg.n_double_delta);
    let wide = extract_mfcc(signal, fs, cfg.delta_window_ms, n_wide, true, cfg)?;
    let d1 = compute_deltas(&wide, cfg.delta_span);
    let d2 = compute_deltas(&d1, cfg.delta_span);
    debug_assert_eq!(statics.n_frames(), wide.n_frames());

    let n = statics.n_frames();
    let mut out = Array2::<f64>::zeros((n, cfg.total_dims()));
    out.slice_mut(s![.., ..cfg.n_static]).assign(&statics.data);
    out.slice_mut(s![.., cfg.n_static..cfg.n_static + cfg.n_delta])
        .assign(&d1.data.slice(s![.., ..cfg.n_delta]));
    out.slice_mut(s![.., cfg.n_static + cfg.n_delta..])
        .assign(&d2.data.slice(s![.., ..cfg.n_double_delta]));
    FeatureMatrix::new(out, statics.frame_rate)
}

/// Pool feature matrices by stacking rows.
pub fn stack_features(mats: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    if mats.is_empty() {
        return Err(Error::Feature("nothing to stack".into()));
    }
    let views: Vec<ArrayView2<f64>> = mats.iter().map(|m| m.data.view()).collect();
    let data = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::Feature(format!("stacking failed: {e}")))?;
    FeatureMatrix::new(data, mats[0].frame_rate)
}
