//! Synthetic scene generator for desk-scale experiments.
//!
//! Each class is a fixed stationary spectral profile: Gaussian noise shaped
//! by class-specific log-frequency bumps plus two class tones over a weak
//! broadband floor. Clips vary by small random gains, detunes, and fresh
//! noise draws, and the two stereo channels carry independent noise
//! components so all four derived sources stay informative.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{write_wav, DatasetManifest, ManifestEntry, StereoClip};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, standard_normal};

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub n_folds: u32,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            clips_per_class: 20,
            n_folds: 4,
            seconds: 3.0,
            sample_rate: 22050,
            seed: 0,
        }
    }
}

/// Spectral envelope as log-frequency Gaussian bumps, each with a target
/// RMS level, plus class tones.
///
/// All classes draw on the same four broad bands and differ in how the
/// mixture weights them; the emphasis slides up the spectrum with the
/// class index. Keeping the bands shared matters: scene identity has to
/// live in the balance of common spectral regions, not in private narrow
/// peaks, or clips reduce to point masses the backed-off statistics
/// cannot compare.
struct ClassProfile {
    /// (center Hz, log-frequency spread, rms)
    bumps: Vec<(f64, f64, f64)>,
    tones: Vec<(f64, f64)>,
}

const BAND_CENTERS: [f64; 4] = [300.0, 950.0, 3000.0, 8500.0];

fn class_profile(class: usize, n_classes: usize) -> ClassProfile {
    let t = if n_classes > 1 {
        class as f64 / (n_classes - 1) as f64
    } else {
        0.0
    };
    let p = t * (BAND_CENTERS.len() - 1) as f64;
    let bumps = BAND_CENTERS
        .iter()
        .enumerate()
        .map(|(b, &center)| {
            let w = (-0.5 * ((b as f64 - p) / 0.8).powi(2)).exp() + 0.08;
            (center, 0.5, w)
        })
        .collect();
    // low-level marker tones ride inside the emphasized region
    let anchor = 260.0 * (5200.0f64 / 260.0).powf(t);
    ClassProfile {
        bumps,
        tones: vec![(anchor * 0.85, 0.18), (anchor * 1.25, 0.12)],
    }
}

fn bump_env(center: f64, spread: f64) -> impl Fn(f64) -> f64 {
    let lc = center.ln();
    move |f: f64| (-0.5 * ((f.ln() - lc) / spread).powi(2)).exp()
}

/// Gaussian noise with the given one-sided magnitude envelope, scaled to
/// `rms`, synthesized in the frequency domain.
fn spectral_noise(
    n: usize,
    fs: f64,
    rms: f64,
    env: impl Fn(f64) -> f64,
    ifft: &Arc<dyn Fft<f64>>,
    rng: &mut ChaCha8Rng,
) -> Array1<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..half {
        let a = env(k as f64 * fs / n as f64);
        if a > 0.0 {
            let re = a * standard_normal(rng);
            let im = a * standard_normal(rng);
            spec[k] = Complex::new(re, im);
            spec[n - k] = Complex::new(re, -im);
        }
    }
    if n % 2 == 0 && half > 0 {
        spec[half] = Complex::new(env(fs / 2.0) * standard_normal(rng), 0.0);
    }
    ifft.process(&mut spec);
    let mut out = Array1::from_iter(spec.iter().map(|z| z.re));
    let e = out.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if e > 0.0 {
        out *= rms / e.sqrt();
    }
    out
}

/// Slowly wandering gain track: unit-rms noise below `cutoff` Hz mapped
/// through an exponential.
fn slow_gain(
    n: usize,
    fs: f64,
    sigma: f64,
    cutoff: f64,
    ifft: &Arc<dyn Fft<f64>>,
    rng: &mut ChaCha8Rng,
) -> Array1<f64> {
    let u = spectral_noise(
        n,
        fs,
        1.0,
        |f| if f <= cutoff { 1.0 } else { 0.0 },
        ifft,
        rng,
    );
    u.mapv(|v| (sigma * v).exp())
}

fn render_clip(spec: &SynthSpec, class: usize, id: &str) -> StereoClip {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("synth/{id}")));
    let fs = spec.sample_rate as f64;
    let n = (spec.seconds * fs).round() as usize;
    let profile = class_profile(class, spec.n_classes);
    let ifft = FftPlanner::new().plan_fft_inverse(n);

    let gain = 0.8 + 0.4 * rng.random::<f64>();
    let right_gain = 0.85 + 0.3 * rng.random::<f64>();

    // Band levels wander slowly around the class profile so every clip's
    // frames sweep a shared range of instantaneous spectral shapes; the
    // class lives in where each band's wander is centered.
    let mut shared = Array1::<f64>::zeros(n);
    for &(center, spread, rms) in &profile.bumps {
        let level = rms * (0.85 + 0.3 * rng.random::<f64>());
        let mut band = spectral_noise(n, fs, 1.0, bump_env(center, spread), &ifft, &mut rng);
        band *= &slow_gain(n, fs, 0.8, 4.0, &ifft, &mut rng);
        let e = band.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if e > 0.0 {
            band *= level / e.sqrt();
        }
        shared += &band;
    }
    let floor = |f: f64| if (100.0..=9000.0).contains(&f) { 1.0 } else { 0.0 };
    shared += &spectral_noise(n, fs, 0.06, floor, &ifft, &mut rng);
    for &(freq, amp) in &profile.tones {
        let detune = 0.99 + 0.02 * rng.random::<f64>();
        let phase = TAU * rng.random::<f64>();
        let w = TAU * freq * detune / fs;
        for (i, y) in shared.iter_mut().enumerate() {
            *y += amp * (w * i as f64 + phase).sin();
        }
    }

    let mixture = {
        let bumps = profile.bumps.clone();
        move |f: f64| {
            bumps
                .iter()
                .map(|&(c, s, rms)| rms * bump_env(c, s)(f))
                .sum::<f64>()
        }
    };
    let noise_l = spectral_noise(n, fs, 0.3, &mixture, &ifft, &mut rng);
    let noise_r = spectral_noise(n, fs, 0.3, &mixture, &ifft, &mut rng);

    let mut left = (&shared + &noise_l) * gain;
    let mut right = (&(&shared * right_gain) + &noise_r) * gain;

    let peak = left
        .iter()
        .chain(right.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.9 {
        let s = 0.9 / peak;
        left *= s;
        right *= s;
    }
    StereoClip::new(id, left, right, spec.sample_rate).expect("rendered clip is well-formed")
}

/// Generate WAVs and a manifest under `out_dir`; deterministic per seed.
///
/// Clip `j` of every class lands in fold `(j mod n_folds) + 1`, so folds are
/// class-balanced. The manifest is written to `out_dir/manifest.tsv`.
pub fn synth_data(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if spec.n_classes == 0 || spec.clips_per_class == 0 {
        return Err(Error::Config("need at least one class and one clip".into()));
    }
    if spec.n_folds == 0 {
        return Err(Error::Config("need at least one fold".into()));
    }
    if !(spec.seconds > 0.0) || spec.sample_rate == 0 {
        return Err(Error::Config("clip length and sample rate must be positive".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut entries = Vec::new();
    for c in 0..spec.n_classes {
        let label = format!("scene{c:02}");
        for j in 0..spec.clips_per_class {
            let id = format!("{label}_{j:03}");
            let clip = render_clip(spec, c, &id);
            let path: PathBuf = out_dir.join(format!("{id}.wav"));
            write_wav(&path, &clip)?;
            entries.push(ManifestEntry {
                id,
                path,
                label: label.clone(),
                fold: (j as u32 % spec.n_folds) + 1,
            });
        }
    }
    let manifest = DatasetManifest::new(entries, spec.n_folds)?;
    crate::audio::write_manifest(out_dir.join("manifest.tsv"), &manifest)?;
    Ok(manifest)
}
