//! Experiment configuration: a flat `key = value` text format with dotted
//! section prefixes, parsed strictly (unknown or duplicate keys are errors).
//!
//! Schema (defaults in parentheses):
//!
//! ```text
//! manifest                    path to the dataset manifest TSV
//! out                         output directory
//! seed                        root experiment seed (0)
//! jobs                        worker parallelism bound (1)
//! systems                     comma list of bas,smb,mmb,cmb,vgg,hyb (all)
//! grouping                    path to an indoor/outdoor grouping file (TUT16 labels)
//!
//! mfcc.frame_ms               analysis frame grid (20)
//! mfcc.static_window_ms       observation window for statics (20)
//! mfcc.delta_window_ms        observation window for the delta streams (60)
//! mfcc.n_static               static coefficients (23)
//! mfcc.n_delta                delta coefficients (18)
//! mfcc.n_double_delta         double-delta coefficients (20)
//! mfcc.n_mel_filters          mel triangles (30)
//! mfcc.fmin_hz / fmax_hz      filterbank range (0 / 11000)
//! mfcc.include_c0             keep coefficient 0 in the statics (false)
//! mfcc.delta_span             regression span in frames (2)
//! mfcc.log_floor              energy floor before the log (1e-10)
//!
//! spectrogram.sample_rate_hz  expected input rate (22050)
//! spectrogram.fft_size        STFT size, power of two (2048)
//! spectrogram.frame_rate_fps  output frame rate (31.25)
//! spectrogram.n_bands         filterbank bands (149)
//! spectrogram.passband_lo_hz / passband_hi_hz   band edges (20 / 16000)
//! spectrogram.log_floor       magnitude floor before the log (1e-10)
//!
//! ubm.components              mixture components (256)
//! ubm.iters                   EM iterations (10)
//! ubm.rel_tol                 relative log-likelihood stop, 0 = run all (0)
//! ubm.variance_floor          fraction of global variance (1e-4)
//!
//! tv.rank                     i-vector dimensionality (400)
//! tv.iters                    EM iterations (10)
//! tv.init_scale               initialization scale (0.1)
//!
//! backend.dims                LDA output dims, 0 = classes - 1 (0)
//!
//! cnn.arch                    full | compact (full)
//! cnn.excerpt_width           excerpt frames; training stride is half of it (149)
//! cnn.test_stride             scoring window stride in frames (10)
//! cnn.batch_size              (100)
//! cnn.initial_lr              (0.02)
//! cnn.lr_halving_period       epochs between halvings (5)
//! cnn.momentum                (0.9)
//! cnn.weight_decay            (1e-4)
//! cnn.epochs                  (20)
//!
//! fusion.max_iters            gradient iterations (2000)
//! fusion.grad_tol             gradient-norm stop (1e-9)
//! ```
//!
//! The root `seed` drives every randomized stage through named sub-seeds;
//! the per-stage seed fields inside the module configs are overwritten by
//! the experiment runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cnn::TrainConfig;
use crate::error::{Error, Result};
use crate::features::{MfccConfig, SpectrogramConfig};
use crate::fusion::FusionTrainConfig;
use crate::gmm::EmConfig;
use crate::ivector::TvConfig;

use super::{SceneGrouping, System};

/// Parsed `key = value` pairs with strict consumption tracking.
pub struct ConfigMap {
    origin: String,
    pairs: Vec<(String, String, usize)>,
    consumed: Vec<bool>,
}

impl ConfigMap {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected 'key = value'", i + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("{origin}:{}: empty key", i + 1)));
            }
            if pairs.iter().any(|(k, _, _)| *k == key) {
                return Err(Error::Config(format!(
                    "{origin}:{}: duplicate key '{key}'",
                    i + 1
                )));
            }
            pairs.push((key, value, i + 1));
        }
        let n = pairs.len();
        Ok(Self {
            origin: origin.to_string(),
            pairs,
            consumed: vec![false; n],
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Fetch and consume a raw value.
    pub fn take(&mut self, key: &str) -> Option<String> {
        for (i, (k, v, _)) in self.pairs.iter().enumerate() {
            if k == key {
                self.consumed[i] = true;
                return Some(v.clone());
            }
        }
        None
    }

    /// Fetch and parse a value, keeping `current` when the key is absent.
    pub fn get<T: FromStr>(&mut self, key: &str, current: T) -> Result<T> {
        match self.take(key) {
            None => Ok(current),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!(
                    "{}: key '{key}' has unparseable value '{v}'",
                    self.origin
                ))
            }),
        }
    }

    /// Error out if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<String> = self
            .pairs
            .iter()
            .zip(&self.consumed)
            .filter(|(_, &c)| !c)
            .map(|((k, _, line), _)| format!("{k} (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{}: unknown keys: {}",
                self.origin,
                unknown.join(", ")
            )))
        }
    }
}

/// Which network preset the experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnnArch {
    /// The full model-table network; requires square excerpts.
    Full,
    /// A narrow desk-scale variant for small band counts.
    Compact,
}

impl CnnArch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CnnArch::Full),
            "compact" => Ok(CnnArch::Compact),
            other => Err(Error::Config(format!(
                "unknown cnn.arch '{other}' (expected full or compact)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CnnArch::Full => "full",
            CnnArch::Compact => "compact",
        }
    }
}

/// Everything a cross-validated experiment needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub systems: Vec<System>,
    pub seed: u64,
    pub jobs: usize,
    pub mfcc: MfccConfig,
    pub spectrogram: SpectrogramConfig,
    pub ubm_components: usize,
    pub ubm: EmConfig,
    pub tv: TvConfig,
    /// LDA output dimensionality; `None` means classes - 1.
    pub lda_dims: Option<usize>,
    pub cnn_arch: CnnArch,
    pub excerpt_width: usize,
    pub test_stride: usize,
    pub cnn: TrainConfig,
    pub fusion: FusionTrainConfig,
    pub grouping: Option<SceneGrouping>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
            systems: System::ALL.to_vec(),
            seed: 0,
            jobs: 1,
            mfcc: MfccConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            ubm_components: 256,
            ubm: EmConfig::default(),
            tv: TvConfig::default(),
            lda_dims: None,
            cnn_arch: CnnArch::Full,
            excerpt_width: 149,
            test_stride: 10,
            cnn: TrainConfig::default(),
            fusion: FusionTrainConfig::default(),
            grouping: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut map = ConfigMap::load(path)?;
        let cfg = Self::from_map(&mut map)?;
        map.finish()?;
        Ok(cfg)
    }

    pub fn from_map(map: &mut ConfigMap) -> Result<Self> {
        let mut cfg = Self::default();

        if let Some(v) = map.take("manifest") {
            cfg.manifest = PathBuf::from(v);
        }
        if let Some(v) = map.take("out") {
            cfg.out_dir = PathBuf::from(v);
        }
        cfg.seed = map.get("seed", cfg.seed)?;
        cfg.jobs = map.get("jobs", cfg.jobs)?;
        if let Some(v) = map.take("systems") {
            cfg.systems = parse_systems(&v)?;
        }
        if let Some(v) = map.take("grouping") {
            cfg.grouping = Some(SceneGrouping::load(Path::new(&v))?);
        }

        cfg.mfcc.frame_ms = map.get("mfcc.frame_ms", cfg.mfcc.frame_ms)?;
        cfg.mfcc.static_window_ms = map.get("mfcc.static_window_ms", cfg.mfcc.static_window_ms)?;
        cfg.mfcc.delta_window_ms = map.get("mfcc.delta_window_ms", cfg.mfcc.delta_window_ms)?;
        cfg.mfcc.n_static = map.get("mfcc.n_static", cfg.mfcc.n_static)?;
        cfg.mfcc.n_delta = map.get("mfcc.n_delta", cfg.mfcc.n_delta)?;
        cfg.mfcc.n_double_delta = map.get("mfcc.n_double_delta", cfg.mfcc.n_double_delta)?;
        cfg.mfcc.n_mel_filters = map.get("mfcc.n_mel_filters", cfg.mfcc.n_mel_filters)?;
        cfg.mfcc.fmin_hz = map.get("mfcc.fmin_hz", cfg.mfcc.fmin_hz)?;
        cfg.mfcc.fmax_hz = map.get("mfcc.fmax_hz", cfg.mfcc.fmax_hz)?;
        cfg.mfcc.include_c0_static = map.get("mfcc.include_c0", cfg.mfcc.include_c0_static)?;
        cfg.mfcc.delta_span = map.get("mfcc.delta_span", cfg.mfcc.delta_span)?;
        cfg.mfcc.log_floor = map.get("mfcc.log_floor", cfg.mfcc.log_floor)?;

        cfg.spectrogram.sample_rate_hz =
            map.get("spectrogram.sample_rate_hz", cfg.spectrogram.sample_rate_hz)?;
        cfg.spectrogram.fft_size = map.get("spectrogram.fft_size", cfg.spectrogram.fft_size)?;
        cfg.spectrogram.frame_rate_fps =
            map.get("spectrogram.frame_rate_fps", cfg.spectrogram.frame_rate_fps)?;
        cfg.spectrogram.n_bands = map.get("spectrogram.n_bands", cfg.spectrogram.n_bands)?;
        cfg.spectrogram.passband_hz.0 =
            map.get("spectrogram.passband_lo_hz", cfg.spectrogram.passband_hz.0)?;
        cfg.spectrogram.passband_hz.1 =
            map.get("spectrogram.passband_hi_hz", cfg.spectrogram.passband_hz.1)?;
        cfg.spectrogram.log_floor = map.get("spectrogram.log_floor", cfg.spectrogram.log_floor)?;

        cfg.ubm_components = map.get("ubm.components", cfg.ubm_components)?;
        cfg.ubm.max_iters = map.get("ubm.iters", cfg.ubm.max_iters)?;
        cfg.ubm.rel_tol = map.get("ubm.rel_tol", cfg.ubm.rel_tol)?;
        cfg.ubm.variance_floor = map.get("ubm.variance_floor", cfg.ubm.variance_floor)?;

        cfg.tv.rank = map.get("tv.rank", cfg.tv.rank)?;
        cfg.tv.n_iters = map.get("tv.iters", cfg.tv.n_iters)?;
        cfg.tv.init_scale = map.get("tv.init_scale", cfg.tv.init_scale)?;

        let dims: usize = map.get("backend.dims", 0)?;
        cfg.lda_dims = if dims == 0 { None } else { Some(dims) };

        if let Some(v) = map.take("cnn.arch") {
            cfg.cnn_arch = CnnArch::parse(&v)?;
        }
        cfg.excerpt_width = map.get("cnn.excerpt_width", cfg.excerpt_width)?;
        cfg.test_stride = map.get("cnn.test_stride", cfg.test_stride)?;
        cfg.cnn.batch_size = map.get("cnn.batch_size", cfg.cnn.batch_size)?;
        cfg.cnn.initial_lr = map.get("cnn.initial_lr", cfg.cnn.initial_lr)?;
        cfg.cnn.lr_halving_period = map.get("cnn.lr_halving_period", cfg.cnn.lr_halving_period)?;
        cfg.cnn.momentum = map.get("cnn.momentum", cfg.cnn.momentum)?;
        cfg.cnn.weight_decay = map.get("cnn.weight_decay", cfg.cnn.weight_decay)?;
        cfg.cnn.epochs = map.get("cnn.epochs", cfg.cnn.epochs)?;

        cfg.fusion.max_iters = map.get("fusion.max_iters", cfg.fusion.max_iters)?;
        cfg.fusion.grad_tol = map.get("fusion.grad_tol", cfg.fusion.grad_tol)?;

        Ok(cfg)
    }

    /// Excerpt stride used when cutting training patches: half the width.
    pub fn train_stride(&self) -> usize {
        (self.excerpt_width / 2).max(1)
    }
}

pub fn parse_systems(s: &str) -> Result<Vec<System>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let sys = System::parse(part.trim())?;
        if !out.contains(&sys) {
            out.push(sys);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no systems selected".into()));
    }
    out.sort_by_key(|s| System::ALL.iter().position(|a| a == s).unwrap());
    Ok(out)
}
