//! Feature extraction: boosted MFCC stacks for the i-vector branch and
//! log-filterbank spectrogram excerpts for the convolutional branch.

mod mel;
mod mfcc;
mod spectrogram;
mod window;

pub use mel::{hz_to_mel, log_filterbank, mel_filterbank, mel_to_hz};
pub use mfcc::{
    compute_deltas, extract_boosted_features, extract_mfcc, mel_log_energies, stack_features,
    MfccConfig,
};
pub use spectrogram::{excerpt_windows, log_mel_spectrogram, Excerpt, SpectrogramConfig};
pub use window::{frame_slices, gather_clamped, hann, FrameSlice};

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"ASCM";
const FEATURE_VERSION: u8 = 1;

/// A frames-by-dims matrix of real-valued features at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub frame_rate: f64,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, frame_rate: f64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Feature("feature matrix has no frames".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Feature("feature matrix has non-finite entries".into()));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Feature(format!("bad frame rate {frame_rate}")));
        }
        Ok(Self { data, frame_rate })
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }

    /// Write as the portable binary feature format: "ASCM" magic, version,
    /// u32 rows, u32 cols, f64 frame rate, row-major f32 payload, all
    /// little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf =
            Vec::with_capacity(4 + 1 + 4 + 4 + 8 + self.data.len() * std::mem::size_of::<f32>());
        buf.extend_from_slice(FEATURE_MAGIC);
        buf.push(FEATURE_VERSION);
        buf.extend_from_slice(&(self.n_frames() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dims() as u32).to_le_bytes());
        buf.extend_from_slice(&self.frame_rate.to_le_bytes());
        for v in self.data.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::Feature(format!("{}: {msg}", path.display()));
        if bytes.len() < 21 || &bytes[0..4] != FEATURE_MAGIC {
            return Err(fail("not a feature file (bad magic)"));
        }
        if bytes[4] != FEATURE_VERSION {
            return Err(fail(&format!("unsupported feature format version {}", bytes[4])));
        }
        let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let frame_rate = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
        let expect = 21 + rows * cols * 4;
        if bytes.len() != expect {
            return Err(fail(&format!(
                "payload is {} bytes, header implies {}",
                bytes.len() - 21,
                expect - 21
            )));
        }
        let values: Vec<f64> = bytes[21..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let data = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| fail(&format!("shape error: {e}")))?;
        Self::new(data, frame_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(FeatureMatrix::new(Array2::zeros((0, 3)), 50.0).is_err());
        assert!(FeatureMatrix::new(array![[f64::NAN]], 50.0).is_err());
        assert!(FeatureMatrix::new(array![[1.0]], 0.0).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let m = FeatureMatrix::new(array![[1.5, -2.25, 0.0], [0.125, 4.0, -0.5]], 31.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.feat");
        m.save(&path).unwrap();
        let back = FeatureMatrix::load(&path).unwrap();
        assert_eq!(back.frame_rate, 31.25);
        assert_eq!(back.data.dim(), (2, 3));
        // payload is f32, values here are exactly representable
        assert_eq!(back.data, m.data);
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feat");
        fs::write(&path, b"NOPE").unwrap();
        assert!(FeatureMatrix::load(&path).is_err());
        fs::write(&path, b"ASCM\x07aaaaaaaaaaaaaaaaaaaa").unwrap();
        assert!(FeatureMatrix::load(&path).is_err());
    }

    #[test]
    fn load_rejects_truncated_payload() {
        let m = FeatureMatrix::new(array![[1.0, 2.0]], 50.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.feat");
        m.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        fs::write(&path, bytes).unwrap();
        assert!(FeatureMatrix::load(&path).is_err());
    }
}
