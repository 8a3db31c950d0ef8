//! Frame slicing and tapering shared by the MFCC and spectrogram frontends.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Start (possibly negative) and length of one observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSlice {
    pub start: isize,
    pub len: usize,
}

/// Slice a signal into non-overlapping base frames of `frame_ms`, each
/// observed through a window of `window_ms` centered on the base frame.
///
/// The slice count depends only on `frame_ms`, so widening the observation
/// window never changes how many frames a clip yields. Windows reaching past
/// the signal edges are filled by sample replication at gather time.
pub fn frame_slices(
    n_samples: usize,
    fs: u32,
    window_ms: f64,
    frame_ms: f64,
) -> Result<Vec<FrameSlice>> {
    if window_ms < frame_ms {
        return Err(Error::Feature(format!(
            "observation window {window_ms} ms shorter than base frame {frame_ms} ms"
        )));
    }
    let frame_len = (fs as f64 * frame_ms / 1000.0).round() as usize;
    let win_len = (fs as f64 * window_ms / 1000.0).round() as usize;
    if frame_len == 0 {
        return Err(Error::Feature("base frame rounds to zero samples".into()));
    }
    let n_frames = n_samples / frame_len;
    if n_frames == 0 {
        return Err(Error::Feature(format!(
            "signal of {n_samples} samples shorter than one {frame_ms} ms frame"
        )));
    }
    let lead = ((win_len - frame_len) / 2) as isize;
    Ok((0..n_frames)
        .map(|i| FrameSlice {
            start: (i * frame_len) as isize - lead,
            len: win_len,
        })
        .collect())
}

/// Gather `len` samples from `start`, replicating the edge samples for
/// out-of-range indices.
pub fn gather_clamped(signal: ArrayView1<f64>, start: isize, len: usize) -> Array1<f64> {
    let n = signal.len() as isize;
    debug_assert!(n > 0);
    Array1::from_iter((0..len as isize).map(|o| signal[(start + o).clamp(0, n - 1) as usize]))
}

/// Symmetric raised-cosine (Hann) taper.
pub fn hann(len: usize) -> Array1<f64> {
    if len <= 1 {
        return Array1::ones(len);
    }
    let denom = (len - 1) as f64;
    Array1::from_iter(
        (0..len).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos()),
    )
}
