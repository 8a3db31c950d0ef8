//! Stereo WAV ingest, derived mono sources, and dataset manifests.
//!
//! Clips are loaded without resampling; whatever rate the file carries is kept
//! and later stages decide what to do with it. A stereo clip expands into four
//! mono sources (left, right, mean, difference) that feed independent
//! classifier channels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Two-channel audio segment with samples in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct StereoClip {
    pub id: String,
    pub left: Array1<f64>,
    pub right: Array1<f64>,
    pub sample_rate: u32,
}

impl StereoClip {
    pub fn new(
        id: impl Into<String>,
        left: Array1<f64>,
        right: Array1<f64>,
        sample_rate: u32,
    ) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::MalformedWav(format!(
                "channel length mismatch: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::MalformedWav("sample rate is zero".into()));
        }
        if left.iter().chain(right.iter()).any(|s| !s.is_finite()) {
            return Err(Error::MalformedWav("non-finite sample".into()));
        }
        Ok(Self {
            id: id.into(),
            left,
            right,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// One of the four mono views of a stereo clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Left,
    Right,
    Mean,
    Diff,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Left, Source::Right, Source::Mean, Source::Diff];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Left => "left",
            Source::Right => "right",
            Source::Mean => "mean",
            Source::Diff => "diff",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Source::Left),
            "right" => Ok(Source::Right),
            "mean" => Ok(Source::Mean),
            "diff" => Ok(Source::Diff),
            other => Err(Error::Config(format!("unknown source '{other}'"))),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four mono sources derived from one stereo clip.
///
/// `mean + diff` reconstructs the left channel and `mean - diff` the right,
/// so no information is lost by the expansion.
#[derive(Debug, Clone)]
pub struct SourceSet {
    pub left: Array1<f64>,
    pub right: Array1<f64>,
    pub mean: Array1<f64>,
    pub diff: Array1<f64>,
    pub sample_rate: u32,
}

impl SourceSet {
    pub fn get(&self, source: Source) -> ArrayView1<'_, f64> {
        match source {
            Source::Left => self.left.view(),
            Source::Right => self.right.view(),
            Source::Mean => self.mean.view(),
            Source::Diff => self.diff.view(),
        }
    }
}

/// Split a stereo clip into left, right, mean `(L+R)/2`, and difference
/// `(L-R)/2` sources.
pub fn derive_sources(clip: &StereoClip) -> SourceSet {
    let mean = (&clip.left + &clip.right) * 0.5;
    let diff = (&clip.left - &clip.right) * 0.5;
    SourceSet {
        left: clip.left.clone(),
        right: clip.right.clone(),
        mean,
        diff,
        sample_rate: clip.sample_rate,
    }
}

/// Load a PCM WAV file as a stereo clip.
///
/// Accepts 1 or 2 channels with 16- or 24-bit integer or 32-bit float
/// samples. Integer samples are scaled by `2^(bits-1)` into `[-1, 1)`; mono
/// files are duplicated into both channels.
pub fn load_wav(path: impl AsRef<Path>) -> Result<StereoClip> {
    let path = path.as_ref();
    let reader =
        hound::WavReader::open(path).map_err(|e| wav_error(path, e, "opening WAV file"))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedWav(format!(
            "{}: {} channels (want 1 or 2)",
            path.display(),
            spec.channels
        )));
    }
    let mut reader = reader;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let scale = 1.0 / (1 << 15) as f64;
            collect_samples::<i16>(&mut reader, path)?
                .into_iter()
                .map(|s| s as f64 * scale)
                .collect()
        }
        (hound::SampleFormat::Int, 24) => {
            let scale = 1.0 / (1 << 23) as f64;
            collect_samples::<i32>(&mut reader, path)?
                .into_iter()
                .map(|s| s as f64 * scale)
                .collect()
        }
        (hound::SampleFormat::Float, 32) => collect_samples::<f32>(&mut reader, path)?
            .into_iter()
            .map(|s| s as f64)
            .collect(),
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let (left, right) = if spec.channels == 1 {
        let ch = Array1::from_vec(interleaved);
        (ch.clone(), ch)
    } else {
        let n = interleaved.len() / 2;
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for pair in interleaved.chunks_exact(2) {
            left.push(pair[0]);
            right.push(pair[1]);
        }
        (Array1::from_vec(left), Array1::from_vec(right))
    };
    StereoClip::new(id, left, right, spec.sample_rate)
}

fn collect_samples<S: hound::Sample>(
    reader: &mut hound::WavReader<std::io::BufReader<fs::File>>,
    path: &Path,
) -> Result<Vec<S>> {
    reader
        .samples::<S>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e, "reading samples"))
}

fn wav_error(path: &Path, e: hound::Error, context: &str) -> Error {
    match e {
        // hound surfaces truncation as an IO error; only genuine filesystem
        // failures should map to Io
        hound::Error::IoError(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ) =>
        {
            Error::io(path, io)
        }
        other => Error::MalformedWav(format!("{} ({context}): {other}", path.display())),
    }
}

/// Write a stereo clip as 16-bit PCM WAV, clamping samples into range.
pub fn write_wav(path: impl AsRef<Path>, clip: &StereoClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e, "creating WAV"))?;
    for i in 0..clip.len() {
        for s in [clip.left[i], clip.right[i]] {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer
                .write_sample(q)
                .map_err(|e| wav_error(path, e, "writing samples"))?;
        }
    }
    writer
        .finalize()
        .map_err(|e| wav_error(path, e, "finalizing WAV"))
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: String,
    pub fold: u32,
}

/// Clip inventory for a cross-validated dataset.
///
/// Class order is first-appearance order over the entries and is part of the
/// manifest identity: score columns and confusion rows follow it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    classes: Vec<String>,
    n_folds: u32,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, n_folds: u32) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Manifest("manifest has no entries".into()));
        }
        if n_folds == 0 {
            return Err(Error::Manifest("n_folds must be at least 1".into()));
        }
        let mut classes: Vec<String> = Vec::new();
        let mut seen_ids = std::collections::HashSet::new();
        for e in &entries {
            if e.label.is_empty() {
                return Err(Error::Manifest(format!("clip '{}' has an empty label", e.id)));
            }
            if e.fold < 1 || e.fold > n_folds {
                return Err(Error::Manifest(format!(
                    "clip '{}' is in fold {} (valid range 1..={})",
                    e.id, e.fold, n_folds
                )));
            }
            if !seen_ids.insert(e.id.clone()) {
                return Err(Error::Manifest(format!("duplicate clip id '{}'", e.id)));
            }
            if !classes.contains(&e.label) {
                classes.push(e.label.clone());
            }
        }
        Ok(Self {
            entries,
            classes,
            n_folds,
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Class labels in first-appearance order.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_folds(&self) -> u32 {
        self.n_folds
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Entries whose fold equals `fold`.
    pub fn fold_entries(&self, fold: u32) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.fold == fold)
    }

    /// Entries from every fold except `fold`.
    pub fn other_fold_entries(&self, fold: u32) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.fold != fold)
    }

    /// Number of clips per class, indexed like `classes()`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes.len()];
        for e in &self.entries {
            counts[self.class_index(&e.label).unwrap()] += 1;
        }
        counts
    }
}

/// Parse a manifest file: one `id<TAB>path<TAB>label<TAB>fold` row per clip,
/// no header. The fold count is the largest fold index present.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Manifest(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let fold: u32 = fields[3].parse().map_err(|_| {
            Error::Manifest(format!(
                "{}:{}: fold '{}' is not a positive integer",
                path.display(),
                lineno + 1,
                fields[3]
            ))
        })?;
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            path: PathBuf::from(fields[1]),
            label: fields[2].to_string(),
            fold,
        });
    }
    let n_folds = entries.iter().map(|e| e.fold).max().unwrap_or(0);
    DatasetManifest::new(entries, n_folds)
}

/// Write a manifest in the same TSV format `load_manifest` reads.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in manifest.entries() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.id,
            e.path.display(),
            e.label,
            e.fold
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn clip(left: Array1<f64>, right: Array1<f64>) -> StereoClip {
        StereoClip::new("t", left, right, 16000).unwrap()
    }

    #[test]
    fn sources_identical_channels() {
        let s = derive_sources(&clip(array![1.0, -1.0], array![1.0, -1.0]));
        assert_eq!(s.mean, array![1.0, -1.0]);
        assert_eq!(s.diff, array![0.0, 0.0]);
    }

    #[test]
    fn sources_symmetric_channels() {
        let s = derive_sources(&clip(array![1.0], array![-1.0]));
        assert_eq!(s.mean, array![0.0]);
        assert_eq!(s.diff, array![1.0]);
    }

    #[test]
    fn sources_reconstruct_channels() {
        // PCM-style dyadic samples, where the halving arithmetic is exact
        let left = Array1::from_iter([9831, -22938, 3604, 0].map(|v| v as f64 / 32768.0));
        let right = Array1::from_iter([-6554, 16384, 32440, -32768].map(|v| v as f64 / 32768.0));
        let s = derive_sources(&clip(left.clone(), right.clone()));
        assert_eq!(&s.mean + &s.diff, left);
        assert_eq!(&s.mean - &s.diff, right);
    }

    #[test]
    fn sources_scale_linearly() {
        let left = array![0.25, -0.5];
        let right = array![0.125, 0.75];
        let a = 0.5;
        let s1 = derive_sources(&clip(left.clone(), right.clone()));
        let s2 = derive_sources(&clip(left * a, right * a));
        for src in Source::ALL {
            let scaled = &s1.get(src).to_owned() * a;
            assert_eq!(s2.get(src).to_owned(), scaled);
        }
    }

    #[test]
    fn wav_16bit_scaling_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [16384i16, -32768, 0, 16384, 32767, -16384] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let c = load_wav(&path).unwrap();
        assert_eq!(c.sample_rate, 22050);
        assert_eq!(c.left[0], 0.5);
        assert_eq!(c.right[0], -1.0);
        assert_eq!(c.left[2], 32767.0 / 32768.0);
        assert_eq!(c.right[2], -0.5);

        let out = dir.path().join("o.wav");
        write_wav(&out, &c).unwrap();
        let back = load_wav(&out).unwrap();
        assert_eq!(back.left, c.left);
        assert_eq!(back.right, c.right);
    }

    #[test]
    fn wav_mono_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [100i16, -200, 300] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let c = load_wav(&path).unwrap();
        assert_eq!(c.left, c.right);
        assert_eq!(c.len(), 3);
        let s = derive_sources(&c);
        assert!(s.diff.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wav_float32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [0.25f32, -0.75] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let c = load_wav(&path).unwrap();
        assert_eq!(c.left[0], 0.25);
        assert_eq!(c.left[1], -0.75);
    }

    #[test]
    fn wav_truncated_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        fs::write(&path, b"RIFF\x04\x00\x00\x00WA").unwrap();
        match load_wav(&path) {
            Err(Error::MalformedWav(_)) => {}
            other => panic!("expected malformed WAV error, got {other:?}"),
        }
    }

    #[test]
    fn wav_unsupported_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(1i8).unwrap();
        w.finalize().unwrap();
        match load_wav(&path) {
            Err(Error::UnsupportedWav(_)) => {}
            other => panic!("expected unsupported WAV error, got {other:?}"),
        }
    }

    fn entry(id: &str, label: &str, fold: u32) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            path: PathBuf::from(format!("{id}.wav")),
            label: label.into(),
            fold,
        }
    }

    #[test]
    fn manifest_classes_first_appearance() {
        let m = DatasetManifest::new(
            vec![
                entry("a", "park", 1),
                entry("b", "bus", 1),
                entry("c", "park", 2),
                entry("d", "bus", 2),
            ],
            2,
        )
        .unwrap();
        assert_eq!(m.classes(), ["park", "bus"]);
        assert_eq!(m.n_folds(), 2);
        assert_eq!(m.class_counts(), vec![2, 2]);
    }

    #[test]
    fn manifest_rejects_duplicate_id() {
        let err = DatasetManifest::new(vec![entry("a", "x", 1), entry("a", "y", 1)], 1);
        assert!(matches!(err, Err(Error::Manifest(_))));
    }

    #[test]
    fn manifest_rejects_fold_out_of_range() {
        let err = DatasetManifest::new(vec![entry("a", "x", 5)], 4);
        assert!(matches!(err, Err(Error::Manifest(_))));
        let err = DatasetManifest::new(vec![entry("a", "x", 0)], 4);
        assert!(matches!(err, Err(Error::Manifest(_))));
    }

    #[test]
    fn manifest_roundtrip() {
        let m = DatasetManifest::new(
            vec![
                entry("a", "cafe", 1),
                entry("b", "tram", 3),
                entry("c", "cafe", 2),
            ],
            3,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        write_manifest(&path, &m).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn manifest_counts_for_uneven_classes() {
        let m = DatasetManifest::new(
            vec![
                entry("a", "x", 1),
                entry("b", "x", 1),
                entry("c", "x", 1),
                entry("d", "y", 1),
            ],
            1,
        )
        .unwrap();
        assert_eq!(m.class_counts(), vec![3, 1]);
    }
}
