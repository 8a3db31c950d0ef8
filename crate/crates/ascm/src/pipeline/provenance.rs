//! Training-data provenance: which clips each trained model consumed.
//!
//! The log backs the no-leakage guarantee of cross-validation: a model used
//! to score fold `f` must not have trained on fold `f` clips. Fusion models
//! are the deliberate exception; they calibrate on the held-out scores
//! themselves and are recorded here all the same.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::audio::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceEntry {
    /// The fold whose held-out clips this model scores.
    pub fold: u32,
    /// Model name, e.g. `boosted/mean/ubm` or `fusion/hyb`.
    pub model: String,
    /// Ids of the clips whose data trained the model.
    pub clip_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProvenanceLog {
    entries: Vec<ProvenanceEntry>,
}

impl ProvenanceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, fold: u32, model: &str, clip_ids: Vec<String>) {
        self.entries.push(ProvenanceEntry {
            fold,
            model: model.to_string(),
            clip_ids,
        });
    }

    pub fn entries(&self) -> &[ProvenanceEntry] {
        &self.entries
    }

    pub fn extend(&mut self, other: ProvenanceLog) {
        self.entries.extend(other.entries);
    }

    /// One line per consumed clip: `fold=F<TAB>model=M<TAB>clip=ID`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.entries {
            for id in &e.clip_ids {
                out.push_str(&format!("fold={}\tmodel={}\tclip={}\n", e.fold, e.model, id));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut log = ProvenanceLog::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || {
                Error::Manifest(format!(
                    "{}:{}: malformed provenance line",
                    path.display(),
                    i + 1
                ))
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad());
            }
            let fold: u32 = fields[0].strip_prefix("fold=").ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let model = fields[1].strip_prefix("model=").ok_or_else(bad)?;
            let clip = fields[2].strip_prefix("clip=").ok_or_else(bad)?;
            match log.entries.last_mut() {
                Some(e) if e.fold == fold && e.model == model => {
                    e.clip_ids.push(clip.to_string());
                }
                _ => log.record(fold, model, vec![clip.to_string()]),
            }
        }
        Ok(log)
    }

    /// Check that no model scoring fold `f` trained on fold `f` clips.
    ///
    /// Models whose name starts with a prefix in `exempt` (the score-level
    /// calibration models) are skipped.
    pub fn verify_no_leakage(&self, manifest: &DatasetManifest, exempt: &[&str]) -> Result<()> {
        for e in &self.entries {
            if exempt.iter().any(|p| e.model.starts_with(p)) {
                continue;
            }
            let held_out: HashSet<&str> = manifest
                .fold_entries(e.fold)
                .map(|m| m.id.as_str())
                .collect();
            for id in &e.clip_ids {
                if held_out.contains(id.as_str()) {
                    return Err(Error::Evaluation(format!(
                        "model '{}' for fold {} trained on held-out clip '{}'",
                        e.model, e.fold, id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::ManifestEntry;
    use std::path::PathBuf;

    fn manifest() -> DatasetManifest {
        let entry = |id: &str, fold: u32| ManifestEntry {
            id: id.into(),
            path: PathBuf::from(format!("{id}.wav")),
            label: "x".into(),
            fold,
        };
        DatasetManifest::new(vec![entry("a", 1), entry("b", 1), entry("c", 2), entry("d", 2)], 2)
            .unwrap()
    }

    #[test]
    fn roundtrip() {
        let mut log = ProvenanceLog::new();
        log.record(1, "boosted/mean/ubm", vec!["c".into(), "d".into()]);
        log.record(2, "cnn", vec!["a".into(), "b".into()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.log");
        log.save(&path).unwrap();
        assert_eq!(ProvenanceLog::load(&path).unwrap(), log);
    }

    #[test]
    fn clean_log_passes() {
        let mut log = ProvenanceLog::new();
        log.record(1, "boosted/mean/ubm", vec!["c".into(), "d".into()]);
        log.record(2, "boosted/mean/ubm", vec!["a".into(), "b".into()]);
        log.verify_no_leakage(&manifest(), &[]).unwrap();
    }

    #[test]
    fn leak_is_caught() {
        let mut log = ProvenanceLog::new();
        log.record(1, "cnn", vec!["c".into(), "a".into()]);
        let err = log.verify_no_leakage(&manifest(), &[]).unwrap_err();
        assert!(err.to_string().contains("'a'"));
        assert!(err.to_string().contains("fold 1"));
    }

    #[test]
    fn exempt_prefix_skips_calibration_models() {
        let mut log = ProvenanceLog::new();
        log.record(1, "fusion/hyb", vec!["a".into(), "b".into()]);
        log.verify_no_leakage(&manifest(), &["fusion/"]).unwrap();
        assert!(log.verify_no_leakage(&manifest(), &[]).is_err());
    }

    #[test]
    fn malformed_line_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.log");
        std::fs::write(&path, "fold=1\tmodel=m\n").unwrap();
        assert!(ProvenanceLog::load(&path).is_err());
        std::fs::write(&path, "fold=x\tmodel=m\tclip=a\n").unwrap();
        assert!(ProvenanceLog::load(&path).is_err());
    }
}
