//! Cross-validated experiment orchestration: system selection, metrics,
//! the MFCC sweep harness, synthetic data, and the command-line front end.

pub mod cli;
pub mod config;
pub mod provenance;
mod run;
pub mod synth;

pub use config::{CnnArch, ConfigMap, ExperimentConfig};
pub use run::{
    default_sweep_grid, load_ivectors, run_cv, save_ivectors, standard_mfcc, sweep_mfcc,
    BackendModel, CvOutcome, FoldResult, Stream, SweepRow, SweepVariant, SystemSummary,
    VariantKind,
};
pub use synth::{synth_data, SynthSpec};

use crate::error::{Error, Result};

/// The classifier systems an experiment can run.
///
/// `Bas` is a single-source i-vector system on plain MFCCs; `Smb` uses the
/// tuned (boosted) MFCC stack on the averaged channel; `Mmb` averages cosine
/// scores over all four derived sources; `Cmb` is `Mmb` with calibrated
/// scores; `Vgg` is the spectrogram network; `Hyb` fuses `Mmb` with `Vgg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum System {
    Bas,
    Smb,
    Mmb,
    Cmb,
    Vgg,
    Hyb,
}

impl System {
    pub const ALL: [System; 6] = [
        System::Bas,
        System::Smb,
        System::Mmb,
        System::Cmb,
        System::Vgg,
        System::Hyb,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bas" => Ok(System::Bas),
            "smb" => Ok(System::Smb),
            "mmb" => Ok(System::Mmb),
            "cmb" => Ok(System::Cmb),
            "vgg" => Ok(System::Vgg),
            "hyb" => Ok(System::Hyb),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            System::Bas => "BAS",
            System::Smb => "SMB",
            System::Mmb => "MMB",
            System::Cmb => "CMB",
            System::Vgg => "VGG",
            System::Hyb => "HYB",
        }
    }

    /// Lowercase tag used in file names.
    pub fn file_tag(self) -> &'static str {
        match self {
            System::Bas => "bas",
            System::Smb => "smb",
            System::Mmb => "mmb",
            System::Cmb => "cmb",
            System::Vgg => "vgg",
            System::Hyb => "hyb",
        }
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Partition of scene labels into indoor and outdoor groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGrouping {
    pub indoor: Vec<String>,
    pub outdoor: Vec<String>,
}

impl SceneGrouping {
    /// The TUT16 label split used for group-level reporting.
    pub fn tut16() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            indoor: s(&[
                "Bus",
                "Cafe",
                "Car",
                "Grocery store",
                "Home",
                "Library",
                "Metro",
                "Office",
                "Train",
                "Tram",
            ]),
            outdoor: s(&["Beach", "City center", "Forest", "Park", "Residential area"]),
        }
    }

    /// `Some(true)` for indoor labels, `Some(false)` for outdoor, `None` for
    /// labels in neither group.
    pub fn is_indoor(&self, label: &str) -> Option<bool> {
        if self.indoor.iter().any(|l| l == label) {
            Some(true)
        } else if self.outdoor.iter().any(|l| l == label) {
            Some(false)
        } else {
            None
        }
    }

    pub fn covers(&self, classes: &[String]) -> bool {
        classes.iter().all(|c| self.is_indoor(c).is_some())
    }

    /// Groups must be disjoint and jointly cover every class.
    pub fn validate(&self, classes: &[String]) -> Result<()> {
        for l in &self.indoor {
            if self.outdoor.contains(l) {
                return Err(Error::Evaluation(format!(
                    "label '{l}' is listed as both indoor and outdoor"
                )));
            }
        }
        for c in classes {
            if self.is_indoor(c).is_none() {
                return Err(Error::Evaluation(format!(
                    "label '{c}' is in neither the indoor nor the outdoor group"
                )));
            }
        }
        Ok(())
    }

    /// Read a grouping file: `indoor = A, B, ...` and `outdoor = C, D, ...`.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut map = ConfigMap::load(path)?;
        let split = |v: Option<String>| -> Vec<String> {
            v.map(|s| {
                s.split(',')
                    .map(|l| l.trim().to_string())
                    .filter(|l| !l.is_empty())
                    .collect()
            })
            .unwrap_or_default()
        };
        let grouping = Self {
            indoor: split(map.take("indoor")),
            outdoor: split(map.take("outdoor")),
        };
        map.finish()?;
        if grouping.indoor.is_empty() && grouping.outdoor.is_empty() {
            return Err(Error::Config(format!(
                "{}: grouping file lists no labels",
                path.display()
            )));
        }
        Ok(grouping)
    }
}

/// Accuracy metrics over one prediction set, in percent.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub overall: f64,
    /// Aligned with the class list; `None` for classes with no clips.
    pub per_class: Vec<Option<f64>>,
    pub indoor: Option<f64>,
    pub outdoor: Option<f64>,
    pub n_clips: usize,
}

/// Score predictions against true labels, both as indices into `classes`.
///
/// With a grouping, indoor and outdoor accuracies are computed over the clips
/// whose TRUE label falls in the group; a group with no clips is reported as
/// absent rather than zero. The grouping must cover every class.
pub fn evaluate(
    predictions: &[usize],
    labels: &[usize],
    classes: &[String],
    grouping: Option<&SceneGrouping>,
) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Evaluation("nothing to evaluate".into()));
    }
    for &i in predictions.iter().chain(labels.iter()) {
        if i >= classes.len() {
            return Err(Error::Evaluation(format!(
                "class index {i} out of range for {} classes",
                classes.len()
            )));
        }
    }
    if let Some(g) = grouping {
        g.validate(classes)?;
    }

    let n = labels.len();
    let mut correct = 0usize;
    let mut class_total = vec![0usize; classes.len()];
    let mut class_correct = vec![0usize; classes.len()];
    let mut group_total = [0usize; 2];
    let mut group_correct = [0usize; 2];
    for (&p, &t) in predictions.iter().zip(labels) {
        let hit = p == t;
        correct += hit as usize;
        class_total[t] += 1;
        class_correct[t] += hit as usize;
        if let Some(g) = grouping {
            // validate() above guarantees every label is grouped
            let idx = if g.is_indoor(&classes[t]).unwrap() { 0 } else { 1 };
            group_total[idx] += 1;
            group_correct[idx] += hit as usize;
        }
    }

    let pct = |c: usize, t: usize| 100.0 * c as f64 / t as f64;
    let per_class = class_total
        .iter()
        .zip(&class_correct)
        .map(|(&t, &c)| if t == 0 { None } else { Some(pct(c, t)) })
        .collect();
    let group = |idx: usize| {
        if grouping.is_some() && group_total[idx] > 0 {
            Some(pct(group_correct[idx], group_total[idx]))
        } else {
            None
        }
    };
    Ok(Metrics {
        overall: pct(correct, n),
        per_class,
        indoor: group(0),
        outdoor: group(1),
        n_clips: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn all_correct_is_100_everywhere() {
        let cls = classes(&["Bus", "Park"]);
        let g = SceneGrouping::tut16();
        let m = evaluate(&[0, 1, 0], &[0, 1, 0], &cls, Some(&g)).unwrap();
        assert_eq!(m.overall, 100.0);
        assert_eq!(m.per_class, vec![Some(100.0), Some(100.0)]);
        assert_eq!(m.indoor, Some(100.0));
        assert_eq!(m.outdoor, Some(100.0));
    }

    #[test]
    fn three_of_four_is_75() {
        let cls = classes(&["a", "b"]);
        let m = evaluate(&[0, 0, 1, 1], &[0, 0, 1, 0], &cls, None).unwrap();
        assert_eq!(m.overall, 75.0);
        assert_eq!(m.indoor, None);
        assert_eq!(m.outdoor, None);
    }

    #[test]
    fn empty_group_is_absent_not_zero() {
        let cls = classes(&["Bus", "Car"]);
        let g = SceneGrouping::tut16();
        let m = evaluate(&[0, 1], &[0, 1], &cls, Some(&g)).unwrap();
        assert_eq!(m.indoor, Some(100.0));
        assert_eq!(m.outdoor, None);
    }

    #[test]
    fn per_class_weighted_average_matches_overall() {
        let cls = classes(&["a", "b", "c"]);
        let labels = [0, 0, 0, 1, 1, 2];
        let preds = [0, 1, 0, 1, 1, 0];
        let m = evaluate(&preds, &labels, &cls, None).unwrap();
        let counts = [3.0, 2.0, 1.0];
        let weighted: f64 = m
            .per_class
            .iter()
            .zip(&counts)
            .map(|(a, &w)| a.unwrap() * w)
            .sum::<f64>()
            / 6.0;
        assert!((weighted - m.overall).abs() < 1e-9);
    }

    #[test]
    fn unknown_label_rejected() {
        let cls = classes(&["Bus", "patio"]);
        let g = SceneGrouping::tut16();
        let err = evaluate(&[0, 1], &[0, 1], &cls, Some(&g)).unwrap_err();
        assert!(err.to_string().contains("patio"));
    }

    #[test]
    fn overlapping_grouping_rejected() {
        let g = SceneGrouping {
            indoor: vec!["a".into()],
            outdoor: vec!["a".into()],
        };
        assert!(g.validate(&classes(&["a"])).is_err());
    }

    #[test]
    fn index_out_of_range_rejected() {
        let cls = classes(&["a"]);
        assert!(evaluate(&[1], &[0], &cls, None).is_err());
        assert!(evaluate(&[0], &[0, 0], &cls, None).is_err());
    }

    #[test]
    fn grouping_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.cfg");
        std::fs::write(&path, "indoor = Lab, Hall\noutdoor = Yard\n").unwrap();
        let g = SceneGrouping::load(&path).unwrap();
        assert_eq!(g.indoor, vec!["Lab".to_string(), "Hall".to_string()]);
        assert_eq!(g.outdoor, vec!["Yard".to_string()]);
        assert_eq!(g.is_indoor("Yard"), Some(false));
        assert_eq!(g.is_indoor("Pool"), None);
    }

    #[test]
    fn system_parse_roundtrip() {
        for s in System::ALL {
            assert_eq!(System::parse(s.as_str()).unwrap(), s);
            assert_eq!(System::parse(s.file_tag()).unwrap(), s);
        }
        assert!(System::parse("gmm").is_err());
    }
}
