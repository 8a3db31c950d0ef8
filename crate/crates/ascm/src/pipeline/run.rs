//! Cross-validation runner and the MFCC sweep harness.
//!
//! `run_cv` trains every selected system per fold on the training portion
//! only, scores the held-out portion, persists all intermediate score files,
//! and writes a deterministic summary. Feature extraction is global (a
//! broken clip fails the run with a clear message); training failures abort
//! only their fold.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Array4, ArrayView2, Axis};
use rayon::prelude::*;

use crate::audio::{derive_sources, load_manifest, load_wav, DatasetManifest, ManifestEntry, Source};
use crate::backend::{
    average_channel_scores, build_class_models, cosine_score, train_lda, train_wccn, ClassModels,
    ProjectionModel, ScoreMatrix,
};
use crate::cnn::{compact_spec, predict_clip, train as train_network, vgg_spec, Network};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::features::{
    compute_deltas, excerpt_windows, extract_boosted_features, extract_mfcc, log_mel_spectrogram,
    FeatureMatrix, MfccConfig,
};
use crate::fusion::{fuse_scores, train_fusion};
use crate::gmm::{accumulate_stats, train_ubm, DiagGmm, SuffStats};
use crate::ivector::{extract_ivector, length_normalize, train_total_variability, TMatrix};
use crate::seed::derive_seed;

use super::config::{CnnArch, ExperimentConfig};
use super::provenance::ProvenanceLog;
use super::{evaluate, SceneGrouping, System};

/// Plain MFCC stack for the BAS baseline: 20 coefficients including the 0th
/// plus deltas and double deltas, all from 40 ms observation windows.
pub fn standard_mfcc() -> MfccConfig {
    MfccConfig {
        static_window_ms: 40.0,
        delta_window_ms: 40.0,
        n_static: 20,
        n_delta: 20,
        n_double_delta: 20,
        include_c0_static: true,
        ..MfccConfig::default()
    }
}

/// Per-clip feature variants an experiment may need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FeatKey {
    Boosted(Source),
    Standard,
    Spectrogram,
}

fn needed_features(systems: &[System]) -> Vec<FeatKey> {
    let mut keys = Vec::new();
    let mut push = |k: FeatKey| {
        if !keys.contains(&k) {
            keys.push(k);
        }
    };
    for &sys in systems {
        match sys {
            System::Bas => push(FeatKey::Standard),
            System::Smb => push(FeatKey::Boosted(Source::Mean)),
            System::Mmb | System::Cmb => {
                for src in Source::ALL {
                    push(FeatKey::Boosted(src));
                }
            }
            System::Vgg => push(FeatKey::Spectrogram),
            System::Hyb => {
                for src in Source::ALL {
                    push(FeatKey::Boosted(src));
                }
                push(FeatKey::Spectrogram);
            }
        }
    }
    keys
}

type FeatureCache = HashMap<FeatKey, HashMap<String, FeatureMatrix>>;

fn extract_features(
    manifest: &DatasetManifest,
    keys: &[FeatKey],
    cfg: &ExperimentConfig,
) -> Result<FeatureCache> {
    let standard = standard_mfcc();
    let per_clip: Vec<(String, Vec<(FeatKey, FeatureMatrix)>)> = manifest
        .entries()
        .par_iter()
        .map(|e| {
            let clip = load_wav(&e.path)?;
            let sources = derive_sources(&clip);
            let mut out = Vec::with_capacity(keys.len());
            for &key in keys {
                let feat = match key {
                    FeatKey::Boosted(src) => {
                        extract_boosted_features(sources.get(src), clip.sample_rate, &cfg.mfcc)
                    }
                    FeatKey::Standard => {
                        extract_boosted_features(sources.mean.view(), clip.sample_rate, &standard)
                    }
                    FeatKey::Spectrogram => {
                        log_mel_spectrogram(sources.mean.view(), clip.sample_rate, &cfg.spectrogram)
                    }
                }
                .map_err(|err| Error::Feature(format!("clip '{}': {err}", e.id)))?;
                out.push((key, feat));
            }
            Ok((e.id.clone(), out))
        })
        .collect::<Result<_>>()?;

    let mut cache: FeatureCache = HashMap::new();
    for (id, feats) in per_clip {
        for (key, feat) in feats {
            cache.entry(key).or_default().insert(id.clone(), feat);
        }
    }
    Ok(cache)
}

/// Projection backend plus class models, trained and stored together.
#[derive(Debug, Clone)]
pub struct BackendModel {
    pub projection: ProjectionModel,
    pub models: ClassModels,
}

impl BackendModel {
    /// Train LDA, then WCCN in the reduced space, then class mean models,
    /// from length-normalized i-vectors.
    pub fn train(
        vectors: ArrayView2<f64>,
        labels: &[usize],
        classes: &[String],
        lda_dims: Option<usize>,
    ) -> Result<Self> {
        let n_classes = classes.len();
        let dims = lda_dims.unwrap_or(n_classes.saturating_sub(1));
        let lda = train_lda(vectors, labels, n_classes, dims)?;
        let reduced = vectors.dot(&lda);
        let wccn = train_wccn(reduced.view(), labels, n_classes)?;
        let projected = reduced.dot(&wccn);
        let models = build_class_models(projected.view(), labels, classes)?;
        Ok(Self {
            projection: ProjectionModel {
                lda,
                wccn,
                classes: classes.to_vec(),
            },
            models,
        })
    }

    /// Cosine-score each row vector against the class models.
    pub fn score(&self, vectors: ArrayView2<f64>, clip_ids: Vec<String>) -> Result<ScoreMatrix> {
        let mut rows = Array2::<f64>::zeros((vectors.nrows(), self.models.classes.len()));
        for (i, v) in vectors.rows().into_iter().enumerate() {
            let projected = self.projection.project(v)?;
            rows.row_mut(i)
                .assign(&cosine_score(projected.view(), &self.models)?);
        }
        ScoreMatrix::new(rows, clip_ids, self.models.classes.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut c = Container::new("backend");
        c.put_array2("lda", &self.projection.lda);
        c.put_array2("wccn", &self.projection.wccn);
        c.put_array2("models", &self.models.models);
        c.put_text("classes", &self.projection.classes.join("\n"));
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::load(path)?;
        c.expect_kind("backend")?;
        let classes: Vec<String> = c.text("classes")?.lines().map(str::to_string).collect();
        Ok(Self {
            projection: ProjectionModel {
                lda: c.array2("lda")?,
                wccn: c.array2("wccn")?,
                classes: classes.clone(),
            },
            models: ClassModels {
                models: c.array2("models")?,
                classes,
            },
        })
    }
}

/// One fold's trained i-vector chain for a single source.
struct IvectorSystem {
    ubm: DiagGmm,
    t: TMatrix,
    backend: BackendModel,
}

fn clip_stats(ubm: &DiagGmm, feat: &FeatureMatrix) -> Result<SuffStats> {
    accumulate_stats(ubm, feat.data.view())
}

fn normalized_ivector(sys_ubm: &DiagGmm, t: &TMatrix, feat: &FeatureMatrix) -> Result<Array1<f64>> {
    let stats = clip_stats(sys_ubm, feat)?;
    let y = extract_ivector(&stats, t, sys_ubm)?;
    length_normalize(y.view())
}

fn get_feat<'a>(
    feats: &'a HashMap<String, FeatureMatrix>,
    id: &str,
) -> Result<&'a FeatureMatrix> {
    feats
        .get(id)
        .ok_or_else(|| Error::Feature(format!("no features for clip '{id}'")))
}

/// Train UBM, total-variability matrix, and backend on the training clips.
///
/// `seed_tag` names the stage for sub-seed derivation (e.g.
/// `fold1/boosted/mean`), so the same tag always yields the same models.
fn train_ivector_system(
    feats: &HashMap<String, FeatureMatrix>,
    train: &[&ManifestEntry],
    labels: &[usize],
    classes: &[String],
    cfg: &ExperimentConfig,
    seed_tag: &str,
) -> Result<IvectorSystem> {
    let mats: Vec<&FeatureMatrix> = train
        .iter()
        .map(|e| get_feat(feats, &e.id))
        .collect::<Result<_>>()?;
    let views: Vec<ArrayView2<f64>> = mats.iter().map(|m| m.data.view()).collect();
    let pooled = concatenate(Axis(0), &views)
        .map_err(|e| Error::Feature(format!("pooling frames: {e}")))?;

    let mut ubm_cfg = cfg.ubm.clone();
    ubm_cfg.seed = derive_seed(cfg.seed, &format!("{seed_tag}/ubm"));
    let (ubm, _) = train_ubm(pooled.view(), cfg.ubm_components, &ubm_cfg)?;

    let stats: Vec<SuffStats> = mats
        .iter()
        .map(|m| clip_stats(&ubm, m))
        .collect::<Result<_>>()?;
    let mut tv_cfg = cfg.tv.clone();
    tv_cfg.seed = derive_seed(cfg.seed, &format!("{seed_tag}/tv"));
    let (t, _) = train_total_variability(&stats, &ubm, &tv_cfg)?;

    let mut ivecs = Array2::<f64>::zeros((mats.len(), t.rank()));
    for (i, m) in mats.iter().enumerate() {
        ivecs
            .row_mut(i)
            .assign(&normalized_ivector(&ubm, &t, m)?);
    }
    let backend = BackendModel::train(ivecs.view(), labels, classes, cfg.lda_dims)?;
    Ok(IvectorSystem { ubm, t, backend })
}

fn score_ivector_system(
    sys: &IvectorSystem,
    feats: &HashMap<String, FeatureMatrix>,
    test: &[&ManifestEntry],
) -> Result<ScoreMatrix> {
    let mut ivecs = Array2::<f64>::zeros((test.len(), sys.t.rank()));
    for (i, e) in test.iter().enumerate() {
        let feat = get_feat(feats, &e.id)?;
        ivecs
            .row_mut(i)
            .assign(&normalized_ivector(&sys.ubm, &sys.t, feat)?);
    }
    let ids = test.iter().map(|e| e.id.clone()).collect();
    sys.backend.score(ivecs.view(), ids)
}

fn network_spec_for(cfg: &ExperimentConfig, n_classes: usize) -> Result<crate::cnn::NetworkSpec> {
    let bands = cfg.spectrogram.n_bands;
    match cfg.cnn_arch {
        CnnArch::Full => {
            if bands != cfg.excerpt_width {
                return Err(Error::Config(format!(
                    "the full architecture needs square excerpts, got {bands} bands x {} frames",
                    cfg.excerpt_width
                )));
            }
            Ok(vgg_spec(n_classes, cfg.excerpt_width))
        }
        CnnArch::Compact => Ok(compact_spec(n_classes, bands, cfg.excerpt_width)),
    }
}

pub(crate) fn train_cnn_system(
    specs: &HashMap<String, FeatureMatrix>,
    train: &[&ManifestEntry],
    labels: &[usize],
    n_classes: usize,
    cfg: &ExperimentConfig,
    seed_tag: &str,
) -> Result<Network> {
    let width = cfg.excerpt_width;
    let mut patches = Vec::new();
    let mut patch_labels = Vec::new();
    for (e, &label) in train.iter().zip(labels) {
        let spec = get_feat(specs, &e.id)?;
        for ex in excerpt_windows(spec, &e.id, width, cfg.train_stride())? {
            patches.push(ex.patch);
            patch_labels.push(label);
        }
    }
    let bands = cfg.spectrogram.n_bands;
    let mut data = Array4::<f64>::zeros((patches.len(), 1, bands, width));
    for (i, p) in patches.iter().enumerate() {
        data.slice_mut(s![i, 0, .., ..]).assign(p);
    }

    let mut net = Network::init(
        network_spec_for(cfg, n_classes)?,
        derive_seed(cfg.seed, &format!("{seed_tag}/init")),
    )?;
    let mut train_cfg = cfg.cnn.clone();
    train_cfg.seed = derive_seed(cfg.seed, &format!("{seed_tag}/train"));
    train_network(&mut net, &data, &patch_labels, &train_cfg)?;
    Ok(net)
}

pub(crate) fn score_cnn_system(
    net: &Network,
    specs: &HashMap<String, FeatureMatrix>,
    test: &[&ManifestEntry],
    classes: &[String],
    cfg: &ExperimentConfig,
) -> Result<ScoreMatrix> {
    let mut rows = Array2::<f64>::zeros((test.len(), classes.len()));
    for (i, e) in test.iter().enumerate() {
        let spec = get_feat(specs, &e.id)?;
        let pred = predict_clip(net, spec, &e.id, cfg.excerpt_width, cfg.test_stride)?;
        rows.row_mut(i).assign(&pred.log_scores());
    }
    let ids = test.iter().map(|e| e.id.clone()).collect();
    ScoreMatrix::new(rows, ids, classes.to_vec())
}

/// One system's held-out results on one fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: u32,
    pub system: System,
    pub scores: ScoreMatrix,
    pub predictions: Vec<usize>,
    /// Percent correct on the held-out clips.
    pub accuracy: f64,
    /// Aligned with the experiment's class list; `None` where the fold has
    /// no clips of that class.
    pub per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SystemSummary {
    pub system: System,
    pub fold_accuracies: Vec<(u32, f64)>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub classes: Vec<String>,
    pub results: Vec<FoldResult>,
    /// Folds that aborted, with their diagnostics.
    pub failures: Vec<(u32, String)>,
    pub summary: Vec<SystemSummary>,
}

impl CvOutcome {
    pub fn system_summary(&self, system: System) -> Option<&SystemSummary> {
        self.summary.iter().find(|s| s.system == system)
    }

    pub fn fold_result(&self, system: System, fold: u32) -> Option<&FoldResult> {
        self.results
            .iter()
            .find(|r| r.system == system && r.fold == fold)
    }
}

struct FoldOutput {
    results: Vec<FoldResult>,
    provenance: ProvenanceLog,
}

fn label_indices(entries: &[&ManifestEntry], manifest: &DatasetManifest) -> Vec<usize> {
    entries
        .iter()
        .map(|e| manifest.class_index(&e.label).unwrap())
        .collect()
}

fn run_fold(
    manifest: &DatasetManifest,
    fold: u32,
    cfg: &ExperimentConfig,
    feats: &FeatureCache,
    out_dir: &Path,
) -> Result<FoldOutput> {
    let train: Vec<&ManifestEntry> = manifest.other_fold_entries(fold).collect();
    let test: Vec<&ManifestEntry> = manifest.fold_entries(fold).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::Manifest(format!(
            "fold {fold} has an empty train or test portion"
        )));
    }
    let classes: Vec<String> = manifest.classes().to_vec();
    let train_labels = label_indices(&train, manifest);
    let test_labels = label_indices(&test, manifest);
    let train_ids: Vec<String> = train.iter().map(|e| e.id.clone()).collect();
    let test_ids: Vec<String> = test.iter().map(|e| e.id.clone()).collect();

    let fold_dir = out_dir.join(format!("fold{fold}"));
    fs::create_dir_all(&fold_dir).map_err(|e| Error::io(&fold_dir, e))?;

    let mut provenance = ProvenanceLog::new();
    let record_chain = |provenance: &mut ProvenanceLog, tag: &str| {
        for stage in ["ubm", "tv", "backend"] {
            provenance.record(fold, &format!("{tag}/{stage}"), train_ids.clone());
        }
    };

    let selected = &cfg.systems;
    let has = |s: System| selected.contains(&s);
    let need_all_sources = has(System::Mmb) || has(System::Cmb) || has(System::Hyb);
    let need_mean_boosted = need_all_sources || has(System::Smb);
    let need_cnn = has(System::Vgg) || has(System::Hyb);

    // per-source boosted systems
    let mut source_scores: HashMap<Source, ScoreMatrix> = HashMap::new();
    let sources: Vec<Source> = if need_all_sources {
        Source::ALL.to_vec()
    } else if need_mean_boosted {
        vec![Source::Mean]
    } else {
        Vec::new()
    };
    for src in sources {
        let tag = format!("fold{fold}/boosted/{src}");
        let key = FeatKey::Boosted(src);
        let sys = train_ivector_system(
            &feats[&key],
            &train,
            &train_labels,
            &classes,
            cfg,
            &tag,
        )?;
        record_chain(&mut provenance, &format!("boosted/{src}"));
        let scores = score_ivector_system(&sys, &feats[&key], &test)?;
        scores.save(fold_dir.join(format!("boosted_{src}.tsv")))?;
        source_scores.insert(src, scores);
    }

    let bas_scores = if has(System::Bas) {
        let tag = format!("fold{fold}/standard/mean");
        let sys = train_ivector_system(
            &feats[&FeatKey::Standard],
            &train,
            &train_labels,
            &classes,
            cfg,
            &tag,
        )?;
        record_chain(&mut provenance, "standard/mean");
        Some(score_ivector_system(&sys, &feats[&FeatKey::Standard], &test)?)
    } else {
        None
    };

    let mmb_scores = if need_all_sources {
        let mats: Vec<ScoreMatrix> = Source::ALL
            .iter()
            .map(|s| source_scores[s].clone())
            .collect();
        Some(average_channel_scores(&mats)?)
    } else {
        None
    };

    let vgg_scores = if need_cnn {
        let tag = format!("fold{fold}/cnn");
        let net = train_cnn_system(
            &feats[&FeatKey::Spectrogram],
            &train,
            &train_labels,
            classes.len(),
            cfg,
            &tag,
        )?;
        provenance.record(fold, "cnn", train_ids.clone());
        Some(score_cnn_system(
            &net,
            &feats[&FeatKey::Spectrogram],
            &test,
            &classes,
            cfg,
        )?)
    } else {
        None
    };

    // calibration and fusion train on this fold's held-out scores, produced
    // by models that never saw the fold
    let mut fuse_on = |sets: Vec<ScoreMatrix>, name: &str| -> Result<ScoreMatrix> {
        let (model, _) = train_fusion(&sets, &test_labels, &cfg.fusion)?;
        model.save(fold_dir.join(format!("{name}_fusion.ascm")))?;
        provenance.record(fold, &format!("fusion/{name}"), test_ids.clone());
        fuse_scores(&model, &sets)
    };

    let mut results = Vec::new();
    for &system in selected {
        let scores = match system {
            System::Bas => bas_scores.clone().unwrap(),
            System::Smb => source_scores[&Source::Mean].clone(),
            System::Mmb => mmb_scores.clone().unwrap(),
            System::Cmb => fuse_on(vec![mmb_scores.clone().unwrap()], "cmb")?,
            System::Vgg => vgg_scores.clone().unwrap(),
            System::Hyb => fuse_on(
                vec![mmb_scores.clone().unwrap(), vgg_scores.clone().unwrap()],
                "hyb",
            )?,
        };
        scores.save(fold_dir.join(format!("{}.tsv", system.file_tag())))?;
        let predictions = scores.argmax();
        let metrics = evaluate(&predictions, &test_labels, &classes, None)?;
        results.push(FoldResult {
            fold,
            system,
            scores,
            predictions,
            accuracy: metrics.overall,
            per_class: metrics.per_class,
        });
    }
    Ok(FoldOutput {
        results,
        provenance,
    })
}

fn effective_grouping(cfg: &ExperimentConfig, classes: &[String]) -> Option<SceneGrouping> {
    match &cfg.grouping {
        Some(g) => Some(g.clone()),
        None => {
            let tut = SceneGrouping::tut16();
            tut.covers(classes).then_some(tut)
        }
    }
}

/// Run the full cross-validated experiment described by `cfg`.
///
/// Writes per-fold score files, fusion models, a provenance log, and the
/// summary pair (`summary.tsv`, `summary.txt`) under the output directory.
/// A failed fold is reported in `failures` while the others proceed.
pub fn run_cv(cfg: &ExperimentConfig) -> Result<CvOutcome> {
    let manifest = load_manifest(&cfg.manifest)?;
    if manifest.n_folds() < 2 {
        return Err(Error::Manifest(
            "cross-validation needs a manifest with at least 2 folds".into(),
        ));
    }
    if cfg.systems.is_empty() {
        return Err(Error::Config("no systems selected".into()));
    }
    if let Some(g) = &cfg.grouping {
        g.validate(manifest.classes())?;
    }
    let needs_cnn = cfg.systems.contains(&System::Vgg) || cfg.systems.contains(&System::Hyb);
    if needs_cnn {
        // surface an inconsistent architecture before any training runs
        network_spec_for(cfg, manifest.n_classes())?.shape_trace()?;
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let keys = needed_features(&cfg.systems);
    let feats = pool.install(|| extract_features(&manifest, &keys, cfg))?;

    let folds: Vec<u32> = (1..=manifest.n_folds()).collect();
    let outputs: Vec<(u32, Result<FoldOutput>)> = pool.install(|| {
        folds
            .par_iter()
            .map(|&f| (f, run_fold(&manifest, f, cfg, &feats, &cfg.out_dir)))
            .collect()
    });

    let mut results = Vec::new();
    let mut provenance = ProvenanceLog::new();
    let mut failures = Vec::new();
    for (fold, out) in outputs {
        match out {
            Ok(o) => {
                results.extend(o.results);
                provenance.extend(o.provenance);
            }
            Err(e) => failures.push((fold, e.to_string())),
        }
    }
    if results.is_empty() {
        return Err(Error::Training(format!(
            "every fold failed; fold {} says: {}",
            failures[0].0, failures[0].1
        )));
    }
    provenance.verify_no_leakage(&manifest, &["fusion/"])?;
    provenance.save(cfg.out_dir.join("provenance.log"))?;

    let summary = summarize(&cfg.systems, &results);
    let classes: Vec<String> = manifest.classes().to_vec();
    let outcome = CvOutcome {
        classes,
        results,
        failures,
        summary,
    };
    write_summary_tsv(&outcome, &manifest, cfg.out_dir.join("summary.tsv"))?;
    write_summary_txt(&outcome, &manifest, cfg, cfg.out_dir.join("summary.txt"))?;
    Ok(outcome)
}

fn summarize(systems: &[System], results: &[FoldResult]) -> Vec<SystemSummary> {
    let mut out = Vec::new();
    for &system in systems {
        let mut fold_accuracies: Vec<(u32, f64)> = results
            .iter()
            .filter(|r| r.system == system)
            .map(|r| (r.fold, r.accuracy))
            .collect();
        fold_accuracies.sort_by_key(|&(f, _)| f);
        if fold_accuracies.is_empty() {
            continue;
        }
        let mean_accuracy =
            fold_accuracies.iter().map(|&(_, a)| a).sum::<f64>() / fold_accuracies.len() as f64;
        out.push(SystemSummary {
            system,
            fold_accuracies,
            mean_accuracy,
        });
    }
    out
}

fn write_summary_tsv(
    outcome: &CvOutcome,
    manifest: &DatasetManifest,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("system");
    for f in 1..=manifest.n_folds() {
        out.push_str(&format!("\tfold{f}"));
    }
    out.push_str("\tavg\n");
    for s in &outcome.summary {
        out.push_str(s.system.as_str());
        for f in 1..=manifest.n_folds() {
            out.push('\t');
            if let Some(&(_, a)) = s.fold_accuracies.iter().find(|&&(ff, _)| ff == f) {
                out.push_str(&format!("{a}"));
            }
        }
        out.push_str(&format!("\t{}\n", s.mean_accuracy));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_summary_txt(
    outcome: &CvOutcome,
    manifest: &DatasetManifest,
    cfg: &ExperimentConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("cross-validation summary\n");
    out.push_str(&format!("seed: {}\n", cfg.seed));
    out.push_str(&format!("classes: {}\n", outcome.classes.join(", ")));
    out.push_str(&format!("folds: {}\n\n", manifest.n_folds()));

    for s in &outcome.summary {
        out.push_str(&format!("{}:", s.system.as_str()));
        for &(f, a) in &s.fold_accuracies {
            out.push_str(&format!("  fold {f}: {a}"));
        }
        out.push_str(&format!("  avg: {}\n", s.mean_accuracy));
    }

    // pooled held-out metrics across all succeeded folds
    let grouping = effective_grouping(cfg, &outcome.classes);
    let fold_labels: HashMap<u32, Vec<usize>> = (1..=manifest.n_folds())
        .map(|f| {
            let entries: Vec<&ManifestEntry> = manifest.fold_entries(f).collect();
            (f, label_indices(&entries, manifest))
        })
        .collect();
    out.push_str("\npooled held-out metrics\n");
    for s in &outcome.summary {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for r in outcome.results.iter().filter(|r| r.system == s.system) {
            preds.extend_from_slice(&r.predictions);
            labels.extend_from_slice(&fold_labels[&r.fold]);
        }
        let m = evaluate(&preds, &labels, &outcome.classes, grouping.as_ref())?;
        out.push_str(&format!("{}: overall {}\n", s.system.as_str(), m.overall));
        for (name, acc) in outcome.classes.iter().zip(&m.per_class) {
            if let Some(a) = acc {
                out.push_str(&format!("  {name}: {a}\n"));
            }
        }
        if let Some(a) = m.indoor {
            out.push_str(&format!("  indoor: {a}\n"));
        }
        if let Some(a) = m.outdoor {
            out.push_str(&format!("  outdoor: {a}\n"));
        }
    }

    if !outcome.failures.is_empty() {
        out.push_str("\nfailed folds\n");
        for (f, msg) in &outcome.failures {
            out.push_str(&format!("  fold {f}: {msg}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write id-tagged vectors as TSV, one clip per line.
pub fn save_ivectors(
    path: impl AsRef<Path>,
    ids: &[String],
    vectors: ArrayView2<f64>,
) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != vectors.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids for {} vectors",
            ids.len(),
            vectors.nrows()
        )));
    }
    let mut out = String::new();
    for (id, row) in ids.iter().zip(vectors.rows()) {
        out.push_str(id);
        for v in row {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_ivectors(path: impl AsRef<Path>) -> Result<(Vec<String>, Array2<f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap();
        let values: Vec<f64> = fields
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::Feature(format!(
                        "{}:{}: bad vector entry '{v}'",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if values.is_empty() || !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Feature(format!(
                "{}:{}: empty or non-finite vector",
                path.display(),
                i + 1
            )));
        }
        if let Some(first) = rows.first() {
            if values.len() != first.len() {
                return Err(Error::Feature(format!(
                    "{}:{}: vector has {} entries, expected {}",
                    path.display(),
                    i + 1,
                    values.len(),
                    first.len()
                )));
            }
        }
        ids.push(id.to_string());
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Feature(format!(
            "{}: no vectors",
            path.display()
        )));
    }
    let dims = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let vectors = Array2::from_shape_vec((ids.len(), dims), flat)
        .map_err(|e| Error::Feature(format!("{}: {e}", path.display())))?;
    Ok((ids, vectors))
}

/// A single MFCC stream the sweep can evaluate on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Statics,
    Deltas,
    DoubleDeltas,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Statics => "statics",
            Stream::Deltas => "deltas",
            Stream::DoubleDeltas => "double_deltas",
        }
    }
}

#[derive(Debug, Clone)]
pub enum VariantKind {
    /// The tuned stack, bit-identical to a direct SMB run.
    Boosted,
    Single {
        stream: Stream,
        window_ms: f64,
        include_c0: bool,
    },
}

#[derive(Debug, Clone)]
pub struct SweepVariant {
    pub name: String,
    pub kind: VariantKind,
}

/// The tuning grid: each stream alone at each window, with and without the
/// 0th coefficient, plus the combined stack as a reference row.
pub fn default_sweep_grid(windows_ms: &[f64]) -> Vec<SweepVariant> {
    let mut out = Vec::new();
    for stream in [Stream::Statics, Stream::Deltas, Stream::DoubleDeltas] {
        for &w in windows_ms {
            for include_c0 in [true, false] {
                let c0 = if include_c0 { "c0" } else { "noc0" };
                out.push(SweepVariant {
                    name: format!("{}_w{w}_{c0}", stream.as_str()),
                    kind: VariantKind::Single {
                        stream,
                        window_ms: w,
                        include_c0,
                    },
                });
            }
        }
    }
    out.push(SweepVariant {
        name: "boosted".into(),
        kind: VariantKind::Boosted,
    });
    out
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub variant: String,
    pub fold_accuracies: Vec<(u32, f64)>,
    pub mean_accuracy: f64,
}

fn variant_features(
    signal: ndarray::ArrayView1<f64>,
    fs: u32,
    kind: &VariantKind,
    base: &MfccConfig,
) -> Result<FeatureMatrix> {
    match kind {
        VariantKind::Boosted => extract_boosted_features(signal, fs, base),
        VariantKind::Single {
            stream,
            window_ms,
            include_c0,
        } => {
            let m = extract_mfcc(signal, fs, *window_ms, 20, *include_c0, base)?;
            Ok(match stream {
                Stream::Statics => m,
                Stream::Deltas => compute_deltas(&m, base.delta_span),
                Stream::DoubleDeltas => {
                    compute_deltas(&compute_deltas(&m, base.delta_span), base.delta_span)
                }
            })
        }
    }
}

/// Run the single-source i-vector system once per grid variant and tabulate
/// cross-validated accuracy.
pub fn sweep_mfcc(cfg: &ExperimentConfig, variants: &[SweepVariant]) -> Result<Vec<SweepRow>> {
    let manifest = load_manifest(&cfg.manifest)?;
    if manifest.n_folds() < 2 {
        return Err(Error::Manifest(
            "the sweep needs a manifest with at least 2 folds".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    // the sweep only consumes the averaged channel
    let mean_signals: Vec<(String, Array1<f64>, u32)> = pool.install(|| {
        manifest
            .entries()
            .par_iter()
            .map(|e| {
                let clip = load_wav(&e.path)?;
                let sources = derive_sources(&clip);
                Ok((e.id.clone(), sources.mean, clip.sample_rate))
            })
            .collect::<Result<_>>()
    })?;

    let classes: Vec<String> = manifest.classes().to_vec();
    let mut rows = Vec::new();
    for variant in variants {
        let feats: HashMap<String, FeatureMatrix> = pool.install(|| {
            mean_signals
                .par_iter()
                .map(|(id, signal, fs)| {
                    let f = variant_features(signal.view(), *fs, &variant.kind, &cfg.mfcc)
                        .map_err(|err| Error::Feature(format!("clip '{id}': {err}")))?;
                    Ok((id.clone(), f))
                })
                .collect::<Result<_>>()
        })?;
        let tag_base = match variant.kind {
            VariantKind::Boosted => "boosted/mean".to_string(),
            _ => format!("sweep/{}/mean", variant.name),
        };
        let mut fold_accuracies = Vec::new();
        for fold in 1..=manifest.n_folds() {
            let train: Vec<&ManifestEntry> = manifest.other_fold_entries(fold).collect();
            let test: Vec<&ManifestEntry> = manifest.fold_entries(fold).collect();
            let train_labels = label_indices(&train, &manifest);
            let test_labels = label_indices(&test, &manifest);
            let sys = train_ivector_system(
                &feats,
                &train,
                &train_labels,
                &classes,
                cfg,
                &format!("fold{fold}/{tag_base}"),
            )?;
            let scores = score_ivector_system(&sys, &feats, &test)?;
            let metrics = evaluate(&scores.argmax(), &test_labels, &classes, None)?;
            fold_accuracies.push((fold, metrics.overall));
        }
        let mean_accuracy =
            fold_accuracies.iter().map(|&(_, a)| a).sum::<f64>() / fold_accuracies.len() as f64;
        rows.push(SweepRow {
            variant: variant.name.clone(),
            fold_accuracies,
            mean_accuracy,
        });
    }
    Ok(rows)
}
