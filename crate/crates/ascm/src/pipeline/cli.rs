//! Command-line front end.
//!
//! `run-cv` drives the whole cross-validated experiment from a config file.
//! The stage subcommands operate on explicit manifests and files so a custom
//! protocol (say, a fixed evaluation split) can be assembled step by step;
//! `fuse` accepts several fusion models and bags them by averaging weights.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::audio::{derive_sources, load_manifest, load_wav, DatasetManifest, ManifestEntry, Source};
use crate::backend::ScoreMatrix;
use crate::cnn::Network;
use crate::error::{Error, Result};
use crate::features::{extract_boosted_features, log_mel_spectrogram, FeatureMatrix};
use crate::fusion::{bag_fold_fusions, fuse_scores, train_fusion, FusionModel};
use crate::gmm::{accumulate_stats, train_ubm, DiagGmm, SuffStats};
use crate::ivector::{extract_ivector, length_normalize, train_total_variability, TMatrix};
use crate::seed::derive_seed;

use super::run::{
    default_sweep_grid, load_ivectors, run_cv, save_ivectors, score_cnn_system, standard_mfcc,
    sweep_mfcc, train_cnn_system, BackendModel,
};
use super::synth::{synth_data, SynthSpec};
use super::{evaluate, ExperimentConfig, SceneGrouping};

#[derive(Parser)]
#[command(
    name = "ascm",
    version,
    about = "Acoustic scene classification experiments"
)]
struct Cli {
    /// Experiment configuration file (key = value lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root random seed, overriding the configured one.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file or directory for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-clip features for every manifest entry into --out.
    Features {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Feature kind: boosted, standard, or spectrogram.
        #[arg(long, default_value = "boosted")]
        kind: String,
        /// Mono source: left, right, mean, or diff.
        #[arg(long, default_value = "mean")]
        source: String,
    },
    /// Train the universal background model on pooled manifest frames.
    TrainUbm {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Directory of per-clip feature files.
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
    },
    /// Train the total-variability matrix.
    TrainTv {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        #[arg(long, value_name = "PATH")]
        ubm: PathBuf,
    },
    /// Extract length-normalized i-vectors, one row per clip.
    ExtractIvectors {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        #[arg(long, value_name = "PATH")]
        ubm: PathBuf,
        #[arg(long, value_name = "PATH")]
        tv: PathBuf,
    },
    /// Train the projection backend and class models from i-vectors.
    TrainBackend {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH")]
        ivectors: PathBuf,
    },
    /// Score i-vectors against a trained backend.
    Score {
        #[arg(long, value_name = "PATH")]
        ivectors: PathBuf,
        #[arg(long, value_name = "PATH")]
        backend: PathBuf,
    },
    /// Train the spectrogram network on excerpts from every manifest clip.
    TrainCnn {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
    },
    /// Score clips with a trained network.
    ScoreCnn {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        #[arg(long, value_name = "PATH")]
        network: PathBuf,
    },
    /// Train a fusion model on held-out scores (repeat --scores per system).
    TrainFusion {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH", required = true)]
        scores: Vec<PathBuf>,
    },
    /// Apply one fusion model, or bag several by averaging their weights.
    Fuse {
        #[arg(long, value_name = "PATH", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long = "model", value_name = "PATH", required = true)]
        models: Vec<PathBuf>,
    },
    /// Report accuracy metrics for a score file against manifest labels.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH")]
        scores: PathBuf,
        /// Scene grouping file; defaults to the standard indoor/outdoor
        /// split when it covers the classes.
        #[arg(long, value_name = "PATH")]
        grouping: Option<PathBuf>,
    },
    /// Run the configured cross-validated experiment end to end.
    RunCv,
    /// Tabulate single-stream MFCC variants across the fold split.
    SweepMfcc {
        /// Comma-separated observation windows in milliseconds.
        #[arg(long, default_value = "20,60,100", value_name = "LIST")]
        windows: String,
    },
    /// Generate a synthetic labeled dataset under --out.
    SynthData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        clips: usize,
        #[arg(long, default_value_t = 4)]
        folds: u32,
        #[arg(long, default_value_t = 3.0)]
        seconds: f64,
        #[arg(long = "sample-rate", default_value_t = 22050)]
        sample_rate: u32,
    },
}

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }

    match cli.command {
        Command::Features {
            manifest,
            kind,
            source,
        } => cmd_features(&cfg, &manifest, &kind, &source),
        Command::TrainUbm { manifest, features } => cmd_train_ubm(&cfg, &manifest, &features),
        Command::TrainTv {
            manifest,
            features,
            ubm,
        } => cmd_train_tv(&cfg, &manifest, &features, &ubm),
        Command::ExtractIvectors {
            manifest,
            features,
            ubm,
            tv,
        } => cmd_extract_ivectors(&cfg, &manifest, &features, &ubm, &tv),
        Command::TrainBackend { manifest, ivectors } => {
            cmd_train_backend(&cfg, &manifest, &ivectors)
        }
        Command::Score { ivectors, backend } => cmd_score(&cfg, &ivectors, &backend),
        Command::TrainCnn { manifest, features } => cmd_train_cnn(&cfg, &manifest, &features),
        Command::ScoreCnn {
            manifest,
            features,
            network,
        } => cmd_score_cnn(&cfg, &manifest, &features, &network),
        Command::TrainFusion { manifest, scores } => cmd_train_fusion(&cfg, &manifest, &scores),
        Command::Fuse { scores, models } => cmd_fuse(&cfg, &scores, &models),
        Command::Evaluate {
            manifest,
            scores,
            grouping,
        } => cmd_evaluate(&manifest, &scores, grouping.as_deref()),
        Command::RunCv => cmd_run_cv(&cfg),
        Command::SweepMfcc { windows } => cmd_sweep(&cfg, &windows),
        Command::SynthData {
            classes,
            clips,
            folds,
            seconds,
            sample_rate,
        } => cmd_synth(&cfg, classes, clips, folds, seconds, sample_rate),
    }
}

fn out_path(cfg: &ExperimentConfig, what: &str) -> Result<PathBuf> {
    if cfg.out_dir.as_os_str().is_empty() {
        return Err(Error::Config(format!(
            "this command writes {what}; pass --out <path> or set out= in the config"
        )));
    }
    Ok(cfg.out_dir.clone())
}

fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn load_feature_set(
    manifest: &DatasetManifest,
    dir: &Path,
) -> Result<HashMap<String, FeatureMatrix>> {
    manifest
        .entries()
        .iter()
        .map(|e| {
            let path = dir.join(format!("{}.feat", e.id));
            Ok((e.id.clone(), FeatureMatrix::load(&path)?))
        })
        .collect()
}

fn entry_index<'a>(manifest: &'a DatasetManifest) -> HashMap<&'a str, &'a ManifestEntry> {
    manifest
        .entries()
        .iter()
        .map(|e| (e.id.as_str(), e))
        .collect()
}

/// Class index of each scored clip, in the score file's class numbering.
fn labels_for(
    ids: &[String],
    classes: &[String],
    manifest: &DatasetManifest,
) -> Result<Vec<usize>> {
    let by_id = entry_index(manifest);
    ids.iter()
        .map(|id| {
            let entry = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Manifest(format!("clip '{id}' is not in the manifest")))?;
            classes
                .iter()
                .position(|c| c == &entry.label)
                .ok_or_else(|| {
                    Error::Evaluation(format!(
                        "label '{}' is not among the scored classes",
                        entry.label
                    ))
                })
        })
        .collect()
}

fn cmd_features(
    cfg: &ExperimentConfig,
    manifest_path: &Path,
    kind: &str,
    source: &str,
) -> Result<()> {
    let dir = out_path(cfg, "a directory of feature files")?;
    if !matches!(kind, "boosted" | "standard" | "spectrogram") {
        return Err(Error::Config(format!(
            "unknown feature kind '{kind}' (expected boosted, standard, or spectrogram)"
        )));
    }
    let manifest = load_manifest(manifest_path)?;
    let source = Source::parse(source)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let standard = standard_mfcc();
    with_pool(cfg.jobs, || {
        manifest.entries().par_iter().try_for_each(|e| {
            let clip = load_wav(&e.path)?;
            let sources = derive_sources(&clip);
            let signal = sources.get(source);
            let feat = match kind {
                "boosted" => extract_boosted_features(signal, clip.sample_rate, &cfg.mfcc),
                "standard" => extract_boosted_features(signal, clip.sample_rate, &standard),
                _ => log_mel_spectrogram(signal, clip.sample_rate, &cfg.spectrogram),
            }
            .map_err(|err| Error::Feature(format!("clip '{}': {err}", e.id)))?;
            feat.save(dir.join(format!("{}.feat", e.id)))
        })
    })??;
    println!(
        "wrote {} {kind} feature files to {}",
        manifest.entries().len(),
        dir.display()
    );
    Ok(())
}

fn pooled_frames(
    manifest: &DatasetManifest,
    feats: &HashMap<String, FeatureMatrix>,
) -> Result<Array2<f64>> {
    let views: Vec<ArrayView2<f64>> = manifest
        .entries()
        .iter()
        .map(|e| feats[&e.id].data.view())
        .collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Feature(format!("pooling frames: {e}")))
}

fn cmd_train_ubm(cfg: &ExperimentConfig, manifest_path: &Path, features: &Path) -> Result<()> {
    let out = out_path(cfg, "the background model")?;
    let manifest = load_manifest(manifest_path)?;
    let feats = load_feature_set(&manifest, features)?;
    let pooled = pooled_frames(&manifest, &feats)?;
    let mut ubm_cfg = cfg.ubm.clone();
    ubm_cfg.seed = derive_seed(cfg.seed, "cli/ubm");
    let (ubm, report) = train_ubm(pooled.view(), cfg.ubm_components, &ubm_cfg)?;
    ubm.save(&out)?;
    println!(
        "trained {} components on {} frames in {} iterations; final avg log-likelihood {}",
        ubm.n_components(),
        pooled.nrows(),
        report.iterations_run,
        report.log_likelihood_trace.last().unwrap()
    );
    Ok(())
}

fn clip_stats(
    manifest: &DatasetManifest,
    feats: &HashMap<String, FeatureMatrix>,
    ubm: &DiagGmm,
) -> Result<Vec<SuffStats>> {
    manifest
        .entries()
        .iter()
        .map(|e| accumulate_stats(ubm, feats[&e.id].data.view()))
        .collect()
}

fn cmd_train_tv(
    cfg: &ExperimentConfig,
    manifest_path: &Path,
    features: &Path,
    ubm_path: &Path,
) -> Result<()> {
    let out = out_path(cfg, "the total-variability matrix")?;
    let manifest = load_manifest(manifest_path)?;
    let feats = load_feature_set(&manifest, features)?;
    let ubm = DiagGmm::load_model(ubm_path)?;
    let stats = clip_stats(&manifest, &feats, &ubm)?;
    let mut tv_cfg = cfg.tv.clone();
    tv_cfg.seed = derive_seed(cfg.seed, "cli/tv");
    let (t, report) = train_total_variability(&stats, &ubm, &tv_cfg)?;
    t.save(&out)?;
    println!(
        "trained rank-{} matrix on {} clips; objective rose to {}",
        t.rank(),
        stats.len(),
        report.objective_trace.last().unwrap()
    );
    Ok(())
}

fn cmd_extract_ivectors(
    cfg: &ExperimentConfig,
    manifest_path: &Path,
    features: &Path,
    ubm_path: &Path,
    tv_path: &Path,
) -> Result<()> {
    let out = out_path(cfg, "the i-vector table")?;
    let manifest = load_manifest(manifest_path)?;
    let feats = load_feature_set(&manifest, features)?;
    let ubm = DiagGmm::load_model(ubm_path)?;
    let t = TMatrix::load_model(tv_path)?;
    let mut vectors = Array2::<f64>::zeros((manifest.entries().len(), t.rank()));
    let mut ids = Vec::new();
    for (i, e) in manifest.entries().iter().enumerate() {
        let stats = accumulate_stats(&ubm, feats[&e.id].data.view())?;
        let y = extract_ivector(&stats, &t, &ubm)?;
        vectors.row_mut(i).assign(&length_normalize(y.view())?);
        ids.push(e.id.clone());
    }
    save_ivectors(&out, &ids, vectors.view())?;
    println!("wrote {} i-vectors to {}", ids.len(), out.display());
    Ok(())
}

fn cmd_train_backend(
    cfg: &ExperimentConfig,
    manifest_path: &Path,
    ivectors: &Path,
) -> Result<()> {
    let out = out_path(cfg, "the backend model")?;
    let manifest = load_manifest(manifest_path)?;
    let (ids, vectors) = load_ivectors(ivectors)?;
    let by_id = entry_index(&manifest);
    let labels: Vec<usize> = ids
        .iter()
        .map(|id| {
            let entry = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Manifest(format!("clip '{id}' is not in the manifest")))?;
            Ok(manifest.class_index(&entry.label).unwrap())
        })
        .collect::<Result<_>>()?;
    let model = BackendModel::train(vectors.view(), &labels, manifest.classes(), cfg.lda_dims)?;
    model.save(&out)?;
    println!(
        "trained backend over {} classes from {} i-vectors",
        manifest.n_classes(),
        ids.len()
    );
    Ok(())
}

fn cmd_score(cfg: &ExperimentConfig, ivectors: &Path, backend: &Path) -> Result<()> {
    let out = out_path(cfg, "the score table")?;
    let (ids, vectors) = load_ivectors(ivectors)?;
    let model = BackendModel::load(backend)?;
    let scores = model.score(vectors.view(), ids)?;
    scores.save(&out)?;
    println!("scored {} clips to {}", scores.n_clips(), out.display());
    Ok(())
}

fn cmd_train_cnn(cfg: &ExperimentConfig, manifest_path: &Path, features: &Path) -> Result<()> {
    let out = out_path(cfg, "the network model")?;
    let manifest = load_manifest(manifest_path)?;
    let specs = load_feature_set(&manifest, features)?;
    let entries: Vec<&ManifestEntry> = manifest.entries().iter().collect();
    let labels: Vec<usize> = entries
        .iter()
        .map(|e| manifest.class_index(&e.label).unwrap())
        .collect();
    let net = train_cnn_system(&specs, &entries, &labels, manifest.n_classes(), cfg, "cli/cnn")?;
    net.save(&out)?;
    println!(
        "trained network on {} clips over {} classes",
        entries.len(),
        manifest.n_classes()
    );
    Ok(())
}

fn cmd_score_cnn(
    cfg: &ExperimentConfig,
    manifest_path: &Path,
    features: &Path,
    network: &Path,
) -> Result<()> {
    let out = out_path(cfg, "the score table")?;
    let manifest = load_manifest(manifest_path)?;
    let specs = load_feature_set(&manifest, features)?;
    let net = Network::load_model(network)?;
    let entries: Vec<&ManifestEntry> = manifest.entries().iter().collect();
    let scores = score_cnn_system(&net, &specs, &entries, manifest.classes(), cfg)?;
    scores.save(&out)?;
    println!("scored {} clips to {}", scores.n_clips(), out.display());
    Ok(())
}

fn cmd_train_fusion(
    cfg: &ExperimentConfig,
    manifest_path: &Path,
    score_paths: &[PathBuf],
) -> Result<()> {
    let out = out_path(cfg, "the fusion model")?;
    let manifest = load_manifest(manifest_path)?;
    let sets: Vec<ScoreMatrix> = score_paths
        .iter()
        .map(ScoreMatrix::load)
        .collect::<Result<_>>()?;
    let labels = labels_for(&sets[0].clip_ids, &sets[0].classes, &manifest)?;
    let (model, report) = train_fusion(&sets, &labels, &cfg.fusion)?;
    model.save(&out)?;
    println!(
        "fused {} systems; objective fell to {}{}",
        sets.len(),
        report.objective_trace.last().unwrap(),
        if report.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn cmd_fuse(cfg: &ExperimentConfig, score_paths: &[PathBuf], model_paths: &[PathBuf]) -> Result<()> {
    let out = out_path(cfg, "the fused score table")?;
    let sets: Vec<ScoreMatrix> = score_paths
        .iter()
        .map(ScoreMatrix::load)
        .collect::<Result<_>>()?;
    let models: Vec<FusionModel> = model_paths
        .iter()
        .map(FusionModel::load_model)
        .collect::<Result<_>>()?;
    let fused = if models.len() == 1 {
        fuse_scores(&models[0], &sets)?
    } else {
        bag_fold_fusions(&models, &sets)?
    };
    fused.save(&out)?;
    println!("wrote fused scores for {} clips to {}", fused.n_clips(), out.display());
    Ok(())
}

fn cmd_evaluate(manifest_path: &Path, scores_path: &Path, grouping: Option<&Path>) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let scores = ScoreMatrix::load(scores_path)?;
    let labels = labels_for(&scores.clip_ids, &scores.classes, &manifest)?;
    let grouping = match grouping {
        Some(path) => Some(SceneGrouping::load(path)?),
        None => {
            let tut = SceneGrouping::tut16();
            tut.covers(&scores.classes).then_some(tut)
        }
    };
    let metrics = evaluate(&scores.argmax(), &labels, &scores.classes, grouping.as_ref())?;
    println!("clips: {}", metrics.n_clips);
    println!("overall: {}", metrics.overall);
    for (name, acc) in scores.classes.iter().zip(&metrics.per_class) {
        if let Some(a) = acc {
            println!("{name}: {a}");
        }
    }
    if let Some(a) = metrics.indoor {
        println!("indoor: {a}");
    }
    if let Some(a) = metrics.outdoor {
        println!("outdoor: {a}");
    }
    Ok(())
}

fn cmd_run_cv(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.manifest.as_os_str().is_empty() {
        return Err(Error::Config(
            "run-cv needs manifest= in the config file".into(),
        ));
    }
    out_path(cfg, "the experiment outputs")?;
    let outcome = run_cv(cfg)?;
    let table = cfg.out_dir.join("summary.tsv");
    print!(
        "{}",
        fs::read_to_string(&table).map_err(|e| Error::io(&table, e))?
    );
    for (fold, msg) in &outcome.failures {
        eprintln!("warning: fold {fold} failed: {msg}");
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, windows: &str) -> Result<()> {
    if cfg.manifest.as_os_str().is_empty() {
        return Err(Error::Config(
            "sweep-mfcc needs manifest= in the config file".into(),
        ));
    }
    let windows: Vec<f64> = windows
        .split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad window '{w}'")))
        })
        .collect::<Result<_>>()?;
    if windows.is_empty() {
        return Err(Error::Config("no observation windows given".into()));
    }
    let rows = sweep_mfcc(cfg, &default_sweep_grid(&windows))?;

    let mut table = String::from("variant");
    for &(f, _) in &rows[0].fold_accuracies {
        table.push_str(&format!("\tfold{f}"));
    }
    table.push_str("\tavg\n");
    for row in &rows {
        table.push_str(&row.variant);
        for &(_, a) in &row.fold_accuracies {
            table.push_str(&format!("\t{a}"));
        }
        table.push_str(&format!("\t{}\n", row.mean_accuracy));
    }
    print!("{table}");
    if !cfg.out_dir.as_os_str().is_empty() {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        let path = cfg.out_dir.join("sweep.tsv");
        fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn cmd_synth(
    cfg: &ExperimentConfig,
    classes: usize,
    clips: usize,
    folds: u32,
    seconds: f64,
    sample_rate: u32,
) -> Result<()> {
    let dir = out_path(cfg, "the generated dataset")?;
    let spec = SynthSpec {
        n_classes: classes,
        clips_per_class: clips,
        n_folds: folds,
        seconds,
        sample_rate,
        seed: cfg.seed,
    };
    let manifest = synth_data(&spec, &dir)?;
    println!(
        "wrote {} clips across {} folds to {}",
        manifest.entries().len(),
        manifest.n_folds(),
        dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> i32 {
        run(args.iter().copied())
    }

    #[test]
    fn usage_errors_and_help() {
        assert_eq!(run_args(&["ascm", "no-such-command"]), 2);
        assert_eq!(run_args(&["ascm"]), 2);
        assert_eq!(run_args(&["ascm", "--help"]), 0);
        assert_eq!(run_args(&["ascm", "run-cv", "--bogus-flag"]), 2);
    }

    #[test]
    fn missing_out_is_a_clean_failure() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_classes: 2,
            clips_per_class: 2,
            n_folds: 2,
            seconds: 0.4,
            ..SynthSpec::default()
        };
        synth_data(&spec, dir.path()).unwrap();
        let manifest = dir.path().join("manifest.tsv");
        let code = run_args(&["ascm", "features", "--manifest", manifest.to_str().unwrap()]);
        assert_eq!(code, 1);
    }

    #[test]
    fn stage_flow_matches_file_contracts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let data = root.join("data");
        let spec = SynthSpec {
            n_classes: 3,
            clips_per_class: 4,
            n_folds: 2,
            seconds: 0.8,
            seed: 9,
            ..SynthSpec::default()
        };
        synth_data(&spec, &data).unwrap();
        let manifest = data.join("manifest.tsv");
        let config = root.join("exp.conf");
        fs::write(
            &config,
            "ubm.components = 4\nubm.iters = 3\ntv.rank = 4\ntv.iters = 2\n",
        )
        .unwrap();

        let m = manifest.to_str().unwrap();
        let c = config.to_str().unwrap();
        let feat_dir = root.join("feats");
        let p = |path: &Path| path.to_str().unwrap().to_string();

        assert_eq!(
            run_args(&[
                "ascm", "features", "--manifest", m, "--config", c, "--out", &p(&feat_dir)
            ]),
            0
        );
        assert!(feat_dir.join("scene00_000.feat").exists());

        let ubm = root.join("ubm.ascm");
        assert_eq!(
            run_args(&[
                "ascm", "train-ubm", "--manifest", m, "--features", &p(&feat_dir), "--config", c,
                "--out", &p(&ubm)
            ]),
            0
        );
        let tv = root.join("tv.ascm");
        assert_eq!(
            run_args(&[
                "ascm", "train-tv", "--manifest", m, "--features", &p(&feat_dir), "--ubm",
                &p(&ubm), "--config", c, "--out", &p(&tv)
            ]),
            0
        );
        let ivecs = root.join("ivectors.tsv");
        assert_eq!(
            run_args(&[
                "ascm", "extract-ivectors", "--manifest", m, "--features", &p(&feat_dir), "--ubm",
                &p(&ubm), "--tv", &p(&tv), "--config", c, "--out", &p(&ivecs)
            ]),
            0
        );
        let backend = root.join("backend.ascm");
        assert_eq!(
            run_args(&[
                "ascm", "train-backend", "--manifest", m, "--ivectors", &p(&ivecs), "--config", c,
                "--out", &p(&backend)
            ]),
            0
        );
        let scores = root.join("scores.tsv");
        assert_eq!(
            run_args(&[
                "ascm", "score", "--ivectors", &p(&ivecs), "--backend", &p(&backend), "--config",
                c, "--out", &p(&scores)
            ]),
            0
        );
        assert_eq!(
            run_args(&["ascm", "evaluate", "--manifest", m, "--scores", &p(&scores)]),
            0
        );

        let fusion = root.join("fusion.ascm");
        assert_eq!(
            run_args(&[
                "ascm", "train-fusion", "--manifest", m, "--scores", &p(&scores), "--config", c,
                "--out", &p(&fusion)
            ]),
            0
        );
        let fused = root.join("fused.tsv");
        assert_eq!(
            run_args(&[
                "ascm", "fuse", "--scores", &p(&scores), "--model", &p(&fusion), "--out",
                &p(&fused)
            ]),
            0
        );
        let fused_scores = ScoreMatrix::load(&fused).unwrap();
        assert_eq!(fused_scores.n_clips(), 12);

        // bagging two copies of the same model is a no-op on predictions
        let fused2 = root.join("fused2.tsv");
        assert_eq!(
            run_args(&[
                "ascm", "fuse", "--scores", &p(&scores), "--model", &p(&fusion), "--model",
                &p(&fusion), "--out", &p(&fused2)
            ]),
            0
        );
        let bagged = ScoreMatrix::load(&fused2).unwrap();
        assert_eq!(bagged.argmax(), fused_scores.argmax());
    }

    #[test]
    fn synth_data_command_writes_a_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("toy");
        let code = run_args(&[
            "ascm",
            "synth-data",
            "--classes",
            "2",
            "--clips",
            "2",
            "--folds",
            "2",
            "--seconds",
            "0.3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let manifest = load_manifest(out.join("manifest.tsv")).unwrap();
        assert_eq!(manifest.entries().len(), 4);
    }
}
