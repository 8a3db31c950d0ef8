//! The full i-vector chain, stage by stage: background model, total
//! variability, per-clip i-vectors, LDA/WCCN projection, cosine scoring.
//!
//! ```bash
//! cargo run --example ivector_pipeline
//! ```

use ascm::audio::{derive_sources, load_wav, ManifestEntry};
use ascm::features::{extract_boosted_features, FeatureMatrix, MfccConfig};
use ascm::gmm::{accumulate_stats, train_ubm, EmConfig, SuffStats};
use ascm::ivector::{extract_ivector, length_normalize, train_total_variability, TvConfig};
use ascm::pipeline::{synth_data, BackendModel, SynthSpec};
use ndarray::{concatenate, Array2, ArrayView2, Axis};

fn main() -> ascm::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_classes: 3,
        clips_per_class: 6,
        n_folds: 2,
        seconds: 1.5,
        seed: 17,
        ..SynthSpec::default()
    };
    let manifest = synth_data(&spec, dir.path())?;
    println!(
        "dataset: {} clips over {:?}",
        manifest.entries().len(),
        manifest.classes()
    );

    // fold 2 is held out; everything is trained on fold 1
    let train: Vec<&ManifestEntry> = manifest.other_fold_entries(2).collect();
    let test: Vec<&ManifestEntry> = manifest.fold_entries(2).collect();

    let mfcc = MfccConfig::default();
    let features = |entries: &[&ManifestEntry]| -> ascm::Result<Vec<FeatureMatrix>> {
        entries
            .iter()
            .map(|e| {
                let clip = load_wav(&e.path)?;
                let sources = derive_sources(&clip);
                extract_boosted_features(sources.mean.view(), clip.sample_rate, &mfcc)
            })
            .collect()
    };
    let train_feats = features(&train)?;
    let test_feats = features(&test)?;

    // 1. background model on the pooled training frames
    let views: Vec<ArrayView2<f64>> = train_feats.iter().map(|f| f.data.view()).collect();
    let pooled = concatenate(Axis(0), &views).expect("matching dims");
    let em = EmConfig {
        max_iters: 6,
        seed: 1,
        ..EmConfig::default()
    };
    let (ubm, _) = train_ubm(pooled.view(), 8, &em)?;
    println!("ubm: {} components on {} frames", ubm.n_components(), pooled.nrows());

    // 2. total-variability matrix from per-clip sufficient statistics
    let stats: Vec<SuffStats> = train_feats
        .iter()
        .map(|f| accumulate_stats(&ubm, f.data.view()))
        .collect::<ascm::Result<_>>()?;
    let tv_cfg = TvConfig {
        rank: 8,
        n_iters: 5,
        seed: 2,
        ..TvConfig::default()
    };
    let (t, report) = train_total_variability(&stats, &ubm, &tv_cfg)?;
    println!(
        "total variability: rank {} trained in {} iterations",
        t.rank(),
        report.objective_trace.len()
    );

    // 3. length-normalized i-vectors
    let ivectors = |feats: &[FeatureMatrix]| -> ascm::Result<Array2<f64>> {
        let mut out = Array2::zeros((feats.len(), t.rank()));
        for (i, f) in feats.iter().enumerate() {
            let s = accumulate_stats(&ubm, f.data.view())?;
            let y = extract_ivector(&s, &t, &ubm)?;
            out.row_mut(i).assign(&length_normalize(y.view())?);
        }
        Ok(out)
    };
    let train_ivecs = ivectors(&train_feats)?;
    let test_ivecs = ivectors(&test_feats)?;

    // 4. LDA to class space, WCCN whitening, per-class cosine models
    let labels: Vec<usize> = train
        .iter()
        .map(|e| manifest.class_index(&e.label).unwrap())
        .collect();
    let backend = BackendModel::train(train_ivecs.view(), &labels, manifest.classes(), None)?;

    // 5. score the held-out fold
    let ids: Vec<String> = test.iter().map(|e| e.id.clone()).collect();
    let scores = backend.score(test_ivecs.view(), ids)?;
    let predictions = scores.argmax();
    let mut correct = 0;
    for (e, &p) in test.iter().zip(&predictions) {
        let truth = manifest.class_index(&e.label).unwrap();
        if p == truth {
            correct += 1;
        }
    }
    println!(
        "held-out accuracy: {}/{} ({:.1}%)",
        correct,
        test.len(),
        100.0 * correct as f64 / test.len() as f64
    );
    Ok(())
}
