//! Extract the boosted MFCC stack: short-window statics next to deltas and
//! double deltas computed from a longer observation window.
//!
//! ```bash
//! cargo run --example boosted_mfcc
//! ```

use ascm::audio::{derive_sources, load_wav};
use ascm::features::{extract_boosted_features, MfccConfig};
use ascm::pipeline::{synth_data, SynthSpec};

fn main() -> ascm::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_classes: 1,
        clips_per_class: 1,
        n_folds: 1,
        seconds: 3.0,
        seed: 3,
        ..SynthSpec::default()
    };
    let manifest = synth_data(&spec, dir.path())?;
    let clip = load_wav(&manifest.entries()[0].path)?;
    let sources = derive_sources(&clip);

    let cfg = MfccConfig::default();
    let feats = extract_boosted_features(sources.mean.view(), clip.sample_rate, &cfg)?;
    println!(
        "{} frames x {} dims at {} frames/s",
        feats.n_frames(),
        feats.dims(),
        feats.frame_rate
    );
    println!(
        "layout: {} statics from {} ms windows, then {} deltas and {} double",
        cfg.n_static, cfg.static_window_ms, cfg.n_delta, cfg.n_double_delta
    );
    println!(
        "deltas from {} ms windows, giving {} dims per frame",
        cfg.delta_window_ms,
        cfg.total_dims()
    );

    let frame = feats.data.row(feats.n_frames() / 2);
    let preview: Vec<String> = frame.iter().take(6).map(|v| format!("{v:8.3}")).collect();
    println!("mid-clip frame starts with [{} ...]", preview.join(" "));
    Ok(())
}
