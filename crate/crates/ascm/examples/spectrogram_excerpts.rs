//! Turn a clip into a log filterbank spectrogram and slide excerpt windows
//! across it, the way the network consumes audio.
//!
//! ```bash
//! cargo run --example spectrogram_excerpts
//! ```

use ascm::audio::{derive_sources, load_wav};
use ascm::features::{excerpt_windows, log_mel_spectrogram, SpectrogramConfig};
use ascm::pipeline::{synth_data, SynthSpec};

fn main() -> ascm::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_classes: 1,
        clips_per_class: 1,
        n_folds: 1,
        seconds: 3.0,
        seed: 21,
        ..SynthSpec::default()
    };
    let manifest = synth_data(&spec, dir.path())?;
    let clip = load_wav(&manifest.entries()[0].path)?;
    let sources = derive_sources(&clip);

    let cfg = SpectrogramConfig {
        n_bands: 40,
        ..SpectrogramConfig::default()
    };
    let spectrogram = log_mel_spectrogram(sources.mean.view(), clip.sample_rate, &cfg)?;
    println!(
        "spectrogram: {} frames x {} bands at {} frames/s",
        spectrogram.n_frames(),
        spectrogram.dims(),
        cfg.frame_rate_fps
    );

    let width = 48;
    for stride in [width / 2, 10] {
        let windows = excerpt_windows(&spectrogram, &clip.id, width, stride)?;
        let starts: Vec<usize> = windows.iter().map(|w| w.start_frame).collect();
        println!(
            "stride {stride:>2}: {} excerpts of {} bands x {width} frames, starts {starts:?}",
            windows.len(),
            windows[0].patch.nrows(),
        );
    }
    println!();
    println!("training uses the half-width stride; scoring slides a denser stride");
    println!("and averages the window probabilities over each clip");
    Ok(())
}
