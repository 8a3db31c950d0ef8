//! Derive the four mono sources from a stereo clip and compare their energy.
//!
//! ```bash
//! cargo run --example derive_sources
//! ```

use ascm::audio::{derive_sources, load_wav, Source};
use ascm::pipeline::{synth_data, SynthSpec};

fn main() -> ascm::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_classes: 1,
        clips_per_class: 1,
        n_folds: 1,
        seconds: 2.0,
        seed: 7,
        ..SynthSpec::default()
    };
    let manifest = synth_data(&spec, dir.path())?;
    let entry = &manifest.entries()[0];

    let clip = load_wav(&entry.path)?;
    println!(
        "loaded '{}' at {} Hz, {} samples per channel",
        clip.id,
        clip.sample_rate,
        clip.left.len()
    );

    let sources = derive_sources(&clip);
    for source in Source::ALL {
        let signal = sources.get(source);
        let energy = signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64;
        println!("{:>5}: mean energy {energy:.6}", source.as_str());
    }
    println!();
    println!("left and right share most of the scene, so the averaged source keeps");
    println!("it while the difference source is left with the small channel residue");
    Ok(())
}
