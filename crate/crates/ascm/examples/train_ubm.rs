//! Fit a diagonal-covariance background model with EM on frames drawn from a
//! known mixture, and watch the likelihood climb.
//!
//! ```bash
//! cargo run --example train_ubm
//! ```

use ascm::gmm::{train_ubm, EmConfig};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> ascm::Result<()> {
    // three well-separated 2-D Gaussians with different spreads
    let centers = [(-4.0, 0.0), (3.0, 3.0), (2.0, -4.0)];
    let spreads = [0.6, 1.0, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 3000;
    let mut frames = Array2::<f64>::zeros((n, 2));
    for i in 0..n {
        let k = i % 3;
        let (cx, cy) = centers[k];
        let gauss = |rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random::<f64>().max(1e-12);
            let v: f64 = rng.random();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        };
        frames[[i, 0]] = cx + spreads[k] * gauss(&mut rng);
        frames[[i, 1]] = cy + spreads[k] * gauss(&mut rng);
    }

    let cfg = EmConfig {
        max_iters: 12,
        seed: 1,
        ..EmConfig::default()
    };
    let (ubm, report) = train_ubm(frames.view(), 3, &cfg)?;

    println!("average log-likelihood per EM iteration:");
    for (i, ll) in report.log_likelihood_trace.iter().enumerate() {
        println!("  iter {i:>2}: {ll:.6}");
    }
    println!();
    println!("recovered components (weight, mean, variance):");
    for k in 0..ubm.n_components() {
        println!(
            "  w={:.3}  mean=({:+.2}, {:+.2})  var=({:.2}, {:.2})",
            ubm.weights[k],
            ubm.means[[k, 0]],
            ubm.means[[k, 1]],
            ubm.variances[[k, 0]],
            ubm.variances[[k, 1]]
        );
    }
    Ok(())
}
