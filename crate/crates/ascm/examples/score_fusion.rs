//! Fuse two scoring systems with multi-class linear-logistic regression and
//! compare the fused accuracy against each system alone.
//!
//! ```bash
//! cargo run --example score_fusion
//! ```

use ascm::backend::ScoreMatrix;
use ascm::fusion::{fuse_scores, train_fusion, FusionTrainConfig};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn accuracy(scores: &ScoreMatrix, labels: &[usize]) -> f64 {
    let hits = scores
        .argmax()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    100.0 * hits as f64 / labels.len() as f64
}

fn main() -> ascm::Result<()> {
    let classes: Vec<String> = ["beach", "office", "tram"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let n = 120;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<usize> = (0..n).map(|i| i % classes.len()).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("clip{i:03}")).collect();

    // system A is decent, system B is noisier but errs on different clips
    let noisy = |sharpness: f64, rng: &mut ChaCha8Rng| -> Array2<f64> {
        let mut m = Array2::<f64>::zeros((n, classes.len()));
        for (i, &label) in labels.iter().enumerate() {
            for c in 0..classes.len() {
                let signal = if c == label { sharpness } else { 0.0 };
                m[[i, c]] = signal + 2.0 * (rng.random::<f64>() - 0.5);
            }
        }
        m
    };
    let sys_a = ScoreMatrix::new(noisy(1.6, &mut rng), ids.clone(), classes.clone())?;
    let sys_b = ScoreMatrix::new(noisy(1.0, &mut rng), ids, classes)?;

    let sets = vec![sys_a, sys_b];
    let (model, report) = train_fusion(&sets, &labels, &FusionTrainConfig::default())?;
    let fused = fuse_scores(&model, &sets)?;

    println!(
        "system A: {:.1}%   system B: {:.1}%   fused: {:.1}%",
        accuracy(&sets[0], &labels),
        accuracy(&sets[1], &labels),
        accuracy(&fused, &labels)
    );
    println!(
        "learned weights: alpha = {:?}, beta = {:?}",
        model.alphas.as_slice().unwrap(),
        model.beta.as_slice().unwrap()
    );
    println!(
        "objective fell from {:.4} to {:.4} over {} updates{}",
        report.objective_trace.first().unwrap(),
        report.objective_trace.last().unwrap(),
        report.objective_trace.len() - 1,
        if report.converged { "" } else { " (cap hit)" }
    );
    Ok(())
}
