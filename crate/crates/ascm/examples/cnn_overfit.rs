//! Overfit the compact network on a handful of synthetic excerpts, as a
//! quick check that the whole training loop learns.
//!
//! ```bash
//! cargo run --example cnn_overfit
//! ```

use ascm::cnn::{compact_spec, train, Network, TrainConfig};
use ndarray::Array4;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> ascm::Result<()> {
    let (bands, width, n_classes) = (24, 48, 3);
    let n_per_class = 8;

    // each class puts its energy stripe on a different band range
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = n_classes * n_per_class;
    let mut data = Array4::<f64>::zeros((n, 1, bands, width));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % n_classes;
        labels.push(class);
        for b in 0..bands {
            let stripe = b >= class * 7 && b < class * 7 + 5;
            for t in 0..width {
                let level = if stripe { 2.0 } else { -2.0 };
                data[[i, 0, b, t]] = level + 0.3 * (rng.random::<f64>() - 0.5);
            }
        }
    }

    let mut net = Network::init(compact_spec(n_classes, bands, width), 1)?;
    println!("input {:?}, shape trace:", net.spec.input);
    for (c, h, w) in net.spec.shape_trace()? {
        println!("  {c} x {h} x {w}");
    }

    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 8,
        initial_lr: 0.05,
        seed: 2,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &data, &labels, &cfg)?;
    println!("epoch losses:");
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        println!("  epoch {:>2}: {loss:.4}", e + 1);
    }

    let probs = net.forward_eval(&data)?;
    let correct = probs
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            best == label
        })
        .count();
    println!("training accuracy after {} epochs: {correct}/{n}", cfg.epochs);
    Ok(())
}
