//! SGD training loop and clip-level inference for the convolutional
//! classifier.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{excerpt_windows, FeatureMatrix};

use super::{LayerGrads, LayerParams, Network};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// The learning rate is halved every this many epochs.
    pub lr_halving_period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            initial_lr: 0.02,
            lr_halving_period: 5,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean batch loss (cross-entropy plus L2 penalty) per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Stepped decay: the initial rate halved once per `halving_period` epochs.
/// `epoch` is 1-based.
pub fn learning_rate(epoch: usize, initial: f64, halving_period: usize) -> f64 {
    initial * 0.5f64.powi(((epoch - 1) / halving_period) as i32)
}

fn zero_grads_like(params: &[LayerParams]) -> Vec<LayerGrads> {
    params
        .iter()
        .map(|p| match p {
            LayerParams::Conv { w, b } => LayerGrads::Conv {
                dw: Array4::zeros(w.dim()),
                db: Array1::zeros(b.len()),
            },
            LayerParams::BatchNorm { gamma, beta, .. } => LayerGrads::BatchNorm {
                dgamma: Array1::zeros(gamma.len()),
                dbeta: Array1::zeros(beta.len()),
            },
            LayerParams::None => LayerGrads::None,
        })
        .collect()
}

fn update_tensor<D: ndarray::Dimension>(
    w: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    momentum: f64,
) {
    for (vv, gg) in v.iter_mut().zip(g.iter()) {
        *vv = momentum * *vv - lr * gg;
    }
    for (ww, vv) in w.iter_mut().zip(v.iter()) {
        *ww += *vv;
    }
}

/// One momentum-SGD step: v <- m·v − lr·g, w <- w + v.
fn sgd_step(
    params: &mut [LayerParams],
    grads: &[LayerGrads],
    velocity: &mut [LayerGrads],
    lr: f64,
    momentum: f64,
) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        match (p, g, v) {
            (
                LayerParams::Conv { w, b },
                LayerGrads::Conv { dw, db },
                LayerGrads::Conv { dw: vw, db: vb },
            ) => {
                update_tensor(w, dw, vw, lr, momentum);
                update_tensor(b, db, vb, lr, momentum);
            }
            (
                LayerParams::BatchNorm { gamma, beta, .. },
                LayerGrads::BatchNorm { dgamma, dbeta },
                LayerGrads::BatchNorm {
                    dgamma: vg,
                    dbeta: vb,
                },
            ) => {
                update_tensor(gamma, dgamma, vg, lr, momentum);
                update_tensor(beta, dbeta, vb, lr, momentum);
            }
            (LayerParams::None, LayerGrads::None, LayerGrads::None) => {}
            _ => unreachable!("grads mirror params"),
        }
    }
}

/// Train the network in place on labelled excerpts. Batches are reshuffled
/// every epoch from the config seed; the same seed reproduces the exact run.
pub fn train(
    net: &mut Network,
    data: &Array4<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let n = data.dim().0;
    if n == 0 || labels.len() != n {
        return Err(Error::Training(format!(
            "{} excerpts with {} labels",
            n,
            labels.len()
        )));
    }
    if cfg.batch_size == 0 || cfg.initial_lr <= 0.0 {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let n_classes = net.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Training(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = zero_grads_like(&net.params);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(epoch, cfg.initial_lr, cfg.lr_halving_period);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Array4::<f64>::zeros((
                chunk.len(),
                net.spec.input.0,
                net.spec.input.1,
                net.spec.input.2,
            ));
            let mut targets = Vec::with_capacity(chunk.len());
            for (row, &idx) in chunk.iter().enumerate() {
                batch
                    .index_axis_mut(Axis(0), row)
                    .assign(&data.index_axis(Axis(0), idx));
                targets.push(labels[idx]);
            }
            let (probs, caches) = net.forward_train(&batch, &mut rng)?;
            let loss =
                Network::batch_loss(&probs, &targets) + 0.5 * cfg.weight_decay * net.l2_norm_sq();
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batches} (lr {lr})"
                )));
            }
            let grads = net.backward(&caches, &probs, &targets, cfg.weight_decay)?;
            sgd_step(&mut net.params, &grads, &mut velocity, lr, cfg.momentum);
            loss_sum += loss;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);
    }
    Ok(TrainReport { epoch_losses })
}

/// Clip-level prediction: the mean of the per-window softmax outputs.
#[derive(Debug, Clone)]
pub struct ClipPrediction {
    pub probs: Array1<f64>,
    pub clip_id: String,
    pub n_windows: usize,
}

impl ClipPrediction {
    /// Index of the most probable class.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Log of the averaged probabilities: the clip's score row for fusion.
    pub fn log_scores(&self) -> Array1<f64> {
        self.probs.mapv(|p| p.max(1e-300).ln())
    }
}

pub(crate) fn average_window_probs(probs: &Array2<f64>) -> Array1<f64> {
    probs.mean_axis(Axis(0)).expect("at least one window")
}

/// Slide windows over the clip spectrogram, classify each, and average the
/// probabilities.
pub fn predict_clip(
    net: &Network,
    spec: &FeatureMatrix,
    clip_id: &str,
    width: usize,
    stride: usize,
) -> Result<ClipPrediction> {
    let excerpts = excerpt_windows(spec, clip_id, width, stride)?;
    let (in_c, in_h, in_w) = net.spec.input;
    if in_c != 1 || excerpts[0].patch.dim() != (in_h, in_w) {
        return Err(Error::ShapeMismatch(format!(
            "excerpt {}x{} does not fit network input {}x{}x{}",
            excerpts[0].patch.nrows(),
            excerpts[0].patch.ncols(),
            in_c,
            in_h,
            in_w
        )));
    }
    let n_windows = excerpts.len();
    let mut all_probs = Array2::<f64>::zeros((n_windows, net.n_classes()));
    for (start, chunk) in excerpts.chunks(64).scan(0usize, |s, c| {
        let start = *s;
        *s += c.len();
        Some((start, c))
    }) {
        let mut batch = Array4::<f64>::zeros((chunk.len(), 1, in_h, in_w));
        for (i, e) in chunk.iter().enumerate() {
            batch
                .index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), 0)
                .assign(&e.patch);
        }
        let probs = net.forward_eval(&batch)?;
        all_probs
            .slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&probs);
    }
    Ok(ClipPrediction {
        probs: average_window_probs(&all_probs),
        clip_id: clip_id.to_string(),
        n_windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{LayerSpec, NetworkSpec};
    use ndarray::array;
    use rand::Rng;

    fn conv(out: usize, k: usize, pad: usize, stride: usize) -> LayerSpec {
        LayerSpec::Conv {
            out_channels: out,
            kernel: (k, k),
            pad,
            stride,
        }
    }

    /// Small trainable network on 16x16 inputs.
    fn mini_spec(n_classes: usize, dropout: bool) -> NetworkSpec {
        let d = |r| if dropout { r } else { 0.0 };
        NetworkSpec {
            input: (1, 16, 16),
            layers: vec![
                conv(8, 5, 2, 2),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                conv(8, 3, 1, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dropout { rate: d(0.3) },
                conv(16, 3, 0, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: d(0.5) },
                conv(n_classes, 1, 0, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::GlobalAveragePool,
                LayerSpec::Softmax,
            ],
        }
    }

    #[test]
    fn schedule_halves_every_period() {
        assert_eq!(learning_rate(1, 0.02, 5), 0.02);
        assert_eq!(learning_rate(5, 0.02, 5), 0.02);
        assert_eq!(learning_rate(6, 0.02, 5), 0.01);
        assert_eq!(learning_rate(7, 0.02, 5), 0.01);
        assert_eq!(learning_rate(11, 0.02, 5), 0.005);
    }

    #[test]
    fn plain_sgd_single_step() {
        // momentum 0, decay 0, one batch, one epoch: w' = w − lr·g exactly
        let mut net = Network::init(mini_spec(2, false), 40).unwrap();
        let reference = net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data = Array4::from_shape_simple_fn((4, 1, 16, 16), || rng.random::<f64>());
        let labels = [0usize, 1, 0, 1];
        let cfg = TrainConfig {
            batch_size: 4,
            initial_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            epochs: 1,
            seed: 42,
            ..TrainConfig::default()
        };
        train(&mut net, &data, &labels, &cfg).unwrap();

        // replay the exact same pass by hand
        let mut replay = reference.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rng);
        let mut batch = Array4::<f64>::zeros((4, 1, 16, 16));
        let mut targets = Vec::new();
        for (row, &idx) in order.iter().enumerate() {
            batch
                .index_axis_mut(Axis(0), row)
                .assign(&data.index_axis(Axis(0), idx));
            targets.push(labels[idx]);
        }
        let (probs, caches) = replay.forward_train(&batch, &mut rng).unwrap();
        let grads = replay.backward(&caches, &probs, &targets, 0.0).unwrap();
        for ((p_trained, p_ref), g) in
            net.params.iter().zip(&reference.params).zip(&grads)
        {
            if let (
                LayerParams::Conv { w: wt, .. },
                LayerParams::Conv { w: w0, .. },
                LayerGrads::Conv { dw, .. },
            ) = (p_trained, p_ref, g)
            {
                for ((a, b), g) in wt.iter().zip(w0.iter()).zip(dw.iter()) {
                    assert_eq!(*a, b - 0.1 * g);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = mini_spec(2, true);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let data = Array4::from_shape_simple_fn((30, 1, 16, 16), || rng.random::<f64>());
        let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let cfg = TrainConfig {
            batch_size: 10,
            epochs: 3,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut net1 = Network::init(spec.clone(), 8).unwrap();
        let r1 = train(&mut net1, &data, &labels, &cfg).unwrap();
        let mut net2 = Network::init(spec, 8).unwrap();
        let r2 = train(&mut net2, &data, &labels, &cfg).unwrap();
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert_eq!(net1.params, net2.params);
    }

    #[test]
    fn overfits_small_two_class_set() {
        // 200 excerpts with class-dependent spatial energy patterns
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let n = 200;
        let mut data = Array4::<f64>::zeros((n, 1, 16, 16));
        let mut labels = Vec::with_capacity(n);
        for s in 0..n {
            let c = s % 2;
            for i in 0..16 {
                for j in 0..16 {
                    let pattern = if c == 0 {
                        if i < 8 { 1.0 } else { -1.0 }
                    } else if j < 8 {
                        1.0
                    } else {
                        -1.0
                    };
                    data[[s, 0, i, j]] = pattern + 0.3 * (rng.random::<f64>() - 0.5);
                }
            }
            labels.push(c);
        }
        let mut net = Network::init(mini_spec(2, true), 9).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            seed: 10,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &data, &labels, &cfg).unwrap();
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        let probs = net.forward_eval(&data).unwrap();
        let mut correct = 0;
        for (i, row) in probs.rows().into_iter().enumerate() {
            let pred = if row[0] >= row[1] { 0 } else { 1 };
            if pred == labels[i] {
                correct += 1;
            }
        }
        let acc = correct as f64 / n as f64;
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn window_probability_averaging() {
        let p = average_window_probs(&array![[0.6, 0.4], [0.2, 0.8]]);
        assert!((p[0] - 0.4).abs() < 1e-15);
        assert!((p[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn constant_clip_prediction_matches_single_window() {
        let net = Network::init(mini_spec(3, true), 70).unwrap();
        // constant 64-frame, 16-band spectrogram: every window is identical
        let spec = FeatureMatrix::new(Array2::from_elem((64, 16), 0.25), 31.25).unwrap();
        let pred = predict_clip(&net, &spec, "clip", 16, 10).unwrap();
        assert_eq!(pred.n_windows, 6);
        assert!((pred.probs.sum() - 1.0).abs() < 1e-9);
        let one = predict_clip(&net, &spec, "clip", 16, 1000).unwrap();
        assert_eq!(one.n_windows, 2);
        for (a, b) in pred.probs.iter().zip(one.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let scores = pred.log_scores();
        for (s, p) in scores.iter().zip(pred.probs.iter()) {
            assert!((s - p.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn short_clip_is_rejected() {
        let net = Network::init(mini_spec(2, true), 71).unwrap();
        let spec = FeatureMatrix::new(Array2::from_elem((8, 16), 0.1), 31.25).unwrap();
        assert!(predict_clip(&net, &spec, "clip", 16, 10).is_err());
    }
}
