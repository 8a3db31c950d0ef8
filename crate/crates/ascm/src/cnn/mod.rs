//! VGG-style convolutional classifier over log-filterbank spectrogram
//! excerpts: a feature-learning stack of conv-BN-ReLU blocks with max
//! pooling and dropout, closed by 1x1 convolutions, global average pooling
//! and a softmax. Forward, backward, and SGD training are implemented here
//! directly so every gradient can be checked against finite differences.

pub mod layers;
mod train;

pub use train::{train, learning_rate, predict_clip, ClipPrediction, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::standard_normal;
use layers::{BatchNormCache, ConvShape};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        pad: usize,
        stride: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        size: usize,
    },
    Dropout {
        rate: f64,
    },
    GlobalAveragePool,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Input dims (channels, height, width).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Output dims (channels, height, width) after every layer. GAP and
    /// softmax collapse the spatial dims to 1x1.
    pub fn shape_trace(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut c, mut h, mut w) = self.input;
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    pad,
                    stride,
                } => {
                    if *stride == 0 {
                        return Err(Error::Config("conv stride must be >= 1".into()));
                    }
                    let shape = ConvShape {
                        kernel: *kernel,
                        pad: *pad,
                        stride: *stride,
                    };
                    let (oh, ow) = layers::conv_out_hw(h, w, &shape)?;
                    c = *out_channels;
                    h = oh;
                    w = ow;
                }
                LayerSpec::MaxPool { size } => {
                    h /= size;
                    w /= size;
                    if h == 0 || w == 0 {
                        return Err(Error::ShapeMismatch(
                            "max pool collapsed a spatial dimension to zero".into(),
                        ));
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::Config(format!("dropout rate {rate} not in [0,1)")));
                    }
                }
                LayerSpec::GlobalAveragePool | LayerSpec::Softmax => {
                    h = 1;
                    w = 1;
                }
                LayerSpec::BatchNorm | LayerSpec::Relu => {}
            }
            trace.push((c, h, w));
        }
        Ok(trace)
    }

    /// Class count: channel width at the end of the stack.
    pub fn n_classes(&self) -> Result<usize> {
        Ok(self.shape_trace()?.last().map(|t| t.0).unwrap_or(0))
    }
}

/// The network of the model-architecture table for a square input:
/// three VGG blocks, then a 1x1-conv classification head with global
/// average pooling.
pub fn vgg_spec(n_classes: usize, input_hw: usize) -> NetworkSpec {
    let conv = |out, k, pad, stride| LayerSpec::Conv {
        out_channels: out,
        kernel: (k, k),
        pad,
        stride,
    };
    let mut layers = Vec::new();
    let block = |seq: &mut Vec<LayerSpec>, out, k, pad, stride| {
        seq.push(conv(out, k, pad, stride));
        seq.push(LayerSpec::BatchNorm);
        seq.push(LayerSpec::Relu);
    };
    block(&mut layers, 32, 5, 2, 2);
    block(&mut layers, 32, 3, 1, 1);
    layers.push(LayerSpec::MaxPool { size: 2 });
    layers.push(LayerSpec::Dropout { rate: 0.3 });
    block(&mut layers, 64, 3, 1, 1);
    block(&mut layers, 64, 3, 1, 1);
    layers.push(LayerSpec::MaxPool { size: 2 });
    layers.push(LayerSpec::Dropout { rate: 0.3 });
    for _ in 0..4 {
        block(&mut layers, 128, 3, 1, 1);
    }
    layers.push(LayerSpec::MaxPool { size: 2 });
    layers.push(LayerSpec::Dropout { rate: 0.3 });
    block(&mut layers, 512, 3, 0, 1);
    layers.push(LayerSpec::Dropout { rate: 0.5 });
    block(&mut layers, 512, 1, 0, 1);
    layers.push(LayerSpec::Dropout { rate: 0.5 });
    block(&mut layers, n_classes, 1, 0, 1);
    layers.push(LayerSpec::GlobalAveragePool);
    layers.push(LayerSpec::Softmax);
    NetworkSpec {
        input: (1, input_hw, input_hw),
        layers,
    }
}

/// A scaled-down network in the same style for small spectrogram excerpts
/// (fewer bands, narrower windows, slimmer channels). Used where training
/// the full-size network would be wasteful.
pub fn compact_spec(n_classes: usize, bands: usize, frames: usize) -> NetworkSpec {
    let conv = |out, k, pad, stride| LayerSpec::Conv {
        out_channels: out,
        kernel: (k, k),
        pad,
        stride,
    };
    let mut layers = Vec::new();
    let block = |seq: &mut Vec<LayerSpec>, out, k, pad, stride| {
        seq.push(conv(out, k, pad, stride));
        seq.push(LayerSpec::BatchNorm);
        seq.push(LayerSpec::Relu);
    };
    block(&mut layers, 8, 5, 2, 2);
    block(&mut layers, 8, 3, 1, 1);
    layers.push(LayerSpec::MaxPool { size: 2 });
    layers.push(LayerSpec::Dropout { rate: 0.3 });
    block(&mut layers, 16, 3, 1, 1);
    block(&mut layers, 16, 3, 1, 1);
    layers.push(LayerSpec::MaxPool { size: 2 });
    layers.push(LayerSpec::Dropout { rate: 0.3 });
    block(&mut layers, 32, 3, 0, 1);
    layers.push(LayerSpec::Dropout { rate: 0.5 });
    block(&mut layers, 32, 1, 0, 1);
    layers.push(LayerSpec::Dropout { rate: 0.5 });
    block(&mut layers, n_classes, 1, 0, 1);
    layers.push(LayerSpec::GlobalAveragePool);
    layers.push(LayerSpec::Softmax);
    NetworkSpec {
        input: (1, bands, frames),
        layers,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv {
        w: Array4<f64>,
        b: Array1<f64>,
    },
    BatchNorm {
        gamma: Array1<f64>,
        beta: Array1<f64>,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
    None,
}

#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv { dw: Array4<f64>, db: Array1<f64> },
    BatchNorm { dgamma: Array1<f64>, dbeta: Array1<f64> },
    None,
}

pub enum LayerCache {
    Conv { input: Array4<f64> },
    BatchNorm { cache: BatchNormCache },
    Relu { mask: Array4<f64> },
    MaxPool {
        argmax: Array4<usize>,
        in_dims: (usize, usize, usize, usize),
    },
    Dropout { mask: Option<Array4<f64>> },
    Gap { in_dims: (usize, usize, usize, usize) },
    Softmax,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<LayerParams>,
}

/// Build the table network for a square input; see [`vgg_spec`].
pub fn build_network(n_classes: usize, input_hw: usize, seed: u64) -> Result<Network> {
    Network::init(vgg_spec(n_classes, input_hw), seed)
}

impl Network {
    /// Initialize parameters for a spec: conv weights drawn from a seeded
    /// fan-in-scaled normal, biases zero, batchnorm at identity.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let trace = spec.shape_trace()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.layers.len());
        let mut in_channels = spec.input.0;
        for (i, layer) in spec.layers.iter().enumerate() {
            let p = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    ..
                } => {
                    let (kh, kw) = *kernel;
                    let fan_in = (in_channels * kh * kw) as f64;
                    let std = (2.0 / fan_in).sqrt();
                    let w = Array4::from_shape_simple_fn(
                        (*out_channels, in_channels, kh, kw),
                        || std * standard_normal(&mut rng),
                    );
                    LayerParams::Conv {
                        w,
                        b: Array1::zeros(*out_channels),
                    }
                }
                LayerSpec::BatchNorm => {
                    let c = trace[i].0;
                    LayerParams::BatchNorm {
                        gamma: Array1::ones(c),
                        beta: Array1::zeros(c),
                        running_mean: Array1::zeros(c),
                        running_var: Array1::ones(c),
                    }
                }
                _ => LayerParams::None,
            };
            in_channels = trace[i].0;
            params.push(p);
        }
        Ok(Self { spec, params })
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes().expect("validated at init")
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if (c, h, w) != self.spec.input {
            return Err(Error::ShapeMismatch(format!(
                "batch is {c}x{h}x{w}, network expects {}x{}x{}",
                self.spec.input.0, self.spec.input.1, self.spec.input.2
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Feature("non-finite value in network input".into()));
        }
        Ok(())
    }

    /// Deterministic inference pass: running batchnorm statistics, no
    /// dropout. Returns per-sample class probabilities.
    pub fn forward_eval(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut act = x.clone();
        let mut logits: Option<Array2<f64>> = None;
        for (layer, params) in self.spec.layers.iter().zip(&self.params) {
            match (layer, params) {
                (
                    LayerSpec::Conv {
                        pad, stride, kernel, ..
                    },
                    LayerParams::Conv { w, b },
                ) => {
                    let shape = ConvShape {
                        kernel: *kernel,
                        pad: *pad,
                        stride: *stride,
                    };
                    act = layers::conv_forward(&act, w, b, &shape)?;
                }
                (
                    LayerSpec::BatchNorm,
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    act = layers::batchnorm_forward_eval(
                        &act,
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        BN_EPSILON,
                    );
                }
                (LayerSpec::Relu, _) => {
                    act.mapv_inplace(|v| v.max(0.0));
                }
                (LayerSpec::MaxPool { size }, _) => {
                    act = layers::maxpool_forward(&act, *size).0;
                }
                (LayerSpec::Dropout { .. }, _) => {}
                (LayerSpec::GlobalAveragePool, _) => {
                    logits = Some(layers::gap_forward(&act));
                }
                (LayerSpec::Softmax, _) => {
                    let l = logits
                        .take()
                        .ok_or_else(|| Error::Config("softmax before pooling".into()))?;
                    return Ok(layers::softmax_rows(&l));
                }
                _ => return Err(Error::Config("layer/params mismatch".into())),
            }
        }
        Err(Error::Config("network has no softmax output".into()))
    }

    /// Training pass: batch statistics drive batchnorm (and update the
    /// running estimates), dropout draws a fresh mask from `rng`. Returns
    /// probabilities plus per-layer caches for [`Network::backward`].
    pub fn forward_train(
        &mut self,
        x: &Array4<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, Vec<LayerCache>)> {
        self.check_input(x)?;
        let mut act = x.clone();
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut logits: Option<Array2<f64>> = None;
        let mut probs: Option<Array2<f64>> = None;
        for (layer, params) in self.spec.layers.iter().zip(self.params.iter_mut()) {
            match (layer, params) {
                (
                    LayerSpec::Conv {
                        pad, stride, kernel, ..
                    },
                    LayerParams::Conv { w, b },
                ) => {
                    let shape = ConvShape {
                        kernel: *kernel,
                        pad: *pad,
                        stride: *stride,
                    };
                    let out = layers::conv_forward(&act, w, b, &shape)?;
                    caches.push(LayerCache::Conv { input: act });
                    act = out;
                }
                (
                    LayerSpec::BatchNorm,
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    let (out, cache) =
                        layers::batchnorm_forward_train(&act, gamma, beta, BN_EPSILON);
                    running_mean.zip_mut_with(&cache.batch_mean, |r, b| {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                    });
                    running_var.zip_mut_with(&cache.batch_var, |r, b| {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                    });
                    caches.push(LayerCache::BatchNorm { cache });
                    act = out;
                }
                (LayerSpec::Relu, _) => {
                    let (out, mask) = layers::relu_forward(&act);
                    caches.push(LayerCache::Relu { mask });
                    act = out;
                }
                (LayerSpec::MaxPool { size }, _) => {
                    let in_dims = act.dim();
                    let (out, argmax) = layers::maxpool_forward(&act, *size);
                    caches.push(LayerCache::MaxPool { argmax, in_dims });
                    act = out;
                }
                (LayerSpec::Dropout { rate }, _) => {
                    if *rate == 0.0 {
                        caches.push(LayerCache::Dropout { mask: None });
                    } else {
                        let mask = layers::dropout_mask(act.dim(), *rate, rng);
                        act *= &mask;
                        caches.push(LayerCache::Dropout { mask: Some(mask) });
                    }
                }
                (LayerSpec::GlobalAveragePool, _) => {
                    caches.push(LayerCache::Gap { in_dims: act.dim() });
                    logits = Some(layers::gap_forward(&act));
                }
                (LayerSpec::Softmax, _) => {
                    let l = logits
                        .take()
                        .ok_or_else(|| Error::Config("softmax before pooling".into()))?;
                    probs = Some(layers::softmax_rows(&l));
                    caches.push(LayerCache::Softmax);
                }
                _ => return Err(Error::Config("layer/params mismatch".into())),
            }
        }
        match probs {
            Some(p) => Ok((p, caches)),
            None => Err(Error::Config("network has no softmax output".into())),
        }
    }

    /// Mean categorical cross-entropy over the batch.
    pub fn batch_loss(probs: &Array2<f64>, targets: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            total -= probs[[i, t]].max(1e-300).ln();
        }
        total / targets.len() as f64
    }

    /// Sum of squared trainable parameters (for the L2 penalty).
    pub fn l2_norm_sq(&self) -> f64 {
        let mut total = 0.0;
        for p in &self.params {
            match p {
                LayerParams::Conv { w, b } => {
                    total += w.iter().map(|v| v * v).sum::<f64>();
                    total += b.iter().map(|v| v * v).sum::<f64>();
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    total += gamma.iter().map(|v| v * v).sum::<f64>();
                    total += beta.iter().map(|v| v * v).sum::<f64>();
                }
                LayerParams::None => {}
            }
        }
        total
    }

    /// Gradients of mean cross-entropy plus the L2 penalty (coefficient
    /// `weight_decay`, convention 0.5·λ‖θ‖² so the gradient adds λ·θ).
    pub fn backward(
        &self,
        caches: &[LayerCache],
        probs: &Array2<f64>,
        targets: &[usize],
        weight_decay: f64,
    ) -> Result<Vec<LayerGrads>> {
        if caches.len() != self.spec.layers.len() {
            return Err(Error::ShapeMismatch("cache count != layer count".into()));
        }
        if probs.nrows() != targets.len() {
            return Err(Error::ShapeMismatch("target count != batch size".into()));
        }
        let mut g2 = logit_gradient(probs, targets);
        let mut g4: Option<Array4<f64>> = None;
        let mut grads: Vec<LayerGrads> = (0..self.spec.layers.len())
            .map(|_| LayerGrads::None)
            .collect();
        for idx in (0..self.spec.layers.len()).rev() {
            let layer = &self.spec.layers[idx];
            let cache = &caches[idx];
            match (layer, cache, &self.params[idx]) {
                (LayerSpec::Softmax, LayerCache::Softmax, _) => {}
                (LayerSpec::GlobalAveragePool, LayerCache::Gap { in_dims }, _) => {
                    g4 = Some(layers::gap_backward(&g2, *in_dims));
                    g2 = Array2::zeros((0, 0));
                }
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }, _) => {
                    if let Some(m) = mask {
                        let g = g4.take().expect("gradient present below dropout");
                        g4 = Some(&g * m);
                    }
                }
                (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { argmax, in_dims }, _) => {
                    let g = g4.take().expect("gradient present below pooling");
                    g4 = Some(layers::maxpool_backward(&g, argmax, *in_dims));
                }
                (LayerSpec::Relu, LayerCache::Relu { mask }, _) => {
                    let g = g4.take().expect("gradient present below relu");
                    g4 = Some(layers::relu_backward(&g, mask));
                }
                (
                    LayerSpec::BatchNorm,
                    LayerCache::BatchNorm { cache },
                    LayerParams::BatchNorm { gamma, beta, .. },
                ) => {
                    let g = g4.take().expect("gradient present below batchnorm");
                    let (dx, mut dgamma, mut dbeta) =
                        layers::batchnorm_backward(&g, cache, gamma);
                    if weight_decay != 0.0 {
                        dgamma.zip_mut_with(gamma, |d, p| *d += weight_decay * p);
                        dbeta.zip_mut_with(beta, |d, p| *d += weight_decay * p);
                    }
                    grads[idx] = LayerGrads::BatchNorm { dgamma, dbeta };
                    g4 = Some(dx);
                }
                (
                    LayerSpec::Conv {
                        pad, stride, kernel, ..
                    },
                    LayerCache::Conv { input },
                    LayerParams::Conv { w, b },
                ) => {
                    let shape = ConvShape {
                        kernel: *kernel,
                        pad: *pad,
                        stride: *stride,
                    };
                    let g = g4.take().expect("gradient present below conv");
                    let (dx, mut dw, mut db) = layers::conv_backward(input, w, &shape, &g);
                    if weight_decay != 0.0 {
                        dw.zip_mut_with(w, |d, p| *d += weight_decay * p);
                        db.zip_mut_with(b, |d, p| *d += weight_decay * p);
                    }
                    grads[idx] = LayerGrads::Conv { dw, db };
                    g4 = Some(dx);
                }
                _ => return Err(Error::Config("cache does not match layer".into())),
            }
        }
        Ok(grads)
    }
}

/// Gradient of mean cross-entropy with respect to the logits:
/// (probs - onehot)/batch. Zero exactly when the prediction equals the
/// target distribution.
pub(crate) fn logit_gradient(probs: &Array2<f64>, targets: &[usize]) -> Array2<f64> {
    let b = targets.len() as f64;
    let mut g = probs / b;
    for (i, &t) in targets.iter().enumerate() {
        g[[i, t]] -= 1.0 / b;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn table_network_shape_trace() {
        let spec = vgg_spec(15, 149);
        let trace = spec.shape_trace().unwrap();
        let spatial: Vec<usize> = trace
            .iter()
            .zip(&spec.layers)
            .filter(|(_, l)| {
                matches!(l, LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. })
            })
            .map(|(t, _)| t.1)
            .collect();
        assert_eq!(
            spatial,
            vec![75, 75, 37, 37, 37, 18, 18, 18, 18, 18, 9, 7, 7, 7]
        );
        // final feature map is n_classes x 7 x 7, then 15 logits
        let before_gap = trace[trace.len() - 3];
        assert_eq!(before_gap, (15, 7, 7));
        assert_eq!(spec.n_classes().unwrap(), 15);
    }

    #[test]
    fn build_rejects_tiny_input() {
        assert!(build_network(15, 16, 0).is_err());
    }

    #[test]
    fn full_network_probabilities_normalize() {
        let net = build_network(15, 149, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array4::from_shape_simple_fn((1, 1, 149, 149), || rng.random::<f64>() - 0.5);
        let p = net.forward_eval(&x).unwrap();
        assert_eq!(p.dim(), (1, 15));
        assert!((p.row(0).sum() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let net = Network::init(compact_spec(3, 24, 48), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array4::from_shape_simple_fn((2, 1, 24, 48), || rng.random::<f64>());
        let a = net.forward_eval(&x).unwrap();
        let b = net.forward_eval(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let mut net = Network::init(compact_spec(5, 24, 48), 3).unwrap();
        for p in &mut net.params {
            if let LayerParams::Conv { w, .. } = p {
                w.fill(0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array4::from_shape_simple_fn((3, 1, 24, 48), || rng.random::<f64>());
        let p = net.forward_eval(&x).unwrap();
        for v in p.iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let net = Network::init(compact_spec(3, 24, 48), 5).unwrap();
        let mut x = Array4::zeros((1, 1, 24, 48));
        x[[0, 0, 0, 0]] = f64::NAN;
        assert!(net.forward_eval(&x).is_err());
    }

    /// Small all-layer network on a 9x9 input for gradient checks.
    fn tiny_spec(n_classes: usize) -> NetworkSpec {
        let conv = |out, k: usize, pad, stride| LayerSpec::Conv {
            out_channels: out,
            kernel: (k, k),
            pad,
            stride,
        };
        NetworkSpec {
            input: (1, 9, 9),
            layers: vec![
                conv(4, 3, 1, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                conv(4, 3, 1, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dropout { rate: 0.3 },
                conv(8, 3, 0, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                conv(n_classes, 1, 0, 1),
                LayerSpec::BatchNorm,
                LayerSpec::Relu,
                LayerSpec::GlobalAveragePool,
                LayerSpec::Softmax,
            ],
        }
    }

    fn train_loss(
        net: &mut Network,
        x: &Array4<f64>,
        targets: &[usize],
        decay: f64,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (probs, _) = net.forward_train(x, &mut rng).unwrap();
        Network::batch_loss(&probs, targets) + 0.5 * decay * net.l2_norm_sq()
    }

    /// Central finite differences over every trainable scalar.
    fn check_gradients(spec: NetworkSpec, decay: f64, tol: f64) {
        let mut net = Network::init(spec, 11).unwrap();
        let (_, h, w) = net.spec.input;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array4::from_shape_simple_fn((2, 1, h, w), || rng.random::<f64>() * 2.0 - 1.0);
        let targets: Vec<usize> = (0..2).map(|i| i % net.n_classes()).collect();
        let seed = 99;
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(seed);
        let (probs, caches) = net.forward_train(&x, &mut fwd_rng).unwrap();
        let grads = net.backward(&caches, &probs, &targets, decay).unwrap();

        let h_step = 1e-5;
        let n_layers = net.spec.layers.len();
        for li in 0..n_layers {
            let tensors: usize = match &net.params[li] {
                LayerParams::Conv { .. } | LayerParams::BatchNorm { .. } => 2,
                LayerParams::None => 0,
            };
            for ti in 0..tensors {
                let len = tensor_len(&net.params[li], ti);
                for ei in 0..len {
                    let orig = get_param(&net.params[li], ti, ei);
                    set_param(&mut net.params[li], ti, ei, orig + h_step);
                    let up = train_loss(&mut net, &x, &targets, decay, seed);
                    set_param(&mut net.params[li], ti, ei, orig - h_step);
                    let down = train_loss(&mut net, &x, &targets, decay, seed);
                    set_param(&mut net.params[li], ti, ei, orig);
                    let fd = (up - down) / (2.0 * h_step);
                    let an = get_grad(&grads[li], ti, ei);
                    let rel = (fd - an).abs() / an.abs().max(1.0);
                    assert!(
                        rel < tol,
                        "layer {li} tensor {ti} elem {ei}: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    fn tensor_len(p: &LayerParams, ti: usize) -> usize {
        match (p, ti) {
            (LayerParams::Conv { w, .. }, 0) => w.len(),
            (LayerParams::Conv { b, .. }, 1) => b.len(),
            (LayerParams::BatchNorm { gamma, .. }, 0) => gamma.len(),
            (LayerParams::BatchNorm { beta, .. }, 1) => beta.len(),
            _ => 0,
        }
    }

    fn get_param(p: &LayerParams, ti: usize, ei: usize) -> f64 {
        match (p, ti) {
            (LayerParams::Conv { w, .. }, 0) => w.as_slice().unwrap()[ei],
            (LayerParams::Conv { b, .. }, 1) => b[ei],
            (LayerParams::BatchNorm { gamma, .. }, 0) => gamma[ei],
            (LayerParams::BatchNorm { beta, .. }, 1) => beta[ei],
            _ => unreachable!(),
        }
    }

    fn set_param(p: &mut LayerParams, ti: usize, ei: usize, v: f64) {
        match (p, ti) {
            (LayerParams::Conv { w, .. }, 0) => w.as_slice_mut().unwrap()[ei] = v,
            (LayerParams::Conv { b, .. }, 1) => b[ei] = v,
            (LayerParams::BatchNorm { gamma, .. }, 0) => gamma[ei] = v,
            (LayerParams::BatchNorm { beta, .. }, 1) => beta[ei] = v,
            _ => unreachable!(),
        }
    }

    fn get_grad(g: &LayerGrads, ti: usize, ei: usize) -> f64 {
        match (g, ti) {
            (LayerGrads::Conv { dw, .. }, 0) => dw.as_slice().unwrap()[ei],
            (LayerGrads::Conv { db, .. }, 1) => db[ei],
            (LayerGrads::BatchNorm { dgamma, .. }, 0) => dgamma[ei],
            (LayerGrads::BatchNorm { dbeta, .. }, 1) => dbeta[ei],
            _ => unreachable!(),
        }
    }

    #[test]
    fn gradients_conv_relu() {
        let conv = |out, k: usize, pad, stride| LayerSpec::Conv {
            out_channels: out,
            kernel: (k, k),
            pad,
            stride,
        };
        check_gradients(
            NetworkSpec {
                input: (1, 6, 6),
                layers: vec![
                    conv(3, 3, 1, 2),
                    LayerSpec::Relu,
                    LayerSpec::GlobalAveragePool,
                    LayerSpec::Softmax,
                ],
            },
            0.0,
            1e-4,
        );
    }

    #[test]
    fn gradients_batchnorm() {
        let conv = |out, k: usize, pad, stride| LayerSpec::Conv {
            out_channels: out,
            kernel: (k, k),
            pad,
            stride,
        };
        check_gradients(
            NetworkSpec {
                input: (1, 6, 6),
                layers: vec![
                    conv(3, 3, 0, 1),
                    LayerSpec::BatchNorm,
                    LayerSpec::Relu,
                    LayerSpec::GlobalAveragePool,
                    LayerSpec::Softmax,
                ],
            },
            0.0,
            1e-4,
        );
    }

    #[test]
    fn gradients_maxpool_dropout() {
        let conv = |out, k: usize, pad, stride| LayerSpec::Conv {
            out_channels: out,
            kernel: (k, k),
            pad,
            stride,
        };
        check_gradients(
            NetworkSpec {
                input: (1, 8, 8),
                layers: vec![
                    conv(2, 3, 1, 1),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool { size: 2 },
                    LayerSpec::Dropout { rate: 0.4 },
                    conv(3, 1, 0, 1),
                    LayerSpec::GlobalAveragePool,
                    LayerSpec::Softmax,
                ],
            },
            0.0,
            1e-4,
        );
    }

    #[test]
    fn gradients_full_tiny_network_with_decay() {
        check_gradients(tiny_spec(3), 1e-4, 1e-4);
    }

    #[test]
    fn logit_gradient_vanishes_at_target() {
        let probs = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let g = logit_gradient(&probs, &[0, 2]);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weight_decay_adds_scaled_params() {
        let mut net = Network::init(tiny_spec(3), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Array4::from_shape_simple_fn((2, 1, 9, 9), || rng.random::<f64>());
        let targets = [0usize, 1];
        let lambda = 0.05;
        let mut fwd = ChaCha8Rng::seed_from_u64(7);
        let (probs, caches) = net.forward_train(&x, &mut fwd).unwrap();
        let plain = net.backward(&caches, &probs, &targets, 0.0).unwrap();
        let decayed = net.backward(&caches, &probs, &targets, lambda).unwrap();
        for li in 0..net.spec.layers.len() {
            if let (
                LayerGrads::Conv { dw: dw0, .. },
                LayerGrads::Conv { dw: dw1, .. },
                LayerParams::Conv { w, .. },
            ) = (&plain[li], &decayed[li], &net.params[li])
            {
                for ((a, b), p) in dw0.iter().zip(dw1.iter()).zip(w.iter()) {
                    assert!((b - a - lambda * p).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dropout_zero_matches_eval_with_frozen_stats() {
        let mut spec = compact_spec(3, 24, 48);
        for l in &mut spec.layers {
            if let LayerSpec::Dropout { rate } = l {
                *rate = 0.0;
            }
        }
        let mut net = Network::init(spec, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = Array4::from_shape_simple_fn((4, 1, 24, 48), || rng.random::<f64>());
        let mut fwd = ChaCha8Rng::seed_from_u64(1);
        let (train_probs, caches) = net.forward_train(&x, &mut fwd).unwrap();
        // freeze running stats to the just-observed batch stats
        for (cache, params) in caches.iter().zip(net.params.iter_mut()) {
            if let (
                LayerCache::BatchNorm { cache },
                LayerParams::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
            ) = (cache, params)
            {
                running_mean.assign(&cache.batch_mean);
                running_var.assign(&cache.batch_var);
            }
        }
        let eval_probs = net.forward_eval(&x).unwrap();
        for (a, b) in train_probs.iter().zip(eval_probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
