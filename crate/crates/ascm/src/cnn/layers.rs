//! Layer primitives for the convolutional classifier. Activations are
//! (batch, channels, height, width) f64 arrays; every layer has an explicit
//! backward so the whole network is finite-difference checkable.

use ndarray::{Array1, Array2, Array4, ArrayView3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvShape {
    pub kernel: (usize, usize),
    pub pad: usize,
    pub stride: usize,
}

/// Convolution output size: floor((n + 2p - k)/s) + 1 per dimension.
pub fn conv_out_hw(h: usize, w: usize, s: &ConvShape) -> Result<(usize, usize)> {
    let (kh, kw) = s.kernel;
    let oh = (h + 2 * s.pad).checked_sub(kh);
    let ow = (w + 2 * s.pad).checked_sub(kw);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh / s.stride + 1, ow / s.stride + 1)),
        _ => Err(Error::ShapeMismatch(format!(
            "kernel {kh}x{kw} does not fit {h}x{w} input with pad {}",
            s.pad
        ))),
    }
}

/// Unfold one sample into a (cin*kh*kw) x (oh*ow) patch matrix, zero padding
/// outside the input.
fn im2col(
    x: &ArrayView3<f64>,
    s: &ConvShape,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (cin, h, w) = x.dim();
    let (kh, kw) = s.kernel;
    let pad = s.pad as isize;
    let mut col = Array2::<f64>::zeros((cin * kh * kw, oh * ow));
    let mut row = 0;
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let mut idx = 0;
                for oi in 0..oh {
                    let ih = (oi * s.stride + ki) as isize - pad;
                    for oj in 0..ow {
                        let iw = (oj * s.stride + kj) as isize - pad;
                        if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < w {
                            col[[row, idx]] = x[[c, ih as usize, iw as usize]];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Scatter a patch-matrix gradient back onto the input, reversing im2col.
fn col2im(
    dcol: &Array2<f64>,
    dims: (usize, usize, usize),
    s: &ConvShape,
    oh: usize,
    ow: usize,
) -> ndarray::Array3<f64> {
    let (cin, h, w) = dims;
    let (kh, kw) = s.kernel;
    let pad = s.pad as isize;
    let mut dx = ndarray::Array3::<f64>::zeros((cin, h, w));
    let mut row = 0;
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let mut idx = 0;
                for oi in 0..oh {
                    let ih = (oi * s.stride + ki) as isize - pad;
                    for oj in 0..ow {
                        let iw = (oj * s.stride + kj) as isize - pad;
                        if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < w {
                            dx[[c, ih as usize, iw as usize]] += dcol[[row, idx]];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

pub fn conv_forward(
    x: &Array4<f64>,
    w: &Array4<f64>,
    b: &Array1<f64>,
    s: &ConvShape,
) -> Result<Array4<f64>> {
    let (bsz, cin, h, wd) = x.dim();
    let (cout, cin_w, kh, kw) = w.dim();
    if cin != cin_w || (kh, kw) != s.kernel {
        return Err(Error::ShapeMismatch("conv weight dims disagree with input".into()));
    }
    let (oh, ow) = conv_out_hw(h, wd, s)?;
    let k = cin * kh * kw;
    let wmat = w
        .view()
        .into_shape_with_order((cout, k))
        .expect("conv weights are contiguous");
    let mut out = Array4::<f64>::zeros((bsz, cout, oh, ow));
    for bi in 0..bsz {
        let col = im2col(&x.index_axis(Axis(0), bi), s, oh, ow);
        let om = wmat.dot(&col);
        let mut sample = out.index_axis_mut(Axis(0), bi);
        for c in 0..cout {
            let mut plane = sample.index_axis_mut(Axis(0), c);
            let src = om.row(c);
            for (i, v) in plane.iter_mut().enumerate() {
                *v = src[i] + b[c];
            }
        }
    }
    Ok(out)
}

/// Gradients of a conv layer: input, weights, and bias.
pub fn conv_backward(
    x: &Array4<f64>,
    w: &Array4<f64>,
    s: &ConvShape,
    d_out: &Array4<f64>,
) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let (bsz, cin, h, wd) = x.dim();
    let (cout, _, kh, kw) = w.dim();
    let (_, _, oh, ow) = d_out.dim();
    let k = cin * kh * kw;
    let wmat = w
        .view()
        .into_shape_with_order((cout, k))
        .expect("conv weights are contiguous");
    let mut dx = Array4::<f64>::zeros(x.dim());
    let mut dw_mat = Array2::<f64>::zeros((cout, k));
    let mut db = Array1::<f64>::zeros(cout);
    for bi in 0..bsz {
        let col = im2col(&x.index_axis(Axis(0), bi), s, oh, ow);
        let mut dmat = Array2::<f64>::zeros((cout, oh * ow));
        let dsample = d_out.index_axis(Axis(0), bi);
        for c in 0..cout {
            let plane = dsample.index_axis(Axis(0), c);
            let mut row = dmat.row_mut(c);
            for (i, v) in plane.iter().enumerate() {
                row[i] = *v;
                db[c] += *v;
            }
        }
        dw_mat += &dmat.dot(&col.t());
        let dcol = wmat.t().dot(&dmat);
        let dxs = col2im(&dcol, (cin, h, wd), s, oh, ow);
        dx.index_axis_mut(Axis(0), bi).assign(&dxs);
    }
    let dw = dw_mat
        .into_shape_with_order((cout, cin, kh, kw))
        .expect("gradient is contiguous");
    (dx, dw, db)
}

/// Per-channel batch statistics over (batch, height, width).
pub struct BatchNormCache {
    pub xhat: Array4<f64>,
    pub inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

pub fn batchnorm_forward_train(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    eps: f64,
) -> (Array4<f64>, BatchNormCache) {
    let (bsz, c, h, w) = x.dim();
    let n = (bsz * h * w) as f64;
    let mut mean = Array1::<f64>::zeros(c);
    let mut var = Array1::<f64>::zeros(c);
    for ch in 0..c {
        let mut sum = 0.0;
        for bi in 0..bsz {
            for v in x.index_axis(Axis(0), bi).index_axis(Axis(0), ch).iter() {
                sum += v;
            }
        }
        let m = sum / n;
        let mut sq = 0.0;
        for bi in 0..bsz {
            for v in x.index_axis(Axis(0), bi).index_axis(Axis(0), ch).iter() {
                let d = v - m;
                sq += d * d;
            }
        }
        mean[ch] = m;
        var[ch] = sq / n;
    }
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let mut xhat = x.clone();
    let mut out = Array4::<f64>::zeros(x.dim());
    for ch in 0..c {
        let (m, is) = (mean[ch], inv_std[ch]);
        let (g, bt) = (gamma[ch], beta[ch]);
        for bi in 0..bsz {
            let mut xh = xhat.index_axis_mut(Axis(0), bi);
            let mut xh = xh.index_axis_mut(Axis(0), ch);
            let mut o = out.index_axis_mut(Axis(0), bi);
            let mut o = o.index_axis_mut(Axis(0), ch);
            for (xv, ov) in xh.iter_mut().zip(o.iter_mut()) {
                *xv = (*xv - m) * is;
                *ov = g * *xv + bt;
            }
        }
    }
    (
        out,
        BatchNormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

pub fn batchnorm_forward_eval(
    x: &Array4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
    eps: f64,
) -> Array4<f64> {
    let (bsz, c, _, _) = x.dim();
    let mut out = x.clone();
    for ch in 0..c {
        let is = 1.0 / (running_var[ch] + eps).sqrt();
        let scale = gamma[ch] * is;
        let shift = beta[ch] - running_mean[ch] * scale;
        for bi in 0..bsz {
            let mut o = out.index_axis_mut(Axis(0), bi);
            let mut o = o.index_axis_mut(Axis(0), ch);
            for v in o.iter_mut() {
                *v = *v * scale + shift;
            }
        }
    }
    out
}

pub fn batchnorm_backward(
    d_out: &Array4<f64>,
    cache: &BatchNormCache,
    gamma: &Array1<f64>,
) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
    let (bsz, c, h, w) = d_out.dim();
    let n = (bsz * h * w) as f64;
    let mut dgamma = Array1::<f64>::zeros(c);
    let mut dbeta = Array1::<f64>::zeros(c);
    let mut dx = Array4::<f64>::zeros(d_out.dim());
    for ch in 0..c {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for bi in 0..bsz {
            let d = d_out.index_axis(Axis(0), bi);
            let d = d.index_axis(Axis(0), ch);
            let xh = cache.xhat.index_axis(Axis(0), bi);
            let xh = xh.index_axis(Axis(0), ch);
            for (dv, xv) in d.iter().zip(xh.iter()) {
                sum_d += dv;
                sum_dx += dv * xv;
            }
        }
        dgamma[ch] = sum_dx;
        dbeta[ch] = sum_d;
        let scale = gamma[ch] * cache.inv_std[ch];
        let mean_d = sum_d / n;
        let mean_dx = sum_dx / n;
        for bi in 0..bsz {
            let d = d_out.index_axis(Axis(0), bi);
            let d = d.index_axis(Axis(0), ch).to_owned();
            let xh = cache.xhat.index_axis(Axis(0), bi);
            let xh = xh.index_axis(Axis(0), ch);
            let mut o = dx.index_axis_mut(Axis(0), bi);
            let mut o = o.index_axis_mut(Axis(0), ch);
            for ((ov, dv), xv) in o.iter_mut().zip(d.iter()).zip(xh.iter()) {
                *ov = scale * (dv - mean_d - xv * mean_dx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward(x: &Array4<f64>) -> (Array4<f64>, Array4<f64>) {
    let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    (x * &mask, mask)
}

pub fn relu_backward(d_out: &Array4<f64>, mask: &Array4<f64>) -> Array4<f64> {
    d_out * mask
}

/// Max pooling with stride equal to the pool size and floor semantics; the
/// cache records the flat input index of each maximum.
pub fn maxpool_forward(x: &Array4<f64>, size: usize) -> (Array4<f64>, Array4<usize>) {
    let (bsz, c, h, w) = x.dim();
    let oh = h / size;
    let ow = w / size;
    let mut out = Array4::<f64>::zeros((bsz, c, oh, ow));
    let mut arg = Array4::<usize>::zeros((bsz, c, oh, ow));
    for bi in 0..bsz {
        for ch in 0..c {
            let plane = x.index_axis(Axis(0), bi);
            let plane = plane.index_axis(Axis(0), ch);
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for di in 0..size {
                        for dj in 0..size {
                            let (ih, iw) = (oi * size + di, oj * size + dj);
                            let v = plane[[ih, iw]];
                            if v > best {
                                best = v;
                                best_idx = ih * w + iw;
                            }
                        }
                    }
                    out[[bi, ch, oi, oj]] = best;
                    arg[[bi, ch, oi, oj]] = best_idx;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(
    d_out: &Array4<f64>,
    argmax: &Array4<usize>,
    in_dims: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (_, _, _, w) = in_dims;
    let mut dx = Array4::<f64>::zeros(in_dims);
    let (bsz, c, oh, ow) = d_out.dim();
    for bi in 0..bsz {
        for ch in 0..c {
            for oi in 0..oh {
                for oj in 0..ow {
                    let idx = argmax[[bi, ch, oi, oj]];
                    dx[[bi, ch, idx / w, idx % w]] += d_out[[bi, ch, oi, oj]];
                }
            }
        }
    }
    dx
}

/// Inverted dropout mask: entries are 0 or 1/(1-rate), so eval needs no
/// rescaling.
pub fn dropout_mask(
    dims: (usize, usize, usize, usize),
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Array4<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mut mask = Array4::<f64>::zeros(dims);
    for v in mask.iter_mut() {
        if rng.random::<f64>() < keep {
            *v = scale;
        }
    }
    mask
}

pub fn gap_forward(x: &Array4<f64>) -> Array2<f64> {
    let (bsz, c, h, w) = x.dim();
    let n = (h * w) as f64;
    let mut out = Array2::<f64>::zeros((bsz, c));
    for bi in 0..bsz {
        for ch in 0..c {
            let plane = x.index_axis(Axis(0), bi);
            out[[bi, ch]] = plane.index_axis(Axis(0), ch).sum() / n;
        }
    }
    out
}

pub fn gap_backward(d_out: &Array2<f64>, in_dims: (usize, usize, usize, usize)) -> Array4<f64> {
    let (_, _, h, w) = in_dims;
    let n = (h * w) as f64;
    let mut dx = Array4::<f64>::zeros(in_dims);
    for bi in 0..d_out.nrows() {
        for ch in 0..d_out.ncols() {
            let g = d_out[[bi, ch]] / n;
            let mut plane = dx.index_axis_mut(Axis(0), bi);
            plane.index_axis_mut(Axis(0), ch).fill(g);
        }
    }
    dx
}

/// Row-wise max-subtracted softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn shape(k: usize, pad: usize, stride: usize) -> ConvShape {
        ConvShape {
            kernel: (k, k),
            pad,
            stride,
        }
    }

    #[test]
    fn conv_output_sizes() {
        assert_eq!(conv_out_hw(149, 149, &shape(5, 2, 2)).unwrap(), (75, 75));
        assert_eq!(conv_out_hw(75, 75, &shape(3, 1, 1)).unwrap(), (75, 75));
        assert_eq!(conv_out_hw(9, 9, &shape(3, 0, 1)).unwrap(), (7, 7));
        assert!(conv_out_hw(2, 2, &shape(3, 0, 1)).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1 reproduces the input plus bias
        let x = Array4::from_shape_fn((1, 1, 3, 3), |(_, _, i, j)| (3 * i + j) as f64);
        let w = Array4::from_elem((1, 1, 1, 1), 1.0);
        let b = array![0.5];
        let y = conv_forward(&x, &w, &b, &shape(1, 0, 1)).unwrap();
        for (a, e) in y.iter().zip(x.iter()) {
            assert_eq!(*a, e + 0.5);
        }
    }

    #[test]
    fn conv_sum_kernel_with_padding() {
        // all-ones 3x3 kernel on a constant image: interior sums 9 entries,
        // corners 4 (zero padding)
        let x = Array4::from_elem((1, 1, 3, 3), 2.0);
        let w = Array4::from_elem((1, 1, 3, 3), 1.0);
        let b = array![0.0];
        let y = conv_forward(&x, &w, &b, &shape(3, 1, 1)).unwrap();
        assert_eq!(y[[0, 0, 1, 1]], 18.0);
        assert_eq!(y[[0, 0, 0, 0]], 8.0);
        assert_eq!(y[[0, 0, 0, 1]], 12.0);
    }

    #[test]
    fn conv_backward_shapes_and_bias() {
        let x = Array4::from_shape_fn((2, 3, 5, 5), |(b, c, i, j)| {
            (b + c + i + j) as f64 * 0.1
        });
        let w = Array4::from_shape_fn((4, 3, 3, 3), |(o, c, i, j)| {
            ((o + c + i + j) as f64) * 0.01 - 0.03
        });
        let b = Array1::zeros(4);
        let s = shape(3, 1, 2);
        let y = conv_forward(&x, &w, &b, &s).unwrap();
        let d_out = Array4::from_elem(y.dim(), 1.0);
        let (dx, dw, db) = conv_backward(&x, &w, &s, &d_out);
        assert_eq!(dx.dim(), x.dim());
        assert_eq!(dw.dim(), w.dim());
        // bias gradient counts the output positions per channel over the batch
        let per_channel = (y.len() / 4) as f64;
        for v in db.iter() {
            assert_eq!(*v, per_channel);
        }
    }

    #[test]
    fn batchnorm_normalizes_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array4::from_shape_fn((4, 3, 5, 5), |_| rng.random::<f64>() * 7.0 - 2.0);
        let gamma = Array1::ones(3);
        let beta = Array1::zeros(3);
        let (y, _) = batchnorm_forward_train(&x, &gamma, &beta, 1e-5);
        let n = (4 * 5 * 5) as f64;
        for ch in 0..3 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for bi in 0..4 {
                for v in y.index_axis(Axis(0), bi).index_axis(Axis(0), ch).iter() {
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / n;
            let var = sq / n - mean * mean;
            assert!(mean.abs() < 1e-5, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let x = Array4::from_elem((1, 1, 2, 2), 3.0);
        let y = batchnorm_forward_eval(
            &x,
            &array![2.0],
            &array![1.0],
            &array![1.0],
            &array![4.0 - 1e-5],
            1e-5,
        );
        // (3-1)/sqrt(4) * 2 + 1 = 3
        for v in y.iter() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_masks_negatives() {
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| {
            [[-1.0, 0.0], [2.0, -0.5]][i][j]
        });
        let (y, mask) = relu_forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 0.0);
        assert_eq!(y[[0, 0, 1, 0]], 2.0);
        let d = Array4::from_elem((1, 1, 2, 2), 1.0);
        let dx = relu_backward(&d, &mask);
        assert_eq!(dx[[0, 0, 0, 0]], 0.0);
        assert_eq!(dx[[0, 0, 0, 1]], 0.0);
        assert_eq!(dx[[0, 0, 1, 0]], 1.0);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax_only() {
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f64);
        let (y, arg) = maxpool_forward(&x, 2);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 15.0);
        let d = Array4::from_elem((1, 1, 2, 2), 2.0);
        let dx = maxpool_backward(&d, &arg, x.dim());
        let mut nonzero = 0;
        for (idx, v) in dx.iter().enumerate() {
            if *v != 0.0 {
                nonzero += 1;
                assert_eq!(*v, 2.0);
                assert!(matches!(idx, 5 | 7 | 13 | 15), "gradient at {idx}");
            }
        }
        assert_eq!(nonzero, 4);
    }

    #[test]
    fn maxpool_floor_drops_trailing() {
        let x = Array4::from_elem((1, 1, 75, 75), 1.0);
        let (y, _) = maxpool_forward(&x, 2);
        assert_eq!(y.dim(), (1, 1, 37, 37));
    }

    #[test]
    fn dropout_mask_values_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = dropout_mask((1, 1, 100, 100), 0.3, &mut rng);
        let scale = 1.0 / 0.7;
        let mut kept = 0usize;
        for v in mask.iter() {
            assert!(*v == 0.0 || (*v - scale).abs() < 1e-15);
            if *v != 0.0 {
                kept += 1;
            }
        }
        let frac = kept as f64 / 10_000.0;
        assert!((frac - 0.7).abs() < 0.02, "kept {frac}");
    }

    #[test]
    fn gap_averages_and_spreads() {
        let x = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, i, j)| {
            (c * 4 + i * 2 + j) as f64
        });
        let y = gap_forward(&x);
        assert_eq!(y[[0, 0]], 1.5);
        assert_eq!(y[[0, 1]], 5.5);
        let d = array![[4.0, 8.0]];
        let dx = gap_backward(&d, x.dim());
        assert_eq!(dx[[0, 0, 0, 0]], 1.0);
        assert_eq!(dx[[0, 1, 1, 1]], 2.0);
    }

    #[test]
    fn softmax_rows_normalized() {
        let p = softmax_rows(&array![[0.0, 0.0, 0.0], [1000.0, 0.0, -1000.0]]);
        for v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((p.row(1).sum() - 1.0).abs() < 1e-12);
        assert!((p[[1, 0]] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }
}
