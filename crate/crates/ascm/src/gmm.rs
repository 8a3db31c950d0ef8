//! Diagonal-covariance GMM background models and the Baum-Welch statistics
//! that the i-vector extractor consumes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    pub weights: Array1<f64>,
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
}

impl DiagGmm {
    pub fn n_components(&self) -> usize {
        self.means.nrows()
    }

    pub fn dims(&self) -> usize {
        self.means.ncols()
    }

    /// Per-frame, per-component log of weight times Gaussian density.
    ///
    /// Computed as three matrix products so large frame blocks stay cheap.
    fn log_joint(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let inv_var = 1.0 / &self.variances;
        let mean_over_var = &self.means * &inv_var;
        // constant per component: sum(m^2/v) + sum(ln v) + F ln 2pi - 2 ln w
        let f = self.dims() as f64;
        let consts = Array1::from_iter((0..self.n_components()).map(|c| {
            let m = self.means.row(c);
            let v = self.variances.row(c);
            let mm: f64 = m.iter().zip(v.iter()).map(|(mi, vi)| mi * mi / vi).sum();
            let lv: f64 = v.iter().map(|vi| vi.ln()).sum();
            mm + lv + f * (2.0 * std::f64::consts::PI).ln() - 2.0 * self.weights[c].ln()
        }));
        let x_sq = x.mapv(|v| v * v);
        let a = x_sq.dot(&inv_var.t());
        let b = x.dot(&mean_over_var.t());
        let mut out = a - 2.0 * &b;
        for mut row in out.rows_mut() {
            row += &consts;
        }
        out.mapv_inplace(|v| -0.5 * v);
        out
    }

    /// Responsibilities and the average per-frame log-likelihood.
    pub fn responsibilities(&self, x: ArrayView2<f64>) -> (Array2<f64>, f64) {
        let mut logp = self.log_joint(x);
        let mut total = 0.0;
        for mut row in logp.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let norm = max + sum.ln();
            total += norm;
            row.mapv_inplace(|v| (v - norm).exp());
        }
        (logp, total / x.nrows() as f64)
    }

    /// Average per-frame log-likelihood under the mixture.
    pub fn avg_log_likelihood(&self, x: ArrayView2<f64>) -> f64 {
        let logp = self.log_joint(x);
        let mut total = 0.0;
        for row in logp.rows() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            total += max + sum.ln();
        }
        total / x.nrows() as f64
    }
}

/// EM settings for UBM training.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood gain drops below this; zero
    /// runs all iterations.
    pub rel_tol: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            rel_tol: 0.0,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

/// What happened during UBM training.
#[derive(Debug, Clone, Default)]
pub struct UbmReport {
    /// Average per-frame log-likelihood evaluated at the start of each EM
    /// iteration; non-decreasing.
    pub log_likelihood_trace: Vec<f64>,
    /// (iteration, component) pairs that lost all occupancy and were
    /// re-seeded at a random frame.
    pub reseeded: Vec<(usize, usize)>,
    pub iterations_run: usize,
}

/// Train a diagonal GMM on pooled feature frames by EM from a seeded
/// k-means initialization.
pub fn train_ubm(
    frames: ArrayView2<f64>,
    n_components: usize,
    cfg: &EmConfig,
) -> Result<(DiagGmm, UbmReport)> {
    let t = frames.nrows();
    let f = frames.ncols();
    if n_components == 0 {
        return Err(Error::Training("need at least one component".into()));
    }
    if t < n_components * 10 {
        return Err(Error::Training(format!(
            "{t} frames is too few for {n_components} components (want at least {})",
            n_components * 10
        )));
    }
    let global_mean = frames.mean_axis(Axis(0)).unwrap();
    let global_var = {
        let mut v = Array1::<f64>::zeros(f);
        for row in frames.rows() {
            for j in 0..f {
                let d = row[j] - global_mean[j];
                v[j] += d * d;
            }
        }
        v / t as f64
    };
    let floor = global_var.mapv(|v| (v * cfg.variance_floor).max(f64::MIN_POSITIVE));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gmm = kmeans_init(frames, n_components, &floor, &global_var, &mut rng);

    let mut report = UbmReport::default();
    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 0..cfg.max_iters {
        let (gamma, ll) = gmm.responsibilities(frames);
        report.log_likelihood_trace.push(ll);
        report.iterations_run = iter + 1;

        let n = gamma.sum_axis(Axis(0));
        let sum_x = gamma.t().dot(&frames);
        let sum_xx = gamma.t().dot(&frames.mapv(|v| v * v));
        for c in 0..n_components {
            if n[c] < 1.0 {
                // dead component: plant it on a random frame with global spread
                let pick = rng.random_range(0..t);
                gmm.means.row_mut(c).assign(&frames.row(pick));
                gmm.variances.row_mut(c).assign(&global_var);
                gmm.weights[c] = 1.0 / t as f64;
                report.reseeded.push((iter, c));
                continue;
            }
            gmm.weights[c] = n[c] / t as f64;
            for j in 0..f {
                let mean = sum_x[[c, j]] / n[c];
                let var = (sum_xx[[c, j]] / n[c] - mean * mean).max(floor[j]);
                gmm.means[[c, j]] = mean;
                gmm.variances[[c, j]] = var;
            }
        }
        let wsum = gmm.weights.sum();
        gmm.weights /= wsum;

        if cfg.rel_tol > 0.0 && prev_ll.is_finite() {
            let gain = (ll - prev_ll).abs() / ll.abs().max(1e-12);
            if gain < cfg.rel_tol {
                break;
            }
        }
        prev_ll = ll;
    }
    Ok((gmm, report))
}

/// Seeded k-means++ centers refined by a few Lloyd rounds; per-cluster
/// statistics become the initial mixture parameters.
fn kmeans_init(
    frames: ArrayView2<f64>,
    k: usize,
    floor: &Array1<f64>,
    global_var: &Array1<f64>,
    rng: &mut ChaCha8Rng,
) -> DiagGmm {
    let t = frames.nrows();
    let f = frames.ncols();
    let mut centers = Array2::<f64>::zeros((k, f));
    centers.row_mut(0).assign(&frames.row(rng.random_range(0..t)));
    let mut d2 = Array1::<f64>::from_elem(t, f64::INFINITY);
    for c in 1..k {
        let prev = centers.row(c - 1);
        for (i, row) in frames.rows().into_iter().enumerate() {
            let dist: f64 = row
                .iter()
                .zip(prev.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < d2[i] {
                d2[i] = dist;
            }
        }
        let total: f64 = d2.sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = t - 1;
            for i in 0..t {
                u -= d2[i];
                if u <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..t)
        };
        centers.row_mut(c).assign(&frames.row(pick));
    }

    let mut assign = vec![0usize; t];
    for _ in 0..4 {
        for (i, row) in frames.rows().into_iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..k {
                let dist: f64 = row
                    .iter()
                    .zip(centers.row(c).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            assign[i] = best.1;
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, f));
        for (i, row) in frames.rows().into_iter().enumerate() {
            counts[assign[i]] += 1;
            let mut s = sums.row_mut(assign[i]);
            s += &row;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centers.row_mut(c);
                row.assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
    }

    let mut counts = vec![0usize; k];
    let mut var_acc = Array2::<f64>::zeros((k, f));
    for (i, row) in frames.rows().into_iter().enumerate() {
        let c = assign[i];
        counts[c] += 1;
        for j in 0..f {
            let d = row[j] - centers[[c, j]];
            var_acc[[c, j]] += d * d;
        }
    }
    let mut weights = Array1::<f64>::zeros(k);
    let mut variances = Array2::<f64>::zeros((k, f));
    for c in 0..k {
        weights[c] = (counts[c].max(1)) as f64 / t as f64;
        for j in 0..f {
            variances[[c, j]] = if counts[c] > 1 {
                (var_acc[[c, j]] / counts[c] as f64).max(floor[j])
            } else {
                global_var[j].max(floor[j])
            };
        }
    }
    let wsum = weights.sum();
    weights /= wsum;
    DiagGmm {
        weights,
        means: centers,
        variances,
    }
}

/// Zeroth- and centered first-order Baum-Welch statistics of one segment.
///
/// The adapted mean supervector of a segment is recoverable as
/// `m_c + f_c / n_c` per component.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    /// Per-component occupancy.
    pub n: Array1<f64>,
    /// Per-component sum of responsibilities times mean-centered frames.
    pub f: Array2<f64>,
    pub total_frames: usize,
}

impl SuffStats {
    /// Statistics of the concatenation of two segments.
    pub fn merge(&self, other: &SuffStats) -> SuffStats {
        SuffStats {
            n: &self.n + &other.n,
            f: &self.f + &other.f,
            total_frames: self.total_frames + other.total_frames,
        }
    }

    /// Component means after shifting the UBM by these statistics.
    ///
    /// Components with effectively zero occupancy keep the UBM mean; a
    /// subnormal occupancy would otherwise blow up the division.
    pub fn adapted_means(&self, ubm: &DiagGmm) -> Array2<f64> {
        let mut out = ubm.means.clone();
        for c in 0..ubm.n_components() {
            if self.n[c] > 1e-8 {
                let mut row = out.row_mut(c);
                row.scaled_add(1.0 / self.n[c], &self.f.row(c));
            }
        }
        out
    }
}

/// Accumulate Baum-Welch statistics of `feats` under the UBM.
pub fn accumulate_stats(ubm: &DiagGmm, feats: ArrayView2<f64>) -> Result<SuffStats> {
    if feats.ncols() != ubm.dims() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} dims, UBM has {}",
            feats.ncols(),
            ubm.dims()
        )));
    }
    if feats.nrows() == 0 {
        return Err(Error::Feature("no frames to accumulate".into()));
    }
    let (gamma, _) = ubm.responsibilities(feats);
    let n = gamma.sum_axis(Axis(0));
    let mut f = gamma.t().dot(&feats);
    for c in 0..ubm.n_components() {
        let mut row = f.row_mut(c);
        row.scaled_add(-n[c], &ubm.means.row(c));
    }
    Ok(SuffStats {
        n,
        f,
        total_frames: feats.nrows(),
    })
}
