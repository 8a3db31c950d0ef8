//! Total-variability subspace training and i-vector extraction.
//!
//! Each segment's Baum-Welch statistics are explained by a low-rank factor
//! model: the adapted mean supervector is the UBM supervector plus `T y`,
//! with a standard-normal prior on `y`. The posterior mean of `y` is the
//! i-vector.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::audio::Source;
use crate::error::{Error, Result};
use crate::gmm::{DiagGmm, SuffStats};
use crate::linalg;
use crate::seed::standard_normal;

/// The total-variability matrix, `(C_g * F)` rows by `R` columns, stored as
/// one block of `F` rows per GMM component.
#[derive(Debug, Clone, PartialEq)]
pub struct TMatrix {
    t: Array2<f64>,
    n_components: usize,
    dims: usize,
}

impl TMatrix {
    pub fn new(t: Array2<f64>, n_components: usize, dims: usize) -> Result<Self> {
        if t.nrows() != n_components * dims {
            return Err(Error::ShapeMismatch(format!(
                "T has {} rows, expected {} components x {} dims",
                t.nrows(),
                n_components,
                dims
            )));
        }
        if t.ncols() == 0 {
            return Err(Error::Training("i-vector rank must be at least 1".into()));
        }
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::Training("T matrix has non-finite entries".into()));
        }
        Ok(Self {
            t,
            n_components,
            dims,
        })
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.t.view()
    }

    /// The `F x R` block of component `c`.
    pub fn block(&self, c: usize) -> ArrayView2<'_, f64> {
        self.t.slice(s![c * self.dims..(c + 1) * self.dims, ..])
    }
}

/// Settings for total-variability EM.
#[derive(Debug, Clone)]
pub struct TvConfig {
    pub rank: usize,
    pub n_iters: usize,
    /// Scale of the seeded standard-normal initialization of T.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            rank: 400,
            n_iters: 10,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// What happened during total-variability training.
#[derive(Debug, Clone, Default)]
pub struct TvReport {
    /// Sum over segments of the T-dependent part of the marginal
    /// log-likelihood, evaluated at the start of each iteration;
    /// non-decreasing.
    pub objective_trace: Vec<f64>,
    /// M-step systems that needed the least-squares fallback.
    pub least_squares_fallbacks: usize,
    /// Set when fewer segments than the rank were supplied.
    pub few_segments_warning: bool,
}

struct Posterior {
    mean: Array1<f64>,
    second_moment: Array2<f64>,
    objective: f64,
}

/// Per-segment posterior of the latent factor given the current T.
fn e_step_segment(
    stats: &SuffStats,
    g: &[Array2<f64>],
    t: &TMatrix,
    inv_var: &Array2<f64>,
) -> Result<Posterior> {
    let r = t.rank();
    let mut l = Array2::<f64>::eye(r);
    for (c, gc) in g.iter().enumerate() {
        l.scaled_add(stats.n[c], gc);
    }
    let mut b = Array1::<f64>::zeros(r);
    for c in 0..t.n_components() {
        let fw = &stats.f.row(c) * &inv_var.row(c);
        b += &t.block(c).t().dot(&fw);
    }
    let chol = linalg::cholesky(l.view())
        .map_err(|e| Error::Training(format!("posterior precision not PD: {e}")))?;
    let mean = linalg::cholesky_solve_vec(&chol, b.view());
    let objective = 0.5 * (b.dot(&mean) - linalg::log_det_from_cholesky(&chol));
    let mut second_moment = linalg::cholesky_inverse(&chol);
    for i in 0..r {
        for j in 0..r {
            second_moment[[i, j]] += mean[i] * mean[j];
        }
    }
    Ok(Posterior {
        mean,
        second_moment,
        objective,
    })
}

/// Per-component Gram matrices `T_c^T diag(1/var_c) T_c`.
fn gram_blocks(t: &TMatrix, inv_var: &Array2<f64>) -> Vec<Array2<f64>> {
    (0..t.n_components())
        .map(|c| {
            let block = t.block(c);
            let weighted = &block.to_owned() * &inv_var.row(c).insert_axis(ndarray::Axis(1));
            block.t().dot(&weighted)
        })
        .collect()
}

/// Train the total-variability matrix by EM over segment statistics.
pub fn train_total_variability(
    stats: &[SuffStats],
    ubm: &DiagGmm,
    cfg: &TvConfig,
) -> Result<(TMatrix, TvReport)> {
    if stats.is_empty() {
        return Err(Error::Training("no segments to train on".into()));
    }
    let cg = ubm.n_components();
    let f = ubm.dims();
    for (i, s) in stats.iter().enumerate() {
        if s.n.len() != cg || s.f.dim() != (cg, f) {
            return Err(Error::ShapeMismatch(format!(
                "segment {i} statistics do not match the UBM shape"
            )));
        }
    }
    let mut report = TvReport {
        few_segments_warning: stats.len() < cfg.rank,
        ..TvReport::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Array2::from_shape_fn((cg * f, cfg.rank), |_| {
        cfg.init_scale * standard_normal(&mut rng)
    });
    let mut t = TMatrix::new(init, cg, f)?;
    let inv_var = ubm.variances.mapv(|v| 1.0 / v);

    for _ in 0..cfg.n_iters {
        let g = gram_blocks(&t, &inv_var);
        let r = cfg.rank;
        let mut a_acc = vec![Array2::<f64>::zeros((r, r)); cg];
        let mut c_acc = vec![Array2::<f64>::zeros((f, r)); cg];
        let mut objective = 0.0;
        for s in stats {
            let post = e_step_segment(s, &g, &t, &inv_var)?;
            objective += post.objective;
            for c in 0..cg {
                a_acc[c].scaled_add(s.n[c], &post.second_moment);
                let fc = s.f.row(c);
                for i in 0..f {
                    let mut row = c_acc[c].row_mut(i);
                    row.scaled_add(fc[i], &post.mean);
                }
            }
        }
        report.objective_trace.push(objective);

        let mut new_t = Array2::<f64>::zeros((cg * f, r));
        for c in 0..cg {
            let rows = solve_m_step(&a_acc[c], &c_acc[c], &mut report)?;
            new_t.slice_mut(s![c * f..(c + 1) * f, ..]).assign(&rows);
        }
        t = TMatrix::new(new_t, cg, f)?;
    }
    Ok((t, report))
}

/// Solve `T_c A = C` for one component's rows of T.
fn solve_m_step(a: &Array2<f64>, c: &Array2<f64>, report: &mut TvReport) -> Result<Array2<f64>> {
    match linalg::cholesky(a.view()) {
        Ok(chol) => {
            let x = linalg::cholesky_solve_mat(&chol, c.t());
            Ok(x.t().to_owned())
        }
        Err(_) => {
            report.least_squares_fallbacks += 1;
            let mut out = Array2::<f64>::zeros(c.raw_dim());
            for (i, row) in c.rows().into_iter().enumerate() {
                let x = linalg::solve_sym_least_squares(a.view(), row)?;
                out.row_mut(i).assign(&x);
            }
            Ok(out)
        }
    }
}

/// MAP i-vector of one segment: `y = (I + T' S^-1 N T)^-1 T' S^-1 f`.
pub fn extract_ivector(stats: &SuffStats, t: &TMatrix, ubm: &DiagGmm) -> Result<Array1<f64>> {
    if stats.n.len() != ubm.n_components() || stats.f.dim() != (ubm.n_components(), ubm.dims()) {
        return Err(Error::ShapeMismatch(
            "statistics do not match the UBM shape".into(),
        ));
    }
    if stats.n.iter().any(|v| !v.is_finite()) || stats.f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite statistics".into()));
    }
    let inv_var = ubm.variances.mapv(|v| 1.0 / v);
    let g = gram_blocks(t, &inv_var);
    let post = e_step_segment(stats, &g, t, &inv_var)?;
    Ok(post.mean)
}

/// Scale a vector to unit Euclidean length.
pub fn length_normalize(y: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = y.dot(&y).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateIvector);
    }
    Ok(&y / norm)
}

/// An extracted i-vector tagged with its clip and channel source.
#[derive(Debug, Clone)]
pub struct IVector {
    pub y: Array1<f64>,
    pub clip_id: String,
    pub source: Source,
}
