//! Small dense linear-algebra routines used by the model-training code.
//!
//! Everything here operates on symmetric positive (semi-)definite matrices of
//! modest size (up to a few hundred rows), which covers the i-vector precision
//! matrices, LDA/WCCN scatter matrices, and the factor-analysis M-step systems.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Cholesky factorization `a = l * l^T` with `l` lower-triangular.
///
/// Fails if `a` is not (numerically) positive definite.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Linalg(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::Linalg(format!(
                        "matrix not positive definite (pivot {} = {:e})",
                        i, sum
                    )));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `l * l^T * x = b` given the lower Cholesky factor `l`.
pub fn cholesky_solve_vec(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    // forward: l z = b
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * z[k];
        }
        z[i] = sum / l[[i, i]];
    }
    // backward: l^T x = z
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = z[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solve `l * l^T * X = B` column by column.
pub fn cholesky_solve_mat(l: &Array2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut x = Array2::<f64>::zeros(b.dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        x.column_mut(j).assign(&cholesky_solve_vec(l, col));
    }
    x
}

/// Inverse of `a = l * l^T` from its lower Cholesky factor.
pub fn cholesky_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        inv.column_mut(j).assign(&cholesky_solve_vec(l, e.view()));
    }
    // symmetrize against round-off
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    inv
}

/// `log det(a)` from the lower Cholesky factor of `a`.
pub fn log_det_from_cholesky(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>()
}

/// Eigendecomposition of a symmetric matrix via the cyclic Jacobi method.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Convergence is to machine precision for the matrix sizes used
/// here; the sweep count is capped defensively.
pub fn sym_eig(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Linalg(format!(
            "sym_eig needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[[j, j]]
            .partial_cmp(&m[[i, i]])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok((values, vectors))
}

/// Solve `a x = b` for symmetric `a` in the least-squares sense through an
/// eigendecomposition pseudo-inverse. Used where a Cholesky solve fails.
pub fn solve_sym_least_squares(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let (vals, vecs) = sym_eig(a)?;
    let cutoff = vals
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE)
        * 1e-12;
    let mut x = Array1::<f64>::zeros(b.len());
    for (i, &lambda) in vals.iter().enumerate() {
        if lambda.abs() <= cutoff {
            continue;
        }
        let u = vecs.column(i);
        let coeff = u.dot(&b) / lambda;
        x.scaled_add(coeff, &u);
    }
    Ok(x)
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        m.t().dot(&m) + Array2::<f64>::eye(n) * 0.5
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = random_spd(6, 1);
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in a.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_err());
    }

    #[test]
    fn solve_matches_direct() {
        let a = random_spd(5, 2);
        let b = array![1.0, -2.0, 0.5, 3.0, -1.0];
        let l = cholesky(a.view()).unwrap();
        let x = cholesky_solve_vec(&l, b.view());
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn inverse_is_inverse() {
        let a = random_spd(4, 3);
        let l = cholesky(a.view()).unwrap();
        let inv = cholesky_inverse(&l);
        let id = a.dot(&inv);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[[i, j]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eig_reconstructs_and_orders() {
        let a = random_spd(7, 4);
        let (vals, vecs) = sym_eig(a.view()).unwrap();
        for w in vals.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for i in 0..7 {
            let v = vecs.column(i);
            let av = a.dot(&v);
            for (x, y) in av.iter().zip(v.iter().map(|&u| u * vals[i])) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn eig_diag() {
        let a = array![[2.0, 0.0], [0.0, 5.0]];
        let (vals, _) = sym_eig(a.view()).unwrap();
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_handles_singular() {
        // rank-1 system: a = u u^T, b in range
        let u = array![1.0, 2.0];
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = &u * 3.0;
        let x = solve_sym_least_squares(a.view(), b.view()).unwrap();
        let ax = a.dot(&x);
        for (p, q) in ax.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn log_det_matches() {
        let a = random_spd(5, 9);
        let l = cholesky(a.view()).unwrap();
        let (vals, _) = sym_eig(a.view()).unwrap();
        let direct: f64 = vals.iter().map(|v| v.ln()).sum();
        assert!((log_det_from_cholesky(&l) - direct).abs() < 1e-9);
    }
}
