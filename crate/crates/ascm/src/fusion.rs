//! Linear-logistic score fusion. K score matrices are combined as
//! `l' = sum_k alpha_k l_k + beta` and the weights are trained to minimize a
//! class-weighted multiclass cross-entropy under a flat prior. With K = 1
//! this degenerates to score calibration.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::backend::ScoreMatrix;
use crate::error::{Error, Result};

/// Fusion weights: one scale per input system plus a per-class offset.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub alphas: Array1<f64>,
    pub beta: Array1<f64>,
    pub classes: Vec<String>,
}

impl FusionModel {
    pub fn n_systems(&self) -> usize {
        self.alphas.len()
    }
}

#[derive(Debug, Clone)]
pub struct FusionTrainConfig {
    pub max_iters: usize,
    /// Stop once the gradient 2-norm falls below this.
    pub grad_tol: f64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-9,
        }
    }
}

/// Per-iteration diagnostics from fusion training.
#[derive(Debug, Clone)]
pub struct FusionReport {
    /// Objective before each update, plus the final value.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Class weights w_c = (1/C)/(N_c/N): inverse class frequency against a flat
/// prior, so rare classes count for more in the objective.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Array1<f64>> {
    if labels.is_empty() {
        return Err(Error::Training("no labels for class weights".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::Training(format!(
                "label index {l} out of range for {n_classes} classes"
            )));
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let c = n_classes as f64;
    let mut w = Array1::<f64>::zeros(n_classes);
    for (k, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            return Err(Error::Training(format!("class index {k} has no samples")));
        }
        w[k] = (1.0 / c) / (cnt as f64 / n);
    }
    Ok(w)
}

fn check_aligned(sets: &[ScoreMatrix]) -> Result<()> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Score("fusion needs at least one score set".into()))?;
    for s in &sets[1..] {
        if s.clip_ids != first.clip_ids || s.classes != first.classes {
            return Err(Error::Score(
                "score sets are not aligned on clips and classes".into(),
            ));
        }
    }
    Ok(())
}

/// Apply fusion weights: `l' = sum_k alpha_k l_k + beta` row-wise.
pub fn fuse_scores(model: &FusionModel, sets: &[ScoreMatrix]) -> Result<ScoreMatrix> {
    check_aligned(sets)?;
    if sets.len() != model.n_systems() {
        return Err(Error::Score(format!(
            "model fuses {} systems, got {} score sets",
            model.n_systems(),
            sets.len()
        )));
    }
    if sets[0].classes != model.classes {
        return Err(Error::Score("class order differs from fusion model".into()));
    }
    if model.beta.len() != model.classes.len() {
        return Err(Error::Score("offset dims differ from class count".into()));
    }
    let mut fused = Array2::<f64>::zeros(sets[0].scores.dim());
    for (k, s) in sets.iter().enumerate() {
        fused.scaled_add(model.alphas[k], &s.scores);
    }
    fused += &model.beta.view().insert_axis(Axis(0));
    ScoreMatrix::new(fused, sets[0].clip_ids.clone(), sets[0].classes.clone())
}

/// Posterior over classes for one fused score row, under a flat prior.
/// Max-subtracted softmax, safe for widely scaled scores.
pub fn posterior(row: ArrayView1<f64>) -> Array1<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = row.mapv(|v| (v - m).exp());
    let sum = p.sum();
    p /= sum;
    p
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Weighted multiclass cross-entropy of the fused scores: the average
/// negative log posterior of the true class, class-weighted.
pub fn objective(
    model: &FusionModel,
    sets: &[ScoreMatrix],
    labels: &[usize],
    weights: ArrayView1<f64>,
) -> Result<f64> {
    let fused = fuse_scores(model, sets)?;
    objective_of_fused(&fused.scores, labels, weights)
}

fn objective_of_fused(
    fused: &Array2<f64>,
    labels: &[usize],
    weights: ArrayView1<f64>,
) -> Result<f64> {
    let n = fused.nrows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch("label count != score rows".into()));
    }
    let mut total = 0.0;
    for (i, row) in fused.rows().into_iter().enumerate() {
        let lse = log_sum_exp(row);
        total += weights[labels[i]] * (lse - row[labels[i]]);
    }
    Ok(total / n as f64)
}

/// Objective plus its gradient with respect to (alphas, beta).
pub fn objective_and_grad(
    alphas: &Array1<f64>,
    beta: &Array1<f64>,
    sets: &[ScoreMatrix],
    labels: &[usize],
    weights: ArrayView1<f64>,
) -> (f64, Array1<f64>, Array1<f64>) {
    let n = sets[0].scores.nrows();
    let c = sets[0].scores.ncols();
    let k = sets.len();
    let mut fused = Array2::<f64>::zeros((n, c));
    for (j, s) in sets.iter().enumerate() {
        fused.scaled_add(alphas[j], &s.scores);
    }
    fused += &beta.view().insert_axis(Axis(0));

    let mut obj = 0.0;
    let mut g_alpha = Array1::<f64>::zeros(k);
    let mut g_beta = Array1::<f64>::zeros(c);
    for i in 0..n {
        let row = fused.row(i);
        let lse = log_sum_exp(row);
        let w = weights[labels[i]];
        obj += w * (lse - row[labels[i]]);
        let p = posterior(row);
        for cc in 0..c {
            let resid = p[cc] - ((cc == labels[i]) as u8 as f64);
            g_beta[cc] += w * resid;
            for (j, s) in sets.iter().enumerate() {
                g_alpha[j] += w * resid * s.scores[[i, cc]];
            }
        }
    }
    let scale = 1.0 / n as f64;
    (obj * scale, g_alpha * scale, g_beta * scale)
}

/// Train fusion weights by gradient descent with backtracking line search.
/// The objective is convex in (alphas, beta), so this finds the global
/// minimum up to the stopping tolerance.
pub fn train_fusion(
    sets: &[ScoreMatrix],
    labels: &[usize],
    cfg: &FusionTrainConfig,
) -> Result<(FusionModel, FusionReport)> {
    check_aligned(sets)?;
    if cfg.grad_tol <= 0.0 {
        return Err(Error::Config("grad_tol must be positive".into()));
    }
    let k = sets.len();
    let c = sets[0].classes.len();
    let weights = class_weights(labels, c)?;
    let mut alphas = Array1::<f64>::from_elem(k, 1.0 / k as f64);
    let mut beta = Array1::<f64>::zeros(c);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut step = 1.0f64;
    for _ in 0..cfg.max_iters {
        let (obj, g_a, g_b) = objective_and_grad(&alphas, &beta, sets, labels, weights.view());
        if !obj.is_finite() {
            return Err(Error::Training("fusion objective is not finite".into()));
        }
        trace.push(obj);
        let gnorm2 = g_a.dot(&g_a) + g_b.dot(&g_b);
        if gnorm2.sqrt() < cfg.grad_tol {
            converged = true;
            break;
        }
        // Armijo backtracking along the negative gradient
        let mut t = (step * 2.0).min(1e6);
        let mut accepted = false;
        for _ in 0..60 {
            let cand_a = &alphas - &(&g_a * t);
            let cand_b = &beta - &(&g_b * t);
            let mut fused = Array2::<f64>::zeros(sets[0].scores.dim());
            for (j, s) in sets.iter().enumerate() {
                fused.scaled_add(cand_a[j], &s.scores);
            }
            fused += &cand_b.view().insert_axis(Axis(0));
            let cand_obj = objective_of_fused(&fused, labels, weights.view())?;
            if cand_obj.is_finite() && cand_obj <= obj - 1e-4 * t * gnorm2 {
                alphas = cand_a;
                beta = cand_b;
                step = t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no productive step left at float precision
            converged = true;
            break;
        }
    }
    let final_obj = {
        let (obj, _, _) = objective_and_grad(&alphas, &beta, sets, labels, weights.view());
        obj
    };
    trace.push(final_obj);
    Ok((
        FusionModel {
            alphas,
            beta,
            classes: sets[0].classes.clone(),
        },
        FusionReport {
            objective_trace: trace,
            converged,
        },
    ))
}

/// Average the fused evaluation scores of several fold-level fusion models.
pub fn bag_fold_fusions(models: &[FusionModel], sets: &[ScoreMatrix]) -> Result<ScoreMatrix> {
    let first = models
        .first()
        .ok_or_else(|| Error::Score("no fold models to bag".into()))?;
    for m in &models[1..] {
        if m.n_systems() != first.n_systems() || m.classes != first.classes {
            return Err(Error::Score(
                "fold fusion models disagree on systems or class order".into(),
            ));
        }
    }
    let mut acc: Option<Array2<f64>> = None;
    for m in models {
        let fused = fuse_scores(m, sets)?;
        match &mut acc {
            None => acc = Some(fused.scores),
            Some(a) => *a += &fused.scores,
        }
    }
    let mut scores = acc.unwrap();
    scores /= models.len() as f64;
    ScoreMatrix::new(scores, sets[0].clip_ids.clone(), sets[0].classes.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn classes(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("clip{i}")).collect()
    }

    fn random_set(n: usize, c: usize, rng: &mut ChaCha8Rng) -> ScoreMatrix {
        ScoreMatrix::new(
            Array2::from_shape_fn((n, c), |_| gaussian(rng)),
            ids(n),
            classes(c),
        )
        .unwrap()
    }

    #[test]
    fn weights_balanced_and_skewed() {
        let w = class_weights(&[0, 1, 0, 1], 2).unwrap();
        assert_eq!(w, array![1.0, 1.0]);
        let w = class_weights(&[0, 0, 0, 1], 2).unwrap();
        assert_eq!(w, array![2.0 / 3.0, 2.0]);
        // sum_c w_c N_c = N
        let total = w[0] * 3.0 + w[1] * 1.0;
        assert!((total - 4.0).abs() < 1e-12);
        assert!(class_weights(&[0, 0], 2).is_err());
    }

    #[test]
    fn identity_fusion_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_set(5, 3, &mut rng);
        let m = FusionModel {
            alphas: array![1.0],
            beta: Array1::zeros(3),
            classes: classes(3),
        };
        let fused = fuse_scores(&m, std::slice::from_ref(&s)).unwrap();
        assert_eq!(fused.scores, s.scores);
    }

    #[test]
    fn fusion_selects_and_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s1 = random_set(4, 2, &mut rng);
        let s2 = random_set(4, 2, &mut rng);
        let m = FusionModel {
            alphas: array![0.0, 1.0],
            beta: Array1::zeros(2),
            classes: classes(2),
        };
        let fused = fuse_scores(&m, &[s1.clone(), s2.clone()]).unwrap();
        assert_eq!(fused.scores, s2.scores);

        // constant offset leaves posteriors unchanged
        let shifted = FusionModel {
            alphas: array![0.0, 1.0],
            beta: array![1.0, 1.0],
            classes: classes(2),
        };
        let f2 = fuse_scores(&shifted, &[s1, s2]).unwrap();
        for (a, b) in fused.scores.rows().into_iter().zip(f2.scores.rows()) {
            let pa = posterior(a);
            let pb = posterior(b);
            for (x, y) in pa.iter().zip(pb.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusion_rejects_misalignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s1 = random_set(4, 2, &mut rng);
        let mut s2 = random_set(4, 2, &mut rng);
        s2.clip_ids[0] = "other".into();
        let m = FusionModel {
            alphas: array![0.5, 0.5],
            beta: Array1::zeros(2),
            classes: classes(2),
        };
        assert!(fuse_scores(&m, &[s1, s2]).is_err());
    }

    #[test]
    fn posterior_values() {
        let p = posterior(array![0.0, 0.0].view());
        assert_eq!(p, array![0.5, 0.5]);
        let p = posterior(array![3.0f64.ln(), 0.0].view());
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
        // stabilization: huge scores do not overflow
        let p = posterior(array![1000.0, 0.0].view());
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        // shift invariance
        let a = posterior(array![0.3, -1.2, 2.0].view());
        let b = posterior(array![0.3 + 7.0, -1.2 + 7.0, 2.0 + 7.0].view());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_uniform_case_is_log2() {
        let s = ScoreMatrix::new(Array2::zeros((2, 2)), ids(2), classes(2)).unwrap();
        let labels = [0usize, 1];
        let w = class_weights(&labels, 2).unwrap();
        let m = FusionModel {
            alphas: array![1.0],
            beta: Array1::zeros(2),
            classes: classes(2),
        };
        let obj = objective(&m, std::slice::from_ref(&s), &labels, w.view()).unwrap();
        assert!((obj - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_direct_formula() {
        // direct evaluation with explicit sums, no shared code with production
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = 6;
            let c = 3;
            let sets = vec![random_set(n, c, &mut rng), random_set(n, c, &mut rng)];
            let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
            let w = class_weights(&labels, c).unwrap();
            let m = FusionModel {
                alphas: array![0.7, -0.2],
                beta: array![0.1, 0.0, -0.3],
                classes: classes(c),
            };
            let got = objective(&m, &sets, &labels, w.view()).unwrap();

            let mut want = 0.0;
            for i in 0..n {
                let mut row = vec![0.0f64; c];
                for (cc, r) in row.iter_mut().enumerate() {
                    *r = 0.7 * sets[0].scores[[i, cc]] - 0.2 * sets[1].scores[[i, cc]]
                        + m.beta[cc];
                }
                let denom: f64 = row.iter().map(|v| v.exp()).sum();
                let p_true = row[labels[i]].exp() / denom;
                want -= w[labels[i]] * p_true.ln();
            }
            want /= n as f64;
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn objective_vanishes_when_confident() {
        let s = ScoreMatrix::new(
            array![[100.0, 0.0], [0.0, 100.0]],
            ids(2),
            classes(2),
        )
        .unwrap();
        let labels = [0usize, 1];
        let w = class_weights(&labels, 2).unwrap();
        let m = FusionModel {
            alphas: array![1.0],
            beta: Array1::zeros(2),
            classes: classes(2),
        };
        let obj = objective(&m, std::slice::from_ref(&s), &labels, w.view()).unwrap();
        assert!(obj < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let c = 3;
        let sets = vec![random_set(n, c, &mut rng), random_set(n, c, &mut rng)];
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let w = class_weights(&labels, c).unwrap();
        let alphas = array![0.4, 0.9];
        let beta = array![0.2, -0.1, 0.05];
        let (_, g_a, g_b) = objective_and_grad(&alphas, &beta, &sets, &labels, w.view());

        let eval = |a: &Array1<f64>, b: &Array1<f64>| {
            let m = FusionModel {
                alphas: a.clone(),
                beta: b.clone(),
                classes: classes(c),
            };
            objective(&m, &sets, &labels, w.view()).unwrap()
        };
        let h = 1e-6;
        for j in 0..2 {
            let mut ap = alphas.clone();
            let mut am = alphas.clone();
            ap[j] += h;
            am[j] -= h;
            let fd = (eval(&ap, &beta) - eval(&am, &beta)) / (2.0 * h);
            let rel = (fd - g_a[j]).abs() / g_a[j].abs().max(1.0);
            assert!(rel < 1e-6, "alpha[{j}]: fd {fd} vs {}", g_a[j]);
        }
        for cc in 0..c {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[cc] += h;
            bm[cc] -= h;
            let fd = (eval(&alphas, &bp) - eval(&alphas, &bm)) / (2.0 * h);
            let rel = (fd - g_b[cc]).abs() / g_b[cc].abs().max(1.0);
            assert!(rel < 1e-6, "beta[{cc}]: fd {fd} vs {}", g_b[cc]);
        }
    }

    #[test]
    fn calibration_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let c = 3;
        // mildly informative scores
        let mut scores = Array2::<f64>::zeros((n, c));
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        for i in 0..n {
            for cc in 0..c {
                scores[[i, cc]] =
                    0.8 * ((cc == labels[i]) as u8 as f64) + 0.4 * gaussian(&mut rng);
            }
        }
        let s = ScoreMatrix::new(scores, ids(n), classes(c)).unwrap();
        let w = class_weights(&labels, c).unwrap();
        let identity = FusionModel {
            alphas: array![1.0],
            beta: Array1::zeros(c),
            classes: classes(c),
        };
        let base = objective(&identity, std::slice::from_ref(&s), &labels, w.view()).unwrap();
        let (model, _) =
            train_fusion(std::slice::from_ref(&s), &labels, &FusionTrainConfig::default())
                .unwrap();
        let trained =
            objective(&model, std::slice::from_ref(&s), &labels, w.view()).unwrap();
        assert!(trained <= base + 1e-9, "{trained} vs base {base}");
    }

    #[test]
    fn separable_scores_drive_objective_down() {
        let n = 12;
        let c = 3;
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let mut scores = Array2::<f64>::zeros((n, c));
        for i in 0..n {
            scores[[i, labels[i]]] = 1.0;
        }
        let s = ScoreMatrix::new(scores, ids(n), classes(c)).unwrap();
        let cfg = FusionTrainConfig {
            max_iters: 300,
            grad_tol: 1e-12,
        };
        let (_, report) = train_fusion(std::slice::from_ref(&s), &labels, &cfg).unwrap();
        for pair in report.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "objective rose: {pair:?}");
        }
        assert!(*report.objective_trace.last().unwrap() < 0.01);
    }

    #[test]
    fn joint_fusion_beats_best_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let c = 4;
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let mut make = |strength: f64| {
            let mut sc = Array2::<f64>::zeros((n, c));
            for i in 0..n {
                for cc in 0..c {
                    sc[[i, cc]] = strength * ((cc == labels[i]) as u8 as f64)
                        + 0.8 * gaussian(&mut rng);
                }
            }
            ScoreMatrix::new(sc, ids(n), classes(c)).unwrap()
        };
        let sets = vec![make(0.9), make(0.5)];
        let w = class_weights(&labels, c).unwrap();
        let cfg = FusionTrainConfig {
            max_iters: 5000,
            grad_tol: 1e-10,
        };
        let mut best_single = f64::INFINITY;
        for s in &sets {
            let (m, _) = train_fusion(std::slice::from_ref(s), &labels, &cfg).unwrap();
            let obj = objective(&m, std::slice::from_ref(s), &labels, w.view()).unwrap();
            best_single = best_single.min(obj);
        }
        let (joint, _) = train_fusion(&sets, &labels, &cfg).unwrap();
        let joint_obj = objective(&joint, &sets, &labels, w.view()).unwrap();
        assert!(
            joint_obj <= best_single + 1e-6,
            "joint {joint_obj} vs best single {best_single}"
        );
    }

    #[test]
    fn bagging_averages_fold_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random_set(5, 2, &mut rng);
        let mk = |b0: f64| FusionModel {
            alphas: array![1.0],
            beta: array![b0, 0.0],
            classes: classes(2),
        };
        // symmetric offsets cancel
        let bagged =
            bag_fold_fusions(&[mk(1.0), mk(-1.0)], std::slice::from_ref(&s)).unwrap();
        let plain = fuse_scores(&mk(0.0), std::slice::from_ref(&s)).unwrap();
        for (a, b) in bagged.scores.iter().zip(plain.scores.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // identical models: same as one
        let bagged =
            bag_fold_fusions(&[mk(0.5), mk(0.5)], std::slice::from_ref(&s)).unwrap();
        let single = fuse_scores(&mk(0.5), std::slice::from_ref(&s)).unwrap();
        assert_eq!(bagged.scores, single.scores);
        // four folds: mean of the four fused matrices
        let models = [mk(0.1), mk(0.2), mk(0.3), mk(0.4)];
        let bagged = bag_fold_fusions(&models, std::slice::from_ref(&s)).unwrap();
        let mut want = Array2::<f64>::zeros(s.scores.dim());
        for m in &models {
            want += &fuse_scores(m, std::slice::from_ref(&s)).unwrap().scores;
        }
        want /= 4.0;
        for (a, b) in bagged.scores.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bagging_rejects_mismatched_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_set(3, 2, &mut rng);
        let a = FusionModel {
            alphas: array![1.0],
            beta: array![0.0, 0.0],
            classes: classes(2),
        };
        let b = FusionModel {
            alphas: array![1.0, 1.0],
            beta: array![0.0, 0.0],
            classes: classes(2),
        };
        assert!(bag_fold_fusions(&[a, b], std::slice::from_ref(&s)).is_err());
    }
}
