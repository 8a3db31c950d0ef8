//! Classification backend for i-vectors: LDA to separate classes, WCCN to
//! whiten within-class variation, class-mean models, and cosine scoring.
//! Scores from the four channel systems are fused by simple averaging here;
//! learned fusion lives in the fusion module.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg;

/// LDA plus WCCN projection with the class order it was trained under.
#[derive(Debug, Clone)]
pub struct ProjectionModel {
    /// R x D, columns are generalized eigenvectors.
    pub lda: Array2<f64>,
    /// D x D lower-triangular factor B with B B^T = W^-1.
    pub wccn: Array2<f64>,
    pub classes: Vec<String>,
}

impl ProjectionModel {
    /// Apply both projections: `B^T (A^T v)`.
    pub fn project(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.lda.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "i-vector has {} dims, projection expects {}",
                v.len(),
                self.lda.nrows()
            )));
        }
        let z = self.lda.t().dot(&v);
        Ok(self.wccn.t().dot(&z))
    }

    pub fn out_dims(&self) -> usize {
        self.lda.ncols()
    }
}

/// Per-class mean model i-vectors in the projected space.
#[derive(Debug, Clone)]
pub struct ClassModels {
    /// C x D, row per class.
    pub models: Array2<f64>,
    pub classes: Vec<String>,
}

fn scatter_regularizer(trace: f64, dims: usize) -> f64 {
    1e-6 * trace / dims as f64
}

fn class_partition(labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::Training(format!(
                "label index {c} out of range for {n_classes} classes"
            )));
        }
        by_class[c].push(i);
    }
    Ok(by_class)
}

/// Train the LDA projection: columns are the leading generalized
/// eigenvectors of between-class versus within-class scatter.
///
/// The within-class scatter is ridge-regularized, columns come out unit
/// length with a deterministic sign (largest-magnitude entry positive).
pub fn train_lda(
    vectors: ArrayView2<f64>,
    labels: &[usize],
    n_classes: usize,
    out_dims: usize,
) -> Result<Array2<f64>> {
    let (n, r) = vectors.dim();
    if labels.len() != n {
        return Err(Error::ShapeMismatch("label count != vector count".into()));
    }
    if n_classes < 2 {
        return Err(Error::Training("LDA needs at least two classes".into()));
    }
    if out_dims > n_classes - 1 || out_dims == 0 || out_dims > r {
        return Err(Error::Training(format!(
            "LDA output dims {out_dims} not in 1..=min(classes-1={}, input dims {r})",
            n_classes - 1
        )));
    }
    let by_class = class_partition(labels, n_classes)?;
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Training(format!(
                "class {c} has {} samples, LDA needs at least 2",
                idx.len()
            )));
        }
    }

    let global_mean = vectors.mean_axis(Axis(0)).unwrap();
    let mut sw = Array2::<f64>::zeros((r, r));
    let mut sb = Array2::<f64>::zeros((r, r));
    for idx in &by_class {
        let mut mean = Array1::<f64>::zeros(r);
        for &i in idx {
            mean += &vectors.row(i);
        }
        mean /= idx.len() as f64;
        for &i in idx {
            let d = &vectors.row(i) - &mean;
            rank_one_update(&mut sw, d.view(), 1.0);
        }
        let d = &mean - &global_mean;
        rank_one_update(&mut sb, d.view(), idx.len() as f64);
    }
    sw /= n as f64;
    sb /= n as f64;

    let eps = scatter_regularizer(sw.diag().sum(), r);
    for i in 0..r {
        sw[[i, i]] += eps;
    }
    let l = linalg::cholesky(sw.view())
        .map_err(|e| Error::Training(format!("within-class scatter not PD: {e}")))?;
    // whiten: solve L M = Sb, then L Q = M^T; Q is the whitened Sb
    let m = forward_solve_mat(&l, sb.view());
    let mut q = forward_solve_mat(&l, m.t());
    for i in 0..r {
        for j in 0..i {
            let v = 0.5 * (q[[i, j]] + q[[j, i]]);
            q[[i, j]] = v;
            q[[j, i]] = v;
        }
    }
    let (_, vecs) = linalg::sym_eig(q.view())?;
    let mut out = Array2::<f64>::zeros((r, out_dims));
    for d in 0..out_dims {
        let u = vecs.column(d);
        // map back: v = L^-T u
        let v = back_solve_vec(&l, u);
        let norm = v.dot(&v).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Training("degenerate LDA direction".into()));
        }
        let mut v = v / norm;
        fix_sign(&mut v);
        out.column_mut(d).assign(&v);
    }
    Ok(out)
}

fn rank_one_update(acc: &mut Array2<f64>, d: ArrayView1<f64>, weight: f64) {
    let r = d.len();
    for i in 0..r {
        let wi = weight * d[i];
        for j in 0..r {
            acc[[i, j]] += wi * d[j];
        }
    }
}

/// Solve `L X = B` for lower-triangular L, column by column.
fn forward_solve_mat(l: &Array2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = Array2::<f64>::zeros(b.dim());
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut sum = b[[i, col]];
            for k in 0..i {
                sum -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = sum / l[[i, i]];
        }
    }
    x
}

/// Solve `L^T x = u` for lower-triangular L.
fn back_solve_vec(l: &Array2<f64>, u: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = u[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

fn fix_sign(v: &mut Array1<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        *v *= -1.0;
    }
}

/// Train the WCCN factor: lower-triangular B with `B B^T = W^-1`, where W is
/// the average per-class covariance of the (LDA-projected) training vectors.
pub fn train_wccn(
    projected: ArrayView2<f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<Array2<f64>> {
    let (n, d) = projected.dim();
    if labels.len() != n {
        return Err(Error::ShapeMismatch("label count != vector count".into()));
    }
    let by_class = class_partition(labels, n_classes)?;
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Training(format!(
                "class {c} has {} samples, WCCN needs at least 2",
                idx.len()
            )));
        }
    }
    let mut w = Array2::<f64>::zeros((d, d));
    for idx in &by_class {
        let mut mean = Array1::<f64>::zeros(d);
        for &i in idx {
            mean += &projected.row(i);
        }
        mean /= idx.len() as f64;
        let mut cov = Array2::<f64>::zeros((d, d));
        for &i in idx {
            let diff = &projected.row(i) - &mean;
            rank_one_update(&mut cov, diff.view(), 1.0);
        }
        cov /= idx.len() as f64;
        w += &cov;
    }
    w /= by_class.len() as f64;
    let eps = scatter_regularizer(w.diag().sum(), d);
    for i in 0..d {
        w[[i, i]] += eps;
    }
    let l = linalg::cholesky(w.view())
        .map_err(|e| Error::Training(format!("within-class covariance not PD: {e}")))?;
    let w_inv = linalg::cholesky_inverse(&l);
    linalg::cholesky(w_inv.view())
        .map_err(|e| Error::Training(format!("inverse covariance not PD: {e}")))
}

/// Per-class mean of projected training vectors.
pub fn build_class_models(
    projected: ArrayView2<f64>,
    labels: &[usize],
    classes: &[String],
) -> Result<ClassModels> {
    let by_class = class_partition(labels, classes.len())?;
    let d = projected.ncols();
    let mut models = Array2::<f64>::zeros((classes.len(), d));
    for (c, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::Training(format!("class '{}' has no samples", classes[c])));
        }
        let mut mean = Array1::<f64>::zeros(d);
        for &i in idx {
            mean += &projected.row(i);
        }
        mean /= idx.len() as f64;
        models.row_mut(c).assign(&mean);
    }
    Ok(ClassModels {
        models,
        classes: classes.to_vec(),
    })
}

/// Cosine similarity of a test vector against every class model.
pub fn cosine_score(test: ArrayView1<f64>, models: &ClassModels) -> Result<Array1<f64>> {
    let tn = test.dot(&test).sqrt();
    if !(tn > 0.0) || !tn.is_finite() {
        return Err(Error::Score("zero-norm test vector".into()));
    }
    let mut out = Array1::<f64>::zeros(models.models.nrows());
    for (c, row) in models.models.rows().into_iter().enumerate() {
        let mn = row.dot(&row).sqrt();
        if !(mn > 0.0) || !mn.is_finite() {
            return Err(Error::Score(format!(
                "zero-norm model for class '{}'",
                models.classes[c]
            )));
        }
        out[c] = test.dot(&row) / (tn * mn);
    }
    Ok(out)
}

/// Scores of N clips against C classes, as produced by one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Array2<f64>,
    pub clip_ids: Vec<String>,
    pub classes: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>, clip_ids: Vec<String>, classes: Vec<String>) -> Result<Self> {
        if scores.nrows() != clip_ids.len() || scores.ncols() != classes.len() {
            return Err(Error::Score(format!(
                "score matrix {}x{} does not match {} clips x {} classes",
                scores.nrows(),
                scores.ncols(),
                clip_ids.len(),
                classes.len()
            )));
        }
        if !scores.iter().all(|v| v.is_finite()) {
            return Err(Error::Score("non-finite score".into()));
        }
        Ok(Self {
            scores,
            clip_ids,
            classes,
        })
    }

    pub fn n_clips(&self) -> usize {
        self.scores.nrows()
    }

    /// Index of the best-scoring class per clip.
    pub fn argmax(&self) -> Vec<usize> {
        self.scores
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0usize;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Write as TSV: header `id<TAB>class...`, then one row per clip with
    /// round-trip-exact decimal scores.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("id");
        for c in &self.classes {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (i, id) in self.clip_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.scores.row(i) {
                out.push('\t');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Score(format!("{}: empty score file", path.display())))?;
        let mut cols = header.split('\t');
        if cols.next() != Some("id") {
            return Err(Error::Score(format!(
                "{}: header must start with 'id'",
                path.display()
            )));
        }
        let classes: Vec<String> = cols.map(str::to_string).collect();
        if classes.is_empty() {
            return Err(Error::Score(format!("{}: no class columns", path.display())));
        }
        let mut clip_ids = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != classes.len() + 1 {
                return Err(Error::Score(format!(
                    "{}:{}: expected {} fields, got {}",
                    path.display(),
                    lineno + 2,
                    classes.len() + 1,
                    fields.len()
                )));
            }
            clip_ids.push(fields[0].to_string());
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| {
                    Error::Score(format!(
                        "{}:{}: bad score '{f}'",
                        path.display(),
                        lineno + 2
                    ))
                })?;
                values.push(v);
            }
        }
        let scores = Array2::from_shape_vec((clip_ids.len(), classes.len()), values)
            .map_err(|e| Error::Score(format!("{}: {e}", path.display())))?;
        Self::new(scores, clip_ids, classes)
    }
}

/// Elementwise mean of aligned score matrices, one per channel system.
pub fn average_channel_scores(mats: &[ScoreMatrix]) -> Result<ScoreMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Score("no score matrices to average".into()))?;
    let mut acc = first.scores.clone();
    for m in &mats[1..] {
        if m.clip_ids != first.clip_ids || m.classes != first.classes {
            return Err(Error::Score(
                "score matrices are not aligned on clips and classes".into(),
            ));
        }
        acc += &m.scores;
    }
    acc /= mats.len() as f64;
    ScoreMatrix::new(acc, first.clip_ids.clone(), first.classes.clone())
}
