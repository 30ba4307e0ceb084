//! Multi-view metric learning: per-view marginal Fisher analysis coupled by
//! an HSIC consensus term, solved by alternating generalized eigensolves.
//!
//! For view `v` with standardized features `X_v` (`n_v x N`) and MFA graph
//! Laplacians `L_v` (intrinsic) and `B_v` (penalty), each update solves
//!
//! ```text
//! max_W  tr(W^T P_v W) / tr(W^T C_v W)
//! P_v = X_v B_v X_v^T + lambda * sum_{w != v} X_v H K_w H X_v^T
//! C_v = X_v L_v X_v^T + ridge * I
//! ```
//!
//! with `K_w = X_w^T W_w W_w^T X_w` and `H` the centering matrix, through the
//! generalized eigenproblem `P w = eta C w`. The learned metric of view `v`
//! is `M_v = W_v W_v^T`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coding::{check_class_sizes, Standardization, ViewFeatures};
use crate::error::{precondition, Error, Result};
use crate::io;
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Projected dimension per view (capped at the view dimension).
    pub d: usize,
    /// Weight of the HSIC coupling term.
    pub lambda: f64,
    /// Same-class neighbours per sample in the intrinsic graph.
    pub k1: usize,
    /// Between-class pairs per class in the penalty graph.
    pub k2: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Ridge added to the intrinsic scatter so it is positive definite.
    pub ridge: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 30,
            lambda: 1.0,
            k1: 5,
            k2: 20,
            max_iters: 50,
            tol: 1e-4,
            ridge: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return precondition("d must be at least 1");
        }
        if !(self.lambda >= 0.0) {
            return precondition(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.tol > 0.0) {
            return precondition(format!("tol must be > 0, got {}", self.tol));
        }
        if !(self.ridge >= 0.0) {
            return precondition(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if self.k1 < 1 || self.k2 < 1 {
            return precondition("k1 and k2 must be at least 1");
        }
        if self.max_iters < 1 {
            return precondition("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Intrinsic and penalty graphs of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct MfaGraphPair {
    pub intrinsic: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub intrinsic_laplacian: DMatrix<f64>,
    pub penalty_laplacian: DMatrix<f64>,
    pub k1: usize,
    pub k2: usize,
}

fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    DMatrix::from_fn(n, n, |i, j| (x.column(i) - x.column(j)).norm_squared())
}

fn graph_laplacian(adj: &DMatrix<f64>) -> DMatrix<f64> {
    let mut lap = -adj.clone();
    for i in 0..adj.nrows() {
        let deg: f64 = (0..adj.ncols()).filter(|&j| j != i).map(|j| adj[(i, j)]).sum();
        lap[(i, i)] = deg;
    }
    lap
}

/// MFA graphs over the columns of `view.matrix`.
///
/// The intrinsic graph links each sample to its `k1` nearest same-class
/// neighbours (symmetrized by "or"). For every class, the penalty graph
/// links the `k2` shortest between-class pairs having one endpoint in that
/// class. Distance ties are broken by sample index.
pub fn build_graphs(view: &ViewFeatures, k1: usize, k2: usize) -> Result<MfaGraphPair> {
    build_graphs_from(&view.matrix, &view.labels, k1, k2)
}

pub fn build_graphs_from(x: &DMatrix<f64>, labels: &[usize], k1: usize, k2: usize) -> Result<MfaGraphPair> {
    let n = x.ncols();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if k1 < 1 || k2 < 1 {
        return precondition("k1 and k2 must be at least 1");
    }
    check_class_sizes(labels)?;
    let dist = pairwise_sq_dists(x);

    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        same.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
        for &j in same.iter().take(k1) {
            s[(i, j)] = 1.0;
            s[(j, i)] = 1.0;
        }
    }

    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut sbar = DMatrix::zeros(n, n);
    for &c in &classes {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for i in (0..n).filter(|&i| labels[i] == c) {
            for j in (0..n).filter(|&j| labels[j] != c) {
                pairs.push((i.min(j), i.max(j)));
            }
        }
        pairs.sort_by(|&(a, b), &(p, q)| dist[(a, b)].total_cmp(&dist[(p, q)]).then((a, b).cmp(&(p, q))));
        for &(i, j) in pairs.iter().take(k2) {
            sbar[(i, j)] = 1.0;
            sbar[(j, i)] = 1.0;
        }
    }

    Ok(MfaGraphPair {
        intrinsic_laplacian: graph_laplacian(&s),
        penalty_laplacian: graph_laplacian(&sbar),
        intrinsic: s,
        penalty: sbar,
        k1,
        k2,
    })
}

/// `H K H` without forming `H`: subtract row and column means, add back
/// the grand mean.
pub fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let row_mean: Vec<f64> = (0..n).map(|i| k.row(i).sum() / n as f64).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| k.column(j).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_mean[i] - col_mean[j] + grand)
}

/// `(N - 1)^{-2} tr(K_v H K_w H)` for symmetric kernels.
pub fn hsic(kv: &DMatrix<f64>, kw: &DMatrix<f64>) -> Result<f64> {
    let n = kv.nrows();
    if kv.shape() != (n, n) || kw.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: kw.nrows(),
        });
    }
    if n < 2 {
        return precondition("HSIC needs at least two samples");
    }
    let (a, b) = (double_center(kv), double_center(kw));
    // tr(A B) = sum_ij A_ij B_ji = sum_ij A_ij B_ij for symmetric B
    let tr: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    Ok(tr / ((n - 1) * (n - 1)) as f64)
}

/// Inner-product kernel of the projected samples, `X^T W W^T X`.
pub fn projected_kernel(x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let y = w.transpose() * x;
    y.transpose() * y
}

/// Generalized eigenvectors of `P w = eta C w` for the `d` largest `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRatioSolution {
    /// `n x d`, `W^T C W = I`.
    pub w: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `tr(W^T P W) / tr(W^T C W)`.
    pub ratio: f64,
}

pub fn trace_ratio(w: &DMatrix<f64>, p: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let num = (w.transpose() * p * w).trace();
    let den = (w.transpose() * c * w).trace();
    num / den
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves the ratio-trace relaxation of `max tr(W^T P W) / tr(W^T C W)`
/// via Cholesky of `C` and a symmetric eigensolve of `L^{-1} P L^{-T}`.
/// Each column is signed so its largest-magnitude entry is positive.
pub fn trace_ratio_solve(p: &DMatrix<f64>, c: &DMatrix<f64>, d: usize) -> Result<TraceRatioSolution> {
    let n = p.nrows();
    if p.shape() != (n, n) || c.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: c.nrows(),
        });
    }
    if d < 1 || d > n {
        return precondition(format!("projection dimension {d} must lie in [1, {n}]"));
    }
    let chol = Cholesky::new(symmetrize(c)).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let lp = l
        .solve_lower_triangular(&symmetrize(p))
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let a = l
        .solve_lower_triangular(&lp.transpose())
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let a = symmetrize(&a);
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Solver("reduced matrix has non-finite entries".into()));
    }
    let eig = a
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Solver(format!("symmetric eigensolver did not converge (n = {n})")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    order.truncate(d);

    let v = DMatrix::from_fn(n, d, |i, j| eig.eigenvectors[(i, order[j])]);
    let mut w = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::Solver("back-substitution failed".into()))?;
    for mut col in w.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0_f64, |b, x| if x.abs() > b.abs() { x } else { b });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    let ratio = trace_ratio(&w, p, c);
    Ok(TraceRatioSolution {
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        w,
        ratio,
    })
}

/// `X L X^T + ridge I`.
pub fn constraint_matrix(x: &DMatrix<f64>, graphs: &MfaGraphPair, ridge: f64) -> DMatrix<f64> {
    let mut c = symmetrize(&(x * &graphs.intrinsic_laplacian * x.transpose()));
    for i in 0..c.nrows() {
        c[(i, i)] += ridge;
    }
    c
}

/// `X B X^T`.
pub fn penalty_scatter(x: &DMatrix<f64>, graphs: &MfaGraphPair) -> DMatrix<f64> {
    symmetrize(&(x * &graphs.penalty_laplacian * x.transpose()))
}

/// Single-view MFA solution used to initialize the alternating solver.
pub fn mfa_init(view: &ViewFeatures, graphs: &MfaGraphPair, d: usize, ridge: f64) -> Result<DMatrix<f64>> {
    if d > view.dim() {
        return precondition(format!("d = {d} exceeds view dimension {}", view.dim()));
    }
    let p = penalty_scatter(&view.matrix, graphs);
    let c = constraint_matrix(&view.matrix, graphs, ridge);
    Ok(trace_ratio_solve(&p, &c, d)?.w)
}

/// Subtracts each row's mean, i.e. `X H`.
fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    xc
}

/// `P_v = X_v B_v X_v^T + lambda * sum_{w != v} X_v H K_w H X_v^T`.
///
/// Each coupling term equals `A A^T` with `A = (X_v H)(W_w^T X_w)^T`; the
/// terms are computed independently and summed in view order.
pub fn assemble_pv(
    v: usize,
    views: &[ViewFeatures],
    projections: &[DMatrix<f64>],
    graphs: &[MfaGraphPair],
    lambda: f64,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    let m = views.len();
    if projections.len() != m || graphs.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: projections.len().min(graphs.len()),
        });
    }
    if v >= m {
        return precondition(format!("view index {v} out of range for {m} views"));
    }
    let xv = &views[v].matrix;
    let n = xv.ncols();
    for (view, proj) in views.iter().zip(projections) {
        if view.n_samples() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: view.n_samples(),
            });
        }
        if proj.nrows() != view.dim() {
            return Err(Error::DimensionMismatch {
                expected: view.dim(),
                actual: proj.nrows(),
            });
        }
    }

    let mut p = penalty_scatter(xv, &graphs[v]);
    if lambda == 0.0 || m == 1 {
        return Ok(p);
    }
    let xc = center_columns(xv);
    let others: Vec<usize> = (0..m).filter(|&w| w != v).collect();
    let terms = par::map(exec, &others, |&w| {
        let y = projections[w].transpose() * &views[w].matrix;
        let a = &xc * y.transpose();
        &a * a.transpose()
    });
    let mut g = DMatrix::zeros(xv.nrows(), xv.nrows());
    for t in &terms {
        g += t;
    }
    p += g * lambda;
    Ok(symmetrize(&p))
}

/// Outcome of one per-view update inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub sweep: usize,
    pub view: usize,
    /// Ratio of the previous projection under the current `P_v`, `C_v`.
    pub ratio_before: f64,
    pub ratio_after: f64,
    /// Relative Frobenius change of `W W^T`.
    pub change: f64,
}

/// Learned per-view projections and everything needed to apply them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub view_names: Vec<String>,
    /// `W_v`, `n_v x d` each.
    pub projections: Vec<DMatrix<f64>>,
    pub config: TrainConfig,
    pub standardizations: Vec<Standardization>,
    /// Joint objective after each sweep.
    pub history: Vec<f64>,
    pub updates: Vec<UpdateRecord>,
    pub converged: bool,
}

fn projector(w: &DMatrix<f64>) -> DMatrix<f64> {
    w * w.transpose()
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let (pn, po) = (projector(new), projector(old));
    let denom = po.norm();
    if denom == 0.0 {
        return if pn.norm() == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (pn - po).norm() / denom
}

/// Joint objective `sum_v tr(W_v^T P_v W_v)` at the given projections.
pub fn joint_objective(
    views: &[ViewFeatures],
    projections: &[DMatrix<f64>],
    graphs: &[MfaGraphPair],
    lambda: f64,
    exec: Execution,
) -> Result<f64> {
    let mut total = 0.0;
    for v in 0..views.len() {
        let p = assemble_pv(v, views, projections, graphs, lambda, exec)?;
        total += (projections[v].transpose() * p * &projections[v]).trace();
    }
    Ok(total)
}

fn check_aligned(views: &[ViewFeatures]) -> Result<()> {
    let first = views.first().ok_or_else(|| Error::Precondition("at least one view is required".into()))?;
    for v in &views[1..] {
        if v.n_samples() != first.n_samples() {
            return Err(Error::DimensionMismatch {
                expected: first.n_samples(),
                actual: v.n_samples(),
            });
        }
        if v.labels != first.labels {
            return precondition(format!("view {} labels differ from view {}", v.name, first.name));
        }
    }
    Ok(())
}

/// Initializes every view with single-view MFA, then sweeps the views in
/// order, replacing each projection by the generalized-eigenvector solution
/// of its subproblem with the other views held fixed. Stops once no
/// projector `W W^T` moves by more than `tol` (relative Frobenius norm) in a
/// sweep, or after `max_iters` sweeps.
pub fn train_alternating(views: &[ViewFeatures], config: &TrainConfig, exec: Execution) -> Result<MetricModel> {
    config.validate()?;
    check_aligned(views)?;
    let graphs: Vec<MfaGraphPair> = views
        .iter()
        .map(|v| build_graphs(v, config.k1, config.k2))
        .collect::<Result<_>>()?;
    let dims: Vec<usize> = views.iter().map(|v| config.d.min(v.dim())).collect();
    let constraints: Vec<DMatrix<f64>> = views
        .iter()
        .zip(&graphs)
        .map(|(v, g)| constraint_matrix(&v.matrix, g, config.ridge))
        .collect();
    let mut projections: Vec<DMatrix<f64>> = views
        .iter()
        .zip(&graphs)
        .zip(&dims)
        .map(|((v, g), &d)| mfa_init(v, g, d, config.ridge))
        .collect::<Result<_>>()?;

    let mut history = Vec::new();
    let mut updates = Vec::new();
    let mut converged = false;
    for sweep in 0..config.max_iters {
        let mut worst: f64 = 0.0;
        for v in 0..views.len() {
            let p = assemble_pv(v, views, &projections, &graphs, config.lambda, exec)?;
            let ratio_before = trace_ratio(&projections[v], &p, &constraints[v]);
            let sol = trace_ratio_solve(&p, &constraints[v], dims[v])?;
            let change = relative_change(&sol.w, &projections[v]);
            worst = worst.max(change);
            updates.push(UpdateRecord {
                sweep,
                view: v,
                ratio_before,
                ratio_after: sol.ratio,
                change,
            });
            projections[v] = sol.w;
        }
        history.push(joint_objective(views, &projections, &graphs, config.lambda, exec)?);
        log::debug!("sweep {sweep}: objective {:e}, max change {worst:e}", history[sweep]);
        if worst < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("training stopped after {} sweeps without reaching tol = {:e}", config.max_iters, config.tol);
    }

    Ok(MetricModel {
        view_names: views.iter().map(|v| v.name.clone()).collect(),
        projections,
        config: config.clone(),
        standardizations: views.iter().map(|v| v.standardization.clone()).collect(),
        history,
        updates,
        converged,
    })
}

/// One shape described by every view, one vector per view.
pub type MultiViewSample = [Vec<f64>];

impl MetricModel {
    pub fn n_views(&self) -> usize {
        self.projections.len()
    }

    /// `M_v = W_v W_v^T`.
    pub fn metric(&self, v: usize) -> DMatrix<f64> {
        projector(&self.projections[v])
    }

    /// Applies the recorded training standardization to raw view vectors.
    pub fn standardize(&self, raw: &MultiViewSample) -> Result<Vec<Vec<f64>>> {
        self.check_views(raw)?;
        raw.iter()
            .zip(&self.standardizations)
            .map(|(x, s)| s.apply(x))
            .collect()
    }

    fn check_views(&self, sample: &MultiViewSample) -> Result<()> {
        if sample.len() != self.n_views() {
            return Err(Error::DimensionMismatch {
                expected: self.n_views(),
                actual: sample.len(),
            });
        }
        for (x, w) in sample.iter().zip(&self.projections) {
            if x.len() != w.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: w.nrows(),
                    actual: x.len(),
                });
            }
        }
        Ok(())
    }

    /// Concatenated projections `W_v^T x_v`; squared Euclidean distance
    /// between embeddings equals [`MetricModel::fused_distance`].
    pub fn embed(&self, sample: &MultiViewSample) -> Result<Vec<f64>> {
        self.check_views(sample)?;
        let mut out = Vec::new();
        for (x, w) in sample.iter().zip(&self.projections) {
            let y = w.transpose() * DVector::from_column_slice(x);
            out.extend(y.iter());
        }
        Ok(out)
    }

    /// `sum_v (a_v - b_v)^T M_v (a_v - b_v)` on standardized samples.
    pub fn fused_distance(&self, a: &MultiViewSample, b: &MultiViewSample) -> Result<f64> {
        self.check_views(a)?;
        self.check_views(b)?;
        let mut total = 0.0;
        for ((xa, xb), w) in a.iter().zip(b).zip(&self.projections) {
            let diff = DVector::from_iterator(xa.len(), xa.iter().zip(xb).map(|(p, q)| p - q));
            total += (w.transpose() * diff).norm_squared();
        }
        Ok(total)
    }

    /// Writes `model.json` plus `W_<view>.csv` per view.
    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, w) in self.view_names.iter().zip(&self.projections) {
            io::write_matrix(dir.join(format!("W_{name}.csv")), w)?;
        }
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            config: self.config.clone(),
            view_names: self.view_names.clone(),
            projection_dims: self.projections.iter().map(|w| [w.nrows(), w.ncols()]).collect(),
            standardizations: self.standardizations.clone(),
            history: self.history.clone(),
            updates: self.updates.clone(),
            converged: self.converged,
        };
        io::write_atomic(dir.join("model.json"), serde_json::to_string_pretty(&file)?.as_bytes())
    }

    pub fn load<P: AsRef<Path>>(dir: P) -> Result<Self> {
        let dir = dir.as_ref();
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        if file.format != MODEL_FORMAT {
            return precondition(format!("unsupported model format {:?}", file.format));
        }
        let projections = file
            .view_names
            .iter()
            .map(|name| io::read_matrix(dir.join(format!("W_{name}.csv"))))
            .collect::<Result<Vec<_>>>()?;
        for (w, dims) in projections.iter().zip(&file.projection_dims) {
            if w.nrows() != dims[0] || w.ncols() != dims[1] {
                return Err(Error::DimensionMismatch {
                    expected: dims[0],
                    actual: w.nrows(),
                });
            }
        }
        Ok(MetricModel {
            view_names: file.view_names,
            projections,
            config: file.config,
            standardizations: file.standardizations,
            history: file.history,
            updates: file.updates,
            converged: file.converged,
        })
    }
}

pub const MODEL_FORMAT: &str = "mfamml-model/1";

/// Layout of `model.json`:
///
/// - `format`: always `"mfamml-model/1"`
/// - `config`: the [`TrainConfig`] used (`d`, `lambda`, `k1`, `k2`,
///   `max_iters`, `tol`, `ridge`)
/// - `view_names`: view order; `W_<name>.csv` holds that view's projection
/// - `projection_dims`: `[n_v, d]` per view
/// - `standardizations`: per view, `mean` and `scale` vectors to apply as
///   `(x - mean) / scale` before projecting
/// - `history`: joint objective after each sweep
/// - `updates`: one [`UpdateRecord`] per view update
/// - `converged`: whether the tolerance was met before `max_iters`
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: TrainConfig,
    view_names: Vec<String>,
    projection_dims: Vec<[usize; 2]>,
    standardizations: Vec<Standardization>,
    history: Vec<f64>,
    updates: Vec<UpdateRecord>,
    converged: bool,
}
