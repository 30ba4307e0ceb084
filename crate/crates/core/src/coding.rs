//! k-means codebooks, bag-of-words histograms and per-view feature matrices.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{PointSignatureField, SignatureKind};
use crate::error::{precondition, Error, Result};
use crate::io;
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    /// Number of visual words.
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Relative inertia change below which Lloyd iterations stop.
    pub tol: f64,
    /// Rows drawn from each training shape before pooling; `None` pools all.
    pub rows_per_shape: Option<usize>,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig {
            k: 64,
            seed: 0,
            max_iters: 300,
            tol: 1e-6,
            rows_per_shape: Some(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `K x D`, one center per row.
    pub centers: DMatrix<f64>,
    pub kind: SignatureKind,
    pub seed: u64,
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CodebookMeta {
    kind: SignatureKind,
    seed: u64,
    k: usize,
    dim: usize,
    inertia: f64,
    iterations: usize,
    normalization: String,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn assign(&self, row: &[f64]) -> (usize, f64) {
        nearest(&self.centers, row)
    }

    /// Writes `codebook_<kind>.csv` and `codebook_<kind>.json`.
    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        io::write_matrix(dir.join(format!("codebook_{}.csv", self.kind)), &self.centers)?;
        let meta = CodebookMeta {
            kind: self.kind,
            seed: self.seed,
            k: self.k(),
            dim: self.dim(),
            inertia: self.inertia,
            iterations: self.iterations,
            normalization: "l1".into(),
        };
        io::write_atomic(
            dir.join(format!("codebook_{}.json", self.kind)),
            serde_json::to_string_pretty(&meta)?.as_bytes(),
        )
    }

    pub fn load<P: AsRef<Path>>(dir: P, kind: SignatureKind) -> Result<Self> {
        let dir = dir.as_ref();
        let centers = io::read_matrix(dir.join(format!("codebook_{kind}.csv")))?;
        let meta: CodebookMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("codebook_{kind}.json")))?)?;
        if centers.nrows() != meta.k || centers.ncols() != meta.dim {
            return Err(Error::DimensionMismatch {
                expected: meta.k,
                actual: centers.nrows(),
            });
        }
        Ok(Codebook {
            centers,
            kind: meta.kind,
            seed: meta.seed,
            inertia: meta.inertia,
            iterations: meta.iterations,
        })
    }
}

fn sq_dist(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &DMatrix<f64>, row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.nrows() {
        let d = sq_dist(row, centers.row(c).iter().copied());
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops after `cfg.max_iters` iterations or once the relative change of
/// the inertia drops below `cfg.tol`. Clusters that lose all their points
/// are re-seeded at the point farthest from its current center.
pub fn kmeans_fit(
    rows: &DMatrix<f64>,
    kind: SignatureKind,
    cfg: &CodebookConfig,
    exec: Execution,
) -> Result<Codebook> {
    let (n, dim) = rows.shape();
    let k = cfg.k;
    if k == 0 || n < k {
        return precondition(format!("k-means needs at least K = {k} rows, got {n}"));
    }
    let data: Vec<Vec<f64>> = (0..n).map(|i| row_vec(rows, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // k-means++ seeding
    let mut centers = DMatrix::zeros(k, dim);
    let first = rng.random_range(0..n);
    centers.set_row(0, &rows.row(first));
    let mut d2: Vec<f64> = data
        .iter()
        .map(|r| sq_dist(r, centers.row(0).iter().copied()))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return precondition(format!("k-means needs at least K = {k} distinct rows, found {c}"));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        while d2[pick] == 0.0 {
            pick -= 1;
        }
        centers.set_row(c, &rows.row(pick));
        for (i, r) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centers.row(c).iter().copied()));
        }
    }

    let mut prev_inertia = f64::INFINITY;
    let mut inertia;
    let mut iterations = 0;
    loop {
        let assignment: Vec<(usize, f64)> = par::map(exec, &data, |r| nearest(&centers, r));
        inertia = assignment.iter().map(|a| a.1).sum::<f64>();
        iterations += 1;
        let converged = inertia == 0.0 || ((prev_inertia - inertia).abs() / prev_inertia) < cfg.tol;
        if converged || iterations >= cfg.max_iters {
            break;
        }
        prev_inertia = inertia;

        let mut sums = DMatrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += rows.row(i);
        }
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c) / counts[c] as f64;
                centers.set_row(c, &mean);
            } else if let Some(p) = far.next() {
                centers.set_row(c, &rows.row(p));
            }
        }
    }

    Ok(Codebook {
        centers,
        kind,
        seed: cfg.seed,
        inertia,
        iterations,
    })
}

/// Stacks signature rows from several shapes, optionally drawing a seeded
/// random subset of `rows_per_shape` rows from each.
pub fn pool_rows(fields: &[&PointSignatureField], rows_per_shape: Option<usize>, seed: u64) -> Result<DMatrix<f64>> {
    let dim = fields.first().map_or(0, |f| f.dim());
    if let Some(bad) = fields.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<Vec<f64>> = Vec::new();
    for f in fields {
        let n = f.signatures.nrows();
        let mut idx: Vec<usize> = match rows_per_shape {
            Some(m) if m < n => rand::seq::index::sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        idx.sort_unstable();
        picked.extend(idx.into_iter().map(|i| row_vec(&f.signatures, i)));
    }
    Ok(DMatrix::from_fn(picked.len(), dim, |i, j| picked[i][j]))
}

/// Hard-assignment histogram over the codebook, L1-normalized.
pub fn bow_encode(field: &PointSignatureField, cb: &Codebook) -> Result<Vec<f64>> {
    if field.dim() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            actual: field.dim(),
        });
    }
    let n = field.signatures.nrows();
    if n == 0 {
        return precondition("cannot encode an empty signature field");
    }
    let mut hist = vec![0.0; cb.k()];
    for i in 0..n {
        let (c, _) = cb.assign(&row_vec(&field.signatures, i));
        hist[c] += 1.0;
    }
    hist.iter_mut().for_each(|h| *h /= n as f64);
    Ok(hist)
}

/// Per-dimension affine map fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// z-scores over the columns of `x` (`dim x N`). Dimensions with zero
    /// deviation get mean 0 and scale 1, i.e. they pass through untouched.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.ncols() as f64;
        let (mut mean, mut scale) = (Vec::new(), Vec::new());
        for row in x.row_iter() {
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * mu.abs().max(1.0) {
                mean.push(mu);
                scale.push(sd);
            } else {
                mean.push(0.0);
                scale.push(1.0);
            }
        }
        Standardization { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn apply_columns(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.nrows(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[i]) / self.scale[i]
        }))
    }
}

/// One view of the training set: `n_v x N`, a column per shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeatures {
    pub name: String,
    pub matrix: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub standardization: Standardization,
}

impl ViewFeatures {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Stacks raw feature vectors as columns.
pub fn stack_columns(features: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let dim = features.first().map_or(0, Vec::len);
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(dim, features.len(), |i, j| features[j][i]))
}

/// Builds a standardized view from per-shape training features.
pub fn assemble_view(features: &[Vec<f64>], labels: &[usize], name: impl Into<String>) -> Result<ViewFeatures> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    let raw = stack_columns(features)?;
    if raw.iter().any(|x| !x.is_finite()) {
        return precondition("view features contain NaN or Inf");
    }
    check_class_sizes(labels)?;
    let standardization = Standardization::fit(&raw);
    let matrix = standardization.apply_columns(&raw)?;
    Ok(ViewFeatures {
        name: name.into(),
        matrix,
        labels: labels.to_vec(),
        standardization,
    })
}

/// Every class must have at least two members.
pub fn check_class_sizes(labels: &[usize]) -> Result<()> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    match counts.iter().find(|(_, &c)| c < 2) {
        Some((l, _)) => precondition(format!("class {l} has a single member")),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::SignatureParams;
    use proptest::prelude::*;

    fn field(rows: &[&[f64]]) -> PointSignatureField {
        let dim = rows[0].len();
        PointSignatureField {
            kind: SignatureKind::Hks,
            signatures: DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]),
            params: SignatureParams::Hks { times: vec![] },
        }
    }

    fn cfg(k: usize) -> CodebookConfig {
        CodebookConfig {
            k,
            ..Default::default()
        }
    }

    #[test]
    fn single_center_is_the_mean() {
        let rows = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 2.0, 4.0, 0.0, 4.0]);
        let cb = kmeans_fit(&rows, SignatureKind::Hks, &cfg(1), Execution::Sequential).unwrap();
        assert!((cb.centers[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((cb.centers[(0, 1)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn k_equal_to_distinct_rows_gives_zero_inertia() {
        let rows = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 5.0, 5.0, 0.0, 0.0, 9.0, 1.0, 5.0, 5.0, 9.0, 1.0]);
        let cb = kmeans_fit(&rows, SignatureKind::Hks, &cfg(3), Execution::Sequential).unwrap();
        assert_eq!(cb.inertia, 0.0);
        let mut got: Vec<(i64, i64)> = (0..3).map(|c| (cb.centers[(c, 0)] as i64, cb.centers[(c, 1)] as i64)).collect();
        got.sort();
        assert_eq!(got, vec![(0, 0), (5, 5), (9, 1)]);
        assert!(kmeans_fit(&rows, SignatureKind::Hks, &cfg(4), Execution::Sequential).is_err());
        assert!(kmeans_fit(&rows, SignatureKind::Hks, &cfg(7), Execution::Sequential).is_err());
    }

    #[test]
    fn kmeans_is_deterministic_and_execution_independent() {
        let rows = DMatrix::from_fn(300, 3, |i, j| ((i * 7 + j * 13) % 17) as f64 + (i as f64 * 0.1).sin());
        let a = kmeans_fit(&rows, SignatureKind::Wks, &cfg(8), Execution::Sequential).unwrap();
        let b = kmeans_fit(&rows, SignatureKind::Wks, &cfg(8), Execution::Parallel).unwrap();
        assert_eq!(a, b);
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert!((a.centers.row(i) - a.centers.row(j)).norm() > 0.0);
            }
        }
    }

    #[test]
    fn bow_examples() {
        let centers = DMatrix::from_row_slice(4, 1, &[0.0, 10.0, 20.0, 30.0]);
        let cb = Codebook {
            centers,
            kind: SignatureKind::Hks,
            seed: 0,
            inertia: 0.0,
            iterations: 0,
        };
        let all_three = field(&[&[29.0], &[31.0], &[30.0]]);
        assert_eq!(bow_encode(&all_three, &cb).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        let mixed = field(&[&[1.0], &[-1.0], &[9.0], &[21.0]]);
        assert_eq!(bow_encode(&mixed, &cb).unwrap(), vec![0.5, 0.25, 0.25, 0.0]);
        // equidistant from centers 0 and 1
        assert_eq!(bow_encode(&field(&[&[5.0]]), &cb).unwrap()[0], 1.0);
        assert!(bow_encode(&field(&[&[1.0, 2.0]]), &cb).is_err());
    }

    #[test]
    fn codebook_persists() {
        let rows = DMatrix::from_fn(50, 2, |i, j| (i * (j + 1)) as f64);
        let cb = kmeans_fit(&rows, SignatureKind::Sihks, &cfg(4), Execution::Parallel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cb.save(dir.path()).unwrap();
        assert_eq!(Codebook::load(dir.path(), SignatureKind::Sihks).unwrap(), cb);
    }

    #[test]
    fn assemble_view_zscores_and_checks() {
        let feats = vec![vec![1.0, 5.0, 3.0], vec![2.0, 5.0, 3.0], vec![4.0, 5.0, 7.0], vec![9.0, 5.0, 8.0]];
        let v = assemble_view(&feats, &[0, 0, 1, 1], "toy").unwrap();
        assert_eq!(v.dim(), 3);
        for (d, row) in v.matrix.row_iter().enumerate() {
            let mean = row.mean();
            let sd = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
            if d == 1 {
                assert!(row.iter().all(|&x| x == 5.0));
            } else {
                assert!(mean.abs() < 1e-10);
                assert!((sd - 1.0).abs() < 1e-10);
            }
        }
        assert!(assemble_view(&feats, &[0, 0, 1], "x").is_err());
        assert!(assemble_view(&feats, &[0, 0, 1, 2], "x").is_err());
        let ragged = vec![vec![1.0], vec![1.0, 2.0]];
        assert!(assemble_view(&ragged, &[0, 0], "x").is_err());
    }

    #[test]
    fn pooling_subsamples_per_shape() {
        let a = field(&[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let b = field(&[&[5.0], &[6.0]]);
        let pooled = pool_rows(&[&a, &b], Some(2), 3).unwrap();
        assert_eq!(pooled.nrows(), 4);
        assert_eq!(pool_rows(&[&a, &b], None, 3).unwrap().nrows(), 6);
        assert_eq!(pooled, pool_rows(&[&a, &b], Some(2), 3).unwrap());
    }

    proptest! {
        #[test]
        fn bow_is_order_free_and_normalized(perm_seed in 0u64..1000, n in 1usize..40) {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 * 1.7).sin() * 10.0, (i as f64).cos()]).collect();
            let centers = DMatrix::from_row_slice(3, 2, &[-5.0, 0.0, 0.0, 0.0, 5.0, 1.0]);
            let cb = Codebook { centers, kind: SignatureKind::Hks, seed: 0, inertia: 0.0, iterations: 0 };
            let mut shuffled = rows.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let mk = |rs: &[Vec<f64>]| PointSignatureField {
                kind: SignatureKind::Hks,
                signatures: DMatrix::from_fn(rs.len(), 2, |i, j| rs[i][j]),
                params: SignatureParams::Hks { times: vec![] },
            };
            let h1 = bow_encode(&mk(&rows), &cb).unwrap();
            let h2 = bow_encode(&mk(&shuffled), &cb).unwrap();
            prop_assert_eq!(&h1, &h2);
            prop_assert!((h1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
