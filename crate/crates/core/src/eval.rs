//! Rankings and Princeton Shape Benchmark retrieval scores.
//!
//! Conventions: a query never retrieves itself; the relevant set of a query
//! is every other gallery item of its class (`R` items); first tier and
//! second tier are recall within the first `R` and `2R` results; the
//! E-measure uses the first 32 results; DCG leaves rank 1 undiscounted and
//! divides rank `i >= 2` by `log2(i)`, normalized by the ideal ordering.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::par::{self, Execution};

pub const E_MEASURE_WINDOW: usize = 32;

/// Query-by-gallery distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: DMatrix<f64>,
    pub query_ids: Vec<String>,
    pub gallery_ids: Vec<String>,
    /// For each query, the gallery column holding the query itself.
    pub self_pairs: Vec<Option<usize>>,
}

impl DistanceMatrix {
    /// Validates values and marks every cell whose query and gallery ids match.
    pub fn new(values: DMatrix<f64>, query_ids: Vec<String>, gallery_ids: Vec<String>) -> Result<Self> {
        if values.nrows() != query_ids.len() || values.ncols() != gallery_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: query_ids.len() * gallery_ids.len(),
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return precondition(format!("distances must be finite and nonnegative, found {bad}"));
        }
        let self_pairs = query_ids
            .iter()
            .map(|q| gallery_ids.iter().position(|g| g == q))
            .collect();
        Ok(DistanceMatrix {
            values,
            query_ids,
            gallery_ids,
            self_pairs,
        })
    }
}

/// Gallery indices per query, nearest first.
pub type Rankings = Vec<Vec<usize>>;

/// Sorts each query's gallery by ascending distance, ties by gallery id,
/// dropping the query itself.
pub fn rank_all(dist: &DistanceMatrix, exec: Execution) -> Rankings {
    par::map_range(exec, dist.values.nrows(), |q| {
        let skip = dist.self_pairs[q];
        let mut order: Vec<usize> = (0..dist.values.ncols()).filter(|&g| Some(g) != skip).collect();
        order.sort_by(|&a, &b| {
            dist.values[(q, a)]
                .total_cmp(&dist.values[(q, b)])
                .then_with(|| dist.gallery_ids[a].cmp(&dist.gallery_ids[b]))
                .then(a.cmp(&b))
        });
        order
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub nn: f64,
    pub ft: f64,
    pub st: f64,
    pub e_measure: f64,
    pub dcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nn: f64,
    pub ft: f64,
    pub st: f64,
    pub e_measure: f64,
    pub dcg: f64,
    pub pr_curve: Vec<(f64, f64)>,
    pub per_query: Vec<QueryScores>,
}

impl EvalReport {
    /// Scores in percent, in the order NN, FT, ST, E, DCG.
    pub fn percent(&self) -> [f64; 5] {
        [self.nn, self.ft, self.st, self.e_measure, self.dcg].map(|x| 100.0 * x)
    }
}

fn relevance<L: PartialEq>(ranking: &[usize], query_label: &L, gallery_labels: &[L]) -> Vec<bool> {
    ranking.iter().map(|&g| gallery_labels[g] == *query_label).collect()
}

fn score_query(rel: &[bool]) -> Option<QueryScores> {
    let r = rel.iter().filter(|&&x| x).count();
    if r == 0 {
        return None;
    }
    let hits = |k: usize| rel.iter().take(k).filter(|&&x| x).count() as f64;
    let nn = if rel[0] { 1.0 } else { 0.0 };
    let ft = hits(r) / r as f64;
    let st = hits(2 * r) / r as f64;

    let window = E_MEASURE_WINDOW.min(rel.len());
    let got = hits(window);
    let e_measure = if got == 0.0 {
        0.0
    } else {
        let (p, rc) = (got / window as f64, got / r as f64);
        2.0 / (1.0 / p + 1.0 / rc)
    };

    let discount = |i: usize| if i == 0 { 1.0 } else { 1.0 / ((i + 1) as f64).log2() };
    let dcg: f64 = rel.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| discount(i)).sum();
    let ideal: f64 = (0..r).map(discount).sum();
    Some(QueryScores {
        nn,
        ft,
        st,
        e_measure,
        dcg: dcg / ideal,
    })
}

/// Interpolated precision of one query at recall levels `t / (n_points - 1)`.
fn query_pr(rel: &[bool], n_points: usize) -> Vec<f64> {
    let r = rel.iter().filter(|&&x| x).count();
    // precision after the j-th relevant hit, j = 1..=r
    let mut precision = Vec::with_capacity(r);
    for (i, &x) in rel.iter().enumerate() {
        if x {
            precision.push((precision.len() + 1) as f64 / (i + 1) as f64);
        }
    }
    (0..n_points)
        .map(|t| {
            // recall j / r >= t / (n_points - 1), compared in integers
            let first = (0..r).find(|&j| (j + 1) * (n_points - 1) >= t * r).unwrap_or(r);
            precision[first..].iter().copied().fold(0.0, f64::max)
        })
        .collect()
}

pub fn recall_grid(n_points: usize) -> Vec<f64> {
    (0..n_points).map(|i| i as f64 / (n_points - 1) as f64).collect()
}

fn check_inputs<L: PartialEq>(rankings: &Rankings, query_labels: &[L], gallery_labels: &[L]) -> Result<Vec<Vec<bool>>> {
    if rankings.len() != query_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: query_labels.len(),
            actual: rankings.len(),
        });
    }
    let mut rels = Vec::with_capacity(rankings.len());
    for (q, (ranking, label)) in rankings.iter().zip(query_labels).enumerate() {
        if let Some(&bad) = ranking.iter().find(|&&g| g >= gallery_labels.len()) {
            return precondition(format!("query {q}: gallery index {bad} out of range"));
        }
        let rel = relevance(ranking, label, gallery_labels);
        if !rel.iter().any(|&x| x) {
            return precondition(format!("query {q} has no relevant gallery item (singleton class)"));
        }
        rels.push(rel);
    }
    if rels.is_empty() {
        return precondition("no queries to evaluate");
    }
    Ok(rels)
}

/// Mean NN, FT, ST, E and DCG over queries, plus the averaged PR curve.
pub fn evaluate<L: PartialEq + Sync>(
    rankings: &Rankings,
    query_labels: &[L],
    gallery_labels: &[L],
    pr_points: usize,
    exec: Execution,
) -> Result<EvalReport> {
    let rels = check_inputs(rankings, query_labels, gallery_labels)?;
    let per_query: Vec<QueryScores> = par::map(exec, &rels, |rel| score_query(rel).expect("checked nonempty"));
    let n = per_query.len() as f64;
    let mean = |f: fn(&QueryScores) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let pr_curve = pr_curve(rankings, query_labels, gallery_labels, pr_points, exec)?;
    Ok(EvalReport {
        nn: mean(|s| s.nn),
        ft: mean(|s| s.ft),
        st: mean(|s| s.st),
        e_measure: mean(|s| s.e_measure),
        dcg: mean(|s| s.dcg),
        pr_curve,
        per_query,
    })
}

/// Mean interpolated precision on `n_points` uniform recall levels in
/// `[0, 1]`; a query's precision at recall `r` is its best precision at any
/// recall `>= r`.
pub fn pr_curve<L: PartialEq + Sync>(
    rankings: &Rankings,
    query_labels: &[L],
    gallery_labels: &[L],
    n_points: usize,
    exec: Execution,
) -> Result<Vec<(f64, f64)>> {
    if n_points < 2 {
        return precondition("a PR curve needs at least two recall samples");
    }
    let rels = check_inputs(rankings, query_labels, gallery_labels)?;
    let grid = recall_grid(n_points);
    let curves = par::map(exec, &rels, |rel| query_pr(rel, n_points));
    let n = curves.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, curves.iter().map(|c| c[i]).sum::<f64>() / n))
        .collect())
}
