//! End-to-end glue: meshes to descriptors, codebooks, view vectors, a
//! trained model and retrieval scores.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coding::{assemble_view, bow_encode, kmeans_fit, pool_rows, Codebook, CodebookConfig, Standardization};
use crate::descriptors::{compute_all, DescriptorConfig, ShapeDescriptors, SignatureKind};
use crate::error::{precondition, Error, Result};
use crate::eval::{evaluate, rank_all, DistanceMatrix, EvalReport};
use crate::mesh::TriMesh;
use crate::metric::{train_alternating, MetricModel, TrainConfig};
use crate::par::{self, Execution};
use crate::spectral::mesh_spectrum;
use crate::split::Split;

/// View order used throughout: the global descriptor, then one BoW view per
/// signature kind.
pub const VIEW_NAMES: [&str; 4] = ["shapedna", "hks", "sihks", "wks"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Queries and gallery are the held-out test shapes.
    #[default]
    Split,
    /// Queries and gallery are the whole collection.
    All,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(Protocol::Split),
            "all" => Ok(Protocol::All),
            other => precondition(format!("unknown protocol {other:?}, expected split or all")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Fraction of each class used for training.
    pub split: f64,
    pub split_seed: u64,
    pub protocol: Protocol,
    pub pr_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: 0.5,
            split_seed: 0,
            protocol: Protocol::Split,
            pr_points: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Number of Laplace-Beltrami eigenpairs.
    pub spectral_k: usize,
    pub descriptors: DescriptorConfig,
    pub codebook: CodebookConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            spectral_k: 100,
            descriptors: DescriptorConfig::default(),
            codebook: CodebookConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.descriptors;
        if self.spectral_k < d.shapedna_m + 1 {
            return precondition(format!(
                "spectral_k = {} must exceed shapedna_m = {}",
                self.spectral_k, d.shapedna_m
            ));
        }
        if d.hks_times == 0 || d.wks_energies == 0 || d.sihks.n_freq == 0 {
            return precondition("descriptor grids must be nonempty");
        }
        if !(d.wks_sigma_factor > 0.0) {
            return precondition("wks_sigma_factor must be positive");
        }
        if self.codebook.k == 0 {
            return precondition("codebook k must be positive");
        }
        let e = &self.eval;
        if !(e.split > 0.0 && e.split < 1.0) {
            return precondition(format!("split must lie in (0, 1), got {}", e.split));
        }
        if e.pr_points < 2 {
            return precondition("pr_points must be at least 2");
        }
        self.train.validate()
    }
}

/// Spectrum and all descriptors of one mesh.
pub fn extract(mesh: &TriMesh, cfg: &PipelineConfig) -> Result<ShapeDescriptors> {
    let spec = mesh_spectrum(mesh, cfg.spectral_k)?;
    compute_all(&spec, &cfg.descriptors)
}

/// One codebook per signature kind, fit on the given (training) shapes.
pub fn fit_codebooks(train: &[&ShapeDescriptors], cfg: &CodebookConfig, exec: Execution) -> Result<Vec<Codebook>> {
    SignatureKind::ALL
        .iter()
        .map(|&kind| {
            let fields = train
                .iter()
                .map(|s| s.field(kind).ok_or_else(|| Error::Precondition(format!("missing {kind} field"))))
                .collect::<Result<Vec<_>>>()?;
            let rows = pool_rows(&fields, cfg.rows_per_shape, cfg.seed)?;
            kmeans_fit(&rows, kind, cfg, exec)
        })
        .collect()
}

/// Raw (unstandardized) view vectors of one shape, in [`VIEW_NAMES`] order.
pub fn encode(desc: &ShapeDescriptors, codebooks: &[Codebook]) -> Result<Vec<Vec<f64>>> {
    let mut views = vec![desc.shapedna.values.clone()];
    for kind in SignatureKind::ALL {
        let cb = codebooks
            .iter()
            .find(|c| c.kind == kind)
            .ok_or_else(|| Error::Precondition(format!("no {kind} codebook")))?;
        let field = desc
            .field(kind)
            .ok_or_else(|| Error::Precondition(format!("missing {kind} field")))?;
        views.push(bow_encode(field, cb)?);
    }
    Ok(views)
}

/// Dense class indices in sorted label order.
pub fn label_indices<L: Ord + Clone>(labels: &[L]) -> Vec<usize> {
    let classes: BTreeMap<L, usize> = labels
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    labels.iter().map(|l| classes[l]).collect()
}

/// Standardizes and trains on the shapes listed in `train`.
///
/// `encoded[i][v]` is view `v` of shape `i`.
pub fn train_model(
    encoded: &[Vec<Vec<f64>>],
    labels: &[usize],
    train: &[usize],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<MetricModel> {
    let n_views = encoded.first().map_or(0, Vec::len);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let views = (0..n_views)
        .map(|v| {
            let cols: Vec<Vec<f64>> = train.iter().map(|&i| encoded[i][v].clone()).collect();
            let name = VIEW_NAMES.get(v).map_or_else(|| format!("view{v}"), |s| s.to_string());
            assemble_view(&cols, &train_labels, name)
        })
        .collect::<Result<Vec<_>>>()?;
    train_alternating(&views, cfg, exec)
}

/// Query and gallery index sets for a protocol.
pub fn eval_sets(protocol: Protocol, split: &Split, n: usize) -> (Vec<usize>, Vec<usize>) {
    match protocol {
        Protocol::Split => (split.test.clone(), split.test.clone()),
        Protocol::All => ((0..n).collect(), (0..n).collect()),
    }
}

fn pairwise(
    points: &[Vec<f64>],
    queries: &[usize],
    gallery: &[usize],
    ids: &[String],
    exec: Execution,
) -> Result<DistanceMatrix> {
    let rows = par::map(exec, queries, |&q| {
        gallery
            .iter()
            .map(|&g| points[q].iter().zip(&points[g]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect::<Vec<f64>>()
    });
    let values = DMatrix::from_fn(queries.len(), gallery.len(), |i, j| rows[i][j]);
    DistanceMatrix::new(
        values,
        queries.iter().map(|&i| ids[i].clone()).collect(),
        gallery.iter().map(|&i| ids[i].clone()).collect(),
    )
}

/// Fused MFAMML distances between the selected shapes.
pub fn fused_distances(
    model: &MetricModel,
    encoded: &[Vec<Vec<f64>>],
    queries: &[usize],
    gallery: &[usize],
    ids: &[String],
    exec: Execution,
) -> Result<DistanceMatrix> {
    let embedded = par::map(exec, encoded, |raw| model.embed(&model.standardize(raw)?))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    pairwise(&embedded, queries, gallery, ids, exec)
}

/// Squared Euclidean distances on one standardized view.
pub fn view_distances(
    view: usize,
    standardization: &Standardization,
    encoded: &[Vec<Vec<f64>>],
    queries: &[usize],
    gallery: &[usize],
    ids: &[String],
    exec: Execution,
) -> Result<DistanceMatrix> {
    let points = encoded
        .iter()
        .map(|raw| standardization.apply(&raw[view]))
        .collect::<Result<Vec<_>>>()?;
    pairwise(&points, queries, gallery, ids, exec)
}

/// Ranks and scores a distance matrix; labels are indexed like `ids`.
pub fn score(
    dist: &DistanceMatrix,
    labels: &[usize],
    queries: &[usize],
    gallery: &[usize],
    pr_points: usize,
    exec: Execution,
) -> Result<EvalReport> {
    let rankings = rank_all(dist, exec);
    let ql: Vec<usize> = queries.iter().map(|&i| labels[i]).collect();
    let gl: Vec<usize> = gallery.iter().map(|&i| labels[i]).collect();
    evaluate(&rankings, &ql, &gl, pr_points, exec)
}
