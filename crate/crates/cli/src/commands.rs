//! Subcommand implementations. Every stage reads its inputs from and writes
//! its outputs to the work directory, so stages can be rerun independently.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use log::{error, info, warn};
use mfamml::coding::Codebook;
use mfamml::descriptors::{compute_all, ShapeDescriptors, SignatureKind};
use mfamml::eval::EvalReport;
use mfamml::mesh::parse_off;
use mfamml::metric::MetricModel;
use mfamml::pipeline::{self, PipelineConfig, Protocol, VIEW_NAMES};
use mfamml::spectral::mesh_spectrum;
use mfamml::split::{stratified_split, Split};
use mfamml::synth::{self, SynthConfig};
use mfamml::{io, par, Execution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{self, Layout};
use crate::manifest::{self, Entry, Manifest};
use crate::{InvalidConfig, PartialFailure};

pub struct Context {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    pub exec: Execution,
    pub manifest: Option<PathBuf>,
}

impl Context {
    fn manifest(&self) -> Result<Manifest> {
        let path = self
            .manifest
            .as_deref()
            .ok_or_else(|| InvalidConfig("this command needs --manifest".into()))?;
        Manifest::load(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {} ({hint})", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

// synth ---------------------------------------------------------------------

pub fn synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    let shapes = synth::generate(cfg)?;
    let mesh_dir = out.join("meshes");
    std::fs::create_dir_all(&mesh_dir)?;
    let mut entries = Vec::with_capacity(shapes.len());
    for s in &shapes {
        let rel = PathBuf::from("meshes").join(format!("{}.off", s.id));
        s.mesh.save_off(out.join(&rel))?;
        entries.push(Entry {
            path: rel,
            label: s.label.clone(),
            id: s.id.clone(),
        });
    }
    io::write_atomic(out.join("manifest.csv"), &manifest::to_csv(&entries)?)?;
    info!("wrote {} meshes and {}", shapes.len(), out.join("manifest.csv").display());
    Ok(())
}

// features ------------------------------------------------------------------

enum FeatureStatus {
    Computed,
    Cached,
}

/// Content hash of the mesh bytes and every setting the features depend on.
fn feature_key(mesh_bytes: &[u8], cfg: &PipelineConfig) -> String {
    let settings = serde_json::to_vec(&(cfg.spectral_k, &cfg.descriptors)).expect("serializable");
    let mut h = Sha256::new();
    h.update((mesh_bytes.len() as u64).to_le_bytes());
    h.update(mesh_bytes);
    h.update(settings);
    hex::encode(h.finalize())
}

const KEY_FILE: &str = "key";

fn extract_one(ctx: &Context, m: &Manifest, e: &Entry) -> Result<FeatureStatus> {
    let path = m.resolve(e);
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let key = feature_key(&bytes, &ctx.cfg);
    let dir = ctx.layout.features(&e.id);
    if std::fs::read_to_string(dir.join(KEY_FILE)).is_ok_and(|k| k == key) {
        return Ok(FeatureStatus::Cached);
    }
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8 text", path.display()))?;
    let mesh = parse_off(&text, e.id.clone()).with_context(|| format!("parsing {}", path.display()))?;
    let spectrum = mesh_spectrum(&mesh, ctx.cfg.spectral_k)?;
    let descriptors = compute_all(&spectrum, &ctx.cfg.descriptors)?;
    // the key goes last so an interrupted run is recomputed, not trusted
    let _ = std::fs::remove_file(dir.join(KEY_FILE));
    spectrum.save(dir.join("spectrum"))?;
    descriptors.save(&dir)?;
    io::write_atomic(dir.join(KEY_FILE), key.as_bytes())?;
    Ok(FeatureStatus::Computed)
}

pub fn features(ctx: &Context) -> Result<()> {
    let m = ctx.manifest()?;
    if m.is_empty() {
        warn!("manifest is empty, nothing to do");
        return Ok(());
    }
    let results = par::map(ctx.exec, &m.entries, |e| extract_one(ctx, &m, e));
    let (mut computed, mut cached, mut failed) = (0, 0, 0);
    for (e, r) in m.entries.iter().zip(&results) {
        match r {
            Ok(FeatureStatus::Computed) => computed += 1,
            Ok(FeatureStatus::Cached) => cached += 1,
            Err(err) => {
                failed += 1;
                error!("{}: {err:#}", e.id);
            }
        }
    }
    println!("features: {computed} computed, {cached} cached, {failed} failed");
    if failed > 0 {
        return Err(PartialFailure(format!("{failed} of {} shapes failed feature extraction", m.entries.len())).into());
    }
    Ok(())
}

fn load_features(ctx: &Context, id: &str) -> Result<ShapeDescriptors> {
    let dir = ctx.layout.features(id);
    if !dir.join(KEY_FILE).is_file() {
        bail!("no features for {id:?} in {}; run `mfamml features` first", dir.display());
    }
    ShapeDescriptors::load(&dir).with_context(|| format!("loading features of {id:?}"))
}

// split ---------------------------------------------------------------------

/// Split recorded next to codebooks and models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub fraction: f64,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitFile {
    fn indices(&self, ids: &[String]) -> Result<Split> {
        let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let lookup = |list: &[String]| -> Result<Vec<usize>> {
            list.iter()
                .map(|id| pos.get(id.as_str()).copied().with_context(|| format!("shape {id:?} is not in the manifest")))
                .collect()
        };
        Ok(Split {
            train: lookup(&self.train)?,
            test: lookup(&self.test)?,
        })
    }
}

fn current_split(ctx: &Context, m: &Manifest) -> Result<SplitFile> {
    let ids = m.ids();
    let s = stratified_split(&m.labels(), ctx.cfg.eval.split, ctx.cfg.eval.split_seed)?;
    Ok(SplitFile {
        fraction: ctx.cfg.eval.split,
        seed: ctx.cfg.eval.split_seed,
        train: s.train.iter().map(|&i| ids[i].clone()).collect(),
        test: s.test.iter().map(|&i| ids[i].clone()).collect(),
    })
}

// codebook ------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CodebookFit {
    split_seed: u64,
    split_fraction: f64,
    shapes: Vec<String>,
}

const FIT_FILE: &str = "fit.json";

pub fn codebook(ctx: &Context, shapes: Option<&[String]>) -> Result<()> {
    let m = ctx.manifest()?;
    let split = current_split(ctx, &m)?;
    let chosen: Vec<String> = match shapes {
        None => split.train.clone(),
        Some(list) => {
            let known: BTreeSet<&String> = m.entries.iter().map(|e| &e.id).collect();
            let test: BTreeSet<&String> = split.test.iter().collect();
            for id in list {
                if !known.contains(id) {
                    return Err(InvalidConfig(format!("shape {id:?} is not in the manifest")).into());
                }
                if test.contains(id) {
                    return Err(InvalidConfig(format!(
                        "refusing to fit codebooks on test-split shape {id:?} (split seed {}, fraction {})",
                        split.seed, split.fraction
                    ))
                    .into());
                }
            }
            list.to_vec()
        }
    };
    if chosen.is_empty() {
        return Err(InvalidConfig("no shapes to fit codebooks on".into()).into());
    }
    let descs = par::map(ctx.exec, &chosen, |id| load_features(ctx, id))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ShapeDescriptors> = descs.iter().collect();
    let codebooks = pipeline::fit_codebooks(&refs, &ctx.cfg.codebook, ctx.exec)?;
    let dir = ctx.layout.codebooks();
    for cb in &codebooks {
        cb.save(&dir)?;
        info!("{} codebook: K = {}, inertia {:e}, {} iterations", cb.kind, cb.k(), cb.inertia, cb.iterations);
    }
    write_json(
        &dir.join(FIT_FILE),
        &CodebookFit {
            split_seed: split.seed,
            split_fraction: split.fraction,
            shapes: chosen,
        },
    )?;
    println!("codebooks: {} fitted on {} shapes", codebooks.len(), refs.len());
    Ok(())
}

// encode --------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EncodedIndex {
    ids: Vec<String>,
    views: Vec<String>,
    codebook_shapes: Vec<String>,
}

const INDEX_FILE: &str = "index.json";

pub fn encode(ctx: &Context) -> Result<()> {
    let m = ctx.manifest()?;
    let dir = ctx.layout.codebooks();
    let fit: CodebookFit = read_json(&dir.join(FIT_FILE), "run `mfamml codebook` first")?;
    let codebooks = SignatureKind::ALL
        .iter()
        .map(|&k| Codebook::load(&dir, k).with_context(|| format!("loading the {k} codebook")))
        .collect::<Result<Vec<_>>>()?;
    let encoded = par::map(ctx.exec, &m.entries, |e| -> Result<Vec<Vec<f64>>> {
        Ok(pipeline::encode(&load_features(ctx, &e.id)?, &codebooks)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let out = ctx.layout.encoded();
    std::fs::create_dir_all(&out)?;
    for (v, name) in VIEW_NAMES.iter().enumerate() {
        io::write_rows(out.join(format!("{name}.csv")), encoded.iter().map(|s| &s[v]))?;
    }
    write_json(
        &out.join(INDEX_FILE),
        &EncodedIndex {
            ids: m.ids(),
            views: VIEW_NAMES.iter().map(|s| s.to_string()).collect(),
            codebook_shapes: fit.shapes,
        },
    )?;
    println!("encoded {} shapes into {} views", m.entries.len(), VIEW_NAMES.len());
    Ok(())
}

/// Per-shape view vectors in manifest order.
fn load_encoded(ctx: &Context, m: &Manifest) -> Result<(EncodedIndex, Vec<Vec<Vec<f64>>>)> {
    let dir = ctx.layout.encoded();
    let index: EncodedIndex = read_json(&dir.join(INDEX_FILE), "run `mfamml encode` first")?;
    if index.ids != m.ids() {
        bail!("encoded views in {} do not match the manifest; rerun `mfamml encode`", dir.display());
    }
    let views = index
        .views
        .iter()
        .map(|name| io::read_rows(dir.join(format!("{name}.csv"))))
        .collect::<mfamml::Result<Vec<_>>>()?;
    let encoded = (0..index.ids.len())
        .map(|i| views.iter().map(|rows| rows[i].clone()).collect())
        .collect();
    Ok((index, encoded))
}

// train ---------------------------------------------------------------------

const SPLIT_FILE: &str = "split.json";
const PIPELINE_FILE: &str = "pipeline.json";

pub fn train(ctx: &Context, model_dir: &Path) -> Result<()> {
    let m = ctx.manifest()?;
    let (index, encoded) = load_encoded(ctx, &m)?;
    let split = current_split(ctx, &m)?;
    let train_ids: BTreeSet<&String> = split.train.iter().collect();
    if let Some(id) = index.codebook_shapes.iter().find(|id| !train_ids.contains(id)) {
        return Err(InvalidConfig(format!(
            "codebooks were fit on {id:?}, which is not in the training split (seed {}, fraction {}); rerun `mfamml codebook` and `mfamml encode`",
            split.seed, split.fraction
        ))
        .into());
    }
    let labels = pipeline::label_indices(&m.labels());
    let s = split.indices(&m.ids())?;
    let model = pipeline::train_model(&encoded, &labels, &s.train, &ctx.cfg.train, ctx.exec)?;
    for (sweep, value) in model.history.iter().enumerate() {
        info!("sweep {sweep}: objective {value:e}");
    }
    model.save(model_dir)?;
    write_json(&model_dir.join(SPLIT_FILE), &split)?;
    write_json(&model_dir.join(PIPELINE_FILE), &ctx.cfg)?;
    println!(
        "trained {} views on {} shapes: {} sweeps, {}",
        model.n_views(),
        s.train.len(),
        model.history.len(),
        if model.converged { "converged" } else { "not converged" }
    );
    Ok(())
}

struct LoadedModel {
    model: MetricModel,
    split: SplitFile,
    config: PipelineConfig,
}

fn load_model(dir: &Path) -> Result<LoadedModel> {
    let model = MetricModel::load(dir).with_context(|| format!("loading model from {}; run `mfamml train` first", dir.display()))?;
    Ok(LoadedModel {
        model,
        split: read_json(&dir.join(SPLIT_FILE), "model directory is incomplete")?,
        config: read_json(&dir.join(PIPELINE_FILE), "model directory is incomplete")?,
    })
}

// retrieve ------------------------------------------------------------------

fn distances(
    ctx: &Context,
    m: &Manifest,
    encoded: &[Vec<Vec<f64>>],
    lm: &LoadedModel,
) -> Result<(Vec<usize>, Vec<usize>, mfamml::eval::DistanceMatrix)> {
    let ids = m.ids();
    let split = lm.split.indices(&ids)?;
    let (q, g) = pipeline::eval_sets(ctx.cfg.eval.protocol, &split, ids.len());
    let dist = pipeline::fused_distances(&lm.model, encoded, &q, &g, &ids, ctx.exec)?;
    Ok((q, g, dist))
}

pub fn retrieve(ctx: &Context, model_dir: &Path, out: &Path) -> Result<()> {
    let m = ctx.manifest()?;
    let (_, encoded) = load_encoded(ctx, &m)?;
    let lm = load_model(model_dir)?;
    let (_, _, dist) = distances(ctx, &m, &encoded, &lm)?;
    std::fs::create_dir_all(out)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("query").chain(dist.gallery_ids.iter().map(String::as_str)))?;
    for (q, id) in dist.query_ids.iter().enumerate() {
        let row: Vec<String> = dist.values.row(q).iter().map(|x| x.to_string()).collect();
        w.write_record(std::iter::once(id.as_str()).chain(row.iter().map(String::as_str)))?;
    }
    io::write_atomic(out.join("distances.csv"), &w.into_inner()?)?;

    let rankings = mfamml::eval::rank_all(&dist, ctx.exec);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["query", "rank", "gallery", "distance"])?;
    for (q, ranking) in rankings.iter().enumerate() {
        for (r, &g) in ranking.iter().enumerate() {
            w.write_record([
                dist.query_ids[q].as_str(),
                &(r + 1).to_string(),
                dist.gallery_ids[g].as_str(),
                &dist.values[(q, g)].to_string(),
            ])?;
        }
    }
    io::write_atomic(out.join("rankings.csv"), &w.into_inner()?)?;
    println!(
        "retrieval: {} queries x {} gallery shapes written to {}",
        dist.query_ids.len(),
        dist.gallery_ids.len(),
        out.display()
    );
    Ok(())
}

// eval ----------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Scores {
    nn: f64,
    ft: f64,
    st: f64,
    e: f64,
    dcg: f64,
}

#[derive(Debug, Serialize)]
struct ModelReport {
    model: String,
    config_hash: String,
    split_seed: u64,
    split_fraction: f64,
    lambda: f64,
    sweeps: usize,
    converged: bool,
    /// Percent.
    scores: Scores,
}

#[derive(Debug, Serialize)]
struct Report {
    protocol: Protocol,
    queries: usize,
    gallery: usize,
    pr_points: usize,
    models: Vec<ModelReport>,
}

/// Column names for the PR table: the model directory names, made unique.
fn model_labels(dirs: &[PathBuf]) -> Vec<String> {
    let mut labels: Vec<String> = dirs
        .iter()
        .map(|d| d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned()))
        .collect();
    let dup: BTreeSet<String> = labels
        .iter()
        .enumerate()
        .filter(|(i, l)| labels[..*i].contains(l))
        .map(|(_, l)| l.clone())
        .collect();
    for (i, l) in labels.iter_mut().enumerate() {
        if dup.contains(l) {
            *l = format!("{l}_{}", i + 1);
        }
    }
    labels
}

pub fn eval(ctx: &Context, model_dirs: &[PathBuf], out: &Path) -> Result<()> {
    let m = ctx.manifest()?;
    let (_, encoded) = load_encoded(ctx, &m)?;
    let labels = pipeline::label_indices(&m.labels());
    let names = model_labels(model_dirs);
    let mut results: Vec<(ModelReport, EvalReport)> = Vec::new();
    let (mut n_queries, mut n_gallery) = (0, 0);
    for dir in model_dirs {
        let lm = load_model(dir)?;
        let (q, g, dist) = distances(ctx, &m, &encoded, &lm)?;
        (n_queries, n_gallery) = (q.len(), g.len());
        let report = pipeline::score(&dist, &labels, &q, &g, ctx.cfg.eval.pr_points, ctx.exec)?;
        let [nn, ft, st, e, dcg] = report.percent();
        results.push((
            ModelReport {
                model: dir.display().to_string(),
                config_hash: config::hash(&lm.config),
                split_seed: lm.split.seed,
                split_fraction: lm.split.fraction,
                lambda: lm.model.config.lambda,
                sweeps: lm.model.history.len(),
                converged: lm.model.converged,
                scores: Scores { nn, ft, st, e, dcg },
            },
            report,
        ));
    }

    println!("{:<20} {:>7} {:>7} {:>7} {:>7} {:>7}", "model", "NN", "FT", "ST", "E", "DCG");
    for (name, (r, _)) in names.iter().zip(&results) {
        let s = &r.scores;
        println!("{name:<20} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1}", s.nn, s.ft, s.st, s.e, s.dcg);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = if results.len() == 1 {
        vec!["recall".into(), "precision".into()]
    } else {
        std::iter::once("recall".to_string()).chain(names.iter().cloned()).collect()
    };
    w.write_record(&header)?;
    for i in 0..ctx.cfg.eval.pr_points {
        let recall = results[0].1.pr_curve[i].0;
        let row: Vec<String> = std::iter::once(recall.to_string())
            .chain(results.iter().map(|(_, e)| e.pr_curve[i].1.to_string()))
            .collect();
        w.write_record(&row)?;
    }
    std::fs::create_dir_all(out)?;
    io::write_atomic(out.join("pr_curve.csv"), &w.into_inner()?)?;
    write_json(
        &out.join("report.json"),
        &Report {
            protocol: ctx.cfg.eval.protocol,
            queries: n_queries,
            gallery: n_gallery,
            pr_points: ctx.cfg.eval.pr_points,
            models: results.into_iter().map(|(r, _)| r).collect(),
        },
    )?;
    info!("wrote {} and {}", out.join("report.json").display(), out.join("pr_curve.csv").display());
    Ok(())
}

// pr-curve ------------------------------------------------------------------

pub fn pr_curve(input: &Path, output: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(input).with_context(|| format!("reading {}; run `mfamml eval` first", input.display()))?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "recall" {
        bail!("{} is not a PR table (expected a `recall` column first)", input.display());
    }
    let mut series: Vec<(String, Vec<(f64, f64)>)> = headers.iter().skip(1).map(|h| (h.to_string(), Vec::new())).collect();
    for record in reader.records() {
        let record = record?;
        let recall: f64 = record[0].parse().with_context(|| format!("bad recall value {:?}", &record[0]))?;
        for (j, s) in series.iter_mut().enumerate() {
            let p: f64 = record[j + 1].parse().with_context(|| format!("bad precision value {:?}", &record[j + 1]))?;
            s.1.push((recall, p));
        }
    }
    io::write_atomic(output, crate::plot::pr_svg(&series).as_bytes())?;
    println!("wrote {}", output.display());
    Ok(())
}
