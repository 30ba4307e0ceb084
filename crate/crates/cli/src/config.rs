//! Pipeline configuration: TOML file, command-line overrides, and a stable
//! content hash.

use std::path::{Path, PathBuf};

use clap::Args;
use mfamml::pipeline::{PipelineConfig, Protocol};
use sha2::{Digest, Sha256};

use crate::InvalidConfig;

/// Flags that override individual configuration fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Random seed: split seed for the pipeline stages, generator seed for `synth`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fraction of each class used for training.
    #[arg(long, global = true)]
    pub split: Option<f64>,
    /// Evaluation protocol: `split` (test shapes only) or `all`.
    #[arg(long, global = true)]
    pub protocol: Option<Protocol>,
    /// Weight of the HSIC coupling term.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Projected dimension per view.
    #[arg(long, global = true)]
    pub d: Option<usize>,
    /// Same-class neighbours in the intrinsic graph.
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    /// Between-class pairs per class in the penalty graph.
    #[arg(long, global = true)]
    pub k2: Option<usize>,
    #[arg(long, global = true)]
    pub ridge: Option<f64>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Number of Laplace-Beltrami eigenpairs.
    #[arg(long, global = true)]
    pub spectral_k: Option<usize>,
    /// Visual words per codebook.
    #[arg(long, global = true)]
    pub codebook_k: Option<usize>,
    #[arg(long, global = true)]
    pub codebook_seed: Option<u64>,
    #[arg(long, global = true)]
    pub pr_points: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let t = &mut cfg.train;
        let e = &mut cfg.eval;
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { $field = v; })*
            };
        }
        set! {
            seed => e.split_seed,
            split => e.split,
            protocol => e.protocol,
            pr_points => e.pr_points,
            lambda => t.lambda,
            d => t.d,
            k1 => t.k1,
            k2 => t.k2,
            ridge => t.ridge,
            tol => t.tol,
            max_iters => t.max_iters,
        }
        if let Some(k) = self.spectral_k {
            cfg.spectral_k = k;
        }
        if let Some(k) = self.codebook_k {
            cfg.codebook.k = k;
        }
        if let Some(s) = self.codebook_seed {
            cfg.codebook.seed = s;
        }
    }
}

/// Reads a TOML config (all keys optional), applies overrides and validates.
///
/// Unknown keys are rejected so that typos do not silently fall back to
/// defaults.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig, InvalidConfig> {
    let mut cfg = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| InvalidConfig(format!("cannot read config {}: {e}", p.display())))?;
            parse(&text).map_err(|e| InvalidConfig(format!("{}: {}", p.display(), e.0)))?
        }
    };
    overrides.apply(&mut cfg);
    cfg.validate().map_err(|e| InvalidConfig(e.to_string()))?;
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<PipelineConfig, InvalidConfig> {
    let value: toml::Table = toml::from_str(text).map_err(|e| InvalidConfig(e.to_string()))?;
    let reference = toml::Table::try_from(PipelineConfig::default()).expect("default config serializes");
    check_keys(&value, &reference, "")?;
    toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| InvalidConfig(e.to_string()))
}

fn check_keys(table: &toml::Table, reference: &toml::Table, prefix: &str) -> Result<(), InvalidConfig> {
    for (key, value) in table {
        let path = format!("{prefix}{key}");
        match (value, reference.get(key)) {
            (_, None) => return Err(InvalidConfig(format!("unknown config key `{path}`"))),
            (toml::Value::Table(sub), Some(toml::Value::Table(ref_sub))) => check_keys(sub, ref_sub, &format!("{path}."))?,
            _ => {}
        }
    }
    Ok(())
}

/// SHA-256 of the canonical JSON form, hex encoded.
pub fn hash(cfg: &PipelineConfig) -> String {
    hash_json(cfg)
}

pub fn hash_json<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Default locations of every artifact under the work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn features(&self, id: &str) -> PathBuf {
        self.root.join("features").join(id)
    }

    pub fn codebooks(&self) -> PathBuf {
        self.root.join("codebooks")
    }

    pub fn encoded(&self) -> PathBuf {
        self.root.join("encoded")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn retrieval(&self) -> PathBuf {
        self.root.join("retrieval")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}
