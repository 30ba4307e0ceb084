//! Spectral shape descriptors: ShapeDNA, HKS, scale-invariant HKS and WKS.

use std::f64::consts::{LN_10, PI};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::io;
use crate::spectral::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureKind {
    Hks,
    Sihks,
    Wks,
}

impl SignatureKind {
    pub const ALL: [SignatureKind; 3] = [SignatureKind::Hks, SignatureKind::Sihks, SignatureKind::Wks];

    pub fn as_str(self) -> &'static str {
        match self {
            SignatureKind::Hks => "hks",
            SignatureKind::Sihks => "sihks",
            SignatureKind::Wks => "wks",
        }
    }
}

impl fmt::Display for SignatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SignatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hks" => Ok(SignatureKind::Hks),
            "sihks" => Ok(SignatureKind::Sihks),
            "wks" => Ok(SignatureKind::Wks),
            other => precondition(format!("unknown signature kind {other:?}")),
        }
    }
}

/// Truncated, normalized eigenvalue sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub values: Vec<f64>,
}

impl GlobalDescriptor {
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        io::write_rows(path, std::iter::once(&self.values))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let values = io::read_rows(path)?.into_iter().next().unwrap_or_default();
        Ok(GlobalDescriptor { values })
    }
}

/// The sampling grid a point signature was evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SignatureParams {
    Hks { times: Vec<f64> },
    Sihks { grid: SihksParams },
    Wks { energies: Vec<f64>, sigma: f64 },
}

/// Per-vertex signatures, one row per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSignatureField {
    pub kind: SignatureKind,
    pub signatures: DMatrix<f64>,
    pub params: SignatureParams,
}

impl PointSignatureField {
    pub fn dim(&self) -> usize {
        self.signatures.ncols()
    }

    /// Writes `signatures_<kind>.csv` and `params_<kind>.json` into `dir`.
    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        io::write_matrix(dir.join(format!("signatures_{}.csv", self.kind)), &self.signatures)?;
        io::write_atomic(
            dir.join(format!("params_{}.json", self.kind)),
            serde_json::to_string_pretty(&self.params)?.as_bytes(),
        )
    }

    pub fn load<P: AsRef<Path>>(dir: P, kind: SignatureKind) -> Result<Self> {
        let dir = dir.as_ref();
        let signatures = io::read_matrix(dir.join(format!("signatures_{kind}.csv")))?;
        let params = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("params_{kind}.json")))?)?;
        Ok(PointSignatureField {
            kind,
            signatures,
            params,
        })
    }
}

/// Time grid of the scale-invariant HKS: `t = time_unit * alpha^tau` for
/// `tau = tau_min, tau_min + tau_step, ..., tau_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SihksParams {
    pub alpha: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    pub time_unit: f64,
    pub n_freq: usize,
}

impl Default for SihksParams {
    fn default() -> Self {
        SihksParams {
            alpha: 2.0,
            tau_min: 1.0,
            tau_max: 25.0,
            tau_step: 1.0 / 16.0,
            time_unit: 2f64.powi(-16),
            n_freq: 50,
        }
    }
}

impl SihksParams {
    pub fn taus(&self) -> Vec<f64> {
        let n = ((self.tau_max - self.tau_min) / self.tau_step).round() as usize + 1;
        (0..n).map(|j| self.tau_min + j as f64 * self.tau_step).collect()
    }
}

/// Descriptor settings for the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub shapedna_m: usize,
    pub hks_times: usize,
    pub sihks: SihksParams,
    pub wks_energies: usize,
    pub wks_sigma_factor: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            shapedna_m: 35,
            hks_times: 50,
            sihks: SihksParams::default(),
            wks_energies: 100,
            wks_sigma_factor: 7.0,
        }
    }
}

fn first_nonzero(spec: &Spectrum) -> Result<f64> {
    if spec.k() < 2 {
        return precondition(format!("spectrum has {} eigenvalues, need at least 2", spec.k()));
    }
    let l1 = spec.eigenvalues[1];
    if !(l1 > 0.0) {
        return precondition(format!("first nonzero eigenvalue must be positive, got {l1:e}"));
    }
    Ok(l1)
}

/// `(lambda_1, ..., lambda_m) / lambda_1`.
pub fn shape_dna(spec: &Spectrum, m: usize) -> Result<GlobalDescriptor> {
    if spec.k() < m + 1 {
        return precondition(format!("ShapeDNA of length {m} needs {} eigenvalues, spectrum has {}", m + 1, spec.k()));
    }
    let l1 = first_nonzero(spec)?;
    let values = spec.eigenvalues[1..=m].iter().map(|&l| l / l1).collect();
    Ok(GlobalDescriptor { values })
}

/// Log-uniform HKS time grid on `[4 ln 10 / lambda_max, 4 ln 10 / lambda_1]`.
pub fn hks_times(spec: &Spectrum, n_times: usize) -> Result<Vec<f64>> {
    let l1 = first_nonzero(spec)?;
    let lmax = spec.eigenvalues[spec.k() - 1];
    let (lo, hi) = ((4.0 * LN_10 / lmax).ln(), (4.0 * LN_10 / l1).ln());
    Ok(log_linspace(lo, hi, n_times))
}

fn log_linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo.exp()],
        _ => (0..n)
            .map(|j| (lo + (hi - lo) * j as f64 / (n - 1) as f64).exp())
            .collect(),
    }
}

/// Heat kernel signature on the default time grid.
pub fn hks(spec: &Spectrum, n_times: usize) -> Result<PointSignatureField> {
    let times = hks_times(spec, n_times)?;
    let signatures = heat_kernel_diagonal(spec, &times, 1);
    Ok(PointSignatureField {
        kind: SignatureKind::Hks,
        signatures,
        params: SignatureParams::Hks { times },
    })
}

/// Heat kernel signature at arbitrary times, skipping the constant mode.
pub fn hks_at(spec: &Spectrum, times: &[f64]) -> DMatrix<f64> {
    heat_kernel_diagonal(spec, times, 1)
}

/// `h(x, t) = sum_{i >= first} exp(-lambda_i t) phi_i(x)^2`.
fn heat_kernel_diagonal(spec: &Spectrum, times: &[f64], first: usize) -> DMatrix<f64> {
    let n = spec.n_vertices();
    let phi = &spec.eigenfunctions;
    let mut out = DMatrix::zeros(n, times.len());
    for (c, &t) in times.iter().enumerate() {
        let decay: Vec<f64> = spec.eigenvalues.iter().map(|&l| (-l * t).exp()).collect();
        for x in 0..n {
            let mut acc = 0.0;
            for i in first..spec.k() {
                let p = phi[(x, i)];
                acc += decay[i] * p * p;
            }
            out[(x, c)] = acc;
        }
    }
    out
}

/// Scale-invariant HKS: log of the heat kernel diagonal sampled on a
/// geometric time grid, differentiated along `tau`, then the magnitudes of
/// the first `n_freq` DFT coefficients.
///
/// The constant mode is kept here so that `log h` saturates at large `t`;
/// the derivative then vanishes at both ends of the grid and a global
/// rescaling of the shape only shifts the sequence.
pub fn sihks(spec: &Spectrum, grid: &SihksParams) -> Result<PointSignatureField> {
    first_nonzero(spec)?;
    let taus = grid.taus();
    if taus.len() < 2 || grid.n_freq == 0 || grid.n_freq > taus.len() - 1 {
        return precondition(format!(
            "siHKS grid has {} samples, cannot keep {} frequencies",
            taus.len(),
            grid.n_freq
        ));
    }
    let times: Vec<f64> = taus.iter().map(|&tau| grid.time_unit * grid.alpha.powf(tau)).collect();
    let h = heat_kernel_diagonal(spec, &times, 0);

    let len = taus.len() - 1;
    let n_freq = grid.n_freq;
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..n_freq * len)
        .map(|idx| {
            let (k, j) = (idx / len, idx % len);
            let w = -2.0 * PI * ((k * j) % len) as f64 / len as f64;
            (w.cos(), w.sin())
        })
        .unzip();

    let n = spec.n_vertices();
    let mut out = DMatrix::zeros(n, n_freq);
    let mut deriv = vec![0.0; len];
    for x in 0..n {
        let mut prev = log_heat(h[(x, 0)], x, taus[0])?;
        for j in 0..len {
            let next = log_heat(h[(x, j + 1)], x, taus[j + 1])?;
            deriv[j] = next - prev;
            prev = next;
        }
        for k in 0..n_freq {
            let (mut re, mut im) = (0.0, 0.0);
            let row = k * len;
            for (j, d) in deriv.iter().enumerate() {
                re += d * cos_t[row + j];
                im += d * sin_t[row + j];
            }
            out[(x, k)] = re.hypot(im);
        }
    }
    Ok(PointSignatureField {
        kind: SignatureKind::Sihks,
        signatures: out,
        params: SignatureParams::Sihks { grid: grid.clone() },
    })
}

fn log_heat(h: f64, vertex: usize, tau: f64) -> Result<f64> {
    if h > 0.0 && h.is_finite() {
        Ok(h.ln())
    } else {
        Err(Error::Underflow {
            vertex,
            detail: format!("h = {h:e} at tau = {tau}"),
        })
    }
}

/// Wave kernel signature on `n_energies` log-energies spanning
/// `[log lambda_1, log lambda_max]` with `sigma = sigma_factor * spacing`.
pub fn wks(spec: &Spectrum, n_energies: usize, sigma_factor: f64) -> Result<PointSignatureField> {
    first_nonzero(spec)?;
    let positive = spec.eigenvalues.iter().skip(1).filter(|&&l| l > 0.0).count();
    if positive < 2 {
        return precondition("WKS needs at least two nonzero eigenvalues");
    }
    if n_energies < 2 {
        return precondition("WKS needs at least two energies");
    }
    let lo = spec.eigenvalues[1].ln();
    let hi = spec.eigenvalues[spec.k() - 1].ln();
    let step = (hi - lo) / (n_energies - 1) as f64;
    let energies: Vec<f64> = (0..n_energies).map(|j| lo + step * j as f64).collect();
    let sigma = sigma_factor * step;
    let signatures = wks_at(spec, &energies, sigma)?;
    Ok(PointSignatureField {
        kind: SignatureKind::Wks,
        signatures,
        params: SignatureParams::Wks { energies, sigma },
    })
}

/// WKS at explicit log-energies. Each energy's Gaussian weights over the
/// positive eigenvalues are normalized to sum to one.
pub fn wks_at(spec: &Spectrum, energies: &[f64], sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0) {
        return precondition(format!("WKS bandwidth must be positive, got {sigma:e}"));
    }
    let modes: Vec<usize> = (1..spec.k()).filter(|&i| spec.eigenvalues[i] > 0.0).collect();
    if modes.is_empty() {
        return precondition("WKS needs a nonzero eigenvalue");
    }
    let logs: Vec<f64> = modes.iter().map(|&i| spec.eigenvalues[i].ln()).collect();
    let n = spec.n_vertices();
    let phi = &spec.eigenfunctions;
    let mut out = DMatrix::zeros(n, energies.len());
    for (c, &e) in energies.iter().enumerate() {
        let expo: Vec<f64> = logs.iter().map(|&l| -(e - l).powi(2) / (2.0 * sigma * sigma)).collect();
        let peak = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = expo.iter().map(|&a| (a - peak).exp()).collect();
        let total: f64 = w.iter().sum();
        for x in 0..n {
            let acc: f64 = modes.iter().zip(&w).map(|(&i, &wi)| wi * phi[(x, i)].powi(2)).sum();
            out[(x, c)] = acc / total;
        }
    }
    Ok(out)
}

/// All four descriptors of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDescriptors {
    pub shapedna: GlobalDescriptor,
    pub fields: Vec<PointSignatureField>,
}

impl ShapeDescriptors {
    pub fn field(&self, kind: SignatureKind) -> Option<&PointSignatureField> {
        self.fields.iter().find(|f| f.kind == kind)
    }

    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.shapedna.save(dir.join("shapedna.csv"))?;
        for f in &self.fields {
            f.save(dir)?;
        }
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(dir: P) -> Result<Self> {
        let dir = dir.as_ref();
        let shapedna = GlobalDescriptor::load(dir.join("shapedna.csv"))?;
        let fields = SignatureKind::ALL
            .iter()
            .map(|&k| PointSignatureField::load(dir, k))
            .collect::<Result<_>>()?;
        Ok(ShapeDescriptors { shapedna, fields })
    }
}

pub fn compute_all(spec: &Spectrum, cfg: &DescriptorConfig) -> Result<ShapeDescriptors> {
    Ok(ShapeDescriptors {
        shapedna: shape_dna(spec, cfg.shapedna_m)?,
        fields: vec![
            hks(spec, cfg.hks_times)?,
            sihks(spec, &cfg.sihks)?,
            wks(spec, cfg.wks_energies, cfg.wks_sigma_factor)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use crate::spectral::mesh_spectrum;

    /// Two-vertex toy spectrum: constant mode plus one mode with value `c`.
    fn toy(lambda1: f64, c: f64) -> Spectrum {
        Spectrum {
            name: "toy".into(),
            eigenvalues: vec![0.0, lambda1],
            eigenfunctions: DMatrix::from_row_slice(2, 2, &[0.5, c, 0.5, c]),
            mass: vec![1.0, 1.0],
        }
    }

    #[test]
    fn shape_dna_normalization_and_errors() {
        let spec = toy(3.0, 1.0);
        assert_eq!(shape_dna(&spec, 1).unwrap().values, vec![1.0]);
        assert!(shape_dna(&spec, 2).is_err());
        let mut zero = toy(3.0, 1.0);
        zero.eigenvalues[1] = 0.0;
        assert!(shape_dna(&zero, 1).is_err());
    }

    #[test]
    fn sphere_shape_dna() {
        let spec = mesh_spectrum(&icosphere(3), 10).unwrap();
        let dna = shape_dna(&spec, 5).unwrap();
        assert_eq!(dna.values[0], 1.0);
        for (got, want) in dna.values.iter().zip([1.0, 1.0, 1.0, 3.0, 3.0]) {
            assert!((got - want).abs() / want < 0.05, "{got} vs {want}");
        }
    }

    #[test]
    fn hks_single_mode_closed_form() {
        let c = 0.7;
        let h = hks_at(&toy(1.0, c), &[1.0, 2.0]);
        assert!((h[(0, 0)] - c * c * (-1f64).exp()).abs() < 1e-15);
        assert!((h[(0, 0)] / h[(0, 1)] - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn hks_positive_and_decreasing() {
        let spec = mesh_spectrum(&icosphere(2), 40).unwrap();
        let f = hks(&spec, 50).unwrap();
        assert_eq!(f.dim(), 50);
        for row in f.signatures.row_iter() {
            assert!(row.iter().all(|&x| x > 0.0));
            assert!(row.iter().zip(row.iter().skip(1)).all(|(a, b)| b <= a));
        }
    }

    #[test]
    fn wks_single_mode_normalizes_to_coefficient() {
        let c = 0.3;
        let spec = toy(std::f64::consts::E, c);
        let w = wks_at(&spec, &[1.0, 0.5, 3.0], 0.2).unwrap();
        for x in 0..2 {
            for j in 0..3 {
                assert!((w[(x, j)] - c * c).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn wks_nonnegative_with_default_dims() {
        let spec = mesh_spectrum(&icosphere(2), 40).unwrap();
        let f = wks(&spec, 100, 7.0).unwrap();
        assert_eq!(f.dim(), 100);
        assert!(f.signatures.iter().all(|&x| x >= 0.0 && x.is_finite()));
        assert!(wks(&toy(1.0, 1.0), 100, 7.0).is_err());
    }

    #[test]
    fn sihks_grid_and_gain_invariance() {
        let grid = SihksParams::default();
        assert_eq!(grid.taus().len(), 385);
        let spec = mesh_spectrum(&icosphere(2), 30).unwrap();
        let a = sihks(&spec, &grid).unwrap();
        assert_eq!(a.dim(), 50);
        let mut gained = spec.clone();
        gained.eigenfunctions *= 3.0;
        let b = sihks(&gained, &grid).unwrap();
        for x in 0..spec.n_vertices() {
            for k in 1..50 {
                let (p, q) = (a.signatures[(x, k)], b.signatures[(x, k)]);
                assert!((p - q).abs() <= 1e-9 * p.abs().max(1e-12), "vertex {x} bin {k}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn sihks_reports_underflow() {
        let mut spec = toy(1.0, 0.0);
        spec.eigenfunctions.fill(0.0);
        assert!(matches!(sihks(&spec, &SihksParams::default()), Err(Error::Underflow { vertex: 0, .. })));
    }

    #[test]
    fn descriptors_persist() {
        let spec = mesh_spectrum(&icosphere(1), 20).unwrap();
        let cfg = DescriptorConfig {
            shapedna_m: 10,
            ..Default::default()
        };
        let d = compute_all(&spec, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(ShapeDescriptors::load(dir.path()).unwrap(), d);
    }
}
