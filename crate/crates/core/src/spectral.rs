//! Cotangent Laplace–Beltrami operator and its truncated spectrum.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::io;
use crate::mesh::{cross, dot, norm, sub, TriMesh};

/// Cotangents above this magnitude mark a near-degenerate triangle.
pub const MAX_COTANGENT: f64 = 1e8;

/// Symmetric sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    fn from_rows(rows: Vec<BTreeMap<usize, f64>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n, (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()))
    }
}

/// Discrete Laplace–Beltrami operator: cotangent stiffness and lumped mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceOperator {
    pub stiffness: CsrMatrix,
    pub mass: Vec<f64>,
    pub name: String,
}

impl LaplaceOperator {
    pub fn n_vertices(&self) -> usize {
        self.mass.len()
    }
}

/// Assembles the cotangent stiffness matrix (positive semidefinite sign
/// convention: off-diagonals `-(cot a + cot b) / 2`) and the barycentric
/// lumped mass matrix.
pub fn cotan_laplacian(mesh: &TriMesh) -> Result<LaplaceOperator> {
    let n = mesh.n_vertices();
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut mass = vec![0.0; n];

    for (t, face) in mesh.faces.iter().enumerate() {
        let p = face.map(|i| mesh.vertices[i]);
        let area = 0.5 * norm(&cross(&sub(&p[1], &p[0]), &sub(&p[2], &p[0])));
        for k in 0..3 {
            // corner k is opposite edge (k+1, k+2)
            let (i, j) = (face[(k + 1) % 3], face[(k + 2) % 3]);
            let u = sub(&p[(k + 1) % 3], &p[k]);
            let v = sub(&p[(k + 2) % 3], &p[k]);
            let cot = dot(&u, &v) / norm(&cross(&u, &v));
            if !cot.is_finite() || cot.abs() > MAX_COTANGENT {
                return Err(Error::Numeric {
                    triangle: t,
                    reason: format!("cotangent {cot:e} exceeds {MAX_COTANGENT:e}"),
                });
            }
            *rows[i].entry(j).or_insert(0.0) -= 0.5 * cot;
            *rows[j].entry(i).or_insert(0.0) -= 0.5 * cot;
            mass[face[k]] += area / 3.0;
        }
    }

    for (i, row) in rows.iter_mut().enumerate() {
        let off: f64 = row.iter().filter(|(&j, _)| j != i).map(|(_, v)| *v).sum();
        row.insert(i, -off);
    }

    if let Some(i) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::InvalidMesh {
            element: "vertex",
            index: i,
            reason: "not referenced by any face (zero mass)".into(),
        });
    }

    Ok(LaplaceOperator {
        stiffness: CsrMatrix::from_rows(rows),
        mass,
        name: mesh.name.clone(),
    })
}

/// Truncated generalized eigenpairs `S phi = lambda M phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub name: String,
    pub eigenvalues: Vec<f64>,
    /// `n_vertices x k`, column `i` is the `i`-th eigenfunction.
    pub eigenfunctions: DMatrix<f64>,
    pub mass: Vec<f64>,
}

impl Spectrum {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.eigenfunctions.nrows()
    }

    /// `Phi^T M Phi`.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut weighted = self.eigenfunctions.clone();
        for (mut row, &m) in weighted.row_iter_mut().zip(&self.mass) {
            row *= m;
        }
        self.eigenfunctions.transpose() * weighted
    }

    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = SpectrumMeta {
            k: self.k(),
            n_vertices: self.n_vertices(),
            name: self.name.clone(),
        };
        io::write_atomic(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        io::write_rows(dir.join("eigenvalues.csv"), std::iter::once(self.eigenvalues.clone()))?;
        io::write_matrix(dir.join("eigenfunctions.csv"), &self.eigenfunctions)?;
        io::write_rows(dir.join("mass.csv"), self.mass.iter().map(|&m| vec![m]))?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(dir: P) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SpectrumMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let eigenvalues = io::read_rows(dir.join("eigenvalues.csv"))?
            .into_iter()
            .next()
            .unwrap_or_default();
        let eigenfunctions = io::read_matrix(dir.join("eigenfunctions.csv"))?;
        let mass: Vec<f64> = io::read_rows(dir.join("mass.csv"))?.into_iter().flatten().collect();
        if eigenvalues.len() != meta.k || eigenfunctions.ncols() != meta.k {
            return Err(Error::DimensionMismatch {
                expected: meta.k,
                actual: eigenvalues.len(),
            });
        }
        if eigenfunctions.nrows() != meta.n_vertices || mass.len() != meta.n_vertices {
            return Err(Error::DimensionMismatch {
                expected: meta.n_vertices,
                actual: eigenfunctions.nrows(),
            });
        }
        Ok(Spectrum {
            name: meta.name,
            eigenvalues,
            eigenfunctions,
            mass,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpectrumMeta {
    k: usize,
    n_vertices: usize,
    name: String,
}

/// Solves for the `k` smallest generalized eigenpairs by reducing to the
/// standard symmetric problem `M^{-1/2} S M^{-1/2}`.
///
/// Eigenvectors are `M`-orthonormal and signed so that their entry of
/// largest magnitude is positive. `lambda_0` is clamped to zero when it is
/// below `1e-8 * lambda_{k-1}` in magnitude.
pub fn eigendecompose(op: &LaplaceOperator, k: usize) -> Result<Spectrum> {
    let n = op.n_vertices();
    if k < 1 || k > n {
        return precondition(format!("k = {k} must lie in [1, {n}]"));
    }
    let inv_sqrt: Vec<f64> = op.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in op.stiffness.row(i) {
            a[(i, j)] = v * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // exact symmetry keeps the eigensolver deterministic across assembly order
    let a = (&a + a.transpose()) * 0.5;

    const MAX_ITERS: usize = 100_000;
    let eig = a
        .try_symmetric_eigen(f64::EPSILON, MAX_ITERS)
        .ok_or_else(|| Error::Solver(format!("symmetric eigensolver did not converge in {MAX_ITERS} iterations (n = {n})")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    order.truncate(k);

    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut phi = DMatrix::zeros(n, k);
    for (c, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        for (x, s) in col.iter_mut().zip(&inv_sqrt) {
            *x *= s;
        }
        let pivot = col.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        phi.set_column(c, &col);
    }

    let top = *eigenvalues.last().expect("k >= 1");
    if eigenvalues[0].abs() < 1e-8 * top.abs() {
        eigenvalues[0] = 0.0;
    }

    Ok(Spectrum {
        name: op.name.clone(),
        eigenvalues,
        eigenfunctions: phi,
        mass: op.mass.clone(),
    })
}

/// Convenience: mesh to spectrum.
pub fn mesh_spectrum(mesh: &TriMesh, k: usize) -> Result<Spectrum> {
    eigendecompose(&cotan_laplacian(mesh)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, regular_tetrahedron};
    use approx::assert_relative_eq;

    #[test]
    fn tetrahedron_cotangent_weights() {
        let op = cotan_laplacian(&regular_tetrahedron()).unwrap();
        let cot60 = 1.0 / 3f64.sqrt();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!((op.stiffness.get(i, j) + cot60).abs() < 1e-9);
                }
            }
            assert!((op.stiffness.get(i, i) - 3.0 * cot60).abs() < 1e-9);
        }
        let face_area = 3f64.sqrt() / 4.0;
        for &m in &op.mass {
            assert_relative_eq!(m, face_area, epsilon = 1e-12);
        }
    }

    #[test]
    fn laplacian_invariants_on_icosphere() {
        let op = cotan_laplacian(&icosphere(2)).unwrap();
        let s = &op.stiffness;
        for i in 0..s.n {
            let max_abs = s.row(i).map(|(_, v)| v.abs()).fold(0.0, f64::max);
            let sum: f64 = s.row(i).map(|(_, v)| v).sum();
            assert!(sum.abs() <= 1e-9 * max_abs);
            for (j, v) in s.row(i) {
                assert!((v - s.get(j, i)).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
        assert!(op.mass.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn scaling_leaves_stiffness_and_scales_mass() {
        let mesh = icosphere(2);
        let a = cotan_laplacian(&mesh).unwrap();
        let b = cotan_laplacian(&mesh.scaled(3.0)).unwrap();
        for (x, y) in a.stiffness.values.iter().zip(&b.stiffness.values) {
            assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-14);
        }
        for (x, y) in a.mass.iter().zip(&b.mass) {
            assert_relative_eq!(9.0 * x, *y, max_relative = 1e-12);
        }
    }

    #[test]
    fn sliver_triangle_reports_numeric_error() {
        let vertices = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1e-9, 0.0]];
        let mesh = TriMesh {
            name: "sliver".into(),
            vertices,
            faces: vec![[0, 1, 2]],
        };
        assert!(matches!(cotan_laplacian(&mesh), Err(Error::Numeric { triangle: 0, .. })));
    }

    #[test]
    fn first_eigenfunction_is_constant() {
        let spec = mesh_spectrum(&icosphere(2), 1).unwrap();
        assert!(spec.eigenvalues[0].abs() < 1e-10);
        let col = spec.eigenfunctions.column(0);
        let mean = col.mean();
        for x in col.iter() {
            assert!(((x - mean) / mean).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_k() {
        let op = cotan_laplacian(&regular_tetrahedron()).unwrap();
        assert!(matches!(eigendecompose(&op, 5), Err(Error::Precondition(_))));
        assert!(matches!(eigendecompose(&op, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn spectrum_invariants_and_residuals() {
        let op = cotan_laplacian(&icosphere(2)).unwrap();
        let spec = eigendecompose(&op, 20).unwrap();
        let top = spec.eigenvalues[19];
        assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        assert!(spec.eigenvalues.iter().all(|&l| l >= -1e-8 * top));
        let gram = spec.gram();
        for i in 0..20 {
            for j in 0..20 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - want).abs() < 1e-6);
            }
        }
        let mass = DVector::from_vec(spec.mass.clone());
        for i in 0..20 {
            let phi = spec.eigenfunctions.column(i).into_owned();
            let m_phi = phi.component_mul(&mass);
            let resid = op.stiffness.mul_vec(&phi) - &m_phi * spec.eigenvalues[i];
            assert!(resid.norm() <= 1e-6 * m_phi.norm() * top);
        }
    }

    #[test]
    fn deterministic_and_persisted_exactly() {
        let op = cotan_laplacian(&icosphere(2)).unwrap();
        let a = eigendecompose(&op, 12).unwrap();
        let b = eigendecompose(&op, 12).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        assert_eq!(Spectrum::load(dir.path()).unwrap(), a);
    }
}
