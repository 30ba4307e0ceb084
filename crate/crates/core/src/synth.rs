//! Seeded synthetic shape collections: deformed spheres, tori and capped
//! cylinders with random smooth bumps and rigid motions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mesh::{icosphere, Point3, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Sphere,
    Torus,
    Cylinder,
}

impl Primitive {
    pub const ALL: [Primitive; 3] = [Primitive::Sphere, Primitive::Torus, Primitive::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Sphere => "sphere",
            Primitive::Torus => "torus",
            Primitive::Cylinder => "cylinder",
        }
    }

    /// Undeformed base mesh.
    pub fn base_mesh(self) -> TriMesh {
        match self {
            Primitive::Sphere => icosphere(3),
            Primitive::Torus => torus(1.0, 0.4, 32, 16),
            Primitive::Cylinder => capped_cylinder(0.6, 1.2, 6.0),
        }
    }
}

/// Ring torus sampled on a `n_major x n_minor` grid.
pub fn torus(major: f64, minor: f64, n_major: usize, n_minor: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        let u = 2.0 * PI * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let v = 2.0 * PI * j as f64 / n_minor as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), r * u.sin(), minor * v.sin()]);
        }
    }
    let idx = |i: usize, j: usize| (i % n_major) * n_minor + (j % n_minor);
    let mut faces = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new("torus", vertices, faces).expect("torus grid is valid")
}

/// Closed cylinder-like superquadric obtained by radially projecting a
/// subdivided icosphere; `sharpness` controls how flat the caps are.
pub fn capped_cylinder(radius: f64, half_height: f64, sharpness: f64) -> TriMesh {
    let sphere = icosphere(3);
    let vertices = sphere
        .vertices
        .iter()
        .map(|p| {
            let rho = (p[0] * p[0] + p[1] * p[1]).sqrt() / radius;
            let z = p[2].abs() / half_height;
            let s = (rho.powf(sharpness) + z.powf(sharpness)).powf(1.0 / sharpness);
            [p[0] / s, p[1] / s, p[2] / s]
        })
        .collect();
    TriMesh::new("cylinder", vertices, sphere.faces).expect("projected icosphere is valid")
}

/// Deformation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub per_class: usize,
    pub seed: u64,
    /// Number of Gaussian bumps per shape.
    pub bumps: usize,
    /// Bump height as a fraction of the shape's bounding-box diagonal.
    pub amplitude: f64,
    /// Bump radius as a fraction of the bounding-box diagonal.
    pub width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 20,
            seed: 0,
            bumps: 4,
            amplitude: 0.04,
            width: 0.15,
        }
    }
}

/// One generated shape.
#[derive(Debug, Clone)]
pub struct SynthShape {
    pub id: String,
    pub label: String,
    pub mesh: TriMesh,
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    // uniform unit quaternion
    let q: Vec<f64> = (0..4).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>();
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Pushes vertices along their normals by a sum of Gaussian bumps centered
/// at random vertices, then applies a random rigid motion.
pub fn deform(base: &TriMesh, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<TriMesh> {
    let diag = base.bbox_diagonal_sq().sqrt();
    let normals = base.vertex_normals();
    let centers: Vec<(Point3, f64)> = (0..cfg.bumps)
        .map(|_| {
            let c = base.vertices[rng.random_range(0..base.n_vertices())];
            let h = cfg.amplitude * diag * rng.random_range(-1.0..1.0);
            (c, h)
        })
        .collect();
    let width = cfg.width * diag;
    let vertices: Vec<Point3> = base
        .vertices
        .iter()
        .zip(&normals)
        .map(|(p, n)| {
            let offset: f64 = centers
                .iter()
                .map(|(c, h)| {
                    let d2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                    h * (-d2 / (2.0 * width * width)).exp()
                })
                .sum();
            [p[0] + offset * n[0], p[1] + offset * n[1], p[2] + offset * n[2]]
        })
        .collect();
    let bent = TriMesh::new(base.name.clone(), vertices, base.faces.clone())?;
    let rotation = random_rotation(rng);
    let translation = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    Ok(bent.transformed(&rotation, translation))
}

/// `per_class` deformed copies of each primitive, ids `<class>_<nnn>`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthShape>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shapes = Vec::with_capacity(3 * cfg.per_class);
    for prim in Primitive::ALL {
        let base = prim.base_mesh();
        for i in 0..cfg.per_class {
            let id = format!("{}_{i:03}", prim.name());
            let mut mesh = deform(&base, cfg, &mut rng)?;
            mesh.name = id.clone();
            shapes.push(SynthShape {
                id,
                label: prim.name().to_string(),
                mesh,
            });
        }
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::cotan_laplacian;

    #[test]
    fn primitives_are_closed_manifolds() {
        for prim in Primitive::ALL {
            let m = prim.base_mesh();
            // Euler characteristic: 2 for sphere-like, 0 for the torus
            let mut edges = std::collections::HashSet::new();
            for f in &m.faces {
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            let chi = m.n_vertices() as i64 - edges.len() as i64 + m.n_faces() as i64;
            let want = if prim == Primitive::Torus { 0 } else { 2 };
            assert_eq!(chi, want, "{}", prim.name());
            assert_eq!(3 * m.n_faces(), 2 * edges.len());
            assert!(cotan_laplacian(&m).is_ok());
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            per_class: 2,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mesh, y.mesh);
        }
        assert_ne!(a[0].mesh.vertices, a[1].mesh.vertices);
        assert_eq!(a[5].id, "cylinder_001");
    }
}
