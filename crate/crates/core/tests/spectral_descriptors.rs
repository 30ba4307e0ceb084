use mfamml::descriptors::{self, SihksParams};
use mfamml::mesh::icosphere;
use mfamml::spectral::mesh_spectrum;

fn rel_row_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    a.row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| (x - y).norm() / x.norm())
        .fold(0.0, f64::max)
}

#[test]
fn sphere_eigenvalues_follow_l_times_l_plus_one() {
    let spec = mesh_spectrum(&icosphere(3), 10).unwrap();
    let expected = [2.0, 2.0, 2.0, 6.0, 6.0, 6.0, 6.0, 6.0, 12.0];
    for (got, want) in spec.eigenvalues[1..].iter().zip(expected) {
        assert!((got - want).abs() / want <= 0.05, "{got} vs {want}");
    }
}

#[test]
fn eigenvalues_scale_inversely_with_area() {
    let mesh = icosphere(3);
    let a = mesh_spectrum(&mesh, 12).unwrap();
    let b = mesh_spectrum(&mesh.scaled(2.0), 12).unwrap();
    for (x, y) in a.eigenvalues[1..].iter().zip(&b.eigenvalues[1..]) {
        assert!((x / 4.0 - y).abs() <= 1e-6 * y, "{x} {y}");
    }
}

#[test]
fn sihks_is_scale_invariant() {
    let mesh = icosphere(3);
    let a = mesh_spectrum(&mesh, 100).unwrap();
    let b = mesh_spectrum(&mesh.scaled(2.0), 100).unwrap();
    let grid = SihksParams::default();
    let fa = descriptors::sihks(&a, &grid).unwrap();
    let fb = descriptors::sihks(&b, &grid).unwrap();
    let worst = rel_row_diff(&fa.signatures, &fb.signatures);
    assert!(worst <= 0.05, "{worst:e}");
}

#[test]
fn heat_trace_identity() {
    let spec = mesh_spectrum(&mfamml::synth::Primitive::Torus.base_mesh(), 60).unwrap();
    let times = descriptors::hks_times(&spec, 20).unwrap();
    let h = descriptors::hks_at(&spec, &times);
    for (c, &t) in times.iter().enumerate() {
        let weighted: f64 = h.column(c).iter().zip(&spec.mass).map(|(x, m)| x * m).sum();
        let trace: f64 = spec.eigenvalues[1..].iter().map(|l| (-l * t).exp()).sum();
        assert!((weighted - trace).abs() <= 1e-8, "t = {t}: {weighted} vs {trace}");
    }
}

#[test]
fn rigid_motion_leaves_descriptors_unchanged() {
    let mesh = mfamml::synth::Primitive::Cylinder.base_mesh();
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let rotation = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
    let moved = mesh.transformed(&rotation, [5.0, -2.0, 1.0]);
    let a = mesh_spectrum(&mesh, 40).unwrap();
    let b = mesh_spectrum(&moved, 40).unwrap();
    for (x, y) in a.eigenvalues[1..].iter().zip(&b.eigenvalues[1..]) {
        assert!((x - y).abs() <= 1e-9 * x, "{x} vs {y}");
    }
    let (da, db) = (descriptors::shape_dna(&a, 35).unwrap(), descriptors::shape_dna(&b, 35).unwrap());
    for (x, y) in da.values.iter().zip(&db.values) {
        assert!((x - y).abs() <= 1e-9 * x);
    }
    let times = descriptors::hks_times(&a, 10).unwrap();
    let (ha, hb) = (descriptors::hks_at(&a, &times), descriptors::hks_at(&b, &times));
    // eigenvectors within the 2-fold degenerate eigenspaces may rotate, but
    // the heat kernel diagonal does not depend on the basis
    assert!(rel_row_diff(&ha, &hb) <= 1e-8);
}

#[test]
fn shapedna_ignores_scale() {
    let mesh = mfamml::synth::Primitive::Torus.base_mesh();
    let a = descriptors::shape_dna(&mesh_spectrum(&mesh, 40).unwrap(), 35).unwrap();
    let b = descriptors::shape_dna(&mesh_spectrum(&mesh.scaled(3.0), 40).unwrap(), 35).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() <= 1e-9 * x);
    }
}

#[test]
fn descriptors_are_deterministic() {
    let mesh = mfamml::synth::Primitive::Torus.base_mesh();
    let cfg = descriptors::DescriptorConfig::default();
    let a = descriptors::compute_all(&mesh_spectrum(&mesh, 100).unwrap(), &cfg).unwrap();
    let b = descriptors::compute_all(&mesh_spectrum(&mesh, 100).unwrap(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.field(descriptors::SignatureKind::Wks).unwrap().dim(), 100);
    assert_eq!(a.field(descriptors::SignatureKind::Hks).unwrap().dim(), 50);
    assert_eq!(a.field(descriptors::SignatureKind::Sihks).unwrap().dim(), 50);
}
