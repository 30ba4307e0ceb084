use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mfamml::coding::{assemble_view, ViewFeatures};
use mfamml::metric::{
    assemble_pv, build_graphs, build_graphs_from, double_center, hsic, mfa_init, penalty_scatter, train_alternating,
    TrainConfig,
};
use mfamml::Execution;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn view_from(x: &DMatrix<f64>, labels: &[usize], name: &str) -> ViewFeatures {
    let cols: Vec<Vec<f64>> = x.column_iter().map(|c| c.iter().copied().collect()).collect();
    assemble_view(&cols, labels, name).unwrap()
}

fn rotated_views(seed: u64) -> Vec<ViewFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..45).map(|i| i / 15).collect();
    let means = gaussian(&mut rng, 4, 3) * 2.0;
    let x = DMatrix::from_fn(4, 45, |i, j| means[(i, labels[j])]) + gaussian(&mut rng, 4, 45);
    let q = gaussian(&mut rng, 4, 4).qr().q();
    vec![view_from(&x, &labels, "a"), view_from(&(q * &x), &labels, "b")]
}

fn small_config() -> TrainConfig {
    TrainConfig {
        d: 2,
        k1: 3,
        k2: 10,
        ..Default::default()
    }
}

#[test]
fn coupling_matches_term_by_term_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels = vec![0, 0, 0, 1, 1, 1, 2, 2];
    let dims = [3, 4, 5];
    let views: Vec<ViewFeatures> = dims
        .iter()
        .enumerate()
        .map(|(v, &d)| view_from(&gaussian(&mut rng, d, labels.len()), &labels, &format!("v{v}")))
        .collect();
    let projections: Vec<DMatrix<f64>> = dims.iter().map(|&d| gaussian(&mut rng, d, 2)).collect();
    let graphs: Vec<_> = views.iter().map(|v| build_graphs(v, 1, 2).unwrap()).collect();
    let lambda = 0.7;

    let n = labels.len();
    let h = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64);
    for v in 0..3 {
        let got = assemble_pv(v, &views, &projections, &graphs, lambda, Execution::Sequential).unwrap();
        let x = &views[v].matrix;
        let mut want = penalty_scatter(x, &graphs[v]);
        for w in (0..3).filter(|&w| w != v) {
            let xw = &views[w].matrix;
            let k = xw.transpose() * &projections[w] * projections[w].transpose() * xw;
            want += x * &h * k * &h * x.transpose() * lambda;
        }
        assert!((&got - &want).amax() <= 1e-10, "view {v}: {:e}", (&got - &want).amax());
        let par = assemble_pv(v, &views, &projections, &graphs, lambda, Execution::Parallel).unwrap();
        assert_eq!(got, par);
    }
}

#[test]
fn mfa_direction_follows_class_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let labels: Vec<usize> = (0..60).map(|i| i / 30).collect();
    let mu = [[0.0, 0.0], [6.0, 2.0]];
    let x = DMatrix::from_fn(2, 60, |i, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        mu[labels[j]][i] + e
    });
    // identity standardization keeps the geometry comparable to the means
    let view = ViewFeatures {
        name: "plane".into(),
        matrix: x.clone(),
        labels: labels.clone(),
        standardization: mfamml::coding::Standardization::identity(2),
    };
    let graphs = build_graphs(&view, 5, 20).unwrap();
    let w = mfa_init(&view, &graphs, 1, 1e-6).unwrap();
    let dir = w.column(0).normalize();
    let diff = nalgebra::Vector2::new(6.0, 2.0).normalize();

    // oracle: leading eigenvector of C^{-1} P from a general eigensolve
    let p = penalty_scatter(&x, &graphs);
    let c = &x * &graphs.intrinsic_laplacian * x.transpose() + DMatrix::identity(2, 2) * 1e-6;
    let m = c.try_inverse().unwrap() * p;
    let (a, b, cc, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let top = 0.5 * (a + d) + (0.25 * (a - d).powi(2) + b * cc).sqrt();
    let oracle = nalgebra::Vector2::new(b, top - a).normalize();

    let angle = |u: &nalgebra::DVector<f64>, v: &nalgebra::Vector2<f64>| (u[0] * v[0] + u[1] * v[1]).abs().min(1.0).acos().to_degrees();
    assert!(angle(&dir, &oracle) < 1e-4, "solver vs oracle {}", angle(&dir, &oracle));
    assert!(angle(&dir, &diff) < 5.0, "solver vs mean difference {}", angle(&dir, &diff));
}

#[test]
fn rotated_views_converge() {
    let model = train_alternating(&rotated_views(13), &small_config(), Execution::default()).unwrap();
    assert!(model.converged);
    assert!(model.history.len() <= 50);
    let last_sweep = model.history.len() - 1;
    for u in model.updates.iter().filter(|u| u.sweep == last_sweep) {
        assert!(u.change < small_config().tol);
    }
    for u in &model.updates {
        assert!(u.ratio_after >= u.ratio_before - 1e-10);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let views = rotated_views(14);
    let a = train_alternating(&views, &small_config(), Execution::Parallel).unwrap();
    let b = train_alternating(&views, &small_config(), Execution::Parallel).unwrap();
    let c = train_alternating(&views, &small_config(), Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn projections_are_constraint_orthonormal() {
    let views = rotated_views(15);
    let cfg = small_config();
    let model = train_alternating(&views, &cfg, Execution::default()).unwrap();
    for (view, w) in views.iter().zip(&model.projections) {
        let g = build_graphs(view, cfg.k1, cfg.k2).unwrap();
        let c = mfamml::metric::constraint_matrix(&view.matrix, &g, cfg.ridge);
        let gram = w.transpose() * c * w;
        assert!((gram - DMatrix::identity(cfg.d, cfg.d)).amax() < 1e-8);
    }
}

fn labelled_points() -> impl Strategy<Value = (DMatrix<f64>, Vec<usize>)> {
    (2usize..4, 2usize..5, 1usize..4).prop_flat_map(|(classes, per_class, dim)| {
        let n = classes * per_class;
        proptest::collection::vec(-10.0f64..10.0, n * dim)
            .prop_map(move |v| (DMatrix::from_vec(dim, n, v), (0..n).map(|i| i % classes).collect()))
    })
}

proptest! {
    #[test]
    fn graphs_respect_labels((x, labels) in labelled_points(), k1 in 1usize..4, k2 in 1usize..6) {
        let g = build_graphs_from(&x, &labels, k1, k2).unwrap();
        let n = labels.len();
        for i in 0..n {
            prop_assert!(g.intrinsic_laplacian.row(i).sum().abs() < 1e-12);
            prop_assert!(g.penalty_laplacian.row(i).sum().abs() < 1e-12);
            for j in 0..n {
                prop_assert_eq!(g.intrinsic[(i, j)], g.intrinsic[(j, i)]);
                prop_assert_eq!(g.penalty[(i, j)], g.penalty[(j, i)]);
                if g.intrinsic[(i, j)] != 0.0 {
                    prop_assert_eq!(labels[i], labels[j]);
                }
                if g.penalty[(i, j)] != 0.0 {
                    prop_assert_ne!(labels[i], labels[j]);
                }
            }
        }
    }

    #[test]
    fn centering_annihilates_constants(n in 2usize..12, c in -100.0f64..100.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = gaussian(&mut rng, n, n);
        let k = &f * f.transpose();
        let g = gaussian(&mut rng, n, n);
        let k2 = &g * g.transpose();
        prop_assert!(double_center(&DMatrix::from_element(n, n, 1.0)).amax() < 1e-14);
        let shifted = k.add_scalar(c);
        let base = hsic(&k, &k2).unwrap();
        prop_assert!((hsic(&shifted, &k2).unwrap() - base).abs() <= 1e-9 * base.abs().max(1.0));
        prop_assert_eq!(hsic(&k, &k2).unwrap(), hsic(&k2, &k).unwrap());
        prop_assert!(hsic(&k, &k).unwrap() >= 0.0);
    }
}
