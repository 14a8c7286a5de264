mod common;

use common::enumerate_nnls;
use hrom_core::demo;
use hrom_core::fe::{build_integration_points, element_volume, subdomain_gram_matrices, DofMap};
use hrom_core::hfm::{run_transient, HfmConfig, Model};
use hrom_core::hyperreduction::*;
use hrom_core::mesh::{bar_mesh, BarSpec, ElementOrder};
use hrom_core::pod::snapshot_pod;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn nnls_matches_support_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..300 {
        let cols = 1 + trial % 3;
        let a = random_matrix(&mut rng, 6, cols);
        let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let x = nnls(&a, &b).unwrap();
        let oracle = enumerate_nnls(&a, &b);
        for i in 0..cols {
            assert_eq!(x[i] > 0.0, oracle[i] > 0.0, "trial {trial}: active sets differ");
            assert!((x[i] - oracle[i]).abs() <= 1e-10, "trial {trial}: {x} vs {oracle}");
        }
    }
}

#[test]
fn nnls_kkt_on_larger_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let a = random_matrix(&mut rng, 30, 12);
        let b = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let x = nnls(&a, &b).unwrap();
        let grad = a.transpose() * (&a * &x - &b);
        let scale = (a.transpose() * &a).norm();
        for i in 0..12 {
            assert!(x[i] >= 0.0);
            if x[i] > 0.0 {
                assert!(grad[i].abs() <= 1e-10 * scale);
            } else {
                assert!(grad[i] >= -1e-10 * scale);
            }
        }
    }
}

#[test]
fn nnls_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_matrix(&mut rng, 8, 3);
    let x0 = DVector::from_vec(vec![1.0, 2.0, 0.5]);
    let x = nnls(&a, &(&a * &x0)).unwrap();
    assert!((x - x0).amax() <= 1e-12);

    let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
    let x = nnls(&a, &DVector::from_vec(vec![-1.0, 0.0, -1.0])).unwrap();
    assert_eq!(x[0], 0.0);
    assert!(nnls(&DMatrix::zeros(3, 0), &DVector::zeros(3)).is_err());
}

fn system_from(a: &DMatrix<f64>, b: &[f64]) -> QuadratureSystem {
    QuadratureSystem {
        subdomain: 1,
        points: (0..a.ncols()).collect(),
        n_modes: 1,
        n_snapshots: b.len(),
        columns: (0..a.ncols()).map(|c| a.column(c).iter().copied().collect()).collect(),
        b: b.to_vec(),
    }
}

#[test]
fn nnomp_single_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_matrix(&mut rng, 12, 6);
    let b: Vec<f64> = a.column(4).iter().map(|v| 3.0 * v).collect();
    let q = nnomp(&system_from(&a, &b), 1e-5).unwrap();
    assert_eq!(q.points, vec![4]);
    assert!((q.weights[0] - 3.0).abs() <= 1e-12);
    assert!(q.fits[0].residual <= 1e-12);
    assert_eq!(q.fits[0].iterations, 1);
}

#[test]
fn nnomp_zero_rhs_is_empty() {
    let a = DMatrix::from_element(4, 3, 1.0);
    let q = nnomp(&system_from(&a, &[0.0; 4]), 1e-5).unwrap();
    assert!(q.is_empty());
    assert_eq!(q.fits[0].iterations, 0);
}

#[test]
fn nnomp_recovers_sparse_nonnegative_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let a = random_matrix(&mut rng, 20, 10);
        let b: Vec<f64> = (5.0 * a.column(2) + 2.0 * a.column(7)).iter().copied().collect();
        let sys = system_from(&a, &b);
        let q = nnomp(&sys, 1e-5).unwrap();
        let bn = sys.b_norm();
        assert!(q.fits[0].residual <= 1e-5 * bn);

        // exhaustive best support of size <= 2
        let bv = DVector::from_column_slice(&b);
        let mut best = (f64::INFINITY, vec![]);
        for i in 0..10 {
            for j in i..10 {
                let z = if i == j { vec![i] } else { vec![i, j] };
                let w = nnls(&a.select_columns(&z), &bv).unwrap();
                let r = (a.select_columns(&z) * &w - &bv).norm();
                if r < best.0 {
                    best = (r, z);
                }
            }
        }
        assert_eq!(best.1, vec![2, 7]);
        assert!(q.len() <= 2 || q.fits[0].residual <= best.0 + 1e-5 * bn);
        if q.points == vec![2, 7] || q.points == vec![7, 2] {
            let w2 = q.weights[q.points.iter().position(|&p| p == 2).unwrap()];
            assert!((w2 - 5.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn random_subset_full_set_equals_nnls() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_matrix(&mut rng, 15, 8);
    let b: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sys = system_from(&a, &b);
    let q = random_subset_quadrature(&sys, 8, 1, 1, 1e-5).unwrap();
    let w = nnls(&a, &DVector::from_column_slice(&b)).unwrap();
    let r = (&a * w - DVector::from_column_slice(&b)).norm();
    assert!(q.fits[0].residual <= r + 1e-12);
    assert!(q.weights.iter().all(|&w| w > 0.0));

    let q1 = random_subset_quadrature(&sys, 4, 5, 99, 1e-5).unwrap();
    let q2 = random_subset_quadrature(&sys, 4, 5, 99, 1e-5).unwrap();
    assert_eq!(q1, q2);
    assert!(random_subset_quadrature(&sys, 9, 1, 1, 1e-5).is_err());
}

#[test]
fn merge_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_matrix(&mut rng, 10, 5);
    let b: Vec<f64> = (2.0 * a.column(1)).iter().copied().collect();
    let q = nnomp(&system_from(&a, &b), 1e-5).unwrap();
    assert_eq!(merge_subdomain_quadratures(std::slice::from_ref(&q)).unwrap(), q);
    assert!(merge_subdomain_quadratures(&[q.clone(), q]).is_err());
}

#[test]
fn uniform_field_single_row() {
    let mut mesh = bar_mesh(&BarSpec {
        length: 40.0,
        width: 10.0,
        height: 10.0,
        nx: 4,
        ny: 1,
        nz: 1,
        order: ElementOrder::Quadratic,
    });
    hrom_core::ingestion::partition_mesh(&mut mesh, 2).unwrap();
    let ips = build_integration_points(&mesh).unwrap();
    let dofs = DofMap::new(&mesh);
    // u_x = 0.01 x: uniform strain eps_11 = 0.01
    let mut u = vec![0.0; dofs.n_dofs()];
    for (i, p) in mesh.nodes.iter().enumerate() {
        if let Some(d) = dofs.node(i) {
            u[d] = 0.01 * p[0];
        }
    }
    let strains = vec![hrom_core::fe::strain_at_points(&mesh, &ips, &dofs, &u).unwrap()];
    let sigma = [120.0, 30.0, 30.0, 5.0, 0.0, 0.0];
    let stresses = vec![vec![sigma; ips.len()]];
    for l in 1..=2 {
        let sys = build_quadrature_system(&ips, &strains, &stresses, l).unwrap();
        assert_eq!(sys.rows(), 1);
        let volume: f64 = mesh.elements_of_subdomain(l).iter().map(|&e| element_volume(&mesh, e).unwrap()).sum();
        assert!((volume - 2000.0).abs() <= 1e-9);
        let expected = 120.0 * 0.01 * 2000.0;
        assert!((sys.b[0] - expected).abs() <= 1e-10 * expected, "{} vs {expected}", sys.b[0]);
    }
    let zero = build_quadrature_system(&ips, &strains, &[vec![[0.0; 6]; ips.len()]], 1).unwrap();
    assert!(zero.b.iter().all(|&v| v == 0.0));
    assert!(zero.columns.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn bar_reduced_quadrature() {
    let model = Model::new(demo::bar(8)).unwrap();
    let res = run_transient(&model, &demo::material(), &demo::schedule(), 1, &HfmConfig::default()).unwrap();
    let grams = subdomain_gram_matrices(&model.mesh, &model.dofs).unwrap();
    let basis = snapshot_pod(&res.displacements, &grams, 1e-7).unwrap();
    let strains = mode_strains(&model.mesh, &model.ips, &model.dofs, &basis).unwrap();

    let start = std::time::Instant::now();
    let systems = build_all_systems(&model.ips, &strains, &res.stresses, 8).unwrap();
    for s in &systems {
        assert_eq!(s.rows(), basis.n() * res.len());
        let w: Vec<f64> = s.points.iter().map(|&k| model.ips.weight[k]).collect();
        let all: Vec<usize> = (0..s.cols()).collect();
        let r: f64 = s.apply(&all, &w).iter().zip(&s.b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        assert!(r <= 1e-12 * s.b_norm());
    }
    let quad = hyperreduce(&systems, DEFAULT_EPS_OP).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    for f in &quad.fits {
        assert!(f.residual <= DEFAULT_EPS_OP * f.b_norm, "subdomain {}: {:e}", f.subdomain, f.residual / f.b_norm);
    }
    assert!(quad.weights.iter().all(|&w| w > 0.0));
    let ratio = quad.len() as f64 / model.n_points() as f64;
    println!("d = {}, N_G = {}, d/N_G = {ratio:.4}, {elapsed:.2} s", quad.len(), model.n_points());
    assert!(ratio <= 0.05);
    assert!(elapsed < 60.0);

    let (global, bn) = global_residual(&systems, &quad);
    let sum_b: f64 = systems.iter().map(QuadratureSystem::b_norm).sum();
    let sum_r: f64 = quad.fits.iter().map(|f| f.residual).sum();
    assert!(global <= sum_r * (1.0 + 1e-12));
    assert!(global <= DEFAULT_EPS_OP * sum_b);
    println!("global relative residual {:e} (bound {:e})", global / bn, DEFAULT_EPS_OP * sum_b / bn);

    // random subsets of the same size, for comparison only
    for s in &systems[..2] {
        let own = quad.points.iter().filter(|p| s.points.binary_search(p).is_ok()).count();
        let r = random_subset_quadrature(s, own.max(1), 20, 7, DEFAULT_EPS_OP).unwrap();
        let fit = quad.fits.iter().find(|f| f.subdomain == s.subdomain).unwrap();
        println!(
            "subdomain {}: d = {own}, nnomp {:e}, random subsets {:e}",
            s.subdomain,
            fit.residual / fit.b_norm,
            r.fits[0].residual / r.fits[0].b_norm
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quad.hrquad");
    quad.write(&path).unwrap();
    assert_eq!(ReducedQuadrature::read(&path).unwrap(), quad);
}
