mod common;

use common::*;
use hrom_core::fe::{l2_gram_matrix, subdomain_gram_matrices, DofMap, LocalGram};
use hrom_core::hfm::{run_transient, HfmConfig, Model};
use hrom_core::ingestion::partition_mesh;
use hrom_core::mesh::{bar_mesh, BarSpec, ElementOrder};
use hrom_core::pod::{correlation_matrix, restricted_modes, snapshot_pod, ReducedBasis};
use hrom_core::{demo, sparse::CsrMatrix};
use rand::{Rng, SeedableRng};

fn small_bar(n_d: usize) -> hrom_core::mesh::Mesh {
    let mut m = bar_mesh(&BarSpec {
        length: 30.0,
        width: 10.0,
        height: 10.0,
        nx: 3,
        ny: 1,
        nz: 1,
        order: ElementOrder::Quadratic,
    });
    partition_mesh(&mut m, n_d).unwrap();
    m
}

fn random_snapshots(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn grams(m: &hrom_core::mesh::Mesh) -> (CsrMatrix, Vec<LocalGram>) {
    let dofs = DofMap::new(m);
    (l2_gram_matrix(m, &dofs, None).unwrap(), subdomain_gram_matrices(m, &dofs).unwrap())
}

#[test]
fn single_snapshot_is_normalized() {
    let m = small_bar(2);
    let (g, gl) = grams(&m);
    let u = random_snapshots(g.dim(), 1, 1).remove(0);
    let b = snapshot_pod(&[u.clone()], &gl, 1e-7).unwrap();
    assert_eq!(b.n(), 1);
    let norm = g.inner(&u, &u).sqrt();
    let sign = b.modes[0][0].signum() * u[0].signum();
    for (p, v) in b.modes[0].iter().zip(&u) {
        assert!((p - sign * v / norm).abs() < 1e-12);
    }
    let dup = snapshot_pod(&[u.clone(), u], &gl, 1e-7).unwrap();
    assert_eq!(dup.n(), 1);
}

#[test]
fn zero_snapshots_are_rejected() {
    let m = small_bar(1);
    let (g, gl) = grams(&m);
    assert!(snapshot_pod(&[vec![0.0; g.dim()]], &gl, 1e-7).is_err());
}

#[test]
fn random_snapshots_match_dense_oracle() {
    let m = small_bar(3);
    let (g, gl) = grams(&m);
    for (count, seed) in [(5, 11), (12, 12), (20, 13)] {
        let snaps = random_snapshots(g.dim(), count, seed);
        let b = snapshot_pod(&snaps, &gl, 1e-7).unwrap();
        assert_eq!(b.n(), count);
        assert!(orthonormality_defect(&g, &b.modes) <= 1e-8);
        let (oracle, values) = dense_pod_oracle(&g, &snaps);
        assert!(mode_distance(&g, &b.modes, &oracle) <= 1e-8);
        for (a, v) in b.eigenvalues.iter().zip(&values) {
            assert!((a - v).abs() <= 1e-10 * values[0]);
        }
        assert_eq!(b.payload, count * (count + 1) / 2);
    }
}

#[test]
fn projection_error_matches_discarded_energy() {
    let m = small_bar(2);
    let (g, gl) = grams(&m);
    let mut snaps = random_snapshots(g.dim(), 10, 5);
    // a spectrum with a visible tail
    for (i, s) in snaps.iter_mut().enumerate() {
        let f = 0.5f64.powi(i as i32);
        s.iter_mut().for_each(|v| *v *= f);
    }
    let b = snapshot_pod(&snaps, &gl, 0.2).unwrap();
    assert!(b.n() < 10);
    let mut err = 0.0;
    for u in &snaps {
        let a = b.l2_coordinates(&g, u);
        let r: Vec<f64> = u.iter().zip(b.expand(&a)).map(|(x, y)| x - y).collect();
        err += g.inner(&r, &r);
    }
    let tail: f64 = b.spectrum[b.n()..].iter().sum::<f64>() * snaps.len() as f64;
    assert!((err - tail).abs() <= 1e-6 * tail, "{err} vs {tail}");
}

#[test]
fn distribution_invariance_and_restriction() {
    let snaps_for = |n_d: usize| {
        let m = small_bar(n_d);
        let (_, gl) = grams(&m);
        (m, gl)
    };
    let (m1, g1) = snaps_for(1);
    let (m8, g8) = snaps_for(8);
    let snaps = random_snapshots(g1[0].dim(), 8, 3);
    let c1 = correlation_matrix(&snaps, &g1).unwrap();
    let c8 = correlation_matrix(&snaps, &g8).unwrap();
    assert_eq!(c8.local.len(), 8);
    // exact reductions: the partition does not change a single bit
    assert_eq!(c1.total, c8.total);
    let sum: nalgebra::DMatrix<f64> = c8.local.iter().sum();
    assert!((&c1.total - sum).abs().max() <= 1e-13 * c1.total.abs().max());
    let b1 = snapshot_pod(&snaps, &g1, 1e-7).unwrap();
    let b8 = snapshot_pod(&snaps, &g8, 1e-7).unwrap();
    assert_eq!(b1.modes, b8.modes);
    assert_eq!(b1.xi, b8.xi);
    // per-subdomain restriction
    let dofs = DofMap::new(&m8);
    let sub: Vec<usize> = {
        let mut s: Vec<usize> = m8
            .elements_of_subdomain(3)
            .iter()
            .flat_map(|&e| m8.element(e).to_vec())
            .filter_map(|n| dofs.node(n))
            .flat_map(|d| [d, d + 1, d + 2])
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let local = restricted_modes(&b8, &snaps, &sub);
    for (lm, gm) in local.iter().zip(&b8.modes) {
        for (i, &d) in sub.iter().enumerate() {
            assert_eq!(lm[i], gm[d]);
        }
    }
    drop(m1);
}

#[test]
fn subdomain_pieces_sum_to_global_gram() {
    let m = small_bar(3);
    let (g, gl) = grams(&m);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let a: Vec<f64> = (0..g.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..g.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut total = hrom_core::exact::ExactSum::new();
    let mut assembled = 0.0;
    for piece in &gl {
        total.merge(&piece.products(&[a.clone()], &[b.clone()], false)[0]);
        assembled += piece.to_csr().inner(&a, &b);
    }
    let expected = g.inner(&a, &b);
    assert!((total.value() - expected).abs() <= 1e-13 * g.inner(&a, &a).sqrt() * g.inner(&b, &b).sqrt());
    assert!((assembled - expected).abs() <= 1e-13 * expected.abs().max(1.0));
}

#[test]
fn hrbasis_round_trip() {
    let m = small_bar(1);
    let (_, gl) = grams(&m);
    let b = snapshot_pod(&random_snapshots(gl[0].dim(), 4, 9), &gl, 1e-7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = b.write(dir.path()).unwrap();
    assert_eq!(ReducedBasis::read(&path).unwrap(), b);
}

#[test]
fn simulated_snapshots_match_oracle() {
    let model = Model::new(demo::bar(8)).unwrap();
    let res = run_transient(&model, &demo::material(), &demo::schedule(), 1, &HfmConfig::default()).unwrap();
    let (g, gl) = grams(&model.mesh);
    let (oracle, _) = dense_pod_oracle(&g, &res.displacements);
    let b = snapshot_pod(&res.displacements, &gl, 1e-7).unwrap();
    assert!(b.n() >= 5);
    assert!(orthonormality_defect(&g, &b.modes) <= 1e-8);
    for (i, m) in b.modes.iter().enumerate() {
        let d = mode_distance(&g, std::slice::from_ref(m), &oracle[i..=i]);
        assert!(d <= 1e-8, "mode {i}: {d:e}");
    }
}
