mod common;

use common::{dense_pod_oracle, mode_distance};
use hrom_core::demo;
use hrom_core::hfm::{run_transient, HfmConfig, Model};
use hrom_core::hyperreduction::ReducedQuadrature;
use hrom_core::material::{ElasParams, Material};
use hrom_core::reconstruction::*;
use hrom_core::sparse::CsrMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn empty_quadrature() -> ReducedQuadrature {
    ReducedQuadrature { points: vec![], weights: vec![], subdomain: vec![], fits: vec![], eps_op: 1e-5 }
}

fn diagonal(w: &[f64]) -> CsrMatrix {
    let mut m = CsrMatrix::from_rows(w.len(), (0..w.len()).map(|i| vec![i]).collect());
    for (i, &v) in w.iter().enumerate() {
        m.add(i, i, v);
    }
    m
}

fn weighted_norm(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b * b).sum::<f64>().sqrt()
}

#[test]
fn constant_in_time_field_gives_one_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.5..2.0)).collect();
    let f: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
    let modes = dual_pod(&vec![f.clone(); 6], &w, 1e-7).unwrap();
    assert_eq!(modes.len(), 1);
    assert!((weighted_norm(&w, &modes[0]) - 1.0).abs() <= 1e-12);
    let scale = weighted_norm(&w, &f);
    for (m, v) in modes[0].iter().zip(&f) {
        assert!((m - v / scale).abs() <= 1e-12);
    }
}

#[test]
fn elastic_law_has_no_plasticity_modes() {
    let model = Model::new(demo::bar(2)).unwrap();
    let law = Material::Elas(ElasParams::isotropic(120_000.0, 80_000.0, 0.0));
    let res = run_transient(&model, &law, &demo::schedule(), 1, &HfmConfig::default()).unwrap();
    let snaps = field_snapshots(DualField::P, &res.stresses, &res.states);
    let g = build_gappy_field(DualField::P, &model.ips, 2, &snaps, &empty_quadrature(), 1e-7).unwrap();
    assert!(g.operators.iter().all(|o| o.n_modes() == 0 && o.mask.is_empty()));
    let p = g.reconstruct(model.n_points(), |_| 1.0).unwrap();
    assert!(p.iter().all(|&v| v == 0.0));
}

#[test]
fn qdeim_trivial_cases() {
    let unit = |i: usize| {
        let mut v = vec![0.0; 10];
        v[i] = 1.0;
        v
    };
    let mut idx = qdeim_indices(&[unit(3), unit(7)]).unwrap();
    idx.sort_unstable();
    assert_eq!(idx, vec![3, 7]);
    let m = vec![0.1, -0.9, 0.3, 0.9, 0.2];
    assert_eq!(qdeim_indices(&[m]).unwrap(), vec![1]);
    assert!(qdeim_indices(&[unit(2), unit(2)]).is_err());
}

fn condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    sv.max() / sv.min()
}

#[test]
fn qdeim_beats_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let raw = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();
        let modes: Vec<Vec<f64>> = (0..4).map(|i| q.column(i).iter().copied().collect()).collect();
        let idx = qdeim_indices(&modes).unwrap();
        let sub = |idx: &[usize]| DMatrix::from_fn(4, 4, |k, i| modes[i][idx[k]]);
        let c = condition(&sub(&idx));
        let mut draws: Vec<f64> = (0..1000)
            .map(|_| {
                let r = rand::seq::index::sample(&mut rng, 20, 4).into_vec();
                condition(&sub(&r))
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        assert!(c <= draws[100], "qdeim {c} vs decile {}", draws[100]);
    }
}

fn random_operator(rng: &mut ChaCha8Rng, n: usize, quad: &ReducedQuadrature) -> GappyOperator {
    let len = 40;
    let raw = DMatrix::from_fn(len, n, |_, _| rng.random_range(-1.0..1.0));
    let q = raw.qr().q();
    let modes: Vec<Vec<f64>> = (0..n).map(|i| q.column(i).iter().copied().collect()).collect();
    build_gappy_operator(DualField::P, 1, (100..100 + len).collect(), modes, quad).unwrap()
}

#[test]
fn gappy_operator_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let op = random_operator(&mut rng, 4, &empty_quadrature());
    assert_eq!(op.mask.len(), 4);
    assert!(op.gram.clone().cholesky().is_some());

    let mut quad = empty_quadrature();
    quad.points = op.mask[..2].to_vec();
    quad.weights = vec![1.0, 1.0];
    quad.subdomain = vec![1, 1];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let op2 = random_operator(&mut rng, 4, &quad);
    assert_eq!(op2.mask.len(), 4);

    quad.points = vec![130, 131, 139];
    quad.weights = vec![1.0; 3];
    quad.subdomain = vec![1; 3];
    let op3 = random_operator(&mut rng, 4, &quad);
    assert!(op3.mask.len() <= 7);
    let mut m = op3.mask.clone();
    m.sort_unstable();
    m.dedup();
    assert_eq!(m.len(), op3.mask.len());
}

#[test]
fn gappy_in_span_and_out_of_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut quad = empty_quadrature();
    quad.points = vec![101, 107, 120, 133];
    quad.weights = vec![1.0; 4];
    quad.subdomain = vec![1; 4];
    let op = random_operator(&mut rng, 5, &quad);
    let col = |p: usize| p - 100;

    let coeffs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let field: Vec<f64> = (0..40).map(|c| (0..5).map(|i| coeffs[i] * op.modes[i][c]).sum()).collect();
    let vals: Vec<f64> = op.mask.iter().map(|&p| field[col(p)]).collect();
    let rec = gappy_reconstruct(&op, &vals).unwrap();
    let err: f64 = rec.iter().zip(&field).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let nrm: f64 = field.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err <= 1e-10 * nrm);

    // out of span: the least-squares fit on the mask rows
    let vals: Vec<f64> = (0..op.mask.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rec = gappy_reconstruct(&op, &vals).unwrap();
    let b = DMatrix::from_fn(op.mask.len(), 5, |k, i| op.modes[i][col(op.mask[k])]);
    let w = b.clone().svd(true, true).solve(&DVector::from_column_slice(&vals), 1e-14).unwrap();
    for c in 0..40 {
        let expected: f64 = (0..5).map(|i| w[i] * op.modes[i][c]).sum();
        assert!((rec[c] - expected).abs() <= 1e-10);
    }
}

#[test]
fn single_constant_mode() {
    let modes = vec![vec![0.5; 8]];
    let op = build_gappy_operator(DualField::P, 1, (0..8).collect(), modes, &empty_quadrature()).unwrap();
    assert_eq!(op.mask.len(), 1);
    let rec = gappy_reconstruct(&op, &[3.0]).unwrap();
    assert!(rec.iter().all(|&v| (v - 3.0).abs() <= 1e-14));
}

#[test]
fn bar_duals_pod_reconstruction_and_io() {
    let model = Model::new(demo::bar(8)).unwrap();
    let res = run_transient(&model, &demo::material(), &demo::schedule(), 1, &HfmConfig::default()).unwrap();
    let snaps = field_snapshots(DualField::P, &res.stresses, &res.states);

    // dual modes of one subdomain against the dense weighted oracle
    let points = model.ips.points_of_subdomain(3);
    let w: Vec<f64> = points.iter().map(|&k| model.ips.weight[k]).collect();
    let local: Vec<Vec<f64>> = snaps.iter().map(|s| points.iter().map(|&k| s[k]).collect()).collect();
    let modes = dual_pod(&local, &w, 1e-7).unwrap();
    let (oracle, _) = dense_pod_oracle(&diagonal(&w), &local);
    for (i, m) in modes.iter().enumerate() {
        let d = mode_distance(&diagonal(&w), std::slice::from_ref(m), &oracle[i..=i]);
        assert!(d <= 1e-8, "mode {i}: {d:e}");
    }

    let field = build_gappy_field(DualField::P, &model.ips, 8, &snaps, &empty_quadrature(), 1e-7).unwrap();
    for op in &field.operators {
        assert!(op.gram.clone().cholesky().is_some());
        let c = op.condition();
        assert!(c.is_finite());
        println!("subdomain {}: {} modes, M condition {c:e}", op.subdomain, op.n_modes());
    }
    // in-span: every training snapshot is reconstructed from its mask values
    for s in [5, 12, 19] {
        let rec = field.reconstruct(model.n_points(), |p| snaps[s][p]).unwrap();
        for op in &field.operators {
            let num: f64 = op.points.iter().map(|&k| model.ips.weight[k] * (rec[k] - snaps[s][k]).powi(2)).sum();
            let den: f64 = op.points.iter().map(|&k| model.ips.weight[k] * snaps[s][k].powi(2)).sum();
            if den > 0.0 {
                assert!((num / den).sqrt() <= 1e-6, "snapshot {s} subdomain {}", op.subdomain);
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = field.write(dir.path()).unwrap();
    assert_eq!(GappyField::read(&path).unwrap(), field);
}

#[test]
fn field_names_round_trip() {
    for f in [DualField::P, DualField::Stress(2), DualField::PlasticStrain(5)] {
        assert_eq!(DualField::parse(&f.name()).unwrap(), f);
    }
    assert!(DualField::parse("q").is_err());
}
