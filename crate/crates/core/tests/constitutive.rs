mod common;

use common::*;
use hrom_core::material::{ElasParams, EvpParams, Law, Material, MaterialState, Table};
use proptest::prelude::*;

#[test]
fn backward_euler_converges_to_explicit_oracle() {
    let p = evp();
    let mut errors = Vec::new();
    for n in [10usize, 40, 160, 640] {
        let strains = uniaxial_ramp(&p, 20.0, 6e-3, n);
        let be = law_history(&p, &strains, 20.0, 10.0 / n as f64);
        let ex = oracle_history(&p, &strains, 20.0, 10.0 / n as f64, 100_000 / n);
        let (a, b) = (be[n - 1], ex[n - 1]);
        errors.push(((a.0 - b.0).abs() / b.0.abs(), (a.1 - b.1).abs() / b.1));
    }
    assert!(errors.windows(2).all(|w| w[1].1 < w[0].1 / 3.0), "{errors:?}");
    let last = errors.last().unwrap();
    assert!(last.0 < 1e-5 && last.1 < 1e-3, "{errors:?}");
}

#[test]
fn rate_consistency_order_is_first() {
    let p = evp();
    let final_p = |n: usize| {
        let strains = uniaxial_ramp(&p, 400.0, 6e-3, n);
        law_history(&p, &strains, 400.0, 10.0 / n as f64)[n - 1].1
    };
    let (a, b, c) = (final_p(40), final_p(80), final_p(160));
    let order = ((a - b) / (b - c)).log2();
    assert!(order >= 0.9, "observed order {order}");
}

#[test]
fn consistent_tangent_matches_finite_differences() {
    let p = evp();
    for temp in [20.0, 500.0] {
        let path = multiaxial_path(&p, temp, 10);
        let mut st = MaterialState::default();
        for (s, eps) in path.iter().enumerate() {
            let err = tangent_fd_error(&p, &st, eps, temp, 1.0);
            assert!(err < 1e-4, "step {s}, T {temp}: {err:e}");
            st = p.evaluate(&st, eps, temp, 1.0).unwrap().state;
        }
        assert!(st.p > 0.0);
    }
}

#[test]
fn zero_yield_stress_and_zero_stress_gives_no_flow() {
    let mut p = evp();
    p.r0 = Table::constant(0.0);
    let th = p.elas.thermal_strain(20.0);
    let r = p.evaluate(&MaterialState::default(), &th, 20.0, 1.0).unwrap();
    assert_eq!(r.state.p, 0.0);
    assert!(r.stress.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn elastic_law_is_history_free() {
    let m = Material::Elas(ElasParams::isotropic(100_000.0, 70_000.0, 1e-5));
    assert!(!m.has_internal_variables());
    let st = MaterialState {
        plastic_strain: [1.0; 6],
        p: 2.0,
    };
    let r = m.evaluate(&st, &[1e-3, 0.0, 0.0, 0.0, 0.0, 0.0], 120.0, 1.0).unwrap();
    let th = 1e-5 * 100.0;
    assert!((r.stress[0] - (240_000.0 * (1e-3 - th) - 100_000.0 * 2.0 * th)).abs() < 1e-8);
}

fn random_history() -> impl Strategy<Value = Vec<[f64; 6]>> {
    prop::collection::vec(prop::array::uniform6(-8e-3..8e-3f64), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn cumulated_plasticity_never_decreases(history in random_history(), temp in 20.0..900.0f64, dt in 0.1..20.0f64) {
        let p: EvpParams = evp();
        let mut st = MaterialState::default();
        for eps in &history {
            let r = p.evaluate(&st, eps, temp, dt).unwrap();
            prop_assert!(r.state.p >= st.p);
            st = r.state;
        }
    }
}
