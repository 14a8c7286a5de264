//! Offline/online orchestration of the complete reduced procedure.

use std::collections::HashMap;
use std::time::Instant;

use log::info;

use crate::error::{Error, Result};
use crate::fe::subdomain_gram_matrices;
use crate::hfm::Model;
use crate::hyperreduction::{build_all_systems, hyperreduce, mode_strains, QuadratureSystem, ReducedQuadrature};
use crate::ingestion::SnapshotSet;
use crate::loading::LoadingSchedule;
use crate::material::Law;
use crate::pod::{snapshot_pod, ReducedBasis};
use crate::reconstruction::{build_gappy_field, field_snapshots, DualField, GappyField};
use crate::rom_online::{precompute_rom_operators, run_rom_cycles, RomConfig, RomHistory, RomOperators};

/// Tolerances of every stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub hfm_newton: f64,
    pub rom_newton: f64,
    pub pod: f64,
    pub operator: f64,
    pub gappy: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hfm_newton: 1e-6,
            rom_newton: 1e-6,
            pod: 1e-7,
            operator: 1e-5,
            gappy: 1e-7,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hfm_newton", self.hfm_newton),
            ("rom_newton", self.rom_newton),
            ("pod", self.pod),
            ("operator", self.operator),
            ("gappy", self.gappy),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!("tolerance {name} = {v} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// `(stage, algorithm, seconds)`.
pub type StageTime = (String, String, f64);

pub fn timed<T>(stages: &mut Vec<StageTime>, stage: &str, alg: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    let t = start.elapsed().as_secs_f64();
    info!("{stage} ({alg}): {t:.3} s");
    stages.push((stage.to_string(), alg.to_string(), t));
    Ok(out)
}

/// Products of the offline stages.
#[derive(Debug, Clone)]
pub struct Offline {
    pub basis: ReducedBasis,
    pub systems: Vec<QuadratureSystem>,
    pub quadrature: ReducedQuadrature,
    pub gappy: Vec<GappyField>,
    pub operators: RomOperators,
    pub stages: Vec<StageTime>,
}

/// POD, operator compression, Gappy operators and the online operators from
/// a snapshot set carrying duals.
pub fn build_offline(
    model: &Model,
    schedule: &LoadingSchedule,
    snapshots: &SnapshotSet,
    tol: &Tolerances,
    fields: &[DualField],
) -> Result<Offline> {
    tol.validate()?;
    snapshots.validate()?;
    let duals = snapshots
        .duals
        .as_ref()
        .ok_or_else(|| Error::Validation("snapshot duals are required; recompute them first".into()))?;
    let mut stages = Vec::new();
    let basis = timed(&mut stages, "data compression", "snapshot POD", || {
        let grams = subdomain_gram_matrices(&model.mesh, &model.dofs)?;
        snapshot_pod(&snapshots.displacements, &grams, tol.pod)
    })?;
    info!("POD: {} modes from {} snapshots", basis.n(), snapshots.len());
    let (systems, quadrature) = timed(&mut stages, "operator compression", "NNOMP", || {
        let strains = mode_strains(&model.mesh, &model.ips, &model.dofs, &basis)?;
        let systems = build_all_systems(&model.ips, &strains, &duals.stresses, model.mesh.n_subdomains)?;
        let quad = hyperreduce(&systems, tol.operator)?;
        Ok((systems, quad))
    })?;
    info!("reduced quadrature: {} of {} points", quadrature.len(), model.n_points());
    let gappy = timed(&mut stages, "reconstruction setup", "dual POD + QDEIM", || {
        fields
            .iter()
            .map(|&f| {
                let snaps = field_snapshots(f, &duals.stresses, &duals.states);
                build_gappy_field(f, &model.ips, model.mesh.n_subdomains, &snaps, &quadrature, tol.gappy)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let extra: Vec<usize> = gappy.iter().flat_map(GappyField::mask).collect();
    let operators = timed(&mut stages, "operator compression", "online operators", || {
        precompute_rom_operators(model, &basis, &quadrature, &extra, schedule)
    })?;
    Ok(Offline {
        basis,
        systems,
        quadrature,
        gappy,
        operators,
        stages,
    })
}

/// Online run of `cycles` cycles.
pub fn run_online<L: Law + ?Sized>(offline: &Offline, law: &L, cycles: usize, tol: &Tolerances) -> Result<RomHistory> {
    let cfg = RomConfig {
        tolerance: tol.rom_newton,
        ..RomConfig::default()
    };
    run_rom_cycles(&offline.operators, law, cycles, &cfg)
}

/// Full-mesh reconstruction of a dual field at history step `g` from the
/// mask values of the online run.
pub fn reconstruct_field(field: &GappyField, ops: &RomOperators, history: &RomHistory, g: usize, n_points: usize) -> Result<Vec<f64>> {
    let index: HashMap<usize, usize> = ops.mask.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let stresses = &history.stresses[g];
    let states = &history.states[g];
    for p in field.mask() {
        if !index.contains_key(&p) {
            return Err(Error::Validation(format!("Gappy mask point {p} is not in the online mask")));
        }
    }
    field.reconstruct(n_points, |p| {
        let k = index[&p];
        field.field.value(&stresses[k], &states[k])
    })
}

/// Displacement of history step `g`.
pub fn reconstruct_displacement(basis: &ReducedBasis, history: &RomHistory, g: usize) -> Vec<f64> {
    basis.expand(&history.coords[g])
}
