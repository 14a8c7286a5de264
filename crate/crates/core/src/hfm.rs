//! High-fidelity quasi-static solver: global Newton iterations over the free
//! dofs with a pluggable constitutive law.

use std::time::Instant;

use log::debug;

use crate::error::{Error, Result};
use crate::fe::{
    assemble_external_forces, bt_stress, build_integration_points, element_dofs, sparsity_pattern,
    strain_at_point, DofMap, IntegrationPointSet, Voigt,
};
use crate::loading::{LoadingSchedule, StepRef};
use crate::material::{Law, LawResponse, MaterialState};
use crate::mesh::Mesh;
use crate::par;
use crate::sparse::{CsrMatrix, ProfileSymbolic};

/// Mesh plus everything derived from it that the solvers share.
pub struct Model {
    pub mesh: Mesh,
    pub ips: IntegrationPointSet,
    pub dofs: DofMap,
    pattern: CsrMatrix,
    symbolic: ProfileSymbolic,
}

impl Model {
    pub fn new(mesh: Mesh) -> Result<Model> {
        mesh.validate()?;
        let ips = build_integration_points(&mesh)?;
        let dofs = DofMap::new(&mesh);
        if dofs.n_dofs() == 0 {
            return Err(Error::Validation("every node is clamped; nothing to solve".into()));
        }
        let all: Vec<usize> = (0..mesh.n_elements()).collect();
        let pattern = sparsity_pattern(&mesh, &dofs, &all);
        let symbolic = ProfileSymbolic::new(&pattern);
        Ok(Model {
            mesh,
            ips,
            dofs,
            pattern,
            symbolic,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs()
    }

    pub fn n_points(&self) -> usize {
        self.ips.len()
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    /// External forces and point temperatures of one schedule step.
    pub fn step_load(&self, schedule: &LoadingSchedule, g: usize) -> Result<StepLoad> {
        let r = schedule.step_ref(g);
        let step = &schedule.steps[r.step];
        Ok(StepLoad {
            f_ext: assemble_external_forces(&self.mesh, &self.ips, &self.dofs, &step.body, &step.tractions)?,
            temperatures: step.temperature.at_points(&self.mesh, &self.ips)?,
            dt: r.dt,
        })
    }
}

/// Loading data of one step, resolved on the discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLoad {
    pub f_ext: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfmConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for HfmConfig {
    fn default() -> Self {
        HfmConfig {
            tolerance: 1e-6,
            max_iterations: 25,
        }
    }
}

/// Residual ratios of one Newton solve, one entry per residual evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NewtonLog {
    pub iterations: usize,
    pub ratios: Vec<f64>,
}

/// Below this absolute residual a step with zero external force is converged.
pub const ZERO_LOAD_RESIDUAL: f64 = 1e-14;

/// Evaluate the law at every integration point for displacement `u`.
pub fn evaluate_points<L: Law + ?Sized>(
    model: &Model,
    law: &L,
    states: &[MaterialState],
    u: &[f64],
    load: &StepLoad,
) -> Result<Vec<LawResponse>> {
    par::try_map_range(model.ips.len(), |k| {
        let eps = strain_at_point(&model.mesh, &model.ips, &model.dofs, u, k);
        law.evaluate(&states[k], &eps, load.temperatures[k], load.dt)
            .map_err(|msg| Error::LawFailure { point: k, msg })
    })
}

/// Internal force vector from point stresses.
pub fn internal_forces(model: &Model, stresses: &[Voigt]) -> Vec<f64> {
    let locals = par::map_range(model.mesh.n_elements(), |e| element_forces(model, e, stresses));
    let mut f = vec![0.0; model.n_dofs()];
    for (e, fe) in locals.iter().enumerate() {
        for (d, v) in element_dofs(&model.mesh, &model.dofs, e).iter().zip(fe) {
            if let Some(d) = d {
                f[*d] += v;
            }
        }
    }
    f
}

fn element_forces(model: &Model, e: usize, stresses: &[Voigt]) -> Vec<f64> {
    let npe = model.mesh.order.nodes_per_element();
    let mut fe = vec![0.0; 3 * npe];
    for k in model.ips.points_of_element(e) {
        let w = model.ips.weight[k];
        for (a, g) in model.ips.grads(k).iter().enumerate() {
            let f = bt_stress(g, &stresses[k]);
            for c in 0..3 {
                fe[3 * a + c] += w * f[c];
            }
        }
    }
    fe
}

/// Tangent matrix and residual `F_int(u) - F_ext` from point responses.
pub fn assemble_from_responses(model: &Model, responses: &[LawResponse], f_ext: &[f64]) -> (CsrMatrix, Vec<f64>) {
    let npe = model.mesh.order.nodes_per_element();
    let locals = par::map_range(model.mesh.n_elements(), |e| {
        let n = 3 * npe;
        let mut ke = vec![0.0; n * n];
        let mut fe = vec![0.0; n];
        for k in model.ips.points_of_element(e) {
            let w = model.ips.weight[k];
            let r = &responses[k];
            let grads = model.ips.grads(k);
            // D B_b for every node b, then B_a^T (D B_b)
            let db: Vec<[[f64; 3]; 6]> = grads
                .iter()
                .map(|g| {
                    let bb = crate::fe::b_block(g);
                    let m = r.tangent * bb;
                    std::array::from_fn(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
                })
                .collect();
            for (a, ga) in grads.iter().enumerate() {
                let f = bt_stress(ga, &r.stress);
                for c in 0..3 {
                    fe[3 * a + c] += w * f[c];
                }
                for (b, dbb) in db.iter().enumerate() {
                    for c in 0..3 {
                        let col: [f64; 6] = std::array::from_fn(|i| dbb[i][c]);
                        let v = bt_stress(ga, &col);
                        for r_ in 0..3 {
                            ke[(3 * a + r_) * n + 3 * b + c] += w * v[r_];
                        }
                    }
                }
            }
        }
        (ke, fe)
    });
    let mut k = model.pattern.zeros_like();
    let mut res: Vec<f64> = f_ext.iter().map(|v| -v).collect();
    for (e, (ke, fe)) in locals.iter().enumerate() {
        let dofs = element_dofs(&model.mesh, &model.dofs, e);
        let n = dofs.len();
        for (i, di) in dofs.iter().enumerate() {
            let Some(di) = *di else { continue };
            res[di] += fe[i];
            for (j, dj) in dofs.iter().enumerate() {
                if let Some(dj) = *dj {
                    k.add(di, dj, ke[i * n + j]);
                }
            }
        }
    }
    (k, res)
}

/// Tangent and residual at `u`, with the previous converged `states` as the
/// initial condition of the law update.
pub fn assemble_system<L: Law + ?Sized>(
    model: &Model,
    law: &L,
    states: &[MaterialState],
    u: &[f64],
    load: &StepLoad,
) -> Result<(CsrMatrix, Vec<f64>)> {
    let responses = evaluate_points(model, law, states, u, load)?;
    Ok(assemble_from_responses(model, &responses, &load.f_ext))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Converged state of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub u: Vec<f64>,
    pub states: Vec<MaterialState>,
    pub stresses: Vec<Voigt>,
    pub log: NewtonLog,
}

pub fn solve_time_step<L: Law + ?Sized>(
    model: &Model,
    law: &L,
    states: &[MaterialState],
    load: &StepLoad,
    u_init: &[f64],
    config: &HfmConfig,
) -> Result<StepSolution> {
    if u_init.len() != model.n_dofs() {
        return Err(Error::dim("initial displacement", model.n_dofs(), u_init.len()));
    }
    if states.len() != model.n_points() {
        return Err(Error::dim("material states", model.n_points(), states.len()));
    }
    let mut u = u_init.to_vec();
    let f_norm = norm(&load.f_ext);
    let mut reference = if f_norm > 0.0 { Some(f_norm) } else { None };
    let mut log = NewtonLog::default();
    for it in 0..=config.max_iterations {
        let responses = evaluate_points(model, law, states, &u, load)?;
        let (k, r) = assemble_from_responses(model, &responses, &load.f_ext);
        let r_norm = norm(&r);
        let refn = match reference {
            Some(v) => v,
            None if r_norm <= ZERO_LOAD_RESIDUAL => {
                log.ratios.push(0.0);
                log.iterations = it;
                return Ok(finish(u, responses, log));
            }
            None => {
                reference = Some(r_norm);
                r_norm
            }
        };
        let ratio = r_norm / refn;
        log.ratios.push(ratio);
        debug!("newton iteration {it}: ratio {ratio:e}");
        if !ratio.is_finite() {
            return Err(Error::numerical("HFM Newton", format!("non-finite residual at iteration {it}")));
        }
        if ratio <= config.tolerance {
            log.iterations = it;
            return Ok(finish(u, responses, log));
        }
        if it == config.max_iterations {
            break;
        }
        let lu = model.symbolic.factor(&k)?;
        let du = lu.solve(&r);
        for (ui, d) in u.iter_mut().zip(&du) {
            *ui -= d;
        }
    }
    Err(Error::Convergence {
        stage: "HFM Newton".into(),
        msg: format!(
            "{} iterations exceeded, last residual ratio {:e}",
            config.max_iterations,
            log.ratios.last().copied().unwrap_or(f64::NAN)
        ),
    })
}

fn finish(u: Vec<f64>, responses: Vec<LawResponse>, log: NewtonLog) -> StepSolution {
    let (stresses, states) = responses.into_iter().map(|r| (r.stress, r.state)).unzip();
    StepSolution {
        u,
        states,
        stresses,
        log,
    }
}

/// Stored history of a transient run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransientResult {
    pub steps: Vec<StepRef>,
    pub displacements: Vec<Vec<f64>>,
    pub states: Vec<Vec<MaterialState>>,
    pub stresses: Vec<Vec<Voigt>>,
    pub logs: Vec<NewtonLog>,
    pub wall_time: f64,
}

impl TransientResult {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time).collect()
    }
}

/// Solve `cycles` repetitions of the schedule from the virgin state.
pub fn run_transient<L: Law + ?Sized>(
    model: &Model,
    law: &L,
    schedule: &LoadingSchedule,
    cycles: usize,
    config: &HfmConfig,
) -> Result<TransientResult> {
    schedule.validate()?;
    let start = Instant::now();
    let m = schedule.steps_per_cycle();
    let mut loads: Vec<StepLoad> = Vec::with_capacity(m);
    for s in 0..m {
        loads.push(model.step_load(schedule, s)?);
    }
    let mut result = TransientResult::default();
    let mut u = vec![0.0; model.n_dofs()];
    let mut states = vec![MaterialState::default(); model.n_points()];
    for g in 0..schedule.total_steps(cycles) {
        let r = schedule.step_ref(g);
        let mut load = loads[r.step].clone();
        load.dt = r.dt;
        let sol = solve_time_step(model, law, &states, &load, &u, config).map_err(|e| match e {
            Error::Convergence { stage, msg } => Error::Convergence {
                stage,
                msg: format!("cycle {} step {}: {msg}", r.cycle + 1, r.step + 1),
            },
            Error::LawFailure { point, msg } => Error::LawFailure {
                point,
                msg: format!("cycle {} step {}: {msg}", r.cycle + 1, r.step + 1),
            },
            other => other,
        })?;
        debug!(
            "HFM cycle {} step {}: {} iterations, ratio {:e}",
            r.cycle + 1,
            r.step + 1,
            sol.log.iterations,
            sol.log.ratios.last().copied().unwrap_or(0.0)
        );
        u.clone_from(&sol.u);
        states.clone_from(&sol.states);
        result.steps.push(r);
        result.displacements.push(sol.u);
        result.states.push(sol.states);
        result.stresses.push(sol.stresses);
        result.logs.push(sol.log);
    }
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}
