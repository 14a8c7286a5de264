//! Online reduced Newton solver on the reduced quadrature, with the
//! material state carried at the mask points only.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fe::{strain_at_point, Voigt};
use crate::hfm::{Model, NewtonLog, ZERO_LOAD_RESIDUAL};
use crate::hyperreduction::ReducedQuadrature;
use crate::linalg::{reduced_solve, SolveKind};
use crate::loading::{cyclic_step_ref, LoadingSchedule, StepRef};
use crate::material::{Law, LawResponse, MaterialState};
use crate::par;
use crate::pod::ReducedBasis;
use crate::textio::Lines;

/// Everything the online loop reads. Sizes depend on the mode count, the
/// mask size and the steps per cycle only.
#[derive(Debug, Clone, PartialEq)]
pub struct RomOperators {
    pub n: usize,
    /// Global point ids; the first `weights.len()` are the quadrature points.
    pub mask: Vec<usize>,
    pub weights: Vec<f64>,
    /// `mode_strains[k * n + i]` is the strain of mode i at mask point k.
    pub mode_strains: Vec<Voigt>,
    /// Reduced external force of every step of the cycle.
    pub forces: Vec<Vec<f64>>,
    /// Temperatures at the mask points for every step of the cycle.
    pub temperatures: Vec<Vec<f64>>,
    pub step_times: Vec<f64>,
    pub period: f64,
}

impl RomOperators {
    pub fn mask_len(&self) -> usize {
        self.mask.len()
    }

    pub fn n_quadrature(&self) -> usize {
        self.weights.len()
    }

    pub fn steps_per_cycle(&self) -> usize {
        self.step_times.len()
    }

    pub fn step_ref(&self, g: usize) -> StepRef {
        cyclic_step_ref(&self.step_times, self.period, g)
    }

    /// Position of a global point id in the mask.
    pub fn mask_index(&self, point: usize) -> Option<usize> {
        self.mask.iter().position(|&p| p == point)
    }

    /// Lengths of every array held, by name.
    pub fn footprint(&self) -> Vec<(&'static str, usize)> {
        let mut out = vec![
            ("mask", self.mask.len()),
            ("weights", self.weights.len()),
            ("mode_strains", self.mode_strains.len()),
            ("forces", self.forces.len()),
            ("temperatures", self.temperatures.len()),
            ("step_times", self.step_times.len()),
        ];
        out.extend(self.forces.iter().map(|f| ("forces[s]", f.len())));
        out.extend(self.temperatures.iter().map(|t| ("temperatures[s]", t.len())));
        out
    }

    /// Strain at mask point `k` for reduced coordinates `a`.
    pub fn strain(&self, k: usize, a: &[f64]) -> Voigt {
        let mut e = [0.0; 6];
        for (i, ai) in a.iter().enumerate() {
            let m = &self.mode_strains[k * self.n + i];
            for c in 0..6 {
                e[c] += ai * m[c];
            }
        }
        e
    }
}

/// Pay every N-dependent cost offline: mode strains at the mask, projected
/// external forces and mask temperatures for each step of the cycle.
pub fn precompute_rom_operators(
    model: &Model,
    basis: &ReducedBasis,
    quadrature: &ReducedQuadrature,
    extra_points: &[usize],
    schedule: &LoadingSchedule,
) -> Result<RomOperators> {
    schedule.validate()?;
    if basis.n_dofs() != model.n_dofs() {
        return Err(Error::dim("basis modes", model.n_dofs(), basis.n_dofs()));
    }
    let mut mask = quadrature.points.clone();
    for &p in extra_points {
        if !mask.contains(&p) {
            mask.push(p);
        }
    }
    if let Some(&p) = mask.iter().find(|&&p| p >= model.n_points()) {
        return Err(Error::Validation(format!("mask point {p} out of range (N_G = {})", model.n_points())));
    }
    let n = basis.n();
    let per_point = par::map_range(mask.len(), |k| {
        basis
            .modes
            .iter()
            .map(|m| strain_at_point(&model.mesh, &model.ips, &model.dofs, m, mask[k]))
            .collect::<Vec<_>>()
    });
    let mode_strains = per_point.into_iter().flatten().collect();
    let mut forces = Vec::new();
    let mut temperatures = Vec::new();
    for s in 0..schedule.steps_per_cycle() {
        let load = model.step_load(schedule, s)?;
        forces.push(basis.project(&load.f_ext));
        temperatures.push(schedule.steps[s].temperature.at_subset(&model.mesh, &model.ips, &mask)?);
    }
    Ok(RomOperators {
        n,
        mask,
        weights: quadrature.weights.clone(),
        mode_strains,
        forces,
        temperatures,
        step_times: schedule.step_times(),
        period: schedule.period,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative asymmetry below which the reduced tangent goes to Cholesky.
    pub symmetry_tolerance: f64,
}

impl Default for RomConfig {
    fn default() -> Self {
        RomConfig {
            tolerance: 1e-6,
            max_iterations: 25,
            symmetry_tolerance: 1e-10,
        }
    }
}

/// Instrumentation of the online loop.
#[derive(Debug, Default)]
pub struct RomCounters {
    /// Constitutive law calls.
    pub law_evaluations: AtomicUsize,
    /// Reduced assemblies (one per Newton residual evaluation).
    pub assemblies: AtomicUsize,
    pub cholesky: AtomicUsize,
    pub lu_spd_symmetric_part: AtomicUsize,
    pub not_spd: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RomStats {
    pub law_evaluations: usize,
    pub assemblies: usize,
    pub cholesky: usize,
    pub lu_spd_symmetric_part: usize,
    pub not_spd: usize,
}

impl RomCounters {
    pub fn snapshot(&self) -> RomStats {
        RomStats {
            law_evaluations: self.law_evaluations.load(Ordering::Relaxed),
            assemblies: self.assemblies.load(Ordering::Relaxed),
            cholesky: self.cholesky.load(Ordering::Relaxed),
            lu_spd_symmetric_part: self.lu_spd_symmetric_part.load(Ordering::Relaxed),
            not_spd: self.not_spd.load(Ordering::Relaxed),
        }
    }

    fn record(&self, kind: SolveKind) {
        let c = match kind {
            SolveKind::Cholesky => &self.cholesky,
            SolveKind::LuSymmetricPartSpd => &self.lu_spd_symmetric_part,
            SolveKind::LuNotSpd => &self.not_spd,
        };
        c.fetch_add(1, Ordering::Relaxed);
    }
}

/// Reduced tangent and residual (internal minus external) at `a`, with the
/// law responses at every mask point.
#[allow(clippy::too_many_arguments)]
pub fn reduced_assemble<L: Law + ?Sized>(
    ops: &RomOperators,
    law: &L,
    states: &[MaterialState],
    a: &[f64],
    step: usize,
    dt: f64,
    counters: &RomCounters,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<LawResponse>)> {
    if states.len() != ops.mask_len() {
        return Err(Error::dim("mask states", ops.mask_len(), states.len()));
    }
    let temps = &ops.temperatures[step];
    let responses = par::try_map_range(ops.mask_len(), |k| {
        let eps = ops.strain(k, a);
        counters.law_evaluations.fetch_add(1, Ordering::Relaxed);
        law.evaluate(&states[k], &eps, temps[k], dt)
            .map_err(|msg| Error::LawFailure { point: ops.mask[k], msg })
    })?;
    counters.assemblies.fetch_add(1, Ordering::Relaxed);
    let n = ops.n;
    let mut tangent = DMatrix::zeros(n, n);
    let mut residual = DVector::from_iterator(n, ops.forces[step].iter().map(|f| -f));
    for (k, (w, r)) in ops.weights.iter().zip(&responses).enumerate() {
        let modes = &ops.mode_strains[k * n..(k + 1) * n];
        let ce: Vec<[f64; 6]> = modes
            .iter()
            .map(|m| {
                let mut v = [0.0; 6];
                for (a, va) in v.iter_mut().enumerate() {
                    *va = (0..6).map(|b| r.tangent[(a, b)] * m[b]).sum();
                }
                v
            })
            .collect();
        for i in 0..n {
            residual[i] += w * dot6(&r.stress, &modes[i]);
            for j in 0..n {
                tangent[(i, j)] += w * dot6(&modes[i], &ce[j]);
            }
        }
    }
    Ok((tangent, residual, responses))
}

fn dot6(a: &Voigt, b: &Voigt) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomStepSolution {
    pub coords: Vec<f64>,
    pub stresses: Vec<Voigt>,
    pub states: Vec<MaterialState>,
    pub log: NewtonLog,
}

/// Reduced Newton iterations for one step; the ratio is the reduced
/// residual norm over the reduced external force norm.
#[allow(clippy::too_many_arguments)]
pub fn rom_solve_time_step<L: Law + ?Sized>(
    ops: &RomOperators,
    law: &L,
    states: &[MaterialState],
    init: &[f64],
    step: usize,
    dt: f64,
    config: &RomConfig,
    counters: &RomCounters,
) -> Result<RomStepSolution> {
    let mut a = init.to_vec();
    let f_norm = ops.forces[step].iter().map(|f| f * f).sum::<f64>().sqrt();
    let mut reference = (f_norm > 0.0).then_some(f_norm);
    let mut log = NewtonLog::default();
    for it in 0..=config.max_iterations {
        let (k, r, responses) = reduced_assemble(ops, law, states, &a, step, dt, counters)?;
        let r_norm = r.norm();
        let refn = match reference {
            Some(v) => v,
            None if r_norm <= ZERO_LOAD_RESIDUAL => {
                log.ratios.push(0.0);
                log.iterations = it;
                return Ok(finish(a, responses, log));
            }
            None => {
                reference = Some(r_norm);
                r_norm
            }
        };
        let ratio = r_norm / refn;
        log.ratios.push(ratio);
        debug!("reduced newton iteration {it}: ratio {ratio:e}");
        if !ratio.is_finite() {
            return Err(Error::numerical("ROM Newton", format!("non-finite residual at iteration {it}")));
        }
        if ratio <= config.tolerance {
            log.iterations = it;
            return Ok(finish(a, responses, log));
        }
        if it == config.max_iterations {
            break;
        }
        let (da, kind) = reduced_solve(&k, &r, config.symmetry_tolerance)?;
        counters.record(kind);
        if !kind.spd() {
            warn!("reduced tangent is not positive definite at iteration {it}");
        }
        for (ai, d) in a.iter_mut().zip(da.iter()) {
            *ai -= d;
        }
    }
    Err(Error::Convergence {
        stage: "ROM Newton".into(),
        msg: format!(
            "{} iterations exceeded, last residual ratio {:e}",
            config.max_iterations,
            log.ratios.last().copied().unwrap_or(f64::NAN)
        ),
    })
}

fn finish(coords: Vec<f64>, responses: Vec<LawResponse>, log: NewtonLog) -> RomStepSolution {
    let (stresses, states) = responses.into_iter().map(|r| (r.stress, r.state)).unzip();
    RomStepSolution { coords, stresses, states, log }
}

/// Online history: reduced coordinates and mask duals of every step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RomHistory {
    pub steps: Vec<StepRef>,
    pub coords: Vec<Vec<f64>>,
    pub stresses: Vec<Vec<Voigt>>,
    pub states: Vec<Vec<MaterialState>>,
    pub logs: Vec<NewtonLog>,
    pub wall_time: f64,
    pub stats: RomStats,
}

impl RomHistory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Index of the last step of cycle `c` (1-based).
    pub fn end_of_cycle(&self, c: usize) -> Option<usize> {
        self.steps.iter().rposition(|r| r.cycle + 1 == c)
    }
}

/// Run `cycles` cycles from the virgin state; each cycle continues from
/// the previous one's final mask states.
pub fn run_rom_cycles<L: Law + ?Sized>(ops: &RomOperators, law: &L, cycles: usize, config: &RomConfig) -> Result<RomHistory> {
    let start = Instant::now();
    let counters = RomCounters::default();
    let mut history = RomHistory::default();
    let mut a = vec![0.0; ops.n];
    let mut states = vec![MaterialState::default(); ops.mask_len()];
    for g in 0..cycles * ops.steps_per_cycle() {
        let r = ops.step_ref(g);
        let sol = rom_solve_time_step(ops, law, &states, &a, r.step, r.dt, config, &counters).map_err(|e| match e {
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
        debug!("ROM cycle {} step {}: {} iterations", r.cycle + 1, r.step + 1, sol.log.iterations);
        a.clone_from(&sol.coords);
        states.clone_from(&sol.states);
        history.steps.push(r);
        history.coords.push(sol.coords);
        history.stresses.push(sol.stresses);
        history.states.push(sol.states);
        history.logs.push(sol.log);
    }
    history.wall_time = start.elapsed().as_secs_f64();
    history.stats = counters.snapshot();
    Ok(history)
}

impl RomHistory {
    /// `HRROM 1` text: one line per step with cycle, step, time, Newton
    /// iterations, final ratio and the reduced coordinates.
    pub fn to_text(&self) -> String {
        let n = self.coords.first().map_or(0, Vec::len);
        let mut s = String::from("HRROM 1\n");
        let _ = writeln!(s, "modes {n}");
        let _ = writeln!(s, "steps {}", self.len());
        for ((r, a), log) in self.steps.iter().zip(&self.coords).zip(&self.logs) {
            let coords: Vec<String> = a.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                s,
                "step {} {} {} {} {} {}",
                r.cycle + 1,
                r.step + 1,
                r.time,
                log.iterations,
                log.ratios.last().copied().unwrap_or(0.0),
                coords.join(" ")
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Read the reduced coordinates back (duals are not stored).
    pub fn read_coords(path: &Path) -> Result<(Vec<StepRef>, Vec<Vec<f64>>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut lines = Lines::new(&text, &name);
        lines.expect_header("HRROM", "1")?;
        let (ln, toks) = lines.require_tokens("modes")?;
        if toks.len() != 2 || toks[0] != "modes" {
            return Err(lines.err(ln, "expected `modes <n>`"));
        }
        let n: usize = lines.parse_tok(ln, &toks, 1)?;
        let (ln, toks) = lines.require_tokens("steps")?;
        if toks.len() != 2 || toks[0] != "steps" {
            return Err(lines.err(ln, "expected `steps <count>`"));
        }
        let count: usize = lines.parse_tok(ln, &toks, 1)?;
        let mut steps = Vec::with_capacity(count);
        let mut coords = Vec::with_capacity(count);
        let mut prev = 0.0;
        for _ in 0..count {
            let (ln, toks) = lines.require_tokens("step")?;
            if toks.len() != 6 + n || toks[0] != "step" {
                return Err(lines.err(ln, format!("expected `step` with {} fields", 6 + n)));
            }
            let c: usize = lines.parse_tok(ln, &toks, 1)?;
            let st: usize = lines.parse_tok(ln, &toks, 2)?;
            let time: f64 = lines.parse_tok(ln, &toks, 3)?;
            if c == 0 || st == 0 {
                return Err(lines.err(ln, "cycle and step are 1-based"));
            }
            steps.push(StepRef { cycle: c - 1, step: st - 1, time, dt: time - prev });
            prev = time;
            coords.push((0..n).map(|i| lines.parse_tok(ln, &toks, 6 + i)).collect::<Result<Vec<f64>>>()?);
        }
        Ok((steps, coords))
    }
}

/// Wall-time accounting of the complete reduced procedure against the
/// extrapolated cost of the high-fidelity model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupReport {
    /// `(stage, algorithm, seconds)`.
    pub stages: Vec<(String, String, f64)>,
    pub hfm_per_cycle: f64,
    pub cycles: usize,
}

impl SpeedupReport {
    pub fn procedure_time(&self) -> f64 {
        self.stages.iter().map(|s| s.2).sum()
    }

    pub fn hfm_extrapolated(&self) -> f64 {
        self.hfm_per_cycle * self.cycles as f64
    }

    pub fn speedup(&self) -> f64 {
        self.hfm_extrapolated() / self.procedure_time()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:<32} {:>12}", "step", "algorithm", "wall-time (s)");
        for (stage, alg, t) in &self.stages {
            let _ = writeln!(s, "{stage:<24} {alg:<32} {t:>12.3}");
        }
        let _ = writeln!(s, "{:<24} {:<32} {:>12.3}", "total", "", self.procedure_time());
        let _ = writeln!(s, "{:<24} {:<32} {:>12.3}", "HFM per cycle", "", self.hfm_per_cycle);
        let _ = writeln!(
            s,
            "{:<24} {:<32} {:>12.3}",
            format!("HFM x {} cycles", self.cycles),
            "extrapolated",
            self.hfm_extrapolated()
        );
        let _ = writeln!(s, "{:<24} {:<32} {:>12.2}", "speedup", "", self.speedup());
        s
    }
}
