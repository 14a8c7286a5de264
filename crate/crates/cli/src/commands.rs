//! Stage implementations. Each stage reads and writes only the documented
//! file formats, so any of them can be replaced by an external tool.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hrom_core::arrays::{read_array, write_array};
use hrom_core::cli_io::{
    compare_fields, read_stages, record_stages, rom_point_history, snapshot_point_history, write_history_csv,
    write_point_cloud, MaskValues, Metric, Paths, PipelineConfig, ReferenceTiming, RunSection,
};
use hrom_core::demo;
use hrom_core::fe::{l2_gram_matrix, subdomain_gram_matrices};
use hrom_core::hfm::run_transient;
use hrom_core::hyperreduction::{build_all_systems, hyperreduce as fit_quadrature, mode_strains, random_subset_quadrature, ReducedQuadrature};
use hrom_core::ingestion::{export_snapshots, import_snapshots, partition_mesh, recompute_duals, SnapshotSet};
use hrom_core::mesh::bar_mesh;
use hrom_core::par::with_threads;
use hrom_core::pipeline::{timed, StageTime};
use hrom_core::pod::{snapshot_pod, ReducedBasis};
use hrom_core::reconstruction::{build_gappy_field, field_snapshots, DualField, GappyField};
use hrom_core::rom_online::{precompute_rom_operators, run_rom_cycles, RomConfig, RomHistory, SpeedupReport};
use hrom_core::Error;

use crate::case::{Case, Layout};
use crate::MetricKind;

/// An error together with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.source)
    }
}

trait At<T> {
    fn at(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> At<T> for hrom_core::Result<T> {
    fn at(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

type Outcome<T = ()> = Result<T, StageError>;

fn create_dir(dir: &Path) -> hrom_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load(config: &Path, threads: Option<usize>) -> Outcome<Case> {
    let case = Case::load(config, threads).at("setup")?;
    create_dir(&case.cfg.paths.workdir).at("setup")?;
    Ok(case)
}

fn import(case: &Case, path: &Path) -> Outcome<SnapshotSet> {
    import_snapshots(path, Some(case.model.n_dofs()), Some(case.model.n_points()))
        .map(|(set, _)| set)
        .at("import")
}

fn record(case: &Case, stages: &[StageTime]) -> Outcome {
    record_stages(&case.layout().stages(), stages).at("manifest")
}

pub fn demo(out: &Path, subdomains: usize) -> Outcome {
    let stage = "demo";
    create_dir(out).at(stage)?;
    let mut mesh = bar_mesh(&demo::bar_spec());
    partition_mesh(&mut mesh, subdomains).at(stage)?;
    mesh.write(&out.join("bar.hrmesh")).at(stage)?;
    demo::material().write(&out.join("bar.hrmat")).at(stage)?;
    demo::schedule().write(&out.join("bar.hrsched")).at(stage)?;
    let cfg = PipelineConfig {
        paths: Paths {
            mesh: "bar.hrmesh".into(),
            material: "bar.hrmat".into(),
            schedule: "bar.hrsched".into(),
            workdir: "work".into(),
        },
        tolerances: Default::default(),
        run: RunSection {
            subdomains,
            ..RunSection::default()
        },
    };
    let path = out.join("pipeline.toml");
    std::fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e)).at(stage)?;
    println!("demo case written to {}", out.display());
    Ok(())
}

pub fn hfm_run(config: &Path, threads: Option<usize>, cycles: Option<usize>, reference: bool, out: Option<&Path>) -> Outcome<PathBuf> {
    hfm_run_case(&load(config, threads)?, cycles, reference, out)
}

fn hfm_run_case(case: &Case, cycles: Option<usize>, reference: bool, out: Option<&Path>) -> Outcome<PathBuf> {
    let layout = case.layout();
    let run = &case.cfg.run;
    let cycles = cycles.unwrap_or(if reference { run.cycles } else { run.training_cycles });
    if cycles == 0 {
        return Err(Error::Validation("cycle count must be positive".into())).at("high-fidelity solve");
    }
    let result = with_threads(case.threads, || {
        run_transient(&case.model, &case.law, &case.schedule, cycles, &case.hfm_config())
    })
    .at("high-fidelity solve")?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| if reference { layout.reference() } else { layout.training() });
    let path = export_snapshots(&SnapshotSet::from_transient(&result), &dir, &case.refs()).at("export")?;
    if reference {
        ReferenceTiming {
            cycles,
            seconds: result.wall_time,
        }
        .write(&layout.reference_timing())
        .at("manifest")?;
    } else {
        record(case, &[("training data".into(), "high-fidelity cycle".into(), result.wall_time)])?;
    }
    let iterations: usize = result.logs.iter().map(|l| l.iterations).sum();
    println!(
        "high-fidelity: {cycles} cycles, {} steps, {iterations} Newton iterations, {:.3} s -> {}",
        result.len(),
        result.wall_time,
        path.display()
    );
    Ok(path)
}

pub fn ingest(config: &Path, threads: Option<usize>, snapshots: &Path, out: Option<&Path>) -> Outcome<PathBuf> {
    ingest_case(&load(config, threads)?, snapshots, out)
}

fn ingest_case(case: &Case, snapshots: &Path, out: Option<&Path>) -> Outcome<PathBuf> {
    let set = import(case, snapshots)?.displacements_only();
    let start = Instant::now();
    let set = with_threads(case.threads, || recompute_duals(&case.model, &case.law, &case.schedule, &set)).at("dual recomputation")?;
    let t = start.elapsed().as_secs_f64();
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| case.layout().ingested());
    let path = export_snapshots(&set, &dir, &case.refs()).at("export")?;
    record(case, &[("ingestion".into(), "dual recomputation".into(), t)])?;
    println!("ingested {} snapshots, duals recomputed in {t:.3} s -> {}", set.len(), path.display());
    Ok(path)
}

pub fn compress(config: &Path, threads: Option<usize>, snapshots: Option<&Path>, out: Option<&Path>) -> Outcome<PathBuf> {
    compress_case(&load(config, threads)?, snapshots, out)
}

fn compress_case(case: &Case, snapshots: Option<&Path>, out: Option<&Path>) -> Outcome<PathBuf> {
    let layout = case.layout();
    let set = import(case, &snapshots.map(Path::to_path_buf).unwrap_or_else(|| layout.training_snapshots()))?;
    let mut stages = Vec::new();
    let basis = with_threads(case.threads, || {
        timed(&mut stages, "data compression", "snapshot POD", || {
            let grams = subdomain_gram_matrices(&case.model.mesh, &case.model.dofs)?;
            snapshot_pod(&set.displacements, &grams, case.cfg.tolerances.pod)
        })
    })
    .at("data compression")?;
    let path = basis
        .write(&out.map(Path::to_path_buf).unwrap_or_else(|| layout.basis_dir()))
        .at("data compression")?;
    record(case, &stages)?;
    println!("POD: {} modes from {} snapshots -> {}", basis.n(), set.len(), path.display());
    Ok(path)
}

fn read_basis(case: &Case, path: &Path) -> Outcome<ReducedBasis> {
    let basis = ReducedBasis::read(path).at("read basis")?;
    if basis.n_dofs() != case.model.n_dofs() {
        return Err(Error::dim("basis modes", case.model.n_dofs(), basis.n_dofs())).at("read basis");
    }
    Ok(basis)
}

pub fn hyperreduce(
    config: &Path,
    threads: Option<usize>,
    snapshots: Option<&Path>,
    basis: Option<&Path>,
    random_trials: Option<usize>,
) -> Outcome {
    hyperreduce_case(&load(config, threads)?, snapshots, basis, random_trials)
}

fn hyperreduce_case(case: &Case, snapshots: Option<&Path>, basis: Option<&Path>, random_trials: Option<usize>) -> Outcome {
    let layout = case.layout();
    let model = &case.model;
    let tol = case.cfg.tolerances();
    let fields = case.cfg.fields().at("setup")?;
    let set = import(case, &snapshots.map(Path::to_path_buf).unwrap_or_else(|| layout.training_snapshots()))?;
    let duals = set
        .duals
        .as_ref()
        .ok_or_else(|| Error::Validation("snapshot duals are required; run `hrom ingest` first".into()))
        .at("operator compression")?;
    let basis = read_basis(case, &basis.map(Path::to_path_buf).unwrap_or_else(|| layout.basis()))?;
    let mut stages = Vec::new();
    let (systems, quad) = with_threads(case.threads, || {
        timed(&mut stages, "operator compression", "NNOMP", || {
            let strains = mode_strains(&model.mesh, &model.ips, &model.dofs, &basis)?;
            let systems = build_all_systems(&model.ips, &strains, &duals.stresses, model.mesh.n_subdomains)?;
            let quad = fit_quadrature(&systems, tol.operator)?;
            Ok((systems, quad))
        })
    })
    .at("operator compression")?;
    quad.write(&layout.quadrature()).at("operator compression")?;
    println!("reduced quadrature: {} of {} points", quad.len(), model.n_points());
    for f in &quad.fits {
        println!(
            "  subdomain {}: {} points, relative residual {:.3e}",
            f.subdomain,
            local_count(&quad, f.subdomain),
            f.residual / f.b_norm
        );
    }
    if let Some(trials) = random_trials {
        for sys in &systems {
            let size = local_count(&quad, sys.subdomain);
            if size == 0 {
                continue;
            }
            let seed = case.cfg.run.seed.wrapping_add(sys.subdomain as u64);
            let random = random_subset_quadrature(sys, size, trials, seed, tol.operator).at("random subset quadrature")?;
            let fit = &random.fits[0];
            println!(
                "  subdomain {}: best of {trials} random {size}-point subsets, relative residual {:.3e}",
                sys.subdomain,
                fit.residual / fit.b_norm
            );
        }
    }
    let gappy = with_threads(case.threads, || {
        timed(&mut stages, "reconstruction setup", "dual POD + QDEIM", || {
            fields
                .iter()
                .map(|&f| {
                    let snaps = field_snapshots(f, &duals.stresses, &duals.states);
                    build_gappy_field(f, &model.ips, model.mesh.n_subdomains, &snaps, &quad, tol.gappy)
                })
                .collect::<hrom_core::Result<Vec<_>>>()
        })
    })
    .at("reconstruction setup")?;
    for g in &gappy {
        let path = g.write(&layout.gappy_dir()).at("reconstruction setup")?;
        println!("{}: {} mask points -> {}", g.field.name(), g.mask().len(), path.display());
    }
    record(case, &stages)
}

fn local_count(quad: &ReducedQuadrature, l: usize) -> usize {
    quad.subdomain.iter().filter(|&&s| s == l).count()
}

fn read_gappy(case: &Case, field: DualField) -> Outcome<GappyField> {
    let path = case.layout().gappy_dir().join(format!("{}.hrgappy", field.name()));
    if !path.exists() {
        return Err(Error::Validation(format!("{} not found; run `hrom hyperreduce` first", path.display()))).at("read Gappy operators");
    }
    GappyField::read(&path).at("read Gappy operators")
}

pub fn rom_run(config: &Path, threads: Option<usize>, cycles: Option<usize>, point: Option<usize>) -> Outcome {
    rom_run_case(&load(config, threads)?, cycles, point)
}

fn rom_run_case(case: &Case, cycles: Option<usize>, point: Option<usize>) -> Outcome {
    let layout = case.layout();
    let cycles = cycles.unwrap_or(case.cfg.run.cycles);
    let basis = read_basis(case, &layout.basis())?;
    let quad = ReducedQuadrature::read(&layout.quadrature()).at("read quadrature")?;
    let gappy = case
        .cfg
        .fields()
        .at("setup")?
        .into_iter()
        .map(|f| read_gappy(case, f))
        .collect::<Outcome<Vec<_>>>()?;
    let extra: Vec<usize> = gappy.iter().flat_map(GappyField::mask).collect();
    let mut stages = Vec::new();
    let ops = with_threads(case.threads, || {
        timed(&mut stages, "operator compression", "online operators", || {
            precompute_rom_operators(&case.model, &basis, &quad, &extra, &case.schedule)
        })
    })
    .at("operator compression")?;
    let rom_cfg = RomConfig {
        tolerance: case.cfg.tolerances.rom_newton,
        ..RomConfig::default()
    };
    let hist = with_threads(case.threads, || run_rom_cycles(&ops, &case.law, cycles, &rom_cfg)).at("online")?;
    stages.push(("online".into(), "reduced Newton".into(), hist.wall_time));
    let dir = layout.rom_dir();
    create_dir(&dir).at("online")?;
    hist.write(&dir.join("rom.hrrom")).at("online")?;
    for g in &gappy {
        MaskValues::from_history(g, &ops, &hist).and_then(|m| m.write(&dir)).at("online")?;
    }
    if let Some(p) = point {
        let rows = rom_point_history(&ops, &hist, p).at("point history")?;
        write_history_csv(&rows, &dir.join(format!("point_{p}.csv"))).at("point history")?;
    }
    record(case, &stages)?;
    let s = hist.stats;
    println!(
        "online: {cycles} cycles, {} steps, {} assemblies, {} law evaluations on {} mask points, {:.3} s",
        hist.len(),
        s.assemblies,
        s.law_evaluations,
        ops.mask_len(),
        hist.wall_time
    );
    println!(
        "  reduced tangents: {} Cholesky, {} LU with SPD symmetric part, {} not SPD",
        s.cholesky, s.lu_spd_symmetric_part, s.not_spd
    );
    Ok(())
}

/// Index of the requested online step: `step` is 1-based and global, `cycle`
/// selects the last step of that cycle, and the default is the final step.
fn select_step(steps: &[hrom_core::loading::StepRef], cycle: Option<usize>, step: Option<usize>) -> hrom_core::Result<usize> {
    if steps.is_empty() {
        return Err(Error::Validation("the online history is empty".into()));
    }
    match (cycle, step) {
        (_, Some(s)) if s >= 1 && s <= steps.len() => Ok(s - 1),
        (_, Some(s)) => Err(Error::Validation(format!("step {s} outside 1..={}", steps.len()))),
        (Some(c), None) => steps
            .iter()
            .rposition(|r| r.cycle + 1 == c)
            .ok_or_else(|| Error::Validation(format!("cycle {c} was not run"))),
        (None, None) => Ok(steps.len() - 1),
    }
}

pub fn reconstruct(
    config: &Path,
    threads: Option<usize>,
    field: &str,
    cycle: Option<usize>,
    step: Option<usize>,
    out: Option<&Path>,
) -> Outcome<PathBuf> {
    reconstruct_case(&load(config, threads)?, field, cycle, step, out)
}

fn reconstruct_case(case: &Case, field: &str, cycle: Option<usize>, step: Option<usize>, out: Option<&Path>) -> Outcome<PathBuf> {
    let stage = "reconstruction";
    let layout = case.layout();
    let (steps, coords) = RomHistory::read_coords(&layout.rom_dir().join("rom.hrrom")).at(stage)?;
    let g = select_step(&steps, cycle, step).at(stage)?;
    let default = layout.fields_dir().join(format!("{field}_step{}.bin", g + 1));
    let path = out.map(Path::to_path_buf).unwrap_or(default);
    if let Some(parent) = path.parent() {
        create_dir(parent).at(stage)?;
    }
    if field == "u" {
        let basis = read_basis(case, &layout.basis())?;
        if coords[g].len() != basis.n() {
            return Err(Error::dim("reduced coordinates", basis.n(), coords[g].len())).at(stage);
        }
        write_array(&path, &basis.expand(&coords[g])).at(stage)?;
    } else {
        let f = DualField::parse(field).at(stage)?;
        let gappy = read_gappy(case, f)?;
        let values = MaskValues::read(&layout.rom_dir().join(format!("{}_mask.hrmask", f.name()))).at(stage)?;
        if values.n_steps() != steps.len() {
            return Err(Error::dim("mask value steps", steps.len(), values.n_steps())).at(stage);
        }
        let start = Instant::now();
        let full = with_threads(case.threads, || values.reconstruct(&gappy, g, case.model.n_points())).at(stage)?;
        let t = start.elapsed().as_secs_f64();
        write_array(&path, &full).at(stage)?;
        write_point_cloud(&path.with_extension("csv"), &case.model.ips.position, &full).at(stage)?;
        record(case, &[(stage.into(), format!("Gappy-POD {field}"), t)])?;
    }
    let r = steps[g];
    println!("{field} at cycle {} step {} (t = {}) -> {}", r.cycle + 1, r.step + 1, r.time, path.display());
    Ok(path)
}

/// One field of a stored snapshot: `u` or a dual field.
pub fn extract(config: &Path, snapshots: &Path, field: &str, step: usize, out: &Path) -> Outcome {
    let case = Case::load(config, None).at("setup")?;
    let set = import(&case, snapshots)?;
    let values = snapshot_field(&set, field, step).at("extract")?;
    write_array(out, &values).at("extract")?;
    println!("{field} of snapshot {step} -> {}", out.display());
    Ok(())
}

fn snapshot_field(set: &SnapshotSet, field: &str, step: usize) -> hrom_core::Result<Vec<f64>> {
    if step == 0 || step > set.len() {
        return Err(Error::Validation(format!("snapshot {step} outside 1..={}", set.len())));
    }
    let s = step - 1;
    if field == "u" {
        return Ok(set.displacements[s].clone());
    }
    let f = DualField::parse(field)?;
    let duals = set
        .duals
        .as_ref()
        .ok_or_else(|| Error::Validation("the snapshot set carries no duals".into()))?;
    Ok(duals.stresses[s].iter().zip(&duals.states[s]).map(|(sig, st)| f.value(sig, st)).collect())
}

pub fn compare(reference: &Path, candidate: &Path, metric: MetricKind, config: Option<&Path>, diff: Option<&Path>) -> Outcome {
    let stage = "compare";
    let a = read_array(reference).at(stage)?;
    let b = read_array(candidate).at(stage)?;
    let case = match (metric, config) {
        (MetricKind::Euclidean, _) => None,
        (_, Some(c)) => Some(Case::load(c, None).at("setup")?),
        (_, None) => return Err(Error::Validation("this metric needs --config".into())).at(stage),
    };
    let gram;
    let m = match (metric, &case) {
        (MetricKind::Gram, Some(case)) => {
            gram = l2_gram_matrix(&case.model.mesh, &case.model.dofs, None).at(stage)?;
            Metric::Gram(&gram)
        }
        (MetricKind::Points, Some(case)) => Metric::Points(&case.model.ips.weight),
        _ => Metric::Euclidean,
    };
    let c = compare_fields(&a, &b, m).at(stage)?;
    let kind = if c.absolute { "absolute" } else { "relative" };
    println!("{kind} L2 {:.6e}", c.relative_l2);
    println!("{kind} max {:.6e}", c.relative_max);
    if let Some(path) = diff {
        write_array(path, &c.difference).at(stage)?;
    }
    Ok(())
}

pub fn report(config: &Path, out: Option<&Path>) -> Outcome<SpeedupReport> {
    let stage = "report";
    let cfg = PipelineConfig::read(config).at("setup")?;
    let layout = Layout::new(&cfg.paths.workdir);
    for (path, hint) in [
        (layout.stages(), "run the pipeline stages first"),
        (layout.reference_timing(), "run `hrom hfm-run --reference` first"),
    ] {
        if !path.exists() {
            return Err(Error::Validation(format!("{} not found; {hint}", path.display()))).at(stage);
        }
    }
    let reference = ReferenceTiming::read(&layout.reference_timing()).at(stage)?;
    let report = SpeedupReport {
        stages: read_stages(&layout.stages()).at(stage)?,
        hfm_per_cycle: reference.per_cycle(),
        cycles: cfg.run.cycles,
    };
    let table = report.to_table();
    print!("{table}");
    if let Some(path) = out {
        std::fs::write(path, &table).map_err(|e| Error::io(path, e)).at(stage)?;
    }
    Ok(report)
}

pub fn history(config: &Path, snapshots: &Path, point: usize, out: &Path) -> Outcome {
    let case = Case::load(config, None).at("setup")?;
    let set = import(&case, snapshots)?;
    let rows = snapshot_point_history(&case.model, &case.schedule, &set, point).at("point history")?;
    write_history_csv(&rows, out).at("point history")?;
    println!("{} rows -> {}", rows.len(), out.display());
    Ok(())
}

/// Training run, dual recomputation from displacements only, compression,
/// hyper-reduction, online run and reconstruction of every configured field.
pub fn pipeline(config: &Path, threads: Option<usize>, reference: bool) -> Outcome {
    let case = load(config, threads)?;
    let layout = case.layout();
    let stages = layout.stages();
    if stages.exists() {
        std::fs::remove_file(&stages).map_err(|e| Error::io(&stages, e)).at("manifest")?;
    }
    let training = hfm_run_case(&case, None, false, None)?;
    ingest_case(&case, &training, None)?;
    compress_case(&case, None, None)?;
    hyperreduce_case(&case, None, None, None)?;
    rom_run_case(&case, None, None)?;
    let mut fields = Vec::new();
    for f in case.cfg.fields().at("setup")? {
        fields.push((f, reconstruct_case(&case, &f.name(), None, None, None)?));
    }
    if reference {
        let path = hfm_run_case(&case, None, true, None)?;
        let set = import(&case, &path)?;
        let last = set.len();
        for (f, rom) in &fields {
            let hfm = snapshot_field(&set, &f.name(), last).at("compare")?;
            let rom = read_array(rom).at("compare")?;
            let c = compare_fields(&hfm, &rom, Metric::Points(&case.model.ips.weight)).at("compare")?;
            println!("{} at the last step: relative L2 {:.3e}, relative max {:.3e}", f.name(), c.relative_l2, c.relative_max);
        }
        report(config, Some(&layout.root.join("report.txt")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use hrom_core::loading::StepRef;

    fn steps(m: usize, cycles: usize) -> Vec<StepRef> {
        (0..m * cycles)
            .map(|g| StepRef {
                cycle: g / m,
                step: g % m,
                time: g as f64,
                dt: 1.0,
            })
            .collect()
    }

    #[test]
    fn step_selection() {
        let s = steps(4, 3);
        assert_eq!(select_step(&s, None, None).unwrap(), 11);
        assert_eq!(select_step(&s, Some(1), None).unwrap(), 3);
        assert_eq!(select_step(&s, Some(3), None).unwrap(), 11);
        assert_eq!(select_step(&s, None, Some(1)).unwrap(), 0);
        assert!(select_step(&s, Some(4), None).is_err());
        assert!(select_step(&s, None, Some(0)).is_err());
        assert!(select_step(&s, None, Some(13)).is_err());
        assert!(select_step(&[], None, None).is_err());
    }
}
