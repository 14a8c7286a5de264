//! Pipeline configuration, field comparison, point histories and the small
//! files exchanged between command-line stages.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arrays::{read_array, write_array};
use crate::error::{Error, Result};
use crate::fe::{strain_at_point, Voigt};
use crate::hfm::{Model, TransientResult};
use crate::ingestion::SnapshotSet;
use crate::loading::{LoadingSchedule, StepRef};
use crate::material::MaterialState;
use crate::pipeline::{StageTime, Tolerances};
use crate::reconstruction::{DualField, GappyField};
use crate::rom_online::{RomHistory, RomOperators};
use crate::sparse::CsrMatrix;
use crate::textio::Lines;

/// Inner product used by [`compare_fields`].
#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    /// Nodal fields with the L2 Gram matrix.
    Gram(&'a CsrMatrix),
    /// Point fields with quadrature weights.
    Points(&'a [f64]),
    Euclidean,
}

impl Metric<'_> {
    fn norm(&self, v: &[f64]) -> f64 {
        match self {
            Metric::Gram(g) => g.inner(v, v).max(0.0).sqrt(),
            Metric::Points(w) => w.iter().zip(v).map(|(w, x)| w * x * x).sum::<f64>().sqrt(),
            Metric::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldComparison {
    pub relative_l2: f64,
    pub relative_max: f64,
    /// `(candidate - reference) / max|reference|`.
    pub difference: Vec<f64>,
    /// Set when the reference is zero: the norms above are then absolute.
    pub absolute: bool,
}

pub fn compare_fields(reference: &[f64], candidate: &[f64], metric: Metric<'_>) -> Result<FieldComparison> {
    if reference.len() != candidate.len() {
        return Err(Error::dim("compared field", reference.len(), candidate.len()));
    }
    let expected = match metric {
        Metric::Gram(g) => Some(g.dim()),
        Metric::Points(w) => Some(w.len()),
        Metric::Euclidean => None,
    };
    if let Some(n) = expected.filter(|&n| n != reference.len()) {
        return Err(Error::dim("comparison weights", n, reference.len()));
    }
    let diff: Vec<f64> = candidate.iter().zip(reference).map(|(b, a)| b - a).collect();
    let ref_max = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff_max = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ref_norm = metric.norm(reference);
    let diff_norm = metric.norm(&diff);
    if ref_max == 0.0 {
        return Ok(FieldComparison {
            relative_l2: diff_norm,
            relative_max: diff_max,
            absolute: diff_max > 0.0,
            difference: diff,
        });
    }
    Ok(FieldComparison {
        relative_l2: diff_norm / ref_norm,
        relative_max: diff_max / ref_max,
        difference: diff.iter().map(|d| d / ref_max).collect(),
        absolute: false,
    })
}

/// One line of a point history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub cycle: usize,
    pub step: usize,
    pub time: f64,
    pub eps33: f64,
    pub sig33: f64,
    pub p: f64,
}

/// History of integration point `k` from a high-fidelity run.
pub fn hfm_point_history(model: &Model, result: &TransientResult, k: usize) -> Result<Vec<HistoryRow>> {
    point_rows(model, &result.steps, &result.displacements, &result.stresses, &result.states, k)
}

/// History of integration point `k` from a snapshot set with duals; snapshot
/// `s` is global schedule step `s`.
pub fn snapshot_point_history(model: &Model, schedule: &LoadingSchedule, set: &SnapshotSet, k: usize) -> Result<Vec<HistoryRow>> {
    let duals = set
        .duals
        .as_ref()
        .ok_or_else(|| Error::Validation("point history needs snapshot duals".into()))?;
    let steps: Vec<StepRef> = (0..set.len()).map(|g| schedule.step_ref(g)).collect();
    point_rows(model, &steps, &set.displacements, &duals.stresses, &duals.states, k)
}

fn point_rows(
    model: &Model,
    steps: &[StepRef],
    displacements: &[Vec<f64>],
    stresses: &[Vec<Voigt>],
    states: &[Vec<MaterialState>],
    k: usize,
) -> Result<Vec<HistoryRow>> {
    if k >= model.n_points() {
        return Err(Error::Validation(format!("point {k} out of range (N_G = {})", model.n_points())));
    }
    Ok((0..steps.len())
        .map(|g| {
            let r = steps[g];
            let e = strain_at_point(&model.mesh, &model.ips, &model.dofs, &displacements[g], k);
            HistoryRow {
                cycle: r.cycle + 1,
                step: r.step + 1,
                time: r.time,
                eps33: e[2],
                sig33: stresses[g][k][2],
                p: states[g][k].p,
            }
        })
        .collect())
}

/// History of global point `point` from an online run; only mask points
/// are available.
pub fn rom_point_history(ops: &RomOperators, history: &RomHistory, point: usize) -> Result<Vec<HistoryRow>> {
    let k = ops.mask_index(point).ok_or_else(|| {
        let ids: Vec<String> = ops.mask.iter().map(|p| p.to_string()).collect();
        Error::Validation(format!("point {point} is not a mask point; available: {}", ids.join(" ")))
    })?;
    Ok((0..history.len())
        .map(|g| {
            let r = history.steps[g];
            HistoryRow {
                cycle: r.cycle + 1,
                step: r.step + 1,
                time: r.time,
                eps33: ops.strain(k, &history.coords[g])[2],
                sig33: history.stresses[g][k][2],
                p: history.states[g][k].p,
            }
        })
        .collect())
}

pub fn write_history_csv(rows: &[HistoryRow], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// `x,y,z,value` rows, one per point.
pub fn write_point_cloud(path: &Path, positions: &[[f64; 3]], values: &[f64]) -> Result<()> {
    if positions.len() != values.len() {
        return Err(Error::dim("point cloud values", positions.len(), values.len()));
    }
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x", "y", "z", "value"]).map_err(csv_err)?;
    for (x, v) in positions.iter().zip(values) {
        w.serialize((x[0], x[1], x[2], v)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct StageRow {
    stage: String,
    algorithm: String,
    seconds: f64,
}

/// Record stage timings in a CSV manifest. A row with the same stage and
/// algorithm is replaced in place, so rerunning a stage does not count it
/// twice.
pub fn record_stages(path: &Path, stages: &[StageTime]) -> Result<()> {
    let mut rows = if path.exists() { read_stages(path)? } else { Vec::new() };
    for new in stages {
        match rows.iter_mut().find(|r| r.0 == new.0 && r.1 == new.1) {
            Some(r) => r.2 = new.2,
            None => rows.push(new.clone()),
        }
    }
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (stage, algorithm, seconds) in rows {
        w.serialize(StageRow { stage, algorithm, seconds }).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_stages(path: &Path) -> Result<Vec<StageTime>> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize::<StageRow>()
        .map(|row| row.map(|r| (r.stage, r.algorithm, r.seconds)).map_err(csv_err))
        .collect()
}

/// Wall time of a high-fidelity reference run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTiming {
    pub cycles: usize,
    pub seconds: f64,
}

impl ReferenceTiming {
    pub fn per_cycle(&self) -> f64 {
        self.seconds / self.cycles as f64
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.serialize(self).map_err(csv_err)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let t: ReferenceTiming = r
            .deserialize()
            .next()
            .ok_or_else(|| Error::parse(path.display().to_string(), 2, "missing timing row"))?
            .map_err(csv_err)?;
        if t.cycles == 0 || !(t.seconds >= 0.0) {
            return Err(Error::Validation(format!("invalid reference timing {t:?}")));
        }
        Ok(t)
    }
}

/// Values of one dual field at its Gappy mask points for every online step.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskValues {
    pub field: DualField,
    pub points: Vec<usize>,
    /// `values[g][i]` at `points[i]`.
    pub values: Vec<Vec<f64>>,
}

impl MaskValues {
    pub fn from_history(field: &GappyField, ops: &RomOperators, history: &RomHistory) -> Result<Self> {
        let points = field.mask();
        let index = points
            .iter()
            .map(|&p| {
                ops.mask_index(p)
                    .ok_or_else(|| Error::Validation(format!("Gappy mask point {p} is not in the online mask")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = (0..history.len())
            .map(|g| {
                index
                    .iter()
                    .map(|&k| field.field.value(&history.stresses[g][k], &history.states[g][k]))
                    .collect()
            })
            .collect();
        Ok(MaskValues {
            field: field.field,
            points,
            values,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    /// Full-mesh field of step `g`.
    pub fn reconstruct(&self, field: &GappyField, g: usize, n_points: usize) -> Result<Vec<f64>> {
        if field.field != self.field {
            return Err(Error::Validation(format!(
                "mask values hold {}, the Gappy operators {}",
                self.field.name(),
                field.field.name()
            )));
        }
        let row = self.values.get(g).ok_or_else(|| {
            Error::Validation(format!("step {} out of range ({} online steps)", g + 1, self.n_steps()))
        })?;
        let at: HashMap<usize, f64> = self.points.iter().copied().zip(row.iter().copied()).collect();
        if let Some(p) = field.mask().into_iter().find(|p| !at.contains_key(p)) {
            return Err(Error::Validation(format!("mask point {p} has no stored value")));
        }
        field.reconstruct(n_points, |p| at[&p])
    }

    /// Write `dir/<field>_mask.hrmask` and one array holding all steps.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let name = self.field.name();
        let data = format!("{name}_mask.bin");
        write_array(&dir.join(&data), &self.values.concat())?;
        let ids: Vec<String> = self.points.iter().map(|p| p.to_string()).collect();
        let mut s = String::from("HRMASK 1\n");
        let _ = writeln!(s, "field {name}");
        let _ = writeln!(s, "points {} {}", self.points.len(), ids.join(" "));
        let _ = writeln!(s, "steps {} {data}", self.values.len());
        let path = dir.join(format!("{name}_mask.hrmask"));
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let name = path.display().to_string();
        let mut lines = Lines::new(&text, &name);
        lines.expect_header("HRMASK", "1")?;
        let (ln, toks) = lines.require_tokens("field")?;
        if toks.len() != 2 || toks[0] != "field" {
            return Err(lines.err(ln, "expected `field <name>`"));
        }
        let field = DualField::parse(toks[1]).map_err(|e| lines.err(ln, e.to_string()))?;
        let (ln, toks) = lines.require_tokens("points")?;
        if toks.len() < 2 || toks[0] != "points" {
            return Err(lines.err(ln, "expected `points <count> <ids>`"));
        }
        let count: usize = lines.parse_tok(ln, &toks, 1)?;
        if toks.len() != 2 + count {
            return Err(lines.err(ln, format!("expected {count} point ids, found {}", toks.len() - 2)));
        }
        let points = (0..count).map(|i| lines.parse_tok(ln, &toks, 2 + i)).collect::<Result<Vec<usize>>>()?;
        let (ln, toks) = lines.require_tokens("steps")?;
        if toks.len() != 3 || toks[0] != "steps" {
            return Err(lines.err(ln, "expected `steps <count> <file>`"));
        }
        let n_steps: usize = lines.parse_tok(ln, &toks, 1)?;
        let flat = read_array(&dir.join(toks[2]))?;
        if flat.len() != n_steps * count {
            return Err(Error::dim("mask value array", n_steps * count, flat.len()));
        }
        let values = if count == 0 {
            vec![Vec::new(); n_steps]
        } else {
            flat.chunks_exact(count).map(<[f64]>::to_vec).collect()
        };
        Ok(MaskValues { field, points, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub mesh: PathBuf,
    pub material: PathBuf,
    pub schedule: PathBuf,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    pub hfm_newton: f64,
    pub rom_newton: f64,
    pub pod: f64,
    pub operator: f64,
    pub gappy: f64,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        let t = Tolerances::default();
        ToleranceSection {
            hfm_newton: t.hfm_newton,
            rom_newton: t.rom_newton,
            pod: t.pod,
            operator: t.operator,
            gappy: t.gappy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Subdomain count.
    pub subdomains: usize,
    /// Online cycles.
    pub cycles: usize,
    /// High-fidelity cycles used as training data.
    pub training_cycles: usize,
    /// Worker threads, 0 for the default pool.
    pub threads: usize,
    /// Seed of the random-subset quadrature.
    pub seed: u64,
    /// Dual fields to reconstruct.
    pub fields: Vec<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            subdomains: 8,
            cycles: 10,
            training_cycles: 1,
            threads: 0,
            seed: 1,
            fields: vec!["p".into()],
        }
    }
}

/// `[section]` / `key = value` configuration of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub run: RunSection,
}

impl PipelineConfig {
    /// Parse and resolve relative paths against `base`.
    pub fn parse(text: &str, name: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::parse(name, e.span().map_or(0, |s| line_of(text, s.start)), e.message()))?;
        for p in [&mut cfg.paths.mesh, &mut cfg.paths.material, &mut cfg.paths.schedule, &mut cfg.paths.workdir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn tolerances(&self) -> Tolerances {
        let t = &self.tolerances;
        Tolerances {
            hfm_newton: t.hfm_newton,
            rom_newton: t.rom_newton,
            pod: t.pod,
            operator: t.operator,
            gappy: t.gappy,
        }
    }

    pub fn fields(&self) -> Result<Vec<DualField>> {
        self.run.fields.iter().map(|f| DualField::parse(f)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerances().validate()?;
        if self.run.subdomains == 0 {
            return Err(Error::Validation("subdomains must be positive".into()));
        }
        if self.run.cycles == 0 || self.run.training_cycles == 0 {
            return Err(Error::Validation("cycle counts must be positive".into()));
        }
        self.fields()?;
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
