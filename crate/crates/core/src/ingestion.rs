//! Nonintrusive data layer: mesh partitioning, snapshot import/export and
//! recomputation of dual histories from displacements alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::arrays::{read_array_len, write_array};
use crate::error::{Error, Result};
use crate::fe::{strain_at_point, Voigt};
use crate::hfm::{Model, TransientResult};
use crate::loading::LoadingSchedule;
use crate::material::{Law, MaterialState};
use crate::mesh::Mesh;
use crate::par;
use crate::textio::Lines;

/// Assign contiguous element-index blocks of near-equal size to subdomains 1..=n_d.
pub fn partition_mesh(mesh: &mut Mesh, n_d: usize) -> Result<()> {
    let ne = mesh.n_elements();
    if n_d == 0 || n_d > ne {
        return Err(Error::Validation(format!("subdomain count {n_d} outside 1..={ne}")));
    }
    mesh.subdomain_of_element = (0..ne).map(|e| 1 + e * n_d / ne).collect();
    mesh.n_subdomains = n_d;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Builtin,
    External,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Builtin => "builtin",
            Provenance::External => "external",
        }
    }
}

/// Dual history at the integration points, one entry per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    pub stresses: Vec<Vec<Voigt>>,
    pub states: Vec<Vec<MaterialState>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub times: Vec<f64>,
    pub displacements: Vec<Vec<f64>>,
    pub duals: Option<Duals>,
    pub provenance: Provenance,
}

impl SnapshotSet {
    pub fn from_transient(result: &TransientResult) -> Self {
        SnapshotSet {
            times: result.times(),
            displacements: result.displacements.clone(),
            duals: Some(Duals {
                stresses: result.stresses.clone(),
                states: result.states.clone(),
            }),
            provenance: Provenance::Builtin,
        }
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn n_dofs(&self) -> usize {
        self.displacements.first().map_or(0, Vec::len)
    }

    /// Keep the first `n` snapshots.
    pub fn truncated(&self, n: usize) -> SnapshotSet {
        SnapshotSet {
            times: self.times[..n].to_vec(),
            displacements: self.displacements[..n].to_vec(),
            duals: self.duals.as_ref().map(|d| Duals {
                stresses: d.stresses[..n].to_vec(),
                states: d.states[..n].to_vec(),
            }),
            provenance: self.provenance,
        }
    }

    /// Same displacements with duals dropped, as an external producer would supply.
    pub fn displacements_only(&self) -> SnapshotSet {
        SnapshotSet {
            times: self.times.clone(),
            displacements: self.displacements.clone(),
            duals: None,
            provenance: Provenance::External,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Validation("snapshot set is empty".into()));
        }
        if self.times.len() != self.len() {
            return Err(Error::dim("snapshot times", self.len(), self.times.len()));
        }
        let n = self.n_dofs();
        for (s, u) in self.displacements.iter().enumerate() {
            if u.len() != n {
                return Err(Error::dim(format!("snapshot {}", s + 1), n, u.len()));
            }
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("snapshot times are not monotone".into()));
        }
        Ok(())
    }
}

/// File names and paths referenced by a `HRSNAP` manifest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotManifest {
    pub mesh: Option<PathBuf>,
    pub law: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
}

/// Write `dir/snapshots.hrsnap` plus one array file per snapshot (and per
/// dual field when present).
pub fn export_snapshots(set: &SnapshotSet, dir: &Path, refs: &SnapshotManifest) -> Result<PathBuf> {
    set.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = String::from("HRSNAP 1\n");
    for (key, p) in [("mesh", &refs.mesh), ("law", &refs.law), ("schedule", &refs.schedule)] {
        if let Some(p) = p {
            let _ = writeln!(out, "{key} {}", p.display());
        }
    }
    let _ = writeln!(out, "provenance {}", set.provenance.as_str());
    let _ = writeln!(out, "dofs {}", set.n_dofs());
    let _ = writeln!(out, "steps {}", set.len());
    for (s, u) in set.displacements.iter().enumerate() {
        let name = format!("u_{:05}.bin", s + 1);
        write_array(&dir.join(&name), u)?;
        let _ = writeln!(out, "step {} {:e} {name}", s + 1, set.times[s]);
    }
    if let Some(d) = &set.duals {
        for s in 0..set.len() {
            let sig = format!("sigma_{:05}.bin", s + 1);
            let st = format!("state_{:05}.bin", s + 1);
            let flat: Vec<f64> = d.stresses[s].iter().flatten().copied().collect();
            write_array(&dir.join(&sig), &flat)?;
            let flat: Vec<f64> = d.states[s]
                .iter()
                .flat_map(|m| m.plastic_strain.iter().copied().chain([m.p]))
                .collect();
            write_array(&dir.join(&st), &flat)?;
            let _ = writeln!(out, "duals {} {sig} {st}", s + 1);
        }
    }
    let path = dir.join("snapshots.hrsnap");
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Read a manifest and its arrays. `n_dofs` and `n_points`, when given, are
/// checked against every array.
pub fn import_snapshots(
    manifest: &Path,
    n_dofs: Option<usize>,
    n_points: Option<usize>,
) -> Result<(SnapshotSet, SnapshotManifest)> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let name = manifest.display().to_string();
    let mut lines = Lines::new(&text, &name);
    lines.expect_header("HRSNAP", "1")?;
    let mut refs = SnapshotManifest::default();
    let mut provenance = Provenance::External;
    let mut declared = None;
    let mut dofs = n_dofs;
    let mut times = Vec::new();
    let mut displacements: Vec<Vec<f64>> = Vec::new();
    let mut dual_files: Vec<(usize, PathBuf, PathBuf)> = Vec::new();
    while let Some((ln, toks)) = lines.next_tokens() {
        match toks[0] {
            "mesh" | "law" | "schedule" => {
                let p: String = lines.parse_tok(ln, &toks, 1)?;
                let slot = match toks[0] {
                    "mesh" => &mut refs.mesh,
                    "law" => &mut refs.law,
                    _ => &mut refs.schedule,
                };
                *slot = Some(PathBuf::from(p));
            }
            "provenance" => {
                provenance = match toks.get(1).copied() {
                    Some("builtin") => Provenance::Builtin,
                    Some("external") => Provenance::External,
                    _ => return Err(lines.err(ln, "provenance must be builtin or external")),
                }
            }
            "dofs" => {
                let n: usize = lines.parse_tok(ln, &toks, 1)?;
                if let Some(expected) = dofs {
                    if expected != n {
                        return Err(lines.err(ln, format!("manifest declares {n} dofs, model has {expected}")));
                    }
                }
                dofs = Some(n);
            }
            "steps" => declared = Some(lines.parse_tok::<usize>(ln, &toks, 1)?),
            "step" => {
                let idx: usize = lines.parse_tok(ln, &toks, 1)?;
                if idx != displacements.len() + 1 {
                    return Err(lines.err(ln, format!("missing step {}: found step {idx}", displacements.len() + 1)));
                }
                let time: f64 = lines.parse_tok(ln, &toks, 2)?;
                let file: String = lines.parse_tok(ln, &toks, 3)?;
                let path = base.join(file);
                let u = match dofs {
                    Some(n) => read_array_len(&path, n)?,
                    None => {
                        let u = crate::arrays::read_array(&path)?;
                        dofs = Some(u.len());
                        u
                    }
                };
                times.push(time);
                displacements.push(u);
            }
            "duals" => {
                let idx: usize = lines.parse_tok(ln, &toks, 1)?;
                let sig: String = lines.parse_tok(ln, &toks, 2)?;
                let st: String = lines.parse_tok(ln, &toks, 3)?;
                dual_files.push((idx, base.join(sig), base.join(st)));
            }
            other => return Err(lines.err(ln, format!("unknown keyword `{other}`"))),
        }
    }
    if let Some(n) = declared {
        if n != displacements.len() {
            return Err(Error::parse(&name, 0, format!("declared {n} steps, found {}", displacements.len())));
        }
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::parse(&name, 0, "step times are not monotone"));
    }
    let duals = if dual_files.is_empty() {
        None
    } else {
        if dual_files.len() != displacements.len() {
            return Err(Error::parse(&name, 0, "duals must be given for every step or none"));
        }
        let mut stresses = Vec::new();
        let mut states = Vec::new();
        for (i, (idx, sig, st)) in dual_files.iter().enumerate() {
            if *idx != i + 1 {
                return Err(Error::parse(&name, 0, format!("duals out of order at step {idx}")));
            }
            let s = crate::arrays::read_array(sig)?;
            let m = crate::arrays::read_array(st)?;
            let np = n_points.unwrap_or(s.len() / 6);
            if s.len() != 6 * np {
                return Err(Error::dim(sig.display().to_string(), 6 * np, s.len()));
            }
            if m.len() != 7 * np {
                return Err(Error::dim(st.display().to_string(), 7 * np, m.len()));
            }
            stresses.push(s.chunks_exact(6).map(|c| std::array::from_fn(|j| c[j])).collect());
            states.push(
                m.chunks_exact(7)
                    .map(|c| MaterialState {
                        plastic_strain: std::array::from_fn(|j| c[j]),
                        p: c[6],
                    })
                    .collect(),
            );
        }
        Some(Duals { stresses, states })
    };
    let set = SnapshotSet {
        times,
        displacements,
        duals,
        provenance,
    };
    set.validate()?;
    Ok((set, refs))
}

/// Integrate the law along the strain history of every integration point,
/// starting from the virgin state at t = 0. Snapshot `s` is global schedule
/// step `s`.
pub fn recompute_duals<L: Law + ?Sized>(
    model: &Model,
    law: &L,
    schedule: &LoadingSchedule,
    set: &SnapshotSet,
) -> Result<SnapshotSet> {
    set.validate()?;
    if set.n_dofs() != model.n_dofs() {
        return Err(Error::dim("snapshot displacement", model.n_dofs(), set.n_dofs()));
    }
    let m = schedule.steps_per_cycle();
    let mut temps = Vec::with_capacity(m);
    for s in 0..m {
        temps.push(schedule.steps[s].temperature.at_points(&model.mesh, &model.ips)?);
    }
    let mut states = vec![MaterialState::default(); model.n_points()];
    let mut all_states = Vec::with_capacity(set.len());
    let mut all_stresses = Vec::with_capacity(set.len());
    let mut prev_time = 0.0;
    for (s, u) in set.displacements.iter().enumerate() {
        let r = schedule.step_ref(s);
        if (r.time - set.times[s]).abs() > 1e-9 * r.time.abs().max(1.0) {
            return Err(Error::Validation(format!(
                "snapshot {} time {} does not match schedule time {}",
                s + 1,
                set.times[s],
                r.time
            )));
        }
        let dt = set.times[s] - prev_time;
        prev_time = set.times[s];
        let t = &temps[r.step];
        let responses = par::try_map_range(model.n_points(), |k| {
            let eps = strain_at_point(&model.mesh, &model.ips, &model.dofs, u, k);
            law.evaluate(&states[k], &eps, t[k], dt).map_err(|msg| Error::LawFailure {
                point: k,
                msg: format!("snapshot {}: {msg}", s + 1),
            })
        })?;
        let (sig, st): (Vec<Voigt>, Vec<MaterialState>) = responses.into_iter().map(|r| (r.stress, r.state)).unzip();
        states.clone_from(&st);
        all_states.push(st);
        all_stresses.push(sig);
    }
    Ok(SnapshotSet {
        duals: Some(Duals {
            stresses: all_stresses,
            states: all_states,
        }),
        ..set.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{bar_mesh, BarSpec, ElementOrder};

    #[test]
    fn partition_blocks() {
        let mut m = bar_mesh(&BarSpec {
            length: 4.0,
            width: 1.0,
            height: 1.0,
            nx: 4,
            ny: 1,
            nz: 1,
            order: ElementOrder::Linear,
        });
        let ne = m.n_elements();
        partition_mesh(&mut m, 1).unwrap();
        assert!(m.subdomain_of_element.iter().all(|&i| i == 1));
        partition_mesh(&mut m, ne).unwrap();
        assert_eq!(m.subdomain_of_element, (1..=ne).collect::<Vec<_>>());
        partition_mesh(&mut m, 5).unwrap();
        m.validate().unwrap();
        let sizes: Vec<usize> = (1..=5).map(|l| m.elements_of_subdomain(l).len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), ne);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(m.subdomain_of_element.windows(2).all(|w| w[1] >= w[0]));
        assert!(partition_mesh(&mut m, 0).is_err());
        assert!(partition_mesh(&mut m, ne + 1).is_err());
    }
}
