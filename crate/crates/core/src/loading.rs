//! Cyclic loading schedules and the `HRSCHED` text format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::arrays::{read_array, write_array};
use crate::error::{Error, Result};
use crate::fe::{BodyForce, IntegrationPointSet};
use crate::mesh::Mesh;
use crate::textio::Lines;

#[derive(Debug, Clone, PartialEq)]
pub enum TemperatureField {
    Uniform(f64),
    /// `t0 + gradient . x`
    Linear { t0: f64, gradient: [f64; 3] },
    /// One value per mesh node, with the array file it came from.
    Nodal { values: Vec<f64>, file: Option<PathBuf> },
}

impl TemperatureField {
    /// Temperature at every integration point.
    pub fn at_points(&self, mesh: &Mesh, ips: &IntegrationPointSet) -> Result<Vec<f64>> {
        Ok(match self {
            TemperatureField::Uniform(t) => vec![*t; ips.len()],
            TemperatureField::Linear { t0, gradient } => ips
                .position
                .iter()
                .map(|x| t0 + gradient[0] * x[0] + gradient[1] * x[1] + gradient[2] * x[2])
                .collect(),
            TemperatureField::Nodal { values, .. } => {
                if values.len() != mesh.n_nodes() {
                    return Err(Error::dim("nodal temperature field", mesh.n_nodes(), values.len()));
                }
                (0..ips.len()).map(|k| ips.interpolate(mesh, k, values)).collect()
            }
        })
    }

    /// Temperature at a subset of integration points.
    pub fn at_subset(&self, mesh: &Mesh, ips: &IntegrationPointSet, points: &[usize]) -> Result<Vec<f64>> {
        Ok(match self {
            TemperatureField::Uniform(t) => vec![*t; points.len()],
            TemperatureField::Linear { t0, gradient } => points
                .iter()
                .map(|&k| {
                    let x = ips.position[k];
                    t0 + gradient[0] * x[0] + gradient[1] * x[1] + gradient[2] * x[2]
                })
                .collect(),
            TemperatureField::Nodal { values, .. } => {
                if values.len() != mesh.n_nodes() {
                    return Err(Error::dim("nodal temperature field", mesh.n_nodes(), values.len()));
                }
                points.iter().map(|&k| ips.interpolate(mesh, k, values)).collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadStep {
    /// Time within the cycle.
    pub time: f64,
    pub body: Vec<BodyForce>,
    pub tractions: Vec<(i64, [f64; 3])>,
    pub temperature: TemperatureField,
}

/// One loading cycle of `steps`, repeated `cycles` times with the given period.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingSchedule {
    pub steps: Vec<LoadStep>,
    pub period: f64,
    pub cycles: usize,
}

/// Position of a global step in the cyclic schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRef {
    pub cycle: usize,
    pub step: usize,
    pub time: f64,
    pub dt: f64,
}

/// Step reference for in-cycle step times repeated with `period`; the run
/// starts at time 0.
pub fn cyclic_step_ref(times: &[f64], period: f64, g: usize) -> StepRef {
    let m = times.len();
    let (cycle, step) = (g / m, g % m);
    let time = cycle as f64 * period + times[step];
    let prev = if g == 0 {
        0.0
    } else {
        let (pc, ps) = ((g - 1) / m, (g - 1) % m);
        pc as f64 * period + times[ps]
    };
    StepRef {
        cycle,
        step,
        time,
        dt: time - prev,
    }
}

impl LoadingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Validation("schedule has no steps".into()));
        }
        if self.steps[0].time <= 0.0 {
            return Err(Error::Validation("first step time must be positive".into()));
        }
        if self.steps.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::Validation("step times must be strictly increasing".into()));
        }
        let last = self.steps[self.steps.len() - 1].time;
        if self.period < last {
            return Err(Error::Validation(format!("period {} shorter than last step time {last}", self.period)));
        }
        if self.cycles == 0 {
            return Err(Error::Validation("cycle count must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_cycle(&self) -> usize {
        self.steps.len()
    }

    pub fn total_steps(&self, cycles: usize) -> usize {
        cycles * self.steps.len()
    }

    /// Cycle, local step, absolute time and time increment of global step `g`.
    pub fn step_ref(&self, g: usize) -> StepRef {
        cyclic_step_ref(&self.step_times(), self.period, g)
    }

    pub fn step_times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time).collect()
    }

    pub fn read(path: &Path) -> Result<LoadingSchedule> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        LoadingSchedule::parse(&text, &path.display().to_string(), base)
    }

    /// Parse a schedule; relative temperature-file paths resolve against `base`.
    pub fn parse(text: &str, name: &str, base: &Path) -> Result<LoadingSchedule> {
        let mut lines = Lines::new(text, name);
        lines.expect_header("HRSCHED", "1")?;
        let mut period = None;
        let mut cycles = 1;
        let mut declared = None;
        let mut steps: Vec<LoadStep> = Vec::new();
        while let Some((ln, toks)) = lines.next_tokens() {
            let vec3 = |from: usize| -> Result<[f64; 3]> {
                Ok([
                    lines.parse_tok(ln, &toks, from)?,
                    lines.parse_tok(ln, &toks, from + 1)?,
                    lines.parse_tok(ln, &toks, from + 2)?,
                ])
            };
            match toks[0] {
                "period" => period = Some(lines.parse_tok::<f64>(ln, &toks, 1)?),
                "cycles" => cycles = lines.parse_tok(ln, &toks, 1)?,
                "steps" => declared = Some(lines.parse_tok::<usize>(ln, &toks, 1)?),
                "step" => {
                    let idx: usize = lines.parse_tok(ln, &toks, 1)?;
                    if idx != steps.len() + 1 {
                        return Err(lines.err(ln, format!("expected step {}, found {idx}", steps.len() + 1)));
                    }
                    steps.push(LoadStep {
                        time: lines.parse_tok(ln, &toks, 2)?,
                        body: Vec::new(),
                        tractions: Vec::new(),
                        temperature: TemperatureField::Uniform(20.0),
                    });
                }
                key => {
                    let Some(step) = steps.last_mut() else {
                        return Err(lines.err(ln, format!("`{key}` before the first step")));
                    };
                    match key {
                        "body" => step.body.push(BodyForce::Constant(vec3(1)?)),
                        "centrifugal" => step.body.push(BodyForce::Centrifugal {
                            density: lines.parse_tok(ln, &toks, 1)?,
                            omega: lines.parse_tok(ln, &toks, 2)?,
                            axis: vec3(3)?,
                            point: vec3(6)?,
                        }),
                        "traction" => step.tractions.push((lines.parse_tok(ln, &toks, 1)?, vec3(2)?)),
                        "temperature" => {
                            let kind: String = lines.parse_tok(ln, &toks, 1)?;
                            step.temperature = match kind.as_str() {
                                "uniform" => TemperatureField::Uniform(lines.parse_tok(ln, &toks, 2)?),
                                "linear" => TemperatureField::Linear {
                                    t0: lines.parse_tok(ln, &toks, 2)?,
                                    gradient: vec3(3)?,
                                },
                                "file" => {
                                    let rel: String = lines.parse_tok(ln, &toks, 2)?;
                                    let file = PathBuf::from(rel);
                                    let values = read_array(&base.join(&file))?;
                                    TemperatureField::Nodal {
                                        values,
                                        file: Some(file),
                                    }
                                }
                                other => return Err(lines.err(ln, format!("unknown temperature kind `{other}`"))),
                            };
                        }
                        other => return Err(lines.err(ln, format!("unknown keyword `{other}`"))),
                    }
                }
            }
        }
        if let Some(n) = declared {
            if n != steps.len() {
                return Err(Error::parse(name, 0, format!("declared {n} steps, found {}", steps.len())));
            }
        }
        let last = steps.last().map(|s| s.time).unwrap_or(0.0);
        let schedule = LoadingSchedule {
            steps,
            period: period.unwrap_or(last),
            cycles,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Text form. Nodal temperature fields are written next to `path` as
    /// array files and referenced relatively.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("schedule");
        let mut out = String::from("HRSCHED 1\n");
        let _ = writeln!(out, "period {}", self.period);
        let _ = writeln!(out, "cycles {}", self.cycles);
        let _ = writeln!(out, "steps {}", self.steps.len());
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "step {} {}", i + 1, s.time);
            for b in &s.body {
                match b {
                    BodyForce::Constant(f) => {
                        let _ = writeln!(out, "  body {} {} {}", f[0], f[1], f[2]);
                    }
                    BodyForce::Centrifugal {
                        density,
                        omega,
                        axis,
                        point,
                    } => {
                        let _ = writeln!(
                            out,
                            "  centrifugal {density} {omega} {} {} {} {} {} {}",
                            axis[0], axis[1], axis[2], point[0], point[1], point[2]
                        );
                    }
                }
            }
            for (tag, t) in &s.tractions {
                let _ = writeln!(out, "  traction {tag} {} {} {}", t[0], t[1], t[2]);
            }
            match &s.temperature {
                TemperatureField::Uniform(t) => {
                    let _ = writeln!(out, "  temperature uniform {t}");
                }
                TemperatureField::Linear { t0, gradient } => {
                    let _ = writeln!(
                        out,
                        "  temperature linear {t0} {} {} {}",
                        gradient[0], gradient[1], gradient[2]
                    );
                }
                TemperatureField::Nodal { values, file } => {
                    let rel = file
                        .clone()
                        .unwrap_or_else(|| PathBuf::from(format!("{stem}_T{:04}.bin", i + 1)));
                    write_array(&dir.join(&rel), values)?;
                    let _ = writeln!(out, "  temperature file {}", rel.display());
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Demo thermo-mechanical cycle for a bar along x: the loaded end is pulled
/// with a trapezoidal traction history while a temperature gradient rising
/// towards the loaded end heats up and cools down.
pub fn demo_bar_schedule(length: f64, peak_traction: f64, hot: f64, loaded_tag: i64) -> LoadingSchedule {
    let m = 20;
    let dt = 2.0;
    let shape = |s: usize| -> f64 {
        // ramp up over 6 steps, hold 6, ramp down over 8
        match s {
            1..=6 => s as f64 / 6.0,
            7..=12 => 1.0,
            _ => (20 - s) as f64 / 8.0,
        }
    };
    let steps = (1..=m)
        .map(|s| {
            let a = shape(s);
            LoadStep {
                time: s as f64 * dt,
                body: Vec::new(),
                tractions: vec![(loaded_tag, [peak_traction * a, 0.0, 0.0])],
                temperature: TemperatureField::Linear {
                    t0: 20.0,
                    gradient: [(hot - 20.0) * a / length, 0.0, 0.0],
                },
            }
        })
        .collect();
    LoadingSchedule {
        steps,
        period: m as f64 * dt,
        cycles: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_step_references() {
        let s = demo_bar_schedule(100.0, 300.0, 600.0, 2);
        s.validate().unwrap();
        let r = s.step_ref(0);
        assert_eq!((r.cycle, r.step, r.time, r.dt), (0, 0, 2.0, 2.0));
        let r = s.step_ref(20);
        assert_eq!((r.cycle, r.step, r.time, r.dt), (1, 0, 42.0, 2.0));
        assert_eq!(s.step_ref(39).time, 80.0);
        assert_eq!(s.steps[19].tractions[0].1[0], 0.0);
    }

    #[test]
    fn text_round_trip_with_nodal_field() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = demo_bar_schedule(10.0, 100.0, 300.0, 2);
        s.steps[3].temperature = TemperatureField::Nodal {
            values: vec![20.0, 30.5, 41.25],
            file: None,
        };
        s.steps[4].body.push(BodyForce::Centrifugal {
            density: 8e-9,
            omega: 1000.0,
            axis: [0.0, 0.0, 1.0],
            point: [0.0; 3],
        });
        let path = dir.path().join("sched.txt");
        s.write(&path).unwrap();
        let back = LoadingSchedule::read(&path).unwrap();
        match &back.steps[3].temperature {
            TemperatureField::Nodal { values, .. } => assert_eq!(values, &vec![20.0, 30.5, 41.25]),
            other => panic!("{other:?}"),
        }
        assert_eq!(back.steps[4], s.steps[4]);
        assert_eq!(back.period, s.period);
    }

    #[test]
    fn rejects_non_monotone_times() {
        let text = "HRSCHED 1\nstep 1 2.0\nstep 2 1.0\n";
        assert!(LoadingSchedule::parse(text, "x", Path::new(".")).is_err());
    }
}
