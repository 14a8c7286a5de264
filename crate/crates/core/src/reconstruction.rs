//! Gappy-POD reconstruction of dual fields from their values at a few
//! integration points of each subdomain.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::arrays::{read_array, write_array};
use crate::error::{Error, Result};
use crate::fe::{IntegrationPointSet, Voigt};
use crate::hyperreduction::ReducedQuadrature;
use crate::linalg::qr_column_pivoting;
use crate::material::MaterialState;
use crate::par;
use crate::pod::snapshot_pod;
use crate::fe::LocalGram;
use crate::textio::Lines;

pub const DEFAULT_EPS_GAPPY: f64 = 1e-7;

/// A scalar dual quantity known at integration points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DualField {
    /// Cumulated plasticity.
    P,
    /// Stress component (Voigt index).
    Stress(usize),
    /// Plastic strain component (Voigt index).
    PlasticStrain(usize),
}

const VOIGT: [&str; 6] = ["11", "22", "33", "12", "23", "13"];

impl DualField {
    pub fn name(self) -> String {
        match self {
            DualField::P => "p".into(),
            DualField::Stress(c) => format!("s{}", VOIGT[c]),
            DualField::PlasticStrain(c) => format!("ep{}", VOIGT[c]),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "p" {
            return Ok(DualField::P);
        }
        let comp = |tail: &str| VOIGT.iter().position(|v| *v == tail);
        if let Some(c) = s.strip_prefix("ep").and_then(comp) {
            return Ok(DualField::PlasticStrain(c));
        }
        if let Some(c) = s.strip_prefix('s').and_then(comp) {
            return Ok(DualField::Stress(c));
        }
        Err(Error::Validation(format!("unknown dual field `{s}` (expected p, sIJ or epIJ)")))
    }

    /// Value at one point from the law output.
    pub fn value(self, stress: &Voigt, state: &MaterialState) -> f64 {
        match self {
            DualField::P => state.p,
            DualField::Stress(c) => stress[c],
            DualField::PlasticStrain(c) => state.plastic_strain[c],
        }
    }

    /// Field over all points for one snapshot.
    pub fn sample(self, stresses: &[Voigt], states: &[MaterialState]) -> Vec<f64> {
        stresses.iter().zip(states).map(|(s, st)| self.value(s, st)).collect()
    }
}

/// Dual POD modes of one subdomain over its integration points, orthonormal
/// for `sum_k w_k a_k b_k`. All-zero histories give no modes.
pub fn dual_pod(snapshots: &[Vec<f64>], weights: &[f64], eps: f64) -> Result<Vec<Vec<f64>>> {
    if snapshots.is_empty() {
        return Err(Error::Validation("no dual snapshots".into()));
    }
    if snapshots.iter().all(|s| s.iter().all(|&v| v == 0.0)) {
        return Ok(Vec::new());
    }
    let w = LocalGram::diagonal(weights);
    Ok(snapshot_pod(snapshots, std::slice::from_ref(&w), eps)?.modes)
}

/// Point indices (into the mode vectors) chosen by QR with column pivoting
/// on the modes stacked as rows.
pub fn qdeim_indices(modes: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = modes.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let len = modes[0].len();
    if n > len {
        return Err(Error::Validation(format!("{n} modes over only {len} points")));
    }
    let a = DMatrix::from_fn(n, len, |i, k| modes[i][k]);
    let (perm, diag) = qr_column_pivoting(&a);
    let scale = diag.first().copied().unwrap_or(0.0);
    if diag.iter().any(|&d| !(d > 1e-13 * scale)) {
        return Err(Error::numerical("QDEIM", "dual modes are rank deficient"));
    }
    let idx = perm[..n].to_vec();
    let det = DMatrix::from_fn(n, n, |i, j| modes[i][idx[j]]).determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::numerical("QDEIM", "singular sampled submatrix"));
    }
    Ok(idx)
}

/// Gappy operator of one field over one subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct GappyOperator {
    pub field: DualField,
    pub subdomain: usize,
    /// Global ids of the subdomain's points, increasing.
    pub points: Vec<usize>,
    /// `modes[i][c]` is mode i at `points[c]`.
    pub modes: Vec<Vec<f64>>,
    /// Mask as global point ids: QDEIM points, then the remaining local
    /// quadrature points.
    pub mask: Vec<usize>,
    /// Number of QDEIM points at the head of `mask`.
    pub n_qdeim: usize,
    /// `B[k][i] = psi_i(x_{j_k})`.
    pub sampled: DMatrix<f64>,
    /// `M = B^T B`.
    pub gram: DMatrix<f64>,
}

impl GappyOperator {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// 2-norm condition number of M.
    pub fn condition(&self) -> f64 {
        if self.n_modes() == 0 {
            return 1.0;
        }
        let sv = self.gram.singular_values();
        sv.max() / sv.min()
    }
}

/// Mask = QDEIM points completed by the local quadrature points, then the
/// Gram matrix of the sampled modes (checked SPD).
pub fn build_gappy_operator(
    field: DualField,
    subdomain: usize,
    points: Vec<usize>,
    modes: Vec<Vec<f64>>,
    quadrature: &ReducedQuadrature,
) -> Result<GappyOperator> {
    let qdeim = qdeim_indices(&modes)?;
    let mut mask: Vec<usize> = qdeim.iter().map(|&c| points[c]).collect();
    let n_qdeim = mask.len();
    for (&p, &l) in quadrature.points.iter().zip(&quadrature.subdomain) {
        if l == subdomain && !mask.contains(&p) {
            if points.binary_search(&p).is_err() {
                return Err(Error::Validation(format!("quadrature point {p} is not in subdomain {subdomain}")));
            }
            mask.push(p);
        }
    }
    let col = |p: usize| points.binary_search(&p).expect("mask point in subdomain");
    let sampled = DMatrix::from_fn(mask.len(), modes.len(), |k, i| modes[i][col(mask[k])]);
    let gram = sampled.transpose() * &sampled;
    if !modes.is_empty() && gram.clone().cholesky().is_none() {
        return Err(Error::numerical("Gappy", format!("subdomain {subdomain}: Gram matrix of {} is not SPD", field.name())));
    }
    Ok(GappyOperator { field, subdomain, points, modes, mask, n_qdeim, sampled, gram })
}

/// Reconstruct the subdomain field from its values at `op.mask`: the least
/// squares fit of the sampled modes, expanded over the subdomain.
pub fn gappy_reconstruct(op: &GappyOperator, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != op.mask.len() {
        return Err(Error::dim("Gappy mask values", op.mask.len(), values.len()));
    }
    let mut out = vec![0.0; op.points.len()];
    if op.n_modes() == 0 {
        return Ok(out);
    }
    let w = gappy_coefficients(op, values)?;
    for (m, wi) in op.modes.iter().zip(w.iter()) {
        for (o, v) in out.iter_mut().zip(m) {
            *o += wi * v;
        }
    }
    Ok(out)
}

/// Mode coefficients `w` minimizing `||B w - values||`.
pub fn gappy_coefficients(op: &GappyOperator, values: &[f64]) -> Result<DVector<f64>> {
    let b = DVector::from_column_slice(values);
    let n = op.n_modes();
    // Householder QR of B: same minimizer as M w = B^T b, without squaring
    // the conditioning.
    let qr = op.sampled.clone().qr();
    let mut rhs = b;
    qr.q_tr_mul(&mut rhs);
    qr.r()
        .solve_upper_triangular(&rhs.rows(0, n).into_owned())
        .ok_or_else(|| Error::numerical("Gappy", format!("subdomain {}: singular sampled modes", op.subdomain)))
}

/// Gappy operators of one field, one per subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct GappyField {
    pub field: DualField,
    pub operators: Vec<GappyOperator>,
}

impl GappyField {
    /// All mask points of all subdomains.
    pub fn mask(&self) -> Vec<usize> {
        self.operators.iter().flat_map(|o| o.mask.iter().copied()).collect()
    }

    /// Full field over all `n_points` integration points from a lookup of
    /// mask values.
    pub fn reconstruct(&self, n_points: usize, value_at: impl Fn(usize) -> f64 + Sync) -> Result<Vec<f64>> {
        let parts = par::try_map_range(self.operators.len(), |i| {
            let op = &self.operators[i];
            let vals: Vec<f64> = op.mask.iter().map(|&p| value_at(p)).collect();
            gappy_reconstruct(op, &vals)
        })?;
        let mut out = vec![0.0; n_points];
        for (op, part) in self.operators.iter().zip(parts) {
            for (&p, v) in op.points.iter().zip(part) {
                out[p] = v;
            }
        }
        Ok(out)
    }
}

/// Offline stage for one field: dual POD, QDEIM and the Gappy operator in
/// every subdomain. `snapshots[s][k]` is the field at point k of snapshot s.
pub fn build_gappy_field(
    field: DualField,
    ips: &IntegrationPointSet,
    n_d: usize,
    snapshots: &[Vec<f64>],
    quadrature: &ReducedQuadrature,
    eps: f64,
) -> Result<GappyField> {
    let operators = par::try_map_range(n_d, |i| {
        let l = i + 1;
        let points = ips.points_of_subdomain(l);
        let local: Vec<Vec<f64>> = snapshots.iter().map(|s| points.iter().map(|&k| s[k]).collect()).collect();
        let weights: Vec<f64> = points.iter().map(|&k| ips.weight[k]).collect();
        let modes = dual_pod(&local, &weights, eps)?;
        build_gappy_operator(field, l, points, modes, quadrature)
    })?;
    Ok(GappyField { field, operators })
}

/// Field snapshots `[snapshot][point]` from stored duals.
pub fn field_snapshots(field: DualField, stresses: &[Vec<Voigt>], states: &[Vec<MaterialState>]) -> Vec<Vec<f64>> {
    stresses.iter().zip(states).map(|(s, st)| field.sample(s, st)).collect()
}

impl GappyField {
    /// Write `dir/<field>.hrgappy` with one array per subdomain mode.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let name = self.field.name();
        let mut s = String::from("HRGAPPY 1\n");
        let _ = writeln!(s, "field {name}");
        let _ = writeln!(s, "subdomains {}", self.operators.len());
        for op in &self.operators {
            let pts = format!("{name}_d{}_points.bin", op.subdomain);
            write_array(&dir.join(&pts), &op.points.iter().map(|&p| p as f64).collect::<Vec<_>>())?;
            let mask: Vec<String> = op.mask.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(s, "subdomain {} modes {} qdeim {} points {pts}", op.subdomain, op.n_modes(), op.n_qdeim);
            let _ = writeln!(s, "mask {} {}", op.mask.len(), mask.join(" "));
            for (i, m) in op.modes.iter().enumerate() {
                let f = format!("{name}_d{}_mode_{:04}.bin", op.subdomain, i + 1);
                write_array(&dir.join(&f), m)?;
                let _ = writeln!(s, "mode {f}");
            }
        }
        let path = dir.join(format!("{name}.hrgappy"));
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let name = path.display().to_string();
        let mut lines = Lines::new(&text, &name);
        lines.expect_header("HRGAPPY", "1")?;
        let (ln, toks) = lines.require_tokens("field")?;
        if toks.len() != 2 || toks[0] != "field" {
            return Err(lines.err(ln, "expected `field <name>`"));
        }
        let field = DualField::parse(toks[1])?;
        let (ln, toks) = lines.require_tokens("subdomains")?;
        if toks.len() != 2 || toks[0] != "subdomains" {
            return Err(lines.err(ln, "expected `subdomains <count>`"));
        }
        let n_d: usize = lines.parse_tok(ln, &toks, 1)?;
        let mut operators = Vec::with_capacity(n_d);
        for _ in 0..n_d {
            let (ln, toks) = lines.require_tokens("subdomain")?;
            if toks.len() != 8 || toks[0] != "subdomain" || toks[2] != "modes" || toks[4] != "qdeim" || toks[6] != "points" {
                return Err(lines.err(ln, "expected `subdomain <l> modes <n> qdeim <n> points <file>`"));
            }
            let l: usize = lines.parse_tok(ln, &toks, 1)?;
            let n: usize = lines.parse_tok(ln, &toks, 3)?;
            let n_qdeim: usize = lines.parse_tok(ln, &toks, 5)?;
            let points: Vec<usize> = read_array(&dir.join(toks[7]))?.iter().map(|&v| v as usize).collect();
            let (ln, toks) = lines.require_tokens("mask")?;
            if toks.first() != Some(&"mask") {
                return Err(lines.err(ln, "expected `mask <count> <ids...>`"));
            }
            let m: usize = lines.parse_tok(ln, &toks, 1)?;
            if toks.len() != m + 2 {
                return Err(lines.err(ln, format!("mask lists {} ids, header says {m}", toks.len() - 2)));
            }
            let mask: Vec<usize> = (0..m).map(|i| lines.parse_tok(ln, &toks, i + 2)).collect::<Result<_>>()?;
            let mut modes = Vec::with_capacity(n);
            for _ in 0..n {
                let (ln, toks) = lines.require_tokens("mode")?;
                if toks.len() != 2 || toks[0] != "mode" {
                    return Err(lines.err(ln, "expected `mode <file>`"));
                }
                let v = read_array(&dir.join(toks[1]))?;
                if v.len() != points.len() {
                    return Err(Error::dim(format!("mode file {}", toks[1]), points.len(), v.len()));
                }
                modes.push(v);
            }
            let mut col = Vec::with_capacity(m);
            for &p in &mask {
                col.push(points.binary_search(&p).map_err(|_| lines.err(ln, format!("mask point {p} not in subdomain {l}")))?);
            }
            let sampled = DMatrix::from_fn(m, n, |k, i| modes[i][col[k]]);
            let gram = sampled.transpose() * &sampled;
            operators.push(GappyOperator { field, subdomain: l, points, modes, mask, n_qdeim, sampled, gram });
        }
        Ok(GappyField { field, operators })
    }
}
