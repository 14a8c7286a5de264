//! Reduced quadrature by nonnegative orthogonal matching pursuit on the
//! per-subdomain fitting system `J w = b`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fe::{strain_at_points, DofMap, IntegrationPointSet, Voigt};
use crate::mesh::Mesh;
use crate::par;
use crate::pod::ReducedBasis;
use crate::textio::Lines;

pub const DEFAULT_EPS_OP: f64 = 1e-5;

/// Mode strains at every integration point, `[mode][point]`.
pub fn mode_strains(mesh: &Mesh, ips: &IntegrationPointSet, dofs: &DofMap, basis: &ReducedBasis) -> Result<Vec<Vec<Voigt>>> {
    basis.modes.iter().map(|m| strain_at_points(mesh, ips, dofs, m)).collect()
}

fn contract(a: &Voigt, b: &Voigt) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fitting system of one subdomain. Row `q = s * n + i` integrates
/// `sigma(u_s) : eps(psi_i)`; column `c` is the candidate point `points[c]`.
#[derive(Debug, Clone)]
pub struct QuadratureSystem {
    pub subdomain: usize,
    pub points: Vec<usize>,
    pub n_modes: usize,
    pub n_snapshots: usize,
    /// Column-major storage: `columns[c][q]`.
    pub columns: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl QuadratureSystem {
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    /// `J_Z w` for column subset `z`.
    pub fn apply(&self, z: &[usize], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        for (&c, &wc) in z.iter().zip(w) {
            for (o, j) in out.iter_mut().zip(&self.columns[c]) {
                *o += wc * j;
            }
        }
        out
    }

    pub fn submatrix(&self, z: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), z.len(), |q, c| self.columns[z[c]][q])
    }

    pub fn b_norm(&self) -> f64 {
        norm(&self.b)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fitting system for subdomain `l` from snapshot stresses `[snapshot][point]`.
pub fn build_quadrature_system(
    ips: &IntegrationPointSet,
    mode_strains: &[Vec<Voigt>],
    stresses: &[Vec<Voigt>],
    l: usize,
) -> Result<QuadratureSystem> {
    let n = mode_strains.len();
    let nc = stresses.len();
    for (s, st) in stresses.iter().enumerate() {
        if st.len() != ips.len() {
            return Err(Error::dim(format!("stresses of snapshot {}", s + 1), ips.len(), st.len()));
        }
    }
    let points = ips.points_of_subdomain(l);
    let columns: Vec<Vec<f64>> = points
        .iter()
        .map(|&k| {
            let mut col = Vec::with_capacity(n * nc);
            for st in stresses {
                for m in mode_strains {
                    col.push(contract(&st[k], &m[k]));
                }
            }
            col
        })
        .collect();
    let mut b = vec![0.0; n * nc];
    for (col, &k) in columns.iter().zip(&points) {
        for (bq, j) in b.iter_mut().zip(col) {
            *bq += ips.weight[k] * j;
        }
    }
    Ok(QuadratureSystem { subdomain: l, points, n_modes: n, n_snapshots: nc, columns, b })
}

/// Least squares on the columns of `a` by Householder QR.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let k = a.ncols();
    let qr = a.clone().qr();
    let mut rhs = b.clone();
    qr.q_tr_mul(&mut rhs);
    let r = qr.r();
    let x = r
        .solve_upper_triangular(&rhs.rows(0, k).into_owned())
        .ok_or_else(|| Error::numerical("NNLS", "rank-deficient passive set"))?;
    Ok(x)
}

/// Lawson-Hanson active-set nonnegative least squares.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if n == 0 {
        return Err(Error::Validation("NNLS needs at least one column".into()));
    }
    if b.len() != m {
        return Err(Error::dim("NNLS right-hand side", m, b.len()));
    }
    let tol = 10.0 * f64::EPSILON * (m.max(n) as f64) * a.norm() * b.norm().max(f64::MIN_POSITIVE);
    let max_iter = 10 * n;
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    // columns whose entry came out nonpositive right after entering
    let mut rejected = vec![false; n];
    let mut iter = 0;
    loop {
        let w = a.transpose() * (b - a * &x);
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !passive[j] && !rejected[j] && w[j] > tol && best.is_none_or(|k| w[j] > w[k]) {
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        passive[j] = true;
        let mut first = true;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::numerical("NNLS", format!("iteration cap {max_iter} exceeded")));
            }
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = least_squares(&a.select_columns(&idx), b)?;
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (c, &i) in idx.iter().enumerate() {
                    x[i] = z[c];
                }
                rejected.fill(false);
                break;
            }
            let entering = idx.iter().position(|&i| i == j);
            if first && entering.is_some_and(|c| z[c] <= 0.0) {
                passive[j] = false;
                rejected[j] = true;
                break;
            }
            first = false;
            let mut alpha = f64::INFINITY;
            let mut block = idx[0];
            for (c, &i) in idx.iter().enumerate() {
                if z[c] <= 0.0 {
                    let t = x[i] / (x[i] - z[c]);
                    if t < alpha {
                        alpha = t;
                        block = i;
                    }
                }
            }
            for (c, &i) in idx.iter().enumerate() {
                x[i] += alpha * (z[c] - x[i]);
                if x[i] <= 0.0 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            x[block] = 0.0;
            passive[block] = false;
        }
    }
    Ok(x)
}

/// Residual of a local fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFit {
    pub subdomain: usize,
    pub residual: f64,
    pub b_norm: f64,
    pub iterations: usize,
}

/// Reduced integration points (global ids) with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedQuadrature {
    pub points: Vec<usize>,
    pub weights: Vec<f64>,
    pub subdomain: Vec<usize>,
    pub fits: Vec<LocalFit>,
    pub eps_op: f64,
}

impl ReducedQuadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_subdomains(&self) -> usize {
        self.fits.len()
    }

    /// Every integration point with its own weight.
    pub fn full(ips: &IntegrationPointSet) -> Self {
        let mut subs: Vec<usize> = ips.subdomain.clone();
        subs.sort_unstable();
        subs.dedup();
        ReducedQuadrature {
            points: (0..ips.len()).collect(),
            weights: ips.weight.clone(),
            subdomain: ips.subdomain.clone(),
            fits: subs
                .into_iter()
                .map(|l| LocalFit { subdomain: l, residual: 0.0, b_norm: 0.0, iterations: 0 })
                .collect(),
            eps_op: 0.0,
        }
    }

    fn local(system: &QuadratureSystem, z: &[usize], w: &[f64], eps_op: f64, iterations: usize) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut kept = Vec::new();
        for (&c, &wc) in z.iter().zip(w) {
            if wc > 0.0 {
                points.push(system.points[c]);
                weights.push(wc);
                kept.push(c);
            }
        }
        let r = system.apply(&kept, &weights);
        let residual = norm(&r.iter().zip(&system.b).map(|(x, y)| x - y).collect::<Vec<_>>());
        ReducedQuadrature {
            subdomain: vec![system.subdomain; points.len()],
            points,
            weights,
            fits: vec![LocalFit { subdomain: system.subdomain, residual, b_norm: system.b_norm(), iterations }],
            eps_op,
        }
    }
}

fn argmax_lowest(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Nonnegative orthogonal matching pursuit until `||J_Z w - b|| <= eps_op ||b||`.
pub fn nnomp(system: &QuadratureSystem, eps_op: f64) -> Result<ReducedQuadrature> {
    if !(eps_op > 0.0) {
        return Err(Error::Validation(format!("operator tolerance {eps_op} must be positive")));
    }
    let bn = system.b_norm();
    if bn == 0.0 {
        return Ok(ReducedQuadrature::local(system, &[], &[], eps_op, 0));
    }
    let b = DVector::from_column_slice(&system.b);
    let mut z: Vec<usize> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    let mut r = system.b.clone();
    let mut history = vec![bn];
    let mut iterations = 0;
    while norm(&r) > eps_op * bn {
        iterations += 1;
        let corr: Vec<f64> = system
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| if z.contains(&c) { f64::NEG_INFINITY } else { col.iter().zip(&r).map(|(x, y)| x * y).sum() })
            .collect();
        let j = match argmax_lowest(&corr) {
            Some(j) if corr[j] > 0.0 => j,
            _ => {
                return Err(Error::numerical(
                    "NNOMP",
                    format!(
                        "subdomain {}: no column correlates positively with the residual at relative residual {:e}; use a larger operator tolerance",
                        system.subdomain,
                        norm(&r) / bn
                    ),
                ))
            }
        };
        z.push(j);
        let sol = nnls(&system.submatrix(&z), &b)?;
        w = sol.iter().copied().collect();
        let fit = system.apply(&z, &w);
        r = system.b.iter().zip(&fit).map(|(x, y)| x - y).collect();
        let rn = norm(&r);
        history.push(rn);
        let h = history.len();
        if h >= 3 && rn >= history[h - 3] {
            return Err(Error::numerical(
                "NNOMP",
                format!(
                    "subdomain {}: residual stagnated at relative {:e} after {} points; use a larger operator tolerance",
                    system.subdomain,
                    rn / bn,
                    z.len()
                ),
            ));
        }
    }
    Ok(ReducedQuadrature::local(system, &z, &w, eps_op, iterations))
}

/// Best NNLS fit over random column subsets.
pub fn random_subset_quadrature(
    system: &QuadratureSystem,
    subset_size: usize,
    trials: usize,
    seed: u64,
    eps_op: f64,
) -> Result<ReducedQuadrature> {
    if subset_size == 0 || subset_size > system.cols() {
        return Err(Error::Validation(format!(
            "subset size {subset_size} outside 1..={}",
            system.cols()
        )));
    }
    if trials == 0 {
        return Err(Error::Validation("at least one trial is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DVector::from_column_slice(&system.b);
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for _ in 0..trials {
        let mut z = rand::seq::index::sample(&mut rng, system.cols(), subset_size).into_vec();
        z.sort_unstable();
        let w: Vec<f64> = nnls(&system.submatrix(&z), &b)?.iter().copied().collect();
        let fit = system.apply(&z, &w);
        let res = norm(&fit.iter().zip(&system.b).map(|(x, y)| x - y).collect::<Vec<_>>());
        if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
            best = Some((res, z, w));
        }
    }
    let (_, z, w) = best.expect("trials > 0");
    Ok(ReducedQuadrature::local(system, &z, &w, eps_op, trials))
}

/// Union of independent subdomain quadratures.
pub fn merge_subdomain_quadratures(locals: &[ReducedQuadrature]) -> Result<ReducedQuadrature> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = ReducedQuadrature {
        points: Vec::new(),
        weights: Vec::new(),
        subdomain: Vec::new(),
        fits: Vec::new(),
        eps_op: locals.first().map_or(DEFAULT_EPS_OP, |q| q.eps_op),
    };
    for q in locals {
        for ((&p, &w), &l) in q.points.iter().zip(&q.weights).zip(&q.subdomain) {
            if !seen.insert(p) {
                return Err(Error::Validation(format!("integration point {p} appears in two local quadratures")));
            }
            out.points.push(p);
            out.weights.push(w);
            out.subdomain.push(l);
        }
        out.fits.extend_from_slice(&q.fits);
        out.eps_op = out.eps_op.max(q.eps_op);
    }
    Ok(out)
}

/// Fitting systems of all subdomains, one task each.
pub fn build_all_systems(ips: &IntegrationPointSet, mode_strains: &[Vec<Voigt>], stresses: &[Vec<Voigt>], n_d: usize) -> Result<Vec<QuadratureSystem>> {
    par::try_map_range(n_d, |i| build_quadrature_system(ips, mode_strains, stresses, i + 1))
}

/// NNOMP in every subdomain independently, then the merge.
pub fn hyperreduce(systems: &[QuadratureSystem], eps_op: f64) -> Result<ReducedQuadrature> {
    let locals = par::try_map_range(systems.len(), |i| nnomp(&systems[i], eps_op))?;
    merge_subdomain_quadratures(&locals)
}

/// Global residual `||sum_l (J^l w^l - b^l)||` of a merged quadrature, the
/// subdomain row blocks stacked.
pub fn global_residual(systems: &[QuadratureSystem], quad: &ReducedQuadrature) -> (f64, f64) {
    let rows = systems.first().map_or(0, QuadratureSystem::rows);
    let mut fit = vec![0.0; rows];
    let mut b = vec![0.0; rows];
    for s in systems {
        let (z, w): (Vec<usize>, Vec<f64>) = quad
            .points
            .iter()
            .zip(&quad.weights)
            .filter_map(|(p, &wt)| s.points.binary_search(p).ok().map(|c| (c, wt)))
            .unzip();
        for (f, v) in fit.iter_mut().zip(s.apply(&z, &w)) {
            *f += v;
        }
        for (bb, v) in b.iter_mut().zip(&s.b) {
            *bb += v;
        }
    }
    let r = norm(&fit.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
    (r, norm(&b))
}

impl ReducedQuadrature {
    pub fn to_text(&self) -> String {
        let mut s = String::from("HRQUAD 1\n");
        let _ = writeln!(s, "points {}", self.len());
        let _ = writeln!(s, "subdomains {}", self.n_subdomains());
        let _ = writeln!(s, "eps_op {}", self.eps_op);
        for f in &self.fits {
            let _ = writeln!(s, "fit {} {} {} {}", f.subdomain, f.residual, f.b_norm, f.iterations);
        }
        for ((p, w), l) in self.points.iter().zip(&self.weights).zip(&self.subdomain) {
            let _ = writeln!(s, "{p} {w} {l}");
        }
        s
    }

    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut lines = Lines::new(text, name);
        lines.expect_header("HRQUAD", "1")?;
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (ln, toks) = lines.require_tokens(key)?;
            if toks.len() != 2 || toks[0] != key {
                return Err(Error::parse(name, ln, format!("expected `{key} <value>`")));
            }
            Ok((ln, toks[1].to_string()))
        };
        let bad = |ln: usize, v: &str| Error::parse(name, ln, format!("cannot parse `{v}`"));
        let (ln, v) = header("points")?;
        let d: usize = v.parse().map_err(|_| bad(ln, &v))?;
        let (ln, v) = header("subdomains")?;
        let n_d: usize = v.parse().map_err(|_| bad(ln, &v))?;
        let (ln, v) = header("eps_op")?;
        let eps_op: f64 = v.parse().map_err(|_| bad(ln, &v))?;
        let mut q = ReducedQuadrature { points: vec![], weights: vec![], subdomain: vec![], fits: vec![], eps_op };
        for _ in 0..n_d {
            let (ln, toks) = lines.require_tokens("fit")?;
            if toks.len() != 5 || toks[0] != "fit" {
                return Err(lines.err(ln, "expected `fit <subdomain> <residual> <b_norm> <iterations>`"));
            }
            q.fits.push(LocalFit {
                subdomain: lines.parse_tok(ln, &toks, 1)?,
                residual: lines.parse_tok(ln, &toks, 2)?,
                b_norm: lines.parse_tok(ln, &toks, 3)?,
                iterations: lines.parse_tok(ln, &toks, 4)?,
            });
        }
        for _ in 0..d {
            let (ln, toks) = lines.require_tokens("point")?;
            if toks.len() != 3 {
                return Err(lines.err(ln, "expected `<point> <weight> <subdomain>`"));
            }
            let w: f64 = lines.parse_tok(ln, &toks, 1)?;
            if !(w > 0.0) {
                return Err(lines.err(ln, format!("weight {w} is not positive")));
            }
            q.points.push(lines.parse_tok(ln, &toks, 0)?);
            q.weights.push(w);
            q.subdomain.push(lines.parse_tok(ln, &toks, 2)?);
        }
        if let Some((ln, _)) = lines.next_tokens() {
            return Err(lines.err(ln, "trailing content"));
        }
        Ok(q)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
