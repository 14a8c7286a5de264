//! Snapshot POD with subdomain-distributed correlation assembly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::arrays::{read_array, write_array};
use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::par;
use crate::exact::ExactSum;
use crate::fe::LocalGram;
use crate::sparse::CsrMatrix;
use crate::textio::Lines;

/// Eigenvalues at or below this fraction of the largest are discarded.
pub const EIGEN_FLOOR: f64 = 1e-14;
pub const JACOBI_TOL: f64 = 1e-14;

/// Correlation matrix `C = sum_l C^l` with `C^l_ij = (1/N_c) u_i^T G^l u_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub total: DMatrix<f64>,
    pub local: Vec<DMatrix<f64>>,
}

impl CorrelationMatrix {
    /// Values exchanged by the reduction: the upper triangle of one matrix.
    pub fn payload(&self) -> usize {
        let n = self.total.nrows();
        n * (n + 1) / 2
    }
}

/// Local correlation matrices, one independent task per subdomain, then one
/// additive reduction. Partial sums travel as exact accumulators, so the
/// total does not depend on the partition.
pub fn correlation_matrix(snapshots: &[Vec<f64>], grams: &[LocalGram]) -> Result<CorrelationMatrix> {
    let nc = snapshots.len();
    if nc == 0 {
        return Err(Error::Validation("no snapshots".into()));
    }
    let n = snapshots[0].len();
    for (i, u) in snapshots.iter().enumerate() {
        if u.len() != n {
            return Err(Error::dim(format!("snapshot {}", i + 1), n, u.len()));
        }
    }
    for g in grams {
        if g.dim() != n {
            return Err(Error::dim("Gram matrix", n, g.dim()));
        }
    }
    let partial = par::map_slice(grams, |g| g.products(snapshots, snapshots, true));
    let round = |sums: &[ExactSum]| {
        let mut c = DMatrix::zeros(nc, nc);
        for i in 0..nc {
            for j in 0..=i {
                let v = sums[i * nc + j].value() / nc as f64;
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    };
    let local = partial.iter().map(|p| round(p)).collect();
    let total = round(&reduce(partial, nc * nc));
    Ok(CorrelationMatrix { total, local })
}

fn reduce(partial: Vec<Vec<ExactSum>>, len: usize) -> Vec<ExactSum> {
    let mut total = vec![ExactSum::new(); len];
    for p in &partial {
        total.iter_mut().zip(p).for_each(|(t, s)| t.merge(s));
    }
    total
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigenvalues above the numerical floor (input sorted descending).
pub fn floored(eigenvalues: &[f64]) -> &[f64] {
    let Some(&l1) = eigenvalues.first() else {
        return eigenvalues;
    };
    let count = eigenvalues.iter().take_while(|&&l| l > EIGEN_FLOOR * l1).count();
    &eigenvalues[..count]
}

/// Mode count from the epsilon-truncation of a descending spectrum, after
/// the numerical floor.
pub fn eps_truncate(eigenvalues: &[f64], eps: f64) -> Result<usize> {
    if eigenvalues.is_empty() || !(eigenvalues[0] > 0.0) {
        return Err(Error::Validation("empty spectrum".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Validation(format!("truncation tolerance {eps} outside (0, 1)")));
    }
    let kept = floored(eigenvalues);
    let count = kept.len();
    let total: f64 = kept.iter().sum();
    let eps2 = eps * eps;
    let mut acc = 0.0;
    let mut n1 = count;
    for (i, l) in kept.iter().enumerate() {
        acc += l;
        if acc >= (1.0 - eps2) * total {
            n1 = i + 1;
            break;
        }
    }
    let n2 = kept
        .iter()
        .position(|&l| l <= eps2 * kept[0])
        .map_or(count + 1, |i| i + 1);
    Ok(n1.max(n2).min(count))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    /// Mode vectors, one per entry, each of length N.
    pub modes: Vec<Vec<f64>>,
    /// Retained eigenvalues of C, descending.
    pub eigenvalues: Vec<f64>,
    /// Full spectrum of C.
    pub spectrum: Vec<f64>,
    /// Snapshot coefficients of the retained modes (N_c entries each),
    /// unit vectors: mode i is `sum_j xi_ij u_j / sqrt(N_c lambda_i)`.
    pub xi: Vec<Vec<f64>>,
    /// Values exchanged by the correlation reduction.
    pub payload: usize,
    /// Values exchanged by the orthogonalization and projection reductions.
    pub refinement_payload: usize,
}

impl ReducedBasis {
    pub fn n(&self) -> usize {
        self.modes.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    /// `Psi^T v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.modes.iter().map(|m| dot(m, v)).collect()
    }

    /// `Psi a`.
    pub fn expand(&self, a: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n_dofs()];
        for (m, ai) in self.modes.iter().zip(a) {
            for (x, v) in u.iter_mut().zip(m) {
                *x += ai * v;
            }
        }
        u
    }

    /// L2 coordinates `Psi^T G u`.
    pub fn l2_coordinates(&self, gram: &CsrMatrix, u: &[f64]) -> Vec<f64> {
        self.project(&gram.mul_vec(u))
    }
}

/// Snapshot directions whose Gram-Schmidt residual falls below this fraction
/// of their own norm are treated as dependent.
pub const DEPENDENCE_TOL: f64 = 1e-10;

/// Snapshot POD. The mode count comes from the epsilon-truncation of the
/// correlation spectrum; the modes themselves come from the singular
/// vectors of `Q^T G U`, with `Q` a G-orthonormal basis of the snapshot
/// span, which avoids squaring the conditioning of the snapshot matrix.
/// Modes are orthonormal in the G inner product and each mode's
/// largest-magnitude entry is positive.
pub fn snapshot_pod(snapshots: &[Vec<f64>], grams: &[LocalGram], eps: f64) -> Result<ReducedBasis> {
    let c = correlation_matrix(snapshots, grams)?;
    let nc = snapshots.len();
    let (values, _) = jacobi_eigen(&c.total, JACOBI_TOL)?;
    if !(values[0] > 0.0) {
        return Err(Error::Validation("all snapshots are zero".into()));
    }
    let norms: Vec<f64> = (0..nc).map(|j| (c.total[(j, j)] * nc as f64).max(0.0).sqrt()).collect();
    let (q, gs_payload) = orthonormal_span(snapshots, &norms, grams);
    let r = q.len();
    let n = eps_truncate(&values, eps)?.min(r);

    let b = gram_reduce(grams, &q, snapshots);
    let svd = b.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::numerical("POD", "SVD failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(n);

    let mut modes = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    let mut eigenvalues = Vec::with_capacity(n);
    for &i in &order {
        let sigma = svd.singular_values[i];
        let lambda = sigma * sigma / nc as f64;
        let mut x: Vec<f64> = vt.row(i).iter().copied().collect();
        let mut psi = combine(snapshots, &x, 1.0 / (lambda * nc as f64).sqrt());
        let imax = argmax_abs(&psi);
        if psi[imax] < 0.0 {
            psi.iter_mut().for_each(|v| *v = -*v);
            x.iter_mut().for_each(|v| *v = -*v);
        }
        xi.push(x);
        modes.push(psi);
        eigenvalues.push(lambda);
    }
    Ok(ReducedBasis {
        modes,
        eigenvalues,
        spectrum: values,
        xi,
        payload: c.payload(),
        refinement_payload: gs_payload + r * nc,
    })
}

/// G-orthonormal basis of the snapshot span by classical Gram-Schmidt with
/// two passes; every inner product is a subdomain reduction. Returns the
/// basis and the number of reduced values.
fn orthonormal_span(snapshots: &[Vec<f64>], norms: &[f64], grams: &[LocalGram]) -> (Vec<Vec<f64>>, usize) {
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut payload = 0;
    for (u, &unorm) in snapshots.iter().zip(norms) {
        if unorm == 0.0 {
            continue;
        }
        let mut w = u.clone();
        for _ in 0..2 {
            if q.is_empty() {
                break;
            }
            let h = gram_reduce(grams, &q, std::slice::from_ref(&w));
            payload += q.len();
            for (qi, hi) in q.iter().zip(h.iter()) {
                w.iter_mut().zip(qi).for_each(|(a, b)| *a -= hi * b);
            }
        }
        let nrm = gram_reduce(grams, std::slice::from_ref(&w), std::slice::from_ref(&w))[(0, 0)].max(0.0).sqrt();
        payload += 1;
        if nrm > DEPENDENCE_TOL * unorm {
            w.iter_mut().for_each(|a| *a /= nrm);
            q.push(w);
        }
    }
    (q, payload)
}

/// `sum_l a_i^T G^l b_j`, one task per subdomain and one exact additive
/// reduction.
fn gram_reduce(grams: &[LocalGram], a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    let partial = par::map_slice(grams, |g| g.products(a, b, false));
    let total = reduce(partial, a.len() * b.len());
    DMatrix::from_fn(a.len(), b.len(), |i, j| total[i * b.len() + j].value())
}

fn combine(snapshots: &[Vec<f64>], coeffs: &[f64], scale: f64) -> Vec<f64> {
    let mut psi = vec![0.0; snapshots[0].len()];
    for (u, c) in snapshots.iter().zip(coeffs) {
        for (p, v) in psi.iter_mut().zip(u) {
            *p += c * v;
        }
    }
    psi.iter_mut().for_each(|p| *p *= scale);
    psi
}

/// Index of the largest |entry|; the lowest index wins ties.
pub fn argmax_abs(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Restriction of the modes to a dof subset, computed from the restricted
/// snapshots alone (as each subdomain does without communication).
pub fn restricted_modes(basis: &ReducedBasis, snapshots: &[Vec<f64>], dofs: &[usize]) -> Vec<Vec<f64>> {
    let nc = snapshots.len();
    let local: Vec<Vec<f64>> = snapshots.iter().map(|u| dofs.iter().map(|&d| u[d]).collect()).collect();
    basis
        .xi
        .iter()
        .zip(&basis.eigenvalues)
        .map(|(x, l)| combine(&local, x, 1.0 / (l * nc as f64).sqrt()))
        .collect()
}

impl ReducedBasis {
    /// Write `dir/basis.hrbasis` and its arrays.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = String::from("HRBASIS 1\n");
        let _ = writeln!(out, "modes {}", self.n());
        let _ = writeln!(out, "dofs {}", self.n_dofs());
        let _ = writeln!(out, "payload {} {}", self.payload, self.refinement_payload);
        write_array(&dir.join("eigenvalues.bin"), &self.eigenvalues)?;
        write_array(&dir.join("spectrum.bin"), &self.spectrum)?;
        let _ = writeln!(out, "eigenvalues eigenvalues.bin");
        let _ = writeln!(out, "spectrum spectrum.bin");
        let xi: Vec<f64> = self.xi.iter().flatten().copied().collect();
        write_array(&dir.join("xi.bin"), &xi)?;
        let _ = writeln!(out, "xi xi.bin");
        for (i, m) in self.modes.iter().enumerate() {
            let name = format!("mode_{:04}.bin", i + 1);
            write_array(&dir.join(&name), m)?;
            let _ = writeln!(out, "mode {} {name}", i + 1);
        }
        let path = dir.join("basis.hrbasis");
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<ReducedBasis> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let name = path.display().to_string();
        let mut lines = Lines::new(&text, &name);
        lines.expect_header("HRBASIS", "1")?;
        let (mut n, mut dofs, mut payload, mut refinement_payload) = (None, None, 0, 0);
        let (mut eig, mut spectrum, mut xi) = (None, Vec::new(), None);
        let mut modes = Vec::new();
        while let Some((ln, toks)) = lines.next_tokens() {
            let file = |i: usize| -> Result<PathBuf> { Ok(base.join(lines.parse_tok::<String>(ln, &toks, i)?)) };
            match toks[0] {
                "modes" => n = Some(lines.parse_tok::<usize>(ln, &toks, 1)?),
                "dofs" => dofs = Some(lines.parse_tok::<usize>(ln, &toks, 1)?),
                "payload" => {
                    payload = lines.parse_tok(ln, &toks, 1)?;
                    refinement_payload = lines.parse_tok(ln, &toks, 2)?;
                }
                "eigenvalues" => eig = Some(read_array(&file(1)?)?),
                "spectrum" => spectrum = read_array(&file(1)?)?,
                "xi" => xi = Some(read_array(&file(1)?)?),
                "mode" => {
                    let idx: usize = lines.parse_tok(ln, &toks, 1)?;
                    if idx != modes.len() + 1 {
                        return Err(lines.err(ln, format!("expected mode {}", modes.len() + 1)));
                    }
                    let m = read_array(&file(2)?)?;
                    if let Some(d) = dofs {
                        if m.len() != d {
                            return Err(Error::dim(format!("mode {idx}"), d, m.len()));
                        }
                    }
                    modes.push(m);
                }
                other => return Err(lines.err(ln, format!("unknown keyword `{other}`"))),
            }
        }
        let n = n.ok_or_else(|| Error::parse(&name, 0, "missing `modes`"))?;
        let eigenvalues = eig.ok_or_else(|| Error::parse(&name, 0, "missing `eigenvalues`"))?;
        let xi_flat = xi.ok_or_else(|| Error::parse(&name, 0, "missing `xi`"))?;
        if modes.len() != n || eigenvalues.len() != n {
            return Err(Error::parse(&name, 0, format!("expected {n} modes and eigenvalues")));
        }
        if n > 0 && xi_flat.len() % n != 0 {
            return Err(Error::parse(&name, 0, "xi array size is not a multiple of the mode count"));
        }
        let nc = if n > 0 { xi_flat.len() / n } else { 0 };
        Ok(ReducedBasis {
            modes,
            eigenvalues,
            spectrum,
            xi: xi_flat.chunks(nc.max(1)).map(<[f64]>::to_vec).take(n).collect(),
            payload,
            refinement_payload,
        })
    }
}
