//! Compressed sparse row storage and a profile (skyline) LU direct solver
//! with reverse Cuthill-McKee reordering.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square sparse matrix in CSR form with a fixed, symmetric pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build a zero matrix from per-row column lists (deduplicated here).
    pub fn from_rows(n: usize, mut rows: Vec<Vec<usize>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Storage slot of entry (i, j), if it is in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Add `v` to entry (i, j). Panics if (i, j) is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn zeros_like(&self) -> Self {
        CsrMatrix {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `x^T A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// Largest |A_ij - A_ji| over the pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Entry-wise sum of matrices sharing one pattern.
    pub fn add_assign(&mut self, other: &CsrMatrix) {
        assert_eq!(self.col_idx, other.col_idx);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Reverse Cuthill-McKee ordering of the matrix graph; returns new -> old.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_last = |start: usize, visited: &[bool]| -> (usize, usize) {
        // Returns (last node reached, eccentricity) without touching `visited`.
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        dist[start] = 0;
        queue.push_back(start);
        let mut last = start;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &w in a.row(v).0 {
                if !visited[w] && dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        (last, dist[last])
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node exists");
        // A couple of sweeps toward a pseudo-peripheral node.
        let mut start = seed;
        let mut ecc = 0;
        for _ in 0..4 {
            let (far, e) = bfs_last(start, &visited);
            if e <= ecc {
                break;
            }
            ecc = e;
            start = far;
        }
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).0.iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Symbolic part of the profile solver: ordering and envelope, reusable
/// for every matrix with the same pattern.
#[derive(Debug, Clone)]
pub struct ProfileSymbolic {
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
}

impl ProfileSymbolic {
    pub fn new(pattern: &CsrMatrix) -> Self {
        let n = pattern.dim();
        let perm = rcm_ordering(pattern);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_row in 0..n {
            let i = inv[old_row];
            for &old_col in pattern.row(old_row).0 {
                let j = inv[old_col];
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                first[hi] = first[hi].min(lo);
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for k in 0..n {
            offset.push(offset[k] + (k - first[k]) + 1);
        }
        ProfileSymbolic {
            perm,
            inv,
            first,
            offset,
        }
    }

    /// Number of stored entries of the envelope (upper + lower).
    pub fn envelope_size(&self) -> usize {
        2 * self.offset[self.offset.len() - 1] - self.first.len()
    }

    /// Numeric LU factorization without pivoting.
    pub fn factor(&self, a: &CsrMatrix) -> Result<ProfileLu<'_>> {
        let n = self.first.len();
        let len = self.offset[n];
        // upper[offset[k] + (i - first[k])] = U(i, k), i in first[k]..=k
        // lower[offset[k] + (i - first[k])] = L(k, i), i in first[k]..k
        let mut upper = vec![0.0; len];
        let mut lower = vec![0.0; len];
        for old_row in 0..n {
            let i = self.inv[old_row];
            let (cols, vals) = a.row(old_row);
            for (&old_col, &v) in cols.iter().zip(vals) {
                let j = self.inv[old_col];
                if j >= i {
                    upper[self.offset[j] + i - self.first[j]] += v;
                } else {
                    lower[self.offset[i] + j - self.first[i]] += v;
                }
            }
        }
        let scale = upper
            .iter()
            .chain(lower.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));

        for k in 0..n {
            let fk = self.first[k];
            let ok = self.offset[k];
            for i in fk..k {
                let fi = self.first[i];
                let oi = self.offset[i];
                let lo = fi.max(fk);
                let mut dot_u = 0.0;
                let mut dot_l = 0.0;
                for p in lo..i {
                    dot_u += lower[oi + p - fi] * upper[ok + p - fk];
                    dot_l += lower[ok + p - fk] * upper[oi + p - fi];
                }
                upper[ok + i - fk] -= dot_u;
                let uii = upper[oi + i - fi];
                lower[ok + i - fk] = (lower[ok + i - fk] - dot_l) / uii;
            }
            let mut dot = 0.0;
            for p in fk..k {
                dot += lower[ok + p - fk] * upper[ok + p - fk];
            }
            let d = upper[ok + k - fk] - dot;
            if !(d.abs() > 1e-14 * scale) || !d.is_finite() {
                return Err(Error::numerical(
                    "sparse factorization",
                    format!("zero or invalid pivot {d:e} at row {k} (original dof {})", self.perm[k]),
                ));
            }
            upper[ok + k - fk] = d;
        }
        Ok(ProfileLu {
            symbolic: self,
            upper,
            lower,
        })
    }
}

/// Numeric profile LU factors.
#[derive(Debug, Clone)]
pub struct ProfileLu<'a> {
    symbolic: &'a ProfileSymbolic,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

impl ProfileLu<'_> {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = self.symbolic;
        let n = s.first.len();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = (0..n).map(|i| b[s.perm[i]]).collect();
        for k in 0..n {
            let fk = s.first[k];
            let ok = s.offset[k];
            let mut acc = y[k];
            for p in fk..k {
                acc -= self.lower[ok + p - fk] * y[p];
            }
            y[k] = acc;
        }
        for k in (0..n).rev() {
            let fk = s.first[k];
            let ok = s.offset[k];
            let xk = y[k] / self.upper[ok + k - fk];
            y[k] = xk;
            for i in fk..k {
                y[i] -= self.upper[ok + i - fk] * xk;
            }
        }
        let mut x = vec![0.0; n];
        for (i, &old) in s.perm.iter().enumerate() {
            x[old] = y[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn laplacian_2d(m: usize) -> CsrMatrix {
        let n = m * m;
        let idx = |i: usize, j: usize| i * m + j;
        let mut rows = vec![Vec::new(); n];
        for i in 0..m {
            for j in 0..m {
                let r = idx(i, j);
                rows[r].push(r);
                if i > 0 {
                    rows[r].push(idx(i - 1, j));
                }
                if i + 1 < m {
                    rows[r].push(idx(i + 1, j));
                }
                if j > 0 {
                    rows[r].push(idx(i, j - 1));
                }
                if j + 1 < m {
                    rows[r].push(idx(i, j + 1));
                }
            }
        }
        let mut a = CsrMatrix::from_rows(n, rows);
        for r in 0..n {
            let cols: Vec<usize> = a.row(r).0.to_vec();
            for c in cols {
                // nonsymmetric perturbation keeps the pattern symmetric
                let v = if c == r { 4.5 } else if c > r { -1.0 } else { -0.8 };
                a.add(r, c, v);
            }
        }
        a
    }

    #[test]
    fn profile_lu_matches_dense_solve() {
        let a = laplacian_2d(6);
        let sym = ProfileSymbolic::new(&a);
        let lu = sym.factor(&a).unwrap();
        let b: Vec<f64> = (0..a.dim()).map(|i| (i as f64).cos()).collect();
        let x = lu.solve(&b);
        let dense = a.to_dense().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for (u, v) in x.iter().zip(dense.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_2d(5);
        let mut p = rcm_ordering(&a);
        p.sort();
        assert_eq!(p, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut a = CsrMatrix::from_rows(2, vec![vec![0, 1], vec![0, 1]]);
        a.add(0, 0, 1.0);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        let sym = ProfileSymbolic::new(&a);
        assert!(sym.factor(&a).is_err());
    }
}
