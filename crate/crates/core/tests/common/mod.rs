//! Shared oracles for the integration tests.
#![allow(dead_code)]

use hrom_core::fe::Voigt;
use hrom_core::material::{demo_material, EvpParams, Material, MaterialState};
use nalgebra::Matrix3;

pub fn evp() -> EvpParams {
    match demo_material() {
        Material::Evp(p) => p,
        _ => unreachable!(),
    }
}

pub fn tensor(v: &Voigt) -> Matrix3<f64> {
    Matrix3::new(
        v[0],
        v[3] / 2.0,
        v[5] / 2.0,
        v[3] / 2.0,
        v[1],
        v[4] / 2.0,
        v[5] / 2.0,
        v[4] / 2.0,
        v[2],
    )
}

/// Independent integrator of the evp ODE on 3x3 tensors (classical RK4).
pub struct Oracle {
    y1111: f64,
    y1122: f64,
    y1212: f64,
    c: f64,
    d: f64,
    k: f64,
    m: f64,
    r0: f64,
}

impl Oracle {
    pub fn at(p: &EvpParams, t: f64) -> Self {
        Oracle {
            y1111: p.elas.y1111.at(t),
            y1122: p.elas.y1122.at(t),
            y1212: p.elas.y1212.at(t),
            c: p.c.at(t),
            d: p.d.at(t),
            k: p.k.at(t),
            m: p.m.at(t),
            r0: p.r0.at(t),
        }
    }

    pub fn stress(&self, e: &Matrix3<f64>) -> Matrix3<f64> {
        let mut s = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                s[(i, j)] = if i == j {
                    self.y1111 * e[(i, i)] + self.y1122 * ((0..3).map(|k| e[(k, k)]).sum::<f64>() - e[(i, i)])
                } else {
                    2.0 * self.y1212 * e[(i, j)]
                };
            }
        }
        s
    }

    /// (d ep/dt, dp/dt) for elastic driver `ee` and plastic strain `ep`.
    fn rates(&self, ee: &Matrix3<f64>, ep: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
        let sig = self.stress(&(ee - ep));
        let dev = sig - Matrix3::identity() * (sig.trace() / 3.0);
        let s = dev - ep * self.c;
        let seq = (1.5f64).sqrt() * s.norm();
        let f = seq - self.r0;
        if f <= 0.0 {
            return (Matrix3::zeros(), 0.0);
        }
        let pdot = (f / self.k).powf(self.m);
        let n = s * (1.5 / seq);
        ((n - ep * self.d) * pdot, pdot)
    }

    /// Integrate over one interval with the elastic driver linear in time.
    pub fn integrate(&self, ee0: &Matrix3<f64>, ee1: &Matrix3<f64>, dt: f64, substeps: usize, ep: &mut Matrix3<f64>, p: &mut f64) {
        let h = dt / substeps as f64;
        let drv = |tau: f64| ee0 + (ee1 - ee0) * tau;
        for i in 0..substeps {
            let t0 = i as f64 / substeps as f64;
            let th = (i as f64 + 0.5) / substeps as f64;
            let t1 = (i as f64 + 1.0) / substeps as f64;
            let (k1, q1) = self.rates(&drv(t0), ep);
            let (k2, q2) = self.rates(&drv(th), &(*ep + k1 * (h / 2.0)));
            let (k3, q3) = self.rates(&drv(th), &(*ep + k2 * (h / 2.0)));
            let (k4, q4) = self.rates(&drv(t1), &(*ep + k3 * h));
            *ep += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            *p += (q1 + 2.0 * q2 + 2.0 * q3 + q4) * h / 6.0;
        }
    }
}

/// (sigma_11, p) at the end of each step of a strain-driven history.
pub fn law_history(p: &EvpParams, strains: &[Voigt], temp: f64, dt: f64) -> Vec<(f64, f64)> {
    let mut st = MaterialState::default();
    strains
        .iter()
        .map(|e| {
            let r = p.evaluate(&st, e, temp, dt).unwrap();
            st = r.state;
            (r.stress[0], st.p)
        })
        .collect()
}

pub fn oracle_history(p: &EvpParams, strains: &[Voigt], temp: f64, dt: f64, substeps: usize) -> Vec<(f64, f64)> {
    let o = Oracle::at(p, temp);
    let th = p.elas.thermal_strain(temp);
    let drv = |e: &Voigt| tensor(&std::array::from_fn(|i| e[i] - th[i]));
    let mut ep = Matrix3::zeros();
    let mut pc = 0.0;
    let mut prev = drv(&th);
    strains
        .iter()
        .map(|e| {
            let next = drv(e);
            o.integrate(&prev, &next, dt, substeps, &mut ep, &mut pc);
            prev = next;
            (o.stress(&(next - ep))[(0, 0)], pc)
        })
        .collect()
}

pub fn uniaxial_ramp(p: &EvpParams, temp: f64, peak: f64, steps: usize) -> Vec<Voigt> {
    let th = p.elas.thermal_strain(temp);
    (1..=steps)
        .map(|s| {
            let mut e = th;
            e[0] += peak * s as f64 / steps as f64;
            e
        })
        .collect()
}


/// Largest deviation between the law tangent and central differences of the
/// stress, relative to the largest tangent entry.
pub fn tangent_fd_error(p: &EvpParams, state: &MaterialState, eps: &Voigt, temp: f64, dt: f64) -> f64 {
    let r = p.evaluate(state, eps, temp, dt).unwrap();
    let norm = eps.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = 1e-7 * norm;
    let scale = r.tangent.abs().max();
    let mut worst = 0f64;
    for j in 0..6 {
        let mut ep = *eps;
        let mut em = *eps;
        ep[j] += h;
        em[j] -= h;
        let sp = p.evaluate(state, &ep, temp, dt).unwrap().stress;
        let sm = p.evaluate(state, &em, temp, dt).unwrap().stress;
        for i in 0..6 {
            let fd = (sp[i] - sm[i]) / (2.0 * h);
            worst = worst.max((fd - r.tangent[(i, j)]).abs() / scale);
        }
    }
    worst
}

/// Multiaxial strain path visiting tension, shear and reversal.
pub fn multiaxial_path(p: &EvpParams, temp: f64, steps: usize) -> Vec<Voigt> {
    let th = p.elas.thermal_strain(temp);
    (1..=steps)
        .map(|s| {
            let x = s as f64 / steps as f64;
            let a = 6e-3 * (std::f64::consts::PI * x).sin();
            let b = 4e-3 * x;
            [th[0] + a, th[1] - 0.3 * a, th[2] - 0.3 * a, b, 0.5 * b, -0.2 * a]
        })
        .collect()
}

/// Dense L2 POD oracle: with G = L L^T, the left singular vectors w of
/// L^T U give modes L^{-T} w. Returns (modes, squared singular values / N_c).
pub fn dense_pod_oracle(gram: &hrom_core::sparse::CsrMatrix, snapshots: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    use nalgebra::DMatrix;
    let n = gram.dim();
    let nc = snapshots.len();
    let g = gram.to_dense();
    let chol = g.cholesky().expect("Gram matrix SPD");
    let l = chol.l();
    let u = DMatrix::from_fn(n, nc, |i, j| snapshots[j][i]);
    let a = l.transpose() * &u;
    let svd = a.svd(true, false);
    let w = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let lt = l.transpose();
    let mut modes = Vec::new();
    let mut values = Vec::new();
    for &i in &order {
        let col = w.column(i).into_owned();
        let psi = lt.solve_upper_triangular(&col).unwrap();
        modes.push(psi.iter().copied().collect());
        values.push(svd.singular_values[i].powi(2) / nc as f64);
    }
    (modes, values)
}

/// max_i,j |psi_i^T G psi_j - delta_ij|
pub fn orthonormality_defect(gram: &hrom_core::sparse::CsrMatrix, modes: &[Vec<f64>]) -> f64 {
    let gm: Vec<Vec<f64>> = modes.iter().map(|m| gram.mul_vec(m)).collect();
    let mut worst = 0f64;
    for (i, a) in modes.iter().enumerate() {
        for (j, b) in gm.iter().enumerate() {
            let v: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

/// Largest G-norm distance between matching modes, up to sign.
pub fn mode_distance(gram: &hrom_core::sparse::CsrMatrix, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d1: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
            let d2: Vec<f64> = x.iter().zip(y).map(|(p, q)| p + q).collect();
            gram.inner(&d1, &d1).sqrt().min(gram.inner(&d2, &d2).sqrt())
        })
        .fold(0.0, f64::max)
}

/// Solution by enumerating every support: the unconstrained LS on a support
/// that is strictly positive and satisfies the KKT sign conditions elsewhere.
pub fn enumerate_nnls(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    let n = a.ncols();
    let mut best: Option<(f64, nalgebra::DVector<f64>)> = None;
    for mask in 0..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut x = nalgebra::DVector::zeros(n);
        if !idx.is_empty() {
            let sub = a.select_columns(&idx);
            let z = (sub.transpose() * &sub).cholesky().unwrap().solve(&(sub.transpose() * b));
            if z.iter().any(|&v| v <= 0.0) {
                continue;
            }
            for (c, &i) in idx.iter().enumerate() {
                x[i] = z[c];
            }
        }
        let grad = a.transpose() * (a * &x - b);
        if (0..n).any(|i| mask & (1 << i) == 0 && grad[i] < -1e-12) {
            continue;
        }
        let r = (a * &x - b).norm();
        if best.as_ref().is_none_or(|(br, _)| r < *br) {
            best = Some((r, x));
        }
    }
    best.unwrap().1
}
