//! Pointwise constitutive laws: temperature-dependent cubic elasticity with
//! thermal expansion (`elas`) and Norton flow with nonlinear kinematic
//! hardening (`evp`).
//!
//! The public interface works in Voigt notation with engineering shear
//! strains. The evp update works internally in Mandel notation, where tensor
//! contractions are plain dot products.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::fe::Voigt;
use crate::textio::Lines;

pub type Matrix6 = SMatrix<f64, 6, 6>;
type Vector6 = SVector<f64, 6>;
type Matrix7 = SMatrix<f64, 7, 7>;

const SQRT2: f64 = std::f64::consts::SQRT_2;
const MANDEL: [f64; 6] = [1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2];

/// Piecewise-linear table in temperature, clamped outside its range.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    points: Vec<(f64, f64)>,
}

impl Table {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("empty temperature table".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Validation("temperature table must be strictly increasing".into()));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::Validation("non-finite entry in temperature table".into()));
        }
        Ok(Table { points })
    }

    pub fn constant(v: f64) -> Self {
        Table { points: vec![(20.0, v)] }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn at(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        if t >= p[p.len() - 1].0 {
            return p[p.len() - 1].1;
        }
        let i = p.partition_point(|q| q.0 <= t);
        let (t0, v0) = p[i - 1];
        let (t1, v1) = p[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Internal variables at one integration point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MaterialState {
    /// Plastic strain, Voigt with engineering shear.
    pub plastic_strain: Voigt,
    /// Cumulated plasticity.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawResponse {
    pub stress: Voigt,
    pub tangent: Matrix6,
    pub state: MaterialState,
}

/// Constitutive law contract: total strain, temperature, time step and the
/// previous converged state in; stress, tangent and updated state out.
pub trait Law: Send + Sync {
    fn evaluate(
        &self,
        state: &MaterialState,
        strain: &Voigt,
        temperature: f64,
        dt: f64,
    ) -> std::result::Result<LawResponse, String>;

    /// False for laws without history (the state is never modified).
    fn has_internal_variables(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasParams {
    pub y1111: Table,
    pub y1122: Table,
    pub y1212: Table,
    pub alpha: Table,
    pub t0: f64,
}

impl ElasParams {
    /// Isotropic parameters from Lame coefficients.
    pub fn isotropic(lambda: f64, mu: f64, alpha: f64) -> Self {
        ElasParams {
            y1111: Table::constant(lambda + 2.0 * mu),
            y1122: Table::constant(lambda),
            y1212: Table::constant(mu),
            alpha: Table::constant(alpha),
            t0: 20.0,
        }
    }

    /// Voigt stiffness matrix at temperature `t`.
    pub fn stiffness(&self, t: f64) -> Matrix6 {
        let (a, b, c) = (self.y1111.at(t), self.y1122.at(t), self.y1212.at(t));
        let mut m = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = if i == j { a } else { b };
            }
            m[(i + 3, i + 3)] = c;
        }
        m
    }

    pub fn thermal_strain(&self, t: f64) -> Voigt {
        let e = self.alpha.at(t) * (t - self.t0);
        [e, e, e, 0.0, 0.0, 0.0]
    }

    /// Temperatures at which any elastic coefficient is tabulated.
    fn tabulated_temperatures(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = [&self.y1111, &self.y1122, &self.y1212]
            .iter()
            .flat_map(|t| t.points.iter().map(|p| p.0))
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    pub fn validate(&self) -> Result<()> {
        for t in self.tabulated_temperatures() {
            if self.stiffness(t).cholesky().is_none() {
                return Err(Error::Validation(format!(
                    "elastic stiffness not positive definite at T = {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, strain: &Voigt, t: f64) -> LawResponse {
        let a = self.stiffness(t);
        let th = self.thermal_strain(t);
        let e = Vector6::from_fn(|i, _| strain[i] - th[i]);
        let s = a * e;
        LawResponse {
            stress: s.into(),
            tangent: a,
            state: MaterialState::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvpParams {
    pub elas: ElasParams,
    pub c: Table,
    pub d: Table,
    pub k: Table,
    pub m: Table,
    pub r0: Table,
}

impl EvpParams {
    pub fn validate(&self) -> Result<()> {
        self.elas.validate()?;
        for (name, table, ok) in [
            ("K", &self.k, (|v: f64| v > 0.0) as fn(f64) -> bool),
            ("m", &self.m, |v| v >= 1.0),
            ("R0", &self.r0, |v| v >= 0.0),
            ("C", &self.c, |v| v >= 0.0),
            ("D", &self.d, |v| v >= 0.0),
        ] {
            if let Some(&(t, v)) = table.points.iter().find(|p| !ok(p.1)) {
                return Err(Error::Validation(format!("evp coefficient {name} = {v} invalid at T = {t}")));
            }
        }
        Ok(())
    }
}

/// Coefficients of the evp law frozen at one temperature, Mandel form.
struct EvpAt {
    a: Matrix6,
    pa: Matrix6,
    c: f64,
    d: f64,
    k: f64,
    m: f64,
    r0: f64,
}

fn to_mandel(v: &Voigt, strain_like: bool) -> Vector6 {
    Vector6::from_fn(|i, _| if strain_like { v[i] / MANDEL[i] } else { v[i] * MANDEL[i] })
}

fn strain_from_mandel(v: &Vector6) -> Voigt {
    std::array::from_fn(|i| v[i] * MANDEL[i])
}

fn stress_from_mandel(v: &Vector6) -> Voigt {
    std::array::from_fn(|i| v[i] / MANDEL[i])
}

fn deviatoric_projector() -> Matrix6 {
    let mut p = Matrix6::identity();
    for i in 0..3 {
        for j in 0..3 {
            p[(i, j)] -= 1.0 / 3.0;
        }
    }
    p
}

const LOCAL_MAX_ITERS: usize = 50;
const LOCAL_TOL: f64 = 1e-12;

impl EvpAt {
    fn new(params: &EvpParams, t: f64) -> Self {
        let av = params.elas.stiffness(t);
        let s = Matrix6::from_diagonal(&Vector6::from_column_slice(&MANDEL));
        let a = s * av * s;
        EvpAt {
            pa: deviatoric_projector() * a,
            a,
            c: params.c.at(t),
            d: params.d.at(t),
            k: params.k.at(t),
            m: params.m.at(t),
            r0: params.r0.at(t),
        }
    }

    /// Smallest shear modulus of the cubic stiffness (Mandel eigenvalues / 2).
    fn shear_modulus(&self) -> f64 {
        0.5 * (self.a[(0, 0)] - self.a[(0, 1)]).min(self.a[(3, 3)])
    }

    /// Effective stress `s` for elastic strain driver `ee = e - e_th`.
    fn effective(&self, ee: &Vector6, ep: &Vector6) -> Vector6 {
        self.pa * (ee - ep) - ep * self.c
    }

    fn normal(s: &Vector6) -> (Vector6, f64) {
        let seq = (1.5 * s.norm_squared()).sqrt();
        (s * (1.5 / seq), seq)
    }

    /// dn/ds.
    fn normal_derivative(n: &Vector6, seq: f64) -> Matrix6 {
        (Matrix6::identity() - n * n.transpose() * (2.0 / 3.0)) * (1.5 / seq)
    }

    /// Solve the plastic-strain equations for a fixed increment `dp`.
    fn solve_plastic_strain(
        &self,
        ee: &Vector6,
        ep_n: &Vector6,
        dp: f64,
        guess: Vector6,
    ) -> std::result::Result<(Vector6, Vector6, f64, Matrix6), String> {
        let mut ep = guess;
        let scale = ep_n.norm() + dp + f64::MIN_POSITIVE;
        for _ in 0..LOCAL_MAX_ITERS {
            let s = self.effective(ee, &ep);
            let (n, seq) = Self::normal(&s);
            if !(seq > 0.0) || !seq.is_finite() {
                return Err(format!("degenerate effective stress during flow (s_eq = {seq:e})"));
            }
            let r = ep - ep_n - (n - ep * self.d) * dp;
            let jac = Matrix6::identity() * (1.0 + dp * self.d)
                + Self::normal_derivative(&n, seq) * (self.pa + Matrix6::identity() * self.c) * dp;
            let lu = jac.lu();
            let delta = lu.solve(&r).ok_or("singular local Jacobian")?;
            ep -= delta;
            if delta.norm() <= 1e-15 * scale {
                let s = self.effective(ee, &ep);
                let (n, seq) = Self::normal(&s);
                let jac = Matrix6::identity() * (1.0 + dp * self.d)
                    + Self::normal_derivative(&n, seq) * (self.pa + Matrix6::identity() * self.c) * dp;
                return Ok((ep, n, seq, jac));
            }
        }
        Err(format!("plastic strain iteration did not converge for dp = {dp:e}"))
    }

    fn update(&self, ep_n: &Vector6, p_n: f64, ee: &Vector6, dt: f64) -> std::result::Result<(Vector6, f64, Matrix6), String> {
        let s_tr = self.effective(ee, ep_n);
        let seq_tr = (1.5 * s_tr.norm_squared()).sqrt();
        let f_tr = seq_tr - self.r0;
        if !(f_tr > 0.0) {
            return Ok((*ep_n, p_n, self.a));
        }
        if !(dt > 0.0) {
            return Err(format!("non-positive time step {dt:e} with active flow"));
        }
        let flow = |f: f64| dt * (f.max(0.0) / self.k).powf(self.m);
        // phi(dp) = s_eq(dp) - R0 - K (dp/dt)^(1/m), decreasing, phi(0) = f_tr > 0
        let mut lo = 0.0;
        let mut hi = flow(f_tr);
        let mut guess = *ep_n;
        let mut dp = hi.min(f_tr / (3.0 * self.shear_modulus() + 1.5 * self.c));
        let mut state = None;
        for _ in 0..LOCAL_MAX_ITERS {
            let (ep, n, seq, jac) = match self.solve_plastic_strain(ee, ep_n, dp, guess) {
                Ok(v) => v,
                Err(_) if dp > lo => {
                    hi = dp;
                    dp = 0.5 * (lo + hi);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let f = seq - self.r0;
            let visc = self.k * (dp / dt).powf(1.0 / self.m);
            let phi = f - visc;
            let rate_residual = (dp - flow(f)).abs();
            if phi > 0.0 {
                lo = dp;
                if lo >= hi {
                    hi = 2.0 * lo;
                }
            } else {
                hi = dp;
            }
            guess = ep;
            if rate_residual <= LOCAL_TOL * dp || hi - lo <= 1e-13 * hi {
                state = Some((ep, n, seq, jac));
                break;
            }
            let dep = jac.lu().solve(&(n - ep * self.d)).ok_or("singular local Jacobian")?;
            let dseq = -n.dot(&((self.pa + Matrix6::identity() * self.c) * dep));
            let dvisc = self.k / (self.m * dt) * (dp / dt).powf(1.0 / self.m - 1.0);
            let dphi = dseq - dvisc;
            let mut next = dp - phi / dphi;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            dp = next;
        }
        let Some((ep, n, seq, jac)) = state else {
            return Err(format!(
                "plastic increment iteration exceeded {LOCAL_MAX_ITERS} iterations (trial overstress {f_tr:e})"
            ));
        };
        // consistent tangent from the 7x7 linearization in (ep, dp)
        let papc = self.pa + Matrix6::identity() * self.c;
        let nder = Self::normal_derivative(&n, seq);
        let mut sys = Matrix7::zeros();
        sys.fixed_view_mut::<6, 6>(0, 0).copy_from(&jac);
        let g = n - ep * self.d;
        for i in 0..6 {
            sys[(i, 6)] = -g[i];
        }
        let row = -(n.transpose() * papc);
        for j in 0..6 {
            sys[(6, j)] = row[j];
        }
        sys[(6, 6)] = -self.k / (self.m * dt) * (dp / dt).powf(1.0 / self.m - 1.0);
        let mut rhs = SMatrix::<f64, 7, 6>::zeros();
        let de = nder * self.pa * dp;
        rhs.fixed_view_mut::<6, 6>(0, 0).copy_from(&de);
        let dpe = -(n.transpose() * self.pa);
        for j in 0..6 {
            rhs[(6, j)] = dpe[j];
        }
        let sol = sys.lu().solve(&rhs).ok_or("singular tangent system")?;
        let dep_de = sol.fixed_view::<6, 6>(0, 0).into_owned();
        let tangent = self.a * (Matrix6::identity() - dep_de);
        Ok((ep, p_n + dp, tangent))
    }
}

impl EvpParams {
    pub fn evaluate(
        &self,
        state: &MaterialState,
        strain: &Voigt,
        t: f64,
        dt: f64,
    ) -> std::result::Result<LawResponse, String> {
        let at = EvpAt::new(self, t);
        let th = self.elas.thermal_strain(t);
        let ee_v: Voigt = std::array::from_fn(|i| strain[i] - th[i]);
        let ee = to_mandel(&ee_v, true);
        let ep_n = to_mandel(&state.plastic_strain, true);
        let (ep, p, tangent_m) = at.update(&ep_n, state.p, &ee, dt)?;
        let sigma = at.a * (ee - ep);
        let sinv = Matrix6::from_diagonal(&Vector6::from_fn(|i, _| 1.0 / MANDEL[i]));
        let response = LawResponse {
            stress: stress_from_mandel(&sigma),
            tangent: sinv * tangent_m * sinv,
            state: MaterialState {
                plastic_strain: strain_from_mandel(&ep),
                p,
            },
        };
        if response.stress.iter().any(|v| !v.is_finite()) {
            return Err("non-finite stress".into());
        }
        Ok(response)
    }
}

/// A material read from a `HRMAT` file.
#[derive(Debug, Clone, PartialEq)]
pub enum Material {
    Elas(ElasParams),
    Evp(EvpParams),
}

impl Law for Material {
    fn evaluate(
        &self,
        state: &MaterialState,
        strain: &Voigt,
        temperature: f64,
        dt: f64,
    ) -> std::result::Result<LawResponse, String> {
        match self {
            Material::Elas(p) => Ok(p.evaluate(strain, temperature)),
            Material::Evp(p) => p.evaluate(state, strain, temperature, dt),
        }
    }

    fn has_internal_variables(&self) -> bool {
        matches!(self, Material::Evp(_))
    }
}

impl Material {
    pub fn elas(&self) -> &ElasParams {
        match self {
            Material::Elas(p) => p,
            Material::Evp(p) => &p.elas,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Material::Elas(p) => p.validate(),
            Material::Evp(p) => p.validate(),
        }
    }

    pub fn to_text(&self) -> String {
        fn line(out: &mut String, name: &str, t: &Table) {
            let _ = write!(out, "{name}");
            for (temp, v) in &t.points {
                let _ = write!(out, " {temp}:{v}");
            }
            out.push('\n');
        }
        let mut out = String::from("HRMAT 1\n[elas]\n");
        let e = self.elas();
        let _ = writeln!(out, "T0 {}", e.t0);
        line(&mut out, "y1111", &e.y1111);
        line(&mut out, "y1122", &e.y1122);
        line(&mut out, "y1212", &e.y1212);
        line(&mut out, "alpha", &e.alpha);
        if let Material::Evp(p) = self {
            out.push_str("[evp]\n");
            line(&mut out, "C", &p.c);
            line(&mut out, "D", &p.d);
            line(&mut out, "K", &p.k);
            line(&mut out, "m", &p.m);
            line(&mut out, "R0", &p.r0);
        }
        out
    }

    pub fn parse(text: &str, name: &str) -> Result<Material> {
        let mut lines = Lines::new(text, name);
        lines.expect_header("HRMAT", "1")?;
        let mut section = String::new();
        let mut elas: Vec<(String, Table)> = Vec::new();
        let mut evp: Vec<(String, Table)> = Vec::new();
        let mut t0 = 20.0;
        let mut has_evp = false;
        while let Some((ln, toks)) = lines.next_tokens() {
            if toks[0].starts_with('[') {
                section = toks[0].trim_matches(|c| c == '[' || c == ']').to_string();
                match section.as_str() {
                    "elas" => {}
                    "evp" => has_evp = true,
                    _ => return Err(lines.err(ln, format!("unknown section [{section}]"))),
                }
                continue;
            }
            if toks[0] == "T0" {
                t0 = lines.parse_tok(ln, &toks, 1)?;
                continue;
            }
            let mut pts = Vec::new();
            for tok in &toks[1..] {
                let (a, b) = tok
                    .split_once(':')
                    .ok_or_else(|| lines.err(ln, format!("expected T:value, found `{tok}`")))?;
                let t: f64 = a.parse().map_err(|_| lines.err(ln, format!("bad temperature `{a}`")))?;
                let v: f64 = b.parse().map_err(|_| lines.err(ln, format!("bad value `{b}`")))?;
                pts.push((t, v));
            }
            let table = Table::new(pts).map_err(|e| lines.err(ln, e.to_string()))?;
            match section.as_str() {
                "elas" => elas.push((toks[0].to_string(), table)),
                "evp" => evp.push((toks[0].to_string(), table)),
                _ => return Err(lines.err(ln, "coefficient outside of a section")),
            }
        }
        let take = |list: &mut Vec<(String, Table)>, key: &str| -> Result<Table> {
            let i = list
                .iter()
                .position(|(k, _)| k == key)
                .ok_or_else(|| Error::parse(name, 0, format!("missing coefficient {key}")))?;
            Ok(list.remove(i).1)
        };
        let e = ElasParams {
            y1111: take(&mut elas, "y1111")?,
            y1122: take(&mut elas, "y1122")?,
            y1212: take(&mut elas, "y1212")?,
            alpha: take(&mut elas, "alpha")?,
            t0,
        };
        if let Some((k, _)) = elas.first() {
            return Err(Error::parse(name, 0, format!("unknown elastic coefficient {k}")));
        }
        let material = if has_evp {
            let p = EvpParams {
                elas: e,
                c: take(&mut evp, "C")?,
                d: take(&mut evp, "D")?,
                k: take(&mut evp, "K")?,
                m: take(&mut evp, "m")?,
                r0: take(&mut evp, "R0")?,
            };
            if let Some((k, _)) = evp.first() {
                return Err(Error::parse(name, 0, format!("unknown evp coefficient {k}")));
            }
            Material::Evp(p)
        } else {
            Material::Elas(e)
        };
        material.validate()?;
        Ok(material)
    }

    pub fn read(path: &Path) -> Result<Material> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Material::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Nickel-superalloy-like evp parameters used by the demo bar.
pub fn demo_material() -> Material {
    let t = |pts: &[(f64, f64)]| Table::new(pts.to_vec()).expect("static table");
    Material::Evp(EvpParams {
        elas: ElasParams {
            y1111: t(&[(20.0, 259_600.0), (600.0, 228_000.0), (1000.0, 204_000.0)]),
            y1122: t(&[(20.0, 179_000.0), (600.0, 159_000.0), (1000.0, 143_000.0)]),
            y1212: t(&[(20.0, 109_600.0), (600.0, 96_000.0), (1000.0, 86_000.0)]),
            alpha: t(&[(20.0, 1.2e-5), (1000.0, 1.6e-5)]),
            t0: 20.0,
        },
        c: t(&[(20.0, 100_000.0), (1000.0, 60_000.0)]),
        d: t(&[(20.0, 500.0), (1000.0, 300.0)]),
        k: t(&[(20.0, 500.0), (1000.0, 400.0)]),
        m: t(&[(20.0, 5.0), (1000.0, 5.0)]),
        r0: t(&[(20.0, 300.0), (1000.0, 150.0)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evp() -> EvpParams {
        match demo_material() {
            Material::Evp(p) => p,
            _ => unreachable!(),
        }
    }

    #[test]
    fn table_interpolates_and_clamps() {
        let t = Table::new(vec![(0.0, 1.0), (10.0, 3.0)]).unwrap();
        assert_eq!(t.at(-5.0), 1.0);
        assert_eq!(t.at(5.0), 2.0);
        assert_eq!(t.at(20.0), 3.0);
        assert!(Table::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
    }

    #[test]
    fn isotropic_reduction_is_hooke() {
        let (lambda, mu) = (120_000.0, 80_000.0);
        let p = ElasParams::isotropic(lambda, mu, 0.0);
        let e = 1e-3;
        let r = p.evaluate(&[e, 0.0, 0.0, 0.0, 0.0, 0.0], 20.0);
        assert!((r.stress[0] - (lambda + 2.0 * mu) * e).abs() < 1e-9);
        assert!((r.stress[1] - lambda * e).abs() < 1e-9);
        let g = 2e-3;
        let r = p.evaluate(&[0.0, 0.0, 0.0, g, 0.0, 0.0], 20.0);
        assert!((r.stress[3] - mu * g).abs() < 1e-9);
    }

    #[test]
    fn thermal_strain_is_stress_free() {
        let p = evp();
        for t in [20.0, 350.0, 900.0] {
            let th = p.elas.thermal_strain(t);
            let r = p.evaluate(&MaterialState::default(), &th, t, 1.0).unwrap();
            assert!(r.stress.iter().all(|s| s.abs() < 1e-9));
            assert_eq!(r.state, MaterialState::default());
        }
    }

    #[test]
    fn below_yield_matches_elastic_law() {
        let p = evp();
        let state = MaterialState {
            plastic_strain: [1e-4, -5e-5, -5e-5, 2e-5, 0.0, 0.0],
            p: 3e-4,
        };
        let eps = [2e-4, 1e-5, -3e-5, 1e-5, 0.0, 2e-5];
        let r = p.evaluate(&state, &eps, 300.0, 1.0).unwrap();
        let shifted: Voigt = std::array::from_fn(|i| eps[i] - state.plastic_strain[i]);
        let e = p.elas.evaluate(&shifted, 300.0);
        for i in 0..6 {
            assert!((r.stress[i] - e.stress[i]).abs() <= 1e-12 * e.stress[0].abs().max(1.0));
        }
        assert_eq!(r.state, state);
    }

    #[test]
    fn stiffness_is_positive_definite_when_tabulated() {
        demo_material().validate().unwrap();
        let mut e = ElasParams::isotropic(1.0, 1.0, 0.0);
        e.y1122 = Table::constant(5.0);
        assert!(e.validate().is_err());
    }

    #[test]
    fn hrmat_round_trip() {
        let m = demo_material();
        let back = Material::parse(&m.to_text(), "mem").unwrap();
        assert_eq!(back, m);
        assert!(Material::parse("HRMAT 1\n[elas]\ny1111 20:1\n", "x").is_err());
    }

    #[test]
    fn flow_increment_is_consistent_with_rate() {
        let p = evp();
        let dt = 2.0;
        let eps = [6e-3, -3e-3, -3e-3, 1e-3, 0.0, 0.0];
        let r = p.evaluate(&MaterialState::default(), &eps, 500.0, dt).unwrap();
        assert!(r.state.p > 0.0);
        // recompute f from the returned state
        let at = EvpAt::new(&p, 500.0);
        let th = p.elas.thermal_strain(500.0);
        let ee = to_mandel(&std::array::from_fn(|i| eps[i] - th[i]), true);
        let ep = to_mandel(&r.state.plastic_strain, true);
        let s = at.effective(&ee, &ep);
        let f = (1.5 * s.norm_squared()).sqrt() - at.r0;
        let expected = dt * (f / at.k).powf(at.m);
        assert!((r.state.p - expected).abs() <= 1e-10 * expected);
    }
}
