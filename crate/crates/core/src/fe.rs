//! Finite-element interpolation on tetrahedra: quadrature, integration
//! points, strain operators, load vectors and L2 Gram matrices.
//!
//! Strains and stresses use Voigt order (11, 22, 33, 12, 23, 13); strains
//! carry engineering shear (2 e_ij) so that `stress . strain` is the full
//! double contraction.

use std::collections::HashMap;

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::mesh::{ElementOrder, Mesh};
use crate::par;
use crate::sparse::CsrMatrix;

pub type Voigt = [f64; 6];

/// Quadrature rule on the reference tetrahedron (0,0,0),(1,0,0),(0,1,0),(0,0,1);
/// weights sum to 1/6.
#[derive(Debug, Clone)]
pub struct TetRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TetRule {
    fn from_barycentric(bary: &[([f64; 4], f64)]) -> Self {
        TetRule {
            points: bary.iter().map(|(l, _)| [l[1], l[2], l[3]]).collect(),
            weights: bary.iter().map(|(_, w)| w / 6.0).collect(),
        }
    }

    /// One-point centroid rule (degree 1).
    pub fn centroid() -> Self {
        Self::from_barycentric(&[([0.25; 4], 1.0)])
    }

    /// Five-point rule with equal positive weights, exact to degree 2:
    /// the centroid plus the four points with barycentric (5/8, 1/8, 1/8, 1/8).
    pub fn five_point() -> Self {
        let (a, b) = (0.625, 0.125);
        Self::from_barycentric(&[
            ([0.25; 4], 0.2),
            ([a, b, b, b], 0.2),
            ([b, a, b, b], 0.2),
            ([b, b, a, b], 0.2),
            ([b, b, b, a], 0.2),
        ])
    }

    /// Collapsed 4x4x4 Gauss-Legendre product rule, exact to degree 5 on the
    /// tetrahedron. Used for mass-type integrals.
    pub fn collapsed_gauss4() -> Self {
        let x = [0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        let w = [0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
        let mut nodes = Vec::new();
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(((1.0 - xi) / 2.0, wi / 2.0));
            nodes.push(((1.0 + xi) / 2.0, wi / 2.0));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for &(u, wu) in &nodes {
            for &(v, wv) in &nodes {
                for &(s, ws) in &nodes {
                    points.push([u, v * (1.0 - u), s * (1.0 - u) * (1.0 - v)]);
                    weights.push(wu * wv * ws * (1.0 - u) * (1.0 - u) * (1.0 - v));
                }
            }
        }
        TetRule { points, weights }
    }

    /// Stiffness rule used for integration points of a given element order.
    pub fn for_order(order: ElementOrder) -> Self {
        match order {
            ElementOrder::Linear => Self::centroid(),
            ElementOrder::Quadratic => Self::five_point(),
        }
    }
}

/// Shape functions and reference gradients at a reference point.
pub fn tet_shape(order: ElementOrder, xi: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let l = [1.0 - xi[0] - xi[1] - xi[2], xi[0], xi[1], xi[2]];
    let dl = [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    match order {
        ElementOrder::Linear => (l.to_vec(), dl.to_vec()),
        ElementOrder::Quadratic => {
            let mut n = Vec::with_capacity(10);
            let mut dn = Vec::with_capacity(10);
            for i in 0..4 {
                n.push(l[i] * (2.0 * l[i] - 1.0));
                let f = 4.0 * l[i] - 1.0;
                dn.push([f * dl[i][0], f * dl[i][1], f * dl[i][2]]);
            }
            for (a, b) in [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)] {
                n.push(4.0 * l[a] * l[b]);
                dn.push([
                    4.0 * (l[b] * dl[a][0] + l[a] * dl[b][0]),
                    4.0 * (l[b] * dl[a][1] + l[a] * dl[b][1]),
                    4.0 * (l[b] * dl[a][2] + l[a] * dl[b][2]),
                ]);
            }
            (n, dn)
        }
    }
}

/// Shape functions and reference gradients of a facet at (s, t).
pub fn tri_shape(order: ElementOrder, st: &[f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
    let l = [1.0 - st[0] - st[1], st[0], st[1]];
    let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    match order {
        ElementOrder::Linear => (l.to_vec(), dl.to_vec()),
        ElementOrder::Quadratic => {
            let mut n = Vec::with_capacity(6);
            let mut dn = Vec::with_capacity(6);
            for i in 0..3 {
                n.push(l[i] * (2.0 * l[i] - 1.0));
                let f = 4.0 * l[i] - 1.0;
                dn.push([f * dl[i][0], f * dl[i][1]]);
            }
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                n.push(4.0 * l[a] * l[b]);
                dn.push([
                    4.0 * (l[b] * dl[a][0] + l[a] * dl[b][0]),
                    4.0 * (l[b] * dl[a][1] + l[a] * dl[b][1]),
                ]);
            }
            (n, dn)
        }
    }
}

/// Three-point triangle rule (degree 2); reference weights sum to 1/2.
const TRI_RULE: [([f64; 2], f64); 3] = [
    ([1.0 / 6.0, 1.0 / 6.0], 1.0 / 6.0),
    ([2.0 / 3.0, 1.0 / 6.0], 1.0 / 6.0),
    ([1.0 / 6.0, 2.0 / 3.0], 1.0 / 6.0),
];

/// Physical quadrature data of one element for a given rule.
struct ElementQuadrature {
    positions: Vec<[f64; 3]>,
    weights: Vec<f64>,
    shapes: Vec<Vec<f64>>,
    grads: Vec<Vec<[f64; 3]>>,
}

fn element_quadrature(mesh: &Mesh, e: usize, rule: &TetRule) -> Result<ElementQuadrature> {
    let nodes = mesh.element(e);
    let mut q = ElementQuadrature {
        positions: Vec::with_capacity(rule.points.len()),
        weights: Vec::with_capacity(rule.points.len()),
        shapes: Vec::with_capacity(rule.points.len()),
        grads: Vec::with_capacity(rule.points.len()),
    };
    for (xi, &w) in rule.points.iter().zip(&rule.weights) {
        let (n, dn) = tet_shape(mesh.order, xi);
        let mut jac = Matrix3::<f64>::zeros();
        let mut x = [0.0; 3];
        for (a, &node) in nodes.iter().enumerate() {
            let p = mesh.nodes[node];
            for i in 0..3 {
                x[i] += n[a] * p[i];
                for j in 0..3 {
                    jac[(i, j)] += p[i] * dn[a][j];
                }
            }
        }
        let det = jac.determinant();
        if !(det > 0.0) {
            return Err(Error::Validation(format!(
                "element {e} has non-positive Jacobian determinant {det:e}"
            )));
        }
        let inv_t = jac.try_inverse().expect("positive determinant").transpose();
        let g: Vec<[f64; 3]> = dn
            .iter()
            .map(|d| {
                let v = inv_t * Vector3::new(d[0], d[1], d[2]);
                [v[0], v[1], v[2]]
            })
            .collect();
        q.positions.push(x);
        q.weights.push(w * det);
        q.shapes.push(n);
        q.grads.push(g);
    }
    Ok(q)
}

/// All integration points of a mesh, element-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationPointSet {
    pub element: Vec<usize>,
    pub position: Vec<[f64; 3]>,
    pub weight: Vec<f64>,
    pub subdomain: Vec<usize>,
    nodes_per_element: usize,
    points_per_element: usize,
    shape: Vec<f64>,
    grad: Vec<[f64; 3]>,
}

impl IntegrationPointSet {
    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    pub fn points_per_element(&self) -> usize {
        self.points_per_element
    }

    pub fn shape(&self, k: usize) -> &[f64] {
        &self.shape[k * self.nodes_per_element..(k + 1) * self.nodes_per_element]
    }

    /// Physical shape-function gradients at point `k`.
    pub fn grads(&self, k: usize) -> &[[f64; 3]] {
        &self.grad[k * self.nodes_per_element..(k + 1) * self.nodes_per_element]
    }

    pub fn points_of_element(&self, e: usize) -> std::ops::Range<usize> {
        e * self.points_per_element..(e + 1) * self.points_per_element
    }

    /// Global point ids of subdomain `l` (1-based), increasing.
    pub fn points_of_subdomain(&self, l: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.subdomain[k] == l).collect()
    }

    /// 6 x (3 * nodes) strain-displacement matrix at point `k`.
    pub fn b_matrix(&self, k: usize) -> nalgebra::DMatrix<f64> {
        let g = self.grads(k);
        let mut b = nalgebra::DMatrix::zeros(6, 3 * g.len());
        for (a, ga) in g.iter().enumerate() {
            let ba = b_block(ga);
            b.view_mut((0, 3 * a), (6, 3)).copy_from(&ba);
        }
        b
    }

    /// Interpolate a nodal scalar field at point `k`.
    pub fn interpolate(&self, mesh: &Mesh, k: usize, nodal: &[f64]) -> f64 {
        let nodes = mesh.element(self.element[k]);
        self.shape(k).iter().zip(nodes).map(|(n, &i)| n * nodal[i]).sum()
    }
}

/// Voigt strain-displacement block of one node.
pub fn b_block(g: &[f64; 3]) -> SMatrix<f64, 6, 3> {
    SMatrix::<f64, 6, 3>::from_row_slice(&[
        g[0], 0.0, 0.0, //
        0.0, g[1], 0.0, //
        0.0, 0.0, g[2], //
        g[1], g[0], 0.0, //
        0.0, g[2], g[1], //
        g[2], 0.0, g[0],
    ])
}

/// `B_a^T sigma` for one node.
#[inline]
pub fn bt_stress(g: &[f64; 3], s: &Voigt) -> [f64; 3] {
    [
        g[0] * s[0] + g[1] * s[3] + g[2] * s[5],
        g[1] * s[1] + g[0] * s[3] + g[2] * s[4],
        g[2] * s[2] + g[1] * s[4] + g[0] * s[5],
    ]
}

/// Integration points with the stiffness rule of the mesh order.
pub fn build_integration_points(mesh: &Mesh) -> Result<IntegrationPointSet> {
    let rule = TetRule::for_order(mesh.order);
    let npe = mesh.order.nodes_per_element();
    let ppe = rule.points.len();
    let per_element = par::try_map_range(mesh.n_elements(), |e| element_quadrature(mesh, e, &rule))?;
    let mut set = IntegrationPointSet {
        element: Vec::with_capacity(per_element.len() * ppe),
        position: Vec::with_capacity(per_element.len() * ppe),
        weight: Vec::with_capacity(per_element.len() * ppe),
        subdomain: Vec::with_capacity(per_element.len() * ppe),
        nodes_per_element: npe,
        points_per_element: ppe,
        shape: Vec::with_capacity(per_element.len() * ppe * npe),
        grad: Vec::with_capacity(per_element.len() * ppe * npe),
    };
    for (e, q) in per_element.into_iter().enumerate() {
        for i in 0..ppe {
            set.element.push(e);
            set.position.push(q.positions[i]);
            set.weight.push(q.weights[i]);
            set.subdomain.push(mesh.subdomain_of_element[e]);
            set.shape.extend_from_slice(&q.shapes[i]);
            set.grad.extend_from_slice(&q.grads[i]);
        }
    }
    Ok(set)
}

/// Numbering of free degrees of freedom (Dirichlet nodes eliminated).
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    node_dof: Vec<Option<usize>>,
    n_dofs: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let fixed = mesh.dirichlet_nodes();
        let mut next = 0;
        let node_dof = (0..mesh.n_nodes())
            .map(|i| {
                if fixed.contains(&i) {
                    None
                } else {
                    next += 3;
                    Some(next - 3)
                }
            })
            .collect();
        DofMap { node_dof, n_dofs: next }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// First dof of node `i`, or `None` if the node is clamped.
    pub fn node(&self, i: usize) -> Option<usize> {
        self.node_dof[i]
    }

    /// Nodal displacement of node `i` from a dof vector (zero if clamped).
    pub fn nodal(&self, u: &[f64], i: usize) -> [f64; 3] {
        match self.node_dof[i] {
            Some(d) => [u[d], u[d + 1], u[d + 2]],
            None => [0.0; 3],
        }
    }

    /// Free-dof vector to a full nodal field of `3 * n_nodes` entries.
    pub fn expand(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.node_dof.len()];
        for (i, d) in self.node_dof.iter().enumerate() {
            if let Some(d) = d {
                out[3 * i..3 * i + 3].copy_from_slice(&u[*d..*d + 3]);
            }
        }
        out
    }
}

/// Strain at integration point `k` for displacement `u` (free dofs).
pub fn strain_at_point(mesh: &Mesh, ips: &IntegrationPointSet, dofs: &DofMap, u: &[f64], k: usize) -> Voigt {
    let nodes = mesh.element(ips.element[k]);
    let mut e = [0.0; 6];
    for (g, &node) in ips.grads(k).iter().zip(nodes) {
        let d = dofs.nodal(u, node);
        e[0] += g[0] * d[0];
        e[1] += g[1] * d[1];
        e[2] += g[2] * d[2];
        e[3] += g[1] * d[0] + g[0] * d[1];
        e[4] += g[2] * d[1] + g[1] * d[2];
        e[5] += g[2] * d[0] + g[0] * d[2];
    }
    e
}

/// Strains at all integration points.
pub fn strain_at_points(mesh: &Mesh, ips: &IntegrationPointSet, dofs: &DofMap, u: &[f64]) -> Result<Vec<Voigt>> {
    if u.len() != dofs.n_dofs() {
        return Err(Error::dim("strain_at_points displacement", dofs.n_dofs(), u.len()));
    }
    Ok(par::map_range(ips.len(), |k| strain_at_point(mesh, ips, dofs, u, k)))
}

/// Sparsity pattern coupling the dofs of the given elements.
pub fn sparsity_pattern(mesh: &Mesh, dofs: &DofMap, elements: &[usize]) -> CsrMatrix {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); dofs.n_dofs()];
    for &e in elements {
        let ed: Vec<usize> = element_dofs(mesh, dofs, e).into_iter().flatten().collect();
        for &i in &ed {
            rows[i].extend_from_slice(&ed);
        }
    }
    CsrMatrix::from_rows(dofs.n_dofs(), rows)
}

/// Dofs of every local node/component of element `e` (`None` when clamped).
pub fn element_dofs(mesh: &Mesh, dofs: &DofMap, e: usize) -> Vec<Option<usize>> {
    mesh.element(e)
        .iter()
        .flat_map(|&n| {
            let d = dofs.node(n);
            (0..3).map(move |c| d.map(|d| d + c))
        })
        .collect()
}

/// Volumic force density description.
#[derive(Debug, Clone, PartialEq)]
pub enum BodyForce {
    /// Constant force per unit volume.
    Constant([f64; 3]),
    /// Centrifugal load `rho * omega^2 * r_perp` around an axis.
    Centrifugal {
        density: f64,
        omega: f64,
        axis: [f64; 3],
        point: [f64; 3],
    },
}

impl BodyForce {
    pub fn at(&self, x: &[f64; 3]) -> [f64; 3] {
        match self {
            BodyForce::Constant(f) => *f,
            BodyForce::Centrifugal {
                density,
                omega,
                axis,
                point,
            } => {
                let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                let a = [axis[0] / n, axis[1] / n, axis[2] / n];
                let r = [x[0] - point[0], x[1] - point[1], x[2] - point[2]];
                let proj = r[0] * a[0] + r[1] * a[1] + r[2] * a[2];
                let s = density * omega * omega;
                [
                    s * (r[0] - proj * a[0]),
                    s * (r[1] - proj * a[1]),
                    s * (r[2] - proj * a[2]),
                ]
            }
        }
    }
}

/// External force vector `int f.phi + sum_tags int t.phi` on free dofs.
pub fn assemble_external_forces(
    mesh: &Mesh,
    ips: &IntegrationPointSet,
    dofs: &DofMap,
    body: &[BodyForce],
    tractions: &[(i64, [f64; 3])],
) -> Result<Vec<f64>> {
    let tags = mesh.facet_tags();
    for (tag, _) in tractions {
        if !tags.contains(tag) {
            return Err(Error::Validation(format!("traction on unknown facet tag {tag}")));
        }
    }
    let mut f = vec![0.0; dofs.n_dofs()];
    if !body.is_empty() {
        for k in 0..ips.len() {
            let x = ips.position[k];
            let mut fx = [0.0; 3];
            for b in body {
                let v = b.at(&x);
                for c in 0..3 {
                    fx[c] += v[c];
                }
            }
            if fx == [0.0; 3] {
                continue;
            }
            let nodes = mesh.element(ips.element[k]);
            for (n, &node) in ips.shape(k).iter().zip(nodes) {
                if let Some(d) = dofs.node(node) {
                    for c in 0..3 {
                        f[d + c] += ips.weight[k] * n * fx[c];
                    }
                }
            }
        }
    }
    let by_tag: HashMap<i64, [f64; 3]> = {
        let mut m = HashMap::new();
        for (tag, t) in tractions {
            let e = m.entry(*tag).or_insert([0.0; 3]);
            for c in 0..3 {
                e[c] += t[c];
            }
        }
        m
    };
    for facet in &mesh.facets {
        let Some(t) = by_tag.get(&facet.tag) else { continue };
        if *t == [0.0; 3] {
            continue;
        }
        for (st, w) in TRI_RULE {
            let (n, dn) = tri_shape(mesh.order, &st);
            let mut ds = [0.0; 3];
            let mut dt = [0.0; 3];
            for (a, &node) in facet.nodes.iter().enumerate() {
                let p = mesh.nodes[node];
                for c in 0..3 {
                    ds[c] += p[c] * dn[a][0];
                    dt[c] += p[c] * dn[a][1];
                }
            }
            let cross = [
                ds[1] * dt[2] - ds[2] * dt[1],
                ds[2] * dt[0] - ds[0] * dt[2],
                ds[0] * dt[1] - ds[1] * dt[0],
            ];
            let jac = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            for (a, &node) in facet.nodes.iter().enumerate() {
                if let Some(d) = dofs.node(node) {
                    for c in 0..3 {
                        f[d + c] += w * jac * n[a] * t[c];
                    }
                }
            }
        }
    }
    Ok(f)
}

fn element_mass(mesh: &Mesh, e: usize, rule: &TetRule) -> Result<Vec<f64>> {
    let q = element_quadrature(mesh, e, rule)?;
    let npe = mesh.order.nodes_per_element();
    let mut m = vec![0.0; npe * npe];
    for (w, n) in q.weights.iter().zip(&q.shapes) {
        for a in 0..npe {
            for b in 0..npe {
                m[a * npe + b] += w * n[a] * n[b];
            }
        }
    }
    Ok(m)
}

/// L2 Gram matrix of the vector field space restricted to the elements of
/// one subdomain (`Some(l)`) or of the whole mesh (`None`). Uses an exact
/// mass quadrature, independent of the stiffness integration points.
pub fn l2_gram_matrix(mesh: &Mesh, dofs: &DofMap, subdomain: Option<usize>) -> Result<CsrMatrix> {
    let elements: Vec<usize> = match subdomain {
        Some(l) => mesh.elements_of_subdomain(l),
        None => (0..mesh.n_elements()).collect(),
    };
    let mut g = sparsity_pattern(mesh, dofs, &elements);
    let rule = TetRule::collapsed_gauss4();
    let locals = par::try_map_range(elements.len(), |i| element_mass(mesh, elements[i], &rule))?;
    for (i, m) in locals.iter().enumerate() {
        let nodes = mesh.element(elements[i]);
        let npe = nodes.len();
        for a in 0..npe {
            let Some(da) = dofs.node(nodes[a]) else { continue };
            for b in 0..npe {
                let Some(db) = dofs.node(nodes[b]) else { continue };
                for c in 0..3 {
                    g.add(da + c, db + c, m[a * npe + b]);
                }
            }
        }
    }
    Ok(g)
}

/// The part of an inner product owned by one subdomain, kept unassembled:
/// dense node blocks applied to each of `comps` components. Every block
/// contributes one rounded scalar to an exact sum, so totals over any
/// partition of the blocks are bitwise identical.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGram {
    dim: usize,
    comps: usize,
    /// First dof of each node of the block, and the row-major block.
    blocks: Vec<(Vec<usize>, Vec<f64>)>,
}

impl LocalGram {
    /// Diagonal weights, one block per entry.
    pub fn diagonal(weights: &[f64]) -> Self {
        LocalGram {
            dim: weights.len(),
            comps: 1,
            blocks: weights.iter().enumerate().map(|(i, &w)| (vec![i], vec![w])).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Block-local `M b`, concatenated over blocks.
    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (d, m) in &self.blocks {
            let k = d.len();
            for p in 0..k {
                for c in 0..self.comps {
                    out.push((0..k).map(|q| m[p * k + q] * b[d[q] + c]).sum());
                }
            }
        }
        out
    }

    fn block_dot(&self, a: &[f64], mb: &[f64], sum: &mut ExactSum) {
        let mut at = 0;
        for (d, _) in &self.blocks {
            let mut s = 0.0;
            for &dp in d {
                for c in 0..self.comps {
                    s += a[dp + c] * mb[at];
                    at += 1;
                }
            }
            sum.add(s);
        }
    }

    /// Exact partial sums of `a_i^T G b_j`, row-major in `(i, j)`. With
    /// `lower` set only `j <= i` is computed.
    pub fn products(&self, a: &[Vec<f64>], b: &[Vec<f64>], lower: bool) -> Vec<ExactSum> {
        let mb: Vec<Vec<f64>> = b.iter().map(|v| self.apply(v)).collect();
        let mut out = vec![ExactSum::new(); a.len() * b.len()];
        for (i, ai) in a.iter().enumerate() {
            for (j, mbj) in mb.iter().enumerate() {
                if lower && j > i {
                    continue;
                }
                self.block_dot(ai, mbj, &mut out[i * b.len() + j]);
            }
        }
        out
    }

    /// Assembled form, for checks.
    pub fn to_csr(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); self.dim];
        for (d, _) in &self.blocks {
            for &p in d {
                for &q in d {
                    for c in 0..self.comps {
                        rows[p + c].push(q + c);
                    }
                }
            }
        }
        rows.iter_mut().for_each(|r| {
            r.sort_unstable();
            r.dedup();
        });
        let mut g = CsrMatrix::from_rows(self.dim, rows);
        for (d, m) in &self.blocks {
            let k = d.len();
            for p in 0..k {
                for q in 0..k {
                    for c in 0..self.comps {
                        g.add(d[p] + c, d[q] + c, m[p * k + q]);
                    }
                }
            }
        }
        g
    }
}

/// Unassembled L2 Gram pieces `G^l` of each subdomain, l = 1..=n_d, with
/// one block per element over its free nodes.
pub fn subdomain_gram_matrices(mesh: &Mesh, dofs: &DofMap) -> Result<Vec<LocalGram>> {
    let rule = TetRule::collapsed_gauss4();
    (1..=mesh.n_subdomains)
        .map(|l| {
            let elements = mesh.elements_of_subdomain(l);
            let masses = par::try_map_range(elements.len(), |i| element_mass(mesh, elements[i], &rule))?;
            let blocks = elements
                .iter()
                .zip(masses)
                .map(|(&e, m)| {
                    let nodes = mesh.element(e);
                    let npe = nodes.len();
                    let free: Vec<(usize, usize)> =
                        (0..npe).filter_map(|a| dofs.node(nodes[a]).map(|d| (a, d))).collect();
                    let block = free
                        .iter()
                        .flat_map(|&(a, _)| free.iter().map(move |&(b, _)| (a, b)))
                        .map(|(a, b)| m[a * npe + b])
                        .collect();
                    (free.iter().map(|&(_, d)| d).collect(), block)
                })
                .collect();
            Ok(LocalGram {
                dim: dofs.n_dofs(),
                comps: 3,
                blocks,
            })
        })
        .collect()
}

/// Element volume from its quadrature.
pub fn element_volume(mesh: &Mesh, e: usize) -> Result<f64> {
    let q = element_quadrature(mesh, e, &TetRule::collapsed_gauss4())?;
    Ok(q.weights.iter().sum())
}
