//! Unstructured tetrahedral meshes and the `HRMESH 1` text format.
//!
//! Local node ordering follows VTK: vertices 0..4, then edge mid-nodes
//! (0,1), (1,2), (0,2), (0,3), (1,3), (2,3) for quadratic tetrahedra.
//! Quadratic facets list their three corners then the mid-nodes of
//! (n1,n2), (n2,n3), (n3,n1).

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textio::Lines;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementOrder {
    Linear,
    Quadratic,
}

impl ElementOrder {
    pub fn from_int(order: usize) -> Option<Self> {
        match order {
            1 => Some(ElementOrder::Linear),
            2 => Some(ElementOrder::Quadratic),
            _ => None,
        }
    }

    pub fn as_int(self) -> usize {
        match self {
            ElementOrder::Linear => 1,
            ElementOrder::Quadratic => 2,
        }
    }

    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementOrder::Linear => 4,
            ElementOrder::Quadratic => 10,
        }
    }

    pub fn nodes_per_facet(self) -> usize {
        match self {
            ElementOrder::Linear => 3,
            ElementOrder::Quadratic => 6,
        }
    }
}

/// Tetrahedron faces as local vertex triples.
pub const TET_FACES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    pub tag: i64,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 3]>,
    pub order: ElementOrder,
    /// Flat connectivity, `order.nodes_per_element()` entries per element.
    pub connectivity: Vec<usize>,
    pub facets: Vec<Facet>,
    /// Subdomain id (1-based) of every element.
    pub subdomain_of_element: Vec<usize>,
    pub n_subdomains: usize,
    pub dirichlet_tag: i64,
    pub neumann_tags: Vec<i64>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.connectivity.len() / self.order.nodes_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.order.nodes_per_element();
        &self.connectivity[e * k..(e + 1) * k]
    }

    /// Elements of subdomain `l` (1-based).
    pub fn elements_of_subdomain(&self, l: usize) -> Vec<usize> {
        (0..self.n_elements())
            .filter(|&e| self.subdomain_of_element[e] == l)
            .collect()
    }

    /// Nodes lying on facets carrying the Dirichlet tag.
    pub fn dirichlet_nodes(&self) -> BTreeSet<usize> {
        self.facets
            .iter()
            .filter(|f| f.tag == self.dirichlet_tag)
            .flat_map(|f| f.nodes.iter().copied())
            .collect()
    }

    pub fn facet_tags(&self) -> BTreeSet<i64> {
        self.facets.iter().map(|f| f.tag).collect()
    }

    /// Check every structural invariant of the mesh.
    pub fn validate(&self) -> Result<()> {
        let npe = self.order.nodes_per_element();
        let npf = self.order.nodes_per_facet();
        let nn = self.n_nodes();
        if self.connectivity.len() % npe != 0 {
            return Err(Error::Validation("connectivity length is not a multiple of the element size".into()));
        }
        if let Some(&bad) = self.connectivity.iter().find(|&&i| i >= nn) {
            return Err(Error::Validation(format!("element node index {bad} >= node count {nn}")));
        }
        let ne = self.n_elements();
        if ne == 0 {
            return Err(Error::Validation("mesh has no elements".into()));
        }

        let mut face_count: HashMap<[usize; 3], usize> = HashMap::new();
        for e in 0..ne {
            let el = self.element(e);
            for f in TET_FACES {
                let mut key = [el[f[0]], el[f[1]], el[f[2]]];
                key.sort_unstable();
                *face_count.entry(key).or_insert(0) += 1;
            }
        }
        for (i, facet) in self.facets.iter().enumerate() {
            if facet.nodes.len() != npf {
                return Err(Error::Validation(format!(
                    "facet {i} has {} nodes, expected {npf}",
                    facet.nodes.len()
                )));
            }
            if let Some(&bad) = facet.nodes.iter().find(|&&n| n >= nn) {
                return Err(Error::Validation(format!("facet {i} node index {bad} >= node count {nn}")));
            }
            let mut key = [facet.nodes[0], facet.nodes[1], facet.nodes[2]];
            key.sort_unstable();
            match face_count.get(&key) {
                Some(1) => {}
                Some(c) => {
                    return Err(Error::Validation(format!("facet {i} is shared by {c} elements")));
                }
                None => {
                    return Err(Error::Validation(format!("facet {i} is not a face of any element")));
                }
            }
        }

        if self.subdomain_of_element.len() != ne {
            return Err(Error::dim("subdomain ids", ne, self.subdomain_of_element.len()));
        }
        if self.n_subdomains == 0 {
            return Err(Error::Validation("at least one subdomain is required".into()));
        }
        let mut seen = vec![false; self.n_subdomains];
        for (e, &id) in self.subdomain_of_element.iter().enumerate() {
            if id == 0 || id > self.n_subdomains {
                return Err(Error::Validation(format!(
                    "element {e} has subdomain id {id} outside 1..={}",
                    self.n_subdomains
                )));
            }
            seen[id - 1] = true;
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("subdomain {} has no element", l + 1)));
        }
        if self.neumann_tags.contains(&self.dirichlet_tag) {
            return Err(Error::Validation(format!(
                "tag {} is both Dirichlet and Neumann",
                self.dirichlet_tag
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "HRMESH 1");
        let _ = writeln!(s, "NODES {}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        let _ = writeln!(s, "ELEMENTS {} {}", self.n_elements(), self.order.as_int());
        for e in 0..self.n_elements() {
            let line: Vec<String> = self.element(e).iter().map(|n| n.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        let _ = writeln!(s, "FACETS {}", self.facets.len());
        for f in &self.facets {
            let line: Vec<String> = f.nodes.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(s, "{} {}", f.tag, line.join(" "));
        }
        let _ = writeln!(s, "SUBDOMAINS {}", self.n_subdomains);
        for id in &self.subdomain_of_element {
            let _ = writeln!(s, "{id}");
        }
        let _ = writeln!(s, "DIRICHLET {}", self.dirichlet_tag);
        let tags: Vec<String> = self.neumann_tags.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(s, "NEUMANN {} {}", self.neumann_tags.len(), tags.join(" "));
        s
    }

    pub fn parse(text: &str, name: &str) -> Result<Mesh> {
        let mut lines = Lines::new(text, name);
        lines.expect_header("HRMESH", "1")?;
        let mut nodes = Vec::new();
        let mut order = None;
        let mut connectivity = Vec::new();
        let mut facets = Vec::new();
        let mut subdomains = Vec::new();
        let mut n_subdomains = 1;
        let mut dirichlet_tag = None;
        let mut neumann_tags = Vec::new();
        let mut have_subdomains = false;

        while let Some((ln, toks)) = lines.next_tokens() {
            match toks[0] {
                "NODES" => {
                    let count: usize = lines.parse_tok(ln, &toks, 1)?;
                    for _ in 0..count {
                        let (ln, t) = lines.require_tokens("node coordinates")?;
                        if t.len() != 3 {
                            return Err(lines.err(ln, "node line needs 3 coordinates"));
                        }
                        nodes.push([
                            lines.parse_tok(ln, &t, 0)?,
                            lines.parse_tok(ln, &t, 1)?,
                            lines.parse_tok(ln, &t, 2)?,
                        ]);
                    }
                }
                "ELEMENTS" => {
                    let count: usize = lines.parse_tok(ln, &toks, 1)?;
                    let ord: usize = lines.parse_tok(ln, &toks, 2)?;
                    let o = ElementOrder::from_int(ord)
                        .ok_or_else(|| lines.err(ln, format!("unsupported element order {ord} (only 1 or 2)")))?;
                    order = Some(o);
                    for _ in 0..count {
                        let (ln, t) = lines.require_tokens("element connectivity")?;
                        if t.len() != o.nodes_per_element() {
                            return Err(lines.err(
                                ln,
                                format!("element needs {} nodes, got {}", o.nodes_per_element(), t.len()),
                            ));
                        }
                        for i in 0..t.len() {
                            connectivity.push(lines.parse_tok(ln, &t, i)?);
                        }
                    }
                }
                "FACETS" => {
                    let count: usize = lines.parse_tok(ln, &toks, 1)?;
                    for _ in 0..count {
                        let (ln, t) = lines.require_tokens("facet")?;
                        if t.len() != 4 && t.len() != 7 {
                            return Err(lines.err(ln, "facet line is `tag n1 n2 n3 [n4 n5 n6]`"));
                        }
                        let tag = lines.parse_tok(ln, &t, 0)?;
                        let mut fnodes = Vec::with_capacity(t.len() - 1);
                        for i in 1..t.len() {
                            fnodes.push(lines.parse_tok(ln, &t, i)?);
                        }
                        facets.push(Facet { tag, nodes: fnodes });
                    }
                }
                "SUBDOMAINS" => {
                    n_subdomains = lines.parse_tok(ln, &toks, 1)?;
                    have_subdomains = true;
                    let ne = connectivity.len() / order.map_or(1, |o| o.nodes_per_element());
                    for _ in 0..ne {
                        let (ln, t) = lines.require_tokens("subdomain id")?;
                        subdomains.push(lines.parse_tok(ln, &t, 0)?);
                    }
                }
                "DIRICHLET" => dirichlet_tag = Some(lines.parse_tok(ln, &toks, 1)?),
                "NEUMANN" => {
                    let count: usize = lines.parse_tok(ln, &toks, 1)?;
                    if toks.len() != count + 2 {
                        return Err(lines.err(ln, "NEUMANN <count> <tags...>"));
                    }
                    for i in 0..count {
                        neumann_tags.push(lines.parse_tok(ln, &toks, 2 + i)?);
                    }
                }
                other => return Err(lines.err(ln, format!("unknown block `{other}`"))),
            }
        }
        let order = order.ok_or_else(|| Error::parse(name, 0, "missing ELEMENTS block"))?;
        let ne = connectivity.len() / order.nodes_per_element();
        if !have_subdomains {
            subdomains = vec![1; ne];
        }
        let mesh = Mesh {
            nodes,
            order,
            connectivity,
            facets,
            subdomain_of_element: subdomains,
            n_subdomains,
            dirichlet_tag: dirichlet_tag.unwrap_or(i64::MIN),
            neumann_tags,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn read(path: &Path) -> Result<Mesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mesh::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Facet tags used by [`bar_mesh`].
pub const BAR_CLAMPED_TAG: i64 = 1;
pub const BAR_LOADED_TAG: i64 = 2;
pub const BAR_LATERAL_TAG: i64 = 3;

/// Prismatic bar `[0,length] x [0,width] x [0,height]` split into
/// `nx * ny * nz` hexahedra, six tetrahedra each. The `x = 0` face carries
/// the Dirichlet tag, the `x = length` face the loaded tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub order: ElementOrder,
}

pub fn bar_mesh(spec: &BarSpec) -> Mesh {
    // Work on a lattice that is refined twice for quadratic elements so
    // that every mid-node is a lattice point.
    let f = match spec.order {
        ElementOrder::Linear => 1,
        ElementOrder::Quadratic => 2,
    };
    let (lx, ly, lz) = (spec.nx * f + 1, spec.ny * f + 1, spec.nz * f + 1);
    let id = |i: usize, j: usize, k: usize| (i * ly + j) * lz + k;
    let mut nodes = Vec::with_capacity(lx * ly * lz);
    for i in 0..lx {
        for j in 0..ly {
            for k in 0..lz {
                nodes.push([
                    spec.length * i as f64 / (lx - 1) as f64,
                    spec.width * j as f64 / (ly - 1) as f64,
                    spec.height * k as f64 / (lz - 1) as f64,
                ]);
            }
        }
    }
    let lattice = |p: [usize; 3]| id(p[0], p[1], p[2]);
    let mid = |a: [usize; 3], b: [usize; 3]| [(a[0] + b[0]) / 2, (a[1] + b[1]) / 2, (a[2] + b[2]) / 2];
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let edges = [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)];

    let mut connectivity = Vec::new();
    let mut element_vertices: Vec<[[usize; 3]; 4]> = Vec::new();
    for i in 0..spec.nx {
        for j in 0..spec.ny {
            for k in 0..spec.nz {
                let base = [i * f, j * f, k * f];
                for p in perms {
                    let mut v = [base; 4];
                    let mut cur = base;
                    for (step, &axis) in p.iter().enumerate() {
                        cur[axis] += f;
                        v[step + 1] = cur;
                    }
                    // orientation: positive volume
                    let x: Vec<[f64; 3]> = v.iter().map(|&q| nodes[lattice(q)]).collect();
                    if signed_volume(&x[0], &x[1], &x[2], &x[3]) < 0.0 {
                        v.swap(1, 2);
                    }
                    element_vertices.push(v);
                    connectivity.extend(v.iter().map(|&q| lattice(q)));
                    if spec.order == ElementOrder::Quadratic {
                        connectivity.extend(edges.iter().map(|&(a, b)| lattice(mid(v[a], v[b]))));
                    }
                }
            }
        }
    }

    let (mx, my, mz) = (spec.nx * f, spec.ny * f, spec.nz * f);
    let mut facets = Vec::new();
    for v in &element_vertices {
        for face in TET_FACES {
            let c = [v[face[0]], v[face[1]], v[face[2]]];
            let on = |axis: usize, val: usize| c.iter().all(|p| p[axis] == val);
            let tag = if on(0, 0) {
                BAR_CLAMPED_TAG
            } else if on(0, mx) {
                BAR_LOADED_TAG
            } else if on(1, 0) || on(1, my) || on(2, 0) || on(2, mz) {
                BAR_LATERAL_TAG
            } else {
                continue;
            };
            let mut fnodes: Vec<usize> = c.iter().map(|&q| lattice(q)).collect();
            if spec.order == ElementOrder::Quadratic {
                fnodes.push(lattice(mid(c[0], c[1])));
                fnodes.push(lattice(mid(c[1], c[2])));
                fnodes.push(lattice(mid(c[2], c[0])));
            }
            facets.push(Facet { tag, nodes: fnodes });
        }
    }

    let ne = element_vertices.len();
    Mesh {
        nodes,
        order: spec.order,
        connectivity,
        facets,
        subdomain_of_element: vec![1; ne],
        n_subdomains: 1,
        dirichlet_tag: BAR_CLAMPED_TAG,
        neumann_tags: vec![BAR_LOADED_TAG, BAR_LATERAL_TAG],
    }
}

pub fn signed_volume(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: &[f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0]) + u[2] * (v[0] * w[1] - v[1] * w[0]))
        / 6.0
}

/// A single linear tetrahedron with unit volume and no boundary conditions.
pub fn unit_volume_tet() -> Mesh {
    let s = 6f64.cbrt();
    Mesh {
        nodes: vec![[0.0, 0.0, 0.0], [s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]],
        order: ElementOrder::Linear,
        connectivity: vec![0, 1, 2, 3],
        facets: Vec::new(),
        subdomain_of_element: vec![1],
        n_subdomains: 1,
        dirichlet_tag: 0,
        neumann_tags: Vec::new(),
    }
}
