//! Conforming triangulations of the unit disk and the square `(-1, 1)²` with
//! newest-vertex bisection.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DomainSpec {
    /// Polygonal approximation of the unit disk with `n_boundary` boundary
    /// segments.
    UnitDisk { n_boundary: usize },
    /// `(-1, 1)²` split into `n_per_side²` cells of two triangles each.
    Square { n_per_side: usize },
    /// A user-supplied triangulation; no boundary projection.
    Custom,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DomainSpec::UnitDisk { n_boundary } if n_boundary < 8 => Err(Error::InvalidDomain(format!(
                "disk needs at least 8 boundary segments, got {n_boundary}"
            ))),
            DomainSpec::Square { n_per_side } if n_per_side < 2 => Err(Error::InvalidDomain(format!(
                "square needs at least 2 cells per side, got {n_per_side}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_disk(&self) -> bool {
        matches!(self, DomainSpec::UnitDisk { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex2 {
    pub x: f64,
    pub y: f64,
    pub on_boundary: bool,
}

impl Vertex2 {
    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

/// A triangle with counter-clockwise vertices. The refinement edge is the
/// edge opposite `vertices[peak]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub vertices: [usize; 3],
    pub peak: u8,
    /// Element of the previous mesh this one was bisected from, or its own
    /// index there when it was not refined. `None` in an initial mesh.
    pub parent: Option<usize>,
    /// Ancestor in the initial mesh.
    pub root: usize,
    pub generation: u32,
}

impl Element {
    /// The two endpoints of the refinement edge.
    pub fn refinement_edge(&self) -> (usize, usize) {
        let p = self.peak as usize;
        (self.vertices[(p + 1) % 3], self.vertices[(p + 2) % 3])
    }

    pub fn edges(&self) -> [(usize, usize); 3] {
        let v = self.vertices;
        [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])]
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vertex2>,
    pub elements: Vec<Element>,
    pub domain: DomainSpec,
    /// Boundary edges, oriented with the domain on the left.
    pub boundary_edges: Vec<[usize; 2]>,
    dof_of_vertex: Vec<Option<usize>>,
    dof_vertices: Vec<usize>,
}

/// Result of one refinement step: the new mesh and, for each new element,
/// the element of the old mesh that contains it.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub mesh: TriMesh,
    pub origin: Vec<usize>,
}

#[derive(Serialize)]
struct MeshJson<'a> {
    vertices: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary: &'a [usize],
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Index of the vertex opposite the longest edge; near-ties go to the lowest
/// index so the choice is reproducible.
fn longest_edge_peak(p: [Point; 3]) -> u8 {
    let lens = [dist2(p[1], p[2]), dist2(p[2], p[0]), dist2(p[0], p[1])];
    let max = lens.iter().cloned().fold(0.0, f64::max);
    lens.iter().position(|&l| l >= max * (1.0 - 1e-12)).unwrap_or(0) as u8
}

impl TriMesh {
    /// Builds a mesh from raw triangles. Orientation is normalised to
    /// counter-clockwise and peaks follow the longest-edge rule.
    pub fn from_triangles(points: &[Point], triangles: &[[usize; 3]], domain: DomainSpec) -> Result<Self> {
        let mut elements = Vec::with_capacity(triangles.len());
        for (id, t) in triangles.iter().enumerate() {
            let mut v = *t;
            if v.iter().any(|&i| i >= points.len()) {
                return Err(Error::InvalidDomain(format!("triangle {id} has an out-of-range vertex")));
            }
            let a = signed_area(points[v[0]], points[v[1]], points[v[2]]);
            if a == 0.0 || !a.is_finite() {
                return Err(Error::InvalidDomain(format!("triangle {id} is degenerate")));
            }
            if a < 0.0 {
                v.swap(1, 2);
            }
            let peak = longest_edge_peak([points[v[0]], points[v[1]], points[v[2]]]);
            elements.push(Element {
                vertices: v,
                peak,
                parent: None,
                root: id,
                generation: 0,
            });
        }
        let vertices = points
            .iter()
            .map(|p| Vertex2 {
                x: p[0],
                y: p[1],
                on_boundary: false,
            })
            .collect();
        let mut mesh = TriMesh {
            vertices,
            elements,
            domain,
            boundary_edges: Vec::new(),
            dof_of_vertex: Vec::new(),
            dof_vertices: Vec::new(),
        };
        mesh.rebuild_topology();
        Ok(mesh)
    }

    fn rebuild_topology(&mut self) {
        let mut count: HashMap<(usize, usize), (usize, (usize, usize))> = HashMap::new();
        for el in &self.elements {
            for (a, b) in el.edges() {
                count.entry(edge_key(a, b)).or_insert((0, (a, b))).0 += 1;
            }
        }
        let mut boundary: Vec<[usize; 2]> = count
            .values()
            .filter(|(c, _)| *c == 1)
            .map(|&(_, (a, b))| [a, b])
            .collect();
        boundary.sort_unstable();
        for v in &mut self.vertices {
            v.on_boundary = false;
        }
        for e in &boundary {
            self.vertices[e[0]].on_boundary = true;
            self.vertices[e[1]].on_boundary = true;
        }
        self.boundary_edges = boundary;
        self.dof_of_vertex = vec![None; self.vertices.len()];
        self.dof_vertices.clear();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.on_boundary {
                self.dof_of_vertex[i] = Some(self.dof_vertices.len());
                self.dof_vertices.push(i);
            }
        }
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Number of degrees of freedom (interior vertices).
    pub fn n_dofs(&self) -> usize {
        self.dof_vertices.len()
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn dof_vertices(&self) -> &[usize] {
        &self.dof_vertices
    }

    /// Interior vertex indices of an element, as `Option<dof>` per corner.
    pub fn element_dofs(&self, k: usize) -> [Option<usize>; 3] {
        let v = self.elements[k].vertices;
        [self.dof_of_vertex[v[0]], self.dof_of_vertex[v[1]], self.dof_of_vertex[v[2]]]
    }

    pub fn point(&self, v: usize) -> Point {
        self.vertices[v].point()
    }

    pub fn element_points(&self, k: usize) -> [Point; 3] {
        let v = self.elements[k].vertices;
        [self.point(v[0]), self.point(v[1]), self.point(v[2])]
    }

    pub fn area(&self, k: usize) -> f64 {
        let p = self.element_points(k);
        signed_area(p[0], p[1], p[2])
    }

    /// `h_K = |K|^{1/2}`.
    pub fn element_size(&self, k: usize) -> f64 {
        let a = self.area(k);
        assert!(a > 0.0, "element {k} has non-positive area");
        a.sqrt()
    }

    pub fn diameter(&self, k: usize) -> f64 {
        let p = self.element_points(k);
        dist2(p[0], p[1]).max(dist2(p[1], p[2])).max(dist2(p[2], p[0])).sqrt()
    }

    pub fn centroid(&self, k: usize) -> Point {
        let p = self.element_points(k);
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    /// Barycentric coordinates of `x` with respect to element `k`.
    pub fn barycentric(&self, k: usize, x: Point) -> [f64; 3] {
        let p = self.element_points(k);
        barycentric(p, x)
    }

    pub fn initial(domain: DomainSpec) -> Result<Self> {
        make_initial_mesh(domain)
    }

    /// Distance from `x` to the boundary of element `k`, which coincides with
    /// the distance to the mesh skeleton for `x ∈ K`.
    pub fn skeleton_distance(&self, k: usize, x: Point) -> Result<f64> {
        let p = self.element_points(k);
        let b = barycentric(p, x);
        if b.iter().any(|&l| l < -1e-12) {
            return Err(Error::OutsideElement(k));
        }
        Ok(distance_to_triangle_boundary(p, x))
    }

    /// `k`-th order element patch: `{K}` for `k = 0`, then all elements whose
    /// closure meets the previous patch.
    pub fn element_patch(&self, k_el: usize, order: usize) -> BTreeSet<usize> {
        let v2e = self.vertex_to_elements();
        let mut patch = BTreeSet::from([k_el]);
        for _ in 0..order {
            let mut verts = BTreeSet::new();
            for &e in &patch {
                verts.extend(self.elements[e].vertices);
            }
            for v in verts {
                patch.extend(v2e[v].iter().copied());
            }
        }
        patch
    }

    pub fn vertex_to_elements(&self) -> Vec<Vec<usize>> {
        let mut v2e = vec![Vec::new(); self.vertices.len()];
        for (i, el) in self.elements.iter().enumerate() {
            for &v in &el.vertices {
                v2e[v].push(i);
            }
        }
        v2e
    }

    /// Lowest-id element whose closed triangle contains `x`.
    pub fn locate(&self, x: Point) -> Result<usize> {
        for k in 0..self.elements.len() {
            let b = self.barycentric(k, x);
            if b.iter().all(|&l| l >= -1e-12) {
                return Ok(k);
            }
        }
        Err(Error::OutsideDomain(x[0], x[1]))
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> f64 {
        (0..self.elements.len())
            .map(|k| triangle_angles(self.element_points(k)).into_iter().fold(PI, f64::min))
            .fold(PI, f64::min)
    }

    /// Newest-vertex bisection of the marked elements plus conformity closure.
    pub fn bisect_marked(&self, marked: &[usize]) -> TriMesh {
        self.refine(marked).mesh
    }

    /// Like [`TriMesh::bisect_marked`], also reporting element origins.
    pub fn refine(&self, marked: &[usize]) -> Refinement {
        // edges to split, keyed by sorted endpoints, valued by midpoint id
        let mut split: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_elements: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, el) in self.elements.iter().enumerate() {
            for (a, b) in el.edges() {
                edge_elements.entry(edge_key(a, b)).or_default().push(i);
            }
        }
        let mut work = Vec::new();
        for &k in marked {
            let (a, b) = self.elements[k].refinement_edge();
            if split.insert(edge_key(a, b), usize::MAX).is_none() {
                work.extend(edge_elements[&edge_key(a, b)].iter().copied());
            }
        }
        // closure: an element with any split edge must split its refinement edge
        while let Some(k) = work.pop() {
            let (a, b) = self.elements[k].refinement_edge();
            let key = edge_key(a, b);
            if split.contains_key(&key) {
                continue;
            }
            if self.elements[k].edges().iter().any(|&(p, q)| split.contains_key(&edge_key(p, q))) {
                split.insert(key, usize::MAX);
                work.extend(edge_elements[&key].iter().copied());
            }
        }
        let mut vertices = self.vertices.clone();
        let boundary: std::collections::HashSet<(usize, usize)> =
            self.boundary_edges.iter().map(|e| edge_key(e[0], e[1])).collect();
        for el in &self.elements {
            let (a, b) = el.refinement_edge();
            let others = [el.edges()[0], el.edges()[1], el.edges()[2]];
            for (p, q) in std::iter::once((a, b)).chain(others) {
                let key = edge_key(p, q);
                if let Some(m) = split.get_mut(&key) {
                    if *m == usize::MAX {
                        *m = vertices.len();
                        let (pa, pb) = (self.point(key.0), self.point(key.1));
                        let mut mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                        let on_boundary = boundary.contains(&key);
                        if on_boundary && self.domain.is_disk() {
                            let r = (mid[0] * mid[0] + mid[1] * mid[1]).sqrt();
                            mid = [mid[0] / r, mid[1] / r];
                        }
                        vertices.push(Vertex2 {
                            x: mid[0],
                            y: mid[1],
                            on_boundary,
                        });
                    }
                }
            }
        }
        let mut elements = Vec::with_capacity(self.elements.len() + 2 * split.len());
        let mut origin = Vec::with_capacity(elements.capacity());
        for (k, el) in self.elements.iter().enumerate() {
            let before = elements.len();
            bisect_recursive(el, k, &split, &mut elements);
            origin.extend(std::iter::repeat(k).take(elements.len() - before));
        }
        let mut mesh = TriMesh {
            vertices,
            elements,
            domain: self.domain,
            boundary_edges: Vec::new(),
            dof_of_vertex: Vec::new(),
            dof_vertices: Vec::new(),
        };
        mesh.rebuild_topology();
        Refinement { mesh, origin }
    }

    /// Two newest-vertex bisection sweeps over every element.
    pub fn refine_uniform(&self) -> Refinement {
        let all: Vec<usize> = (0..self.n_elements()).collect();
        let first = self.refine(&all);
        let all: Vec<usize> = (0..first.mesh.n_elements()).collect();
        let mut second = first.mesh.refine(&all);
        let origin: Vec<usize> = second.origin.iter().map(|&k| first.origin[k]).collect();
        for (el, &o) in second.mesh.elements.iter_mut().zip(&origin) {
            el.parent = Some(o);
        }
        Refinement {
            mesh: second.mesh,
            origin,
        }
    }

    /// Checks that every edge is shared by at most two elements, that edges
    /// used once lie on the domain boundary, and that the Euler
    /// characteristic is that of a disk (which fails with hanging nodes).
    pub fn check_conformity(&self) -> std::result::Result<(), String> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for el in &self.elements {
            for (a, b) in el.edges() {
                *count.entry(edge_key(a, b)).or_insert(0) += 1;
            }
        }
        if let Some((e, c)) = count.iter().find(|(_, &c)| c > 2) {
            return Err(format!("edge {e:?} shared by {c} elements"));
        }
        let euler = self.vertices.len() as i64 - count.len() as i64 + self.elements.len() as i64;
        if euler != 1 {
            return Err(format!("Euler characteristic {euler} != 1 (hanging nodes)"));
        }
        for (&(a, b), _) in count.iter().filter(|(_, &c)| c == 1) {
            let (pa, pb) = (self.point(a), self.point(b));
            let ok = match self.domain {
                DomainSpec::UnitDisk { .. } => {
                    ((pa[0].hypot(pa[1])) - 1.0).abs() < 1e-12 && ((pb[0].hypot(pb[1])) - 1.0).abs() < 1e-12
                }
                DomainSpec::Square { .. } => {
                    let on = |i: usize| (pa[i].abs() - 1.0).abs() < 1e-12 && (pb[i].abs() - 1.0).abs() < 1e-12 && pa[i] == pb[i];
                    on(0) || on(1)
                }
                DomainSpec::Custom => true,
            };
            if !ok {
                return Err(format!("edge ({a}, {b}) used once but not on the boundary"));
            }
        }
        for (k, el) in self.elements.iter().enumerate() {
            if self.area(k) <= 0.0 {
                return Err(format!("element {k} is not positively oriented"));
            }
            if el.peak > 2 {
                return Err(format!("element {k} has invalid peak"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let boundary: Vec<usize> = (0..self.vertices.len()).filter(|&i| self.vertices[i].on_boundary).collect();
        serde_json::to_value(MeshJson {
            vertices: self.vertices.iter().map(|v| [v.x, v.y]).collect(),
            elements: self.elements.iter().map(|e| e.vertices).collect(),
            boundary: &boundary,
        })
        .expect("mesh serialises")
    }
}

fn bisect_recursive(
    el: &Element,
    parent: usize,
    split: &HashMap<(usize, usize), usize>,
    out: &mut Vec<Element>,
) {
    let (b, c) = el.refinement_edge();
    let Some(&m) = split.get(&edge_key(b, c)) else {
        out.push(Element { parent: Some(parent), ..*el });
        return;
    };
    let a = el.vertices[el.peak as usize];
    let child = |vertices: [usize; 3], peak: u8| Element {
        vertices,
        peak,
        parent: Some(parent),
        root: el.root,
        generation: el.generation + 1,
    };
    bisect_recursive(&child([a, b, m], 2), parent, split, out);
    bisect_recursive(&child([a, m, c], 1), parent, split, out);
}

pub fn barycentric(p: [Point; 3], x: Point) -> [f64; 3] {
    let area = signed_area(p[0], p[1], p[2]);
    let l0 = signed_area(x, p[1], p[2]) / area;
    let l1 = signed_area(p[0], x, p[2]) / area;
    [l0, l1, 1.0 - l0 - l1]
}

pub fn distance_to_triangle_boundary(p: [Point; 3], x: Point) -> f64 {
    (0..3)
        .map(|i| distance_to_segment(p[i], p[(i + 1) % 3], x))
        .fold(f64::INFINITY, f64::min)
}

pub fn distance_to_segment(a: Point, b: Point, x: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    dist2(q, x).sqrt()
}

pub fn triangle_angles(p: [Point; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let a = p[i];
        let b = p[(i + 1) % 3];
        let c = p[(i + 2) % 3];
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        let cross = u[0] * v[1] - u[1] * v[0];
        let dot = u[0] * v[0] + u[1] * v[1];
        out[i] = cross.abs().atan2(dot);
    }
    out
}

pub fn make_initial_mesh(domain: DomainSpec) -> Result<TriMesh> {
    domain.validate()?;
    match domain {
        DomainSpec::Square { n_per_side: n } => {
            let mut points = Vec::with_capacity((n + 1) * (n + 1));
            for j in 0..=n {
                for i in 0..=n {
                    points.push([-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64]);
                }
            }
            let id = |i: usize, j: usize| j * (n + 1) + i;
            let mut tris = Vec::with_capacity(2 * n * n);
            for j in 0..n {
                for i in 0..n {
                    tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
            TriMesh::from_triangles(&points, &tris, domain)
        }
        DomainSpec::UnitDisk { n_boundary } => {
            let rings = ((n_boundary as f64 / (2.0 * PI)).round() as usize).max(1);
            let mut points = vec![[0.0, 0.0]];
            let mut ring_ids: Vec<Vec<usize>> = Vec::with_capacity(rings);
            for k in 1..=rings {
                let nk = if k == rings {
                    n_boundary
                } else {
                    ((n_boundary * k) as f64 / rings as f64).round() as usize
                };
                let r = k as f64 / rings as f64;
                let mut ids = Vec::with_capacity(nk);
                for j in 0..nk {
                    let th = 2.0 * PI * j as f64 / nk as f64;
                    ids.push(points.len());
                    points.push([r * th.cos(), r * th.sin()]);
                }
                ring_ids.push(ids);
            }
            let mut tris = Vec::new();
            let first = &ring_ids[0];
            for j in 0..first.len() {
                tris.push([0, first[j], first[(j + 1) % first.len()]]);
            }
            for w in ring_ids.windows(2) {
                let (inner, outer) = (&w[0], &w[1]);
                let (ni, no) = (inner.len(), outer.len());
                let (mut i, mut j) = (0, 0);
                while i < ni || j < no {
                    let next_inner = (i + 1) as f64 / ni as f64;
                    let next_outer = (j + 1) as f64 / no as f64;
                    if i >= ni || (j < no && next_outer <= next_inner) {
                        tris.push([inner[i % ni], outer[j % no], outer[(j + 1) % no]]);
                        j += 1;
                    } else {
                        tris.push([inner[i % ni], outer[j % no], inner[(i + 1) % ni]]);
                        i += 1;
                    }
                }
            }
            TriMesh::from_triangles(&points, &tris, domain)
        }
        DomainSpec::Custom => Err(Error::InvalidDomain("custom domains need explicit triangles".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_triangle() -> TriMesh {
        TriMesh::from_triangles(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[[0, 1, 2]], DomainSpec::Custom).unwrap()
    }

    #[test]
    fn square_two_has_eight_elements_nine_vertices() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 2 }).unwrap();
        assert_eq!(m.n_elements(), 8);
        assert_eq!(m.vertices.len(), 9);
        assert_eq!(m.n_dofs(), 1);
        assert!(m.check_conformity().is_ok());
        assert!((m.min_angle() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn disk_boundary_on_unit_circle() {
        for nb in [8, 16, 33, 64] {
            let m = make_initial_mesh(DomainSpec::UnitDisk { n_boundary: nb }).unwrap();
            assert!(m.check_conformity().is_ok(), "nb = {nb}");
            assert!(m.min_angle() > 0.0);
            assert_eq!(m.boundary_edges.len(), nb);
            for v in m.vertices.iter().filter(|v| v.on_boundary) {
                assert!((v.x.hypot(v.y) - 1.0).abs() < 1e-12);
            }
        }
        let m = make_initial_mesh(DomainSpec::UnitDisk { n_boundary: 8 }).unwrap();
        assert_eq!(m.n_elements(), 8);
        assert_eq!(m.n_dofs(), 1);
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(make_initial_mesh(DomainSpec::UnitDisk { n_boundary: 7 }).is_err());
        assert!(make_initial_mesh(DomainSpec::Square { n_per_side: 1 }).is_err());
    }

    #[test]
    fn bisect_single_triangle() {
        let m = single_triangle();
        let r = m.bisect_marked(&[0]);
        assert_eq!(r.n_elements(), 2);
        let mid = r.vertices[3];
        assert!((mid.x - 0.5).abs() < 1e-15 && (mid.y - 0.5).abs() < 1e-15);
        for k in 0..2 {
            assert!((r.area(k) - 0.25).abs() < 1e-15);
            let el = r.elements[k];
            assert_eq!(el.vertices[el.peak as usize], 3);
            assert_eq!(el.parent, Some(0));
            assert_eq!(el.generation, 1);
        }
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 2 }).unwrap();
        let r = m.bisect_marked(&[]);
        for (k, (a, b)) in r.elements.iter().zip(&m.elements).enumerate() {
            assert_eq!(a.parent, Some(k));
            assert_eq!((a.vertices, a.peak, a.generation), (b.vertices, b.peak, b.generation));
        }
        assert_eq!(r.vertices, m.vertices);
    }

    #[test]
    fn parent_matches_origin() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 2 }).unwrap();
        let once = m.bisect_marked(&[3]);
        for r in [m.refine(&[0, 5]), once.refine(&[1, 9]), m.refine_uniform()] {
            for (el, &o) in r.mesh.elements.iter().zip(&r.origin) {
                assert_eq!(el.parent, Some(o));
            }
        }
    }

    #[test]
    fn closure_keeps_conformity() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 2 }).unwrap();
        for k in 0..m.n_elements() {
            let r = m.bisect_marked(&[k]);
            r.check_conformity().unwrap();
            assert!(r.n_elements() > m.n_elements());
        }
    }

    #[test]
    fn element_size_and_halving() {
        let m = single_triangle();
        assert!((m.element_size(0) - 0.5f64.sqrt()).abs() < 1e-15);
        let r = m.bisect_marked(&[0]);
        assert!((r.element_size(0) - m.element_size(0) / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn skeleton_distance_cases() {
        let m = single_triangle();
        let bary = [1.0 / 3.0, 1.0 / 3.0];
        let d = m.skeleton_distance(0, bary).unwrap();
        // brute force over dense edge samples
        let p = m.element_points(0);
        let mut brute = f64::INFINITY;
        for i in 0..3 {
            for s in 0..=100_000 {
                let t = s as f64 / 100_000.0;
                let q = [p[i][0] + t * (p[(i + 1) % 3][0] - p[i][0]), p[i][1] + t * (p[(i + 1) % 3][1] - p[i][1])];
                brute = brute.min(dist2(q, bary).sqrt());
            }
        }
        assert!((d - brute).abs() < 1e-9);
        assert!((d - (1.0 / 3.0) / 2f64.sqrt()).abs() < 1e-14);
        // incenter gives the inradius
        let r_in = (2.0 - 2f64.sqrt()) / 2.0;
        assert!((m.skeleton_distance(0, [r_in, r_in]).unwrap() - r_in).abs() < 1e-14);
        assert_eq!(m.skeleton_distance(0, [0.5, 0.0]).unwrap(), 0.0);
        assert!(m.skeleton_distance(0, [2.0, 2.0]).is_err());
    }

    #[test]
    fn locate_rules() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 2 }).unwrap();
        for k in 0..m.n_elements() {
            assert_eq!(m.locate(m.centroid(k)).unwrap(), k);
        }
        // midpoint of the diagonal shared by elements 0 and 1
        let p = m.element_points(0);
        let mid = [0.5 * (p[0][0] + p[2][0]), 0.5 * (p[0][1] + p[2][1])];
        assert_eq!(m.locate(mid).unwrap(), 0);
        assert!(m.locate([1.5, 0.0]).is_err());
    }

    #[test]
    fn patches_grow_monotonically() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 4 }).unwrap();
        let k = m.locate([-0.1, -0.4]).unwrap();
        assert_eq!(m.element_patch(k, 0), BTreeSet::from([k]));
        let mut prev = m.element_patch(k, 0);
        for order in 1..4 {
            let next = m.element_patch(k, order);
            assert!(prev.is_subset(&next));
            prev = next;
        }
        // interior element of a structured mesh: vertex neighbours
        let p1 = m.element_patch(k, 1);
        let verts = m.elements[k].vertices;
        for (i, el) in m.elements.iter().enumerate() {
            let touches = el.vertices.iter().any(|v| verts.contains(v));
            assert_eq!(p1.contains(&i), touches);
        }
    }

    #[test]
    fn uniform_refinement_quadruples() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 2 }).unwrap();
        let r = m.refine_uniform();
        assert_eq!(r.mesh.n_elements(), 4 * m.n_elements());
        r.mesh.check_conformity().unwrap();
        for (k, &o) in r.origin.iter().enumerate() {
            assert!((r.mesh.area(k) - m.area(o) / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn json_export_shape() {
        let m = make_initial_mesh(DomainSpec::Square { n_per_side: 2 }).unwrap();
        let j = m.to_json();
        assert_eq!(j["vertices"].as_array().unwrap().len(), 9);
        assert_eq!(j["elements"].as_array().unwrap().len(), 8);
        assert_eq!(j["boundary"].as_array().unwrap().len(), 8);
    }
}
