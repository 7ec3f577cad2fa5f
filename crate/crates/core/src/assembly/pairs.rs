//! Element-pair integrals `∬_{K×K'} (φ_a(x) - φ_a(y)) (φ_b(x) - φ_b(y)) |x - y|^{-2-α}`.
//!
//! Touching pairs are reduced to smooth integrals over unit cubes by
//! splitting the product of reference simplices into regions where one
//! coordinate dominates and integrating that coordinate analytically (the
//! integrand is homogeneous of degree `-α` in the relative coordinates).

use serde::Serialize;

use super::{rule_with_points, ElemGeom, QuadratureConfig};
use crate::kernel::FracKernelParams;
use crate::mesh::TriMesh;
use crate::quadrature::{GaussLegendre, TriangleRule};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relationship {
    Identical,
    Edge,
    Vertex,
    Disjoint,
}

/// Local matrix over the union of the vertices of both elements.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    pub relationship: Relationship,
    pub vertices: Vec<usize>,
    /// Row-major, `vertices.len()` squared.
    pub values: Vec<f64>,
}

impl PairBlock {
    pub fn size(&self) -> usize {
        self.vertices.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size() + b]
    }

    /// Entry for a pair of global vertex ids, zero if either is absent.
    pub fn entry(&self, va: usize, vb: usize) -> f64 {
        let pa = self.vertices.iter().position(|&v| v == va);
        let pb = self.vertices.iter().position(|&v| v == vb);
        match (pa, pb) {
            (Some(a), Some(b)) => self.get(a, b),
            _ => 0.0,
        }
    }
}

pub fn classify(k: [usize; 3], kp: [usize; 3]) -> Relationship {
    match k.iter().filter(|v| kp.contains(v)).count() {
        3 => Relationship::Identical,
        2 => Relationship::Edge,
        1 => Relationship::Vertex,
        _ => Relationship::Disjoint,
    }
}

/// Pair integral for two triangles given by global vertex ids and points.
pub fn pair_integral(
    ids: [usize; 3],
    pts: [Point; 3],
    ids_p: [usize; 3],
    pts_p: [Point; 3],
    params: &FracKernelParams,
    quad: &QuadratureConfig,
) -> Result<PairBlock> {
    let block = pair_block(ids, pts, ids_p, pts_p, params, quad);
    if block.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteQuadrature(ids[0], ids_p[0]));
    }
    Ok(block)
}

pub(crate) fn pair_integral_mesh(
    mesh: &TriMesh,
    geoms: &[ElemGeom],
    k: usize,
    kp: usize,
    params: &FracKernelParams,
    quad: &QuadratureConfig,
) -> PairBlock {
    let _ = geoms;
    pair_block(
        mesh.elements[k].vertices,
        mesh.element_points(k),
        mesh.elements[kp].vertices,
        mesh.element_points(kp),
        params,
        quad,
    )
}

fn pair_block(
    ids: [usize; 3],
    pts: [Point; 3],
    ids_p: [usize; 3],
    pts_p: [Point; 3],
    params: &FracKernelParams,
    quad: &QuadratureConfig,
) -> PairBlock {
    let rel = classify(ids, ids_p);
    let local = |v: usize| ids.iter().position(|&w| w == v);
    let local_p = |v: usize| ids_p.iter().position(|&w| w == v);
    match rel {
        Relationship::Identical => {
            let g = ElemGeom::new(pts);
            let t = identical_moment(&g, params, quad.duffy_order);
            let mut values = vec![0.0; 9];
            // reorder onto the vertex order of K'
            let perm: Vec<usize> = ids_p.iter().map(|&v| local(v).unwrap()).collect();
            for a in 0..3 {
                for b in 0..3 {
                    let ga = g.grads[perm[a]];
                    let gb = g.grads[perm[b]];
                    values[a * 3 + b] = ga[0] * (t[0][0] * gb[0] + t[0][1] * gb[1])
                        + ga[1] * (t[1][0] * gb[0] + t[1][1] * gb[1]);
                }
            }
            PairBlock {
                relationship: rel,
                vertices: ids_p.to_vec(),
                values,
            }
        }
        Relationship::Edge => {
            let shared: Vec<usize> = ids.iter().copied().filter(|v| ids_p.contains(v)).collect();
            let (v0, v1) = (shared[0], shared[1]);
            let v2 = *ids.iter().find(|v| !shared.contains(v)).unwrap();
            let v2p = *ids_p.iter().find(|v| !shared.contains(v)).unwrap();
            let p0 = pts[local(v0).unwrap()];
            let p1 = pts[local(v1).unwrap()];
            let p2 = pts[local(v2).unwrap()];
            let p2p = pts_p[local_p(v2p).unwrap()];
            let m = edge_moment(p0, p1, p2, p2p, params, quad.duffy_order);
            let h: [[f64; 3]; 4] = [[-1.0, 0.0, 0.0], [1.0, -1.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
            PairBlock {
                relationship: rel,
                vertices: vec![v0, v1, v2, v2p],
                values: contract(&h, &m),
            }
        }
        Relationship::Vertex => {
            let v0 = *ids.iter().find(|v| ids_p.contains(v)).unwrap();
            let others: Vec<usize> = ids.iter().copied().filter(|&v| v != v0).collect();
            let others_p: Vec<usize> = ids_p.iter().copied().filter(|&v| v != v0).collect();
            let p0 = pts[local(v0).unwrap()];
            let p1 = pts[local(others[0]).unwrap()];
            let p2 = pts[local(others[1]).unwrap()];
            let q1 = pts_p[local_p(others_p[0]).unwrap()];
            let q2 = pts_p[local_p(others_p[1]).unwrap()];
            let m = vertex_moment(p0, p1, p2, q1, q2, params, quad.duffy_order);
            let h: [[f64; 4]; 5] = [
                [-1.0, 0.0, 1.0, 0.0],
                [1.0, -1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, -1.0, 1.0],
                [0.0, 0.0, 0.0, -1.0],
            ];
            PairBlock {
                relationship: rel,
                vertices: vec![v0, others[0], others[1], others_p[0], others_p[1]],
                values: contract(&h, &m),
            }
        }
        Relationship::Disjoint => {
            let g = ElemGeom::new(pts);
            let gp = ElemGeom::new(pts_p);
            let (diag, cross) = disjoint_moments(&g, &gp, params, quad);
            let (diag_p, _) = disjoint_moments(&gp, &g, params, quad);
            let mut values = vec![0.0; 36];
            for a in 0..3 {
                for b in 0..3 {
                    values[a * 6 + b] = diag[a][b];
                    values[(a + 3) * 6 + b + 3] = diag_p[a][b];
                    values[a * 6 + b + 3] = -cross[a][b];
                    values[(b + 3) * 6 + a] = -cross[a][b];
                }
            }
            let mut vertices = ids.to_vec();
            vertices.extend_from_slice(&ids_p);
            PairBlock {
                relationship: rel,
                vertices,
                values,
            }
        }
    }
}

/// `values[r][s] = h_r^T M h_s`.
fn contract<const D: usize>(h: &[[f64; D]], m: &[[f64; D]; D]) -> Vec<f64> {
    let n = h.len();
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let mut mh = [0.0; D];
        for i in 0..D {
            mh[i] = (0..D).map(|j| m[i][j] * h[r][j]).sum();
        }
        for s in 0..n {
            out[r * n + s] = (0..D).map(|i| h[s][i] * mh[i]).sum();
        }
    }
    out
}

#[inline]
fn sub(a: Point, b: Point) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn tri_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
}

/// `∬_{K×K} z z^T |z|^{-2-α}` with `z = x - y`.
fn identical_moment(g: &ElemGeom, params: &FracKernelParams, order: usize) -> [[f64; 2]; 2] {
    let alpha = params.alpha;
    let e1 = sub(g.p[1], g.p[0]);
    let e2 = sub(g.p[2], g.p[1]);
    let gl = GaussLegendre::new(6 * order);
    let mut t = [[0.0; 2]; 2];
    for (&eta, &w) in gl.points.iter().zip(&gl.weights) {
        for dir in [[eta, 1.0], [1.0, eta], [-eta, 1.0 - eta]] {
            let z = [e1[0] * dir[0] + e2[0] * dir[1], e1[1] * dir[0] + e2[1] * dir[1]];
            let k = w * params.kernel_r2(z[0] * z[0] + z[1] * z[1]);
            t[0][0] += k * z[0] * z[0];
            t[0][1] += k * z[0] * z[1];
            t[1][1] += k * z[1] * z[1];
        }
    }
    t[1][0] = t[0][1];
    let scale = 8.0 * g.area * g.area / ((4.0 - alpha) * (3.0 - alpha) * (2.0 - alpha));
    for row in t.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    t
}

/// Moment matrix `∫ q q^T |Mq|^{-2-α}` for the edge pair `(P0,P1,P2)`,
/// `(P0,P1,P2')` with `q = (s - s', t, t')`.
fn edge_moment(p0: Point, p1: Point, p2: Point, p2p: Point, params: &FracKernelParams, order: usize) -> [[f64; 3]; 3] {
    let alpha = params.alpha;
    let a = sub(p1, p0);
    let b = sub(p2, p1);
    let c = sub(p2p, p1);
    let gl = GaussLegendre::new(order);
    let mut m = [[0.0; 3]; 3];
    let mut add = |q: [f64; 3], w: f64| {
        let z = [
            a[0] * q[0] + b[0] * q[1] - c[0] * q[2],
            a[1] * q[0] + b[1] * q[1] - c[1] * q[2],
        ];
        let k = w * params.kernel_r2(z[0] * z[0] + z[1] * z[1]);
        for i in 0..3 {
            for j in i..3 {
                m[i][j] += k * q[i] * q[j];
            }
        }
    };
    for (&u, &wu) in gl.points.iter().zip(&gl.weights) {
        for (&v, &wv) in gl.points.iter().zip(&gl.weights) {
            let w = wu * wv;
            add([u, 1.0, (1.0 - u) * v], w * (1.0 - u));
            add([u, v, 1.0 - u], w);
            add([-u, 1.0 - u, v], w);
            add([-u, (1.0 - u) * v, 1.0], w * (1.0 - u));
        }
    }
    let scale = 4.0 * tri_area(p0, p1, p2) * tri_area(p0, p1, p2p) / ((3.0 - alpha) * (4.0 - alpha));
    for i in 0..3 {
        for j in i..3 {
            m[i][j] *= scale;
            m[j][i] = m[i][j];
        }
    }
    m
}

/// Panels on `[0, 1]` refined geometrically toward 0 down to about `r`.
fn graded_panels(r: f64) -> Vec<(f64, f64)> {
    if r >= 0.5 {
        return vec![(0.0, 1.0)];
    }
    let mut breaks = vec![1.0];
    let mut x: f64 = 1.0;
    while x > 0.25 * r {
        x *= 0.3;
        breaks.push(x);
    }
    breaks.push(0.0);
    breaks.windows(2).rev().map(|w| (w[1], w[0])).collect()
}

/// Moment matrix for the vertex pair `(P0,P1,P2)`, `(P0,Q1,Q2)` with
/// `q = (s, t, s', t')`.
fn vertex_moment(
    p0: Point,
    p1: Point,
    p2: Point,
    q1: Point,
    q2: Point,
    params: &FracKernelParams,
    order: usize,
) -> [[f64; 4]; 4] {
    let alpha = params.alpha;
    let a1 = sub(p1, p0);
    let b1 = sub(p2, p1);
    let a2 = sub(q1, p0);
    let b2 = sub(q2, q1);
    let diam = |p: [Point; 3]| {
        let d = |x: Point, y: Point| (x[0] - y[0]).hypot(x[1] - y[1]);
        d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
    };
    let (d1, d2) = (diam([p0, p1, p2]), diam([p0, q1, q2]));
    let panels = graded_panels(d1.min(d2) / d1.max(d2));
    let gl = GaussLegendre::new(order);
    let mut m = [[0.0; 4]; 4];
    let mut add = |q: [f64; 4], w: f64| {
        let z = [
            a1[0] * q[0] + b1[0] * q[1] - a2[0] * q[2] - b2[0] * q[3],
            a1[1] * q[0] + b1[1] * q[1] - a2[1] * q[2] - b2[1] * q[3],
        ];
        let k = w * params.kernel_r2(z[0] * z[0] + z[1] * z[1]);
        for i in 0..4 {
            for j in i..4 {
                m[i][j] += k * q[i] * q[j];
            }
        }
    };
    for &(lo, hi) in &panels {
        let len = hi - lo;
        for (&vr, &wvr) in gl.points.iter().zip(&gl.weights) {
            let v = lo + len * vr;
            let wv = wvr * len * v;
            for (&t, &wt) in gl.points.iter().zip(&gl.weights) {
                for (&w, &ww) in gl.points.iter().zip(&gl.weights) {
                    let wgt = wv * wt * ww;
                    add([1.0, t, v, v * w], wgt);
                    add([v, v * w, 1.0, t], wgt);
                }
            }
        }
    }
    let scale = 4.0 * tri_area(p0, p1, p2) * tri_area(p0, q1, q2) / (4.0 - alpha);
    for i in 0..4 {
        for j in i..4 {
            m[i][j] *= scale;
            m[j][i] = m[i][j];
        }
    }
    m
}

/// `(∬ λ_a λ_b(x) k, ∬ λ_a(x) λ'_b(y) k)` over `K × K'` for disjoint
/// closed elements, with the same tiers as the assembly.
pub(crate) fn disjoint_moments(
    g: &ElemGeom,
    gp: &ElemGeom,
    params: &FracKernelParams,
    quad: &QuadratureConfig,
) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mid = quad.mid_rule();
    let mut diag = [[0.0; 3]; 3];
    let mut cross = [[0.0; 3]; 3];
    let near = NearPair {
        g,
        gp,
        rule: &mid,
        params,
        near_ratio: quad.near_ratio,
        max_depth: 2 * quad.grading_levels,
    };
    near.accumulate(g.p, gp.p, 0, &mut diag, &mut cross);
    (diag, cross)
}

/// Product-rule integration of a nearly touching disjoint pair, splitting
/// the larger triangle until the pieces are well separated.
pub(crate) struct NearPair<'a> {
    pub g: &'a ElemGeom,
    pub gp: &'a ElemGeom,
    pub rule: &'a TriangleRule,
    pub params: &'a FracKernelParams,
    pub near_ratio: f64,
    pub max_depth: usize,
}

fn centroid_radius_diam(p: &[Point; 3]) -> (Point, f64, f64) {
    let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
    let d = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
    let r = d(c, p[0]).max(d(c, p[1])).max(d(c, p[2]));
    let diam = d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]));
    (c, r, diam)
}

pub(crate) fn red_children(p: &[Point; 3]) -> [[Point; 3]; 4] {
    let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let m01 = mid(p[0], p[1]);
    let m12 = mid(p[1], p[2]);
    let m20 = mid(p[2], p[0]);
    [[p[0], m01, m20], [m01, p[1], m12], [m20, m12, p[2]], [m01, m12, m20]]
}

impl NearPair<'_> {
    pub fn accumulate(&self, t: [Point; 3], tp: [Point; 3], depth: usize, diag: &mut [[f64; 3]; 3], cross: &mut [[f64; 3]; 3]) {
        let (c, r, d) = centroid_radius_diam(&t);
        let (cp, rp, dp) = centroid_radius_diam(&tp);
        let gap = (c[0] - cp[0]).hypot(c[1] - cp[1]) - r - rp;
        if depth >= self.max_depth || gap >= self.near_ratio * d.max(dp) {
            self.leaf(&t, &tp, diag, cross);
            return;
        }
        if d >= dp {
            for child in red_children(&t) {
                self.accumulate(child, tp, depth + 1, diag, cross);
            }
        } else {
            for child in red_children(&tp) {
                self.accumulate(t, child, depth + 1, diag, cross);
            }
        }
    }

    fn leaf(&self, t: &[Point; 3], tp: &[Point; 3], diag: &mut [[f64; 3]; 3], cross: &mut [[f64; 3]; 3]) {
        let area = tri_area(t[0], t[1], t[2]);
        let area_p = tri_area(tp[0], tp[1], tp[2]);
        let map = |p: &[Point; 3], b: &[f64; 3]| -> Point {
            [
                b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0],
                b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1],
            ]
        };
        let ys: Vec<(Point, [f64; 3], f64)> = self
            .rule
            .bary
            .iter()
            .zip(&self.rule.weights)
            .map(|(b, w)| {
                let y = map(tp, b);
                (y, self.gp.bary(y), w * area_p)
            })
            .collect();
        for (b, w) in self.rule.bary.iter().zip(&self.rule.weights) {
            let x = map(t, b);
            let lx = self.g.bary(x);
            let wx = w * area;
            let mut sum = 0.0;
            let mut tb = [0.0; 3];
            for (y, ly, wy) in &ys {
                let k = wy * self.params.kernel(x, *y);
                sum += k;
                tb[0] += k * ly[0];
                tb[1] += k * ly[1];
                tb[2] += k * ly[2];
            }
            for a in 0..3 {
                for bb in 0..3 {
                    diag[a][bb] += wx * lx[a] * lx[bb] * sum;
                    cross[a][bb] += wx * lx[a] * tb[bb];
                }
            }
        }
    }
}

/// Reference rule with at least `n` points, used by tests that compare
/// against a plain tensor rule.
pub fn product_rule_block(
    pts: [Point; 3],
    pts_p: [Point; 3],
    n_points: usize,
    params: &FracKernelParams,
) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let g = ElemGeom::new(pts);
    let gp = ElemGeom::new(pts_p);
    let rule = rule_with_points(n_points);
    let near = NearPair {
        g: &g,
        gp: &gp,
        rule: &rule,
        params,
        near_ratio: 0.0,
        max_depth: 0,
    };
    let mut diag = [[0.0; 3]; 3];
    let mut cross = [[0.0; 3]; 3];
    near.leaf(&pts, &pts_p, &mut diag, &mut cross);
    (diag, cross)
}
