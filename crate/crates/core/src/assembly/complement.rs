//! The complement weight `ρ(x) = ∫_{Ω^c} |x - y|^{-2-α} dy` and the
//! element matrices `∫_K λ_a λ_b ρ`.

use std::f64::consts::PI;

use super::{ElemGeom, QuadratureConfig};
use crate::kernel::FracKernelParams;
use crate::mesh::{distance_to_segment, DomainSpec, TriMesh};
use crate::quadrature::{integrate_adaptive, GaussLegendre, TriangleRule};
use crate::{Error, Point, Result};

/// Closed boundary polygon, counter-clockwise with the domain on the left.
#[derive(Debug, Clone)]
pub struct BoundaryPolygon {
    pub segments: Vec<(Point, Point)>,
}

impl BoundaryPolygon {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        Self {
            segments: mesh
                .boundary_edges
                .iter()
                .map(|&[a, b]| (mesh.point(a), mesh.point(b)))
                .collect(),
        }
    }

    pub fn square() -> Self {
        let c = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
        Self {
            segments: (0..4).map(|i| (c[i], c[(i + 1) % 4])).collect(),
        }
    }

    /// Winding test; points on the polygon count as outside.
    pub fn contains(&self, x: Point) -> bool {
        let mut inside = false;
        for &(p, q) in &self.segments {
            if distance_to_segment(p, q, x) <= 1e-14 {
                return false;
            }
            if (p[1] > x[1]) != (q[1] > x[1]) {
                let xi = p[0] + (x[1] - p[1]) * (q[0] - p[0]) / (q[1] - p[1]);
                if x[0] < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// `ρ(x)` by the polar edge formula, for `x` inside the polygon.
    pub fn weight(&self, x: Point, params: &FracKernelParams) -> f64 {
        self.segments
            .iter()
            .map(|&(p, q)| params.edge_term(x, p, q, -1.0, [0.0, 0.0]))
            .sum()
    }
}

/// `ρ(x)` for the exact geometry of a built-in domain (the true unit disk,
/// not its polygonal approximation).
pub fn complement_weight(domain: DomainSpec, x: Point, params: &FracKernelParams) -> Result<f64> {
    match domain {
        DomainSpec::UnitDisk { .. } => {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if !(r2 < 1.0) {
                return Err(Error::OutsideDomain(x[0], x[1]));
            }
            let alpha = params.alpha;
            // distance from x to the circle along direction θ
            let f = |th: f64| {
                let b = x[0] * th.cos() + x[1] * th.sin();
                let dist = -b + (b * b + 1.0 - r2).sqrt();
                dist.powf(-alpha)
            };
            Ok(integrate_adaptive(f, 0.0, 2.0 * PI, 1e-300, 1e-13, 20_000) / alpha)
        }
        DomainSpec::Square { .. } => {
            let poly = BoundaryPolygon::square();
            if !poly.contains(x) {
                return Err(Error::OutsideDomain(x[0], x[1]));
            }
            Ok(poly.weight(x, params))
        }
        DomainSpec::Custom => Err(Error::InvalidDomain("custom domains need a mesh".into())),
    }
}

/// `ρ(x)` for the polygonal domain of a mesh.
pub fn complement_weight_mesh(mesh: &TriMesh, x: Point, params: &FracKernelParams) -> Result<f64> {
    let poly = BoundaryPolygon::from_mesh(mesh);
    if !poly.contains(x) {
        return Err(Error::OutsideDomain(x[0], x[1]));
    }
    Ok(poly.weight(x, params))
}

fn point_triangle_distance(x: Point, p: &[Point; 3]) -> f64 {
    let b = crate::mesh::barycentric(*p, x);
    if b.iter().all(|&v| v >= 0.0) {
        return 0.0;
    }
    (0..3)
        .map(|i| distance_to_segment(p[i], p[(i + 1) % 3], x))
        .fold(f64::INFINITY, f64::min)
}

/// Distance between a segment and a triangle that do not cross.
fn segment_triangle_distance(a: Point, b: Point, p: &[Point; 3]) -> f64 {
    let mut d = point_triangle_distance(a, p).min(point_triangle_distance(b, p));
    for v in p {
        d = d.min(distance_to_segment(a, b, *v));
    }
    d
}

fn diameter(p: &[Point; 3]) -> f64 {
    let d = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
    d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
}

/// Geometric panels on `[0, 1]` refined toward 0.
fn geometric_panels(levels: usize, ratio: f64) -> Vec<(f64, f64)> {
    let mut breaks = vec![0.0];
    for k in (0..levels).rev() {
        breaks.push(ratio.powi(k as i32));
    }
    breaks.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Geometric panels refined toward both ends of `[0, 1]`.
fn two_sided_panels(levels: usize, ratio: f64) -> Vec<(f64, f64)> {
    let half: Vec<(f64, f64)> = geometric_panels(levels, ratio)
        .into_iter()
        .map(|(a, b)| (0.5 * a, 0.5 * b))
        .collect();
    let mut out = half.clone();
    out.extend(half.iter().rev().map(|&(a, b)| (1.0 - b, 1.0 - a)));
    out
}

const GRADING_RATIO: f64 = 0.15;
const PANEL_POINTS: usize = 5;

struct RhoAccumulator<'a> {
    g: &'a ElemGeom,
    params: &'a FracKernelParams,
    block: [[f64; 3]; 3],
}

impl RhoAccumulator<'_> {
    #[inline]
    fn add(&mut self, x: Point, w: f64, rho: f64) {
        let l = self.g.bary(x);
        for a in 0..3 {
            for b in a..3 {
                self.block[a][b] += w * l[a] * l[b] * rho;
            }
        }
    }

    fn rule_on(&mut self, t: &[Point; 3], rule: &TriangleRule, segs: &[(Point, Point)]) {
        let area = crate::mesh::signed_area(t[0], t[1], t[2]).abs();
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let x = [
                b[0] * t[0][0] + b[1] * t[1][0] + b[2] * t[2][0],
                b[0] * t[0][1] + b[1] * t[1][1] + b[2] * t[2][1],
            ];
            let rho: f64 = segs.iter().map(|&(p, q)| self.params.edge_term(x, p, q, -1.0, [0.0, 0.0])).sum();
            self.add(x, w * area, rho);
        }
    }

    /// Collapsed coordinates `x = o + τ (u + σ v)` with `|det| = τ |u × v|`,
    /// or `x = (1 - τ)(a + σ (b - a)) + τ c` when `toward_edge` is set.
    fn graded_map(&mut self, corners: [Point; 3], toward_edge: bool, seg: (Point, Point), levels: usize) {
        let gl = GaussLegendre::new(PANEL_POINTS);
        let tau_panels = geometric_panels(2 * levels, GRADING_RATIO);
        let sigma_panels = two_sided_panels(levels, GRADING_RATIO);
        let [a, b, c] = corners;
        let area2 = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
        for &(t0, t1) in &tau_panels {
            for (&tr, &wt) in gl.points.iter().zip(&gl.weights) {
                let tau = t0 + (t1 - t0) * tr;
                let wtau = wt * (t1 - t0);
                for &(s0, s1) in &sigma_panels {
                    for (&sr, &ws) in gl.points.iter().zip(&gl.weights) {
                        let sigma = s0 + (s1 - s0) * sr;
                        let w = wtau * ws * (s1 - s0);
                        let (x, jac) = if toward_edge {
                            let e = [a[0] + sigma * (b[0] - a[0]), a[1] + sigma * (b[1] - a[1])];
                            (
                                [(1.0 - tau) * e[0] + tau * c[0], (1.0 - tau) * e[1] + tau * c[1]],
                                area2 * (1.0 - tau),
                            )
                        } else {
                            let e = [b[0] + sigma * (c[0] - b[0]), b[1] + sigma * (c[1] - b[1])];
                            ([a[0] + tau * (e[0] - a[0]), a[1] + tau * (e[1] - a[1])], area2 * tau)
                        };
                        let rho = self.params.edge_term(x, seg.0, seg.1, -1.0, [0.0, 0.0]);
                        self.add(x, w * jac, rho);
                    }
                }
            }
        }
    }

    fn split_near(&mut self, t: [Point; 3], seg: (Point, Point), depth: usize, max_depth: usize, leaf: &TriangleRule) {
        let d = segment_triangle_distance(seg.0, seg.1, &t);
        if depth >= max_depth || d >= 2.0 * diameter(&t) {
            self.rule_on(&t, leaf, std::slice::from_ref(&seg));
            return;
        }
        for child in super::pairs::red_children(&t) {
            self.split_near(child, seg, depth + 1, max_depth, leaf);
        }
    }
}

/// `∫_K λ_a λ_b ρ` where `ρ` is the complement weight of `poly`.
pub fn rho_element_block(
    poly: &BoundaryPolygon,
    g: &ElemGeom,
    params: &FracKernelParams,
    quad: &QuadratureConfig,
) -> [[f64; 3]; 3] {
    let diam = g.diam;
    let tol = 1e-12 * diam;
    let mut far3 = Vec::new();
    let mut far7 = Vec::new();
    let mut mid = Vec::new();
    let mut near = Vec::new();
    for &(p, q) in &poly.segments {
        let dc = distance_to_segment(p, q, g.centroid);
        if dc - g.radius >= 12.0 * diam {
            far3.push((p, q));
            continue;
        }
        let d = segment_triangle_distance(p, q, &g.p);
        if d >= 12.0 * diam {
            far3.push((p, q));
        } else if d >= 4.0 * diam {
            far7.push((p, q));
        } else if d >= 2.0 * diam {
            mid.push((p, q));
        } else {
            near.push((p, q));
        }
    }
    let mut acc = RhoAccumulator {
        g,
        params,
        block: [[0.0; 3]; 3],
    };
    if !far3.is_empty() {
        acc.rule_on(&g.p, &TriangleRule::three_point(), &far3);
    }
    if !far7.is_empty() {
        acc.rule_on(&g.p, &TriangleRule::seven_point(), &far7);
    }
    if !mid.is_empty() {
        acc.rule_on(&g.p, &TriangleRule::collapsed(5), &mid);
    }
    let leaf = TriangleRule::collapsed(5);
    let same = |a: Point, b: Point| (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol;
    for seg in near {
        let ia = g.p.iter().position(|&v| same(v, seg.0));
        let ib = g.p.iter().position(|&v| same(v, seg.1));
        match (ia, ib) {
            (Some(i), Some(j)) => {
                let k = 3 - i - j;
                acc.graded_map([g.p[i], g.p[j], g.p[k]], true, seg, quad.rho_grading);
            }
            (Some(i), None) | (None, Some(i)) => {
                acc.graded_map([g.p[i], g.p[(i + 1) % 3], g.p[(i + 2) % 3]], false, seg, quad.rho_grading);
            }
            (None, None) => acc.split_near(g.p, seg, 0, quad.rho_grading, &leaf),
        }
    }
    let mut m = acc.block;
    for a in 0..3 {
        for b in 0..a {
            m[a][b] = m[b][a];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::make_initial_mesh;

    #[test]
    fn disk_center_value() {
        for &a in &[0.5, 1.0, 1.5] {
            let p = FracKernelParams::new(2, a).unwrap();
            let rho = complement_weight(DomainSpec::UnitDisk { n_boundary: 32 }, [0.0, 0.0], &p).unwrap();
            assert!((rho - 2.0 * PI / a).abs() < 1e-10);
        }
    }

    #[test]
    fn disk_off_center_against_edge_formula_on_fine_polygon() {
        let p = FracKernelParams::new(2, 1.2).unwrap();
        let n = 20_000;
        let poly = BoundaryPolygon {
            segments: (0..n)
                .map(|i| {
                    let t0 = 2.0 * PI * i as f64 / n as f64;
                    let t1 = 2.0 * PI * (i + 1) as f64 / n as f64;
                    ([t0.cos(), t0.sin()], [t1.cos(), t1.sin()])
                })
                .collect(),
        };
        let x = [0.3, -0.5];
        let exact = complement_weight(DomainSpec::UnitDisk { n_boundary: 8 }, x, &p).unwrap();
        let approx = poly.weight(x, &p);
        assert!((exact - approx).abs() < 1e-6 * exact);
    }

    #[test]
    fn weight_blows_up_near_boundary() {
        let p = FracKernelParams::new(2, 1.0).unwrap();
        let d = DomainSpec::Square { n_per_side: 2 };
        let r0 = complement_weight(d, [0.0, 0.0], &p).unwrap();
        let r1 = complement_weight(d, [0.99, 0.0], &p).unwrap();
        assert!(r1 > r0);
        assert!(complement_weight(d, [1.0, 0.0], &p).is_err());
        assert!(complement_weight(d, [1.5, 0.0], &p).is_err());
    }

    #[test]
    fn mesh_polygon_of_square_matches_exact_square() {
        let p = FracKernelParams::new(2, 0.6).unwrap();
        let mesh = make_initial_mesh(DomainSpec::Square { n_per_side: 3 }).unwrap();
        let x = [0.2, 0.1];
        let a = complement_weight_mesh(&mesh, x, &p).unwrap();
        let b = complement_weight(DomainSpec::Square { n_per_side: 3 }, x, &p).unwrap();
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn element_block_converges_under_grading() {
        let p = FracKernelParams::new(2, 1.5).unwrap();
        let mesh = make_initial_mesh(DomainSpec::Square { n_per_side: 4 }).unwrap();
        let poly = BoundaryPolygon::from_mesh(&mesh);
        let q = QuadratureConfig::default();
        let fine = QuadratureConfig {
            rho_grading: 2 * q.rho_grading,
            ..q
        };
        for k in 0..mesh.n_elements() {
            let g = ElemGeom::of(&mesh, k);
            let dofs = mesh.element_dofs(k);
            let a = rho_element_block(&poly, &g, &p, &q);
            let b = rho_element_block(&poly, &g, &p, &fine);
            for i in 0..3 {
                for j in 0..3 {
                    if dofs[i].is_some() && dofs[j].is_some() {
                        assert!((a[i][j] - b[i][j]).abs() < 1e-6 * b[i][j].abs(), "k {k}: {} vs {}", a[i][j], b[i][j]);
                    }
                }
            }
        }
    }
}
