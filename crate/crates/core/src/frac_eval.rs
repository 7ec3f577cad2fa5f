//! Pointwise values of `(-Δ)^{α/2} v` for a P1 function `v` with zero
//! extension outside the mesh.
//!
//! With `v` affine on every element,
//! `(-Δ)^{α/2} v(x) = -C Σ_K FP ∫_K v(y) |x - y|^{-2-α} dy`,
//! where the finite part only matters on the element containing `x`. Elements
//! close to `x` use the closed-form edge integrals of [`FracKernelParams`];
//! farther ones use 7- and 3-point rules.

use rayon::prelude::*;

use crate::assembly::{geometries, ElemGeom, QuadratureConfig};
use crate::kernel::FracKernelParams;
use crate::mesh::{distance_to_triangle_boundary, TriMesh};
use crate::quadrature::{GaussLegendre, TriangleRule};
use crate::{Error, Point, Result};

/// Continuous piecewise linear function given by its values at the interior
/// vertices; boundary and exterior values are zero.
#[derive(Debug, Clone)]
pub struct P1Field<'a> {
    pub mesh: &'a TriMesh,
    pub coeffs: Vec<f64>,
}

impl<'a> P1Field<'a> {
    pub fn new(mesh: &'a TriMesh, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.n_dofs() {
            return Err(Error::LengthMismatch(coeffs.len(), mesh.n_dofs()));
        }
        Ok(Self { mesh, coeffs })
    }

    pub fn zero(mesh: &'a TriMesh) -> Self {
        Self {
            mesh,
            coeffs: vec![0.0; mesh.n_dofs()],
        }
    }

    /// Values at the three vertices of element `k`.
    pub fn nodal(&self, k: usize) -> [f64; 3] {
        self.mesh.element_dofs(k).map(|d| d.map_or(0.0, |i| self.coeffs[i]))
    }

    /// Value at `x` of the affine function of element `k` (extended outside
    /// the element).
    pub fn value_in(&self, k: usize, x: Point) -> f64 {
        let b = self.mesh.barycentric(k, x);
        let v = self.nodal(k);
        b[0] * v[0] + b[1] * v[1] + b[2] * v[2]
    }

    pub fn eval(&self, x: Point) -> Result<f64> {
        let k = self.mesh.locate(x)?;
        Ok(self.value_in(k, x))
    }
}

/// Per-element data of one field, reused for every evaluation point.
struct SourceData {
    geom: ElemGeom,
    nodal: [f64; 3],
    grad: [f64; 2],
    /// Three-point rule: points and `weight · area · v`.
    far: [(Point, f64); 3],
    mid: Vec<(Point, f64)>,
    /// Squared distance thresholds from the centroid.
    near_r2: f64,
    far_r2: f64,
}

/// Evaluator bound to one mesh; geometry is computed once.
pub struct FracEvaluator<'a> {
    pub mesh: &'a TriMesh,
    pub params: FracKernelParams,
    geoms: Vec<ElemGeom>,
    near_ratio: f64,
    far_ratio: f64,
    mid_rule: TriangleRule,
}

/// A field prepared for repeated evaluation.
pub struct PreparedField {
    sources: Vec<SourceData>,
    nodal: Vec<[f64; 3]>,
}

impl<'a> FracEvaluator<'a> {
    pub fn new(mesh: &'a TriMesh, params: &FracKernelParams, quad: &QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        Ok(Self {
            mesh,
            params: params.clone(),
            geoms: geometries(mesh),
            near_ratio: quad.eval_near_ratio,
            far_ratio: quad.eval_far_ratio,
            mid_rule: quad.mid_rule(),
        })
    }

    /// Every element treated with the closed-form integrals (reference mode).
    pub fn exact(mesh: &'a TriMesh, params: &FracKernelParams) -> Self {
        Self {
            mesh,
            params: params.clone(),
            geoms: geometries(mesh),
            near_ratio: f64::INFINITY,
            far_ratio: f64::INFINITY,
            mid_rule: TriangleRule::centroid(),
        }
    }

    pub fn prepare(&self, field: &P1Field) -> Result<PreparedField> {
        if !std::ptr::eq(field.mesh, self.mesh) && field.mesh.n_elements() != self.mesh.n_elements() {
            return Err(Error::LengthMismatch(field.mesh.n_elements(), self.mesh.n_elements()));
        }
        let three = TriangleRule::three_point();
        let nodal: Vec<[f64; 3]> = (0..self.mesh.n_elements()).map(|k| field.nodal(k)).collect();
        let mut sources = Vec::new();
        for (g, v) in self.geoms.iter().zip(&nodal) {
            if v.iter().all(|&a| a == 0.0) {
                continue;
            }
            let grad = [
                v[0] * g.grads[0][0] + v[1] * g.grads[1][0] + v[2] * g.grads[2][0],
                v[0] * g.grads[0][1] + v[1] * g.grads[1][1] + v[2] * g.grads[2][1],
            ];
            let weighted = |b: &[f64; 3], w: f64| (g.map(*b), w * g.area * (b[0] * v[0] + b[1] * v[1] + b[2] * v[2]));
            let mut far = [([0.0; 2], 0.0); 3];
            for (slot, (b, w)) in far.iter_mut().zip(three.bary.iter().zip(&three.weights)) {
                *slot = weighted(b, *w);
            }
            let mid = self.mid_rule.bary.iter().zip(&self.mid_rule.weights).map(|(b, w)| weighted(b, *w)).collect();
            let near = g.radius + self.near_ratio * g.diam;
            let farr = g.radius + self.far_ratio * g.diam;
            sources.push(SourceData {
                geom: *g,
                nodal: *v,
                grad,
                far,
                mid,
                near_r2: near * near,
                far_r2: farr * farr,
            });
        }
        Ok(PreparedField { sources, nodal })
    }

    /// `Σ_K FP ∫_K v k` at `x`.
    fn finite_part_sum(&self, f: &PreparedField, x: Point) -> f64 {
        let k = &self.params;
        let mut far_sum = 0.0;
        let mut near_sum = 0.0;
        for s in &f.sources {
            let dx = x[0] - s.geom.centroid[0];
            let dy = x[1] - s.geom.centroid[1];
            let r2 = dx * dx + dy * dy;
            if r2 >= s.far_r2 {
                for &(y, w) in &s.far {
                    far_sum += w * k.kernel(x, y);
                }
            } else if r2 >= s.near_r2 {
                for &(y, w) in &s.mid {
                    near_sum += w * k.kernel(x, y);
                }
            } else {
                let b = s.geom.bary(x);
                let a0 = b[0] * s.nodal[0] + b[1] * s.nodal[1] + b[2] * s.nodal[2];
                near_sum += k.triangle_integral(x, s.geom.p, a0, s.grad);
            }
        }
        far_sum + near_sum
    }

    /// `(-Δ)^{α/2} v(x)` for `x` strictly inside element `k`.
    pub fn eval_prepared(&self, f: &PreparedField, k: usize, x: Point) -> Result<f64> {
        let g = &self.geoms[k];
        let dist = distance_to_triangle_boundary(g.p, x);
        let b = g.bary(x);
        if b.iter().any(|&l| l < 0.0) {
            return Err(Error::OutsideElement(k));
        }
        if dist <= 1e-14 * g.diam.max(1.0) {
            return Err(Error::TooCloseToSkeleton(k));
        }
        Ok(-self.params.c_norm * self.finite_part_sum(f, x))
    }

    /// Values at the points of `rule` on every element, `out[k * nq + q]`.
    pub fn eval_at_rule(&self, f: &PreparedField, rule: &TriangleRule, parallel: bool) -> Result<Vec<f64>> {
        let nq = rule.len();
        let per_element = |k: usize| -> Result<Vec<f64>> {
            rule.bary
                .iter()
                .map(|b| self.eval_prepared(f, k, self.geoms[k].map(*b)))
                .collect()
        };
        let chunks: Vec<Result<Vec<f64>>> = if parallel {
            (0..self.mesh.n_elements()).into_par_iter().map(per_element).collect()
        } else {
            (0..self.mesh.n_elements()).map(per_element).collect()
        };
        let mut out = Vec::with_capacity(nq * self.mesh.n_elements());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Same value through the splitting at radius `δ = safety · dist(x, ∂K)`:
    /// `C [v(x) 2π δ^{-α}/α - ∫_{Ω \ B_δ(x)} v k]`, with the part inside the
    /// own element integrated in polar coordinates around `x`.
    pub fn eval_split(&self, f: &PreparedField, k: usize, x: Point, safety: f64, angular_points: usize) -> Result<f64> {
        let g = self.geoms[k];
        let dist = distance_to_triangle_boundary(g.p, x);
        if g.bary(x).iter().any(|&l| l < 0.0) {
            return Err(Error::OutsideElement(k));
        }
        let delta = safety * dist;
        if !(delta > 1e-14 * g.diam) {
            return Err(Error::TooCloseToSkeleton(k));
        }
        let alpha = self.params.alpha;
        let v = f.nodal[k];
        let b = g.bary(x);
        let vx = b[0] * v[0] + b[1] * v[1] + b[2] * v[2];
        let grad = [
            v[0] * g.grads[0][0] + v[1] * g.grads[1][0] + v[2] * g.grads[2][0],
            v[0] * g.grads[0][1] + v[1] * g.grads[1][1] + v[2] * g.grads[2][1],
        ];
        // ∫_{K \ B_δ} v k: pieces between the vertex directions
        let gl = GaussLegendre::new(angular_points);
        let mut angles: Vec<f64> = g.p.iter().map(|p| (p[1] - x[1]).atan2(p[0] - x[0])).collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        angles.push(angles[0] + 2.0 * std::f64::consts::PI);
        let mut own = 0.0;
        for w in angles.windows(2) {
            own += gl.integrate(w[0], w[1], |th| {
                let e = [th.cos(), th.sin()];
                let r = ray_exit(x, e, &g.p);
                let ge = grad[0] * e[0] + grad[1] * e[1];
                let radial_const = (delta.powf(-alpha) - r.powf(-alpha)) / alpha;
                let radial_lin = if (alpha - 1.0).abs() < 1e-12 {
                    (r / delta).ln()
                } else {
                    (r.powf(1.0 - alpha) - delta.powf(1.0 - alpha)) / (1.0 - alpha)
                };
                vx * radial_const + ge * radial_lin
            });
        }
        let mut rest = 0.0;
        let kp = &self.params;
        for s in &f.sources {
            if s.geom.p == g.p {
                continue;
            }
            let dx = x[0] - s.geom.centroid[0];
            let dy = x[1] - s.geom.centroid[1];
            let r2 = dx * dx + dy * dy;
            rest += if r2 >= s.far_r2 {
                s.far.iter().map(|&(y, w)| w * kp.kernel(x, y)).sum::<f64>()
            } else if r2 >= s.near_r2 {
                s.mid.iter().map(|&(y, w)| w * kp.kernel(x, y)).sum::<f64>()
            } else {
                let bb = s.geom.bary(x);
                let a0 = bb[0] * s.nodal[0] + bb[1] * s.nodal[1] + bb[2] * s.nodal[2];
                kp.triangle_integral(x, s.geom.p, a0, s.grad)
            };
        }
        let ball = 2.0 * std::f64::consts::PI * delta.powf(-alpha) / alpha;
        Ok(self.params.c_norm * (vx * ball - own - rest))
    }
}

/// Distance from `x` (inside the triangle) to its boundary along `e`.
fn ray_exit(x: Point, e: [f64; 2], p: &[Point; 3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..3 {
        let a = p[i];
        let b = p[(i + 1) % 3];
        let d = [b[0] - a[0], b[1] - a[1]];
        let den = e[0] * d[1] - e[1] * d[0];
        if den.abs() < 1e-300 {
            continue;
        }
        let w = [a[0] - x[0], a[1] - x[1]];
        let t = (w[0] * d[1] - w[1] * d[0]) / den;
        let s = (w[0] * e[1] - w[1] * e[0]) / den;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = best.min(t);
        }
    }
    best
}

/// `(-Δ)^{α/2} v(x)` for `x` strictly inside element `k`.
pub fn frac_laplacian_pointwise(
    field: &P1Field,
    k: usize,
    x: Point,
    params: &FracKernelParams,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let ev = FracEvaluator::new(field.mesh, params, quad)?;
    let f = ev.prepare(field)?;
    ev.eval_prepared(&f, k, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_initial_mesh, DomainSpec};

    fn hat_mesh() -> (TriMesh, Vec<f64>) {
        let mut m = make_initial_mesh(DomainSpec::Square { n_per_side: 4 }).unwrap();
        let all: Vec<usize> = (0..m.n_elements()).collect();
        m = m.refine(&all).mesh;
        let coeffs: Vec<f64> = (0..m.n_dofs()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        (m, coeffs)
    }

    #[test]
    fn zero_field_gives_zero() {
        let (m, _) = hat_mesh();
        let p = FracKernelParams::new(2, 1.2).unwrap();
        let f = P1Field::zero(&m);
        let v = frac_laplacian_pointwise(&f, 3, m.centroid(3), &p, &QuadratureConfig::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn tiered_matches_closed_form_everywhere() {
        let (m, c) = hat_mesh();
        for &alpha in &[0.5, 1.0, 1.5] {
            let p = FracKernelParams::new(2, alpha).unwrap();
            let field = P1Field::new(&m, c.clone()).unwrap();
            let ev = FracEvaluator::new(&m, &p, &QuadratureConfig::default()).unwrap();
            let ex = FracEvaluator::exact(&m, &p);
            let (f1, f2) = (ev.prepare(&field).unwrap(), ex.prepare(&field).unwrap());
            for k in (0..m.n_elements()).step_by(7) {
                let x = m.centroid(k);
                let a = ev.eval_prepared(&f1, k, x).unwrap();
                let b = ex.eval_prepared(&f2, k, x).unwrap();
                assert!((a - b).abs() < 1e-5 * b.abs().max(1.0), "alpha {alpha} k {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn split_form_agrees_and_ignores_delta() {
        let (m, c) = hat_mesh();
        let p = FracKernelParams::new(2, 1.5).unwrap();
        let field = P1Field::new(&m, c).unwrap();
        let ev = FracEvaluator::new(&m, &p, &QuadratureConfig::default()).unwrap();
        let f = ev.prepare(&field).unwrap();
        for k in [0, 5, 17] {
            let x = m.centroid(k);
            let a = ev.eval_prepared(&f, k, x).unwrap();
            let s1 = ev.eval_split(&f, k, x, 0.5, 24).unwrap();
            let s2 = ev.eval_split(&f, k, x, 0.25, 24).unwrap();
            assert!((a - s1).abs() < 1e-8 * a.abs().max(1.0), "{a} vs {s1}");
            assert!((s1 - s2).abs() < 1e-10 * s1.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_points_outside_element() {
        let (m, c) = hat_mesh();
        let p = FracKernelParams::new(2, 1.0).unwrap();
        let field = P1Field::new(&m, c).unwrap();
        let q = QuadratureConfig::default();
        assert!(frac_laplacian_pointwise(&field, 0, m.centroid(1), &p, &q).is_err());
        let v = m.point(m.elements[0].vertices[0]);
        assert!(frac_laplacian_pointwise(&field, 0, v, &p, &q).is_err());
    }
}
