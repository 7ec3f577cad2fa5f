//! Projection formulas, the variationally discretized control and the
//! projected fixed-point iteration for the discrete optimality system.
//!
//! The control is never a finite element function: it lives at the points of
//! the load rule and is recovered from the discrete adjoint by projection.

use std::sync::Arc;

use faer::prelude::SpSolver;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_load_from_samples, ElemGeom, SpdOperator};
use crate::mesh::TriMesh;
use crate::quadrature::TriangleRule;
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcpParams {
    pub alpha: f64,
    /// L² regularization weight.
    pub gamma: f64,
    /// L¹ sparsity weight.
    pub beta: f64,
    pub a_lo: f64,
    pub b_hi: f64,
}

impl OcpParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return bad("alpha must lie in (0, 2)");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !(self.a_lo < 0.0 && 0.0 < self.b_hi) {
            return bad("control bounds must satisfy a < 0 < b");
        }
        Ok(())
    }
}

pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Source and desired state.
#[derive(Clone)]
pub struct ProblemData {
    pub f: ScalarFn,
    pub y_d: ScalarFn,
}

impl ProblemData {
    pub fn new(f: impl Fn(Point) -> f64 + Send + Sync + 'static, y_d: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            y_d: Arc::new(y_d),
        }
    }
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ProblemData")
    }
}

/// `min(hi, max(lo, v))`.
pub fn clamp(v: f64, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::InvalidParameter(format!("empty interval [{lo}, {hi}]")));
    }
    Ok(proj(v, lo, hi))
}

#[inline]
fn proj(v: f64, lo: f64, hi: f64) -> f64 {
    hi.min(lo.max(v))
}

/// The unique subgradient of the L¹ term associated with the adjoint value.
#[inline]
pub fn subgradient_of_p(p: f64, beta: f64) -> f64 {
    proj(-p / beta, -1.0, 1.0)
}

#[inline]
pub fn control_of_p(p: f64, params: &OcpParams) -> f64 {
    let lambda = subgradient_of_p(p, params.beta);
    proj(-(p + params.beta * lambda) / params.gamma, params.a_lo, params.b_hi)
}

/// Points of a triangle rule on every element, with the data needed to
/// evaluate P1 functions there.
#[derive(Debug, Clone)]
pub struct QuadPoints {
    pub rule: TriangleRule,
    /// `points[k * nq + q]`.
    pub points: Vec<Point>,
    /// Weight times element area.
    pub weights: Vec<f64>,
    dofs: Vec<[Option<usize>; 3]>,
}

impl QuadPoints {
    pub fn new(mesh: &TriMesh, rule: TriangleRule) -> Self {
        let mut points = Vec::with_capacity(mesh.n_elements() * rule.len());
        let mut weights = Vec::with_capacity(points.capacity());
        for k in 0..mesh.n_elements() {
            let g = ElemGeom::of(mesh, k);
            for (b, w) in rule.bary.iter().zip(&rule.weights) {
                points.push(g.map(*b));
                weights.push(w * g.area);
            }
        }
        let dofs = (0..mesh.n_elements()).map(|k| mesh.element_dofs(k)).collect();
        Self {
            rule,
            points,
            weights,
            dofs,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn per_element(&self) -> usize {
        self.rule.len()
    }

    /// Values of the P1 function with coefficients `c` at every point.
    pub fn eval_p1(&self, c: &[f64]) -> Vec<f64> {
        let nq = self.rule.len();
        let mut out = Vec::with_capacity(self.len());
        for d in &self.dofs {
            let v = d.map(|i| i.map_or(0.0, |i| c[i]));
            for q in 0..nq {
                let b = self.rule.bary[q];
                out.push(b[0] * v[0] + b[1] * v[1] + b[2] * v[2]);
            }
        }
        out
    }

    pub fn sample(&self, g: &(dyn Fn(Point) -> f64 + Send + Sync)) -> Result<Vec<f64>> {
        self.points
            .iter()
            .map(|&x| {
                let v = g(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteValue(x[0], x[1]))
                }
            })
            .collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Factorized SPD system.
pub enum SpdSolver<'a> {
    Cholesky(faer::solvers::Cholesky<f64>),
    Cg(&'a SpdOperator),
}

/// Systems above this size are solved with conjugate gradients so the
/// factor does not double the memory footprint.
pub const CHOLESKY_CAP: usize = 12_000;

impl<'a> SpdSolver<'a> {
    pub fn new(a: &'a SpdOperator) -> Result<Self> {
        Self::with_cap(a, CHOLESKY_CAP)
    }

    pub fn with_cap(a: &'a SpdOperator, cap: usize) -> Result<Self> {
        if a.n > cap {
            return Ok(SpdSolver::Cg(a));
        }
        a.entries
            .cholesky(faer::Side::Lower)
            .map(SpdSolver::Cholesky)
            .map_err(|_| Error::NotPositiveDefinite)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Cholesky(ch) => {
                let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
                let x = ch.solve(&rhs);
                Ok((0..b.len()).map(|i| x.read(i, 0)).collect())
            }
            SpdSolver::Cg(a) => conjugate_gradient(a, b, 1e-12, 10 * a.n.max(100)),
        }
    }
}

/// Jacobi-preconditioned conjugate gradients to `‖Ax - b‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient(a: &SpdOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n;
    let bn = norm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok(x);
    }
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let ap = a.apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if norm(&r) <= tol * bn {
            log::debug!("cg converged in {} iterations", it + 1);
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        for i in 0..n {
            p[i] = z[i] + rz_new / rz * p[i];
        }
        rz = rz_new;
    }
    Err(Error::MaxIterations {
        iterations: max_iter,
        residual: norm(&r) / bn,
    })
}

/// Solves `A x = b` by Cholesky, or conjugate gradients above the size cap.
pub fn solve_spd(a: &SpdOperator, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n {
        return Err(Error::LengthMismatch(b.len(), a.n));
    }
    SpdSolver::new(a)?.solve(b)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖Ax - b‖ / ‖b‖` (or `‖Ax‖` when `b = 0`).
pub fn relative_residual(a: &SpdOperator, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.apply(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let bn = norm(b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointOptions {
    /// Stop when the sup-norm of the control update is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation in `(0, 1]`; halved on divergence down to 2^-6.
    pub relax: f64,
    /// Degree of exactness of the load rule that also carries the control.
    pub load_degree: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            relax: 1.0,
            load_degree: 5,
        }
    }
}

pub const MIN_RELAX: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, Serialize)]
pub struct OcpSolution {
    /// State coefficients at the interior vertices.
    pub y: Vec<f64>,
    /// Adjoint coefficients at the interior vertices.
    pub p: Vec<f64>,
    /// Control at the load points that produced `y`.
    pub u_quad: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the last control update.
    pub final_residual: f64,
    /// `max_q |u(x_q) - control_of_p(p(x_q))|`.
    pub fixed_point_residual: f64,
    pub state_residual: f64,
    pub adjoint_residual: f64,
    pub relax: f64,
    /// State and adjoint right-hand side norms.
    pub state_rhs_norm: f64,
    pub adjoint_rhs_norm: f64,
}

impl OcpSolution {
    /// Control recovered from the adjoint at the load points.
    pub fn control(&self, quad: &QuadPoints, params: &OcpParams) -> Vec<f64> {
        quad.eval_p1(&self.p).into_iter().map(|p| control_of_p(p, params)).collect()
    }

    pub fn subgradient(&self, quad: &QuadPoints, params: &OcpParams) -> Vec<f64> {
        quad.eval_p1(&self.p)
            .into_iter()
            .map(|p| subgradient_of_p(p, params.beta))
            .collect()
    }

    /// Fraction of load points where the recovered control vanishes.
    pub fn zero_fraction(&self, quad: &QuadPoints, params: &OcpParams) -> f64 {
        let u = self.control(quad, params);
        u.iter().filter(|&&v| v == 0.0).count() as f64 / u.len().max(1) as f64
    }
}

/// Projected fixed-point iteration: state solve, adjoint solve, projection,
/// relaxed update of the control at the load points.
pub fn fixed_point_solve(
    mesh: &TriMesh,
    a: &SpdOperator,
    params: &OcpParams,
    data: &ProblemData,
    opts: &FixedPointOptions,
) -> Result<OcpSolution> {
    fixed_point_solve_from(mesh, a, params, data, opts, None)
}

/// As [`fixed_point_solve`] with an optional initial control at the load
/// points.
pub fn fixed_point_solve_from(
    mesh: &TriMesh,
    a: &SpdOperator,
    params: &OcpParams,
    data: &ProblemData,
    opts: &FixedPointOptions,
    u0: Option<&[f64]>,
) -> Result<OcpSolution> {
    params.validate()?;
    if !(opts.tol > 0.0) || !(opts.relax > 0.0 && opts.relax <= 1.0) {
        return Err(Error::InvalidParameter("need tol > 0 and relax in (0, 1]".into()));
    }
    if a.n != mesh.n_dofs() {
        return Err(Error::LengthMismatch(a.n, mesh.n_dofs()));
    }
    let quad = QuadPoints::new(mesh, TriangleRule::with_degree(opts.load_degree));
    let f_q = quad.sample(data.f.as_ref())?;
    let yd_q = quad.sample(data.y_d.as_ref())?;
    let solver = SpdSolver::new(a)?;
    let mut u = match u0 {
        Some(u0) if u0.len() == quad.len() => u0.to_vec(),
        Some(u0) => return Err(Error::LengthMismatch(u0.len(), quad.len())),
        None => vec![0.0; quad.len()],
    };
    let mut relax = opts.relax;
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let rhs_y: Vec<f64> = f_q.iter().zip(&u).map(|(f, u)| f + u).collect();
        let b_y = assemble_load_from_samples(mesh, &quad.rule, &rhs_y)?;
        let y = solver.solve(&b_y)?;
        let y_q = quad.eval_p1(&y);
        let rhs_p: Vec<f64> = y_q.iter().zip(&yd_q).map(|(y, d)| y - d).collect();
        let b_p = assemble_load_from_samples(mesh, &quad.rule, &rhs_p)?;
        let p = solver.solve(&b_p)?;
        let p_q = quad.eval_p1(&p);
        let u_new: Vec<f64> = p_q.iter().map(|&p| control_of_p(p, params)).collect();
        let residual = u.iter().zip(&u_new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        log::trace!("fixed point iteration {iterations}: residual {residual:e}, relax {relax}");
        if residual <= opts.tol {
            return Ok(OcpSolution {
                state_residual: relative_residual(a, &y, &b_y),
                adjoint_residual: relative_residual(a, &p, &b_p),
                state_rhs_norm: norm(&b_y),
                adjoint_rhs_norm: norm(&b_p),
                y,
                p,
                u_quad: u,
                iterations,
                final_residual: residual,
                fixed_point_residual: residual,
                relax,
            });
        }
        if !residual.is_finite() {
            return Err(Error::Diverged { iterations, residual });
        }
        history.push(residual);
        if history.len() > 20 && residual > 10.0 * history[history.len() - 21] {
            if relax / 2.0 < MIN_RELAX {
                return Err(Error::Diverged { iterations, residual });
            }
            relax /= 2.0;
            history.clear();
            log::debug!("fixed point iteration diverging; relaxation lowered to {relax}");
        }
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations { iterations, residual });
        }
        for (ui, vi) in u.iter_mut().zip(&u_new) {
            *ui = (1.0 - relax) * *ui + relax * vi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> OcpParams {
        OcpParams {
            alpha: 1.0,
            gamma: 1.0,
            beta: 1.0,
            a_lo: -0.5,
            b_hi: 0.5,
        }
    }

    #[test]
    fn projections() {
        assert_eq!(clamp(-1.0, -0.5, 0.5).unwrap(), -0.5);
        assert_eq!(clamp(0.2, -0.5, 0.5).unwrap(), 0.2);
        assert_eq!(clamp(9.0, -0.5, 0.5).unwrap(), 0.5);
        assert!(clamp(0.0, 1.0, -1.0).is_err());
        assert_eq!(subgradient_of_p(2.0, 1.0), -1.0);
        assert_eq!(subgradient_of_p(0.5, 1.0), -0.5);
        assert_eq!(subgradient_of_p(0.0, 1.0), 0.0);
        let q = params();
        assert_eq!(control_of_p(0.5, &q), 0.0);
        assert_eq!(control_of_p(2.0, &q), -0.5);
        assert_eq!(control_of_p(-2.0, &q), 0.5);
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        assert!(OcpParams { gamma: 0.0, ..params() }.validate().is_err());
        assert!(OcpParams { a_lo: 0.1, ..params() }.validate().is_err());
        assert!(OcpParams { alpha: 2.0, ..params() }.validate().is_err());
    }

    #[test]
    fn cg_matches_cholesky() {
        let n = 30;
        let entries = Mat::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64).abs();
            if i == j {
                4.0
            } else {
                1.0 / (1.0 + d * d)
            }
        });
        let a = SpdOperator { n, entries };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x1 = SpdSolver::new(&a).unwrap().solve(&b).unwrap();
        let x2 = SpdSolver::with_cap(&a, 0).unwrap().solve(&b).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!(relative_residual(&a, &x1, &b) < 1e-13);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let entries = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 2.0 });
        let a = SpdOperator { n: 2, entries };
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(Error::NotPositiveDefinite)));
    }
}
