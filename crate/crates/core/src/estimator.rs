//! Weighted residual indicators for the state and adjoint equations.
//!
//! For `α ≤ 1` the residual is weighted by `h_K^{α/2}`. For `α > 1` the
//! residual is not square integrable up to the mesh skeleton and the weight
//! becomes `h_K^{α/2-σ} ω(x)^σ` with `σ = α/2 - 1/2` and `ω` the distance to
//! the skeleton.

use serde::Serialize;

use crate::assembly::QuadratureConfig;
use crate::frac_eval::{FracEvaluator, P1Field};
use crate::kernel::FracKernelParams;
use crate::mesh::{distance_to_triangle_boundary, TriMesh};
use crate::optimality::{ProblemData, QuadPoints};
use crate::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    LowAlpha,
    HighAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSpec {
    pub alpha: f64,
    pub sigma: f64,
    pub regime: Regime,
}

impl WeightSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        Ok(if alpha > 1.0 {
            Self {
                alpha,
                sigma: 0.5 * alpha - 0.5,
                regime: Regime::HighAlpha,
            }
        } else {
            Self {
                alpha,
                sigma: 0.0,
                regime: Regime::LowAlpha,
            }
        })
    }

    /// The skeleton-weighted form with an explicit exponent.
    pub fn high_alpha(alpha: f64, sigma: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&sigma) || 0.5 * alpha - sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!("invalid weight exponent {sigma} for alpha {alpha}")));
        }
        Ok(Self {
            alpha,
            sigma,
            regime: Regime::HighAlpha,
        })
    }

    /// `h̃^{α/2}` at a point with element size `h` and skeleton distance
    /// `omega`.
    pub fn weight(&self, h: f64, omega: f64) -> f64 {
        match self.regime {
            Regime::LowAlpha => h.powf(0.5 * self.alpha),
            Regime::HighAlpha => h.powf(0.5 * self.alpha - self.sigma) * omega.powf(self.sigma),
        }
    }
}

/// Per-element squared indicators and their total.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorField {
    pub eta_y_sq: Vec<f64>,
    pub eta_p_sq: Vec<f64>,
    pub total_sq: f64,
}

impl EstimatorField {
    /// `E_K² = η_y² + η_p²`.
    pub fn per_element(&self) -> Vec<f64> {
        self.eta_y_sq.iter().zip(&self.eta_p_sq).map(|(a, b)| a + b).collect()
    }

    pub fn e_y(&self) -> f64 {
        self.eta_y_sq.iter().sum::<f64>().sqrt()
    }

    pub fn e_p(&self) -> f64 {
        self.eta_p_sq.iter().sum::<f64>().sqrt()
    }

    pub fn e_ocp(&self) -> f64 {
        self.total_sq.sqrt()
    }

    /// Sum of `E_K²` over a subset of elements.
    pub fn sum_over(&self, elements: &[usize]) -> f64 {
        elements.iter().map(|&k| self.eta_y_sq[k] + self.eta_p_sq[k]).sum()
    }
}

pub fn total_estimator(eta_y_sq: Vec<f64>, eta_p_sq: Vec<f64>) -> Result<EstimatorField> {
    if eta_y_sq.len() != eta_p_sq.len() {
        return Err(Error::LengthMismatch(eta_y_sq.len(), eta_p_sq.len()));
    }
    if eta_y_sq.iter().chain(&eta_p_sq).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter("indicators must be finite and nonnegative".into()));
    }
    let total_sq = eta_y_sq.iter().zip(&eta_p_sq).map(|(a, b)| a + b).sum();
    Ok(EstimatorField {
        eta_y_sq,
        eta_p_sq,
        total_sq,
    })
}

/// `h̃(x_q)^α · w_q` for every load point.
pub fn squared_weights(mesh: &TriMesh, qp: &QuadPoints, spec: &WeightSpec) -> Vec<f64> {
    let nq = qp.per_element();
    let mut out = Vec::with_capacity(qp.len());
    for k in 0..mesh.n_elements() {
        let p = mesh.element_points(k);
        let h = mesh.element_size(k);
        for q in 0..nq {
            let x = qp.points[k * nq + q];
            let w = spec.weight(h, distance_to_triangle_boundary(p, x));
            out.push(w * w * qp.weights[k * nq + q]);
        }
    }
    out
}

/// Per-element `Σ_q h̃^α w_q r_q²`.
pub fn weighted_squares(n_elements: usize, nq: usize, weights: &[f64], residual: &[f64]) -> Result<Vec<f64>> {
    if let Some(q) = residual.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFiniteValue(q as f64, f64::NAN));
    }
    Ok((0..n_elements)
        .map(|k| (k * nq..(k + 1) * nq).map(|i| weights[i] * residual[i] * residual[i]).sum())
        .collect())
}

/// Everything needed to evaluate residuals on one mesh.
pub struct EstimatorContext<'a> {
    pub mesh: &'a TriMesh,
    pub qp: &'a QuadPoints,
    pub evaluator: FracEvaluator<'a>,
    pub spec: WeightSpec,
    weights: Vec<f64>,
    pub parallel: bool,
}

impl<'a> EstimatorContext<'a> {
    pub fn new(mesh: &'a TriMesh, qp: &'a QuadPoints, params: &FracKernelParams, quad: &QuadratureConfig) -> Result<Self> {
        let spec = WeightSpec::new(params.alpha)?;
        Ok(Self {
            mesh,
            qp,
            evaluator: FracEvaluator::new(mesh, params, quad)?,
            weights: squared_weights(mesh, qp, &spec),
            spec,
            parallel: true,
        })
    }

    /// `(-Δ)^{α/2}` of a P1 field at every load point.
    pub fn frac_lap(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let field = P1Field::new(self.mesh, coeffs.to_vec())?;
        let prepared = self.evaluator.prepare(&field)?;
        self.evaluator.eval_at_rule(&prepared, &self.qp.rule, self.parallel)
    }

    /// Squared state indicators for the residual `f + u - (-Δ)^{α/2} y`.
    pub fn eta_y_sq(&self, y: &[f64], u_quad: &[f64], f_q: &[f64]) -> Result<Vec<f64>> {
        let ly = self.frac_lap(y)?;
        let r: Vec<f64> = (0..ly.len()).map(|i| f_q[i] + u_quad[i] - ly[i]).collect();
        weighted_squares(self.mesh.n_elements(), self.qp.per_element(), &self.weights, &r)
    }

    /// Squared adjoint indicators for the residual `y - y_d - (-Δ)^{α/2} p`.
    pub fn eta_p_sq(&self, p: &[f64], y: &[f64], yd_q: &[f64]) -> Result<Vec<f64>> {
        let lp = self.frac_lap(p)?;
        let y_q = self.qp.eval_p1(y);
        let r: Vec<f64> = (0..lp.len()).map(|i| y_q[i] - yd_q[i] - lp[i]).collect();
        weighted_squares(self.mesh.n_elements(), self.qp.per_element(), &self.weights, &r)
    }

    pub fn estimate(&self, y: &[f64], p: &[f64], u_quad: &[f64], data: &ProblemData) -> Result<EstimatorField> {
        let f_q = self.qp.sample(data.f.as_ref())?;
        let yd_q = self.qp.sample(data.y_d.as_ref())?;
        let (ey, ep) = if self.parallel {
            rayon::join(|| self.eta_y_sq(y, u_quad, &f_q), || self.eta_p_sq(p, y, &yd_q))
        } else {
            (self.eta_y_sq(y, u_quad, &f_q), self.eta_p_sq(p, y, &yd_q))
        };
        total_estimator(ey?, ep?)
    }
}

/// Squared state indicator of one element with the control given at the
/// load points of that element.
#[allow(clippy::too_many_arguments)]
pub fn eta_y_element(
    mesh: &TriMesh,
    k: usize,
    y: &P1Field,
    u_at_quad: &[f64],
    f: &(dyn Fn(Point) -> f64 + Send + Sync),
    params: &FracKernelParams,
    quad: &QuadratureConfig,
    qp: &QuadPoints,
) -> Result<f64> {
    let rhs: Vec<f64> = element_points(qp, k)
        .iter()
        .zip(u_at_quad)
        .map(|(&x, u)| f(x) + u)
        .collect();
    element_indicator(mesh, k, y, &rhs, params, quad, qp)
}

/// Squared adjoint indicator of one element.
#[allow(clippy::too_many_arguments)]
pub fn eta_p_element(
    mesh: &TriMesh,
    k: usize,
    p: &P1Field,
    y: &P1Field,
    y_d: &(dyn Fn(Point) -> f64 + Send + Sync),
    params: &FracKernelParams,
    quad: &QuadratureConfig,
    qp: &QuadPoints,
) -> Result<f64> {
    let rhs: Vec<f64> = element_points(qp, k).iter().map(|&x| y.value_in(k, x) - y_d(x)).collect();
    element_indicator(mesh, k, p, &rhs, params, quad, qp)
}

fn element_points(qp: &QuadPoints, k: usize) -> &[Point] {
    let nq = qp.per_element();
    &qp.points[k * nq..(k + 1) * nq]
}

fn element_indicator(
    mesh: &TriMesh,
    k: usize,
    field: &P1Field,
    rhs: &[f64],
    params: &FracKernelParams,
    quad: &QuadratureConfig,
    qp: &QuadPoints,
) -> Result<f64> {
    let spec = WeightSpec::new(params.alpha)?;
    let ev = FracEvaluator::new(mesh, params, quad)?;
    let prepared = ev.prepare(field)?;
    let nq = qp.per_element();
    let p = mesh.element_points(k);
    let h = mesh.element_size(k);
    let mut out = 0.0;
    for (q, &x) in element_points(qp, k).iter().enumerate() {
        let r = rhs[q] - ev.eval_prepared(&prepared, k, x)?;
        if !r.is_finite() {
            return Err(Error::NonFiniteValue(x[0], x[1]));
        }
        let w = spec.weight(h, distance_to_triangle_boundary(p, x));
        out += w * w * qp.weights[k * nq + q] * r * r;
    }
    Ok(out)
}
