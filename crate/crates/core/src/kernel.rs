//! The singular kernel `|z|^{-d-α}`, its normalisation constant and the
//! closed-form polar integrals of affine functions against it.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::special::{gamma, CosPowerIntegral};
use crate::{Error, Point, Result};

/// `C(d, α) = |2^α Γ(α/2 + d/2) / (π^{d/2} Γ(-α/2))|`.
pub fn normalization_constant(d: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2), got {alpha}")));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let df = d as f64;
    let c = 2f64.powf(alpha) * gamma(0.5 * alpha + 0.5 * df) / (PI.powf(0.5 * df) * gamma(-0.5 * alpha));
    Ok(c.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Power {
    Half,
    One,
    ThreeHalves,
    General(f64),
}

#[derive(Debug, Clone)]
pub struct FracKernelParams {
    pub d: usize,
    pub alpha: f64,
    pub c_norm: f64,
    power: Power,
    cos_int: Arc<CosPowerIntegral>,
}

impl FracKernelParams {
    pub fn new(d: usize, alpha: f64) -> Result<Self> {
        let c_norm = normalization_constant(d, alpha)?;
        let power = if d != 2 {
            Power::General(-0.5 * (d as f64 + alpha))
        } else if alpha == 0.5 {
            Power::Half
        } else if alpha == 1.0 {
            Power::One
        } else if alpha == 1.5 {
            Power::ThreeHalves
        } else {
            Power::General(-1.0 - 0.5 * alpha)
        };
        Ok(Self {
            d,
            alpha,
            c_norm,
            power,
            cos_int: Arc::new(CosPowerIntegral::new(alpha)),
        })
    }

    pub fn cos_integral(&self) -> &CosPowerIntegral {
        &self.cos_int
    }

    /// `|z|^{-d-α}` as a function of `r2 = |z|²`.
    #[inline(always)]
    pub fn kernel_r2(&self, r2: f64) -> f64 {
        match self.power {
            Power::Half => 1.0 / (r2 * r2.sqrt().sqrt()),
            Power::One => 1.0 / (r2 * r2.sqrt()),
            Power::ThreeHalves => {
                let r = r2.sqrt();
                1.0 / (r2 * r * r.sqrt())
            }
            Power::General(e) => r2.powf(e),
        }
    }

    #[inline(always)]
    pub fn kernel(&self, x: Point, y: Point) -> f64 {
        let dx = x[0] - y[0];
        let dy = x[1] - y[1];
        self.kernel_r2(dx * dx + dy * dy)
    }

    /// Polar edge term of the affine function `v(y) = a0 + g·(y - x)` for the
    /// directed segment `p → q`.
    ///
    /// For a counter-clockwise triangle `T` and `x ∉ T`, summing over its
    /// three edges gives `∫_T v(y) |x - y|^{-2-α} dy`. For `x` inside `T` the
    /// sum equals `∫_{T \ B_δ(x)} v k - 2π a0 δ^{-α} / α` for every small
    /// `δ`. Boundary edges of a polygon with `a0 = -1`, `g = 0` sum to the
    /// complement weight `∫_{Ω^c} k`.
    pub fn edge_term(&self, x: Point, p: Point, q: Point, a0: f64, g: [f64; 2]) -> f64 {
        let e = [q[0] - p[0], q[1] - p[1]];
        let len = e[0].hypot(e[1]);
        let wp = [p[0] - x[0], p[1] - x[1]];
        let wq = [q[0] - x[0], q[1] - x[1]];
        // normal of the line, oriented from x toward it
        let n0 = [e[1] / len, -e[0] / len];
        let s = wp[0] * n0[0] + wp[1] * n0[1];
        if s.abs() <= 1e-14 * len {
            return 0.0;
        }
        let n = if s > 0.0 { n0 } else { [-n0[0], -n0[1]] };
        let t = [-n[1], n[0]];
        let d = s.abs();
        let rp = wp[0].hypot(wp[1]);
        let rq = wq[0].hypot(wq[1]);
        let psi_p = (wp[0] * t[0] + wp[1] * t[1]).atan2(d);
        let psi_q = (wq[0] * t[0] + wq[1] * t[1]).atan2(d);
        let alpha = self.alpha;
        let gn = g[0] * n[0] + g[1] * n[1];
        let gt = g[0] * t[0] + g[1] * t[1];
        if (alpha - 1.0).abs() < 1e-9 {
            let (sp, sq) = (psi_p.sin(), psi_q.sin());
            let (cp, cq) = (d / rp, d / rq);
            let ln_d = d.ln();
            let a1 = |s: f64, c: f64| s * c.ln() + ((1.0 + s) / c).ln() - s;
            let a2 = |c: f64| -c * c.ln() + c;
            let mut out = -a0 / d * (sq - sp);
            if gn != 0.0 || gt != 0.0 {
                out += gn * (ln_d * (sq - sp) - (a1(sq, cq) - a1(sp, cp)));
                out += gt * (-ln_d * (cq - cp) - (a2(cq) - a2(cp)));
            }
            return out;
        }
        let df = self.cos_int.eval(psi_q) - self.cos_int.eval(psi_p);
        let d_pow = d.powf(-alpha);
        let mut out = -a0 / alpha * d_pow * df;
        if gn != 0.0 || gt != 0.0 {
            let dcos = (d / rq).powf(alpha) - (d / rp).powf(alpha);
            out += d * d_pow / (1.0 - alpha) * (gn * df - gt * dcos / alpha);
        }
        out
    }

    /// `∫_T v(y) |x - y|^{-2-α} dy` for an affine `v` with value `a0` at `x`
    /// (extended) and gradient `g`, with `x` outside the closed triangle.
    pub fn triangle_integral(&self, x: Point, tri: [Point; 3], a0: f64, g: [f64; 2]) -> f64 {
        (0..3).map(|i| self.edge_term(x, tri[i], tri[(i + 1) % 3], a0, g)).sum()
    }
}
