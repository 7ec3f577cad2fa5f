//! Special functions used by the kernel integrals.

use std::f64::consts::FRAC_PI_2;

use crate::quadrature::GaussLegendre;

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Width of the end zone near ±π/2 where a power series replaces the table.
const END_ZONE: f64 = 0.3;
const TABLE_INTERVALS: usize = 1024;

/// Fast evaluation of `F(ψ) = ∫_0^ψ cos^α(t) dt` for `ψ ∈ [-π/2, π/2]`.
///
/// Piecewise cubic Hermite interpolation on `[0, π/2 - 0.3]` with exact
/// derivatives; a series in `π/2 - ψ` covers the zone where `cos^α` loses
/// smoothness.
#[derive(Debug, Clone)]
pub struct CosPowerIntegral {
    alpha: f64,
    half: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    series: [f64; 4],
}

impl CosPowerIntegral {
    pub fn new(alpha: f64) -> Self {
        let split = FRAC_PI_2 - END_ZONE;
        let step = split / TABLE_INTERVALS as f64;
        let gl = GaussLegendre::new(16);
        let mut values = Vec::with_capacity(TABLE_INTERVALS + 1);
        let mut slopes = Vec::with_capacity(TABLE_INTERVALS + 1);
        let mut acc = 0.0;
        values.push(0.0);
        slopes.push(1.0);
        for i in 0..TABLE_INTERVALS {
            let a = i as f64 * step;
            acc += gl.integrate(a, a + step, |t| t.cos().powf(alpha));
            values.push(acc);
            slopes.push(((i + 1) as f64 * step).cos().powf(alpha));
        }
        let half =
            std::f64::consts::PI.sqrt() * gamma(0.5 * (alpha + 1.0)) / (2.0 * gamma(0.5 * alpha + 1.0));
        // (sin s / s)^α = 1 + c2 s² + c4 s⁴ + c6 s⁶ + ...
        let a2 = -alpha / 6.0;
        let a4 = -alpha / 180.0;
        let a6 = -alpha / 2835.0;
        let a8 = -alpha / 37800.0;
        let c2 = a2;
        let c4 = a4 + 0.5 * a2 * a2;
        let c6 = a6 + a2 * a4 + a2 * a2 * a2 / 6.0;
        let c8 = a8 + a2 * a6 + 0.5 * a4 * a4 + 0.5 * a2 * a2 * a4 + a2.powi(4) / 24.0;
        Self {
            alpha,
            half,
            step,
            values,
            slopes,
            series: [c2, c4, c6, c8],
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `F(π/2)`.
    pub fn half(&self) -> f64 {
        self.half
    }

    pub fn eval(&self, psi: f64) -> f64 {
        let s = psi.abs();
        let v = if s >= FRAC_PI_2 - END_ZONE {
            self.half - self.end_series(FRAC_PI_2 - s)
        } else {
            let u = s / self.step;
            let i = (u as usize).min(TABLE_INTERVALS - 1);
            let t = u - i as f64;
            let (y0, y1) = (self.values[i], self.values[i + 1]);
            let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                + (t3 - 2.0 * t2 + t) * m0
                + (-2.0 * t3 + 3.0 * t2) * y1
                + (t3 - t2) * m1
        };
        if psi < 0.0 {
            -v
        } else {
            v
        }
    }

    /// `∫_0^s sin^α`, for small `s ≥ 0`.
    fn end_series(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let a = self.alpha;
        let s2 = s * s;
        let lead = s.powf(a + 1.0);
        let [c2, c4, c6, c8] = self.series;
        lead * (1.0 / (a + 1.0)
            + s2 * (c2 / (a + 3.0) + s2 * (c4 / (a + 5.0) + s2 * (c6 / (a + 7.0) + s2 * c8 / (a + 9.0)))))
    }
}
