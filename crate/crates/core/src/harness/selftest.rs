//! Quick consistency checks run by `fracocp selftest`.

use crate::afem::{dorfler_certificate, dorfler_mark};
use crate::assembly::{assemble_stiffness, complement_weight, QuadratureConfig};
use crate::frac_eval::{FracEvaluator, P1Field};
use crate::kernel::FracKernelParams;
use crate::mesh::{make_initial_mesh, DomainSpec};
use crate::optimality::{fixed_point_solve, FixedPointOptions, OcpParams};
use crate::quadrature::TriangleRule;
use crate::Result;

use super::{energy_error_state, Example1};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

pub fn run_selftest() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let disk = DomainSpec::UnitDisk { n_boundary: 16 };

    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0, 1.5] {
        let params = FracKernelParams::new(2, alpha)?;
        let rho = complement_weight(disk, [0.0, 0.0], &params)?;
        let want = 2.0 * std::f64::consts::PI / alpha;
        worst = worst.max((rho - want).abs() / want);
    }
    out.push(Check {
        name: "complement weight at the origin",
        value: worst,
        tolerance: 1e-6,
    });

    let mesh = make_initial_mesh(disk)?.refine_uniform().mesh;
    let params = FracKernelParams::new(2, 1.5)?;
    let coeffs: Vec<f64> = mesh
        .dof_vertices()
        .iter()
        .map(|&v| {
            let x = mesh.point(v);
            1.0 - x[0] * x[0] - x[1] * x[1] + 0.3 * x[0]
        })
        .collect();
    let field = P1Field::new(&mesh, coeffs)?;
    let tiered = FracEvaluator::new(&mesh, &params, &QuadratureConfig::default())?;
    let exact = FracEvaluator::exact(&mesh, &params);
    let rule = TriangleRule::with_degree(5);
    let a = tiered.eval_at_rule(&tiered.prepare(&field)?, &rule, false)?;
    let b = exact.eval_at_rule(&exact.prepare(&field)?, &rule, false)?;
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    out.push(Check {
        name: "tiered vs closed-form evaluation",
        value: diff / scale,
        tolerance: 1e-4,
    });

    let ocp = OcpParams {
        alpha: 1.0,
        gamma: 1.0,
        beta: 1.0,
        a_lo: -0.5,
        b_hi: 0.5,
    };
    let ex = Example1::new(ocp, 3.0)?;
    let kp = FracKernelParams::new(2, ocp.alpha)?;
    let a = assemble_stiffness(&mesh, &kp, &QuadratureConfig::default())?;
    let sol = fixed_point_solve(&mesh, &a, &ocp, &ex.data(), &FixedPointOptions::default())?;
    out.push(Check {
        name: "state Galerkin residual",
        value: sol.state_residual,
        tolerance: 1e-10,
    });
    out.push(Check {
        name: "fixed-point control residual",
        value: sol.fixed_point_residual,
        tolerance: 1e-8,
    });
    let err = energy_error_state(&mesh, &a, &sol.y, ocp.alpha)?;
    out.push(Check {
        name: "relative state energy error",
        value: err / ex.state_energy().sqrt(),
        tolerance: 0.5,
    });

    let eta: Vec<f64> = (0..50).map(|i| ((i * 37 % 11) as f64 + 0.5).powi(2)).collect();
    let marked = dorfler_mark(&eta, 0.5)?;
    out.push(Check {
        name: "Dorfler certificate",
        value: if dorfler_certificate(&eta, 0.5, &marked) { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });

    let refined = mesh.bisect_marked(&[0, 3]);
    out.push(Check {
        name: "conformity after bisection",
        value: if refined.check_conformity().is_ok() { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });
    Ok(out)
}
