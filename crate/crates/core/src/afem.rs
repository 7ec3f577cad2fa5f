//! The adaptive loop: solve, estimate, mark, refine.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_stiffness, assemble_stiffness_serial, QuadratureConfig, SpdOperator};
use crate::estimator::{EstimatorContext, EstimatorField};
use crate::kernel::FracKernelParams;
use crate::mesh::{make_initial_mesh, DomainSpec, TriMesh};
use crate::optimality::{fixed_point_solve, FixedPointOptions, OcpParams, OcpSolution, ProblemData, QuadPoints};
use crate::quadrature::TriangleRule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marking {
    Dorfler,
    /// Two bisections of every element per step.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfemConfig {
    pub theta: f64,
    /// The loop stops before solving on a mesh with more interior vertices.
    pub max_dofs: usize,
    /// Number of refinement steps; `0` solves on the initial mesh only.
    pub max_iters: usize,
    pub marking: Marking,
    pub solver: FixedPointOptions,
    pub quad: QuadratureConfig,
    /// Serial assembly and evaluation for bitwise reproducible output.
    pub deterministic: bool,
}

impl Default for AfemConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            max_dofs: 8_000,
            max_iters: 100,
            marking: Marking::Dorfler,
            solver: FixedPointOptions::default(),
            quad: QuadratureConfig::default(),
            deterministic: false,
        }
    }
}

impl AfemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        self.quad.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRecord {
    pub iteration: usize,
    pub n_dofs: usize,
    pub n_elements: usize,
    pub e_y: f64,
    pub e_p: f64,
    pub e_ocp: f64,
    pub err_y: Option<f64>,
    pub err_p: Option<f64>,
    pub effectivity: Option<f64>,
    pub solver_iterations: usize,
    pub wall_ms: f64,
}

/// Minimal set carrying at least `theta` of the total: greedy in decreasing
/// order, ties to the lower id. `theta = 1` marks every nonzero indicator.
pub fn dorfler_mark(eta_sq: &[f64], theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in (0, 1], got {theta}")));
    }
    if eta_sq.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter("indicators must be finite and nonnegative".into()));
    }
    let total: f64 = eta_sq.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroIndicators);
    }
    let mut order: Vec<usize> = (0..eta_sq.len()).collect();
    order.sort_by(|&a, &b| eta_sq[b].partial_cmp(&eta_sq[a]).unwrap().then(a.cmp(&b)));
    if theta >= 1.0 {
        return Ok(order.into_iter().filter(|&k| eta_sq[k] > 0.0).collect());
    }
    let goal = theta * total;
    let mut sum = 0.0;
    let mut marked = Vec::new();
    for k in order {
        marked.push(k);
        sum += eta_sq[k];
        if sum >= goal {
            break;
        }
    }
    Ok(marked)
}

/// The marked sum reaches `theta` of the total and dropping the smallest
/// marked indicator falls short of it.
pub fn dorfler_certificate(eta_sq: &[f64], theta: f64, marked: &[usize]) -> bool {
    let total: f64 = eta_sq.iter().sum();
    let sum: f64 = marked.iter().map(|&k| eta_sq[k]).sum();
    if sum < theta * total {
        return false;
    }
    let smallest = marked.iter().map(|&k| eta_sq[k]).fold(f64::INFINITY, f64::min);
    theta >= 1.0 || sum - smallest < theta * total
}

/// State handed to the monitor after the estimate of each iteration.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub mesh: &'a TriMesh,
    pub matrix: &'a SpdOperator,
    pub solution: &'a OcpSolution,
    pub estimator: &'a EstimatorField,
    pub load_points: &'a QuadPoints,
}

/// Optional per-iteration hook; may return the energy errors of state and
/// adjoint when an exact solution is known.
pub trait Monitor {
    fn errors(&mut self, _view: &IterationView) -> Option<(f64, f64)> {
        None
    }

    /// Called with the marked set (empty on the last iteration).
    fn marked(&mut self, _view: &IterationView, _marked: &[usize]) {}
}

pub struct NoMonitor;
impl Monitor for NoMonitor {}

#[derive(Debug, Clone)]
pub struct AfemOutput {
    pub records: Vec<ConvergenceRecord>,
    pub mesh: TriMesh,
    pub matrix: SpdOperator,
    pub solution: OcpSolution,
    pub estimator: EstimatorField,
}

pub fn afem_loop(domain: DomainSpec, params: &OcpParams, data: &ProblemData, cfg: &AfemConfig) -> Result<AfemOutput> {
    afem_loop_monitored(make_initial_mesh(domain)?, params, data, cfg, &mut NoMonitor)
}

pub fn afem_loop_monitored(
    initial: TriMesh,
    params: &OcpParams,
    data: &ProblemData,
    cfg: &AfemConfig,
    monitor: &mut dyn Monitor,
) -> Result<AfemOutput> {
    cfg.validate()?;
    params.validate()?;
    let kernel = FracKernelParams::new(2, params.alpha)?;
    let mut mesh = initial;
    let mut records: Vec<ConvergenceRecord> = Vec::new();
    let mut iteration = 0;
    loop {
        let wrap = |e: Error| Error::Afem {
            iteration,
            source: Box::new(e),
        };
        let clock = Instant::now();
        let a = if cfg.deterministic {
            assemble_stiffness_serial(&mesh, &kernel, &cfg.quad)
        } else {
            assemble_stiffness(&mesh, &kernel, &cfg.quad)
        }
        .map_err(wrap)?;
        let t_assembly = clock.elapsed();
        let sol = fixed_point_solve(&mesh, &a, params, data, &cfg.solver).map_err(wrap)?;
        let t_solve = clock.elapsed();
        let qp = QuadPoints::new(&mesh, TriangleRule::with_degree(cfg.solver.load_degree));
        let mut ctx = EstimatorContext::new(&mesh, &qp, &kernel, &cfg.quad).map_err(wrap)?;
        ctx.parallel = !cfg.deterministic;
        let est = ctx.estimate(&sol.y, &sol.p, &sol.u_quad, data).map_err(wrap)?;
        let t_est = clock.elapsed();
        let view = IterationView {
            iteration,
            mesh: &mesh,
            matrix: &a,
            solution: &sol,
            estimator: &est,
            load_points: &qp,
        };
        let errors = monitor.errors(&view);
        let (err_y, err_p) = match errors {
            Some((ey, ep)) => (Some(ey), Some(ep)),
            None => (None, None),
        };
        let effectivity = errors.map(|(ey, ep)| est.e_ocp() / ey.hypot(ep));
        let record = ConvergenceRecord {
            iteration,
            n_dofs: mesh.n_dofs(),
            n_elements: mesh.n_elements(),
            e_y: est.e_y(),
            e_p: est.e_p(),
            e_ocp: est.e_ocp(),
            err_y,
            err_p,
            effectivity,
            solver_iterations: sol.iterations,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        };
        log::info!(
            "iter {iteration}: dofs {} E_ocp {:.4e} (assembly {:.1?}, solve {:.1?}, estimate {:.1?}, {} fixed-point steps)",
            record.n_dofs,
            record.e_ocp,
            t_assembly,
            t_solve - t_assembly,
            t_est - t_solve,
            sol.iterations
        );
        records.push(record);
        if iteration >= cfg.max_iters {
            monitor.marked(&view, &[]);
            return Ok(AfemOutput {
                records,
                mesh,
                matrix: a,
                solution: sol,
                estimator: est,
            });
        }
        let refined = match cfg.marking {
            Marking::Uniform => {
                monitor.marked(&view, &(0..mesh.n_elements()).collect::<Vec<_>>());
                mesh.refine_uniform().mesh
            }
            Marking::Dorfler => {
                let eta = est.per_element();
                let marked = if cfg.theta >= 1.0 {
                    (0..mesh.n_elements()).collect()
                } else {
                    dorfler_mark(&eta, cfg.theta).map_err(wrap)?
                };
                monitor.marked(&view, &marked);
                mesh.bisect_marked(&marked)
            }
        };
        if refined.n_dofs() > cfg.max_dofs {
            return Ok(AfemOutput {
                records,
                mesh,
                matrix: a,
                solution: sol,
                estimator: est,
            });
        }
        mesh = refined;
        iteration += 1;
    }
}
