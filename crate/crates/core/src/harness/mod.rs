//! Benchmark problems, exact-solution error identities, rate fits and the
//! experiment driver behind the CLI.

pub mod config;
pub mod selftest;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::afem::{afem_loop_monitored, ConvergenceRecord, IterationView, Monitor};
use crate::assembly::SpdOperator;
use crate::mesh::{make_initial_mesh, TriMesh};
use crate::optimality::{control_of_p, subgradient_of_p, OcpParams, ProblemData};
use crate::special::gamma;
use crate::{Error, Point, Result};

pub use config::{ExampleId, ExperimentConfig};

/// `2^{-α} / Γ(1 + α/2)²`, the value at the origin of the state of the disk
/// benchmark.
pub fn getoor_scale(alpha: f64) -> f64 {
    2f64.powf(-alpha) / gamma(1.0 + 0.5 * alpha).powi(2)
}

/// The function on the unit disk whose fractional Laplacian is identically 1.
pub fn exact_getoor(alpha: f64, x: Point) -> Result<f64> {
    let r2 = x[0] * x[0] + x[1] * x[1];
    if r2 > 1.0 + 1e-12 {
        return Err(Error::OutsideDomain(x[0], x[1]));
    }
    Ok(getoor_scale(alpha) * (1.0 - r2).max(0.0).powf(0.5 * alpha))
}

/// Disk benchmark with known state `y`, adjoint `p = c y`, subgradient and
/// control by projection.
#[derive(Debug, Clone, Copy)]
pub struct Example1 {
    pub params: OcpParams,
    pub c_adjoint: f64,
}

impl Example1 {
    pub fn new(params: OcpParams, c_adjoint: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, c_adjoint })
    }

    pub fn state(&self, x: Point) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        getoor_scale(self.params.alpha) * (1.0 - r2).max(0.0).powf(0.5 * self.params.alpha)
    }

    pub fn adjoint(&self, x: Point) -> f64 {
        self.c_adjoint * self.state(x)
    }

    pub fn subgradient(&self, x: Point) -> f64 {
        subgradient_of_p(self.adjoint(x), self.params.beta)
    }

    pub fn control(&self, x: Point) -> f64 {
        control_of_p(self.adjoint(x), &self.params)
    }

    /// `f = 1 - u` and `y_d = y - c`, so that the state and adjoint
    /// equations hold with constant fractional Laplacians `1` and `c`.
    pub fn data(&self) -> ProblemData {
        let me = *self;
        let me2 = *self;
        ProblemData::new(move |x| 1.0 - me.control(x), move |x| me2.state(x) - me2.c_adjoint)
    }

    /// `a(y, y) = ∫ y`.
    pub fn state_energy(&self) -> f64 {
        getoor_scale(self.params.alpha) * 2.0 * std::f64::consts::PI / (self.params.alpha + 2.0)
    }

    /// `a(p, p) = c² a(y, y)`.
    pub fn adjoint_energy(&self) -> f64 {
        self.c_adjoint * self.c_adjoint * self.state_energy()
    }
}

/// Exact integral of a P1 function over the mesh.
pub fn p1_integral(mesh: &TriMesh, coeffs: &[f64]) -> f64 {
    (0..mesh.n_elements())
        .map(|k| {
            let s: f64 = mesh.element_dofs(k).iter().map(|d| d.map_or(0.0, |i| coeffs[i])).sum();
            mesh.area(k) * s / 3.0
        })
        .sum()
}

/// `‖y - y_h‖_a` from `a(y, y) - 2 a(y, y_h) + a(y_h, y_h)` with
/// `a(y, v) = ∫ v` because the exact state has unit fractional Laplacian.
pub fn energy_error_state(mesh: &TriMesh, a: &SpdOperator, y_h: &[f64], alpha: f64) -> Result<f64> {
    if !mesh.domain.is_disk() {
        return Err(Error::InvalidDomain("the exact state is only known on the disk".into()));
    }
    let i_y = getoor_scale(alpha) * 2.0 * std::f64::consts::PI / (alpha + 2.0);
    Ok(energy_error(i_y, 1.0, mesh, a, y_h))
}

/// As [`energy_error_state`] for the adjoint `p = c y` with `a(p, v) = c ∫ v`.
pub fn energy_error_adjoint(mesh: &TriMesh, a: &SpdOperator, p_h: &[f64], alpha: f64, c_adjoint: f64) -> Result<f64> {
    if !mesh.domain.is_disk() {
        return Err(Error::InvalidDomain("the exact adjoint is only known on the disk".into()));
    }
    let i_p = c_adjoint * c_adjoint * getoor_scale(alpha) * 2.0 * std::f64::consts::PI / (alpha + 2.0);
    Ok(energy_error(i_p, c_adjoint, mesh, a, p_h))
}

fn energy_error(exact_energy: f64, lap: f64, mesh: &TriMesh, a: &SpdOperator, v: &[f64]) -> f64 {
    let e2 = exact_energy - 2.0 * lap * p1_integral(mesh, v) + a.quadratic_form(v);
    e2.max(0.0).sqrt()
}

/// Square benchmark with constant data.
pub fn example2_data() -> ProblemData {
    ProblemData::new(|_| -6.0, |_| 1.0)
}

/// Square benchmark with oscillating data.
pub fn example3_data() -> ProblemData {
    ProblemData::new(
        |x| 6.0 * (4.0 * x[1]).sin() * (4.0 * x[0]).cos() * x[0].exp(),
        |x| -4.0 * (4.0 * x[1]).sin() * (4.0 * x[0]).cos() * x[0].exp(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Field {
    EOcp,
    Ey,
    Ep,
    ErrY,
    ErrP,
}

impl Field {
    pub fn of(&self, r: &ConvergenceRecord) -> Option<f64> {
        match self {
            Field::EOcp => Some(r.e_ocp),
            Field::Ey => Some(r.e_y),
            Field::Ep => Some(r.e_p),
            Field::ErrY => r.err_y,
            Field::ErrP => r.err_p,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// First and one-past-last record index.
    pub window: (usize, usize),
    pub r_squared: f64,
}

/// Least-squares slope of `log(field)` against `log(n_dofs)` over the last
/// `window` records.
pub fn slope_fit(records: &[ConvergenceRecord], field: Field, window: usize) -> Result<RateFit> {
    if window < 2 {
        return Err(Error::InsufficientData("window must hold at least two records".into()));
    }
    if records.len() < window {
        return Err(Error::InsufficientData(format!(
            "{} records, window {window}",
            records.len()
        )));
    }
    let start = records.len() - window;
    let mut pts = Vec::with_capacity(window);
    for r in &records[start..] {
        let v = field
            .of(r)
            .ok_or_else(|| Error::InsufficientData(format!("{field:?} missing in iteration {}", r.iteration)))?;
        if !(v > 0.0) || r.n_dofs == 0 {
            return Err(Error::InsufficientData(format!("nonpositive {field:?} in iteration {}", r.iteration)));
        }
        pts.push(((r.n_dofs as f64).ln(), v.ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all records have the same dof count".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        window: (start, records.len()),
        r_squared,
    })
}

/// Fills in the energy errors of the disk benchmark.
pub struct Example1Monitor {
    pub example: Example1,
}

impl Monitor for Example1Monitor {
    fn errors(&mut self, view: &IterationView) -> Option<(f64, f64)> {
        let alpha = self.example.params.alpha;
        let ey = energy_error_state(view.mesh, view.matrix, &view.solution.y, alpha).ok()?;
        let ep = energy_error_adjoint(view.mesh, view.matrix, &view.solution.p, alpha, self.example.c_adjoint).ok()?;
        Some((ey, ep))
    }
}

/// Writes one snapshot of the mesh per iteration when enabled.
struct Snapshots<'a> {
    inner: &'a mut dyn Monitor,
    dir: Option<&'a Path>,
    error: Option<std::io::Error>,
}

impl Monitor for Snapshots<'_> {
    fn errors(&mut self, view: &IterationView) -> Option<(f64, f64)> {
        if let Some(dir) = self.dir {
            let path = dir.join(format!("mesh_{:03}.json", view.iteration));
            if let Err(e) = fs::write(path, view.mesh.to_json().to_string()) {
                self.error.get_or_insert(e);
            }
        }
        self.inner.errors(view)
    }

    fn marked(&mut self, view: &IterationView, marked: &[usize]) {
        self.inner.marked(view, marked)
    }
}

pub const CSV_HEADER: &str = "iter,n_dofs,E_y,E_p,E_ocp,err_y,err_p,effectivity,solver_iters,wall_ms";

/// History rows in the fixed column order; missing values are empty.
pub fn history_csv(records: &[ConvergenceRecord], include_time: bool) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let wall = if include_time { format!("{:.3}", r.wall_ms) } else { "0".into() };
        out.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e},{},{},{},{},{}\n",
            r.iteration,
            r.n_dofs,
            r.e_y,
            r.e_p,
            r.e_ocp,
            opt(r.err_y),
            opt(r.err_p),
            opt(r.effectivity),
            r.solver_iterations,
            wall
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub example: u8,
    pub alpha: f64,
    pub theta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub iterations: usize,
    pub final_dofs: usize,
    pub final_e_ocp: f64,
    pub zero_fraction: f64,
    pub slopes: Vec<(String, Option<RateFit>)>,
}

#[derive(Serialize)]
struct SolutionJson<'a> {
    y: &'a [f64],
    p: &'a [f64],
    quad_points: &'a [Point],
    u: Vec<f64>,
    lambda: Vec<f64>,
}

/// Result of [`run_experiment`] kept in memory for callers such as `sweep`.
pub struct ExperimentResult {
    pub records: Vec<ConvergenceRecord>,
    pub summary: Summary,
}

/// Runs one experiment and writes `history.csv`, `mesh.json`,
/// `solution.json` and `summary.json` to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let params = cfg.ocp_params();
    let afem_cfg = cfg.afem_config();
    let mesh0 = make_initial_mesh(cfg.domain())?;
    let (data, mut base): (ProblemData, Box<dyn Monitor>) = match cfg.example {
        ExampleId::One => {
            let ex = Example1::new(params, cfg.c_adjoint)?;
            (ex.data(), Box::new(Example1Monitor { example: ex }))
        }
        ExampleId::Two => (example2_data(), Box::new(crate::afem::NoMonitor)),
        ExampleId::Three => (example3_data(), Box::new(crate::afem::NoMonitor)),
    };
    let out_dir = Path::new(&cfg.output_dir);
    fs::create_dir_all(out_dir)?;
    let mut monitor = Snapshots {
        inner: base.as_mut(),
        dir: if cfg.snapshots { Some(out_dir) } else { None },
        error: None,
    };
    let out = afem_loop_monitored(mesh0, &params, &data, &afem_cfg, &mut monitor)?;
    if let Some(e) = monitor.error {
        return Err(e.into());
    }
    fs::File::create(out_dir.join("history.csv"))?.write_all(history_csv(&out.records, !cfg.deterministic).as_bytes())?;
    fs::write(out_dir.join("mesh.json"), serde_json::to_string(&out.mesh.to_json())?)?;
    let qp = crate::optimality::QuadPoints::new(
        &out.mesh,
        crate::quadrature::TriangleRule::with_degree(afem_cfg.solver.load_degree),
    );
    let sol = SolutionJson {
        y: &out.solution.y,
        p: &out.solution.p,
        quad_points: &qp.points,
        u: out.solution.control(&qp, &params),
        lambda: out.solution.subgradient(&qp, &params),
    };
    fs::write(out_dir.join("solution.json"), serde_json::to_string(&sol)?)?;
    let window = cfg.rate_window.min(out.records.len());
    let mut slopes = Vec::new();
    for (name, field) in [
        ("E_ocp", Field::EOcp),
        ("E_y", Field::Ey),
        ("E_p", Field::Ep),
        ("err_y", Field::ErrY),
        ("err_p", Field::ErrP),
    ] {
        slopes.push((name.to_string(), slope_fit(&out.records, field, window).ok()));
    }
    let last = out.records.last().expect("at least one record");
    let summary = Summary {
        example: cfg.example as u8,
        alpha: params.alpha,
        theta: cfg.theta,
        gamma: params.gamma,
        beta: params.beta,
        iterations: out.records.len(),
        final_dofs: last.n_dofs,
        final_e_ocp: last.e_ocp,
        zero_fraction: out.solution.zero_fraction(&qp, &params),
        slopes,
    };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(ExperimentResult {
        records: out.records,
        summary,
    })
}
