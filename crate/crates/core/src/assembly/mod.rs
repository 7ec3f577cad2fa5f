//! Dense Galerkin matrix of the nonlocal bilinear form on the P1 space with
//! zero extension outside the domain, and load vectors.
//!
//! The form splits as `(C/2) ∬_{Ω×Ω} … + C ∫_Ω u v ρ` where `ρ` is the
//! complement weight of the polygonal mesh domain. Pairs of elements sharing
//! a vertex use the singular reductions in [`pairs`]; disjoint pairs are
//! integrated row-wise, so each element only writes the rows of its own
//! vertices.

pub mod complement;
pub mod interval;
pub mod pairs;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::FracKernelParams;
use crate::mesh::{signed_area, TriMesh};
use crate::quadrature::TriangleRule;
use crate::{Error, Point, Result};

pub use complement::{complement_weight, complement_weight_mesh, BoundaryPolygon};
pub use pairs::{pair_integral, PairBlock, Relationship};

/// Quadrature settings for the stiffness matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Point count of the triangle rule used for mid-range disjoint pairs
    /// (1, 3, 7, or a collapsed rule with at least that many points).
    pub far_order: usize,
    /// Gauss points per direction in the touching-pair reductions.
    pub duffy_order: usize,
    /// Subdivision depth for nearly touching disjoint pairs.
    pub grading_levels: usize,
    /// Geometric grading levels toward the boundary in the complement term.
    pub rho_grading: usize,
    /// Pairs whose gap exceeds this multiple of the larger diameter use the
    /// three-point rule.
    pub far_ratio: f64,
    /// Pairs whose gap is below this multiple of the larger diameter are
    /// subdivided.
    pub near_ratio: f64,
    /// Pointwise evaluation: elements closer than this multiple of their
    /// diameter are integrated in closed form.
    pub eval_near_ratio: f64,
    /// Pointwise evaluation: elements farther than this multiple of their
    /// diameter use the three-point rule.
    pub eval_far_ratio: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            far_order: 7,
            duffy_order: 8,
            grading_levels: 3,
            rho_grading: 4,
            far_ratio: 4.0,
            near_ratio: 1.0,
            eval_near_ratio: 2.0,
            eval_far_ratio: 8.0,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.far_order == 0 || self.duffy_order == 0 || self.grading_levels == 0 || self.rho_grading == 0 {
            return Err(Error::InvalidParameter("quadrature orders must be at least 1".into()));
        }
        if !(self.near_ratio >= 0.0 && self.far_ratio >= self.near_ratio) {
            return Err(Error::InvalidParameter("need 0 <= near_ratio <= far_ratio".into()));
        }
        if !(self.eval_near_ratio >= 0.0 && self.eval_far_ratio >= self.eval_near_ratio) {
            return Err(Error::InvalidParameter("need 0 <= eval_near_ratio <= eval_far_ratio".into()));
        }
        Ok(())
    }

    /// Every order doubled, used by self-convergence checks.
    pub fn doubled(&self) -> Self {
        Self {
            far_order: 2 * self.far_order,
            duffy_order: 2 * self.duffy_order,
            grading_levels: 2 * self.grading_levels,
            rho_grading: 2 * self.rho_grading,
            far_ratio: 2.0 * self.far_ratio,
            near_ratio: 2.0 * self.near_ratio,
            eval_near_ratio: 2.0 * self.eval_near_ratio,
            eval_far_ratio: 2.0 * self.eval_far_ratio,
        }
    }

    pub(crate) fn mid_rule(&self) -> TriangleRule {
        rule_with_points(self.far_order)
    }
}

/// Smallest built-in triangle rule with at least `n` points.
pub fn rule_with_points(n: usize) -> TriangleRule {
    match n {
        0 | 1 => TriangleRule::centroid(),
        2 | 3 => TriangleRule::three_point(),
        4..=7 => TriangleRule::seven_point(),
        _ => TriangleRule::collapsed((n as f64).sqrt().ceil() as usize),
    }
}

/// Dense symmetric positive definite matrix over the interior vertices.
#[derive(Debug, Clone)]
pub struct SpdOperator {
    pub n: usize,
    pub entries: Mat<f64>,
}

impl SpdOperator {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.read(i, j)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let col = self.entries.col_as_slice(j);
            for (yi, &a) in y.iter_mut().zip(col) {
                *yi += a * xj;
            }
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `max |A_ij - A_ji| / max |A_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let mut max_abs: f64 = 0.0;
        let mut max_diff: f64 = 0.0;
        for j in 0..self.n {
            for i in 0..self.n {
                let a = self.entries.read(i, j);
                max_abs = max_abs.max(a.abs());
                max_diff = max_diff.max((a - self.entries.read(j, i)).abs());
            }
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    /// Row-major little-endian dump preceded by `n` as `u64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.n * self.n);
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        for i in 0..self.n {
            for j in 0..self.n {
                out.extend_from_slice(&self.entries.read(i, j).to_le_bytes());
            }
        }
        out
    }
}

/// Per-element geometry shared by the assembly and evaluation routines.
#[derive(Debug, Clone, Copy)]
pub struct ElemGeom {
    pub p: [Point; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grads: [[f64; 2]; 3],
    pub centroid: Point,
    /// Largest centroid-to-vertex distance.
    pub radius: f64,
    pub diam: f64,
}

impl ElemGeom {
    pub fn new(p: [Point; 3]) -> Self {
        let area = signed_area(p[0], p[1], p[2]);
        let mut grads = [[0.0; 2]; 3];
        for i in 0..3 {
            let a = p[(i + 1) % 3];
            let b = p[(i + 2) % 3];
            grads[i] = [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)];
        }
        let centroid = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let d = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
        let radius = d(centroid, p[0]).max(d(centroid, p[1])).max(d(centroid, p[2]));
        let diam = d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]));
        Self {
            p,
            area: area.abs(),
            grads,
            centroid,
            radius,
            diam,
        }
    }

    pub fn of(mesh: &TriMesh, k: usize) -> Self {
        Self::new(mesh.element_points(k))
    }

    #[inline]
    pub fn map(&self, b: [f64; 3]) -> Point {
        [
            b[0] * self.p[0][0] + b[1] * self.p[1][0] + b[2] * self.p[2][0],
            b[0] * self.p[0][1] + b[1] * self.p[1][1] + b[2] * self.p[2][1],
        ]
    }

    /// Barycentric coordinates of any point (affine extension).
    #[inline]
    pub fn bary(&self, x: Point) -> [f64; 3] {
        let dx = x[0] - self.centroid[0];
        let dy = x[1] - self.centroid[1];
        let l0 = 1.0 / 3.0 + self.grads[0][0] * dx + self.grads[0][1] * dy;
        let l1 = 1.0 / 3.0 + self.grads[1][0] * dx + self.grads[1][1] * dy;
        [l0, l1, 1.0 - l0 - l1]
    }
}

pub(crate) fn geometries(mesh: &TriMesh) -> Vec<ElemGeom> {
    (0..mesh.n_elements()).map(|k| ElemGeom::of(mesh, k)).collect()
}

/// `b_i = ∫_Ω g φ_i` with a per-element rule exact to `degree`.
pub fn assemble_load(mesh: &TriMesh, g: impl Fn(Point) -> f64, degree: usize) -> Result<Vec<f64>> {
    let rule = TriangleRule::with_degree(degree);
    let mut b = vec![0.0; mesh.n_dofs()];
    for k in 0..mesh.n_elements() {
        let geom = ElemGeom::of(mesh, k);
        let dofs = mesh.element_dofs(k);
        if dofs.iter().all(Option::is_none) {
            continue;
        }
        for (bc, w) in rule.bary.iter().zip(&rule.weights) {
            let x = geom.map(*bc);
            let v = g(x);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(x[0], x[1]));
            }
            for a in 0..3 {
                if let Some(i) = dofs[a] {
                    b[i] += w * geom.area * v * bc[a];
                }
            }
        }
    }
    Ok(b)
}

/// Load vector from values of the integrand sampled at the points of `rule`
/// on every element (`values[k * rule.len() + q]`).
pub fn assemble_load_from_samples(mesh: &TriMesh, rule: &TriangleRule, values: &[f64]) -> Result<Vec<f64>> {
    let nq = rule.len();
    if values.len() != nq * mesh.n_elements() {
        return Err(Error::LengthMismatch(values.len(), nq * mesh.n_elements()));
    }
    let mut b = vec![0.0; mesh.n_dofs()];
    for k in 0..mesh.n_elements() {
        let dofs = mesh.element_dofs(k);
        let area = mesh.area(k);
        for (q, (bc, w)) in rule.bary.iter().zip(&rule.weights).enumerate() {
            let v = values[k * nq + q];
            if !v.is_finite() {
                let x = ElemGeom::of(mesh, k).map(*bc);
                return Err(Error::NonFiniteValue(x[0], x[1]));
            }
            for a in 0..3 {
                if let Some(i) = dofs[a] {
                    b[i] += w * area * v * bc[a];
                }
            }
        }
    }
    Ok(b)
}

/// Elements sharing at least one vertex with each element (excluding itself).
pub(crate) fn touching_elements(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let v2e = mesh.vertex_to_elements();
    (0..mesh.n_elements())
        .map(|k| {
            let mut out: Vec<usize> = mesh.elements[k]
                .vertices
                .iter()
                .flat_map(|&v| v2e[v].iter().copied())
                .filter(|&e| e != k)
                .collect();
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect()
}

struct FarPoints {
    /// Three-point rule points per element.
    pts: Vec<[Point; 3]>,
    /// Weight times area per point of the three-point rule.
    w: Vec<f64>,
}

/// Assembles `A_ij = a(φ_i, φ_j)` over the interior vertices.
pub fn assemble_stiffness(mesh: &TriMesh, params: &FracKernelParams, quad: &QuadratureConfig) -> Result<SpdOperator> {
    assemble_stiffness_with(mesh, params, quad, true)
}

/// Serial variant used to check that the parallel reduction is reproducible.
pub fn assemble_stiffness_serial(
    mesh: &TriMesh,
    params: &FracKernelParams,
    quad: &QuadratureConfig,
) -> Result<SpdOperator> {
    assemble_stiffness_with(mesh, params, quad, false)
}

fn assemble_stiffness_with(
    mesh: &TriMesh,
    params: &FracKernelParams,
    quad: &QuadratureConfig,
    parallel: bool,
) -> Result<SpdOperator> {
    quad.validate()?;
    if params.d != 2 {
        return Err(Error::InvalidParameter("two-dimensional assembly needs d = 2".into()));
    }
    let n = mesh.n_dofs();
    let n_el = mesh.n_elements();
    let geoms = geometries(mesh);
    let dofs: Vec<[Option<usize>; 3]> = (0..n_el).map(|k| mesh.element_dofs(k)).collect();
    let touching = touching_elements(mesh);
    let three = TriangleRule::three_point();
    let far = FarPoints {
        pts: geoms
            .iter()
            .map(|g| [g.map(three.bary[0]), g.map(three.bary[1]), g.map(three.bary[2])])
            .collect(),
        w: geoms.iter().map(|g| g.area / 3.0).collect(),
    };
    let mid_rule = quad.mid_rule();
    let c = params.c_norm;
    let mut a = Mat::<f64>::zeros(n, n);
    let clock = std::time::Instant::now();

    // disjoint pairs, row-wise per element
    let active: Vec<usize> = (0..n_el).filter(|&k| dofs[k].iter().any(Option::is_some)).collect();
    let ctx = DisjointCtx {
        geoms: &geoms,
        dofs: &dofs,
        touching: &touching,
        far: &far,
        mid_rule: &mid_rule,
        params,
        quad,
        n,
    };
    const BATCH: usize = 16;
    for batch in active.chunks(BATCH) {
        let rows: Vec<Result<RowBlock>> = if parallel {
            batch.par_iter().map(|&k| ctx.rows_of(k)).collect()
        } else {
            batch.iter().map(|&k| ctx.rows_of(k)).collect()
        };
        for rb in rows {
            let rb = rb?;
            for (slot, dof) in rb.dofs.iter().enumerate() {
                if let Some(i) = *dof {
                    let col = a.col_as_slice_mut(i);
                    for (dst, src) in col.iter_mut().zip(&rb.rows[slot * n..(slot + 1) * n]) {
                        *dst += c * src;
                    }
                }
            }
        }
    }

    log::debug!("disjoint pairs: {:?}", clock.elapsed());

    // touching pairs and the element itself
    let touching_blocks = |k: usize| -> Result<Vec<(Vec<Option<usize>>, Vec<f64>)>> {
        let mut out = Vec::new();
        for &kp in std::iter::once(&k).chain(touching[k].iter().filter(|&&kp| kp > k)) {
            if dofs[k].iter().all(Option::is_none) && dofs[kp].iter().all(Option::is_none) {
                continue;
            }
            let block = pairs::pair_integral_mesh(mesh, &geoms, k, kp, params, quad);
            if block.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteQuadrature(k, kp));
            }
            let scale = if kp == k { 0.5 * c } else { c };
            let ids = block.vertices.iter().map(|&v| mesh.dof_of_vertex(v)).collect();
            out.push((ids, block.values.iter().map(|v| v * scale).collect()));
        }
        Ok(out)
    };
    let blocks: Vec<Result<Vec<_>>> = if parallel {
        (0..n_el).into_par_iter().map(touching_blocks).collect()
    } else {
        (0..n_el).map(touching_blocks).collect()
    };
    for list in blocks {
        for (ids, vals) in list? {
            let m = ids.len();
            for (r, ir) in ids.iter().enumerate() {
                let Some(i) = *ir else { continue };
                for (s, is) in ids.iter().enumerate() {
                    if let Some(j) = *is {
                        a[(i, j)] += vals[r * m + s];
                    }
                }
            }
        }
    }

    log::debug!("touching pairs: {:?}", clock.elapsed());

    // complement weight term
    let poly = BoundaryPolygon::from_mesh(mesh);
    let rho_block = |k: usize| -> Result<[[f64; 3]; 3]> {
        if dofs[k].iter().all(Option::is_none) {
            return Ok([[0.0; 3]; 3]);
        }
        let m = complement::rho_element_block(&poly, &geoms[k], params, quad);
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteQuadrature(k, k));
        }
        Ok(m)
    };
    let rho_blocks: Vec<Result<[[f64; 3]; 3]>> = if parallel {
        (0..n_el).into_par_iter().map(rho_block).collect()
    } else {
        (0..n_el).map(rho_block).collect()
    };
    for (k, m) in rho_blocks.into_iter().enumerate() {
        let m = m?;
        for r in 0..3 {
            let Some(i) = dofs[k][r] else { continue };
            for s in 0..3 {
                if let Some(j) = dofs[k][s] {
                    a[(i, j)] += c * m[r][s];
                }
            }
        }
    }

    log::debug!("complement term: {:?}", clock.elapsed());

    // the row-wise pass is symmetric only up to rounding
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (a.read(i, j) + a.read(j, i));
            a.write(i, j, v);
            a.write(j, i, v);
        }
    }
    Ok(SpdOperator { n, entries: a })
}

struct DisjointCtx<'a> {
    geoms: &'a [ElemGeom],
    dofs: &'a [[Option<usize>; 3]],
    touching: &'a [Vec<usize>],
    far: &'a FarPoints,
    mid_rule: &'a TriangleRule,
    params: &'a FracKernelParams,
    quad: &'a QuadratureConfig,
    n: usize,
}

struct RowBlock {
    dofs: [Option<usize>; 3],
    /// Three rows of length `n` (one per local vertex), without the factor C.
    rows: Vec<f64>,
}

const THIRD_POINT_BARY: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

impl DisjointCtx<'_> {
    /// Contributions `∬_{K×K'} [φ_i φ_j(x) - φ_i(x) φ_j(y)] k` of all
    /// disjoint `K'` to the rows of the vertices of `K`.
    fn rows_of(&self, k: usize) -> Result<RowBlock> {
        let n = self.n;
        let g = &self.geoms[k];
        let kdofs = self.dofs[k];
        let mut rows = vec![0.0; 3 * n];
        let xs = self.far.pts[k];
        let wx = self.far.w[k];
        let mut s3 = [0.0f64; 3];
        let mid_pts: Vec<Point> = self.mid_rule.bary.iter().map(|b| g.map(*b)).collect();
        let mut s_mid = vec![0.0f64; mid_pts.len()];
        let mut near_diag = [[0.0f64; 3]; 3];
        let params = self.params;
        let far_ratio = self.quad.far_ratio;
        let near_ratio = self.quad.near_ratio;
        let is_touching = |kp: usize| kp == k || self.touching[k].binary_search(&kp).is_ok();
        let mut mid_y: Vec<Point> = vec![[0.0; 2]; mid_pts.len()];
        for (kp, gp) in self.geoms.iter().enumerate() {
            let dc = ((g.centroid[0] - gp.centroid[0]).powi(2) + (g.centroid[1] - gp.centroid[1]).powi(2)).sqrt();
            let gap = dc - g.radius - gp.radius;
            let scale = g.diam.max(gp.diam);
            let pdofs = self.dofs[kp];
            let has_dofs = pdofs.iter().any(Option::is_some);
            if gap >= far_ratio * scale {
                let ys = &self.far.pts[kp];
                let wy = self.far.w[kp];
                let mut kq = [[0.0f64; 3]; 3];
                for q in 0..3 {
                    for r in 0..3 {
                        kq[q][r] = params.kernel(xs[q], ys[r]);
                    }
                    s3[q] += wy * (kq[q][0] + kq[q][1] + kq[q][2]);
                }
                if has_dofs {
                    // t[q][b] = Σ_r w_r λ_b(y_r) k(x_q, y_r)
                    let mut t = [[0.0f64; 3]; 3];
                    for q in 0..3 {
                        let ks = (kq[q][0] + kq[q][1] + kq[q][2]) / 6.0;
                        for b in 0..3 {
                            t[q][b] = wy * (0.5 * kq[q][b] + ks);
                        }
                    }
                    for (ai, adof) in kdofs.iter().enumerate() {
                        if adof.is_none() {
                            continue;
                        }
                        let row = &mut rows[ai * n..(ai + 1) * n];
                        for b in 0..3 {
                            if let Some(j) = pdofs[b] {
                                let x: f64 = (0..3).map(|q| THIRD_POINT_BARY[q][ai] * t[q][b]).sum();
                                row[j] -= wx * x;
                            }
                        }
                    }
                }
            } else if gap >= near_ratio * scale {
                for (yq, b) in mid_y.iter_mut().zip(&self.mid_rule.bary) {
                    *yq = gp.map(*b);
                }
                let mut cross = [[0.0f64; 3]; 3];
                for (q, x) in mid_pts.iter().enumerate() {
                    let wq = self.mid_rule.weights[q] * g.area;
                    let lx = &self.mid_rule.bary[q];
                    let mut sum = 0.0;
                    let mut t = [0.0f64; 3];
                    for (r, y) in mid_y.iter().enumerate() {
                        let kv = self.mid_rule.weights[r] * gp.area * params.kernel(*x, *y);
                        sum += kv;
                        let ly = &self.mid_rule.bary[r];
                        t[0] += kv * ly[0];
                        t[1] += kv * ly[1];
                        t[2] += kv * ly[2];
                    }
                    s_mid[q] += sum;
                    if has_dofs {
                        for a in 0..3 {
                            for b in 0..3 {
                                cross[a][b] += wq * lx[a] * t[b];
                            }
                        }
                    }
                }
                if has_dofs {
                    scatter_cross(&mut rows, n, kdofs, pdofs, &cross);
                }
            } else if !is_touching(kp) {
                let mut diag = [[0.0f64; 3]; 3];
                let mut cross = [[0.0f64; 3]; 3];
                pairs::NearPair {
                    g,
                    gp,
                    rule: self.mid_rule,
                    params,
                    near_ratio,
                    max_depth: 2 * self.quad.grading_levels,
                }
                .accumulate(g.p, gp.p, 0, &mut diag, &mut cross);
                if !diag.iter().flatten().chain(cross.iter().flatten()).all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteQuadrature(k, kp));
                }
                for a in 0..3 {
                    for b in 0..3 {
                        near_diag[a][b] += diag[a][b];
                    }
                }
                if has_dofs {
                    scatter_cross(&mut rows, n, kdofs, pdofs, &cross);
                }
            }
        }
        // φ_a φ_b (x) terms
        let mut diag = near_diag;
        for q in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    diag[a][b] += wx * THIRD_POINT_BARY[q][a] * THIRD_POINT_BARY[q][b] * s3[q];
                }
            }
        }
        for (q, lx) in self.mid_rule.bary.iter().enumerate() {
            let wq = self.mid_rule.weights[q] * g.area * s_mid[q];
            for a in 0..3 {
                for b in 0..3 {
                    diag[a][b] += wq * lx[a] * lx[b];
                }
            }
        }
        if !diag.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteQuadrature(k, k));
        }
        for a in 0..3 {
            if kdofs[a].is_none() {
                continue;
            }
            for b in 0..3 {
                if let Some(j) = kdofs[b] {
                    rows[a * n + j] += diag[a][b];
                }
            }
        }
        Ok(RowBlock { dofs: kdofs, rows })
    }
}

fn scatter_cross(rows: &mut [f64], n: usize, kdofs: [Option<usize>; 3], pdofs: [Option<usize>; 3], cross: &[[f64; 3]; 3]) {
    for a in 0..3 {
        if kdofs[a].is_none() {
            continue;
        }
        for b in 0..3 {
            if let Some(j) = pdofs[b] {
                rows[a * n + j] -= cross[a][b];
            }
        }
    }
}
