//! One-dimensional counterpart on `(-1, 1)`, used to validate the kernel
//! constant and the split into an interaction and a complement term against
//! closed-form solutions.

use faer::Mat;

use super::SpdOperator;
use crate::kernel::FracKernelParams;
use crate::quadrature::{integrate_adaptive, GaussLegendre};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct IntervalMesh {
    /// Strictly increasing nodes from -1 to 1.
    pub nodes: Vec<f64>,
}

impl IntervalMesh {
    pub fn uniform(n: usize) -> Self {
        Self {
            nodes: (0..=n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect(),
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes.len() - 2
    }

    fn dof(&self, node: usize) -> Option<usize> {
        if node == 0 || node + 1 == self.nodes.len() {
            None
        } else {
            Some(node - 1)
        }
    }

    fn hat(&self, cell: usize, local: usize, x: f64) -> f64 {
        let (a, b) = (self.nodes[cell], self.nodes[cell + 1]);
        let t = (x - a) / (b - a);
        if local == 0 {
            1.0 - t
        } else {
            t
        }
    }
}

/// `∫_{|y| > 1} |x - y|^{-1-α} dy`.
pub fn complement_weight_1d(x: f64, alpha: f64) -> f64 {
    ((1.0 - x).powf(-alpha) + (1.0 + x).powf(-alpha)) / alpha
}

pub fn assemble_stiffness_1d(mesh: &IntervalMesh, params: &FracKernelParams) -> Result<SpdOperator> {
    if params.d != 1 {
        return Err(Error::InvalidParameter("interval assembly needs d = 1".into()));
    }
    let alpha = params.alpha;
    let c = params.c_norm;
    let n = mesh.n_dofs();
    let cells = mesh.nodes.len() - 1;
    let mut a = Mat::<f64>::zeros(n, n);
    let kernel = |z: f64| z.abs().powf(-1.0 - alpha);
    let gl = GaussLegendre::new(16);
    let mut add = |ni: usize, nj: usize, v: f64| {
        if let (Some(i), Some(j)) = (mesh.dof(ni), mesh.dof(nj)) {
            a[(i, j)] += v;
        }
    };
    for k in 0..cells {
        let h = mesh.nodes[k + 1] - mesh.nodes[k];
        // identical cell: gradients ±1/h
        let m = 2.0 * h.powf(3.0 - alpha) / ((2.0 - alpha) * (3.0 - alpha)) / (h * h);
        for (la, sa) in [(0usize, -1.0), (1, 1.0)] {
            for (lb, sb) in [(0usize, -1.0), (1, 1.0)] {
                add(k + la, k + lb, 0.5 * c * sa * sb * m);
            }
        }
        // complement term
        for la in 0..2 {
            for lb in 0..2 {
                let v = integrate_adaptive(
                    |x| mesh.hat(k, la, x) * mesh.hat(k, lb, x) * complement_weight_1d(x, alpha),
                    mesh.nodes[k],
                    mesh.nodes[k + 1],
                    1e-300,
                    1e-12,
                    2000,
                );
                add(k + la, k + lb, c * v);
            }
        }
        for kp in k + 1..cells {
            let mut nodes = vec![k, k + 1, kp, kp + 1];
            nodes.dedup();
            let m = nodes.len();
            // difference of the hat of `nodes[r]` between x in cell k and y in cell kp
            let diff = |r: usize, x: f64, y: f64| {
                let node = nodes[r];
                let vx = if node == k || node == k + 1 { mesh.hat(k, node - k, x) } else { 0.0 };
                let vy = if node == kp || node == kp + 1 { mesh.hat(kp, node - kp, y) } else { 0.0 };
                vx - vy
            };
            let mut block = [[0.0; 4]; 4];
            if kp == k + 1 {
                // relative coordinates around the shared node
                let b = mesh.nodes[k + 1];
                let (h1, h2) = (h, mesh.nodes[kp + 1] - b);
                for r in 0..m {
                    for s in r..m {
                        let v = integrate_adaptive(
                            |si| {
                                integrate_adaptive(
                                    |ti| diff(r, b - si, b + ti) * diff(s, b - si, b + ti) * kernel(si + ti),
                                    0.0,
                                    h2,
                                    1e-300,
                                    1e-11,
                                    400,
                                )
                            },
                            0.0,
                            h1,
                            1e-300,
                            1e-11,
                            400,
                        );
                        block[r][s] = v;
                        block[s][r] = v;
                    }
                }
            } else {
                let (x0, x1) = (mesh.nodes[k], mesh.nodes[k + 1]);
                let (y0, y1) = (mesh.nodes[kp], mesh.nodes[kp + 1]);
                for (&px, &wx) in gl.points.iter().zip(&gl.weights) {
                    let x = x0 + (x1 - x0) * px;
                    for (&py, &wy) in gl.points.iter().zip(&gl.weights) {
                        let y = y0 + (y1 - y0) * py;
                        let w = wx * wy * (x1 - x0) * (y1 - y0) * kernel(x - y);
                        for r in 0..m {
                            let dr = diff(r, x, y);
                            for s in 0..m {
                                block[r][s] += w * dr * diff(s, x, y);
                            }
                        }
                    }
                }
            }
            // both orderings of the pair
            for r in 0..m {
                for s in 0..m {
                    add(nodes[r], nodes[s], c * block[r][s]);
                }
            }
        }
    }
    Ok(SpdOperator { n, entries: a })
}

pub fn assemble_load_1d(mesh: &IntervalMesh, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_dofs()];
    for k in 0..mesh.nodes.len() - 1 {
        for la in 0..2 {
            if let Some(i) = mesh.dof(k + la) {
                b[i] += integrate_adaptive(
                    |x| g(x) * mesh.hat(k, la, x),
                    mesh.nodes[k],
                    mesh.nodes[k + 1],
                    1e-300,
                    1e-12,
                    2000,
                );
            }
        }
    }
    b
}
