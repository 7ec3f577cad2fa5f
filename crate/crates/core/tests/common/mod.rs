//! Independent reference computations shared by the integration tests.
//!
//! Everything here is written from the defining integrals with generic
//! quadrature (polar coordinates around the evaluation point, nested
//! adaptive Gauss-Kronrod, recursively graded tensor rules) and does not
//! reuse the production reductions.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use fracocp::mesh::TriMesh;
use fracocp::Point;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15_vec(f: &mut dyn FnMut(f64) -> Vec<f64>, a: f64, b: f64, m: usize) -> (Vec<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = vec![0.0; m];
    let mut g = vec![0.0; m];
    let fc = f(c);
    for i in 0..m {
        k[i] += WGK[7] * fc[i];
        g[i] += WG[3] * fc[i];
    }
    for j in 0..7 {
        let f1 = f(c - h * XGK[j]);
        let f2 = f(c + h * XGK[j]);
        for i in 0..m {
            k[i] += WGK[j] * (f1[i] + f2[i]);
            if j % 2 == 1 {
                g[i] += WG[j / 2] * (f1[i] + f2[i]);
            }
        }
    }
    let mut err: f64 = 0.0;
    for i in 0..m {
        k[i] *= h;
        g[i] *= h;
        err = err.max((k[i] - g[i]).abs());
    }
    (k, err)
}

/// Vector-valued adaptive Gauss-Kronrod with global bisection of the panel
/// carrying the largest error.
pub fn adapt_vec(mut f: impl FnMut(f64) -> Vec<f64>, a: f64, b: f64, m: usize, abs_tol: f64, max_panels: usize) -> Vec<f64> {
    if a == b {
        return vec![0.0; m];
    }
    let mut panels: Vec<(f64, f64, Vec<f64>, f64)> = Vec::new();
    let (v, e) = gk15_vec(&mut f, a, b, m);
    panels.push((a, b, v, e));
    loop {
        let total_err: f64 = panels.iter().map(|p| p.3).sum();
        if total_err <= abs_tol || panels.len() >= max_panels {
            break;
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15_vec(&mut f, pa, mid, m);
        let (v2, e2) = gk15_vec(&mut f, mid, pb, m);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
    let mut out = vec![0.0; m];
    for p in &panels {
        for i in 0..m {
            out[i] += p.2[i];
        }
    }
    out
}

pub fn adapt(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, abs_tol: f64, max_panels: usize) -> f64 {
    adapt_vec(|x| vec![f(x)], a, b, 1, abs_tol, max_panels)[0]
}

/// Scalar adaptive quadrature with a tolerance relative to a first estimate.
pub fn adapt_rel(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64, max_panels: usize) -> f64 {
    let (est, _) = gk15_vec(&mut |x| vec![f(x)], a, b, 1);
    adapt_vec(|x| vec![f(x)], a, b, 1, rel_tol * est[0].abs(), max_panels)[0]
}

fn area(p: &[Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]))
}

/// Affine barycentric coordinate of local vertex `a` and its gradient.
fn bary_affine(p: &[Point; 3], a: usize) -> (f64, [f64; 2]) {
    // value at the origin and gradient
    let ar = area(p);
    let q1 = p[(a + 1) % 3];
    let q2 = p[(a + 2) % 3];
    let g = [(q1[1] - q2[1]) / (2.0 * ar), (q2[0] - q1[0]) / (2.0 * ar)];
    let v0 = 1.0 - (g[0] * (p[a][0]) + g[1] * (p[a][1]));
    (v0, g)
}

fn eval_affine(c: (f64, [f64; 2]), x: Point) -> f64 {
    c.0 + c.1[0] * x[0] + c.1[1] * x[1]
}

/// Parameter interval `[r0, r1]` where the ray `x + r e` lies in the
/// triangle, if any.
fn ray_triangle(x: Point, e: [f64; 2], p: &[Point; 3]) -> Option<(f64, f64)> {
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    let sgn = area(p).signum();
    for i in 0..3 {
        let a = p[i];
        let b = p[(i + 1) % 3];
        // inside means cross(b - a, y - a) * sgn >= 0
        let ex = [b[0] - a[0], b[1] - a[1]];
        let c0 = sgn * (ex[0] * (x[1] - a[1]) - ex[1] * (x[0] - a[0]));
        let c1 = sgn * (ex[0] * e[1] - ex[1] * e[0]);
        if c1.abs() < 1e-300 {
            if c0 < 0.0 {
                return None;
            }
            continue;
        }
        let r = -c0 / c1;
        if c1 > 0.0 {
            lo = lo.max(r);
        } else {
            hi = hi.min(r);
        }
    }
    if hi > lo {
        Some((lo, hi))
    } else {
        None
    }
}

fn power_moment(p: f64, r0: f64, r1: f64) -> f64 {
    if (p + 1.0).abs() < 1e-12 {
        (r1 / r0).ln()
    } else {
        (r1.powf(p + 1.0) - r0.powf(p + 1.0)) / (p + 1.0)
    }
}

fn angles_to(x: Point, pts: &[Point]) -> Vec<f64> {
    let mut th: Vec<f64> = pts
        .iter()
        .map(|q| {
            let t = (q[1] - x[1]).atan2(q[0] - x[0]);
            if t < 0.0 {
                t + 2.0 * PI
            } else {
                t
            }
        })
        .collect();
    th.push(0.0);
    th.push(2.0 * PI);
    th.sort_by(|a, b| a.partial_cmp(b).unwrap());
    th.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    th
}

/// Map `(s, t) ∈ [0,1]²` onto the triangle collapsed at vertex `apex`.
fn collapsed(p: &[Point; 3], apex: usize, s: f64, t: f64) -> (Point, f64) {
    let a = p[apex];
    let b = p[(apex + 1) % 3];
    let c = p[(apex + 2) % 3];
    let x = [
        a[0] + s * (b[0] - a[0]) + s * t * (c[0] - b[0]),
        a[1] + s * (b[1] - a[1]) + s * t * (c[1] - b[1]),
    ];
    (x, 2.0 * area(p).abs() * s)
}

/// `∬_{K×K'} (φ_u(x) - φ_u(y))(φ_v(x) - φ_v(y)) |x - y|^{-2-α}` for all
/// vertex ids `u, v` of the union, for elements sharing at least one vertex.
/// Outer integral over `x ∈ K` by nested adaptive quadrature, inner integral
/// in polar coordinates around `x` with the radial part done exactly.
pub fn touching_pair_oracle(
    ids: [usize; 3],
    p: [Point; 3],
    ids_p: [usize; 3],
    pp: [Point; 3],
    alpha: f64,
    rel_tol: f64,
) -> BTreeMap<(usize, usize), f64> {
    if ids_p.iter().all(|v| ids.contains(v)) {
        return identical_pair_oracle(ids, p, alpha, rel_tol);
    }
    let mut union: Vec<usize> = ids.to_vec();
    for v in ids_p {
        if !union.contains(&v) {
            union.push(v);
        }
    }
    let m = union.len();
    let identical = ids_p.iter().all(|v| ids.contains(v));
    let aff: Vec<Option<(f64, [f64; 2])>> = union
        .iter()
        .map(|u| ids.iter().position(|w| w == u).map(|a| bary_affine(&p, a)))
        .collect();
    let aff_p: Vec<Option<(f64, [f64; 2])>> = union
        .iter()
        .map(|u| ids_p.iter().position(|w| w == u).map(|a| bary_affine(&pp, a)))
        .collect();
    // collapse x toward the shared vertex, or the vertex opposite the shared edge
    let shared: Vec<usize> = (0..3).filter(|&a| ids_p.contains(&ids[a])).collect();
    let apex = match shared.len() {
        1 => shared[0],
        2 => (0..3).find(|a| !shared.contains(a)).unwrap(),
        _ => 0,
    };
    let scale = area(&p).abs() * area(&pp).abs();
    let len = m * m;
    let inner = |x: Point| -> Vec<f64> {
        let c: Vec<f64> = (0..m)
            .map(|u| {
                let vx = aff[u].map_or(0.0, |a| eval_affine(a, x));
                let vy = aff_p[u].map_or(0.0, |a| eval_affine(a, x));
                if identical {
                    0.0
                } else {
                    vx - vy
                }
            })
            .collect();
        let breaks = angles_to(x, &pp);
        let mut out = vec![0.0; len];
        for w in breaks.windows(2) {
            let piece = adapt_vec(
                |th| {
                    let e = [th.cos(), th.sin()];
                    let mut v = vec![0.0; len];
                    let Some((r0, r1)) = ray_triangle(x, e, &pp) else { return v };
                    let r0 = if identical { 0.0 } else { r0 };
                    if r1 <= r0 {
                        return v;
                    }
                    let d: Vec<f64> = (0..m).map(|u| aff_p[u].map_or(0.0, |a| -(a.1[0] * e[0] + a.1[1] * e[1]))).collect();
                    let i2 = power_moment(1.0 - alpha, r0, r1);
                    let (i0, i1) = if identical {
                        (0.0, 0.0)
                    } else {
                        (power_moment(-1.0 - alpha, r0, r1), power_moment(-alpha, r0, r1))
                    };
                    for a in 0..m {
                        for b in 0..m {
                            v[a * m + b] = c[a] * c[b] * i0 + (c[a] * d[b] + c[b] * d[a]) * i1 + d[a] * d[b] * i2;
                        }
                    }
                    v
                },
                w[0],
                w[1],
                len,
                1e-2 * rel_tol * scale.powf(-0.25 * alpha),
                400,
            );
            for i in 0..len {
                out[i] += piece[i];
            }
        }
        out
    };
    // the shared edge sits at s = 1 for edge pairs; grade toward it
    let edge_pair = shared.len() == 2;
    let total = adapt_vec(
        |sig| {
            let (s, ds) = if edge_pair { (1.0 - (1.0 - sig).powi(3), 3.0 * (1.0 - sig).powi(2)) } else { (sig, 1.0) };
            adapt_vec(
                |t| {
                    let (x, j) = collapsed(&p, apex, s, t);
                    let mut v = inner(x);
                    for e in v.iter_mut() {
                        *e *= j * ds;
                    }
                    v
                },
                0.0,
                1.0,
                len,
                0.1 * rel_tol * scale.powf(0.5 - 0.25 * alpha),
                200,
            )
        },
        0.0,
        1.0,
        len,
        0.1 * rel_tol * scale.powf(0.5 - 0.25 * alpha),
        200,
    );
    let mut out = BTreeMap::new();
    for a in 0..m {
        for b in 0..m {
            out.insert((union[a], union[b]), total[a * m + b]);
        }
    }
    out
}

/// Area of `K ∩ (K + z)` by clipping.
fn overlap_area(p: &[Point; 3], z: [f64; 2]) -> f64 {
    let sgn = area(p).signum();
    let mut poly: Vec<Point> = p.iter().map(|q| [q[0] + z[0], q[1] + z[1]]).collect();
    for i in 0..3 {
        let a = p[i];
        let b = p[(i + 1) % 3];
        let side = |x: &Point| sgn * ((b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]));
        let mut out = Vec::with_capacity(poly.len() + 1);
        for j in 0..poly.len() {
            let cur = poly[j];
            let nxt = poly[(j + 1) % poly.len()];
            let (sc, sn) = (side(&cur), side(&nxt));
            if sc >= 0.0 {
                out.push(cur);
            }
            if (sc >= 0.0) != (sn >= 0.0) {
                let t = sc / (sc - sn);
                out.push([cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])]);
            }
        }
        poly = out;
        if poly.is_empty() {
            return 0.0;
        }
    }
    let n = poly.len();
    0.5 * (0..n)
        .map(|j| poly[j][0] * poly[(j + 1) % n][1] - poly[(j + 1) % n][0] * poly[j][1])
        .sum::<f64>()
        .abs()
}

/// Identical pair through the covariogram: with `z = x - y` the hat
/// differences are `∇φ · z`, and `∬ f(x - y) = ∫ f(z) |K ∩ (K + z)| dz`.
fn identical_pair_oracle(ids: [usize; 3], p: [Point; 3], alpha: f64, rel_tol: f64) -> BTreeMap<(usize, usize), f64> {
    let d = diam(&p);
    let ar = area(&p).abs();
    // r = ρ^{1/(2-α)} removes the r^{1-α} endpoint behaviour
    let rho_max = d.powf(2.0 - alpha);
    let mut breaks: Vec<f64> = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                let e = [p[i][0] - p[j][0], p[i][1] - p[j][1]];
                let t = e[1].atan2(e[0]);
                breaks.push(if t < 0.0 { t + 2.0 * PI } else { t });
            }
        }
    }
    breaks.push(0.0);
    breaks.push(2.0 * PI);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut t = vec![0.0; 3];
    for w in breaks.windows(2) {
        let piece = adapt_vec(
            |th| {
                let e = [th.cos(), th.sin()];
                let radial = adapt(
                    |rho| {
                        let r = rho.powf(1.0 / (2.0 - alpha));
                        overlap_area(&p, [r * e[0], r * e[1]]) / (2.0 - alpha)
                    },
                    0.0,
                    rho_max,
                    1e-3 * rel_tol * ar * rho_max,
                    400,
                );
                vec![e[0] * e[0] * radial, e[0] * e[1] * radial, e[1] * e[1] * radial]
            },
            w[0],
            w[1],
            3,
            0.1 * rel_tol * ar * rho_max,
            400,
        );
        for i in 0..3 {
            t[i] += piece[i];
        }
    }
    let grads: Vec<[f64; 2]> = (0..3).map(|a| bary_affine(&p, a).1).collect();
    let mut out = BTreeMap::new();
    for a in 0..3 {
        for b in 0..3 {
            let (ga, gb) = (grads[a], grads[b]);
            let v = ga[0] * (t[0] * gb[0] + t[1] * gb[1]) + ga[1] * (t[1] * gb[0] + t[2] * gb[1]);
            out.insert((ids[a], ids[b]), v);
        }
    }
    out
}

fn diam(p: &[Point; 3]) -> f64 {
    let d = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
    d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
}

fn dist_points(p: &[Point; 3], q: &[Point; 3]) -> f64 {
    let seg = |a: Point, b: Point, x: Point| {
        let e = [b[0] - a[0], b[1] - a[1]];
        let t = (((x[0] - a[0]) * e[0] + (x[1] - a[1]) * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
        (a[0] + t * e[0] - x[0]).hypot(a[1] + t * e[1] - x[1])
    };
    let mut d = f64::INFINITY;
    for i in 0..3 {
        for j in 0..3 {
            d = d.min(seg(p[i], p[(i + 1) % 3], q[j]));
            d = d.min(seg(q[i], q[(i + 1) % 3], p[j]));
        }
    }
    d
}

/// Gauss points of the conical product rule with `n²` points.
fn conical(n: usize) -> Vec<([f64; 3], f64)> {
    let (x, w) = gauss_legendre(n);
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let s = x[i];
            let t = (1.0 - s) * x[j];
            out.push(([1.0 - s - t, s, t], 2.0 * w[i] * w[j] * (1.0 - s)));
        }
    }
    out
}

/// Gauss-Legendre on `[0, 1]` by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn red(p: &[Point; 3]) -> [[Point; 3]; 4] {
    let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let (m01, m12, m20) = (mid(p[0], p[1]), mid(p[1], p[2]), mid(p[2], p[0]));
    [[p[0], m01, m20], [m01, p[1], m12], [m20, m12, p[2]], [m01, m12, m20]]
}

/// Same quantity as [`touching_pair_oracle`] for disjoint closed elements,
/// by tensor conical rules on recursively subdivided pieces.
pub fn disjoint_pair_oracle(
    ids: [usize; 3],
    p: [Point; 3],
    ids_p: [usize; 3],
    pp: [Point; 3],
    alpha: f64,
    order: usize,
) -> BTreeMap<(usize, usize), f64> {
    let rule = conical(order);
    let aff: Vec<(f64, [f64; 2])> = (0..3).map(|a| bary_affine(&p, a)).collect();
    let aff_p: Vec<(f64, [f64; 2])> = (0..3).map(|a| bary_affine(&pp, a)).collect();
    let mut acc = [[0.0; 6]; 6];
    fn rec(
        t: [Point; 3],
        tp: [Point; 3],
        depth: usize,
        rule: &[([f64; 3], f64)],
        aff: &[(f64, [f64; 2])],
        aff_p: &[(f64, [f64; 2])],
        alpha: f64,
        acc: &mut [[f64; 6]; 6],
    ) {
        let d = diam(&t).max(diam(&tp));
        let gap = dist_points(&t, &tp);
        if gap < d && depth < 12 {
            if diam(&t) >= diam(&tp) {
                for c in red(&t) {
                    rec(c, tp, depth + 1, rule, aff, aff_p, alpha, acc);
                }
            } else {
                for c in red(&tp) {
                    rec(t, c, depth + 1, rule, aff, aff_p, alpha, acc);
                }
            }
            return;
        }
        let (a1, a2) = (area(&t).abs(), area(&tp).abs());
        // well separated leaves need far fewer points
        let coarse;
        let rule = if gap >= 4.0 * d {
            coarse = conical(5);
            &coarse[..]
        } else {
            rule
        };
        for (bx, wx) in rule {
            let x = [
                bx[0] * t[0][0] + bx[1] * t[1][0] + bx[2] * t[2][0],
                bx[0] * t[0][1] + bx[1] * t[1][1] + bx[2] * t[2][1],
            ];
            let mut vals = [0.0; 6];
            for a in 0..3 {
                vals[a] = eval_affine(aff[a], x);
            }
            for (by, wy) in rule {
                let y = [
                    by[0] * tp[0][0] + by[1] * tp[1][0] + by[2] * tp[2][0],
                    by[0] * tp[0][1] + by[1] * tp[1][1] + by[2] * tp[2][1],
                ];
                let k = wx * wy * a1 * a2 * ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).powf(-1.0 - 0.5 * alpha);
                let mut diff = vals;
                for a in 0..3 {
                    diff[3 + a] = -eval_affine(aff_p[a], y);
                }
                for r in 0..6 {
                    for s in 0..6 {
                        acc[r][s] += k * diff[r] * diff[s];
                    }
                }
            }
        }
    }
    rec(p, pp, 0, &rule, &aff, &aff_p, alpha, &mut acc);
    let union: Vec<usize> = ids.iter().chain(ids_p.iter()).copied().collect();
    let mut out = BTreeMap::new();
    for a in 0..6 {
        for b in 0..6 {
            out.insert((union[a], union[b]), acc[a][b]);
        }
    }
    out
}

/// Complement weight of a convex polygon containing `x` (vertices in
/// order), `(1/α) ∫_0^{2π} R(θ)^{-α} dθ` with `R` the exit distance.
pub fn rho_polar(poly: &[Point], x: Point, alpha: f64) -> f64 {
    let exit = |th: f64| {
        let e = [th.cos(), th.sin()];
        let mut best = f64::INFINITY;
        let n = poly.len();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            // solve x + r e = a + s (b - a)
            let ex = [b[0] - a[0], b[1] - a[1]];
            let det = e[0] * (-ex[1]) - e[1] * (-ex[0]);
            if det.abs() < 1e-300 {
                continue;
            }
            let rhs = [a[0] - x[0], a[1] - x[1]];
            let r = (rhs[0] * (-ex[1]) - rhs[1] * (-ex[0])) / det;
            let s = (e[0] * rhs[1] - e[1] * rhs[0]) / det;
            if r > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
                best = best.min(r);
            }
        }
        best
    };
    let breaks = angles_to(x, poly);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += adapt_rel(|th| exit(th).powf(-alpha), w[0], w[1], 1e-10, 200);
    }
    total / alpha
}

/// Ordered boundary polygon of a mesh whose boundary is a single loop.
pub fn boundary_loop(mesh: &TriMesh) -> Vec<Point> {
    let edges = &mesh.boundary_edges;
    let mut next = BTreeMap::new();
    for e in edges {
        next.insert(e[0], e[1]);
    }
    let start = edges[0][0];
    let mut out = vec![mesh.point(start)];
    let mut v = next[&start];
    while v != start {
        out.push(mesh.point(v));
        v = next[&v];
    }
    out
}

/// `∫_K λ_a λ_b ρ` with `ρ` from [`rho_polar`], for local vertices with
/// `active` set (the others are left at zero; near the boundary they are not
/// integrable for `α ≥ 1`).
pub fn rho_block_oracle(poly: &[Point], p: [Point; 3], active: [bool; 3], alpha: f64, rel_tol: f64) -> [[f64; 3]; 3] {
    let aff: Vec<(f64, [f64; 2])> = (0..3).map(|a| bary_affine(&p, a)).collect();
    let ar = area(&p).abs();
    let f = |s: f64, t: f64| {
        let (x, j) = collapsed(&p, 0, s, t);
        let rho = rho_polar(poly, x, alpha);
        let l: Vec<f64> = (0..3).map(|a| if active[a] { eval_affine(aff[a], x) } else { 0.0 }).collect();
        let mut v = vec![0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                v[a * 3 + b] = j * l[a] * l[b] * rho;
            }
        }
        v
    };
    // size estimate for the tolerance
    let est = rho_polar(poly, [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0], alpha) * ar / 9.0;
    let v = adapt_vec(
        |s| adapt_vec(|t| f(s, t), 0.0, 1.0, 9, 0.1 * rel_tol * est, 100),
        0.0,
        1.0,
        9,
        rel_tol * est,
        100,
    );
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b] = v[a * 3 + b];
        }
    }
    out
}

/// `a(φ_i, φ_j)` for several pairs of interior vertices (by vertex id),
/// from element-pair oracles.
pub fn stiffness_entries_oracle(mesh: &TriMesh, entries: &[(usize, usize)], alpha: f64, c_norm: f64, rel_tol: f64) -> Vec<f64> {
    let n_el = mesh.n_elements();
    let supp: Vec<bool> = (0..n_el)
        .map(|k| {
            let v = mesh.elements[k].vertices;
            entries.iter().any(|&(a, b)| v.contains(&a) || v.contains(&b))
        })
        .collect();
    let mut total = vec![0.0; entries.len()];
    for k in 0..n_el {
        for kp in k..n_el {
            if !supp[k] && !supp[kp] {
                continue;
            }
            let (ids, p) = (mesh.elements[k].vertices, mesh.element_points(k));
            let (ids_p, pp) = (mesh.elements[kp].vertices, mesh.element_points(kp));
            let touching = ids.iter().any(|v| ids_p.contains(v));
            let block = if touching {
                touching_pair_oracle(ids, p, ids_p, pp, alpha, rel_tol)
            } else {
                disjoint_pair_oracle(ids, p, ids_p, pp, alpha, 8)
            };
            // unordered pairs stand for both orderings
            let w = if k == kp { 0.5 * c_norm } else { c_norm };
            for (t, &(vi, vj)) in total.iter_mut().zip(entries) {
                *t += w * block.get(&(vi, vj)).copied().unwrap_or(0.0);
            }
        }
    }
    let poly = boundary_loop(mesh);
    for k in 0..n_el {
        let ids = mesh.elements[k].vertices;
        let mut m = None;
        for (t, &(vi, vj)) in total.iter_mut().zip(entries) {
            let (Some(a), Some(b)) = (ids.iter().position(|&v| v == vi), ids.iter().position(|&v| v == vj)) else {
                continue;
            };
            let active = [0, 1, 2].map(|l| mesh.dof_of_vertex(ids[l]).is_some());
            let m = m.get_or_insert_with(|| rho_block_oracle(&poly, mesh.element_points(k), active, alpha, rel_tol));
            *t += c_norm * m[a][b];
        }
    }
    total
}

/// Naive Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().map(|r| r.clone()).collect();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap()).unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    x
}

/// `(-Δ)^{α/2} φ_z(x)` for the hat function of vertex `z` by polar
/// integration around `x`: the ball `B(x, δ)` contributes nothing because
/// `φ_z` is affine there, the exterior part splits into
/// `φ_z(x) 2π δ^{-α}/α` and a ray integral over the support that is
/// integrated numerically in both `r` and `θ`.
pub fn hat_frac_lap_oracle(mesh: &TriMesh, z: usize, x: Point, alpha: f64, c_norm: f64, delta: f64, rel_tol: f64) -> f64 {
    let support: Vec<([Point; 3], (f64, [f64; 2]))> = mesh
        .elements
        .iter()
        .filter_map(|el| {
            let a = el.vertices.iter().position(|&v| v == z)?;
            let p = el.vertices.map(|v| mesh.vertices[v].point());
            Some((p, bary_affine(&p, a)))
        })
        .collect();
    let mut value = 0.0;
    for (p, c) in &support {
        if ray_triangle(x, [1.0, 0.0], p).map_or(false, |(r0, _)| r0 <= 0.0) {
            value = eval_affine(*c, x);
        }
    }
    let pts: Vec<Point> = support.iter().flat_map(|(p, _)| p.iter().copied()).collect();
    let breaks = angles_to(x, &pts);
    let ray = |th: f64| {
        let e = [th.cos(), th.sin()];
        let mut s = 0.0;
        for (p, c) in &support {
            if let Some((r0, r1)) = ray_triangle(x, e, p) {
                let lo = r0.max(delta);
                if r1 > lo {
                    let f = |r: f64| eval_affine(*c, [x[0] + r * e[0], x[1] + r * e[1]]) * r.powf(-1.0 - alpha);
                    s += adapt(f, lo, r1, 1e-14 * delta.powf(-alpha), 200);
                }
            }
        }
        s
    };
    // lower bound for the size of the ray integral on the support
    let reach = pts.iter().map(|q| (q[0] - x[0]).hypot(q[1] - x[1])).fold(0.0, f64::max);
    let scale = 0.01 * reach.powf(-alpha);
    let mut tail = 0.0;
    for w in breaks.windows(2) {
        tail += adapt(&ray, w[0], w[1], rel_tol * scale * (w[1] - w[0]), 4000);
    }
    c_norm * (value * 2.0 * PI * delta.powf(-alpha) / alpha - tail)
}
