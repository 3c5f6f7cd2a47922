//! Extraction of the quadratic matrix and linear term of a convex function
//! at infinity.
//!
//! Sublevel sets of a convex function with quadratic growth become
//! ellipsoids as the level rises. Sampling the boundary of `{u < M}` along
//! rays from the minimum, enclosing the samples in a minimum-volume
//! ellipsoid, and rescaling its shape matrix by `2M` produces a sequence
//! that settles on the quadratic matrix; the determinant is then pinned to
//! `f(infinity)`. The linear term is the sphere average of `Du(x) - A x`,
//! which only settles when the source decays faster than `|x|^{-1}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ratefit::{self, RateFitResult, SignMode};

/// Relative volume-gap target of the enclosing-ellipsoid iteration.
pub const MVE_EPS: f64 = 1e-6;

/// Allowed determinant drift of the raw shape before renormalization.
pub const DET_TOL: f64 = 1e-3;

/// Relative Frobenius drift allowed between the two largest-level shapes.
pub const ELLIPSOID_CAUCHY_TOL: f64 = 1e-2;

/// Allowed cross-radius drift of the linear-term average.
pub const B_DRIFT_TOL: f64 = 1e-2;

/// Coordinate-descent tolerance for the minimum location.
const MIN_LOCATE_TOL: f64 = 1e-8;

pub type ScalarEval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientEval = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Known quadratic behavior of a sample, with an exact evaluator of the
/// deviation `u(x) - (x - shift)^T M (x - shift) / 2`.
///
/// Residual fits at radii where `u` itself has no floating-point headroom
/// left rely on this instead of subtracting two enormous numbers.
#[derive(Clone)]
pub struct QuadraticReference {
    pub matrix: DMatrix<f64>,
    pub shift: Vec<f64>,
    pub deviation: ScalarEval,
}

/// A convex function given by evaluators, with the constants needed by the
/// extraction pipeline.
#[derive(Clone)]
pub struct ConvexSample {
    pub dim: usize,
    pub evaluator: ScalarEval,
    pub gradient: Option<GradientEval>,
    pub f_infinity: f64,
    pub domain_radius: f64,
    /// Decay exponent of the source when known; gates the linear-term rule.
    pub decay_exponent: Option<f64>,
    /// Exact quadratic reference when the sample construction knows one.
    pub reference: Option<QuadraticReference>,
}

impl std::fmt::Debug for ConvexSample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvexSample")
            .field("dim", &self.dim)
            .field("f_infinity", &self.f_infinity)
            .field("domain_radius", &self.domain_radius)
            .field("decay_exponent", &self.decay_exponent)
            .finish()
    }
}

impl ConvexSample {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    /// Gradient, falling back to centered differences with h = 1e-4 |x|.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        if let Some(g) = &self.gradient {
            return g(x);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-4 * norm.max(1.0);
        let mut out = vec![0.0; self.dim];
        let mut hi = x.to_vec();
        let mut lo = x.to_vec();
        for i in 0..self.dim {
            hi[i] = x[i] + h;
            lo[i] = x[i] - h;
            out[i] = (self.eval(&hi) - self.eval(&lo)) / (2.0 * h);
            hi[i] = x[i];
            lo[i] = x[i];
        }
        out
    }

    /// Midpoint-convexity spot check on deterministic pseudo-random triples.
    pub fn check_convexity(&self, trials: u32, tol: f64) -> Result<()> {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let span = 0.5 * self.domain_radius.min(1e4);
        for _ in 0..trials {
            let x: Vec<f64> = (0..self.dim).map(|_| (2.0 * next() - 1.0) * span).collect();
            let y: Vec<f64> = (0..self.dim).map(|_| (2.0 * next() - 1.0) * span).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let defect = self.eval(&mid) - 0.5 * (self.eval(&x) + self.eval(&y));
            let scale = 1.0 + self.eval(&x).abs() + self.eval(&y).abs();
            if defect > tol * scale {
                return Err(Error::NotConvex {
                    defect: defect / scale,
                });
            }
        }
        Ok(())
    }
}

/// Geometric level ladder `m0 * 2^k`, k = 0..=count.
pub fn geometric_ladder(m0: f64, count: u32) -> Vec<f64> {
    (0..=count).map(|k| m0 * f64::powi(2.0, k as i32)).collect()
}

/// Default ray counts: 64 directions on the circle, 266 on the sphere.
pub fn default_ray_count(dim: usize) -> usize {
    if dim == 2 {
        64
    } else {
        266
    }
}

/// Well-spread unit directions: equiangular on the circle, a golden-angle
/// spiral on the sphere.
pub fn ray_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        2 => (0..count)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    vec![s * phi.cos(), s * phi.sin(), z]
                })
                .collect()
        }
    }
}

/// Antipodally symmetric direction set (exact zero mean), for averaging.
pub fn symmetric_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        return ray_directions(2, count);
    }
    let half = ray_directions(3, count / 2);
    let mut out = Vec::with_capacity(2 * half.len());
    for d in half {
        out.push(d.iter().map(|v| -v).collect());
        out.push(d);
    }
    out
}

/// Deterministic coordinate descent from the origin with shrinking steps.
pub fn locate_minimum(sample: &ConvexSample) -> Vec<f64> {
    let mut x = vec![0.0; sample.dim];
    let mut best = sample.eval(&x);
    let mut step = 1.0;
    let mut budget = 200_000u32;
    while step > MIN_LOCATE_TOL && budget > 0 {
        let mut improved = false;
        for i in 0..sample.dim {
            for sign in [1.0, -1.0] {
                loop {
                    budget = budget.saturating_sub(1);
                    let mut trial = x.clone();
                    trial[i] += sign * step;
                    let v = sample.eval(&trial);
                    if v < best {
                        best = v;
                        x = trial;
                        improved = true;
                    } else {
                        break;
                    }
                    if budget == 0 {
                        break;
                    }
                }
                if budget == 0 {
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    x
}

/// Boundary samples of the sublevel set `{u < u_min + level}` along rays
/// from the located minimum.
pub fn sublevel_boundary(
    sample: &ConvexSample,
    level: f64,
    n_rays: usize,
) -> Result<Vec<Vec<f64>>> {
    if n_rays < 2 * sample.dim + 2 {
        return Err(Error::Domain(format!(
            "need at least {} rays, got {n_rays}",
            2 * sample.dim + 2
        )));
    }
    if level <= 0.0 {
        return Err(Error::Domain("level must exceed the minimum".into()));
    }
    let center = locate_minimum(sample);
    let u_min = sample.eval(&center);
    let target = u_min + level;
    let dirs = ray_directions(sample.dim, n_rays);
    let mut out = Vec::with_capacity(n_rays);
    for (ray, dir) in dirs.iter().enumerate() {
        let at = |rho: f64| -> Vec<f64> {
            center
                .iter()
                .zip(dir)
                .map(|(c, d)| c + rho * d)
                .collect::<Vec<f64>>()
        };
        let mut hi = (2.0 * level).sqrt().max(1.0) * 0.5;
        let mut guard = 0;
        while sample.eval(&at(hi)) < target {
            hi *= 2.0;
            guard += 1;
            if hi > sample.domain_radius || guard > 200 {
                return Err(Error::RayEscaped {
                    ray,
                    level,
                    domain_radius: sample.domain_radius,
                });
            }
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if sample.eval(&at(mid)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(at(0.5 * (lo + hi)));
    }
    Ok(out)
}

/// Minimum-volume enclosing ellipsoid `{x : (x-c)^T Q (x-c) <= 1}`.
#[derive(Debug, Clone)]
pub struct EllipsoidFit {
    pub center: Vec<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
}

/// Barycentric-coordinate ascent for the minimum-volume enclosing
/// ellipsoid, with away steps. Deterministic given the point order.
pub fn mve_ellipsoid(points: &[Vec<f64>], eps: f64) -> Result<EllipsoidFit> {
    let n = points.len();
    if n == 0 {
        return Err(Error::DegeneratePoints);
    }
    let d = points[0].len();
    if n < d + 1 {
        return Err(Error::DegeneratePoints);
    }
    // rescale for conditioning
    let scale = (points
        .iter()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64)
        .sqrt()
        .max(1e-300);
    let lifted: Vec<DVector<f64>> = points
        .iter()
        .map(|p| {
            let mut q = DVector::zeros(d + 1);
            for (i, &v) in p.iter().enumerate() {
                q[i] = v / scale;
            }
            q[d] = 1.0;
            q
        })
        .collect();

    // the containment defect scales as eps_internal * (d+1)/d
    let eps_internal = eps * d as f64 / (d + 1) as f64;
    let mut u = DVector::from_element(n, 1.0 / n as f64);
    let dim_lift = (d + 1) as f64;
    let mut m_values = vec![0.0; n];
    for _ in 0..500_000u32 {
        let mut x = DMatrix::<f64>::zeros(d + 1, d + 1);
        for (q, &w) in lifted.iter().zip(u.iter()) {
            if w > 0.0 {
                x.ger(w, q, q, 1.0);
            }
        }
        let x_inv = x.try_inverse().ok_or(Error::DegeneratePoints)?;
        for (i, q) in lifted.iter().enumerate() {
            m_values[i] = (&x_inv * q).dot(q);
        }
        let (mut i_max, mut kappa_max) = (0, f64::MIN);
        let (mut i_min, mut kappa_min) = (0, f64::MAX);
        for (i, &m) in m_values.iter().enumerate() {
            if m > kappa_max {
                kappa_max = m;
                i_max = i;
            }
            if u[i] > 1e-300 && m < kappa_min {
                kappa_min = m;
                i_min = i;
            }
        }
        if kappa_max <= (1.0 + eps_internal) * dim_lift {
            break;
        }
        let up_gap = kappa_max - dim_lift;
        let down_gap = dim_lift - kappa_min;
        if up_gap >= down_gap {
            let step = up_gap / (dim_lift * (kappa_max - 1.0));
            u *= 1.0 - step;
            u[i_max] += step;
        } else {
            let raw = down_gap / (dim_lift * (kappa_min - 1.0));
            let cap = u[i_min] / (1.0 - u[i_min]).max(1e-300);
            let step = raw.min(cap);
            u *= 1.0 + step;
            u[i_min] -= step;
            u[i_min] = u[i_min].max(0.0);
            let total: f64 = u.iter().sum();
            u /= total;
        }
    }

    // center and covariance back in original coordinates
    let mut center_scaled = DVector::<f64>::zeros(d);
    for (p, &w) in points.iter().zip(u.iter()) {
        for i in 0..d {
            center_scaled[i] += w * p[i] / scale;
        }
    }
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    for (p, &w) in points.iter().zip(u.iter()) {
        let y = DVector::from_iterator(d, p.iter().map(|&v| v / scale));
        let diff = y - &center_scaled;
        sigma.ger(w, &diff, &diff, 1.0);
    }
    let shape_scaled = sigma
        .try_inverse()
        .ok_or(Error::DegeneratePoints)?
        .unscale(d as f64);
    let shape = shape_scaled.unscale(scale * scale);
    let center: Vec<f64> = center_scaled.iter().map(|v| v * scale).collect();

    if nalgebra::Cholesky::new(shape.clone()).is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    // the stopping rule bounds (p-c)^T Q (p-c) <= 1 + eps_internal (d+1)/d,
    // which the eps_internal above turns into exactly 1 + eps
    for p in points {
        let diff = DVector::from_iterator(d, p.iter().zip(&center).map(|(a, b)| a - b));
        let q = (&shape * &diff).dot(&diff);
        if q > 1.0 + eps + 1e-12 {
            return Err(Error::Domain(format!(
                "enclosing ellipsoid failed containment: {q:.9} > 1 + eps"
            )));
        }
    }
    Ok(EllipsoidFit {
        center,
        shape,
        level: 0.0,
    })
}

/// Diagnostics accumulated while walking the level ladder.
#[derive(Debug, Clone)]
pub struct ExtractionDiagnostics {
    /// Normalized shape `Q * 2M` at each ladder level.
    pub shapes: Vec<DMatrix<f64>>,
    /// Relative Frobenius drift between consecutive normalized shapes.
    pub cauchy_drifts: Vec<f64>,
    /// |det S - 1| of the final normalized shape before renormalization.
    pub det_drift: f64,
    /// Ellipsoid centers at each level.
    pub centers: Vec<Vec<f64>>,
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Recover the quadratic matrix from the sublevel ellipsoids of the ladder.
///
/// Returns the renormalized matrix (determinant exactly `f_infinity`) plus
/// the ladder diagnostics.
pub fn extract_a(
    sample: &ConvexSample,
    ladder: &[f64],
    n_rays: Option<usize>,
) -> Result<(DMatrix<f64>, ExtractionDiagnostics)> {
    if ladder.len() < 2 {
        return Err(Error::Domain("level ladder needs at least 2 rungs".into()));
    }
    let rays = n_rays.unwrap_or(default_ray_count(sample.dim));
    let mut shapes = Vec::with_capacity(ladder.len());
    let mut centers = Vec::with_capacity(ladder.len());
    for &level in ladder {
        let boundary = sublevel_boundary(sample, level, rays)?;
        let fit = mve_ellipsoid(&boundary, MVE_EPS)?;
        shapes.push(fit.shape.scale(2.0 * level));
        centers.push(fit.center);
    }
    let mut drifts = Vec::with_capacity(ladder.len() - 1);
    for w in shapes.windows(2) {
        drifts.push(frobenius(&(&w[1] - &w[0])) / frobenius(&w[1]).max(1e-300));
    }
    let last_drift = *drifts.last().unwrap();
    if last_drift > ELLIPSOID_CAUCHY_TOL {
        return Err(Error::CauchyDrift {
            drift: last_drift,
            tol: ELLIPSOID_CAUCHY_TOL,
        });
    }
    let s_final = shapes.last().unwrap().clone();
    let det = s_final.determinant();
    if det <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let det_drift = (det - 1.0).abs();
    let n = sample.dim as f64;
    let a = s_final.scale((sample.f_infinity / det).powf(1.0 / n));
    Ok((
        a,
        ExtractionDiagnostics {
            shapes,
            cauchy_drifts: drifts,
            det_drift,
            centers,
        },
    ))
}

/// Sphere average of `Du(x) - A x` over the given radii.
///
/// Returns the average at the largest radius plus the cross-radius drift.
/// Refused when the known decay exponent is at most 1 (the slow regime has
/// no linear term) or when the averages keep drifting.
pub fn extract_b(
    sample: &ConvexSample,
    a: &DMatrix<f64>,
    sphere_radii: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if sphere_radii.len() < 2 {
        return Err(Error::Domain("need at least two sphere radii".into()));
    }
    let dirs = symmetric_directions(sample.dim, default_ray_count(sample.dim));
    let mut averages: Vec<Vec<f64>> = Vec::with_capacity(sphere_radii.len());
    for &r in sphere_radii {
        if r > sample.domain_radius {
            return Err(Error::Domain(format!(
                "sphere radius {r} outside the evaluator domain"
            )));
        }
        let mut acc = vec![0.0; sample.dim];
        for dir in &dirs {
            let x: Vec<f64> = dir.iter().map(|d| r * d).collect();
            let g = sample.grad(&x);
            let ax = a * DVector::from_column_slice(&x);
            for i in 0..sample.dim {
                acc[i] += g[i] - ax[i];
            }
        }
        for v in &mut acc {
            *v /= dirs.len() as f64;
        }
        averages.push(acc);
    }
    let last = averages.last().unwrap().clone();
    let mut drift = 0.0f64;
    for avg in &averages {
        for i in 0..sample.dim {
            drift = drift.max((avg[i] - last[i]).abs());
        }
    }
    if let Some(zeta) = sample.decay_exponent {
        if zeta <= 1.0 {
            return Err(Error::LinearTermUnresolvable {
                reason: format!("decay exponent {zeta} <= 1 admits no linear term"),
                drift,
            });
        }
    }
    if drift > B_DRIFT_TOL {
        return Err(Error::LinearTermUnresolvable {
            reason: "cross-radius averages did not settle".into(),
            drift,
        });
    }
    Ok((last, drift))
}

/// Fixed generic ray used by the rate verification.
pub fn generic_ray(dim: usize) -> Vec<f64> {
    match dim {
        2 => {
            let t = 0.6127f64;
            vec![t.cos(), t.sin()]
        }
        _ => {
            let v = [0.53, 0.70, 0.47];
            let norm = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
            v.iter().map(|x| x / norm).collect()
        }
    }
}

/// Residual `u - x^T A x / 2 - b . x` sampled along the fixed generic ray.
///
/// With a quadratic reference present the subtraction is carried out in
/// expanded form so that the residual survives at radii where `u` has no
/// floating-point headroom.
pub fn rate_samples(
    sample: &ConvexSample,
    a: &DMatrix<f64>,
    b: Option<&[f64]>,
    radii: &[f64],
) -> Vec<(f64, f64)> {
    let e = generic_ray(sample.dim);
    let ev = DVector::from_column_slice(&e);
    let quad_coeff = 0.5 * ev.dot(&(a * &ev));
    let lin_coeff = b.map_or(0.0, |b| b.iter().zip(&e).map(|(x, y)| x * y).sum::<f64>());
    let mut samples = Vec::with_capacity(radii.len());
    for &r in radii {
        let x: Vec<f64> = e.iter().map(|d| r * d).collect();
        let w = match &sample.reference {
            Some(reference) => {
                let s = DVector::from_column_slice(&reference.shift);
                let m = &reference.matrix;
                // (x-s)^T M (x-s)/2 - x^T A x/2 expanded in powers of r
                let quad_gap = 0.5 * r * r * (ev.dot(&(m * &ev)) - 2.0 * quad_coeff)
                    - r * ev.dot(&(m * &s))
                    + 0.5 * s.dot(&(m * &s));
                (reference.deviation)(&x) + quad_gap - lin_coeff * r
            }
            None => sample.eval(&x) - quad_coeff * r * r - lin_coeff * r,
        };
        samples.push((r, w));
    }
    samples
}

/// Fit the growth law of `u - x^T A x / 2 - b . x` along a fixed ray.
pub fn verify_rates(
    sample: &ConvexSample,
    a: &DMatrix<f64>,
    b: Option<&[f64]>,
    radii: &[f64],
) -> Result<RateFitResult> {
    ratefit::fit_rate(&rate_samples(sample, a, b, radii), SignMode::Abs)
}
