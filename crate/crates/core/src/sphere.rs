//! Real orthonormal eigenbasis of the sphere Laplacian and quadrature rules
//! that integrate products of basis elements exactly.
//!
//! Dimension 2 uses the circle basis `1/sqrt(2 pi)`, `cos(k t)/sqrt(pi)`,
//! `sin(k t)/sqrt(pi)`; dimension 3 uses real spherical harmonics assembled
//! from associated Legendre functions. Quadrature is the equispaced
//! trapezoid rule on the circle and Gauss-Legendre x equispaced longitudes
//! on the 2-sphere, with enough azimuthal nodes to keep degree-2L products
//! exact.

use crate::error::{Error, Result};

/// Eigenvalue of `-Delta_sphere` on degree-k modes: `k (k + n - 2)`.
pub fn eigenvalue(k: u32, n: u32) -> u64 {
    k as u64 * (k as u64 + n as u64 - 2)
}

/// Number of independent modes of degree `k`.
pub fn modes_of_degree(k: u32, n: u32) -> usize {
    match n {
        2 => {
            if k == 0 {
                1
            } else {
                2
            }
        }
        3 => 2 * k as usize + 1,
        _ => 0,
    }
}

/// Flat list of `(degree, order)` pairs for all modes up to the cutoff;
/// orders are 1-based within each degree.
pub fn mode_list(n: u32, degree_cutoff: u32) -> Vec<(u32, usize)> {
    let mut out = Vec::new();
    for k in 0..=degree_cutoff {
        for m in 1..=modes_of_degree(k, n) {
            out.push((k, m));
        }
    }
    out
}

/// Associated Legendre values `P_k^q(z)` for all `k <= k_max`, one `q`.
///
/// Positive convention (no alternating sign); normalization happens in the
/// harmonic assembly.
fn assoc_legendre_column(q: u32, k_max: u32, z: f64) -> Vec<f64> {
    let mut col = vec![0.0; (k_max + 1) as usize];
    if q > k_max {
        return col;
    }
    let s = (1.0 - z * z).max(0.0).sqrt();
    // P_q^q = (2q-1)!! s^q
    let mut pqq = 1.0;
    for i in 1..=q {
        pqq *= (2 * i - 1) as f64;
    }
    pqq *= s.powi(q as i32);
    col[q as usize] = pqq;
    if q < k_max {
        col[(q + 1) as usize] = z * (2 * q + 1) as f64 * pqq;
    }
    for k in q + 2..=k_max {
        let kf = k as f64;
        let qf = q as f64;
        col[k as usize] = ((2.0 * kf - 1.0) * z * col[(k - 1) as usize]
            - (kf - 1.0 + qf) * col[(k - 2) as usize])
            / (kf - qf);
    }
    col
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Values of every basis mode (ordered as in [`mode_list`]) at a direction.
pub fn basis_values(n: u32, degree_cutoff: u32, dir: &[f64]) -> Result<Vec<f64>> {
    match n {
        2 => {
            let theta = dir[1].atan2(dir[0]);
            let mut out = Vec::with_capacity(1 + 2 * degree_cutoff as usize);
            out.push(1.0 / (2.0 * std::f64::consts::PI).sqrt());
            let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
            for k in 1..=degree_cutoff {
                out.push((k as f64 * theta).cos() * inv_sqrt_pi);
                out.push((k as f64 * theta).sin() * inv_sqrt_pi);
            }
            Ok(out)
        }
        3 => {
            let z = dir[2].clamp(-1.0, 1.0);
            let phi = dir[1].atan2(dir[0]);
            let mut out = Vec::with_capacity((degree_cutoff as usize + 1).pow(2));
            // prepare Legendre columns per azimuthal order
            let cols: Vec<Vec<f64>> = (0..=degree_cutoff)
                .map(|q| assoc_legendre_column(q, degree_cutoff, z))
                .collect();
            for k in 0..=degree_cutoff {
                for m in 1..=modes_of_degree(k, 3) {
                    let (q, is_sin) = order_of(m);
                    let norm = ((2 * k + 1) as f64 / (4.0 * std::f64::consts::PI)
                        * (ln_factorial(k - q) - ln_factorial(k + q)).exp())
                    .sqrt();
                    let value = if q == 0 {
                        norm * cols[0][k as usize]
                    } else {
                        let ang = if is_sin {
                            (q as f64 * phi).sin()
                        } else {
                            (q as f64 * phi).cos()
                        };
                        std::f64::consts::SQRT_2 * norm * cols[q as usize][k as usize] * ang
                    };
                    out.push(value);
                }
            }
            Ok(out)
        }
        other => Err(Error::UnsupportedDimension(other)),
    }
}

/// Maps a 1-based order index to (azimuthal order, is_sin):
/// 1 -> (0, cos), 2 -> (1, cos), 3 -> (1, sin), 4 -> (2, cos), ...
pub fn order_of(m: usize) -> (u32, bool) {
    if m == 1 {
        (0, false)
    } else {
        (((m / 2) as u32), m % 2 == 1)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; count];
    let mut weights = vec![0.0; count];
    let nf = count as f64;
    for i in 0..count {
        // Chebyshev initial guess, refined by Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(count, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(count, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quadrature nodes on the unit sphere with exactness for products of basis
/// elements up to the cutoff degree.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub dirs: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// basis[node][mode]
    pub basis: Vec<Vec<f64>>,
    pub mode_list: Vec<(u32, usize)>,
}

impl SphereQuadrature {
    pub fn build(n: u32, degree_cutoff: u32) -> Result<Self> {
        let mut dirs = Vec::new();
        let mut weights = Vec::new();
        match n {
            2 => {
                let count = (4 * degree_cutoff + 8) as usize;
                let w = 2.0 * std::f64::consts::PI / count as f64;
                for i in 0..count {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                    dirs.push([t.cos(), t.sin(), 0.0]);
                    weights.push(w);
                }
            }
            3 => {
                let polar = degree_cutoff as usize + 2;
                let azimuthal = 2 * (degree_cutoff as usize + 2);
                let (zs, zws) = gauss_legendre(polar);
                let wphi = 2.0 * std::f64::consts::PI / azimuthal as f64;
                for (z, zw) in zs.iter().zip(&zws) {
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    for j in 0..azimuthal {
                        let phi = 2.0 * std::f64::consts::PI * j as f64 / azimuthal as f64;
                        dirs.push([s * phi.cos(), s * phi.sin(), *z]);
                        weights.push(zw * wphi);
                    }
                }
            }
            other => return Err(Error::UnsupportedDimension(other)),
        }
        let basis: Vec<Vec<f64>> = dirs
            .iter()
            .map(|d| basis_values(n, degree_cutoff, d))
            .collect::<Result<_>>()?;
        Ok(SphereQuadrature {
            dirs,
            weights,
            basis,
            mode_list: mode_list(n, degree_cutoff),
        })
    }

    pub fn mode_count(&self) -> usize {
        self.mode_list.len()
    }

    /// Surface area represented by the rule.
    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Project samples (one value per node) onto every basis mode.
    pub fn project_samples(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mode_count()];
        for (i, (&v, w)) in values.iter().zip(&self.weights).enumerate() {
            for (j, out_j) in out.iter_mut().enumerate() {
                *out_j += v * w * self.basis[i][j];
            }
        }
        out
    }

    /// Squared sphere-L2 norm of the samples.
    pub fn norm_sq(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(&v, w)| v * v * w)
            .sum()
    }
}
