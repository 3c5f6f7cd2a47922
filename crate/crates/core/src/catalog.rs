//! Built-in test sources and oracle samples.
//!
//! The Poisson catalog spans decay exponents 0.5 through 4 with and without
//! log factors in both supported dimensions; each entry names its envelope
//! so certificates can be checked against the decay table. The oracle
//! builders wrap the radial solutions (optionally composed with an affine
//! map and a shift) as convex samples for the extraction pipeline.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::extract::{ConvexSample, QuadraticReference};
use crate::poisson::{Envelope, SourceSpec};
use crate::radial::RadialProfile;
use crate::sphere;

fn radius(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn sphere_area(n: u32) -> f64 {
    if n == 2 {
        2.0 * std::f64::consts::PI
    } else {
        4.0 * std::f64::consts::PI
    }
}

/// Degree-1 harmonic factor (z-axis mode for n = 3, cosine mode for n = 2).
fn first_harmonic(n: u32, x: &[f64; 3]) -> f64 {
    let r = radius(x);
    let dir = [x[0] / r, x[1] / r, x[2] / r];
    sphere::basis_values(n, 1, &dir).expect("small basis")[1]
}

/// Names of the built-in exterior sources.
pub const SOURCE_NAMES: &[&str] = &[
    "radial_inv_r05",
    "radial_inv_r",
    "radial_inv_r15_ln",
    "radial_inv_r2_n3",
    "radial_inv_r4",
    "y1_k1",
    "y1_k15",
    "y1_k4",
    "radial_inv_r2",
    "cos_k1",
    "cos_k15",
    "radial_inv_r05_ln",
];

/// Build a catalog source by name.
pub fn poisson_source(name: &str) -> Result<SourceSpec> {
    let radial =
        |n: u32, k1: f64, k2: f64| -> SourceSpec {
            SourceSpec::new(
                n,
                Envelope {
                    c0: sphere_area(n).sqrt() * 1.000001,
                    k1,
                    k2,
                },
                Arc::new(move |x: &[f64; 3]| {
                    let r = radius(x);
                    r.powf(-k1) * if k2 == 0.0 { 1.0 } else { r.ln().powf(k2) }
                }),
            )
            .expect("catalog source is valid")
        };
    let first_mode = |n: u32, k1: f64| -> SourceSpec {
        SourceSpec::new(
            n,
            Envelope {
                c0: 1.000001,
                k1,
                k2: 0.0,
            },
            Arc::new(move |x: &[f64; 3]| radius(x).powf(-k1) * first_harmonic(n, x)),
        )
        .expect("catalog source is valid")
    };
    match name {
        "radial_inv_r05" => Ok(radial(3, 0.5, 0.0)),
        "radial_inv_r" => Ok(radial(3, 1.0, 0.0)),
        "radial_inv_r15_ln" => Ok(radial(3, 1.5, 1.0)),
        "radial_inv_r2_n3" => Ok(radial(3, 2.0, 0.0)),
        "radial_inv_r4" => Ok(radial(3, 4.0, 0.0)),
        "y1_k1" => Ok(first_mode(3, 1.0)),
        "y1_k15" => Ok(first_mode(3, 1.5)),
        "y1_k4" => Ok(first_mode(3, 4.0)),
        "radial_inv_r2" => Ok(radial(2, 2.0, 0.0)),
        "cos_k1" => Ok(first_mode(2, 1.0)),
        "cos_k15" => Ok(first_mode(2, 1.5)),
        "radial_inv_r05_ln" => Ok(radial(2, 0.5, 1.0)),
        other => Err(Error::UnknownCatalogEntry(other.into())),
    }
}

/// Sources whose solutions genuinely attain the extra log of the decay
/// table; dropping one log power must break their certificates.
pub const LOG_ATTAINING_SOURCES: &[&str] = &[
    "radial_inv_r2_n3",
    "y1_k1",
    "y1_k4",
    "radial_inv_r2",
    "cos_k1",
];

/// Configuration of a radial oracle for the extraction pipeline.
#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Volume-preserving linear map composed inside the argument
    /// (`u(x) = v(|T (x - shift)|)`); identity when absent.
    pub transform: Option<DMatrix<f64>>,
    /// Translation of the minimum.
    pub shift: Vec<f64>,
    /// Multiplies the source, so the solution scales by its n-th root.
    pub f_scale: f64,
    pub domain_radius: f64,
}

impl OracleConfig {
    pub fn plain(dim: usize) -> Self {
        OracleConfig {
            transform: None,
            shift: vec![0.0; dim],
            f_scale: 1.0,
            domain_radius: 1e5,
        }
    }
}

/// Wrap a radial solution (optionally affinely deformed, shifted, and
/// source-rescaled) as a convex sample with an exact gradient.
pub fn radial_oracle(profile: &RadialProfile, config: &OracleConfig) -> Result<ConvexSample> {
    let dim = profile.dimension() as usize;
    if !(dim == 2 || dim == 3) {
        return Err(Error::UnsupportedDimension(profile.dimension()));
    }
    if config.shift.len() != dim {
        return Err(Error::Domain("shift dimension mismatch".into()));
    }
    let transform = match &config.transform {
        Some(t) => {
            if t.nrows() != dim || t.ncols() != dim {
                return Err(Error::Domain("transform dimension mismatch".into()));
            }
            if (t.determinant().abs() - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(
                    "transform must be volume-preserving (|det| = 1)".into(),
                ));
            }
            t.clone()
        }
        None => DMatrix::identity(dim, dim),
    };
    let n_f = profile.dimension() as f64;
    let value_scale = config.f_scale.powf(1.0 / n_f);
    let shift = config.shift.clone();
    let profile_eval = Arc::new(profile.clone());
    let profile_grad = profile_eval.clone();
    let profile_dev = profile_eval.clone();
    let t_eval = transform.clone();
    let t_grad = transform.clone();
    let t_dev = transform.clone();
    let shift_eval = shift.clone();
    let shift_dev = shift.clone();

    let evaluator = Arc::new(move |x: &[f64]| {
        let y = DVector::from_iterator(x.len(), x.iter().zip(&shift_eval).map(|(a, b)| a - b));
        let rho = (&t_eval * y).norm();
        value_scale * profile_eval.u_radial(rho)
    });
    let gradient = Arc::new(move |x: &[f64]| -> Vec<f64> {
        let y = DVector::from_iterator(x.len(), x.iter().zip(&shift).map(|(a, b)| a - b));
        let ty = &t_grad * y;
        let rho = ty.norm();
        if rho == 0.0 {
            return vec![0.0; x.len()];
        }
        let slope = value_scale * profile_grad.du_radial(rho) / rho;
        let g = t_grad.transpose() * ty * slope;
        g.iter().copied().collect()
    });
    // u(x) - (x-s)^T [scale T^T T] (x-s) / 2, computed in deviation form
    let deviation = Arc::new(move |x: &[f64]| {
        let y = DVector::from_iterator(x.len(), x.iter().zip(&shift_dev).map(|(a, b)| a - b));
        let rho = (&t_dev * y).norm();
        value_scale * profile_dev.u_minus_quadratic(rho)
    });
    let reference_matrix = (transform.transpose() * &transform).scale(value_scale);
    Ok(ConvexSample {
        dim,
        evaluator,
        gradient: Some(gradient),
        f_infinity: config.f_scale,
        domain_radius: config.domain_radius,
        decay_exponent: Some(profile.zeta().to_f64()),
        reference: Some(QuadraticReference {
            matrix: reference_matrix,
            shift: config.shift.clone(),
            deviation,
        }),
    })
}
