//! Globally adaptive Gauss-Kronrod quadrature.
//!
//! A 15-point Kronrod rule nested over 7-point Gauss supplies both the panel
//! value and an error estimate from the difference of the two rules. Panels
//! are kept in a worst-error-first queue and split until the summed error
//! estimate meets the requested tolerance. Knots of the integrand may be
//! passed as initial breakpoints so panels never straddle them.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

/// Kronrod abscissas on [-1, 1] (positive half, last entry is the center).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

/// 7-point Gauss weights (for the odd-indexed Kronrod abscissas).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// 15-point Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Single-panel 15-point Kronrod evaluation: returns (integral, |K15 - G7|).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let dx = half * XGK[i];
        let f1 = f(mid - dx);
        let f2 = f(mid + dx);
        kron += WGK[i] * (f1 + f2);
        if i % 2 == 1 {
            gauss += WG[i / 2] * (f1 + f2);
        }
    }
    (kron * half, (kron - gauss).abs() * half.abs())
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub panels: usize,
}

/// Integrate `f` over `[a, b]` to relative tolerance `rel_tol` (with an
/// absolute floor `abs_floor` so that zero integrals terminate).
///
/// `knots` lists interior breakpoints to seed the panel set.
pub fn integrate<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
    knots: &[f64],
) -> Result<Quadrature> {
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            abs_error: 0.0,
            panels: 0,
        });
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(knots.len() + 2);
    cuts.push(a);
    for &k in knots {
        if k > a && k < b {
            cuts.push(k);
        }
    }
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let mut panels: Vec<Panel> = Vec::new();
    for w in cuts.windows(2) {
        let (v, e) = gk15(f, w[0], w[1]);
        panels.push(Panel {
            a: w[0],
            b: w[1],
            value: v,
            err: e,
        });
    }

    const MAX_PANELS: usize = 200_000;
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if !total.is_finite() {
            return Err(Error::EvaluatorFailure { r: a });
        }
        // roundoff floor: requests below summation noise terminate here
        let gross: f64 = panels.iter().map(|p| p.value.abs()).sum();
        let tol = (rel_tol * total.abs())
            .max(abs_floor)
            .max(30.0 * f64::EPSILON * gross);
        if err <= tol {
            return Ok(Quadrature {
                value: total,
                abs_error: err,
                panels: panels.len(),
            });
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::QuadratureNoConvergence {
                a,
                b,
                requested: tol,
                achieved: err,
            });
        }
        // split the worst panel; ties resolved by position for determinism
        let mut worst = 0;
        for (i, p) in panels.iter().enumerate() {
            if p.err > panels[worst].err {
                worst = i;
            }
        }
        let p = panels[worst];
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // interval at floating-point resolution; accept its estimate
            let mut q = panels[worst];
            q.err = 0.0;
            panels[worst] = q;
            continue;
        }
        let (v1, e1) = gk15(f, p.a, mid);
        let (v2, e2) = gk15(f, mid, p.b);
        panels[worst] = Panel {
            a: p.a,
            b: mid,
            value: v1,
            err: e1,
        };
        panels.push(Panel {
            a: mid,
            b: p.b,
            value: v2,
            err: e2,
        });
    }
}

/// Convenience wrapper with no interior knots.
pub fn integrate_plain<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<Quadrature> {
    integrate(f, a, b, rel_tol, abs_floor, &[])
}

/// 7-point Gauss rule on a single interval (no error estimate).
///
/// Exact for polynomial integrands of degree <= 13; used for cumulative
/// integrals over fine fixed grids where adaptivity is unnecessary.
pub fn gauss7<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = f(mid) * WG[3];
    for i in 0..3 {
        let dx = half * XGK[2 * i + 1];
        acc += WG[i] * (f(mid - dx) + f(mid + dx));
    }
    acc * half
}
