//! End-to-end acceptance checks.
//!
//! Each test prints one PASS/FAIL line (run with `--nocapture` to see them)
//! and asserts its criterion at the stated tolerance. Fit windows are chosen
//! per case so that the targeted law dominates both the neighboring terms of
//! the expansion and the quadrature noise floor; the reasoning is noted next
//! to each window.

use std::sync::Arc;
use std::time::Instant;

use malab_core::catalog::{self, OracleConfig, LOG_ATTAINING_SOURCES, SOURCE_NAMES};
use malab_core::extract;
use malab_core::poisson;
use malab_core::radial::{self, ExpansionSeries, RadialProfile};
use malab_core::ratefit::{self, SignMode};
use malab_core::Rational;
use nalgebra::DMatrix;

fn report(id: u32, pass: bool, detail: &str) {
    println!(
        "acceptance {:2} {}: {}",
        id,
        if pass { "PASS" } else { "FAIL" },
        detail
    );
    assert!(pass, "criterion {id}: {detail}");
}

fn profile(n: u32, num: i64, den: i64, tol: f64) -> RadialProfile {
    RadialProfile::new(n, Rational::new(num, den), tol, false).unwrap()
}

fn log_radii(lo: f64, hi: f64, per_octave: u32) -> Vec<f64> {
    ratefit::log_spaced_radii(lo, hi, per_octave)
}

#[test]
fn criterion_01_constant_source_oracle_identity() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in [2u32, 3, 4] {
        let p = RadialProfile::new(n, Rational::new(1, 2), 1e-10, true).unwrap();
        for k in 0..=16 {
            let r = f64::powi(2.0, k);
            let dev = (p.u_radial(r) - 0.5 * r * r).abs() / (r * r);
            worst = worst.max(dev);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        worst <= 1e-8 && elapsed < 5.0,
        &format!("constant-source deviation {worst:.2e} (limit 1e-8), {elapsed:.2}s"),
    );
}

#[test]
fn criterion_02_leading_coefficient_slow_decay() {
    let start = Instant::now();
    let p = profile(3, 1, 2, 1e-12);
    let c = radial::compute_constants(&p, 1e-12).unwrap();
    // pinned window [2^8, 2^16]; the r^{2-2z} admixture biases the log-mean
    // by about -1.3%, inside the 2% gate
    let radii = log_radii(f64::powi(2.0, 8), f64::powi(2.0, 16), 2);
    let samples: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| {
            let w = p.u_minus_quadratic(r) - c.c1 * r.ln() - c.c2;
            (r, w)
        })
        .collect();
    let (coeff, _) = ratefit::fit_rate_fixed(&samples, 1.5, 0, SignMode::Abs).unwrap();
    let target = 1.0 / (1.5 * 2.5);
    let rel = (coeff / target - 1.0).abs();
    let elapsed = start.elapsed().as_secs_f64();
    report(
        2,
        rel <= 0.02 && elapsed < 30.0,
        &format!("leading coefficient {coeff:.6} vs {target:.6} ({rel:.3e} rel), {elapsed:.2}s"),
    );
}

#[test]
fn criterion_03_log_law_at_critical_decay() {
    let start = Instant::now();
    let p = profile(3, 2, 1, 1e-13);
    let c = radial::compute_constants(&p, 1e-12).unwrap();
    // the constant offset contaminates the ln r fit by |C2|/ln r, so the
    // window floor scales with |C2/C1|
    let ln_lo = (50.0 * (c.c2 / c.c1).abs()).max(40.0);
    let radii = log_radii(ln_lo.exp(), (1.35 * ln_lo).exp(), 2);
    let samples: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| (r, p.u_minus_quadratic(r)))
        .collect();
    let (coeff, _) = ratefit::fit_rate_fixed(&samples, 0.0, 1, SignMode::Abs).unwrap();
    let rel = (coeff / c.c1 - 1.0).abs();
    let elapsed = start.elapsed().as_secs_f64();
    report(
        3,
        rel <= 0.02 && (c.c1 - 1.0).abs() < 1e-12 && elapsed < 30.0,
        &format!(
            "log coefficient {coeff:.6} vs C1 = {:.6} ({rel:.3e} rel), window ln r >= {ln_lo:.0}, {elapsed:.2}s",
            c.c1
        ),
    );
}

#[test]
fn criterion_04_log_squared_law() {
    let start = Instant::now();
    let p = profile(2, 2, 1, 1e-13);
    let c = radial::compute_constants(&p, 1e-12).unwrap();
    let ln_lo = (80.0 * c.c3.abs()).max(30.0);
    let radii = log_radii(ln_lo.exp(), (1.4 * ln_lo).exp(), 2);
    let samples: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| (r, p.u_minus_quadratic(r)))
        .collect();
    let (coeff, _) = ratefit::fit_rate_fixed(&samples, 0.0, 2, SignMode::Abs).unwrap();
    let rel = (coeff / 0.5 - 1.0).abs();
    let elapsed = start.elapsed().as_secs_f64();
    report(
        4,
        rel <= 0.05 && elapsed < 30.0,
        &format!("log-squared coefficient {coeff:.6} vs 0.5 ({rel:.3e} rel), {elapsed:.2}s"),
    );
}

#[test]
fn criterion_05_expansion_residual_orders() {
    let start = Instant::now();
    // windows: low zeta needs large radii to suppress the next series term;
    // high zeta needs small radii to keep the residual above the quadrature
    // noise floor of the leading deviation
    let window = |n: u32, zeta: (i64, i64)| -> (f64, f64) {
        match zeta {
            (1, 4) => (f64::powi(2.0, 24), f64::powi(2.0, 44)),
            (1, 2) => (f64::powi(2.0, 16), f64::powi(2.0, 32)),
            (1, 1) => (f64::powi(2.0, 8), f64::powi(2.0, 18)),
            // the n = 2 branch carries a large mixed term one half-power
            // below the leading one, so its window sits higher
            (3, 2) if n == 2 => (f64::powi(2.0, 11), f64::powi(2.0, 14)),
            (3, 2) => (f64::powi(2.0, 4), f64::powi(2.0, 10)),
            // r^{-4} residual: mixed terms fade past r ~ 200 while the
            // roundoff floor of the leading deviation bites past 2^10
            _ => (f64::powf(2.0, 6.5), f64::powf(2.0, 9.5)),
        }
    };
    let mut all = true;
    let mut lines = Vec::new();
    for n in [2u32, 3] {
        for zeta in [(1i64, 4i64), (1, 2), (1, 1), (3, 2), (2, 1)] {
            let zf = zeta.0 as f64 / zeta.1 as f64;
            if zf >= n as f64 && !(n == 2 && zeta == (2, 1)) {
                continue;
            }
            let log_branch = n == 2 && zeta == (2, 1);
            // requests below the roundoff floor clamp to the achievable
            // precision, which these residuals need
            let tol = if zeta == (3, 2) && n == 2 { 1e-15 } else { 1e-14 };
            let p = profile(n, zeta.0, zeta.1, tol);
            let c = radial::compute_constants(&p, 1e-12).unwrap();
            let series = ExpansionSeries::build(&p, &c, 2).unwrap();
            let omitted = series.first_omitted.unwrap();
            let (lo, hi) = if log_branch {
                (f64::powi(2.0, 3), f64::powi(2.0, 11))
            } else {
                window(n, zeta)
            };
            let radii = log_radii(lo, hi, 8);
            let residuals = radial::expansion_residual(&p, &c, &radii, 2).unwrap();
            let powers: &[u32] = if omitted.ln_power > 2 {
                &[0, 1, 2, 3]
            } else {
                &[0, 1, 2]
            };
            let fit = ratefit::fit_rate_with_powers(&residuals, SignMode::Abs, powers).unwrap();
            let ok = (fit.gamma - omitted.r_power).abs() <= 0.05
                && fit.log_power == omitted.ln_power;
            all &= ok;
            lines.push(format!(
                "(n={n}, zeta={}/{}) fitted ({:.3}, {}) declared ({:.3}, {}){}",
                zeta.0,
                zeta.1,
                fit.gamma,
                fit.log_power,
                omitted.r_power,
                omitted.ln_power,
                if ok { "" } else { " <- MISMATCH" }
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        5,
        all && elapsed < 300.0,
        &format!("residual orders\n  {}\n  {elapsed:.1}s", lines.join("\n  ")),
    );
}

#[test]
fn criterion_06_exterior_poisson_catalog() {
    let start = Instant::now();
    let grid = poisson::radial_grid(1.0, f64::powi(2.0, 13), 64);
    let mut all = true;
    let mut lines = Vec::new();
    for name in SOURCE_NAMES {
        let spec = catalog::poisson_source(name).unwrap();
        let field = poisson::solve(&spec, 8, &grid).unwrap();
        let worst_residual = field
            .laplacian_residual()
            .iter()
            .map(|&(_, e)| e)
            .fold(0.0f64, f64::max);
        let cert = field.certify_decay(None).unwrap();
        let mut ok = worst_residual <= 1e-6 && cert.pass;
        let mut note = String::new();
        if LOG_ATTAINING_SOURCES.contains(name) {
            let reduced = field.certify_decay(Some(cert.k_log - 1.0)).unwrap();
            if reduced.pass {
                ok = false;
                note = " reduced-log certificate unexpectedly stable".into();
            }
        }
        all &= ok;
        lines.push(format!(
            "{name}: residual {worst_residual:.2e}, k_log {} growth {:.4}{}{}",
            cert.k_log,
            cert.top_growth,
            if ok { "" } else { " <- FAIL" },
            note
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        6,
        all && elapsed < 120.0,
        &format!("catalog of {} sources\n  {}\n  {elapsed:.1}s", SOURCE_NAMES.len(), lines.join("\n  ")),
    );
}

fn shear2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])
}

#[test]
fn criterion_07_quadratic_extraction_of_sheared_oracle() {
    let start = Instant::now();
    let p = profile(2, 3, 2, 1e-10);
    let mut config = OracleConfig::plain(2);
    config.transform = Some(shear2());
    let sample = catalog::radial_oracle(&p, &config).unwrap();
    // taller ladder than the default: the containment drift of the level
    // sets scales like the boundary radius to the -zeta, and the 1e-3
    // determinant gate needs levels past 10^5
    let ladder = extract::geometric_ladder(100.0, 13);
    let (a, diag) = extract::extract_a(&sample, &ladder, None).unwrap();
    let t = shear2();
    let target = t.transpose() * &t;
    let frob = (&a - &target).iter().map(|v| v * v).sum::<f64>().sqrt();
    let det_exact = (a.determinant() - 1.0).abs();
    let elapsed = start.elapsed().as_secs_f64();
    report(
        7,
        frob <= 1e-2 && det_exact <= 1e-12 && diag.det_drift <= 1e-3 && elapsed < 120.0,
        &format!(
            "|A - T'T|_F = {frob:.2e} (limit 1e-2), post-normalization det gap {det_exact:.1e}, pre-normalization drift {:.2e} (limit 1e-3), {elapsed:.1}s",
            diag.det_drift
        ),
    );
}

#[test]
fn criterion_08_linear_term_capture_and_refusal() {
    let start = Instant::now();
    let ladder = extract::geometric_ladder(100.0, 13);
    let sphere_radii = [512.0, 1024.0, 2048.0, 4096.0];

    // centered: the linear term must vanish
    let p = profile(2, 3, 2, 1e-10);
    let centered = catalog::radial_oracle(&p, &OracleConfig::plain(2)).unwrap();
    let (a0, _) = extract::extract_a(&centered, &ladder, None).unwrap();
    let (b0, drift0) = extract::extract_b(&centered, &a0, &sphere_radii).unwrap();
    let b0_norm = b0.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // translated: the linear term must be -A x0
    let shift = vec![0.5, -0.25];
    let mut config = OracleConfig::plain(2);
    config.shift = shift.clone();
    let translated = catalog::radial_oracle(&p, &config).unwrap();
    let (a1, _) = extract::extract_a(&translated, &ladder, None).unwrap();
    let (b1, _) = extract::extract_b(&translated, &a1, &sphere_radii).unwrap();
    let expected: Vec<f64> = (0..2)
        .map(|i| -(0..2).map(|j| a1[(i, j)] * shift[j]).sum::<f64>())
        .collect();
    let b1_err = b1
        .iter()
        .zip(&expected)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));

    // slow decay: no linear term exists and the call must refuse
    let p_slow = profile(2, 1, 2, 1e-10);
    let slow = catalog::radial_oracle(&p_slow, &OracleConfig::plain(2)).unwrap();
    let refused = matches!(
        extract::extract_b(&slow, &DMatrix::identity(2, 2), &sphere_radii),
        Err(malab_core::Error::LinearTermUnresolvable { .. })
    );

    let elapsed = start.elapsed().as_secs_f64();
    report(
        8,
        b0_norm <= 1e-2 && b1_err <= 2e-2 && refused && elapsed < 120.0,
        &format!(
            "centered |b| = {b0_norm:.2e} (drift {drift0:.1e}), translated error {b1_err:.2e}, slow-decay refusal: {refused}, {elapsed:.1}s"
        ),
    );
}

#[test]
fn criterion_09_rate_law_table() {
    let start = Instant::now();
    let desk = log_radii(f64::powi(2.0, 8), f64::powi(2.0, 16), 2);
    // the r^{1/2} law needs higher radii before the constant offset fades
    let mid = log_radii(f64::powi(2.0, 16), f64::powi(2.0, 28), 2);
    let wide = log_radii(f64::powi(2.0, 20), f64::powi(2.0, 60), 1);
    type RateCase<'a> = (u32, (i64, i64), &'a [f64], f64, u32);
    let cases: [RateCase; 4] = [
        (3, (1, 2), &desk, 1.5, 0),
        (3, (3, 2), &mid, 0.5, 0),
        (3, (2, 1), &wide, 0.0, 1),
        (2, (2, 1), &wide, 0.0, 2),
    ];
    let mut all = true;
    let mut lines = Vec::new();
    for (n, zeta, radii, gamma, p_log) in cases {
        let p = profile(n, zeta.0, zeta.1, 1e-13);
        let sample = catalog::radial_oracle(&p, &OracleConfig::plain(n as usize)).unwrap();
        let identity = DMatrix::identity(n as usize, n as usize);
        let fit = extract::verify_rates(&sample, &identity, None, radii).unwrap();
        let ok = (fit.gamma - gamma).abs() <= 0.05 && fit.log_power == p_log;
        all &= ok;
        lines.push(format!(
            "(n={n}, zeta={}/{}) fitted ({:.3}, {}) expected ({gamma}, {p_log}){}",
            zeta.0,
            zeta.1,
            fit.gamma,
            fit.log_power,
            if ok { "" } else { " <- MISMATCH" }
        ));
    }
    // zeta = 1: recorded, not gated (sharpness open)
    let p1 = profile(3, 1, 1, 1e-13);
    let s1 = catalog::radial_oracle(&p1, &OracleConfig::plain(3)).unwrap();
    let fit1 = extract::verify_rates(&s1, &DMatrix::identity(3, 3), None, &desk).unwrap();
    lines.push(format!(
        "(n=3, zeta=1) recorded ({:.3}, {}) [not gated]",
        fit1.gamma, fit1.log_power
    ));
    let elapsed = start.elapsed().as_secs_f64();
    report(
        9,
        all && elapsed < 300.0,
        &format!("rate table\n  {}\n  {elapsed:.1}s", lines.join("\n  ")),
    );
}

#[test]
fn criterion_10_property_suites() {
    let start = Instant::now();
    let mut all = true;
    let mut lines = Vec::new();

    // exact recovery of synthetic laws
    {
        let mut worst_gamma = 0.0f64;
        let mut worst_coeff = 0.0f64;
        let mut powers_ok = true;
        for &gamma in &[-2.0, -0.5, 1.25] {
            for p_log in 0u32..=2 {
                for &c in &[0.5, -3.0] {
                    let samples: Vec<(f64, f64)> = (0..30)
                        .map(|i| {
                            let r = 16.0 * f64::powf(2.0, i as f64 * 0.2);
                            (r, c * r.powf(gamma) * r.ln().powi(p_log as i32))
                        })
                        .collect();
                    let fit = ratefit::fit_rate(&samples, SignMode::Abs).unwrap();
                    worst_gamma = worst_gamma.max((fit.gamma - gamma).abs());
                    worst_coeff = worst_coeff.max((fit.coeff / c.abs() - 1.0).abs());
                    powers_ok &= fit.log_power == p_log;
                }
            }
        }
        let ok = worst_gamma <= 1e-6 && worst_coeff <= 1e-6 && powers_ok;
        all &= ok;
        lines.push(format!(
            "rate-fit exact recovery: gamma err {worst_gamma:.1e}, coeff err {worst_coeff:.1e}{}",
            if ok { "" } else { " <- FAIL" }
        ));
    }

    // superposition of exterior solutions differs by a discrete-harmonic field
    {
        let grid = poisson::radial_grid(1.0, 256.0, 64);
        let g1 = catalog::poisson_source("radial_inv_r").unwrap();
        let g2 = catalog::poisson_source("y1_k15").unwrap();
        let ev1 = g1.evaluator.clone();
        let ev2 = g2.evaluator.clone();
        let sum = poisson::SourceSpec::new(
            3,
            poisson::Envelope {
                c0: g1.envelope.c0 + g2.envelope.c0,
                k1: 1.0,
                k2: 0.0,
            },
            Arc::new(move |x: &[f64; 3]| ev1(x) + ev2(x)),
        )
        .unwrap();
        let s1 = poisson::solve(&g1, 3, &grid).unwrap();
        let s2 = poisson::solve(&g2, 3, &grid).unwrap();
        let s12 = poisson::solve(&sum, 3, &grid).unwrap();
        let h = grid[1].ln() - grid[0].ln();
        let mut worst = 0.0f64;
        for (m, mode) in s12.modes.iter().enumerate() {
            let lambda = (mode.degree * (mode.degree + 1)) as f64;
            let diff: Vec<f64> = (0..grid.len())
                .map(|i| mode.values[i] - s1.modes[m].values[i] - s2.modes[m].values[i])
                .collect();
            for i in 2..grid.len() - 2 {
                let r = grid[i];
                let d1 = (-diff[i + 2] + 8.0 * diff[i + 1] - 8.0 * diff[i - 1] + diff[i - 2])
                    / (12.0 * h);
                let d2 = (-diff[i + 2] + 16.0 * diff[i + 1] - 30.0 * diff[i]
                    + 16.0 * diff[i - 1]
                    - diff[i - 2])
                    / (12.0 * h * h);
                let lap = (d2 + d1 - lambda * diff[i]) / (r * r);
                worst = worst.max(lap.abs() / (1.0 + s12.source_coeffs[m][i].abs()));
            }
        }
        let ok = worst <= 10.0 * poisson::ODE_TOL;
        all &= ok;
        lines.push(format!(
            "superposition harmonicity defect {worst:.2e} (limit {:.0e}){}",
            10.0 * poisson::ODE_TOL,
            if ok { "" } else { " <- FAIL" }
        ));
    }

    // affine equivariance and scaling consistency of the extraction
    {
        let p = profile(2, 3, 2, 1e-10);
        let ladder = extract::geometric_ladder(100.0, 10);
        let base = catalog::radial_oracle(&p, &OracleConfig::plain(2)).unwrap();
        let (a0, _) = extract::extract_a(&base, &ladder, None).unwrap();
        let mut worst = 0.0f64;
        let rot = {
            let t = 0.5f64;
            DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
        };
        for t in [shear2(), rot] {
            let mut config = OracleConfig::plain(2);
            config.transform = Some(t.clone());
            let sample = catalog::radial_oracle(&p, &config).unwrap();
            let (a_t, _) = extract::extract_a(&sample, &ladder, None).unwrap();
            let expected = t.transpose() * &a0 * &t;
            let frob = (&a_t - &expected)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            worst = worst.max(frob);
        }
        let ok_affine = worst <= 2e-2;
        all &= ok_affine;
        lines.push(format!(
            "affine equivariance worst |A_T - T'A T|_F = {worst:.2e} (limit 2e-2){}",
            if ok_affine { "" } else { " <- FAIL" }
        ));

        let mut config = OracleConfig::plain(2);
        config.f_scale = 2.0;
        let scaled = catalog::radial_oracle(&p, &config).unwrap();
        let (a_c, _) = extract::extract_a(&scaled, &ladder, None).unwrap();
        let expected = a0.scale(2f64.sqrt());
        let frob = (&a_c - &expected)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let ok_scale = frob <= 2e-2;
        all &= ok_scale;
        lines.push(format!(
            "scaling consistency |A_2f - 2^(1/2) A|_F = {frob:.2e}{}",
            if ok_scale { "" } else { " <- FAIL" }
        ));
    }

    // the radial solutions satisfy their defining equation
    {
        let mut worst = 0.0f64;
        for (n, zeta) in [(3u32, (1i64, 2i64)), (2, (2, 1)), (4, (3, 2))] {
            let p = profile(n, zeta.0, zeta.1, 1e-12);
            for i in 0..=40 {
                let r = 0.1 * f64::powf(10.0, i as f64 * 5.0 / 40.0);
                let du = p.du_radial(r);
                let d2u = p.d2u_radial(r).unwrap();
                let defect = (d2u * (du / r).powi(n as i32 - 1) - p.f_eval(r)).abs()
                    / p.f_eval(r);
                worst = worst.max(defect);
            }
        }
        let ok = worst <= 10.0 * 1e-12;
        all &= ok;
        lines.push(format!(
            "radial equation identity defect {worst:.2e} (limit 1e-11){}",
            if ok { "" } else { " <- FAIL" }
        ));
    }

    let elapsed = start.elapsed().as_secs_f64();
    report(
        10,
        all && elapsed < 300.0,
        &format!("property suites\n  {}\n  {elapsed:.1}s", lines.join("\n  ")),
    );
}
