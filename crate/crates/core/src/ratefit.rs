//! Least-squares estimation of power-log laws `C * r^gamma * (ln r)^p`.
//!
//! The log power is an integer chosen by model selection: for each candidate
//! `p` the model `ln|w| = ln|C| + gamma ln r + p ln ln r` is fitted by
//! ordinary least squares in `(1, ln r)`, and a larger `p` is accepted only
//! when it beats the running best root-mean-square residual by more than the
//! parsimony margin. Samples at or below `r = e` are dropped because
//! `ln ln r` is not usable there.

use crate::error::{Error, Result};

/// Parsimony margin: a larger log power must improve the rms residual by
/// more than this fraction of the incumbent rms AND by more than this many
/// log units before it is selected. The absolute part keeps a spurious log
/// factor from absorbing sub-percent wiggles of an already-tight power fit;
/// resolving a genuine log power needs a window whose `ln ln r` curvature
/// exceeds this margin, which four octaves above e^2 always provide.
pub const PARSIMONY_MARGIN: f64 = 0.02;

/// Default candidate log powers.
pub const DEFAULT_LOG_POWERS: &[u32] = &[0, 1, 2];

/// Whether the fit uses magnitudes or requires one consistent sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMode {
    Abs,
    Signed,
}

/// Fitted law `coeff * r^gamma * (ln r)^p`.
#[derive(Debug, Clone, Copy)]
pub struct RateFitResult {
    pub gamma: f64,
    pub log_power: u32,
    pub coeff: f64,
    /// Root-mean-square residual of `ln|w|` under the selected model.
    pub rms_residual: f64,
    /// Octaves spanned by the samples that entered the fit.
    pub octaves: u32,
    /// Samples dropped (zeros in abs mode, radii at or below e).
    pub dropped: usize,
}

/// kept samples, common sign, dropped count
type Prepared = (Vec<(f64, f64)>, f64, usize);

fn prepare(samples: &[(f64, f64)], sign_mode: SignMode) -> Result<Prepared> {
    let mut kept = Vec::with_capacity(samples.len());
    let mut dropped = 0usize;
    let mut sign = 0.0f64;
    for &(r, w) in samples {
        if r <= std::f64::consts::E {
            dropped += 1;
            continue;
        }
        if w == 0.0 {
            if sign_mode == SignMode::Signed {
                return Err(Error::EmptyFit);
            }
            dropped += 1;
            continue;
        }
        if sign_mode == SignMode::Signed {
            let s = w.signum();
            if sign == 0.0 {
                sign = s;
            } else if s != sign {
                return Err(Error::Domain(
                    "signed fit requires samples of one consistent sign".into(),
                ));
            }
        }
        kept.push((r, w.abs()));
    }
    if kept.is_empty() {
        return Err(Error::EmptyFit);
    }
    if sign == 0.0 {
        sign = 1.0;
    }
    Ok((kept, sign, dropped))
}

fn span_octaves(kept: &[(f64, f64)]) -> f64 {
    let lo = kept.iter().map(|&(r, _)| r).fold(f64::INFINITY, f64::min);
    let hi = kept.iter().map(|&(r, _)| r).fold(0.0f64, f64::max);
    (hi / lo).log2()
}

/// Two-parameter least squares of `y = a + b x`; returns (a, b, rms).
fn affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let mut ss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let e = y - a - b * x;
        ss += e * e;
    }
    (a, b, (ss / n).sqrt())
}

/// Fit with the log power chosen from an explicit candidate list.
pub fn fit_rate_with_powers(
    samples: &[(f64, f64)],
    sign_mode: SignMode,
    powers: &[u32],
) -> Result<RateFitResult> {
    let (kept, sign, dropped) = prepare(samples, sign_mode)?;
    if kept.len() < 12 {
        return Err(Error::InsufficientSpan {
            octaves: span_octaves(&kept),
            needed: 3,
        });
    }
    let octaves = span_octaves(&kept);
    if octaves < 3.0 {
        return Err(Error::InsufficientSpan { octaves, needed: 3 });
    }

    let ts: Vec<f64> = kept.iter().map(|&(r, _)| r.ln()).collect();
    let lls: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = kept.iter().map(|&(_, w)| w.ln()).collect();

    let mut best: Option<(u32, f64, f64, f64)> = None; // (p, a, b, rms)
    for &p in powers {
        let shifted: Vec<f64> = ys
            .iter()
            .zip(&lls)
            .map(|(y, ll)| y - p as f64 * ll)
            .collect();
        let (a, b, rms) = affine_fit(&ts, &shifted);
        match best {
            None => best = Some((p, a, b, rms)),
            Some((_, _, _, best_rms)) => {
                if rms < (1.0 - PARSIMONY_MARGIN) * best_rms
                    && best_rms - rms > PARSIMONY_MARGIN
                {
                    best = Some((p, a, b, rms));
                }
            }
        }
    }
    let (p, a, b, rms) = best.unwrap();
    Ok(RateFitResult {
        gamma: b,
        log_power: p,
        coeff: sign * a.exp(),
        rms_residual: rms,
        octaves: octaves.floor() as u32,
        dropped,
    })
}

/// Fit `C r^gamma (ln r)^p` with `p` selected from {0, 1, 2}.
pub fn fit_rate(samples: &[(f64, f64)], sign_mode: SignMode) -> Result<RateFitResult> {
    fit_rate_with_powers(samples, sign_mode, DEFAULT_LOG_POWERS)
}

/// One-dimensional least squares for the coefficient with the law fixed.
///
/// Returns `(coeff, rms_residual)` of `ln|w|` about the fixed-law prediction.
pub fn fit_rate_fixed(
    samples: &[(f64, f64)],
    gamma: f64,
    log_power: u32,
    sign_mode: SignMode,
) -> Result<(f64, f64)> {
    let (kept, sign, _dropped) = prepare(samples, sign_mode)?;
    if kept.len() < 12 {
        return Err(Error::InsufficientSpan {
            octaves: span_octaves(&kept),
            needed: 3,
        });
    }
    let octaves = span_octaves(&kept);
    if octaves < 3.0 {
        return Err(Error::InsufficientSpan { octaves, needed: 3 });
    }
    let n = kept.len() as f64;
    let mut mean = 0.0;
    for &(r, w) in &kept {
        let t = r.ln();
        mean += w.ln() - gamma * t - log_power as f64 * t.ln();
    }
    mean /= n;
    let mut ss = 0.0;
    for &(r, w) in &kept {
        let t = r.ln();
        let e = w.ln() - gamma * t - log_power as f64 * t.ln() - mean;
        ss += e * e;
    }
    Ok((sign * mean.exp(), (ss / n).sqrt()))
}

/// Log-spaced radii: `per_octave` samples per octave over `[lo, hi]`.
pub fn log_spaced_radii(lo: f64, hi: f64, per_octave: u32) -> Vec<f64> {
    assert!(hi > lo && lo > 0.0 && per_octave > 0);
    let octaves = (hi / lo).log2();
    let count = (octaves * per_octave as f64).round() as usize;
    (0..=count)
        .map(|i| lo * f64::powf(2.0, i as f64 * octaves / count as f64))
        .collect()
}
