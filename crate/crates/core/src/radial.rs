//! Radially symmetric source terms, their exact convex solutions, and the
//! matching expansions at infinity.
//!
//! The source is `f(r) = 1` for `r <= 1` and `f(r) = 1 + r^-zeta` for
//! `r >= 2`, glued by a smooth partition on `(1, 2)`. The solution
//!
//! ```text
//! u(r) = n^(1/n) * \int_0^r ( \int_0^s t^(n-1) f(t) dt )^(1/n) ds
//! ```
//!
//! solves `u'' (u'/r)^(n-1) = f` and behaves like `r^2/2` plus corrections
//! that this module expands in powers of `r` and `ln r`. Everything past
//! `r = 2` uses closed forms for the inner integral, and the deviation
//! `u - r^2/2` is accumulated directly so that residuals keep full
//! precision even when `r^2/2` has none to spare.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::quad;
use crate::rational::Rational;

/// Hard cap on the outer expansion index.
pub const J_MAX: u32 = 30;

/// Guard band for float-supplied exponents that are almost resonant.
pub const RESONANCE_TOL: f64 = 1e-9;

/// How far past the truncation order the dominant-omitted-term scan looks.
const OMITTED_SCAN_EXTRA: u32 = 8;

/// Anchor-radius ladder: 2.5, 3, 4, 8, 16, ..., 2^16.
fn anchor_ladder() -> impl Iterator<Item = f64> {
    [2.5, 3.0].into_iter().chain((2..=16).map(|p| f64::powi(2.0, p)))
}

#[derive(Debug, Clone)]
struct ProfileCache {
    /// \int_0^2 t^(n-1) f(t) dt
    c02: f64,
    /// u(2)
    u2: f64,
    /// C0 for zeta < n, C3 for zeta = n = 2; 0 in constant mode.
    mass_const: f64,
}

/// The source term `f` together with dimension and quadrature controls.
#[derive(Debug)]
pub struct RadialProfile {
    n: u32,
    zeta: Rational,
    quad_tol: f64,
    force_constant: bool,
    cache: OnceLock<ProfileCache>,
}

impl Clone for RadialProfile {
    fn clone(&self) -> Self {
        RadialProfile {
            n: self.n,
            zeta: self.zeta,
            quad_tol: self.quad_tol,
            force_constant: self.force_constant,
            cache: self.cache.clone(),
        }
    }
}

fn bump(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// Smooth partition: 0 for t <= 1, 1 for t >= 2.
pub fn blend(t: f64) -> f64 {
    let a = bump(t - 1.0);
    let b = bump(2.0 - t);
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        1.0
    } else {
        a / (a + b)
    }
}

impl RadialProfile {
    pub fn new(n: u32, zeta: Rational, quad_tol: f64, force_constant: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("dimension n = {n} must be >= 2")));
        }
        if zeta.num() <= 0 || zeta.to_f64() > 2.0 {
            return Err(Error::Domain(format!(
                "decay exponent zeta = {zeta} must lie in (0, 2]"
            )));
        }
        if !(quad_tol > 0.0 && quad_tol.is_finite()) {
            return Err(Error::Domain(format!("quad_tol = {quad_tol} must be positive")));
        }
        Ok(RadialProfile {
            n,
            zeta,
            quad_tol,
            force_constant,
            cache: OnceLock::new(),
        })
    }

    pub fn dimension(&self) -> u32 {
        self.n
    }

    pub fn zeta(&self) -> Rational {
        self.zeta
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn force_constant(&self) -> bool {
        self.force_constant
    }

    /// True when the expansion follows the `zeta = n = 2` log-squared branch.
    pub fn is_log_branch(&self) -> bool {
        self.n == 2 && self.zeta.eq_integer(2)
    }

    /// f(r) - 1, exactly zero outside the support of the decaying part.
    fn excess(&self, r: f64) -> f64 {
        if self.force_constant || r <= 1.0 {
            return 0.0;
        }
        let z = self.zeta.to_f64();
        if r >= 2.0 {
            r.powf(-z)
        } else {
            blend(r) * r.powf(-z)
        }
    }

    /// The source term itself.
    pub fn f_eval(&self, r: f64) -> f64 {
        1.0 + self.excess(r.abs())
    }

    fn cache(&self) -> &ProfileCache {
        self.cache.get_or_init(|| {
            let n = self.n;
            let nf = n as f64;
            let tol = (self.quad_tol * 0.1).max(1e-15);
            // \int_1^2 t^(n-1) (f(t)-1) dt; identically zero in constant mode.
            let excess_part = quad::integrate_plain(
                &|t: f64| t.powi(n as i32 - 1) * self.excess(t),
                1.0,
                2.0,
                tol,
                1e-300,
            )
            .expect("excess integral on [1,2] must converge")
            .value;
            let c02 = f64::powi(2.0, n as i32) / nf + excess_part;
            let mass_const = if self.force_constant {
                0.0
            } else if self.is_log_branch() {
                c02 - 2.0 - std::f64::consts::LN_2
            } else {
                let z = self.zeta.to_f64();
                c02 - f64::powi(2.0, n as i32) / nf - f64::powf(2.0, nf - z) / (nf - z)
            };
            let u2 = {
                let inner = |s: f64| {
                    let mass = self.mass_small(s);
                    nf.powf(1.0 / nf) * mass.powf(1.0 / nf)
                };
                0.5 + quad::integrate_plain(&inner, 1.0, 2.0, tol, 1e-300)
                    .expect("solution integral on [1,2] must converge")
                    .value
            };
            ProfileCache {
                c02,
                u2,
                mass_const,
            }
        })
    }

    /// Mass integral for s <= 2, without touching the cache (used to build it).
    fn mass_small(&self, s: f64) -> f64 {
        let n = self.n as i32;
        let head = s.powi(n) / self.n as f64;
        if s <= 1.0 || self.force_constant {
            return head;
        }
        let tol = (self.quad_tol * 0.1).max(1e-15);
        let tail = quad::integrate_plain(
            &|t: f64| t.powi(n - 1) * self.excess(t),
            1.0,
            s.min(2.0),
            tol,
            1e-300,
        )
        .expect("excess integral below 2 must converge")
        .value;
        head + tail
    }

    /// `\int_0^s t^(n-1) f(t) dt`, using closed splits past the glue region.
    pub fn mass_integral(&self, s: f64) -> f64 {
        assert!(s >= 0.0, "mass_integral needs s >= 0");
        if s <= 2.0 {
            return self.mass_small(s);
        }
        let nf = self.n as f64;
        let cache = self.cache();
        let power_part = (s.powi(self.n as i32) - f64::powi(2.0, self.n as i32)) / nf;
        let decay_part = if self.force_constant {
            0.0
        } else if self.is_log_branch() {
            (s / 2.0).ln()
        } else {
            let z = self.zeta.to_f64();
            (s.powf(nf - z) - f64::powf(2.0, nf - z)) / (nf - z)
        };
        cache.c02 + power_part + decay_part
    }

    /// Relative deviation of the integrand from its quadratic-branch value:
    /// `n * mass(s) / s^n - 1` for s >= 2, evaluated without cancellation.
    fn mass_excess_ratio(&self, s: f64) -> f64 {
        if self.force_constant {
            return 0.0;
        }
        let nf = self.n as f64;
        let c = self.cache();
        if self.is_log_branch() {
            (2.0 * s.ln() + 2.0 * c.mass_const) / (s * s)
        } else {
            let z = self.zeta.to_f64();
            nf / (nf - z) * s.powf(-z) + nf * c.mass_const * s.powf(-nf)
        }
    }

    /// `u(r) - r^2/2` past the glue region, accumulated directly.
    fn tail_deviation(&self, r: f64) -> f64 {
        debug_assert!(r >= 2.0);
        let nf = self.n as f64;
        let c = self.cache();
        let integrand = |s: f64| {
            let x = self.mass_excess_ratio(s);
            s * f64::exp_m1(x.ln_1p() / nf)
        };
        let corr = quad::integrate_plain(&integrand, 2.0, r, self.quad_tol, 1e-300)
            .expect("deviation integral must converge")
            .value;
        (c.u2 - 2.0) + corr
    }

    /// The exact solution `u(r)`.
    pub fn u_radial(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "u_radial needs r >= 0");
        if r <= 1.0 {
            return 0.5 * r * r;
        }
        let nf = self.n as f64;
        if r <= 2.0 {
            let inner = |s: f64| nf.powf(1.0 / nf) * self.mass_small(s).powf(1.0 / nf);
            return 0.5
                + quad::integrate_plain(&inner, 1.0, r, self.quad_tol, 1e-300)
                    .expect("solution integral must converge")
                    .value;
        }
        self.cache().u2 + (r * r - 4.0) / 2.0 + (self.tail_deviation(r) - (self.cache().u2 - 2.0))
    }

    /// `u(r) - r^2/2` without catastrophic cancellation at large radii.
    pub fn u_minus_quadratic(&self, r: f64) -> f64 {
        assert!(r >= 0.0);
        if r <= 1.0 {
            return 0.0;
        }
        if r <= 2.0 {
            return self.u_radial(r) - 0.5 * r * r;
        }
        self.tail_deviation(r)
    }

    /// First derivative `u'(r) = n^(1/n) mass(r)^(1/n)`.
    pub fn du_radial(&self, r: f64) -> f64 {
        assert!(r >= 0.0);
        if r == 0.0 {
            return 0.0;
        }
        let nf = self.n as f64;
        nf.powf(1.0 / nf) * self.mass_integral(r).powf(1.0 / nf)
    }

    /// Second derivative from the radial equation `u'' (u'/r)^(n-1) = f`.
    ///
    /// The removable limit at r = 0 is `f(0)^(1/n)`; the origin itself is
    /// rejected because `u'/r` is 0/0 there.
    pub fn d2u_radial(&self, r: f64) -> Result<f64> {
        if r <= 0.0 {
            return Err(Error::Domain(
                "d2u_radial needs r > 0 (limit at 0 is f(0)^(1/n))".into(),
            ));
        }
        let du = self.du_radial(r);
        Ok(self.f_eval(r) * (r / du).powi(self.n as i32 - 1))
    }

    /// Key-value serialization of the profile.
    pub fn to_kv(&self) -> String {
        format!(
            "n = {}\nzeta_num = {}\nzeta_den = {}\nquad_tol = {:e}\nforce_constant = {}\n",
            self.n,
            self.zeta.num(),
            self.zeta.den(),
            self.quad_tol,
            self.force_constant
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut n = None;
        let mut num = None;
        let mut den = None;
        let mut tol = 1e-10f64;
        let mut fc = false;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_err = |k: &str| Error::Config(format!("cannot parse value for '{k}'"));
            match key {
                "n" => n = Some(value.parse::<u32>().map_err(|_| parse_err(key))?),
                "zeta_num" => num = Some(value.parse::<i64>().map_err(|_| parse_err(key))?),
                "zeta_den" => den = Some(value.parse::<i64>().map_err(|_| parse_err(key))?),
                "quad_tol" => tol = value.parse::<f64>().map_err(|_| parse_err(key))?,
                "force_constant" => fc = value.parse::<bool>().map_err(|_| parse_err(key))?,
                _ => return Err(Error::Config(format!("unknown profile key '{key}'"))),
            }
        }
        let n = n.ok_or_else(|| Error::Config("missing 'n'".into()))?;
        let num = num.ok_or_else(|| Error::Config("missing 'zeta_num'".into()))?;
        let den = den.ok_or_else(|| Error::Config("missing 'zeta_den'".into()))?;
        RadialProfile::new(n, Rational::new(num, den), tol, fc)
    }
}

/// Constants of the expansion at infinity.
///
/// `c0`, `c1`, `c2` belong to the power branch (`zeta < n`); `c3`, `c4` to
/// the log-squared branch (`zeta = n = 2`). Unused entries are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// `u` evaluated at the anchor radius.
    pub c_r: f64,
    /// Anchor radius `R` from the smallness ladder.
    pub anchor_radius: f64,
}

impl ExpansionConstants {
    /// Constants for the constant-source oracle, whose expansion is exactly
    /// the quadratic.
    pub fn trivial() -> Self {
        ExpansionConstants {
            c0: 0.0,
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            c4: 0.0,
            c_r: 3.125,
            anchor_radius: 2.5,
        }
    }
}

/// One product-coefficient block: prod_{i=0}^{j-1} (1/n - i).
fn falling_binomial_products(n: u32, j_max: u32) -> Vec<f64> {
    let inv_n = 1.0 / n as f64;
    let mut out = Vec::with_capacity(j_max as usize + 1);
    out.push(1.0); // unused j = 0 slot
    let mut acc = 1.0;
    for j in 0..j_max {
        acc *= inv_n - j as f64;
        out.push(acc);
    }
    out
}

fn factorials(up_to: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(up_to as usize + 1);
    let mut acc = 1.0f64;
    out.push(1.0);
    for k in 1..=up_to {
        acc *= k as f64;
        out.push(acc);
    }
    out
}

/// A single expansion term `coeff * r^r_power * (ln r)^ln_power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTerm {
    pub coeff: f64,
    pub r_power: f64,
    pub ln_power: u32,
}

/// Order `(r_power, ln_power)` of the dominant term dropped by truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmittedOrder {
    pub r_power: f64,
    pub ln_power: u32,
}

/// Truncated expansion of `u` at infinity.
#[derive(Debug, Clone)]
pub struct ExpansionSeries {
    pub terms: Vec<SeriesTerm>,
    pub constants: ExpansionConstants,
    pub truncation_order: u32,
    /// `None` when the truncated series is already exact (constant source).
    pub first_omitted: Option<OmittedOrder>,
}

/// Checks every index pair in range for near-resonances that are not exact.
fn guard_resonances(n: u32, zeta: Rational, j_hi: u32) -> Result<()> {
    for j in 1..=j_hi {
        for k in 0..=j {
            let num = zeta.resonance_numerator(n, j, k);
            if num != 0 {
                let gap = num.abs() as f64 / zeta.den() as f64;
                if gap < RESONANCE_TOL {
                    return Err(Error::DegenerateResonance { j, k, gap });
                }
            }
        }
    }
    Ok(())
}

/// Enumerate the power-branch terms with outer index `j`, split into
/// non-resonant terms (power != 0 after integration) and the resonant
/// contribution to the `ln r` coefficient.
struct PowerBranch {
    n: u32,
    zeta: Rational,
    c0: f64,
    products: Vec<f64>,
    fact: Vec<f64>,
}

impl PowerBranch {
    fn new(n: u32, zeta: Rational, c0: f64, j_hi: u32) -> Self {
        PowerBranch {
            n,
            zeta,
            c0,
            products: falling_binomial_products(n, j_hi),
            fact: factorials(j_hi),
        }
    }

    /// Raw multinomial coefficient of `s^(1 - zeta k - n (j-k))` in the
    /// integrand expansion.
    fn raw_coeff(&self, j: u32, k: u32) -> f64 {
        let nf = self.n as f64;
        let z = self.zeta.to_f64();
        self.products[j as usize] / (self.fact[k as usize] * self.fact[(j - k) as usize])
            * nf.powi(j as i32)
            * self.c0.powi((j - k) as i32)
            / (nf - z).powi(k as i32)
    }

    fn is_resonant(&self, j: u32, k: u32) -> bool {
        self.zeta.resonance_numerator(self.n, j, k) == 0
    }

    fn r_power(&self, j: u32, k: u32) -> f64 {
        2.0 - self.zeta.to_f64() * k as f64 - self.n as f64 * (j - k) as f64
    }

    /// Integrated (non-resonant) term coefficient.
    fn term_coeff(&self, j: u32, k: u32) -> f64 {
        self.raw_coeff(j, k) / self.r_power(j, k)
    }
}

/// Enumerate the log-branch (`zeta = n = 2`) triple-sum terms for `j >= 2`.
struct LogBranch {
    c3: f64,
    products: Vec<f64>,
    fact: Vec<f64>,
}

impl LogBranch {
    fn new(c3: f64, j_hi: u32) -> Self {
        LogBranch {
            c3,
            products: falling_binomial_products(2, j_hi),
            fact: factorials(j_hi),
        }
    }

    /// Coefficient of `r^(2-2j) (ln r)^(k-l)`, sign included.
    fn term_coeff(&self, j: u32, k: u32, l: u32) -> f64 {
        debug_assert!(j >= 2 && k <= j && l <= k);
        -self.products[j as usize]
            * f64::powi(2.0, j as i32 - l as i32 - 1)
            * self.c3.powi((j - k) as i32)
            / (self.fact[(j - k) as usize]
                * self.fact[(k - l) as usize]
                * ((j - 1) as f64).powi(l as i32 + 1))
    }
}

/// Derive the expansion constants from quadrature.
///
/// Fails in constant mode (the expansion is trivially `r^2/2` there) and when
/// no ladder radius satisfies the smallness condition.
pub fn compute_constants(profile: &RadialProfile, series_tol: f64) -> Result<ExpansionConstants> {
    if profile.force_constant() {
        return Err(Error::Domain(
            "compute_constants refuses constant mode; the expansion is exact".into(),
        ));
    }
    let n = profile.dimension();
    let nf = n as f64;
    let zeta = profile.zeta();
    let z = zeta.to_f64();
    guard_resonances(n, zeta, J_MAX + OMITTED_SCAN_EXTRA)?;

    let cache_const = {
        profile.cache().mass_const
    };

    if profile.is_log_branch() {
        let c3 = cache_const;
        let anchor = anchor_ladder()
            .find(|&r| 2.0 * r.powi(-2) * r.ln() + 2.0 * c3.abs() * r.powi(-2) < 1.0)
            .ok_or(Error::NoAnchorRadius)?;
        let c_r = profile.u_radial(anchor);
        let branch = LogBranch::new(c3, J_MAX);
        let ln_r = anchor.ln();
        let mut sum = 0.0;
        for j in 2..=J_MAX {
            let mut block = 0.0;
            for k in 0..=j {
                for l in 0..=k {
                    block += branch.term_coeff(j, k, l)
                        * anchor.powi(2 - 2 * j as i32)
                        * ln_r.powi((k - l) as i32);
                }
            }
            sum += block;
            if block.abs() < series_tol * sum.abs().max(1e-300) {
                break;
            }
        }
        // u(R) = R^2/2 + (ln R)^2/2 + C3 ln R + C4 + sum, with the signed
        // series coefficients already carried by `sum`
        let c4 = c_r - anchor * anchor / 2.0 - ln_r * ln_r / 2.0 - c3 * ln_r - sum;
        return Ok(ExpansionConstants {
            c0: 0.0,
            c1: 0.0,
            c2: 0.0,
            c3,
            c4,
            c_r,
            anchor_radius: anchor,
        });
    }

    let c0 = cache_const;
    let anchor = anchor_ladder()
        .find(|&r| nf / (nf - z) * r.powf(-z) + nf * c0.abs() * r.powf(-nf) < 1.0)
        .ok_or(Error::NoAnchorRadius)?;
    let c_r = profile.u_radial(anchor);
    let branch = PowerBranch::new(n, zeta, c0, J_MAX);

    // C1 collects the resonant multinomial coefficients.
    let mut c1 = 0.0;
    for j in 1..=J_MAX {
        for k in 0..=j {
            if branch.is_resonant(j, k) {
                c1 += branch.raw_coeff(j, k);
            }
        }
    }

    // Non-resonant tail evaluated at the anchor radius.
    let mut tail_at_anchor = 0.0;
    for j in 1..=J_MAX {
        let mut block = 0.0;
        for k in 0..=j {
            if branch.is_resonant(j, k) {
                continue;
            }
            block += branch.term_coeff(j, k) * anchor.powf(branch.r_power(j, k));
        }
        tail_at_anchor += block;
        if j > 1 && block.abs() < series_tol * tail_at_anchor.abs().max(1e-300) {
            break;
        }
    }
    let c2 = c_r - anchor * anchor / 2.0 - c1 * anchor.ln() - tail_at_anchor;
    Ok(ExpansionConstants {
        c0,
        c1,
        c2,
        c3: 0.0,
        c4: 0.0,
        c_r,
        anchor_radius: anchor,
    })
}

impl ExpansionSeries {
    /// Assemble the truncated expansion with outer index `j <= truncation`.
    pub fn build(
        profile: &RadialProfile,
        constants: &ExpansionConstants,
        truncation: u32,
    ) -> Result<Self> {
        if !(1..=J_MAX).contains(&truncation) {
            return Err(Error::Domain(format!(
                "truncation order {truncation} outside 1..={J_MAX}"
            )));
        }
        if profile.force_constant() {
            return Ok(ExpansionSeries {
                terms: vec![SeriesTerm {
                    coeff: 0.5,
                    r_power: 2.0,
                    ln_power: 0,
                }],
                constants: *constants,
                truncation_order: truncation,
                first_omitted: None,
            });
        }
        let n = profile.dimension();
        let zeta = profile.zeta();
        guard_resonances(n, zeta, truncation + OMITTED_SCAN_EXTRA)?;

        let mut terms = vec![SeriesTerm {
            coeff: 0.5,
            r_power: 2.0,
            ln_power: 0,
        }];
        let first_omitted;

        if profile.is_log_branch() {
            let branch = LogBranch::new(constants.c3, truncation + OMITTED_SCAN_EXTRA);
            terms.push(SeriesTerm {
                coeff: 0.5,
                r_power: 0.0,
                ln_power: 2,
            });
            if constants.c3 != 0.0 {
                terms.push(SeriesTerm {
                    coeff: constants.c3,
                    r_power: 0.0,
                    ln_power: 1,
                });
            }
            terms.push(SeriesTerm {
                coeff: constants.c4,
                r_power: 0.0,
                ln_power: 0,
            });
            for j in 2..=truncation {
                for k in 0..=j {
                    for l in 0..=k {
                        let coeff = branch.term_coeff(j, k, l);
                        if coeff != 0.0 {
                            terms.push(SeriesTerm {
                                coeff,
                                r_power: 2.0 - 2.0 * j as f64,
                                ln_power: k - l,
                            });
                        }
                    }
                }
            }
            // Dominant omitted block: outer index truncation+1, highest log power.
            let j = truncation + 1;
            first_omitted = Some(OmittedOrder {
                r_power: 2.0 - 2.0 * j as f64,
                ln_power: j,
            });
        } else {
            let branch = PowerBranch::new(n, zeta, constants.c0, truncation + OMITTED_SCAN_EXTRA);
            if constants.c1 != 0.0 {
                terms.push(SeriesTerm {
                    coeff: constants.c1,
                    r_power: 0.0,
                    ln_power: 1,
                });
            }
            terms.push(SeriesTerm {
                coeff: constants.c2,
                r_power: 0.0,
                ln_power: 0,
            });
            for j in 1..=truncation {
                for k in 0..=j {
                    if branch.is_resonant(j, k) {
                        continue;
                    }
                    let coeff = branch.term_coeff(j, k);
                    if coeff != 0.0 {
                        terms.push(SeriesTerm {
                            coeff,
                            r_power: branch.r_power(j, k),
                            ln_power: 0,
                        });
                    }
                }
            }
            let mut best: Option<OmittedOrder> = None;
            for j in truncation + 1..=truncation + OMITTED_SCAN_EXTRA {
                for k in 0..=j {
                    if branch.is_resonant(j, k) || branch.term_coeff(j, k).abs() < 1e-290 {
                        continue;
                    }
                    let power = branch.r_power(j, k);
                    if best.is_none_or(|b| power > b.r_power) {
                        best = Some(OmittedOrder {
                            r_power: power,
                            ln_power: 0,
                        });
                    }
                }
            }
            first_omitted = best;
        }

        terms.sort_by(|a, b| {
            b.r_power
                .partial_cmp(&a.r_power)
                .unwrap()
                .then(b.ln_power.cmp(&a.ln_power))
        });
        Ok(ExpansionSeries {
            terms,
            constants: *constants,
            truncation_order: truncation,
            first_omitted,
        })
    }

    /// Value of the truncated expansion at `r`.
    pub fn eval(&self, r: f64) -> f64 {
        0.5 * r * r + self.eval_tail(r)
    }

    /// Expansion minus `r^2/2`, summed without forming the quadratic.
    pub fn eval_tail(&self, r: f64) -> f64 {
        let ln_r = r.ln();
        let mut acc = 0.0;
        for t in &self.terms {
            if t.r_power == 2.0 && t.ln_power == 0 {
                continue;
            }
            acc += t.coeff * r.powf(t.r_power) * ln_r.powi(t.ln_power as i32);
        }
        acc
    }
}

/// Evaluate the truncated expansion; returns the value and the order of the
/// dominant omitted term.
pub fn expansion_eval(
    profile: &RadialProfile,
    constants: &ExpansionConstants,
    r: f64,
    truncation: u32,
) -> Result<(f64, Option<OmittedOrder>)> {
    if !profile.force_constant() && r <= constants.anchor_radius {
        return Err(Error::Domain(format!(
            "expansion_eval needs r > anchor radius {}, got {r}",
            constants.anchor_radius
        )));
    }
    let series = ExpansionSeries::build(profile, constants, truncation)?;
    Ok((series.eval(r), series.first_omitted))
}

/// Residuals `u - expansion` on a list of radii, computed in deviation form.
pub fn expansion_residual(
    profile: &RadialProfile,
    constants: &ExpansionConstants,
    radii: &[f64],
    truncation: u32,
) -> Result<Vec<(f64, f64)>> {
    let series = ExpansionSeries::build(profile, constants, truncation)?;
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        if !profile.force_constant() && r <= constants.anchor_radius {
            return Err(Error::Domain(format!(
                "residual radius {r} not above anchor {}",
                constants.anchor_radius
            )));
        }
        let residual = profile.u_minus_quadratic(r) - series.eval_tail(r);
        out.push((r, residual));
    }
    Ok(out)
}
