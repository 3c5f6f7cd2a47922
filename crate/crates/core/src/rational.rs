//! Exact rational parameters.
//!
//! Decay exponents are taken as reduced fractions so that the resonance
//! predicate `zeta*k + n*(j-k) == 2` is decidable in integer arithmetic
//! instead of through floating-point comparisons.

use std::fmt;

/// A reduced, positive rational number `num/den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational with zero denominator");
        let sign = if (num < 0) != (den < 0) { -1 } else { 1 };
        let g = gcd(num, den).max(1);
        Rational {
            num: sign * (num / g).abs(),
            den: (den / g).abs(),
        }
    }

    pub fn from_integer(n: i64) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn num(&self) -> i64 {
        self.num
    }

    pub fn den(&self) -> i64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    /// Exact comparison of `self` with the integer `n`.
    pub fn eq_integer(&self, n: i64) -> bool {
        self.den == 1 && self.num == n
    }

    /// Signed value of `2 - self*k - n*(j-k)` as an exact rational,
    /// returned as (numerator over `self.den`).
    ///
    /// Zero numerator means exact resonance.
    pub fn resonance_numerator(&self, n: u32, j: u32, k: u32) -> i64 {
        debug_assert!(k <= j);
        2 * self.den - self.num * k as i64 - n as i64 * self.den * (j - k) as i64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}
