//! Cubic spline on a strictly increasing abscissa grid.
//!
//! Not-a-knot boundary conditions: the natural choice (vanishing second
//! derivative at the ends) injects an error wave whose derivative jumps
//! near the boundary grow as the samples densify, which poisons
//! finite-difference checks downstream. Grids shorter than four points
//! fall back to the natural condition.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 3 {
            return Err(Error::Domain(
                "spline needs at least 3 matching samples".into(),
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("spline abscissas must increase".into()));
        }
        let n = xs.len();
        let h = |i: usize| xs[i + 1] - xs[i];
        let d = |i: usize| (ys[i + 1] - ys[i]) / h(i) - (ys[i] - ys[i - 1]) / h(i - 1);

        if n == 3 {
            // single interior equation with natural ends
            let mut m = vec![0.0; 3];
            m[1] = d(1) / ((h(0) + h(1)) / 3.0);
            return Ok(CubicSpline { xs, ys, m });
        }

        // Tridiagonal system for the interior second derivatives
        // M_1..M_{n-2}, with the corner unknowns M_0 and M_{n-1} eliminated
        // through the not-a-knot conditions
        //   h1 M0 - (h0+h1) M1 + h0 M2 = 0,
        //   h_{n-3} M_{n-1} - (h_{n-3}+h_{n-2}) M_{n-2} + h_{n-2} M_{n-3} = 0.
        let count = n - 2;
        let mut sub = vec![0.0; count];
        let mut diag = vec![0.0; count];
        let mut sup = vec![0.0; count];
        let mut rhs = vec![0.0; count];
        for (row, i) in (1..n - 1).enumerate() {
            sub[row] = h(i - 1) / 6.0;
            diag[row] = (h(i - 1) + h(i)) / 3.0;
            sup[row] = h(i) / 6.0;
            rhs[row] = d(i);
        }
        // fold M_0 into the first row
        diag[0] += h(0) * (h(0) + h(1)) / (6.0 * h(1));
        sup[0] -= h(0) * h(0) / (6.0 * h(1));
        // fold M_{n-1} into the last row
        let hm = h(n - 2);
        let hp = h(n - 3);
        diag[count - 1] += hm * (hm + hp) / (6.0 * hp);
        sub[count - 1] -= hm * hm / (6.0 * hp);

        for i in 1..count {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut interior = vec![0.0; count];
        interior[count - 1] = rhs[count - 1] / diag[count - 1];
        for i in (0..count - 1).rev() {
            interior[i] = (rhs[i] - sup[i] * interior[i + 1]) / diag[i];
        }
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&interior);
        m[0] = ((h(0) + h(1)) * m[1] - h(0) * m[2]) / h(1);
        m[n - 1] = ((hp + hm) * m[n - 2] - hm * m[n - 3]) / hp;
        Ok(CubicSpline { xs, ys, m })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if x < lo || x > hi {
            return Err(Error::OutsideHull { r: x, lo, hi });
        }
        let i = match self
            .xs
            .binary_search_by(|probe| probe.partial_cmp(&x).unwrap())
        {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        Ok(a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_smooth_functions() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 0.7).sin()).collect();
        let s = CubicSpline::new(xs, ys).unwrap();
        for i in 0..400 {
            let x = 0.3 + i as f64 * 0.02;
            if x > 9.9 {
                break;
            }
            assert!((s.eval(x).unwrap() - (x * 0.7).sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_on_cubics_including_the_ends() {
        // not-a-knot reproduces a global cubic exactly
        let f = |x: f64| 2.0 * x * x * x - x * x + 3.0 * x - 5.0;
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let s = CubicSpline::new(xs, ys).unwrap();
        for i in 0..=55 {
            let x = i as f64 * 0.1;
            assert!(
                (s.eval(x).unwrap() - f(x)).abs() < 1e-10 * (1.0 + f(x).abs()),
                "x = {x}"
            );
        }
    }

    #[test]
    fn rejects_out_of_hull() {
        let s = CubicSpline::new(vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert!(s.eval(0.5).is_err());
        assert!(s.eval(3.5).is_err());
        assert!(s.eval(3.0).is_ok());
    }
}
