//! Hierarchic 1D shape functions (integrated Legendre polynomials) and
//! Gauss-Legendre quadrature rules.
//!
//! The 1D basis of degree `p` has `p + 1` modes: the two linear hat functions
//! `N1 = (1 - xi)/2`, `N2 = (1 + xi)/2`, followed by the internal modes
//! `N_{j+1}(xi) = (P_j(xi) - P_{j-2}(xi)) / sqrt(4j - 2)` for `j = 2..=p`,
//! which vanish at both ends. Raising `p` extends the mode set without
//! changing the existing modes.

use crate::error::{Error, Result};

/// 1D hierarchic basis of a fixed polynomial degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeBasis {
    degree: usize,
}

impl ShapeBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Geometry("basis degree must be >= 1".into()));
        }
        Ok(Self { degree })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of 1D modes, `p + 1`.
    pub fn mode_count(&self) -> usize {
        self.degree + 1
    }

    /// Evaluate all modes and their xi-derivatives at `xi` in `[-1, 1]`.
    pub fn eval(&self, xi: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(-1.0..=1.0).contains(&xi) {
            return Err(Error::BasisDomain(xi));
        }
        Ok(self.eval_unchecked(xi))
    }

    /// Evaluation without the domain check, for inner loops on quadrature
    /// points that are inside by construction.
    pub fn eval_unchecked(&self, xi: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.mode_count();
        let mut values = vec![0.0; n];
        let mut derivs = vec![0.0; n];
        values[0] = 0.5 * (1.0 - xi);
        values[1] = 0.5 * (1.0 + xi);
        derivs[0] = -0.5;
        derivs[1] = 0.5;

        if self.degree >= 2 {
            // Legendre values P_0..P_p by the three-term recurrence.
            let mut p = vec![0.0; self.degree + 1];
            p[0] = 1.0;
            p[1] = xi;
            for j in 2..=self.degree {
                let jf = j as f64;
                p[j] = ((2.0 * jf - 1.0) * xi * p[j - 1] - (jf - 1.0) * p[j - 2]) / jf;
            }
            for j in 2..=self.degree {
                let jf = j as f64;
                let scale = (4.0 * jf - 2.0).sqrt();
                values[j] = (p[j] - p[j - 2]) / scale;
                // d/dxi (P_j - P_{j-2}) = (2j - 1) P_{j-1}
                derivs[j] = (2.0 * jf - 1.0) * p[j - 1] / scale;
            }
        }
        (values, derivs)
    }
}

/// Gauss-Legendre rule with `n` points on `[-1, 1]`.
///
/// Nodes are found by Newton iteration seeded with the Chebyshev estimate;
/// accurate to machine precision for the rule sizes used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and its derivative at x.
            let mut p0 = 1.0;
            let mut p1 = x;
            if n == 1 {
                p1 = x;
            }
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn_1 = if n == 1 { 1.0 } else { p0 };
            pp = n as f64 * (x * pn - pn_1) / (x * x - 1.0);
            let dx = pn / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_rules_integrate_monomials_exactly() {
        // An n-point rule is exact for degree 2n-1.
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let quad: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(&xi, &wi)| wi * xi.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 0 {
                    2.0 / (deg as f64 + 1.0)
                } else {
                    0.0
                };
                assert_relative_eq!(quad, exact, epsilon = 1e-13, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn linear_modes_partition_unity() {
        let basis = ShapeBasis::new(3).unwrap();
        for &xi in &[-1.0, -0.3, 0.0, 0.7, 1.0] {
            let (v, _) = basis.eval(xi).unwrap();
            assert_relative_eq!(v[0] + v[1], 1.0, epsilon = 1e-14);
        }
        let (v, _) = basis.eval(0.0).unwrap();
        assert_relative_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn internal_modes_vanish_at_ends() {
        for p in 2..=6 {
            let basis = ShapeBasis::new(p).unwrap();
            for &xi in &[-1.0, 1.0] {
                let (v, _) = basis.eval(xi).unwrap();
                for j in 2..=p {
                    assert_relative_eq!(v[j], 0.0, epsilon = 1e-14);
                }
            }
        }
        let basis = ShapeBasis::new(2).unwrap();
        let (v, _) = basis.eval(-1.0).unwrap();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-15);
        let (v, _) = basis.eval(1.0).unwrap();
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_rejected() {
        let basis = ShapeBasis::new(2).unwrap();
        assert!(basis.eval(1.0 + 1e-9).is_err());
        assert!(basis.eval(-1.5).is_err());
    }

    /// Independent quadrature oracle for the internal-mode derivative
    /// products: with the 1/sqrt(4j-2) scaling, int N'_{j+1} N'_{j+1} = 1.
    #[test]
    fn internal_mode_derivative_norm_matches_quadrature() {
        let basis = ShapeBasis::new(4).unwrap();
        let (x, w) = gauss_legendre(16);
        for mode in 2..=4 {
            let mut integral = 0.0;
            for (&xi, &wi) in x.iter().zip(&w) {
                let (_, d) = basis.eval(xi).unwrap();
                integral += wi * d[mode] * d[mode];
            }
            assert_relative_eq!(integral, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let basis = ShapeBasis::new(5).unwrap();
        let h = 1e-6;
        for &xi in &[-0.9, -0.2, 0.4, 0.85] {
            let (_, d) = basis.eval(xi).unwrap();
            let (vp, _) = basis.eval(xi + h).unwrap();
            let (vm, _) = basis.eval(xi - h).unwrap();
            for j in 0..basis.mode_count() {
                let fd = (vp[j] - vm[j]) / (2.0 * h);
                assert_relative_eq!(d[j], fd, epsilon = 1e-8, max_relative = 1e-8);
            }
        }
    }
}
