use std::ops::{Add, Mul, Neg, Sub};

use super::Scalar;

/// Truncated second-order Taylor carrier along one input direction.
///
/// `d1` and `d2` hold the first and second derivatives of `v` with respect
/// to the seeded input. The component type is itself a [`Scalar`], so the
/// carrier can ride on a reverse-mode tape to differentiate expressions that
/// contain second input derivatives with respect to parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualOfDual<T> {
    pub v: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Scalar> DualOfDual<T> {
    /// The seeded input direction: tangent 1, curvature 0.
    pub fn seed(x: T) -> Self {
        Self {
            v: x,
            d1: x.lift(1.0),
            d2: x.lift(0.0),
        }
    }

    pub fn constant(x: T) -> Self {
        Self {
            v: x,
            d1: x.lift(0.0),
            d2: x.lift(0.0),
        }
    }

    /// Composes with a univariate `f` given `f`, `f'`, `f''` at `v`.
    fn chain(self, f0: T, f1: T, f2: T) -> Self {
        Self {
            v: f0,
            d1: f1 * self.d1,
            d2: f1 * self.d2 + f2 * self.d1 * self.d1,
        }
    }
}

impl<T: Scalar> Add for DualOfDual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            v: self.v + rhs.v,
            d1: self.d1 + rhs.d1,
            d2: self.d2 + rhs.d2,
        }
    }
}

impl<T: Scalar> Sub for DualOfDual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            v: self.v - rhs.v,
            d1: self.d1 - rhs.d1,
            d2: self.d2 - rhs.d2,
        }
    }
}

impl<T: Scalar> Mul for DualOfDual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let cross = self.d1 * rhs.d1;
        Self {
            v: self.v * rhs.v,
            d1: self.d1 * rhs.v + self.v * rhs.d1,
            d2: self.d2 * rhs.v + cross + cross + self.v * rhs.d2,
        }
    }
}

impl<T: Scalar> Neg for DualOfDual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

impl<T: Scalar> Scalar for DualOfDual<T> {
    fn lift(&self, c: f64) -> Self {
        Self::constant(self.v.lift(c))
    }

    fn primal(&self) -> f64 {
        self.v.primal()
    }

    fn tanh(self) -> Self {
        let y = self.v.tanh();
        let p = (y * y).scale(-1.0).shift(1.0);
        let q = (y * p).scale(-2.0);
        self.chain(y, p, q)
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    fn ln(self) -> Self {
        let inv = self.v.recip();
        self.chain(self.v.ln(), inv, -(inv * inv))
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return self.lift(1.0);
        }
        let f1 = self.v.powi(n - 1).scale(f64::from(n));
        let f2 = if n == 1 {
            self.v.lift(0.0)
        } else {
            self.v.powi(n - 2).scale(f64::from(n) * f64::from(n - 1))
        };
        self.chain(self.v.powi(n), f1, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D = DualOfDual<f64>;

    #[test]
    fn cubic_polynomial_is_exact() {
        // f(x) = 2x^3 - x + 4 at x = 1.5
        let x = D::seed(1.5);
        let f = (x * x * x).scale(2.0) - x + x.lift(4.0);
        assert_eq!(f.v, 2.0 * 3.375 - 1.5 + 4.0);
        assert_eq!(f.d1, 6.0 * 2.25 - 1.0);
        assert_eq!(f.d2, 12.0 * 1.5);
    }

    #[test]
    fn exp_ln_powi_derivatives() {
        let x = D::seed(0.7);
        let e = x.exp();
        assert!((e.d2 - 0.7f64.exp()).abs() < 1e-15);
        let l = x.ln();
        assert!((l.d1 - 1.0 / 0.7).abs() < 1e-14);
        assert!((l.d2 + 1.0 / 0.49).abs() < 1e-13);
        let p = x.powi(-1);
        assert!((p.d2 - 2.0 / 0.343).abs() < 1e-12);
        assert_eq!(x.powi(0), x.lift(1.0));
    }

    #[test]
    fn tanh_second_derivative_matches_closed_form() {
        let a = 0.4f64;
        let x = D::seed(a);
        let y = x.tanh();
        let t = a.tanh();
        assert!((y.d1 - (1.0 - t * t)).abs() < 1e-15);
        assert!((y.d2 + 2.0 * t * (1.0 - t * t)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_derivative() {
        let x = D::seed(0.3);
        let s = x.sigmoid();
        let sv = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((s.v - sv).abs() < 1e-15);
        assert!((s.d1 - sv * (1.0 - sv)).abs() < 1e-15);
        assert!((s.d2 - sv * (1.0 - sv) * (1.0 - 2.0 * sv)).abs() < 1e-15);
    }
}
