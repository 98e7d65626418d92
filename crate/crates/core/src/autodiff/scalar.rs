use std::ops::{Add, Mul, Neg, Sub};

/// Arithmetic shared by plain floats, tape variables and dual numbers.
///
/// Everything the surrogate's forward pass needs is expressed through this
/// trait so that one generic implementation serves plain evaluation,
/// forward-mode input derivatives and reverse-mode parameter gradients.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    /// A constant living in the same context as `self` (same tape, zero tangents).
    fn lift(&self, c: f64) -> Self;

    /// The underlying real value.
    fn primal(&self) -> f64;

    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn scale(self, c: f64) -> Self {
        self * self.lift(c)
    }

    fn shift(self, c: f64) -> Self {
        self + self.lift(c)
    }

    fn recip(self) -> Self {
        self.powi(-1)
    }

    /// Logistic sigmoid `1 / (1 + e^-x)`.
    fn sigmoid(self) -> Self {
        (-self).exp().shift(1.0).recip()
    }

    /// Branch on primal values; the derivative follows the selected branch.
    fn max_by_primal(self, other: Self) -> Self {
        if self.primal() >= other.primal() {
            self
        } else {
            other
        }
    }
}

impl Scalar for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }

    fn primal(&self) -> f64 {
        *self
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn ln(self) -> Self {
        f64::ln(self)
    }

    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }

    fn sigmoid(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }
}
