//! Scalar abstraction and forward-mode dual numbers.
//!
//! The analytic game solution is written once over a [`Scalar`] type. Running
//! it on `f64` gives values; running it on [`Dual`] gives values plus exact
//! directional derivatives; nesting `Dual<Dual<f64, 5>, 5>` gives the second
//! derivatives needed to differentiate through an opponent's learning step.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic interface shared by `f64` and dual numbers.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    /// Primal value, unwrapping all dual levels.
    fn value(self) -> f64;
    fn exp(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    /// Logistic sigmoid, numerically stable on both tails.
    fn sigmoid(self) -> Self {
        if self.value() >= 0.0 {
            let e = (-self).exp();
            Self::one() / (Self::one() + e)
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn value(self) -> f64 {
        self
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Forward-mode dual number with `N` simultaneous tangent directions.
#[derive(Clone, Copy, Debug)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub du: [T; N],
}

impl<T: Scalar, const N: usize> Dual<T, N> {
    pub fn constant(re: T) -> Self {
        Dual {
            re,
            du: [T::zero(); N],
        }
    }

    /// A variable seeded with unit tangent in direction `k`.
    pub fn seeded(re: T, k: usize) -> Self {
        let mut du = [T::zero(); N];
        du[k] = T::one();
        Dual { re, du }
    }
}

impl<T: Scalar, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (d, r) in du.iter_mut().zip(rhs.du) {
            *d = *d + r;
        }
        Dual {
            re: self.re + rhs.re,
            du,
        }
    }
}

impl<T: Scalar, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut du = self.du;
        for (d, r) in du.iter_mut().zip(rhs.du) {
            *d = *d - r;
        }
        Dual {
            re: self.re - rhs.re,
            du,
        }
    }
}

impl<T: Scalar, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut du = [T::zero(); N];
        for (d, (a, b)) in du.iter_mut().zip(self.du.iter().zip(rhs.du.iter())) {
            *d = *a * rhs.re + self.re * *b;
        }
        Dual {
            re: self.re * rhs.re,
            du,
        }
    }
}

impl<T: Scalar, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let re = self.re / rhs.re;
        let mut du = [T::zero(); N];
        for (d, (a, b)) in du.iter_mut().zip(self.du.iter().zip(rhs.du.iter())) {
            *d = (*a - re * *b) / rhs.re;
        }
        Dual { re, du }
    }
}

impl<T: Scalar, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut du = self.du;
        for d in du.iter_mut() {
            *d = -*d;
        }
        Dual { re: -self.re, du }
    }
}

impl<T: Scalar, const N: usize> Scalar for Dual<T, N> {
    fn from_f64(x: f64) -> Self {
        Dual::constant(T::from_f64(x))
    }

    fn value(self) -> f64 {
        self.re.value()
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        let mut du = self.du;
        for d in du.iter_mut() {
            *d = e * *d;
        }
        Dual { re: e, du }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D1 = Dual<f64, 1>;

    #[test]
    fn derivative_of_product_and_quotient() {
        // f(x) = x^2 / (1 + x) at x = 2: f = 4/3, f' = (2x(1+x) - x^2) / (1+x)^2 = 8/9.
        let x = D1::seeded(2.0, 0);
        let f = x * x / (D1::from_f64(1.0) + x);
        assert!((f.re - 4.0 / 3.0).abs() < 1e-12);
        assert!((f.du[0] - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_derivative() {
        let x = D1::seeded(0.3, 0);
        let s = x.sigmoid();
        let sv = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((s.re - sv).abs() < 1e-12);
        assert!((s.du[0] - sv * (1.0 - sv)).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extreme_inputs() {
        for &x in &[-500.0, 500.0] {
            let s = f64::sigmoid(x);
            assert!(s.is_finite());
            let d = D1::seeded(x, 0).sigmoid();
            assert!(d.re.is_finite() && d.du[0].is_finite());
        }
    }

    #[test]
    fn nested_dual_gives_second_derivative() {
        // f(x) = sigmoid(x); f''(x) = s(1-s)(1-2s).
        let x: Dual<D1, 1> = Dual::seeded(D1::seeded(0.7, 0), 0);
        let s = x.sigmoid();
        let sv = 1.0 / (1.0 + (-0.7f64).exp());
        let expect = sv * (1.0 - sv) * (1.0 - 2.0 * sv);
        assert!((s.du[0].du[0] - expect).abs() < 1e-12);
    }
}
