//! Hyper-dual numbers: exact first and second derivatives by forward-mode
//! differentiation, with no step-size error.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar types the model's closed forms can be evaluated on.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + From<f64>
{
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, n: f64) -> Self;
    fn value(self) -> f64;
}

impl Real for f64 {
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powf(self, n: f64) -> Self {
        f64::powf(self, n)
    }
    fn value(self) -> f64 {
        self
    }
}

/// `re + d1 e1 + d2 e2 + d12 e1 e2` with `e1^2 = e2^2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual {
    pub re: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl HyperDual {
    pub fn constant(v: f64) -> Self {
        HyperDual { re: v, d1: 0.0, d2: 0.0, d12: 0.0 }
    }

    /// Seed the independent variable: `f(variable(x))` carries `f(x)`, `f'(x)`
    /// and `f''(x)`.
    pub fn variable(x: f64) -> Self {
        HyperDual { re: x, d1: 1.0, d2: 1.0, d12: 0.0 }
    }

    pub fn first(&self) -> f64 {
        self.d1
    }

    pub fn second(&self) -> f64 {
        self.d12
    }

    fn lift(self, g: f64, g1: f64, g2: f64) -> Self {
        HyperDual {
            re: g,
            d1: g1 * self.d1,
            d2: g1 * self.d2,
            d12: g1 * self.d12 + g2 * self.d1 * self.d2,
        }
    }

    fn recip(self) -> Self {
        let a = self.re;
        self.lift(1.0 / a, -1.0 / (a * a), 2.0 / (a * a * a))
    }
}

impl From<f64> for HyperDual {
    fn from(v: f64) -> Self {
        HyperDual::constant(v)
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        HyperDual {
            re: self.re + o.re,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            d12: self.d12 + o.d12,
        }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        HyperDual { re: -self.re, d1: -self.d1, d2: -self.d2, d12: -self.d12 }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        HyperDual {
            re: self.re * o.re,
            d1: self.re * o.d1 + self.d1 * o.re,
            d2: self.re * o.d2 + self.d2 * o.re,
            d12: self.re * o.d12 + self.d1 * o.d2 + self.d2 * o.d1 + self.d12 * o.re,
        }
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Real for HyperDual {
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.lift(e, e, e)
    }
    fn ln(self) -> Self {
        let a = self.re;
        self.lift(a.ln(), 1.0 / a, -1.0 / (a * a))
    }
    fn powf(self, n: f64) -> Self {
        let a = self.re;
        self.lift(a.powf(n), n * a.powf(n - 1.0), n * (n - 1.0) * a.powf(n - 2.0))
    }
    fn value(self) -> f64 {
        self.re
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_composites() {
        // f(x) = x^3 e^x / ln x at x = 2.
        let x = HyperDual::variable(2.0);
        let f = x.powf(3.0) * x.exp() / x.ln();
        let g = |x: f64| x.powi(3) * x.exp() / x.ln();
        let h = 1e-4;
        let fd1 = (g(2.0 + h) - g(2.0 - h)) / (2.0 * h);
        let fd2 = (g(2.0 + h) - 2.0 * g(2.0) + g(2.0 - h)) / (h * h);
        assert!((f.re - g(2.0)).abs() < 1e-12);
        assert!((f.first() - fd1).abs() / fd1.abs() < 1e-7);
        assert!((f.second() - fd2).abs() / fd2.abs() < 1e-5);
    }

    #[test]
    fn linear_map_has_zero_curvature() {
        let x = HyperDual::variable(7.3);
        let y = HyperDual::constant(2.5) * x;
        assert_eq!(y.first(), 2.5);
        assert_eq!(y.second(), 0.0);
    }
}
