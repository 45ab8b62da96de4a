//! Forward-mode algorithmic differentiation.
//!
//! Model functions are written once against [`Scalar`] and evaluated either with
//! plain `f64`, with [`Dual`], which carries the value together with its
//! gradient with respect to `N` seeded inputs, or with [`Dual2`], which also
//! carries the Hessian. Branches (clamps, table cells)
//! are selected on the value, so derivatives are exact wherever the function is
//! differentiable.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn powi2(self) -> Self {
        self * self
    }

    /// Pointwise maximum; the derivative follows the selected branch.
    fn max_s(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }

    fn min_s(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }

    /// Clamp to `[lo, hi]`; outside the interval the result is constant.
    fn clamp_s(self, lo: f64, hi: f64) -> Self {
        let v = self.value();
        if v < lo {
            Self::cst(lo)
        } else if v > hi {
            Self::cst(hi)
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Value plus gradient with respect to `N` inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub du: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Dual { re, du: [0.0; N] }
    }

    /// Independent variable number `i`.
    pub fn variable(re: f64, i: usize) -> Self {
        let mut du = [0.0; N];
        du[i] = 1.0;
        Dual { re, du }
    }

    /// Seed all inputs at once.
    pub fn seed(values: [f64; N]) -> [Self; N] {
        let mut out = [Self::constant(0.0); N];
        for (i, v) in values.iter().enumerate() {
            out[i] = Self::variable(*v, i);
        }
        out
    }

    #[inline]
    fn chain(self, re: f64, d: f64) -> Self {
        let mut du = self.du;
        for x in du.iter_mut() {
            *x *= d;
        }
        Dual { re, du }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..N {
            self.du[i] += rhs.du[i];
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for i in 0..N {
            self.du[i] -= rhs.du[i];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut du = [0.0; N];
        for (i, d) in du.iter_mut().enumerate() {
            *d = self.du[i] * rhs.re + self.re * rhs.du[i];
        }
        Dual {
            re: self.re * rhs.re,
            du,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut du = [0.0; N];
        for (i, d) in du.iter_mut().enumerate() {
            *d = (self.du[i] - re * rhs.du[i]) * inv;
        }
        Dual { re, du }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.re, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.re -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.chain(self.re * rhs, rhs)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.chain(self.re / rhs, 1.0 / rhs)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, 0.5 / r)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
}

/// Value, gradient and Hessian with respect to `N` inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2<const N: usize> {
    pub re: f64,
    pub du: [f64; N],
    /// Full symmetric Hessian.
    pub hs: [[f64; N]; N],
}

impl<const N: usize> Dual2<N> {
    pub fn constant(re: f64) -> Self {
        Dual2 { re, du: [0.0; N], hs: [[0.0; N]; N] }
    }

    pub fn seed(values: [f64; N]) -> [Self; N] {
        let mut out = [Self::constant(0.0); N];
        for (i, v) in values.iter().enumerate() {
            out[i].re = *v;
            out[i].du[i] = 1.0;
        }
        out
    }

    /// `f(self)` given `f`, `f'` and `f''` at the value.
    #[inline]
    fn chain(self, re: f64, d1: f64, d2: f64) -> Self {
        let mut out = Dual2 { re, du: [0.0; N], hs: [[0.0; N]; N] };
        for i in 0..N {
            out.du[i] = d1 * self.du[i];
            for j in 0..N {
                out.hs[i][j] = d1 * self.hs[i][j] + d2 * self.du[i] * self.du[j];
            }
        }
        out
    }

    #[inline]
    fn scale(mut self, c: f64) -> Self {
        self.re *= c;
        for i in 0..N {
            self.du[i] *= c;
            for j in 0..N {
                self.hs[i][j] *= c;
            }
        }
        self
    }

    #[inline]
    fn recip(self) -> Self {
        let r = 1.0 / self.re;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl<const N: usize> Add for Dual2<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..N {
            self.du[i] += rhs.du[i];
            for j in 0..N {
                self.hs[i][j] += rhs.hs[i][j];
            }
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual2<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> Sub for Dual2<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<const N: usize> Mul for Dual2<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut out = Dual2 { re: self.re * rhs.re, du: [0.0; N], hs: [[0.0; N]; N] };
        for i in 0..N {
            out.du[i] = self.du[i] * rhs.re + self.re * rhs.du[i];
            for j in 0..N {
                out.hs[i][j] = self.hs[i][j] * rhs.re
                    + self.re * rhs.hs[i][j]
                    + self.du[i] * rhs.du[j]
                    + rhs.du[i] * self.du[j];
            }
        }
        out
    }
}

impl<const N: usize> Div for Dual2<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Neg for Dual2<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Add<f64> for Dual2<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual2<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.re -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual2<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl<const N: usize> Div<f64> for Dual2<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.scale(1.0 / rhs)
    }
}

impl<const N: usize> Scalar for Dual2<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual2::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.re))
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c, -s)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s, -c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe<S: Scalar>(x: S, y: S) -> S {
        (x * y + x.sin()).sqrt() / (y.exp() + 2.0) - x.cos() * 3.0
    }

    #[test]
    fn dual_matches_central_difference() {
        let (x, y) = (0.7, -0.3);
        let [dx, dy] = Dual::<2>::seed([x, y]);
        let r = probe(dx, dy);
        assert!((r.re - probe(x, y)).abs() < 1e-15);
        let h = 1e-6;
        let fx = (probe(x + h, y) - probe(x - h, y)) / (2.0 * h);
        let fy = (probe(x, y + h) - probe(x, y - h)) / (2.0 * h);
        assert!((r.du[0] - fx).abs() < 1e-8);
        assert!((r.du[1] - fy).abs() < 1e-8);
    }

    #[test]
    fn dual2_matches_differenced_gradient() {
        let (x, y) = (0.7, -0.3);
        let [a, b] = Dual2::<2>::seed([x, y]);
        let r = probe(a, b);
        let grad = |x: f64, y: f64| {
            let [dx, dy] = Dual::<2>::seed([x, y]);
            probe(dx, dy).du
        };
        let g0 = grad(x, y);
        assert!((r.du[0] - g0[0]).abs() < 1e-14 && (r.du[1] - g0[1]).abs() < 1e-14);
        let h = 1e-6;
        for j in 0..2 {
            let (mut p, mut m) = ([x, y], [x, y]);
            p[j] += h;
            m[j] -= h;
            let (gp, gm) = (grad(p[0], p[1]), grad(m[0], m[1]));
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((r.hs[i][j] - fd).abs() < 1e-7, "H[{i}][{j}] {} vs {fd}", r.hs[i][j]);
            }
        }
        assert_eq!(r.hs[0][1], r.hs[1][0]);
    }

    #[test]
    fn clamp_has_zero_derivative_outside() {
        let x = Dual::<1>::variable(5.0, 0);
        assert_eq!(x.clamp_s(0.0, 1.0).du[0], 0.0);
        assert_eq!(x.clamp_s(0.0, 10.0).du[0], 1.0);
    }
}
