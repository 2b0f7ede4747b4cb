//! Number types that map rules are generic over.
//!
//! Every built-in map is written once against [`Scalar`]. Evaluating it on
//! `f64` gives the point image, on [`Dual`] a directional derivative, and on
//! [`Jet`] the truncated Taylor expansion of the map along a curve, which is
//! how exact higher derivatives of compositions `g∘σ` are obtained.

use std::ops::{Add, Mul, Neg, Sub};

/// Arithmetic needed by the map rules: ring operations, scaling and sin/cos.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn scale(self, k: f64) -> Self;
    fn sin_cos(self) -> (Self, Self);
    fn value(&self) -> f64;

    fn sin(self) -> Self {
        self.sin_cos().0
    }
    fn cos(self) -> Self {
        self.sin_cos().1
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
}

/// First-order forward-mode number `v + d·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.v * o.v, self.v * o.d + self.d * o.v)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d)
    }
}

impl Scalar for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::new(v, 0.0)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        Self::new(self.v * k, self.d * k)
    }
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.v.sin_cos();
        (Self::new(s, c * self.d), Self::new(c, -s * self.d))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
}

/// Number of Taylor coefficients carried by a [`Jet`] (orders 0..=5).
pub const JET_LEN: usize = 6;

/// Truncated univariate Taylor series `Σ c[k] s^k`, `c[k] = f^(k)(t0)/k!`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub c: [f64; JET_LEN],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = v;
        Self { c }
    }

    /// The identity variable `t0 + s`.
    pub fn variable(t0: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = t0;
        c[1] = 1.0;
        Self { c }
    }

    pub fn from_coeffs(coeffs: &[f64]) -> Self {
        let mut c = [0.0; JET_LEN];
        for (dst, src) in c.iter_mut().zip(coeffs) {
            *dst = *src;
        }
        Self { c }
    }

    /// k-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        self.c[k] * factorial(k)
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

impl Add for Jet {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        for k in 0..JET_LEN {
            self.c[k] += o.c[k];
        }
        self
    }
}

impl Sub for Jet {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        for k in 0..JET_LEN {
            self.c[k] -= o.c[k];
        }
        self
    }
}

impl Mul for Jet {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; JET_LEN];
        for i in 0..JET_LEN {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..JET_LEN - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Self { c }
    }
}

impl Neg for Jet {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        for v in self.c.iter_mut() {
            *v = -*v;
        }
        self
    }
}

impl Scalar for Jet {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }

    fn scale(mut self, k: f64) -> Self {
        for v in self.c.iter_mut() {
            *v *= k;
        }
        self
    }

    // k s_k = Σ j u_j c_{k-j},  k c_k = -Σ j u_j s_{k-j}
    fn sin_cos(self) -> (Self, Self) {
        let u = &self.c;
        let mut s = [0.0; JET_LEN];
        let mut c = [0.0; JET_LEN];
        let (s0, c0) = u[0].sin_cos();
        s[0] = s0;
        c[0] = c0;
        for k in 1..JET_LEN {
            let mut acc_s = 0.0;
            let mut acc_c = 0.0;
            for j in 1..=k {
                let ju = j as f64 * u[j];
                acc_s += ju * c[k - j];
                acc_c -= ju * s[k - j];
            }
            s[k] = acc_s / k as f64;
            c[k] = acc_c / k as f64;
        }
        (Self { c: s }, Self { c })
    }

    fn value(&self) -> f64 {
        self.c[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_sin_matches_analytic_derivatives() {
        let t0 = 0.37;
        let x = Jet::variable(t0).scale(2.0);
        let s = x.sin();
        // d^k/dt^k sin(2t) = 2^k sin(2t + kπ/2)
        for k in 0..JET_LEN {
            let expect = 2f64.powi(k as i32) * (2.0 * t0 + k as f64 * std::f64::consts::FRAC_PI_2).sin();
            assert!((s.derivative(k) - expect).abs() < 1e-10 * expect.abs().max(1.0), "k={k}");
        }
    }

    #[test]
    fn jet_product_is_polynomial_product() {
        let a = Jet::from_coeffs(&[1.0, 2.0, 0.0]);
        let b = Jet::from_coeffs(&[3.0, 0.0, 1.0]);
        let p = a * b;
        assert_eq!(&p.c[..4], &[3.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn dual_chain_rule() {
        let x = Dual::new(0.2, 1.0);
        let y = (x * x).sin();
        assert!((y.d - 2.0 * 0.2 * (0.04f64).cos()).abs() < 1e-15);
    }
}
