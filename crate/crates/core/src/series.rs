//! Univariate truncated Taylor series.
//!
//! A `Series` of order `n` stores the coefficients `c[0..=n]` of
//! `c0 + c1 t + ... + cn t^n`. All arithmetic truncates at the order of the
//! left operand.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub c: Vec<f64>,
}

impl Series {
    pub fn zero(order: usize) -> Self {
        Series { c: vec![0.0; order + 1] }
    }

    pub fn constant(x: f64, order: usize) -> Self {
        let mut s = Self::zero(order);
        s.c[0] = x;
        s
    }

    /// The identity series `x0 + t`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut s = Self::constant(x0, order);
        if order > 0 {
            s.c[1] = 1.0;
        }
        s
    }

    pub fn from_coeffs(c: Vec<f64>) -> Self {
        assert!(!c.is_empty());
        Series { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// k-th derivative at the expansion point.
    pub fn derivative_at(&self, k: usize) -> f64 {
        if k > self.order() {
            return 0.0;
        }
        self.c[k] * factorial(k)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        for (i, v) in self.c.iter().enumerate().take(order + 1) {
            c[i] = *v;
        }
        Series { c }
    }

    pub fn scale(&self, a: f64) -> Self {
        Series { c: self.c.iter().map(|x| a * x).collect() }
    }

    pub fn add_const(&self, a: f64) -> Self {
        let mut s = self.clone();
        s.c[0] += a;
        s
    }

    /// Evaluates the polynomial at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &x| acc * t + x)
    }

    /// Formal derivative; the top coefficient is lost.
    pub fn deriv(&self) -> Self {
        let n = self.order();
        let mut c = vec![0.0; n + 1];
        for k in 1..=n {
            c[k - 1] = k as f64 * self.c[k];
        }
        Series { c }
    }

    /// Formal antiderivative with constant term `c0`, truncated to the same order.
    pub fn integral(&self, c0: f64) -> Self {
        let n = self.order();
        let mut c = vec![0.0; n + 1];
        c[0] = c0;
        for k in 1..=n {
            c[k] = self.c[k - 1] / k as f64;
        }
        Series { c }
    }

    pub fn recip(&self) -> Self {
        let n = self.order();
        let a0 = self.c[0];
        let mut b = vec![0.0; n + 1];
        b[0] = 1.0 / a0;
        for k in 1..=n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += self.c[j] * b[k - j];
            }
            b[k] = -acc / a0;
        }
        Series { c: b }
    }

    pub fn div(&self, other: &Series) -> Self {
        self * &other.recip()
    }

    pub fn exp(&self) -> Self {
        let n = self.order();
        let mut b = vec![0.0; n + 1];
        b[0] = self.c[0].exp();
        for k in 1..=n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.c[j] * b[k - j];
            }
            b[k] = acc / k as f64;
        }
        Series { c: b }
    }

    pub fn ln(&self) -> Self {
        let n = self.order();
        let a0 = self.c[0];
        let mut b = vec![0.0; n + 1];
        b[0] = a0.ln();
        for k in 1..=n {
            let mut acc = k as f64 * self.c[k];
            for j in 1..k {
                acc -= j as f64 * b[j] * self.c[k - j];
            }
            b[k] = acc / (k as f64 * a0);
        }
        Series { c: b }
    }

    pub fn sqrt(&self) -> Self {
        let n = self.order();
        let mut b = vec![0.0; n + 1];
        b[0] = self.c[0].sqrt();
        for k in 1..=n {
            let mut acc = self.c[k];
            for j in 1..k {
                acc -= b[j] * b[k - j];
            }
            b[k] = acc / (2.0 * b[0]);
        }
        Series { c: b }
    }

    pub fn sin_cos(&self) -> (Series, Series) {
        let n = self.order();
        let mut s = vec![0.0; n + 1];
        let mut c = vec![0.0; n + 1];
        s[0] = self.c[0].sin();
        c[0] = self.c[0].cos();
        for k in 1..=n {
            let mut as_ = 0.0;
            let mut ac = 0.0;
            for j in 1..=k {
                let ja = j as f64 * self.c[j];
                as_ += ja * c[k - j];
                ac -= ja * s[k - j];
            }
            s[k] = as_ / k as f64;
            c[k] = ac / k as f64;
        }
        (Series { c: s }, Series { c })
    }

    pub fn sin(&self) -> Self {
        self.sin_cos().0
    }

    pub fn cos(&self) -> Self {
        self.sin_cos().1
    }

    pub fn atan(&self) -> Self {
        let d = self.deriv().div(&(self * self).add_const(1.0));
        d.integral(self.c[0].atan())
    }

    pub fn acos(&self) -> Self {
        let one_minus = (self * self).scale(-1.0).add_const(1.0);
        let d = self.deriv().div(&one_minus.sqrt()).scale(-1.0);
        d.integral(self.c[0].acos())
    }

    pub fn powi(&self, e: u32) -> Self {
        let mut r = Series::constant(1.0, self.order());
        for _ in 0..e {
            r = &r * self;
        }
        r
    }

    /// `self(inner(t))` where `inner` has zero constant term.
    pub fn compose(&self, inner: &Series) -> Self {
        let n = inner.order();
        let mut z = inner.clone();
        z.c[0] = 0.0;
        let mut acc = Series::constant(*self.c.last().unwrap(), n);
        for k in (0..self.order()).rev() {
            acc = &acc * &z;
            acc.c[0] += self.c[k];
        }
        acc
    }

    /// Compositional inverse of a series with zero constant term and nonzero
    /// linear term.
    pub fn reversion(&self) -> Self {
        let n = self.order();
        let mut g = Series::zero(n);
        if n == 0 {
            return g;
        }
        assert!(self.c[1] != 0.0, "reversion needs a nonzero linear term");
        g.c[1] = 1.0 / self.c[1];
        let mut f0 = self.clone();
        f0.c[0] = 0.0;
        for k in 2..=n {
            let fg = f0.compose(&g);
            g.c[k] = -fg.c[k] / self.c[1];
        }
        g
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

impl Add for &Series {
    type Output = Series;
    fn add(self, o: &Series) -> Series {
        let mut c = self.c.clone();
        for (i, x) in c.iter_mut().enumerate() {
            if i < o.c.len() {
                *x += o.c[i];
            }
        }
        Series { c }
    }
}

impl Sub for &Series {
    type Output = Series;
    fn sub(self, o: &Series) -> Series {
        let mut c = self.c.clone();
        for (i, x) in c.iter_mut().enumerate() {
            if i < o.c.len() {
                *x -= o.c[i];
            }
        }
        Series { c }
    }
}

impl Mul for &Series {
    type Output = Series;
    fn mul(self, o: &Series) -> Series {
        let n = self.order();
        let mut c = vec![0.0; n + 1];
        for (i, a) in self.c.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for j in 0..=(n - i) {
                if j < o.c.len() {
                    c[i + j] += a * o.c[j];
                }
            }
        }
        Series { c }
    }
}

impl Neg for &Series {
    type Output = Series;
    fn neg(self) -> Series {
        self.scale(-1.0)
    }
}
