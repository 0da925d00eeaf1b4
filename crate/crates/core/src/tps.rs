//! Bivariate truncated power series in two increments `(u, v)`.
//!
//! Coefficients are Taylor coefficients, stored by total degree: the monomial
//! `u^a v^b` with `a + b = d` lives at `d (d + 1) / 2 + b`.

use crate::series::{factorial, Series};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Debug, PartialEq)]
pub struct Tps {
    order: usize,
    pub c: Vec<f64>,
}

#[inline]
pub fn idx(a: usize, b: usize) -> usize {
    let d = a + b;
    d * (d + 1) / 2 + b
}

pub fn len_for(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

impl Tps {
    pub fn zero(order: usize) -> Self {
        Tps { order, c: vec![0.0; len_for(order)] }
    }

    pub fn constant(x: f64, order: usize) -> Self {
        let mut t = Self::zero(order);
        t.c[0] = x;
        t
    }

    /// `x0 + u`.
    pub fn var_u(x0: f64, order: usize) -> Self {
        let mut t = Self::constant(x0, order);
        if order > 0 {
            t.c[idx(1, 0)] = 1.0;
        }
        t
    }

    /// `x0 + v`.
    pub fn var_v(x0: f64, order: usize) -> Self {
        let mut t = Self::constant(x0, order);
        if order > 0 {
            t.c[idx(0, 1)] = 1.0;
        }
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeff(&self, a: usize, b: usize) -> f64 {
        if a + b > self.order {
            0.0
        } else {
            self.c[idx(a, b)]
        }
    }

    pub fn set_coeff(&mut self, a: usize, b: usize, x: f64) {
        self.c[idx(a, b)] = x;
    }

    /// Mixed partial derivative `d^{a+b} / du^a dv^b` at the origin.
    pub fn partial(&self, a: usize, b: usize) -> f64 {
        self.coeff(a, b) * factorial(a) * factorial(b)
    }

    /// Part of total degree exactly `d`.
    pub fn homogeneous(&self, d: usize) -> Tps {
        let mut t = Tps::zero(self.order);
        if d <= self.order {
            for b in 0..=d {
                t.c[idx(d - b, b)] = self.c[idx(d - b, b)];
            }
        }
        t
    }

    pub fn truncate(&self, order: usize) -> Tps {
        let mut t = Tps::zero(order);
        let m = order.min(self.order);
        t.c[..len_for(m)].copy_from_slice(&self.c[..len_for(m)]);
        t
    }

    pub fn scale(&self, a: f64) -> Tps {
        Tps { order: self.order, c: self.c.iter().map(|x| a * x).collect() }
    }

    pub fn add_const(&self, a: f64) -> Tps {
        let mut t = self.clone();
        t.c[0] += a;
        t
    }

    pub fn with_value(&self, a: f64) -> Tps {
        let mut t = self.clone();
        t.c[0] = a;
        t
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let mut acc = 0.0;
        for d in (0..=self.order).rev() {
            let mut h = 0.0;
            for b in 0..=d {
                h += self.c[idx(d - b, b)] * u.powi((d - b) as i32) * v.powi(b as i32);
            }
            acc += h;
        }
        acc
    }

    /// `f(self)` where `f` is the Taylor series of a function expanded at
    /// the constant term of `self`.
    pub fn compose_series(&self, f: &Series) -> Tps {
        let mut z = self.clone();
        z.c[0] = 0.0;
        let n = f.order().min(self.order);
        let mut acc = Tps::constant(f.c[n], self.order);
        for k in (0..n).rev() {
            acc = &acc * &z;
            acc.c[0] += f.c[k];
        }
        acc
    }

    fn unary(&self, f: impl Fn(&Series) -> Series) -> Tps {
        let s = Series::variable(self.c[0], self.order);
        self.compose_series(&f(&s))
    }

    pub fn recip(&self) -> Tps {
        self.unary(|s| s.recip())
    }

    pub fn div(&self, o: &Tps) -> Tps {
        self * &o.recip()
    }

    pub fn sin(&self) -> Tps {
        self.unary(|s| s.sin())
    }

    pub fn cos(&self) -> Tps {
        self.unary(|s| s.cos())
    }

    pub fn sqrt(&self) -> Tps {
        self.unary(|s| s.sqrt())
    }

    pub fn exp(&self) -> Tps {
        self.unary(|s| s.exp())
    }

    pub fn ln(&self) -> Tps {
        self.unary(|s| s.ln())
    }

    pub fn acos(&self) -> Tps {
        self.unary(|s| s.acos())
    }

    pub fn atan(&self) -> Tps {
        self.unary(|s| s.atan())
    }

    /// Substitutes `(u, v) -> (x - x0, y - y0)` where `x0, y0` are the
    /// constant terms of `x, y`.
    pub fn compose2(&self, x: &Tps, y: &Tps) -> Tps {
        let n = x.order;
        let mut dx = x.clone();
        dx.c[0] = 0.0;
        let mut dy = y.clone();
        dy.c[0] = 0.0;
        let m = self.order;
        let mut px = vec![Tps::constant(1.0, n)];
        let mut py = vec![Tps::constant(1.0, n)];
        for k in 1..=m.min(n) {
            px.push(&px[k - 1] * &dx);
            py.push(&py[k - 1] * &dy);
        }
        let mut out = Tps::zero(n);
        for d in 0..=m.min(n) {
            for b in 0..=d {
                let cf = self.c[idx(d - b, b)];
                if cf == 0.0 {
                    continue;
                }
                let term = &px[d - b] * &py[b];
                for (o, t) in out.c.iter_mut().zip(term.c.iter()) {
                    *o += cf * t;
                }
            }
        }
        out
    }

    /// Formal partial derivative in `u` (`var = 0`) or `v` (`var = 1`); the
    /// top-degree part is lost.
    pub fn deriv(&self, var: usize) -> Tps {
        let mut t = Tps::zero(self.order);
        for d in 1..=self.order {
            for b in 0..=d {
                let a = d - b;
                let (k, na, nb) = if var == 0 { (a, a.wrapping_sub(1), b) } else { (b, a, b.wrapping_sub(1)) };
                if k == 0 {
                    continue;
                }
                t.c[idx(na, nb)] += k as f64 * self.c[idx(a, b)];
            }
        }
        t
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl Add for &Tps {
    type Output = Tps;
    fn add(self, o: &Tps) -> Tps {
        let mut c = self.c.clone();
        for (x, y) in c.iter_mut().zip(o.c.iter()) {
            *x += y;
        }
        Tps { order: self.order, c }
    }
}

impl Sub for &Tps {
    type Output = Tps;
    fn sub(self, o: &Tps) -> Tps {
        let mut c = self.c.clone();
        for (x, y) in c.iter_mut().zip(o.c.iter()) {
            *x -= y;
        }
        Tps { order: self.order, c }
    }
}

impl Neg for &Tps {
    type Output = Tps;
    fn neg(self) -> Tps {
        self.scale(-1.0)
    }
}

impl Mul for &Tps {
    type Output = Tps;
    fn mul(self, o: &Tps) -> Tps {
        let n = self.order;
        let m = o.order;
        let mut c = vec![0.0; len_for(n)];
        for d1 in 0..=n {
            for b1 in 0..=d1 {
                let x = self.c[idx(d1 - b1, b1)];
                if x == 0.0 {
                    continue;
                }
                for d2 in 0..=(n - d1).min(m) {
                    let base = (d1 + d2) * (d1 + d2 + 1) / 2 + b1;
                    let obase = d2 * (d2 + 1) / 2;
                    for b2 in 0..=d2 {
                        c[base + b2] += x * o.c[obase + b2];
                    }
                }
            }
        }
        Tps { order: n, c }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_recip() {
        let x = Tps::var_u(0.5, 6);
        let y = Tps::var_v(-0.3, 6);
        let p = &(&x * &y) + &x;
        let q = p.recip();
        let one = &p * &q;
        assert!((one.c[0] - 1.0).abs() < 1e-15);
        for k in 1..one.c.len() {
            assert!(one.c[k].abs() < 1e-12);
        }
    }

    #[test]
    fn sin_partials() {
        let x = Tps::var_u(0.2, 5);
        let y = Tps::var_v(0.7, 5);
        let f = (&x * &y).sin();
        // d^2/du dv sin(uv) = cos(uv) - uv sin(uv)
        let uv: f64 = 0.2 * 0.7;
        let expect = uv.cos() - uv * uv.sin();
        assert!((f.partial(1, 1) - expect).abs() < 1e-14);
    }

    #[test]
    fn derivative_of_product() {
        let x = Tps::var_u(0.3, 5);
        let y = Tps::var_v(-0.4, 5);
        let f = &(&x * &x) * &y;
        let fu = f.deriv(0);
        let fv = f.deriv(1);
        // d/du (x^2 y) = 2 x y, d/dv = x^2
        let gu = (&x * &y).scale(2.0);
        let gv = &x * &x;
        for k in 0..len_for(4) {
            assert!((fu.c[k] - gu.c[k]).abs() < 1e-15);
            assert!((fv.c[k] - gv.c[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn compose2_matches_direct() {
        let x = Tps::var_u(0.1, 5);
        let y = Tps::var_v(0.2, 5);
        let g = &(&x * &x) + &y;
        let h = &x - &(&y * &y);
        // outer F(p, q) = p q + p^2 expanded at (g0, h0)
        let p = Tps::var_u(g.value(), 5);
        let q = Tps::var_v(h.value(), 5);
        let outer = &(&p * &q) + &(&p * &p);
        let direct = &(&g * &h) + &(&g * &g);
        let comp = outer.compose2(&g, &h);
        for k in 0..direct.c.len() {
            assert!((direct.c[k] - comp.c[k]).abs() < 1e-14);
        }
    }
}
