//! The billiard map, its inverse, one-step differentials and Taylor jets of
//! iterates.

use crate::domain::{RadiusProfile, MAX_JET_ORDER};
use crate::error::{Error, Result};
use crate::tps::Tps;
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const PHI_MIN: f64 = 1e-6;
const SCAN_SAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub s: f64,
    pub phi: f64,
}

impl PhasePoint {
    pub fn new(s: f64, phi: f64) -> Self {
        PhasePoint { s, phi }
    }

    pub fn reversed(&self) -> Self {
        PhasePoint { s: self.s, phi: PI - self.phi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordData {
    pub l: f64,
    pub beta_in: f64,
    pub beta_out: f64,
    pub kappa_in: f64,
    pub kappa_out: f64,
}

/// One billiard step with lifted arc lengths.
#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub s0: f64,
    pub phi0: f64,
    pub theta0: f64,
    pub s1: f64,
    pub phi1: f64,
    pub theta1: f64,
    pub l: f64,
}

pub fn check_phi(phi: f64) -> Result<()> {
    if !(phi > PHI_MIN && phi < PI - PHI_MIN) || !phi.is_finite() {
        return Err(Error::Grazing { phi });
    }
    Ok(())
}

fn cross(d: [f64; 2], v: [f64; 2]) -> f64 {
    d[0] * v[1] - d[1] * v[0]
}

/// One step from lifted `s0`; the returned `s1` is lifted so that `s1 > s0`.
pub fn step(domain: &RadiusProfile, s0: f64, phi0: f64) -> Result<Step> {
    check_phi(phi0)?;
    let theta0 = domain.theta_of_s(s0);
    let g0 = domain.position(theta0);
    let alpha = theta0 + phi0;
    let d = [alpha.cos(), alpha.sin()];
    let g = |th: f64| {
        let p = domain.position(th);
        cross(d, [p[0] - g0[0], p[1] - g0[1]])
    };
    // g < 0 at alpha, > 0 at alpha + pi, increasing in between.
    let mut lo = alpha;
    let mut hi = alpha + PI;
    let mut glo = g(lo);
    let mut ghi = g(hi);
    for i in 1..SCAN_SAMPLES {
        let t = alpha + PI * i as f64 / SCAN_SAMPLES as f64;
        let gt = g(t);
        if gt >= 0.0 {
            hi = t;
            ghi = gt;
            break;
        }
        lo = t;
        glo = gt;
    }
    if !(glo <= 0.0 && ghi >= 0.0) {
        return Err(Error::NoConvergence { what: "next_hit bracketing".into(), iterations: SCAN_SAMPLES, residual: glo });
    }
    let mut th = if ghi - glo > 0.0 { lo - glo * (hi - lo) / (ghi - glo) } else { 0.5 * (lo + hi) };
    let mut converged = false;
    for _ in 0..200 {
        let gt = g(th);
        if gt == 0.0 {
            converged = true;
            break;
        }
        if gt < 0.0 {
            lo = th;
        } else {
            hi = th;
        }
        let dg = domain.rho(th) * (th - alpha).sin();
        let mut next = th - gt / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let dth = (next - th).abs();
        th = next;
        if dth <= 4.0 * f64::EPSILON * th.abs().max(1.0) || hi - lo <= 4.0 * f64::EPSILON * th.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { what: "next_hit".into(), iterations: 200, residual: g(th) });
    }
    let g1 = domain.position(th);
    Ok(Step {
        s0,
        phi0,
        theta0,
        s1: domain.s_of_theta(th),
        phi1: th - alpha,
        theta1: th,
        l: (g1[0] - g0[0]).hypot(g1[1] - g0[1]),
    })
}

pub fn next_hit(domain: &RadiusProfile, p: PhasePoint) -> Result<PhasePoint> {
    let st = step(domain, p.s, p.phi)?;
    Ok(PhasePoint { s: domain.wrap_s(st.s1), phi: st.phi1 })
}

pub fn billiard_inverse(domain: &RadiusProfile, p: PhasePoint) -> Result<PhasePoint> {
    let q = next_hit(domain, p.reversed())?;
    Ok(q.reversed())
}

/// Orbit of `steps` iterations including the start point.
pub fn iterate(domain: &RadiusProfile, p: PhasePoint, steps: usize) -> Result<Vec<PhasePoint>> {
    let mut out = vec![p];
    let mut cur = p;
    for _ in 0..steps {
        cur = next_hit(domain, cur)?;
        out.push(cur);
    }
    Ok(out)
}

/// `f^n(p)` for positive `n`, `f^{-n}` for negative.
pub fn iterate_signed(domain: &RadiusProfile, p: PhasePoint, n: i64) -> Result<PhasePoint> {
    let mut cur = p;
    if n >= 0 {
        for _ in 0..n {
            cur = next_hit(domain, cur)?;
        }
    } else {
        for _ in 0..(-n) {
            cur = billiard_inverse(domain, cur)?;
        }
    }
    Ok(cur)
}

pub fn chord_data(domain: &RadiusProfile, p: PhasePoint) -> Result<ChordData> {
    let st = step(domain, p.s, p.phi)?;
    Ok(ChordData {
        l: st.l,
        beta_in: st.phi0.sin(),
        beta_out: st.phi1.sin(),
        kappa_in: 1.0 / domain.rho(st.theta0),
        kappa_out: 1.0 / domain.rho(st.theta1),
    })
}

pub fn differential_from_chord(c: &ChordData) -> Matrix2<f64> {
    let ChordData { l, beta_in: b0, beta_out: b1, kappa_in: k0, kappa_out: k1 } = *c;
    Matrix2::new(
        (k0 * l - b0) / b1,
        l / b1,
        (k0 * k1 * l - k0 * b1 - k1 * b0) / b1,
        (k1 * l - b1) / b1,
    )
}

pub fn one_step_differential(domain: &RadiusProfile, p: PhasePoint) -> Result<Matrix2<f64>> {
    Ok(differential_from_chord(&chord_data(domain, p)?))
}

/// Chord length and its partials `(L, ∂L/∂s0, ∂L/∂s1)`.
pub fn generating_length(domain: &RadiusProfile, s0: f64, s1: f64) -> Result<(f64, f64, f64)> {
    let g = generating_length_full(domain, s0, s1)?;
    Ok((g.l, g.dl0, g.dl1))
}

#[derive(Clone, Copy, Debug)]
pub struct ChordGeometry {
    pub l: f64,
    pub dl0: f64,
    pub dl1: f64,
    pub phi0: f64,
    pub phi1: f64,
    pub kappa0: f64,
    pub kappa1: f64,
}

impl ChordGeometry {
    /// Second partials `(L_00, L_01, L_11)`.
    pub fn hessian(&self) -> (f64, f64, f64) {
        let (b0, b1) = (self.phi0.sin(), self.phi1.sin());
        (
            -self.kappa0 * b0 + b0 * b0 / self.l,
            b0 * b1 / self.l,
            -self.kappa1 * b1 + b1 * b1 / self.l,
        )
    }
}

pub fn generating_length_full(domain: &RadiusProfile, s0: f64, s1: f64) -> Result<ChordGeometry> {
    let len = domain.length();
    let ds = (s1 - s0) - len * ((s1 - s0) / len).floor();
    if ds.abs() < 1e-14 || (len - ds).abs() < 1e-14 {
        return Err(Error::invalid("coincident points in generating length"));
    }
    let t0 = domain.theta_of_s(s0);
    let t1 = domain.theta_of_s(s0 + ds);
    let g0 = domain.position(t0);
    let g1 = domain.position(t1);
    let v = [g1[0] - g0[0], g1[1] - g0[1]];
    let l = v[0].hypot(v[1]);
    let beta = v[1].atan2(v[0]);
    let wrap = |x: f64| x - 2.0 * PI * (x / (2.0 * PI)).floor();
    let phi0 = wrap(beta - t0);
    let phi1 = wrap(t1 - beta);
    Ok(ChordGeometry {
        l,
        dl0: -phi0.cos(),
        dl1: phi1.cos(),
        phi0,
        phi1,
        kappa0: 1.0 / domain.rho(t0),
        kappa1: 1.0 / domain.rho(t1),
    })
}

/// Truncated Taylor expansion of an iterated map around `base_in`.
///
/// `s` holds the lifted output arc length, so `s.value() - base_in.s` is the
/// total displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct JetMap2 {
    pub order: usize,
    pub base_in: PhasePoint,
    pub base_out: PhasePoint,
    pub s: Tps,
    pub phi: Tps,
    pub period: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JetCoefficient {
    pub a: usize,
    pub b: usize,
    pub ds: f64,
    pub dphi: f64,
}

impl JetMap2 {
    pub fn identity(p: PhasePoint, order: usize, period: f64) -> Self {
        JetMap2 {
            order,
            base_in: p,
            base_out: p,
            s: Tps::var_u(p.s, order),
            phi: Tps::var_v(p.phi, order),
            period,
        }
    }

    /// `∂^{a+b} s_out / ∂s^a ∂φ^b`.
    pub fn ds(&self, a: usize, b: usize) -> f64 {
        if a + b == 0 {
            return self.base_out.s;
        }
        self.s.partial(a, b)
    }

    /// `∂^{a+b} φ_out / ∂s^a ∂φ^b`.
    pub fn dphi(&self, a: usize, b: usize) -> f64 {
        self.phi.partial(a, b)
    }

    pub fn block1(&self) -> Matrix2<f64> {
        Matrix2::new(self.s.partial(1, 0), self.s.partial(0, 1), self.phi.partial(1, 0), self.phi.partial(0, 1))
    }

    pub fn coefficients(&self) -> Vec<JetCoefficient> {
        let mut out = vec![];
        for d in 0..=self.order {
            for b in 0..=d {
                out.push(JetCoefficient { a: d - b, b, ds: self.ds(d - b, b), dphi: self.dphi(d - b, b) });
            }
        }
        out
    }

    fn wrapped_out(s: f64, phi: f64, period: f64) -> PhasePoint {
        let w = s - period * (s / period).floor();
        PhasePoint { s: if w >= period { 0.0 } else { w }, phi }
    }

    pub fn truncate(&self, order: usize) -> Self {
        JetMap2 { order, s: self.s.truncate(order), phi: self.phi.truncate(order), ..self.clone() }
    }

    pub fn eval(&self, ds: f64, dphi: f64) -> (f64, f64) {
        (self.s.eval(ds, dphi), self.phi.eval(ds, dphi))
    }
}

pub fn compose_jets(outer: &JetMap2, inner: &JetMap2) -> Result<JetMap2> {
    let per = outer.period;
    let d = inner.base_out.s - outer.base_in.s;
    let ds = d - per * (d / per).round();
    if ds.abs() > 1e-9 || (inner.base_out.phi - outer.base_in.phi).abs() > 1e-9 {
        return Err(Error::BaseMismatch { left: inner.base_out.s, right: outer.base_in.s });
    }
    let order = outer.order.min(inner.order);
    let o_s = outer.s.truncate(order);
    let o_phi = outer.phi.truncate(order);
    let i_s = inner.s.truncate(order);
    let i_phi = inner.phi.truncate(order);
    // Keep the accumulated lift: displacement of inner plus displacement of outer.
    let shift = inner.s.value() - outer.base_in.s;
    let s = o_s.compose2(&i_s, &i_phi).add_const(shift);
    let phi = o_phi.compose2(&i_s, &i_phi);
    let base_out = JetMap2::wrapped_out(s.value(), phi.value(), per);
    Ok(JetMap2 { order, base_in: inner.base_in, base_out, s, phi, period: per })
}

/// Transports Taylor series of `(s, φ)` through one step; returns the image
/// and the chord length.
pub fn step_tps(domain: &RadiusProfile, s: &Tps, phi: &Tps) -> Result<(Tps, Tps, Tps)> {
    let n = s.order();
    let st = step(domain, s.value(), phi.value())?;
    let rev = domain.inverse_arclength_series(st.theta0, n);
    let theta0 = s.compose_series(&rev.clone().with_const(st.theta0));
    let alpha = &theta0 + phi;
    let ca = alpha.cos();
    let sa = alpha.sin();
    let gs0 = domain.position_series(st.theta0, n);
    let dtheta0 = theta0.add_const(0.0);
    let g0x = dtheta0.compose_series(&gs0[0]);
    let g0y = dtheta0.compose_series(&gs0[1]);
    let gs1 = domain.position_series(st.theta1, n);
    let rs1 = domain.rho_series(st.theta1, n);
    let mut t1 = Tps::constant(st.theta1, n);
    let iters = (usize::BITS - (n + 1).leading_zeros()) as usize + 2;
    for _ in 0..iters {
        let g1x = t1.compose_series(&gs1[0]);
        let g1y = t1.compose_series(&gs1[1]);
        let f = &(&ca * &(&g1y - &g0y)) - &(&sa * &(&g1x - &g0x));
        let fp = &t1.compose_series(&rs1) * &(&t1 - &alpha).sin();
        let corr = f.div(&fp);
        t1 = &t1 - &corr;
        t1.c[0] = st.theta1;
    }
    let g1x = t1.compose_series(&gs1[0]);
    let g1y = t1.compose_series(&gs1[1]);
    let l = &(&ca * &(&g1x - &g0x)) + &(&sa * &(&g1y - &g0y));
    let s1 = t1.compose_series(&domain.s_series(st.theta1, n));
    let phi1 = &t1 - &alpha;
    Ok((s1, phi1, l))
}

trait WithConst {
    fn with_const(self, c: f64) -> Self;
}

impl WithConst for crate::series::Series {
    fn with_const(mut self, c: f64) -> Self {
        self.c[0] = c;
        self
    }
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_JET_ORDER {
        return Err(Error::OrderTooLarge { requested: order, max: MAX_JET_ORDER });
    }
    Ok(())
}

/// Jet of `f^steps` at `p`.
pub fn map_jet_iter(domain: &RadiusProfile, p: PhasePoint, order: usize, steps: usize) -> Result<JetMap2> {
    Ok(map_jet_iter_with_lengths(domain, p, order, steps)?.0)
}

/// Jet of `f^steps` at `p` together with the jet of the summed chord lengths.
pub fn map_jet_iter_with_lengths(
    domain: &RadiusProfile,
    p: PhasePoint,
    order: usize,
    steps: usize,
) -> Result<(JetMap2, Tps)> {
    check_order(order)?;
    let mut s = Tps::var_u(p.s, order);
    let mut phi = Tps::var_v(p.phi, order);
    let mut total = Tps::zero(order);
    for _ in 0..steps {
        let (s1, p1, l) = step_tps(domain, &s, &phi)?;
        s = s1;
        phi = p1;
        total = &total + &l;
    }
    let per = domain.length();
    let base_out = JetMap2::wrapped_out(s.value(), phi.value(), per);
    Ok((JetMap2 { order, base_in: p, base_out, s, phi, period: per }, total))
}

pub fn map_jet(domain: &RadiusProfile, p: PhasePoint, order: usize) -> Result<JetMap2> {
    map_jet_iter(domain, p, order, 1)
}

/// Jet of `f^{-1}` at `p`, via `(s, φ) -> (s, π - φ)` conjugation.
pub fn inverse_map_jet(domain: &RadiusProfile, p: PhasePoint, order: usize) -> Result<JetMap2> {
    check_order(order)?;
    let per = domain.length();
    let s = Tps::var_u(p.s, order);
    let phi = Tps::var_v(p.phi, order).scale(-1.0).add_const(PI);
    let (s1, p1, _) = step_tps(domain, &s, &phi)?;
    let s1 = s1.add_const(-per);
    let phi1 = p1.scale(-1.0).add_const(PI);
    let base_out = JetMap2::wrapped_out(s1.value(), phi1.value(), per);
    Ok(JetMap2 { order, base_in: p, base_out, s: s1, phi: phi1, period: per })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn circle_next_hit_oracle() {
        let c = RadiusProfile::circle();
        for (s, phi) in [(0.0, PI / 2.0), (0.2, PI / 3.0), (0.9, PI / 4.0)] {
            let q = next_hit(&c, PhasePoint::new(s, phi)).unwrap();
            let expect = (s + phi / PI).fract();
            assert!(close(q.s, expect, 1e-13), "{} vs {}", q.s, expect);
            assert!(close(q.phi, phi, 1e-13));
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let d = RadiusProfile::from_relative_harmonics(&[(2, 0.3, 0.0), (3, 0.05, 0.02)]);
        let p = PhasePoint::new(0.37, 1.1);
        let q = next_hit(&d, p).unwrap();
        let r = billiard_inverse(&d, q).unwrap();
        assert!(close(r.s, p.s, 1e-12) && close(r.phi, p.phi, 1e-12));
    }

    #[test]
    fn grazing_is_rejected() {
        let c = RadiusProfile::circle();
        assert!(matches!(next_hit(&c, PhasePoint::new(0.1, 1e-8)), Err(Error::Grazing { .. })));
    }

    #[test]
    fn circle_differential() {
        let c = RadiusProfile::circle();
        let m = one_step_differential(&c, PhasePoint::new(0.3, 0.7)).unwrap();
        assert!(close(m[(0, 0)], 1.0, 1e-12));
        assert!(close(m[(0, 1)], 1.0 / PI, 1e-12));
        assert!(close(m[(1, 0)], 0.0, 1e-12));
        assert!(close(m[(1, 1)], 1.0, 1e-12));
    }

    #[test]
    fn circle_jet_is_affine() {
        let c = RadiusProfile::circle();
        let j = map_jet_iter(&c, PhasePoint::new(0.1, 1.2), 4, 3).unwrap();
        assert!(close(j.ds(1, 0), 1.0, 1e-12));
        assert!(close(j.ds(0, 1), 3.0 / PI, 1e-12));
        for d in 2..=4 {
            for b in 0..=d {
                assert!(j.ds(d - b, b).abs() < 1e-10, "{} {}", d - b, b);
                assert!(j.dphi(d - b, b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jet_matches_differential() {
        let d = RadiusProfile::ellipse_like(0.3);
        let p = PhasePoint::new(0.1, 1.0);
        let j = map_jet(&d, p, 3).unwrap();
        let m = one_step_differential(&d, p).unwrap();
        assert!((j.block1() - m).abs().max() < 1e-10);
    }

    #[test]
    fn generating_length_circle() {
        let c = RadiusProfile::circle();
        let (l, _, d1) = generating_length(&c, 0.0, 0.25).unwrap();
        assert!(close(l, 2f64.sqrt() / (2.0 * PI), 1e-14));
        assert!(close(d1, (PI / 4.0).cos(), 1e-13));
    }
}
