//! Strictly convex domains given by the radius of curvature as a function of
//! the tangent angle, and localized curvature patches.

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::series::{factorial, Series};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

pub const MAX_JET_ORDER: usize = 24;
pub const DEFAULT_RESOLUTION: usize = 4096;
pub const LENGTH_TOL: f64 = 1e-12;
pub const CLOSURE_TOL: f64 = 1e-12;
/// Extra basis functions beyond the number of constraints.
pub const BUMP_SLACK: usize = 4;
const HALF_PANELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub k: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A localized change of the radius of curvature,
/// `Δρ(θ) = Σ_j w_j ψ(u) P_j(u)` with `u = (θ - θc) / h`, `ψ(u) = exp(1 - 1/(1-u²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpPatch {
    pub center_theta: f64,
    pub half_width: f64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub target_jet: Vec<f64>,
    #[serde(skip)]
    totals: OnceLock<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusProfile {
    pub mean_radius: f64,
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
    #[serde(default)]
    pub bumps: Vec<BumpPatch>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub s: f64,
    pub theta: f64,
    pub position: [f64; 2],
    pub curvature_jet: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub min_rho: f64,
    pub first_harmonic_residual: f64,
    pub length: f64,
    pub length_error: f64,
    pub positive: bool,
    pub closed: bool,
    pub unit_length: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchedProfile {
    pub profile: RadiusProfile,
    pub length_drift: f64,
    pub renormalized: bool,
}

fn wrap_angle(x: f64) -> f64 {
    x - TAU * (x / TAU).round()
}

/// `ψ(u) P_j(u)` for all `j < n` as series in `t` where `u = u0 + t / h`.
fn basis_series(u0: f64, h: f64, n: usize, order: usize) -> Vec<Series> {
    if u0.abs() >= 1.0 {
        return vec![Series::zero(order); n];
    }
    let mut u = Series::variable(u0, order);
    if order > 0 {
        u.c[1] = 1.0 / h;
    }
    let q = (&u * &u).scale(-1.0).add_const(1.0);
    let psi = q.recip().scale(-1.0).add_const(1.0).exp();
    let mut out = Vec::with_capacity(n);
    let mut p_prev = Series::constant(1.0, order);
    let mut p_cur = u.clone();
    for j in 0..n {
        let pj = if j == 0 { p_prev.clone() } else { p_cur.clone() };
        out.push(&psi * &pj);
        if j >= 1 {
            let jf = j as f64;
            let next = (&(&u * &p_cur).scale(2.0 * jf + 1.0) - &p_prev.scale(jf)).scale(1.0 / (jf + 1.0));
            p_prev = p_cur;
            p_cur = next;
        }
    }
    out
}

fn basis_values(u: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if u.abs() >= 1.0 {
        return out;
    }
    let psi = (1.0 - 1.0 / (1.0 - u * u)).exp();
    let mut p0 = 1.0;
    let mut p1 = u;
    for (j, o) in out.iter_mut().enumerate() {
        let pj = if j == 0 { p0 } else { p1 };
        *o = psi * pj;
        if j >= 1 {
            let jf = j as f64;
            let p2 = ((2.0 * jf + 1.0) * u * p1 - jf * p0) / (jf + 1.0);
            p0 = p1;
            p1 = p2;
        }
    }
    out
}

fn panels_for(a: f64, b: f64) -> usize {
    ((b - a) / (1.0 / HALF_PANELS as f64)).ceil().max(1.0) as usize
}

impl BumpPatch {
    pub fn new(center_theta: f64, half_width: f64, weights: Vec<f64>, target_jet: Vec<f64>) -> Self {
        BumpPatch { center_theta, half_width, weights, target_jet, totals: OnceLock::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| *w == 0.0)
    }

    fn density(&self, u: f64) -> f64 {
        basis_values(u, self.weights.len())
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| b * w)
            .sum()
    }

    pub fn delta_rho(&self, theta: f64) -> f64 {
        let u = wrap_angle(theta - self.center_theta) / self.half_width;
        self.density(u)
    }

    /// Integrals of `Δρ (1, cos θ, sin θ)` from the start of the support to `u`.
    fn partial(&self, u: f64) -> [f64; 3] {
        if u <= -1.0 {
            return [0.0; 3];
        }
        let u = u.min(1.0);
        let h = self.half_width;
        let c = self.center_theta;
        let n = panels_for(-1.0, u);
        let mut out = [0.0; 3];
        // Integrate the three moments over the same nodes.
        let w = &self.weights;
        let mut acc = [0.0; 3];
        let f = |x: f64, k: usize| -> f64 {
            let d: f64 = basis_values(x, w.len()).iter().zip(w).map(|(b, w)| b * w).sum();
            let t = c + h * x;
            match k {
                0 => d,
                1 => d * t.cos(),
                _ => d * t.sin(),
            }
        };
        for (k, a) in acc.iter_mut().enumerate() {
            *a = integrate(|x| f(x, k), -1.0, u, n);
        }
        for k in 0..3 {
            out[k] = h * acc[k];
        }
        out
    }

    fn totals(&self) -> [f64; 3] {
        *self.totals.get_or_init(|| {
            let l = self.partial(0.0);
            let r = self.partial_right();
            [l[0] + r[0], l[1] + r[1], l[2] + r[2]]
        })
    }

    fn partial_right(&self) -> [f64; 3] {
        let h = self.half_width;
        let c = self.center_theta;
        let w = &self.weights;
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = h * integrate(
                |x| {
                    let d: f64 = basis_values(x, w.len()).iter().zip(w).map(|(b, w)| b * w).sum();
                    let t = c + h * x;
                    match k {
                        0 => d,
                        1 => d * t.cos(),
                        _ => d * t.sin(),
                    }
                },
                0.0,
                1.0,
                HALF_PANELS,
            );
        }
        out
    }

    /// Cumulative moments at lifted angle `theta`, measured from the support
    /// start of the branch at or before `theta`.
    fn cumulative(&self, theta: f64) -> [f64; 3] {
        let r = theta - self.center_theta;
        let k = (r / TAU).round();
        let rr = r - TAU * k;
        let tot = self.totals();
        let u = rr / self.half_width;
        let p = if u <= -1.0 {
            [0.0; 3]
        } else if u >= 1.0 {
            tot
        } else if u == 0.0 {
            self.partial(0.0)
        } else {
            self.partial(u)
        };
        [k * tot[0] + p[0], k * tot[1] + p[1], k * tot[2] + p[2]]
    }

    pub fn sup_norm(&self) -> f64 {
        (0..=400)
            .map(|i| self.density(-1.0 + 2.0 * i as f64 / 400.0).abs())
            .fold(0.0, f64::max)
    }

    fn rho_series(&self, theta: f64, order: usize) -> Series {
        let u0 = wrap_angle(theta - self.center_theta) / self.half_width;
        let b = basis_series(u0, self.half_width, self.weights.len(), order);
        let mut acc = Series::zero(order);
        for (bj, w) in b.iter().zip(&self.weights) {
            acc = &acc + &bj.scale(*w);
        }
        acc
    }

    fn support_contains(&self, theta: f64) -> bool {
        wrap_angle(theta - self.center_theta).abs() < self.half_width
    }
}

impl RadiusProfile {
    pub fn circle() -> Self {
        RadiusProfile {
            mean_radius: 1.0 / TAU,
            harmonics: vec![],
            bumps: vec![],
            resolution: DEFAULT_RESOLUTION,
        }
    }

    /// `ρ(θ) = (1 + Σ a_k cos kθ + b_k sin kθ) / (2π)` from `(k, a_k, b_k)`.
    pub fn from_relative_harmonics(terms: &[(u32, f64, f64)]) -> Self {
        RadiusProfile {
            mean_radius: 1.0 / TAU,
            harmonics: terms
                .iter()
                .map(|&(k, a, b)| Harmonic { k, cos: a / TAU, sin: b / TAU })
                .collect(),
            bumps: vec![],
            resolution: DEFAULT_RESOLUTION,
        }
    }

    pub fn ellipse_like(e: f64) -> Self {
        Self::from_relative_harmonics(&[(2, e, 0.0)])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: RadiusProfile = serde_json::from_str(text)?;
        if p.harmonics.iter().any(|h| h.k == 0) {
            return Err(Error::invalid("harmonic index k must be positive"));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn rho(&self, theta: f64) -> f64 {
        let mut r = self.mean_radius;
        for h in &self.harmonics {
            let k = h.k as f64;
            r += h.cos * (k * theta).cos() + h.sin * (k * theta).sin();
        }
        for b in &self.bumps {
            r += b.delta_rho(theta);
        }
        r
    }

    pub fn curvature_at_theta(&self, theta: f64) -> f64 {
        1.0 / self.rho(theta)
    }

    /// Taylor series of `ρ(θ + t)` in `t`.
    pub fn rho_series(&self, theta: f64, order: usize) -> Series {
        let mut c = vec![0.0; order + 1];
        c[0] = self.mean_radius;
        for h in &self.harmonics {
            let k = h.k as f64;
            let mut kn = 1.0;
            for (n, cn) in c.iter_mut().enumerate() {
                let ph = k * theta + n as f64 * PI / 2.0;
                *cn += kn / factorial(n) * (h.cos * ph.cos() + h.sin * ph.sin());
                kn *= k;
            }
        }
        let mut s = Series::from_coeffs(c);
        for b in &self.bumps {
            if b.support_contains(theta) {
                s = &s + &b.rho_series(theta, order);
            }
        }
        s
    }

    fn harmonic_s(&self, theta: f64) -> f64 {
        let mut s = self.mean_radius * theta;
        for h in &self.harmonics {
            let k = h.k as f64;
            s += h.cos * (k * theta).sin() / k + h.sin * (1.0 - (k * theta).cos()) / k;
        }
        s
    }

    fn harmonic_position(&self, theta: f64) -> [f64; 2] {
        let ic = |m: f64| if m == 0.0 { theta } else { (m * theta).sin() / m };
        let is = |m: f64| if m == 0.0 { 0.0 } else { (1.0 - (m * theta).cos()) / m };
        let a0 = self.mean_radius;
        let mut x = a0 * ic(1.0);
        let mut y = a0 * is(1.0);
        for h in &self.harmonics {
            let k = h.k as f64;
            x += 0.5 * h.cos * (ic(k - 1.0) + ic(k + 1.0)) + 0.5 * h.sin * (is(k + 1.0) + is(k - 1.0));
            y += 0.5 * h.cos * (is(k + 1.0) - is(k - 1.0)) + 0.5 * h.sin * (ic(k - 1.0) - ic(k + 1.0));
        }
        [x, y]
    }

    /// Arc length from `θ = 0` to the lifted angle `theta`.
    pub fn s_of_theta(&self, theta: f64) -> f64 {
        let mut s = self.harmonic_s(theta);
        for b in &self.bumps {
            s += b.cumulative(theta)[0] - b.cumulative(0.0)[0];
        }
        s
    }

    /// Boundary point `γ(θ)`, with `γ(0) = 0`.
    pub fn position(&self, theta: f64) -> [f64; 2] {
        let mut p = self.harmonic_position(theta);
        for b in &self.bumps {
            let c = b.cumulative(theta);
            let c0 = b.cumulative(0.0);
            p[0] += c[1] - c0[1];
            p[1] += c[2] - c0[2];
        }
        p
    }

    pub fn length(&self) -> f64 {
        let mut l = TAU * self.mean_radius;
        for b in &self.bumps {
            l += b.totals()[0];
        }
        l
    }

    /// Lifted tangent angle with `s_of_theta(θ) = s` for lifted `s`.
    pub fn theta_of_s(&self, s: f64) -> f64 {
        let l = self.length();
        let guess = TAU * s / l;
        let mut lo = guess - TAU;
        let mut hi = guess + TAU;
        let mut th = guess;
        for _ in 0..100 {
            let f = self.s_of_theta(th) - s;
            if f > 0.0 {
                hi = th;
            } else {
                lo = th;
            }
            let mut next = th - f / self.rho(th);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - th).abs() <= 1e-15 * (1.0 + th.abs());
            th = next;
            if done {
                break;
            }
        }
        th
    }

    /// Series of `s(θ + t)`.
    pub fn s_series(&self, theta: f64, order: usize) -> Series {
        self.rho_series(theta, order).integral(self.s_of_theta(theta))
    }

    /// Series of `γ(θ + t)`.
    pub fn position_series(&self, theta: f64, order: usize) -> [Series; 2] {
        let r = self.rho_series(theta, order);
        let (sn, cs) = Series::variable(theta, order).sin_cos();
        let p = self.position(theta);
        [(&r * &cs).integral(p[0]), (&r * &sn).integral(p[1])]
    }

    /// Series of `θ(s + w) - θ(s)` in `w` at the angle `theta`.
    pub fn inverse_arclength_series(&self, theta: f64, order: usize) -> Series {
        let mut s = self.rho_series(theta, order).integral(0.0);
        s.c[0] = 0.0;
        s.reversion()
    }

    /// Series of `κ(s + w)` at the boundary point with tangent angle `theta`.
    pub fn curvature_series(&self, theta: f64, order: usize) -> Series {
        let r = self.rho_series(theta, order);
        r.recip().compose(&self.inverse_arclength_series(theta, order))
    }

    pub fn wrap_s(&self, s: f64) -> f64 {
        let l = self.length();
        let w = s - l * (s / l).floor();
        if w >= l {
            0.0
        } else {
            w
        }
    }

    pub fn eval_boundary(&self, s: f64, order: usize) -> Result<BoundaryPoint> {
        if order > MAX_JET_ORDER {
            return Err(Error::OrderTooLarge { requested: order, max: MAX_JET_ORDER });
        }
        let s = self.wrap_s(s);
        let theta = self.theta_of_s(s);
        let k = self.curvature_series(theta, order);
        Ok(BoundaryPoint {
            s,
            theta,
            position: self.position(theta),
            curvature_jet: (0..=order).map(|i| k.derivative_at(i)).collect(),
        })
    }

    pub fn curvature_at_s(&self, s: f64) -> f64 {
        1.0 / self.rho(self.theta_of_s(s))
    }

    fn grid_min_rho(&self) -> f64 {
        let n = self.resolution.max(16);
        let mut m = f64::INFINITY;
        for i in 0..n {
            m = m.min(self.rho(TAU * i as f64 / n as f64));
        }
        for b in &self.bumps {
            for i in 0..=128 {
                let th = b.center_theta + b.half_width * (-1.0 + 2.0 * i as f64 / 128.0);
                m = m.min(self.rho(th));
            }
        }
        m
    }

    pub fn check_admissibility(&self) -> AdmissibilityReport {
        let min_rho = self.grid_min_rho();
        let g = self.position(TAU);
        let g0 = self.position(0.0);
        let first = ((g[0] - g0[0]).powi(2) + (g[1] - g0[1]).powi(2)).sqrt();
        let length = self.length();
        let length_error = (length - 1.0).abs();
        let positive = min_rho > 0.0;
        let closed = first < CLOSURE_TOL;
        let unit_length = length_error < LENGTH_TOL;
        AdmissibilityReport {
            min_rho,
            first_harmonic_residual: first,
            length,
            length_error,
            positive,
            closed,
            unit_length,
            pass: positive && closed && unit_length,
        }
    }

    /// Rescales so the total length is one.
    pub fn normalized(&self) -> Self {
        let l = self.length();
        let mut p = self.clone();
        p.mean_radius /= l;
        for h in &mut p.harmonics {
            h.cos /= l;
            h.sin /= l;
        }
        p.bumps = self
            .bumps
            .iter()
            .map(|b| {
                BumpPatch::new(
                    b.center_theta,
                    b.half_width,
                    b.weights.iter().map(|w| w / l).collect(),
                    b.target_jet.clone(),
                )
            })
            .collect();
        p
    }

    pub fn apply_and_renormalize(&self, patches: &[BumpPatch], constrained: bool) -> Result<PatchedProfile> {
        let mut p = self.clone();
        for b in patches.iter().filter(|b| !b.is_zero()) {
            for other in &p.bumps {
                let d = wrap_angle(b.center_theta - other.center_theta).abs();
                if d < b.half_width + other.half_width {
                    return Err(Error::invalid(format!(
                        "bump supports overlap near theta = {} and {}",
                        b.center_theta, other.center_theta
                    )));
                }
            }
            p.bumps.push(b.clone());
        }
        let min_rho = p.grid_min_rho();
        if !(min_rho > 0.0) {
            return Err(Error::Positivity { min_rho });
        }
        let drift = p.length() - 1.0;
        if constrained || patches.is_empty() {
            Ok(PatchedProfile { profile: p, length_drift: drift, renormalized: false })
        } else {
            Ok(PatchedProfile { profile: p.normalized(), length_drift: drift, renormalized: true })
        }
    }

    /// Smallest radius of curvature over the check grid.
    pub fn min_rho(&self) -> f64 {
        self.grid_min_rho()
    }

    /// Builds a patch centred at `s_point` whose curvature jet change there is
    /// `target_jet` (values of `Δκ, Δκ', ...` with respect to arc length).
    pub fn make_bump(&self, s_point: f64, target_jet: &[f64], half_width: f64, exclusion: &[f64]) -> Result<BumpPatch> {
        if target_jet.is_empty() {
            return Err(Error::invalid("empty target jet"));
        }
        if !(half_width > 0.0 && half_width < PI / 2.0) {
            return Err(Error::invalid(format!("half width {half_width} out of range")));
        }
        let l = self.length();
        let theta_c = self.theta_of_s(s_point);
        for &e in exclusion {
            let ds = (e - s_point) - l * ((e - s_point) / l).round();
            if ds.abs() < 1e-12 {
                continue;
            }
            let te = self.theta_of_s(s_point + ds);
            if (te - theta_c).abs() < half_width {
                return Err(Error::SupportCollision { s: e });
            }
        }
        let m = target_jet.len() - 1;
        let dim = 6 + m + 1 + BUMP_SLACK;
        if target_jet.iter().all(|x| *x == 0.0) {
            return Ok(BumpPatch::new(theta_c, half_width, vec![0.0; dim], target_jet.to_vec()));
        }
        let y = rho_jet_change(&self.rho_series(theta_c, m), target_jet)?;

        let h = half_width;
        let rows = 6 + m + 1;
        let mut a = DMatrix::<f64>::zeros(rows, dim);
        let mut rhs = DVector::<f64>::zeros(rows);
        for j in 0..dim {
            let moments = |lo: f64, hi: f64, k: usize| -> f64 {
                integrate(
                    |u| {
                        let b = basis_values(u, dim)[j];
                        match k {
                            0 => b,
                            1 => b * (1.0 - (h * u).cos()) / (h * h),
                            _ => b * (h * u).sin() / h,
                        }
                    },
                    lo,
                    hi,
                    HALF_PANELS,
                )
            };
            for k in 0..3 {
                a[(k, j)] = moments(-1.0, 0.0, k);
                a[(3 + k, j)] = moments(0.0, 1.0, k);
            }
        }
        let b0 = basis_series(0.0, 1.0, dim, m);
        for k in 0..=m {
            for j in 0..dim {
                a[(6 + k, j)] = b0[j].derivative_at(k);
            }
            rhs[6 + k] = y[k] * h.powi(k as i32);
        }
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin < 1e-12 * smax {
            return Err(Error::singular("bump basis system", smin / smax));
        }
        let w = svd
            .solve(&rhs, 1e-14 * smax)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(BumpPatch::new(theta_c, half_width, w.iter().copied().collect(), target_jet.to_vec()))
    }
}

/// Curvature jet (in arc length) at the expansion point of a ρ-series in θ.
pub fn curvature_jet_from_rho(rho: &Series) -> Vec<f64> {
    let mut s = rho.integral(0.0);
    s.c[0] = 0.0;
    let k = rho.recip().compose(&s.reversion());
    (0..=rho.order()).map(|i| k.derivative_at(i)).collect()
}

/// Changes of `ρ, ρ', ...` (in θ) that realize the curvature jet change `target`.
fn rho_jet_change(base: &Series, target: &[f64]) -> Result<Vec<f64>> {
    let m = target.len() - 1;
    let k0 = curvature_jet_from_rho(base);
    let goal: Vec<f64> = k0.iter().zip(target).map(|(a, b)| a + b).collect();
    let jet_of = |y: &[f64]| -> Vec<f64> {
        let mut r = base.clone();
        for (i, yi) in y.iter().enumerate() {
            r.c[i] += yi / factorial(i);
        }
        curvature_jet_from_rho(&r)
    };
    // Leading-order guess: Δκ^{(n)} ≈ -Δρ^{(n)} / ρ^{n+2}.
    let rho0 = base.c[0];
    let mut y: Vec<f64> = target
        .iter()
        .enumerate()
        .map(|(n, t)| -t * rho0.powi(n as i32 + 2))
        .collect();
    let scale = goal.iter().fold(1.0f64, |a, g| a.max(g.abs()));
    for _ in 0..50 {
        let cur = jet_of(&y);
        let r: Vec<f64> = cur.iter().zip(&goal).map(|(c, g)| c - g).collect();
        let err = r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if err <= 1e-15 * scale {
            return Ok(y);
        }
        let mut jac = DMatrix::<f64>::zeros(m + 1, m + 1);
        for j in 0..=m {
            let step = 1e-7 * (y[j].abs() + rho0.powi(j as i32 + 2) * scale * 1e-3).max(1e-12);
            let mut yp = y.clone();
            yp[j] += step;
            let mut ym = y.clone();
            ym[j] -= step;
            let jp = jet_of(&yp);
            let jm = jet_of(&ym);
            for i in 0..=m {
                jac[(i, j)] = (jp[i] - jm[i]) / (2.0 * step);
            }
        }
        let rv = DVector::from_vec(r);
        let d = jac.lu().solve(&rv).ok_or_else(|| Error::singular("curvature jet inversion", 0.0))?;
        for j in 0..=m {
            y[j] -= d[j];
        }
    }
    let cur = jet_of(&y);
    let err = cur.iter().zip(&goal).map(|(c, g)| (c - g).abs()).fold(0.0, f64::max);
    if err <= 1e-12 * scale {
        Ok(y)
    } else {
        Err(Error::NoConvergence { what: "curvature jet inversion".into(), iterations: 50, residual: err })
    }
}
