//! Invariant manifolds of hyperbolic fixed points of planar maps, splitting
//! functions between them, and tangency detection.
//!
//! Maps act on points `[s, φ]` (or any plane coordinates for the model maps).
//! A manifold branch is parameterized by `σ ≥ 0` through a polynomial seed
//! `K` solving `G(K(x)) = K(Λx)`, where `G` is the map (unstable side) or its
//! inverse (stable side); points further out are images `G^k(K(σ/Λ^k))`.

use crate::billiard::{map_jet_iter, step, PhasePoint};
use crate::domain::RadiusProfile;
use crate::error::{Error, Result};
use crate::orbit::{classify_matrix, Classification, PeriodicOrbit};
use crate::tps::Tps;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Point = [f64; 2];

/// Smallest admissible `|s|`-component of a unit eigenvector.
pub const VERTICAL_TOL: f64 = 1e-8;

/// A planar map with a distinguished fixed point.
pub trait PlaneMap: Sync {
    fn forward(&self, p: Point) -> Result<Point>;
    fn backward(&self, p: Point) -> Result<Point>;
    fn fixed_point(&self) -> Point;
    /// Taylor jet at the fixed point, in deviation coordinates.
    fn local_jet(&self, order: usize) -> Result<[Tps; 2]>;
    /// Period of the first coordinate, when it is cyclic.
    fn period(&self) -> Option<f64> {
        None
    }
    /// Density of the preserved area form at `p`.
    fn area_density(&self, _p: Point) -> f64 {
        1.0
    }
    /// Whether eigenvectors must be transverse to the vertical direction.
    fn needs_transverse(&self) -> bool {
        false
    }
}

/// `diag(λ, 1/λ)` about the origin.
#[derive(Clone, Debug)]
pub struct LinearSaddle {
    pub lambda: f64,
}

impl PlaneMap for LinearSaddle {
    fn forward(&self, p: Point) -> Result<Point> {
        Ok([self.lambda * p[0], p[1] / self.lambda])
    }
    fn backward(&self, p: Point) -> Result<Point> {
        Ok([p[0] / self.lambda, self.lambda * p[1]])
    }
    fn fixed_point(&self) -> Point {
        [0.0, 0.0]
    }
    fn local_jet(&self, order: usize) -> Result<[Tps; 2]> {
        Ok([Tps::var_u(0.0, order).scale(self.lambda), Tps::var_v(0.0, order).scale(1.0 / self.lambda)])
    }
}

/// A map given by two truncated power series about a fixed origin.
#[derive(Clone, Debug)]
pub struct PolynomialMap {
    pub comps: [Tps; 2],
    /// Treat the map like a billiard jet and reject vertical eigenvectors.
    pub transverse: bool,
}

impl PolynomialMap {
    pub fn new(x: Tps, y: Tps) -> Result<Self> {
        if x.value() != 0.0 || y.value() != 0.0 {
            return Err(Error::invalid("polynomial map must fix the origin"));
        }
        Ok(PolynomialMap { comps: [x, y], transverse: false })
    }

    pub fn transverse(mut self) -> Self {
        self.transverse = true;
        self
    }

    fn jacobian(&self, p: Point) -> Matrix2<f64> {
        let d = |c: &Tps, v: usize| c.deriv(v).eval(p[0], p[1]);
        Matrix2::new(d(&self.comps[0], 0), d(&self.comps[0], 1), d(&self.comps[1], 0), d(&self.comps[1], 1))
    }
}

impl PlaneMap for PolynomialMap {
    fn forward(&self, p: Point) -> Result<Point> {
        Ok([self.comps[0].eval(p[0], p[1]), self.comps[1].eval(p[0], p[1])])
    }

    fn backward(&self, p: Point) -> Result<Point> {
        let a = self.jacobian([0.0, 0.0]);
        let ai = a.try_inverse().ok_or_else(|| Error::singular("polynomial map linear part", a.determinant()))?;
        let mut z = ai * Vector2::new(p[0], p[1]);
        let scale = p[0].abs().max(p[1].abs()).max(1e-300);
        for _ in 0..60 {
            let f = self.forward([z[0], z[1]])?;
            let r = Vector2::new(f[0] - p[0], f[1] - p[1]);
            if r.amax() <= 4.0 * f64::EPSILON * scale {
                return Ok([z[0], z[1]]);
            }
            let j = self.jacobian([z[0], z[1]]);
            let dz = j.lu().solve(&r).ok_or_else(|| Error::singular("polynomial map inverse", j.determinant()))?;
            z -= dz;
            if dz.amax() <= 4.0 * f64::EPSILON * z.amax().max(1e-300) {
                return Ok([z[0], z[1]]);
            }
        }
        Err(Error::NoConvergence { what: "polynomial map inverse".into(), iterations: 60, residual: scale })
    }

    fn fixed_point(&self) -> Point {
        [0.0, 0.0]
    }

    fn local_jet(&self, order: usize) -> Result<[Tps; 2]> {
        Ok([self.comps[0].truncate(order), self.comps[1].truncate(order)])
    }

    fn needs_transverse(&self) -> bool {
        self.transverse
    }
}

/// The saddle `diag(λ, 1/λ)` preceded by the shear `y += ε x χ(x/σ)`, with
/// `χ = 1` on `|u| ≤ 1/2` and `χ = 0` for `|u| ≥ 1`.
#[derive(Clone, Debug)]
pub struct StripShearSaddle {
    pub lambda: f64,
    pub eps: f64,
    pub sigma: f64,
}

/// Smooth step equal to 1 on `|u| ≤ 1/2` and 0 on `|u| ≥ 1`.
pub fn plateau(u: f64) -> f64 {
    let a = u.abs();
    if a <= 0.5 {
        return 1.0;
    }
    if a >= 1.0 {
        return 0.0;
    }
    let g = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let r = (1.0 - a) / 0.5;
    g(r) / (g(r) + g(1.0 - r))
}

impl StripShearSaddle {
    fn shear(&self, x: f64) -> f64 {
        self.eps * x * plateau(x / self.sigma)
    }
}

impl PlaneMap for StripShearSaddle {
    fn forward(&self, p: Point) -> Result<Point> {
        let y = p[1] + self.shear(p[0]);
        Ok([self.lambda * p[0], y / self.lambda])
    }
    fn backward(&self, p: Point) -> Result<Point> {
        let x = p[0] / self.lambda;
        Ok([x, self.lambda * p[1] - self.shear(x)])
    }
    fn fixed_point(&self) -> Point {
        [0.0, 0.0]
    }
    fn local_jet(&self, order: usize) -> Result<[Tps; 2]> {
        let x = Tps::var_u(0.0, order);
        let y = Tps::var_v(0.0, order);
        Ok([x.scale(self.lambda), (&y + &x.scale(self.eps)).scale(1.0 / self.lambda)])
    }
}

/// `f^q` of a billiard about a point of a periodic orbit, in lifted
/// `(s, φ)` coordinates.
#[derive(Clone, Debug)]
pub struct BilliardReturn {
    pub domain: RadiusProfile,
    pub q: usize,
    pub winding: u32,
    pub anchor: PhasePoint,
}

impl BilliardReturn {
    pub fn new(domain: &RadiusProfile, orbit: &PeriodicOrbit, index: usize) -> Self {
        BilliardReturn { domain: domain.clone(), q: orbit.q, winding: orbit.p, anchor: orbit.point(index) }
    }
}

impl PlaneMap for BilliardReturn {
    fn forward(&self, p: Point) -> Result<Point> {
        let (mut s, mut phi) = (p[0], p[1]);
        for _ in 0..self.q {
            let st = step(&self.domain, s, phi)?;
            s = st.s1;
            phi = st.phi1;
        }
        Ok([s - self.winding as f64 * self.domain.length(), phi])
    }

    fn backward(&self, p: Point) -> Result<Point> {
        let l = self.domain.length();
        let (mut s, mut phi) = (p[0], p[1]);
        for _ in 0..self.q {
            let st = step(&self.domain, s, PI - phi)?;
            s = st.s1 - l;
            phi = PI - st.phi1;
        }
        Ok([s + self.winding as f64 * l, phi])
    }

    fn fixed_point(&self) -> Point {
        [self.anchor.s, self.anchor.phi]
    }

    fn local_jet(&self, order: usize) -> Result<[Tps; 2]> {
        let j = map_jet_iter(&self.domain, self.anchor, order, self.q)?;
        let s0 = j.s.value();
        let p0 = j.phi.value();
        Ok([j.s.add_const(-s0), j.phi.add_const(-p0)])
    }

    fn period(&self) -> Option<f64> {
        Some(self.domain.length())
    }

    fn area_density(&self, p: Point) -> f64 {
        p[1].sin()
    }

    fn needs_transverse(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Unstable,
    Stable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub side: Side,
    /// Branch along `+v` (true) or `−v`, with `v` the eigenvector whose
    /// first component is positive.
    pub positive: bool,
}

impl Branch {
    pub fn new(side: Side, positive: bool) -> Self {
        Branch { side, positive }
    }

    fn sign(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }
}

/// Difference `a − b` with the cyclic first coordinate reduced.
pub fn delta(a: Point, b: Point, period: Option<f64>) -> Point {
    let mut ds = a[0] - b[0];
    if let Some(l) = period {
        ds -= l * (ds / l).round();
    }
    [ds, a[1] - b[1]]
}

fn norm(v: Point) -> f64 {
    v[0].hypot(v[1])
}

/// Polynomial seed `K(x) = anchor + Σ k_j x^j` of one branch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifoldSeed {
    pub anchor: Point,
    pub branch: Branch,
    /// Eigenvalue of the linear part belonging to the branch.
    pub eigenvalue: f64,
    /// Expansion factor of the outward map, `G(K(x)) = K(Λx)`.
    pub rate: f64,
    pub coeffs: Vec<Point>,
    pub radius: f64,
    /// `max |G(K(x)) − K(Λx)|` over the seed.
    pub defect: f64,
    pub period: Option<f64>,
}

impl ManifoldSeed {
    pub fn local(&self, x: f64) -> Point {
        let mut p = [0.0, 0.0];
        for k in self.coeffs.iter().rev() {
            p = [p[0] * x + k[0], p[1] * x + k[1]];
        }
        [self.anchor[0] + p[0] * x, self.anchor[1] + p[1] * x]
    }

    pub fn tangent(&self) -> Point {
        self.coeffs[0]
    }

    fn outward(&self, map: &dyn PlaneMap, p: Point) -> Result<Point> {
        match self.branch.side {
            Side::Unstable => map.forward(p),
            Side::Stable => map.backward(p),
        }
    }

    /// Point at parameter `σ ≥ 0` on the branch.
    pub fn eval(&self, map: &dyn PlaneMap, sigma: f64) -> Result<Point> {
        let mut x = self.branch.sign() * sigma;
        let mut k = 0;
        while x.abs() > self.radius {
            x /= self.rate;
            k += 1;
        }
        let mut p = self.local(x);
        for _ in 0..k {
            p = self.outward(map, p)?;
        }
        Ok(p)
    }

    /// Number of outward iterations used at parameter `σ`.
    pub fn level(&self, sigma: f64) -> usize {
        let mut x = sigma.abs();
        let mut k = 0;
        while x > self.radius {
            x /= self.rate.abs();
            k += 1;
        }
        k
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SeedOptions {
    pub order: usize,
    pub max_radius: f64,
    pub defect_tol: f64,
}

impl Default for SeedOptions {
    fn default() -> Self {
        SeedOptions { order: 6, max_radius: 0.05, defect_tol: 1e-11 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ArcSample {
    pub sigma: f64,
    pub point: Point,
    /// Cumulative polyline length from the anchor.
    pub t: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifoldArc {
    pub seed: ManifoldSeed,
    pub samples: Vec<ArcSample>,
    pub local_order: usize,
    /// Largest midpoint deviation from the polyline chords.
    pub chord_error: f64,
    /// Outward iterations covered by the samples.
    pub levels: usize,
}

impl ManifoldArc {
    pub fn sigma_max(&self) -> f64 {
        self.samples.last().map(|s| s.sigma).unwrap_or(0.0)
    }

    pub fn branch(&self) -> Branch {
        self.seed.branch
    }

    /// CSV polyline `sigma,t,s,phi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,t,s,phi\n");
        for s in &self.samples {
            out.push_str(&format!("{:.17e},{:.17e},{:.17e},{:.17e}\n", s.sigma, s.t, s.point[0], s.point[1]));
        }
        out
    }
}

/// Unnormalized eigenvector of `a` for the real eigenvalue `nu`.
pub fn eigenvector(a: &Matrix2<f64>, nu: f64) -> Point {
    let r1 = [a[(0, 1)], nu - a[(0, 0)]];
    let r2 = [nu - a[(1, 1)], a[(1, 0)]];
    if norm(r1) >= norm(r2) {
        r1
    } else {
        r2
    }
}

/// Eigenvalues `(unstable, stable)` and unit eigenvectors with positive first
/// component (positive second component for vertical ones).
pub fn saddle_eigen(a: &Matrix2<f64>, transverse: bool) -> Result<((f64, Point), (f64, Point))> {
    let e = classify_matrix(a);
    if e.classification != Classification::Hyperbolic {
        return Err(Error::NotHyperbolic { trace: e.trace });
    }
    let (l1, l2) = e.eigenvalues;
    let vec = |nu: f64| -> Result<Point> {
        let v = eigenvector(a, nu);
        let n = norm(v);
        if !(n > 0.0) {
            return Err(Error::singular("eigenvector", n));
        }
        let v = [v[0] / n, v[1] / n];
        if v[0].abs() < VERTICAL_TOL {
            if transverse {
                return Err(Error::Condition(format!("eigenvector for eigenvalue {nu} is vertical")));
            }
            return Ok(if v[1] < 0.0 { [-v[0], -v[1]] } else { v });
        }
        Ok(if v[0] < 0.0 { [-v[0], -v[1]] } else { v })
    };
    Ok(((l1, vec(l1)?), (l2, vec(l2)?)))
}

fn linear_part(jet: &[Tps; 2]) -> Matrix2<f64> {
    Matrix2::new(jet[0].coeff(1, 0), jet[0].coeff(0, 1), jet[1].coeff(1, 0), jet[1].coeff(0, 1))
}

/// Seed coefficients `k_1..k_order` of `F(K(x)) = K(νx)`.
fn parametrization(jet: &[Tps; 2], nu: f64, v: Point, order: usize) -> Result<Vec<Point>> {
    let a = linear_part(jet);
    let mut coeffs = vec![v];
    for j in 2..=order {
        let mut ks = Tps::zero(order);
        let mut kp = Tps::zero(order);
        for (i, k) in coeffs.iter().enumerate() {
            ks.set_coeff(i + 1, 0, k[0]);
            kp.set_coeff(i + 1, 0, k[1]);
        }
        let rs = jet[0].compose2(&ks, &kp).coeff(j, 0);
        let rp = jet[1].compose2(&ks, &kp).coeff(j, 0);
        let m = a - Matrix2::identity() * nu.powi(j as i32);
        let k = m
            .lu()
            .solve(&Vector2::new(-rs, -rp))
            .ok_or_else(|| Error::singular("parametrization homological equation", m.determinant()))?;
        coeffs.push([k[0], k[1]]);
    }
    Ok(coeffs)
}

fn seed_defect(map: &dyn PlaneMap, seed: &ManifoldSeed, r: f64) -> Result<f64> {
    let mut d: f64 = 0.0;
    for f in [0.25, 0.5, 0.75, 1.0] {
        let x = seed.branch.sign() * f * r;
        let img = seed.outward(map, seed.local(x))?;
        d = d.max(norm(delta(img, seed.local(seed.rate * x), seed.period)));
    }
    Ok(d)
}

fn chord_deviation(a: Point, m: Point, b: Point, period: Option<f64>) -> f64 {
    let ab = delta(b, a, period);
    let am = delta(m, a, period);
    let l = norm(ab);
    if l == 0.0 {
        return norm(am);
    }
    (ab[0] * am[1] - ab[1] * am[0]).abs() / l
}

fn with_lengths(pts: Vec<(f64, Point)>, period: Option<f64>) -> Vec<ArcSample> {
    let mut t = 0.0;
    let mut out: Vec<ArcSample> = Vec::with_capacity(pts.len());
    for (sigma, point) in pts {
        if let Some(prev) = out.last() {
            t += norm(delta(point, prev.point, period));
        }
        out.push(ArcSample { sigma, point, t });
    }
    out
}

/// Local branch through the fixed point, from a Taylor seed of the
/// requested order.
pub fn local_manifold(map: &dyn PlaneMap, branch: Branch, opts: SeedOptions) -> Result<ManifoldArc> {
    if opts.order < 1 {
        return Err(Error::invalid("seed order must be at least 1"));
    }
    let jet = map.local_jet(opts.order)?;
    let a = linear_part(&jet);
    let ((lu, vu), (ls, vs)) = saddle_eigen(&a, map.needs_transverse())?;
    let (nu, v) = match branch.side {
        Side::Unstable => (lu, vu),
        Side::Stable => (ls, vs),
    };
    let coeffs = parametrization(&jet, nu, v, opts.order)?;
    let rate = match branch.side {
        Side::Unstable => nu,
        Side::Stable => 1.0 / nu,
    };
    let mut seed = ManifoldSeed {
        anchor: map.fixed_point(),
        branch,
        eigenvalue: nu,
        rate,
        coeffs,
        radius: opts.max_radius,
        defect: 0.0,
        period: map.period(),
    };
    let mut r = opts.max_radius;
    let defect_at = |r: f64| match seed_defect(map, &seed, r) {
        Err(Error::Grazing { .. }) | Err(Error::NoConvergence { .. }) => Ok(f64::INFINITY),
        other => other,
    };
    let mut d = defect_at(r)?;
    let mut halvings = 0;
    while !(d <= opts.defect_tol) {
        r *= 0.5;
        halvings += 1;
        if halvings > 60 {
            return Err(Error::NoConvergence { what: "seed radius".into(), iterations: halvings, residual: d });
        }
        d = defect_at(r)?;
    }
    seed.radius = r;
    seed.defect = d;
    let n = 16;
    let mut pts = vec![];
    let mut chord: f64 = 0.0;
    for i in 0..=n {
        let sigma = r * i as f64 / n as f64;
        pts.push((sigma, seed.eval(map, sigma)?));
    }
    for w in pts.windows(2) {
        let m = seed.eval(map, 0.5 * (w[0].0 + w[1].0))?;
        chord = chord.max(chord_deviation(w[0].1, m, w[1].1, seed.period));
    }
    Ok(ManifoldArc { samples: with_lengths(pts, seed.period), local_order: opts.order, chord_error: chord, levels: 0, seed })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GlobalizeOptions {
    pub levels: usize,
    pub max_points: usize,
    pub chord_tol: f64,
    pub max_segment: f64,
    /// Truncation of the arc at this polyline length.
    pub max_length: f64,
}

impl Default for GlobalizeOptions {
    fn default() -> Self {
        GlobalizeOptions { levels: 6, max_points: 20_000, chord_tol: 1e-9, max_segment: 0.01, max_length: f64::INFINITY }
    }
}

/// Extends a seeded branch by `levels` outward iterations with adaptive
/// insertion.
pub fn globalize(map: &dyn PlaneMap, arc: &ManifoldArc, opts: GlobalizeOptions) -> Result<ManifoldArc> {
    let seed = &arc.seed;
    let lam = seed.rate.abs();
    let mut sigmas: Vec<f64> = arc.samples.iter().map(|s| s.sigma).collect();
    let coarse = 8;
    for k in 1..=opts.levels {
        let lo = seed.radius * lam.powi(k as i32 - 1);
        for i in 1..=coarse {
            sigmas.push(lo * lam.powf(i as f64 / coarse as f64));
        }
    }
    sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sigmas.dedup();
    if sigmas.len() > opts.max_points {
        return Err(Error::Budget(format!("{} coarse points exceed the budget of {}", sigmas.len(), opts.max_points)));
    }
    let mut pts: Vec<(f64, Point)> = vec![];
    let mut length = 0.0;
    for &s in &sigmas {
        let p = seed.eval(map, s)?;
        if let Some(prev) = pts.last() {
            length += norm(delta(p, prev.1, seed.period));
        }
        pts.push((s, p));
        if length > opts.max_length {
            break;
        }
    }
    let mut out: Vec<(f64, Point)> = vec![pts[0]];
    let mut chord: f64 = 0.0;
    length = 0.0;
    'outer: for w in pts.windows(2) {
        let mut stack = vec![(w[1], 0usize)];
        let mut left = w[0];
        while let Some((right, depth)) = stack.pop() {
            let sm = 0.5 * (left.0 + right.0);
            let pm = seed.eval(map, sm)?;
            let dev = chord_deviation(left.1, pm, right.1, seed.period);
            let len = norm(delta(right.1, left.1, seed.period));
            if (dev > opts.chord_tol || len > opts.max_segment) && depth < 60 && sm > left.0 && sm < right.0 {
                stack.push((right, depth + 1));
                stack.push(((sm, pm), depth + 1));
            } else {
                chord = chord.max(dev);
                length += len;
                out.push(right);
                left = right;
                if out.len() > opts.max_points {
                    return Err(Error::Budget(format!("more than {} manifold points", opts.max_points)));
                }
                if length > opts.max_length {
                    break 'outer;
                }
            }
        }
    }
    Ok(ManifoldArc {
        seed: seed.clone(),
        samples: with_lengths(out, seed.period),
        local_order: arc.local_order,
        chord_error: chord,
        levels: opts.levels,
    })
}

fn point_segment_distance(p: Point, a: Point, b: Point, period: Option<f64>) -> f64 {
    let ab = delta(b, a, period);
    let ap = delta(p, a, period);
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if l2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

/// Distance from `p` to the polyline near parameter `sigma`.
pub fn distance_to_arc(arc: &ManifoldArc, p: Point, sigma: f64) -> f64 {
    let s = &arc.samples;
    let i = s.partition_point(|x| x.sigma < sigma);
    let lo = i.saturating_sub(3);
    let hi = (i + 3).min(s.len() - 1);
    let mut d = f64::INFINITY;
    for j in lo..hi {
        d = d.min(point_segment_distance(p, s[j].point, s[j + 1].point, arc.seed.period));
    }
    d
}

/// `max dist(f^q(x), arc)` over samples whose images stay on the arc.
pub fn invariance_defect(map: &dyn PlaneMap, arc: &ManifoldArc) -> Result<f64> {
    let seed = &arc.seed;
    let twice = seed.eigenvalue < 0.0;
    let factor = {
        let f = match seed.branch.side {
            Side::Unstable => seed.eigenvalue.abs(),
            Side::Stable => seed.eigenvalue.abs(),
        };
        if twice {
            f * f
        } else {
            f
        }
    };
    let smax = arc.sigma_max();
    let mut d: f64 = 0.0;
    for s in &arc.samples {
        let img_sigma = s.sigma * factor;
        if img_sigma > smax {
            continue;
        }
        let mut p = map.forward(s.point)?;
        if twice {
            p = map.forward(p)?;
        }
        d = d.max(distance_to_arc(arc, p, img_sigma));
    }
    Ok(d)
}

/// A parameterized plane curve.
pub trait Curve {
    fn point(&self, t: f64) -> Result<Point>;
    fn range(&self) -> (f64, f64);
    fn period(&self) -> Option<f64> {
        None
    }
    /// Parameter bracket containing the point nearest to `p`, if known.
    fn bracket(&self, _p: Point) -> Option<(f64, f64)> {
        None
    }
}

/// A manifold branch evaluated exactly through its seed.
pub struct ManifoldCurve<'a> {
    pub map: &'a dyn PlaneMap,
    pub arc: &'a ManifoldArc,
}

impl Curve for ManifoldCurve<'_> {
    fn point(&self, t: f64) -> Result<Point> {
        self.arc.seed.eval(self.map, t)
    }
    fn range(&self) -> (f64, f64) {
        (0.0, self.arc.sigma_max())
    }
    fn period(&self) -> Option<f64> {
        self.arc.seed.period
    }
    fn bracket(&self, p: Point) -> Option<(f64, f64)> {
        let s = &self.arc.samples;
        let mut best = (f64::INFINITY, 0);
        for j in 0..s.len().saturating_sub(1) {
            let d = point_segment_distance(p, s[j].point, s[j + 1].point, self.arc.seed.period);
            if d < best.0 {
                best = (d, j);
            }
        }
        let j = best.1;
        Some((s[j.saturating_sub(1)].sigma, s[(j + 2).min(s.len() - 1)].sigma))
    }
}

pub struct FnCurve<F: Fn(f64) -> Point> {
    pub f: F,
    pub lo: f64,
    pub hi: f64,
}

impl<F: Fn(f64) -> Point> Curve for FnCurve<F> {
    fn point(&self, t: f64) -> Result<Point> {
        Ok((self.f)(t))
    }
    fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// Foot of the perpendicular from a point to a curve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Foot {
    pub t: f64,
    pub point: Point,
    /// `R·(0, 1)` where `R` turns `(1, 0)` into the unit tangent.
    pub normal: Point,
    /// Signed distance along `normal`.
    pub distance: f64,
}

fn unit_tangent(c: &dyn Curve, t: f64) -> Result<Point> {
    let (lo, hi) = c.range();
    let h = 1e-5 * (hi - lo).max(1e-300);
    let a = c.point((t - h).max(lo))?;
    let b = c.point((t + h).min(hi))?;
    let d = delta(b, a, c.period());
    let n = norm(d);
    if !(n > 0.0) {
        return Err(Error::singular("curve tangent", n));
    }
    Ok([d[0] / n, d[1] / n])
}

/// Foot point on `c` of `p`, searched in `[lo, hi]`.
pub fn foot_point(c: &dyn Curve, p: Point, lo: f64, hi: f64) -> Result<Foot> {
    let period = c.period();
    let dist2 = |t: f64| -> Result<f64> {
        let d = delta(p, c.point(t)?, period);
        Ok(d[0] * d[0] + d[1] * d[1])
    };
    let n = 24;
    let mut best = (f64::INFINITY, 0usize);
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    for (i, &t) in grid.iter().enumerate() {
        let d = dist2(t)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    let mut a = grid[best.1.saturating_sub(1)];
    let mut b = grid[(best.1 + 1).min(n)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = dist2(x1)?;
    let mut f2 = dist2(x2)?;
    for _ in 0..200 {
        if (b - a) <= 1e-15 * (hi - lo).abs().max(b.abs()) {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = dist2(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = dist2(x2)?;
        }
    }
    let t = 0.5 * (a + b);
    let q = c.point(t)?;
    let tan = unit_tangent(c, t)?;
    let normal = [-tan[1], tan[0]];
    let d = delta(p, q, period);
    Ok(Foot { t, point: q, normal, distance: d[0] * normal[0] + d[1] * normal[1] })
}

/// Samples of a splitting function `Φ(t)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PhiSamples {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    /// Parameters of the foot points on the second curve.
    pub feet: Vec<f64>,
    pub points: Vec<Point>,
    pub normals: Vec<Point>,
}

impl PhiSamples {
    pub fn from_fn(t: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        let phi = t.iter().map(|&x| f(x)).collect();
        PhiSamples { t, phi, ..Default::default() }
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.t.iter().copied().zip(self.phi.iter().copied()).collect()
    }
}

pub const MIN_WINDOW_SAMPLES: usize = 64;

/// Foot point over the whole curve.
pub fn locate(c: &dyn Curve, p: Point) -> Result<Foot> {
    let (lo, hi) = c.bracket(p).unwrap_or_else(|| c.range());
    foot_point(c, p, lo, hi)
}

/// Signed distance of `wu(t)` to `ws` along the normal of `ws` at the foot
/// point, on a uniform grid of `samples` points in `window`.
pub fn splitting_function(wu: &dyn Curve, ws: &dyn Curve, window: (f64, f64), samples: usize) -> Result<PhiSamples> {
    if samples < MIN_WINDOW_SAMPLES {
        return Err(Error::invalid(format!("window needs at least {MIN_WINDOW_SAMPLES} samples, got {samples}")));
    }
    let (ulo, uhi) = wu.range();
    if !(window.0 >= ulo && window.1 <= uhi && window.0 < window.1) {
        return Err(Error::invalid(format!("window {window:?} outside the first curve's range ({ulo}, {uhi})")));
    }
    let (slo, shi) = ws.range();
    let mut out = PhiSamples::default();
    for i in 0..samples {
        let t = window.0 + (window.1 - window.0) * i as f64 / (samples - 1) as f64;
        let p = wu.point(t)?;
        let foot = locate(ws, p)?;
        let edge = 1e-9 * (shi - slo).max(1.0);
        if foot.t - slo <= edge || shi - foot.t <= edge {
            return Err(Error::invalid("curves do not overlap over the window"));
        }
        out.t.push(t);
        out.phi.push(foot.distance);
        out.feet.push(foot.t);
        out.points.push(p);
        out.normals.push(foot.normal);
    }
    let inc = out.feet.windows(2).filter(|w| w[1] > w[0]).count();
    let dec = out.feet.windows(2).filter(|w| w[1] < w[0]).count();
    if inc > 0 && dec > 0 {
        return Err(Error::Condition("second curve is not a graph over its tangent on the window".into()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TangencyOptions {
    pub value_tol: f64,
    pub slope_tol: f64,
    /// Samples on each side of the centre used by local fits.
    pub fit_half: usize,
    pub fit_degree: usize,
    /// Relative size below which a Taylor term counts as zero.
    pub significance: f64,
}

impl Default for TangencyOptions {
    fn default() -> Self {
        TangencyOptions { value_tol: 1e-8, slope_tol: 1e-6, fit_half: 8, fit_degree: 6, significance: 1e-6 }
    }
}

/// Least-squares polynomial about `t0`; returns derivatives `Φ^{(j)}(t0)`
/// and the RMS residual.
pub fn local_fit(t: &[f64], phi: &[f64], t0: f64, degree: usize) -> Result<(Vec<f64>, f64)> {
    let n = t.len();
    if n <= degree {
        return Err(Error::invalid(format!("{n} samples cannot fit degree {degree}")));
    }
    let w = t.iter().map(|x| (x - t0).abs()).fold(0.0, f64::max).max(1e-300);
    let mut a = DMatrix::zeros(n, degree + 1);
    for i in 0..n {
        let u = (t[i] - t0) / w;
        let mut p = 1.0;
        for j in 0..=degree {
            a[(i, j)] = p;
            p *= u;
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin < 1e-12 * smax {
        return Err(Error::singular("local polynomial fit", smin / smax));
    }
    let b = DVector::from_column_slice(phi);
    let c = svd.solve(&b, 0.0).map_err(|e| Error::invalid(e.to_string()))?;
    let r = &a * &c - &b;
    let rms = (r.norm_squared() / n as f64).sqrt();
    let mut f = 1.0;
    let derivs = (0..=degree)
        .map(|j| {
            if j > 0 {
                f *= j as f64;
            }
            c[j] * f / w.powi(j as i32)
        })
        .collect();
    Ok((derivs, rms))
}

fn poly_eval(d: &[f64], x: f64) -> (f64, f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    let mut ddp = 0.0;
    let mut f = 1.0;
    for (j, c) in d.iter().enumerate() {
        if j > 0 {
            f *= j as f64;
        }
        let a = c / f;
        p += a * x.powi(j as i32);
        if j >= 1 {
            dp += a * j as f64 * x.powi(j as i32 - 1);
        }
        if j >= 2 {
            ddp += a * (j * (j - 1)) as f64 * x.powi(j as i32 - 2);
        }
    }
    (p, dp, ddp)
}

/// Taylor derivatives at `x` of the polynomial with derivatives `d` at 0.
fn recentre(d: &[f64], x: f64) -> Vec<f64> {
    let n = d.len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        let mut f = 1.0;
        for j in k..n {
            if j > k {
                f *= (j - k) as f64;
            }
            acc += d[j] * x.powi((j - k) as i32) / f;
        }
        out[k] = acc;
    }
    out
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangencyRecord {
    pub t: f64,
    pub point: Option<Point>,
    pub value: f64,
    pub slope: f64,
    /// `Φ^{(j)}(t)` from the local fit.
    pub derivatives: Vec<f64>,
    /// Tangency order `n`: `Φ, …, Φ^{(n)}` vanish and `Φ^{(n+1)} ≠ 0`.
    pub order_estimate: usize,
    pub normal: Option<Point>,
    /// RMS residual of the local fit.
    pub quality: f64,
    pub phi_samples: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TangencyScan {
    pub crossings: Vec<Crossing>,
    pub tangencies: Vec<TangencyRecord>,
}

/// Index range of a fit window about `i`.
fn fit_range(n: usize, i: usize, half: usize) -> (usize, usize) {
    let lo = i.saturating_sub(half);
    let hi = (lo + 2 * half + 1).min(n);
    (hi.saturating_sub(2 * half + 1), hi)
}

/// Smallest `k ≥ 2` whose Taylor term is significant, minus one; value and
/// slope are already known to vanish at a critical point.
fn order_from_derivatives(d: &[f64], w: f64, significance: f64) -> usize {
    let mut f = 1.0;
    let terms: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if j > 0 {
                f *= j as f64;
            }
            (c / f * w.powi(j as i32)).abs()
        })
        .collect();
    let big = terms.iter().skip(2).copied().fold(0.0, f64::max);
    let first = terms.iter().skip(2).position(|x| *x > significance * big).map_or(1, |k| k + 2);
    first - 1
}

/// Critical point of the fitted polynomial nearest the window centre.
fn critical_point(d: &[f64], w: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for k in 0..=8 {
        let mut x = w * (k as f64 / 4.0 - 1.0);
        for _ in 0..60 {
            let (_, dp, ddp) = poly_eval(d, x);
            if ddp == 0.0 {
                break;
            }
            let nx = x - dp / ddp;
            if (nx - x).abs() <= 1e-15 * w.max(nx.abs()) {
                x = nx;
                break;
            }
            x = nx;
        }
        let (_, dp, _) = poly_eval(d, x);
        let scale = d.iter().map(|c| c.abs()).fold(0.0, f64::max).max(1e-300);
        if x.abs() <= w && dp.abs() <= 1e-9 * scale && best.map_or(true, |b: f64| x.abs() < b.abs()) {
            best = Some(x);
        }
    }
    best
}

/// Transverse zeros and near-tangencies of sampled `Φ`.
pub fn detect_tangency(samples: &PhiSamples, opts: TangencyOptions) -> Result<TangencyScan> {
    let t = &samples.t;
    let phi = &samples.phi;
    let n = t.len();
    if n < MIN_WINDOW_SAMPLES {
        return Err(Error::invalid(format!("at least {MIN_WINDOW_SAMPLES} samples are needed, got {n}")));
    }
    let mut scan = TangencyScan::default();
    let mut candidates = vec![];
    for i in 1..n - 1 {
        let a = phi[i].abs();
        let min_abs = a <= phi[i - 1].abs() && a <= phi[i + 1].abs();
        let extremum = (phi[i] - phi[i - 1]) * (phi[i + 1] - phi[i]) <= 0.0;
        if min_abs || extremum {
            candidates.push(i);
        }
    }
    let mut seen: Vec<f64> = vec![];
    for &i in &candidates {
        let (lo, hi) = fit_range(n, i, opts.fit_half);
        let (d, rms) = local_fit(&t[lo..hi], &phi[lo..hi], t[i], opts.fit_degree)?;
        let w = t[lo..hi].iter().map(|x| (x - t[i]).abs()).fold(0.0, f64::max);
        let Some(x) = critical_point(&d, w) else { continue };
        let dc = recentre(&d, x);
        if dc[0].abs() >= opts.value_tol || dc[1].abs() >= opts.slope_tol {
            continue;
        }
        let tc = t[i] + x;
        let h = t[1] - t[0];
        if seen.iter().any(|s| (s - tc).abs() < 2.0 * h) {
            continue;
        }
        seen.push(tc);
        let order = order_from_derivatives(&dc, w, opts.significance);
        let j = ((tc - t[0]) / h).round().clamp(0.0, (n - 1) as f64) as usize;
        scan.tangencies.push(TangencyRecord {
            t: tc,
            point: samples.points.get(j).copied(),
            value: dc[0],
            slope: dc[1],
            derivatives: dc,
            order_estimate: order,
            normal: samples.normals.get(j).copied(),
            quality: rms,
            phi_samples: (lo..hi).map(|k| (t[k], phi[k])).collect(),
        });
    }
    for i in 0..n - 1 {
        if phi[i] == 0.0 || phi[i] * phi[i + 1] < 0.0 {
            if phi[i] == 0.0 && i > 0 && phi[i - 1] == 0.0 {
                continue;
            }
            let lo = i.saturating_sub(1);
            let hi = (i + 3).min(n);
            let (lo, hi) = if hi - lo < 4 { (hi.saturating_sub(4), hi) } else { (lo, hi) };
            let (d, _) = local_fit(&t[lo..hi], &phi[lo..hi], t[i], 3)?;
            let (mut a, mut b) = (0.0, t[i + 1] - t[i]);
            let fa = poly_eval(&d, a).0;
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if poly_eval(&d, m).0 * fa > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let x = 0.5 * (a + b);
            let tc = t[i] + x;
            let slope = poly_eval(&d, x).1;
            if seen.iter().any(|s| (s - tc).abs() < 2.0 * (t[1] - t[0])) && slope.abs() < opts.slope_tol {
                continue;
            }
            scan.crossings.push(Crossing { t: tc, slope });
        }
    }
    Ok(scan)
}

/// `Γ_j = Φ^{(j)}(t0)` for `j = 0..=n` from a local fit.
pub fn gammas(samples: &PhiSamples, t0: f64, n: usize, opts: TangencyOptions) -> Result<Vec<f64>> {
    let t = &samples.t;
    let i = t.partition_point(|x| *x < t0).min(t.len() - 1);
    let (lo, hi) = fit_range(t.len(), i, opts.fit_half);
    let (d, _) = local_fit(&t[lo..hi], &samples.phi[lo..hi], t0, opts.fit_degree.max(n + 2))?;
    Ok(d[..=n].to_vec())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplittingFamily {
    pub t0: f64,
    pub step: f64,
    /// Parameter vectors at which `Φ_ε` was evaluated.
    pub params: Vec<Vec<f64>>,
    /// `Γ_j(ε)` per parameter vector.
    pub gamma: Vec<Vec<f64>>,
    /// `∂Γ_j/∂ε_i`, rows `j`, columns `i`.
    pub jacobian: Vec<Vec<f64>>,
    pub genericity_det: Option<f64>,
    /// Determinant after scaling every column to unit length.
    pub scaled_det: Option<f64>,
}

impl SplittingFamily {
    pub fn matrix(&self) -> DMatrix<f64> {
        let r = self.jacobian.len();
        let c = self.jacobian.first().map_or(0, |x| x.len());
        DMatrix::from_fn(r, c, |i, j| self.jacobian[i][j])
    }
}

fn central_jacobian(
    family: &dyn Fn(&[f64]) -> Result<PhiSamples>,
    t0: f64,
    n: usize,
    dim: usize,
    h: f64,
    opts: TangencyOptions,
    params: &mut Vec<Vec<f64>>,
    gamma: &mut Vec<Vec<f64>>,
) -> Result<DMatrix<f64>> {
    let mut j = DMatrix::zeros(n + 1, dim);
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = h;
        let gp = gammas(&family(&e)?, t0, n, opts)?;
        params.push(e.clone());
        gamma.push(gp.clone());
        e[i] = -h;
        let gm = gammas(&family(&e)?, t0, n, opts)?;
        params.push(e);
        gamma.push(gm.clone());
        for r in 0..=n {
            j[(r, i)] = (gp[r] - gm[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Central-difference Jacobian of `(Γ_0, …, Γ_n)` at `t0` with respect to
/// the family parameters.
pub fn unfolding_jacobian(
    family: &dyn Fn(&[f64]) -> Result<PhiSamples>,
    t0: f64,
    n: usize,
    dim: usize,
    step: f64,
    opts: TangencyOptions,
) -> Result<SplittingFamily> {
    let mut params = vec![vec![0.0; dim]];
    let mut gamma = vec![gammas(&family(&vec![0.0; dim])?, t0, n, opts)?];
    let j = central_jacobian(family, t0, n, dim, step, opts, &mut params, &mut gamma)?;
    let j2 = central_jacobian(family, t0, n, dim, 0.5 * step, opts, &mut vec![], &mut vec![])?;
    for c in 0..dim {
        let a = j.column(c);
        let b = j2.column(c);
        let diff = (a - b).amax();
        if diff > 0.1 * a.amax().max(b.amax()) {
            return Err(Error::NoConvergence {
                what: format!("unfolding Jacobian column {c}: step {step} too large for the tangency"),
                iterations: 2,
                residual: diff,
            });
        }
    }
    let (genericity_det, scaled_det) = if n + 1 == dim {
        let mut s = j.clone();
        for mut c in s.column_iter_mut() {
            let nn = c.norm();
            if nn > 0.0 {
                c /= nn;
            }
        }
        (Some(j.determinant()), Some(s.determinant()))
    } else {
        (None, None)
    };
    Ok(SplittingFamily {
        t0,
        step,
        params,
        gamma,
        jacobian: (0..=n).map(|r| (0..dim).map(|c| j[(r, c)]).collect()).collect(),
        genericity_det,
        scaled_det,
    })
}

/// Combination matrix `C` with `J·C` diagonal: channel `k` is corrected by
/// the lower channels `j < k` in ascending order, then by the upper
/// channels in descending order.
pub fn cascade_combination(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = j.ncols();
    if j.nrows() != n {
        return Err(Error::invalid("cascade elimination needs a square Jacobian"));
    }
    let mut c = DMatrix::<f64>::identity(n, n);
    let eliminate = |c: &mut DMatrix<f64>, k: usize, i: usize| -> Result<()> {
        let jc_k = j * c.column(k);
        let jc_i = j * c.column(i);
        if jc_i[i] == 0.0 {
            return Err(Error::singular("cascade pivot", 0.0));
        }
        let g = jc_k[i] / jc_i[i];
        let ci = c.column(i).into_owned();
        let mut ck = c.column_mut(k);
        ck -= ci * g;
        Ok(())
    };
    for k in 0..n {
        for i in 0..k {
            eliminate(&mut c, k, i)?;
        }
    }
    for k in (0..n).rev() {
        for i in (k + 1..n).rev() {
            eliminate(&mut c, k, i)?;
        }
    }
    Ok(c)
}

/// Largest `|M_{jk}| / |M_{kk}|` over `j ≠ k`.
pub fn off_diagonal_leakage(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..m.ncols() {
        let d = m[(k, k)].abs();
        for j in 0..m.nrows() {
            if j != k {
                worst = worst.max(m[(j, k)].abs() / d);
            }
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InjectivityPoint {
    pub orbit: usize,
    pub index: usize,
    pub s: f64,
    pub nearest: f64,
    pub injective: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub delta: f64,
    pub points: Vec<InjectivityPoint>,
    /// Per orbit: at least three injective points.
    pub orbit_verdicts: Vec<bool>,
    pub note: String,
}

/// Strip test on finite `s`-sets: a point is injective when no other point
/// of any set lies within `delta` in `s`.
pub fn injectivity_check(orbits: &[Vec<f64>], delta: f64, period: Option<f64>) -> InjectivityReport {
    let dist = |a: f64, b: f64| {
        let mut d = a - b;
        if let Some(l) = period {
            d -= l * (d / l).round();
        }
        d.abs()
    };
    let mut points = vec![];
    let mut verdicts = vec![];
    for (o, set) in orbits.iter().enumerate() {
        let mut count = 0;
        for (i, &s) in set.iter().enumerate() {
            let mut nearest = f64::INFINITY;
            for (o2, set2) in orbits.iter().enumerate() {
                for (i2, &s2) in set2.iter().enumerate() {
                    if o2 == o && i2 == i {
                        continue;
                    }
                    nearest = nearest.min(dist(s, s2));
                }
            }
            let injective = nearest > delta;
            if injective {
                count += 1;
            }
            points.push(InjectivityPoint { orbit: o, index: i, s, nearest, injective });
        }
        verdicts.push(count >= 3);
    }
    InjectivityReport {
        delta,
        points,
        orbit_verdicts: verdicts,
        note: "point sets are finite truncations; accumulation onto a strip is not represented".into(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftReport {
    pub k: Vec<usize>,
    pub sigma: Vec<f64>,
    /// Signed normal offset of the kicked branch from `f^{qk}(p)`.
    pub raw_displacement: Vec<f64>,
    /// Offset weighted by the area density and the parameter speed,
    /// `w(p)·δ·|∂K/∂σ|`, which a kick outside the strip carries with
    /// ratio exactly `1/λ` per iterate.
    pub displacement: Vec<f64>,
    pub slope: f64,
    pub expected_slope: f64,
    pub relative_error: f64,
    /// Consecutive ratios `D_{k+1}/D_k`.
    pub ratios: Vec<f64>,
    pub lambda: f64,
    pub passed: bool,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Strip `|s − center| < half_width` (cyclic when a period is given).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Strip {
    pub center: f64,
    pub half_width: f64,
}

impl Strip {
    fn contains(&self, s: f64, period: Option<f64>) -> bool {
        delta([s, 0.0], [self.center, 0.0], period)[0].abs() < self.half_width
    }
}

/// Displacements between the unstable branches of `base` and `kicked` at
/// the base points of parameter `sigma0 λ^k`, `k = 0..=k_max`.
/// Normal offsets below this are roundoff of the foot-point search.
pub const DISPLACEMENT_FLOOR: f64 = 1e-14;

pub fn lift_scaling(
    base: &dyn PlaneMap,
    kicked: &dyn PlaneMap,
    positive: bool,
    sigma0: f64,
    k_max: usize,
    seed: SeedOptions,
    strip: Option<Strip>,
) -> Result<LiftReport> {
    let branch = Branch::new(Side::Unstable, positive);
    let wb = local_manifold(base, branch, seed)?;
    let wk = local_manifold(kicked, branch, seed)?;
    let lam = wb.seed.eigenvalue;
    if lam <= 0.0 {
        return Err(Error::invalid("lift scaling needs a positive unstable eigenvalue"));
    }
    let period = wb.seed.period;
    let kicked_curve = ManifoldCurve { map: kicked, arc: &wk };
    let mut report = LiftReport {
        k: vec![],
        sigma: vec![],
        raw_displacement: vec![],
        displacement: vec![],
        slope: 0.0,
        expected_slope: -lam.ln(),
        relative_error: 0.0,
        ratios: vec![],
        lambda: lam,
        passed: false,
    };
    for k in 0..=k_max {
        let sigma = sigma0 * lam.powi(k as i32);
        let p = wb.seed.eval(base, sigma)?;
        if let Some(st) = strip {
            if st.contains(p[0], period) {
                return Err(Error::invalid(format!("image {k} at s = {} lies inside the perturbation strip", p[0])));
            }
        }
        let h = 1e-6 * sigma;
        let speed = norm(delta(wb.seed.eval(base, sigma + h)?, wb.seed.eval(base, sigma - h)?, period)) / (2.0 * h);
        let foot = foot_point(&kicked_curve, p, 0.5 * sigma, 1.5 * sigma)?;
        let dist = if foot.distance.abs() < DISPLACEMENT_FLOOR { 0.0 } else { foot.distance };
        report.k.push(k);
        report.sigma.push(sigma);
        report.raw_displacement.push(-dist);
        report.displacement.push(-dist * speed * base.area_density(p));
    }
    let d = &report.displacement;
    if d.iter().all(|x| *x == 0.0) {
        report.passed = true;
        return Ok(report);
    }
    if d.iter().any(|x| *x == 0.0) {
        return Err(Error::singular("lift displacement", 0.0));
    }
    report.ratios = d.windows(2).map(|w| w[1] / w[0]).collect();
    let x: Vec<f64> = report.k.iter().map(|k| *k as f64).collect();
    let y: Vec<f64> = d.iter().map(|v| v.abs().ln()).collect();
    report.slope = fit_slope(&x, &y);
    report.relative_error = (report.slope - report.expected_slope).abs() / report.expected_slope.abs();
    report.passed = report.relative_error < 0.1;
    Ok(report)
}

/// Kick of the unstable direction at one point of a billiard orbit: a
/// curvature bump of angular half-width `half_width` at `orbit.point(index)`,
/// scaled so the first measured displacement equals `eps`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BilliardLift {
    pub report: LiftReport,
    /// Curvature change at the kicked impact point.
    pub curvature_kick: f64,
    pub strip: Strip,
    pub sigma0: f64,
}

pub fn billiard_lift(
    domain: &RadiusProfile,
    orbit: &PeriodicOrbit,
    index: usize,
    half_width: f64,
    eps: f64,
    k_max: usize,
) -> Result<BilliardLift> {
    let base = BilliardReturn::new(domain, orbit, index);
    let seed = SeedOptions::default();
    let x0 = orbit.point(index);
    let theta = domain.theta_of_s(x0.s);
    let strip_s = (domain.s_of_theta(theta + half_width) - domain.s_of_theta(theta - half_width)).abs() / 2.0;
    let strip = Strip { center: x0.s, half_width: strip_s };
    let wb = local_manifold(&base, Branch::new(Side::Unstable, true), seed)?;
    let mut sigma0 = wb.seed.radius;
    while !(delta(wb.seed.eval(&base, sigma0)?, [x0.s, 0.0], base.period())[0].abs() > 1.5 * strip_s) {
        sigma0 *= 1.25;
        if sigma0 > 1e3 {
            return Err(Error::invalid("unstable branch does not leave the strip"));
        }
    }
    let others: Vec<f64> = (0..orbit.q).filter(|&k| k != index % orbit.q).map(|k| orbit.point(k).s).collect();
    let run = |c: f64| -> Result<LiftReport> {
        let patch = domain.make_bump(x0.s, &[c], half_width, &others)?;
        let kicked_domain = domain.apply_and_renormalize(&[patch], true)?.profile;
        let kicked = BilliardReturn { domain: kicked_domain, ..base.clone() };
        lift_scaling(&base, &kicked, true, sigma0, k_max, seed, Some(strip))
    };
    if eps == 0.0 {
        let report = lift_scaling(&base, &base, true, sigma0, k_max, seed, Some(strip))?;
        return Ok(BilliardLift { report, curvature_kick: 0.0, strip, sigma0 });
    }
    let trial = 1e-3 * domain.curvature_at_s(x0.s);
    let r = run(trial)?;
    let c = trial * eps / r.displacement[0];
    Ok(BilliardLift { report: run(c)?, curvature_kick: c, strip, sigma0 })
}

/// Homoclinic splitting between `W^u(x_0)` and `W^s(x_1)` of a Birkhoff
/// orbit, both of the return map `f^q`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomoclinicConfig {
    pub p: u32,
    pub q: usize,
    pub orbit_seed: f64,
    pub unstable_positive: bool,
    pub stable_positive: bool,
    /// Window in the parameter of the unstable branch.
    pub window: (f64, f64),
    pub samples: usize,
    pub seed: SeedOptions,
    pub unstable_length: f64,
    pub stable_length: f64,
    pub chord_tol: f64,
}

impl Default for HomoclinicConfig {
    fn default() -> Self {
        HomoclinicConfig {
            p: 1,
            q: 2,
            orbit_seed: 0.25,
            unstable_positive: true,
            stable_positive: false,
            window: (6.0, 20.0),
            samples: 128,
            seed: SeedOptions::default(),
            unstable_length: 1.2,
            stable_length: 0.6,
            chord_tol: 1e-6,
        }
    }
}

pub struct Homoclinic {
    pub orbit: PeriodicOrbit,
    pub unstable_map: BilliardReturn,
    pub stable_map: BilliardReturn,
    pub unstable: ManifoldArc,
    pub stable: ManifoldArc,
}

impl Homoclinic {
    pub fn new(domain: &RadiusProfile, cfg: &HomoclinicConfig) -> Result<Self> {
        let orbit = crate::orbit::find_birkhoff_orbit(domain, cfg.p, cfg.q, cfg.orbit_seed)?;
        if orbit.eigen.classification != Classification::Hyperbolic {
            return Err(Error::NotHyperbolic { trace: orbit.eigen.trace });
        }
        let unstable_map = BilliardReturn::new(domain, &orbit, 0);
        let stable_map = BilliardReturn::new(domain, &orbit, 1);
        let levels = |arc: &ManifoldArc, reach: f64| ((reach / arc.seed.radius).ln() / arc.seed.rate.abs().ln()).ceil().max(1.0) as usize + 1;
        let grow = |map: &BilliardReturn, branch: Branch, length: f64, reach: f64| -> Result<ManifoldArc> {
            let local = local_manifold(map, branch, cfg.seed)?;
            let opts = GlobalizeOptions {
                levels: levels(&local, reach),
                max_length: length,
                chord_tol: cfg.chord_tol,
                ..Default::default()
            };
            globalize(map, &local, opts)
        };
        let unstable = grow(&unstable_map, Branch::new(Side::Unstable, cfg.unstable_positive), cfg.unstable_length, cfg.window.1)?;
        let stable = grow(&stable_map, Branch::new(Side::Stable, cfg.stable_positive), cfg.stable_length, 1.0)?;
        if unstable.sigma_max() < cfg.window.1 {
            return Err(Error::invalid(format!(
                "unstable branch ends at parameter {} before the window end {}",
                unstable.sigma_max(),
                cfg.window.1
            )));
        }
        Ok(Homoclinic { orbit, unstable_map, stable_map, unstable, stable })
    }

    pub fn splitting(&self, window: (f64, f64), samples: usize) -> Result<PhiSamples> {
        let wu = ManifoldCurve { map: &self.unstable_map, arc: &self.unstable };
        let ws = ManifoldCurve { map: &self.stable_map, arc: &self.stable };
        splitting_function(&wu, &ws, window, samples)
    }
}

pub fn homoclinic_splitting(domain: &RadiusProfile, cfg: &HomoclinicConfig) -> Result<PhiSamples> {
    Homoclinic::new(domain, cfg)?.splitting(cfg.window, cfg.samples)
}

/// Interior critical point of `Φ` whose value is closest to zero.
pub fn extremal_value(samples: &PhiSamples, opts: TangencyOptions) -> Result<(f64, f64)> {
    let t = &samples.t;
    let phi = &samples.phi;
    let n = t.len();
    let mut best: Option<(f64, f64)> = None;
    for i in 1..n.saturating_sub(1) {
        if (phi[i] - phi[i - 1]) * (phi[i + 1] - phi[i]) > 0.0 {
            continue;
        }
        let (lo, hi) = fit_range(n, i, opts.fit_half);
        let (d, _) = local_fit(&t[lo..hi], &phi[lo..hi], t[i], opts.fit_degree)?;
        let w = t[lo..hi].iter().map(|x| (x - t[i]).abs()).fold(0.0, f64::max);
        if let Some(x) = critical_point(&d, w) {
            let v = poly_eval(&d, x).0;
            if best.map_or(true, |b| v.abs() < b.1.abs()) {
                best = Some((t[i] + x, v));
            }
        }
    }
    best.ok_or_else(|| Error::invalid("no interior extremum of the splitting function in the window"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyScan {
    pub parameter: f64,
    /// `(μ, extremal Φ value)` at every evaluated member.
    pub history: Vec<(f64, f64)>,
    pub samples: PhiSamples,
    pub scan: TangencyScan,
    pub tangency: Option<TangencyRecord>,
}

/// Bisection over a one-parameter family on the sign of the extremal value
/// of `Φ_μ`; `bracket` must straddle a sign change.
pub fn scan_family(
    family: &dyn Fn(f64) -> Result<PhiSamples>,
    bracket: (f64, f64),
    opts: TangencyOptions,
    max_iterations: usize,
) -> Result<FamilyScan> {
    let mut history = vec![];
    let mut eval = |mu: f64| -> Result<(f64, PhiSamples)> {
        let s = family(mu)?;
        let (_, v) = extremal_value(&s, opts)?;
        history.push((mu, v));
        Ok((v, s))
    };
    let (mut a, mut b) = bracket;
    let (mut fa, sa) = eval(a)?;
    let (fb, sb) = eval(b)?;
    if fa * fb > 0.0 {
        return Err(Error::invalid(format!("extremal values {fa:e} and {fb:e} do not change sign over the bracket")));
    }
    let (mut best, mut best_s, mut best_mu) = if fa.abs() < fb.abs() { (fa, sa, a) } else { (fb, sb, b) };
    let mut it = 0;
    while best.abs() >= 0.25 * opts.value_tol && it < max_iterations {
        let m = 0.5 * (a + b);
        let (fm, sm) = eval(m)?;
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
        if fm.abs() < best.abs() {
            best = fm;
            best_s = sm;
            best_mu = m;
        }
        it += 1;
    }
    let scan = detect_tangency(&best_s, opts)?;
    let (t_ext, _) = extremal_value(&best_s, opts)?;
    let tangency = scan
        .tangencies
        .iter()
        .min_by(|x, y| (x.t - t_ext).abs().partial_cmp(&(y.t - t_ext).abs()).unwrap())
        .cloned();
    Ok(FamilyScan { parameter: best_mu, history, samples: best_s, scan, tangency })
}

/// Wrapped `s`-coordinates of `f^k(p)`, `|k| ≤ steps`, for the point `p` of
/// the unstable branch at parameter `t`.
pub fn homoclinic_orbit_s(h: &Homoclinic, t: f64, steps: usize) -> Result<Vec<f64>> {
    let domain = &h.unstable_map.domain;
    let p = h.unstable.seed.eval(&h.unstable_map, t)?;
    let mut out = vec![domain.wrap_s(p[0])];
    let (mut s, mut phi) = (p[0], p[1]);
    for _ in 0..steps {
        let st = step(domain, s, phi)?;
        s = st.s1;
        phi = st.phi1;
        out.push(domain.wrap_s(s));
    }
    let (mut s, mut phi) = (p[0], p[1]);
    for _ in 0..steps {
        let st = step(domain, s, PI - phi)?;
        s = st.s1;
        phi = PI - st.phi1;
        out.push(domain.wrap_s(s));
    }
    Ok(out)
}
