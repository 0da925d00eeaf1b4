//! Periodic orbits: variational search, Newton refinement, monodromy and
//! classification.

use crate::billiard::{
    chord_data, differential_from_chord, generating_length_full, map_jet_iter, map_jet_iter_with_lengths, step,
    JetMap2, PhasePoint,
};
use crate::domain::RadiusProfile;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

pub const PARABOLIC_BAND: f64 = 1e-7;
pub const RESIDUAL_TARGET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Hyperbolic,
    Elliptic,
    Parabolic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenData {
    pub trace: f64,
    pub determinant: f64,
    pub classification: Classification,
    /// Real eigenvalues `(λ, μ)` with `|λ| ≥ |μ|`, or `(Re, Im)` of the upper complex one.
    pub eigenvalues: (f64, f64),
    /// Angles of the two eigenvectors with the s-axis (hyperbolic case).
    pub eigenvector_angles: Option<(f64, f64)>,
    /// Angles of the two eigenvectors with the vertical axis, in `[0, π/2]`.
    pub vertical_angles: Option<(f64, f64)>,
    /// Rotation angle `acos(trace / 2)` in the elliptic case.
    pub rotation_angle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbit {
    pub points: Vec<PhasePoint>,
    pub lifted_s: Vec<f64>,
    pub p: u32,
    pub q: usize,
    pub monodromy: JetMap2,
    pub eigen: EigenData,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub p: u32,
    pub q: usize,
    pub points: Vec<PhasePoint>,
    pub monodromy: [[f64; 2]; 2],
    pub eigen: EigenData,
    pub residual: f64,
}

impl PeriodicOrbit {
    pub fn record(&self) -> OrbitRecord {
        let m = self.monodromy.block1();
        OrbitRecord {
            p: self.p,
            q: self.q,
            points: self.points.clone(),
            monodromy: [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]],
            eigen: self.eigen.clone(),
            residual: self.residual,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.eigen.classification {
            Classification::Hyperbolic => Some(self.eigen.eigenvalues.0),
            _ => None,
        }
    }

    /// Point `x_k` with the index taken modulo `q`.
    pub fn point(&self, k: usize) -> PhasePoint {
        self.points[k % self.q]
    }

    pub fn total_length(&self, domain: &RadiusProfile) -> Result<f64> {
        let mut t = 0.0;
        for i in 0..self.q {
            t += generating_length_full(domain, self.lifted_s[i], self.next_lifted(domain, i))?.l;
        }
        Ok(t)
    }

    fn next_lifted(&self, domain: &RadiusProfile, i: usize) -> f64 {
        if i + 1 < self.q {
            self.lifted_s[i + 1]
        } else {
            self.lifted_s[0] + self.p as f64 * domain.length()
        }
    }
}

pub fn classify_matrix(m: &Matrix2<f64>) -> EigenData {
    let tr = m.trace();
    let det = m.determinant();
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let disc = tr * tr - 4.0 * det;
    if tr.abs() > 2.0 + PARABOLIC_BAND && disc > 0.0 {
        let r = disc.sqrt();
        let l1 = if tr > 0.0 { (tr + r) / 2.0 } else { (tr - r) / 2.0 };
        let l2 = det / l1;
        let ang = |lam: f64| {
            // eigenvector (b, λ - a), or (λ - d, c) if b vanishes
            let v = if b.abs() > 1e-300 { (b, lam - a) } else { (lam - d, m[(1, 0)]) };
            v.1.atan2(v.0)
        };
        let w1 = ang(l1);
        let w2 = ang(l2);
        let vert = |w: f64| {
            let c = w.cos().abs();
            c.asin()
        };
        EigenData {
            trace: tr,
            determinant: det,
            classification: Classification::Hyperbolic,
            eigenvalues: (l1, l2),
            eigenvector_angles: Some((w1, w2)),
            vertical_angles: Some((vert(w1), vert(w2))),
            rotation_angle: None,
        }
    } else if tr.abs() < 2.0 - PARABOLIC_BAND {
        let im = (4.0 * det - tr * tr).max(0.0).sqrt() / 2.0;
        EigenData {
            trace: tr,
            determinant: det,
            classification: Classification::Elliptic,
            eigenvalues: (tr / 2.0, im),
            eigenvector_angles: None,
            vertical_angles: None,
            rotation_angle: Some((tr / 2.0 / det.sqrt()).clamp(-1.0, 1.0).acos()),
        }
    } else {
        EigenData {
            trace: tr,
            determinant: det,
            classification: Classification::Parabolic,
            eigenvalues: (tr / 2.0, tr / 2.0),
            eigenvector_angles: None,
            vertical_angles: None,
            rotation_angle: None,
        }
    }
}

/// Classification of a monodromy with the given trace and unit determinant.
pub fn classify_trace(trace: f64) -> EigenData {
    classify_matrix(&Matrix2::new(trace / 2.0, 1.0, trace * trace / 4.0 - 1.0, trace / 2.0))
}

pub fn classify(orbit: &PeriodicOrbit) -> EigenData {
    classify_matrix(&orbit.monodromy.block1())
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Gradient {
    g: Vec<f64>,
    hess: DMatrix<f64>,
    phi_out: Vec<f64>,
    total: f64,
}

fn next_s(s: &[f64], i: usize, p: u32, len: f64) -> f64 {
    if i + 1 < s.len() {
        s[i + 1]
    } else {
        s[0] + p as f64 * len
    }
}

fn gradient(domain: &RadiusProfile, s: &[f64], p: u32) -> Result<Gradient> {
    let q = s.len();
    let len = domain.length();
    let mut g = vec![0.0; q];
    let mut hess = DMatrix::zeros(q, q);
    let mut phi_out = vec![0.0; q];
    let mut total = 0.0;
    for i in 0..q {
        let j = (i + 1) % q;
        let s1 = next_s(s, i, p, len);
        let gap = s1 - s[i];
        if gap <= 1e-9 || gap >= p as f64 * len {
            return Err(Error::Condition(format!("degenerate configuration at index {i} (gap {gap:e})")));
        }
        let c = generating_length_full(domain, s[i], s1)?;
        total += c.l;
        phi_out[i] = c.phi0;
        g[i] += c.dl0;
        g[j] += c.dl1;
        let (h00, h01, h11) = c.hessian();
        hess[(i, i)] += h00;
        hess[(j, j)] += h11;
        hess[(i, j)] += h01;
        hess[(j, i)] += h01;
    }
    Ok(Gradient { g, hess, phi_out, total })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ordered(s: &[f64], p: u32, len: f64) -> bool {
    (0..s.len()).all(|i| {
        let g = next_s(s, i, p, len) - s[i];
        g > 1e-9 && g < p as f64 * len
    })
}

/// Trust-region maximization of the total length over ordered configurations.
fn trust_region_ascent(domain: &RadiusProfile, s: &mut Vec<f64>, p: u32) -> Result<()> {
    let len = domain.length();
    let q = s.len();
    let mut gr = gradient(domain, s, p)?;
    let mut radius = 0.1 * p as f64 * len / q as f64;
    for _ in 0..1000 {
        if inf_norm(&gr.g) < 1e-13 {
            break;
        }
        let eig = gr.hess.clone().symmetric_eigen();
        let lam = &eig.eigenvalues;
        let gp = eig.eigenvectors.transpose() * DVector::from_column_slice(&gr.g);
        let step_for = |mu: f64| -> DVector<f64> { DVector::from_iterator(q, (0..q).map(|i| -gp[i] / (lam[i] - mu))) };
        let lmax = lam.max();
        let mut dp = if lmax < 0.0 { step_for(0.0) } else { DVector::zeros(q) };
        if lmax >= 0.0 || dp.norm() > radius {
            let mut lo = lmax.max(0.0);
            let mut hi = lo + gp.norm() / radius + 1e-300;
            while step_for(hi).norm() > radius {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if step_for(mid).norm() > radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            dp = step_for(hi);
        }
        let pred: f64 = (0..q).map(|i| gp[i] * dp[i] + 0.5 * lam[i] * dp[i] * dp[i]).sum();
        if pred < 1e-15 * gr.total.abs() {
            break;
        }
        let d = &eig.eigenvectors * &dp;
        let trial: Vec<f64> = s.iter().zip(d.iter()).map(|(x, di)| x + di).collect();
        let ratio = if ordered(&trial, p, len) {
            match gradient(domain, &trial, p) {
                Ok(ng) => {
                    let r = (ng.total - gr.total) / pred;
                    if r > 0.1 {
                        *s = trial;
                        gr = ng;
                    }
                    r
                }
                Err(_) => -1.0,
            }
        } else {
            -1.0
        };
        if ratio < 0.25 {
            radius *= 0.25;
        } else if ratio > 0.75 && dp.norm() > 0.99 * radius {
            radius *= 2.0;
        }
        if radius < 1e-14 {
            break;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RefineOptions {
    /// Fix `s_0` to remove the rotational degeneracy of integrable families.
    pub pin_first: bool,
    /// When positive, solve the Newton system by SVD truncated at this
    /// relative singular value instead of failing on a near-singular Jacobian.
    pub rcond: f64,
    pub max_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct RefineReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

fn newton(domain: &RadiusProfile, s: &mut [f64], p: u32, opts: RefineOptions) -> Result<RefineReport> {
    let max_it = if opts.max_iterations == 0 { 50 } else { opts.max_iterations };
    let mut residuals = vec![];
    let mut gr = gradient(domain, s, p)?;
    let mut res = inf_norm(&gr.g);
    let mut merit = norm2(&gr.g);
    residuals.push(res);
    let q = s.len();
    let mut it = 0;
    while res > 1e-14 && it < max_it {
        it += 1;
        let off = usize::from(opts.pin_first);
        let n = q - off;
        let h = gr.hess.view((off, off), (n, n)).into_owned();
        let rhs = DVector::from_iterator(n, gr.g[off..].iter().map(|x| -x));
        let svd = h.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let d = if opts.rcond > 0.0 {
            svd.solve(&rhs, opts.rcond * smax).map_err(|_| Error::singular("orbit Newton Jacobian", smin / smax))?
        } else {
            if smin <= 1e-9 * smax {
                return Err(Error::singular("orbit Newton Jacobian", smin / smax));
            }
            svd.solve(&rhs, 0.0).map_err(|_| Error::singular("orbit Newton Jacobian", smin / smax))?
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = s
                .iter()
                .enumerate()
                .map(|(i, x)| if i < off { *x } else { x + t * d[i - off] })
                .collect();
            if let Ok(ng) = gradient(domain, &trial, p) {
                let nm = norm2(&ng.g);
                if nm <= (1.0 - 1e-4 * t) * merit || inf_norm(&ng.g) < 1e-14 {
                    s.copy_from_slice(&trial);
                    res = inf_norm(&ng.g);
                    merit = nm;
                    gr = ng;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        residuals.push(res);
        if !accepted {
            break;
        }
    }
    Ok(RefineReport { iterations: it, residuals })
}

fn build_orbit(domain: &RadiusProfile, s: Vec<f64>, p: u32) -> Result<PeriodicOrbit> {
    let gr = gradient(domain, &s, p)?;
    let q = s.len();
    let points: Vec<PhasePoint> = s
        .iter()
        .zip(&gr.phi_out)
        .map(|(si, phi)| PhasePoint::new(domain.wrap_s(*si), *phi))
        .collect();
    let monodromy = map_jet_iter(domain, points[0], 1, q)?;
    let eigen = classify_matrix(&monodromy.block1());
    Ok(PeriodicOrbit { points, lifted_s: s, p, q, monodromy, eigen, residual: inf_norm(&gr.g) })
}

/// Critical configuration of the total chord length with rotation `p/q`
/// started from equally spaced points beginning at `seed`.
pub fn find_birkhoff_orbit(domain: &RadiusProfile, p: u32, q: usize, seed: f64) -> Result<PeriodicOrbit> {
    if q < 2 || p == 0 || gcd(p, q as u32) != 1 || p as usize >= q {
        return Err(Error::invalid(format!("invalid rotation number {p}/{q}")));
    }
    let len = domain.length();
    let mut s: Vec<f64> = (0..q).map(|i| seed * len + i as f64 * p as f64 * len / q as f64).collect();
    trust_region_ascent(domain, &mut s, p)?;
    let start = s.clone();
    let mut rep = newton(domain, &mut s, p, RefineOptions { pin_first: false, rcond: 1e-13, max_iterations: 40 })?;
    let mut res = *rep.residuals.last().unwrap();
    if res > 1e-11 {
        // A numerically flat direction (nearly integrable family) is dropped.
        s = start;
        rep = newton(domain, &mut s, p, RefineOptions { pin_first: false, rcond: 1e-7, max_iterations: 40 })?;
        res = *rep.residuals.last().unwrap();
    }
    if res > 1e-11 {
        return Err(Error::NoConvergence { what: "Birkhoff orbit search".into(), iterations: rep.iterations, residual: res });
    }
    build_orbit(domain, s, p)
}

/// Newton refinement of the critical-point equations.
pub fn refine_newton(domain: &RadiusProfile, orbit: &PeriodicOrbit, opts: RefineOptions) -> Result<(PeriodicOrbit, RefineReport)> {
    let mut s = orbit.lifted_s.clone();
    let g = gradient(domain, &s, orbit.p)?;
    if inf_norm(&g.g) < RESIDUAL_TARGET {
        return Ok((orbit.clone(), RefineReport { iterations: 0, residuals: vec![inf_norm(&g.g)] }));
    }
    let rep = newton(domain, &mut s, orbit.p, opts)?;
    let res = *rep.residuals.last().unwrap();
    if res > RESIDUAL_TARGET {
        return Err(Error::NoConvergence { what: "orbit refinement".into(), iterations: rep.iterations, residual: res });
    }
    Ok((build_orbit(domain, s, orbit.p)?, rep))
}

/// Orbit from explicit lifted arc lengths (no optimization).
pub fn orbit_from_lifted(domain: &RadiusProfile, s: Vec<f64>, p: u32) -> Result<PeriodicOrbit> {
    build_orbit(domain, s, p)
}

pub fn monodromy(domain: &RadiusProfile, orbit: &PeriodicOrbit, order: usize) -> Result<JetMap2> {
    if orbit.residual > 1e-10 {
        return Err(Error::Condition(format!("orbit residual {} too large", orbit.residual)));
    }
    map_jet_iter(domain, orbit.points[0], order, orbit.q)
}

/// Chord data and one-step differential at every point of a forward segment
/// of `steps` impacts starting at `x_start`.
pub fn segment_differentials(domain: &RadiusProfile, start: PhasePoint, steps: usize) -> Result<(Vec<PhasePoint>, Vec<Matrix2<f64>>)> {
    let mut pts = vec![start];
    let mut ds = vec![];
    let mut s = start.s;
    let mut phi = start.phi;
    for _ in 0..steps {
        let st = step(domain, s, phi)?;
        ds.push(differential_from_chord(&chord_data(domain, PhasePoint::new(s, phi))?));
        s = st.s1;
        phi = st.phi1;
        pts.push(PhasePoint::new(domain.wrap_s(s), phi));
    }
    Ok((pts, ds))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicityReport {
    /// Largest `k ≥ 1` with the jet of `f^q` equal to the identity jet
    /// through order `k`; `-1` if already `df^q != I`.
    pub order: i32,
    pub jet_order: usize,
    pub max_deviation_by_order: Vec<f64>,
    pub dl_ds0: f64,
    pub dl_ds0_identity: f64,
    pub dl_dphi0: f64,
    pub dl_dphi0_identity: f64,
    pub identity_residual: f64,
    pub length_partials_max: f64,
}

/// Identity-jet order of `f^q` and the length-function identities
/// `∂L/∂s0 = cos φ_q ∂s_q/∂s0 − cos φ0`, `∂L/∂φ0 = cos φ_q ∂s_q/∂φ0`.
pub fn check_absolute_periodicity_order(domain: &RadiusProfile, orbit: &PeriodicOrbit, n: usize) -> Result<PeriodicityReport> {
    let (jet, len) = map_jet_iter_with_lengths(domain, orbit.points[0], n.max(1), orbit.q)?;
    periodicity_from_jet(&jet, &len, orbit.points[0], n)
}

pub fn periodicity_from_jet(jet: &JetMap2, len: &crate::tps::Tps, x0: PhasePoint, n: usize) -> Result<PeriodicityReport> {
    if jet.order < n {
        return Err(Error::OrderTooLarge { requested: n, max: jet.order });
    }
    let tol = 1e-9;
    let mut devs = vec![];
    let mut order = -1i32;
    let mut still = true;
    for d in 1..=n {
        let mut m: f64 = 0.0;
        for b in 0..=d {
            let a = d - b;
            let es = if (a, b) == (1, 0) { 1.0 } else { 0.0 };
            let ep = if (a, b) == (0, 1) { 1.0 } else { 0.0 };
            m = m.max((jet.ds(a, b) - es).abs()).max((jet.dphi(a, b) - ep).abs());
        }
        devs.push(m);
        if still && m < tol {
            order = d as i32;
        } else {
            still = false;
        }
    }
    let phi_q = jet.phi.value();
    let dl_ds0 = len.partial(1, 0);
    let dl_dphi0 = len.partial(0, 1);
    let id_s = phi_q.cos() * jet.ds(1, 0) - x0.phi.cos();
    let id_phi = phi_q.cos() * jet.ds(0, 1);
    let mut lp: f64 = 0.0;
    if order >= 1 {
        for d in 1..=(order as usize).min(len.order()) {
            for b in 0..=d {
                lp = lp.max(len.partial(d - b, b).abs());
            }
        }
    }
    Ok(PeriodicityReport {
        order,
        jet_order: jet.order,
        max_deviation_by_order: devs,
        dl_ds0,
        dl_ds0_identity: id_s,
        dl_dphi0,
        dl_dphi0_identity: id_phi,
        identity_residual: (dl_ds0 - id_s).abs().max((dl_dphi0 - id_phi).abs()),
        length_partials_max: lp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn trace_classification() {
        assert_eq!(classify_trace(2.0).classification, Classification::Parabolic);
        let h = classify_trace(2.5);
        assert_eq!(h.classification, Classification::Hyperbolic);
        assert!((h.eigenvalues.0 - 2.0).abs() < 1e-14);
        let e = classify_trace(1.0);
        assert_eq!(e.classification, Classification::Elliptic);
        assert!((e.rotation_angle.unwrap() - 0.5f64.acos()).abs() < 1e-14);
    }

    #[test]
    fn circle_square() {
        let c = RadiusProfile::circle();
        let o = find_birkhoff_orbit(&c, 1, 4, 0.0).unwrap();
        for p in &o.points {
            assert!((p.phi - PI / 4.0).abs() < 1e-12);
        }
        let total = o.total_length(&c).unwrap();
        assert!((total - 4.0 * 2f64.sqrt() / (2.0 * PI)).abs() < 1e-12);
        let m = o.monodromy.block1();
        assert!((m[(0, 1)] - 4.0 / PI).abs() < 1e-10);
        assert_eq!(o.eigen.classification, Classification::Parabolic);
    }
}
