//! Birkhoff normal form of a hyperbolic fixed point and Lazutkin
//! coordinates near the boundary.

use crate::billiard::{step, JetMap2, PHI_MIN};
use crate::domain::RadiusProfile;
use crate::error::{Error, Result};
use crate::manifold::fit_slope;
use crate::orbit::{classify_matrix, Classification};
use crate::quadrature::integrate;
use crate::tps::Tps;
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `T(x, y) = (Δ(xy) x, y / Δ(xy))` with `Δ(w) = λ + Σ a_k w^k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalForm {
    pub lambda: f64,
    /// `a_1, …, a_K`.
    pub coeffs: Vec<f64>,
    /// Length unit `c` of the working coordinates `z = c Z`, chosen so the
    /// jet coefficients are of order one.
    pub scale: f64,
    /// Largest coefficient of `F_K − T` through degree `2K + 1`, in the
    /// working coordinates.
    pub residual: f64,
    pub residual_by_degree: Vec<f64>,
    /// Largest mismatch between the two Hamiltonian readings of each
    /// degree; zero for an exactly symplectic jet.
    pub hamiltonian_defect: f64,
}

impl NormalForm {
    pub fn delta(&self, w: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, a| (acc + a) * w) + self.lambda
    }
}

/// Jet of the return map in canonical coordinates `(s, u = −cos φ)`, in
/// deviations from the fixed point.
pub fn canonical_jet(jet: &JetMap2) -> [Tps; 2] {
    let n = jet.order;
    let u0 = -jet.base_in.phi.cos();
    let ds = Tps::var_u(0.0, n);
    let phi = Tps::var_v(u0, n).scale(-1.0).acos();
    let s = jet.s.compose2(&ds, &phi);
    let p = jet.phi.compose2(&ds, &phi);
    let s0 = s.value();
    let u = p.cos().scale(-1.0);
    let uo = u.value();
    [s.add_const(-s0), u.add_const(-uo)]
}

fn linear_part(f: &[Tps; 2]) -> Matrix2<f64> {
    Matrix2::new(f[0].coeff(1, 0), f[0].coeff(0, 1), f[1].coeff(1, 0), f[1].coeff(0, 1))
}

/// `L_χ g = g_x χ_y − g_y χ_x`.
fn lie(chi: &Tps, g: &Tps) -> Tps {
    &(&g.deriv(0) * &chi.deriv(1)) - &(&g.deriv(1) * &chi.deriv(0))
}

/// `g ∘ Φ_χ = Σ L_χ^n g / n!` for the time-one flow `Φ_χ` of `χ`.
fn lie_series(chi: &Tps, g: &Tps) -> Tps {
    let mut acc = g.clone();
    let mut term = g.clone();
    for n in 1..=g.order() + 1 {
        term = lie(chi, &term).scale(1.0 / n as f64);
        if term.max_abs() == 0.0 {
            break;
        }
        acc = &acc + &term;
    }
    acc
}

fn compose(f: &[Tps; 2], g: &[Tps; 2]) -> [Tps; 2] {
    [f[0].compose2(&g[0], &g[1]), f[1].compose2(&g[0], &g[1])]
}

fn delta_series(lambda: f64, coeffs: &[f64], w: &Tps) -> Tps {
    let mut d = Tps::constant(lambda, w.order());
    let mut p = Tps::constant(1.0, w.order());
    for a in coeffs {
        p = &p * w;
        d = &d + &p.scale(*a);
    }
    d
}

fn normal_map(lambda: f64, coeffs: &[f64], order: usize) -> [Tps; 2] {
    let x = Tps::var_u(0.0, order);
    let y = Tps::var_v(0.0, order);
    let d = delta_series(lambda, coeffs, &(&x * &y));
    [&x * &d, &y * &d.recip()]
}

/// Length `c` making `|f_d| c^{d−1} ≤ 1` for every degree `d ≥ 2`.
fn coordinate_scale(f: &[Tps; 2], m: usize) -> f64 {
    let mut c = f64::INFINITY;
    for d in 2..=m {
        let mut big: f64 = 0.0;
        for b in 0..=d {
            big = big.max(f[0].coeff(d - b, b).abs()).max(f[1].coeff(d - b, b).abs());
        }
        if big > 0.0 {
            c = c.min(big.powf(-1.0 / (d - 1) as f64));
        }
    }
    if c.is_finite() {
        c
    } else {
        1.0
    }
}

/// `g(cZ) / c` in the variables `Z`.
fn rescale(g: &Tps, c: f64) -> Tps {
    let mut out = g.clone();
    for d in 0..=g.order() {
        for b in 0..=d {
            out.set_coeff(d - b, b, g.coeff(d - b, b) * c.powi(d as i32 - 1));
        }
    }
    out
}

/// Symplectic normal form through `Δ`-order `k_max` of a map jet given in
/// deviation coordinates of area-preserving variables.
pub fn birkhoff_normal_form(jet: &[Tps; 2], k_max: usize) -> Result<NormalForm> {
    let m = 2 * k_max + 1;
    if jet[0].order() < m {
        return Err(Error::invalid(format!("normal form through a_{k_max} needs a jet of order {m}, got {}", jet[0].order())));
    }
    let a = linear_part(jet);
    let e = classify_matrix(&a);
    if e.classification != Classification::Hyperbolic {
        return Err(Error::NotHyperbolic { trace: e.trace });
    }
    let (l1, l2) = e.eigenvalues;
    let vec = |nu: f64| crate::manifold::eigenvector(&a, nu);
    let v1 = vec(l1);
    let mut v2 = vec(l2);
    let det = v1[0] * v2[1] - v1[1] * v2[0];
    if det.abs() < 1e-300 {
        return Err(Error::singular("eigenbasis", det));
    }
    v2 = [v2[0] / det, v2[1] / det];
    let p = Matrix2::new(v1[0], v2[0], v1[1], v2[1]);
    let pi = p.try_inverse().ok_or_else(|| Error::singular("eigenbasis", 0.0))?;
    let work = m + 1;
    let x = Tps::var_u(0.0, work);
    let y = Tps::var_v(0.0, work);
    let to_w = [&x.scale(p[(0, 0)]) + &y.scale(p[(0, 1)]), &x.scale(p[(1, 0)]) + &y.scale(p[(1, 1)])];
    let g = compose(&[jet[0].truncate(m).truncate(work), jet[1].truncate(m).truncate(work)], &to_w);
    let f0 = [
        &g[0].scale(pi[(0, 0)]) + &g[1].scale(pi[(0, 1)]),
        &g[0].scale(pi[(1, 0)]) + &g[1].scale(pi[(1, 1)]),
    ];
    let scale = coordinate_scale(&f0, m);
    let mut f = [rescale(&f0[0], scale), rescale(&f0[1], scale)];
    let lambda = l1;
    let mut coeffs: Vec<f64> = vec![];
    let mut ham_defect: f64 = 0.0;
    for d in 2..=m {
        let w = &f[0] * &f[1];
        let dl = delta_series(lambda, &coeffs, &w);
        let y1 = &(&f[0] * &dl.recip()) - &x;
        let y2 = &(&f[1] * &dl) - &y;
        let mut h = Tps::zero(work);
        for b in 1..=d + 1 {
            let aa = d + 1 - b;
            h.set_coeff(aa, b, y1.coeff(aa, b - 1) / b as f64);
            if aa >= 1 {
                ham_defect = ham_defect.max((y1.coeff(aa, b - 1) / b as f64 + y2.coeff(aa - 1, b) / aa as f64).abs());
            }
        }
        h.set_coeff(d + 1, 0, -y2.coeff(d, 0) / (d + 1) as f64);
        let mut chi = Tps::zero(work);
        for b in 0..=d + 1 {
            let aa = d + 1 - b;
            if aa == b {
                coeffs.push(lambda * b as f64 * h.coeff(b, b));
            } else {
                let r = 1.0 - lambda.powi(aa as i32 - b as i32);
                chi.set_coeff(aa, b, -h.coeff(aa, b) / r);
            }
        }
        if chi.max_abs() > 0.0 {
            let phi = [lie_series(&chi, &x), lie_series(&chi, &y)];
            let neg = chi.scale(-1.0);
            let phi_inv = [lie_series(&neg, &x), lie_series(&neg, &y)];
            f = compose(&phi_inv, &compose(&f, &phi));
        }
    }
    let t = normal_map(lambda, &coeffs, work);
    let mut by_degree = vec![0.0; m + 1];
    for deg in 0..=m {
        for b in 0..=deg {
            let aa = deg - b;
            for c in 0..2 {
                by_degree[deg] = f64::max(by_degree[deg], (f[c].coeff(aa, b) - t[c].coeff(aa, b)).abs());
            }
        }
    }
    let coeffs = coeffs.iter().enumerate().map(|(k, a)| a / scale.powi(2 * (k as i32 + 1))).collect();
    Ok(NormalForm {
        lambda,
        coeffs,
        scale,
        residual: by_degree.iter().copied().fold(0.0, f64::max),
        residual_by_degree: by_degree,
        hamiltonian_defect: ham_defect,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LazutkinOptions {
    pub y_min: f64,
    pub y_max: f64,
    pub y_points: usize,
    pub positions: usize,
    /// Lowest accepted exponent of the first residual.
    pub min_exponent: f64,
    /// Accepted deviation of the exponent gap from one.
    pub gap_tol: f64,
    /// Residuals below this count as integrable.
    pub integrable_tol: f64,
}

impl Default for LazutkinOptions {
    fn default() -> Self {
        LazutkinOptions {
            y_min: 1e-3,
            y_max: 1e-1,
            y_points: 9,
            positions: 24,
            min_exponent: 2.8,
            gap_tol: 0.2,
            integrable_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LazutkinReport {
    pub y: Vec<f64>,
    /// `max |x' − x − y|` over the sampled positions, per `y`.
    pub r1: Vec<f64>,
    /// `max |y' − y|`.
    pub r2: Vec<f64>,
    pub exponent1: Option<f64>,
    pub exponent2: Option<f64>,
    pub max_residual: f64,
    pub integrable: bool,
    pub passed: bool,
}

/// Lazutkin coordinates `x = (1/C) ∫ κ^{2/3} ds`, `y = (2/C) κ^{−1/3} φ`
/// with `C = ∫ κ^{2/3} ds`.
pub struct Lazutkin<'a> {
    pub domain: &'a RadiusProfile,
    pub c: f64,
}

const LAZUTKIN_PANELS: usize = 64;

impl<'a> Lazutkin<'a> {
    pub fn new(domain: &'a RadiusProfile) -> Self {
        let c = integrate(|t| domain.rho(t).cbrt(), 0.0, 2.0 * PI, LAZUTKIN_PANELS);
        Lazutkin { domain, c }
    }

    /// `x(θ_1) − x(θ_0)` along the lifted tangent angle.
    pub fn dx(&self, theta0: f64, theta1: f64) -> f64 {
        let panels = ((theta1 - theta0).abs() / (2.0 * PI) * LAZUTKIN_PANELS as f64).ceil().max(2.0) as usize;
        integrate(|t| self.domain.rho(t).cbrt(), theta0, theta1, panels) / self.c
    }

    pub fn y_of(&self, theta: f64, phi: f64) -> f64 {
        2.0 * self.domain.rho(theta).cbrt() * phi / self.c
    }

    pub fn phi_of(&self, theta: f64, y: f64) -> f64 {
        y * self.c / (2.0 * self.domain.rho(theta).cbrt())
    }
}

/// Residuals of the billiard map in Lazutkin coordinates as `y → 0`.
pub fn lazutkin_check(domain: &RadiusProfile, opts: LazutkinOptions) -> Result<LazutkinReport> {
    if opts.y_points < 2 || !(opts.y_min > 0.0 && opts.y_min < opts.y_max) {
        return Err(Error::invalid("Lazutkin scan needs at least two y values in an increasing positive range"));
    }
    let lz = Lazutkin::new(domain);
    let mut report = LazutkinReport {
        y: vec![],
        r1: vec![],
        r2: vec![],
        exponent1: None,
        exponent2: None,
        max_residual: 0.0,
        integrable: false,
        passed: false,
    };
    let ratio = (opts.y_max / opts.y_min).powf(1.0 / (opts.y_points - 1) as f64);
    for i in 0..opts.y_points {
        let y = opts.y_min * ratio.powi(i as i32);
        let (mut r1, mut r2): (f64, f64) = (0.0, 0.0);
        for j in 0..opts.positions {
            let theta = 2.0 * PI * (j as f64 + 0.37) / opts.positions as f64;
            let phi = lz.phi_of(theta, y);
            if phi < PHI_MIN {
                return Err(Error::Grazing { phi });
            }
            let s = domain.s_of_theta(theta);
            let st = step(domain, s, phi)?;
            let theta1 = domain.theta_of_s(st.s1);
            let theta1 = theta1 + 2.0 * PI * ((theta - theta1) / (2.0 * PI)).ceil();
            let y1 = lz.y_of(theta1, st.phi1);
            r1 = r1.max((lz.dx(theta, theta1) - y).abs());
            r2 = r2.max((y1 - y).abs());
        }
        report.y.push(y);
        report.r1.push(r1);
        report.r2.push(r2);
    }
    report.max_residual = report.r1.iter().chain(&report.r2).copied().fold(0.0, f64::max);
    report.integrable = report.max_residual < opts.integrable_tol;
    if report.integrable {
        report.passed = true;
        return Ok(report);
    }
    if report.r1.iter().chain(&report.r2).any(|r| *r == 0.0) {
        return Err(Error::singular("Lazutkin residual", 0.0));
    }
    let ly: Vec<f64> = report.y.iter().map(|v| v.ln()).collect();
    let e1 = fit_slope(&ly, &report.r1.iter().map(|v| v.ln()).collect::<Vec<_>>());
    let e2 = fit_slope(&ly, &report.r2.iter().map(|v| v.ln()).collect::<Vec<_>>());
    report.exponent1 = Some(e1);
    report.exponent2 = Some(e2);
    report.passed = e1 >= opts.min_exponent && ((e2 - e1) - 1.0).abs() <= opts.gap_tol;
    Ok(report)
}
