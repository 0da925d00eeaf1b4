//! First-order curvature perturbation calculus along billiard segments.
//!
//! A patch whose curvature jet at the impact `x_l` is `(0, …, 0, ε)`, with
//! `ε` in slot `n − 1`, leaves every impact point in place and kicks the
//! outgoing angle at `x_l` by `2 ε (Δs_l)^n / n!`, where `Δs_l` is the
//! displacement of the `l`-th impact. All predictions here follow from that
//! kick; the factor 2 lives only in [`RESPONSE_FACTOR`].

use crate::billiard::{map_jet_iter, JetMap2, PhasePoint};
use crate::domain::{BumpPatch, RadiusProfile};
use crate::error::{Error, Result};
use crate::orbit::{classify_matrix, segment_differentials, Classification, PeriodicOrbit};
use crate::tps::Tps;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const RESPONSE_FACTOR: f64 = 2.0;
/// Relative threshold below which some `∂s_j/∂φ_i` counts as vanishing.
pub const CONDITION_TOL: f64 = 1e-8;
/// Agreement required between the LU and the reduced determinant.
pub const CERTIFICATE_TOL: f64 = 1e-7;
const MULTIPLIER_TOL: f64 = 1e-10;
const MAX_HALF_WIDTH: f64 = 0.3;
const ROTATION_SWEEPS: usize = 4;

/// `B = [[0, 0], [2, 0]]`.
pub fn kick_matrix() -> Matrix2<f64> {
    Matrix2::new(0.0, 0.0, RESPONSE_FACTOR, 0.0)
}

pub fn to_array(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Impacts `x_0, …, x_N` with their one-step differentials.
#[derive(Clone, Debug)]
pub struct Segment {
    pub points: Vec<PhasePoint>,
    steps: Vec<Matrix2<f64>>,
}

impl Segment {
    pub fn from_point(domain: &RadiusProfile, start: PhasePoint, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("segment needs at least one step"));
        }
        let (points, steps) = segment_differentials(domain, start, steps)?;
        Ok(Segment { points, steps })
    }

    /// Segment of `steps` impacts starting at orbit point `start`.
    pub fn from_orbit(domain: &RadiusProfile, orbit: &PeriodicOrbit, start: usize, steps: usize) -> Result<Self> {
        Self::from_point(domain, orbit.point(start), steps)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `df^{j−i}(x_i)`.
    pub fn df(&self, i: usize, j: usize) -> Matrix2<f64> {
        assert!(i <= j && j <= self.len(), "segment range {i}..{j} out of bounds");
        let mut m = Matrix2::identity();
        for k in i..j {
            m = self.steps[k] * m;
        }
        m
    }

    pub fn total(&self) -> Matrix2<f64> {
        self.df(0, self.len())
    }

    /// `∂s_j/∂φ_i`.
    pub fn ds_dphi(&self, i: usize, j: usize) -> f64 {
        self.df(i, j)[(0, 1)]
    }

    /// `∂s_j/∂s_i`.
    pub fn ds_ds(&self, i: usize, j: usize) -> f64 {
        self.df(i, j)[(0, 0)]
    }

    /// `∂φ_j/∂φ_i`.
    pub fn dphi_dphi(&self, i: usize, j: usize) -> f64 {
        self.df(i, j)[(1, 1)]
    }

    pub fn det(&self, i: usize, j: usize) -> f64 {
        self.df(i, j).determinant()
    }

    fn head(&self, l: usize) -> (f64, f64) {
        let m = self.df(0, l);
        (m[(0, 0)], m[(0, 1)])
    }

    fn tail(&self, l: usize) -> (f64, f64) {
        let m = self.df(l, self.len());
        (m[(0, 1)], m[(1, 1)])
    }

    fn check_interior(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.len() {
            return Err(Error::invalid(format!("index {k} is not interior to a segment of {} steps", self.len())));
        }
        Ok(())
    }
}

/// First-order change of `df^N(x_0)` when the curvature at `x_k` moves by `eps`.
pub fn predict_delta_differential(seg: &Segment, k: usize, eps: f64) -> Result<Matrix2<f64>> {
    seg.check_interior(k)?;
    Ok(seg.df(k, seg.len()) * kick_matrix() * seg.df(0, k) * eps)
}

pub fn predict_combined(seg: &Segment, deltas: &[(usize, f64)]) -> Result<Matrix2<f64>> {
    let mut acc = Matrix2::zeros();
    for &(k, e) in deltas {
        acc += predict_delta_differential(seg, k, e)?;
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    S,
    Phi,
}

/// The partial `∂^{a+b} (s or φ) / ∂s_0^a ∂φ_0^b` of the segment map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coefficient {
    pub component: Component,
    pub ds0: usize,
    pub dphi0: usize,
}

impl Coefficient {
    pub fn s(ds0: usize, dphi0: usize) -> Self {
        Coefficient { component: Component::S, ds0, dphi0 }
    }

    pub fn phi(ds0: usize, dphi0: usize) -> Self {
        Coefficient { component: Component::Phi, ds0, dphi0 }
    }

    pub fn order(&self) -> usize {
        self.ds0 + self.dphi0
    }

    pub fn value(&self, jet: &JetMap2) -> f64 {
        match self.component {
            Component::S => jet.ds(self.ds0, self.dphi0),
            Component::Phi => jet.dphi(self.ds0, self.dphi0),
        }
    }
}

/// The independent order-`n` partials: all `s`-partials and the pure `φ_0` one.
pub fn free_coefficients(n: usize) -> Vec<Coefficient> {
    let mut v: Vec<Coefficient> = (0..=n).map(|k| Coefficient::s(n - k, k)).collect();
    v.push(Coefficient::phi(0, n));
    v
}

/// Entries of the first-order response without the factor 2: column `l` is
/// the change of each coefficient per unit `Δκ^{(m−1)}(s_{indices[l]})`,
/// `m` the coefficient order.
pub fn bare_response(seg: &Segment, coefs: &[Coefficient], indices: &[usize]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(coefs.len(), indices.len());
    for (j, &l) in indices.iter().enumerate() {
        seg.check_interior(l)?;
        let (a, b) = seg.head(l);
        let (c, d) = seg.tail(l);
        for (i, cf) in coefs.iter().enumerate() {
            let w = a.powi(cf.ds0 as i32) * b.powi(cf.dphi0 as i32);
            m[(i, j)] = w * if cf.component == Component::S { c } else { d };
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Smallest `|∂s_j/∂φ_i|` over the checked pairs, divided by the largest.
    pub min_ratio: f64,
    pub worst: (usize, usize),
    pub scale: f64,
    pub holds: bool,
}

/// Checks `∂s_j/∂φ_i ≠ 0` for `lo ≤ i < j ≤ hi`.
pub fn check_twist_partials(seg: &Segment, lo: usize, hi: usize) -> ConditionReport {
    let mut scale: f64 = 0.0;
    let mut min = f64::INFINITY;
    let mut worst = (lo, hi);
    for i in lo..hi {
        for j in i + 1..=hi {
            let v = seg.ds_dphi(i, j).abs();
            scale = scale.max(v);
            if v < min {
                min = v;
                worst = (i, j);
            }
        }
    }
    let min_ratio = if scale > 0.0 { min / scale } else { 0.0 };
    ConditionReport { min_ratio, worst, scale, holds: min_ratio > CONDITION_TOL }
}

#[derive(Clone, Debug)]
pub struct MMatrix {
    pub n: usize,
    pub entries: DMatrix<f64>,
    pub direct_det: f64,
    pub condition: ConditionReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MMatrixRecord {
    pub n: usize,
    pub entries: Vec<Vec<f64>>,
    pub direct_det: f64,
    pub condition: ConditionReport,
}

impl MMatrix {
    pub fn record(&self) -> MMatrixRecord {
        MMatrixRecord {
            n: self.n,
            entries: rows_of(&self.entries),
            direct_det: self.direct_det,
            condition: self.condition.clone(),
        }
    }
}

/// The `(n+2)×(n+2)` matrix of order-`n` responses of `f^{n+3}` to
/// `Δκ^{(n−1)}` at `x_1, …, x_{n+2}`.
pub fn assemble_m(seg: &Segment, n: usize) -> Result<MMatrix> {
    if seg.len() != n + 3 {
        return Err(Error::invalid(format!("order {n} needs a segment of {} steps, got {}", n + 3, seg.len())));
    }
    let condition = check_twist_partials(seg, 0, n + 3);
    if !condition.holds {
        let (i, j) = condition.worst;
        return Err(Error::Condition(format!(
            "ds_{j}/dphi_{i} vanishes (relative {:e})",
            condition.min_ratio
        )));
    }
    let indices: Vec<usize> = (1..=n + 2).collect();
    let entries = bare_response(seg, &free_coefficients(n), &indices)?;
    let direct_det = entries.clone().lu().determinant();
    Ok(MMatrix { n, entries, direct_det, condition })
}

/// `Σ_j(k, l)` of the forward elimination.
fn sigma(seg: &Segment, j: usize, k: usize, l: usize) -> f64 {
    if k < j {
        return 0.0;
    }
    let (al, bl) = seg.head(l);
    let heads: Vec<(f64, f64)> = (1..j).map(|m| seg.head(m)).collect();
    let top = k - j;
    // enumerate i_1..i_{j-1} with sum ≤ top
    fn rec(heads: &[(f64, f64)], top: usize, used: usize, acc: f64, al: f64, bl: f64, out: &mut f64) {
        if heads.is_empty() {
            *out += acc * bl.powi((top - used) as i32) * al.powi(used as i32);
            return;
        }
        let (am, bm) = heads[0];
        for i in 0..=(top - used) {
            let f = am.powi((top - i) as i32) * bm.powi(i as i32);
            rec(&heads[1..], top, used + i, acc * f, al, bl, out);
        }
    }
    let mut out = 0.0;
    rec(&heads, top, 0, 1.0, al, bl, &mut out);
    out
}

/// `(∂s_1/∂s_0 ⋯ ∂s_{i−1}/∂s_0) · ∂s_l/∂φ_i · det df^i(x_0)`.
fn reduction_factor(seg: &Segment, i: usize, l: usize) -> f64 {
    let lead: f64 = (1..i).map(|m| seg.head(m).0).product();
    lead * seg.ds_dphi(i, l) * seg.det(0, i)
}

fn rel_diff(x: f64, y: f64) -> f64 {
    let s = x.abs().max(y.abs());
    if s == 0.0 {
        0.0
    } else {
        (x - y).abs() / s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionCertificate {
    pub n: usize,
    pub direct_det: f64,
    pub reduced_det: Option<f64>,
    pub relative_error: Option<f64>,
    pub passed: bool,
    /// Set when a multiplier vanished; the LU value is then authoritative.
    pub fallback_lu: bool,
    pub vanished_multiplier: Option<String>,
    /// Largest relative size of an entry that the forward sweep must zero.
    pub forward_elimination_residual: f64,
    /// Largest relative mismatch between the forward-reduced entries and
    /// their closed forms.
    pub closed_form_residual: f64,
    /// Closed-form diagonal after the forward sweep, `k = 1..n+1`.
    pub diagonal_products: Vec<f64>,
    pub row_multipliers: Vec<f64>,
    pub column_multipliers: Vec<f64>,
    pub final_diagonal: Vec<f64>,
    /// Determinant from the Vandermonde structure of the first `n+1` rows.
    pub vandermonde_det: f64,
    /// Largest relative mismatch between `M_kk / M_{k,n+2}` after upward
    /// elimination and the closed-form ratio `X_k / Y_k`.
    pub xy_ratio_residual: f64,
    pub corner_lhs: f64,
    pub corner_rhs: f64,
    pub corner_residual: f64,
}

fn closed_xy(seg: &Segment, n: usize, k: usize) -> (f64, f64) {
    let sp = |i: usize, j: usize| seg.ds_dphi(i, j);
    let mut x = sp(k, n + 3);
    for i in 1..k {
        x *= sp(i, k);
    }
    for j in k + 1..=n + 1 {
        x *= sp(k, j);
    }
    let sign = if (n + 1 - k) % 2 == 0 { 1.0 } else { -1.0 };
    let mut y = sign * sp(n + 2, n + 3);
    for i in (1..k).chain(k + 1..=n + 1) {
        y *= sp(i, n + 2);
    }
    for m in 1..=(n + 1 - k) {
        y *= seg.det(k, k + m);
    }
    (x, y)
}

/// Replays the triangular reduction of `M` and certifies its determinant
/// against LU.
pub fn det_via_reduction(seg: &Segment, m: &MMatrix) -> ReductionCertificate {
    let n = m.n;
    let size = n + 2;
    let mut w = m.entries.clone();
    let scale_a = (1..=n + 2).map(|l| seg.head(l).0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut row_mult = vec![];
    let mut col_mult = vec![];
    let mut prod = 1.0;
    let mut vanished: Option<String> = None;
    let mut fwd_resid: f64 = 0.0;

    'forward: for j in 1..=n {
        let aj = seg.head(j).0;
        if aj.abs() < MULTIPLIER_TOL * scale_a {
            vanished = Some(format!("ds_{j}/ds_0 = {aj:e}"));
            break 'forward;
        }
        for k in j + 1..=n + 1 {
            let f = aj.powi((k - j) as i32);
            let sig = sigma(seg, j, k, j);
            let before = w[(k - 1, j - 1)] * f;
            let sub = w[(j - 1, j - 1)] * sig;
            for c in 0..size {
                w[(k - 1, c)] = w[(k - 1, c)] * f - w[(j - 1, c)] * sig;
            }
            let mag = before.abs().max(sub.abs());
            if mag > 0.0 {
                fwd_resid = fwd_resid.max(w[(k - 1, j - 1)].abs() / mag);
            }
            w[(k - 1, j - 1)] = 0.0;
            row_mult.push(f);
            prod *= f;
        }
    }

    let mut closed_resid: f64 = 0.0;
    let mut diag_closed = vec![];
    for k in 1..=n + 1 {
        for l in k..=n + 2 {
            let (al, _) = seg.head(l);
            let (cl, _) = seg.tail(l);
            let mut e = cl * al.powi((n + 1 - k) as i32);
            for i in 1..k {
                e *= reduction_factor(seg, i, l);
            }
            if l == k {
                diag_closed.push(e);
            }
            if vanished.is_none() {
                closed_resid = closed_resid.max(rel_diff(w[(k - 1, l - 1)], e));
            }
        }
    }

    let mut xy_resid: f64 = 0.0;
    if vanished.is_none() {
        'upward: for j in (2..=n + 1).rev() {
            let p = w[(j - 1, j - 1)];
            if p.abs() < MULTIPLIER_TOL * w.amax() {
                vanished = Some(format!("pivot {j} = {p:e}"));
                break 'upward;
            }
            for k in 1..j {
                let g = w[(k - 1, j - 1)];
                for c in 0..size {
                    w[(k - 1, c)] = w[(k - 1, c)] * p - w[(j - 1, c)] * g;
                }
                w[(k - 1, j - 1)] = 0.0;
                row_mult.push(p);
                prod *= p;
            }
        }
    }
    if vanished.is_none() {
        for k in 1..=n + 1 {
            let (x, y) = closed_xy(seg, n, k);
            let ratio = w[(k - 1, k - 1)] / w[(k - 1, n + 1)];
            xy_resid = xy_resid.max(rel_diff(ratio, x / y));
        }
        for k in 1..=n + 1 {
            let x = w[(k - 1, k - 1)];
            let y = w[(k - 1, n + 1)];
            if x.abs() < MULTIPLIER_TOL * w.amax() {
                vanished = Some(format!("column multiplier {k} = {x:e}"));
                break;
            }
            for r in 0..size {
                w[(r, n + 1)] = w[(r, n + 1)] * x - w[(r, k - 1)] * y;
            }
            w[(k - 1, n + 1)] = 0.0;
            col_mult.push(x);
            prod *= x;
        }
    }

    let final_diagonal: Vec<f64> = (0..size).map(|i| w[(i, i)]).collect();
    let (reduced_det, relative_error) = if vanished.is_none() {
        let d = final_diagonal.iter().product::<f64>() / prod;
        (Some(d), Some(rel_diff(d, m.direct_det)))
    } else {
        (None, None)
    };
    let passed = vanished.is_none() && relative_error.is_some_and(|e| e <= CERTIFICATE_TOL) && m.direct_det != 0.0;
    let (lhs, rhs) = corner_identity(seg, n);
    ReductionCertificate {
        n,
        direct_det: m.direct_det,
        reduced_det,
        relative_error,
        passed,
        fallback_lu: vanished.is_some(),
        vanished_multiplier: vanished,
        forward_elimination_residual: fwd_resid,
        closed_form_residual: closed_resid,
        diagonal_products: diag_closed,
        row_multipliers: row_mult,
        column_multipliers: col_mult,
        final_diagonal,
        vandermonde_det: vandermonde_det(seg, n),
        xy_ratio_residual: xy_resid,
        corner_lhs: lhs,
        corner_rhs: rhs,
        corner_residual: rel_diff(lhs, rhs),
    }
}

/// Closed-form determinant of `M`: the first `n+1` rows are a scaled
/// Vandermonde matrix in `t_l = b_l / a_l`, expanded along the last row.
pub fn vandermonde_det(seg: &Segment, n: usize) -> f64 {
    let size = n + 2;
    let gap = |i: usize, j: usize| {
        // t_j − t_i
        let (ai, _) = seg.head(i);
        let (aj, _) = seg.head(j);
        seg.ds_dphi(i, j) * seg.det(0, i) / (ai * aj)
    };
    let mut total = 0.0;
    for l in 1..=size {
        let (_, bl) = seg.head(l);
        let (_, dl) = seg.tail(l);
        let others: Vec<usize> = (1..=size).filter(|&x| x != l).collect();
        let mut minor = 1.0;
        for &o in &others {
            let (ao, _) = seg.head(o);
            let (co, _) = seg.tail(o);
            minor *= co * ao.powi(n as i32);
        }
        for (p, &i) in others.iter().enumerate() {
            for &j in &others[p + 1..] {
                minor *= gap(i, j);
            }
        }
        let sign = if (size + l) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * dl * bl.powi(n as i32) * minor;
    }
    total
}

/// Both sides of the closed-form expression for the corner entry after the
/// column sweep, in the `X_k, Y_k` normalization.
pub fn corner_identity(seg: &Segment, n: usize) -> (f64, f64) {
    let sp = |i: usize, j: usize| seg.ds_dphi(i, j);
    let mut xprod = 1.0;
    let (_, b_last) = seg.head(n + 2);
    let (_, d_last) = seg.tail(n + 2);
    let mut brace = d_last * b_last.powi(n as i32);
    for i in 1..=n + 1 {
        let (x, y) = closed_xy(seg, n, i);
        xprod *= x;
        let (_, bi) = seg.head(i);
        let (_, di) = seg.tail(i);
        brace -= di * bi.powi(n as i32) * y / x;
    }
    let lhs = xprod * brace;
    let mut rhs = seg.det(n + 2, n + 3) * sp(0, n + 3).powi(n as i32);
    for i in 1..=n + 1 {
        rhs *= sp(i, n + 2);
    }
    for mm in 2..=n + 1 {
        let p: f64 = (1..mm).map(|i| sp(i, mm)).product();
        rhs *= p * p;
    }
    (lhs, rhs)
}

/// Solves `2·M·ε = target` for the `n+2` free order-`n` coefficients of
/// `f^{n+3}`.
pub fn solve_epsilons_for_target(seg: &Segment, n: usize, target: &[f64]) -> Result<Vec<f64>> {
    if target.len() != n + 2 {
        return Err(Error::invalid(format!("expected {} targets, got {}", n + 2, target.len())));
    }
    let m = assemble_m(seg, n)?;
    solve_response(&m.entries, target, "M-matrix")
}

fn solve_response(bare: &DMatrix<f64>, target: &[f64], what: &str) -> Result<Vec<f64>> {
    if target.iter().all(|t| *t == 0.0) {
        return Ok(vec![0.0; bare.ncols()]);
    }
    let svd = bare.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return Err(Error::singular(what, smin / smax));
    }
    let rhs = DVector::from_column_slice(target) / RESPONSE_FACTOR;
    let x = bare.clone().lu().solve(&rhs).ok_or_else(|| Error::singular(what, 0.0))?;
    Ok(x.iter().copied().collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanTarget {
    pub index: usize,
    pub s: f64,
    /// Curvature jet increment `(Δκ, Δκ', …)` at `s`.
    pub jet: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub targets: Vec<PlanTarget>,
    pub epsilon: Vec<f64>,
    pub coefficients: Vec<Coefficient>,
    pub predicted_delta: Vec<f64>,
    pub half_width: f64,
    pub applied_patches: Vec<BumpPatch>,
}

/// Largest common patch half-width (in tangent angle) keeping every patch
/// clear of all other segment impacts.
pub fn auto_half_width(domain: &RadiusProfile, seg: &Segment, indices: &[usize]) -> f64 {
    let thetas: Vec<f64> = seg.points.iter().map(|p| domain.theta_of_s(p.s)).collect();
    let mut h = MAX_HALF_WIDTH;
    for &l in indices {
        for (i, t) in thetas.iter().enumerate() {
            if i == l {
                continue;
            }
            let d = t - thetas[l];
            let d = (d - 2.0 * PI * (d / (2.0 * PI)).round()).abs();
            if d > 1e-9 {
                h = h.min(0.4 * d);
            }
        }
    }
    h
}

/// Builds one patch per target; each must sit on a boundary point that the
/// segment visits only once.
pub fn build_patches(domain: &RadiusProfile, seg: &Segment, targets: &[PlanTarget], half_width: f64) -> Result<Vec<BumpPatch>> {
    let len = domain.length();
    let excl: Vec<f64> = seg.points.iter().map(|p| p.s).collect();
    let mut out = vec![];
    for t in targets {
        seg.check_interior(t.index)?;
        for (i, p) in seg.points.iter().enumerate() {
            let ds = p.s - t.s;
            if i != t.index && (ds - len * (ds / len).round()).abs() < 1e-9 {
                return Err(Error::Condition(format!(
                    "injectivity: impacts {i} and {} share a boundary point",
                    t.index
                )));
            }
        }
        out.push(domain.make_bump(t.s, &t.jet, half_width, &excl)?);
    }
    Ok(out)
}

/// Plan for an order-`n` target: `Δκ^{(n−1)} = ε_l` at `x_1, …, x_{n+2}`.
pub fn plan_for_target(domain: &RadiusProfile, seg: &Segment, n: usize, target: &[f64], half_width: Option<f64>) -> Result<PerturbationPlan> {
    if n == 0 {
        return Err(Error::invalid(
            "order-0 targets need an angle kick, which an orbit-fixing curvature patch cannot produce",
        ));
    }
    let eps = solve_epsilons_for_target(seg, n, target)?;
    let indices: Vec<usize> = (1..=n + 2).collect();
    let coefficients = free_coefficients(n);
    let bare = bare_response(seg, &coefficients, &indices)?;
    let predicted = (&bare * DVector::from_column_slice(&eps)) * RESPONSE_FACTOR;
    let targets: Vec<PlanTarget> = indices
        .iter()
        .zip(&eps)
        .map(|(&l, &e)| {
            let mut jet = vec![0.0; n];
            jet[n - 1] = e;
            PlanTarget { index: l, s: seg.points[l].s, jet }
        })
        .collect();
    let h = half_width.unwrap_or_else(|| auto_half_width(domain, seg, &indices));
    let applied_patches = build_patches(domain, seg, &targets, h)?;
    Ok(PerturbationPlan {
        targets,
        epsilon: eps,
        coefficients,
        predicted_delta: predicted.iter().copied().collect(),
        half_width: h,
        applied_patches,
    })
}

pub fn apply_plan(domain: &RadiusProfile, plan: &PerturbationPlan) -> Result<RadiusProfile> {
    Ok(domain.apply_and_renormalize(&plan.applied_patches, true)?.profile)
}

pub fn measure_coefficients(domain: &RadiusProfile, x0: PhasePoint, steps: usize, coefs: &[Coefficient]) -> Result<Vec<f64>> {
    let order = coefs.iter().map(|c| c.order()).max().unwrap_or(1).max(1);
    let jet = map_jet_iter(domain, x0, order, steps)?;
    Ok(coefs.iter().map(|c| c.value(&jet)).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiRecovery {
    pub order: usize,
    /// `∂^m φ / ∂s_0^{m−j} ∂φ_0^j` for `j = 0..m−1`.
    pub recovered: Vec<f64>,
    pub direct: Vec<f64>,
    pub max_relative_error: f64,
}

/// Recovers the mixed order-`m` `φ`-partials of a jet from its `s`-partials,
/// its pure `φ_0` partial and the area identity
/// `det df = sin φ_0 / sin φ_N`.
pub fn recover_phi_partials(jet: &JetMap2, m: usize) -> Result<PhiRecovery> {
    if m == 0 {
        return Err(Error::invalid("partial order must be at least 1"));
    }
    if jet.order < m {
        return Err(Error::OrderTooLarge { requested: m, max: jet.order });
    }
    let sv0 = jet.ds(0, 1);
    let su0 = jet.ds(1, 0);
    let twist_scale = sv0.abs().max(su0.abs());
    if !(sv0.abs() > 1e-12 * twist_scale.max(1.0)) {
        return Err(Error::singular("twist of the composition", sv0));
    }
    let s = jet.s.truncate(m);
    let mut phi0 = jet.phi.truncate(m);
    for j in 0..m {
        phi0.set_coeff(m - j, j, 0.0);
    }
    let sin_in = Tps::var_v(jet.base_in.phi, m).sin();
    let area = &(&s.deriv(0) * &phi0.deriv(1)) - &(&s.deriv(1) * &phi0.deriv(0));
    let resid = &area - &sin_in.div(&phi0.sin());
    // rows (α, β), α + β = m − 1:  su0 X(α, β+1) − sv0 X(α+1, β) = −R(α, β)
    let mut x_prev = 0.0;
    let mut rec = vec![0.0; m];
    for alpha in 0..m {
        let beta = m - 1 - alpha;
        let r = resid.partial(alpha, beta);
        let left = if alpha == 0 { 0.0 } else { su0 * x_prev };
        let x = (r + left) / sv0;
        // X(α+1, β) has j = β
        rec[beta] = x;
        x_prev = x;
    }
    let direct: Vec<f64> = (0..m).map(|j| jet.dphi(m - j, j)).collect();
    let scale = (0..=m)
        .map(|j| jet.ds(m - j, j).abs().max(jet.dphi(m - j, j).abs()))
        .fold(0.0, f64::max);
    let max_relative_error = rec
        .iter()
        .zip(&direct)
        .map(|(r, d)| (r - d).abs() / d.abs().max(1e-12 * scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(PhiRecovery { order: m, recovered: rec, direct, max_relative_error })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleFormula {
    /// The Δω₂ expression exactly as printed.
    Published,
    /// As printed, with `l₋²` in the ε₂ denominator.
    PublishedLMinus,
    /// First-order expansion of `ω₂ = atan2(λ⁻¹ − a, b)`.
    Derived,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenAngles {
    pub omega1: f64,
    pub omega2: f64,
    pub lambda: f64,
}

/// Eigenvalue `λ = tr/2 + √(tr² − 4 det)/2` and the angles of the
/// eigenvectors `(b, λ − a)` and `(b, λ⁻¹ − a)`.
pub fn eigen_angles(a: &Matrix2<f64>) -> Result<EigenAngles> {
    let tr = a.trace();
    let disc = tr * tr - 4.0 * a.determinant();
    if !(disc > 0.0) {
        return Err(Error::NotHyperbolic { trace: tr });
    }
    let lambda = 0.5 * (tr + disc.sqrt());
    let mu = a.determinant() / lambda;
    Ok(EigenAngles {
        omega1: (lambda - a[(0, 0)]).atan2(a[(0, 1)]),
        omega2: (mu - a[(0, 0)]).atan2(a[(0, 1)]),
        lambda,
    })
}

/// `A + [[ε₁, ε₂], [*, ε₃]]` with `*` chosen to keep the determinant.
pub fn perturb_entries(a: &Matrix2<f64>, eps: [f64; 3]) -> Matrix2<f64> {
    let (na, nb, nd) = (a[(0, 0)] + eps[0], a[(0, 1)] + eps[1], a[(1, 1)] + eps[2]);
    let nc = (na * nd - a.determinant()) / nb;
    Matrix2::new(na, nb, nc, nd)
}

/// Rows `(Δω₁, Δω₂, Δλ)`, columns `(ε₁, ε₂, ε₃)`.
pub fn eigen_sensitivity(a: &Matrix2<f64>, formula: AngleFormula) -> Result<Matrix3<f64>> {
    let e = eigen_angles(a)?;
    let (aa, b) = (a[(0, 0)], a[(0, 1)]);
    let l = e.lambda;
    let mu = 1.0 / l;
    let l2 = l * l;
    let lp = b * b + (aa - l).powi(2);
    let lm = b * b + (aa - mu).powi(2);
    let g = l2 - 1.0;
    let w1 = [b / (lp * g), -(l - aa) / lp, b * l2 / (lp * g)];
    let w2 = match formula {
        AngleFormula::Published => [-(2.0 * l2 + 1.0) * b / (lm * g), -(mu - aa) / (mu * mu), -b * l2 / (lm * g)],
        AngleFormula::PublishedLMinus => [-(2.0 * l2 + 1.0) * b / (lm * g), -(mu - aa) / lm, -b * l2 / (lm * g)],
        AngleFormula::Derived => [-b * l2 / (lm * g), -(mu - aa) / lm, -b / (lm * g)],
    };
    let wl = [l2 / g, 0.0, l2 / g];
    Ok(Matrix3::new(w1[0], w1[1], w1[2], w2[0], w2[1], w2[2], wl[0], wl[1], wl[2]))
}

/// Central-difference sensitivity of [`eigen_angles`] under
/// [`perturb_entries`].
pub fn eigen_sensitivity_oracle(a: &Matrix2<f64>, h: f64) -> Result<Matrix3<f64>> {
    let mut out = Matrix3::zeros();
    for j in 0..3 {
        let mut ep = [0.0; 3];
        ep[j] = h;
        let mut em = [0.0; 3];
        em[j] = -h;
        let p = eigen_angles(&perturb_entries(a, ep))?;
        let m = eigen_angles(&perturb_entries(a, em))?;
        out[(0, j)] = (p.omega1 - m.omega1) / (2.0 * h);
        out[(1, j)] = (p.omega2 - m.omega2) / (2.0 * h);
        out[(2, j)] = (p.lambda - m.lambda) / (2.0 * h);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenControl {
    pub formula: AngleFormula,
    /// Entry changes `(Δa, Δb, Δd)` of the differential.
    pub matrix_epsilon: [f64; 3],
    pub indices: [usize; 3],
    /// Curvature increments at `indices`.
    pub curvature: [f64; 3],
    pub predicted_change: [[f64; 2]; 2],
}

/// Curvature increments at three interior impacts that move
/// `(ω₁, ω₂, λ)` of `df^N(x_0)` by `targets` to first order.
pub fn eigen_angle_control(seg: &Segment, indices: [usize; 3], targets: [f64; 3], formula: AngleFormula) -> Result<EigenControl> {
    let a = seg.total();
    let cls = classify_matrix(&a);
    if cls.classification != Classification::Hyperbolic {
        return Err(Error::NotHyperbolic { trace: cls.trace });
    }
    let j = eigen_sensitivity(&a, formula)?;
    let eps = if targets.iter().all(|t| *t == 0.0) {
        Vector3::zeros()
    } else {
        j.lu()
            .solve(&Vector3::from(targets))
            .ok_or_else(|| Error::singular("eigen/angle linearization", j.determinant()))?
    };
    let coefs = [Coefficient::s(1, 0), Coefficient::s(0, 1), Coefficient::phi(0, 1)];
    let bare = bare_response(seg, &coefs, &indices)?;
    let k = solve_response(&bare, eps.as_slice(), "three-point response")?;
    let predicted = predict_combined(seg, &[(indices[0], k[0]), (indices[1], k[1]), (indices[2], k[2])])?;
    Ok(EigenControl {
        formula,
        matrix_epsilon: [eps[0], eps[1], eps[2]],
        indices,
        curvature: [k[0], k[1], k[2]],
        predicted_change: to_array(&predicted),
    })
}

fn vec4(m: &Matrix2<f64>) -> [f64; 4] {
    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourPointCancellation {
    pub indices: [usize; 4],
    /// Increments normalized so the last one is 1.
    pub increments: [f64; 4],
    /// Null vector of the 4×4 response by SVD, same normalization.
    pub svd_increments: [f64; 4],
    /// `|Σ Δκ_i P_i| / max |Δκ_i P_i|`.
    pub residual: f64,
    /// Relative residual of the fourth scalar relation.
    pub fourth_relation_residual: f64,
    pub solvability_det: f64,
}

/// Four curvature increments whose first-order effects on `df^N(x_0)`
/// cancel.
pub fn four_point_cancellation(seg: &Segment, k: [usize; 4]) -> Result<FourPointCancellation> {
    for w in k.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::invalid("indices must be strictly increasing"));
        }
    }
    for &i in &k {
        seg.check_interior(i)?;
    }
    let sp = |i: usize, j: usize| seg.ds_dphi(k[i], k[j]);
    let ss = |i: usize, j: usize| seg.ds_ds(k[i], k[j]);
    let pp = |i: usize, j: usize| seg.dphi_dphi(k[i], k[j]);
    let g = Matrix2::new(sp(0, 1) * sp(1, 3), sp(0, 2) * sp(2, 3), ss(0, 1) * sp(1, 3), ss(0, 2) * sp(2, 3));
    let det = g.determinant();
    let gscale = (g[(0, 0)] * g[(1, 1)]).abs() + (g[(0, 1)] * g[(1, 0)]).abs();
    if !(det.abs() > 1e-10 * gscale) {
        return Err(Error::singular("four-point solvability determinant", det));
    }
    // Δκ_{k1} = 1 from the second and third relations, then rescale.
    let x23 = g.lu().solve(&nalgebra::Vector2::new(0.0, -sp(0, 3))).ok_or_else(|| Error::singular("four-point system", det))?;
    let x4 = -(sp(0, 1) * pp(1, 3) * x23[0] + sp(0, 2) * pp(2, 3) * x23[1]) / sp(0, 3);
    if !(x4.abs() > 1e-14) {
        return Err(Error::singular("four-point normalization", x4));
    }
    let raw = [1.0, x23[0], x23[1], x4];
    let inc = raw.map(|v| v / x4);
    let fourth_lhs = -ss(0, 3) * raw[3];
    let fourth_rhs = pp(0, 3) * raw[0] + ss(0, 1) * pp(1, 3) * raw[1] + ss(0, 2) * pp(2, 3) * raw[2];
    let fourth = rel_diff(fourth_lhs, fourth_rhs);

    let mut cols = DMatrix::zeros(4, 4);
    let mut terms = vec![];
    for (c, &ki) in k.iter().enumerate() {
        let p = predict_delta_differential(seg, ki, 1.0)?;
        for (r, v) in vec4(&p).iter().enumerate() {
            cols[(r, c)] = *v;
        }
        terms.push(p);
    }
    let svd = cols.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let imin = svd.singular_values.imin();
    let nv: Vec<f64> = vt.row(imin).iter().copied().collect();
    let svd_inc = [nv[0] / nv[3], nv[1] / nv[3], nv[2] / nv[3], 1.0];

    let mut sum = Matrix2::zeros();
    let mut biggest: f64 = 0.0;
    for (p, x) in terms.iter().zip(&inc) {
        sum += p * *x;
        biggest = biggest.max((p * *x).amax());
    }
    Ok(FourPointCancellation {
        indices: k,
        increments: inc,
        svd_increments: svd_inc,
        residual: sum.amax() / biggest,
        fourth_relation_residual: fourth,
        solvability_det: det,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Compensation {
    pub indices: [usize; 3],
    /// Least-squares increments reproducing the foreign change.
    pub increments: [f64; 3],
    /// The same increments assembled from four-point cancellations.
    pub via_cancellation: [f64; 3],
    pub target: [[f64; 2]; 2],
    pub achieved: [[f64; 2]; 2],
    /// `|achieved − target| / |target|`.
    pub mismatch: f64,
    pub solvability_det: f64,
}

/// Curvature increments at three impacts reproducing the first-order change
/// of `df^N(x_0)` caused by `foreign` increments elsewhere.
pub fn three_point_compensation(seg: &Segment, foreign: &[(usize, f64)], indices: [usize; 3]) -> Result<Compensation> {
    if !(indices[0] < indices[1] && indices[1] < indices[2]) {
        return Err(Error::invalid("compensation indices must be strictly increasing"));
    }
    for &i in &indices {
        seg.check_interior(i)?;
    }
    let (n1, n2, n3) = (indices[0], indices[1], indices[2]);
    let g = Matrix2::new(seg.ds_dphi(n1, n2), seg.ds_dphi(n1, n3), seg.ds_ds(n1, n2), seg.ds_ds(n1, n3));
    let det = g.determinant();
    let gscale = (g[(0, 0)] * g[(1, 1)]).abs() + (g[(0, 1)] * g[(1, 0)]).abs();
    if !(det.abs() > 1e-10 * gscale) {
        return Err(Error::singular("three-point solvability determinant", det));
    }
    let target = predict_combined(seg, foreign)?;
    let mut p = DMatrix::zeros(4, 3);
    for (c, &k) in indices.iter().enumerate() {
        let m = predict_delta_differential(seg, k, 1.0)?;
        for (r, v) in vec4(&m).iter().enumerate() {
            p[(r, c)] = *v;
        }
    }
    let inc: Vec<f64> = if target.amax() == 0.0 {
        vec![0.0; 3]
    } else {
        let svd = p.clone().svd(true, true);
        let tol = 1e-10 * svd.singular_values.max();
        let x = svd
            .solve(&DVector::from_column_slice(&vec4(&target)), tol)
            .map_err(|e| Error::invalid(e.to_string()))?;
        x.iter().copied().collect()
    };

    let mut via = [0.0; 3];
    for &(k, dk) in foreign {
        if dk == 0.0 {
            continue;
        }
        if let Some(pos) = indices.iter().position(|&i| i == k) {
            via[pos] += dk;
            continue;
        }
        let mut all = [n1, n2, n3, k];
        all.sort_unstable();
        let fp = four_point_cancellation(seg, all)?;
        let fpos = all.iter().position(|&i| i == k).expect("foreign index present");
        let norm = fp.increments[fpos];
        if !(norm.abs() > 1e-14) {
            return Err(Error::singular("cancellation weight at the foreign impact", norm));
        }
        for (slot, &ni) in indices.iter().enumerate() {
            let pos = all.iter().position(|&i| i == ni).expect("compensation index present");
            via[slot] -= dk * fp.increments[pos] / norm;
        }
    }
    let achieved = predict_combined(seg, &[(n1, inc[0]), (n2, inc[1]), (n3, inc[2])])?;
    let mismatch = if target.amax() == 0.0 { achieved.amax() } else { (achieved - target).amax() / target.amax() };
    Ok(Compensation {
        indices,
        increments: [inc[0], inc[1], inc[2]],
        via_cancellation: via,
        target: to_array(&target),
        achieved: to_array(&achieved),
        mismatch,
        solvability_det: det,
    })
}

pub fn rotation(delta: f64) -> Matrix2<f64> {
    let (s, c) = delta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RotationStage {
    pub stage: usize,
    pub indices: Vec<usize>,
    pub coefficients: Vec<Coefficient>,
    pub target: Vec<f64>,
    pub epsilon: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RotationOutcome {
    pub delta: f64,
    pub n: usize,
    pub stages: Vec<RotationStage>,
    pub plan: PerturbationPlan,
    pub order1_target: [[f64; 2]; 2],
    pub order1_achieved: [[f64; 2]; 2],
    /// `max |df^q_new − R_δ df^q|`.
    pub order1_error: f64,
    /// Largest change of a free order-`m` coefficient, `m = 2..=n+1`.
    pub drift: Vec<f64>,
    /// Largest change of the remaining order-`m` φ-partials; these follow
    /// the rotated order-1 block through the area identity.
    pub dependent_drift: Vec<f64>,
    pub patched: RadiusProfile,
}

/// Rotates `df^q` of a periodic orbit by `δ` with curvature patches, then
/// restores the free coefficients of orders `2..=n+1` one stage at a time.
pub fn rotate_differential(domain: &RadiusProfile, orbit: &PeriodicOrbit, delta: f64, n: usize, half_width: Option<f64>) -> Result<RotationOutcome> {
    let q = orbit.q;
    if q < n + 4 {
        return Err(Error::invalid(format!("stage count {} needs at least {} impacts, orbit has {q}", n + 1, n + 4)));
    }
    if delta.abs() > 0.1 {
        return Err(Error::invalid(format!("rotation angle {delta} outside the linear regime")));
    }
    let seg = Segment::from_orbit(domain, orbit, 0, q)?;
    let x0 = seg.points[0];
    let a = seg.total();
    let target_block = rotation(delta) * a;
    let base = map_jet_iter(domain, x0, n + 1, q)?;
    let max_idx = n + 3;
    let all_idx: Vec<usize> = (1..=max_idx).collect();
    let h = half_width.unwrap_or_else(|| auto_half_width(domain, &seg, &all_idx));
    let mut jets: Vec<Vec<f64>> = vec![vec![]; max_idx + 1];
    let mut stages = vec![];
    let mut current = domain.clone();
    let to_targets = |jets: &Vec<Vec<f64>>| -> Vec<PlanTarget> {
        (1..=max_idx)
            .filter(|&l| jets[l].iter().any(|x| *x != 0.0))
            .map(|l| PlanTarget { index: l, s: seg.points[l].s, jet: jets[l].clone() })
            .collect()
    };
    if delta != 0.0 {
        for m in 0..=n {
            let indices: Vec<usize> = (1..=m + 3).collect();
            let coefs = if m == 0 {
                vec![Coefficient::s(1, 0), Coefficient::s(0, 1), Coefficient::phi(0, 1)]
            } else {
                free_coefficients(m + 1)
            };
            let want: Vec<f64> = if m == 0 {
                vec![target_block[(0, 0)], target_block[(0, 1)], target_block[(1, 1)]]
            } else {
                coefs.iter().map(|c| c.value(&base)).collect()
            };
            let bare = bare_response(&seg, &coefs, &indices)?;
            let mut target = vec![];
            let mut eps = vec![0.0; indices.len()];
            for it in 0..ROTATION_SWEEPS {
                let now = measure_coefficients(&current, x0, q, &coefs)?;
                let gap: Vec<f64> = want.iter().zip(&now).map(|(w, v)| w - v).collect();
                if it == 0 {
                    target = gap.clone();
                } else if gap.iter().all(|g| g.abs() <= 1e-14 * want.iter().fold(1.0f64, |m, w| m.max(w.abs()))) {
                    break;
                }
                let step = solve_response(&bare, &gap, "rotation stage")?;
                for ((&l, &e), acc) in indices.iter().zip(&step).zip(eps.iter_mut()) {
                    if jets[l].len() < m + 1 {
                        jets[l].resize(m + 1, 0.0);
                    }
                    jets[l][m] += e;
                    *acc += e;
                }
                let patches = build_patches(domain, &seg, &to_targets(&jets), h)?;
                current = domain.apply_and_renormalize(&patches, true)?.profile;
            }
            stages.push(RotationStage { stage: m, indices, coefficients: coefs, target, epsilon: eps });
        }
    }
    let targets = to_targets(&jets);
    let patches = build_patches(domain, &seg, &targets, h)?;
    let fin = map_jet_iter(&current, x0, n + 1, q)?;
    let block = fin.block1();
    let mut drift = vec![];
    let mut dependent_drift = vec![];
    for m in 2..=n + 1 {
        let free = free_coefficients(m);
        let mut d: f64 = 0.0;
        let mut dd: f64 = 0.0;
        for b in 0..=m {
            for c in [Coefficient::s(m - b, b), Coefficient::phi(m - b, b)] {
                let gap = (c.value(&fin) - c.value(&base)).abs();
                if free.contains(&c) {
                    d = d.max(gap);
                } else {
                    dd = dd.max(gap);
                }
            }
        }
        drift.push(d);
        dependent_drift.push(dd);
    }
    let plan = PerturbationPlan {
        targets,
        epsilon: stages.iter().flat_map(|s| s.epsilon.clone()).collect(),
        coefficients: stages.iter().flat_map(|s| s.coefficients.clone()).collect(),
        predicted_delta: stages.iter().flat_map(|s| s.target.clone()).collect(),
        half_width: h,
        applied_patches: patches,
    };
    Ok(RotationOutcome {
        delta,
        n,
        stages,
        plan,
        order1_target: to_array(&target_block),
        order1_achieved: to_array(&block),
        order1_error: (block - target_block).amax(),
        drift,
        dependent_drift,
        patched: current,
    })
}

/// `p` with every weight multiplied by `eps`.
pub fn scaled_patch(p: &BumpPatch, eps: f64) -> BumpPatch {
    BumpPatch::new(
        p.center_theta,
        p.half_width,
        p.weights.iter().map(|w| w * eps).collect(),
        p.target_jet.iter().map(|x| x * eps).collect(),
    )
}

/// `dκ/dε` at the patch centre for the family `ρ + ε·Δρ_patch`.
pub fn curvature_rate(domain: &RadiusProfile, patch: &BumpPatch) -> f64 {
    let r = domain.rho(patch.center_theta);
    -patch.delta_rho(patch.center_theta) / (r * r)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeSweep {
    pub eps: Vec<f64>,
    /// `max |(value(ε) − value(0))/ε − predicted|` per ε.
    pub errors: Vec<f64>,
    /// `errors[i] / errors[i+1]`.
    pub ratios: Vec<f64>,
}

/// Compares finite-difference slopes with a first-order prediction;
/// `slope(ε)` returns `(value(ε) − value(0)) / ε`.
pub fn slope_sweep(eps: &[f64], predicted: &[f64], mut slope: impl FnMut(f64) -> Result<Vec<f64>>) -> Result<SlopeSweep> {
    let mut errors = vec![];
    for &e in eps {
        let got = slope(e)?;
        let err = got.iter().zip(predicted).map(|(g, p)| (g - p).abs()).fold(0.0, f64::max);
        errors.push(err);
    }
    let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(SlopeSweep { eps: eps.to_vec(), errors, ratios })
}

/// Slope law for a single curvature patch at orbit impact `k` along the
/// family `ρ + ε·Δρ`.
pub fn differential_slope_law(domain: &RadiusProfile, orbit: &PeriodicOrbit, k: usize, eps: &[f64]) -> Result<SlopeSweep> {
    let q = orbit.q;
    let seg = Segment::from_orbit(domain, orbit, 0, q)?;
    let h = auto_half_width(domain, &seg, &[k]);
    let kappa = domain.curvature_at_s(seg.points[k].s);
    let unit = build_patches(
        domain,
        &seg,
        &[PlanTarget { index: k, s: seg.points[k].s, jet: vec![0.2 * kappa] }],
        h,
    )?
    .remove(0);
    let rate = curvature_rate(domain, &unit);
    let pred = vec4(&predict_delta_differential(&seg, k, rate)?);
    let a0 = seg.total();
    slope_sweep(eps, &pred, |e| {
        let d = domain.apply_and_renormalize(&[scaled_patch(&unit, e)], true)?.profile;
        let s = Segment::from_point(&d, seg.points[0], q)?;
        Ok(vec4(&((s.total() - a0) / e)).to_vec())
    })
}
