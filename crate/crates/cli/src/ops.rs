use crate::plot::emit_plot_data;
use crate::scenario::{Bound, Check, DomainSpec, HarnessError};
use bjl_core::billiard::{generating_length, map_jet, map_jet_iter, one_step_differential, step, PhasePoint};
use bjl_core::manifold::{
    billiard_lift, detect_tangency, globalize, homoclinic_orbit_s, injectivity_check, invariance_defect, local_manifold,
    scan_family, unfolding_jacobian, BilliardReturn, Branch, GlobalizeOptions, Homoclinic, HomoclinicConfig, PhiSamples,
    SeedOptions, Side, TangencyOptions,
};
use bjl_core::normal_form::{birkhoff_normal_form, canonical_jet, lazutkin_check, LazutkinOptions};
use bjl_core::orbit::{check_absolute_periodicity_order, find_birkhoff_orbit, Classification, PeriodicOrbit};
use bjl_core::perturb::{
    apply_plan, assemble_m, check_twist_partials, det_via_reduction, differential_slope_law, free_coefficients,
    measure_coefficients, plan_for_target, predict_delta_differential, recover_phi_partials, rotate_differential, to_array,
    Segment,
};
use bjl_core::series::binomial;
use bjl_core::RadiusProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

pub const OPERATIONS: &[&str] = &[
    "admissibility",
    "circle_suite",
    "area_twist",
    "jet_fd",
    "slope_law",
    "m_determinant",
    "independence",
    "phi_recovery",
    "rotation",
    "lift_scaling",
    "length_identities",
    "lazutkin",
    "tangency_family",
    "find_orbit",
    "orbit_jet",
    "perturb_predict",
    "perturb_solve",
    "manifold_grow",
    "tangency_scan",
    "injectivity",
    "normal_form",
];

#[derive(Debug)]
pub enum OpError {
    Schema(String),
    Numeric(bjl_core::Error),
    Io(std::io::Error),
}

impl From<bjl_core::Error> for OpError {
    fn from(e: bjl_core::Error) -> Self {
        OpError::Numeric(e)
    }
}

impl From<std::io::Error> for OpError {
    fn from(e: std::io::Error) -> Self {
        OpError::Io(e)
    }
}

impl From<HarnessError> for OpError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Schema(m) => OpError::Schema(m),
            HarnessError::Io(e) => OpError::Io(e),
        }
    }
}

type OpResult = Result<StepOutcome, OpError>;

#[derive(Clone, Debug, Default)]
pub struct StepOutcome {
    pub checks: Vec<Check>,
    pub values: Value,
    pub artifacts: Vec<String>,
}

impl StepOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub struct Context<'a> {
    pub domain: Option<&'a RadiusProfile>,
    pub base: &'a Path,
    pub tolerances: &'a BTreeMap<String, f64>,
    pub scale: f64,
    pub seed: u64,
    pub output_dir: Option<&'a Path>,
    pub prefix: String,
}

impl Context<'_> {
    /// Context without a scenario: no domain, default tolerances, no output.
    pub fn bare(tolerances: &BTreeMap<String, f64>) -> Context<'_> {
        Context { domain: None, base: Path::new("."), tolerances, scale: 1.0, seed: 0, output_dir: None, prefix: "step".into() }
    }

    fn check(&self, name: &str, measured: f64, default: Bound, oracle: &str) -> Check {
        let bound = match (self.tolerances.get(name), default) {
            (Some(&t), Bound::AtMost(_)) => Bound::AtMost(t),
            (Some(&t), Bound::AtLeast(_)) => Bound::AtLeast(t),
            (Some(&t), Bound::Within(lo, hi)) => Bound::Within(0.5 * (lo + hi) - t, 0.5 * (lo + hi) + t),
            (None, b) => b,
        }
        .scaled(self.scale);
        Check { name: name.into(), measured, bound, oracle: oracle.into(), passed: measured.is_finite() && bound.holds(measured) }
    }

    fn at_most(&self, name: &str, measured: f64, tol: f64, oracle: &str) -> Check {
        self.check(name, measured, Bound::AtMost(tol), oracle)
    }

    fn at_least(&self, name: &str, measured: f64, tol: f64, oracle: &str) -> Check {
        self.check(name, measured, Bound::AtLeast(tol), oracle)
    }

    fn within(&self, name: &str, measured: f64, lo: f64, hi: f64, oracle: &str) -> Check {
        self.check(name, measured, Bound::Within(lo, hi), oracle)
    }

    fn domain_or(&self, spec: &Option<DomainSpec>, fallback: impl FnOnce() -> RadiusProfile) -> Result<RadiusProfile, OpError> {
        match spec {
            Some(s) => Ok(s.load(self.base)?),
            None => Ok(self.domain.cloned().unwrap_or_else(fallback)),
        }
    }

    fn domains_or(&self, specs: &Option<Vec<DomainSpec>>, fallback: Vec<RadiusProfile>) -> Result<Vec<RadiusProfile>, OpError> {
        match specs {
            Some(list) => list.iter().map(|s| s.load(self.base).map_err(OpError::from)).collect(),
            None => Ok(fallback),
        }
    }

    /// Writes a plot file when an output directory is configured.
    fn plot(&self, out: &mut StepOutcome, name: &str, series: &[(f64, f64)]) -> Result<(), OpError> {
        if let Some(dir) = self.output_dir {
            let file = format!("{}_{name}.dat", self.prefix);
            emit_plot_data(series, &dir.join(&file))?;
            out.artifacts.push(file);
        }
        Ok(())
    }

    fn text(&self, out: &mut StepOutcome, name: &str, body: &str) -> Result<(), OpError> {
        if let Some(dir) = self.output_dir {
            let file = format!("{}_{name}", self.prefix);
            std::fs::write(dir.join(&file), body)?;
            out.artifacts.push(file);
        }
        Ok(())
    }
}

fn params<T: DeserializeOwned + Default>(v: &Value) -> Result<T, OpError> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| OpError::Schema(format!("bad parameters: {e}")))
}

pub fn run_op(name: &str, p: &Value, ctx: &Context) -> OpResult {
    match name {
        "admissibility" => admissibility(params(p)?, ctx),
        "circle_suite" => circle_suite(params(p)?, ctx),
        "area_twist" => area_twist(params(p)?, ctx),
        "jet_fd" => jet_fd(params(p)?, ctx),
        "slope_law" => slope_law(params(p)?, ctx),
        "m_determinant" => m_determinant(params(p)?, ctx),
        "independence" => independence(params(p)?, ctx),
        "phi_recovery" => phi_recovery(params(p)?, ctx),
        "rotation" => rotation(params(p)?, ctx),
        "lift_scaling" => lift_scaling(params(p)?, ctx),
        "length_identities" => length_identities(params(p)?, ctx),
        "lazutkin" => lazutkin(params(p)?, ctx),
        "tangency_family" => tangency_family(params(p)?, ctx),
        "find_orbit" => find_orbit(params(p)?, ctx),
        "orbit_jet" => orbit_jet(params(p)?, ctx),
        "perturb_predict" => perturb_predict(params(p)?, ctx),
        "perturb_solve" => perturb_solve(params(p)?, ctx),
        "manifold_grow" => manifold_grow(params(p)?, ctx),
        "tangency_scan" => tangency_scan(params(p)?, ctx),
        "injectivity" => injectivity(params(p)?, ctx),
        "normal_form" => normal_form(params(p)?, ctx),
        other => Err(OpError::Schema(format!("unknown operation '{other}'"))),
    }
}

pub fn wobbly() -> RadiusProfile {
    RadiusProfile::from_relative_harmonics(&[(2, 0.12, 0.03), (3, 0.04, -0.02)])
}

/// Five admissible test domains, circle first.
pub fn suite_domains() -> Vec<RadiusProfile> {
    vec![
        RadiusProfile::circle(),
        RadiusProfile::ellipse_like(0.2),
        wobbly(),
        RadiusProfile::from_relative_harmonics(&[(3, 0.05, 0.01)]),
        RadiusProfile::from_relative_harmonics(&[(2, 0.25, 0.05), (3, 0.04, -0.03), (5, 0.01, 0.0)]),
    ]
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DomainParams {
    domain: Option<DomainSpec>,
}

fn admissibility(p: DomainParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, RadiusProfile::circle)?;
    let r = d.check_admissibility();
    let checks = vec![
        ctx.at_least("min_rho", r.min_rho, 1e-12, "radius of curvature positive"),
        ctx.at_most("closure", r.first_harmonic_residual, 1e-12, "first harmonic of rho vanishes"),
        ctx.at_most("unit_length", r.length_error, 1e-12, "perimeter 1"),
    ];
    Ok(StepOutcome { checks, values: serde_json::to_value(&r).unwrap(), artifacts: vec![] })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CircleParams {
    polygons: Vec<usize>,
}

impl Default for CircleParams {
    fn default() -> Self {
        CircleParams { polygons: vec![2, 3, 4, 8] }
    }
}

fn circle_suite(p: CircleParams, ctx: &Context) -> OpResult {
    let c = RadiusProfile::circle();
    let tol = 1e-10;
    let mut out = StepOutcome::default();
    // chord of angle φ spans the arc 2φR = φ/π
    let mut map_err: f64 = 0.0;
    for &(s, phi) in &[(0.1, 1.0), (0.7, 0.3), (0.0, PI / 2.0), (0.45, 2.9)] {
        let st = step(&c, s, phi)?;
        map_err = map_err.max((st.s1 - (s + phi / PI)).abs()).max((st.phi1 - phi).abs());
    }
    out.checks.push(ctx.at_most("circle_map", map_err, tol, "s1 = s0 + phi0/pi, phi1 = phi0"));
    let m = one_step_differential(&c, PhasePoint::new(0.3, 0.7))?;
    let want = [[1.0, 1.0 / PI], [0.0, 1.0]];
    let dm = max_abs((0..4).map(|k| m[(k / 2, k % 2)] - want[k / 2][k % 2]));
    out.checks.push(ctx.at_most("circle_differential", dm, tol, "[[1, 1/pi], [0, 1]]"));
    let (l, _, _) = generating_length(&c, 0.0, 0.5)?;
    out.checks.push(ctx.at_most("circle_generating_length", (l - 1.0 / PI).abs(), tol, "L(0, 1/2) = 1/pi"));
    let mut polys = vec![];
    for &q in &p.polygons {
        let o = find_birkhoff_orbit(&c, 1, q, 0.0)?;
        let mut e: f64 = 0.0;
        for k in 0..q {
            let ds = o.lifted_s[(k + 1) % q] - o.lifted_s[k] + if k + 1 == q { 1.0 } else { 0.0 };
            e = e.max((ds - 1.0 / q as f64).abs()).max((o.points[k].phi - PI / q as f64).abs());
        }
        let len = o.total_length(&c)?;
        e = e.max((len - q as f64 * (PI / q as f64).sin() / PI).abs());
        out.checks.push(ctx.at_most(&format!("circle_polygon_{q}"), e, tol, "regular q-gon, phi = pi/q, length q sin(pi/q)/pi"));
        polys.push(json!({"q": q, "length": len, "error": e}));
    }
    out.values = json!({"step_error": map_err, "differential_error": dm, "generating_length": l, "polygons": polys});
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AreaParams {
    domains: Option<Vec<DomainSpec>>,
    points: usize,
    phi_margin: f64,
}

impl Default for AreaParams {
    fn default() -> Self {
        AreaParams { domains: None, points: 10_000, phi_margin: 0.05 }
    }
}

fn area_twist(p: AreaParams, ctx: &Context) -> OpResult {
    let domains = ctx.domains_or(&p.domains, suite_domains())?;
    if domains.is_empty() || p.points == 0 {
        return Err(OpError::Schema("area_twist needs at least one domain and one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let per = p.points.div_ceil(domains.len());
    let mut area: f64 = 0.0;
    let mut twist = f64::INFINITY;
    let mut count = 0;
    for d in &domains {
        for _ in 0..per {
            let s: f64 = rng.gen();
            let phi = rng.gen_range(p.phi_margin..PI - p.phi_margin);
            let m = one_step_differential(d, PhasePoint::new(s, phi))?;
            let st = step(d, s, phi)?;
            area = area.max((m.determinant() - phi.sin() / st.phi1.sin()).abs());
            twist = twist.min(m[(0, 1)]);
            count += 1;
        }
    }
    Ok(StepOutcome {
        checks: vec![
            ctx.at_most("area_form", area, 1e-11, "det df = sin phi0 / sin phi1"),
            ctx.at_least("twist", twist, 1e-12, "ds1/dphi0 > 0"),
        ],
        values: json!({"points": count, "domains": domains.len(), "max_area_defect": area, "min_twist": twist}),
        artifacts: vec![],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct JetFdParams {
    domains: Option<Vec<DomainSpec>>,
    points: usize,
    order: usize,
}

impl Default for JetFdParams {
    fn default() -> Self {
        JetFdParams { domains: None, points: 10, order: 4 }
    }
}

type Sampler<'a> = dyn Fn(f64, f64) -> bjl_core::Result<[f64; 2]> + 'a;

/// Samples whose `(a, b)` difference quotient approximates `∂^a_s ∂^b_φ f`:
/// the map itself for first order, otherwise one column of the closed-form
/// differential, which takes one derivative off the stencil.
fn sampler<'a>(d: &'a RadiusProfile, p: PhasePoint, a: usize, b: usize) -> (Box<Sampler<'a>>, usize, usize) {
    if a + b <= 1 {
        let f = move |ds: f64, dphi: f64| {
            let st = step(d, p.s + ds, p.phi + dphi)?;
            Ok([st.s1, st.phi1])
        };
        return (Box::new(f), a, b);
    }
    let col = if a > 0 { 0 } else { 1 };
    let f = move |ds: f64, dphi: f64| {
        let m = one_step_differential(d, PhasePoint::new(p.s + ds, p.phi + dphi))?;
        Ok([m[(0, col)], m[(1, col)]])
    };
    if a > 0 {
        (Box::new(f), a - 1, b)
    } else {
        (Box::new(f), 0, b - 1)
    }
}

fn tensor_fd(f: &Sampler, a: usize, b: usize, h: f64) -> bjl_core::Result<[f64; 2]> {
    let w = |k: usize| -> Vec<(f64, f64)> {
        (0..=k).map(|j| (binomial(k, j) * if j % 2 == 0 { 1.0 } else { -1.0 }, (k as f64 / 2.0 - j as f64) * h)).collect()
    };
    let mut acc = [0.0; 2];
    for (ca, oa) in w(a) {
        for (cb, ob) in w(b) {
            let r = f(oa, ob)?;
            acc[0] += ca * cb * r[0];
            acc[1] += ca * cb * r[1];
        }
    }
    let scale = h.powi((a + b) as i32);
    Ok([acc[0] / scale, acc[1] / scale])
}

/// Central difference estimate of `∂^a_s ∂^b_φ f` at step `h`.
pub fn fd_raw(d: &RadiusProfile, p: PhasePoint, a: usize, b: usize, h: f64) -> bjl_core::Result<[f64; 2]> {
    let (f, a, b) = sampler(d, p, a, b);
    tensor_fd(&*f, a, b, h)
}

/// Two-level Richardson extrapolation of [`fd_raw`] over a halving step
/// sweep. Levels whose rounding error may exceed `1e-4` of the estimate are
/// dropped; the answer is the middle of the three consecutive levels that
/// agree best.
pub fn fd_plateau(d: &RadiusProfile, p: PhasePoint, a: usize, b: usize) -> bjl_core::Result<[f64; 2]> {
    let (f, a, b) = sampler(d, p, a, b);
    let deg = (a + b) as i32;
    let centre = f(0.0, 0.0)?;
    let noise = |h: f64| 2.0 * f64::EPSILON * 2f64.powi(deg) / h.powi(deg);
    let mut levels = vec![];
    let mut h = 0.08;
    while h / 4.0 >= 1e-4 {
        if let Ok(v) = (0..3).map(|i| tensor_fd(&*f, a, b, h / 2f64.powi(i))).collect::<bjl_core::Result<Vec<_>>>() {
            let r = |c: usize| {
                let r1 = (4.0 * v[1][c] - v[0][c]) / 3.0;
                let r2 = (4.0 * v[2][c] - v[1][c]) / 3.0;
                (16.0 * r2 - r1) / 15.0
            };
            levels.push(([r(0), r(1)], noise(h / 4.0)));
        }
        h *= 0.5;
    }
    let mut out = [0.0; 2];
    for (c, slot) in out.iter_mut().enumerate() {
        let est: Vec<f64> = levels.iter().filter(|(e, n)| *n * centre[c].abs().max(1.0) <= 1e-4 * e[c].abs().max(1.0)).map(|(e, _)| e[c]).collect();
        *slot = match est.len() {
            0 => return Err(bjl_core::Error::Condition("no usable finite-difference step".into())),
            1 | 2 => est[est.len() - 1],
            _ => {
                let spread = |w: &[f64]| (w[1] - w[0]).abs().max((w[2] - w[1]).abs());
                est.windows(3).min_by(|x, y| spread(x).total_cmp(&spread(y))).map(|w| w[1]).unwrap_or(est[0])
            }
        };
    }
    Ok(out)
}

fn jet_fd(p: JetFdParams, ctx: &Context) -> OpResult {
    let domains = ctx.domains_or(&p.domains, suite_domains()[1..4].to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut worst: f64 = 0.0;
    let mut where_ = json!(null);
    let mut count = 0;
    for (di, d) in domains.iter().enumerate() {
        for _ in 0..p.points {
            let x = PhasePoint::new(rng.gen(), rng.gen_range(0.6..2.5));
            let jet = map_jet(d, x, p.order)?;
            for deg in 1..=p.order {
                for b in 0..=deg {
                    let a = deg - b;
                    let fd = fd_plateau(d, x, a, b)?;
                    for (c, jv) in [jet.ds(a, b), jet.dphi(a, b)].into_iter().enumerate() {
                        let e = (fd[c] - jv).abs() / jv.abs().max(1.0);
                        count += 1;
                        if e > worst {
                            worst = e;
                            where_ = json!({"domain": di, "s": x.s, "phi": x.phi, "a": a, "b": b, "component": c, "jet": jv, "fd": fd[c]});
                        }
                    }
                }
            }
        }
    }
    Ok(StepOutcome {
        checks: vec![ctx.at_most("jet_vs_fd", worst, 1e-4, "finite-difference plateau of the one-step map and its closed-form differential")],
        values: json!({"coefficients": count, "max_relative_error": worst, "worst": where_}),
        artifacts: vec![],
    })
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default = "one")]
    pub p: u32,
    pub q: usize,
    #[serde(default)]
    pub seed: f64,
    #[serde(default)]
    pub k: usize,
}

fn one() -> u32 {
    1
}

impl OrbitSpec {
    fn new(domain: DomainSpec, q: usize, seed: f64, k: usize) -> Self {
        OrbitSpec { domain: Some(domain), p: 1, q, seed, k }
    }

    fn resolve(&self, ctx: &Context, fallback: fn() -> RadiusProfile) -> Result<(RadiusProfile, PeriodicOrbit), OpError> {
        let d = ctx.domain_or(&self.domain, fallback)?;
        let o = find_birkhoff_orbit(&d, self.p, self.q, self.seed)?;
        Ok((d, o))
    }
}

fn wobbly_spec() -> DomainSpec {
    DomainSpec::Harmonics { harmonics: vec![(2, 0.12, 0.03), (3, 0.04, -0.02)] }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SlopeParams {
    orbits: Vec<OrbitSpec>,
    eps: Vec<f64>,
}

impl Default for SlopeParams {
    fn default() -> Self {
        SlopeParams {
            orbits: vec![
                OrbitSpec::new(DomainSpec::EllipseLike { ellipse_like: 0.2 }, 3, 0.05, 2),
                OrbitSpec::new(wobbly_spec(), 4, 0.0, 1),
                OrbitSpec::new(wobbly_spec(), 5, 0.1, 3),
            ],
            eps: vec![1e-3, 1e-4, 1e-5],
        }
    }
}

fn slope_law(p: SlopeParams, ctx: &Context) -> OpResult {
    let mut out = StepOutcome::default();
    let mut rows = vec![];
    for (i, spec) in p.orbits.iter().enumerate() {
        let (d, o) = spec.resolve(ctx, wobbly)?;
        let sweep = differential_slope_law(&d, &o, spec.k, &p.eps)?;
        for (j, r) in sweep.ratios.iter().enumerate() {
            out.checks.push(ctx.within(&format!("slope_ratio_{i}_{j}"), *r, 6.0, 14.0, "O(eps) error of the first-order prediction"));
        }
        rows.push(json!({"q": o.q, "k": spec.k, "sweep": sweep}));
    }
    out.values = json!({"orbits": rows});
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MParams {
    orbits: Vec<OrbitSpec>,
    orders: Vec<usize>,
}

impl Default for MParams {
    fn default() -> Self {
        MParams {
            orbits: vec![
                OrbitSpec::new(DomainSpec::EllipseLike { ellipse_like: 0.2 }, 5, 0.1, 0),
                OrbitSpec::new(wobbly_spec(), 4, 0.0, 0),
                OrbitSpec::new(wobbly_spec(), 7, 0.2, 0),
            ],
            orders: vec![0, 1, 2],
        }
    }
}

fn m_determinant(p: MParams, ctx: &Context) -> OpResult {
    let mut out = StepOutcome::default();
    let mut rows = vec![];
    for (i, spec) in p.orbits.iter().enumerate() {
        let (d, o) = spec.resolve(ctx, wobbly)?;
        for &n in &p.orders {
            let seg = Segment::from_orbit(&d, &o, spec.k, n + 3)?;
            let cond = check_twist_partials(&seg, 0, n + 3);
            out.checks.push(ctx.at_least(&format!("twist_condition_{i}_{n}"), cond.min_ratio, 1e-8, "ds_j/dphi_i nonzero on the segment"));
            let m = assemble_m(&seg, n)?;
            let cert = det_via_reduction(&seg, &m);
            let rel = cert.relative_error.unwrap_or(f64::INFINITY);
            out.checks.push(ctx.at_most(&format!("det_agreement_{i}_{n}"), rel, 1e-7, "LU determinant vs reduced product"));
            let size = m.entries.amax().powi((n + 2) as i32);
            out.checks.push(ctx.at_least(&format!("det_nonzero_{i}_{n}"), m.direct_det.abs() / size, 1e-12, "det M relative to entry scale"));
            rows.push(json!({"orbit": i, "n": n, "certificate": cert}));
        }
    }
    out.values = json!({"certificates": rows});
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct IndependenceParams {
    domain: Option<DomainSpec>,
    s: f64,
    phi: f64,
    orders: Vec<usize>,
    scale: f64,
    lower_scales: Vec<f64>,
}

impl Default for IndependenceParams {
    fn default() -> Self {
        IndependenceParams { domain: None, s: 0.05, phi: 1.1, orders: vec![1, 2], scale: 1e-4, lower_scales: vec![1e-4, 1e-5] }
    }
}

/// All order-`m` partials of `f^steps`, `m = 1..=n`.
fn all_partials(d: &RadiusProfile, x0: PhasePoint, steps: usize, n: usize) -> bjl_core::Result<Vec<Vec<f64>>> {
    let jet = map_jet_iter(d, x0, n.max(1), steps)?;
    Ok((1..=n)
        .map(|m| (0..=m).flat_map(|b| [jet.ds(m - b, b), jet.dphi(m - b, b)]).collect())
        .collect())
}

fn independence(p: IndependenceParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, wobbly)?;
    let x0 = PhasePoint::new(p.s, p.phi);
    let mut out = StepOutcome::default();
    let mut rows = vec![];
    for &n in &p.orders {
        if n == 0 {
            return Err(OpError::Schema("order 0 coefficients are impact positions; orbit-fixing patches cannot move them".into()));
        }
        let seg = Segment::from_point(&d, x0, n + 3)?;
        let coefs = free_coefficients(n);
        let base = measure_coefficients(&d, x0, n + 3, &coefs)?;
        let mut leak: f64 = 0.0;
        let mut response = vec![];
        for j in 0..n + 2 {
            let mut t = vec![0.0; n + 2];
            t[j] = p.scale;
            let plan = plan_for_target(&d, &seg, n, &t, None)?;
            let got = measure_coefficients(&apply_plan(&d, &plan)?, x0, n + 3, &coefs)?;
            let col: Vec<f64> = (0..n + 2).map(|i| (got[i] - base[i]) / p.scale).collect();
            for (i, r) in col.iter().enumerate() {
                leak = leak.max((r - if i == j { 1.0 } else { 0.0 }).abs());
            }
            response.push(col);
        }
        out.checks.push(ctx.at_most(&format!("leakage_{n}"), leak, 0.1, "unit response on target, none elsewhere"));
        let base_lower = all_partials(&d, x0, n + 3, n - 1)?;
        let mut lower = vec![];
        for &sc in &p.lower_scales {
            let plan = plan_for_target(&d, &seg, n, &vec![sc; n + 2], None)?;
            let got = all_partials(&apply_plan(&d, &plan)?, x0, n + 3, n - 1)?;
            let e2 = plan.epsilon.iter().fold(0.0f64, |m, e| m.max(e.abs())).powi(2);
            let mut q: f64 = 0.0;
            for (g, b) in got.iter().flatten().zip(base_lower.iter().flatten()) {
                q = q.max((g - b).abs() / (e2 * b.abs().max(1.0)));
            }
            lower.push(json!({"scale": sc, "eps_sq": e2, "ratio_to_eps_sq": q}));
            if n > 1 {
                out.checks.push(ctx.at_most(&format!("lower_order_{n}_{sc:e}"), q, 10.0, "lower-order change bounded by 10 |eps|^2"));
            }
        }
        rows.push(json!({"n": n, "response": response, "lower_orders": lower}));
    }
    out.values = json!({"orders": rows});
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PhiParams {
    orbits: Vec<OrbitSpec>,
    max_order: usize,
}

impl Default for PhiParams {
    fn default() -> Self {
        PhiParams {
            orbits: vec![
                OrbitSpec::new(DomainSpec::EllipseLike { ellipse_like: 0.2 }, 3, 0.1, 0),
                OrbitSpec::new(wobbly_spec(), 4, 0.1, 0),
                OrbitSpec::new(DomainSpec::Harmonics { harmonics: vec![(3, 0.05, 0.01)] }, 5, 0.1, 0),
            ],
            max_order: 3,
        }
    }
}

fn phi_recovery(p: PhiParams, ctx: &Context) -> OpResult {
    let mut out = StepOutcome::default();
    let mut rows = vec![];
    for (i, spec) in p.orbits.iter().enumerate() {
        let (d, o) = spec.resolve(ctx, wobbly)?;
        let jet = map_jet_iter(&d, o.points[0], p.max_order, o.q)?;
        for m in 1..=p.max_order {
            let r = recover_phi_partials(&jet, m)?;
            out.checks.push(ctx.at_most(&format!("phi_partials_{i}_{m}"), r.max_relative_error, 1e-7, "direct jet coefficients"));
            rows.push(json!({"orbit": i, "m": m, "recovery": r}));
        }
    }
    out.values = json!({"recoveries": rows});
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RotationParams {
    orbit: OrbitSpec,
    delta: f64,
    orders: Vec<usize>,
}

impl Default for RotationParams {
    fn default() -> Self {
        RotationParams { orbit: OrbitSpec::new(wobbly_spec(), 5, 0.0, 0), delta: 1e-3, orders: vec![0, 1] }
    }
}

fn rotation(p: RotationParams, ctx: &Context) -> OpResult {
    let (d, o) = p.orbit.resolve(ctx, wobbly)?;
    let mut out = StepOutcome::default();
    let mut rows = vec![];
    for &n in &p.orders {
        let r = rotate_differential(&d, &o, p.delta, n, None)?;
        out.checks.push(ctx.at_most(&format!("rotated_block_{n}"), r.order1_error, 1e-5, "R_delta df^q"));
        for (m, drift) in r.drift.iter().enumerate() {
            out.checks.push(ctx.at_most(&format!("restored_order_{}_{n}", m + 2), *drift, 100.0 * p.delta * p.delta, "original coefficients"));
        }
        rows.push(json!({"n": n, "order1_error": r.order1_error, "drift": r.drift, "dependent_drift": r.dependent_drift, "stages": r.stages.len()}));
    }
    out.values = json!({"delta": p.delta, "rotations": rows});
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LiftParams {
    orbit: OrbitSpec,
    half_width: f64,
    eps: f64,
    iterates: usize,
}

impl Default for LiftParams {
    fn default() -> Self {
        LiftParams {
            orbit: OrbitSpec::new(DomainSpec::Harmonics { harmonics: vec![(2, 0.05, 0.0), (3, -0.0009, 0.0009)] }, 2, 0.25, 0),
            half_width: 0.005,
            eps: 1e-6,
            iterates: 5,
        }
    }
}

fn lift_scaling(p: LiftParams, ctx: &Context) -> OpResult {
    if p.iterates < 2 {
        return Err(OpError::Schema("lift_scaling needs at least 2 iterates".into()));
    }
    let (d, o) = p.orbit.resolve(ctx, || RadiusProfile::ellipse_like(0.05))?;
    let lift = billiard_lift(&d, &o, p.orbit.k, p.half_width, p.eps, p.iterates - 1)?;
    let r = &lift.report;
    let mut out = StepOutcome::default();
    out.checks.push(ctx.at_least("iterates", r.displacement.len() as f64, 5.0, "measured images"));
    out.checks.push(ctx.at_most("decay_slope", r.relative_error, 0.1, "-log lambda"));
    let series: Vec<(f64, f64)> = r.k.iter().zip(&r.displacement).map(|(k, v)| (*k as f64, v.abs().ln())).collect();
    ctx.plot(&mut out, "lift", &series)?;
    out.values = serde_json::to_value(&lift).unwrap();
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LengthParams {
    domains: Option<Vec<DomainSpec>>,
    periods: Vec<usize>,
}

impl Default for LengthParams {
    fn default() -> Self {
        LengthParams { domains: None, periods: vec![2, 3, 5] }
    }
}

fn length_identities(p: LengthParams, ctx: &Context) -> OpResult {
    let domains = ctx.domains_or(&p.domains, suite_domains())?;
    let (mut es, mut ep): (f64, f64) = (0.0, 0.0);
    let mut count = 0;
    for d in &domains {
        for &q in &p.periods {
            for seed in [0.0, 0.5 / q as f64] {
                let o = find_birkhoff_orbit(d, 1, q, seed)?;
                let r = check_absolute_periodicity_order(d, &o, 1)?;
                es = es.max((r.dl_ds0 - r.dl_ds0_identity).abs());
                ep = ep.max((r.dl_dphi0 - r.dl_dphi0_identity).abs());
                count += 1;
            }
        }
    }
    Ok(StepOutcome {
        checks: vec![
            ctx.at_most("length_ds0", es, 1e-9, "cos phi_q ds_q/ds0 - cos phi_0"),
            ctx.at_most("length_dphi0", ep, 1e-9, "cos phi_q ds_q/dphi0"),
        ],
        values: json!({"orbits": count, "max_ds0_residual": es, "max_dphi0_residual": ep}),
        artifacts: vec![],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LazutkinParams {
    domain: Option<DomainSpec>,
    options: LazutkinOptions,
}

impl Default for LazutkinParams {
    fn default() -> Self {
        LazutkinParams { domain: None, options: LazutkinOptions::default() }
    }
}

fn lazutkin(p: LazutkinParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, || RadiusProfile::from_relative_harmonics(&[(2, 0.05, 0.0), (3, 0.02, 0.01)]))?;
    let r = lazutkin_check(&d, p.options)?;
    let circle = lazutkin_check(&RadiusProfile::circle(), p.options)?;
    let gap = match (r.exponent1, r.exponent2) {
        (Some(a), Some(b)) => b - a,
        _ => f64::NAN,
    };
    let mut out = StepOutcome::default();
    out.checks.push(ctx.within("exponent_gap", gap, 0.8, 1.2, "y-residual one order above x-residual"));
    out.checks.push(ctx.at_most("circle_residual", circle.max_residual, 1e-12, "x' = x + y, y' = y"));
    ctx.plot(&mut out, "r1", &r.y.iter().zip(&r.r1).map(|(y, v)| (y.ln(), v.abs().max(1e-300).ln())).collect::<Vec<_>>())?;
    ctx.plot(&mut out, "r2", &r.y.iter().zip(&r.r2).map(|(y, v)| (y.ln(), v.abs().max(1e-300).ln())).collect::<Vec<_>>())?;
    out.values = json!({"domain": r, "circle_max_residual": circle.max_residual});
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FamilyParams {
    base: Vec<(u32, f64, f64)>,
    /// Harmonic direction multiplied by the family parameter.
    direction: Vec<(u32, f64, f64)>,
    /// Second unfolding direction.
    second: Vec<(u32, f64, f64)>,
    bracket: (f64, f64),
    window: (f64, f64),
    samples: usize,
    step: f64,
    max_iterations: usize,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            base: vec![(2, 0.2, 0.0)],
            direction: vec![(3, -1.0, 1.0)],
            second: vec![(3, 0.0, 1.0)],
            bracket: (0.0008, 0.0012),
            window: (6.0, 20.0),
            samples: 128,
            step: 1e-5,
            max_iterations: 60,
        }
    }
}

fn combine(base: &[(u32, f64, f64)], dirs: &[(&[(u32, f64, f64)], f64)]) -> RadiusProfile {
    let mut terms: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for &(k, a, b) in base {
        let e = terms.entry(k).or_default();
        e.0 += a;
        e.1 += b;
    }
    for (dir, mu) in dirs {
        for &(k, a, b) in dir.iter() {
            let e = terms.entry(k).or_default();
            e.0 += mu * a;
            e.1 += mu * b;
        }
    }
    let v: Vec<(u32, f64, f64)> = terms.into_iter().map(|(k, (a, b))| (k, a, b)).collect();
    RadiusProfile::from_relative_harmonics(&v)
}

fn tangency_family(p: FamilyParams, ctx: &Context) -> OpResult {
    let cfg = HomoclinicConfig { window: p.window, samples: p.samples, ..Default::default() };
    let splitting = |d: &RadiusProfile| Homoclinic::new(d, &cfg)?.splitting(p.window, p.samples);
    let family = |mu: f64| splitting(&combine(&p.base, &[(&p.direction, mu)]));
    let opts = TangencyOptions::default();
    let scan = scan_family(&family, p.bracket, opts, p.max_iterations)?;
    let mut out = StepOutcome::default();
    let Some(tan) = scan.tangency.clone() else {
        out.checks.push(ctx.at_most("tangency_value", f64::INFINITY, 1e-8, "no tangency located"));
        out.values = serde_json::to_value(&scan).unwrap();
        return Ok(out);
    };
    out.checks.push(ctx.at_most("tangency_value", tan.value.abs(), 1e-8, "Phi = 0 at the tangency"));
    out.checks.push(ctx.at_most("tangency_slope", tan.slope.abs(), 1e-6, "Phi' = 0 at the tangency"));
    let mu = scan.parameter;
    let two = |e: &[f64]| -> bjl_core::Result<PhiSamples> {
        splitting(&combine(&p.base, &[(&p.direction, mu + e[0]), (&p.second, e[1])]))
    };
    let jac = unfolding_jacobian(&two, tan.t, 1, 2, p.step, opts)?;
    let det = jac.scaled_det.unwrap_or(0.0);
    out.checks.push(ctx.at_least("unfolding_det", det.abs(), 1e-12, "column-scaled det d(Gamma0, Gamma1)/d(mu, nu)"));
    ctx.plot(&mut out, "phi", &scan.samples.pairs())?;
    let history: Vec<(f64, f64)> = scan.history.clone();
    ctx.plot(&mut out, "history", &history)?;
    out.values = json!({
        "parameter": mu,
        "tangency": tan,
        "history": history,
        "jacobian": jac,
    });
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FindOrbitParams {
    domain: Option<DomainSpec>,
    p: u32,
    q: usize,
    seed: f64,
}

impl Default for FindOrbitParams {
    fn default() -> Self {
        FindOrbitParams { domain: None, p: 1, q: 2, seed: 0.0 }
    }
}

fn find_orbit(p: FindOrbitParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, RadiusProfile::circle)?;
    let o = find_birkhoff_orbit(&d, p.p, p.q, p.seed)?;
    let len = o.total_length(&d)?;
    Ok(StepOutcome {
        checks: vec![ctx.at_most("orbit_residual", o.residual, 1e-10, "periodicity of the refined orbit")],
        values: json!({"orbit": o.record(), "length": len, "lambda": o.lambda()}),
        artifacts: vec![],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct JetParams {
    domain: Option<DomainSpec>,
    s: f64,
    phi: f64,
    order: usize,
    steps: usize,
}

impl Default for JetParams {
    fn default() -> Self {
        JetParams { domain: None, s: 0.0, phi: PI / 2.0, order: 2, steps: 1 }
    }
}

fn orbit_jet(p: JetParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, RadiusProfile::circle)?;
    let jet = map_jet_iter(&d, PhasePoint::new(p.s, p.phi), p.order, p.steps)?;
    let mut coeffs = vec![];
    for deg in 0..=p.order {
        for b in 0..=deg {
            coeffs.push(json!({"a": deg - b, "b": b, "ds": jet.ds(deg - b, b), "dphi": jet.dphi(deg - b, b)}));
        }
    }
    let det = jet.block1().determinant();
    let end = step_n(&d, PhasePoint::new(p.s, p.phi), p.steps)?;
    Ok(StepOutcome {
        checks: vec![ctx.at_most("area_form", (det - p.phi.sin() / end.phi.sin()).abs(), 1e-11, "det df = sin phi0 / sin phiN")],
        values: json!({"order": p.order, "steps": p.steps, "coefficients": coeffs}),
        artifacts: vec![],
    })
}

fn step_n(d: &RadiusProfile, x: PhasePoint, n: usize) -> bjl_core::Result<PhasePoint> {
    let mut x = x;
    for _ in 0..n {
        let st = step(d, x.s, x.phi)?;
        x = PhasePoint::new(st.s1, st.phi1);
    }
    Ok(x)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PredictParams {
    orbit: OrbitSpec,
    index: usize,
    eps: f64,
}

impl Default for PredictParams {
    fn default() -> Self {
        PredictParams { orbit: OrbitSpec { domain: None, p: 1, q: 3, seed: 0.0, k: 0 }, index: 1, eps: 1e-4 }
    }
}

fn perturb_predict(p: PredictParams, ctx: &Context) -> OpResult {
    let (d, o) = p.orbit.resolve(ctx, wobbly)?;
    let seg = Segment::from_orbit(&d, &o, p.orbit.k, o.q)?;
    let delta = predict_delta_differential(&seg, p.index, p.eps)?;
    Ok(StepOutcome {
        checks: vec![],
        values: json!({"base": to_array(&seg.total()), "predicted_change": to_array(&delta), "eps": p.eps, "index": p.index}),
        artifacts: vec![],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolveParams {
    domain: Option<DomainSpec>,
    s: f64,
    phi: f64,
    n: usize,
    target: Vec<f64>,
    half_width: Option<f64>,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams { domain: None, s: 0.05, phi: 1.1, n: 1, target: vec![1e-4, 0.0, 0.0], half_width: None }
    }
}

fn perturb_solve(p: SolveParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, wobbly)?;
    let x0 = PhasePoint::new(p.s, p.phi);
    let seg = Segment::from_point(&d, x0, p.n + 3)?;
    let plan = plan_for_target(&d, &seg, p.n, &p.target, p.half_width)?;
    let coefs = free_coefficients(p.n);
    let before = measure_coefficients(&d, x0, p.n + 3, &coefs)?;
    let patched = apply_plan(&d, &plan)?;
    let after = measure_coefficients(&patched, x0, p.n + 3, &coefs)?;
    let scale = max_abs(p.target.iter().copied()).max(f64::MIN_POSITIVE);
    let miss = max_abs(after.iter().zip(&before).zip(&p.target).map(|((a, b), t)| a - b - t)) / scale;
    let mut out = StepOutcome {
        checks: vec![ctx.at_most("target_miss", miss, 0.1, "achieved change of the free coefficients")],
        values: json!({"plan": plan, "achieved": after.iter().zip(&before).map(|(a, b)| a - b).collect::<Vec<_>>()}),
        artifacts: vec![],
    };
    ctx.text(&mut out, "domain.json", &patched.to_json())?;
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GrowParams {
    orbit: OrbitSpec,
    stable: bool,
    positive: bool,
    levels: usize,
    max_length: f64,
    chord_tol: f64,
    max_points: usize,
}

impl Default for GrowParams {
    fn default() -> Self {
        GrowParams {
            orbit: OrbitSpec { domain: None, p: 1, q: 2, seed: 0.25, k: 0 },
            stable: false,
            positive: true,
            levels: 6,
            max_length: 1.2,
            chord_tol: 1e-8,
            max_points: 200_000,
        }
    }
}

fn manifold_grow(p: GrowParams, ctx: &Context) -> OpResult {
    let (d, o) = p.orbit.resolve(ctx, || RadiusProfile::ellipse_like(0.2))?;
    let map = BilliardReturn::new(&d, &o, p.orbit.k);
    let side = if p.stable { Side::Stable } else { Side::Unstable };
    let local = local_manifold(&map, Branch::new(side, p.positive), SeedOptions::default())?;
    let opts = GlobalizeOptions { levels: p.levels, max_length: p.max_length, chord_tol: p.chord_tol, max_points: p.max_points, ..Default::default() };
    let arc = globalize(&map, &local, opts)?;
    let defect = invariance_defect(&map, &arc)?;
    let mut out = StepOutcome {
        checks: vec![
            ctx.at_most("seed_defect", arc.seed.defect, 1e-10, "local parametrization conjugacy"),
            ctx.at_most("invariance", defect, 1e-7, "f^q(arc) on arc"),
        ],
        values: json!({
            "points": arc.samples.len(),
            "levels": arc.levels,
            "seed_radius": arc.seed.radius,
            "eigenvalue": arc.seed.eigenvalue,
            "chord_error": arc.chord_error,
            "invariance_defect": defect,
        }),
        artifacts: vec![],
    };
    ctx.text(&mut out, "arc.csv", &arc.to_csv())?;
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScanParams {
    domain: Option<DomainSpec>,
    window: (f64, f64),
    samples: usize,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams { domain: None, window: (6.0, 20.0), samples: 128 }
    }
}

fn tangency_scan(p: ScanParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, || RadiusProfile::ellipse_like(0.2))?;
    let cfg = HomoclinicConfig { window: p.window, samples: p.samples, ..Default::default() };
    let phi = Homoclinic::new(&d, &cfg)?.splitting(p.window, p.samples)?;
    let scan = detect_tangency(&phi, TangencyOptions::default())?;
    let mut out = StepOutcome { checks: vec![], values: json!({"scan": scan}), artifacts: vec![] };
    ctx.plot(&mut out, "phi", &phi.pairs())?;
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InjectivityParams {
    domain: Option<DomainSpec>,
    delta: f64,
    window: (f64, f64),
    samples: usize,
    steps: usize,
}

impl Default for InjectivityParams {
    fn default() -> Self {
        InjectivityParams { domain: None, delta: 1e-3, window: (6.0, 20.0), samples: 128, steps: 6 }
    }
}

fn injectivity(p: InjectivityParams, ctx: &Context) -> OpResult {
    let d = ctx.domain_or(&p.domain, || RadiusProfile::ellipse_like(0.2))?;
    let cfg = HomoclinicConfig { window: p.window, samples: p.samples, ..Default::default() };
    let h = Homoclinic::new(&d, &cfg)?;
    let scan = detect_tangency(&h.splitting(p.window, p.samples)?, TangencyOptions::default())?;
    let periodic: Vec<f64> = h.orbit.points.iter().map(|x| x.s).collect();
    let mut orbits = vec![periodic];
    let mut times = vec![];
    for c in &scan.crossings {
        orbits.push(homoclinic_orbit_s(&h, c.t, p.steps)?);
        times.push(c.t);
    }
    for t in scan.tangencies.iter().map(|t| t.t) {
        orbits.push(homoclinic_orbit_s(&h, t, p.steps)?);
        times.push(t);
    }
    let r = injectivity_check(&orbits, p.delta, Some(d.length()));
    Ok(StepOutcome { checks: vec![], values: json!({"homoclinic_parameters": times, "report": r}), artifacts: vec![] })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NormalFormParams {
    orbit: OrbitSpec,
    k_max: usize,
}

impl Default for NormalFormParams {
    fn default() -> Self {
        NormalFormParams { orbit: OrbitSpec { domain: None, p: 1, q: 2, seed: 0.25, k: 0 }, k_max: 3 }
    }
}

fn normal_form(p: NormalFormParams, ctx: &Context) -> OpResult {
    let (d, o) = p.orbit.resolve(ctx, || RadiusProfile::ellipse_like(0.2))?;
    if o.eigen.classification != Classification::Hyperbolic {
        return Err(OpError::Numeric(bjl_core::Error::NotHyperbolic { trace: o.eigen.trace }));
    }
    let jet = map_jet_iter(&d, o.point(p.orbit.k), 2 * p.k_max + 1, o.q)?;
    let nf = birkhoff_normal_form(&canonical_jet(&jet), p.k_max)?;
    Ok(StepOutcome {
        checks: vec![ctx.at_most("normal_form_residual", nf.residual, 1e-8, "conjugated jet equals the normal form")],
        values: serde_json::to_value(&nf).unwrap(),
        artifacts: vec![],
    })
}
