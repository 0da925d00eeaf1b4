use bjl_core::billiard::map_jet_iter;
use bjl_core::manifold::*;
use bjl_core::normal_form::*;
use bjl_core::orbit::{find_birkhoff_orbit, PeriodicOrbit};
use bjl_core::tps::Tps;
use bjl_core::{Error, RadiusProfile};
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::sync::OnceLock;

fn hyperbolic_pair() -> (RadiusProfile, PeriodicOrbit) {
    let d = RadiusProfile::ellipse_like(0.2);
    let o = find_birkhoff_orbit(&d, 1, 2, 0.25).unwrap();
    (d, o)
}

fn ellipse_homoclinic() -> &'static Homoclinic {
    static H: OnceLock<Homoclinic> = OnceLock::new();
    H.get_or_init(|| Homoclinic::new(&RadiusProfile::ellipse_like(0.2), &HomoclinicConfig::default()).unwrap())
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn linear_saddle_manifolds_are_the_axes() {
    let m = LinearSaddle { lambda: 2.0 };
    for (side, axis) in [(Side::Unstable, 0), (Side::Stable, 1)] {
        for positive in [true, false] {
            let arc = local_manifold(&m, Branch::new(side, positive), SeedOptions::default()).unwrap();
            for s in &arc.samples {
                assert!(s.point[1 - axis].abs() < 1e-15, "{side:?} {:?}", s.point);
            }
            let g = globalize(&m, &arc, GlobalizeOptions { levels: 5, ..Default::default() }).unwrap();
            for s in &g.samples {
                assert!(s.point[1 - axis].abs() < 1e-12);
            }
            let far = g.samples.last().unwrap().point[axis];
            assert!(far.abs() > 1.0 && (far > 0.0) == positive);
        }
    }
}

#[test]
fn billiard_seed_defect_at_order_three() {
    let (d, o) = hyperbolic_pair();
    let m = BilliardReturn::new(&d, &o, 0);
    for side in [Side::Unstable, Side::Stable] {
        let arc = local_manifold(&m, Branch::new(side, true), SeedOptions { order: 3, ..Default::default() }).unwrap();
        assert!(arc.seed.defect < 1e-10, "{}", arc.seed.defect);
        let v = arc.seed.tangent();
        let first = arc.samples[1].point;
        let r = [first[0] - o.points[0].s, first[1] - o.points[0].phi];
        let cross = (r[0] * v[1] - r[1] * v[0]).abs() / r[0].hypot(r[1]);
        assert!(cross < 1e-3);
        assert!(arc.samples.iter().all(|s| (s.point[0] - o.points[0].s).hypot(s.point[1] - o.points[0].phi) <= 1.01 * arc.seed.radius));
    }
}

#[test]
fn higher_seed_order_allows_larger_radius() {
    let (d, o) = hyperbolic_pair();
    let m = BilliardReturn::new(&d, &o, 0);
    let b = Branch::new(Side::Unstable, true);
    let r3 = local_manifold(&m, b, SeedOptions { order: 3, ..Default::default() }).unwrap().seed.radius;
    let r8 = local_manifold(&m, b, SeedOptions { order: 8, ..Default::default() }).unwrap().seed.radius;
    assert!(r8 > r3);
}

#[test]
fn vertical_unstable_eigenvector_is_rejected() {
    let x = Tps::var_u(0.0, 3).scale(0.5);
    let y = &Tps::var_v(0.0, 3).scale(2.0) + &(&Tps::var_u(0.0, 3) * &Tps::var_u(0.0, 3));
    let m = PolynomialMap::new(x, y).unwrap().transverse();
    let r = local_manifold(&m, Branch::new(Side::Unstable, true), SeedOptions::default());
    assert!(matches!(r, Err(Error::Condition(_))), "{r:?}");
}

#[test]
fn elliptic_fixed_point_is_rejected() {
    let x = &Tps::var_u(0.0, 3).scale(0.5) + &Tps::var_v(0.0, 3).scale(0.8);
    let y = &Tps::var_u(0.0, 3).scale(-0.9375) + &Tps::var_v(0.0, 3).scale(0.5);
    let m = PolynomialMap::new(x, y).unwrap();
    let r = local_manifold(&m, Branch::new(Side::Unstable, true), SeedOptions::default());
    assert!(matches!(r, Err(Error::NotHyperbolic { .. })), "{r:?}");
}

#[test]
fn polynomial_saddle_seed_solves_invariance() {
    let u = Tps::var_u(0.0, 6);
    let v = Tps::var_v(0.0, 6);
    let x = &u.scale(3.0) + &(&v * &v).scale(0.4);
    let y = &v.scale(1.0 / 3.0) + &(&u * &u).scale(-0.7);
    let m = PolynomialMap::new(x, y).unwrap();
    for side in [Side::Unstable, Side::Stable] {
        let arc = local_manifold(&m, Branch::new(side, false), SeedOptions { order: 6, max_radius: 0.05, defect_tol: 1e-13 }).unwrap();
        assert!(arc.seed.defect < 1e-13);
        let g = globalize(&m, &arc, GlobalizeOptions { levels: 3, chord_tol: 1e-9, max_length: 1.0, ..Default::default() }).unwrap();
        assert!(invariance_defect(&m, &g).unwrap() < 1e-8);
        let p = g.samples[g.samples.len() / 2].point;
        let back = m.backward(m.forward(p).unwrap()).unwrap();
        assert!((back[0] - p[0]).abs() < 1e-14 && (back[1] - p[1]).abs() < 1e-14);
    }
}

#[test]
fn ellipse_global_arc_invariance_over_six_iterations() {
    let (d, o) = hyperbolic_pair();
    let m = BilliardReturn::new(&d, &o, 0);
    let arc = local_manifold(&m, Branch::new(Side::Unstable, true), SeedOptions::default()).unwrap();
    let g = globalize(&m, &arc, GlobalizeOptions { levels: 6, max_length: 1.2, chord_tol: 1e-8, max_points: 200_000, ..Default::default() }).unwrap();
    assert_eq!(g.levels, 6);
    let defect = invariance_defect(&m, &g).unwrap();
    assert!(defect < 1e-7, "{defect}");
    assert!(g.chord_error <= 1e-8);
    let t: Vec<f64> = g.samples.iter().map(|s| s.t).collect();
    assert!(t.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn polyline_images_stay_within_chord_error() {
    let (d, o) = hyperbolic_pair();
    let m = BilliardReturn::new(&d, &o, 0);
    let arc = local_manifold(&m, Branch::new(Side::Unstable, false), SeedOptions::default()).unwrap();
    let g = globalize(&m, &arc, GlobalizeOptions { levels: 3, max_length: 0.5, chord_tol: 1e-7, ..Default::default() }).unwrap();
    let lam = g.seed.eigenvalue;
    for s in g.samples.iter().step_by(7) {
        if s.sigma * lam > g.sigma_max() {
            continue;
        }
        let img = m.forward(s.point).unwrap();
        assert!(distance_to_arc(&g, img, s.sigma * lam) <= g.chord_error + 1e-10);
    }
}

#[test]
fn point_budget_is_enforced() {
    let (d, o) = hyperbolic_pair();
    let m = BilliardReturn::new(&d, &o, 0);
    let arc = local_manifold(&m, Branch::new(Side::Unstable, true), SeedOptions::default()).unwrap();
    let r = globalize(&m, &arc, GlobalizeOptions { levels: 3, max_points: 10, chord_tol: 1e-12, ..Default::default() });
    assert!(matches!(r, Err(Error::Budget(_))), "{r:?}");
}

#[test]
fn identical_arcs_split_by_zero() {
    let h = ellipse_homoclinic();
    let c = ManifoldCurve { map: &h.unstable_map, arc: &h.unstable };
    let phi = splitting_function(&c, &c, (0.5, 2.0), 64).unwrap();
    assert!(phi.phi.iter().all(|v| v.abs() < 1e-12), "{:?}", phi.phi);
}

#[test]
fn parabola_over_horizontal_line() {
    let wu = FnCurve { f: |t: f64| [t, t * t], lo: -1.0, hi: 1.0 };
    let ws = FnCurve { f: |t: f64| [t, 0.0], lo: -3.0, hi: 3.0 };
    let phi = splitting_function(&wu, &ws, (-1.0, 1.0), 101).unwrap();
    for (t, v) in phi.t.iter().zip(&phi.phi) {
        assert!((v - t * t).abs() < 1e-12, "{t} {v}");
    }
    assert!(phi.normals.iter().all(|n| n[0].abs() < 1e-9 && (n[1] - 1.0).abs() < 1e-9));
}

#[test]
fn splitting_preconditions() {
    let wu = FnCurve { f: |t: f64| [t, t * t], lo: -1.0, hi: 1.0 };
    let ws = FnCurve { f: |t: f64| [t, 0.0], lo: -0.5, hi: 0.5 };
    let r = splitting_function(&wu, &ws, (-1.0, 1.0), 64);
    assert!(matches!(r, Err(Error::InvalidInput(ref m)) if m.contains("overlap")), "{r:?}");
    let ws = FnCurve { f: |t: f64| [t, 0.0], lo: -3.0, hi: 3.0 };
    assert!(splitting_function(&wu, &ws, (-1.0, 1.0), 32).is_err());
    let fold = FnCurve { f: |t: f64| [(2.0 * t).sin(), 0.1 * t], lo: -1.0, hi: 1.0 };
    let r = splitting_function(&fold, &ws, (-1.0, 1.0), 64);
    assert!(matches!(r, Err(Error::Condition(_))), "{r:?}");
}

#[test]
fn ellipse_splitting_has_transverse_zero() {
    let h = ellipse_homoclinic();
    let phi = h.splitting((9.0, 30.0), 128).unwrap();
    let scan = detect_tangency(&phi, TangencyOptions::default()).unwrap();
    assert!(!scan.crossings.is_empty());
    assert!(scan.crossings.iter().all(|c| c.slope.abs() > 1e-5), "{:?}", scan.crossings);
    assert!(scan.tangencies.is_empty());
}

#[test]
fn model_tangency_orders() {
    let t = grid(-1.0, 1.0, 129);
    let a = 0.01;
    let scan = detect_tangency(&PhiSamples::from_fn(t.clone(), |x| x * x - a), TangencyOptions::default()).unwrap();
    assert_eq!(scan.crossings.len(), 2);
    assert!(scan.tangencies.is_empty());
    for c in &scan.crossings {
        assert!((c.t.abs() - a.sqrt()).abs() < 1e-6 && (c.slope.abs() - 2.0 * a.sqrt()).abs() < 1e-4);
    }
    let scan = detect_tangency(&PhiSamples::from_fn(t.clone(), |x| x * x), TangencyOptions::default()).unwrap();
    assert_eq!(scan.tangencies.len(), 1);
    assert_eq!(scan.tangencies[0].order_estimate, 1);
    assert!(scan.crossings.is_empty());
    let scan = detect_tangency(&PhiSamples::from_fn(t.clone(), |x| x * x * x), TangencyOptions::default()).unwrap();
    assert_eq!(scan.tangencies.len(), 1);
    assert_eq!(scan.tangencies[0].order_estimate, 2);
}

#[test]
fn detection_requires_dense_samples() {
    let r = detect_tangency(&PhiSamples::from_fn(grid(-1.0, 1.0, 40), |x| x * x), TangencyOptions::default());
    assert!(r.is_err());
}

#[test]
fn ill_conditioned_fit_is_reported() {
    let t = vec![0.0; 20];
    let phi = vec![1.0; 20];
    assert!(matches!(local_fit(&t, &phi, 0.0, 4), Err(Error::Singular { .. })));
}

#[test]
fn model_unfolding_jacobian_is_identity() {
    let t = grid(-1.0, 1.0, 129);
    let family = |e: &[f64]| Ok(PhiSamples::from_fn(t.clone(), |x| x * x + e[0] + e[1] * x));
    let base = detect_tangency(&family(&[0.0, 0.0]).unwrap(), TangencyOptions::default()).unwrap();
    let t0 = base.tangencies[0].t;
    assert!(base.tangencies[0].value.abs() < 1e-12);
    let j = unfolding_jacobian(&family, t0, 1, 2, 1e-3, TangencyOptions::default()).unwrap();
    let m = j.matrix();
    assert!((m - DMatrix::identity(2, 2)).amax() < 1e-9);
    assert!((j.genericity_det.unwrap() - 1.0).abs() < 1e-9);
    assert!(j.gamma[0][0].abs() < 1e-12);
}

#[test]
fn cascade_composition_diagonalizes_the_unfolding() {
    let t = grid(-1.0, 1.0, 129);
    let raw = move |e: &[f64]| -> Vec<f64> {
        t.iter()
            .map(|x| {
                x * x * (1.0 + 0.3 * e[2])
                    + e[0] * (1.0 + 0.6 * x + 0.4 * x * x)
                    + e[1] * (0.7 + x + 0.5 * x * x)
                    + e[2] * (0.9 - 0.8 * x)
            })
            .collect()
    };
    let tt = grid(-1.0, 1.0, 129);
    let fam = |e: &[f64]| Ok(PhiSamples { t: tt.clone(), phi: raw(e), ..Default::default() });
    let j = unfolding_jacobian(&fam, 0.0, 2, 3, 1e-3, TangencyOptions::default()).unwrap();
    assert!(off_diagonal_leakage(&j.matrix()) > 0.5);
    let c = cascade_combination(&j.matrix()).unwrap();
    let composed = |e: &[f64]| {
        let v = &c * nalgebra::DVector::from_column_slice(e);
        fam(v.as_slice())
    };
    let jc = unfolding_jacobian(&composed, 0.0, 2, 3, 1e-3, TangencyOptions::default()).unwrap();
    let leak = off_diagonal_leakage(&jc.matrix());
    assert!(leak < 0.1, "{leak}");
}

#[test]
fn unfolding_step_too_large_is_reported() {
    let t = grid(-1.0, 1.0, 129);
    let family = |e: &[f64]| Ok(PhiSamples::from_fn(t.clone(), |x| x * x + (50.0 * e[0]).sin() + e[1] * x));
    let r = unfolding_jacobian(&family, 0.0, 1, 2, 0.05, TangencyOptions::default());
    assert!(matches!(r, Err(Error::NoConvergence { .. })), "{r:?}");
}

#[test]
fn strip_shear_model_halves_per_step() {
    let base = StripShearSaddle { lambda: 2.0, eps: 0.0, sigma: 0.01 };
    let kicked = StripShearSaddle { lambda: 2.0, eps: 1e-3, sigma: 0.01 };
    let strip = Strip { center: 0.0, half_width: 0.01 };
    let r = lift_scaling(&base, &kicked, true, 0.02, 8, SeedOptions::default(), Some(strip)).unwrap();
    for ratio in &r.ratios {
        assert!((ratio - 0.5).abs() < 1e-8, "{ratio}");
    }
    for w in r.raw_displacement.windows(2) {
        assert!((w[1] / w[0] - 0.5).abs() < 1e-8);
    }
    assert!(r.passed && r.relative_error < 1e-8);
    let zero = lift_scaling(&base, &base, true, 0.02, 8, SeedOptions::default(), Some(strip)).unwrap();
    assert!(zero.displacement.iter().all(|d| *d == 0.0) && zero.passed);
    let inside = lift_scaling(&base, &kicked, true, 0.005, 3, SeedOptions::default(), Some(strip));
    assert!(inside.is_err());
}

#[test]
fn ellipse_lift_follows_inverse_eigenvalue() {
    let d = RadiusProfile::from_relative_harmonics(&[(2, 0.05, 0.0), (3, -0.0009, 0.0009)]);
    let o = find_birkhoff_orbit(&d, 1, 2, 0.25).unwrap();
    let eps = 1e-6;
    let lift = billiard_lift(&d, &o, 0, 0.005, eps, 4).unwrap();
    let r = &lift.report;
    assert_eq!(r.displacement.len(), 5);
    assert!(r.lambda > 2.0);
    assert!(r.relative_error < 0.1, "slope {} vs {}", r.slope, r.expected_slope);
    assert!((r.displacement[0] / eps - 1.0).abs() < 0.1);
    let inv = 1.0 / r.lambda;
    for ratio in &r.ratios {
        assert!(*ratio > inv * 0.9 && *ratio < inv * 1.1, "{ratio} vs {inv}");
    }
    let zero = billiard_lift(&d, &o, 0, 0.005, 0.0, 4).unwrap();
    assert!(zero.report.displacement.iter().all(|v| *v == 0.0));
}

#[test]
fn injectivity_examples() {
    let r = injectivity_check(&[vec![0.0, 0.5], vec![0.25, 0.75]], 0.1, Some(1.0));
    assert!(r.points.iter().all(|p| p.injective && (p.nearest - 0.25).abs() < 1e-15));
    let r = injectivity_check(&[vec![0.1, 0.4, 0.7], vec![0.1, 0.4, 0.7]], 0.05, Some(1.0));
    assert!(r.points.iter().all(|p| !p.injective && p.nearest == 0.0));
    assert_eq!(r.orbit_verdicts, vec![false, false]);
    let r = injectivity_check(&[vec![0.02, 0.98, 0.5]], 0.05, Some(1.0));
    assert!(!r.points[0].injective && (r.points[0].nearest - 0.04).abs() < 1e-12);
    let r = injectivity_check(&[vec![0.02, 0.98, 0.5]], 0.05, None);
    assert!(r.points[0].injective);
}

#[test]
fn ellipse_homoclinic_injectivity() {
    let h = ellipse_homoclinic();
    let phi = h.splitting((9.0, 30.0), 128).unwrap();
    let scan = detect_tangency(&phi, TangencyOptions::default()).unwrap();
    let hom = homoclinic_orbit_s(h, scan.crossings[0].t, 6).unwrap();
    let periodic: Vec<f64> = h.orbit.points.iter().map(|p| p.s).collect();
    let r = injectivity_check(&[periodic, hom.clone()], 1e-3, Some(1.0));
    assert_eq!(r.points.len(), 2 + hom.len());
    assert!(r.points.iter().all(|p| p.nearest.is_finite()));
    assert!(r.orbit_verdicts[1]);
    assert!(!r.note.is_empty());
}

#[test]
fn linear_saddle_normal_form() {
    let f = [Tps::var_u(0.0, 7).scale(3.0), Tps::var_v(0.0, 7).scale(1.0 / 3.0)];
    let nf = birkhoff_normal_form(&f, 3).unwrap();
    assert_eq!(nf.lambda, 3.0);
    assert!(nf.coeffs.iter().all(|a| *a == 0.0));
    assert!(nf.residual < 1e-15);
}

/// `Λ ∘ Φ_A ∘ Φ_B` with `Φ_A`, `Φ_B` the time-one flows of `A x²y` and
/// `B xy²`; by hand, `a_1 = −6λAB/(λ − 1)`.
fn hand_map(lambda: f64, a: f64, b: f64, order: usize) -> [Tps; 2] {
    let x = Tps::var_u(0.0, order);
    let y = Tps::var_v(0.0, order);
    let one = Tps::constant(1.0, order);
    let by = &one + &y.scale(b);
    let xb = &(&x * &by) * &by;
    let yb = &y * &by.recip();
    let ax = &one - &xb.scale(a);
    [(&xb * &ax.recip()).scale(lambda), (&(&yb * &ax) * &ax).scale(1.0 / lambda)]
}

#[test]
fn hand_computed_first_coefficient() {
    for (lambda, a, b) in [(2.5, 0.3, -0.7), (4.0, -1.1, 0.2), (-3.0, 0.5, 0.5)] {
        let nf = birkhoff_normal_form(&hand_map(lambda, a, b, 7), 3).unwrap();
        let expect = -6.0 * lambda * a * b / (lambda - 1.0);
        assert!((nf.coeffs[0] - expect).abs() < 1e-8, "{} vs {expect}", nf.coeffs[0]);
        assert!(nf.residual < 1e-10);
    }
}

#[test]
fn ellipse_normal_form_residual() {
    let (d, o) = hyperbolic_pair();
    for k in 1..=3 {
        let jet = map_jet_iter(&d, o.points[0], 2 * k + 1, 2).unwrap();
        let nf = birkhoff_normal_form(&canonical_jet(&jet), k).unwrap();
        assert!(nf.residual < 1e-8, "K = {k}: {}", nf.residual);
        assert!((nf.lambda - o.eigen.eigenvalues.0).abs() < 1e-9);
    }
}

#[test]
fn normal_form_preconditions() {
    let (d, o) = hyperbolic_pair();
    let jet = map_jet_iter(&d, o.points[0], 3, 2).unwrap();
    assert!(birkhoff_normal_form(&canonical_jet(&jet), 2).is_err());
    let e = find_birkhoff_orbit(&d, 1, 2, 0.0).unwrap();
    let jet = map_jet_iter(&d, e.points[0], 3, 2).unwrap();
    assert!(matches!(birkhoff_normal_form(&canonical_jet(&jet), 1), Err(Error::NotHyperbolic { .. })));
}

#[test]
fn circle_is_integrable_in_lazutkin_coordinates() {
    let r = lazutkin_check(&RadiusProfile::circle(), LazutkinOptions::default()).unwrap();
    assert!(r.integrable && r.max_residual < 1e-12, "{}", r.max_residual);
}

#[test]
fn perturbed_circle_lazutkin_exponents() {
    let d = RadiusProfile::from_relative_harmonics(&[(2, 0.05, 0.0), (3, 0.02, 0.01)]);
    let r = lazutkin_check(&d, LazutkinOptions::default()).unwrap();
    let (e1, e2) = (r.exponent1.unwrap(), r.exponent2.unwrap());
    assert!(((e2 - e1) - 1.0).abs() < 0.2, "{e1} {e2}");
    assert!(r.passed);
}

#[test]
fn lazutkin_residuals_vanish_in_the_circle_limit() {
    let opts = LazutkinOptions { y_min: 0.05, y_max: 0.1, y_points: 2, ..Default::default() };
    let mut last = f64::INFINITY;
    for e in [0.1, 0.01, 0.001] {
        let r = lazutkin_check(&RadiusProfile::from_relative_harmonics(&[(3, e, 0.0)]), opts).unwrap();
        assert!(r.max_residual < last);
        last = r.max_residual;
    }
    assert!(last < 1e-4);
}

#[test]
fn lazutkin_grazing_cutoff() {
    let opts = LazutkinOptions { y_min: 1e-9, ..Default::default() };
    let r = lazutkin_check(&RadiusProfile::ellipse_like(0.2), opts);
    assert!(matches!(r, Err(Error::Grazing { .. })), "{r:?}");
}

fn wavy(amp: f64, k: f64) -> impl Fn(f64) -> [f64; 2] {
    move |t| [t, amp * (k * t).sin()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn splitting_is_antisymmetric_under_swap(amp in 1e-5f64..1e-4, k in 0.5f64..3.0, off in -2e-5f64..2e-5) {
        let wu = FnCurve { f: move |t| { let p = wavy(amp, k)(t); [p[0], p[1] + off] }, lo: -2.0, hi: 2.0 };
        let ws = FnCurve { f: |t: f64| [t, 0.0], lo: -2.0, hi: 2.0 };
        let fwd = splitting_function(&wu, &ws, (-1.0, 1.0), 64).unwrap();
        for i in 0..fwd.t.len() {
            let back = locate(&wu, [fwd.feet[i], 0.0]).unwrap();
            prop_assert!((back.distance + fwd.phi[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn tangency_order_survives_reparameterization(c in -0.3f64..0.3, cubic in proptest::bool::ANY) {
        let t = grid(-1.0, 1.0, 129);
        let g = |x: f64| x + c * x * x / 2.0;
        let phi = PhiSamples::from_fn(t, |x| if cubic { g(x).powi(3) } else { g(x).powi(2) });
        let scan = detect_tangency(&phi, TangencyOptions::default()).unwrap();
        prop_assert_eq!(scan.tangencies.len(), 1);
        prop_assert_eq!(scan.tangencies[0].order_estimate, if cubic { 2 } else { 1 });
    }

    #[test]
    fn linear_model_lift_ratio(lambda in 1.5f64..6.0, eps in 1e-5f64..1e-3) {
        let base = StripShearSaddle { lambda, eps: 0.0, sigma: 0.01 };
        let kicked = StripShearSaddle { lambda, eps, sigma: 0.01 };
        let r = lift_scaling(&base, &kicked, true, 0.02, 5, SeedOptions::default(), None).unwrap();
        for ratio in &r.ratios {
            prop_assert!((ratio * lambda - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_map_first_coefficient(lambda in 1.5f64..6.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let nf = birkhoff_normal_form(&hand_map(lambda, a, b, 5), 2).unwrap();
        let expect = -6.0 * lambda * a * b / (lambda - 1.0);
        prop_assert!((nf.coeffs[0] - expect).abs() < 1e-8 * (1.0 + expect.abs()));
    }

    #[test]
    fn injectivity_is_symmetric(a in proptest::collection::vec(0.0f64..1.0, 1..6), b in proptest::collection::vec(0.0f64..1.0, 1..6), delta in 0.001f64..0.2) {
        let r = injectivity_check(&[a.clone(), b.clone()], delta, Some(1.0));
        for p in &r.points {
            prop_assert_eq!(p.injective, p.nearest > delta);
        }
        let swapped = injectivity_check(&[b, a], delta, Some(1.0));
        let n0 = r.points.iter().filter(|p| p.injective).count();
        let n1 = swapped.points.iter().filter(|p| p.injective).count();
        prop_assert_eq!(n0, n1);
    }
}
