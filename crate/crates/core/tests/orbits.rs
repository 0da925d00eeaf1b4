use bjl_core::billiard::{iterate, map_jet_iter_with_lengths, step, JetMap2, PhasePoint};
use bjl_core::orbit::*;
use bjl_core::tps::Tps;
use bjl_core::{Error, RadiusProfile};
use proptest::prelude::*;
use std::f64::consts::PI;

fn wobbly() -> RadiusProfile {
    RadiusProfile::from_relative_harmonics(&[(2, 0.12, 0.03), (3, 0.04, -0.02)])
}

fn chord(d: &RadiusProfile, s0: f64, s1: f64) -> f64 {
    let a = d.position(d.theta_of_s(s0));
    let b = d.position(d.theta_of_s(s1));
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[test]
fn circle_diameter() {
    let c = RadiusProfile::circle();
    let o = find_birkhoff_orbit(&c, 1, 2, 0.1).unwrap();
    assert!((o.lifted_s[1] - o.lifted_s[0] - 0.5).abs() < 1e-12);
    for p in &o.points {
        assert!((p.phi - PI / 2.0).abs() < 1e-12);
    }
    let m = o.monodromy.block1();
    assert!((m - nalgebra::Matrix2::new(1.0, 2.0 / PI, 0.0, 1.0)).abs().max() < 1e-10);
    assert_eq!(o.eigen.classification, Classification::Parabolic);
}

#[test]
fn circle_square_monodromy() {
    let c = RadiusProfile::circle();
    let o = find_birkhoff_orbit(&c, 1, 4, 0.3).unwrap();
    let m = monodromy(&c, &o, 1).unwrap().block1();
    assert!((m - nalgebra::Matrix2::new(1.0, 4.0 / PI, 0.0, 1.0)).abs().max() < 1e-10);
    assert!((o.total_length(&c).unwrap() - 4.0 * 2f64.sqrt() / (2.0 * PI)).abs() < 1e-12);
}

#[test]
fn ellipse_axis_orbits_from_distinct_seeds() {
    let d = RadiusProfile::ellipse_like(0.2);
    let a = find_birkhoff_orbit(&d, 1, 2, 0.0).unwrap();
    let b = find_birkhoff_orbit(&d, 1, 2, 0.25).unwrap();
    let la = a.total_length(&d).unwrap();
    let lb = b.total_length(&d).unwrap();
    assert!((la - lb).abs() > 1e-3);
    let (long, short) = if la > lb { (&a, &b) } else { (&b, &a) };
    // brute-force maximization of the two-point length
    let n = 400;
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s0 = i as f64 / n as f64;
            let s1 = s0 + 0.3 + 0.4 * j as f64 / n as f64;
            best = best.max(2.0 * chord(&d, s0, s1));
        }
    }
    let lmax = long.total_length(&d).unwrap();
    assert!(lmax >= best - 1e-12 && lmax - best < 1e-4, "{lmax} vs grid {best}");
    assert_eq!(long.eigen.classification, Classification::Hyperbolic);
    assert!(long.eigen.eigenvalues.0 > 1.0);
    assert_eq!(short.eigen.classification, Classification::Elliptic);
}

#[test]
fn refine_leaves_exact_orbit_unchanged() {
    let c = RadiusProfile::circle();
    let o = find_birkhoff_orbit(&c, 1, 2, 0.0).unwrap();
    let (r, rep) = refine_newton(&c, &o, RefineOptions::default()).unwrap();
    assert_eq!(rep.iterations, 0);
    assert_eq!(r.lifted_s, o.lifted_s);
}

#[test]
fn refine_on_circle_family() {
    let c = RadiusProfile::circle();
    let o = find_birkhoff_orbit(&c, 1, 2, 0.0).unwrap();
    let mut s = o.lifted_s.clone();
    s[1] += 1e-3;
    let bad = orbit_from_lifted(&c, s, 1).unwrap();
    match refine_newton(&c, &bad, RefineOptions::default()) {
        Err(Error::Singular { .. }) => {}
        other => panic!("expected singular Jacobian, got {other:?}"),
    }
    let (r, rep) = refine_newton(&c, &bad, RefineOptions { pin_first: true, ..Default::default() }).unwrap();
    assert!(rep.iterations <= 5, "{rep:?}");
    assert!(r.residual < 1e-12);
    assert!((r.lifted_s[1] - r.lifted_s[0] - 0.5).abs() < 1e-12);
}

#[test]
fn refine_converges_quadratically() {
    let d = RadiusProfile::ellipse_like(0.2);
    let o = find_birkhoff_orbit(&d, 1, 3, 0.05).unwrap();
    let mut s = o.lifted_s.clone();
    s[0] += 2e-3;
    s[2] -= 1e-3;
    let bad = orbit_from_lifted(&d, s, 1).unwrap();
    let (r, rep) = refine_newton(&d, &bad, RefineOptions::default()).unwrap();
    assert!(r.residual < 1e-12);
    let res = &rep.residuals;
    assert!(rep.iterations <= 6, "{res:?}");
    // estimated convergence order from consecutive residual ratios
    let best = res
        .windows(3)
        .map(|w| (w[2] / w[1]).ln() / (w[1] / w[0]).ln())
        .fold(0.0f64, f64::max);
    assert!(best >= 1.8, "{res:?}");
    for (a, b) in r.lifted_s.iter().zip(&o.lifted_s) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn circle_periodicity_order_and_length_identity() {
    let c = RadiusProfile::circle();
    let o = find_birkhoff_orbit(&c, 1, 2, 0.0).unwrap();
    let r = check_absolute_periodicity_order(&c, &o, 3).unwrap();
    assert_eq!(r.order, -1);
    assert!(r.dl_dphi0.abs() < 1e-12);
    assert!(r.identity_residual < 1e-12);
}

#[test]
fn synthetic_identity_jet_order() {
    let p = PhasePoint::new(0.2, 1.0);
    let mut j = JetMap2::identity(p, 4, 1.0);
    j.phi.set_coeff(2, 1, 0.3);
    let len = Tps::zero(4);
    let r = periodicity_from_jet(&j, &len, p, 4).unwrap();
    assert_eq!(r.order, 2);
    let r = periodicity_from_jet(&JetMap2::identity(p, 4, 1.0), &len, p, 4).unwrap();
    assert_eq!(r.order, 4);
    assert!(matches!(periodicity_from_jet(&j, &len, p, 6), Err(Error::OrderTooLarge { .. })));
}

fn total_length_from(d: &RadiusProfile, s: f64, phi: f64, q: usize) -> f64 {
    let mut t = 0.0;
    let (mut s, mut phi) = (s, phi);
    for _ in 0..q {
        let st = step(d, s, phi).unwrap();
        t += st.l;
        s = st.s1;
        phi = st.phi1;
    }
    t
}

#[test]
fn length_partials_match_finite_differences() {
    let d = wobbly();
    let o = find_birkhoff_orbit(&d, 1, 3, 0.1).unwrap();
    let r = check_absolute_periodicity_order(&d, &o, 2).unwrap();
    let x = o.points[0];
    let h = 1e-6;
    let fs = (total_length_from(&d, x.s + h, x.phi, 3) - total_length_from(&d, x.s - h, x.phi, 3)) / (2.0 * h);
    let fp = (total_length_from(&d, x.s, x.phi + h, 3) - total_length_from(&d, x.s, x.phi - h, 3)) / (2.0 * h);
    assert!((fs - r.dl_ds0).abs() < 1e-8, "{fs} {}", r.dl_ds0);
    assert!((fp - r.dl_dphi0).abs() < 1e-8);
    assert!(r.identity_residual < 1e-9);
}

#[test]
fn rotation_two_fifths() {
    let d = wobbly();
    let o = find_birkhoff_orbit(&d, 2, 5, 0.0).unwrap();
    let len = d.length();
    // wrapped increments between consecutive impacts, from the phase points alone
    let total: f64 = (0..5)
        .map(|i| {
            let ds = o.point(i + 1).s - o.point(i).s;
            ds - len * (ds / len).floor()
        })
        .sum();
    assert!((total / len - 2.0).abs() < 1e-12);
    assert!(o.residual < 1e-11);
    assert!(matches!(find_birkhoff_orbit(&d, 2, 4, 0.0), Err(Error::InvalidInput(_))));
}

#[test]
fn near_boundary_q_sweep() {
    let d = RadiusProfile::from_relative_harmonics(&[(2, 0.01, 0.0), (3, 0.005, 0.002)]);
    for q in [8, 16, 32, 64] {
        let o = find_birkhoff_orbit(&d, 1, q, 0.0).unwrap();
        assert!(o.residual < 1e-11);
        let max_phi = o.points.iter().fold(0.0f64, |m, p| m.max(p.phi));
        assert!(max_phi < 1.5 * PI / q as f64, "q={q} phi={max_phi}");
        assert!((o.eigen.determinant - 1.0).abs() < 1e-9);
    }
}

fn check_invariants(d: &RadiusProfile, o: &PeriodicOrbit) -> Result<(), TestCaseError> {
    let imgs = iterate(d, o.points[0], o.q).unwrap();
    let len = d.length();
    for i in 1..=o.q {
        let a = imgs[i];
        let b = o.point(i);
        let ds = (a.s - b.s) - len * ((a.s - b.s) / len).round();
        prop_assert!(ds.abs() < 1e-10 && (a.phi - b.phi).abs() < 1e-10);
    }
    prop_assert!((o.eigen.determinant - 1.0).abs() < 1e-9);
    if o.eigen.classification == Classification::Hyperbolic {
        let (l1, l2) = o.eigen.eigenvalues;
        prop_assert!((l1 * l2 - 1.0).abs() < 1e-10);
    }
    for w in o.lifted_s.windows(2) {
        prop_assert!(w[1] > w[0]);
    }
    let (jet, total) = map_jet_iter_with_lengths(d, o.points[0], 1, o.q).unwrap();
    let tel = jet.phi.value().cos() * jet.ds(1, 0) - o.points[0].phi.cos();
    prop_assert!((total.partial(1, 0) - tel).abs() < 1e-9);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn orbit_invariants(a in -0.15f64..0.15, b in -0.05f64..0.05, seed in 0.0f64..1.0, q in 2usize..7) {
        let d = RadiusProfile::from_relative_harmonics(&[(2, a, 0.0), (3, b, 0.02)]);
        let o = find_birkhoff_orbit(&d, 1, q, seed).unwrap();
        check_invariants(&d, &o)?;
    }

    #[test]
    fn classification_matches_trace(tr in -5.0f64..5.0) {
        let e = classify_trace(tr);
        let expect = if tr.abs() > 2.0 + PARABOLIC_BAND {
            Classification::Hyperbolic
        } else if tr.abs() < 2.0 - PARABOLIC_BAND {
            Classification::Elliptic
        } else {
            Classification::Parabolic
        };
        prop_assert_eq!(e.classification, expect);
        if expect == Classification::Hyperbolic {
            let (l1, l2) = e.eigenvalues;
            prop_assert!((l1 + l2 - tr).abs() < 1e-12 * tr.abs() && (l1 * l2 - 1.0).abs() < 1e-12);
        }
    }
}
