use bjl_core::billiard::*;
use bjl_core::RadiusProfile;
use proptest::prelude::*;
use std::f64::consts::PI;

fn wobbly() -> RadiusProfile {
    RadiusProfile::from_relative_harmonics(&[(2, 0.25, 0.05), (3, 0.04, -0.03), (5, 0.01, 0.0)])
}

fn image(d: &RadiusProfile, p: PhasePoint, ds: f64, dphi: f64, steps: usize) -> (f64, f64) {
    let mut s = p.s + ds;
    let mut phi = p.phi + dphi;
    for _ in 0..steps {
        let st = step(d, s, phi).unwrap();
        s = st.s1;
        phi = st.phi1;
    }
    (s, phi)
}

/// Finite-difference partial of order (a, b) using a tensor central stencil.
fn fd_partial(d: &RadiusProfile, p: PhasePoint, a: usize, b: usize, h: f64, steps: usize, comp: usize) -> f64 {
    // central difference weights for derivative order k: sum_j (-1)^j C(k,j) f(x + (k/2 - j) h) / h^k
    let w = |k: usize| -> Vec<(f64, f64)> {
        (0..=k)
            .map(|j| {
                let c = bjl_core::series::binomial(k, j) * if j % 2 == 0 { 1.0 } else { -1.0 };
                (c, (k as f64 / 2.0 - j as f64) * h)
            })
            .collect()
    };
    let mut acc = 0.0;
    for (ca, oa) in w(a) {
        for (cb, ob) in w(b) {
            let r = image(d, p, oa, ob, steps);
            acc += ca * cb * if comp == 0 { r.0 } else { r.1 };
        }
    }
    acc / h.powi((a + b) as i32)
}

#[test]
fn jet_coefficients_match_finite_differences() {
    let d = wobbly();
    let p = PhasePoint::new(0.13, 1.05);
    let j = map_jet_iter(&d, p, 4, 2).unwrap();
    for deg in 1..=4 {
        let h = match deg {
            1 => 1e-5,
            2 => 1e-4,
            3 => 1e-3,
            _ => 4e-3,
        };
        for b in 0..=deg {
            let a = deg - b;
            for comp in 0..2 {
                // Richardson extrapolation removes the O(h^2) stencil error.
                let fd = (4.0 * fd_partial(&d, p, a, b, h / 2.0, 2, comp) - fd_partial(&d, p, a, b, h, 2, comp)) / 3.0;
                let jv = if comp == 0 { j.ds(a, b) } else { j.dphi(a, b) };
                let scale = jv.abs().max(1.0);
                assert!((fd - jv).abs() / scale < 1e-4, "deg {deg} ({a},{b}) comp {comp}: jet {jv} fd {fd}");
            }
        }
    }
}

#[test]
fn ellipse_second_order_coefficient() {
    let d = RadiusProfile::ellipse_like(0.3);
    let p = PhasePoint::new(0.1, 1.0);
    let j = map_jet(&d, p, 2).unwrap();
    let fd = fd_partial(&d, p, 2, 0, 1e-4, 1, 0);
    assert!((fd - j.ds(2, 0)).abs() / j.ds(2, 0).abs() < 1e-4);
}

#[test]
fn compose_with_inverse_is_identity() {
    let d = wobbly();
    let p = PhasePoint::new(0.4, 0.9);
    let f = map_jet(&d, p, 5).unwrap();
    let g = inverse_map_jet(&d, f.base_out, 5).unwrap();
    let id = compose_jets(&g, &f).unwrap();
    assert!((id.s.value() - p.s).abs() < 1e-12);
    for deg in 1..=5 {
        for b in 0..=deg {
            let a = deg - b;
            let es = if (a, b) == (1, 0) { 1.0 } else { 0.0 };
            let ep = if (a, b) == (0, 1) { 1.0 } else { 0.0 };
            let scale = 1.0f64.max(f.ds(a, b).abs()).max(f.dphi(a, b).abs());
            assert!((id.ds(a, b) - es).abs() < 1e-9 * scale, "({a},{b}) {}", id.ds(a, b));
            assert!((id.dphi(a, b) - ep).abs() < 1e-9 * scale);
        }
    }
}

#[test]
fn composition_matches_transport() {
    let d = wobbly();
    let p = PhasePoint::new(0.77, 1.9);
    let one = map_jet(&d, p, 4).unwrap();
    let two = map_jet(&d, one.base_out, 4).unwrap();
    let c = compose_jets(&two, &one).unwrap();
    let t = map_jet_iter(&d, p, 4, 2).unwrap();
    for k in 0..c.s.c.len() {
        assert!((c.s.c[k] - t.s.c[k]).abs() < 1e-10 * t.s.c[k].abs().max(1.0));
        assert!((c.phi.c[k] - t.phi.c[k]).abs() < 1e-10 * t.phi.c[k].abs().max(1.0));
    }
}

#[test]
fn circle_two_step_block() {
    let c = RadiusProfile::circle();
    let p = PhasePoint::new(0.0, 1.0);
    let one = map_jet(&c, p, 2).unwrap();
    let two = map_jet(&c, one.base_out, 2).unwrap();
    let m = compose_jets(&two, &one).unwrap().block1();
    assert!((m[(0, 1)] - 2.0 / PI).abs() < 1e-12);
    assert!((m[(0, 0)] - 1.0).abs() < 1e-12 && m[(1, 0)].abs() < 1e-12 && (m[(1, 1)] - 1.0).abs() < 1e-12);
}

#[test]
fn reversal_conjugates_to_inverse() {
    let d = wobbly();
    let p = PhasePoint::new(0.2, 0.6);
    let inv = inverse_map_jet(&d, p, 3).unwrap();
    let q = billiard_inverse(&d, p).unwrap();
    assert!((inv.base_out.s - q.s).abs() < 1e-12 && (inv.base_out.phi - q.phi).abs() < 1e-12);
    let f = map_jet(&d, q, 3).unwrap();
    let back = compose_jets(&f, &inv).unwrap();
    assert!((back.block1() - nalgebra::Matrix2::identity()).abs().max() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn twist_and_area(s in 0.0f64..1.0, phi in 0.05f64..3.09) {
        let d = wobbly();
        let p = PhasePoint::new(s, phi);
        let m = one_step_differential(&d, p).unwrap();
        let q = next_hit(&d, p).unwrap();
        prop_assert!(m[(0, 1)] > 0.0);
        prop_assert!((m.determinant() - phi.sin() / q.phi.sin()).abs() < 1e-11 * (1.0 + m.abs().max()));
    }

    #[test]
    fn inverse_identity(s in 0.0f64..1.0, phi in 0.01f64..3.13) {
        let d = wobbly();
        let p = PhasePoint::new(s, phi);
        let r = billiard_inverse(&d, next_hit(&d, p).unwrap()).unwrap();
        let ds = (r.s - p.s) - (r.s - p.s).round();
        prop_assert!(ds.abs() < 1e-10 && (r.phi - p.phi).abs() < 1e-10);
    }

    #[test]
    fn generating_length_partials(s0 in 0.0f64..1.0, gap in 0.05f64..0.95) {
        let d = wobbly();
        let s1 = s0 + gap;
        let (l, d0, d1) = generating_length(&d, s0, s1).unwrap();
        let h = 1e-6;
        let fd0 = (generating_length(&d, s0 + h, s1).unwrap().0 - generating_length(&d, s0 - h, s1).unwrap().0) / (2.0 * h);
        let fd1 = (generating_length(&d, s0, s1 + h).unwrap().0 - generating_length(&d, s0, s1 - h).unwrap().0) / (2.0 * h);
        prop_assert!(l > 0.0);
        prop_assert!((fd0 - d0).abs() < 1e-7 && (fd1 - d1).abs() < 1e-7);
    }

    #[test]
    fn q_fold_area_relation(s in 0.0f64..1.0, phi in 0.3f64..2.8) {
        let d = wobbly();
        let p = PhasePoint::new(s, phi);
        let j = map_jet_iter(&d, p, 1, 5).unwrap();
        prop_assert!((j.block1().determinant() - phi.sin() / j.base_out.phi.sin()).abs() < 1e-9 * j.block1().abs().max().max(1.0));
    }
}

