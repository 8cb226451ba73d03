use num_complex::Complex64 as C64;
use proptest::prelude::*;
use weier_core::lattice::*;
use weier_core::weierstrass::EllipticEvaluator;

/// 140·Σ w⁻⁶ over the box max(|l|,|m|) ≤ 400 of [1, e^{2πi/3}], summed in numpy.
/// The closed form Γ(1/3)¹⁸/(2π)⁶ = 820.8244370795578 agrees to 5e-10.
const G3_TRI_BOX400: f64 = 820.8244370800402;

fn tri() -> Lattice {
    Lattice { lambda1: C64::new(1.0, 0.0), lambda2: rho() }
}

#[test]
fn triangular_invariants() {
    let inv = invariants(&tri(), 200).unwrap();
    assert!(inv.g2.norm() <= inv.tail_bound, "{inv:?}");
    let box_tail = 1e-9;
    assert!((inv.g3 - G3_TRI_BOX400).norm() <= inv.tail_bound_g3 + box_tail, "{}", inv.g3);
    assert!((g3_unit() - G3_TRI_BOX400).abs() < 1e-9 * G3_TRI_BOX400);
}

#[test]
fn square_lattice_g3_vanishes() {
    let sq = Lattice { lambda1: C64::new(1.0, 0.0), lambda2: C64::new(0.0, 1.0) };
    let inv = invariants(&sq, 100).unwrap();
    assert!(inv.g3.norm() <= inv.tail_bound_g3);
}

#[test]
fn tail_bound_decreases_with_radius() {
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for n in [10, 20, 40, 80, 160] {
        let inv = invariants(&tri(), n).unwrap();
        assert!(inv.tail_bound < prev.0 && inv.tail_bound_g3 < prev.1);
        prev = (inv.tail_bound, inv.tail_bound_g3);
    }
    assert!(invariants(&tri(), 9).is_err());
}

#[test]
fn equianharmonic_targets() {
    let omega = equianharmonic_lattice(4.0).unwrap();
    let ev = EllipticEvaluator::new(omega).unwrap();
    assert!(ev.invariants.g2.norm() < 1e-8 * 4.0);
    assert!((ev.invariants.g3 - 4.0).norm() < 1e-8 * 4.0);
    let unit = equianharmonic_lattice(g3_unit()).unwrap();
    assert_eq!(unit.lambda1, C64::new(1.0, 0.0));
    assert_eq!(unit.lambda2, rho());
    let half = equianharmonic_lattice(4.0 * 64.0).unwrap();
    assert!((half.lambda1 - omega.lambda1 * 0.5).norm() < 1e-15);
    assert!(equianharmonic_lattice(0.0).is_err());
}

#[test]
fn pole_critical_lattices() {
    for m in [-1i64, -3, -5, -7] {
        let g = make_pole_critical_lattice(m).unwrap();
        assert!(g.is_triangular(1e-9));
        let ev = EllipticEvaluator::new(g).unwrap();
        let v = ev.wp(g.lambda1 * 0.5).unwrap();
        assert!((v - g.lambda1 * m as f64).norm() < 1e-8 * g.lambda1.norm(), "m={m}");
        let a = g.lambda1.arg();
        assert!(a > -std::f64::consts::FRAC_PI_3 && a <= std::f64::consts::FRAC_PI_3);
    }
    for bad in [0, 1, -2, 3] {
        assert!(make_pole_critical_lattice(bad).is_err());
    }
}

#[test]
fn half_annulus_counts_scale_quadratically() {
    let g = make_pole_critical_lattice(-1).unwrap();
    let l1 = g.lambda1.norm();
    for r in [50.0 * l1, 120.0 * l1] {
        let a = poles_in_half_annulus(&g, r, 0.3, 0.0625).unwrap().len() as f64;
        let b = poles_in_half_annulus(&g, 2.0 * r, 0.3, 0.0625).unwrap().len() as f64;
        assert!((3.2..=4.8).contains(&(b / a)), "{}", b / a);
    }
    assert!(poles_in_half_annulus(&g, 0.4 * l1, 0.0, 0.0625).unwrap().is_empty());
}

#[test]
fn half_annulus_containment_and_order() {
    let g = make_pole_critical_lattice(-1).unwrap();
    let (r, eps) = (30.0, 0.0625);
    let v = poles_in_half_annulus(&g, r, -1.0, eps).unwrap();
    assert!(!v.is_empty());
    for b in &v {
        assert!(b.z.norm() >= r + eps && b.z.norm() <= 2.0 * r - eps);
        assert!((g.point(b.l, b.m) - b.z).norm() < 1e-9);
    }
    for w in v.windows(2) {
        let (a, b) = (w[0].z, w[1].z);
        assert!(a.norm() < b.norm() || (a.norm() == b.norm() && a.arg() <= b.arg()));
    }
    let mut shuffled = v.clone();
    shuffled.reverse();
    sort_poles(&mut shuffled);
    assert_eq!(shuffled, v);
}

#[test]
fn triangular_point_set_rotation_invariant() {
    let g = make_pole_critical_lattice(-3).unwrap();
    let l1 = g.lambda1.norm();
    for b in points_in_disk(&g, 20.0 * l1) {
        let w = b * rho();
        assert!((w - g.nearest_point(w).z).norm() < 1e-9 * l1);
    }
}

#[test]
fn scaling_law_of_invariants() {
    let base = invariants(&tri(), 80).unwrap();
    for alpha in [C64::new(2.0, 0.0), C64::new(1.0, 1.0), C64::new(0.5, 0.0)] {
        let s = invariants(&tri().scaled(alpha), 80).unwrap();
        let a4 = alpha.powi(-4);
        let a6 = alpha.powi(-6);
        assert!((s.g2 - base.g2 * a4).norm() <= s.tail_bound + a4.norm() * base.tail_bound + 1e-13);
        let tol = s.tail_bound_g3 + a6.norm() * base.tail_bound_g3 + 1e-12 * s.g3.norm();
        assert!((s.g3 - base.g3 * a6).norm() <= tol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn reduction_round_trips(x in -1e4f64..1e4, y in -1e4f64..1e4, m in prop::sample::select(vec![-1i64, -3, -5])) {
        let g = make_pole_critical_lattice(m).unwrap();
        let z = C64::new(x, y);
        let (zr, l, k) = g.reduce_to_fundamental(z);
        prop_assert!((z - (zr + g.point(l, k))).norm() < 1e-12 * z.norm().max(1.0));
        let (t1, t2) = g.coords(zr);
        prop_assert!((-1e-9..1.0 + 1e-9).contains(&t1) && (-1e-9..1.0 + 1e-9).contains(&t2));
    }

    #[test]
    fn nearest_point_is_nearest(x in -50f64..50.0, y in -50f64..50.0) {
        let g = tri();
        let z = C64::new(x, y);
        let p = g.nearest_point(z);
        let d = (z - p.z).norm();
        for (dl, dm) in [(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1), (-1, -1), (1, -1), (-1, 1)] {
            prop_assert!(d <= (z - g.point(p.l + dl, p.m + dm)).norm() + 1e-12);
        }
    }
}
