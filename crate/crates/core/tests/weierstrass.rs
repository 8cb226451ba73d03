use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weier_core::lattice::*;
use weier_core::weierstrass::*;

fn omega_ev() -> EllipticEvaluator {
    EllipticEvaluator::new(equianharmonic_lattice(4.0).unwrap()).unwrap()
}

fn gamma_ev() -> EllipticEvaluator {
    EllipticEvaluator::new(make_pole_critical_lattice(-1).unwrap()).unwrap()
}

fn away_from_poles(lat: &Lattice, x: f64, y: f64) -> Option<C64> {
    let z = lat.lambda1 * x + lat.lambda2 * y;
    ((z - lat.nearest_point(z).z).norm() > 0.05 * lat.min_generator()).then_some(z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn even_odd_periodic(x in -4f64..4.0, y in -4f64..4.0) {
        let ev = omega_ev();
        let lat = ev.lattice;
        if let Some(z) = away_from_poles(&lat, x, y) {
            let (p, d) = ev.wp_pair(z).unwrap();
            let (pm, dm) = ev.wp_pair(-z).unwrap();
            let (pp, dp) = ev.wp_pair(z + lat.lambda1).unwrap();
            prop_assert!((pm - p).norm() < 1e-10 * p.norm());
            prop_assert!((dm + d).norm() < 1e-10 * d.norm());
            prop_assert!((pp - p).norm() < 1e-10 * p.norm());
            prop_assert!((dp - d).norm() < 1e-10 * d.norm());
        }
    }

    #[test]
    fn differential_equation(x in -4f64..4.0, y in -4f64..4.0) {
        let ev = omega_ev();
        if let Some(z) = away_from_poles(&ev.lattice, x, y) {
            let (p, d) = ev.wp_pair(z).unwrap();
            let (g2, g3) = (ev.invariants.g2, ev.invariants.g3);
            let r = (d * d - (4.0 * p * p * p - g2 * p - g3)).norm();
            prop_assert!(r < 1e-9 * (1.0 + p.norm().powi(3)), "{r}");
        }
    }

    #[test]
    fn homogeneity(x in -3f64..3.0, y in -3f64..3.0, which in 0usize..3) {
        let alpha = [C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(1.0, 1.0)][which];
        let ev = omega_ev();
        let scaled = EllipticEvaluator::new(ev.lattice.scaled(alpha)).unwrap();
        if let Some(z) = away_from_poles(&ev.lattice, x, y) {
            let p = ev.wp(z).unwrap();
            let q = scaled.wp(alpha * z).unwrap();
            prop_assert!((q - p / (alpha * alpha)).norm() < 1e-9 * q.norm());
        }
    }
}

#[test]
fn direct_sums_at_two_radii_agree() {
    let lat = make_pole_critical_lattice(-1).unwrap();
    let (a, b) = (DirectSum::new(&lat, 50), DirectSum::new(&lat, 100));
    let ev = gamma_ev();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let Some(z) = away_from_poles(&lat, rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)) else { continue };
        let (p1, d1, e1, f1) = a.eval(z);
        let (p2, d2, e2, f2) = b.eval(z);
        assert!((p1 - p2).norm() <= e1 + e2 + 1e-12 * p1.norm().max(1.0));
        assert!((d1 - d2).norm() <= f1 + f2 + 1e-12 * d1.norm().max(1.0));
        let (p, d) = ev.wp_pair(z).unwrap();
        assert!((p - p2).norm() <= e2 + 1e-11 * p.norm().max(1.0));
        assert!((d - d2).norm() <= f2 + 1e-11 * d.norm().max(1.0));
    }
}

#[test]
fn near_pole_error_names_the_pole() {
    let ev = gamma_ev();
    let b = ev.lattice.point(2, -1);
    match ev.wp(b + C64::new(1e-9, 0.0)) {
        Err(WpError::NearPole { pole, .. }) => assert_eq!((pole.l, pole.m), (2, -1)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn critical_points_and_values() {
    for ev in [omega_ev(), gamma_ev()] {
        let (c1, c2, c3) = ev.critical_points();
        assert!((c3 - c1 - c2).norm() <= 4.0 * f64::EPSILON * c3.norm());
        for c in [c1, c2, c3] {
            let d0 = ev.wp_prime(c).unwrap();
            let d1 = ev.wp_prime(c + ev.lattice.lambda1 * 0.1).unwrap();
            assert!(d0.norm() < 1e-8 * d1.norm());
        }
        let (e1, e2, e3) = ev.critical_values();
        let s = e1.norm().max(e2.norm()).max(e3.norm());
        let g3 = ev.invariants.g3;
        assert!((e1 + e2 + e3).norm() < 1e-8 * s);
        assert!((e1 * e2 * e3 - g3 / 4.0).norm() < 1e-8 * (g3 / 4.0).norm());
        // positively oriented triangular lattice: e2 = ρe1, e3 = ρ²e1
        assert!((e2 - rho() * e1).norm() < 1e-8 * s);
        assert!((e3 - rho() * rho() * e1).norm() < 1e-8 * s);
    }
    let (e1, e2, e3) = omega_ev().critical_values();
    for e in [e1, e2, e3] {
        assert!((e * e * e - 1.0).norm() < 1e-8);
    }
}

#[test]
fn laurent_factors_limit() {
    let ev = gamma_ev();
    let b = ev.lattice.point(1, 2);
    let l1 = ev.lattice.lambda1;
    // Richardson in t² from offsets t and t/2 (G − 1 = O(t⁴), so two steps)
    let g = |t: f64| ev.laurent_factors(b + l1 * t, 0.5).unwrap();
    let (ga, ha, _) = g(0.02);
    let (gb, hb, _) = g(0.01);
    let (gl, hl) = ((gb * 16.0 - ga) / 15.0, (hb * 16.0 - ha) / 15.0);
    assert!((gl - 1.0).norm() < 1e-6 && (hl + 2.0).norm() < 1e-5);
    let (gs, hs, pole) = g(1e-4);
    assert_eq!((pole.l, pole.m), (1, 2));
    assert!((gs - gl).norm() < 1e-6);
    assert!((hs - hl).norm() < 1e-5);
    let z = b + C64::new(0.013, -0.021);
    let (g1, h1, _) = ev.laurent_factors(z, 0.5).unwrap();
    let (g2, h2, _) = ev.laurent_factors(z + l1, 0.5).unwrap();
    assert!((g1 - g2).norm() < 1e-10 * g1.norm());
    assert!((h1 - h2).norm() < 1e-10 * h1.norm());
    assert!(matches!(ev.laurent_factors(b + l1 * 0.5, 0.1), Err(WpError::WrongRegime { .. })));
}

#[test]
fn pole_constants_tighten_as_eps0_shrinks() {
    let ev = gamma_ev();
    let mut prev: Option<PoleLocalData> = None;
    for k in 1..=6 {
        let pd = estimate_pole_constants(&ev, 0.5f64.powi(k), 0.04).unwrap();
        assert_eq!(pd.c1, 2.0 * pd.k1);
        assert_eq!(pd.c2, 2.0 * pd.k2);
        assert!(pd.m2 - pd.m1 > 0.0 && pd.m2 - pd.m1 < PI / 4.0);
        assert!(pd.k1 >= 1.0 && pd.k2 >= 2.0);
        if let Some(p) = prev {
            assert!(pd.k1 <= p.k1 * (1.0 + 1e-9) && pd.k2 <= p.k2 * (1.0 + 1e-9));
        }
        prev = Some(pd);
    }
    let p = prev.unwrap();
    assert!(p.k1 - 1.0 < 1e-3 && p.k2 / 2.0 - 1.0 < 1e-3);
    assert!(estimate_pole_constants(&ev, 0.0, 0.04).is_err());
    assert!(estimate_pole_constants(&ev, 0.2, 0.6).is_err());
}

#[test]
fn pole_sandwich_sampled() {
    let ev = gamma_ev();
    let pd = estimate_pole_constants(&ev, 0.5, 0.04).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = ev.lattice.point(-3, 5);
    for _ in 0..1000 {
        let beta = C64::new(1.0, 0.0) + C64::from_polar(pd.r * rng.gen::<f64>().sqrt(), 2.0 * PI * rng.gen::<f64>());
        let u = C64::from_polar(pd.eps0 * rng.gen_range(1e-3f64..1.0).sqrt(), 2.0 * PI * rng.gen::<f64>());
        let g = beta * ev.wp(b + u).unwrap();
        let u2 = u.norm_sqr();
        assert!(g.norm() >= 1.0 / (pd.c1 * u2) && g.norm() <= pd.c1 / u2);
        let h = beta * ev.wp_prime(b + u).unwrap();
        assert!(h.norm() >= 1.0 / (pd.c2 * u2 * u.norm()) && h.norm() <= pd.c2 / (u2 * u.norm()));
        let arg = (g * u * u).arg();
        assert!(arg >= pd.m1 && arg <= pd.m2);
    }
}
