use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use weier_core::cantor::*;
use weier_core::dynamics::{mp_critical_point, orbit_with, param_map, OrbitStatus, Snap};
use weier_core::lattice::count_poles_in_half_annulus;
use weier_core::mp::{abs_f64, to_c64};
use weier_core::util::point_in_polygon;

fn construction() -> &'static Construction {
    static C: OnceLock<Construction> = OnceLock::new();
    C.get_or_init(|| Construction::new(&ConstructionParams::default()).unwrap())
}

fn tree() -> &'static CylinderTree {
    static T: OnceLock<CylinderTree> = OnceLock::new();
    T.get_or_init(|| construction().build_family(3, 2).unwrap())
}

#[test]
fn segment_geometry() {
    let s = Segment { apex: C64::new(2.0, -1.0), eps: 0.25 };
    assert!((s.area() - 3.0 * PI * 0.0625 / 8.0).abs() < 1e-15);
    assert!(s.contains(s.apex));
    assert!(!s.contains(s.apex - 0.01));
    assert!(!s.contains(s.apex + 0.2501));
    let offs = Segment::boundary_offsets(0.25, 64);
    assert_eq!(offs.len(), 64);
    assert_eq!(offs[0], C64::new(0.0, 0.0));
    for d in &offs {
        assert!(d.norm() <= 0.25 * (1.0 + 1e-12) && d.arg().abs() <= Segment::HALF_ANGLE + 1e-12);
    }
    let poly_area = weier_core::util::shoelace(&offs);
    assert!((poly_area - s.area()).abs() < 0.01 * s.area());
}

proptest! {
    #[test]
    fn segment_membership(r in 0.0f64..2.0, t in -PI..PI) {
        let s = Segment { apex: C64::new(0.0, 0.0), eps: 1.0 };
        let inside = r <= 1.0 && t.abs() <= 3.0 * PI / 8.0;
        prop_assume!((r - 1.0).abs() > 1e-9 && (t.abs() - 3.0 * PI / 8.0).abs() > 1e-9);
        prop_assert_eq!(s.contains(C64::from_polar(r, t)), inside);
    }
}

#[test]
fn constants_invariants() {
    let c = &construction().consts;
    let p1 = c.p1.norm();
    assert!(c.eps < c.eps0.min(p1 / 3.0));
    assert!(c.r > 0.0 && c.r < r_limit());
    assert!(c.r2 > c.c1 / ((1.0 - c.alpha) * c.eps * c.eps));
    assert!((c.r2 - c.a * c.r1).abs() < 1e-12 * c.r2);
    let max = c.a0_terms.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(c.a0, max);
    assert_eq!(c.a0_terms[0], 2.0);
    assert!(c.a > c.a0 && c.a == 2.0 * c.a0);
    for n in 2..6 {
        assert!((c.radius(n) - c.a.powi(n as i32 - 1) * c.r1).abs() < 1e-12 * c.radius(n));
    }
    assert!(c.containment_verified && c.one_to_one_checked);
    assert!((c.alpha - (PI / 8.0).sin()).abs() < 1e-16);
}

#[test]
fn constants_reject_bad_requests() {
    let a0 = construction().consts.a0;
    let p = ConstructionParams { a: APolicy::Value(0.5 * a0), ..Default::default() };
    assert!(matches!(build_constants(&p), Err(CantorError::InvalidConstants(_))));
    let p = ConstructionParams { r: 0.05, ..Default::default() };
    assert!(matches!(build_constants(&p), Err(CantorError::InvalidConstants(_))));
    let p = ConstructionParams { a: APolicy::Value(4.0 * a0), ..Default::default() };
    assert_eq!(build_constants(&p).unwrap().2.a, 4.0 * a0);
}

#[test]
fn order_two_prepoles_match_closed_form() {
    // h₁(β) = β·mγ₁ is linear, so h₁(β) = b has the root b/(mγ₁)
    let c = construction();
    let mg1 = c.consts.p1;
    for (l, m) in [(-1, 0), (-2, 1), (3, 3), (5, -2), (-7, 4)] {
        let b = c.ev.lattice_f64.lattice_point(l, m);
        let exact = b.z / mg1;
        let seed = c.lift(exact * C64::new(1.0 + 1e-3, 2e-3));
        let (beta, _) = c.newton(seed, &c.pole_mp(&b), 1).unwrap();
        assert!((to_c64(&beta) - exact).norm() < 1e-10 * exact.norm());
    }
    let a1 = c.level_one(&c.root_disk()).unwrap();
    assert!((a1.root - 1.0).norm() < 1e-10);
}

#[test]
fn newton_fixes_an_exact_root() {
    let c = construction();
    let a2 = tree().level(2).next().unwrap();
    let root = a2.root_mp.clone().unwrap();
    let b = a2.lattice_pole(&c.ev).unwrap();
    let (again, _) = c.newton(root.clone(), &c.pole_mp(&b), 2).unwrap();
    assert!(abs_f64(&(again - root.clone())) <= 2f64.powi(-(c.bits as i32) + 30) * abs_f64(&root));
}

#[test]
fn deeper_roots_hit_their_poles() {
    let c = construction();
    for n in [2, 3] {
        for cyl in tree().level(n) {
            let root = cyl.root_mp.clone().unwrap();
            let b = c.pole_mp(&cyl.lattice_pole(&c.ev).unwrap());
            let pm = c.h(&root, n).unwrap();
            assert!(abs_f64(&(pm.value - b.clone())) < 1e-9 * abs_f64(&b));
            assert!(param_map(&c.ev, &c.p1, &root, n + 1).is_err());
        }
    }
    // |h₃′| is large enough that an f64 copy of the root misses the pole
    let a3 = tree().level(3).next().unwrap();
    let beta = a3.root_mp.clone().unwrap();
    let snap = Snap::Absolute(1e-8 * c.ev64.lattice.lambda1.norm());
    let t = orbit_with(&c.ev, &beta, &mp_critical_point(&c.ev, 1), 6, c.consts.r1, snap);
    match t.status {
        OrbitStatus::Prepole { n, pole } => {
            assert_eq!(n, 3);
            assert_eq!(Some((pole.l, pole.m)), a3.pole_index);
        }
        s => panic!("{s:?}"),
    }
}

#[test]
fn small_tree_geometry() {
    let t = tree();
    let c = &t.consts;
    assert_eq!(t.level(1).count(), 1);
    assert_eq!(t.level(2).count(), 2);
    assert_eq!(t.level(3).count(), 4);
    assert!(t.failures.is_empty(), "{:?}", t.failures);
    assert!(siblings_disjoint(t));
    let mut prev = f64::INFINITY;
    for n in 1..=3 {
        let d = t.level(n).map(|x| x.diam).fold(0.0, f64::max);
        assert!(d < prev);
        prev = d;
        for cyl in t.level(n) {
            assert!(cyl.nested && cyl.injective);
            assert!(cyl.residual < 1e-8, "{}", cyl.residual);
            assert!(cyl.diam <= c.diameter_bound(n));
            assert!(cyl.diam >= c.diameter_lower_bound(n));
            if n >= 2 {
                assert!(cyl.distortion <= c.distortion_bound(n));
            }
            let parent = &t.nodes[cyl.parent_id.unwrap()];
            let rel = cyl.root_offset_from_parent;
            assert!(cyl.boundary_offset.iter().all(|d| point_in_polygon(rel + d, &parent.boundary_offset)));
        }
    }
    let json = serde_json::to_string(t).unwrap();
    let back: CylinderTree = serde_json::from_str(&json).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
}

#[test]
fn monte_carlo_area_agrees_with_polygon() {
    let c = construction();
    for cyl in tree().level(2) {
        let mc = c.mc_area(cyl, 10_000, 5);
        assert!((mc - cyl.area).abs() < 0.05 * cyl.area, "{mc} vs {}", cyl.area);
    }
}

#[test]
fn pole_counts_scale_like_a_squared() {
    let c = &construction().consts;
    let lat = &construction().ev64.lattice;
    for n in 3..6 {
        let (a, _) = count_poles_in_half_annulus(lat, c.radius(n), c.phi, c.eps);
        let (b, _) = count_poles_in_half_annulus(lat, c.radius(n + 1), c.phi, c.eps);
        let q = b / a / (c.a * c.a);
        assert!((0.7..1.3).contains(&q), "n={n} {q}");
    }
}

#[test]
fn stats_rows_follow_the_header() {
    let t = tree();
    let mut stats = family_stats(t, &[]);
    attach_pole_counts(&mut stats, &construction().ev64, &t.consts);
    let csv = stats_csv(&stats);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(STATS_HEADER));
    let cols = STATS_HEADER.split(',').count();
    assert!(lines.all(|l| l.split(',').count() == cols));
    assert_eq!(stats.len(), 3);
    assert!(stats[1].delta_built.unwrap() > 0.0);
}

#[test]
fn escaping_parameter_at_depth_four() {
    let c = construction();
    let e = c.escaping_parameter(&[0, 1, 0], 4).unwrap();
    assert_eq!(e.branch.len(), 4);
    let prev = &e.branch[2];
    assert!((e.beta - prev.root).norm() <= prev.diam);
    let pm = c.h(&e.beta_mp, 4).unwrap();
    for (k, z) in pm.points.iter().enumerate().skip(1) {
        let n = k + 1;
        assert!(abs_f64(z) > c.consts.radius(n), "n={n}");
        assert!(abs_f64(z) > 2f64.powi(n as i32) * c.consts.r1);
    }
}
