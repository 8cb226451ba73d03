use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weier_core::cantor::{build_constants, APolicy, BuildConstants, ConstructionParams};
use weier_core::dimension::*;

fn consts(a: f64) -> BuildConstants {
    build_constants(&ConstructionParams { a: APolicy::Value(a), ..Default::default() }).unwrap().2
}

#[test]
fn ternary_partials_are_exact() {
    let b = mcmullen_bound(&ternary_cantor(), 200).unwrap();
    let want = 2f64.ln() / 3f64.ln();
    assert!(b.partials.iter().all(|(_, p)| (p - want).abs() < 1e-12));
    assert!((b.extrapolated - want).abs() < 1e-6);
}

#[test]
fn planar_dust_limit() {
    let b = mcmullen_bound(&planar_dust(), 2000).unwrap();
    assert!((b.extrapolated - 4f64.ln() / 3f64.ln()).abs() < 1e-4);
}

#[test]
fn full_measure_nesting_loses_nothing() {
    let spec = NestedFamilySpec::new(2, |_| 1.0, |n| 0.5f64.powi(n as i32), "full");
    let b = mcmullen_bound(&spec, 100).unwrap();
    assert!(b.partials.iter().all(|(_, p)| *p == 2.0));
    assert!((b.extrapolated - 2.0).abs() < 1e-12);
}

#[test]
fn invalid_specs_rejected() {
    assert!(mcmullen_bound(&ternary_cantor(), 2).is_err());
    let grow = NestedFamilySpec::new(1, |_| 1.5, |n| 0.5f64.powi(n as i32), "bad delta");
    assert!(mcmullen_bound(&grow, 10).is_err());
    let big = NestedFamilySpec::new(1, |_| 0.5, |_| 2.0, "bad diam");
    assert!(mcmullen_bound(&big, 10).is_err());
    assert!(analytic_bound(1.0).is_err());
    assert!(analytic_bound(0.5).is_err());
}

#[test]
fn analytic_closed_forms() {
    assert!((analytic_bound(2f64.powi(60)).unwrap() - (4.0 / 3.0 - 0.1)).abs() < 1e-12);
    assert!((analytic_bound(64.0).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let mut prev = f64::MIN;
    for k in 1..40 {
        let v = analytic_bound(10f64.powi(k)).unwrap();
        assert!(v > prev && v < 4.0 / 3.0);
        prev = v;
    }
}

#[test]
fn cylinder_family_sequences() {
    let c = consts(1e6);
    let spec = paper_family_spec(&c).unwrap();
    let q = 1.5 * c.c1.ln() - c.c2.ln() - 1.5 * c.r1.ln();
    assert!((spec.log_diam)(2) < 0.0);
    for n in 1..50 {
        let ld = (spec.log_delta)(n);
        assert!(ld < 0.0 && ld.is_finite(), "n={n}");
        let step = (spec.log_diam)(n + 1) - (spec.log_diam)(n);
        assert!(step < 0.0);
        if n >= 2 {
            let want = q - 1.5 * n as f64 * c.a.ln();
            assert!((step - want).abs() < 1e-9 * want.abs());
        }
    }
    let mut low = c.clone();
    low.a = 0.9 * c.a0;
    assert!(paper_family_spec(&low).is_err());
}

#[test]
fn consistency_across_a() {
    let mut prev = f64::MIN;
    for a in [1e3, 1e6, 1e12] {
        let r = consistency_check(&consts(a), 2000).unwrap();
        assert!(r.gap < 1e-3, "a={a} gap={}", r.gap);
        assert!(r.extrapolated > prev);
        prev = r.extrapolated;
    }
}

#[test]
fn partial_gap_halves_when_n_doubles() {
    let c = consts(1e6);
    let g1 = consistency_check(&c, 1000).unwrap().partial_gap;
    let g2 = consistency_check(&c, 2000).unwrap().partial_gap;
    assert!((0.4..0.6).contains(&(g2 / g1)), "{}", g2 / g1);
}

#[test]
fn partials_eventually_monotone() {
    let b = mcmullen_bound(&paper_family_spec(&consts(1e6)).unwrap(), 500).unwrap();
    let tail: Vec<f64> = b.partials[10..].iter().map(|p| p.1).collect();
    let up = tail.windows(2).all(|w| w[1] >= w[0]);
    let down = tail.windows(2).all(|w| w[1] <= w[0]);
    assert!(up || down);
}

#[test]
fn box_counting_ternary() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<C64> = (0..10_000)
        .map(|_| {
            let x = (1..=20).fold(0.0, |s, k| s + if rng.gen::<bool>() { 2.0 } else { 0.0 } * 3f64.powi(-k));
            C64::new(x, 0.0)
        })
        .collect();
    let d = box_count_dimension(&pts, ScaleRange { min: 3f64.powi(-7), max: 1.0 / 3.0, steps: 7 }).unwrap();
    assert!((d - 0.63).abs() < 0.05, "{d}");
}

#[test]
fn box_counting_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<C64> = (0..10_000).map(|_| C64::new(rng.gen(), rng.gen())).collect();
    let d = box_count_dimension(&pts, ScaleRange { min: 1.0 / 32.0, max: 0.5, steps: 5 }).unwrap();
    assert!((d - 2.0).abs() < 0.05, "{d}");
    assert!(box_count_dimension(&pts[..10], ScaleRange { min: 0.05, max: 0.5, steps: 6 }).is_err());
    assert!(box_count_dimension(&pts, ScaleRange { min: 0.5, max: 0.5, steps: 6 }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn partials_never_exceed_ambient(d in 1usize..4, delta in 0.01f64..1.0, ratio in 0.05f64..0.95, n_max in 3usize..200) {
        let spec = NestedFamilySpec::new(d, move |_| delta, move |n| ratio.powi(n as i32), "geometric");
        let b = mcmullen_bound(&spec, n_max).unwrap();
        prop_assert!(b.partials.iter().all(|(_, p)| *p <= d as f64));
    }

    #[test]
    fn scale_invariance(c in 0.1f64..1.0) {
        let base = mcmullen_bound(&ternary_cantor(), 2000).unwrap();
        let scaled = mcmullen_bound(&ternary_cantor().scaled_diameters(c), 2000).unwrap();
        prop_assert!((scaled.extrapolated - base.extrapolated).abs() < 1e-4);
        for (a, b) in base.partials.iter().zip(&scaled.partials) {
            prop_assert!((a.1 - b.1).abs() <= 3.0 / a.0 as f64);
        }
    }
}
