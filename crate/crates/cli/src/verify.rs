use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weier_core::cantor::r_limit;
use weier_core::dimension::{consistency_check, mcmullen_bound, planar_dust, ternary_cantor};
use weier_core::dynamics::{chain_rule_derivative, param_map, symmetry_defect};
use weier_core::lattice::{equianharmonic_lattice, invariants, make_pole_critical_lattice, points_in_disk, rho, Lattice};
use weier_core::weierstrass::{estimate_pole_constants, EllipticEvaluator};

use crate::commands::{compute_cantor, tree_checks};
use crate::config::RunConfig;
use crate::Failure;

struct Check {
    name: String,
    ok: bool,
    detail: String,
}

fn check(name: &str, ok: bool, detail: String) -> Check {
    Check { name: name.into(), ok, detail }
}

fn random_point(rng: &mut ChaCha8Rng, lat: &Lattice, min_dist: f64) -> C64 {
    loop {
        let z = lat.lambda1 * rng.gen_range(-3.0..3.0) + lat.lambda2 * rng.gen_range(-3.0..3.0);
        if (z - lat.nearest_point(z).z).norm() > min_dist * lat.min_generator() {
            return z;
        }
    }
}

fn ev_of(lat: Lattice) -> Result<EllipticEvaluator, Failure> {
    EllipticEvaluator::new(lat).map_err(|e| Failure::Other(e.into()))
}

fn lattice_checks(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    let lat = make_pole_critical_lattice(cfg.m).map_err(|e| Failure::Config(e.to_string()))?;
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let z = C64::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let (zr, l, m) = lat.reduce_to_fundamental(z);
        worst = worst.max((z - (zr + lat.point(l, m))).norm() / z.norm().max(1.0));
    }
    out.push(check("lattice.reduce_round_trip", worst < 1e-12, format!("{worst:e}")));

    let l1 = lat.lambda1.norm();
    let mut worst: f64 = 0.0;
    for b in points_in_disk(&lat, 20.0 * l1) {
        let w = b * rho();
        worst = worst.max((w - lat.nearest_point(w).z).norm() / l1);
    }
    out.push(check("lattice.rotation_invariance", worst < 1e-9, format!("{worst:e}")));

    let base = invariants(&lat, 60).map_err(|e| Failure::Other(e.into()))?;
    let mut ok = true;
    let mut detail = String::new();
    for alpha in [C64::new(2.0, 0.0), C64::new(1.0, 1.0), C64::new(0.5, 0.0)] {
        let s = invariants(&lat.scaled(alpha), 60).map_err(|e| Failure::Other(e.into()))?;
        let a4 = alpha.powi(-4);
        let a6 = alpha.powi(-6);
        let e2 = (s.g2 - base.g2 * a4).norm();
        let e3 = (s.g3 - base.g3 * a6).norm();
        let t2 = s.tail_bound + a4.norm() * base.tail_bound + 1e-12 * (base.g2 * a4).norm().max(1.0);
        let t3 = s.tail_bound_g3 + a6.norm() * base.tail_bound_g3 + 1e-12 * (base.g3 * a6).norm().max(1.0);
        ok &= e2 <= t2 && e3 <= t3;
        detail += &format!("alpha={alpha}: {e2:.1e}/{t2:.1e} {e3:.1e}/{t3:.1e}; ");
    }
    out.push(check("lattice.scaling_law", ok, detail));

    let mut worst: f64 = 0.0;
    let mut tri = true;
    for m in [-1, -3, -5] {
        let g = make_pole_critical_lattice(m).map_err(|e| Failure::Other(e.into()))?;
        let ev = ev_of(g)?;
        let e1 = ev.critical_values().0;
        worst = worst.max((e1 - g.lambda1 * m as f64).norm() / g.lambda1.norm());
        tri &= g.is_triangular(1e-9);
    }
    out.push(check("lattice.pole_critical", worst < 1e-8 && tri, format!("{worst:e}")));

    let omega = equianharmonic_lattice(4.0).map_err(|e| Failure::Other(e.into()))?;
    let inv = ev_of(omega)?.invariants;
    let err = inv.g2.norm().max((inv.g3 - 4.0).norm()) / 4.0;
    out.push(check("lattice.equianharmonic", err < 1e-8, format!("{err:e}")));
    Ok(out)
}

fn wp_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    let omega = equianharmonic_lattice(4.0).map_err(|e| Failure::Other(e.into()))?;
    let ev = ev_of(omega)?;
    let (g2, g3) = (ev.invariants.g2, ev.invariants.g3);
    let (mut ode, mut sym): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let z = random_point(rng, &omega, 0.05);
        let (p, dp) = ev.wp_pair(z).map_err(|e| Failure::Other(e.into()))?;
        let r = (dp * dp - (4.0 * p * p * p - g2 * p - g3)).norm() / (1.0 + p.norm().powi(3));
        ode = ode.max(r);
        let (q, dq) = ev.wp_pair(-z).map_err(|e| Failure::Other(e.into()))?;
        let (s, ds) = ev.wp_pair(z + omega.lambda1).map_err(|e| Failure::Other(e.into()))?;
        sym = sym.max((q - p).norm() / p.norm()).max((dq + dp).norm() / dp.norm());
        sym = sym.max((s - p).norm() / p.norm()).max((ds - dp).norm() / dp.norm());
    }
    out.push(check("wp.differential_equation", ode < 1e-9, format!("{ode:e}")));
    out.push(check("wp.parity_periodicity", sym < 1e-10, format!("{sym:e}")));

    let mut worst: f64 = 0.0;
    for alpha in [C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(1.0, 1.0)] {
        let evs = ev_of(omega.scaled(alpha))?;
        for _ in 0..200 {
            let z = random_point(rng, &omega, 0.05);
            let p = ev.wp(z).map_err(|e| Failure::Other(e.into()))?;
            let q = evs.wp(alpha * z).map_err(|e| Failure::Other(e.into()))?;
            worst = worst.max((q - p / (alpha * alpha)).norm() / q.norm());
        }
    }
    out.push(check("wp.homogeneity", worst < 1e-9, format!("{worst:e}")));

    let (e1, e2, e3) = ev.critical_values();
    let scale = e1.norm().max(e2.norm()).max(e3.norm());
    let ident = ((e1 + e2 + e3).norm() / scale)
        .max((e1 * e2 * e3 - g3 / 4.0).norm() / (g3 / 4.0).norm())
        .max((e2 - rho() * e1).norm() / scale)
        .max((e3 - rho() * rho() * e1).norm() / scale);
    let (c1, c2, c3) = ev.critical_points();
    let mut crit: f64 = 0.0;
    for c in [c1, c2, c3] {
        let d0 = ev.wp_prime(c).map_err(|e| Failure::Other(e.into()))?;
        let d1 = ev.wp_prime(c + omega.lambda1 * 0.1).map_err(|e| Failure::Other(e.into()))?;
        crit = crit.max(d0.norm() / d1.norm());
    }
    out.push(check("wp.critical_values", ident < 1e-8 && crit < 1e-8, format!("{ident:e} {crit:e}")));

    let lat = make_pole_critical_lattice(-1).map_err(|e| Failure::Other(e.into()))?;
    let ev = ev_of(lat)?;
    let r = 0.04f64.min(r_limit());
    let pd = estimate_pole_constants(&ev, 0.5, r).map_err(|e| Failure::Other(e.into()))?;
    let mut ok = pd.c1 == 2.0 * pd.k1 && pd.c2 == 2.0 * pd.k2 && pd.m2 - pd.m1 < PI / 4.0;
    let mut bad = 0;
    for _ in 0..1000 {
        let beta = C64::new(1.0, 0.0) + C64::from_polar(pd.r * rng.gen::<f64>().sqrt(), 2.0 * PI * rng.gen::<f64>());
        let u = C64::from_polar(pd.eps0 * rng.gen::<f64>().sqrt().max(1e-3), 2.0 * PI * rng.gen::<f64>());
        let b = lat.point(1, 0);
        let g = beta * ev.wp(b + u).map_err(|e| Failure::Other(e.into()))?;
        let u2 = u.norm_sqr();
        let arg = (g * u * u).arg();
        if !(g.norm() >= 1.0 / (pd.c1 * u2) && g.norm() <= pd.c1 / u2 && arg >= pd.m1 - 1e-12 && arg <= pd.m2 + 1e-12) {
            bad += 1;
        }
    }
    ok &= bad == 0;
    out.push(check(
        "wp.pole_sandwich",
        ok,
        format!("C1={} C2={} M2-M1={} misses={bad}", pd.c1, pd.c2, pd.m2 - pd.m1),
    ));
    Ok(out)
}

fn dynamics_checks(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    let lat = make_pole_critical_lattice(cfg.m).map_err(|e| Failure::Config(e.to_string()))?;
    let ev = ev_of(lat)?;
    let p1 = ev.critical_values().0;
    let (mut chain, mut fd): (f64, f64) = (0.0, 0.0);
    let mut tested = 0;
    while tested < 20 {
        let beta = C64::new(1.0, 0.0) + C64::from_polar(0.3 * rng.gen::<f64>(), 2.0 * PI * rng.gen::<f64>());
        let Ok(pm) = param_map(&ev, &p1, &beta, 3) else { continue };
        let cr = chain_rule_derivative(&pm, &p1);
        chain = chain.max((cr - pm.derivative).norm() / pm.derivative.norm());
        // step on the scale where h_3 is close to linear, then one Richardson step
        let h = 1e-3 * (pm.value.norm() / pm.derivative.norm()).min(1e-2);
        let f = |b: C64| param_map(&ev, &p1, &b, 3).map(|p| p.value);
        let central = |h: f64| -> Option<C64> { Some((f(beta + h).ok()? - f(beta - h).ok()?) / (2.0 * h)) };
        if let (Some(d1), Some(d2)) = (central(h), central(h / 2.0)) {
            let d = (d2 * 4.0 - d1) / 3.0;
            fd = fd.max((d - pm.derivative).norm() / pm.derivative.norm());
            tested += 1;
        }
    }
    out.push(check("dynamics.derivative_formula", chain < 1e-9 && fd < 1e-4, format!("chain {chain:e} fd {fd:e}")));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let beta = C64::new(1.0, 0.0) + C64::from_polar(0.3 * rng.gen::<f64>(), 2.0 * PI * rng.gen::<f64>());
        worst = worst.max(symmetry_defect(&ev, beta, 3));
    }
    out.push(check("dynamics.critical_orbit_symmetry", worst < 1e-8, format!("{worst:e}")));
    Ok(out)
}

fn cantor_checks(cfg: &RunConfig) -> Result<Vec<Check>, Failure> {
    let small = RunConfig { depth: 3, branching: 2, mc_children: 8, ..cfg.clone() };
    let out = compute_cantor(&small)?;
    Ok(tree_checks(&out.tree, &out.stats)
        .into_iter()
        .map(|(n, ok, d)| check(&format!("cantor.{n}"), ok, d))
        .collect())
}

fn dimension_checks(cfg: &RunConfig) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    let t = mcmullen_bound(&ternary_cantor(), 2000).map_err(|e| Failure::Other(e.into()))?;
    let err = (t.extrapolated - 2f64.ln() / 3f64.ln()).abs();
    out.push(check("dimension.ternary", err < 1e-6, format!("{err:e}")));
    let d = mcmullen_bound(&planar_dust(), 2000).map_err(|e| Failure::Other(e.into()))?;
    let err = (d.extrapolated - 4f64.ln() / 3f64.ln()).abs();
    out.push(check("dimension.dust", err < 1e-4, format!("{err:e}")));
    let partial_ok = t.partials.iter().all(|p| p.1 <= 1.0) && d.partials.iter().all(|p| p.1 <= 2.0);
    out.push(check("dimension.partials_at_most_ambient", partial_ok, String::new()));
    let params = RunConfig { a: weier_core::cantor::APolicy::Value(1e6), ..cfg.clone() }.construction_params(cfg.depth);
    let (_, _, consts) = weier_core::cantor::build_constants(&params).map_err(|e| Failure::Other(e.into()))?;
    let rep = consistency_check(&consts, 2000).map_err(|e| Failure::Other(e.into()))?;
    out.push(check("dimension.consistency_a1e6", rep.passed && rep.gap < 1e-3, format!("gap {:e}", rep.gap)));
    Ok(out)
}

fn config_checks(cfg: &RunConfig) -> Vec<Check> {
    let back: Result<RunConfig, _> = serde_json::from_str(&cfg.to_json());
    vec![check("config.round_trip", back.as_ref().ok() == Some(cfg), String::new())]
}

pub fn run_all(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.lattice.is_some() {
        return Err(Failure::Config("verify all runs on the pole-critical lattice (m)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut all = Vec::new();
    all.extend(lattice_checks(cfg, &mut rng)?);
    all.extend(wp_checks(&mut rng)?);
    all.extend(dynamics_checks(cfg, &mut rng)?);
    all.extend(cantor_checks(cfg)?);
    all.extend(dimension_checks(cfg)?);
    all.extend(config_checks(cfg));
    let failed = all.iter().filter(|c| !c.ok).count();
    for c in &all {
        crate::commands::out(&format!("{} {} {}\n", if c.ok { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    crate::commands::out(&format!("{} of {} checks passed\n", all.len() - failed, all.len()));
    if failed > 0 {
        return Err(Failure::Verify(format!("{failed} checks failed")));
    }
    Ok(())
}
