use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use weier_core::cantor::{
    attach_pole_counts, build_constants, family_stats, siblings_disjoint, stats_csv, CantorError, Construction,
    CylinderTree, LevelStats,
};
use weier_core::dimension::{consistency_check, mcmullen_bound, planar_dust, ternary_cantor};
use weier_core::dynamics::{
    classify_pixel, mp_critical_point, orbit_with, EscapeMap, EscapeMapParams, Evaluator, OrbitStatus, OrbitTrace, Snap,
};
use weier_core::lattice::{invariants, make_pole_critical_lattice, Lattice};
use weier_core::mp::{to_c64, Cx, Mp, Real};
use weier_core::weierstrass::{EllipticEvaluator, MpEvaluator};

use crate::config::{parse_start, Family, RunConfig, Start};
use crate::Failure;

pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn cantor_failure(e: CantorError) -> Failure {
    match e {
        CantorError::RootNotFound { .. } => Failure::RootNotFound(e.to_string()),
        CantorError::InvalidConstants(_) | CantorError::Infeasible(_) | CantorError::Lattice(_) => {
            Failure::Config(e.to_string())
        }
        other => Failure::Other(other.into()),
    }
}

/// The configured lattice and, for pole-critical lattices, its m.
pub fn lattice_of(cfg: &RunConfig) -> Result<(Lattice, Option<i64>), Failure> {
    match cfg.lattice {
        Some(l) => Lattice::new(C64::new(l[0], l[1]), C64::new(l[2], l[3]))
            .map(|lat| (lat, None))
            .map_err(|e| Failure::Config(e.to_string())),
        None => make_pole_critical_lattice(cfg.m)
            .map(|lat| (lat, Some(cfg.m)))
            .map_err(|e| Failure::Config(e.to_string())),
    }
}

pub fn evaluator(lat: Lattice) -> Result<EllipticEvaluator, Failure> {
    EllipticEvaluator::new(lat).map_err(|e| Failure::Config(e.to_string()))
}

/// R₁ of the built constants, or |℘(c₁)| for explicit lattices.
fn default_r_base(cfg: &RunConfig, ev: &EllipticEvaluator, m: Option<i64>) -> Result<f64, Failure> {
    if let Some(r) = cfg.r_base {
        return Ok(r);
    }
    match m {
        Some(_) => {
            let (_, _, c) = build_constants(&cfg.construction_params(cfg.depth)).map_err(cantor_failure)?;
            Ok(c.r1)
        }
        None => Ok(ev.critical_values().0.norm()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Write to stdout; a closed pipe (`| head`) is not an error.
pub fn out(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &Value) {
    out(&format!("{}\n", serde_json::to_string_pretty(v).expect("json")));
}

fn c(z: C64) -> Value {
    json!([z.re, z.im])
}

pub struct LatticeReport {
    pub json: Value,
    pub identity_error: f64,
    pub pole_critical: bool,
    pub m_residual: Option<f64>,
}

pub fn lattice_report(cfg: &RunConfig) -> Result<LatticeReport, Failure> {
    let (lat, m) = lattice_of(cfg)?;
    let ev = evaluator(lat)?;
    let inv = invariants(&lat, cfg.truncation_radius).map_err(|e| Failure::Config(e.to_string()))?;
    let (c1, c2, c3) = ev.critical_points();
    let (e1, e2, e3) = ev.critical_values();
    let scale = e1.norm().max(e2.norm()).max(e3.norm());
    let (g2, g3) = (ev.invariants.g2, ev.invariants.g3);
    let sum = (e1 + e2 + e3).norm() / scale;
    let pair = (e1 * e2 + e1 * e3 + e2 * e3 + g2 / 4.0).norm() / scale.powi(2);
    let prod = (e1 * e2 * e3 - g3 / 4.0).norm() / scale.powi(3);
    let identity_error = sum.max(pair).max(prod);
    let l1 = lat.min_generator();
    let poles: Vec<Value> = [e1, e2, e3]
        .iter()
        .map(|&e| {
            let p = lat.nearest_point(e);
            json!({"value": c(e), "nearest": {"l": p.l, "m": p.m, "z": c(p.z)}, "residual": (e - p.z).norm() / l1})
        })
        .collect();
    let worst = [e1, e2, e3].iter().map(|&e| (e - lat.nearest_point(e).z).norm() / l1).fold(0.0, f64::max);
    let pole_critical = worst < 1e-8;
    let m_residual = m.map(|m| (e1 - lat.lambda1 * m as f64).norm() / lat.lambda1.norm());
    let json = json!({
        "lattice": {"lambda1": c(lat.lambda1), "lambda2": c(lat.lambda2)},
        "m": m,
        "orientation": lat.orientation(),
        "area": lat.area(),
        "is_triangular": lat.is_triangular(1e-9),
        "invariants": inv,
        "evaluator_invariants": ev.invariants,
        "critical_points": [c(c1), c(c2), c(c3)],
        "critical_values": [c(e1), c(e2), c(e3)],
        "identities": {"sum": sum, "pair_sum_plus_g2_over_4": pair, "product_minus_g3_over_4": prod},
        "pole_critical": {"values": poles, "max_residual": worst, "passed": pole_critical},
        "wp_c1_minus_m_gamma1": m_residual,
    });
    Ok(LatticeReport { json, identity_error, pole_critical, m_residual })
}

pub fn lattice_info(cfg: &RunConfig) -> Result<(), Failure> {
    let r = lattice_report(cfg)?;
    print_json(&r.json);
    if r.identity_error > 1e-8 {
        return Err(Failure::Verify(format!("critical-value identities off by {:e}", r.identity_error)));
    }
    if let Some(res) = r.m_residual.filter(|&x| !(x < 1e-8)) {
        return Err(Failure::Verify(format!("|wp(c1) - m gamma1| / |gamma1| = {res:e}")));
    }
    if cfg.require_pole_critical && !r.pole_critical {
        return Err(Failure::Verify("critical values are not lattice points".into()));
    }
    Ok(())
}

/// Same class, level and (rotated) pole.
fn statuses_agree(lat: &Lattice, s1: &OrbitStatus, s2: &OrbitStatus, w: C64) -> bool {
    match (s1, s2) {
        (OrbitStatus::Prepole { n: a, pole: p }, OrbitStatus::Prepole { n: b, pole: q }) => {
            let r = lat.nearest_point(p.z * w);
            a == b && (r.l, r.m) == (q.l, q.m)
        }
        _ => s1 == s2,
    }
}

pub const ESCAPE_HEADER: &str =
    "resolution,pixels,escaping,prepole,bounded,unresolved,unresolved_fraction,symmetry_checked,symmetry_agree";

pub struct EscapeOutcome {
    pub map: EscapeMap,
    pub symmetry_checked: usize,
    pub symmetry_agree: usize,
}

pub fn compute_escape_map(cfg: &RunConfig) -> Result<EscapeOutcome, Failure> {
    let (lat, m) = lattice_of(cfg)?;
    let ev = evaluator(lat)?;
    let r_base = default_r_base(cfg, &ev, m)?;
    let w = &cfg.window;
    let params = EscapeMapParams {
        center: C64::new(w.center[0], w.center[1]),
        radius: w.radius,
        resolution: w.resolution,
        depth: w.depth,
        r_base,
    };
    let map = EscapeMap::compute(&ev, params.clone());
    let n = params.resolution;
    let (mut checked, mut agree) = (0, 0);
    if lat.is_triangular(1e-9) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let k = 1000.min(n * n);
        let mut idx = rand::seq::index::sample(&mut rng, n * n, k).into_vec();
        idx.sort_unstable();
        let rot = lat.lambda2 / lat.lambda1;
        let c2 = ev.critical_points().1;
        let half_diag = params.radius / n as f64 * 2f64.sqrt();
        checked = idx.len();
        agree = idx
            .par_iter()
            .filter(|&&i| {
                let beta = EscapeMap::beta_at(&params, i % n, i / n);
                let s2 = classify_pixel(&ev, beta, c2, params.depth, r_base, half_diag);
                statuses_agree(&lat, &map.statuses[i], &s2, rot)
            })
            .count();
    }
    Ok(EscapeOutcome { map, symmetry_checked: checked, symmetry_agree: agree })
}

pub fn escape_map(cfg: &RunConfig) -> Result<(), Failure> {
    let out = compute_escape_map(cfg)?;
    let [esc, pre, bnd, unr] = out.map.counts();
    let pixels = out.map.statuses.len();
    let frac = unr as f64 / pixels as f64;
    let raster = cfg.output.raster.clone().unwrap_or_else(|| PathBuf::from("escape_map.pgm"));
    let summary = cfg.output.summary.clone().unwrap_or_else(|| PathBuf::from("escape_map.csv"));
    write_file(&raster, &out.map.to_pgm())?;
    let csv = format!(
        "{ESCAPE_HEADER}\n{},{pixels},{esc},{pre},{bnd},{unr},{},{},{}\n",
        out.map.params.resolution,
        g17(frac),
        out.symmetry_checked,
        out.symmetry_agree
    );
    write_file(&summary, &csv)?;
    print_json(&json!({
        "raster": raster,
        "summary": summary,
        "r_base": out.map.params.r_base,
        "counts": {"escaping": esc, "prepole": pre, "bounded": bnd, "unresolved": unr},
        "unresolved_fraction": frac,
        "symmetry_checked": out.symmetry_checked,
        "symmetry_agree": out.symmetry_agree,
    }));
    if frac > 0.01 {
        return Err(Failure::Evaluator(format!("{unr} of {pixels} pixels unresolved")));
    }
    Ok(())
}

/// Named pass/fail checks over the per-level statistics of a tree.
pub fn tree_checks(tree: &CylinderTree, stats: &[LevelStats]) -> Vec<(String, bool, String)> {
    let mut out = Vec::new();
    for s in stats {
        let n = s.level;
        out.push((format!("level{n}.nesting"), s.nesting_fraction == 1.0, format!("{}", s.nesting_fraction)));
        out.push((
            format!("level{n}.diameter"),
            s.d_measured <= s.d_bound,
            format!("{:e} <= {:e}", s.d_measured, s.d_bound),
        ));
        if n >= 2 {
            out.push((
                format!("level{n}.distortion"),
                s.distortion_max <= s.distortion_bound,
                format!("{} <= {}", s.distortion_max, s.distortion_bound),
            ));
        }
        if let Some(d) = s.delta_full {
            out.push((format!("level{n}.density"), d >= s.delta_bound, format!("{d:e} >= {:e}", s.delta_bound)));
        }
        out.push((format!("level{n}.injective"), s.injective, String::new()));
    }
    out.push(("siblings_disjoint".into(), siblings_disjoint(tree), String::new()));
    out
}

pub struct CantorOutcome {
    pub tree: CylinderTree,
    pub stats: Vec<LevelStats>,
    pub tree_json: String,
    pub stats_csv: String,
}

pub fn compute_cantor(cfg: &RunConfig) -> Result<CantorOutcome, Failure> {
    let con = Construction::new(&cfg.construction_params(cfg.depth)).map_err(cantor_failure)?;
    let tree = con.build_family(cfg.depth, cfg.branching).map_err(cantor_failure)?;
    let mut dens = Vec::new();
    for p in tree.nodes.iter().filter(|x| x.level >= 1 && x.level < cfg.depth) {
        dens.push(con.full_branching_density(p, cfg.mc_children, cfg.seed).map_err(cantor_failure)?);
    }
    let mut stats = family_stats(&tree, &dens);
    attach_pole_counts(&mut stats, &con.ev64, &con.consts);
    let tree_json = serde_json::to_string_pretty(&tree).map_err(|e| Failure::Other(e.into()))?;
    let csv = stats_csv(&stats);
    Ok(CantorOutcome { tree, stats, tree_json, stats_csv: csv })
}

pub fn cantor_build(cfg: &RunConfig) -> Result<(), Failure> {
    let out = compute_cantor(cfg)?;
    let tree_path = cfg.output.tree.clone().unwrap_or_else(|| PathBuf::from("cylinder_tree.json"));
    let stats_path = cfg.output.stats.clone().unwrap_or_else(|| PathBuf::from("cylinder_stats.csv"));
    write_file(&tree_path, &out.tree_json)?;
    write_file(&stats_path, &out.stats_csv)?;
    let checks = tree_checks(&out.tree, &out.stats);
    let failed: Vec<&String> = checks.iter().filter(|c| !c.1).map(|c| &c.0).collect();
    print_json(&json!({
        "tree": tree_path,
        "stats": stats_path,
        "bits": out.tree.bits,
        "nodes": out.tree.nodes.len(),
        "constants": out.tree.consts,
        "root_failures": out.tree.failures.len(),
        "checks": checks.iter().map(|(n, ok, d)| json!({"name": n, "passed": ok, "detail": d})).collect::<Vec<_>>(),
        "passed": failed.is_empty(),
    }));
    if !failed.is_empty() {
        return Err(Failure::Verify(format!("{failed:?}")));
    }
    Ok(())
}

pub fn dim_report(cfg: &RunConfig) -> Result<(Value, bool), Failure> {
    let n = cfg.n_max;
    let oracle = |name: &str, spec, expected: f64, tol: f64| -> Result<(Value, bool), Failure> {
        let b = mcmullen_bound(&spec, n).map_err(|e| Failure::Config(e.to_string()))?;
        let err = (b.extrapolated - expected).abs();
        let last = b.partials.last().map(|p| p.1).unwrap_or(f64::NAN);
        Ok((
            json!({"family": name, "n_max": n, "extrapolated": b.extrapolated, "last_partial": last,
                   "liminf": b.liminf, "slope": b.slope, "expected": expected, "error": err,
                   "tolerance": tol, "passed": err <= tol}),
            err <= tol,
        ))
    };
    match cfg.family {
        Family::Ternary => oracle("ternary", ternary_cantor(), 2f64.ln() / 3f64.ln(), 1e-6),
        Family::Dust => oracle("dust", planar_dust(), 4f64.ln() / 3f64.ln(), 1e-4),
        Family::Paper => {
            if cfg.lattice.is_some() {
                return Err(Failure::Config("the cylinder family needs a pole-critical lattice (m)".into()));
            }
            let (_, _, consts) = build_constants(&cfg.construction_params(cfg.depth)).map_err(cantor_failure)?;
            let rep = consistency_check(&consts, n).map_err(|e| Failure::Config(e.to_string()))?;
            let ok = rep.passed && rep.gap < 1e-3;
            let v = json!({
                "family": "paper",
                "a_policy": cfg.a,
                "a": consts.a,
                "a0": consts.a0,
                "n_max": n,
                "extrapolated": rep.extrapolated,
                "last_partial": rep.partials.last(),
                "liminf": rep.liminf,
                "analytic_bound": rep.analytic,
                "gap": rep.gap,
                "partial_gap": rep.partial_gap,
                "tolerance": rep.tolerance,
                "passed": ok,
            });
            Ok((v, ok))
        }
    }
}

pub fn dim_bound(cfg: &RunConfig) -> Result<(), Failure> {
    let (v, ok) = dim_report(cfg)?;
    print_json(&v);
    if !ok {
        return Err(Failure::Consistency(format!("{:?} family", cfg.family)));
    }
    Ok(())
}

fn orbit_csv<T: Real>(tr: &OrbitTrace<T>, footer: Value) -> String {
    let mut s = String::from("k,re,im,abs\n");
    for (k, p) in tr.points.iter().enumerate() {
        let z = to_c64(p);
        let _ = writeln!(s, "{k},{},{},{}", g17(z.re), g17(z.im), g17(z.norm()));
    }
    let _ = writeln!(s, "# {}", serde_json::to_string(&footer).expect("json"));
    s
}

pub fn orbit_text(cfg: &RunConfig) -> Result<String, Failure> {
    let (lat, m) = lattice_of(cfg)?;
    let ev = evaluator(lat)?;
    let r_base = default_r_base(cfg, &ev, m)?;
    let start = parse_start(&cfg.start).map_err(Failure::Config)?;
    let multi = cfg.beta_digits.is_some() || cfg.bits.is_some();
    if multi {
        let m = m.ok_or_else(|| Failure::Config("multiprecision orbits need a pole-critical lattice (m)".into()))?;
        let bits = cfg.bits.unwrap_or(256);
        let mev = MpEvaluator::pole_critical(m, bits).map_err(|e| Failure::Config(e.to_string()))?;
        let beta: Cx<Mp> = match (&cfg.beta_digits, cfg.beta) {
            (Some(d), _) => Cx::new(Mp::parse(d[0].trim(), bits), Mp::parse(d[1].trim(), bits)),
            (None, Some(b)) => mev.lift(C64::new(b[0], b[1])),
            _ => return Err(Failure::Config("orbit needs beta or beta_digits".into())),
        };
        let z0 = match start {
            Start::Critical(i) => mp_critical_point(&mev, i),
            Start::Point(x, y) => mev.lift(C64::new(x, y)),
        };
        let tol = mev.prepole_tolerance();
        let tr = orbit_with(&mev, &beta, &z0, cfg.steps, r_base, Snap::Absolute(tol));
        let footer = json!({"status": tr.status, "kind": tr.status.kind(), "level": tr.status.level(),
            "beta": c(to_c64(&beta)), "bits": bits, "r_base": r_base, "radii_checked": tr.radii_checked});
        Ok(orbit_csv(&tr, footer))
    } else {
        let b = cfg.beta.ok_or_else(|| Failure::Config("orbit needs beta or beta_digits".into()))?;
        let beta = C64::new(b[0], b[1]);
        let (c1, c2, c3) = ev.critical_points();
        let z0 = match start {
            Start::Critical(1) => c1,
            Start::Critical(2) => c2,
            Start::Critical(_) => c3,
            Start::Point(x, y) => C64::new(x, y),
        };
        let tr = orbit_with(&ev, &beta, &z0, cfg.steps, r_base, Snap::Absolute(ev.prepole_tolerance));
        let footer = json!({"status": tr.status, "kind": tr.status.kind(), "level": tr.status.level(),
            "beta": c(beta), "bits": 53, "r_base": r_base, "radii_checked": tr.radii_checked});
        Ok(orbit_csv(&tr, footer))
    }
}

pub fn orbit(cfg: &RunConfig) -> Result<(), Failure> {
    let text = orbit_text(cfg)?;
    match &cfg.output.orbit {
        Some(p) => write_file(p, &text),
        None => {
            out(&text);
            Ok(())
        }
    }
}
