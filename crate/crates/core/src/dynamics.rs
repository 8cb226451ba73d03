//! Iteration of g_β = β℘, critical-orbit classification, and the parameter
//! maps h_n(β) = g_β^n(c₁) with derivatives from the product formula.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{rho, Lattice, LatticePoint};
use crate::mp::{abs_f64, to_c64, Cx, Mp, Real};
use crate::weierstrass::{EllipticEvaluator, MpEvaluator, WpError, WpPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error("vanishing derivative factor g'(g^{index}(c1))")]
    IllConditioned { index: usize },
    #[error("orbit hits the pole {pole:?} at step {level}")]
    Singular { level: usize, pole: LatticePoint },
    #[error(transparent)]
    Eval(#[from] WpError),
}

/// ℘ evaluation shared by the f64 and multiprecision paths.
pub trait Evaluator<T: Real>: Sync {
    fn eval(&self, z: &Cx<T>) -> Result<WpPoint<T>, WpError>;
    fn lattice(&self) -> &Lattice;
    fn prepole_tolerance(&self) -> f64;
    /// A scalar carrying the working precision.
    fn unit(&self) -> T;
    fn lift(&self, z: C64) -> Cx<T> {
        let u = self.unit();
        Cx::new(u.clone() * u.lift(z.re), u.clone() * u.lift(z.im))
    }
    fn pole_of(&self, p: &WpPoint<T>) -> LatticePoint {
        self.lattice().lattice_point(p.l, p.m)
    }
}

impl Evaluator<f64> for EllipticEvaluator {
    fn eval(&self, z: &C64) -> Result<WpPoint<f64>, WpError> {
        self.eval_point(*z)
    }
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn prepole_tolerance(&self) -> f64 {
        self.prepole_tolerance
    }
    fn unit(&self) -> f64 {
        1.0
    }
}

impl Evaluator<Mp> for MpEvaluator {
    fn eval(&self, z: &Cx<Mp>) -> Result<WpPoint<Mp>, WpError> {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(WpError::NonFinite);
        }
        self.kernel.eval(z).ok_or(WpError::NonFinite)
    }
    fn lattice(&self) -> &Lattice {
        &self.lattice_f64
    }
    fn prepole_tolerance(&self) -> f64 {
        1e-8 * self.lattice_f64.lambda1.norm()
    }
    fn unit(&self) -> Mp {
        Mp::from_f64(1.0, self.bits)
    }
}

/// g_β(z) = β℘(z).
pub fn g_beta(ev: &EllipticEvaluator, beta: C64, z: C64) -> Result<C64, WpError> {
    Ok(beta * ev.wp(z)?)
}

/// h_n(β), h_n′(β) and the orbit z_1..z_n (z_k = g_β^k(c)).
#[derive(Clone, Debug)]
pub struct ParamMap<T: Real> {
    pub n: usize,
    pub beta: Cx<T>,
    pub value: Cx<T>,
    pub derivative: Cx<T>,
    pub points: Vec<Cx<T>>,
    /// ℘′(z_k) for k = 1..n−1
    pub wpp: Vec<Cx<T>>,
}

/// Orbit of the start point with ℘(start) = `p1`, through n steps.
/// Fails with `Singular` if some z_k, k < n, is within the prepole tolerance of Λ.
pub fn param_map<T: Real, E: Evaluator<T>>(
    ev: &E,
    p1: &Cx<T>,
    beta: &Cx<T>,
    n: usize,
) -> Result<ParamMap<T>, DynError> {
    assert!(n >= 1);
    let mut points = Vec::with_capacity(n);
    let mut wpp = Vec::with_capacity(n);
    let mut z = beta.clone() * p1.clone();
    for k in 1..n {
        let p = ev.eval(&z)?;
        if abs_f64(&p.u) < ev.prepole_tolerance() {
            return Err(DynError::Singular { level: k, pole: ev.pole_of(&p) });
        }
        if p.wpp.re.is_zero() && p.wpp.im.is_zero() {
            return Err(DynError::IllConditioned { index: k });
        }
        points.push(z);
        wpp.push(p.wpp);
        z = beta.clone() * p.wp;
    }
    points.push(z.clone());
    let derivative = product_formula(beta, &points, &wpp);
    Ok(ParamMap { n, beta: beta.clone(), value: z, derivative, points, wpp })
}

/// h_n′(β) = (1/β)·Π_{k=1}^{n−1} g′(z_k)·[z_1 + Σ_{k=2}^n z_k / Π_{i=1}^{k−1} g′(z_i)].
pub fn product_formula<T: Real>(beta: &Cx<T>, points: &[Cx<T>], wpp: &[Cx<T>]) -> Cx<T> {
    let mut s = points[0].clone();
    let mut prod = Cx::new(beta.re.lift(1.0), beta.re.lift(0.0));
    for k in 1..points.len() {
        prod = prod * beta.clone() * wpp[k - 1].clone();
        s = s + points[k].clone() / prod.clone();
    }
    prod * s / beta.clone()
}

/// h_n′ by the chain rule h_{k+1}′ = ℘(z_k) + β℘′(z_k)h_k′.
pub fn chain_rule_derivative<T: Real>(pm: &ParamMap<T>, p1: &Cx<T>) -> Cx<T> {
    let mut d = p1.clone();
    for k in 1..pm.n {
        let wp = pm.points[k].clone() / pm.beta.clone();
        d = wp + pm.beta.clone() * pm.wpp[k - 1].clone() * d;
    }
    d
}

/// Value part of h_n, with the first level that hit a pole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMapValue {
    pub n: usize,
    pub beta: C64,
    pub value: C64,
    pub derivative: C64,
    /// level and pole of the first intermediate pole hit
    pub singular: Option<(usize, LatticePoint)>,
}

pub fn h_n(ev: &EllipticEvaluator, beta: C64, n: usize) -> ParamMapValue {
    let (c1, _, _) = ev.critical_points();
    let p1 = match ev.eval_point(c1) {
        Ok(p) => p.wp,
        Err(_) => C64::new(f64::NAN, f64::NAN),
    };
    match param_map(ev, &p1, &beta, n) {
        Ok(pm) => ParamMapValue { n, beta, value: pm.value, derivative: pm.derivative, singular: None },
        Err(DynError::Singular { level, pole }) => {
            let mut z = beta * p1;
            for _ in 1..level {
                z = beta * ev.eval_point(z).map(|p| p.wp).unwrap_or(z);
            }
            ParamMapValue {
                n,
                beta,
                value: z,
                derivative: C64::new(f64::NAN, f64::NAN),
                singular: Some((level, pole)),
            }
        }
        Err(_) => ParamMapValue {
            n,
            beta,
            value: C64::new(f64::NAN, f64::NAN),
            derivative: C64::new(f64::NAN, f64::NAN),
            singular: None,
        },
    }
}

pub fn h_n_prime(ev: &EllipticEvaluator, beta: C64, n: usize) -> Result<C64, DynError> {
    let (c1, _, _) = ev.critical_points();
    let p1 = ev.eval_point(c1)?.wp;
    Ok(param_map(ev, &p1, &beta, n)?.derivative)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OrbitStatus {
    /// |z_k| ≥ 2^k·R_base for 2 ≤ k ≤ n
    Escaping(usize),
    Prepole { n: usize, pole: LatticePoint },
    Bounded(usize),
    NearPoleUnresolved(usize),
}

impl OrbitStatus {
    pub fn kind(&self) -> &'static str {
        match self {
            OrbitStatus::Escaping(_) => "escaping",
            OrbitStatus::Prepole { .. } => "prepole",
            OrbitStatus::Bounded(_) => "bounded",
            OrbitStatus::NearPoleUnresolved(_) => "unresolved",
        }
    }

    pub fn level(&self) -> usize {
        match *self {
            OrbitStatus::Escaping(n) | OrbitStatus::Bounded(n) | OrbitStatus::NearPoleUnresolved(n) => n,
            OrbitStatus::Prepole { n, .. } => n,
        }
    }
}

/// How a pole hit is recognised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snap {
    /// dist(z_k, Λ) below an absolute radius
    Absolute(f64),
    /// the first-order parameter offset dist(z_k, Λ)/|∂z_k/∂β| below a radius in β
    Param(f64),
}

#[derive(Clone, Debug)]
pub struct OrbitTrace<T: Real> {
    pub beta: Cx<T>,
    pub start: Cx<T>,
    /// points[0] = start, points[k] = g_β^k(start)
    pub points: Vec<Cx<T>>,
    pub status: OrbitStatus,
    /// 2^k·R_base for k = 1..len
    pub radii_checked: Vec<f64>,
}

const OVERFLOW: f64 = 1e300;

/// Orbit of `start` under g_β with the 2^k·R_base growth certificate (k ≥ 2).
pub fn orbit_with<T: Real, E: Evaluator<T>>(
    ev: &E,
    beta: &Cx<T>,
    start: &Cx<T>,
    max_n: usize,
    r_base: f64,
    snap: Snap,
) -> OrbitTrace<T> {
    let bits = ev.unit().bits() as i32;
    let ulp = 2f64.powi(-bits);
    let mut points = vec![start.clone()];
    let mut radii = Vec::new();
    let mut cert_ok = true;
    let mut z = start.clone();
    let mut dz = Cx::new(beta.re.lift(0.0), beta.re.lift(0.0));
    let finish = |points: Vec<Cx<T>>, radii: Vec<f64>, status| OrbitTrace {
        beta: beta.clone(),
        start: start.clone(),
        points,
        status,
        radii_checked: radii,
    };
    for k in 1..=max_n {
        let p = match ev.eval(&z) {
            Ok(p) => p,
            Err(_) => return finish(points, radii, OrbitStatus::NearPoleUnresolved(k)),
        };
        let znew = beta.clone() * p.wp.clone();
        // ∂z_k/∂β = ℘(z_{k-1}) + β℘′(z_{k-1})∂z_{k-1}/∂β
        dz = p.wp + beta.clone() * p.wpp * dz;
        z = znew;
        let za = abs_f64(&z);
        if !(za < OVERFLOW) {
            let st = if cert_ok && k > 2 {
                OrbitStatus::Escaping(k - 1)
            } else {
                OrbitStatus::NearPoleUnresolved(k)
            };
            return finish(points, radii, st);
        }
        points.push(z.clone());
        let rk = 2f64.powi(k as i32) * r_base;
        radii.push(rk);
        if k >= 2 && za < rk {
            cert_ok = false;
        }
        let q = match ev.eval(&z) {
            Ok(q) => q,
            Err(_) => return finish(points, radii, OrbitStatus::NearPoleUnresolved(k)),
        };
        let dist = abs_f64(&q.u);
        let err = 8.0 * za.max(1.0) * ulp;
        let hit = match snap {
            Snap::Absolute(t) => dist < t,
            Snap::Param(d) => dist < d * abs_f64(&dz) || dist < ev.prepole_tolerance(),
        };
        if hit {
            if err > 0.5 * ev.prepole_tolerance() && dist < err {
                return finish(points, radii, OrbitStatus::NearPoleUnresolved(k));
            }
            return finish(points, radii, OrbitStatus::Prepole { n: k, pole: ev.pole_of(&q) });
        }
        if k < max_n && err > 1e-6 * dist {
            // the next iterate would carry no reliable digits
            let st = if cert_ok && k >= 2 {
                OrbitStatus::Escaping(k)
            } else {
                OrbitStatus::NearPoleUnresolved(k)
            };
            return finish(points, radii, st);
        }
    }
    let st = if cert_ok && max_n >= 2 {
        OrbitStatus::Escaping(max_n)
    } else {
        OrbitStatus::Bounded(max_n)
    };
    finish(points, radii, st)
}

pub fn orbit(ev: &EllipticEvaluator, beta: C64, z0: C64, max_n: usize, r_base: f64) -> OrbitTrace<f64> {
    orbit_with(ev, &beta, &z0, max_n, r_base, Snap::Absolute(ev.prepole_tolerance))
}

/// Statuses of the three critical orbits for one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub beta: C64,
    pub c1: OrbitStatus,
    pub c2: OrbitStatus,
    pub c3: OrbitStatus,
}

fn rotate_status(lat: &Lattice, s: OrbitStatus, w: C64) -> OrbitStatus {
    match s {
        OrbitStatus::Prepole { n, pole } => OrbitStatus::Prepole { n, pole: lat.nearest_point(pole.z * w) },
        other => other,
    }
}

/// Classify β from the c₁ orbit; on triangular lattices the c₂, c₃ orbits are
/// its rotations by λ₂/λ₁ and (λ₂/λ₁)², otherwise they are iterated directly.
pub fn classify_beta_with(
    ev: &EllipticEvaluator,
    beta: C64,
    depth: usize,
    r_base: f64,
    snap: Snap,
) -> Classification {
    let (c1, c2, c3) = ev.critical_points();
    let s1 = orbit_with(ev, &beta, &c1, depth, r_base, snap).status;
    if ev.lattice.is_triangular(1e-9) {
        let w = ev.lattice.lambda2 / ev.lattice.lambda1;
        Classification {
            beta,
            c1: s1,
            c2: rotate_status(&ev.lattice, s1, w),
            c3: rotate_status(&ev.lattice, s1, w * w),
        }
    } else {
        Classification {
            beta,
            c1: s1,
            c2: orbit_with(ev, &beta, &c2, depth, r_base, snap).status,
            c3: orbit_with(ev, &beta, &c3, depth, r_base, snap).status,
        }
    }
}

pub fn classify_beta(ev: &EllipticEvaluator, beta: C64, depth: usize, r_base: f64) -> Classification {
    classify_beta_with(ev, beta, depth, r_base, Snap::Absolute(ev.prepole_tolerance))
}

/// Raster gray level of an orbit status.
pub fn class_value(s: &OrbitStatus) -> u8 {
    match *s {
        OrbitStatus::Bounded(_) => 0,
        OrbitStatus::Prepole { n, .. } => 64 + 24 * (n.clamp(1, 6) as u8 - 1),
        OrbitStatus::NearPoleUnresolved(_) => 224,
        OrbitStatus::Escaping(_) => 255,
    }
}

/// Escaping if the orbit from the pixel centre satisfies the certificate;
/// otherwise the first level whose pole set meets the pixel (to first order),
/// else the centre's status.
pub fn classify_pixel(ev: &EllipticEvaluator, beta: C64, start: C64, depth: usize, r_base: f64, half_diag: f64) -> OrbitStatus {
    let s = orbit_with(ev, &beta, &start, depth, r_base, Snap::Absolute(ev.prepole_tolerance)).status;
    if let OrbitStatus::Escaping(_) = s {
        return s;
    }
    orbit_with(ev, &beta, &start, depth, r_base, Snap::Param(half_diag)).status
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeMapParams {
    pub center: C64,
    pub radius: f64,
    pub resolution: usize,
    pub depth: usize,
    pub r_base: f64,
}

#[derive(Clone, Debug)]
pub struct EscapeMap {
    pub params: EscapeMapParams,
    /// row-major, row 0 at the top (largest Im β)
    pub statuses: Vec<OrbitStatus>,
}

impl EscapeMap {
    pub fn beta_at(p: &EscapeMapParams, i: usize, j: usize) -> C64 {
        let n = p.resolution as f64;
        let x = 2.0 * (i as f64 + 0.5) / n - 1.0;
        let y = 1.0 - 2.0 * (j as f64 + 0.5) / n;
        p.center + C64::new(x, y) * p.radius
    }

    pub fn compute(ev: &EllipticEvaluator, params: EscapeMapParams) -> EscapeMap {
        let n = params.resolution;
        let half_diag = params.radius / n as f64 * 2f64.sqrt();
        let c1 = ev.critical_points().0;
        let statuses = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let beta = Self::beta_at(&params, idx % n, idx / n);
                classify_pixel(ev, beta, c1, params.depth, params.r_base, half_diag)
            })
            .collect();
        EscapeMap { params, statuses }
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for s in &self.statuses {
            let i = match s {
                OrbitStatus::Escaping(_) => 0,
                OrbitStatus::Prepole { .. } => 1,
                OrbitStatus::Bounded(_) => 2,
                OrbitStatus::NearPoleUnresolved(_) => 3,
            };
            c[i] += 1;
        }
        c
    }

    /// Plain PGM (P2), one gray level per pixel, 16 values per line.
    pub fn to_pgm(&self) -> String {
        let n = self.params.resolution;
        let mut s = format!("P2\n{n} {n}\n255\n");
        for row in self.statuses.chunks(n) {
            for chunk in row.chunks(16) {
                let line: Vec<String> = chunk.iter().map(|st| class_value(st).to_string()).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
        s
    }
}

/// Orbit of c₂ compared with λ₂/λ₁ times the orbit of c₁: largest relative
/// deviation at step k divided by 2^k.
pub fn symmetry_defect(ev: &EllipticEvaluator, beta: C64, steps: usize) -> f64 {
    let (c1, c2, _) = ev.critical_points();
    let w = ev.lattice.lambda2 / ev.lattice.lambda1;
    let a = orbit_with(ev, &beta, &c1, steps, 0.0, Snap::Absolute(0.0));
    let b = orbit_with(ev, &beta, &c2, steps, 0.0, Snap::Absolute(0.0));
    let mut worst: f64 = 0.0;
    for k in 1..a.points.len().min(b.points.len()) {
        let rel = (b.points[k] - a.points[k] * w).norm() / a.points[k].norm();
        worst = worst.max(rel / 2f64.powi(k as i32));
    }
    worst
}

/// The rotation e^{2πi/3} as a complex number; the factor relating critical
/// orbits on the positively oriented triangular lattice.
pub fn orbit_rotation() -> C64 {
    rho()
}

/// Multiprecision orbit of c₁, c₂ or c₃ (index 1..=3) on the pole-critical lattice.
pub fn mp_critical_point(ev: &MpEvaluator, i: usize) -> Cx<Mp> {
    let half = ev.unit().lift(0.5);
    let g1 = &ev.lattice.gamma1;
    let g2 = &ev.lattice.gamma2;
    match i {
        1 => crate::mp::scale(g1, &half),
        2 => crate::mp::scale(g2, &half),
        _ => crate::mp::scale(&(g1.clone() + g2.clone()), &half),
    }
}

pub fn to_f64_points<T: Real>(pts: &[Cx<T>]) -> Vec<C64> {
    pts.iter().map(to_c64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::make_pole_critical_lattice;

    fn gamma() -> EllipticEvaluator {
        EllipticEvaluator::new(make_pole_critical_lattice(-1).unwrap()).unwrap()
    }

    #[test]
    fn beta_one_hits_pole_at_first_step() {
        let ev = gamma();
        let (c1, _, _) = ev.critical_points();
        let t = orbit(&ev, C64::new(1.0, 0.0), c1, 5, 1.0);
        match t.status {
            OrbitStatus::Prepole { n, pole } => {
                assert_eq!(n, 1);
                assert_eq!((pole.l, pole.m), (-1, 0));
            }
            s => panic!("{s:?}"),
        }
        let h = h_n(&ev, C64::new(1.0, 0.0), 2);
        assert_eq!(h.singular.map(|s| s.0), Some(1));
    }

    #[test]
    fn product_formula_matches_chain_rule_and_closed_form() {
        let ev = gamma();
        let (c1, _, _) = ev.critical_points();
        let p1 = ev.wp(c1).unwrap();
        let beta = C64::new(1.013, 0.021);
        for n in 1..=6 {
            let pm = param_map(&ev, &p1, &beta, n).unwrap();
            let cr = chain_rule_derivative(&pm, &p1);
            assert!((pm.derivative - cr).norm() < 1e-9 * cr.norm(), "n={n}");
        }
        let z1 = beta * p1;
        let closed = ev.wp(z1).unwrap() + beta * ev.wp_prime(z1).unwrap() * p1;
        let d2 = h_n_prime(&ev, beta, 2).unwrap();
        assert!((closed - d2).norm() < 1e-9 * closed.norm());
        assert!((h_n_prime(&ev, beta, 1).unwrap() - p1).norm() < 1e-15 * p1.norm());
    }

    #[test]
    fn pgm_layout() {
        let ev = gamma();
        let p = EscapeMapParams { center: C64::new(1.0, 0.0), radius: 0.05, resolution: 8, depth: 3, r_base: 1.6 };
        let m = EscapeMap::compute(&ev, p);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with("P2\n8 8\n255\n"));
        assert_eq!(pgm.split_whitespace().count(), 4 + 64);
    }
}
