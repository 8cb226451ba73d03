//! Nested parameter cylinders A_n = h_n⁻¹(U(b⁽ⁿ⁾, ε)) around β = 1 on a
//! pole-critical triangular lattice, built in multiprecision.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{mp_critical_point, param_map, DynError, Evaluator, ParamMap};
use crate::lattice::{
    count_poles_in_half_annulus, make_pole_critical_lattice, pole_is_valid, select_poles, LatticeError,
    LatticePoint,
};
use crate::mp::{abs_f64, csqrt, lift_c, to_c64, Cx, Mp};
use crate::util::{diameter, point_in_polygon, polygon_is_simple, shoelace, winding_number};
use crate::weierstrass::{estimate_pole_constants, EllipticEvaluator, MpEvaluator, PoleLocalData, WpError};

/// sin(π/8)
pub fn alpha() -> f64 {
    (PI / 8.0).sin()
}

/// Upper limit for r from the conformality argument.
pub fn r_limit() -> f64 {
    0.25 - 1.0 / (2.0 * alpha() + 4.0)
}

#[derive(Debug, Error)]
pub enum CantorError {
    #[error("construction infeasible: {0}")]
    Infeasible(String),
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("no root of h_{level} = {pole:?} found")]
    RootNotFound { level: usize, pole: LatticePoint },
    #[error(transparent)]
    Dyn(#[from] DynError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Eval(#[from] WpError),
}

/// Requested growth factor a.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum APolicy {
    /// a = 2·a₀
    Auto,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConstants {
    pub eps0: f64,
    pub eps: f64,
    pub r: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    pub a1: f64,
    pub a0: f64,
    pub a0_terms: [f64; 7],
    pub a: f64,
    pub phi: f64,
    pub alpha: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    /// ℘(c₁)
    pub p1: C64,
    pub containment_verified: bool,
    pub one_to_one_checked: bool,
    /// "midpoint" or "scan"
    pub phi_method: String,
}

impl BuildConstants {
    /// R_1 for n = 1, a^{n−1}R₁ otherwise.
    pub fn radius(&self, n: usize) -> f64 {
        if n <= 1 {
            self.r1
        } else {
            self.a.powi(n as i32 - 1) * self.r1
        }
    }

    pub fn segment(&self, apex: C64) -> Segment {
        Segment { apex, eps: self.eps }
    }

    /// Two-sided bound on |h_n′| over A_n (n ≥ 2).
    pub fn derivative_bounds(&self, n: usize) -> (f64, f64) {
        let k = n as f64;
        let base = self.a.powf(3.0 * k * (k - 1.0) / 4.0) * self.r1.powf((3.0 * k - 1.0) / 2.0);
        let q = self.c2 / self.c1.powf(1.5);
        let lo = q.powf(k - 1.0) * base / (2.0 * (1.0 + self.r));
        let hi = 5.0 / (2.0 * (1.0 - self.r)) * (2f64.powf(1.5) * q).powf(k - 1.0) * base;
        (lo, hi)
    }

    pub fn distortion_bound(&self, n: usize) -> f64 {
        5.0 * (1.0 + self.r) / (1.0 - self.r) * 2f64.powf(1.5 * (n as f64 - 1.0))
    }

    /// diam(A_n) upper bound; 2r for n = 1.
    pub fn diameter_bound(&self, n: usize) -> f64 {
        if n <= 1 {
            return 2.0 * self.r;
        }
        2.0 * self.eps / self.derivative_bounds(n).0
    }

    /// ε-scale lower bound: 2ε(1−cos 3π/8) over the largest admissible |h_n′|.
    pub fn diameter_lower_bound(&self, n: usize) -> f64 {
        let d = if n <= 1 { self.p1.norm() } else { self.derivative_bounds(n).1 };
        2.0 * self.eps * (1.0 - (3.0 * PI / 8.0).cos()) / d
    }

    pub fn big_m(&self) -> f64 {
        let r = self.r;
        8.0 * (1.0 - r).powi(6) * self.c1.powi(3) / (5f64.powi(6) * (1.0 + r).powi(6) * self.c2.powi(2))
    }

    pub fn big_m_prime(&self) -> f64 {
        let r = self.r;
        3.0 * self.eps.powi(2) * (1.0 - r).powi(4) * self.c1.powi(3)
            / (2f64.powi(7) * 5f64.powi(4) * r * r * (1.0 + r).powi(2) * self.c2.powi(2) * self.r1.powi(2))
    }

    /// Density lower bound for children of a level-n cylinder.
    pub fn density_bound(&self, n: usize) -> f64 {
        if n <= 1 {
            self.big_m_prime() / self.radius(2)
        } else {
            self.big_m() / (2f64.powi(9 * n as i32) * self.radius(n + 1))
        }
    }
}

/// U(z₀, ε) = {|Arg(z−z₀)| ≤ 3π/8, |z−z₀| ≤ ε}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub apex: C64,
    pub eps: f64,
}

impl Segment {
    pub const HALF_ANGLE: f64 = 3.0 * PI / 8.0;

    pub fn area(&self) -> f64 {
        3.0 * PI * self.eps * self.eps / 8.0
    }

    pub fn contains(&self, z: C64) -> bool {
        let u = z - self.apex;
        u.norm() <= self.eps && (u.norm() == 0.0 || u.arg().abs() <= Self::HALF_ANGLE)
    }

    /// Boundary offsets from the apex, counterclockwise starting at the apex:
    /// lower edge outward, arc, upper edge inward.
    pub fn boundary_offsets(eps: f64, n: usize) -> Vec<C64> {
        let ne = n / 4;
        let na = n - 2 * ne + 1;
        let lo = C64::from_polar(1.0, -Self::HALF_ANGLE);
        let hi = C64::from_polar(1.0, Self::HALF_ANGLE);
        let mut v = Vec::with_capacity(n);
        for k in 0..ne {
            v.push(lo * (eps * k as f64 / ne as f64));
        }
        for j in 0..na {
            let t = -Self::HALF_ANGLE + 2.0 * Self::HALF_ANGLE * j as f64 / (na - 1) as f64;
            v.push(C64::from_polar(eps, t));
        }
        for k in 1..ne {
            v.push(hi * (eps * (ne - k) as f64 / ne as f64));
        }
        v
    }
}

fn lattice_min_pole_distance_ok(eps: f64, ev: &EllipticEvaluator) -> bool {
    eps < ev.lattice.min_generator() / 3.0
}

/// Solve β℘(z) = w for z − b in the sector, b = 0.
fn preimage_in_segment(ev: &EllipticEvaluator, beta: C64, w: C64) -> Option<C64> {
    let mut u = (beta / w).sqrt();
    if u.arg().abs() > Segment::HALF_ANGLE + 0.2 {
        u = -u;
    }
    for _ in 0..60 {
        let (wp, wpp) = ev.eval_point(u).ok().map(|p| (p.wp, p.wpp))?;
        let f = beta * wp - w;
        let step = f / (beta * wpp);
        u -= step;
        if step.norm() < 1e-15 * u.norm() {
            return Some(u);
        }
    }
    None
}

/// Sampled check of {|z| > R₂, φ ≤ arg z ≤ φ+π} ⊆ g_β(U(b,ε)) over β on the
/// circle |β−1| = r and its centre.
pub fn verify_containment(ev: &EllipticEvaluator, eps: f64, r2: f64, phi: f64, r: f64, samples: usize) -> bool {
    let betas: Vec<C64> = std::iter::once(C64::new(1.0, 0.0))
        .chain((0..4).map(|k| C64::new(1.0, 0.0) + C64::from_polar(r, k as f64 * PI / 2.0 + PI / 4.0)))
        .collect();
    let per = (samples / betas.len()).max(12);
    let arc = per / 3;
    let ray = (per - arc) / 2;
    let mut pts = Vec::new();
    for j in 0..arc {
        pts.push(C64::from_polar(r2, phi + PI * j as f64 / (arc - 1) as f64));
    }
    for k in 0..ray {
        let rad = r2 * 2f64.powf(40.0 * k as f64 / ray as f64);
        pts.push(C64::from_polar(rad, phi));
        pts.push(C64::from_polar(rad, phi + PI));
    }
    let tol = 1e-9;
    betas.iter().all(|&beta| {
        pts.iter().all(|&w| match preimage_in_segment(ev, beta, w) {
            Some(u) => u.norm() <= eps * (1.0 + tol) && u.arg().abs() <= Segment::HALF_ANGLE + tol,
            None => false,
        })
    })
}

/// Sampled injectivity of ℘ on U(0, ε): no two of `pairs` random pairs share an image.
pub fn check_one_to_one(ev: &EllipticEvaluator, eps: f64, pairs: usize, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let rad = eps * rng.gen::<f64>().sqrt().max(1e-3);
        let t = rng.gen_range(-Segment::HALF_ANGLE..=Segment::HALF_ANGLE);
        C64::from_polar(rad, t)
    };
    for _ in 0..pairs {
        let (z1, z2) = (draw(&mut rng), draw(&mut rng));
        if (z1 - z2).norm() < 1e-9 * eps {
            continue;
        }
        let (Ok(w1), Ok(w2)) = (ev.wp(z1), ev.wp(z2)) else { return false };
        if (w1 - w2).norm() <= 1e-9 * w1.norm().max(w2.norm()) {
            return false;
        }
    }
    true
}

/// Build constants from sampled pole data. `eps` overrides the dyadic choice.
pub fn choose_constants_with(
    ev: &EllipticEvaluator,
    pd: &PoleLocalData,
    a: APolicy,
    eps: Option<f64>,
) -> Result<BuildConstants, CantorError> {
    let r = pd.r;
    if !(r > 0.0 && r < r_limit()) {
        return Err(CantorError::InvalidConstants(format!("r = {r} outside (0, {})", r_limit())));
    }
    let (c1pt, _, _) = ev.critical_points();
    let p1 = ev.wp(c1pt)?;
    let pa = p1.norm();
    let cap = pd.eps0.min(pa / 3.0).min(r * pa);
    let eps = match eps {
        Some(e) => {
            if !(e > 0.0 && e < cap && lattice_min_pole_distance_ok(e, ev)) {
                return Err(CantorError::InvalidConstants(format!("eps = {e} must lie in (0, {cap})")));
            }
            if !check_one_to_one(ev, e, 1000, 7) {
                return Err(CantorError::InvalidConstants(format!("wp not one-to-one on U(b, {e})")));
            }
            e
        }
        None => {
            let mut e = 1.0;
            let mut found = None;
            for _ in 0..40 {
                if e < cap && check_one_to_one(ev, e, 1000, 7) {
                    found = Some(e);
                    break;
                }
                e *= 0.5;
            }
            found.ok_or_else(|| CantorError::Infeasible("no admissible eps after 40 halvings".into()))?
        }
    };
    let r1 = pa - 2.0 * eps;
    let al = alpha();
    let (c1, c2) = (pd.c1, pd.c2);
    let r2_min = c1 / ((1.0 - al) * eps * eps);
    let a1 = r2_min * (1.0 + 1e-9) / r1;
    let terms = [
        2.0,
        a1,
        1.0 / r1,
        3.0 * c1.powf(1.5) / (c2 * r1),
        6f64.powi(4) * c1.powi(6) / (c2.powi(4) * r1.powi(5)),
        (4.0 * eps * (1.0 + r) * c1.powf(1.5) / (c2 * r1.powf(2.5))).powf(2.0 / 3.0),
        c1.sqrt() / (c2.cbrt() * r1.sqrt()),
    ];
    let a0 = terms.iter().cloned().fold(f64::MIN, f64::max);
    let a = match a {
        APolicy::Auto => 2.0 * a0,
        APolicy::Value(v) if v > a0 && v.is_finite() => v,
        APolicy::Value(v) => {
            return Err(CantorError::InvalidConstants(format!("a = {v} must exceed a0 = {a0}")));
        }
    };
    let r2 = a * r1;
    let mut phi = 0.5 * (pd.m1 + pd.m2) - PI / 2.0;
    let mut method = "midpoint".to_string();
    let mut ok = verify_containment(ev, eps, r2, phi, r, 1000);
    if !ok {
        let start = phi;
        for k in 1..64 {
            let off = ((k + 1) / 2) as f64 * 2.0 * PI / 64.0 * if k % 2 == 1 { 1.0 } else { -1.0 };
            let cand = start + off;
            if verify_containment(ev, eps, r2, cand, r, 1000) {
                phi = cand;
                method = "scan".into();
                ok = true;
                break;
            }
        }
    }
    Ok(BuildConstants {
        eps0: pd.eps0,
        eps,
        r,
        r1,
        r2,
        a1,
        a0,
        a0_terms: terms,
        a,
        phi,
        alpha: al,
        c1,
        c2,
        m1: pd.m1,
        m2: pd.m2,
        p1,
        containment_verified: ok,
        one_to_one_checked: true,
        phi_method: method,
    })
}

pub fn choose_constants(ev: &EllipticEvaluator, pd: &PoleLocalData, a: APolicy) -> Result<BuildConstants, CantorError> {
    choose_constants_with(ev, pd, a, None)
}

/// One node of the cylinder tree. Level 0 is the disk B(1, r).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cylinder {
    pub id: usize,
    pub level: usize,
    pub parent_id: Option<usize>,
    pub pole: Option<C64>,
    pub pole_index: Option<(i64, i64)>,
    /// β_n with h_n(β_n) = b⁽ⁿ⁾ (apex preimage)
    pub root: C64,
    pub root_digits: [String; 2],
    pub root_offset_from_parent: C64,
    pub interior_sample: C64,
    pub interior_offset: C64,
    pub boundary: Vec<C64>,
    /// boundary samples minus the root
    pub boundary_offset: Vec<C64>,
    pub diam: f64,
    pub area: f64,
    pub deriv_min: f64,
    pub deriv_max: f64,
    pub distortion: f64,
    /// max |h_n(sample) − target| / ε
    pub residual: f64,
    pub injective: bool,
    /// all boundary samples inside the parent polygon
    pub nested: bool,
    #[serde(skip)]
    pub root_mp: Option<Cx<Mp>>,
    #[serde(skip)]
    pub interior_mp: Option<Cx<Mp>>,
}

impl Cylinder {
    pub fn lattice_pole(&self, ev: &MpEvaluator) -> Option<LatticePoint> {
        self.pole_index.map(|(l, m)| ev.lattice_f64.lattice_point(l, m))
    }
}

/// Multiprecision context for one construction.
pub struct Construction {
    pub ev: MpEvaluator,
    pub ev64: EllipticEvaluator,
    pub pole_data: PoleLocalData,
    pub consts: BuildConstants,
    /// ℘(c₁) at working precision
    pub p1: Cx<Mp>,
    pub bits: usize,
    pub samples: usize,
    pub m: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    pub m: i64,
    pub r: f64,
    pub eps0: f64,
    pub eps: Option<f64>,
    pub a: APolicy,
    /// deepest level the precision must support
    pub depth: usize,
    pub samples: usize,
}

impl Default for ConstructionParams {
    fn default() -> Self {
        ConstructionParams { m: -1, r: 0.04, eps0: 0.5, eps: None, a: APolicy::Auto, depth: 4, samples: 64 }
    }
}

/// Working precision for levels up to `depth`.
pub fn precision_for(consts: &BuildConstants, depth: usize) -> usize {
    let l = consts.derivative_bounds(depth.max(2) + 1).1.log2();
    let bits = (l.max(0.0) as usize + 160).div_ceil(64) * 64;
    bits.max(192)
}

fn lift_to(bits: usize, z: C64) -> Cx<Mp> {
    Cx::new(Mp::from_f64(z.re, bits), Mp::from_f64(z.im, bits))
}

/// f64 evaluator, pole data and constants without the multiprecision setup.
pub fn build_constants(p: &ConstructionParams) -> Result<(EllipticEvaluator, PoleLocalData, BuildConstants), CantorError> {
    let lat = make_pole_critical_lattice(p.m)?;
    let ev64 = EllipticEvaluator::new(lat)?;
    let pd = estimate_pole_constants(&ev64, p.eps0, p.r)?;
    let consts = choose_constants_with(&ev64, &pd, p.a, p.eps)?;
    Ok((ev64, pd, consts))
}

impl Construction {
    pub fn new(p: &ConstructionParams) -> Result<Self, CantorError> {
        if p.samples < 16 {
            return Err(CantorError::InvalidConstants("at least 16 boundary samples".into()));
        }
        let (ev64, pd, consts) = build_constants(p)?;
        let bits = precision_for(&consts, p.depth);
        let ev = MpEvaluator::pole_critical(p.m, bits)?;
        let c1 = mp_critical_point(&ev, 1);
        let p1 = ev.eval(&c1)?.wp;
        Ok(Construction { ev, ev64, pole_data: pd, consts, p1, bits, samples: p.samples, m: p.m })
    }

    pub fn lift(&self, z: C64) -> Cx<Mp> {
        lift_to(self.bits, z)
    }

    pub fn pole_mp(&self, b: &LatticePoint) -> Cx<Mp> {
        self.ev.lattice.point(b.l, b.m)
    }

    pub fn h(&self, beta: &Cx<Mp>, n: usize) -> Result<ParamMap<Mp>, DynError> {
        param_map(&self.ev, &self.p1, beta, n)
    }

    /// Damped Newton on h_n(β) = w from `seed`. Stops once the step is at
    /// working precision; succeeds if the residual is below 2^{-bits/2}·|w|.
    pub fn newton(&self, seed: Cx<Mp>, w: &Cx<Mp>, n: usize) -> Option<(Cx<Mp>, ParamMap<Mp>)> {
        let accept = 2f64.powi(-(self.bits as i32) / 2) * abs_f64(w).max(1.0);
        let tiny = 2f64.powi(-(self.bits as i32) + 24);
        let mut beta = seed;
        let mut pm = self.h(&beta, n).ok()?;
        let mut res = abs_f64(&(pm.value.clone() - w.clone()));
        for _ in 0..80 {
            let step = (pm.value.clone() - w.clone()) / pm.derivative.clone();
            if abs_f64(&step) <= tiny * abs_f64(&beta) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = beta.clone() - crate::mp::scale(&step, &Mp::from_f64(t, 64));
                if let Ok(q) = self.h(&cand, n) {
                    let r2 = abs_f64(&(q.value.clone() - w.clone()));
                    if r2 < res || (t == 1.0 && r2 <= accept) {
                        beta = cand;
                        pm = q;
                        res = r2;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (res <= accept).then_some((beta, pm))
    }

    /// The disk A₀ = B(1, r).
    pub fn root_disk(&self) -> Cylinder {
        let n = self.samples;
        let r = self.consts.r;
        let boundary_offset: Vec<C64> =
            (0..n).map(|k| C64::from_polar(r, 2.0 * PI * k as f64 / n as f64)).collect();
        let one = C64::new(1.0, 0.0);
        Cylinder {
            id: 0,
            level: 0,
            parent_id: None,
            pole: None,
            pole_index: None,
            root: one,
            root_digits: ["1".into(), "0".into()],
            root_offset_from_parent: C64::new(0.0, 0.0),
            interior_sample: one,
            interior_offset: C64::new(0.0, 0.0),
            boundary: boundary_offset.iter().map(|d| one + d).collect(),
            boundary_offset,
            diam: 2.0 * r,
            area: PI * r * r,
            deriv_min: 1.0,
            deriv_max: 1.0,
            distortion: 1.0,
            residual: 0.0,
            injective: true,
            nested: true,
            root_mp: Some(self.lift(one)),
            interior_mp: Some(self.lift(one)),
        }
    }

    /// Root of h_n(β) = b inside `parent` (level n−1).
    pub fn solve_prepole_param(&self, parent: &Cylinder, b: &LatticePoint, n: usize) -> Result<Cx<Mp>, CantorError> {
        assert_eq!(parent.level + 1, n);
        let bmp = self.pole_mp(b);
        let proot = parent.root_mp.clone().expect("parent root");
        let inside = |beta: &Cx<Mp>| {
            let d = to_c64(&(beta.clone() - proot.clone()));
            point_in_polygon(d, &parent.boundary_offset)
        };
        let seed = self.seed_root(parent, &bmp, n);
        if let Some(seed) = seed {
            if let Some((beta, _)) = self.newton(seed, &bmp, n) {
                if inside(&beta) {
                    return Ok(beta);
                }
            }
        }
        self.solve_by_winding(parent, &bmp, n)
            .ok_or(CantorError::RootNotFound { level: n, pole: *b })
    }

    /// β_{n−1} + u/h′_{n−1}(β_{n−1}) with β_{n−1}℘(b_{n−1} + u) = b.
    fn seed_root(&self, parent: &Cylinder, bmp: &Cx<Mp>, n: usize) -> Option<Cx<Mp>> {
        let proot = parent.root_mp.clone()?;
        if n == 1 {
            return parent.interior_mp.clone();
        }
        let (l, m) = parent.pole_index?;
        let pb = self.ev.lattice.point(l, m);
        let target = bmp.clone() / proot.clone();
        let mut u = csqrt(&(Cx::new(Mp::from_f64(1.0, 64), Mp::from_f64(0.0, 64)) / target.clone()));
        let tol = 2f64.powi(-(self.bits as i32) + 24);
        for _ in 0..60 {
            let p = self.ev.eval(&(pb.clone() + u.clone())).ok()?;
            let step = (p.wp - target.clone()) / p.wpp;
            u = u - step.clone();
            if abs_f64(&step) <= tol * abs_f64(&u) {
                break;
            }
        }
        let d = self.h(&proot, n - 1).ok()?.derivative;
        Some(proot + u / d)
    }

    /// Subdivide the parent's bounding square, keep cells where
    /// (h_n − b)(β − β_{n−1})² winds around 0, and polish the cell centre.
    pub fn solve_by_winding(&self, parent: &Cylinder, bmp: &Cx<Mp>, n: usize) -> Option<Cx<Mp>> {
        let proot = parent.root_mp.clone()?;
        let (mut lo, mut hi) = (C64::new(f64::MAX, f64::MAX), C64::new(f64::MIN, f64::MIN));
        for d in &parent.boundary_offset {
            lo = C64::new(lo.re.min(d.re), lo.im.min(d.im));
            hi = C64::new(hi.re.max(d.re), hi.im.max(d.im));
        }
        let half = 0.5 * (hi.re - lo.re).max(hi.im - lo.im) * 1.02;
        let centre = (lo + hi) * 0.5;
        let f = |d: C64| -> Option<C64> {
            let beta = proot.clone() + self.lift(d);
            let pm = self.h(&beta, n).ok()?;
            let dd = self.lift(d);
            let v = (pm.value - bmp.clone()) * dd.clone() * dd;
            Some(to_c64(&v))
        };
        let winds = |c: C64, h: f64| -> Option<i64> {
            let mut k = 16;
            while k <= 512 {
                let mut vals = Vec::with_capacity(4 * k);
                let corners = [c + C64::new(-h, -h), c + C64::new(h, -h), c + C64::new(h, h), c + C64::new(-h, h)];
                for s in 0..4 {
                    let (a, b) = (corners[s], corners[(s + 1) % 4]);
                    for j in 0..k {
                        vals.push(f(a + (b - a) * (j as f64 / k as f64))?);
                    }
                }
                let smooth = (0..vals.len()).all(|i| {
                    let (x, y) = (vals[i], vals[(i + 1) % vals.len()]);
                    (y / x).arg().abs() < PI / 3.0
                });
                if smooth {
                    return Some(winding_number(&vals, C64::new(0.0, 0.0)));
                }
                k *= 2;
            }
            None
        };
        let mut queue = vec![(centre, half)];
        let mut evals = 0;
        while let Some((c, h)) = queue.pop() {
            evals += 1;
            if evals > 400 {
                return None;
            }
            match winds(c, h) {
                Some(0) => continue,
                Some(_) | None => {
                    if h < half * 1e-3 {
                        let seed = proot.clone() + self.lift(c);
                        if let Some((beta, _)) = self.newton(seed, bmp, n) {
                            let d = to_c64(&(beta.clone() - proot.clone()));
                            if point_in_polygon(d, &parent.boundary_offset) {
                                return Some(beta);
                            }
                        }
                        continue;
                    }
                    let q = h * 0.5;
                    for off in [C64::new(-q, -q), C64::new(q, -q), C64::new(q, q), C64::new(-q, q)] {
                        queue.push((c + off, q));
                    }
                }
            }
        }
        None
    }

    /// Pull ∂U(b, ε) back through h_n by continuation from the root.
    pub fn build_cylinder(
        &self,
        parent: &Cylinder,
        b: &LatticePoint,
        n: usize,
        root: Cx<Mp>,
        samples: usize,
    ) -> Result<Cylinder, CantorError> {
        let bmp = self.pole_mp(b);
        let eps = self.consts.eps;
        let offs = Segment::boundary_offsets(eps, samples);
        let fail = || CantorError::RootNotFound { level: n, pole: *b };
        let mut beta = root.clone();
        let mut pm = self.h(&beta, n)?;
        let mut prev_w = C64::new(0.0, 0.0);
        let mut pts: Vec<Cx<Mp>> = Vec::with_capacity(samples);
        let mut derivs = Vec::with_capacity(samples);
        let mut residual: f64 = 0.0;
        for (j, s) in offs.iter().enumerate() {
            if j > 0 {
                let w = bmp.clone() + self.lift(*s);
                let seed = beta.clone() + self.lift(*s - prev_w) / pm.derivative.clone();
                let (nb, npm) = self.newton(seed, &w, n).ok_or_else(fail)?;
                residual = residual.max(abs_f64(&(npm.value.clone() - w)) / eps);
                beta = nb;
                pm = npm;
            }
            prev_w = *s;
            pts.push(beta.clone());
            derivs.push(abs_f64(&pm.derivative));
        }
        let w_in = bmp.clone() + self.lift(C64::new(eps / 2.0, 0.0));
        let d0 = self.h(&root, n)?.derivative;
        let seed = root.clone() + self.lift(C64::new(eps / 2.0, 0.0)) / d0;
        let (interior, ipm) = self.newton(seed, &w_in, n).ok_or_else(fail)?;
        derivs.push(abs_f64(&ipm.derivative));
        let boundary_offset: Vec<C64> = pts.iter().map(|p| to_c64(&(p.clone() - root.clone()))).collect();
        let injective = polygon_is_simple(&boundary_offset) && shoelace(&boundary_offset) > 0.0;
        if !injective && samples < 256 {
            return self.build_cylinder(parent, b, n, root, 256);
        }
        let proot = parent.root_mp.clone().expect("parent root");
        let rel = to_c64(&(root.clone() - proot));
        let nested = boundary_offset
            .iter()
            .chain(std::iter::once(&to_c64(&(interior.clone() - root.clone()))))
            .all(|d| point_in_polygon(rel + d, &parent.boundary_offset));
        let dmin = derivs.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = derivs.iter().cloned().fold(0.0, f64::max);
        let rootc = to_c64(&root);
        Ok(Cylinder {
            id: 0,
            level: n,
            parent_id: Some(parent.id),
            pole: Some(b.z),
            pole_index: Some((b.l, b.m)),
            root: rootc,
            root_digits: [root.re.to_decimal(), root.im.to_decimal()],
            root_offset_from_parent: rel,
            interior_sample: to_c64(&interior),
            interior_offset: to_c64(&(interior.clone() - root.clone())),
            boundary: boundary_offset.iter().map(|d| rootc + d).collect(),
            diam: diameter(&boundary_offset),
            area: shoelace(&boundary_offset).abs(),
            boundary_offset,
            deriv_min: dmin,
            deriv_max: dmax,
            distortion: dmax / dmin,
            residual,
            injective,
            nested,
            root_mp: Some(root),
            interior_mp: Some(interior),
        })
    }

    /// Level-1 cylinder h₁⁻¹(U(℘(c₁), ε)).
    pub fn level_one(&self, disk: &Cylinder) -> Result<Cylinder, CantorError> {
        let b = self.ev.lattice_f64.lattice_point(self.m, 0);
        let root = self.solve_prepole_param(disk, &b, 1)?;
        self.build_cylinder(disk, &b, 1, root, self.samples)
    }

    pub fn child(&self, parent: &Cylinder, b: &LatticePoint) -> Result<Cylinder, CantorError> {
        let n = parent.level + 1;
        let root = self.solve_prepole_param(parent, b, n)?;
        self.build_cylinder(parent, b, n, root, self.samples)
    }

    pub fn candidate_poles(&self, n: usize, k: usize) -> Vec<LatticePoint> {
        let c = &self.consts;
        select_poles(&self.ev.lattice_f64, c.radius(n), c.phi, c.eps, k)
    }

    /// Cylinder tree to `depth` with `branching` children per node.
    pub fn build_family(&self, depth: usize, branching: usize) -> Result<CylinderTree, CantorError> {
        if depth < 1 || branching < 1 {
            return Err(CantorError::InvalidConstants("depth and branching must be positive".into()));
        }
        let disk = self.root_disk();
        let mut nodes = vec![disk.clone()];
        let mut a1 = self.level_one(&disk)?;
        a1.id = 1;
        nodes.push(a1);
        let mut failures = Vec::new();
        let mut frontier = vec![1usize];
        for n in 2..=depth {
            let extra = branching + 4;
            let poles = self.candidate_poles(n, extra);
            let parents: Vec<Cylinder> = frontier.iter().map(|&i| nodes[i].clone()).collect();
            let built: Vec<(Vec<Cylinder>, Vec<String>)> = parents
                .par_iter()
                .map(|par| {
                    let mut kids = Vec::new();
                    let mut errs = Vec::new();
                    for b in &poles {
                        if kids.len() == branching {
                            break;
                        }
                        match self.child(par, b) {
                            Ok(c) => kids.push(c),
                            Err(e) => errs.push(format!("level {n} parent {}: {e}", par.id)),
                        }
                    }
                    (kids, errs)
                })
                .collect();
            let mut next = Vec::new();
            for (kids, errs) in built {
                failures.extend(errs);
                if kids.is_empty() {
                    return Err(CantorError::RootNotFound { level: n, pole: poles[0] });
                }
                for mut c in kids {
                    c.id = nodes.len();
                    next.push(c.id);
                    nodes.push(c);
                }
            }
            frontier = next;
        }
        Ok(CylinderTree {
            consts: self.consts.clone(),
            bits: self.bits,
            depth,
            branching,
            nodes,
            failures,
        })
    }

    /// Uniformly drawn valid poles of P⁺(0, R_n, 2R_n).
    pub fn random_poles(&self, n: usize, k: usize, seed: u64) -> Vec<LatticePoint> {
        let c = &self.consts;
        let r = c.radius(n);
        let lat = &self.ev.lattice_f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<LatticePoint> = Vec::with_capacity(k);
        let mut tries = 0;
        while out.len() < k && tries < 1000 * k {
            tries += 1;
            let rad = (r * r + rng.gen::<f64>() * 3.0 * r * r).sqrt();
            let t = c.phi + PI * rng.gen::<f64>();
            let p = lat.nearest_point(C64::from_polar(rad, t));
            if pole_is_valid(p.z, r, c.phi, c.eps) && !out.iter().any(|q| (q.l, q.m) == (p.l, p.m)) {
                out.push(p);
            }
        }
        out
    }

    /// Full-branching density of 𝒰_{n+1} in `parent`: N_{n+1} times the mean
    /// area of `k` children at random poles, over the parent's area.
    pub fn full_branching_density(&self, parent: &Cylinder, k: usize, seed: u64) -> Result<DensityEstimate, CantorError> {
        let n = parent.level + 1;
        let c = &self.consts;
        let (count, exact) = count_poles_in_half_annulus(&self.ev.lattice_f64, c.radius(n), c.phi, c.eps);
        let poles = self.random_poles(n, k, seed ^ (parent.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let areas: Vec<f64> = poles
            .par_iter()
            .filter_map(|b| self.child(parent, b).ok().map(|ch| ch.area))
            .collect();
        if areas.is_empty() {
            return Err(CantorError::RootNotFound { level: n, pole: poles.first().copied().unwrap_or(LatticePoint { l: 0, m: 0, z: C64::new(0.0, 0.0) }) });
        }
        let mean = areas.iter().sum::<f64>() / areas.len() as f64;
        let var = areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (areas.len().max(2) - 1) as f64;
        let se = (var / areas.len() as f64).sqrt();
        Ok(DensityEstimate {
            parent_id: parent.id,
            level: parent.level,
            children_sampled: areas.len(),
            n_available: count,
            n_exact: exact,
            density: count * mean / parent.area,
            stderr: count * se / parent.area,
        })
    }

    /// Monte Carlo area of a cylinder by forward evaluation h_n(β) ∈ U(b, ε).
    pub fn mc_area(&self, cyl: &Cylinder, points: usize, seed: u64) -> f64 {
        let (mut lo, mut hi) = (C64::new(f64::MAX, f64::MAX), C64::new(f64::MIN, f64::MIN));
        for d in &cyl.boundary_offset {
            lo = C64::new(lo.re.min(d.re), lo.im.min(d.im));
            hi = C64::new(hi.re.max(d.re), hi.im.max(d.im));
        }
        let root = cyl.root_mp.clone().expect("root");
        let seg_apex = cyl.lattice_pole(&self.ev).expect("pole");
        let bmp = self.pole_mp(&seg_apex);
        let eps = self.consts.eps;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds: Vec<C64> = (0..points)
            .map(|_| C64::new(rng.gen_range(lo.re..hi.re), rng.gen_range(lo.im..hi.im)))
            .collect();
        let hits: usize = ds
            .par_iter()
            .map(|d| {
                let beta = root.clone() + self.lift(*d);
                match self.h(&beta, cyl.level) {
                    Ok(pm) => {
                        let u = to_c64(&(pm.value - bmp.clone()));
                        usize::from(Segment { apex: C64::new(0.0, 0.0), eps }.contains(u))
                    }
                    Err(_) => 0,
                }
            })
            .sum();
        (hi.re - lo.re) * (hi.im - lo.im) * hits as f64 / points as f64
    }

    /// Point h_n⁻¹(b + w) of a built cylinder, w in U(0, ε).
    pub fn interior_point(&self, cyl: &Cylinder, w: C64) -> Option<Cx<Mp>> {
        let root = cyl.root_mp.clone()?;
        let b = cyl.lattice_pole(&self.ev)?;
        let bmp = self.pole_mp(&b);
        let mut beta = root;
        let mut prev = C64::new(0.0, 0.0);
        // continuation along the straight path from the apex
        for k in 1..=8 {
            let wk = w * (k as f64 / 8.0);
            let pm = self.h(&beta, cyl.level).ok()?;
            let seed = beta.clone() + self.lift(wk - prev) / pm.derivative;
            beta = self.newton(seed, &(bmp.clone() + self.lift(wk)), cyl.level)?.0;
            prev = wk;
        }
        Some(beta)
    }

    /// Branch through the `choices[k]`-th candidate pole at level k+2, down to
    /// `depth`; β is the interior sample of the deepest cylinder.
    pub fn escaping_parameter(&self, choices: &[usize], depth: usize) -> Result<EscapingParameter, CantorError> {
        if depth < 3 {
            return Err(CantorError::InvalidConstants("escaping_parameter needs depth >= 3".into()));
        }
        let disk = self.root_disk();
        let mut a = self.level_one(&disk)?;
        a.id = 1;
        let mut branch = vec![a];
        for n in 2..=depth {
            let idx = choices.get(n - 2).copied().unwrap_or(0);
            let poles = self.candidate_poles(n, idx + 5);
            let parent = branch.last().unwrap().clone();
            let mut made = None;
            for b in poles.iter().skip(idx) {
                if let Ok(c) = self.child(&parent, b) {
                    made = Some(c);
                    break;
                }
            }
            let mut c = made.ok_or(CantorError::RootNotFound { level: n, pole: poles[idx.min(poles.len() - 1)] })?;
            c.id = n;
            branch.push(c);
        }
        let last = branch.last().unwrap();
        let beta_mp = last.interior_mp.clone().unwrap();
        Ok(EscapingParameter {
            beta: to_c64(&beta_mp),
            digits: [beta_mp.re.to_decimal(), beta_mp.im.to_decimal()],
            beta_mp,
            branch,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub parent_id: usize,
    pub level: usize,
    pub children_sampled: usize,
    pub n_available: f64,
    pub n_exact: bool,
    pub density: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug)]
pub struct EscapingParameter {
    pub beta: C64,
    pub digits: [String; 2],
    pub beta_mp: Cx<Mp>,
    /// A₁ ⊃ A₂ ⊃ … along the chosen poles
    pub branch: Vec<Cylinder>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CylinderTree {
    pub consts: BuildConstants,
    pub bits: usize,
    pub depth: usize,
    pub branching: usize,
    pub nodes: Vec<Cylinder>,
    pub failures: Vec<String>,
}

impl CylinderTree {
    pub fn level(&self, n: usize) -> impl Iterator<Item = &Cylinder> {
        self.nodes.iter().filter(move |c| c.level == n)
    }

    pub fn children(&self, id: usize) -> impl Iterator<Item = &Cylinder> {
        self.nodes.iter().filter(move |c| c.parent_id == Some(id))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub cylinders: usize,
    pub n_available: f64,
    pub n_exact: bool,
    pub d_measured: f64,
    pub d_bound: f64,
    pub d_lower: f64,
    /// min over parents of Σ built child areas / parent area
    pub delta_built: Option<f64>,
    pub delta_full: Option<f64>,
    pub delta_bound: f64,
    pub distortion_max: f64,
    pub distortion_bound: f64,
    pub nesting_fraction: f64,
    pub residual_max: f64,
    pub injective: bool,
}

/// Per-level statistics of a built tree; `full` holds full-branching density
/// estimates keyed by parent.
pub fn family_stats(tree: &CylinderTree, full: &[DensityEstimate]) -> Vec<LevelStats> {
    let c = &tree.consts;
    (1..=tree.depth)
        .map(|n| {
            let cyl: Vec<&Cylinder> = tree.level(n).collect();
            let (count, exact) = if n == 1 { (1.0, true) } else { (f64::NAN, false) };
            let d = cyl.iter().map(|x| x.diam).fold(0.0, f64::max);
            let delta_built = if n < tree.depth {
                cyl.iter()
                    .map(|p| tree.children(p.id).map(|k| k.area).sum::<f64>() / p.area)
                    .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
            } else {
                None
            };
            let delta_full = full
                .iter()
                .filter(|e| e.level == n)
                .map(|e| e.density)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
            let dist = cyl.iter().map(|x| x.distortion).fold(0.0, f64::max);
            let nested = cyl.iter().filter(|x| x.nested).count() as f64 / cyl.len().max(1) as f64;
            LevelStats {
                level: n,
                cylinders: cyl.len(),
                n_available: count,
                n_exact: exact,
                d_measured: d,
                d_bound: c.diameter_bound(n),
                d_lower: c.diameter_lower_bound(n),
                delta_built,
                delta_full,
                delta_bound: c.density_bound(n),
                distortion_max: dist,
                distortion_bound: if n >= 2 { c.distortion_bound(n) } else { 1.0 },
                nesting_fraction: nested,
                residual_max: cyl.iter().map(|x| x.residual).fold(0.0, f64::max),
                injective: cyl.iter().all(|x| x.injective),
            }
        })
        .collect()
}

/// Fill in N_n from the lattice; split out so `family_stats` stays pure.
pub fn attach_pole_counts(stats: &mut [LevelStats], ev: &EllipticEvaluator, c: &BuildConstants) {
    for s in stats.iter_mut().filter(|s| s.level >= 2) {
        let (n, exact) = count_poles_in_half_annulus(&ev.lattice, c.radius(s.level), c.phi, c.eps);
        s.n_available = n;
        s.n_exact = exact;
    }
}

/// Header of the per-level stats CSV.
pub const STATS_HEADER: &str = "level,cylinders,n_available,n_exact,d_measured,d_bound,d_lower,delta_built,delta_full,delta_bound,distortion_max,distortion_bound,nesting_fraction,residual_max,injective";

pub fn stats_csv(stats: &[LevelStats]) -> String {
    let f = |x: f64| format!("{x:.16e}");
    let o = |x: Option<f64>| x.map(f).unwrap_or_default();
    let mut s = String::from(STATS_HEADER);
    s.push('\n');
    for l in stats {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            l.level,
            l.cylinders,
            f(l.n_available),
            l.n_exact,
            f(l.d_measured),
            f(l.d_bound),
            f(l.d_lower),
            o(l.delta_built),
            o(l.delta_full),
            f(l.delta_bound),
            f(l.distortion_max),
            f(l.distortion_bound),
            f(l.nesting_fraction),
            f(l.residual_max),
            l.injective
        ));
    }
    s
}

/// Pairwise disjointness of the polygons of siblings at each level.
pub fn siblings_disjoint(tree: &CylinderTree) -> bool {
    tree.nodes.iter().all(|p| {
        let kids: Vec<&Cylinder> = tree.children(p.id).collect();
        kids.iter().enumerate().all(|(i, a)| {
            kids[i + 1..].iter().all(|b| {
                let pa: Vec<C64> = a.boundary_offset.iter().map(|d| a.root_offset_from_parent + d).collect();
                let pb: Vec<C64> = b.boundary_offset.iter().map(|d| b.root_offset_from_parent + d).collect();
                crate::util::polygons_disjoint(&pa, &pb)
            })
        })
    })
}

/// Lift used by callers holding only f64 data.
pub fn lift_like(like: &Mp, z: C64) -> Cx<Mp> {
    lift_c(like, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_boundary_shape() {
        let v = Segment::boundary_offsets(1.0, 64);
        assert_eq!(v.len(), 64);
        assert_eq!(v[0], C64::new(0.0, 0.0));
        assert!(shoelace(&v) > 0.0);
        assert!((shoelace(&v) - 3.0 * PI / 8.0).abs() < 0.01);
        let s = Segment { apex: C64::new(2.0, 0.0), eps: 0.5 };
        assert!(s.contains(C64::new(2.3, 0.1)));
        assert!(!s.contains(C64::new(1.9, 0.0)));
        assert!(!s.contains(C64::new(2.0, 0.45)));
    }

    #[test]
    fn constants_for_m_minus_one() {
        let ev = EllipticEvaluator::new(make_pole_critical_lattice(-1).unwrap()).unwrap();
        let pd = estimate_pole_constants(&ev, 0.5, 0.04).unwrap();
        let c = choose_constants(&ev, &pd, APolicy::Auto).unwrap();
        assert_eq!(c.eps, 0.0625);
        assert!(c.r2 > c.c1 / ((1.0 - c.alpha) * c.eps * c.eps));
        assert!(c.a > c.a0 && c.a0 >= 2.0);
        assert!(c.containment_verified);
        let lo = (c.p1.norm() - c.eps, c.p1.norm() + c.eps);
        assert!(c.r1 < lo.0 && 2.0 * c.r1 > lo.1);
        assert!(matches!(
            choose_constants(&ev, &pd, APolicy::Value(c.a0 * 0.5)),
            Err(CantorError::InvalidConstants(_))
        ));
    }
}
