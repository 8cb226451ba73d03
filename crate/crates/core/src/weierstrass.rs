//! Evaluation of ℘ and ℘′, critical points and values, pole-local Laurent
//! factors and the pole-local constants K₁, K₂, M₁, M₂.
//!
//! ℘ is evaluated from its Laurent expansion at the nearest lattice point,
//! ℘(u) = u⁻² + Σ_{k≥2} c_k u^{2k−2}, with coefficients generated from
//! (g₂, g₃) by the usual recursion. The invariants come from the q-expansion.
//! Points farther than 0.75 shortest periods from every pole (only possible
//! for elongated lattices) fall back to truncated direct summation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{
    lattice_tail_bound, points_in_disk, qexp_invariants, LatticeError, LatticeInvariants,
    LatticePoint, Lattice, MpLattice,
};
use crate::mp::{abs_f64, lift_c, to_c64, Cx, Mp, Real};
use crate::util::CSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WpError {
    #[error("point within {dist:e} of the pole {pole:?}")]
    NearPole { pole: LatticePoint, dist: f64 },
    #[error("point is not inside any eps0-ball around a pole (distance {dist:e})")]
    WrongRegime { dist: f64 },
    #[error("non-finite input or result")]
    NonFinite,
    #[error("pole constants not found: {0}")]
    ConstantsNotFound(String),
}

/// Laurent-series evaluator for ℘ and ℘′ over a scalar type `T`.
#[derive(Clone, Debug)]
pub struct Kernel<T: Real> {
    b1: Cx<T>,
    b2: Cx<T>,
    /// reduced index (p,q) -> user index (l,m): l = p k00 + q k10, m = p k01 + q k11
    k: [[i64; 2]; 2],
    b1f: C64,
    b2f: C64,
    inv_s: Cx<T>,
    /// nonzero normalized coefficients (k, c_k) in increasing k with constant stride
    coeffs: Vec<(usize, Cx<T>)>,
    stride: usize,
    /// tail envelope: max_{j ≥ i} |c_j| over `coeffs[i..]`
    env: Vec<f64>,
    tol: f64,
}

/// One evaluation: ℘, ℘′ and the reduction data.
#[derive(Clone, Debug)]
pub struct WpPoint<T: Real> {
    pub wp: Cx<T>,
    pub wpp: Cx<T>,
    /// user-basis indices of the nearest pole
    pub l: i64,
    pub m: i64,
    /// z − pole
    pub u: Cx<T>,
    /// |u| in units of the shortest period
    pub v_abs: f64,
}

fn laurent_coeffs<T: Real>(g2: &Cx<T>, g3: &Cx<T>, kmax: usize) -> Vec<Cx<T>> {
    // c[k] for k = 0..=kmax, c[0] = c[1] = 0
    let zero = Cx::new(g3.re.lift(0.0), g3.re.lift(0.0));
    let mut c = vec![zero.clone(); kmax + 1];
    c[2] = g2.clone() / g3.re.lift(20.0);
    c[3] = g3.clone() / g3.re.lift(28.0);
    for k in 4..=kmax {
        let mut s = zero.clone();
        for j in 2..=k - 2 {
            if j > k - j {
                break;
            }
            let t = c[j].clone() * c[k - j].clone();
            s = if j == k - j { s + t } else { s + t.clone() + t };
        }
        let f = 3.0 / (((2 * k + 1) * (k - 3)) as f64);
        c[k] = s * g3.re.lift(f);
    }
    c
}

fn is_zero_c<T: Real>(z: &Cx<T>) -> bool {
    z.re.is_zero() && z.im.is_zero()
}

impl<T: Real> Kernel<T> {
    /// `b1`, `b2` a reduced basis (|b1| shortest), `k` its integer relation to the
    /// user basis, and (g2n, g3n) the invariants of the normalized lattice [1, b2/b1].
    pub fn new(b1: Cx<T>, b2: Cx<T>, k: [[i64; 2]; 2], g2n: Cx<T>, g3n: Cx<T>) -> Self {
        let bits = b1.re.bits();
        let tol = 2f64.powi(-(bits as i32) - 4);
        // |v| ≤ 0.75 so |w| ≤ 0.5625; coefficients grow polynomially
        let kmax = (((bits as f64 + 20.0) / 0.83) as usize + 30).min(600);
        let all = laurent_coeffs(&g2n, &g3n, kmax);
        let mut coeffs: Vec<(usize, Cx<T>)> = Vec::new();
        for (k, c) in all.into_iter().enumerate().skip(2) {
            if !is_zero_c(&c) {
                coeffs.push((k, c));
            }
        }
        let stride = if coeffs.len() >= 2 {
            let s = coeffs[1].0 - coeffs[0].0;
            if coeffs.windows(2).all(|w| w[1].0 - w[0].0 == s) {
                s
            } else {
                1
            }
        } else {
            1
        };
        if stride == 1 {
            // make indices contiguous so powers can be stepped uniformly
            let mut full = Vec::new();
            let zero = Cx::new(b1.re.lift(0.0), b1.re.lift(0.0));
            let first = coeffs.first().map(|c| c.0).unwrap_or(2);
            let last = coeffs.last().map(|c| c.0).unwrap_or(2);
            let mut it = coeffs.into_iter().peekable();
            for k in first..=last {
                if it.peek().map(|c| c.0) == Some(k) {
                    full.push(it.next().unwrap());
                } else {
                    full.push((k, zero.clone()));
                }
            }
            coeffs = full;
        }
        let mut env = vec![0.0f64; coeffs.len() + 1];
        for i in (0..coeffs.len()).rev() {
            env[i] = env[i + 1].max(abs_f64(&coeffs[i].1));
        }
        let one = b1.re.lift(1.0);
        let inv_s = Cx::new(one, b1.re.lift(0.0)) / b1.clone();
        Kernel {
            b1f: to_c64(&b1),
            b2f: to_c64(&b2),
            b1,
            b2,
            k,
            inv_s,
            coeffs,
            stride,
            env,
            tol,
        }
    }

    pub fn shortest(&self) -> f64 {
        self.b1f.norm()
    }

    /// Nearest pole as reduced indices and its value.
    fn nearest(&self, z: &Cx<T>) -> (i64, i64, Cx<T>) {
        let zf = to_c64(z);
        let d = (self.b1f.conj() * self.b2f).im;
        let t1 = (zf.conj() * self.b2f).im / d;
        let t2 = (self.b1f.conj() * zf).im / d;
        let (p0, q0) = (t1.round() as i64, t2.round() as i64);
        let mut best = (p0, q0);
        let mut bd = f64::INFINITY;
        for dp in -1..=1 {
            for dq in -1..=1 {
                let (p, q) = (p0 + dp, q0 + dq);
                let w = self.b1f * (t1 - p as f64) + self.b2f * (t2 - q as f64);
                let dd = w.norm_sqr();
                if dd < bd {
                    bd = dd;
                    best = (p, q);
                }
            }
        }
        let one = &self.b1.re;
        let b = crate::mp::scale(&self.b1, &one.lift_i64(best.0))
            + crate::mp::scale(&self.b2, &one.lift_i64(best.1));
        (best.0, best.1, b)
    }

    fn user_index(&self, p: i64, q: i64) -> (i64, i64) {
        (p * self.k[0][0] + q * self.k[1][0], p * self.k[0][1] + q * self.k[1][1])
    }

    /// ℘ and ℘′ at the offset `u` from a pole (|u| < shortest period).
    pub fn eval_local(&self, u: &Cx<T>) -> (Cx<T>, Cx<T>) {
        let v = u.clone() * self.inv_s.clone();
        let w = v.clone() * v.clone();
        let wa = abs_f64(&w);
        let main = 1.0 / wa.max(1e-300);
        let mut s = Cx::new(u.re.lift(0.0), u.re.lift(0.0));
        let mut sd = s.clone();
        if let Some((k0, _)) = self.coeffs.first() {
            let step = pow_c(&w, self.stride);
            // w^{k0-2} and w^{k0-1}
            let mut pw_d = pow_c(&w, k0 - 2);
            let mut pa = wa.powi(*k0 as i32 - 1);
            let sa = wa.powi(self.stride as i32);
            for (i, (k, c)) in self.coeffs.iter().enumerate() {
                if self.env[i] * pa * (*k as f64 + 2.0) < self.tol * main {
                    break;
                }
                let t = c.clone() * pw_d.clone();
                sd = sd + crate::mp::scale(&t, &u.re.lift((2 * k - 2) as f64));
                s = s + t * w.clone();
                pw_d = pw_d * step.clone();
                pa *= sa;
            }
        }
        let one = Cx::new(u.re.lift(1.0), u.re.lift(0.0));
        let iw = one / w.clone();
        let s2 = self.inv_s.clone() * self.inv_s.clone();
        let wp = (iw.clone() + s) * s2.clone();
        let v3i = iw / v.clone();
        let wpp = (v * sd - crate::mp::scale(&v3i, &u.re.lift(2.0))) * s2 * self.inv_s.clone();
        (wp, wpp)
    }

    /// Reduce to the nearest pole and evaluate. `None` if z is too far from
    /// every pole for the Laurent series.
    pub fn eval(&self, z: &Cx<T>) -> Option<WpPoint<T>> {
        let (p, q, b) = self.nearest(z);
        let u = z.clone() - b;
        let v_abs = abs_f64(&u) / self.shortest();
        if !(v_abs <= 0.75) {
            return None;
        }
        let (wp, wpp) = self.eval_local(&u);
        let (l, m) = self.user_index(p, q);
        Some(WpPoint { wp, wpp, l, m, u, v_abs })
    }
}

fn pow_c<T: Real>(w: &Cx<T>, n: usize) -> Cx<T> {
    let mut r = Cx::new(w.re.lift(1.0), w.re.lift(0.0));
    let mut b = w.clone();
    let mut n = n;
    while n > 0 {
        if n & 1 == 1 {
            r = r * b.clone();
        }
        n >>= 1;
        if n > 0 {
            b = b.clone() * b;
        }
    }
    r
}

/// Kernel for an f64 lattice.
pub fn kernel_f64(lat: &Lattice) -> Kernel<f64> {
    let rb = lat.reduced_basis();
    let norm = Lattice { lambda1: C64::new(1.0, 0.0), lambda2: rb.b2 / rb.b1 };
    let inv = qexp_invariants(&norm);
    Kernel::new(rb.b1, rb.b2, rb.k, inv.g2, inv.g3)
}

/// Kernel for the multiprecision pole-critical lattice (normalized invariants (0, g3_unit)).
pub fn kernel_mp(lat: &MpLattice) -> Kernel<Mp> {
    let zero = lat.g3_unit.lift(0.0);
    let g2 = Cx::new(zero.clone(), zero.clone());
    let g3 = Cx::new(lat.g3_unit.clone(), zero);
    Kernel::new(lat.gamma1.clone(), lat.gamma2.clone(), [[1, 0], [0, 1]], g2, g3)
}

/// Direct-summation ℘ and ℘′ over the disk |w| ≤ N·(shortest period) with a
/// bound on the neglected terms. Oracle route, independent of the Laurent path.
pub struct DirectSum {
    pub lattice: Lattice,
    pub truncation_radius: u32,
    points: Vec<C64>,
    radius: f64,
    area: f64,
    h: f64,
}

impl DirectSum {
    pub fn new(lat: &Lattice, truncation_radius: u32) -> Self {
        let rb = lat.reduced_basis();
        let radius = truncation_radius as f64 * rb.b1.norm();
        let mut points = points_in_disk(lat, radius);
        points.sort_by(|a, b| b.norm_sqr().partial_cmp(&a.norm_sqr()).unwrap());
        DirectSum {
            lattice: *lat,
            truncation_radius,
            points,
            radius,
            area: lat.area(),
            h: 0.5 * (rb.b1.norm() + rb.b2.norm()),
        }
    }

    /// (℘, ℘′, bound on |℘ error|, bound on |℘′ error|).
    pub fn eval(&self, z: C64) -> (C64, C64, f64, f64) {
        let b = self.lattice.nearest_point(z);
        let u = z - b.z;
        let mut s = CSum::default();
        let mut sd = CSum::default();
        for &w in &self.points {
            let d = u - w;
            let d2 = (d * d).inv();
            s.add(d2 - (w * w).inv());
            sd.add(d2 / d);
        }
        let ui = u.inv();
        let wp = ui * ui + s.value();
        let wpp = (ui * ui * ui + sd.value()) * -2.0;
        let t4 = lattice_tail_bound(self.radius, 4.0, self.area, self.h);
        let ua = u.norm();
        (wp, wpp, 3.4 * ua * ua * t4, 7.2 * ua * t4)
    }
}

#[derive(Clone, Debug)]
pub struct EllipticEvaluator {
    pub lattice: Lattice,
    pub invariants: LatticeInvariants,
    /// disk radius of the direct-summation fallback, in shortest periods
    pub truncation_radius: u32,
    pub target_tolerance: f64,
    pub pole_exclusion_radius: f64,
    /// snap radius for pole hits along orbits
    pub prepole_tolerance: f64,
    kernel: Kernel<f64>,
    direct: std::sync::Arc<OnceLock<DirectSum>>,
}

impl std::fmt::Debug for DirectSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DirectSum({} points)", self.points.len())
    }
}

impl EllipticEvaluator {
    pub fn new(lat: Lattice) -> Result<Self, LatticeError> {
        let lat = Lattice::new(lat.lambda1, lat.lambda2)?;
        let invariants = qexp_invariants(&lat);
        let l1 = lat.lambda1.norm();
        Ok(EllipticEvaluator {
            lattice: lat,
            invariants,
            truncation_radius: 200,
            target_tolerance: 1e-12,
            pole_exclusion_radius: 1e-6 * l1,
            prepole_tolerance: 1e-8 * l1,
            kernel: kernel_f64(&lat),
            direct: Default::default(),
        })
    }

    pub fn kernel(&self) -> &Kernel<f64> {
        &self.kernel
    }

    pub fn nearest_pole(&self, z: C64) -> LatticePoint {
        self.lattice.nearest_point(z)
    }

    fn direct(&self) -> &DirectSum {
        self.direct.get_or_init(|| DirectSum::new(&self.lattice, self.truncation_radius))
    }

    /// ℘ and ℘′ without the exclusion check.
    pub fn eval_point(&self, z: C64) -> Result<WpPoint<f64>, WpError> {
        if !z.is_finite() {
            return Err(WpError::NonFinite);
        }
        match self.kernel.eval(&z) {
            Some(p) => Ok(p),
            None => {
                let b = self.lattice.nearest_point(z);
                let (wp, wpp, _, _) = self.direct().eval(z);
                let u = z - b.z;
                Ok(WpPoint { wp, wpp, l: b.l, m: b.m, u, v_abs: u.norm() / self.kernel.shortest() })
            }
        }
    }

    pub fn wp_pair(&self, z: C64) -> Result<(C64, C64), WpError> {
        let p = self.eval_point(z)?;
        let d = p.u.norm();
        if d < self.pole_exclusion_radius {
            return Err(WpError::NearPole { pole: self.lattice.lattice_point(p.l, p.m), dist: d });
        }
        Ok((p.wp, p.wpp))
    }

    pub fn wp(&self, z: C64) -> Result<C64, WpError> {
        self.wp_pair(z).map(|p| p.0)
    }

    pub fn wp_prime(&self, z: C64) -> Result<C64, WpError> {
        self.wp_pair(z).map(|p| p.1)
    }

    pub fn critical_points(&self) -> (C64, C64, C64) {
        let (l1, l2) = (self.lattice.lambda1, self.lattice.lambda2);
        (l1 * 0.5, l2 * 0.5, (l1 + l2) * 0.5)
    }

    pub fn critical_values(&self) -> (C64, C64, C64) {
        let (c1, c2, c3) = self.critical_points();
        let f = |c| self.eval_point(c).map(|p| p.wp).unwrap_or(C64::new(f64::NAN, f64::NAN));
        (f(c1), f(c2), f(c3))
    }

    /// G = ℘(z)(z−b)², H = ℘′(z)(z−b)³ at the nearest pole b.
    pub fn laurent_factors(&self, z: C64, eps0: f64) -> Result<(C64, C64, LatticePoint), WpError> {
        let p = self.eval_point(z)?;
        let d = p.u.norm();
        if d >= eps0 {
            return Err(WpError::WrongRegime { dist: d });
        }
        let pole = self.lattice.lattice_point(p.l, p.m);
        if d == 0.0 {
            return Ok((C64::new(1.0, 0.0), C64::new(-2.0, 0.0), pole));
        }
        let (g, h) = local_factors(&self.kernel, p.u);
        Ok((g, h, pole))
    }
}

/// G, H at offset u from a pole.
pub fn local_factors(k: &Kernel<f64>, u: C64) -> (C64, C64) {
    if u.norm() == 0.0 {
        return (C64::new(1.0, 0.0), C64::new(-2.0, 0.0));
    }
    let (wp, wpp) = k.eval_local(&u);
    let u2 = u * u;
    (wp * u2, wpp * u2 * u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleLocalData {
    pub pole: C64,
    pub eps0: f64,
    pub r: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    pub grid_points: usize,
}

struct GridStats {
    k1: f64,
    k2: f64,
    amin: f64,
    amax: f64,
    n: usize,
}

fn grid_stats(k: &Kernel<f64>, eps0: f64, nr: usize, na: usize) -> GridStats {
    let (mut gmax, mut gmin, mut hmax, mut hmin) = (1.0f64, 1.0f64, 2.0f64, 2.0f64);
    let (mut amin, mut amax) = (0.0f64, 0.0f64);
    for j in 0..na {
        let th = 2.0 * PI * j as f64 / na as f64;
        let dir = C64::from_polar(1.0, th);
        // continuous argument along the ray, starting from arg G(b) = 0
        let mut prev = 0.0;
        for i in 1..=nr {
            let u = dir * (eps0 * i as f64 / nr as f64);
            let (g, h) = local_factors(k, u);
            let (ga, ha) = (g.norm(), h.norm());
            gmax = gmax.max(ga);
            gmin = gmin.min(ga);
            hmax = hmax.max(ha);
            hmin = hmin.min(ha);
            let mut a = g.arg();
            while a - prev > PI {
                a -= 2.0 * PI;
            }
            while a - prev < -PI {
                a += 2.0 * PI;
            }
            prev = a;
            amin = amin.min(a);
            amax = amax.max(a);
        }
    }
    GridStats {
        k1: gmax.max(1.0 / gmin),
        k2: hmax.max(1.0 / hmin),
        amin,
        amax,
        n: nr * na + 1,
    }
}

/// Sampled K₁, K₂, M₁, M₂ on B(b, eps0) and the β-circle |β−1| = r.
pub fn estimate_pole_constants(
    ev: &EllipticEvaluator,
    eps0: f64,
    r: f64,
) -> Result<PoleLocalData, WpError> {
    let l1 = ev.lattice.min_generator();
    if !(eps0 > 0.0 && eps0 < 1.0f64.min(l1 / 3.0)) {
        return Err(WpError::ConstantsNotFound(format!("eps0 = {eps0} outside (0, min(1, |λ1|/3))")));
    }
    if !(r > 0.0 && r < 0.5) {
        return Err(WpError::ConstantsNotFound(format!("r = {r} outside (0, 1/2)")));
    }
    let (mut eps0, mut r) = (eps0, r);
    for _ in 0..40 {
        let (mut nr, mut na) = (80, 128);
        let mut st = grid_stats(&ev.kernel, eps0, nr, na);
        for _ in 0..6 {
            nr *= 2;
            na *= 2;
            let next = grid_stats(&ev.kernel, eps0, nr, na);
            let agree = (next.k1 / st.k1 - 1.0).abs() < 0.01 && (next.k2 / st.k2 - 1.0).abs() < 0.01;
            st = next;
            if agree {
                break;
            }
        }
        // arg β over |β−1| = r, continuous from β = 1
        let ab = r.asin();
        let (m1, m2) = (st.amin - ab, st.amax + ab);
        if m2 - m1 < PI / 4.0 {
            return Ok(PoleLocalData {
                pole: C64::new(0.0, 0.0),
                eps0,
                r,
                k1: st.k1,
                k2: st.k2,
                c1: 2.0 * st.k1,
                c2: 2.0 * st.k2,
                m1,
                m2,
                grid_points: st.n,
            });
        }
        eps0 *= 0.5;
        r *= 0.5;
    }
    Err(WpError::ConstantsNotFound("M2 - M1 >= pi/4 after 40 halvings".into()))
}

/// Multiprecision evaluator for the pole-critical lattice.
#[derive(Clone, Debug)]
pub struct MpEvaluator {
    pub lattice: MpLattice,
    pub lattice_f64: Lattice,
    pub kernel: Kernel<Mp>,
    pub bits: usize,
}

impl MpEvaluator {
    pub fn pole_critical(m: i64, bits: usize) -> Result<Self, LatticeError> {
        let lattice = MpLattice::pole_critical(m, bits)?;
        let kernel = kernel_mp(&lattice);
        Ok(MpEvaluator { lattice_f64: lattice.to_f64(), lattice, kernel, bits })
    }

    pub fn c(&self, z: C64) -> Cx<Mp> {
        let w = lift_c(&self.lattice.g3_unit, z);
        Cx::new(w.re.with_bits(self.bits), w.im.with_bits(self.bits))
    }

    pub fn zero(&self) -> Mp {
        Mp::zero_with(self.bits)
    }
}
