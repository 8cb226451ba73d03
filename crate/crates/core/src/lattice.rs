//! Lattices, Eisenstein invariants, triangular and pole-critical lattices,
//! and pole geometry in half-annuli.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mp::{Cx, Mp, Real};
use crate::util::CSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("invalid lattice: generators are degenerate ({0})")]
    InvalidLattice(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("enumeration too large: about {0} lattice points")]
    TooLarge(f64),
}

/// e^{2πi/3}
pub fn rho() -> C64 {
    C64::new(-0.5, 0.75f64.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lambda1: C64,
    pub lambda2: C64,
}

/// A lattice point `l·λ₁ + m·λ₂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePoint {
    pub l: i64,
    pub m: i64,
    pub z: C64,
}

/// Gauss-reduced basis `b1 = k[0][0]λ₁ + k[0][1]λ₂`, `b2 = k[1][0]λ₁ + k[1][1]λ₂`,
/// with |b1| ≤ |b2|, |Re(b2/b1)| ≤ 1/2 and Im(b2/b1) > 0.
#[derive(Clone, Copy, Debug)]
pub struct ReducedBasis {
    pub b1: C64,
    pub b2: C64,
    pub k: [[i64; 2]; 2],
}

impl Lattice {
    pub fn new(lambda1: C64, lambda2: C64) -> Result<Self, LatticeError> {
        if !(lambda1.norm() > 0.0) || !(lambda2.norm() > 0.0) {
            return Err(LatticeError::InvalidLattice("zero generator".into()));
        }
        let tau = lambda2 / lambda1;
        if !tau.is_finite() || tau.im.abs() < 1e-12 * tau.norm().max(1.0) {
            return Err(LatticeError::InvalidLattice(format!(
                "Im(lambda2/lambda1) = {:e}",
                tau.im
            )));
        }
        Ok(Lattice { lambda1, lambda2 })
    }

    /// Sign of Im(λ₂/λ₁).
    pub fn orientation(&self) -> i32 {
        if (self.lambda2 / self.lambda1).im > 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn point(&self, l: i64, m: i64) -> C64 {
        self.lambda1 * l as f64 + self.lambda2 * m as f64
    }

    pub fn lattice_point(&self, l: i64, m: i64) -> LatticePoint {
        LatticePoint { l, m, z: self.point(l, m) }
    }

    /// Area of the fundamental parallelogram.
    pub fn area(&self) -> f64 {
        (self.lambda1.conj() * self.lambda2).im.abs()
    }

    pub fn min_generator(&self) -> f64 {
        self.lambda1.norm().min(self.lambda2.norm())
    }

    pub fn is_triangular(&self, tol: f64) -> bool {
        (self.lambda2 - rho() * self.lambda1).norm() < tol * self.lambda1.norm()
    }

    pub fn scaled(&self, alpha: C64) -> Lattice {
        Lattice { lambda1: self.lambda1 * alpha, lambda2: self.lambda2 * alpha }
    }

    /// Coordinates (t₁, t₂) with z = t₁λ₁ + t₂λ₂.
    pub fn coords(&self, z: C64) -> (f64, f64) {
        let d = (self.lambda1.conj() * self.lambda2).im;
        let t1 = (z.conj() * self.lambda2).im / d;
        let t2 = (self.lambda1.conj() * z).im / d;
        (t1, t2)
    }

    pub fn reduce_to_fundamental(&self, z: C64) -> (C64, i64, i64) {
        let (t1, t2) = self.coords(z);
        let l = (t1 + 1e-12).floor() as i64;
        let m = (t2 + 1e-12).floor() as i64;
        (z - self.point(l, m), l, m)
    }

    pub fn reduced_basis(&self) -> ReducedBasis {
        let (mut u, mut v) = (self.lambda1, self.lambda2);
        let (mut ku, mut kv) = ([1i64, 0], [0i64, 1]);
        for _ in 0..200 {
            if v.norm_sqr() < u.norm_sqr() {
                std::mem::swap(&mut u, &mut v);
                std::mem::swap(&mut ku, &mut kv);
            }
            let mu = (v * u.conj()).re / u.norm_sqr();
            if mu.abs() <= 0.5 + 1e-12 {
                break;
            }
            let k = mu.round();
            v -= u * k;
            kv = [kv[0] - k as i64 * ku[0], kv[1] - k as i64 * ku[1]];
        }
        if (v / u).im < 0.0 {
            v = -v;
            kv = [-kv[0], -kv[1]];
        }
        ReducedBasis { b1: u, b2: v, k: [ku, kv] }
    }

    /// Nearest lattice point to z.
    pub fn nearest_point(&self, z: C64) -> LatticePoint {
        let rb = self.reduced_basis();
        let (p, q) = rb.nearest(z);
        rb.to_user(self, p, q)
    }
}

impl ReducedBasis {
    pub fn coords(&self, z: C64) -> (f64, f64) {
        let d = (self.b1.conj() * self.b2).im;
        ((z.conj() * self.b2).im / d, (self.b1.conj() * z).im / d)
    }

    /// Reduced-basis indices of the nearest lattice point.
    pub fn nearest(&self, z: C64) -> (i64, i64) {
        let (t1, t2) = self.coords(z);
        let (p0, q0) = (t1.floor() as i64, t2.floor() as i64);
        let mut best = (p0, q0);
        let mut bd = f64::INFINITY;
        for dp in -1..=2 {
            for dq in -1..=2 {
                let (p, q) = (p0 + dp, q0 + dq);
                let d = (z - self.b1 * p as f64 - self.b2 * q as f64).norm_sqr();
                if d < bd {
                    bd = d;
                    best = (p, q);
                }
            }
        }
        best
    }

    pub fn to_user(&self, lat: &Lattice, p: i64, q: i64) -> LatticePoint {
        let l = p * self.k[0][0] + q * self.k[1][0];
        let m = p * self.k[0][1] + q * self.k[1][1];
        lat.lattice_point(l, m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InvariantMethod {
    /// Direct Eisenstein sums over a disk of lattice points.
    DiskSum,
    /// q-expansion of the Eisenstein series on a reduced basis.
    QExpansion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeInvariants {
    pub g2: C64,
    pub g3: C64,
    /// Disk radius in units of the shortest generator, or number of q-terms.
    pub truncation_radius: u32,
    /// Bound on the truncation error of g₂.
    pub tail_bound: f64,
    /// Bound on the truncation error of g₃.
    pub tail_bound_g3: f64,
    pub method: InvariantMethod,
}

/// Bound on Σ_{|w|>rad} |w|^{-p} over a lattice with cell area `area` and
/// centred-cell half diameter `h`.
pub fn lattice_tail_bound(rad: f64, p: f64, area: f64, h: f64) -> f64 {
    let s = rad - 2.0 * h;
    if s <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * PI / area * (s.powf(2.0 - p) / (p - 2.0) + h * s.powf(1.0 - p) / (p - 1.0))
}

/// Lattice points with 0 < |w| ≤ rad, in row order of the reduced basis.
pub fn points_in_disk(lat: &Lattice, rad: f64) -> Vec<C64> {
    let rb = lat.reduced_basis();
    let mut out = Vec::new();
    for_rows_in_disk(&rb, rad, |q, lo, hi| {
        for p in lo..=hi {
            let w = rb.b1 * p as f64 + rb.b2 * q as f64;
            if (p != 0 || q != 0) && w.norm() <= rad {
                out.push(w);
            }
        }
    });
    out
}

/// Calls `f(q, p_lo, p_hi)` for each row q of the reduced basis meeting |z| ≤ rad,
/// with the integer range of p whose points lie in the disk (up to rounding at the rim).
fn for_rows_in_disk(rb: &ReducedBasis, rad: f64, mut f: impl FnMut(i64, i64, i64)) {
    let d = (rb.b1.conj() * rb.b2).im;
    let qmax = (rad * rb.b1.norm() / d).floor() as i64 + 1;
    let n1 = rb.b1.norm_sqr();
    for q in -qmax..=qmax {
        let c = rb.b2 * q as f64;
        // |p b1 + c|^2 = n1 p^2 + 2 p Re(b1 conj c) + |c|^2
        let bq = (rb.b1 * c.conj()).re;
        let disc = bq * bq - n1 * (c.norm_sqr() - rad * rad);
        if disc < 0.0 {
            continue;
        }
        let sd = disc.sqrt();
        let lo = ((-bq - sd) / n1).ceil() as i64 - 1;
        let hi = ((-bq + sd) / n1).floor() as i64 + 1;
        f(q, lo, hi);
    }
}

/// Truncated Eisenstein sums g₂ = 60Σw⁻⁴, g₃ = 140Σw⁻⁶ over 0 < |w| ≤ N·min(|λ₁|,|λ₂|).
pub fn invariants(lat: &Lattice, truncation_radius: u32) -> Result<LatticeInvariants, LatticeError> {
    Lattice::new(lat.lambda1, lat.lambda2)?;
    if truncation_radius < 10 {
        return Err(LatticeError::InvalidArgument("truncation_radius must be at least 10".into()));
    }
    let rad = truncation_radius as f64 * lat.min_generator();
    let mut s4 = CSum::default();
    let mut s6 = CSum::default();
    let mut pts = points_in_disk(lat, rad);
    // small terms first
    pts.sort_by(|a, b| b.norm_sqr().partial_cmp(&a.norm_sqr()).unwrap());
    for w in pts {
        let w2 = (w * w).inv();
        let w4 = w2 * w2;
        s4.add(w4);
        s6.add(w4 * w2);
    }
    let rb = lat.reduced_basis();
    let h = 0.5 * (rb.b1.norm() + rb.b2.norm());
    let area = lat.area();
    Ok(LatticeInvariants {
        g2: s4.value() * 60.0,
        g3: s6.value() * 140.0,
        truncation_radius,
        tail_bound: 60.0 * lattice_tail_bound(rad, 4.0, area, h),
        tail_bound_g3: 140.0 * lattice_tail_bound(rad, 6.0, area, h),
        method: InvariantMethod::DiskSum,
    })
}

fn sigma(n: u64, k: u32) -> f64 {
    let mut s = 0.0;
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            s += (d as f64).powi(k as i32);
            let e = n / d;
            if e != d {
                s += (e as f64).powi(k as i32);
            }
        }
        d += 1;
    }
    s
}

/// G₄(τ), G₆(τ) from q = e^{2πiτ} (|q| small), together with the number of
/// terms used and a bound on the neglected part of the E₆ series.
pub fn eisenstein_q<T: Real>(q: &Cx<T>, pi: &T) -> (Cx<T>, Cx<T>, u32, f64) {
    let one = pi.lift(1.0);
    let qa = q.re.to_f64().hypot(q.im.to_f64());
    let bits = pi.bits().max(53) as f64 + 8.0;
    let mut e4 = Cx::new(one.clone(), pi.lift(0.0));
    let mut e6 = e4.clone();
    let mut qn = q.clone();
    let mut n = 1u64;
    loop {
        let s3 = pi.lift(240.0 * sigma(n, 3));
        let s5 = pi.lift(504.0 * sigma(n, 5));
        e4 = e4 + qn.clone() * s3;
        e6 = e6 - qn.clone() * s5;
        let next = (n as f64 + 1.0).powi(6) * qa.powi(n as i32 + 1);
        if next == 0.0 || next.log2() < -bits || n > 400 {
            break;
        }
        qn = qn * q.clone();
        n += 1;
    }
    let tail = 2.0 * 504.0 * (n as f64 + 1.0).powi(6) * qa.powi(n as i32 + 1);
    let pi2 = pi.clone() * pi.clone();
    let pi4 = pi2.clone() * pi2.clone();
    let pi6 = pi4.clone() * pi2;
    let c4 = pi4 / pi.lift(45.0);
    let c6 = pi6 * pi.lift(2.0) / pi.lift(945.0);
    (e4 * c4, e6 * c6, n as u32, tail)
}

/// (g₂, g₃) from the q-expansion on the reduced basis, accurate to rounding.
pub fn qexp_invariants(lat: &Lattice) -> LatticeInvariants {
    let rb = lat.reduced_basis();
    let tau = rb.b2 / rb.b1;
    let q = (C64::new(0.0, 2.0 * PI) * tau).exp();
    let (g4, g6, terms, tail) = eisenstein_q(&q, &PI);
    let s = rb.b1;
    let (s4, s6) = (s.powi(-4), s.powi(-6));
    let c6 = 2.0 * PI.powi(6) / 945.0;
    LatticeInvariants {
        g2: g4 * s4 * 60.0,
        g3: g6 * s6 * 140.0,
        truncation_radius: terms,
        tail_bound: 60.0 * PI.powi(4) / 45.0 * tail * s4.norm(),
        tail_bound_g3: 140.0 * c6 * tail * s6.norm(),
        method: InvariantMethod::QExpansion,
    }
}

/// g₃ of the unit triangular lattice [1, e^{2πi/3}].
pub fn g3_unit() -> f64 {
    static G3: OnceLock<f64> = OnceLock::new();
    *G3.get_or_init(|| {
        let lat = Lattice { lambda1: C64::new(1.0, 0.0), lambda2: rho() };
        qexp_invariants(&lat).g3.re
    })
}

/// α·[1, e^{2πi/3}] with invariants (0, g3_target).
pub fn equianharmonic_lattice(g3_target: f64) -> Result<Lattice, LatticeError> {
    if !(g3_target > 0.0) || !g3_target.is_finite() {
        return Err(LatticeError::InvalidArgument(format!("g3_target must be positive, got {g3_target}")));
    }
    let alpha = (g3_unit() / g3_target).powf(1.0 / 6.0);
    Ok(Lattice { lambda1: C64::new(alpha, 0.0), lambda2: rho() * alpha })
}

fn check_m(m: i64) -> Result<(), LatticeError> {
    if m >= 0 || m % 2 == 0 {
        return Err(LatticeError::InvalidArgument(format!("m must be odd and negative, got {m}")));
    }
    Ok(())
}

/// Triangular lattice Γ = [γ₁, γ₂] with ℘_Γ(γ₁/2) = m·γ₁.
///
/// γ₁³ = e₁·ω₁²/m where Ω = [ω₁, ω₂] has invariants (0, 4) and e₁ = ℘_Ω(ω₁/2);
/// principal cube root.
pub fn make_pole_critical_lattice(m: i64) -> Result<Lattice, LatticeError> {
    check_m(m)?;
    let omega = equianharmonic_lattice(4.0)?;
    let ev = crate::weierstrass::EllipticEvaluator::new(omega)?;
    let e1 = ev
        .wp(omega.lambda1 * 0.5)
        .map_err(|e| LatticeError::InvalidArgument(e.to_string()))?;
    let w1 = omega.lambda1;
    let g1 = principal_cbrt(e1 * w1 * w1 / m as f64);
    let g2 = g1 * omega.lambda2 / omega.lambda1;
    Lattice::new(g1, g2)
}

/// Principal complex cube root, argument in (−π/3, π/3].
pub fn principal_cbrt(z: C64) -> C64 {
    C64::from_polar(z.norm().cbrt(), z.arg() / 3.0)
}

/// The pole-critical lattice for a given m in multiprecision.
#[derive(Clone, Debug)]
pub struct MpLattice {
    pub m: i64,
    pub bits: usize,
    pub gamma1: Cx<Mp>,
    pub gamma2: Cx<Mp>,
    pub rho: Cx<Mp>,
    /// g₃ of [1, e^{2πi/3}]
    pub g3_unit: Mp,
}

impl MpLattice {
    pub fn pole_critical(m: i64, bits: usize) -> Result<Self, LatticeError> {
        check_m(m)?;
        let one = Mp::from_f64(1.0, bits);
        let pi = Mp::pi(bits);
        let s3 = one.lift(3.0).with_bits(bits).sqrt();
        let q = -(-(pi.clone() * s3.clone())).exp();
        let qc = Cx::new(q, one.lift(0.0));
        let (_, g6, _, _) = eisenstein_q(&qc, &pi);
        let g3_unit = g6.re * one.lift(140.0);
        // E0 = (g3_unit/4)^{1/3} = e1(Ω)·ω1²; γ1 = (E0/|m|)^{1/3}·e^{iπ/3}
        let e0 = (g3_unit.clone() / one.lift(4.0)).cbrt();
        let t = (e0 / one.lift((-m) as f64)).cbrt();
        let half = one.lift(0.5);
        let rho = Cx::new(-half.clone(), s3.clone() * half.clone());
        let gamma1 = Cx::new(t.clone() * half.clone(), t * s3 * half);
        let gamma2 = gamma1.clone() * rho.clone();
        Ok(MpLattice { m, bits, gamma1, gamma2, rho, g3_unit })
    }

    pub fn to_f64(&self) -> Lattice {
        Lattice {
            lambda1: crate::mp::to_c64(&self.gamma1),
            lambda2: crate::mp::to_c64(&self.gamma2),
        }
    }

    pub fn point(&self, l: i64, m: i64) -> Cx<Mp> {
        let one = &self.g3_unit;
        crate::mp::scale(&self.gamma1, &one.lift_i64(l)) + crate::mp::scale(&self.gamma2, &one.lift_i64(m))
    }
}

/// Validity of b as a target pole: the closed ball B̄(b, eps) lies in
/// P⁺(0, R, 2R) = {R < |z| < 2R, φ < arg z < φ + π}.
pub fn pole_is_valid(b: C64, r: f64, phi: f64, eps: f64) -> bool {
    let a = b.norm();
    let side = (b * C64::from_polar(1.0, -phi)).im;
    a > r + eps && a < 2.0 * r - eps && side > eps
}

/// Lattice points b with U(b,eps) ⊆ P⁺(0,R,2R), ordered by (|b|, arg b).
pub fn poles_in_half_annulus(
    lat: &Lattice,
    r: f64,
    phi: f64,
    eps: f64,
) -> Result<Vec<LatticePoint>, LatticeError> {
    if !(r > 0.0) || !(eps > 0.0) {
        return Err(LatticeError::InvalidArgument("R and eps must be positive".into()));
    }
    let est = 3.0 * PI * r * r / (2.0 * lat.area());
    if est > 5e7 {
        return Err(LatticeError::TooLarge(est));
    }
    let rb = lat.reduced_basis();
    let mut out = Vec::new();
    for_rows_in_disk(&rb, 2.0 * r, |q, lo, hi| {
        for p in lo..=hi {
            let z = rb.b1 * p as f64 + rb.b2 * q as f64;
            if pole_is_valid(z, r, phi, eps) {
                out.push(rb.to_user(lat, p, q));
            }
        }
    });
    sort_poles(&mut out);
    Ok(out)
}

pub fn sort_poles(v: &mut [LatticePoint]) {
    v.sort_by(|a, b| {
        a.z.norm()
            .partial_cmp(&b.z.norm())
            .unwrap()
            .then(a.z.arg().partial_cmp(&b.z.arg()).unwrap())
            .then((a.l, a.m).cmp(&(b.l, b.m)))
    });
}

/// Number of valid poles in P⁺(0,R,2R). Exact row counting while the
/// half-annulus spans at most `row_limit` rows, otherwise an area estimate
/// (second component false).
pub fn count_poles_in_half_annulus(lat: &Lattice, r: f64, phi: f64, eps: f64) -> (f64, bool) {
    let rb = lat.reduced_basis();
    let d = (rb.b1.conj() * rb.b2).im;
    let rows = 4.0 * r * rb.b1.norm() / d;
    if rows > 4e6 {
        let ro = 2.0 * r - eps;
        let ri = r + eps;
        let area = 0.5 * PI * (ro * ro - ri * ri) - 2.0 * eps * (ro - ri);
        return (area / d, false);
    }
    let n1 = rb.b1.norm_sqr();
    let ro = 2.0 * r - eps;
    let ri = r + eps;
    let e = C64::from_polar(1.0, -phi);
    let s1 = (rb.b1 * e).im;
    let mut total: u64 = 0;
    let qmax = (ro * rb.b1.norm() / d).floor() as i64 + 1;
    let interval = |c: C64, rad: f64| -> Option<(f64, f64)> {
        let bq = (rb.b1 * c.conj()).re;
        let disc = bq * bq - n1 * (c.norm_sqr() - rad * rad);
        if disc < 0.0 {
            None
        } else {
            let sd = disc.sqrt();
            Some(((-bq - sd) / n1, (-bq + sd) / n1))
        }
    };
    for q in -qmax..=qmax {
        let c = rb.b2 * q as f64;
        let Some((olo, ohi)) = interval(c, ro) else { continue };
        // half-plane p*s1 + s2 > eps
        let s2 = (c * e).im;
        let (mut hlo, mut hhi) = (f64::NEG_INFINITY, f64::INFINITY);
        if s1.abs() < 1e-300 {
            if s2 <= eps {
                continue;
            }
        } else if s1 > 0.0 {
            hlo = (eps - s2) / s1;
        } else {
            hhi = (eps - s2) / s1;
        }
        let count_open = |a: f64, b: f64| -> u64 {
            // integers strictly inside (a, b)
            if b <= a {
                return 0;
            }
            let lo = a.floor() as i64 + 1;
            let hi = b.ceil() as i64 - 1;
            if hi >= lo {
                (hi - lo + 1) as u64
            } else {
                0
            }
        };
        let (a, b) = (olo.max(hlo), ohi.min(hhi));
        let mut n = count_open(a, b);
        if let Some((ilo, ihi)) = interval(c, ri) {
            // remove points with |z| <= ri
            let (ia, ib) = (ilo.max(a), ihi.min(b));
            if ib >= ia {
                let lo = ia.ceil() as i64;
                let hi = ib.floor() as i64;
                let lo = if (lo as f64) <= a { lo + 1 } else { lo };
                let hi = if (hi as f64) >= b { hi - 1 } else { hi };
                if hi >= lo {
                    n -= ((hi - lo + 1) as u64).min(n);
                }
            }
        }
        total += n;
    }
    (total as f64, true)
}

/// `k` valid poles of P⁺(0,R,2R) nearest to the inner-rim midpoint
/// (R + eps + |λ|)·e^{i(φ+π/2)}, ordered by (|b|, arg b).
pub fn select_poles(lat: &Lattice, r: f64, phi: f64, eps: f64, k: usize) -> Vec<LatticePoint> {
    let rb = lat.reduced_basis();
    let anchor = C64::from_polar(r + eps + rb.b2.norm(), phi + PI / 2.0);
    let (p0, q0) = rb.nearest(anchor);
    let mut found: Vec<(f64, LatticePoint)> = Vec::new();
    let mut rad = 2i64;
    while rad < 1 << 20 {
        found.clear();
        for dp in -rad..=rad {
            for dq in -rad..=rad {
                let (p, q) = (p0 + dp, q0 + dq);
                let z = rb.b1 * p as f64 + rb.b2 * q as f64;
                if pole_is_valid(z, r, phi, eps) {
                    found.push(((z - anchor).norm(), rb.to_user(lat, p, q)));
                }
            }
        }
        // the box of half-width rad contains the disk of radius rad*|b1|*sin60
        let safe = rad as f64 * rb.b1.norm() * 0.75f64.sqrt() * 0.99;
        let inside = found.iter().filter(|(d, _)| *d <= safe).count();
        if inside >= k {
            break;
        }
        rad *= 2;
    }
    found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then((a.1.l, a.1.m).cmp(&(b.1.l, b.1.m))));
    let mut out: Vec<LatticePoint> = found.into_iter().take(k).map(|x| x.1).collect();
    sort_poles(&mut out);
    out
}

/// Lift a lattice point into the multiprecision lattice.
pub fn mp_point(lat: &MpLattice, p: &LatticePoint) -> Cx<Mp> {
    lat.point(p.l, p.m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tri() -> Lattice {
        Lattice { lambda1: C64::new(1.0, 0.0), lambda2: rho() }
    }

    #[test]
    fn reduction_examples() {
        let lat = unit_tri();
        let (zr, l, m) = lat.reduce_to_fundamental(lat.lambda1 + lat.lambda2);
        assert_eq!((l, m), (1, 1));
        assert!(zr.norm() < 1e-14);
        let (zr, l, m) = lat.reduce_to_fundamental(lat.lambda1 * 0.5);
        assert_eq!((l, m), (0, 0));
        assert!((zr - lat.lambda1 * 0.5).norm() < 1e-15);
    }

    #[test]
    fn degenerate_lattice_rejected() {
        assert!(Lattice::new(C64::new(1.0, 0.0), C64::new(2.0, 0.0)).is_err());
        let lat = Lattice { lambda1: C64::new(1.0, 0.0), lambda2: C64::new(3.0, 0.0) };
        assert!(matches!(invariants(&lat, 20), Err(LatticeError::InvalidLattice(_))));
    }

    #[test]
    fn reduced_basis_of_hexagonal_is_stable() {
        let rb = unit_tri().reduced_basis();
        assert!((rb.b1.norm() - 1.0).abs() < 1e-15);
        assert!((rb.b2 / rb.b1).im > 0.0);
        let skew = Lattice { lambda1: C64::new(1.0, 0.0), lambda2: C64::new(7.3, 0.9) };
        let rb = skew.reduced_basis();
        assert!(((rb.b2 / rb.b1).re).abs() <= 0.5 + 1e-12);
        let back = skew.point(rb.k[1][0], rb.k[1][1]);
        assert!((back - rb.b2).norm() < 1e-12);
    }

    #[test]
    fn pole_counts_exact_and_listed_agree() {
        let lat = make_pole_critical_lattice(-1).unwrap();
        for (r, phi) in [(20.0, -1.4), (55.0, 0.3), (130.0, 2.0)] {
            let v = poles_in_half_annulus(&lat, r, phi, 0.0625).unwrap();
            let (c, exact) = count_poles_in_half_annulus(&lat, r, phi, 0.0625);
            assert!(exact);
            assert_eq!(v.len() as f64, c, "R={r}");
        }
    }

    #[test]
    fn selected_poles_are_valid() {
        let lat = make_pole_critical_lattice(-1).unwrap();
        let v = select_poles(&lat, 1.0e6, -1.5, 0.0625, 5);
        assert_eq!(v.len(), 5);
        for b in &v {
            assert!(pole_is_valid(b.z, 1.0e6, -1.5, 0.0625));
            assert!(b.z.norm() < 1.0e6 + 10.0);
        }
    }
}
