//! Multiprecision real scalar and the `Real` abstraction shared with `f64`.
//!
//! Binary operations on [`Mp`] are carried out at the larger of the two operand
//! precisions, so constants lifted at 64 bits never degrade a working value.

use std::cmp::Ordering;
use std::fmt;
use std::num::ParseFloatError;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use astro_float::{BigFloat, Consts, Radix, RoundingMode, Sign};
use num_complex::Complex;
use num_traits::{Num, One, Zero};

const RM: RoundingMode = RoundingMode::ToEven;

/// Scalar operations needed by the generic evaluation kernels.
pub trait Real:
    Clone + fmt::Debug + Send + Sync + PartialOrd + Num + Neg<Output = Self> + 'static
{
    /// `x` at the precision of `self`.
    fn lift(&self, x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    /// Working precision in bits.
    fn bits(&self) -> usize;
    fn lift_i64(&self, n: i64) -> Self {
        if n.unsigned_abs() < (1u64 << 53) {
            self.lift(n as f64)
        } else {
            let hi = (n >> 26) as f64;
            let lo = (n & ((1 << 26) - 1)) as f64;
            self.lift(hi) * self.lift(67108864.0) + self.lift(lo)
        }
    }
}

impl Real for f64 {
    fn lift(&self, x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn bits(&self) -> usize {
        53
    }
}

/// Arbitrary precision real number.
#[derive(Clone)]
pub struct Mp(pub BigFloat);

fn prec_of(b: &BigFloat) -> usize {
    b.mantissa_max_bit_len().unwrap_or(64)
}

impl Mp {
    pub fn from_f64(x: f64, bits: usize) -> Self {
        Mp(BigFloat::from_f64(x, bits))
    }

    pub fn from_i64(x: i64, bits: usize) -> Self {
        Mp(BigFloat::from_i64(x, bits))
    }

    pub fn zero_with(bits: usize) -> Self {
        Mp::from_f64(0.0, bits)
    }

    pub fn pi(bits: usize) -> Self {
        let mut cc = Consts::new().expect("constants cache");
        Mp(cc.pi(bits, RM))
    }

    pub fn exp(&self) -> Self {
        let mut cc = Consts::new().expect("constants cache");
        Mp(self.0.exp(self.bits(), RM, &mut cc))
    }

    pub fn cbrt(&self) -> Self {
        Mp(self.0.cbrt(self.bits(), RM))
    }

    pub fn atan2(&self, x: &Mp) -> Self {
        // only used for reporting; f64 accuracy is enough
        Mp::from_f64(self.to_f64().atan2(x.to_f64()), self.bits())
    }

    pub fn with_bits(&self, bits: usize) -> Self {
        let mut b = self.0.clone();
        let _ = b.set_precision(bits, RM);
        Mp(b)
    }

    /// Base-2 exponent (value is 0.m * 2^e), `None` for zero.
    pub fn exponent(&self) -> Option<i32> {
        if self.0.is_zero() {
            None
        } else {
            self.0.exponent().map(|e| e as i32)
        }
    }

    pub fn parse(s: &str, bits: usize) -> Self {
        let mut cc = Consts::new().expect("constants cache");
        Mp(BigFloat::parse(s, Radix::Dec, bits, RM, &mut cc))
    }

    /// Decimal representation with enough digits to round-trip at this precision.
    pub fn to_decimal(&self) -> String {
        let mut cc = Consts::new().expect("constants cache");
        self.0
            .format(Radix::Dec, RM, &mut cc)
            .unwrap_or_else(|_| "NaN".to_string())
    }

    pub fn is_finite(&self) -> bool {
        !self.0.is_nan() && !self.0.is_inf()
    }
}

fn ldexp(m: f64, e: i32) -> f64 {
    let mut x = m;
    let mut e = e;
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e)
}

impl Real for Mp {
    fn lift(&self, x: f64) -> Self {
        Mp::from_f64(x, 64)
    }

    fn to_f64(&self) -> f64 {
        if self.0.is_nan() {
            return f64::NAN;
        }
        if self.0.is_inf_pos() {
            return f64::INFINITY;
        }
        if self.0.is_inf_neg() {
            return f64::NEG_INFINITY;
        }
        match self.0.as_raw_parts() {
            None => f64::NAN,
            Some((m, _, s, e, _)) => {
                let top = m.last().copied().unwrap_or(0);
                if top == 0 {
                    return 0.0;
                }
                let v = ldexp(top as f64, e as i32 - 64);
                if s == Sign::Neg {
                    -v
                } else {
                    v
                }
            }
        }
    }

    fn sqrt(&self) -> Self {
        Mp(self.0.sqrt(self.bits(), RM))
    }

    fn abs(&self) -> Self {
        Mp(self.0.abs())
    }

    fn bits(&self) -> usize {
        prec_of(&self.0)
    }
}

impl fmt::Debug for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mp({:e}; {} bits)", self.to_f64(), self.bits())
    }
}

impl fmt::Display for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal())
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident) => {
        impl $tr for Mp {
            type Output = Mp;
            fn $m(self, rhs: Mp) -> Mp {
                let p = prec_of(&self.0).max(prec_of(&rhs.0));
                Mp(self.0.$m(&rhs.0, p, RM))
            }
        }
        impl<'a> $tr<&'a Mp> for &'a Mp {
            type Output = Mp;
            fn $m(self, rhs: &'a Mp) -> Mp {
                let p = prec_of(&self.0).max(prec_of(&rhs.0));
                Mp(self.0.$m(&rhs.0, p, RM))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl Rem for Mp {
    type Output = Mp;
    fn rem(self, rhs: Mp) -> Mp {
        Mp(self.0.rem(&rhs.0))
    }
}

impl Neg for Mp {
    type Output = Mp;
    fn neg(self) -> Mp {
        Mp(self.0.neg())
    }
}

impl PartialEq for Mp {
    fn eq(&self, other: &Self) -> bool {
        self.0.cmp(&other.0) == Some(0)
    }
}

impl PartialOrd for Mp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.cmp(&other.0).map(|c| c.cmp(&0))
    }
}

impl Zero for Mp {
    fn zero() -> Self {
        Mp::from_f64(0.0, 64)
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for Mp {
    fn one() -> Self {
        Mp::from_f64(1.0, 64)
    }
}

impl Num for Mp {
    type FromStrRadixErr = ParseFloatError;
    fn from_str_radix(s: &str, _radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        s.parse::<f64>().map(|x| Mp::from_f64(x, 64))
    }
}

/// Complex number over a [`Real`] scalar.
pub type Cx<T> = Complex<T>;

pub fn cx<T: Real>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

/// Lift an `f64` complex into the precision of `like`.
pub fn lift_c<T: Real>(like: &T, z: Complex<f64>) -> Cx<T> {
    Complex::new(like.lift(z.re), like.lift(z.im))
}

pub fn to_c64<T: Real>(z: &Cx<T>) -> Complex<f64> {
    Complex::new(z.re.to_f64(), z.im.to_f64())
}

pub fn abs2<T: Real>(z: &Cx<T>) -> T {
    z.re.clone() * z.re.clone() + z.im.clone() * z.im.clone()
}

/// |z| evaluated in f64 (exact enough for comparisons and reporting).
pub fn abs_f64<T: Real>(z: &Cx<T>) -> f64 {
    z.re.to_f64().hypot(z.im.to_f64())
}

pub fn scale<T: Real>(z: &Cx<T>, s: &T) -> Cx<T> {
    Complex::new(z.re.clone() * s.clone(), z.im.clone() * s.clone())
}

/// Principal square root.
pub fn csqrt<T: Real>(z: &Cx<T>) -> Cx<T> {
    let r = abs2(z).sqrt();
    if r.is_zero() {
        return z.clone();
    }
    let half = z.re.lift(0.5);
    let a = ((r.clone() + z.re.clone()) * half.clone()).sqrt();
    let b = ((r - z.re.clone()) * half).sqrt();
    if z.im < z.im.lift(0.0) {
        Complex::new(a, -b)
    } else {
        Complex::new(a, b)
    }
}

/// Cube root of a complex number, principal branch (argument in (−π/3, π/3]).
pub fn ccbrt_principal<T: Real>(z: &Cx<T>) -> Cx<T> {
    let zf = to_c64(z);
    let seed = zf.cbrt();
    let mut w = lift_c(&z.re, seed);
    // Newton on w^3 = z, precision doubles each step
    let bits = z.re.bits().max(53);
    let mut done = 53;
    let three = z.re.lift(3.0);
    while done < bits + 10 {
        let w2 = w.clone() * w.clone();
        w = w.clone() - (w2.clone() * w.clone() - z.clone()) / (w2 * three.clone());
        done *= 2;
    }
    w
}
