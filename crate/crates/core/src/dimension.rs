//! Hausdorff-dimension lower bounds for nested families from density and
//! diameter sequences, the closed-form bound 4/3 − 6 log 2 / log a, and a
//! box-counting estimator used as an independent check.

use std::collections::HashSet;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cantor::BuildConstants;
use crate::util::{linear_fit, NSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DimError {
    #[error("invalid family: {0}")]
    InvalidSpec(String),
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate scale range")]
    DegenerateScales,
}

type SeqFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Δ_n and d_n given as natural logarithms so deep levels do not underflow.
#[derive(Clone)]
pub struct NestedFamilySpec {
    pub ambient_dim: usize,
    pub log_delta: SeqFn,
    pub log_diam: SeqFn,
    pub description: String,
}

impl std::fmt::Debug for NestedFamilySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NestedFamilySpec({}, d={})", self.description, self.ambient_dim)
    }
}

impl NestedFamilySpec {
    pub fn new(
        ambient_dim: usize,
        delta: impl Fn(usize) -> f64 + Send + Sync + 'static,
        diam: impl Fn(usize) -> f64 + Send + Sync + 'static,
        description: &str,
    ) -> Self {
        NestedFamilySpec {
            ambient_dim,
            log_delta: Arc::new(move |n| delta(n).ln()),
            log_diam: Arc::new(move |n| diam(n).ln()),
            description: description.into(),
        }
    }

    pub fn from_logs(
        ambient_dim: usize,
        log_delta: impl Fn(usize) -> f64 + Send + Sync + 'static,
        log_diam: impl Fn(usize) -> f64 + Send + Sync + 'static,
        description: &str,
    ) -> Self {
        NestedFamilySpec {
            ambient_dim,
            log_delta: Arc::new(log_delta),
            log_diam: Arc::new(log_diam),
            description: description.into(),
        }
    }

    /// Same family with every d_n multiplied by c.
    pub fn scaled_diameters(&self, c: f64) -> Self {
        let f = self.log_diam.clone();
        let lc = c.ln();
        NestedFamilySpec {
            ambient_dim: self.ambient_dim,
            log_delta: self.log_delta.clone(),
            log_diam: Arc::new(move |n| f(n) + lc),
            description: format!("{} (d_n x {c})", self.description),
        }
    }
}

/// Middle-thirds Cantor set: Δ_n = 2/3, d_n = 3⁻ⁿ.
pub fn ternary_cantor() -> NestedFamilySpec {
    NestedFamilySpec::from_logs(1, |_| (2.0f64 / 3.0).ln(), |n| -(n as f64) * 3f64.ln(), "middle-thirds Cantor set")
}

/// Four-corner Cantor dust: Δ_n = 4/9, d_n = √2·3⁻ⁿ.
pub fn planar_dust() -> NestedFamilySpec {
    NestedFamilySpec::from_logs(
        2,
        |_| (4.0f64 / 9.0).ln(),
        |n| 0.5 * 2f64.ln() - n as f64 * 3f64.ln(),
        "four-corner Cantor dust",
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionBound {
    /// (n, d − Σ_{j≤n}|log Δ_j| / |log d_n|)
    pub partials: Vec<(usize, f64)>,
    /// intercept of the affine fit in 1/n over the last third
    pub extrapolated: f64,
    /// fitted coefficient of 1/n
    pub slope: f64,
    /// smallest partial in the fitted window
    pub liminf: f64,
    pub formula_value: Option<f64>,
}

pub fn mcmullen_bound(spec: &NestedFamilySpec, n_max: usize) -> Result<DimensionBound, DimError> {
    if n_max < 3 {
        return Err(DimError::InvalidSpec(format!("n_max = {n_max} < 3")));
    }
    let d = spec.ambient_dim as f64;
    let mut sum = NSum::default();
    let mut partials = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let ld = (spec.log_delta)(n);
        let lr = (spec.log_diam)(n);
        if !(ld.is_finite() && ld <= 0.0) {
            return Err(DimError::InvalidSpec(format!("Delta_{n} outside (0, 1]")));
        }
        if !(lr.is_finite() && lr < 0.0) {
            return Err(DimError::InvalidSpec(format!("d_{n} outside (0, 1)")));
        }
        sum.add(-ld);
        partials.push((n, d - sum.value() / -lr));
    }
    if (spec.log_diam)(n_max) >= (spec.log_diam)(1) {
        return Err(DimError::InvalidSpec("d_n does not decrease over the evaluated range".into()));
    }
    let start = (2 * n_max).div_ceil(3);
    let window = &partials[start - 1..];
    let x: Vec<f64> = window.iter().map(|(n, _)| 1.0 / *n as f64).collect();
    let y: Vec<f64> = window.iter().map(|(_, v)| *v).collect();
    let (intercept, slope) = linear_fit(&x, &y);
    let liminf = y.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DimensionBound { partials, extrapolated: intercept, slope, liminf, formula_value: None })
}

/// 4/3 − 6 log 2 / log a.
pub fn analytic_bound(a: f64) -> Result<f64, DimError> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(DimError::Domain(format!("a = {a} must exceed 1")));
    }
    Ok(4.0 / 3.0 - 6.0 * 2f64.ln() / a.ln())
}

/// Closed-form Δ_n, d_n of the cylinder construction:
/// Δ₁ = M′/R₂, Δ_n = M/(2^{9n}R_{n+1}), d₁ = 2r,
/// d_n = 4ε(1+r)/((C₂/C₁^{3/2})^{n−1} a^{3n(n−1)/4} R₁^{(3n−1)/2}).
pub fn paper_family_spec(c: &BuildConstants) -> Result<NestedFamilySpec, DimError> {
    if !(c.a > c.a0) {
        return Err(DimError::InvalidConstants(format!("a = {} must exceed a0 = {}", c.a, c.a0)));
    }
    let (la, lr1) = (c.a.ln(), c.r1.ln());
    let lm = c.big_m().ln();
    let lmp = c.big_m_prime().ln();
    let lq = (c.c2 / c.c1.powf(1.5)).ln();
    let l4 = (4.0 * c.eps * (1.0 + c.r)).ln();
    let l2r = (2.0 * c.r).ln();
    let ln2 = 2f64.ln();
    let spec = NestedFamilySpec::from_logs(
        2,
        move |n| {
            if n == 1 {
                lmp - (la + lr1)
            } else {
                lm - 9.0 * n as f64 * ln2 - (n as f64 * la + lr1)
            }
        },
        move |n| {
            if n == 1 {
                l2r
            } else {
                let k = n as f64;
                l4 - (k - 1.0) * lq - 0.75 * k * (k - 1.0) * la - 0.5 * (3.0 * k - 1.0) * lr1
            }
        },
        &format!("cylinder family, a = {}", c.a),
    );
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub a: f64,
    pub n_max: usize,
    pub partials: Vec<f64>,
    pub extrapolated: f64,
    pub liminf: f64,
    pub analytic: f64,
    /// |extrapolated − analytic|
    pub gap: f64,
    /// |partial(n_max) − analytic|
    pub partial_gap: f64,
    /// 10 × the fitted 1/n_max correction
    pub tolerance: f64,
    pub passed: bool,
}

pub fn consistency_check(c: &BuildConstants, n_max: usize) -> Result<ConsistencyReport, DimError> {
    let spec = paper_family_spec(c)?;
    let mut b = mcmullen_bound(&spec, n_max)?;
    let analytic = analytic_bound(c.a)?;
    b.formula_value = Some(analytic);
    let gap = (b.extrapolated - analytic).abs();
    let last = b.partials.last().unwrap().1;
    let tolerance = 10.0 * b.slope.abs() / n_max as f64;
    Ok(ConsistencyReport {
        a: c.a,
        n_max,
        partials: b.partials.iter().map(|p| p.1).collect(),
        extrapolated: b.extrapolated,
        liminf: b.liminf,
        analytic,
        gap,
        partial_gap: (last - analytic).abs(),
        tolerance,
        passed: gap <= tolerance,
    })
}

/// Geometric ladder of box sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

/// Least-squares slope of log N(δ) against log(1/δ).
pub fn box_count_dimension(points: &[C64], scales: ScaleRange) -> Result<f64, DimError> {
    if points.len() < 1000 {
        return Err(DimError::InvalidSpec(format!("{} points, need at least 1000", points.len())));
    }
    if !(scales.min > 0.0 && scales.max > scales.min && scales.steps >= 2) {
        return Err(DimError::DegenerateScales);
    }
    let (x0, y0) = points
        .iter()
        .fold((f64::INFINITY, f64::INFINITY), |(a, b), p| (a.min(p.re), b.min(p.im)));
    let mut xs = Vec::with_capacity(scales.steps);
    let mut ys = Vec::with_capacity(scales.steps);
    let ratio = (scales.min / scales.max).ln() / (scales.steps - 1) as f64;
    for k in 0..scales.steps {
        let delta = scales.max * (ratio * k as f64).exp();
        let cells: HashSet<(i64, i64)> = points
            .iter()
            .map(|p| (((p.re - x0) / delta).floor() as i64, ((p.im - y0) / delta).floor() as i64))
            .collect();
        xs.push(-delta.ln());
        ys.push((cells.len() as f64).ln());
    }
    Ok(linear_fit(&xs, &ys).1)
}
