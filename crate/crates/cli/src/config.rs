use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weier_core::cantor::{r_limit, APolicy, ConstructionParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ternary,
    Dust,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Window {
    pub center: [f64; 2],
    pub radius: f64,
    pub resolution: usize,
    /// orbit steps per pixel
    pub depth: usize,
}

impl Default for Window {
    fn default() -> Self {
        Window { center: [1.0, 0.0], radius: 0.05, resolution: 256, depth: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub raster: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub orbit: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// pole-critical lattice parameter; ignored when `lattice` is set
    pub m: i64,
    /// explicit generators λ₁ = (re, im), λ₂ = (re, im)
    pub lattice: Option<[f64; 4]>,
    pub require_pole_critical: bool,
    pub truncation_radius: u32,
    pub r: f64,
    pub eps0: f64,
    pub eps: Option<f64>,
    pub a: APolicy,
    pub depth: usize,
    pub branching: usize,
    pub samples: usize,
    /// children sampled per parent for the full-branching density
    pub mc_children: usize,
    pub window: Window,
    /// escape radius base; R₁ of the built constants when unset
    pub r_base: Option<f64>,
    pub n_max: usize,
    pub family: Family,
    pub beta: Option<[f64; 2]>,
    /// decimal strings, evaluated in multiprecision
    pub beta_digits: Option<[String; 2]>,
    /// "c1", "c2", "c3" or "re,im"
    pub start: String,
    pub steps: usize,
    pub bits: Option<usize>,
    pub seed: u64,
    pub output: Outputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: -1,
            lattice: None,
            require_pole_critical: false,
            truncation_radius: 200,
            r: 0.04,
            eps0: 0.5,
            eps: None,
            a: APolicy::Auto,
            depth: 4,
            branching: 2,
            samples: 64,
            mc_children: 32,
            window: Window::default(),
            r_base: None,
            n_max: 2000,
            family: Family::Paper,
            beta: None,
            beta_digits: None,
            start: "c1".into(),
            steps: 5,
            bits: None,
            seed: 0,
            output: Outputs::default(),
        }
    }
}

fn finite_pos(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks shared by every command.
    pub fn validate(&self) -> Result<(), String> {
        if self.lattice.is_none() && (self.m >= 0 || self.m % 2 == 0) {
            return Err(format!("m = {} must be odd and negative", self.m));
        }
        if let Some(l) = self.lattice {
            if l.iter().any(|x| !x.is_finite()) {
                return Err("lattice generators must be finite".into());
            }
            let (w1, w2) = (num_complex::Complex64::new(l[0], l[1]), num_complex::Complex64::new(l[2], l[3]));
            if w1.norm() == 0.0 || w2.norm() == 0.0 || (w2 / w1).im.abs() < 1e-12 {
                return Err("lattice generators are degenerate".into());
            }
        }
        if self.truncation_radius < 10 {
            return Err("truncation_radius must be at least 10".into());
        }
        if !(self.r > 0.0 && self.r < r_limit()) {
            return Err(format!("r = {} outside (0, {:.6})", self.r, r_limit()));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(format!("eps0 = {} outside (0, 1)", self.eps0));
        }
        if let Some(e) = self.eps {
            if !finite_pos(e) {
                return Err(format!("eps = {e} must be positive"));
            }
        }
        if let APolicy::Value(a) = self.a {
            if !(a.is_finite() && a > 1.0) {
                return Err(format!("a = {a} must exceed 1"));
            }
        }
        if self.samples < 16 {
            return Err("samples must be at least 16".into());
        }
        let w = &self.window;
        if !(w.center.iter().all(|x| x.is_finite()) && finite_pos(w.radius)) {
            return Err("window center must be finite and radius positive".into());
        }
        if w.resolution == 0 || w.resolution > 1 << 14 {
            return Err(format!("resolution {} outside 1..=16384", w.resolution));
        }
        if w.depth == 0 || w.depth > 64 {
            return Err(format!("window depth {} outside 1..=64", w.depth));
        }
        if let Some(rb) = self.r_base {
            if !finite_pos(rb) {
                return Err(format!("r_base = {rb} must be positive"));
            }
        }
        if self.n_max < 3 || self.n_max > 1_000_000 {
            return Err(format!("n_max = {} outside 3..=1000000", self.n_max));
        }
        if let Some(b) = self.beta {
            if b.iter().any(|x| !x.is_finite()) {
                return Err("beta must be finite".into());
            }
        }
        if let Some(d) = &self.beta_digits {
            if d.iter().any(|s| s.trim().parse::<f64>().map_or(true, |x| !x.is_finite())) {
                return Err("beta_digits must be decimal numbers".into());
            }
        }
        if self.steps == 0 || self.steps > 10_000 {
            return Err(format!("steps = {} outside 1..=10000", self.steps));
        }
        if let Some(b) = self.bits {
            if !(64..=1 << 16).contains(&b) {
                return Err(format!("bits = {b} outside 64..=65536"));
            }
        }
        parse_start(&self.start)?;
        Ok(())
    }

    pub fn validate_cantor(&self) -> Result<(), String> {
        if self.lattice.is_some() {
            return Err("the cylinder construction needs a pole-critical lattice (m), not explicit generators".into());
        }
        if !(2..=6).contains(&self.depth) {
            return Err(format!("depth {} outside 2..=6", self.depth));
        }
        if !(1..=8).contains(&self.branching) {
            return Err(format!("branching {} outside 1..=8", self.branching));
        }
        if self.mc_children < 2 {
            return Err("mc_children must be at least 2".into());
        }
        Ok(())
    }

    pub fn construction_params(&self, depth: usize) -> ConstructionParams {
        ConstructionParams {
            m: self.m,
            r: self.r,
            eps0: self.eps0,
            eps: self.eps,
            a: self.a,
            depth,
            samples: self.samples,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Start {
    Critical(usize),
    Point(f64, f64),
}

pub fn parse_start(s: &str) -> Result<Start, String> {
    match s.trim() {
        "c1" => Ok(Start::Critical(1)),
        "c2" => Ok(Start::Critical(2)),
        "c3" => Ok(Start::Critical(3)),
        other => {
            let v = parse_list(other, 2)?;
            Ok(Start::Point(v[0], v[1]))
        }
    }
}

/// Comma-separated floats, exactly `n` of them.
pub fn parse_list(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(format!("expected {n} comma-separated numbers, got {s:?}")),
    }
}

pub fn parse_a(s: &str) -> Result<APolicy, String> {
    if s.trim() == "auto" {
        return Ok(APolicy::Auto);
    }
    s.trim().parse::<f64>().map(APolicy::Value).map_err(|_| format!("a must be 'auto' or a number, got {s:?}"))
}
