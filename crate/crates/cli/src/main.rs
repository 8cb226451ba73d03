mod commands;
mod config;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_a, parse_list, Family, RunConfig};

/// Exit status of a failed command.
#[derive(Debug)]
pub enum Failure {
    /// 2
    Config(String),
    /// 3
    Verify(String),
    /// 4
    Evaluator(String),
    /// 5
    RootNotFound(String),
    /// 6
    Consistency(String),
    /// 1
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Verify(_) => 3,
            Failure::Evaluator(_) => 4,
            Failure::RootNotFound(_) => 5,
            Failure::Consistency(_) => 6,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(s) => write!(f, "invalid configuration: {s}"),
            Failure::Verify(s) => write!(f, "verification failed: {s}"),
            Failure::Evaluator(s) => write!(f, "evaluator failures: {s}"),
            Failure::RootNotFound(s) => write!(f, "root finding exhausted: {s}"),
            Failure::Consistency(s) => write!(f, "consistency check failed: {s}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "weier", version, about = "Escaping parameters of g = beta * wp on pole-critical lattices")]
struct Cli {
    /// JSON run configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Lattice queries
    Lattice {
        #[command(subcommand)]
        action: LatticeCmd,
    },
    /// Classify a window of parameters and write a P2 raster plus a CSV summary
    EscapeMap(EscapeArgs),
    /// Cylinder construction
    Cantor {
        #[command(subcommand)]
        action: CantorCmd,
    },
    /// Dimension bounds
    Dim {
        #[command(subcommand)]
        action: DimCmd,
    },
    /// Print the orbit of a starting point as CSV with a JSON status footer
    Orbit(OrbitArgs),
    /// Invariant suites
    Verify {
        #[command(subcommand)]
        action: VerifyCmd,
    },
    /// Print the effective configuration as JSON
    ShowConfig(CommonArgs),
}

#[derive(Subcommand, Debug)]
enum LatticeCmd {
    /// Generators, invariants, critical values and the pole-critical check
    Info(LatticeArgs),
}

#[derive(Subcommand, Debug)]
enum CantorCmd {
    /// Build the cylinder tree and per-level statistics
    Build(CantorArgs),
}

#[derive(Subcommand, Debug)]
enum DimCmd {
    /// McMullen-type lower bound, with the closed form for the cylinder family
    Bound(DimArgs),
}

#[derive(Subcommand, Debug)]
enum VerifyCmd {
    /// Every module's invariant checks
    All(CommonArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// odd negative m of the pole-critical lattice
    #[arg(long, allow_hyphen_values = true)]
    m: Option<i64>,
    /// explicit generators l1re,l1im,l2re,l2im
    #[arg(long, allow_hyphen_values = true)]
    lattice: Option<String>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// growth factor: a number or "auto"
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct LatticeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// exit 3 unless every critical value is a lattice point
    #[arg(long)]
    require_pole_critical: bool,
    #[arg(long)]
    truncation: Option<u32>,
}

#[derive(Args, Debug)]
struct EscapeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// window centre re,im
    #[arg(long, allow_hyphen_values = true)]
    center: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    /// pixels per side
    #[arg(long)]
    resolution: Option<usize>,
    /// orbit steps per pixel
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    r_base: Option<f64>,
    /// raster path (P2)
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV summary path
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CantorArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    mc_children: Option<usize>,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DimArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long, value_enum)]
    family: Option<Family>,
}

#[derive(Args, Debug)]
struct OrbitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// parameter re,im
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    /// parameter as decimal strings re,im, iterated in multiprecision
    #[arg(long, allow_hyphen_values = true)]
    beta_digits: Option<String>,
    /// c1, c2, c3 or re,im
    #[arg(long, allow_hyphen_values = true)]
    start: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    r_base: Option<f64>,
    /// multiprecision bits
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn apply_common(cfg: &mut RunConfig, c: &CommonArgs) -> Result<(), Failure> {
    if let Some(m) = c.m {
        cfg.m = m;
        cfg.lattice = None;
    }
    if let Some(l) = &c.lattice {
        let v = parse_list(l, 4).map_err(Failure::Config)?;
        cfg.lattice = Some([v[0], v[1], v[2], v[3]]);
    }
    if let Some(r) = c.r {
        cfg.r = r;
    }
    if let Some(e) = c.eps0 {
        cfg.eps0 = e;
    }
    if c.eps.is_some() {
        cfg.eps = c.eps;
    }
    if let Some(a) = &c.a {
        cfg.a = parse_a(a).map_err(Failure::Config)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(())
}

fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *dst = v.clone();
    }
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("WEIER_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Config(format!("WEIER_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Other(e.into()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    match cli.cmd {
        Cmd::Lattice { action: LatticeCmd::Info(a) } => {
            apply_common(&mut cfg, &a.common)?;
            cfg.require_pole_critical |= a.require_pole_critical;
            set(&mut cfg.truncation_radius, &a.truncation);
            cfg.validate().map_err(Failure::Config)?;
            commands::lattice_info(&cfg)
        }
        Cmd::EscapeMap(a) => {
            apply_common(&mut cfg, &a.common)?;
            if let Some(c) = &a.center {
                let v = parse_list(c, 2).map_err(Failure::Config)?;
                cfg.window.center = [v[0], v[1]];
            }
            set(&mut cfg.window.radius, &a.radius);
            set(&mut cfg.window.resolution, &a.resolution);
            set(&mut cfg.window.depth, &a.depth);
            if a.r_base.is_some() {
                cfg.r_base = a.r_base;
            }
            if a.out.is_some() {
                cfg.output.raster = a.out.clone();
            }
            if a.summary.is_some() {
                cfg.output.summary = a.summary.clone();
            }
            cfg.validate().map_err(Failure::Config)?;
            commands::escape_map(&cfg)
        }
        Cmd::Cantor { action: CantorCmd::Build(a) } => {
            apply_common(&mut cfg, &a.common)?;
            set(&mut cfg.depth, &a.depth);
            set(&mut cfg.branching, &a.branching);
            set(&mut cfg.samples, &a.samples);
            set(&mut cfg.mc_children, &a.mc_children);
            if a.tree.is_some() {
                cfg.output.tree = a.tree.clone();
            }
            if a.stats.is_some() {
                cfg.output.stats = a.stats.clone();
            }
            cfg.validate().map_err(Failure::Config)?;
            cfg.validate_cantor().map_err(Failure::Config)?;
            commands::cantor_build(&cfg)
        }
        Cmd::Dim { action: DimCmd::Bound(a) } => {
            apply_common(&mut cfg, &a.common)?;
            set(&mut cfg.n_max, &a.n_max);
            set(&mut cfg.family, &a.family);
            cfg.validate().map_err(Failure::Config)?;
            commands::dim_bound(&cfg)
        }
        Cmd::Orbit(a) => {
            apply_common(&mut cfg, &a.common)?;
            if let Some(b) = &a.beta {
                let v = parse_list(b, 2).map_err(Failure::Config)?;
                cfg.beta = Some([v[0], v[1]]);
                cfg.beta_digits = None;
            }
            if let Some(d) = &a.beta_digits {
                let parts: Vec<&str> = d.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(Failure::Config(format!("beta_digits needs re,im, got {d:?}")));
                }
                cfg.beta_digits = Some([parts[0].to_string(), parts[1].to_string()]);
                cfg.beta = None;
            }
            set(&mut cfg.start, &a.start);
            set(&mut cfg.steps, &a.steps);
            if a.r_base.is_some() {
                cfg.r_base = a.r_base;
            }
            if a.bits.is_some() {
                cfg.bits = a.bits;
            }
            if a.out.is_some() {
                cfg.output.orbit = a.out.clone();
            }
            cfg.validate().map_err(Failure::Config)?;
            commands::orbit(&cfg)
        }
        Cmd::Verify { action: VerifyCmd::All(a) } => {
            apply_common(&mut cfg, &a)?;
            cfg.validate().map_err(Failure::Config)?;
            verify::run_all(&cfg)
        }
        Cmd::ShowConfig(a) => {
            apply_common(&mut cfg, &a)?;
            cfg.validate().map_err(Failure::Config)?;
            commands::out(&format!("{}\n", cfg.to_json()));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("weier: {f}");
            ExitCode::from(f.code())
        }
    }
}
