use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geoflow_core::eikonal::SamplerKind;
use geoflow_core::io::RunConfig;
use geoflow_core::manifold::{DomainBox, ManifoldSpec};

use crate::UsageError;

#[derive(Parser, Debug)]
#[command(
    name = "geoflow",
    version,
    about = "Geodesics, curvature and distance fields on immersed manifolds"
)]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the geodesic from p with initial velocity v and write the trajectory.
    Shoot {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        v: Point,
    },
    /// Connect p and q by shooting; write the shortest geodesic found and a per-seed report.
    Connect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[command(flatten)]
        shooting: ShootingArgs,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        q: Point,
        /// Per-seed report CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare the straight chart line, the ML-LM curve and the symplectic geodesic between p and q.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[command(flatten)]
        shooting: ShootingArgs,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        p: Point,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        q: Point,
        /// ML-LM ensemble size.
        #[arg(long)]
        ensemble: Option<usize>,
        /// ML-LM Adam steps per member.
        #[arg(long)]
        steps: Option<usize>,
        /// Summary statistics CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Tabulate scalar curvature, ψ and the magnification factor on a grid.
    CurvatureField {
        #[command(flatten)]
        common: Common,
        /// Points per side.
        #[arg(long, default_value_t = 41)]
        grid: usize,
        /// α in ψ = 1 + α log(1 + R).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Draw Metropolis-Hastings samples with density proportional to ψ.
    SampleCurvature {
        #[command(flatten)]
        common: Common,
        /// Number of samples kept.
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Train a neural distance field from a source point.
    TrainEikonal {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        source: Point,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
        /// Output weights file.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Loss history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Continue from an existing weights file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained distance field on a grid or at given points.
    EvalField {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// Points per side of an evaluation grid.
        #[arg(long, conflicts_with = "points")]
        grid: Option<usize>,
        /// Semicolon-separated points, e.g. "0,0;1,2".
        #[arg(long, allow_hyphen_values = true)]
        points: Option<String>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub manifold: Option<ManifoldKind>,
    /// Euclidean dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Sphere radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Decoder weights file for the decoder manifold.
    #[arg(long)]
    pub decoder: Option<PathBuf>,
    /// Lower chart corner, comma-separated.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, requires = "upper")]
    pub lower: Option<Point>,
    /// Upper chart corner, comma-separated.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, requires = "lower")]
    pub upper: Option<Point>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; standard output when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct IntegratorArgs {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ShootingArgs {
    /// Number of Newton seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifoldKind {
    Euclidean,
    Sphere,
    Peaks,
    Decoder,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerArg {
    Uniform,
    Curvature,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Uniform => SamplerKind::Uniform,
            SamplerArg::Curvature => SamplerKind::Curvature,
        }
    }
}

/// A comma-separated chart point.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(pub Vec<f64>);

impl std::ops::Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn parse_point(s: &str) -> Result<Point, String> {
    parse_coordinates(s).map(Point)
}

fn parse_coordinates(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad coordinate `{t}`: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(v)
            } else {
                Err("coordinates must be finite".into())
            }
        })
}

pub fn parse_points(s: &str) -> Result<Vec<Vec<f64>>, String> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(parse_coordinates)
        .collect()
}

/// The resolved configuration plus whether the manifold was chosen
/// explicitly, by flag or in the config file.
pub struct Resolved {
    pub config: RunConfig,
    pub explicit_manifold: bool,
}

impl Common {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<Resolved, anyhow::Error> {
        let (mut config, mut explicit_manifold) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    UsageError(format!("cannot read config {}: {e}", path.display()))
                })?;
                let config = RunConfig::from_toml(&text).map_err(|e| UsageError(e.to_string()))?;
                let has_manifold = text
                    .parse::<toml::Table>()
                    .map(|t| t.contains_key("manifold"))
                    .unwrap_or(false);
                (config, has_manifold)
            }
            None => (RunConfig::default(), false),
        };
        let current = config.manifold.clone();
        let spec = match self.manifold {
            Some(ManifoldKind::Euclidean) => ManifoldSpec::Euclidean {
                dim: self.dim.unwrap_or(2),
            },
            Some(ManifoldKind::Sphere) => ManifoldSpec::Sphere {
                radius: self.radius.unwrap_or(1.0),
            },
            Some(ManifoldKind::Peaks) => ManifoldSpec::Peaks,
            Some(ManifoldKind::Decoder) => ManifoldSpec::Decoder {
                weights: self
                    .decoder
                    .clone()
                    .ok_or_else(|| UsageError("--manifold decoder needs --decoder".into()))?,
            },
            None => match current {
                ManifoldSpec::Euclidean { dim } => ManifoldSpec::Euclidean {
                    dim: self.dim.unwrap_or(dim),
                },
                ManifoldSpec::Sphere { radius } => ManifoldSpec::Sphere {
                    radius: self.radius.unwrap_or(radius),
                },
                ManifoldSpec::Decoder { weights } => ManifoldSpec::Decoder {
                    weights: self.decoder.clone().unwrap_or(weights),
                },
                other => other,
            },
        };
        if self.manifold.is_some() {
            explicit_manifold = true;
        }
        config.manifold = spec;
        if let (Some(lo), Some(hi)) = (&self.lower, &self.upper) {
            config.domain = Some(
                DomainBox::new(lo.0.clone(), hi.0.clone())
                    .map_err(|e| UsageError(e.to_string()))?,
            );
        }
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if let Some(out) = &self.out {
            config.output.csv = Some(out.clone());
        }
        Ok(Resolved {
            config,
            explicit_manifold,
        })
    }
}

impl IntegratorArgs {
    pub fn apply(&self, config: &mut RunConfig) {
        let c = &mut config.integrator;
        c.delta = self.delta.unwrap_or(c.delta);
        c.omega = self.omega.unwrap_or(c.omega);
        c.order = self.order.unwrap_or(c.order);
    }
}

impl ShootingArgs {
    pub fn apply(&self, config: &mut RunConfig) {
        let c = &mut config.shooting;
        c.seeds = self.seeds.unwrap_or(c.seeds);
        c.tol = self.tol.unwrap_or(c.tol);
        c.max_iters = self.max_iters.unwrap_or(c.max_iters);
        if let Some(seed) = config.seed {
            c.rng_seed = seed;
        }
    }
}
