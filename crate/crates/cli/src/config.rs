use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use diffusion_forge::{parse_fixture, Density, DiffusionSpec, Fixture, SkewProductSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Bad input: unreadable or malformed config, spec files or flags. Exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Options shared by every subcommand. All are optional so a config file can fill them.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// JSON config file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Spec file: a fixture document, a skew product or a diffusion
    #[arg(long, global = true, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Base spec file for check-subspace
    #[arg(long, global = true, value_name = "FILE")]
    pub base: Option<PathBuf>,
    /// Catalogue entry, e.g. `bessel(3)` or `example2(gamma=1)`
    #[arg(long, global = true, value_name = "NAME")]
    pub fixture: Option<String>,
    /// Monte Carlo sample count
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Master seed
    #[arg(long, global = true, env = "DIFFUSION_FORGE_SEED")]
    pub seed: Option<u64>,
    /// Natural-scale grid step of the random walk
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Output directory; reports go to stdout when absent
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Starting point (radius for skew products)
    #[arg(long, global = true)]
    pub x0: Option<f64>,
    /// Time horizon of a path
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Run until the path leaves `(a, b)` instead of to a fixed time
    #[arg(long, global = true, num_args = 2, value_names = ["A", "B"])]
    pub until_exit: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub max_steps: Option<u64>,
    /// Step of the spherical walk
    #[arg(long, global = true)]
    pub sphere_dt: Option<f64>,
    /// Initial direction, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub theta0: Option<Vec<f64>>,
    /// Selector, `svc(a, b, ratio)` or `dyadic(top, ratio, decay)`
    #[arg(long, global = true)]
    pub selector: Option<String>,
    /// Grid size of extension tables
    #[arg(long, global = true)]
    pub grid_points: Option<usize>,
    /// Monte Carlo chunk count
    #[arg(long, global = true)]
    pub chunks: Option<usize>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        $( if $hi.$f.is_none() { $hi.$f = $lo.$f.clone(); } )*
    };
}

impl Options {
    /// Fills unset fields from `file`, resolving its relative paths against `dir`.
    pub fn overlay(mut self, file: Options, dir: &Path) -> Options {
        let rebase = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { dir.join(p) } else { p });
        let file = Options {
            spec: rebase(file.spec),
            base: rebase(file.base),
            out: rebase(file.out),
            ..file
        };
        overlay!(
            self, file, spec, base, fixture, n, seed, h, out, format, x0, horizon, until_exit, max_steps, sphere_dt,
            theta0, selector, grid_points, chunks
        );
        self
    }

    pub fn load(path: &Path) -> anyhow::Result<Options> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }
}

/// A model read from `--spec` or `--fixture`.
pub fn load_model(opts: &Options, default_fixture: &str) -> anyhow::Result<(String, Fixture)> {
    if let Some(path) = &opts.spec {
        return Ok((path.display().to_string(), read_spec(path)?));
    }
    let name = opts.fixture.as_deref().unwrap_or(default_fixture);
    let fx = parse_fixture(name).map_err(|e| config_err(format!("--fixture {name}: {e}")))?;
    Ok((name.to_string(), fx))
}

pub fn read_spec(path: &Path) -> anyhow::Result<Fixture> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let fixture = if value.get("type").is_some() {
        serde_json::from_value::<Fixture>(value)
    } else if value.get("radial").is_some() {
        serde_json::from_value::<SkewProductSpec>(value).map(Fixture::Skew)
    } else {
        serde_json::from_value::<DiffusionSpec>(value).map(Fixture::Diffusion)
    }
    .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    validate(&fixture).with_context(|| format!("{}", path.display()))?;
    Ok(fixture)
}

fn validate(f: &Fixture) -> diffusion_forge::Result<()> {
    match f {
        Fixture::Diffusion(s) => s.validate(),
        Fixture::Skew(s) => s.validate(),
        Fixture::Subspace { candidate, base } => {
            candidate.validate()?;
            base.validate()
        }
    }
}

/// Revuz density attached to a model, if any.
pub fn revuz(f: &Fixture) -> Option<Density> {
    f.skew().map(|s| s.revuz_density.clone())
}
