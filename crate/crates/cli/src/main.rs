//! `diffusion-forge` command line.

mod config;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use diffusion_forge::extension::default_grid;
use diffusion_forge::montecarlo::McConfig;
use diffusion_forge::selector::dyadic_selector;
use diffusion_forge::sim::{simulate_path_with, simulate_skew, SkewConfig};
use diffusion_forge::skew::classify_skew;
use diffusion_forge::{
    build_extension, check_subspace_criterion, classify_endpoint, classify_global, estimate_hitting, eval_scale,
    hitting_probability, run_verify, svc_selector, thin_scale, Check, DiffusionSpec, Endpoint, Error, ExtensionInput,
    Fixture, PathSample, SkewProductSpec, SubspaceSelector, TimeHorizon, VerifyConfig, WalkConfig,
};

use config::{config_err, load_model, read_spec, revuz, ConfigError, Format, Options};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_N: usize = 100_000;
const DEFAULT_H: f64 = 0.01;

#[derive(Parser, Debug)]
#[command(name = "diffusion-forge", version, about = "Diffusions by scale and speed, regular subspaces and extensions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Boundary and global classification of a model
    Classify,
    /// One radial path, with its additive functional for skew products
    Simulate,
    /// One skew-product path `(r, theta)`
    SkewSimulate,
    /// Thin the radial scale of a model by a selector
    Subspace,
    /// Decide whether a candidate skew product is a regular subspace of a base
    CheckSubspace,
    /// Build the regular extension of a subspace
    Extend,
    /// Monte Carlo hitting probability against the scale formula
    Hitting {
        #[arg(long, default_value_t = 0.5)]
        a: f64,
        #[arg(long, default_value_t = 2.0)]
        b: f64,
    },
    /// Run acceptance checks (all by default)
    Verify {
        /// Check names or numbers
        checks: Vec<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Simulate => "simulate",
            Command::SkewSimulate => "skew-simulate",
            Command::Subspace => "subspace",
            Command::CheckSubspace => "check-subspace",
            Command::Extend => "extend",
            Command::Hitting { .. } => "hitting",
            Command::Verify { .. } => "verify",
        }
    }
}

/// A finished command: JSON payload, optional CSV table and pass flag.
struct Output {
    result: Value,
    csv: Option<String>,
    passed: bool,
    summary: Vec<String>,
}

impl Output {
    fn ok(result: Value, csv: String) -> Self {
        Self {
            result,
            csv: Some(csv),
            passed: true,
            summary: Vec::new(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> anyhow::Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn skew_of(fx: &Fixture, label: &str) -> anyhow::Result<SkewProductSpec> {
    fx.skew()
        .cloned()
        .ok_or_else(|| config_err(format!("{label} is a plain diffusion; a skew product is needed")))
}

fn walk_config(opts: &Options, seed: u64) -> anyhow::Result<WalkConfig> {
    let time_horizon = match &opts.until_exit {
        Some(v) if v.len() == 2 => TimeHorizon::UntilExit { until_exit: [v[0], v[1]] },
        Some(_) => return Err(config_err("until-exit needs two values")),
        None => TimeHorizon::Time(opts.horizon.unwrap_or(1.0)),
    };
    Ok(WalkConfig {
        step_h: opts.h.unwrap_or(DEFAULT_H),
        max_steps: opts.max_steps.unwrap_or(10_000_000),
        seed,
        time_horizon,
    })
}

fn classify(opts: &Options) -> anyhow::Result<Output> {
    let (label, fx) = load_model(opts, "bessel(2)")?;
    let spec = fx.diffusion();
    let c = spec.reference_point();
    let lower = classify_endpoint(spec, Endpoint::Lower, c)?;
    let upper = classify_endpoint(spec, Endpoint::Upper, c)?;
    let global = match fx.skew() {
        Some(s) => classify_skew(s)?,
        None => classify_global(spec)?,
    };
    let mut rows = Vec::new();
    for (k, v) in [
        ("irreducible", global.irreducible),
        ("recurrent", global.recurrent),
        ("transient", global.transient),
        ("conservative", global.conservative),
    ] {
        rows.push(vec![k.to_string(), v.to_string()]);
    }
    for b in [&lower, &upper] {
        let e = serde_json::to_value(b.endpoint)?;
        let e = e.as_str().unwrap_or("endpoint");
        rows.push(vec![format!("{e}_approachable"), b.approachable.to_string()]);
        rows.push(vec![format!("{e}_approachable_finite_time"), b.approachable_finite_time.to_string()]);
    }
    let result = json!({
        "model": label,
        "recurrent": global.recurrent,
        "transient": global.transient,
        "conservative": global.conservative,
        "irreducible": global.irreducible,
        "boundaries": [lower, upper],
    });
    Ok(Output::ok(result, csv_rows(&["property", "value"], rows)))
}

fn path_csv(p: &PathSample) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn simulate(opts: &Options, seed: u64) -> anyhow::Result<Output> {
    let (label, fx) = load_model(opts, "bessel(3)")?;
    let cfg = walk_config(opts, seed)?;
    let x0 = opts.x0.unwrap_or(1.0);
    let f = revuz(&fx);
    let path = simulate_path_with(fx.diffusion(), x0, &cfg, f.as_ref())?;
    let csv = path_csv(&path)?;
    Ok(Output::ok(json!({ "model": label, "x0": x0, "walk": cfg, "path": path }), csv))
}

fn skew_simulate(opts: &Options, seed: u64) -> anyhow::Result<Output> {
    let (label, fx) = load_model(opts, "brownian-skew(3)")?;
    let skew = skew_of(&fx, &label)?;
    let cfg = SkewConfig {
        walk: walk_config(opts, seed)?,
        sphere_dt: opts.sphere_dt.unwrap_or(1e-3),
    };
    let r0 = opts.x0.unwrap_or(1.0);
    let theta0 = opts.theta0.clone().unwrap_or_else(|| {
        let mut t = vec![0.0; skew.d];
        t[0] = 1.0;
        t
    });
    let path = simulate_skew(&skew, r0, &theta0, &cfg)?;
    let csv = path_csv(&path)?;
    Ok(Output::ok(json!({ "model": label, "r0": r0, "theta0": theta0, "walk": cfg, "path": path }), csv))
}

fn parse_selector(text: &str) -> anyhow::Result<SubspaceSelector> {
    let bad = || config_err(format!("selector `{text}`: expected svc(a, b, ratio) or dyadic(top, ratio, decay)"));
    let (name, rest) = text.trim().split_once('(').ok_or_else(bad)?;
    let args: Vec<f64> = rest
        .strip_suffix(')')
        .ok_or_else(bad)?
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let f = match (name.trim(), args.as_slice()) {
        ("svc", [a, b, r]) => svc_selector(*a, *b, *r),
        ("dyadic", [t, r, d]) => dyadic_selector(*t, *r, *d),
        _ => return Err(bad()),
    };
    f.map_err(|e| config_err(format!("selector `{text}`: {e}")))
}

fn subspace(opts: &Options) -> anyhow::Result<Output> {
    let (label, fx) = load_model(opts, "brownian-skew(2)")?;
    let sel_text = opts.selector.as_deref().unwrap_or("svc(1, 2, 0.5)");
    let f = parse_selector(sel_text)?;
    let (candidate, base) = match &fx {
        Fixture::Diffusion(s) => {
            let mut c = s.clone();
            c.scale = thin_scale(&s.scale, &f)?;
            c.validate()?;
            (Fixture::Diffusion(c), fx.clone())
        }
        _ => {
            let base = skew_of(&fx, &label)?;
            let mut c = base.clone();
            c.radial.scale = thin_scale(&base.radial.scale, &f)?;
            c.validate()?;
            (Fixture::Subspace { candidate: c, base: base.clone() }, Fixture::Skew(base))
        }
    };
    let (p, pt) = (&base.diffusion().scale, &candidate.diffusion().scale);
    let grid = default_grid(opts.grid_points.unwrap_or(40));
    let mut rows = Vec::new();
    for &x in &grid {
        rows.push(vec![x.to_string(), eval_scale(p, x)?.to_string(), eval_scale(pt, x)?.to_string()]);
    }
    let table: Vec<Value> = rows.iter().map(|r| json!({ "x": r[0].parse::<f64>().unwrap_or(f64::NAN), "p": r[1], "p_thinned": r[2] })).collect();
    let result = json!({
        "model": label,
        "selector": sel_text,
        "selector_report": f.report(),
        "fixture": candidate,
        "table": table,
    });
    Ok(Output::ok(result, csv_rows(&["x", "p", "p_thinned"], rows)))
}

fn check_subspace(opts: &Options) -> anyhow::Result<Output> {
    let (candidate, base) = match (&opts.spec, &opts.base) {
        (Some(c), Some(b)) => {
            let c = read_spec(c)?;
            let b = read_spec(b)?;
            (skew_of(&c, "candidate")?, skew_of(&b, "base")?)
        }
        (Some(c), None) => match read_spec(c)? {
            Fixture::Subspace { candidate, base } => (candidate, base),
            _ => return Err(config_err("--spec needs a subspace document, or pass --base")),
        },
        (None, _) => {
            let (label, fx) = load_model(opts, "svc-subspace")?;
            match fx {
                Fixture::Subspace { candidate, base } => (candidate, base),
                _ => return Err(config_err(format!("{label} is not a subspace fixture"))),
            }
        }
    };
    let report = check_subspace_criterion(&candidate, &base)?;
    let c = report.c.map_or(String::new(), |c| c.to_string());
    let proper = report.proper.map_or(String::new(), |p| p.to_string());
    let csv = csv_rows(
        &["is_subspace", "c", "proper", "equivalent_representation"],
        [vec![report.is_subspace.to_string(), c, proper, report.equivalent_representation.to_string()]],
    );
    Ok(Output::ok(to_value(&report)?, csv))
}

fn extend(opts: &Options) -> anyhow::Result<Output> {
    let (label, fx) = load_model(opts, "example2-skew(1)")?;
    let input = match fx.skew() {
        Some(s) => ExtensionInput::from_skew(s)?,
        None => ExtensionInput::from_skew(&SkewProductSpec::new(fx.diffusion().clone(), 3, diffusion_forge::Density::power(1.0, -2.0))?)?,
    };
    let ext = build_extension(&input)?;
    let grid = default_grid(opts.grid_points.unwrap_or(40));
    let report = ext.report(&grid)?;
    let invariants = ext.check_invariants(&default_grid(1000))?;
    let rows = report
        .table
        .iter()
        .map(|r| vec![r.x.to_string(), r.r.to_string(), r.h.to_string(), r.p_hat_of_h.to_string()]);
    let csv = csv_rows(&["x", "r", "h", "p_hat_of_h"], rows);
    Ok(Output {
        result: json!({ "model": label, "extension": report, "invariants": invariants }),
        csv: Some(csv),
        passed: invariants.passed,
        summary: Vec::new(),
    })
}

fn hitting(opts: &Options, seed: u64, a: f64, b: f64) -> anyhow::Result<Output> {
    let (label, fx) = load_model(opts, "bessel(3)")?;
    let spec: &DiffusionSpec = fx.diffusion();
    let x = opts.x0.unwrap_or(1.0);
    let mc = McConfig {
        n: opts.n.unwrap_or(DEFAULT_N),
        seed,
        chunks: opts.chunks.unwrap_or(diffusion_forge::montecarlo::DEFAULT_CHUNKS),
    };
    let h = opts.h.unwrap_or_else(|| {
        let span = |s: &DiffusionSpec| -> diffusion_forge::Result<f64> { Ok(eval_scale(&s.scale, b)? - eval_scale(&s.scale, a)?) };
        span(spec).map_or(DEFAULT_H, |w| w / 96.0)
    });
    let est = estimate_hitting(spec, x, a, b, h, &mc)?;
    let exact = hitting_probability(spec, x, a, b)?;
    let z = est.z_score(exact);
    let passed = z <= diffusion_forge::verify::Z_TOL;
    let csv = csv_rows(
        &["estimate", "stderr", "formula", "z"],
        [vec![est.estimate.to_string(), est.stderr.to_string(), exact.to_string(), z.to_string()]],
    );
    Ok(Output {
        result: json!({ "model": label, "x": x, "interval": [a, b], "step": h, "mc": est, "formula": exact, "z": z, "passed": passed }),
        csv: Some(csv),
        passed,
        summary: vec![format!("hitting {label}: {} (z = {z:.3})", if passed { "PASS" } else { "FAIL" })],
    })
}

fn verify(opts: &Options, seed: u64, names: &[String]) -> anyhow::Result<Output> {
    let checks = if names.is_empty() {
        Check::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| Check::parse(n).map_err(|e| config_err(e.to_string())))
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    let defaults = VerifyConfig::default();
    let cfg = VerifyConfig {
        n: opts.n.unwrap_or(defaults.n),
        seed,
        chunks: opts.chunks.unwrap_or(defaults.chunks),
        grid_points: opts.grid_points.unwrap_or(defaults.grid_points),
    };
    let report = run_verify(&cfg, &checks)?;
    let rows = report
        .checks
        .iter()
        .map(|c| vec![c.id.to_string(), c.name.clone(), c.passed.to_string()]);
    Ok(Output {
        csv: Some(csv_rows(&["criterion", "name", "passed"], rows)),
        passed: report.passed,
        summary: report.summary_lines(),
        result: to_value(&report)?,
    })
}

fn write_file(dir: &Path, name: &str, body: &[u8]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn emit(command: &str, opts: &Options, seed: u64, out: &Output) -> anyhow::Result<()> {
    let format = opts.format.unwrap_or_default();
    let doc = json!({
        "command": command,
        "seed": seed,
        "config": opts,
        "result": out.result,
    });
    let json_text = serde_json::to_string_pretty(&doc)? + "\n";
    match (&opts.out, format) {
        (Some(dir), Format::Json) => write_file(dir, &format!("{command}.json"), json_text.as_bytes())?,
        (Some(dir), Format::Csv) => {
            let csv = out.csv.as_deref().ok_or_else(|| anyhow!("{command} has no CSV output"))?;
            write_file(dir, &format!("{command}.csv"), csv.as_bytes())?;
            // the table alone carries no provenance
            let meta = json!({ "command": command, "seed": seed, "config": opts });
            write_file(dir, &format!("{command}.config.json"), (serde_json::to_string_pretty(&meta)? + "\n").as_bytes())?;
        }
        (None, Format::Json) => std::io::stdout().write_all(json_text.as_bytes())?,
        (None, Format::Csv) => {
            let csv = out.csv.as_deref().ok_or_else(|| anyhow!("{command} has no CSV output"))?;
            std::io::stdout().write_all(csv.as_bytes())?;
        }
    }
    for line in &out.summary {
        if opts.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(
            Error::Param(_) | Error::Domain { .. } | Error::Range { .. } | Error::UnknownFixture(_) | Error::Integrability(_),
        ) => 2,
        _ => 1,
    }
}

fn run() -> anyhow::Result<bool> {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    let mut opts = cli.opts.clone();
    // the environment seed ranks below the config file
    let env_seed = if matches.value_source("seed") == Some(ValueSource::EnvVariable) {
        opts.seed.take()
    } else {
        None
    };
    if let Some(path) = opts.config.clone() {
        let file = Options::load(&path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        opts = opts.overlay(file, &dir);
    }
    opts.seed = opts.seed.or(env_seed).or(Some(DEFAULT_SEED));
    let seed = opts.seed.unwrap_or(DEFAULT_SEED);
    let out = match &cli.command {
        Command::Classify => classify(&opts)?,
        Command::Simulate => simulate(&opts, seed)?,
        Command::SkewSimulate => skew_simulate(&opts, seed)?,
        Command::Subspace => subspace(&opts)?,
        Command::CheckSubspace => check_subspace(&opts)?,
        Command::Extend => extend(&opts)?,
        Command::Hitting { a, b } => hitting(&opts, seed, *a, *b)?,
        Command::Verify { checks } => verify(&opts, seed, checks)?,
    };
    emit(cli.command.name(), &opts, seed, &out)?;
    Ok(out.passed)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
