use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rieszlab::expcli::{
    default_max_ratio, doubling_levels, parse_config, parse_levels, run_estimate_report, run_generic_sweep,
    run_poisson_table, run_selftest, run_uniform_table, ExperimentKind, ExperimentSpec, Report,
};
use rieszlab::{Error, Result};

#[derive(Parser)]
#[command(name = "rieszlab", version, about = "Mesh dependence of gradient methods: sweeps, tables and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steepest descent on graded meshes of increasing ratio (CSV + SVG)
    Sweep(Common),
    /// Iterations for orders 1-5 on uniformly refined 1-D meshes
    UniformTable(Common),
    /// L-BFGS on the Poisson control problem, Euclidean vs Riesz-aware
    Poisson(Common),
    /// Condition bound and iteration estimate against measurements
    Estimate(Common),
    /// Quick end-to-end checks on small problems
    Selftest(Common),
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    /// Comma-separated mesh ratios (refinement levels for uniform-table)
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    /// Largest mesh ratio when --levels is not given
    #[arg(long)]
    max_ratio: Option<f64>,
    /// Cells per axis of the coarsest mesh
    #[arg(long)]
    base: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dump_matrix: bool,
    #[arg(long)]
    dump_mesh: bool,
    #[arg(long)]
    dump_fields: bool,
    /// key=value file; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidArgument(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("invalid value {value:?} for {key}"))),
    }
}

/// Fills unset flags from the config file.
fn merge_config(mut c: Common) -> Result<Common> {
    let Some(path) = &c.config else { return Ok(c) };
    let map = parse_config(&std::fs::read_to_string(path)?)?;
    for (key, value) in &map {
        match key.as_str() {
            "dim" => c.dim = c.dim.or(Some(parse_value(key, value)?)),
            "order" => c.order = c.order.or(Some(parse_value(key, value)?)),
            "levels" => c.levels = c.levels.take().or(Some(value.clone())),
            "eps" | "epsilon" => c.eps = c.eps.or(Some(parse_value(key, value)?)),
            "max_ratio" => c.max_ratio = c.max_ratio.or(Some(parse_value(key, value)?)),
            "base" => c.base = c.base.or(Some(parse_value(key, value)?)),
            "out" => c.out = c.out.take().or(Some(PathBuf::from(value))),
            "seed" => c.seed = c.seed.or(Some(parse_value(key, value)?)),
            "dump_matrix" => c.dump_matrix |= parse_bool(key, value)?,
            "dump_mesh" => c.dump_mesh |= parse_bool(key, value)?,
            "dump_fields" => c.dump_fields |= parse_bool(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
    }
    Ok(c)
}

fn build_spec(kind: ExperimentKind, c: &Common) -> Result<ExperimentSpec> {
    let mut spec = match kind {
        ExperimentKind::GenericSweep => ExperimentSpec::generic_sweep(c.dim.unwrap_or(1)),
        ExperimentKind::EstimateReport => ExperimentSpec::estimate_report(c.dim.unwrap_or(1)),
        ExperimentKind::UniformTable => ExperimentSpec::uniform_table(),
        ExperimentKind::PoissonTable => ExperimentSpec::poisson_table(),
    };
    if let Some(d) = c.dim {
        spec.dim = d;
    }
    if let Some(o) = c.order {
        spec.order = o;
    }
    if let Some(l) = &c.levels {
        spec.levels = parse_levels(l)?;
    } else if let Some(r) = c.max_ratio {
        spec.levels = match kind {
            ExperimentKind::PoissonTable => doubling_levels(r).into_iter().filter(|l| *l >= 4.0).collect(),
            ExperimentKind::UniformTable => spec.levels,
            _ => doubling_levels(r),
        };
    } else if matches!(kind, ExperimentKind::GenericSweep | ExperimentKind::EstimateReport) {
        spec.levels = doubling_levels(default_max_ratio(spec.dim));
    }
    if let Some(e) = c.eps {
        spec.epsilon = e;
    }
    if let Some(b) = c.base {
        spec.base_cells = b;
    } else if matches!(kind, ExperimentKind::GenericSweep | ExperimentKind::EstimateReport) {
        spec.base_cells = rieszlab::expcli::default_sweep_base(spec.dim);
    }
    spec.out_dir = c.out.clone();
    spec.seed = c.seed.unwrap_or(0);
    spec.dump_matrix = c.dump_matrix;
    spec.dump_mesh = c.dump_mesh;
    spec.dump_fields = c.dump_fields;
    spec.validate()?;
    Ok(spec)
}

fn finish(report: &Report, out: Option<&PathBuf>) -> Result<bool> {
    print!("{}", report.summary());
    match out {
        Some(dir) => {
            for path in report.write_to(dir)? {
                println!("wrote {}", path.display());
            }
        }
        None => {
            for (name, content) in &report.files {
                if name.ends_with(".csv") {
                    println!("--- {name}");
                    print!("{content}");
                }
            }
        }
    }
    Ok(report.all_hold())
}

fn run(cli: Cli) -> Result<bool> {
    let (kind, common) = match cli.command {
        Command::Sweep(c) => (Some(ExperimentKind::GenericSweep), c),
        Command::UniformTable(c) => (Some(ExperimentKind::UniformTable), c),
        Command::Poisson(c) => (Some(ExperimentKind::PoissonTable), c),
        Command::Estimate(c) => (Some(ExperimentKind::EstimateReport), c),
        Command::Selftest(c) => (None, c),
    };
    let common = merge_config(common)?;
    let report = match kind {
        None => run_selftest(common.seed.unwrap_or(0))?,
        Some(kind) => {
            let spec = build_spec(kind, &common)?;
            match kind {
                ExperimentKind::GenericSweep => run_generic_sweep(&spec)?,
                ExperimentKind::UniformTable => run_uniform_table(&spec)?,
                ExperimentKind::PoissonTable => run_poisson_table(&spec)?,
                ExperimentKind::EstimateReport => run_estimate_report(&spec)?,
            }
        }
    };
    finish(&report, common.out.as_ref())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
