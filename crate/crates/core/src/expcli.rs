//! Experiment runner: graded-mesh sweeps, the uniform-refinement table, the
//! Poisson-control comparison and the estimate report. Every runner returns a
//! [`Report`] holding the generated files and the property checks; nothing is
//! written to disk until [`Report::write_to`] is called.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::control::{
    lbfgs_minimize, reduced_gradient_dual, solve_state, taylor_test, LbfgsConfig, PoissonControlProblem,
};
use crate::descent::{
    iteration_estimate, kantorovich_contraction, steepest_descent, DescentConfig, EstimateInputs,
    QuadraticObjective,
};
use crate::error::{Error, Result};
use crate::femcore::{assemble_gram, FunctionSpace, InnerProductSpec};
use crate::meshkit::{build_graded_mesh, mesh_metrics, refine_subregion, uniform_refine, Grading, Mesh};
use crate::spectra::{condition_bound, extreme_eigs, SkylineCholesky};

/// Relative accuracy requested from the extreme-eigenvalue solver.
pub const EIG_TOL: f64 = 1e-8;

/// Iteration counts published for the uniform-refinement experiment, indexed
/// by `[order - 1][level - 1]`.
pub const PUBLISHED_UNIFORM_TABLE: [[usize; 5]; 5] = [
    [13, 12, 11, 10, 8],
    [20, 20, 19, 19, 19],
    [19, 16, 15, 13, 13],
    [37, 36, 35, 35, 35],
    [43, 41, 40, 38, 37],
];

/// Generated files as (file name, contents).
pub type NamedFiles = Vec<(String, String)>;

pub const SWEEP_CSV_HEADER: &str =
    "dim,order,h_ratio,cells,dofs,iters_euclidean,iters_l2,kappa,bound,khat,kantorovich_holds";
pub const ESTIMATE_CSV_HEADER: &str = "dim,order,h_ratio,kappa,bound,iterations,khat,bound_holds,khat_holds";
pub const UNIFORM_CSV_HEADER: &str = "level,cells,order,dofs,iterations,published";
pub const POISSON_CSV_HEADER: &str = "h_ratio,inner_product,iterations,final_J,final_grad_norm_H,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    GenericSweep,
    UniformTable,
    PoissonTable,
    EstimateReport,
}

/// Configuration of one experiment.
///
/// `levels` are mesh ratios `h_max/h_min` (powers of two) for the sweep,
/// estimate and Poisson experiments, and refinement levels `1, 2, …` for the
/// uniform table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dim: usize,
    pub order: usize,
    pub levels: Vec<f64>,
    pub epsilon: f64,
    /// Cells per axis of the coarsest mesh.
    pub base_cells: usize,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub dump_mesh: bool,
    pub dump_matrix: bool,
    pub dump_fields: bool,
}

/// Default base resolution of the sweep family per dimension.
pub fn default_sweep_base(dim: usize) -> usize {
    match dim {
        1 => 8,
        2 => 4,
        _ => 3,
    }
}

/// Default largest ratio of the sweep per dimension.
pub fn default_max_ratio(dim: usize) -> f64 {
    match dim {
        1 => 128.0,
        2 => 32.0,
        _ => 16.0,
    }
}

/// `2, 4, …` up to and including `max_ratio`.
pub fn doubling_levels(max_ratio: f64) -> Vec<f64> {
    std::iter::successors(Some(2.0), |r| Some(r * 2.0)).take_while(|r| *r <= max_ratio).collect()
}

impl ExperimentSpec {
    fn base(kind: ExperimentKind, dim: usize, levels: Vec<f64>, epsilon: f64, base_cells: usize) -> Self {
        ExperimentSpec {
            kind,
            dim,
            order: 1,
            levels,
            epsilon,
            base_cells,
            out_dir: None,
            seed: 0,
            dump_mesh: false,
            dump_matrix: false,
            dump_fields: false,
        }
    }

    pub fn generic_sweep(dim: usize) -> Self {
        let levels = doubling_levels(default_max_ratio(dim));
        Self::base(ExperimentKind::GenericSweep, dim, levels, 1e-15, default_sweep_base(dim))
    }

    pub fn estimate_report(dim: usize) -> Self {
        ExperimentSpec { kind: ExperimentKind::EstimateReport, ..Self::generic_sweep(dim) }
    }

    /// 1-D, five uniform refinements of a 96-cell mesh with `h_max/h_min = 2`.
    pub fn uniform_table() -> Self {
        Self::base(ExperimentKind::UniformTable, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0], 1e-6, 64)
    }

    /// 2-D unit square, axis-0 grading with ratios 4 to 64; `epsilon` is the
    /// gradient-norm tolerance.
    pub fn poisson_table() -> Self {
        Self::base(ExperimentKind::PoissonTable, 2, vec![4.0, 8.0, 16.0, 32.0, 64.0], 1e-7, 16)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.levels.is_empty() {
            return bad("levels must be non-empty".into());
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("levels must be strictly increasing, got {:?}", self.levels));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.base_cells == 0 {
            return bad("base cell count must be positive".into());
        }
        if !(1..=3).contains(&self.dim) {
            return bad(format!("dim must be 1, 2 or 3, got {}", self.dim));
        }
        match self.kind {
            ExperimentKind::UniformTable => {
                if self.dim != 1 {
                    return bad("the uniform table is one-dimensional".into());
                }
                if self.levels.iter().any(|l| *l < 1.0 || l.fract() != 0.0) {
                    return bad("uniform-table levels are refinement levels 1, 2, ...".into());
                }
            }
            ExperimentKind::PoissonTable => {
                if self.dim != 2 || self.order != 1 {
                    return bad("the Poisson table uses dim 2, order 1".into());
                }
                ratio_exponents(&self.levels)?;
            }
            ExperimentKind::GenericSweep | ExperimentKind::EstimateReport => {
                if self.dim > 1 && self.order != 1 {
                    return bad("orders above 1 are only available in 1-D".into());
                }
                if !(1..=5).contains(&self.order) {
                    return bad(format!("order must be in 1..=5, got {}", self.order));
                }
                ratio_exponents(&self.levels)?;
            }
        }
        Ok(())
    }
}

/// `log2` of each ratio, which must be a power of two.
fn ratio_exponents(levels: &[f64]) -> Result<Vec<u32>> {
    levels
        .iter()
        .map(|&r| {
            let e = r.log2().round();
            if r >= 1.0 && (2f64.powi(e as i32) - r).abs() < 1e-9 {
                Ok(e as u32)
            } else {
                Err(Error::InvalidArgument(format!("mesh ratio {r} is not a power of two")))
            }
        })
        .collect()
}

/// Reads a `key = value` configuration file; blank lines and lines starting
/// with `#` are ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidArgument(format!("config line {}: expected key=value", n + 1)));
        };
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

/// Parses `"2,4,8"` into ratios.
pub fn parse_levels(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("invalid level {s:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

impl PropertyCheck {
    fn new(name: &str, holds: bool, detail: String) -> Self {
        PropertyCheck { name: name.to_string(), holds, detail }
    }
}

/// Output of one experiment.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// File name and contents, in the order they were produced.
    pub files: NamedFiles,
    pub checks: Vec<PropertyCheck>,
    /// Observations that are reported but not asserted.
    pub notes: Vec<String>,
}

impl Report {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, content) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, content)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.holds { "PASS" } else { "FAIL" };
            writeln!(out, "{tag} {}: {}", c.name, c.detail).unwrap();
        }
        for n in &self.notes {
            writeln!(out, "note: {n}").unwrap();
        }
        out
    }
}

/// Member of the sweep family: a uniform `base^dim` mesh whose cells in
/// `[0, 1/2)` are bisected along every axis `refinements` times, giving
/// `h_max/h_min = 2^refinements`.
pub fn sweep_mesh(dim: usize, base: usize, refinements: u32) -> Result<Mesh> {
    let mut mesh = build_graded_mesh(dim, &vec![base; dim], &Grading::Uniform)?;
    for _ in 0..refinements {
        for axis in 0..dim {
            mesh = refine_subregion(&mesh, axis, 0.0, 0.5)?;
        }
    }
    Ok(mesh)
}

/// Base mesh of the uniform table: `base` uniform cells with `[0, 1/2)`
/// bisected once.
pub fn uniform_table_base(base: usize) -> Result<Mesh> {
    refine_subregion(&build_graded_mesh(1, &[base], &Grading::Uniform)?, 0, 0.0, 0.5)
}

/// Unit square with `base × base` cells whose axis-0 intervals in `[0, 1/2)`
/// are bisected `refinements` times.
pub fn poisson_mesh(base: usize, refinements: u32) -> Result<Mesh> {
    let mut mesh = build_graded_mesh(2, &[base, base], &Grading::Uniform)?;
    for _ in 0..refinements {
        mesh = refine_subregion(&mesh, 0, 0.0, 0.5)?;
    }
    Ok(mesh)
}

/// One row of the sweep. `h_ratio` is the nominal ratio of the level; the
/// estimate uses the measured one.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dim: usize,
    pub order: usize,
    pub h_ratio: f64,
    pub cells: usize,
    pub dofs: usize,
    pub iters_euclidean: usize,
    pub iters_l2: usize,
    pub kappa: f64,
    pub bound: f64,
    pub khat: f64,
    pub kantorovich_holds: bool,
    pub euclidean_converged: bool,
}

fn level_error(level: f64, e: Error) -> Error {
    Error::InvalidArgument(format!("level h_ratio={level}: {e}"))
}

fn sweep_level(spec: &ExperimentSpec, level: f64, refinements: u32) -> Result<(SweepRow, NamedFiles)> {
    let mesh = sweep_mesh(spec.dim, spec.base_cells, refinements)?;
    let metrics = mesh_metrics(&mesh)?;
    let space = FunctionSpace::new(mesh, spec.order)?;
    let obj = QuadraticObjective::tracking_constant(&space);
    let f0 = obj.value(&vec![0.0; obj.dim()])?;

    let euclid = steepest_descent(&obj, &DescentConfig::new(InnerProductSpec::Euclidean, spec.epsilon), None)?;
    let l2 = steepest_descent(&obj, &DescentConfig::new(InnerProductSpec::L2Mass, spec.epsilon), Some(obj.gram()))?;
    let spectrum = extreme_eigs(obj.gram(), EIG_TOL)?;
    let bound = condition_bound(&metrics, space.reference());
    let khat = iteration_estimate(&EstimateInputs {
        epsilon: spec.epsilon,
        f0,
        p_max: metrics.p_max,
        lambda_ratio_hat: space.reference().lambda_ratio(),
        h_ratio: metrics.h_ratio_scalar,
        dim: spec.dim,
    })?;
    let mut dumps = Vec::new();
    let tag = format!("{}d_p{}_r{}", spec.dim, spec.order, level);
    if spec.dump_mesh {
        dumps.push((format!("mesh_{tag}.txt"), space.mesh().to_text()));
    }
    if spec.dump_matrix {
        dumps.push((format!("mass_{tag}.mtx"), obj.gram().to_matrix_market()));
    }
    let row = SweepRow {
        dim: spec.dim,
        order: spec.order,
        h_ratio: level,
        cells: space.mesh().num_cells(),
        dofs: space.dof_count(),
        iters_euclidean: euclid.iterations,
        iters_l2: l2.iterations,
        kappa: spectrum.kappa,
        bound,
        khat,
        kantorovich_holds: kantorovich_contraction(&euclid, spectrum.kappa),
        euclidean_converged: euclid.converged,
    };
    Ok((row, dumps))
}

/// Runs the graded-mesh family of `spec`, levels in parallel; rows come back
/// in level order.
pub fn sweep_rows(spec: &ExperimentSpec) -> Result<(Vec<SweepRow>, NamedFiles)> {
    spec.validate()?;
    let exps = ratio_exponents(&spec.levels)?;
    let results: Vec<Result<(SweepRow, NamedFiles)>> = spec
        .levels
        .par_iter()
        .zip(exps.par_iter())
        .map(|(&level, &r)| sweep_level(spec, level, r).map_err(|e| level_error(level, e)))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut dumps = Vec::new();
    for res in results {
        let (row, d) = res?;
        rows.push(row);
        dumps.extend(d);
    }
    Ok((rows, dumps))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.10e},{:.10e},{:.10e},{}",
            r.dim,
            r.order,
            r.h_ratio,
            r.cells,
            r.dofs,
            r.iters_euclidean,
            r.iters_l2,
            r.kappa,
            r.bound,
            r.khat,
            r.kantorovich_holds
        )
        .unwrap();
    }
    out
}

pub fn run_generic_sweep(spec: &ExperimentSpec) -> Result<Report> {
    let (rows, dumps) = sweep_rows(spec)?;
    let csv = sweep_csv(&rows);
    let svg = svg_loglog(
        &csv,
        "h_ratio",
        &[
            SvgSeries { column: "iters_euclidean", label: "steepest descent, l2 gradient", color: "#c0392b", dashed: false },
            SvgSeries { column: "iters_l2", label: "steepest descent, L2 gradient", color: "#2471a3", dashed: false },
            SvgSeries { column: "khat", label: "estimate k-hat", color: "#555555", dashed: true },
        ],
        &format!("{}-D sweep, order {}", spec.dim, spec.order),
    )?;
    let stem = format!("sweep_{}d_p{}", spec.dim, spec.order);
    let mut report = Report::default();
    report.files.push((format!("{stem}.csv"), csv));
    report.files.push((format!("{stem}.svg"), svg));
    report.files.extend(dumps);

    let fit: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.h_ratio >= 2.0).map(|r| (r.h_ratio, r.iters_euclidean as f64)).collect();
    if fit.len() >= 3 {
        let slope = loglog_slope(&fit);
        let n = spec.dim as f64;
        report.checks.push(PropertyCheck::new(
            "polynomial mesh dependence",
            (slope - n).abs() <= 0.25 * n,
            format!("log-log slope {slope:.3}, expected {n} +- 25%"),
        ));
    } else {
        report.notes.push("fewer than three levels with h_ratio >= 2; slope not fitted".into());
    }
    report.checks.push(PropertyCheck::new(
        "one-step L2 convergence",
        rows.iter().all(|r| r.iters_l2 == 1),
        format!("L2 iterations per level {:?}", rows.iter().map(|r| r.iters_l2).collect::<Vec<_>>()),
    ));
    report.checks.push(PropertyCheck::new(
        "euclidean runs converged",
        rows.iter().all(|r| r.euclidean_converged),
        format!("{} of {} levels", rows.iter().filter(|r| r.euclidean_converged).count(), rows.len()),
    ));
    report.checks.push(PropertyCheck::new(
        "Kantorovich contraction",
        rows.iter().all(|r| r.kantorovich_holds),
        format!("{} of {} runs", rows.iter().filter(|r| r.kantorovich_holds).count(), rows.len()),
    ));
    Ok(report)
}

pub fn run_estimate_report(spec: &ExperimentSpec) -> Result<Report> {
    let (rows, dumps) = sweep_rows(spec)?;
    let mut csv = format!("{ESTIMATE_CSV_HEADER}\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{:.10e},{:.10e},{},{:.10e},{},{}",
            r.dim,
            r.order,
            r.h_ratio,
            r.kappa,
            r.bound,
            r.iters_euclidean,
            r.khat,
            r.kappa <= r.bound,
            (r.iters_euclidean as f64) <= r.khat
        )
        .unwrap();
    }
    let mut report = Report::default();
    report.files.push((format!("estimate_{}d_p{}.csv", spec.dim, spec.order), csv));
    report.files.extend(dumps);
    report.checks.push(PropertyCheck::new(
        "condition bound",
        rows.iter().all(|r| r.kappa <= r.bound),
        format!("{} of {} meshes", rows.iter().filter(|r| r.kappa <= r.bound).count(), rows.len()),
    ));
    let asserted: Vec<&SweepRow> = rows.iter().filter(|r| r.h_ratio >= 4.0).collect();
    report.checks.push(PropertyCheck::new(
        "iteration estimate",
        asserted.iter().all(|r| (r.iters_euclidean as f64) <= r.khat),
        format!(
            "{} of {} meshes with h_ratio >= 4",
            asserted.iter().filter(|r| (r.iters_euclidean as f64) <= r.khat).count(),
            asserted.len()
        ),
    ));
    for r in rows.iter().filter(|r| r.h_ratio < 4.0) {
        report.notes.push(format!(
            "h_ratio {}: {} iterations, estimate {:.1} (not asserted)",
            r.h_ratio, r.iters_euclidean, r.khat
        ));
    }
    Ok(report)
}

/// One entry of the uniform-refinement table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformEntry {
    pub level: usize,
    pub cells: usize,
    pub order: usize,
    pub dofs: usize,
    pub iterations: usize,
}

/// Iteration table for orders 1 to 5 on the uniformly refined family.
pub fn uniform_entries(spec: &ExperimentSpec) -> Result<(Vec<UniformEntry>, NamedFiles)> {
    spec.validate()?;
    let max_level = *spec.levels.last().unwrap() as usize;
    let mut meshes = vec![uniform_table_base(spec.base_cells)?];
    for _ in 1..max_level {
        let next = uniform_refine(meshes.last().unwrap())?;
        meshes.push(next);
    }
    let jobs: Vec<(usize, usize)> =
        (1..=5).flat_map(|order| spec.levels.iter().map(move |&l| (order, l as usize))).collect();
    let results: Vec<Result<(UniformEntry, NamedFiles)>> = jobs
        .par_iter()
        .map(|&(order, level)| {
            let mesh = meshes[level - 1].clone();
            let space = FunctionSpace::new(mesh, order)?;
            let obj = QuadraticObjective::tracking_constant(&space);
            let trace =
                steepest_descent(&obj, &DescentConfig::new(InnerProductSpec::Euclidean, spec.epsilon), None)?;
            if !trace.converged {
                return Err(Error::MaxIterExceeded {
                    iterations: trace.iterations,
                    residual: trace.final_value(),
                });
            }
            let mut dumps = Vec::new();
            if spec.dump_matrix {
                dumps.push((format!("mass_1d_p{order}_level{level}.mtx"), obj.gram().to_matrix_market()));
            }
            if spec.dump_mesh && order == 1 {
                dumps.push((format!("mesh_1d_level{level}.txt"), space.mesh().to_text()));
            }
            let entry = UniformEntry {
                level,
                cells: space.mesh().num_cells(),
                order,
                dofs: space.dof_count(),
                iterations: trace.iterations,
            };
            Ok((entry, dumps))
        })
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut dumps = Vec::new();
    for (res, &(order, level)) in results.into_iter().zip(&jobs) {
        let (e, d) = res.map_err(|e| Error::InvalidArgument(format!("order {order}, level {level}: {e}")))?;
        entries.push(e);
        dumps.extend(d);
    }
    Ok((entries, dumps))
}

pub fn run_uniform_table(spec: &ExperimentSpec) -> Result<Report> {
    let (entries, dumps) = uniform_entries(spec)?;
    let published = |e: &UniformEntry| {
        PUBLISHED_UNIFORM_TABLE.get(e.order - 1).and_then(|row| row.get(e.level - 1)).copied()
    };
    let mut csv = format!("{UNIFORM_CSV_HEADER}\n");
    let mut sorted = entries.clone();
    sorted.sort_by_key(|e| (e.level, e.order));
    for e in &sorted {
        let p = published(e).map(|p| p.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{},{}", e.level, e.cells, e.order, e.dofs, e.iterations, p).unwrap();
    }
    let mut report = Report::default();
    report.files.push(("uniform_table.csv".into(), csv));
    report.files.extend(dumps);

    let column = |order: usize| -> Vec<usize> {
        entries.iter().filter(|e| e.order == order).map(|e| e.iterations).collect()
    };
    for order in 1..=5 {
        let col = column(order);
        report.checks.push(PropertyCheck::new(
            &format!("CG{order} non-increasing under refinement"),
            col.windows(2).all(|w| w[1] <= w[0] + 1),
            format!("iterations {col:?}"),
        ));
    }
    let levels: Vec<usize> = spec.levels.iter().map(|l| *l as usize).collect();
    for &level in &levels {
        let row: Vec<usize> = (1..=5)
            .map(|o| entries.iter().find(|e| e.order == o && e.level == level).unwrap().iterations)
            .collect();
        let monotone = row.windows(2).all(|w| w[1] + 1 >= w[0]);
        report.notes.push(format!(
            "level {level}: iterations by order {row:?} ({})",
            if monotone { "non-decreasing in order" } else { "not monotone in order" }
        ));
    }
    let matches = entries.iter().filter(|e| published(e) == Some(e.iterations)).count();
    let comparable = entries.iter().filter(|e| published(e).is_some()).count();
    report.notes.push(format!("{matches} of {comparable} entries equal the published table"));
    Ok(report)
}

/// One L-BFGS run of the Poisson comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonRow {
    pub control_space: InnerProductSpec,
    pub inner_product: InnerProductSpec,
    pub h_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_j: f64,
    pub final_grad_norm_h: f64,
    pub wall_ms: u128,
}

pub fn poisson_rows(spec: &ExperimentSpec) -> Result<(Vec<PoissonRow>, NamedFiles)> {
    spec.validate()?;
    let exps = ratio_exponents(&spec.levels)?;
    let mut jobs = Vec::new();
    for h in [InnerProductSpec::L2Mass, InnerProductSpec::H1Full] {
        for ip in [InnerProductSpec::Euclidean, h] {
            for (&level, &r) in spec.levels.iter().zip(&exps) {
                jobs.push((h, ip, level, r));
            }
        }
    }
    let results: Vec<Result<(PoissonRow, NamedFiles)>> = jobs
        .par_iter()
        .map(|&(h, ip, level, r)| {
            let start = Instant::now();
            let mesh = poisson_mesh(spec.base_cells, r)?;
            let prob = PoissonControlProblem::with_defaults(FunctionSpace::new(mesh, 1)?, h)?;
            let mut config = LbfgsConfig::new(ip);
            config.grad_tol = spec.epsilon;
            let trace = lbfgs_minimize(&prob, &config)?;
            let grad = reduced_gradient_dual(&prob, &trace.final_iterate)?;
            let grad_norm = prob.dual_norm_h(&grad)?;
            let wall_ms = start.elapsed().as_millis();
            let tag = format!("{}_{}_r{}", h.name(), ip.name(), level);
            let mut dumps = Vec::new();
            if spec.dump_fields {
                let u = solve_state(&prob, &trace.final_iterate)?;
                let mut text = String::from("x y control state\n");
                for (i, (fi, ui)) in trace.final_iterate.iter().zip(&u).enumerate() {
                    let x = prob.space().dof_coord(i);
                    writeln!(text, "{:.10e} {:.10e} {fi:.10e} {ui:.10e}", x[0], x[1]).unwrap();
                }
                dumps.push((format!("fields_{tag}.txt"), text));
            }
            if ip == h && spec.dump_mesh && h == InnerProductSpec::L2Mass {
                dumps.push((format!("mesh_2d_r{level}.txt"), prob.space().mesh().to_text()));
            }
            if ip == h && spec.dump_matrix {
                dumps.push((format!("gram_{}_r{level}.mtx", h.name()), prob.gram_h().to_matrix_market()));
            }
            let row = PoissonRow {
                control_space: h,
                inner_product: ip,
                h_ratio: level,
                iterations: trace.iterations,
                converged: trace.converged,
                final_j: trace.final_value(),
                final_grad_norm_h: grad_norm,
                wall_ms,
            };
            Ok((row, dumps))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut dumps = Vec::new();
    for (res, &(h, ip, level, _)) in results.into_iter().zip(&jobs) {
        let (row, d) = res.map_err(|e| {
            Error::InvalidArgument(format!("H={}, inner product {}, h_ratio={level}: {e}", h.name(), ip.name()))
        })?;
        rows.push(row);
        dumps.extend(d);
    }
    Ok((rows, dumps))
}

pub fn poisson_csv(rows: &[PoissonRow]) -> String {
    let mut out = format!("{POISSON_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.10e},{:.10e},{}",
            r.h_ratio,
            r.inner_product.name(),
            r.iterations,
            r.final_j,
            r.final_grad_norm_h,
            r.wall_ms
        )
        .unwrap();
    }
    out
}

pub fn run_poisson_table(spec: &ExperimentSpec) -> Result<Report> {
    let (rows, dumps) = poisson_rows(spec)?;
    let mut report = Report::default();
    for h in [InnerProductSpec::L2Mass, InnerProductSpec::H1Full] {
        let mine: Vec<PoissonRow> = rows.iter().filter(|r| r.control_space == h).cloned().collect();
        report.files.push((format!("poisson_{}.csv", h.name()), poisson_csv(&mine)));
        for ip in [InnerProductSpec::Euclidean, h] {
            let counts: Vec<usize> = mine.iter().filter(|r| r.inner_product == ip).map(|r| r.iterations).collect();
            let all_converged = mine.iter().filter(|r| r.inner_product == ip).all(|r| r.converged);
            let (min, max) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
            let label = format!("H={}, {} L-BFGS", h.name(), ip.name());
            report.checks.push(PropertyCheck::new(
                &format!("{label} converged"),
                all_converged,
                format!("iterations {counts:?}"),
            ));
            if ip == h {
                report.checks.push(PropertyCheck::new(
                    &format!("{label} mesh independent"),
                    max as f64 <= 2.0 * min as f64,
                    format!("max/min = {max}/{min}"),
                ));
                if h == InnerProductSpec::H1Full {
                    let first = counts[0];
                    report.checks.push(PropertyCheck::new(
                        &format!("{label} constant"),
                        counts.iter().all(|c| c.abs_diff(first) <= 1),
                        format!("iterations {counts:?}"),
                    ));
                }
            } else {
                let (first, last) = (counts[0], *counts.last().unwrap());
                report.checks.push(PropertyCheck::new(
                    &format!("{label} mesh dependent"),
                    last as f64 >= 3.0 * first as f64,
                    format!("last/first = {last}/{first}"),
                ));
            }
        }
    }
    report.files.extend(dumps);
    report.notes.push("wall_ms is the only column that varies between runs".into());
    Ok(report)
}

/// Quick end-to-end checks on small problems. `seed` drives the random
/// gradings and directions.
pub fn run_selftest(seed: u64) -> Result<Report> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut report = Report::default();

    let spacings: Vec<f64> = {
        let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|s| s / total).collect()
    };
    let mesh = build_graded_mesh(2, &[6, 6], &Grading::Spacings(spacings))?;
    let space = FunctionSpace::new(mesh, 1)?;
    let obj = QuadraticObjective::tracking_constant(&space);
    let f0 = obj.value(&vec![0.0; obj.dim()])?;
    let l2 = steepest_descent(&obj, &DescentConfig::new(InnerProductSpec::L2Mass, 1e-12 * f0), Some(obj.gram()))?;
    report.checks.push(PropertyCheck::new(
        "one-step L2 convergence",
        l2.iterations == 1,
        format!("{} iteration(s) on a randomly graded 6x6 mesh", l2.iterations),
    ));

    let metrics = mesh_metrics(space.mesh())?;
    let kappa = extreme_eigs(obj.gram(), EIG_TOL)?.kappa;
    let bound = condition_bound(&metrics, space.reference());
    report.checks.push(PropertyCheck::new("condition bound", kappa <= bound, format!("kappa {kappa:.4} <= {bound:.4}")));

    let gram = assemble_gram(&space, InnerProductSpec::H1Full)?;
    let b: Vec<f64> = (0..gram.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let direct = SkylineCholesky::factor(&gram)?.solve(&b)?;
    let iterative = crate::spectra::cg_solve(&gram, &b, 1e-13, 10 * gram.dim())?;
    let diff = direct.iter().zip(&iterative).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    report.checks.push(PropertyCheck::new(
        "direct and iterative solves agree",
        diff <= 1e-9,
        format!("max difference {diff:.2e}"),
    ));

    let prob = PoissonControlProblem::with_defaults(
        FunctionSpace::new(build_graded_mesh(2, &[8, 8], &Grading::Uniform)?, 1)?,
        InnerProductSpec::L2Mass,
    )?;
    let n = prob.dof_count();
    let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let order = taylor_test(&prob, &f, &delta, 4)?;
    report.checks.push(PropertyCheck::new(
        "adjoint gradient Taylor order",
        order >= 1.9,
        format!("observed order {order:.3}"),
    ));
    Ok(report)
}

/// One plotted column of [`svg_loglog`].
#[derive(Debug, Clone, Copy)]
pub struct SvgSeries<'a> {
    pub column: &'a str,
    pub label: &'a str,
    pub color: &'a str,
    pub dashed: bool,
}

fn csv_column(csv: &str, name: &str) -> Result<Vec<f64>> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty CSV".into()))?;
    let idx = header
        .split(',')
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidArgument(format!("CSV has no column {name:?}")))?;
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .nth(idx)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad value in column {name:?}: {l}")))
        })
        .collect()
}

/// Log-log plot (base 2 on both axes) of CSV columns against `x_column`,
/// built from the CSV text itself.
pub fn svg_loglog(csv: &str, x_column: &str, series: &[SvgSeries], title: &str) -> Result<String> {
    let xs = csv_column(csv, x_column)?;
    let ys: Vec<Vec<f64>> = series.iter().map(|s| csv_column(csv, s.column)).collect::<Result<_>>()?;
    let positive = |v: &f64| *v > 0.0;
    let lx: Vec<f64> = xs.iter().filter(|v| positive(v)).map(|v| v.log2()).collect();
    let ly: Vec<f64> = ys.iter().flatten().filter(|v| positive(v)).map(|v| v.log2()).collect();
    if lx.is_empty() || ly.is_empty() {
        return Err(Error::InvalidArgument("nothing positive to plot".into()));
    }
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min).floor();
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = range(&lx);
    let (y0, y1) = range(&ly);
    let (w, h, left, right, top, bottom) = (640.0, 440.0, 70.0, 20.0, 40.0, 60.0);
    let px = |lx: f64| left + (lx - x0) / (x1 - x0) * (w - left - right);
    let py = |ly: f64| h - bottom - (ly - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{title}</text>"#, w / 2.0).unwrap();
    writeln!(
        s,
        r#"<polyline points="{},{} {},{} {},{}" fill="none" stroke="black"/>"#,
        px(x0),
        py(y1),
        px(x0),
        py(y0),
        px(x1),
        py(y0)
    )
    .unwrap();
    let ystep = ((y1 - y0) / 10.0).ceil().max(1.0);
    for e in (x0 as i64)..=(x1 as i64) {
        let x = px(e as f64);
        writeln!(s, r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/>"#, py(y0), py(y0) + 5.0).unwrap();
        writeln!(s, r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">2^{e}</text>"#, py(y0) + 18.0)
            .unwrap();
    }
    let mut e = y0;
    while e <= y1 {
        let y = py(e);
        writeln!(s, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#, px(x0) - 5.0, px(x0)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">2^{}</text>"#, px(x0) - 8.0, y + 4.0, e)
            .unwrap();
        e += ystep;
    }
    writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x_column}</text>"#, w / 2.0, h - 15.0)
        .unwrap();
    writeln!(
        s,
        r#"<text x="15" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">iterations</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    for (k, (series, values)) in series.iter().zip(&ys).enumerate() {
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(values)
            .filter(|(x, y)| positive(x) && positive(y))
            .map(|(x, y)| (px(x.log2()), py(y.log2())))
            .collect();
        let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let joined: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            joined.join(" "),
            series.color
        )
        .unwrap();
        if !series.dashed {
            for (x, y) in &pts {
                writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#, series.color).unwrap();
            }
        }
        let ly = top + 14.0 + 16.0 * k as f64;
        writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.5"{dash}/>"#,
            left + 10.0,
            left + 30.0,
            series.color
        )
        .unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, left + 36.0, ly + 4.0, series.label).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
