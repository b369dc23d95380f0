//! Steepest descent with exact line search on discretised quadratics
//! `f(u) = ½ (c − u)ᵀ G (c − u)`, with the gradient represented either in the
//! Euclidean coefficient inner product or through a Riesz map.

use std::fmt::Write as _;

use crate::dense::{dot, norm2};
use crate::error::{Error, Result};
use crate::femcore::{assemble_mass, interpolate_constant, riesz_map, FunctionSpace, InnerProductSpec};
use crate::sparse::SparseMatrix;
use crate::spectra::cg_solve_from;

/// `f(u) = ½ (c − u)ᵀ G (c − u)` with SPD Hessian `G` and minimiser `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    gram: SparseMatrix,
    target: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(gram: SparseMatrix, target: Vec<f64>) -> Result<Self> {
        if target.len() != gram.dim() {
            return Err(Error::DimensionMismatch { expected: gram.dim(), got: target.len() });
        }
        Ok(QuadraticObjective { gram, target })
    }

    /// `½ ⟨1 − u, 1 − u⟩_{L²}` on a finite element space: Hessian `M`, target `1⃗`.
    pub fn tracking_constant(space: &FunctionSpace) -> Self {
        QuadraticObjective { gram: assemble_mass(space), target: interpolate_constant(space, 1.0) }
    }

    pub fn gram(&self) -> &SparseMatrix {
        &self.gram
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        Ok(self.target.iter().zip(u).map(|(c, x)| c - x).collect())
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        let r = self.residual(u)?;
        Ok(0.5 * dot(&r, &self.gram.mul(&r)))
    }
}

/// Reduces `α⟨u,u⟩_H + β⟨u,v⟩_H + γ` (up to a constant) to a tracking
/// quadratic with Hessian `2α G_H` and target `u*` solving
/// `2α G_H u* = −β G_H v`.
pub fn build_general_quadratic(
    gram_h: &SparseMatrix,
    alpha: f64,
    beta: f64,
    v: &[f64],
) -> Result<QuadraticObjective> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if v.len() != gram_h.dim() {
        return Err(Error::DimensionMismatch { expected: gram_h.dim(), got: v.len() });
    }
    let gram = gram_h.scaled(2.0 * alpha);
    let rhs: Vec<f64> = gram_h.mul(v).into_iter().map(|x| -beta * x).collect();
    let target = cg_solve_from(&gram, &rhs, None, 1e-14, crate::femcore::riesz_iteration_cap(gram.dim()))
        .map_err(|e| Error::RieszSolveFailed(e.to_string()))?
        .x;
    QuadraticObjective::new(gram, target)
}

/// `f'(u)` as a dual vector, `−G (c − u)`; also the ℓ² representer.
pub fn gradient_dual(obj: &QuadraticObjective, u: &[f64]) -> Result<Vec<f64>> {
    let r = obj.residual(u)?;
    Ok(obj.gram.mul(&r).into_iter().map(|x| -x).collect())
}

/// How the derivative is turned into a primal direction.
#[derive(Debug, Clone, Copy)]
pub enum Representation<'a> {
    Euclidean,
    /// Riesz map through the given Gram matrix.
    Riesz(&'a SparseMatrix),
}

/// Steepest-descent direction: the negative representer of `f'(u)`.
pub fn search_direction(
    obj: &QuadraticObjective,
    u: &[f64],
    rep: Representation<'_>,
    riesz_tol: f64,
) -> Result<Vec<f64>> {
    let g = gradient_dual(obj, u)?;
    direction_from_dual(&g, rep, riesz_tol)
}

fn direction_from_dual(g: &[f64], rep: Representation<'_>, riesz_tol: f64) -> Result<Vec<f64>> {
    match rep {
        Representation::Euclidean => Ok(g.iter().map(|x| -x).collect()),
        Representation::Riesz(gram) => {
            Ok(riesz_map(gram, g, riesz_tol)?.into_iter().map(|x| -x).collect())
        }
    }
}

/// Exact minimiser of `t ↦ f(u + t d)`: `α = dᵀ G (c − u) / dᵀ G d`.
pub fn exact_step(obj: &QuadraticObjective, u: &[f64], d: &[f64]) -> Result<f64> {
    let r = obj.residual(u)?;
    if d.len() != r.len() {
        return Err(Error::DimensionMismatch { expected: r.len(), got: d.len() });
    }
    let gd = obj.gram.mul(d);
    step_from(&gd, d, &r)
}

fn step_from(gd: &[f64], d: &[f64], r: &[f64]) -> Result<f64> {
    let curv = dot(d, gd);
    if !(curv > 0.0) {
        return Err(Error::ZeroDirection);
    }
    Ok(dot(gd, r) / curv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    pub representation: InnerProductSpec,
    /// Stop once `f(u_k) ≤ epsilon`.
    pub epsilon: f64,
    pub max_iter: usize,
    pub riesz_tol: f64,
    /// Optional additional stop on the ℓ² norm of the dual gradient.
    pub grad_tol: Option<f64>,
    /// Start iterate; zero when `None`.
    pub initial: Option<Vec<f64>>,
}

impl DescentConfig {
    pub fn new(representation: InnerProductSpec, epsilon: f64) -> Self {
        DescentConfig {
            representation,
            epsilon,
            max_iter: 1_000_000,
            riesz_tol: 1e-14,
            grad_tol: None,
            initial: None,
        }
    }
}

/// One iterate: `f(u_k)`, the ℓ² norm of `f'(u_k)` and the step taken from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub f_value: f64,
    pub step_alpha: Option<f64>,
    pub grad_norm_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptTrace {
    pub iterations: usize,
    pub records: Vec<StepRecord>,
    pub converged: bool,
    pub final_iterate: Vec<f64>,
}

impl OptTrace {
    pub fn f_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.f_value)
    }

    pub fn final_value(&self) -> f64 {
        self.records.last().map(|r| r.f_value).unwrap_or(f64::NAN)
    }

    /// CSV rows `run_id,iter,f_value,step_alpha,grad_norm_l2` (no header).
    pub fn csv_rows(&self, run_id: &str) -> String {
        let mut out = String::new();
        for (k, r) in self.records.iter().enumerate() {
            let alpha = r.step_alpha.map(|a| format!("{a:e}")).unwrap_or_default();
            writeln!(out, "{run_id},{k},{:e},{alpha},{:e}", r.f_value, r.grad_norm_l2).unwrap();
        }
        out
    }
}

pub const TRACE_CSV_HEADER: &str = "run_id,iter,f_value,step_alpha,grad_norm_l2";

/// Steepest descent with exact line search. Non-convergence within
/// `max_iter` is reported through `converged = false`, not as an error.
pub fn steepest_descent(
    obj: &QuadraticObjective,
    config: &DescentConfig,
    riesz_gram: Option<&SparseMatrix>,
) -> Result<OptTrace> {
    if !(config.epsilon > 0.0) || config.max_iter == 0 {
        return Err(Error::InvalidArgument("need epsilon > 0 and max_iter >= 1".into()));
    }
    let rep = match (config.representation, riesz_gram) {
        (InnerProductSpec::Euclidean, _) => Representation::Euclidean,
        (_, Some(g)) => Representation::Riesz(g),
        (ip, None) => {
            return Err(Error::InvalidArgument(format!("{} representation needs a Gram matrix", ip.name())))
        }
    };
    let n = obj.dim();
    let mut u = match &config.initial {
        Some(u0) if u0.len() == n => u0.clone(),
        Some(u0) => return Err(Error::DimensionMismatch { expected: n, got: u0.len() }),
        None => vec![0.0; n],
    };
    let mut records = Vec::new();
    let mut gr = vec![0.0; n];
    let mut gd = vec![0.0; n];
    let mut k = 0;
    loop {
        let r = obj.residual(&u)?;
        obj.gram.mul_into(&r, &mut gr);
        let f = 0.5 * dot(&r, &gr);
        let gnorm = norm2(&gr);
        records.push(StepRecord { f_value: f, step_alpha: None, grad_norm_l2: gnorm });
        let done = f <= config.epsilon || gnorm == 0.0 || config.grad_tol.is_some_and(|t| gnorm <= t);
        if done {
            return Ok(OptTrace { iterations: k, records, converged: true, final_iterate: u });
        }
        if k == config.max_iter {
            return Ok(OptTrace { iterations: k, records, converged: false, final_iterate: u });
        }
        // f'(u) = −G r, so the Euclidean direction is G r itself
        let d = match rep {
            Representation::Euclidean => gr.clone(),
            rep => {
                let dual: Vec<f64> = gr.iter().map(|x| -x).collect();
                direction_from_dual(&dual, rep, config.riesz_tol)?
            }
        };
        obj.gram.mul_into(&d, &mut gd);
        let alpha = step_from(&gd, &d, &r)?;
        records.last_mut().unwrap().step_alpha = Some(alpha);
        for (ui, di) in u.iter_mut().zip(&d) {
            *ui += alpha * di;
        }
        k += 1;
    }
}

/// `((κ − 1) / (κ + 1))²`.
pub fn kantorovich_factor(kappa: f64) -> f64 {
    ((kappa - 1.0) / (kappa + 1.0)).powi(2)
}

/// Absolute slack for the contraction check near machine-zero values.
pub const KANTOROVICH_SLACK: f64 = 1e-10;

/// Whether every consecutive pair of functional values (with `f* = 0`)
/// contracts by at least the Kantorovich factor for `kappa`.
pub fn kantorovich_contraction(trace: &OptTrace, kappa: f64) -> bool {
    let q = kantorovich_factor(kappa);
    trace
        .records
        .windows(2)
        .all(|w| w[1].f_value <= q * w[0].f_value + KANTOROVICH_SLACK)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateInputs {
    pub epsilon: f64,
    pub f0: f64,
    pub p_max: usize,
    pub lambda_ratio_hat: f64,
    pub h_ratio: f64,
    pub dim: usize,
}

/// `k̂ = −¼ ln(ε / f(u₀)) · (p_max (λ̂max/λ̂min) (h_max/h_min)^n + 1)`.
pub fn iteration_estimate(inputs: &EstimateInputs) -> Result<f64> {
    let EstimateInputs { epsilon, f0, p_max, lambda_ratio_hat, h_ratio, dim } = *inputs;
    if !(epsilon > 0.0 && f0 > 0.0 && lambda_ratio_hat > 0.0 && h_ratio > 0.0 && p_max > 0) {
        return Err(Error::InvalidArgument("estimate inputs must be positive".into()));
    }
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidArgument(format!("dim must be 1, 2 or 3, got {dim}")));
    }
    if epsilon >= f0 {
        return Err(Error::InvalidThreshold { epsilon, f0 });
    }
    let bound = p_max as f64 * lambda_ratio_hat * h_ratio.powi(dim as i32);
    Ok(-0.25 * (epsilon / f0).ln() * (bound + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femcore::reference_element;

    fn single_reference_interval() -> QuadraticObjective {
        let m = SparseMatrix::from_dense(&[vec![1.0 / 3.0, 1.0 / 6.0], vec![1.0 / 6.0, 1.0 / 3.0]]).unwrap();
        QuadraticObjective::new(m, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn gradient_on_reference_interval() {
        let obj = single_reference_interval();
        let g = gradient_dual(&obj, &[0.0, 0.0]).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] + 0.5).abs() < 1e-15);
        assert_eq!(gradient_dual(&obj, &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn exact_step_examples() {
        let obj = single_reference_interval();
        let d = obj.gram().mul(&[1.0, 1.0]);
        assert!((exact_step(&obj, &[0.0, 0.0], &d).unwrap() - 2.0).abs() < 1e-14);
        assert!((exact_step(&obj, &[0.3, -0.2], &[0.7, 1.2]).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(exact_step(&obj, &[0.0, 0.0], &[0.0, 0.0]), Err(Error::ZeroDirection)));
    }

    #[test]
    fn general_quadratic_reduces_to_simple_problem() {
        let m = single_reference_interval().gram().clone();
        let obj = build_general_quadratic(&m, 0.5, -1.0, &[1.0, 1.0]).unwrap();
        assert_eq!(obj.gram(), &m);
        assert!(obj.target().iter().all(|t| (t - 1.0).abs() < 1e-13));
        let zero = build_general_quadratic(&m, 0.7, 0.0, &[1.0, 1.0]).unwrap();
        assert_eq!(zero.target(), &[0.0, 0.0]);
        assert!(zero.value(zero.target()).unwrap() == 0.0);
        assert!(build_general_quadratic(&m, 0.0, 1.0, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn euclidean_descent_on_single_element_is_one_step() {
        let obj = single_reference_interval();
        let trace = steepest_descent(&obj, &DescentConfig::new(InnerProductSpec::Euclidean, 1e-15), None).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations, 1);
    }

    #[test]
    fn zero_gradient_start_returns_immediately() {
        let obj = single_reference_interval();
        let mut cfg = DescentConfig::new(InnerProductSpec::Euclidean, 1e-15);
        cfg.initial = Some(vec![1.0, 1.0]);
        let trace = steepest_descent(&obj, &cfg, None).unwrap();
        assert_eq!(trace.iterations, 0);
        assert!(trace.converged);
    }

    #[test]
    fn riesz_representation_needs_gram() {
        let obj = single_reference_interval();
        let cfg = DescentConfig::new(InnerProductSpec::L2Mass, 1e-15);
        assert!(steepest_descent(&obj, &cfg, None).is_err());
    }

    #[test]
    fn max_iter_gives_unconverged_trace() {
        let m = SparseMatrix::from_diagonal(&[1.0, 10.0, 100.0]);
        let obj = QuadraticObjective::new(m, vec![1.0; 3]).unwrap();
        let mut cfg = DescentConfig::new(InnerProductSpec::Euclidean, 1e-30);
        cfg.max_iter = 3;
        let t = steepest_descent(&obj, &cfg, None).unwrap();
        assert!(!t.converged);
        assert_eq!(t.iterations, 3);
        assert_eq!(t.records.len(), 4);
    }

    #[test]
    fn kantorovich_factors() {
        assert_eq!(kantorovich_factor(1.0), 0.0);
        assert!((kantorovich_factor(3.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn estimate_value_and_threshold_error() {
        let r = reference_element(1, 1).unwrap();
        let inp = EstimateInputs {
            epsilon: 1e-15,
            f0: 0.5,
            p_max: 2,
            lambda_ratio_hat: r.lambda_ratio(),
            h_ratio: 128.0,
            dim: 1,
        };
        let k = iteration_estimate(&inp).unwrap();
        let expected = -0.25 * (2e-15f64).ln() * (2.0 * 3.0 * 128.0 + 1.0);
        assert!((k - expected).abs() < 1e-9 * expected);
        assert!((k - 6.51e3).abs() < 5.0);
        let bad = EstimateInputs { epsilon: 1.0, ..inp };
        assert!(matches!(iteration_estimate(&bad), Err(Error::InvalidThreshold { .. })));
    }

    #[test]
    fn trace_csv_format() {
        let obj = single_reference_interval();
        let t = steepest_descent(&obj, &DescentConfig::new(InnerProductSpec::Euclidean, 1e-15), None).unwrap();
        let rows = t.csv_rows("r0");
        let first = rows.lines().next().unwrap();
        assert_eq!(first.split(',').count(), 5);
        assert!(first.starts_with("r0,0,"));
        assert!(rows.lines().last().unwrap().split(',').nth(3).unwrap().is_empty());
    }
}
