//! Optimal control of the Poisson equation on the unit square with a
//! reduced functional, adjoint gradients and a limited-memory BFGS whose
//! geometry is either Euclidean or that of the control space.
//!
//! Sign convention: the state equation is `Δu = f` as written, so the weak
//! form is `∫∇u·∇v = −∫f v` and the discrete state solves `K u = −M f`.
//! The adjoint `K λ = −M (u − d)` then makes the reduced derivative the
//! dual vector `M λ + α G_H f`.

use crate::dense::{axpy, dot, norm2};
use crate::descent::{OptTrace, StepRecord};
use crate::error::{Error, Result};
use crate::femcore::{assemble_gram, assemble_mass, assemble_stiffness, riesz_map, FunctionSpace, InnerProductSpec};
use crate::sparse::SparseMatrix;
use crate::spectra::SkylineCholesky;

/// Relative residual for Riesz solves in a geometry other than the control space.
pub const RIESZ_TOL: f64 = 1e-12;

/// Desired state `d(x, y) = sin(πx) sin(πy) / (2π²)`.
pub fn default_desired_state(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    (PI * x[0]).sin() * (PI * x[1]).sin() / (2.0 * PI * PI)
}

pub const DEFAULT_TIKHONOV: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PoissonControlProblem {
    space: FunctionSpace,
    stiffness_bc: SparseMatrix,
    mass: SparseMatrix,
    gram_h: SparseMatrix,
    boundary: Vec<bool>,
    desired: Vec<f64>,
    tikhonov_alpha: f64,
    control_space_kind: InnerProductSpec,
    state_factor: SkylineCholesky,
    gram_factor: SkylineCholesky,
}

impl PoissonControlProblem {
    pub fn new(
        space: FunctionSpace,
        control_space_kind: InnerProductSpec,
        desired: Vec<f64>,
        tikhonov_alpha: f64,
    ) -> Result<Self> {
        if space.mesh().dim() != 2 || space.order() != 1 {
            return Err(Error::InvalidArgument("control problem needs a 2-D order-1 space".into()));
        }
        if control_space_kind == InnerProductSpec::Euclidean {
            return Err(Error::InvalidArgument("control space must be L2 or H1".into()));
        }
        if !(tikhonov_alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("tikhonov alpha must be >= 0, got {tikhonov_alpha}")));
        }
        if desired.len() != space.dof_count() {
            return Err(Error::DimensionMismatch { expected: space.dof_count(), got: desired.len() });
        }
        let boundary = space.boundary_dofs();
        let stiffness_bc = assemble_stiffness(&space)?.eliminate(&boundary)?;
        let mass = assemble_mass(&space);
        let gram_h = assemble_gram(&space, control_space_kind)?;
        let state_factor =
            SkylineCholesky::factor(&stiffness_bc).map_err(|e| Error::StateSolveFailed(e.to_string()))?;
        let gram_factor =
            SkylineCholesky::factor(&gram_h).map_err(|e| Error::RieszSolveFailed(e.to_string()))?;
        Ok(PoissonControlProblem {
            state_factor,
            gram_factor,
            space,
            stiffness_bc,
            mass,
            gram_h,
            boundary,
            desired,
            tikhonov_alpha,
            control_space_kind,
        })
    }

    /// The default configuration: smooth desired state and `α = 1e−6`.
    pub fn with_defaults(space: FunctionSpace, control_space_kind: InnerProductSpec) -> Result<Self> {
        let desired = space.interpolate(default_desired_state);
        Self::new(space, control_space_kind, desired, DEFAULT_TIKHONOV)
    }

    pub fn space(&self) -> &FunctionSpace {
        &self.space
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn stiffness_bc(&self) -> &SparseMatrix {
        &self.stiffness_bc
    }

    pub fn gram_h(&self) -> &SparseMatrix {
        &self.gram_h
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn desired(&self) -> &[f64] {
        &self.desired
    }

    pub fn tikhonov_alpha(&self) -> f64 {
        self.tikhonov_alpha
    }

    pub fn control_space_kind(&self) -> InnerProductSpec {
        self.control_space_kind
    }

    pub fn dof_count(&self) -> usize {
        self.space.dof_count()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dof_count() {
            return Err(Error::DimensionMismatch { expected: self.dof_count(), got: v.len() });
        }
        Ok(())
    }

    /// Solves `K_bc x = rhs` with homogeneous Dirichlet values.
    fn dirichlet_solve(&self, mut rhs: Vec<f64>) -> std::result::Result<Vec<f64>, Error> {
        for (r, b) in rhs.iter_mut().zip(&self.boundary) {
            if *b {
                *r = 0.0;
            }
        }
        self.state_factor.solve(&rhs)
    }

    /// Riesz representer in the control space, `G_H⁻¹ g`, from the stored factor.
    pub fn riesz_h(&self, dual: &[f64]) -> Result<Vec<f64>> {
        self.gram_factor.solve(dual)
    }

    /// H-norm of the Riesz representer of a dual vector, `sqrt(gᵀ G_H⁻¹ g)`.
    pub fn dual_norm_h(&self, dual: &[f64]) -> Result<f64> {
        let rep = self.riesz_h(dual)?;
        Ok(dot(&rep, dual).max(0.0).sqrt())
    }
}

/// State `u` with `K_bc u = −M f`, zero on the boundary.
pub fn solve_state(prob: &PoissonControlProblem, f: &[f64]) -> Result<Vec<f64>> {
    prob.check_len(f)?;
    let rhs = prob.mass.mul(f).into_iter().map(|x| -x).collect();
    prob.dirichlet_solve(rhs).map_err(|e| Error::StateSolveFailed(e.to_string()))
}

/// Adjoint `λ` with `K_bc λ = −M (u − d)`, zero on the boundary.
pub fn solve_adjoint(prob: &PoissonControlProblem, u: &[f64]) -> Result<Vec<f64>> {
    prob.check_len(u)?;
    let mismatch: Vec<f64> = u.iter().zip(&prob.desired).map(|(a, b)| a - b).collect();
    let rhs = prob.mass.mul(&mismatch).into_iter().map(|x| -x).collect();
    prob.dirichlet_solve(rhs).map_err(|e| Error::AdjointSolveFailed(e.to_string()))
}

fn objective_from_state(prob: &PoissonControlProblem, f: &[f64], u: &[f64]) -> f64 {
    let e: Vec<f64> = u.iter().zip(&prob.desired).map(|(a, b)| a - b).collect();
    0.5 * prob.mass.bilinear(&e, &e) + 0.5 * prob.tikhonov_alpha * prob.gram_h.bilinear(f, f)
}

/// `J(f) = ½ (u − d)ᵀ M (u − d) + (α/2) fᵀ G_H f` with `u = solve_state(f)`.
pub fn reduced_eval(prob: &PoissonControlProblem, f: &[f64]) -> Result<f64> {
    let u = solve_state(prob, f)?;
    Ok(objective_from_state(prob, f, &u))
}

/// Value and derivative (as a dual vector) of the reduced functional.
pub fn reduced_eval_and_gradient(prob: &PoissonControlProblem, f: &[f64]) -> Result<(f64, Vec<f64>)> {
    let u = solve_state(prob, f)?;
    let j = objective_from_state(prob, f, &u);
    Ok((j, gradient_from_state(prob, f, &u)?))
}

fn gradient_from_state(prob: &PoissonControlProblem, f: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let lambda = solve_adjoint(prob, u)?;
    let mut g = prob.mass.mul(&lambda);
    if prob.tikhonov_alpha != 0.0 {
        axpy(prob.tikhonov_alpha, &prob.gram_h.mul(f), &mut g);
    }
    Ok(g)
}

/// `M λ + α G_H f`: the directional derivative of [`reduced_eval`] along
/// `δf` is its Euclidean pairing with `δf`.
pub fn reduced_gradient_dual(prob: &PoissonControlProblem, f: &[f64]) -> Result<Vec<f64>> {
    reduced_eval_and_gradient(prob, f).map(|(_, g)| g)
}

/// Observed order of the Taylor remainder `|J(f + tδ) − J(f) − t ⟨g, δ⟩|`
/// for `steps` values of `t` log-spaced from 1e−2 to 1e−5, by least squares
/// on the log-log data.
pub fn taylor_test(prob: &PoissonControlProblem, f: &[f64], delta: &[f64], steps: usize) -> Result<f64> {
    let g = reduced_gradient_dual(prob, f)?;
    taylor_test_with(|x| reduced_eval(prob, x), f, &g, delta, steps)
}

/// [`taylor_test`] against an arbitrary functional and claimed gradient.
pub fn taylor_test_with(
    eval: impl Fn(&[f64]) -> Result<f64>,
    f: &[f64],
    gradient: &[f64],
    delta: &[f64],
    steps: usize,
) -> Result<f64> {
    if steps < 2 {
        return Err(Error::InvalidArgument("taylor test needs at least two steps".into()));
    }
    if delta.iter().all(|d| *d == 0.0) {
        return Err(Error::InvalidArgument("taylor test direction must be non-zero".into()));
    }
    let j0 = eval(f)?;
    let slope = dot(gradient, delta);
    let mut pts = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = 1e-2 * 10f64.powf(-3.0 * k as f64 / (steps - 1) as f64);
        let x: Vec<f64> = f.iter().zip(delta).map(|(a, d)| a + t * d).collect();
        let rem = (eval(&x)? - j0 - t * slope).abs();
        pts.push((t.ln(), rem.max(f64::MIN_POSITIVE).ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoParams {
    pub c1: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        ArmijoParams { c1: 1e-4, shrink: 0.5, initial_step: 1.0, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Tolerance on `‖ℛ_H(J′)‖_H`, H being the problem's control space.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Geometry of the optimiser: curvature pairs, initial scaling and
    /// search directions use this inner product.
    pub inner_product: InnerProductSpec,
    pub line_search: ArmijoParams,
}

impl LbfgsConfig {
    pub fn new(inner_product: InnerProductSpec) -> Self {
        LbfgsConfig {
            memory: 10,
            grad_tol: 1e-7,
            max_iter: 2000,
            inner_product,
            line_search: ArmijoParams::default(),
        }
    }
}

struct CurvaturePair {
    s: Vec<f64>,
    /// Representer of the gradient change.
    y_rep: Vec<f64>,
    rho: f64,
}

/// Inner-product geometry of the optimiser: Euclidean, or a Gram matrix
/// with an optional stored factorisation for its Riesz map.
struct Geometry<'a> {
    gram: Option<&'a SparseMatrix>,
    factor: Option<&'a SkylineCholesky>,
}

impl Geometry<'_> {
    fn represent(&self, dual: &[f64]) -> Result<Vec<f64>> {
        match (self.gram, self.factor) {
            (None, _) => Ok(dual.to_vec()),
            (Some(_), Some(fac)) => fac.solve(dual),
            (Some(g), None) => riesz_map(g, dual, RIESZ_TOL),
        }
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.gram {
            None => dot(a, b),
            Some(g) => g.bilinear(a, b),
        }
    }
}

/// Limited-memory BFGS from `f = 0`, stopping when `‖ℛ_H(J′)‖_H ≤ grad_tol`.
/// Running out of iterations gives a trace with `converged = false`.
pub fn lbfgs_minimize(prob: &PoissonControlProblem, config: &LbfgsConfig) -> Result<OptTrace> {
    if config.memory == 0 || !(config.grad_tol > 0.0) {
        return Err(Error::InvalidArgument("need memory >= 1 and grad_tol > 0".into()));
    }
    let own_gram;
    let geometry = match config.inner_product {
        InnerProductSpec::Euclidean => Geometry { gram: None, factor: None },
        ip if ip == prob.control_space_kind => {
            Geometry { gram: Some(&prob.gram_h), factor: Some(&prob.gram_factor) }
        }
        ip => {
            own_gram = assemble_gram(&prob.space, ip)?;
            Geometry { gram: Some(&own_gram), factor: None }
        }
    };
    let stop_in_geometry = config.inner_product == prob.control_space_kind;
    let ls = config.line_search;

    let n = prob.dof_count();
    let mut f = vec![0.0; n];
    let (mut j, mut g) = reduced_eval_and_gradient(prob, &f)?;
    let mut g_rep = geometry.represent(&g)?;
    let mut pairs: std::collections::VecDeque<CurvaturePair> = std::collections::VecDeque::new();
    let mut records = Vec::new();
    let mut k = 0;
    loop {
        let stop_norm = if stop_in_geometry {
            dot(&g_rep, &g).max(0.0).sqrt()
        } else {
            prob.dual_norm_h(&g)?
        };
        records.push(StepRecord { f_value: j, step_alpha: None, grad_norm_l2: norm2(&g) });
        if stop_norm <= config.grad_tol {
            return Ok(OptTrace { iterations: k, records, converged: true, final_iterate: f });
        }
        if k == config.max_iter {
            return Ok(OptTrace { iterations: k, records, converged: false, final_iterate: f });
        }

        // two-loop recursion in the optimiser's inner product
        let mut q = g_rep.clone();
        let mut coeffs = Vec::with_capacity(pairs.len());
        for p in pairs.iter().rev() {
            let a = p.rho * geometry.inner(&p.s, &q);
            axpy(-a, &p.y_rep, &mut q);
            coeffs.push(a);
        }
        let (mut dir, t0) = match pairs.back() {
            Some(p) => {
                let gamma = 1.0 / (p.rho * geometry.inner(&p.y_rep, &p.y_rep));
                q.iter_mut().for_each(|x| *x *= gamma);
                for (p, a) in pairs.iter().zip(coeffs.iter().rev()) {
                    let b = p.rho * geometry.inner(&p.y_rep, &q);
                    axpy(a - b, &p.s, &mut q);
                }
                (q, ls.initial_step)
            }
            None => {
                let gn = geometry.inner(&q, &q).sqrt();
                (q, ls.initial_step / gn)
            }
        };
        dir.iter_mut().for_each(|x| *x = -*x);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // not a descent direction: drop the memory and use the gradient
            pairs.clear();
            dir = g_rep.iter().map(|x| -x).collect();
            slope = dot(&g, &dir);
        }

        let mut t = t0;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let trial: Vec<f64> = f.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let u = solve_state(prob, &trial)?;
            let jt = objective_from_state(prob, &trial, &u);
            if jt <= j + ls.c1 * t * slope {
                accepted = Some((trial, jt, u));
                break;
            }
            t *= ls.shrink;
        }
        let Some((f_new, j_new, u_new)) = accepted else {
            // line search stalled, typically at rounding level
            return Ok(OptTrace { iterations: k, records, converged: false, final_iterate: f });
        };
        let g_new = gradient_from_state(prob, &f_new, &u_new)?;
        let g_rep_new = geometry.represent(&g_new)?;
        records.last_mut().unwrap().step_alpha = Some(t);

        let s: Vec<f64> = f_new.iter().zip(&f).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let y_rep: Vec<f64> = g_rep_new.iter().zip(&g_rep).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let s_norm = geometry.inner(&s, &s).sqrt();
        let y_norm = geometry.inner(&y_rep, &y_rep).sqrt();
        if sy > 1e-14 * s_norm * y_norm {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back(CurvaturePair { s, y_rep, rho: 1.0 / sy });
        }
        f = f_new;
        j = j_new;
        g = g_new;
        g_rep = g_rep_new;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::{build_graded_mesh, Grading};

    fn problem(n: usize, h: InnerProductSpec) -> PoissonControlProblem {
        let mesh = build_graded_mesh(2, &[n, n], &Grading::Uniform).unwrap();
        PoissonControlProblem::with_defaults(FunctionSpace::new(mesh, 1).unwrap(), h).unwrap()
    }

    fn pseudo_random(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * seed).sin()).collect()
    }

    #[test]
    fn zero_control_gives_zero_state() {
        let p = problem(6, InnerProductSpec::L2Mass);
        assert!(solve_state(&p, &vec![0.0; p.dof_count()]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn state_is_linear() {
        let p = problem(6, InnerProductSpec::L2Mass);
        let f1 = pseudo_random(p.dof_count(), 0.37);
        let f2 = pseudo_random(p.dof_count(), 1.91);
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let u1 = solve_state(&p, &f1).unwrap();
        let u2 = solve_state(&p, &f2).unwrap();
        let u12 = solve_state(&p, &sum).unwrap();
        for i in 0..p.dof_count() {
            assert!((u12[i] - u1[i] - u2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_vanishes_at_desired_state_and_on_boundary() {
        let p = problem(6, InnerProductSpec::L2Mass);
        let lam = solve_adjoint(&p, p.desired()).unwrap();
        assert!(lam.iter().all(|v| *v == 0.0));
        let lam = solve_adjoint(&p, &pseudo_random(p.dof_count(), 0.7)).unwrap();
        for (l, b) in lam.iter().zip(p.boundary()) {
            if *b {
                assert_eq!(*l, 0.0);
            }
        }
    }

    #[test]
    fn reduced_eval_at_zero_control() {
        let p = problem(6, InnerProductSpec::H1Full);
        let d = p.desired().to_vec();
        let j = reduced_eval(&p, &vec![0.0; p.dof_count()]).unwrap();
        assert!((j - 0.5 * p.mass().bilinear(&d, &d)).abs() < 1e-18);
    }

    #[test]
    fn attainable_target_without_regularisation() {
        let mesh = build_graded_mesh(2, &[6, 6], &Grading::Uniform).unwrap();
        let space = FunctionSpace::new(mesh, 1).unwrap();
        let base = PoissonControlProblem::with_defaults(space.clone(), InnerProductSpec::L2Mass).unwrap();
        let f = pseudo_random(space.dof_count(), 0.3);
        let d = solve_state(&base, &f).unwrap();
        let p = PoissonControlProblem::new(space, InnerProductSpec::L2Mass, d, 0.0).unwrap();
        assert!(reduced_eval(&p, &f).unwrap() < 1e-20);
        let g = reduced_gradient_dual(&p, &f).unwrap();
        assert!(norm2(&g) < 1e-12);
    }

    #[test]
    fn taylor_orders() {
        let p = problem(8, InnerProductSpec::L2Mass);
        let f = pseudo_random(p.dof_count(), 0.11);
        let delta = pseudo_random(p.dof_count(), 2.3);
        let order = taylor_test(&p, &f, &delta, 4).unwrap();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
        let scaled: Vec<f64> = delta.iter().map(|x| 10.0 * x).collect();
        let order10 = taylor_test(&p, &f, &scaled, 4).unwrap();
        assert!((order10 - 2.0).abs() < 0.1);
        let zero = vec![0.0; p.dof_count()];
        let wrong = taylor_test_with(|x| reduced_eval(&p, x), &f, &zero, &delta, 4).unwrap();
        assert!((wrong - 1.0).abs() < 0.1, "order {wrong}");
    }

    #[test]
    fn lbfgs_converges_on_small_problem() {
        for (h, ip) in [
            (InnerProductSpec::L2Mass, InnerProductSpec::L2Mass),
            (InnerProductSpec::H1Full, InnerProductSpec::H1Full),
            (InnerProductSpec::L2Mass, InnerProductSpec::Euclidean),
        ] {
            let p = problem(8, h);
            let t = lbfgs_minimize(&p, &LbfgsConfig::new(ip)).unwrap();
            assert!(t.converged, "{h:?}/{ip:?}");
            let f: Vec<f64> = t.f_values().collect();
            assert!(f.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn euclidean_control_space_rejected() {
        let mesh = build_graded_mesh(2, &[2, 2], &Grading::Uniform).unwrap();
        let space = FunctionSpace::new(mesh, 1).unwrap();
        assert!(PoissonControlProblem::with_defaults(space, InnerProductSpec::Euclidean).is_err());
    }
}
