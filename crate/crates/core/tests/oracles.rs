//! Cross-checks against dense linear algebra and closed-form quantities.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use rieszlab::descent::{iteration_estimate, kantorovich_factor, EstimateInputs};
use rieszlab::femcore::{
    assemble_gram, assemble_mass, assemble_stiffness, local_stiffness, riesz_map, FunctionSpace, InnerProductSpec,
};
use rieszlab::meshkit::{element_geometry, mesh_metrics, refine_subregion, Mesh};
use rieszlab::sparse::SparseMatrix;
use rieszlab::spectra::{cg_solve, SkylineCholesky};

fn random_axes(dim: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|_| {
            let mut pts: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0.02..0.98)).collect();
            pts.push(0.0);
            pts.push(1.0);
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pts.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            pts
        })
        .collect()
}

fn to_dmatrix(m: &SparseMatrix) -> DMatrix<f64> {
    let d = m.to_dense();
    DMatrix::from_fn(d.len(), d.len(), |i, j| d[i][j])
}

#[test]
fn jacobian_singular_values_match_svd() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    for dim in 1..=3 {
        let mesh = Mesh::from_axes(random_axes(dim, 4, &mut rng)).unwrap();
        for c in 0..mesh.num_cells() {
            let g = element_geometry(&mesh, c).unwrap();
            let j = DMatrix::from_fn(dim, dim, |r, s| g.jacobian[(r, s)]);
            let mut sv: Vec<f64> = j.singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (a, b) in g.scalings.iter().zip(&sv) {
                assert_relative_eq!(*a, *b, max_relative = 1e-12);
            }
            assert_relative_eq!(g.det_abs, j.determinant().abs(), max_relative = 1e-12);
        }
    }
}

#[test]
fn p1_stiffness_matches_physical_gradients() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(2);
    for dim in 2..=3 {
        let mesh = Mesh::from_axes(random_axes(dim, 3, &mut rng)).unwrap();
        let space = FunctionSpace::new(mesh, 1).unwrap();
        for c in 0..space.mesh().num_cells() {
            let verts: Vec<&[f64]> = space.mesh().cell(c).iter().map(|&v| space.mesh().vertex(v)).collect();
            // barycentric coordinates: rows of the inverse of [1 x_i]
            let a = DMatrix::from_fn(dim + 1, dim + 1, |r, s| if s == 0 { 1.0 } else { verts[r][s - 1] });
            let inv = a.clone().try_inverse().unwrap();
            let factorial: f64 = (1..=dim).map(|k| k as f64).product();
            let volume = a.determinant().abs() / factorial;
            let k = local_stiffness(&space, c).unwrap();
            for i in 0..=dim {
                for j in 0..=dim {
                    let dot: f64 = (1..=dim).map(|s| inv[(s, i)] * inv[(s, j)]).sum();
                    assert_relative_eq!(k[(i, j)], volume * dot, epsilon = 1e-12, max_relative = 1e-10);
                }
            }
        }
    }
}

#[test]
fn solvers_agree_with_dense_lu() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mesh = Mesh::from_axes(random_axes(2, 7, &mut rng)).unwrap();
    let space = FunctionSpace::new(mesh, 1).unwrap();
    let k = assemble_stiffness(&space).unwrap().eliminate(&space.boundary_dofs()).unwrap();
    let n = k.dim();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dense = to_dmatrix(&k).lu().solve(&DVector::from_vec(b.clone())).unwrap();
    let cg = cg_solve(&k, &b, 1e-13, 10 * n).unwrap();
    let chol = SkylineCholesky::factor(&k).unwrap().solve(&b).unwrap();
    for i in 0..n {
        assert_relative_eq!(cg[i], dense[i], epsilon = 1e-10);
        assert_relative_eq!(chol[i], dense[i], epsilon = 1e-12);
    }
}

#[test]
fn riesz_map_inverts_the_gram_matrix() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(4);
    let mesh = Mesh::from_axes(random_axes(2, 6, &mut rng)).unwrap();
    let space = FunctionSpace::new(mesh, 1).unwrap();
    for ip in [InnerProductSpec::L2Mass, InnerProductSpec::H1Full] {
        let g = assemble_gram(&space, ip).unwrap();
        let dual: Vec<f64> = (0..g.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rep = riesz_map(&g, &dual, 1e-14).unwrap();
        let back = g.mul(&rep);
        for (a, b) in back.iter().zip(&dual) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}

#[test]
fn one_dimensional_manufactured_solve() {
    // -u'' = pi^2 sin(pi x) on a graded mesh, P1 nodal values are superconvergent
    let axes = vec![vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.45, 0.6, 0.8, 1.0]];
    let mut mesh = Mesh::from_axes(axes).unwrap();
    for _ in 0..4 {
        mesh = rieszlab::meshkit::uniform_refine(&mesh).unwrap();
    }
    let space = FunctionSpace::new(mesh, 1).unwrap();
    let pi = std::f64::consts::PI;
    let m = assemble_mass(&space);
    let k = assemble_stiffness(&space).unwrap();
    let boundary = space.boundary_dofs();
    let mut b = m.mul(&space.interpolate(|x| pi * pi * (pi * x[0]).sin()));
    for (bi, fixed) in b.iter_mut().zip(&boundary) {
        if *fixed {
            *bi = 0.0;
        }
    }
    let u = cg_solve(&k.eliminate(&boundary).unwrap(), &b, 1e-12, 10_000).unwrap();
    let err = space.l2_error(&u, |x| (pi * x[0]).sin()).unwrap();
    assert!(err < 2e-3, "L2 error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_matrix_integrates_one(dim in 1usize..=3, seed in any::<u64>(), order in 1usize..=5) {
        let order = if dim == 1 { order } else { 1 };
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mesh = Mesh::from_axes(random_axes(dim, 3, &mut rng)).unwrap();
        let space = FunctionSpace::new(mesh, order).unwrap();
        let m = assemble_mass(&space);
        let ones = vec![1.0; m.dim()];
        prop_assert!((m.bilinear(&ones, &ones) - 1.0).abs() < 1e-12);
        prop_assert!(m.asymmetry() < 1e-14);
        let k = assemble_stiffness(&space).unwrap();
        prop_assert!(k.mul(&ones).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn refinement_doubles_the_ratio(dim in 1usize..=3, times in 1u32..=3) {
        let mut mesh = Mesh::from_axes(vec![vec![0.0, 0.5, 1.0]; dim]).unwrap();
        for _ in 0..times {
            mesh = refine_subregion(&mesh, 0, 0.0, 0.5).unwrap();
        }
        let metrics = mesh_metrics(&mesh).unwrap();
        prop_assert!((metrics.h_ratio_scalar - 2f64.powi(times as i32)).abs() < 1e-9);
        prop_assert!((mesh.total_measure().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_grows_with_ratio(ratio in 1.0f64..1e3, dim in 1usize..=3) {
        let at = |h: f64| iteration_estimate(&EstimateInputs {
            epsilon: 1e-10, f0: 0.5, p_max: 6, lambda_ratio_hat: 4.0, h_ratio: h, dim,
        }).unwrap();
        prop_assert!(at(2.0 * ratio) > at(ratio));
    }

    #[test]
    fn kantorovich_factor_is_a_contraction(kappa in 1.0f64..1e12) {
        let q = kantorovich_factor(kappa);
        prop_assert!((0.0..1.0).contains(&q));
    }
}
