//! Lagrange reference elements, global DOF numbering, and assembly of mass,
//! stiffness and Gram matrices on affine meshes.
//!
//! Every physical quantity is obtained from the reference cell by the affine
//! pullback `x = J_K x̂ + y_K`. For the mass matrix this reduces to the
//! scaling law `M_K = |det J_K| M̂`, which is how [`assemble_mass`] works.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::meshkit::{element_geometry, reference_vertices, reference_volume, ElementGeometry, Mesh};
use crate::sparse::SparseMatrix;
use crate::spectra::cg_solve_from;

/// Hilbert inner product used to represent derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerProductSpec {
    /// ℓ² on coefficient vectors (Gram matrix = identity).
    Euclidean,
    /// L²(Ω), Gram matrix = mass matrix.
    L2Mass,
    /// Full H¹(Ω): mass plus stiffness.
    H1Full,
}

impl InnerProductSpec {
    pub fn name(self) -> &'static str {
        match self {
            InnerProductSpec::Euclidean => "euclidean",
            InnerProductSpec::L2Mass => "l2_mass",
            InnerProductSpec::H1Full => "h1_full",
        }
    }
}

impl std::str::FromStr for InnerProductSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(InnerProductSpec::Euclidean),
            "l2_mass" | "L2" => Ok(InnerProductSpec::L2Mass),
            "h1_full" | "H1" => Ok(InnerProductSpec::H1Full),
            other => Err(Error::InvalidArgument(format!("unknown inner product '{other}'"))),
        }
    }
}

/// Quadrature rule on the reference cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Quadrature {
    assert!(n >= 1);
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        points.push(vec![0.5 * (1.0 - x)]);
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    Quadrature { points, weights }
}

/// Degree-2 exact simplex rule on the reference triangle/tetrahedron,
/// expressed in barycentric form and mapped onto the reference vertices.
fn simplex_degree2(dim: usize) -> Quadrature {
    let verts = reference_vertices(dim);
    let (a, b) = match dim {
        2 => (2.0 / 3.0, 1.0 / 6.0),
        3 => (0.585_410_196_624_968_5, 0.138_196_601_125_010_5),
        _ => unreachable!(),
    };
    let npts = dim + 1;
    let vol = reference_volume(dim);
    let mut points = Vec::with_capacity(npts);
    for q in 0..npts {
        let bary: Vec<f64> = (0..npts).map(|j| if j == q { a } else { b }).collect();
        let x = (0..dim)
            .map(|c| (0..npts).map(|j| bary[j] * verts[j][c]).sum())
            .collect();
        points.push(x);
    }
    Quadrature { points, weights: vec![vol / npts as f64; npts] }
}

#[derive(Debug, Clone, PartialEq)]
enum Basis {
    /// 1-D Lagrange polynomials on equally spaced nodes `l / order`.
    Interval { nodes: Vec<f64> },
    /// Affine (P1) basis on a simplex: `ψ_i(x) = c_i0 + Σ_a c_ia x_a`.
    Affine { coeffs: Vec<Vec<f64>> },
}

/// Lagrange reference element with its mass matrix and stiffness parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceElement {
    pub dim: usize,
    pub order: usize,
    pub node_count: usize,
    pub mass_hat: DenseMatrix,
    /// `stiff_hat_parts[a * dim + b]_{ij} = ∫ ∂_a ψ_i ∂_b ψ_j dx̂`.
    pub stiff_hat_parts: Vec<DenseMatrix>,
    pub lambda_hat_min: f64,
    pub lambda_hat_max: f64,
    pub quadrature: Quadrature,
    basis: Basis,
}

/// Reference element for `(dim, order)`: orders 1–5 on intervals, order 1
/// on triangles and tetrahedra.
pub fn reference_element(dim: usize, order: usize) -> Result<ReferenceElement> {
    let supported = matches!((dim, order), (1, 1..=5) | (2, 1) | (3, 1));
    if !supported {
        return Err(Error::UnsupportedElement { dim, order });
    }
    let (basis, quadrature) = if dim == 1 {
        let nodes = (0..=order).map(|l| l as f64 / order as f64).collect();
        (Basis::Interval { nodes }, gauss_legendre(order + 1))
    } else {
        let verts = reference_vertices(dim);
        let vmat = DenseMatrix::from_rows(
            &verts
                .iter()
                .map(|v| std::iter::once(1.0).chain(v.iter().copied()).collect())
                .collect::<Vec<_>>(),
        );
        let inv = vmat.inverse().expect("reference simplex is non-degenerate");
        let coeffs = (0..=dim).map(|i| (0..=dim).map(|k| inv[(k, i)]).collect()).collect();
        (Basis::Affine { coeffs }, simplex_degree2(dim))
    };
    let p = match &basis {
        Basis::Interval { nodes } => nodes.len(),
        Basis::Affine { coeffs } => coeffs.len(),
    };
    let mut el = ReferenceElement {
        dim,
        order,
        node_count: p,
        mass_hat: DenseMatrix::zeros(p),
        stiff_hat_parts: vec![DenseMatrix::zeros(p); dim * dim],
        lambda_hat_min: 0.0,
        lambda_hat_max: 0.0,
        quadrature,
        basis,
    };
    let mut mass = DenseMatrix::zeros(p);
    let mut parts = vec![DenseMatrix::zeros(p); dim * dim];
    for (x, w) in el.quadrature.points.iter().zip(&el.quadrature.weights) {
        let psi = el.eval(x);
        let grad = el.eval_grad(x);
        for i in 0..p {
            for j in 0..p {
                mass[(i, j)] += w * psi[i] * psi[j];
                for a in 0..dim {
                    for b in 0..dim {
                        parts[a * dim + b][(i, j)] += w * grad[i][a] * grad[j][b];
                    }
                }
            }
        }
    }
    let ev = mass.symmetric_eigenvalues();
    el.lambda_hat_min = ev[0];
    el.lambda_hat_max = ev[p - 1];
    el.mass_hat = mass;
    el.stiff_hat_parts = parts;
    Ok(el)
}

impl ReferenceElement {
    /// Basis values `ψ_l(x̂)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.basis {
            Basis::Interval { nodes } => (0..nodes.len())
                .map(|l| {
                    nodes
                        .iter()
                        .enumerate()
                        .filter(|(m, _)| *m != l)
                        .map(|(_, xm)| (x[0] - xm) / (nodes[l] - xm))
                        .product()
                })
                .collect(),
            Basis::Affine { coeffs } => coeffs
                .iter()
                .map(|c| c[0] + (0..self.dim).map(|a| c[a + 1] * x[a]).sum::<f64>())
                .collect(),
        }
    }

    /// Basis gradients `∇̂ψ_l(x̂)`, one `dim`-vector per node.
    pub fn eval_grad(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match &self.basis {
            Basis::Interval { nodes } => (0..nodes.len())
                .map(|l| {
                    let mut d = 0.0;
                    for k in 0..nodes.len() {
                        if k == l {
                            continue;
                        }
                        let mut term = 1.0 / (nodes[l] - nodes[k]);
                        for m in 0..nodes.len() {
                            if m != l && m != k {
                                term *= (x[0] - nodes[m]) / (nodes[l] - nodes[m]);
                            }
                        }
                        d += term;
                    }
                    vec![d]
                })
                .collect(),
            Basis::Affine { coeffs } => coeffs.iter().map(|c| c[1..].to_vec()).collect(),
        }
    }

    /// Reference coordinates of the nodal points.
    pub fn node_points(&self) -> Vec<Vec<f64>> {
        match &self.basis {
            Basis::Interval { nodes } => nodes.iter().map(|x| vec![*x]).collect(),
            Basis::Affine { .. } => reference_vertices(self.dim),
        }
    }

    pub fn lambda_ratio(&self) -> f64 {
        self.lambda_hat_max / self.lambda_hat_min
    }

    pub fn volume(&self) -> f64 {
        reference_volume(self.dim)
    }
}

/// Continuous Lagrange space over a mesh, with global DOF numbering.
///
/// Vertex DOFs carry the vertex index; interior interval DOFs of higher-order
/// 1-D elements follow, cell by cell.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    mesh: Mesh,
    reference: ReferenceElement,
    dof_count: usize,
    cell_dofs: Vec<usize>,
    dof_coords: Vec<f64>,
    geometry: Vec<ElementGeometry>,
}

impl FunctionSpace {
    pub fn new(mesh: Mesh, order: usize) -> Result<Self> {
        let dim = mesh.dim();
        let reference = reference_element(dim, order)?;
        let p = reference.node_count;
        let nv = mesh.num_vertices();
        let nc = mesh.num_cells();
        let geometry = (0..nc).map(|c| element_geometry(&mesh, c)).collect::<Result<Vec<_>>>()?;
        let mut cell_dofs = Vec::with_capacity(nc * p);
        let interior = p - (dim + 1);
        for c in 0..nc {
            let verts = mesh.cell(c);
            if dim == 1 {
                cell_dofs.push(verts[0]);
                cell_dofs.extend((0..interior).map(|l| nv + c * interior + l));
                cell_dofs.push(verts[1]);
            } else {
                cell_dofs.extend_from_slice(verts);
            }
        }
        let dof_count = nv + nc * interior;
        let mut dof_coords = vec![0.0; dof_count * dim];
        let nodes = reference.node_points();
        for (c, g) in geometry.iter().enumerate() {
            for (l, xh) in nodes.iter().enumerate() {
                let x = g.jacobian.matvec(xh);
                let dof = cell_dofs[c * p + l];
                for a in 0..dim {
                    dof_coords[dof * dim + a] = x[a] + g.offset[a];
                }
            }
        }
        Ok(FunctionSpace { mesh, reference, dof_count, cell_dofs, dof_coords, geometry })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn reference(&self) -> &ReferenceElement {
        &self.reference
    }

    pub fn order(&self) -> usize {
        self.reference.order
    }

    pub fn dof_count(&self) -> usize {
        self.dof_count
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let p = self.reference.node_count;
        &self.cell_dofs[cell * p..(cell + 1) * p]
    }

    pub fn dof_coord(&self, dof: usize) -> &[f64] {
        let d = self.mesh.dim();
        &self.dof_coords[dof * d..(dof + 1) * d]
    }

    pub fn geometry(&self, cell: usize) -> &ElementGeometry {
        &self.geometry[cell]
    }

    /// DOFs located on `∂Ω`.
    pub fn boundary_dofs(&self) -> Vec<bool> {
        (0..self.dof_count)
            .map(|i| self.dof_coord(i).iter().any(|&x| x.abs() < 1e-14 || (x - 1.0).abs() < 1e-14))
            .collect()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.dof_count).map(|i| f(self.dof_coord(i))).collect()
    }

    /// `‖u_h − f‖_{L²(Ω)}` by a high-order rule on each cell.
    pub fn l2_error(&self, coeffs: &[f64], f: impl Fn(&[f64]) -> f64) -> Result<f64> {
        if coeffs.len() != self.dof_count {
            return Err(Error::DimensionMismatch { expected: self.dof_count, got: coeffs.len() });
        }
        let rule = match self.mesh.dim() {
            1 => gauss_legendre(self.order() + 4),
            2 => collapsed_triangle_rule(6),
            d => return Err(Error::InvalidArgument(format!("l2_error not available in {d}-D"))),
        };
        let mut total = 0.0;
        for c in 0..self.mesh.num_cells() {
            let g = &self.geometry[c];
            let dofs = self.cell_dofs(c);
            for (xh, w) in rule.points.iter().zip(&rule.weights) {
                let psi = self.reference.eval(xh);
                let uh: f64 = dofs.iter().zip(&psi).map(|(d, p)| coeffs[*d] * p).sum();
                let mut x = g.jacobian.matvec(xh);
                x.iter_mut().zip(&g.offset).for_each(|(xi, o)| *xi += o);
                total += w * g.det_abs * (uh - f(&x)).powi(2);
            }
        }
        Ok(total.sqrt())
    }
}

/// Gauss rule on the reference triangle from an `n × n` tensor rule on the
/// square collapsed by `(s, t) ↦ (s, t (1 − s))`.
fn collapsed_triangle_rule(n: usize) -> Quadrature {
    let g = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (s, ws) in g.points.iter().zip(&g.weights) {
        for (t, wt) in g.points.iter().zip(&g.weights) {
            points.push(vec![s[0], t[0] * (1.0 - s[0])]);
            weights.push(ws * wt * (1.0 - s[0]));
        }
    }
    Quadrature { points, weights }
}

/// Local mass block `|det J_K| M̂` of one cell.
pub fn local_mass(space: &FunctionSpace, cell: usize) -> DenseMatrix {
    space.reference.mass_hat.scaled(space.geometry[cell].det_abs)
}

/// Local stiffness block `|det J_K| Σ_ab (J⁻¹J⁻ᵀ)_ab S^{ab}`.
pub fn local_stiffness(space: &FunctionSpace, cell: usize) -> Result<DenseMatrix> {
    let g = &space.geometry[cell];
    let dim = space.mesh.dim();
    let jinv = g
        .jacobian
        .inverse()
        .ok_or(Error::SingularJacobian { cell, det: 0.0 })?;
    let metric = jinv.matmul(&jinv.transpose());
    let p = space.reference.node_count;
    let mut k = DenseMatrix::zeros(p);
    for a in 0..dim {
        for b in 0..dim {
            let m = metric[(a, b)] * g.det_abs;
            if m == 0.0 {
                continue;
            }
            let part = &space.reference.stiff_hat_parts[a * dim + b];
            for i in 0..p {
                for j in 0..p {
                    k[(i, j)] += m * part[(i, j)];
                }
            }
        }
    }
    Ok(k)
}

fn scatter(space: &FunctionSpace, local: impl Fn(usize) -> Result<DenseMatrix>) -> Result<SparseMatrix> {
    let p = space.reference.node_count;
    let nc = space.mesh.num_cells();
    let mut triplets = Vec::with_capacity(nc * p * p);
    for c in 0..nc {
        let block = local(c)?;
        let dofs = space.cell_dofs(c);
        for i in 0..p {
            for j in 0..p {
                triplets.push((dofs[i], dofs[j], block[(i, j)]));
            }
        }
    }
    SparseMatrix::from_triplets(space.dof_count, triplets)
}

/// Mass matrix `M_ij = ∫ φ_i φ_j dx`.
pub fn assemble_mass(space: &FunctionSpace) -> SparseMatrix {
    scatter(space, |c| Ok(local_mass(space, c))).expect("dof indices are in range")
}

/// Stiffness matrix `K_ij = ∫ ∇φ_i · ∇φ_j dx`.
pub fn assemble_stiffness(space: &FunctionSpace) -> Result<SparseMatrix> {
    scatter(space, |c| local_stiffness(space, c))
}

/// Gram matrix of the inner product: mass for L², mass + stiffness for H¹.
pub fn assemble_gram(space: &FunctionSpace, ip: InnerProductSpec) -> Result<SparseMatrix> {
    match ip {
        InnerProductSpec::Euclidean => Err(Error::GramIsIdentity),
        InnerProductSpec::L2Mass => Ok(assemble_mass(space)),
        InnerProductSpec::H1Full => assemble_mass(space).add(&assemble_stiffness(space)?),
    }
}

/// CG iteration cap used by Riesz solves of size `d`.
pub(crate) fn riesz_iteration_cap(d: usize) -> usize {
    2 * d + 50
}

/// Riesz representer of a dual vector: solves `G x = dual` by conjugate
/// gradients to relative residual `tol`.
pub fn riesz_map(gram: &SparseMatrix, dual: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("riesz tolerance must be positive".into()));
    }
    if dual.len() != gram.dim() {
        return Err(Error::DimensionMismatch { expected: gram.dim(), got: dual.len() });
    }
    cg_solve_from(gram, dual, None, tol, riesz_iteration_cap(gram.dim()))
        .map(|s| s.x)
        .map_err(|e| Error::RieszSolveFailed(e.to_string()))
}

/// Nodal interpolant of a constant.
pub fn interpolate_constant(space: &FunctionSpace, value: f64) -> Vec<f64> {
    vec![value; space.dof_count]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::{build_graded_mesh, Grading};

    fn space(dim: usize, n: usize, order: usize) -> FunctionSpace {
        FunctionSpace::new(build_graded_mesh(dim, &vec![n; dim], &Grading::Uniform).unwrap(), order).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=7 {
            let q = gauss_legendre(n);
            for deg in 0..2 * n {
                let s: f64 = q.points.iter().zip(&q.weights).map(|(x, w)| w * x[0].powi(deg as i32)).sum();
                assert!((s - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn p1_interval_mass() {
        let r = reference_element(1, 1).unwrap();
        assert!((r.mass_hat[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.mass_hat[(0, 1)] - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.lambda_hat_min - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.lambda_hat_max - 0.5).abs() < 1e-15);
        assert!((r.lambda_ratio() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn mass_hat_sums_to_reference_volume() {
        for (dim, order) in [(1, 1), (1, 2), (1, 3), (1, 4), (1, 5), (2, 1), (3, 1)] {
            let r = reference_element(dim, order).unwrap();
            assert!((r.mass_hat.sum() - r.volume()).abs() < 1e-12, "{dim} {order}");
            assert!(r.lambda_hat_min > 0.0 && r.lambda_hat_min <= r.lambda_hat_max);
        }
    }

    #[test]
    fn p1_simplex_mass_closed_form() {
        let r2 = reference_element(2, 1).unwrap();
        assert!((r2.mass_hat[(0, 0)] - 1.0 / 12.0).abs() < 1e-15);
        assert!((r2.mass_hat[(0, 1)] - 1.0 / 24.0).abs() < 1e-15);
        assert!((r2.lambda_ratio() - 4.0).abs() < 1e-12);
        let r3 = reference_element(3, 1).unwrap();
        assert!((r3.mass_hat[(0, 0)] - 1.0 / 60.0).abs() < 1e-15);
        assert!((r3.mass_hat[(1, 2)] - 1.0 / 120.0).abs() < 1e-15);
        assert!((r3.lambda_ratio() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn unsupported_elements() {
        assert!(matches!(reference_element(2, 2), Err(Error::UnsupportedElement { .. })));
        assert!(matches!(reference_element(1, 6), Err(Error::UnsupportedElement { .. })));
        assert!(matches!(reference_element(4, 1), Err(Error::UnsupportedElement { .. })));
    }

    #[test]
    fn mass_on_small_meshes() {
        let single = FunctionSpace::new(
            crate::meshkit::Mesh::from_cells(1, vec![vec![0.0], vec![0.5]], vec![vec![0, 1]]).unwrap(),
            1,
        )
        .unwrap();
        let m = assemble_mass(&single).to_dense();
        assert!((m[0][0] - 0.5 / 3.0).abs() < 1e-15 && (m[0][1] - 0.5 / 6.0).abs() < 1e-15);

        let two = assemble_mass(&space(1, 2, 1)).to_dense();
        let expected = [
            [1.0 / 6.0, 1.0 / 12.0, 0.0],
            [1.0 / 12.0, 1.0 / 3.0, 1.0 / 12.0],
            [0.0, 1.0 / 12.0, 1.0 / 6.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((two[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_stencil_and_kernel() {
        let one = assemble_stiffness(&space(1, 1, 1)).unwrap().to_dense();
        let expected = [[1.0, -1.0], [-1.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((one[i][j] - expected[i][j]).abs() < 1e-14);
            }
        }
        let n = 8;
        let h = 1.0 / n as f64;
        let k = assemble_stiffness(&space(1, n, 1)).unwrap();
        assert!((k.get(3, 2) + 1.0 / h).abs() < 1e-12);
        assert!((k.get(3, 3) - 2.0 / h).abs() < 1e-12);
        assert!((k.get(3, 4) + 1.0 / h).abs() < 1e-12);
        for (dim, n, order) in [(1, 5, 3), (2, 4, 1), (3, 2, 1)] {
            let s = space(dim, n, order);
            let k = assemble_stiffness(&s).unwrap();
            let kc = k.mul(&interpolate_constant(&s, 1.0));
            assert!(kc.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn gram_variants() {
        let s = space(2, 3, 1);
        assert_eq!(assemble_gram(&s, InnerProductSpec::L2Mass).unwrap(), assemble_mass(&s));
        let h1 = assemble_gram(&s, InnerProductSpec::H1Full).unwrap();
        let m = assemble_mass(&s);
        let k = assemble_stiffness(&s).unwrap();
        for i in 0..s.dof_count() {
            for j in 0..s.dof_count() {
                assert!((h1.get(i, j) - m.get(i, j) - k.get(i, j)).abs() < 1e-15);
            }
        }
        assert!(matches!(assemble_gram(&s, InnerProductSpec::Euclidean), Err(Error::GramIsIdentity)));
    }

    #[test]
    fn riesz_map_mass_of_residual() {
        let s = space(2, 4, 1);
        let m = assemble_mass(&s);
        let u: Vec<f64> = (0..s.dof_count()).map(|i| (i as f64 * 0.7).cos()).collect();
        let r: Vec<f64> = u.iter().map(|v| 1.0 - v).collect();
        let dual: Vec<f64> = m.mul(&r).into_iter().map(|v| -v).collect();
        let x = riesz_map(&m, &dual, 1e-14).unwrap();
        for (xi, ri) in x.iter().zip(&r) {
            assert!((xi + ri).abs() < 1e-11);
        }
        assert_eq!(riesz_map(&m, &vec![0.0; s.dof_count()], 1e-14).unwrap(), vec![0.0; s.dof_count()]);
    }

    #[test]
    fn higher_order_dofs_are_shared_and_interpolate_constants() {
        let s = space(1, 3, 4);
        assert_eq!(s.dof_count(), 4 + 3 * 3);
        // neighbouring cells share their common vertex dof
        assert_eq!(s.cell_dofs(0)[4], s.cell_dofs(1)[0]);
        let m = assemble_mass(&s);
        let ones = interpolate_constant(&s, 1.0);
        assert!((m.bilinear(&ones, &ones) - 1.0).abs() < 1e-12);
        assert!(interpolate_constant(&s, 0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn l2_error_of_exact_interpolant_is_small() {
        let s = space(2, 8, 1);
        let u = s.interpolate(|x| x[0] + 2.0 * x[1]);
        assert!(s.l2_error(&u, |x| x[0] + 2.0 * x[1]).unwrap() < 1e-14);
    }
}
