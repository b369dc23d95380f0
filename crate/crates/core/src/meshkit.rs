//! Structured affine meshes of the unit interval, square and cube.
//!
//! Meshes are tensor grids with independent breakpoints per axis. Squares are
//! split into two triangles along the (0,0)-(1,1) diagonal and cubes into the
//! six Kuhn tetrahedra around the main diagonal, so every vertex sees the same
//! local pattern and the cell Jacobians are scaled permutation matrices.

use std::fmt::Write as _;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Tolerance used when validating spacings and tilings.
const TILING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Interval,
    Simplex,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Interval => "interval",
            CellKind::Simplex => "simplex",
        }
    }
}

/// Spacing profile along axis 0.
#[derive(Debug, Clone, PartialEq)]
pub enum Grading {
    Uniform,
    /// Cell lengths along axis 0, left to right; must sum to one.
    Spacings(Vec<f64>),
}

/// An affine interval/triangle/tetrahedron mesh of `[0,1]^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    cell_kind: CellKind,
    /// Per-axis breakpoints for structured meshes; `None` for meshes built
    /// from explicit cell lists.
    axes: Option<Vec<Vec<f64>>>,
}

/// Affine map `x = J x̂ + offset` from the reference cell onto a mesh cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeometry {
    pub jacobian: DenseMatrix,
    pub offset: Vec<f64>,
    /// Singular values of the jacobian, descending.
    pub scalings: Vec<f64>,
    pub det_abs: f64,
}

/// Non-uniformity measures entering the condition-number bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshMetrics {
    /// `max_K h_i^K / min_K h_i^K` for each singular-value rank `i`.
    pub h_ratio_directional: Vec<f64>,
    /// `max_K ∏h_i^K / min_K ∏h_i^K`.
    pub h_ratio_product: f64,
    /// Largest scaling over all cells and directions divided by the smallest.
    pub h_ratio_scalar: f64,
    /// Maximum number of cells incident to a vertex.
    pub p_max: usize,
}

/// Vertices of the reference cell: the unit interval, the unit right
/// triangle, and in 3-D the path simplex `1 ≥ x ≥ y ≥ z ≥ 0` (one Kuhn
/// tetrahedron of the unit cube).
pub fn reference_vertices(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![0.0], vec![1.0]],
        2 => vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        3 => vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
        ],
        _ => panic!("reference cell only defined for dim 1..=3"),
    }
}

/// Volume of the reference cell.
pub fn reference_volume(dim: usize) -> f64 {
    match dim {
        1 => 1.0,
        2 => 0.5,
        3 => 1.0 / 6.0,
        _ => panic!("reference cell only defined for dim 1..=3"),
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dim must be 1, 2 or 3, got {dim}")))
    }
}

fn breakpoints_from_spacings(spacings: &[f64]) -> Result<Vec<f64>> {
    if spacings.is_empty() {
        return Err(Error::InvalidGrading("no spacings given".into()));
    }
    if let Some(s) = spacings.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidGrading(format!("non-positive spacing {s}")));
    }
    let total: f64 = spacings.iter().sum();
    if (total - 1.0).abs() > TILING_TOL {
        return Err(Error::InvalidGrading(format!("spacings sum to {total}, expected 1")));
    }
    let mut pts = Vec::with_capacity(spacings.len() + 1);
    let mut x = 0.0;
    pts.push(0.0);
    for s in &spacings[..spacings.len() - 1] {
        x += s;
        pts.push(x);
    }
    pts.push(1.0);
    Ok(pts)
}

fn uniform_breakpoints(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Builds a structured mesh of `[0,1]^dim` with `cells_per_axis[a]` intervals
/// along each axis; axis 0 follows `grading`, the other axes are uniform.
pub fn build_graded_mesh(dim: usize, cells_per_axis: &[usize], grading: &Grading) -> Result<Mesh> {
    check_dim(dim)?;
    if cells_per_axis.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: cells_per_axis.len() });
    }
    if cells_per_axis.contains(&0) {
        return Err(Error::InvalidArgument("cells_per_axis entries must be >= 1".into()));
    }
    let mut axes: Vec<Vec<f64>> = cells_per_axis.iter().map(|&n| uniform_breakpoints(n)).collect();
    if let Grading::Spacings(s) = grading {
        if s.len() != cells_per_axis[0] {
            return Err(Error::InvalidGrading(format!(
                "{} spacings given for {} cells along axis 0",
                s.len(),
                cells_per_axis[0]
            )));
        }
        axes[0] = breakpoints_from_spacings(s)?;
    }
    Mesh::from_axes(axes)
}

/// Bisects, along `axis`, every cell whose extent along that axis has its
/// midpoint in `[lo, hi)`.
pub fn refine_subregion(mesh: &Mesh, axis: usize, lo: f64, hi: f64) -> Result<Mesh> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 <= lo < hi <= 1, got [{lo}, {hi})")));
    }
    let axes = mesh.structured_axes()?;
    if axis >= mesh.dim {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range for dim {}", mesh.dim)));
    }
    let old = &axes[axis];
    let mut refined = Vec::with_capacity(2 * old.len());
    let mut selected = 0;
    refined.push(old[0]);
    for w in old.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if lo <= mid && mid < hi {
            refined.push(mid);
            selected += 1;
        }
        refined.push(w[1]);
    }
    if selected == 0 {
        return Err(Error::NoCellsSelected { axis, lo, hi });
    }
    let mut new_axes = axes.to_vec();
    new_axes[axis] = refined;
    Mesh::from_axes(new_axes)
}

/// Halves every axis spacing.
pub fn uniform_refine(mesh: &Mesh) -> Result<Mesh> {
    let axes = mesh.structured_axes()?;
    let new_axes = axes
        .iter()
        .map(|pts| {
            let mut out = Vec::with_capacity(2 * pts.len());
            out.push(pts[0]);
            for w in pts.windows(2) {
                out.push(0.5 * (w[0] + w[1]));
                out.push(w[1]);
            }
            out
        })
        .collect();
    Mesh::from_axes(new_axes)
}

/// Affine map of `cell`, with its singular values.
pub fn element_geometry(mesh: &Mesh, cell: usize) -> Result<ElementGeometry> {
    if cell >= mesh.num_cells() {
        return Err(Error::InvalidArgument(format!(
            "cell {cell} out of range ({} cells)",
            mesh.num_cells()
        )));
    }
    let dim = mesh.dim;
    let verts = mesh.cell(cell);
    let origin = mesh.vertex(verts[0]);
    let mut edges = DenseMatrix::zeros(dim);
    for k in 0..dim {
        let v = mesh.vertex(verts[k + 1]);
        for a in 0..dim {
            edges[(a, k)] = v[a] - origin[a];
        }
    }
    let refv = reference_vertices(dim);
    let mut ref_edges = DenseMatrix::zeros(dim);
    for k in 0..dim {
        for a in 0..dim {
            ref_edges[(a, k)] = refv[k + 1][a] - refv[0][a];
        }
    }
    let jacobian = edges.matmul(&ref_edges.inverse().expect("reference cell is non-degenerate"));
    let det = jacobian.determinant();
    let scale = (0..dim)
        .map(|k| (0..dim).map(|a| edges[(a, k)].powi(2)).sum::<f64>().sqrt())
        .product::<f64>();
    if !(det.abs() > 1e-13 * scale) {
        return Err(Error::SingularJacobian { cell, det });
    }
    let scalings = jacobian.singular_values();
    // offset = origin - J r0
    let jr0 = jacobian.matvec(&refv[0]);
    let offset = (0..dim).map(|a| origin[a] - jr0[a]).collect();
    Ok(ElementGeometry { jacobian, offset, scalings, det_abs: det.abs() })
}

/// Directional, product and scalar size ratios plus `p_max`.
pub fn mesh_metrics(mesh: &Mesh) -> Result<MeshMetrics> {
    let dim = mesh.dim;
    let mut dir_max = vec![0.0f64; dim];
    let mut dir_min = vec![f64::INFINITY; dim];
    let (mut prod_max, mut prod_min) = (0.0f64, f64::INFINITY);
    for c in 0..mesh.num_cells() {
        let g = element_geometry(mesh, c)?;
        for (i, h) in g.scalings.iter().enumerate() {
            dir_max[i] = dir_max[i].max(*h);
            dir_min[i] = dir_min[i].min(*h);
        }
        let p: f64 = g.scalings.iter().product();
        prod_max = prod_max.max(p);
        prod_min = prod_min.min(p);
    }
    let all_max = dir_max.iter().cloned().fold(0.0, f64::max);
    let all_min = dir_min.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut incidence = vec![0usize; mesh.num_vertices()];
    for &v in &mesh.cells {
        incidence[v] += 1;
    }
    Ok(MeshMetrics {
        h_ratio_directional: dir_max.iter().zip(&dir_min).map(|(a, b)| a / b).collect(),
        h_ratio_product: prod_max / prod_min,
        h_ratio_scalar: all_max / all_min,
        p_max: incidence.into_iter().max().unwrap_or(0),
    })
}

impl MeshMetrics {
    /// `∏_i h_ratio_directional[i]`.
    pub fn directional_product(&self) -> f64 {
        self.h_ratio_directional.iter().product()
    }
}

impl Mesh {
    /// Tensor mesh from per-axis breakpoints (each strictly increasing from 0 to 1).
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Mesh> {
        let dim = axes.len();
        check_dim(dim)?;
        for pts in &axes {
            if pts.len() < 2 || pts[0] != 0.0 || (pts[pts.len() - 1] - 1.0).abs() > TILING_TOL {
                return Err(Error::InvalidGrading("axis breakpoints must run from 0 to 1".into()));
            }
            if pts.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidGrading("axis breakpoints must increase".into()));
            }
        }
        let n: Vec<usize> = axes.iter().map(|p| p.len() - 1).collect();
        let stride: Vec<usize> = {
            let mut s = vec![1usize; dim];
            for a in 1..dim {
                s[a] = s[a - 1] * (n[a - 1] + 1);
            }
            s
        };
        let nverts: usize = n.iter().map(|k| k + 1).product();
        let mut coords = Vec::with_capacity(nverts * dim);
        for v in 0..nverts {
            for a in 0..dim {
                let idx = (v / stride[a]) % (n[a] + 1);
                coords.push(axes[a][idx]);
            }
        }
        let mut cells = Vec::new();
        match dim {
            1 => {
                for i in 0..n[0] {
                    cells.extend_from_slice(&[i, i + 1]);
                }
            }
            2 => {
                for j in 0..n[1] {
                    for i in 0..n[0] {
                        let v00 = i + stride[1] * j;
                        let v10 = v00 + 1;
                        let v01 = v00 + stride[1];
                        let v11 = v01 + 1;
                        // right-angle vertex first, positive orientation
                        cells.extend_from_slice(&[v10, v11, v00]);
                        cells.extend_from_slice(&[v01, v00, v11]);
                    }
                }
            }
            3 => {
                const PERMS: [[usize; 3]; 6] =
                    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
                for k in 0..n[2] {
                    for j in 0..n[1] {
                        for i in 0..n[0] {
                            let base = i + stride[1] * j + stride[2] * k;
                            for perm in PERMS {
                                let mut v = base;
                                cells.push(v);
                                for a in perm {
                                    v += stride[a];
                                    cells.push(v);
                                }
                            }
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        let kind = if dim == 1 { CellKind::Interval } else { CellKind::Simplex };
        Ok(Mesh { dim, coords, cells, cell_kind: kind, axes: Some(axes) })
    }

    /// Mesh from explicit vertex coordinates and cells, in the vertex order
    /// expected by the reference cell. Not refinable.
    pub fn from_cells(dim: usize, vertices: Vec<Vec<f64>>, cells: Vec<Vec<usize>>) -> Result<Mesh> {
        check_dim(dim)?;
        let mut coords = Vec::with_capacity(vertices.len() * dim);
        for v in &vertices {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            coords.extend_from_slice(v);
        }
        let mut flat = Vec::with_capacity(cells.len() * (dim + 1));
        for c in &cells {
            if c.len() != dim + 1 {
                return Err(Error::DimensionMismatch { expected: dim + 1, got: c.len() });
            }
            if let Some(&bad) = c.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!("vertex index {bad} out of range")));
            }
            flat.extend_from_slice(c);
        }
        let kind = if dim == 1 { CellKind::Interval } else { CellKind::Simplex };
        let mesh = Mesh { dim, coords, cells: flat, cell_kind: kind, axes: None };
        for c in 0..mesh.num_cells() {
            element_geometry(&mesh, c)?;
        }
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_kind(&self) -> CellKind {
        self.cell_kind
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[c * k..(c + 1) * k]
    }

    /// Breakpoints per axis, for structured meshes.
    pub fn axes(&self) -> Option<&[Vec<f64>]> {
        self.axes.as_deref()
    }

    fn structured_axes(&self) -> Result<&[Vec<f64>]> {
        self.axes()
            .ok_or_else(|| Error::InvalidArgument("refinement needs a structured mesh".into()))
    }

    /// `max / min` of the interval lengths along one axis of a structured mesh.
    pub fn axis_spacing_ratio(&self, axis: usize) -> Option<f64> {
        let pts = self.axes.as_ref()?.get(axis)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for w in pts.windows(2) {
            lo = lo.min(w[1] - w[0]);
            hi = hi.max(w[1] - w[0]);
        }
        Some(hi / lo)
    }

    /// Vertices on the boundary of the unit cube.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        (0..self.num_vertices())
            .map(|v| self.vertex(v).iter().any(|&x| x.abs() < 1e-14 || (x - 1.0).abs() < 1e-14))
            .collect()
    }

    /// Σ_K |det J_K| vol(K̂).
    pub fn total_measure(&self) -> Result<f64> {
        let vol = reference_volume(self.dim);
        let mut total = 0.0;
        for c in 0..self.num_cells() {
            total += element_geometry(self, c)?.det_abs * vol;
        }
        Ok(total)
    }

    /// Plain-text dump: header `dim ncells nverts cell_kind`, then one line per
    /// vertex and one per cell.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {} {}", self.dim, self.num_cells(), self.num_vertices(), self.cell_kind.name())
            .unwrap();
        for v in 0..self.num_vertices() {
            let line: Vec<String> = self.vertex(v).iter().map(|x| format!("{x}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        for c in 0..self.num_cells() {
            let line: Vec<String> = self.cell(c).iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }
}
