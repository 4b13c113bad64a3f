//! P1 finite elements for the weighted operator Δ* = ∇·((1/(μ₀ r))∇·).
//!
//! Dirichlet data are imposed by replacing each boundary row of the Neumann
//! stiffness matrix by a unit row; the modified matrix is factorized once and
//! only right-hand sides change afterwards.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, PsiField};
use crate::sparse::{BandLu, CsrMatrix};
use crate::MU0;

/// Barycentric coordinates of the 3-point interior Gauss rule (degree 2).
pub const QUAD_BARY: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

/// Quadrature points and weights of every triangle.
#[derive(Clone, Debug)]
pub struct Quadrature {
    points: Vec<[Point; 3]>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(mesh: &Mesh) -> Self {
        let mut points = Vec::with_capacity(mesh.triangle_count());
        let mut weights = Vec::with_capacity(mesh.triangle_count());
        for t in 0..mesh.triangle_count() {
            let v = mesh.vertices(t);
            points.push(QUAD_BARY.map(|b| {
                Point::new(
                    b[0] * v[0].r + b[1] * v[1].r + b[2] * v[2].r,
                    b[0] * v[0].z + b[1] * v[1].z + b[2] * v[2].z,
                )
            }));
            weights.push(mesh.area(t) / 3.0);
        }
        Quadrature { points, weights }
    }

    pub fn points(&self, t: usize) -> &[Point; 3] {
        &self.points[t]
    }

    /// Weight shared by the three points of triangle `t`.
    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t]
    }

    pub fn triangle_count(&self) -> usize {
        self.weights.len()
    }

    /// Interpolated nodal field at the quadrature points of triangle `t`.
    pub fn interpolate(&self, mesh: &Mesh, t: usize, values: &[f64]) -> [f64; 3] {
        let tri = mesh.triangle(t);
        QUAD_BARY.map(|b| b[0] * values[tri[0]] + b[1] * values[tri[1]] + b[2] * values[tri[2]])
    }
}

/// Element matrix ∫_T (1/(μ₀ r)) ∇v_i·∇v_j with the 3-point rule for the weight.
pub fn element_stiffness(mesh: &Mesh, quad: &Quadrature, t: usize) -> [[f64; 3]; 3] {
    let g = mesh.hat_gradients(t);
    let w = quad.weight(t);
    let weight_integral: f64 = quad.points(t).iter().map(|p| w / (MU0 * p.r)).sum();
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = weight_integral * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

/// Load vector `y_i = ∫ f v_i` with the module quadrature.
pub fn load_vector(mesh: &Mesh, quad: &Quadrature, f: impl Fn(Point) -> f64) -> Vec<f64> {
    let mut y = vec![0.0; mesh.node_count()];
    for t in 0..mesh.triangle_count() {
        let tri = mesh.triangle(t);
        let w = quad.weight(t);
        for (q, p) in quad.points(t).iter().enumerate() {
            let fw = w * f(*p);
            for k in 0..3 {
                y[tri[k]] += fw * QUAD_BARY[q][k];
            }
        }
    }
    y
}

/// Stiffness matrix of the pure Neumann problem.
#[derive(Clone, Debug)]
pub struct NeumannStiffness {
    matrix: CsrMatrix,
}

/// Assembles `K_raw` triangle by triangle in index order.
pub fn assemble_stiffness(mesh: &Mesh) -> NeumannStiffness {
    let quad = Quadrature::new(mesh);
    let mut trip = Vec::with_capacity(9 * mesh.triangle_count());
    for t in 0..mesh.triangle_count() {
        let ke = element_stiffness(mesh, &quad, t);
        let tri = mesh.triangle(t);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], ke[i][j]));
            }
        }
    }
    let n = mesh.node_count();
    NeumannStiffness {
        matrix: CsrMatrix::from_triplets(n, n, &trip),
    }
}

impl NeumannStiffness {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Replaces boundary rows with unit rows and factorizes once.
    pub fn apply_dirichlet(self, mesh: &Mesh) -> Result<StiffnessSystem> {
        if self.matrix.rows() != mesh.node_count() {
            return Err(Error::Dimension(format!(
                "stiffness has {} rows, mesh has {} nodes",
                self.matrix.rows(),
                mesh.node_count()
            )));
        }
        let mut modified = self.matrix.clone();
        for &b in mesh.boundary_nodes() {
            modified.set_identity_row(b);
        }
        let modified = modified.pruned();
        let lu = BandLu::factor(&modified)?;
        Ok(StiffnessSystem {
            raw: self.matrix,
            modified,
            lu,
            boundary_rows: mesh.boundary_nodes().to_vec(),
            factorizations: 1,
        })
    }
}

/// Dirichlet-modified stiffness system with its retained factorization.
/// Immutable after construction; share it freely between solves.
#[derive(Clone, Debug)]
pub struct StiffnessSystem {
    raw: CsrMatrix,
    modified: CsrMatrix,
    lu: BandLu,
    boundary_rows: Vec<usize>,
    factorizations: usize,
}

impl StiffnessSystem {
    /// Assembles, applies boundary rows and factorizes.
    pub fn new(mesh: &Mesh) -> Result<Self> {
        assemble_stiffness(mesh).apply_dirichlet(mesh)
    }

    pub fn raw(&self) -> &CsrMatrix {
        &self.raw
    }

    pub fn modified(&self) -> &CsrMatrix {
        &self.modified
    }

    pub fn dim(&self) -> usize {
        self.raw.rows()
    }

    /// Row index of each boundary-loop position.
    pub fn boundary_rows(&self) -> &[usize] {
        &self.boundary_rows
    }

    /// Number of LU factorizations performed for this system.
    pub fn factorization_count(&self) -> usize {
        self.factorizations
    }

    /// The vector `H`: zero except `h` on the Dirichlet rows.
    pub fn dirichlet_vector(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.boundary_rows.len() {
            return Err(Error::Dimension(format!(
                "{} boundary values for {} boundary nodes",
                h.len(),
                self.boundary_rows.len()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        for (&row, &v) in self.boundary_rows.iter().zip(h) {
            out[row] = v;
        }
        Ok(out)
    }

    /// The right-hand side `y + H`: `y` with its Dirichlet entries replaced by `h`.
    pub fn rhs(&self, y: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "source vector has {} entries, system has {} rows",
                y.len(),
                self.dim()
            )));
        }
        let mut rhs = self.dirichlet_vector(h)?;
        let mut is_dirichlet = vec![false; self.dim()];
        for &row in &self.boundary_rows {
            is_dirichlet[row] = true;
        }
        for (i, v) in y.iter().enumerate() {
            if !is_dirichlet[i] {
                rhs[i] = *v;
            }
        }
        Ok(rhs)
    }

    /// Solves `K Ψ = y + H` with the stored factorization.
    pub fn solve_direct(&self, y: &[f64], h: &[f64]) -> Result<PsiField> {
        let rhs = self.rhs(y, h)?;
        PsiField::new(self.lu.solve(&rhs))
    }

    /// `K⁻¹ b` for an arbitrary right-hand side.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.lu.solve(b)
    }

    /// `K⁻ᵀ b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        self.lu.solve_transpose(b)
    }
}
