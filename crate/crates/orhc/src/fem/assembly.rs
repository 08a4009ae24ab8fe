use std::sync::Arc;

use super::coeffs::CoefficientField;
use super::mesh::{BoundaryCondition, Mesh, Rect};
use crate::linalg::{CsrMatrix, SparsityPattern};
use crate::Result;

/// Per-triangle geometry used by every assembly loop: area, centroid and
/// the constant P1 shape-function gradients.
#[derive(Debug, Clone)]
struct TriGeometry {
    area: f64,
    centroid: [f64; 2],
    grad: [[f64; 2]; 3],
}

fn tri_geometry(p: [[f64; 2]; 3]) -> TriGeometry {
    let area = 0.5
        * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    let inv2a = 1.0 / (2.0 * area);
    // grad phi_i = (y_{i+1} - y_{i+2}, x_{i+2} - x_{i+1}) / (2 area)
    let mut grad = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        grad[i] = [
            (p[j][1] - p[k][1]) * inv2a,
            (p[k][0] - p[j][0]) * inv2a,
        ];
    }
    TriGeometry {
        area,
        centroid: [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ],
        grad,
    }
}

/// Time-independent operators of the dynamics on the chosen degrees of
/// freedom: mass, the diffusion-plus-identity form and the pure
/// Laplacian stiffness.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub bc: BoundaryCondition,
    pub nu: f64,
    /// L^2 inner products of hat functions.
    pub mass: CsrMatrix,
    /// Weak form of `-nu Laplace + 1`: `nu K + M`.
    pub stiffness_a: CsrMatrix,
    /// Pure Laplacian stiffness `K` (no `nu`, no shift).
    pub laplacian: CsrMatrix,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<usize>,
}

impl OperatorSet {
    pub fn n_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, d: usize) -> usize {
        self.vertex_of_dof[d]
    }

    /// Restrict a vertex-indexed vector to degrees of freedom.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.vertex_of_dof.iter().map(|&v| full[v]).collect()
    }

    /// Expand a dof vector back to all vertices (zero on eliminated
    /// boundary vertices).
    pub fn prolong(&self, dofs: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.dof_of_vertex.len()];
        for (d, &v) in self.vertex_of_dof.iter().enumerate() {
            full[v] = dofs[d];
        }
        full
    }

    /// Mass norm sqrt(x^T M x).
    pub fn mass_norm(&self, x: &[f64]) -> f64 {
        self.mass.quadratic_form(x, x).max(0.0).sqrt()
    }

    /// Mass inner product x^T M y.
    pub fn mass_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mass.quadratic_form(x, y)
    }

    /// Nodal interpolation of a function, restricted to dofs.
    pub fn interpolate(&self, mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.vertex_of_dof
            .iter()
            .map(|&v| f(mesh.vertices()[v]))
            .collect()
    }
}

/// Exact P1 assembly of the time-independent operators.
pub fn assemble_static(mesh: &Mesh, nu: f64, bc: BoundaryCondition) -> Result<OperatorSet> {
    assert!(nu > 0.0, "diffusion coefficient must be positive");
    let n_vert = mesh.n_vertices();
    let mut dof_of_vertex: Vec<Option<usize>> = vec![None; n_vert];
    let mut vertex_of_dof = Vec::new();
    for v in 0..n_vert {
        let keep = match bc {
            BoundaryCondition::Neumann => true,
            BoundaryCondition::Dirichlet => !mesh.is_boundary_vertex(v),
        };
        if keep {
            dof_of_vertex[v] = Some(vertex_of_dof.len());
            vertex_of_dof.push(v);
        }
    }

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(9 * mesh.n_triangles());
    for tri in mesh.triangles() {
        for &a in tri {
            for &b in tri {
                if let (Some(i), Some(j)) = (dof_of_vertex[a], dof_of_vertex[b]) {
                    pairs.push((i, j));
                }
            }
        }
    }
    let n = vertex_of_dof.len();
    let pattern = SparsityPattern::from_pairs(n, n, &pairs);
    let mut mass = CsrMatrix::zeros(pattern.clone());
    let mut laplacian = CsrMatrix::zeros(pattern.clone());

    for t in 0..mesh.n_triangles() {
        let geo = tri_geometry(mesh.triangle_vertices(t));
        let a = geo.area;
        let tri = mesh.triangles()[t];
        for li in 0..3 {
            let Some(i) = dof_of_vertex[tri[li]] else {
                continue;
            };
            for lj in 0..3 {
                let Some(j) = dof_of_vertex[tri[lj]] else {
                    continue;
                };
                let p = pattern.position(i, j).expect("assembled entry in pattern");
                let m_loc = if li == lj { a / 6.0 } else { a / 12.0 };
                let k_loc = a
                    * (geo.grad[li][0] * geo.grad[lj][0] + geo.grad[li][1] * geo.grad[lj][1]);
                mass.values_mut()[p] += m_loc;
                laplacian.values_mut()[p] += k_loc;
            }
        }
    }

    let mut stiffness_a = laplacian.scaled(nu);
    stiffness_a.add_scaled(1.0, &mass);

    Ok(OperatorSet {
        bc,
        nu,
        mass,
        stiffness_a,
        laplacian,
        dof_of_vertex,
        vertex_of_dof,
    })
}

/// Exact load vector of an aligned rectangle: component `i` equals the
/// integral of hat function `phi_i` over the rectangle. The rectangle is
/// a union of whole triangles, so each inner triangle contributes
/// `area/3` to each of its vertices. Indices are vertex-based.
pub fn indicator_load(mesh: &Mesh, rect: &Rect) -> Result<Vec<f64>> {
    mesh.check_rect_alignment(rect)?;
    let mut load = vec![0.0; mesh.n_vertices()];
    for t in mesh.triangles_in_rect(rect) {
        let contrib = mesh.triangle_area(t) / 3.0;
        for &v in &mesh.triangles()[t] {
            load[v] += contrib;
        }
    }
    Ok(load)
}

/// Snapshot of the reaction-convection form `(a - 1) 1 + b . grad` at a
/// fixed time.
pub struct ReactionConvectionAssembly {
    pub assembled_at: f64,
    pub matrix: CsrMatrix,
}

/// Reusable assembler for the time-dependent reaction-convection matrix
/// under the one-point centroid quadrature rule: coefficients are frozen
/// at each triangle centroid and the hat-function products are
/// integrated exactly against those constants.
pub struct RcAssembler<'m> {
    pattern: Arc<SparsityPattern>,
    tris: Vec<TriAssembly>,
    coeffs: &'m dyn CoefficientField,
}

struct TriAssembly {
    geo: TriGeometry,
    /// Flat scatter positions for the 3x3 local block; `u32::MAX` marks
    /// eliminated (boundary) pairs.
    scatter: [u32; 9],
}

impl<'m> RcAssembler<'m> {
    pub fn new(mesh: &Mesh, ops: &OperatorSet, coeffs: &'m dyn CoefficientField) -> Self {
        let pattern = ops.mass.pattern().clone();
        let mut tris = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let geo = tri_geometry(mesh.triangle_vertices(t));
            let tri = mesh.triangles()[t];
            let mut scatter = [u32::MAX; 9];
            for li in 0..3 {
                for lj in 0..3 {
                    if let (Some(i), Some(j)) =
                        (ops.dof_of_vertex(tri[li]), ops.dof_of_vertex(tri[lj]))
                    {
                        scatter[3 * li + lj] =
                            pattern.position(i, j).expect("pattern covers mesh") as u32;
                    }
                }
            }
            tris.push(TriAssembly { geo, scatter });
        }
        Self {
            pattern,
            tris,
            coeffs,
        }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// Assemble the matrix values at time `t` into `values`
    /// (length = pattern nnz).
    pub fn assemble_into(&self, t: f64, values: &mut [f64]) {
        debug_assert_eq!(values.len(), self.pattern.nnz());
        values.fill(0.0);
        for tri in &self.tris {
            let (a, b) = self.coeffs.eval(tri.geo.centroid, t);
            let r = a - 1.0;
            let area = tri.geo.area;
            let m_off = r * area / 12.0;
            let m_diag = r * area / 6.0;
            // (b . grad phi_j) * area/3 per row
            let conv = [
                (b[0] * tri.geo.grad[0][0] + b[1] * tri.geo.grad[0][1]) * area / 3.0,
                (b[0] * tri.geo.grad[1][0] + b[1] * tri.geo.grad[1][1]) * area / 3.0,
                (b[0] * tri.geo.grad[2][0] + b[1] * tri.geo.grad[2][1]) * area / 3.0,
            ];
            for li in 0..3 {
                for lj in 0..3 {
                    let p = tri.scatter[3 * li + lj];
                    if p != u32::MAX {
                        let m = if li == lj { m_diag } else { m_off };
                        values[p as usize] += m + conv[lj];
                    }
                }
            }
        }
    }

    pub fn assemble(&self, t: f64) -> CsrMatrix {
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        self.assemble_into(t, m.values_mut());
        m
    }
}

/// One-shot assembly of the reaction-convection matrix at time `t`.
pub fn assemble_reaction_convection(
    mesh: &Mesh,
    ops: &OperatorSet,
    coeffs: &dyn CoefficientField,
    t: f64,
) -> ReactionConvectionAssembly {
    assert!(t >= 0.0, "coefficients are defined for t >= 0");
    let asm = RcAssembler::new(mesh, ops, coeffs);
    ReactionConvectionAssembly {
        assembled_at: t,
        matrix: asm.assemble(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::coeffs::{ConstantCoefficients, OscillatingCoefficients};
    use crate::linalg::SplitMix64;

    fn mesh32() -> Mesh {
        Mesh::build(32, 0).unwrap()
    }

    #[test]
    fn mass_total_is_domain_area() {
        let mesh = mesh32();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        // 1^T M 1 = |Omega| = 1
        assert!((ops.mass.total_sum() - 1.0).abs() < 1e-12);
        // row sums are integrals of hat functions, all positive
        assert!(ops.mass.row_sums().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn matrices_are_symmetric() {
        let mesh = Mesh::build(8, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        assert!(ops.mass.symmetry_error() <= 1e-14);
        assert!(ops.stiffness_a.symmetry_error() <= 1e-14);
        assert!(ops.laplacian.symmetry_error() <= 1e-14);
    }

    #[test]
    fn stiffness_a_positive_definite_neumann() {
        // x^T (nu K + M) x >= x^T M x > 0; spot-check with random vectors.
        let mesh = Mesh::build(8, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let mut rng = SplitMix64::new(4);
        for _ in 0..20 {
            let mut x = vec![0.0; ops.n_dofs()];
            rng.fill_symmetric(&mut x);
            let qa = ops.stiffness_a.quadratic_form(&x, &x);
            let qm = ops.mass.quadratic_form(&x, &x);
            assert!(qa >= qm - 1e-13 * qm.abs());
            assert!(qm > 0.0);
        }
    }

    #[test]
    fn constant_function_in_stiffness_kernel() {
        // K * 1 = 0 for the pure Laplacian under Neumann.
        let mesh = Mesh::build(16, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let ones = vec![1.0; ops.n_dofs()];
        let mut y = vec![0.0; ops.n_dofs()];
        ops.laplacian.matvec(&ones, &mut y);
        for v in y {
            assert!(v.abs() < 1e-13);
        }
    }

    #[test]
    fn dirichlet_eliminates_boundary() {
        let mesh = Mesh::build(8, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Dirichlet).unwrap();
        assert_eq!(ops.n_dofs(), 7 * 7);
        // prolong puts zeros on the boundary
        let x = vec![1.0; ops.n_dofs()];
        let full = ops.prolong(&x);
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary_vertex(v) {
                assert_eq!(full[v], 0.0);
            } else {
                assert_eq!(full[v], 1.0);
            }
        }
    }

    #[test]
    fn rc_zero_when_a_one_b_zero() {
        let mesh = Mesh::build(8, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let coeffs = ConstantCoefficients {
            a: 1.0,
            b: [0.0, 0.0],
        };
        let rc = assemble_reaction_convection(&mesh, &ops, &coeffs, 0.0);
        assert!(rc.matrix.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rc_reduces_to_mass_for_constant_reaction() {
        // a = 2, b = 0: exact for P1 since a - 1 is constant.
        let mesh = Mesh::build(8, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let coeffs = ConstantCoefficients {
            a: 2.0,
            b: [0.0, 0.0],
        };
        let rc = assemble_reaction_convection(&mesh, &ops, &coeffs, 3.7);
        for (v, m) in rc.matrix.values().iter().zip(ops.mass.values()) {
            assert!((v - m).abs() <= 1e-12);
        }
    }

    #[test]
    fn rc_deterministic_for_fixed_time() {
        let mesh = mesh32();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let coeffs = OscillatingCoefficients;
        let asm = RcAssembler::new(&mesh, &ops, &coeffs);
        let a = asm.assemble(0.33);
        let b = asm.assemble(0.33);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn convection_skew_on_dirichlet_interior() {
        // For constant b and eliminated boundary, x^T C x vanishes up to
        // roundoff: C + C^T only carries boundary terms.
        let mesh = Mesh::build(16, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Dirichlet).unwrap();
        let coeffs = ConstantCoefficients {
            a: 1.0,
            b: [0.7, -1.3],
        };
        let rc = assemble_reaction_convection(&mesh, &ops, &coeffs, 0.0);
        let mut rng = SplitMix64::new(21);
        for _ in 0..10 {
            let mut x = vec![0.0; ops.n_dofs()];
            rng.fill_symmetric(&mut x);
            let q = rc.matrix.quadratic_form(&x, &x);
            let scale: f64 = x.iter().map(|v| v * v).sum();
            assert!(q.abs() <= 1e-13 * scale.max(1.0), "skewness violated: {q}");
        }
    }

    #[test]
    fn indicator_load_whole_domain_is_mass_row_sums() {
        let mesh = Mesh::build(8, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let rect = Rect {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        };
        let load = indicator_load(&mesh, &rect).unwrap();
        let sums = ops.mass.row_sums();
        for (l, s) in load.iter().zip(&sums) {
            assert!((l - s).abs() < 1e-14);
        }
    }

    #[test]
    fn indicator_load_sums_to_rect_area() {
        let mesh = mesh32();
        let rect = Rect {
            x0: 1.0 / 16.0,
            x1: 1.0 / 16.0 + 1.0 / 8.0,
            y0: 1.0 / 16.0,
            y1: 1.0 / 16.0 + 1.0 / 8.0,
        };
        let load = indicator_load(&mesh, &rect).unwrap();
        let total: f64 = load.iter().sum();
        assert!((total - 0.015625).abs() < 1e-14);
    }

    #[test]
    fn indicator_load_rejects_misaligned_rect() {
        let mesh = Mesh::build(8, 0).unwrap();
        let rect = Rect {
            x0: 0.01,
            x1: 0.5,
            y0: 0.0,
            y1: 0.5,
        };
        assert!(indicator_load(&mesh, &rect).is_err());
    }

    /// High-order (degree-5, 7-point Gauss) quadrature of the load of
    /// `(a(.,0) - 1)` against hat functions; the centroid-rule row sums
    /// must converge to it at second order in h.
    fn reaction_load_high_order(mesh: &Mesh, coeffs: &dyn CoefficientField, t: f64) -> Vec<f64> {
        // 7-point rule on the reference triangle (barycentric, degree 5).
        const W: [f64; 7] = [
            0.225,
            0.132394152788506,
            0.132394152788506,
            0.132394152788506,
            0.125939180544827,
            0.125939180544827,
            0.125939180544827,
        ];
        const A1: f64 = 0.059715871789770;
        const B1: f64 = 0.470142064105115;
        const A2: f64 = 0.797426985353087;
        const B2: f64 = 0.101286507323456;
        const BARY: [[f64; 3]; 7] = [
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [A1, B1, B1],
            [B1, A1, B1],
            [B1, B1, A1],
            [A2, B2, B2],
            [B2, A2, B2],
            [B2, B2, A2],
        ];
        let mut load = vec![0.0; mesh.n_vertices()];
        for t_idx in 0..mesh.n_triangles() {
            let p = mesh.triangle_vertices(t_idx);
            let area = mesh.triangle_area(t_idx);
            let tri = mesh.triangles()[t_idx];
            for (w, bary) in W.iter().zip(&BARY) {
                let x = [
                    bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                    bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
                ];
                let (a, _) = coeffs.eval(x, t);
                for li in 0..3 {
                    // bary[li] is the hat-function value at the point
                    load[tri[li]] += w * area * (a - 1.0) * bary[li];
                }
            }
        }
        load
    }

    #[test]
    fn centroid_rule_row_sums_converge_second_order() {
        let coeffs = OscillatingCoefficients;
        let mut errs = Vec::new();
        for n_div in [8usize, 16] {
            let mesh = Mesh::build(n_div, 0).unwrap();
            let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
            let rc = assemble_reaction_convection(&mesh, &ops, &coeffs, 0.0);
            let ones = vec![1.0; ops.n_dofs()];
            let mut row_sums = vec![0.0; ops.n_dofs()];
            rc.matrix.matvec(&ones, &mut row_sums);
            let oracle = reaction_load_high_order(&mesh, &coeffs, 0.0);
            // L1 error against the oracle (Neumann: dof == vertex)
            let err: f64 = row_sums
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .sum();
            errs.push(err);
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (2.5..8.0).contains(&ratio),
            "expected ~4x error reduction per refinement, got ratio {ratio} ({errs:?})"
        );
    }
}
