use crate::error::OrhcError;
use crate::Result;

/// Boundary condition imposed through the variational form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// Natural boundary condition; all vertices carry degrees of freedom.
    Neumann,
    /// Homogeneous Dirichlet; boundary rows/columns are eliminated.
    Dirichlet,
}

/// Closed axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let dx = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let dy = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        dx * dy
    }
}

/// Structured triangulation of the unit square. Each of the
/// `n_div x n_div` small squares is split along its lower-left to
/// upper-right diagonal, giving `2 n_div^2` triangles with positive
/// orientation. Refinement level `r` rebuilds with `n_div(0) * 2^r`
/// subdivisions, which coincides with regular quadrisection of the
/// level-0 mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    base_n_div: usize,
    refinement_level: usize,
    n_div: usize,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
}

impl Mesh {
    /// Build the level-`refinement_level` mesh over a base subdivision
    /// count `n_div`. `n_div` must be at least 4 and divisible by 8 so
    /// that the chessboard actuator/sensor grid lines up with mesh lines.
    pub fn build(n_div: usize, refinement_level: usize) -> Result<Mesh> {
        if n_div < 4 || n_div % 8 != 0 {
            return Err(OrhcError::Geometry(format!(
                "n_div = {n_div} must be >= 4 and divisible by 8 to align with the actuator/sensor grid"
            )));
        }
        let eff = n_div << refinement_level;
        let n_vert = (eff + 1) * (eff + 1);
        let h = 1.0 / eff as f64;
        let mut vertices = Vec::with_capacity(n_vert);
        let mut boundary_vertex = Vec::with_capacity(n_vert);
        for j in 0..=eff {
            for i in 0..=eff {
                vertices.push([i as f64 * h, j as f64 * h]);
                boundary_vertex.push(i == 0 || j == 0 || i == eff || j == eff);
            }
        }
        let vid = |i: usize, j: usize| j * (eff + 1) + i;
        let mut triangles = Vec::with_capacity(2 * eff * eff);
        for j in 0..eff {
            for i in 0..eff {
                let v00 = vid(i, j);
                let v10 = vid(i + 1, j);
                let v01 = vid(i, j + 1);
                let v11 = vid(i + 1, j + 1);
                // diagonal v00 -- v11, both triangles counter-clockwise
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Ok(Mesh {
            base_n_div: n_div,
            refinement_level,
            n_div: eff,
            vertices,
            triangles,
            boundary_vertex,
        })
    }

    /// Effective subdivisions per side (base * 2^level).
    pub fn n_div(&self) -> usize {
        self.n_div
    }

    pub fn base_n_div(&self) -> usize {
        self.base_n_div
    }

    pub fn refinement_level(&self) -> usize {
        self.refinement_level
    }

    /// Mesh width 1/n_div.
    pub fn h(&self) -> f64 {
        1.0 / self.n_div as f64
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area of triangle `t` (positive by construction).
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_vertices(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn triangle_centroid(&self, t: usize) -> [f64; 2] {
        let [p0, p1, p2] = self.triangle_vertices(t);
        [
            (p0[0] + p1[0] + p2[0]) / 3.0,
            (p0[1] + p1[1] + p2[1]) / 3.0,
        ]
    }

    /// Whether a coordinate lies on the mesh-line lattice.
    pub fn on_mesh_line(&self, coord: f64) -> bool {
        let scaled = coord * self.n_div as f64;
        (scaled - scaled.round()).abs() < 1e-9
    }

    /// Check that every edge of `rect` lies on mesh lines.
    pub fn check_rect_alignment(&self, rect: &Rect) -> Result<()> {
        for (name, c) in [
            ("x0", rect.x0),
            ("x1", rect.x1),
            ("y0", rect.y0),
            ("y1", rect.y1),
        ] {
            if !self.on_mesh_line(c) {
                return Err(OrhcError::Geometry(format!(
                    "rectangle edge {name} = {c} is not a multiple of 1/{}",
                    self.n_div
                )));
            }
        }
        if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 {
            return Err(OrhcError::Geometry(format!("degenerate rectangle {rect:?}")));
        }
        if rect.x0 < -1e-12 || rect.y0 < -1e-12 || rect.x1 > 1.0 + 1e-12 || rect.y1 > 1.0 + 1e-12 {
            return Err(OrhcError::Geometry(format!(
                "rectangle {rect:?} leaves the unit square"
            )));
        }
        Ok(())
    }

    /// Triangles fully inside `rect` (the rectangle must be aligned, so
    /// membership of the centroid decides).
    pub fn triangles_in_rect(&self, rect: &Rect) -> Vec<usize> {
        let mut out = Vec::new();
        for t in 0..self.n_triangles() {
            let c = self.triangle_centroid(t);
            if c[0] > rect.x0 && c[0] < rect.x1 && c[1] > rect.y0 && c[1] < rect.y1 {
                out.push(t);
            }
        }
        out
    }

    /// Plain-text export: vertex count, vertices, triangle count,
    /// triangles.
    pub fn write_text<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "vertices {}", self.n_vertices())?;
        for v in &self.vertices {
            writeln!(w, "{:.16e} {:.16e}", v[0], v[1])?;
        }
        writeln!(w, "triangles {}", self.n_triangles())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_level0() {
        let mesh = Mesh::build(8, 0).unwrap();
        assert_eq!(mesh.n_vertices(), 81);
        assert_eq!(mesh.n_triangles(), 128);
    }

    #[test]
    fn counts_level1_quadrisection() {
        let mesh = Mesh::build(8, 1).unwrap();
        assert_eq!(mesh.n_div(), 16);
        assert_eq!(mesh.n_triangles(), 512);
    }

    #[test]
    fn rejects_misaligned_n_div() {
        assert!(Mesh::build(6, 0).is_err());
        assert!(Mesh::build(12, 0).is_err());
        assert!(Mesh::build(0, 0).is_err());
    }

    #[test]
    fn areas_uniform_and_sum_to_one() {
        let mesh = Mesh::build(32, 0).unwrap();
        let expect = 1.0 / 2048.0;
        let mut total = 0.0;
        for t in 0..mesh.n_triangles() {
            let a = mesh.triangle_area(t);
            assert!(a > 0.0);
            assert!((a - expect).abs() < 1e-15);
            total += a;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_flags() {
        let mesh = Mesh::build(8, 0).unwrap();
        let n_boundary = mesh
            .boundary_vertex
            .iter()
            .filter(|&&b| b)
            .count();
        assert_eq!(n_boundary, 4 * 8); // 4 sides of 9 vertices minus shared corners
        assert!(mesh.is_boundary_vertex(0));
        assert!(!mesh.is_boundary_vertex(8 + 1 + 1)); // (1,1)
    }

    #[test]
    fn rect_alignment_checks() {
        let mesh = Mesh::build(32, 0).unwrap();
        let ok = Rect {
            x0: 1.0 / 16.0,
            x1: 3.0 / 16.0,
            y0: 0.0,
            y1: 0.5,
        };
        assert!(mesh.check_rect_alignment(&ok).is_ok());
        let bad = Rect {
            x0: 0.013,
            x1: 0.5,
            y0: 0.0,
            y1: 0.5,
        };
        assert!(mesh.check_rect_alignment(&bad).is_err());
    }

    #[test]
    fn triangles_in_rect_cover_area() {
        let mesh = Mesh::build(8, 0).unwrap();
        let rect = Rect {
            x0: 0.25,
            x1: 0.5,
            y0: 0.5,
            y1: 0.75,
        };
        let tris = mesh.triangles_in_rect(&rect);
        let area: f64 = tris.iter().map(|&t| mesh.triangle_area(t)).sum();
        assert!((area - rect.area()).abs() < 1e-13);
    }
}
