//! Structured triangulations of a rectangle.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How each rectangular cell is split into triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Diagonal {
    /// Two triangles per cell, split along the bottom-left to top-right diagonal.
    #[default]
    Right,
    /// Four triangles per cell meeting at an added cell-center vertex.
    Crossed,
}

/// Side of the rectangle a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub edge: usize,
    pub side: Side,
    pub normal: [f64; 2],
}

/// Affine data of one triangle: area and the constant gradients of its
/// barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleGeometry {
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

pub const NO_TRIANGLE: usize = usize::MAX;

/// Triangulation of `[0, width] x [0, height]`.
#[derive(Debug, Clone)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    width: f64,
    height: f64,
    diagonal: Diagonal,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    /// `tri_edges[t][k]` is the edge opposite local vertex `k`.
    tri_edges: Vec<[usize; 3]>,
    edge_triangles: Vec<[usize; 2]>,
    boundary_edges: Vec<BoundaryEdge>,
    geometry: Vec<TriangleGeometry>,
    measure: f64,
}

/// Right-diagonal structured mesh; see [`Mesh::structured`] for the general form.
pub fn build_structured_mesh(nx: usize, ny: usize, width: f64, height: f64) -> Result<Mesh> {
    Mesh::structured(nx, ny, width, height, Diagonal::Right)
}

impl Mesh {
    pub fn structured(
        nx: usize,
        ny: usize,
        width: f64,
        height: f64,
        diagonal: Diagonal,
    ) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "cell counts must be positive (got {nx} x {ny})"
            )));
        }
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "extents must be positive (got {width} x {height})"
            )));
        }
        let hx = width / nx as f64;
        let hy = height / ny as f64;
        let grid = |i: usize, j: usize| j * (nx + 1) + i;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                // exact endpoints so boundary tests are exact
                let x = if i == nx { width } else { i as f64 * hx };
                let y = if j == ny { height } else { j as f64 * hy };
                vertices.push([x, y]);
            }
        }
        let n_grid = vertices.len();
        if diagonal == Diagonal::Crossed {
            for j in 0..ny {
                for i in 0..nx {
                    vertices.push([(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy]);
                }
            }
        }

        let mut triangles = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let v00 = grid(i, j);
                let v10 = grid(i + 1, j);
                let v01 = grid(i, j + 1);
                let v11 = grid(i + 1, j + 1);
                match diagonal {
                    Diagonal::Right => {
                        triangles.push([v00, v10, v11]);
                        triangles.push([v00, v11, v01]);
                    }
                    Diagonal::Crossed => {
                        let c = n_grid + j * nx + i;
                        triangles.push([v00, v10, c]);
                        triangles.push([v10, v11, c]);
                        triangles.push([v11, v01, c]);
                        triangles.push([v01, v00, c]);
                    }
                }
            }
        }

        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_triangles: Vec<[usize; 2]> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut te = [0; 3];
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_triangles.push([NO_TRIANGLE, NO_TRIANGLE]);
                    edges.len() - 1
                });
                if edge_triangles[e][0] == NO_TRIANGLE {
                    edge_triangles[e][0] = t;
                } else {
                    edge_triangles[e][1] = t;
                }
                te[k] = e;
            }
            tri_edges.push(te);
        }

        let mut boundary_edges = Vec::new();
        for (e, et) in edge_triangles.iter().enumerate() {
            if et[1] != NO_TRIANGLE {
                continue;
            }
            let [a, b] = edges[e];
            let (pa, pb) = (vertices[a], vertices[b]);
            let side = if pa[1] == 0.0 && pb[1] == 0.0 {
                Side::Bottom
            } else if pa[0] == width && pb[0] == width {
                Side::Right
            } else if pa[1] == height && pb[1] == height {
                Side::Top
            } else if pa[0] == 0.0 && pb[0] == 0.0 {
                Side::Left
            } else {
                return Err(Error::InvalidArgument(format!(
                    "edge {e} has a single neighbour but is not on the boundary"
                )));
            };
            boundary_edges.push(BoundaryEdge {
                edge: e,
                side,
                normal: side.outward_normal(),
            });
        }

        let mut geometry = Vec::with_capacity(triangles.len());
        let mut measure = 0.0;
        for tri in &triangles {
            let g = triangle_geometry(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if g.area <= 0.0 {
                return Err(Error::InvalidArgument(
                    "triangle with nonpositive signed area".into(),
                ));
            }
            measure += g.area;
            geometry.push(g);
        }

        Ok(Mesh {
            nx,
            ny,
            width,
            height,
            diagonal,
            vertices,
            triangles,
            edges,
            tri_edges,
            edge_triangles,
            boundary_edges,
            geometry,
            measure,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn diagonal(&self) -> Diagonal {
        self.diagonal
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    /// The (one or two) triangles sharing edge `e`; missing entries are
    /// [`NO_TRIANGLE`].
    pub fn edge_triangles(&self, e: usize) -> [usize; 2] {
        self.edge_triangles[e]
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn geometry(&self, t: usize) -> &TriangleGeometry {
        &self.geometry[t]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// |Omega|, accumulated from the triangle areas.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Cell extents `(hx, hy)` of the underlying rectangular grid.
    pub fn cell_size(&self) -> (f64, f64) {
        (self.width / self.nx as f64, self.height / self.ny as f64)
    }

    /// Largest cell extent.
    pub fn h(&self) -> f64 {
        let (hx, hy) = self.cell_size();
        hx.max(hy)
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        dist(self.vertices[a], self.vertices[b])
    }

    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    /// Physical point for barycentric coordinates on triangle `t`.
    pub fn point(&self, t: usize, lambda: &[f64; 3]) -> [f64; 2] {
        let tri = self.triangles[t];
        let mut x = [0.0; 2];
        for k in 0..3 {
            let p = self.vertices[tri[k]];
            x[0] += lambda[k] * p[0];
            x[1] += lambda[k] * p[1];
        }
        x
    }

    pub fn barycentric(&self, t: usize, x: [f64; 2]) -> [f64; 3] {
        let tri = self.triangles[t];
        let g = &self.geometry[t];
        let mut l = [0.0; 3];
        for k in 1..3 {
            // lambda_k is affine and vanishes at the next vertex
            let p = self.vertices[tri[(k + 1) % 3]];
            l[k] = g.grad_lambda[k][0] * (x[0] - p[0]) + g.grad_lambda[k][1] * (x[1] - p[1]);
        }
        l[0] = 1.0 - l[1] - l[2];
        l
    }

    /// Locates the triangle containing `x` (clamped onto the rectangle) and
    /// returns it with the barycentric coordinates of `x`.
    pub fn locate(&self, x: [f64; 2]) -> (usize, [f64; 3]) {
        let (hx, hy) = self.cell_size();
        let xc = x[0].clamp(0.0, self.width);
        let yc = x[1].clamp(0.0, self.height);
        let i = ((xc / hx).floor() as usize).min(self.nx - 1);
        let j = ((yc / hy).floor() as usize).min(self.ny - 1);
        let per_cell = match self.diagonal {
            Diagonal::Right => 2,
            Diagonal::Crossed => 4,
        };
        let first = (j * self.nx + i) * per_cell;
        let mut best = (first, [0.0; 3], f64::NEG_INFINITY);
        for t in first..first + per_cell {
            let l = self.barycentric(t, [xc, yc]);
            let m = l[0].min(l[1]).min(l[2]);
            if m > best.2 {
                best = (t, l, m);
            }
        }
        (best.0, best.1)
    }

    /// True if `x` lies in the closed rectangle up to `tol`.
    pub fn contains(&self, x: [f64; 2], tol: f64) -> bool {
        x[0] >= -tol && x[0] <= self.width + tol && x[1] >= -tol && x[1] <= self.height + tol
    }

    /// Distance of `x` to the rectangle (zero inside).
    pub fn distance_outside(&self, x: [f64; 2]) -> f64 {
        let dx = (-x[0]).max(x[0] - self.width).max(0.0);
        let dy = (-x[1]).max(x[1] - self.height).max(0.0);
        dx.hypot(dy)
    }

    /// Triangles incident to each vertex, in triangle order.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// True if every boundary vertex has exactly two boundary edges, i.e. the
    /// boundary edges close up into loops.
    pub fn boundary_is_closed(&self) -> bool {
        let mut count = vec![0usize; self.vertices.len()];
        for be in &self.boundary_edges {
            let [a, b] = self.edges[be.edge];
            count[a] += 1;
            count[b] += 1;
        }
        count.iter().all(|&c| c == 0 || c == 2)
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn triangle_geometry(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> TriangleGeometry {
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let inv = 1.0 / det;
    TriangleGeometry {
        area: 0.5 * det,
        grad_lambda: [
            [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
            [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
            [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_square_has_two_triangles() {
        let m = build_structured_mesh(1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.measure(), 1.0);
    }

    #[test]
    fn counts_on_two_by_two() {
        let m = build_structured_mesh(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(m.n_triangles(), 8);
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.n_edges(), 16);
        assert_eq!(m.boundary_edges().len(), 8);
    }

    #[test]
    fn measure_is_sum_of_areas() {
        let m = build_structured_mesh(8, 8, 2.0, 1.0).unwrap();
        let sum: f64 = (0..m.n_triangles()).map(|t| m.geometry(t).area).sum();
        assert!((m.measure() - 2.0).abs() <= 1e-12 * 2.0);
        assert!((sum - m.measure()).abs() <= 1e-12 * 2.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_structured_mesh(0, 3, 1.0, 1.0).is_err());
        assert!(build_structured_mesh(3, 3, -1.0, 1.0).is_err());
        assert!(build_structured_mesh(3, 3, 1.0, 0.0).is_err());
    }

    #[test]
    fn crossed_mesh_topology() {
        let m = Mesh::structured(3, 2, 1.5, 1.0, Diagonal::Crossed).unwrap();
        assert_eq!(m.n_triangles(), 24);
        assert_eq!(m.n_vertices(), 12 + 6);
        assert!((m.measure() - 1.5).abs() < 1e-14);
        assert!(m.boundary_is_closed());
        assert_eq!(m.boundary_edges().len(), 10);
    }

    #[test]
    fn boundary_loops_close_and_normals_point_out() {
        for d in [Diagonal::Right, Diagonal::Crossed] {
            let m = Mesh::structured(4, 3, 1.0, 0.75, d).unwrap();
            assert!(m.boundary_is_closed());
            for be in m.boundary_edges() {
                let mid = m.edge_midpoint(be.edge);
                let t = m.edge_triangles(be.edge)[0];
                let c = m.centroid(t);
                let dot = (mid[0] - c[0]) * be.normal[0] + (mid[1] - c[1]) * be.normal[1];
                assert!(dot > 0.0);
            }
        }
    }

    #[test]
    fn locate_recovers_points() {
        let m = Mesh::structured(5, 4, 1.0, 1.0, Diagonal::Crossed).unwrap();
        for &x in &[[0.13, 0.77], [0.5, 0.5], [1.0, 1.0], [0.0, 0.31]] {
            let (t, l) = m.locate(x);
            assert!(l.iter().all(|&v| v >= -1e-12));
            let p = m.point(t, &l);
            assert!(dist(p, x) < 1e-13);
        }
    }
}
