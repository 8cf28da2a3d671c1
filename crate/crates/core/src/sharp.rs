//! Black-and-white designs: thresholding, masks and interface geometry.

use crate::mesh::{dist, Diagonal, Mesh, NO_TRIANGLE};
use crate::space::{Field, FunctionSpace, SpaceKind};

/// Fluid/solid indicator on triangles and design nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharpMask {
    cell_fluid: Vec<bool>,
    node_fluid: Vec<bool>,
}

/// Thresholds `phi` at zero; exact zeros count as fluid. Cells use the value
/// at the centroid.
pub fn extract_sharp_interface(phi: &Field) -> SharpMask {
    let mesh = phi.space().mesh();
    let third = [1.0 / 3.0; 3];
    SharpMask {
        cell_fluid: (0..mesh.n_triangles()).map(|t| phi.scalar_at(t, &third) >= 0.0).collect(),
        node_fluid: phi.values().iter().map(|&v| v >= 0.0).collect(),
    }
}

impl SharpMask {
    pub fn uniform(mesh: &Mesh, fluid: bool) -> Self {
        Self {
            cell_fluid: vec![fluid; mesh.n_triangles()],
            node_fluid: vec![fluid; mesh.n_vertices()],
        }
    }

    /// Marks cells by evaluating `fluid` at their centroids (nodes by the
    /// same predicate at the vertices).
    pub fn from_predicate(mesh: &Mesh, fluid: impl Fn([f64; 2]) -> bool) -> Self {
        Self {
            cell_fluid: (0..mesh.n_triangles()).map(|t| fluid(mesh.centroid(t))).collect(),
            node_fluid: mesh.vertices().iter().map(|&x| fluid(x)).collect(),
        }
    }

    pub fn cell_fluid(&self) -> &[bool] {
        &self.cell_fluid
    }

    pub fn node_fluid(&self) -> &[bool] {
        &self.node_fluid
    }

    pub fn n_fluid_cells(&self) -> usize {
        self.cell_fluid.iter().filter(|&&f| f).count()
    }

    pub fn is_all_fluid(&self) -> bool {
        self.cell_fluid.iter().all(|&f| f)
    }

    pub fn fluid_area(&self, mesh: &Mesh) -> f64 {
        (0..mesh.n_triangles())
            .filter(|&t| self.cell_fluid[t])
            .map(|t| mesh.geometry(t).area)
            .sum()
    }

    /// Nodal +-1 phase field.
    pub fn to_phase_field(&self, design: &std::sync::Arc<FunctionSpace>) -> Field {
        assert_eq!(design.kind(), SpaceKind::Design);
        let v = self.node_fluid.iter().map(|&f| if f { 1.0 } else { -1.0 }).collect();
        Field::new(design.clone(), v).expect("mask size matches the design space")
    }

    /// Velocity nodes (vertices then edge midpoints) whose basis support lies
    /// in the solid, i.e. nodes touching no fluid triangle.
    pub fn solid_velocity_nodes(&self, mesh: &Mesh) -> Vec<bool> {
        let nv = mesh.n_vertices();
        let mut out = vec![true; nv + mesh.n_edges()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            if self.cell_fluid[t] {
                for &v in tri {
                    out[v] = false;
                }
                for e in mesh.triangle_edges(t) {
                    out[nv + e] = false;
                }
            }
        }
        out
    }

    /// Vertices touching no fluid triangle.
    pub fn dry_vertices(&self, mesh: &Mesh) -> Vec<bool> {
        let mut wet = vec![false; mesh.n_vertices()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            if self.cell_fluid[t] {
                for &v in tri {
                    wet[v] = true;
                }
            }
        }
        wet.into_iter().map(|w| !w).collect()
    }

    /// One representative vertex per connected fluid region (triangles are
    /// connected through shared vertices).
    pub fn fluid_component_roots(&self, mesh: &Mesh) -> Vec<usize> {
        let nv = mesh.n_vertices();
        let mut parent: Vec<usize> = (0..nv).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (t, tri) in mesh.triangles().iter().enumerate() {
            if self.cell_fluid[t] {
                let r0 = find(&mut parent, tri[0]);
                for &v in &tri[1..] {
                    let r = find(&mut parent, v);
                    if r != r0 {
                        let (lo, hi) = (r0.min(r), r0.max(r));
                        parent[hi] = lo;
                    }
                }
            }
        }
        let dry = self.dry_vertices(mesh);
        let mut roots = Vec::new();
        let mut seen = vec![false; nv];
        for v in 0..nv {
            if dry[v] {
                continue;
            }
            let r = find(&mut parent, v);
            if !seen[r] {
                seen[r] = true;
                roots.push(v);
            }
        }
        roots
    }

    /// Marks as fluid every triangle around a solid velocity node carrying
    /// nonzero Dirichlet data (`boundary` holds velocity DOF values), so the
    /// sharp velocity space is not empty. Returns the number of cells changed.
    pub fn admit_boundary_data(&mut self, mesh: &Mesh, boundary: &[f64]) -> usize {
        let nv = mesh.n_vertices();
        let nn = nv + mesh.n_edges();
        let solid = self.solid_velocity_nodes(mesh);
        let blocked = |node: usize| solid[node] && (boundary[node] != 0.0 || boundary[nn + node] != 0.0);
        let mut changed = 0;
        for (t, tri) in mesh.triangles().iter().enumerate() {
            if self.cell_fluid[t] {
                continue;
            }
            if tri.iter().any(|&v| blocked(v)) || mesh.triangle_edges(t).iter().any(|&e| blocked(nv + e)) {
                self.cell_fluid[t] = true;
                changed += 1;
            }
        }
        changed
    }

    /// Interior edges separating a fluid from a solid triangle.
    pub fn interface_edges(&self, mesh: &Mesh) -> Vec<usize> {
        (0..mesh.n_edges())
            .filter(|&e| {
                let [a, b] = mesh.edge_triangles(e);
                b != NO_TRIANGLE && self.cell_fluid[a] != self.cell_fluid[b]
            })
            .collect()
    }

    /// Total length of the staircase interface (boundary of the domain not
    /// counted).
    pub fn edge_perimeter(&self, mesh: &Mesh) -> f64 {
        self.interface_edges(mesh).iter().map(|&e| mesh.edge_length(e)).sum()
    }

    /// Vertex average of the +-1 indicator over the grid cells touching the
    /// vertex (each cell contributes its area-weighted triangle mean), which
    /// keeps the value independent of the diagonal direction.
    pub fn smoothed_indicator(&self, mesh: &Mesh) -> Vec<f64> {
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let per_cell = mesh.n_triangles() / (nx * ny);
        let cell: Vec<f64> = (0..nx * ny)
            .map(|c| {
                let (mut num, mut den) = (0.0, 0.0);
                for t in c * per_cell..(c + 1) * per_cell {
                    let a = mesh.geometry(t).area;
                    num += if self.cell_fluid[t] { a } else { -a };
                    den += a;
                }
                num / den
            })
            .collect();
        let mut out = vec![0.0; mesh.n_vertices()];
        for j in 0..=ny {
            for i in 0..=nx {
                let (mut sum, mut cnt) = (0.0, 0.0);
                for cj in j.saturating_sub(1)..(j + 1).min(ny) {
                    for ci in i.saturating_sub(1)..(i + 1).min(nx) {
                        sum += cell[cj * nx + ci];
                        cnt += 1.0;
                    }
                }
                out[j * (nx + 1) + i] = sum / cnt;
            }
        }
        let n_grid = (nx + 1) * (ny + 1);
        if mesh.diagonal() == Diagonal::Crossed {
            for c in 0..nx * ny {
                out[n_grid + c] = cell[c];
            }
        }
        out
    }

    /// Piecewise linear zero contour of [`Self::smoothed_indicator`], as a
    /// list of segments.
    pub fn contour(&self, mesh: &Mesh) -> Vec<[[f64; 2]; 2]> {
        zero_contour(mesh, &self.smoothed_indicator(mesh))
    }

    /// Signed distance of every vertex to [`Self::contour`], positive on the
    /// fluid side. Without an interface the distance is `+-inf`.
    pub fn signed_distance(&self, mesh: &Mesh) -> Vec<f64> {
        let s = self.smoothed_indicator(mesh);
        let segs = zero_contour(mesh, &s);
        mesh.vertices()
            .iter()
            .zip(&s)
            .map(|(&x, &sv)| {
                let d = segs
                    .iter()
                    .map(|seg| point_segment_distance(x, seg[0], seg[1]))
                    .fold(f64::INFINITY, f64::min);
                if sv >= 0.0 {
                    d
                } else {
                    -d
                }
            })
            .collect()
    }
}

/// Marching-triangles zero contour of a P1 nodal function.
pub fn zero_contour(mesh: &Mesh, values: &[f64]) -> Vec<[[f64; 2]; 2]> {
    let mut out = Vec::new();
    let xs = mesh.vertices();
    for tri in mesh.triangles() {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(3);
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let (va, vb) = (values[a], values[b]);
            if (va >= 0.0) != (vb >= 0.0) {
                let s = va / (va - vb);
                pts.push([xs[a][0] + s * (xs[b][0] - xs[a][0]), xs[a][1] + s * (xs[b][1] - xs[a][1])]);
            }
        }
        if pts.len() == 2 && dist(pts[0], pts[1]) > 0.0 {
            out.push([pts[0], pts[1]]);
        }
    }
    out
}

pub fn point_segment_distance(x: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((x[0] - a[0]) * dx + (x[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(x, [a[0] + t * dx, a[1] + t * dy])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use crate::space::FeSpaces;

    #[test]
    fn thresholds() {
        let s = FeSpaces::new(build_structured_mesh(4, 4, 1.0, 1.0).unwrap());
        assert!(extract_sharp_interface(&Field::constant(&s.design, 0.3)).is_all_fluid());
        assert_eq!(extract_sharp_interface(&Field::constant(&s.design, -0.3)).n_fluid_cells(), 0);
        assert!(extract_sharp_interface(&Field::constant(&s.design, 0.0)).is_all_fluid());
    }

    #[test]
    fn square_hole_perimeter() {
        let mesh = build_structured_mesh(16, 16, 1.0, 1.0).unwrap();
        let m = SharpMask::from_predicate(&mesh, |x| (x[0] - 0.5).abs() > 0.125 || (x[1] - 0.5).abs() > 0.125);
        assert!((m.edge_perimeter(&mesh) - 1.0).abs() < 1e-12);
        assert!(SharpMask::uniform(&mesh, true).interface_edges(&mesh).is_empty());
        assert_eq!(m.fluid_component_roots(&mesh).len(), 1);
    }

    #[test]
    fn components_and_dry_vertices() {
        let mesh = build_structured_mesh(8, 4, 2.0, 1.0).unwrap();
        let m = SharpMask::from_predicate(&mesh, |x| (x[0] - 1.0).abs() > 0.25);
        assert_eq!(m.fluid_component_roots(&mesh).len(), 2);
        let dry = m.dry_vertices(&mesh).iter().filter(|&&d| d).count();
        // one interior vertex column (x = 1) is dry
        assert_eq!(dry, 5);
    }

    #[test]
    fn straight_contour_is_exact() {
        let mesh = build_structured_mesh(8, 8, 1.0, 1.0).unwrap();
        let m = SharpMask::from_predicate(&mesh, |x| x[1] < 0.5);
        let len: f64 = m.contour(&mesh).iter().map(|s| dist(s[0], s[1])).sum();
        assert!((len - 1.0).abs() < 1e-12);
        let d = m.signed_distance(&mesh);
        for (x, d) in mesh.vertices().iter().zip(d) {
            assert!((d - (0.5 - x[1])).abs() < 1e-12);
        }
    }
}
