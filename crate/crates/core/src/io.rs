//! Result files: legacy ASCII VTK fields and CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::space::{Field, SpaceKind};

/// Point data attached to the mesh vertices.
#[derive(Debug, Clone)]
pub enum PointData {
    Scalar(Vec<f64>),
    Vector(Vec<[f64; 2]>),
}

impl PointData {
    fn len(&self) -> usize {
        match self {
            Self::Scalar(v) => v.len(),
            Self::Vector(v) => v.len(),
        }
    }

    /// Vertex values of a field (the P2 edge nodes are dropped).
    pub fn from_field(field: &Field) -> Self {
        let space = field.space();
        let nv = space.mesh().n_vertices();
        let v = field.values();
        match space.kind() {
            SpaceKind::Velocity => {
                let nn = space.n_nodes();
                Self::Vector((0..nv).map(|i| [v[i], v[nn + i]]).collect())
            }
            _ => Self::Scalar(v[..nv].to_vec()),
        }
    }
}

/// Legacy VTK unstructured grid of the triangulation as a string.
pub fn vtk_string(mesh: &Mesh, title: &str, data: &[(&str, PointData)]) -> Result<String> {
    let nv = mesh.n_vertices();
    for (name, d) in data {
        if d.len() != nv {
            return Err(Error::InvalidArgument(format!(
                "point data `{name}` has {} values for {nv} vertices",
                d.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("invalid VTK array name `{name}`")));
        }
    }
    let mut s = String::new();
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {nv} double");
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:e} {:e} 0", p[0], p[1]);
    }
    let nt = mesh.n_triangles();
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !data.is_empty() {
        let _ = writeln!(s, "POINT_DATA {nv}");
    }
    for (name, d) in data {
        match d {
            PointData::Scalar(v) => {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(s, "{x:e}");
                }
            }
            PointData::Vector(v) => {
                let _ = writeln!(s, "VECTORS {name} double");
                for x in v {
                    let _ = writeln!(s, "{:e} {:e} 0", x[0], x[1]);
                }
            }
        }
    }
    Ok(s)
}

pub fn write_vtk(path: &Path, mesh: &Mesh, title: &str, data: &[(&str, PointData)]) -> Result<()> {
    std::fs::write(path, vtk_string(mesh, title, data)?)?;
    Ok(())
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Discretization;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn vtk_layout() {
        let d = Discretization::structured(build_structured_mesh(2, 1, 2.0, 1.0).unwrap()).unwrap();
        let u = Field::interpolate_vector(&d.spaces.velocity, |x| [x[0], -x[1]]);
        let phi = Field::constant(&d.spaces.design, 0.5);
        let s = vtk_string(
            d.mesh(),
            "test",
            &[("phi", PointData::from_field(&phi)), ("u", PointData::from_field(&u))],
        )
        .unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\ntest\nASCII\n"));
        assert!(s.contains("POINTS 6 double"));
        assert!(s.contains("CELLS 4 16"));
        assert!(s.contains("POINT_DATA 6\nSCALARS phi double 1\nLOOKUP_TABLE default\n5e-1\n"));
        assert!(s.contains("VECTORS u double\n0e0 -0e0 0\n"));
        assert!(vtk_string(d.mesh(), "t", &[("bad", PointData::Scalar(vec![0.0]))]).is_err());
    }

    #[test]
    fn csv_rows() {
        #[derive(Serialize)]
        struct Row {
            a: usize,
            b: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &[Row { a: 1, b: 0.5 }, Row { a: 2, b: -1.0 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n1,0.5\n2,-1.0\n");
    }
}
