//! Legacy ASCII VTK export of curved triangulations.
//!
//! Each element is split into `4^(k_g - 1)` flat sub-triangles on a uniform
//! reference lattice. Points are duplicated per element, so discontinuous
//! fields export without averaging.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::HighOrderMesh;
use crate::error::Result;

/// A point-data array sampled element by element.
pub struct VtkField<'a> {
    pub name: &'a str,
    /// 1 for scalars, 3 for vectors.
    pub components: usize,
    pub eval: Box<dyn Fn(usize, [f64; 2]) -> Vec<f64> + 'a>,
}

fn lattice(s: usize) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let mut pts = Vec::new();
    let mut index = vec![vec![0; s + 1]; s + 1];
    for j in 0..=s {
        for i in 0..=(s - j) {
            index[i][j] = pts.len();
            pts.push([i as f64 / s as f64, j as f64 / s as f64]);
        }
    }
    let mut tris = Vec::new();
    for j in 0..s {
        for i in 0..(s - j) {
            tris.push([index[i][j], index[i + 1][j], index[i][j + 1]]);
            if i + j + 1 < s {
                tris.push([index[i + 1][j], index[i + 1][j + 1], index[i][j + 1]]);
            }
        }
    }
    (pts, tris)
}

/// Renders the mesh and fields as a VTK legacy POLYDATA document.
pub fn render_vtk(mesh: &HighOrderMesh, fields: &[VtkField<'_>]) -> String {
    let s = 1 << (mesh.geometric_degree - 1);
    let (ref_pts, sub) = lattice(s);
    let ne = mesh.num_elements();
    let npts = ne * ref_pts.len();
    let ntri = ne * sub.len();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 2.0\nsurface-ns\nASCII\nDATASET POLYDATA\n");
    writeln!(out, "POINTS {npts} double").unwrap();
    for e in 0..ne {
        for p in &ref_pts {
            let x = mesh.map_point(e, *p);
            writeln!(out, "{:.12e} {:.12e} {:.12e}", x[0], x[1], x[2]).unwrap();
        }
    }
    writeln!(out, "POLYGONS {ntri} {}", 4 * ntri).unwrap();
    for e in 0..ne {
        let offset = e * ref_pts.len();
        for t in &sub {
            writeln!(out, "3 {} {} {}", offset + t[0], offset + t[1], offset + t[2]).unwrap();
        }
    }
    if !fields.is_empty() {
        writeln!(out, "POINT_DATA {npts}").unwrap();
    }
    for field in fields {
        if field.components == 1 {
            writeln!(out, "SCALARS {} double 1\nLOOKUP_TABLE default", field.name).unwrap();
        } else {
            writeln!(out, "VECTORS {} double", field.name).unwrap();
        }
        for e in 0..ne {
            for p in &ref_pts {
                let v = (field.eval)(e, *p);
                let line: Vec<String> = v.iter().map(|x| format!("{x:.12e}")).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        }
    }
    out
}

pub fn write_vtk(path: &Path, mesh: &HighOrderMesh, fields: &[VtkField<'_>]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(render_vtk(mesh, fields).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surface;
    use crate::mesh::build_mesh;

    #[test]
    fn lattice_sizes() {
        for s in [1, 2, 4] {
            let (p, t) = lattice(s);
            assert_eq!(p.len(), (s + 1) * (s + 2) / 2);
            assert_eq!(t.len(), s * s);
        }
    }

    #[test]
    fn document_counts() {
        let mesh = build_mesh(&Surface::unit_sphere(), 0, 2).unwrap();
        let doc = render_vtk(
            &mesh,
            &[VtkField {
                name: "pressure",
                components: 1,
                eval: Box::new(|_, _| vec![0.0]),
            }],
        );
        assert!(doc.contains("POINTS 120 double"));
        assert!(doc.contains("POLYGONS 80 320"));
        assert!(doc.contains("SCALARS pressure double 1"));
        assert_eq!(doc.lines().count(), 5 + 120 + 1 + 80 + 1 + 2 + 120);
    }
}
