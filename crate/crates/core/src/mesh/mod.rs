//! Triangulations of the exact surface: icosphere base meshes, Lagrange node
//! numbering, curved elements of geometric degree `k_g` and per-point element
//! geometry.

mod quadrature;
pub mod vtk;

use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix2x3, Matrix3x2};

use crate::basis::{LagrangeBasis, LOCAL_EDGES};
use crate::error::{Error, Result};
use crate::geometry::{tangent_projector, Mat3, Surface, Vec3};

pub use quadrature::{quadrature, QuadratureRule, MAX_QUADRATURE_DEGREE};

/// Vertex/triangle connectivity of a closed triangulated surface.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise seen from outside.
    pub triangles: Vec<[usize; 3]>,
    /// Vertex pairs `[lo, hi]`, numbered in order of first appearance.
    pub edges: Vec<[usize; 2]>,
    /// The two triangles sharing each edge.
    pub edge_triangles: Vec<[usize; 2]>,
    /// Edge index of each local edge in [`LOCAL_EDGES`] order.
    pub triangle_edges: Vec<[usize; 3]>,
}

impl MeshTopology {
    /// Builds edge tables; panics if the triangles do not form a closed
    /// 2-manifold.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut incident: Vec<Vec<usize>> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0; 3];
            for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let (u, v) = (tri[*a], tri[*b]);
                let key = [u.min(v), u.max(v)];
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    incident.push(Vec::new());
                    edges.len() - 1
                });
                incident[e].push(t);
                local[k] = e;
            }
            triangle_edges.push(local);
        }
        let edge_triangles = incident
            .iter()
            .enumerate()
            .map(|(e, ts)| {
                assert_eq!(ts.len(), 2, "edge {e} has {} incident triangles", ts.len());
                [ts[0], ts[1]]
            })
            .collect();
        Self {
            vertices,
            triangles,
            edges,
            edge_triangles,
            triangle_edges,
        }
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Maximum edge length of the flat triangles.
    pub fn mesh_size(&self) -> f64 {
        self.edges
            .iter()
            .map(|[a, b]| (self.vertices[*a] - self.vertices[*b]).norm())
            .fold(0.0, f64::max)
    }

    /// Minimum over triangles of the longest edge.
    pub fn min_diameter(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                LOCAL_EDGES
                    .iter()
                    .map(|[a, b]| (self.vertices[t[*a]] - self.vertices[t[*b]]).norm())
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, g, 0.0],
        [1.0, g, 0.0],
        [-1.0, -g, 0.0],
        [1.0, -g, 0.0],
        [0.0, -1.0, g],
        [0.0, 1.0, g],
        [0.0, -1.0, -g],
        [0.0, 1.0, -g],
        [g, 0.0, -1.0],
        [g, 0.0, 1.0],
        [-g, 0.0, -1.0],
        [-g, 0.0, 1.0],
    ];
    let vertices = raw
        .iter()
        .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
        .collect();
    let triangles = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, triangles)
}

/// Unit icosphere after `refinements` midpoint subdivisions.
pub fn icosphere(refinements: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let (mut vertices, mut triangles) = icosahedron();
    for _ in 0..refinements {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }
    (vertices, triangles)
}

/// Icosphere mapped onto the surface (radially for spheres, through the
/// sphere parametrisation for level sets that provide one).
pub fn build_base_mesh(surface: &Surface, refinements: usize) -> Result<MeshTopology> {
    let (unit, triangles) = icosphere(refinements);
    let vertices = unit
        .iter()
        .map(|p| surface.from_unit_sphere(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeshTopology::new(vertices, triangles))
}

/// Global numbering of the degree-`k` Lagrange nodes of a topology:
/// vertices, then `k - 1` nodes per edge (walked from the lower to the higher
/// global vertex), then `(k - 1)(k - 2) / 2` interior nodes per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeNumbering {
    pub degree: usize,
    pub num_nodes: usize,
    pub nodes_per_element: usize,
    element_nodes: Vec<usize>,
}

impl NodeNumbering {
    pub fn new(topology: &MeshTopology, degree: usize) -> Self {
        let basis = LagrangeBasis::new(degree);
        let per_edge = basis.nodes_per_edge();
        let interior = basis.interior_nodes();
        let nv = topology.vertices.len();
        let ne = topology.edges.len();
        let nloc = basis.len();
        let mut element_nodes = Vec::with_capacity(nloc * topology.triangles.len());
        for (t, tri) in topology.triangles.iter().enumerate() {
            element_nodes.extend_from_slice(tri);
            for (k, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let e = topology.triangle_edges[t][k];
                let forward = tri[*a] < tri[*b];
                for j in 1..=per_edge {
                    let pos = if forward { j } else { per_edge + 1 - j };
                    element_nodes.push(nv + e * per_edge + pos - 1);
                }
            }
            for j in 0..interior {
                element_nodes.push(nv + ne * per_edge + t * interior + j);
            }
        }
        Self {
            degree,
            num_nodes: nv + ne * per_edge + topology.triangles.len() * interior,
            nodes_per_element: nloc,
            element_nodes,
        }
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.element_nodes[e * self.nodes_per_element..(e + 1) * self.nodes_per_element]
    }

    pub fn num_elements(&self) -> usize {
        self.element_nodes.len() / self.nodes_per_element
    }
}

/// Curved triangulation `Gamma_h` whose elements are degree-`k_g` Lagrange
/// interpolants of the closest-point projection of the flat triangles.
#[derive(Debug, Clone)]
pub struct HighOrderMesh {
    pub surface: Surface,
    pub topology: MeshTopology,
    pub geometric_degree: usize,
    pub nodes: Vec<Vec3>,
    pub numbering: NodeNumbering,
    /// Maximum diameter of the flat (vertex) triangles.
    pub h: f64,
    basis: LagrangeBasis,
}

/// Geometry of an element at one reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementFrame {
    pub point: Vec3,
    pub jacobian: Matrix3x2<f64>,
    pub normal: Vec3,
    pub projector: Mat3,
    /// `|d_s F x d_t F|`, the area scaling against the reference triangle.
    pub surface_measure: f64,
    /// Discrete Weingarten map `grad_{Gamma_h} n_h`.
    pub weingarten: Mat3,
}

impl ElementFrame {
    /// `(J^T J)^{-1} J^T`, mapping ambient gradients of the reference
    /// parametrisation to surface gradients: `grad_{Gamma_h} v = pinv^T grad_ref v`.
    pub fn pseudo_inverse(&self) -> Matrix2x3<f64> {
        let j = &self.jacobian;
        let g: Matrix2<f64> = j.transpose() * j;
        g.try_inverse().expect("degenerate metric") * j.transpose()
    }
}

pub fn elevate_geometry(
    surface: &Surface,
    base: &MeshTopology,
    geometric_degree: usize,
) -> Result<HighOrderMesh> {
    let basis = LagrangeBasis::new(geometric_degree);
    let numbering = NodeNumbering::new(base, geometric_degree);
    let mut nodes: Vec<Option<Vec3>> = vec![None; numbering.num_nodes];
    for (v, x) in base.vertices.iter().enumerate() {
        nodes[v] = Some(*x);
    }
    for (t, tri) in base.triangles.iter().enumerate() {
        let corners = [base.vertices[tri[0]], base.vertices[tri[1]], base.vertices[tri[2]]];
        for (local, &global) in numbering.element(t).iter().enumerate().skip(3) {
            if nodes[global].is_some() {
                continue;
            }
            let w = basis.node_barycentric(local);
            let affine = corners[0] * w[0] + corners[1] * w[1] + corners[2] * w[2];
            nodes[global] = Some(surface.closest_point(&affine)?);
        }
    }
    let nodes = nodes
        .into_iter()
        .map(|n| n.expect("every node belongs to an element"))
        .collect();
    Ok(HighOrderMesh {
        surface: surface.clone(),
        topology: base.clone(),
        geometric_degree,
        nodes,
        h: base.mesh_size(),
        numbering,
        basis,
    })
}

/// Base icosphere mesh elevated to degree `k_g` in one call.
pub fn build_mesh(surface: &Surface, refinements: usize, geometric_degree: usize) -> Result<HighOrderMesh> {
    let base = build_base_mesh(surface, refinements)?;
    elevate_geometry(surface, &base, geometric_degree)
}

impl HighOrderMesh {
    pub fn num_elements(&self) -> usize {
        self.topology.triangles.len()
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        self.numbering.element(e)
    }

    /// Image of a reference point under the element map.
    pub fn map_point(&self, e: usize, ref_pt: [f64; 2]) -> Vec3 {
        let vals = self.basis.eval(ref_pt).values;
        self.element_nodes(e)
            .iter()
            .zip(&vals)
            .fold(Vec3::zeros(), |acc, (n, v)| acc + self.nodes[*n] * *v)
    }

    pub fn element_frame(&self, e: usize, ref_pt: [f64; 2]) -> Result<ElementFrame> {
        let jet = self.basis.eval_jet(ref_pt);
        let mut point = Vec3::zeros();
        let mut ds = Vec3::zeros();
        let mut dt = Vec3::zeros();
        let mut dss = Vec3::zeros();
        let mut dst = Vec3::zeros();
        let mut dtt = Vec3::zeros();
        for (i, n) in self.element_nodes(e).iter().enumerate() {
            let x = self.nodes[*n];
            point += x * jet.values[i];
            ds += x * jet.ref_gradients[i][0];
            dt += x * jet.ref_gradients[i][1];
            dss += x * jet.ref_hessians[i][0];
            dst += x * jet.ref_hessians[i][1];
            dtt += x * jet.ref_hessians[i][2];
        }
        let cross = ds.cross(&dt);
        let measure = cross.norm();
        if measure < 1e-14 {
            return Err(Error::DegenerateElement { element: e, measure });
        }
        let normal = cross / measure;
        let projector = tangent_projector(&normal);
        let jacobian = Matrix3x2::from_columns(&[ds, dt]);

        // derivatives of n = c / |c| along the two reference directions
        let dn_ds = projector * (dss.cross(&dt) + ds.cross(&dst)) / measure;
        let dn_dt = projector * (dst.cross(&dt) + ds.cross(&dtt)) / measure;
        let dn = Matrix3x2::from_columns(&[dn_ds, dn_dt]);
        let frame = ElementFrame {
            point,
            jacobian,
            normal,
            projector,
            surface_measure: measure,
            weingarten: Mat3::zeros(),
        };
        let weingarten = projector * dn * frame.pseudo_inverse();
        Ok(ElementFrame { weingarten, ..frame })
    }

    /// Ratio of the largest to the smallest element diameter.
    pub fn quasi_uniformity(&self) -> f64 {
        self.h / self.topology.min_diameter()
    }

    /// `int_{Gamma_h} 1`.
    pub fn area(&self, rule: &QuadratureRule) -> Result<f64> {
        let mut total = 0.0;
        for e in 0..self.num_elements() {
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                total += w * self.element_frame(e, *p)?.surface_measure;
            }
        }
        Ok(total)
    }
}

/// Element geometry tabulated at the points of a quadrature rule.
#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub point: Vec3,
    pub normal: Vec3,
    pub projector: Mat3,
    pub weingarten: Mat3,
    pub pinv: Matrix2x3<f64>,
    /// Quadrature weight times surface measure.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct GeometryTable {
    pub points_per_element: usize,
    pub points: Vec<QuadPoint>,
}

impl GeometryTable {
    pub fn new(mesh: &HighOrderMesh, rule: &QuadratureRule) -> Result<Self> {
        let mut points = Vec::with_capacity(mesh.num_elements() * rule.len());
        for e in 0..mesh.num_elements() {
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let f = mesh.element_frame(e, *p)?;
                points.push(QuadPoint {
                    point: f.point,
                    normal: f.normal,
                    projector: f.projector,
                    weingarten: f.weingarten,
                    pinv: f.pseudo_inverse(),
                    weight: w * f.surface_measure,
                });
            }
        }
        Ok(Self {
            points_per_element: rule.len(),
            points,
        })
    }

    pub fn element(&self, e: usize) -> &[QuadPoint] {
        &self.points[e * self.points_per_element..(e + 1) * self.points_per_element]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let s = Surface::unit_sphere();
        for (r, v, f, e) in [(0, 12, 20, 30), (1, 42, 80, 120), (3, 642, 1280, 1920)] {
            let m = build_base_mesh(&s, r).unwrap();
            assert_eq!(m.vertices.len(), v);
            assert_eq!(m.triangles.len(), f);
            assert_eq!(m.edges.len(), e);
            assert_eq!(m.euler_characteristic(), 2);
        }
    }

    #[test]
    fn base_meshes_are_outward_and_on_surface() {
        for s in [Surface::unit_sphere(), Surface::varying_curvature()] {
            let m = build_base_mesh(&s, 2).unwrap();
            for v in &m.vertices {
                assert!(s.signed_distance(v).unwrap().abs() < 1e-10);
            }
            for t in &m.triangles {
                let [a, b, c] = t.map(|i| m.vertices[i]);
                let n = (b - a).cross(&(c - a));
                let centroid = (a + b + c) / 3.0;
                let outward = s.normal(&s.closest_point(&centroid).unwrap()).unwrap();
                assert!(n.dot(&outward) > 0.0);
            }
        }
    }

    #[test]
    fn refinement_quadruples_faces_and_halves_h() {
        let s = Surface::unit_sphere();
        let mut prev: Option<MeshTopology> = None;
        for r in 0..4 {
            let m = build_base_mesh(&s, r).unwrap();
            if let Some(p) = &prev {
                assert_eq!(m.triangles.len(), 4 * p.triangles.len());
                let ratio = p.mesh_size() / m.mesh_size();
                assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
            }
            prev = Some(m);
        }
    }

    #[test]
    fn elevation_node_counts_and_placement() {
        let s = Surface::unit_sphere();
        let base = build_base_mesh(&s, 1).unwrap();
        let linear = elevate_geometry(&s, &base, 1).unwrap();
        assert_eq!(linear.nodes, base.vertices);
        let quad = elevate_geometry(&s, &base, 2).unwrap();
        assert_eq!(quad.nodes.len(), 162);
        let cubic = elevate_geometry(&Surface::varying_curvature(), &build_base_mesh(&Surface::varying_curvature(), 1).unwrap(), 3).unwrap();
        for x in cubic.nodes.iter() {
            assert!(cubic.surface.signed_distance(x).unwrap().abs() < 1e-10);
        }
        assert!(cubic.quasi_uniformity() >= 1.0);
    }

    #[test]
    fn shared_edge_nodes_agree_between_neighbours() {
        let s = Surface::unit_sphere();
        let mesh = build_mesh(&s, 1, 3).unwrap();
        // the element maps of two neighbours coincide along their common edge
        for (e, [t0, t1]) in mesh.topology.edge_triangles.iter().enumerate().take(20) {
            let [a, b] = mesh.topology.edges[e];
            let xa = mesh.topology.vertices[a];
            let xb = mesh.topology.vertices[b];
            for k in 1..4 {
                let w = k as f64 / 4.0;
                let target = xa * (1.0 - w) + xb * w;
                let on = |t: usize| {
                    let tri = mesh.topology.triangles[t];
                    let la = tri.iter().position(|&v| v == a).unwrap();
                    let lb = tri.iter().position(|&v| v == b).unwrap();
                    let mut bary = [0.0; 3];
                    bary[la] = 1.0 - w;
                    bary[lb] = w;
                    mesh.map_point(t, [bary[1], bary[2]])
                };
                let p0 = on(*t0);
                let p1 = on(*t1);
                assert!((p0 - p1).norm() < 1e-14);
                assert!((p0 - target).norm() < 0.1);
            }
        }
    }

    #[test]
    fn flat_element_frame() {
        let vertices = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let (_, tris) = icosahedron();
        // embed a single flat triangle through a one-element mesh view
        let _ = tris;
        let topo = MeshTopology {
            vertices: vertices.clone(),
            triangles: vec![[0, 1, 2]],
            edges: vec![[0, 1], [1, 2], [0, 2]],
            edge_triangles: vec![[0, 0]; 3],
            triangle_edges: vec![[0, 1, 2]],
        };
        let mesh = HighOrderMesh {
            surface: Surface::unit_sphere(),
            numbering: NodeNumbering::new(&topo, 1),
            nodes: vertices,
            h: topo.mesh_size(),
            topology: topo,
            geometric_degree: 1,
            basis: LagrangeBasis::new(1),
        };
        let expected = Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        for p in [[0.2, 0.3], [1.0 / 3.0, 1.0 / 3.0], [0.0, 0.9]] {
            let f = mesh.element_frame(0, p).unwrap();
            assert!((f.normal - expected).norm() < 1e-15);
            assert!(f.weingarten.norm() < 1e-15);
            assert!((f.surface_measure - 3f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_surface_normals_integrate_to_zero() {
        let rule = quadrature(6).unwrap();
        for s in [Surface::unit_sphere(), Surface::varying_curvature()] {
            for kg in 1..=3 {
                let mesh = build_mesh(&s, 2, kg).unwrap();
                let table = GeometryTable::new(&mesh, &rule).unwrap();
                let total = table
                    .points
                    .iter()
                    .fold(Vec3::zeros(), |acc, q| acc + q.normal * q.weight);
                assert!(total.norm() < 1e-8, "kg {kg}: {}", total.norm());
            }
        }
    }

    #[test]
    fn discrete_weingarten_is_tangential_and_symmetric() {
        let mesh = build_mesh(&Surface::varying_curvature(), 1, 3).unwrap();
        for e in 0..mesh.num_elements() {
            let f = mesh.element_frame(e, [0.3, 0.2]).unwrap();
            assert!((f.weingarten * f.normal).norm() < 1e-10);
            assert!((f.weingarten - f.weingarten.transpose()).norm() < 1e-10);
            assert!((f.normal.transpose() * f.weingarten).norm() < 1e-10);
        }
    }
}
