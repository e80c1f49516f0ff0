//! Continuous Lagrange spaces on a curved triangulation.
//!
//! Coefficient vectors are plain `Vec<f64>`. Vector-valued spaces use a
//! component-major layout: all first components, then all second, then all
//! third, so dof `c * num_nodes + node` is component `c` at `node`.

use std::sync::Arc;

use crate::basis::{BasisValues, LagrangeBasis};
use crate::error::Result;
use crate::geometry::Vec3;
use crate::mesh::{HighOrderMesh, NodeNumbering, QuadPoint, QuadratureRule};

#[derive(Debug, Clone)]
pub struct FeSpace {
    pub mesh: Arc<HighOrderMesh>,
    pub degree: usize,
    pub components: usize,
    pub numbering: NodeNumbering,
    /// Position on `Gamma_h` of each scalar node.
    pub dof_coordinates: Vec<Vec3>,
    basis: LagrangeBasis,
}

impl FeSpace {
    /// # Panics
    /// If `degree` is outside `1..=3` or `components` is not 1 or 3.
    pub fn new(mesh: Arc<HighOrderMesh>, degree: usize, components: usize) -> Self {
        assert!(components == 1 || components == 3, "components must be 1 or 3");
        let basis = LagrangeBasis::new(degree);
        let numbering = NodeNumbering::new(&mesh.topology, degree);
        let mut coords: Vec<Option<Vec3>> = vec![None; numbering.num_nodes];
        for e in 0..mesh.num_elements() {
            for (local, &node) in numbering.element(e).iter().enumerate() {
                if coords[node].is_none() {
                    coords[node] = Some(mesh.map_point(e, basis.node_point(local)));
                }
            }
        }
        Self {
            dof_coordinates: coords.into_iter().map(|c| c.expect("node visited")).collect(),
            mesh,
            degree,
            components,
            numbering,
            basis,
        }
    }

    pub fn scalar(mesh: &Arc<HighOrderMesh>, degree: usize) -> Self {
        Self::new(Arc::clone(mesh), degree, 1)
    }

    pub fn vector(mesh: &Arc<HighOrderMesh>, degree: usize) -> Self {
        Self::new(Arc::clone(mesh), degree, 3)
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn num_nodes(&self) -> usize {
        self.numbering.num_nodes
    }

    pub fn dof_count(&self) -> usize {
        self.components * self.num_nodes()
    }

    pub fn local_len(&self) -> usize {
        self.basis.len()
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        self.numbering.element(e)
    }

    /// Global dofs of an element, component-major within the element too.
    pub fn element_dofs(&self, e: usize) -> Vec<usize> {
        let n = self.num_nodes();
        let nodes = self.element_nodes(e);
        (0..self.components)
            .flat_map(|c| nodes.iter().map(move |node| c * n + node))
            .collect()
    }

    /// Shape function values and reference gradients at each rule point.
    pub fn tabulate(&self, rule: &QuadratureRule) -> Vec<BasisValues> {
        rule.points.iter().map(|p| self.basis.eval(*p)).collect()
    }

    pub fn interpolate_scalar(&self, f: impl Fn(&Vec3) -> f64) -> Vec<f64> {
        assert_eq!(self.components, 1);
        self.dof_coordinates.iter().map(f).collect()
    }

    pub fn interpolate_vector(&self, f: impl Fn(&Vec3) -> Vec3) -> Vec<f64> {
        assert_eq!(self.components, 3);
        let n = self.num_nodes();
        let mut out = vec![0.0; 3 * n];
        for (i, x) in self.dof_coordinates.iter().enumerate() {
            let v = f(x);
            for c in 0..3 {
                out[c * n + i] = v[c];
            }
        }
        out
    }

    /// Interpolant of a field given on the exact surface, `f o pi`.
    pub fn interpolate_lifted_scalar(&self, f: impl Fn(&Vec3) -> f64) -> Result<Vec<f64>> {
        let surface = &self.mesh.surface;
        let lifted = self
            .dof_coordinates
            .iter()
            .map(|x| surface.closest_point(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(lifted.iter().map(f).collect())
    }

    pub fn interpolate_lifted_vector(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Vec<f64>> {
        let surface = &self.mesh.surface;
        let n = self.num_nodes();
        let mut out = vec![0.0; 3 * n];
        for (i, x) in self.dof_coordinates.iter().enumerate() {
            let v = f(&surface.closest_point(x)?);
            for c in 0..3 {
                out[c * n + i] = v[c];
            }
        }
        Ok(out)
    }

    /// Value of a scalar field at a point, given the shape values there.
    pub fn scalar_value(&self, coeffs: &[f64], e: usize, shape: &[f64]) -> f64 {
        self.element_nodes(e)
            .iter()
            .zip(shape)
            .map(|(n, v)| coeffs[*n] * v)
            .sum()
    }

    pub fn vector_value(&self, coeffs: &[f64], e: usize, shape: &[f64]) -> Vec3 {
        let n = self.num_nodes();
        let mut out = Vec3::zeros();
        for (node, v) in self.element_nodes(e).iter().zip(shape) {
            for c in 0..3 {
                out[c] += coeffs[c * n + node] * v;
            }
        }
        out
    }

    /// Surface gradients `grad_{Gamma_h} phi_a` of the element's shape functions.
    pub fn shape_gradients(&self, shape: &BasisValues, q: &QuadPoint) -> Vec<Vec3> {
        shape
            .ref_gradients
            .iter()
            .map(|g| q.pinv.transpose() * nalgebra::Vector2::new(g[0], g[1]))
            .collect()
    }

    /// `grad_{Gamma_h}` of a scalar field.
    pub fn scalar_gradient(&self, coeffs: &[f64], e: usize, grads: &[Vec3]) -> Vec3 {
        self.element_nodes(e)
            .iter()
            .zip(grads)
            .fold(Vec3::zeros(), |acc, (n, g)| acc + g * coeffs[*n])
    }

    /// `grad_{Gamma_h}` of a vector field; row `c` is the gradient of component `c`.
    pub fn vector_gradient(&self, coeffs: &[f64], e: usize, grads: &[Vec3]) -> crate::Mat3 {
        let n = self.num_nodes();
        let mut out = crate::Mat3::zeros();
        for (node, g) in self.element_nodes(e).iter().zip(grads) {
            for c in 0..3 {
                let v = coeffs[c * n + node];
                for d in 0..3 {
                    out[(c, d)] += v * g[d];
                }
            }
        }
        out
    }

    /// Point evaluation at a reference point of an element.
    pub fn value_at(&self, coeffs: &[f64], e: usize, ref_pt: [f64; 2]) -> Vec<f64> {
        let shape = self.basis.eval(ref_pt).values;
        if self.components == 1 {
            vec![self.scalar_value(coeffs, e, &shape)]
        } else {
            let v = self.vector_value(coeffs, e, &shape);
            vec![v[0], v[1], v[2]]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surface;
    use crate::mesh::{build_mesh, quadrature, GeometryTable};

    fn mesh(kg: usize) -> Arc<HighOrderMesh> {
        Arc::new(build_mesh(&Surface::unit_sphere(), 1, kg).unwrap())
    }

    #[test]
    fn dof_counts() {
        let m = mesh(2);
        assert_eq!(FeSpace::scalar(&m, 2).dof_count(), 162);
        assert_eq!(FeSpace::vector(&m, 2).dof_count(), 486);
        assert_eq!(FeSpace::scalar(&m, 1).dof_count(), 42);
        assert_eq!(FeSpace::scalar(&m, 3).dof_count(), 42 + 2 * 120 + 80);
    }

    #[test]
    fn shared_nodes_are_conforming() {
        let m = mesh(3);
        let s = FeSpace::scalar(&m, 3);
        // an element's node positions agree with the element map at its reference nodes
        for e in 0..m.num_elements() {
            for (local, node) in s.element_nodes(e).iter().enumerate() {
                let x = m.map_point(e, s.basis().node_point(local));
                assert!((x - s.dof_coordinates[*node]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn interpolation_of_coordinates() {
        let m = mesh(2);
        let s = FeSpace::scalar(&m, 2);
        let ones = s.interpolate_scalar(|_| 1.0);
        assert!(ones.iter().all(|v| *v == 1.0));
        let x1 = s.interpolate_scalar(|x| x[0]);
        for (v, x) in x1.iter().zip(&s.dof_coordinates) {
            assert_eq!(*v, x[0]);
        }
    }

    #[test]
    fn element_coordinates_are_reproduced() {
        // with k = k_g the element map itself lies in the space
        let m = mesh(2);
        let s = FeSpace::vector(&m, 2);
        let coords = s.interpolate_vector(|x| *x);
        for e in 0..m.num_elements() {
            let p = [0.2, 0.5];
            let v = s.value_at(&coords, e, p);
            let x = m.map_point(e, p);
            for c in 0..3 {
                assert!((v[c] - x[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_are_tangential_and_exact_for_coordinates() {
        let m = mesh(2);
        let s = FeSpace::scalar(&m, 2);
        let rule = quadrature(4).unwrap();
        let table = GeometryTable::new(&m, &rule).unwrap();
        let tab = s.tabulate(&rule);
        let x1 = s.interpolate_scalar(|x| x[0]);
        for e in [0, 17, 63] {
            for (q, shape) in table.element(e).iter().zip(&tab) {
                let g = s.shape_gradients(shape, q);
                let grad = s.scalar_gradient(&x1, e, &g);
                assert!(grad.dot(&q.normal).abs() < 1e-12);
                let expected = q.projector * Vec3::x();
                assert!((grad - expected).norm() < 1e-12);
            }
        }
    }
}
