//! Element-loop assembly of the discrete forms.
//!
//! Element matrices are computed in parallel and scattered into a fixed CSR
//! pattern in ascending element order, so assembled arrays do not depend on
//! the number of worker threads.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::BasisValues;
use crate::error::Result;
use crate::fespace::FeSpace;
use crate::geometry::{Mat3, Vec3};
use crate::mesh::{quadrature, GeometryTable, HighOrderMesh, QuadPoint, QuadratureRule};
use crate::sparse::CsrMatrix;

/// Quadrature rule plus element geometry and exact-surface data at every
/// quadrature point of a mesh.
#[derive(Debug, Clone)]
pub struct AssemblyContext {
    pub mesh: Arc<HighOrderMesh>,
    pub rule: QuadratureRule,
    pub table: GeometryTable,
    /// `pi(x)` for every quadrature point, element-major.
    pub lifted: Vec<Vec3>,
    /// `n o pi` for every quadrature point.
    pub exact_normals: Vec<Vec3>,
}

impl AssemblyContext {
    pub fn new(mesh: Arc<HighOrderMesh>, quad_degree: usize) -> Result<Self> {
        let rule = quadrature(quad_degree)?;
        let table = GeometryTable::new(&mesh, &rule)?;
        let lifted = table
            .points
            .iter()
            .map(|q| mesh.surface.closest_point(&q.point))
            .collect::<Result<Vec<_>>>()?;
        let exact_normals = lifted
            .iter()
            .map(|p| mesh.surface.normal(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mesh,
            rule,
            table,
            lifted,
            exact_normals,
        })
    }

    /// Default degree `2 k_u + k_g`.
    pub fn default_degree(velocity_degree: usize, geometric_degree: usize) -> usize {
        2 * velocity_degree + geometric_degree
    }

    pub fn points_per_element(&self) -> usize {
        self.rule.len()
    }

    pub fn num_points(&self) -> usize {
        self.table.points.len()
    }

    /// Integral over `Gamma_h` of a function of the global quadrature index.
    pub fn integrate(&self, f: impl Fn(usize, &QuadPoint) -> f64) -> f64 {
        self.table
            .points
            .iter()
            .enumerate()
            .map(|(i, q)| q.weight * f(i, q))
            .sum()
    }

    pub fn area(&self) -> f64 {
        self.integrate(|_, _| 1.0)
    }
}

/// Which normal the penalty term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalMode {
    /// Element normal `n_h`.
    Discrete,
    /// Exact normal at the projected point, `n o pi`.
    Improved,
}

struct ElementData<'a> {
    points: &'a [QuadPoint],
    first_point: usize,
}

fn element_data(ctx: &AssemblyContext, e: usize) -> ElementData<'_> {
    ElementData {
        points: ctx.table.element(e),
        first_point: e * ctx.points_per_element(),
    }
}

fn pattern(rows: &FeSpace, cols: &FeSpace) -> CsrMatrix {
    let mut entries = vec![Vec::new(); rows.dof_count()];
    for e in 0..rows.mesh.num_elements() {
        let rd = rows.element_dofs(e);
        let cd = cols.element_dofs(e);
        for r in &rd {
            entries[*r].extend_from_slice(&cd);
        }
    }
    CsrMatrix::zeros_with_pattern(rows.dof_count(), cols.dof_count(), entries)
}

/// Generic bilinear-form assembly. The kernel fills the dense element matrix
/// (row-major, local dofs ordered as [`FeSpace::element_dofs`]).
pub fn assemble_matrix<F>(rows: &FeSpace, cols: &FeSpace, kernel: F) -> CsrMatrix
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let nr = rows.components * rows.local_len();
    let nc = cols.components * cols.local_len();
    let ne = rows.mesh.num_elements();
    let locals: Vec<Vec<f64>> = (0..ne)
        .into_par_iter()
        .map(|e| {
            let mut ke = vec![0.0; nr * nc];
            kernel(e, &mut ke);
            ke
        })
        .collect();
    let mut m = pattern(rows, cols);
    for (e, ke) in locals.iter().enumerate() {
        let rd = rows.element_dofs(e);
        let cd = cols.element_dofs(e);
        for (a, r) in rd.iter().enumerate() {
            for (b, c) in cd.iter().enumerate() {
                let k = m.slot(*r, *c).expect("pattern covers element");
                m.values[k] += ke[a * nc + b];
            }
        }
    }
    m
}

/// Generic linear-form assembly.
pub fn assemble_vector<F>(space: &FeSpace, kernel: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let n = space.components * space.local_len();
    let ne = space.mesh.num_elements();
    let locals: Vec<Vec<f64>> = (0..ne)
        .into_par_iter()
        .map(|e| {
            let mut fe = vec![0.0; n];
            kernel(e, &mut fe);
            fe
        })
        .collect();
    let mut out = vec![0.0; space.dof_count()];
    for (e, fe) in locals.iter().enumerate() {
        for (dof, v) in space.element_dofs(e).iter().zip(fe) {
            out[*dof] += v;
        }
    }
    out
}

fn gradients(space: &FeSpace, shape: &BasisValues, q: &QuadPoint) -> Vec<Vec3> {
    space.shape_gradients(shape, q)
}

/// `grad_{Gamma_h}` of a discrete vector field at a reference point; row `c`
/// is the gradient of component `c`. Scalar fields use
/// [`tangential_gradient_scalar_at`].
pub fn tangential_gradient_at(
    space: &FeSpace,
    e: usize,
    ref_pt: [f64; 2],
    coeffs: &[f64],
) -> Result<Mat3> {
    let frame = space.mesh.element_frame(e, ref_pt)?;
    let shape = space.basis().eval(ref_pt);
    let pinv = frame.pseudo_inverse();
    let grads: Vec<Vec3> = shape
        .ref_gradients
        .iter()
        .map(|g| pinv.transpose() * nalgebra::Vector2::new(g[0], g[1]))
        .collect();
    Ok(space.vector_gradient(coeffs, e, &grads))
}

pub fn tangential_gradient_scalar_at(
    space: &FeSpace,
    e: usize,
    ref_pt: [f64; 2],
    coeffs: &[f64],
) -> Result<Vec3> {
    let frame = space.mesh.element_frame(e, ref_pt)?;
    let shape = space.basis().eval(ref_pt);
    let pinv = frame.pseudo_inverse();
    let grads: Vec<Vec3> = shape
        .ref_gradients
        .iter()
        .map(|g| pinv.transpose() * nalgebra::Vector2::new(g[0], g[1]))
        .collect();
    Ok(space.scalar_gradient(coeffs, e, &grads))
}

/// `int phi_i phi_j`, per component.
pub fn assemble_mass(space: &FeSpace, ctx: &AssemblyContext) -> CsrMatrix {
    let tab = space.tabulate(&ctx.rule);
    let n = space.local_len();
    let nc = space.components * n;
    assemble_matrix(space, space, |e, ke| {
        let data = element_data(ctx, e);
        for (q, shape) in data.points.iter().zip(&tab) {
            let phi = &shape.values;
            for a in 0..n {
                for b in 0..n {
                    let v = q.weight * phi[a] * phi[b];
                    for c in 0..space.components {
                        ke[(c * n + a) * nc + c * n + b] += v;
                    }
                }
            }
        }
    })
}

/// `int grad phi_i . grad phi_j`, per component.
pub fn assemble_stiffness(space: &FeSpace, ctx: &AssemblyContext) -> CsrMatrix {
    let tab = space.tabulate(&ctx.rule);
    let n = space.local_len();
    let nc = space.components * n;
    assemble_matrix(space, space, |e, ke| {
        let data = element_data(ctx, e);
        for (q, shape) in data.points.iter().zip(&tab) {
            let g = gradients(space, shape, q);
            for a in 0..n {
                for b in 0..n {
                    let v = q.weight * g[a].dot(&g[b]);
                    for c in 0..space.components {
                        ke[(c * n + a) * nc + c * n + b] += v;
                    }
                }
            }
        }
    })
}

/// Strain part of `a_h`: `int E_h(w) : E_h(v)` with `E_h` the symmetric part
/// of `P_h grad_{Gamma_h}`.
pub fn assemble_strain(space: &FeSpace, ctx: &AssemblyContext) -> CsrMatrix {
    assert_eq!(space.components, 3);
    let tab = space.tabulate(&ctx.rule);
    let n = space.local_len();
    let nc = 3 * n;
    assemble_matrix(space, space, |e, ke| {
        let data = element_data(ctx, e);
        for (q, shape) in data.points.iter().zip(&tab) {
            let g = gradients(space, shape, q);
            let p = &q.projector;
            for a in 0..n {
                for b in 0..n {
                    let gg = g[a].dot(&g[b]);
                    for c in 0..3 {
                        for d in 0..3 {
                            let v = 0.5 * (p[(c, d)] * gg + g[b][c] * g[a][d]);
                            ke[(c * n + a) * nc + d * n + b] += q.weight * v;
                        }
                    }
                }
            }
        }
    })
}

/// `a_h = strain + mass`.
pub fn assemble_a_h(space: &FeSpace, ctx: &AssemblyContext) -> CsrMatrix {
    let mut a = assemble_strain(space, ctx);
    a.add_scaled(1.0, &assemble_mass(space, ctx));
    a
}

/// Pressure/multiplier coupling blocks and the pressure mean-value row.
#[derive(Debug, Clone)]
pub struct ConstraintBlocks {
    /// `int phi_i . grad_{Gamma_h} psi_j`, velocity rows by pressure columns.
    pub b_p: CsrMatrix,
    /// `int chi_j (phi_i . n_h)`, velocity rows by multiplier columns.
    pub b_lambda: CsrMatrix,
    /// `int psi_j`.
    pub mean: Vec<f64>,
}

pub fn assemble_b_l(
    velocity: &FeSpace,
    pressure: &FeSpace,
    lambda: &FeSpace,
    ctx: &AssemblyContext,
) -> ConstraintBlocks {
    let tu = velocity.tabulate(&ctx.rule);
    let tp = pressure.tabulate(&ctx.rule);
    let tl = lambda.tabulate(&ctx.rule);
    let nu = velocity.local_len();
    let np = pressure.local_len();
    let nl = lambda.local_len();
    let b_p = assemble_matrix(velocity, pressure, |e, ke| {
        let data = element_data(ctx, e);
        for ((q, su), sp) in data.points.iter().zip(&tu).zip(&tp) {
            let gp = gradients(pressure, sp, q);
            for a in 0..nu {
                for c in 0..3 {
                    for j in 0..np {
                        ke[(c * nu + a) * np + j] += q.weight * su.values[a] * gp[j][c];
                    }
                }
            }
        }
    });
    let b_lambda = assemble_matrix(velocity, lambda, |e, ke| {
        let data = element_data(ctx, e);
        for ((q, su), sl) in data.points.iter().zip(&tu).zip(&tl) {
            for a in 0..nu {
                for c in 0..3 {
                    let v = q.weight * su.values[a] * q.normal[c];
                    for j in 0..nl {
                        ke[(c * nu + a) * nl + j] += v * sl.values[j];
                    }
                }
            }
        }
    });
    let mean = assemble_vector(pressure, |e, fe| {
        let data = element_data(ctx, e);
        for (q, sp) in data.points.iter().zip(&tp) {
            for j in 0..np {
                fe[j] += q.weight * sp.values[j];
            }
        }
    });
    ConstraintBlocks { b_p, b_lambda, mean }
}

// element convection matrix: rows are test dofs (c, a), columns trial dofs (d, b)
fn convection_element(
    space: &FeSpace,
    ctx: &AssemblyContext,
    tab: &[BasisValues],
    w: &[f64],
    e: usize,
    ke: &mut [f64],
    skew: bool,
) {
    let n = space.local_len();
    let nc = 3 * n;
    let data = element_data(ctx, e);
    for (q, shape) in data.points.iter().zip(tab) {
        let phi = &shape.values;
        let g = gradients(space, shape, q);
        let z = q.projector * space.vector_value(w, e, phi);
        let p = &q.projector;
        let hz = q.weingarten.transpose() * z;
        for a in 0..n {
            for b in 0..n {
                let adv = q.weight * phi[a] * z.dot(&g[b]);
                let mass = q.weight * phi[a] * phi[b];
                for c in 0..3 {
                    for d in 0..3 {
                        let mut v = p[(c, d)] * adv;
                        if skew {
                            v -= 0.5 * mass * (q.normal[d] * hz[c] - q.normal[c] * hz[d]);
                        }
                        ke[(c * n + a) * nc + d * n + b] += v;
                    }
                }
            }
        }
    }
    if skew {
        for i in 0..nc {
            for j in (i + 1)..nc {
                let v = 0.5 * (ke[i * nc + j] - ke[j * nc + i]);
                ke[i * nc + j] = v;
                ke[j * nc + i] = -v;
            }
            ke[i * nc + i] = 0.0;
        }
    }
}

/// Plain convection `c_h(w; u, v) = int ((P_h w . grad^cov_{Gamma_h}) u) . v`.
pub fn assemble_convection(space: &FeSpace, ctx: &AssemblyContext, w: &[f64]) -> CsrMatrix {
    let tab = space.tabulate(&ctx.rule);
    assemble_matrix(space, space, |e, ke| {
        convection_element(space, ctx, &tab, w, e, ke, false)
    })
}

/// Skew-symmetrised convection including the Weingarten correction terms;
/// antisymmetric entry by entry.
pub fn assemble_skew_convection(space: &FeSpace, ctx: &AssemblyContext, w: &[f64]) -> CsrMatrix {
    let tab = space.tabulate(&ctx.rule);
    assemble_matrix(space, space, |e, ke| {
        convection_element(space, ctx, &tab, w, e, ke, true)
    })
}

/// `tau int (u . n~)(v . n~)`.
pub fn assemble_penalty(
    space: &FeSpace,
    ctx: &AssemblyContext,
    tau: f64,
    mode: NormalMode,
) -> CsrMatrix {
    let tab = space.tabulate(&ctx.rule);
    let n = space.local_len();
    let nc = 3 * n;
    assemble_matrix(space, space, |e, ke| {
        let data = element_data(ctx, e);
        for (k, (q, shape)) in data.points.iter().zip(&tab).enumerate() {
            let normal = match mode {
                NormalMode::Discrete => q.normal,
                NormalMode::Improved => ctx.exact_normals[data.first_point + k],
            };
            let phi = &shape.values;
            for a in 0..n {
                for b in 0..n {
                    let m = tau * q.weight * phi[a] * phi[b];
                    for c in 0..3 {
                        for d in 0..3 {
                            ke[(c * n + a) * nc + d * n + b] += m * normal[c] * normal[d];
                        }
                    }
                }
            }
        }
    })
}

/// Default penalty parameter `2.5 h^-2`.
pub fn default_tau(h: f64) -> f64 {
    2.5 / (h * h)
}

/// `int f . phi_i` from values of `f` at every quadrature point.
pub fn assemble_load(space: &FeSpace, ctx: &AssemblyContext, values: &[Vec3]) -> Vec<f64> {
    assert_eq!(values.len(), ctx.num_points());
    let tab = space.tabulate(&ctx.rule);
    let n = space.local_len();
    assemble_vector(space, |e, fe| {
        let data = element_data(ctx, e);
        for (k, (q, shape)) in data.points.iter().zip(&tab).enumerate() {
            let f = values[data.first_point + k];
            for a in 0..n {
                let v = q.weight * shape.values[a];
                for c in 0..3 {
                    fe[c * n + a] += v * f[c];
                }
            }
        }
    })
}

/// `int f(pi(x)) . phi_i` for a field given on the exact surface.
pub fn assemble_forcing(
    space: &FeSpace,
    ctx: &AssemblyContext,
    f: impl Fn(&Vec3) -> Vec3,
) -> Vec<f64> {
    let values: Vec<Vec3> = ctx.lifted.iter().map(f).collect();
    assemble_load(space, ctx, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surface;
    use crate::mesh::build_mesh;
    use crate::sparse::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(kg: usize, refine: usize) -> (Arc<HighOrderMesh>, AssemblyContext) {
        let mesh = Arc::new(build_mesh(&Surface::unit_sphere(), refine, kg).unwrap());
        let ctx = AssemblyContext::new(Arc::clone(&mesh), 2 * 2 + kg).unwrap();
        (mesh, ctx)
    }

    fn killing(x: &Vec3) -> Vec3 {
        Vec3::new(-x[1], x[0], 0.0)
    }

    #[test]
    fn mass_integrates_area() {
        let (mesh, ctx) = setup(2, 1);
        let area = ctx.area();
        for (deg, comps) in [(1, 1), (2, 1), (2, 3)] {
            let s = FeSpace::new(Arc::clone(&mesh), deg, comps);
            let m = assemble_mass(&s, &ctx);
            let ones = vec![1.0; s.dof_count()];
            assert!((m.bilinear(&ones, &ones) - comps as f64 * area).abs() < 1e-10);
            assert!(m.symmetry_defect() <= 1e-14);
        }
    }

    #[test]
    fn mass_is_positive_definite() {
        let (mesh, ctx) = setup(2, 1);
        let s = FeSpace::scalar(&mesh, 2);
        let m = assemble_mass(&s, &ctx).to_dense();
        let eig = nalgebra::SymmetricEigen::new(m);
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn a_h_of_constant_vector_is_mass_only() {
        let (mesh, ctx) = setup(2, 1);
        let s = FeSpace::vector(&mesh, 2);
        let a = assemble_a_h(&s, &ctx);
        let c = Vec3::new(0.3, -1.2, 2.0);
        let v = s.interpolate_vector(|_| c);
        let got = a.bilinear(&v, &v);
        assert!((got - c.norm_squared() * ctx.area()).abs() < 1e-10 * got);
        assert!(a.symmetry_defect() < 1e-13);
    }

    #[test]
    fn constant_pressure_column_vanishes() {
        let (mesh, ctx) = setup(2, 1);
        let u = FeSpace::vector(&mesh, 2);
        let p = FeSpace::scalar(&mesh, 1);
        let blocks = assemble_b_l(&u, &p, &p, &ctx);
        let ones = vec![1.0; p.dof_count()];
        let col = blocks.b_p.mul_vec(&ones);
        assert!(col.iter().all(|v| v.abs() < 1e-14));
        assert!((blocks.mean.iter().sum::<f64>() - ctx.area()).abs() < 1e-12);
    }

    #[test]
    fn skew_convection_is_exactly_antisymmetric() {
        let (mesh, ctx) = setup(3, 1);
        let s = FeSpace::vector(&mesh, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Vec<f64> = (0..s.dof_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = assemble_skew_convection(&s, &ctx, &w);
        let t = c.transpose();
        for i in 0..c.nrows {
            let (cols, vals) = c.row(i);
            for (j, v) in cols.iter().zip(vals) {
                assert_eq!(*v, -t.get(i, *j));
            }
        }
    }

    #[test]
    fn flat_geometry_skew_is_half_difference() {
        let (mesh, ctx) = setup(1, 1);
        let s = FeSpace::vector(&mesh, 2);
        let w = s.interpolate_vector(killing);
        let c = assemble_convection(&s, &ctx, &w);
        let ct = c.transpose();
        let skew = assemble_skew_convection(&s, &ctx, &w);
        for i in 0..c.nrows {
            let (cols, vals) = skew.row(i);
            for (j, v) in cols.iter().zip(vals) {
                let expected = 0.5 * (c.get(i, *j) - ct.get(i, *j));
                assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convection_of_zero_and_constants() {
        let (mesh, ctx) = setup(2, 1);
        let s = FeSpace::vector(&mesh, 2);
        let zero = vec![0.0; s.dof_count()];
        assert_eq!(assemble_convection(&s, &ctx, &zero).max_abs(), 0.0);
        let w = s.interpolate_vector(killing);
        let c = assemble_convection(&s, &ctx, &w);
        let constant = s.interpolate_vector(|_| Vec3::new(1.0, 2.0, -0.5));
        assert!(c.mul_vec(&constant).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn penalty_is_positive_semidefinite() {
        let (mesh, ctx) = setup(2, 1);
        let s = FeSpace::vector(&mesh, 2);
        let tau = default_tau(mesh.h);
        let m = assemble_penalty(&s, &ctx, tau, NormalMode::Improved);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: Vec<f64> = (0..s.dof_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(m.bilinear(&v, &v) >= 0.0);
        }
        assert!(m.symmetry_defect() < 1e-10 * m.max_abs());
    }

    #[test]
    fn forcing_of_constant_field() {
        let (mesh, ctx) = setup(2, 1);
        let s = FeSpace::vector(&mesh, 2);
        let c = Vec3::new(1.0, -2.0, 0.5);
        let rhs = assemble_forcing(&s, &ctx, |_| c);
        let n = s.num_nodes();
        for k in 0..3 {
            let total: f64 = rhs[k * n..(k + 1) * n].iter().sum();
            assert!((total - c[k] * ctx.area()).abs() < 1e-12);
        }
        let zero = assemble_forcing(&s, &ctx, |_| Vec3::zeros());
        assert!(zero.iter().all(|v| *v == 0.0));
        let _ = dot(&rhs, &rhs);
    }

    #[test]
    fn tangential_gradients_on_flat_element() {
        let (mesh, _) = setup(1, 0);
        let s = FeSpace::scalar(&mesh, 1);
        let x3 = s.interpolate_scalar(|x| x[2]);
        let g = tangential_gradient_scalar_at(&s, 0, [0.3, 0.3], &x3).unwrap();
        let f = mesh.element_frame(0, [0.3, 0.3]).unwrap();
        assert!(g.dot(&f.normal).abs() < 1e-12);
        assert!((g - f.projector * Vec3::z()).norm() < 1e-12);
        let v = FeSpace::vector(&mesh, 1);
        let c = v.interpolate_vector(|_| Vec3::new(1.0, 1.0, 1.0));
        assert!(tangential_gradient_at(&v, 3, [0.1, 0.2], &c).unwrap().norm() < 1e-14);
    }

    #[test]
    fn assembly_is_bitwise_deterministic() {
        let (mesh, ctx) = setup(2, 1);
        let s = FeSpace::vector(&mesh, 2);
        let w = s.interpolate_vector(killing);
        let a = assemble_convection(&s, &ctx, &w);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| assemble_convection(&s, &ctx, &w));
        assert_eq!(a, b);
    }
}
