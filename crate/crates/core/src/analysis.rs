//! Error norms, convergence orders, inf-sup estimates and geometric errors.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::assembly::{assemble_mass, assemble_stiffness, AssemblyContext};
use crate::error::{Error, Result};
use crate::fespace::FeSpace;
use crate::geometry::{Mat3, Vec3};
use crate::mesh::{quadrature, GeometryTable, HighOrderMesh};
use crate::problems::{ProblemCache, ProblemSpec};
use crate::solver::{Discretization, SaddleSystem, DirectSolver};
use crate::sparse::{norm2, CsrMatrix};

/// Values and surface gradients of a discrete vector field at every
/// quadrature point.
pub fn sample_vector(space: &FeSpace, ctx: &AssemblyContext, coeffs: &[f64]) -> (Vec<Vec3>, Vec<Mat3>) {
    let tab = space.tabulate(&ctx.rule);
    let nq = ctx.points_per_element();
    let mut values = Vec::with_capacity(ctx.num_points());
    let mut grads = Vec::with_capacity(ctx.num_points());
    for e in 0..space.mesh.num_elements() {
        for (q, shape) in ctx.table.element(e).iter().zip(&tab).take(nq) {
            let g = space.shape_gradients(shape, q);
            values.push(space.vector_value(coeffs, e, &shape.values));
            grads.push(space.vector_gradient(coeffs, e, &g));
        }
    }
    (values, grads)
}

/// Values of a discrete scalar field at every quadrature point.
pub fn sample_scalar(space: &FeSpace, ctx: &AssemblyContext, coeffs: &[f64]) -> Vec<f64> {
    let tab = space.tabulate(&ctx.rule);
    let mut values = Vec::with_capacity(ctx.num_points());
    for e in 0..space.mesh.num_elements() {
        for shape in &tab {
            values.push(space.scalar_value(coeffs, e, &shape.values));
        }
    }
    values
}

/// `|u_h - u o pi|_{L^2(Gamma_h)}` for a field on the exact surface.
pub fn l2_error_vector(
    space: &FeSpace,
    ctx: &AssemblyContext,
    coeffs: &[f64],
    exact: impl Fn(&Vec3) -> Vec3,
) -> f64 {
    let (values, _) = sample_vector(space, ctx, coeffs);
    ctx.integrate(|i, _| (values[i] - exact(&ctx.lifted[i])).norm_squared())
        .sqrt()
}

/// Squared errors at one time level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct LevelErrors {
    u: f64,
    pu: f64,
    n: f64,
    grad: f64,
    p: f64,
    lambda: f64,
}

/// One row of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub ndof_u: usize,
    pub ndof_p: usize,
    pub ndof_lambda: usize,
    /// `max_n |u^n - u_h^n|`.
    pub err_u: f64,
    /// `max_n |P_h (u^n - u_h^n)|`.
    pub err_pu: f64,
    /// `max_n |u_h^n . n_h|`.
    pub err_n: f64,
    /// `(dt sum_n |grad^cov (u^n - u_h^n)|^2)^(1/2)`.
    pub err_grad: f64,
    pub err_p: f64,
    pub err_lambda: f64,
}

/// Error norms of a trajectory against the exact solution.
pub fn error_norms(
    disc: &Discretization,
    problem: &ProblemSpec,
    cache: &ProblemCache,
    traj: &crate::solver::Trajectory,
    level: usize,
) -> ErrorRow {
    let ctx = &disc.ctx;
    let with_lambda = traj.lambda.first().map_or(false, |l| !l.is_empty());
    let levels: Vec<LevelErrors> = (0..traj.velocity.len())
        .into_par_iter()
        .map(|n| {
            let t = traj.times[n];
            let exact = cache.states(problem, t);
            let (uh, gh) = sample_vector(&disc.velocity, ctx, &traj.velocity[n]);
            let ph = (n > 0).then(|| sample_scalar(&disc.pressure, ctx, &traj.pressure[n - 1]));
            let lh = (n > 0 && with_lambda)
                .then(|| sample_scalar(&disc.lambda, ctx, &traj.lambda[n - 1]));
            let mut acc = LevelErrors::default();
            for (i, q) in ctx.table.points.iter().enumerate() {
                let ex = &exact[i];
                let diff = ex.velocity - uh[i];
                acc.u += q.weight * diff.norm_squared();
                acc.pu += q.weight * (q.projector * diff).norm_squared();
                acc.n += q.weight * uh[i].dot(&q.normal).powi(2);
                acc.grad += q.weight * (ex.covariant - q.projector * gh[i]).norm_squared();
                if let Some(ph) = &ph {
                    acc.p += q.weight * (ex.pressure - ph[i]).powi(2);
                }
                if let Some(lh) = &lh {
                    acc.lambda += q.weight * (ex.lambda - lh[i]).powi(2);
                }
            }
            acc
        })
        .collect();
    let dt = traj.times.get(1).map_or(0.0, |t1| t1 - traj.times[0]);
    let max_sqrt = |f: fn(&LevelErrors) -> f64| levels.iter().map(f).fold(0.0, f64::max).sqrt();
    let l2_sum = |f: fn(&LevelErrors) -> f64| (dt * levels.iter().skip(1).map(f).sum::<f64>()).sqrt();
    ErrorRow {
        level,
        h: disc.mesh.h,
        dt,
        ndof_u: disc.velocity.dof_count(),
        ndof_p: disc.pressure.dof_count(),
        ndof_lambda: if with_lambda { disc.lambda.dof_count() } else { 0 },
        err_u: max_sqrt(|l| l.u),
        err_pu: max_sqrt(|l| l.pu),
        err_n: max_sqrt(|l| l.n),
        err_grad: l2_sum(|l| l.grad),
        err_p: l2_sum(|l| l.p),
        err_lambda: l2_sum(|l| l.lambda),
    }
}

/// `log(e_k / e_{k+1}) / log(h_k / h_{k+1})` for consecutive pairs.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Vec<f64> {
    assert_eq!(errors.len(), hs.len());
    errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfSupEstimate {
    /// Constraint norm `L^2 x L^2`, velocity in the `a_h` norm.
    pub beta_l2: f64,
    /// Constraint norm `L^2 x H_h^-1`, velocity in the `H^1` norm.
    pub beta_h1inv: f64,
}

fn dense_from_columns(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Second-smallest generalised eigenvalue of `S x = sigma Q x` (the smallest
/// belongs to the constant pressure).
fn second_smallest_generalized(s: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::EigensolveFailure("constraint mass is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::EigensolveFailure("singular Cholesky factor".into()))?;
    let c = &linv * s * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    if eig.len() < 2 || !eig[1].is_finite() {
        return Err(Error::EigensolveFailure("too few eigenvalues".into()));
    }
    Ok(eig[1].max(0.0))
}

fn schur_complement(a: &CsrMatrix, b: &[&CsrMatrix]) -> Result<DMatrix<f64>> {
    let factor = DirectSolver::factor(a)?;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for block in b {
        let bt = block.transpose();
        for j in 0..block.ncols {
            let mut col = vec![0.0; block.nrows];
            let (rows, vals) = bt.row(j);
            for (i, v) in rows.iter().zip(vals) {
                col[*i] = *v;
            }
            columns.push(col);
        }
    }
    let solved: Vec<Vec<f64>> = columns.par_iter().map(|c| factor.solve(c)).collect();
    let bm = dense_from_columns(&columns);
    let am = dense_from_columns(&solved);
    Ok(bm.transpose() * am)
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() + b.nrows();
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), a.nrows()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// Discrete inf-sup constants from dense generalised eigenproblems on the
/// Schur complement `B^T A^-1 B`. Meant for small meshes.
pub fn estimate_infsup(disc: &Discretization) -> Result<InfSupEstimate> {
    let blocks = &disc.blocks;
    let mp = assemble_mass(&disc.pressure, &disc.ctx).to_dense();
    let ml_sparse = assemble_mass(&disc.lambda, &disc.ctx);
    let ml = ml_sparse.to_dense();

    let s = schur_complement(&disc.a_h(), &[&blocks.b_p, &blocks.b_lambda])?;
    let beta_l2 = second_smallest_generalized(&s, &block_diag(&mp, &ml))?.sqrt();

    let mut h1 = assemble_stiffness(&disc.velocity, &disc.ctx);
    h1.add_scaled(1.0, &disc.mass);
    let s1 = schur_complement(&h1, &[&blocks.b_p, &blocks.b_lambda])?;
    let mut kl = assemble_stiffness(&disc.lambda, &disc.ctx);
    kl.add_scaled(1.0, &ml_sparse);
    let dual = {
        let factor = DirectSolver::factor(&kl)?;
        let cols: Vec<Vec<f64>> = (0..ml.ncols())
            .map(|j| factor.solve(ml.column(j).as_slice()))
            .collect();
        &ml * dense_from_columns(&cols)
    };
    let dual = (&dual + dual.transpose()) * 0.5;
    let beta_h1inv = second_smallest_generalized(&s1, &block_diag(&mp, &dual))?.sqrt();
    Ok(InfSupEstimate {
        beta_l2,
        beta_h1inv,
    })
}

/// Ratio of the largest to the smallest eigenvalue magnitude of a square
/// matrix, by power and inverse iteration.
pub fn condition_estimate(m: &CsrMatrix, iterations: usize) -> Result<f64> {
    let n = m.nrows;
    let factor = DirectSolver::factor(m)?;
    let start: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let iterate = |apply: &dyn Fn(&[f64]) -> Vec<f64>| {
        let mut x = start.clone();
        let mut growth = 0.0;
        for _ in 0..iterations {
            let y = apply(&x);
            growth = norm2(&y) / norm2(&x);
            let scale = norm2(&y);
            x = y.iter().map(|v| v / scale).collect();
        }
        growth
    };
    let largest = iterate(&|x| m.mul_vec(x));
    let inv_smallest = iterate(&|x| factor.solve(x));
    Ok(largest * inv_smallest)
}

/// Condition estimate of the Stokes saddle matrix with velocity block `a_h`.
pub fn saddle_condition_estimate(disc: &Discretization) -> Result<f64> {
    let system = SaddleSystem::new(disc, &disc.a_h(), true);
    condition_estimate(&system.matrix, 60)
}

/// Maxima over quadrature points of the geometric errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricErrors {
    pub h: f64,
    pub max_distance: f64,
    pub max_normal_error: f64,
    pub max_weingarten_error: f64,
}

pub fn geometric_error_report(mesh: &HighOrderMesh, quad_degree: usize) -> Result<GeometricErrors> {
    let rule = quadrature(quad_degree)?;
    let table = GeometryTable::new(mesh, &rule)?;
    let surface = &mesh.surface;
    let mut out = GeometricErrors {
        h: mesh.h,
        max_distance: 0.0,
        max_normal_error: 0.0,
        max_weingarten_error: 0.0,
    };
    for q in &table.points {
        let p = surface.closest_point(&q.point)?;
        out.max_distance = out.max_distance.max((q.point - p).norm());
        out.max_normal_error = out.max_normal_error.max((surface.normal(&p)? - q.normal).norm());
        out.max_weingarten_error = out
            .max_weingarten_error
            .max((surface.weingarten(&p)? - q.weingarten).norm());
    }
    Ok(out)
}
