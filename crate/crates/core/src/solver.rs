//! Linear solves, steady Stokes problems and the backward-Euler time loop.
//!
//! The monolithic unknown vector is laid out as `[u | p | lambda | r]`, where
//! `r` is the scalar multiplier of the pressure mean-value constraint. The
//! penalty formulation has no `lambda` block.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;

use crate::assembly::{
    assemble_b_l, assemble_convection, assemble_load, assemble_mass, assemble_penalty,
    assemble_skew_convection, assemble_strain, AssemblyContext, ConstraintBlocks, NormalMode,
};
use crate::error::{Error, Result};
use crate::fespace::FeSpace;
use crate::mesh::HighOrderMesh;
use crate::problems::{ProblemCache, ProblemSpec};
use crate::sparse::{dot, max_abs, norm2, CsrMatrix};

/// Sparse LU factorisation of a square CSR matrix.
///
/// The CSR arrays of `A` are the CSC arrays of `A^T`; faer factors `A^T` and
/// solves with its transpose.
pub struct DirectSolver {
    n: usize,
    symbolic: SymbolicLu<usize>,
    lu: Lu<usize, f64>,
}

fn factor_error(e: faer::sparse::linalg::LuError) -> Error {
    Error::SingularSystem(format!("{e:?}"))
}

impl DirectSolver {
    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        assert_eq!(m.nrows, m.ncols, "matrix must be square");
        let symbolic_ref =
            SymbolicSparseColMatRef::new_checked(m.nrows, m.ncols, &m.row_ptr, None, &m.col_idx);
        let symbolic = SymbolicLu::try_new(symbolic_ref)
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), SparseColMatRef::new(symbolic_ref, &m.values))
            .map_err(factor_error)?;
        Ok(Self {
            n: m.nrows,
            symbolic,
            lu,
        })
    }

    /// New numeric factorisation for a matrix with the original pattern.
    pub fn refactor(&mut self, m: &CsrMatrix) -> Result<()> {
        let symbolic_ref =
            SymbolicSparseColMatRef::new_checked(m.nrows, m.ncols, &m.row_ptr, None, &m.col_idx);
        self.lu = Lu::try_new_with_symbolic(self.symbolic.clone(), SparseColMatRef::new(symbolic_ref, &m.values))
            .map_err(factor_error)?;
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_transpose_in_place(&mut x);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Direct,
    /// Restarted GMRES, right-preconditioned by the sparse LU.
    Gmres { restart: usize, max_iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub backend: Backend,
    /// Target relative residual `|Ax - b| / |b|`.
    pub tolerance: f64,
    /// In time loops, an older factorisation preconditions GMRES on the
    /// current matrix as long as it converges within this many iterations;
    /// 0 refactors every step.
    pub reuse_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Direct,
            tolerance: 1e-10,
            reuse_iterations: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
}

fn relative_residual(m: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm2(b);
    let r: Vec<f64> = m.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

/// Solves with an existing factorisation of `m` (or of a nearby matrix used
/// as preconditioner).
pub fn solve_with(
    m: &CsrMatrix,
    factor: &DirectSolver,
    b: &[f64],
    options: &SolverOptions,
) -> Result<LinearSolution> {
    if b.iter().all(|v| *v == 0.0) {
        return Ok(LinearSolution {
            x: vec![0.0; b.len()],
            relative_residual: 0.0,
            iterations: 0,
        });
    }
    match options.backend {
        Backend::Direct => {
            let mut x = factor.solve(b);
            let mut res = relative_residual(m, &x, b);
            let mut iterations = 1;
            // iterative refinement for ill-conditioned saddle systems
            while res > options.tolerance && iterations < 5 {
                let r: Vec<f64> = m.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
                let dx = factor.solve(&r);
                for (xi, d) in x.iter_mut().zip(&dx) {
                    *xi += d;
                }
                res = relative_residual(m, &x, b);
                iterations += 1;
            }
            if !res.is_finite() {
                return Err(Error::SingularSystem(format!("non-finite residual {res}")));
            }
            Ok(LinearSolution {
                x,
                relative_residual: res,
                iterations,
            })
        }
        Backend::Gmres {
            restart,
            max_iterations,
        } => gmres(m, b, |r| factor.solve(r), restart, max_iterations, options.tolerance),
    }
}

/// Solves `m x = b`; fresh factorisation.
pub fn solve_linear(m: &CsrMatrix, b: &[f64], options: &SolverOptions) -> Result<LinearSolution> {
    let factor = DirectSolver::factor(m)?;
    solve_with(m, &factor, b, options)
}

/// Restarted GMRES with right preconditioner `precond`.
pub fn gmres(
    m: &CsrMatrix,
    b: &[f64],
    precond: impl Fn(&[f64]) -> Vec<f64>,
    restart: usize,
    max_iterations: usize,
    tolerance: f64,
) -> Result<LinearSolution> {
    let n = b.len();
    let bn = norm2(b);
    let mut x = vec![0.0; n];
    let mut total = 0;
    let restart = restart.max(1);
    loop {
        let r: Vec<f64> = m.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
        let beta = norm2(&r);
        if beta / bn <= tolerance {
            return Ok(LinearSolution {
                x,
                relative_residual: beta / bn,
                iterations: total,
            });
        }
        if total >= max_iterations {
            return Err(Error::SolverNonConvergence {
                iterations: total,
                residual: beta / bn,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart && total < max_iterations {
            let z = precond(&basis[k]);
            let mut w = m.mul_vec(&z);
            zs.push(z);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i][k] = hij;
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= hij * vj;
                }
            }
            let wn = norm2(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                return Err(Error::SingularSystem("GMRES breakdown".into()));
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k += 1;
            if g[k].abs() / bn <= tolerance || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = ((i + 1)..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, z) in y.iter().zip(&zs) {
            for (xj, zj) in x.iter_mut().zip(z) {
                *xj += yi * zj;
            }
        }
    }
}

/// Polynomial degrees of the mixed method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Degrees {
    pub velocity: usize,
    pub pressure: usize,
    pub lambda: usize,
    pub geometry: usize,
}

impl Degrees {
    pub fn validate(&self) -> Result<()> {
        let ok = self.velocity >= 2
            && self.pressure + 1 == self.velocity
            && (self.lambda + 1 == self.velocity || self.lambda == self.velocity)
            && (1..=3).contains(&self.geometry)
            && self.velocity <= 3;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "need k_u in 2..=3, k_pr = k_u - 1, k_lambda in {{k_u - 1, k_u}}, k_g in 1..=3; got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Formulation {
    Lagrange,
    Penalty { tau: f64, normal: NormalMode },
}

/// Spaces and the time-independent matrices on one mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Arc<HighOrderMesh>,
    pub degrees: Degrees,
    pub ctx: AssemblyContext,
    pub velocity: FeSpace,
    pub pressure: FeSpace,
    pub lambda: FeSpace,
    /// Vector mass matrix.
    pub mass: CsrMatrix,
    /// Strain part of `a_h`.
    pub strain: CsrMatrix,
    pub blocks: ConstraintBlocks,
}

impl Discretization {
    pub fn new(mesh: Arc<HighOrderMesh>, degrees: Degrees, quad_degree: usize) -> Result<Self> {
        degrees.validate()?;
        if mesh.geometric_degree != degrees.geometry {
            return Err(Error::InvalidConfig(format!(
                "mesh has geometric degree {}, expected {}",
                mesh.geometric_degree, degrees.geometry
            )));
        }
        let ctx = AssemblyContext::new(Arc::clone(&mesh), quad_degree)?;
        let velocity = FeSpace::vector(&mesh, degrees.velocity);
        let pressure = FeSpace::scalar(&mesh, degrees.pressure);
        let lambda = FeSpace::scalar(&mesh, degrees.lambda);
        let mass = assemble_mass(&velocity, &ctx);
        let strain = assemble_strain(&velocity, &ctx);
        let blocks = assemble_b_l(&velocity, &pressure, &lambda, &ctx);
        Ok(Self {
            mesh,
            degrees,
            ctx,
            velocity,
            pressure,
            lambda,
            mass,
            strain,
            blocks,
        })
    }

    /// `a_h = strain + mass`.
    pub fn a_h(&self) -> CsrMatrix {
        let mut a = self.strain.clone();
        a.add_scaled(1.0, &self.mass);
        a
    }

    pub fn penalty(&self, tau: f64, normal: NormalMode) -> CsrMatrix {
        assemble_penalty(&self.velocity, &self.ctx, tau, normal)
    }

    /// `max |b_h^L(u, {q, xi})|` over pressure and multiplier basis functions.
    pub fn constraint_residual(&self, u: &[f64], with_lambda: bool) -> f64 {
        let bp = max_abs(&self.blocks.b_p.transpose_mul_vec(u));
        if with_lambda {
            bp.max(max_abs(&self.blocks.b_lambda.transpose_mul_vec(u)))
        } else {
            bp
        }
    }

    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        dot(&self.blocks.mean, p)
    }

    /// `|u|^2_{L^2(Gamma_h)}`.
    pub fn kinetic_energy(&self, u: &[f64]) -> f64 {
        self.mass.bilinear(u, u)
    }
}

/// The monolithic saddle-point matrix with a replaceable velocity block.
pub struct SaddleSystem {
    pub matrix: CsrMatrix,
    pub n_u: usize,
    pub n_p: usize,
    pub n_lambda: usize,
    velocity_slots: Vec<usize>,
}

impl SaddleSystem {
    /// `velocity_block` fixes the pattern of the velocity block (values are
    /// copied as well).
    pub fn new(disc: &Discretization, velocity_block: &CsrMatrix, with_lambda: bool) -> Self {
        let n_u = disc.velocity.dof_count();
        let n_p = disc.pressure.dof_count();
        let n_lambda = if with_lambda { disc.lambda.dof_count() } else { 0 };
        let r = n_u + n_p + n_lambda;
        let n = r + 1;
        let mut triplets = Vec::with_capacity(velocity_block.nnz() + 4 * disc.blocks.b_p.nnz());
        for i in 0..n_u {
            let (cols, vals) = velocity_block.row(i);
            for (j, v) in cols.iter().zip(vals) {
                triplets.push((i, *j, *v));
            }
        }
        let mut couple = |block: &CsrMatrix, offset: usize| {
            for i in 0..block.nrows {
                let (cols, vals) = block.row(i);
                for (j, v) in cols.iter().zip(vals) {
                    triplets.push((i, offset + j, *v));
                    triplets.push((offset + j, i, *v));
                }
            }
        };
        couple(&disc.blocks.b_p, n_u);
        if with_lambda {
            couple(&disc.blocks.b_lambda, n_u + n_p);
        }
        for (j, m) in disc.blocks.mean.iter().enumerate() {
            triplets.push((n_u + j, r, *m));
            triplets.push((r, n_u + j, *m));
        }
        let matrix = CsrMatrix::from_triplets(n, n, &triplets);
        let mut velocity_slots = Vec::with_capacity(velocity_block.nnz());
        for i in 0..n_u {
            let (cols, _) = velocity_block.row(i);
            for j in cols {
                velocity_slots.push(matrix.slot(i, *j).expect("velocity entry"));
            }
        }
        Self {
            matrix,
            n_u,
            n_p,
            n_lambda,
            velocity_slots,
        }
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows
    }

    /// Replaces the velocity block; its pattern must match the original.
    pub fn set_velocity_block(&mut self, block: &CsrMatrix) {
        assert_eq!(block.nnz(), self.velocity_slots.len());
        for (slot, v) in self.velocity_slots.iter().zip(&block.values) {
            self.matrix.values[*slot] = *v;
        }
    }

    pub fn rhs(&self, velocity_rhs: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.size()];
        b[..self.n_u].copy_from_slice(velocity_rhs);
        b
    }

    pub fn split(&self, x: &[f64]) -> SaddleSolution {
        let (u, rest) = x.split_at(self.n_u);
        let (p, rest) = rest.split_at(self.n_p);
        let (lambda, r) = rest.split_at(self.n_lambda);
        SaddleSolution {
            velocity: u.to_vec(),
            pressure: p.to_vec(),
            lambda: lambda.to_vec(),
            mean_multiplier: r[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Empty for the penalty formulation.
    pub lambda: Vec<f64>,
    pub mean_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StokesSolution {
    pub solution: SaddleSolution,
    pub relative_residual: f64,
    pub constraint_residual: f64,
}

/// Solves `2 mu S u + M u + B {p, lambda} = rhs`, `B^T u = 0`, `int p = 0`.
pub fn steady_stokes_solve(
    disc: &Discretization,
    mu: f64,
    velocity_rhs: &[f64],
    options: &SolverOptions,
) -> Result<StokesSolution> {
    let mut block = disc.strain.clone();
    block.scale(2.0 * mu);
    block.add_scaled(1.0, &disc.mass);
    let system = SaddleSystem::new(disc, &block, true);
    let sol = solve_linear(&system.matrix, &system.rhs(velocity_rhs), options)?;
    let solution = system.split(&sol.x);
    Ok(StokesSolution {
        constraint_residual: disc.constraint_residual(&solution.velocity, true),
        solution,
        relative_residual: sol.relative_residual,
    })
}

/// Discrete Ritz-Stokes projection of a field given by its nodal interpolant:
/// `a_h(R, v) + b(v, {P, L}) = a_h(I u0, v)`, `b(R, .) = 0`.
pub fn ritz_stokes_initial(
    disc: &Discretization,
    interpolant: &[f64],
    formulation: Formulation,
    options: &SolverOptions,
) -> Result<Vec<f64>> {
    let a = disc.a_h();
    let rhs = a.mul_vec(interpolant);
    let (block, with_lambda) = match formulation {
        Formulation::Lagrange => (a, true),
        Formulation::Penalty { tau, normal } => {
            let mut b = a;
            b.add_scaled(1.0, &disc.penalty(tau, normal));
            (b, false)
        }
    };
    let system = SaddleSystem::new(disc, &block, with_lambda);
    let sol = solve_linear(&system.matrix, &system.rhs(&rhs), options)?;
    Ok(system.split(&sol.x).velocity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inertia {
    Plain,
    Skew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCondition {
    NodalInterpolation,
    DiscreteRitzStokes,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub mu: f64,
    pub formulation: Formulation,
    pub inertia: Inertia,
    pub zeroth_order: bool,
    pub initial_condition: InitialCondition,
    pub solver: SolverOptions,
}

impl TimeConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.t_end < self.dt * (1.0 - 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "need dt > 0 and t_end >= dt (dt = {}, t_end = {})",
                self.dt, self.t_end
            )));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidConfig(format!("viscosity must be positive, got {}", self.mu)));
        }
        if let Formulation::Penalty { tau, .. } = self.formulation {
            if !(tau > 0.0) {
                return Err(Error::InvalidConfig(format!("penalty tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub linear_residual: f64,
    pub kinetic_energy: f64,
    pub constraint_residual: f64,
    pub pressure_mean: f64,
}

/// Discrete solution history: `N + 1` velocities, `N` pressures and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub velocity: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    /// One entry per time step `n = 1..=N`.
    pub diagnostics: Vec<StepDiagnostics>,
    pub initial_energy: f64,
}

/// One time-step solve. A factorisation of an earlier step preconditions
/// GMRES; when that stalls, the current matrix is factorised afresh.
fn step_solve(
    m: &CsrMatrix,
    factor: &mut Option<DirectSolver>,
    b: &[f64],
    options: &SolverOptions,
) -> Result<LinearSolution> {
    if options.reuse_iterations > 0 && options.backend == Backend::Direct {
        if let Some(f) = factor.as_ref() {
            let budget = options.reuse_iterations;
            // a tighter target keeps reused steps within 1e-10 of fresh solves
            if let Ok(sol) = gmres(m, b, |r| f.solve(r), budget, budget, options.tolerance * 1e-2) {
                return Ok(sol);
            }
        }
    }
    match factor.as_mut() {
        Some(f) => f.refactor(m)?,
        None => *factor = Some(DirectSolver::factor(m)?),
    }
    solve_with(m, factor.as_ref().expect("factorised"), b, options)
}

/// Backward Euler with convection frozen at the previous step.
pub fn unsteady_solve(
    disc: &Discretization,
    problem: &ProblemSpec,
    config: &TimeConfig,
) -> Result<Trajectory> {
    let cache = ProblemCache::new(problem, &disc.ctx)?;
    unsteady_solve_cached(disc, problem, &cache, config)
}

pub fn unsteady_solve_cached(
    disc: &Discretization,
    problem: &ProblemSpec,
    cache: &ProblemCache,
    config: &TimeConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let steps = config.steps();
    let dt = config.t_end / steps as f64;
    let with_lambda = config.formulation == Formulation::Lagrange;

    let interpolant = disc
        .velocity
        .interpolate_lifted_vector(|x| problem.velocity_at(x, 0.0))?;
    let u0 = match config.initial_condition {
        InitialCondition::NodalInterpolation => interpolant,
        InitialCondition::DiscreteRitzStokes => {
            ritz_stokes_initial(disc, &interpolant, config.formulation, &config.solver)?
        }
    };

    // time-independent part of the velocity block
    let mut base = disc.strain.clone();
    base.scale(2.0 * config.mu);
    base.add_scaled(1.0 / dt + if config.zeroth_order { 1.0 } else { 0.0 }, &disc.mass);
    if let Formulation::Penalty { tau, normal } = config.formulation {
        base.add_scaled(1.0, &disc.penalty(tau, normal));
    }
    let mut system = SaddleSystem::new(disc, &base, with_lambda);
    let mut factor: Option<DirectSolver> = None;

    let initial_energy = disc.kinetic_energy(&u0);
    let blow_up = 1e6 * initial_energy.max(1.0);
    let mut traj = Trajectory {
        times: vec![0.0],
        velocity: vec![u0],
        pressure: Vec::with_capacity(steps),
        lambda: Vec::with_capacity(steps),
        diagnostics: Vec::with_capacity(steps),
        initial_energy,
    };
    for n in 1..=steps {
        let t = n as f64 * dt;
        let prev = traj.velocity.last().expect("initial velocity");
        let convection = match config.inertia {
            Inertia::Plain => assemble_convection(&disc.velocity, &disc.ctx, prev),
            Inertia::Skew => assemble_skew_convection(&disc.velocity, &disc.ctx, prev),
        };
        let mut block = base.clone();
        block.add_scaled(1.0, &convection);
        system.set_velocity_block(&block);

        let mut rhs_u = assemble_load(&disc.velocity, &disc.ctx, &cache.forcing(problem, t));
        for (r, m) in rhs_u.iter_mut().zip(disc.mass.mul_vec(prev)) {
            *r += m / dt;
        }
        let rhs = system.rhs(&rhs_u);
        let sol = step_solve(&system.matrix, &mut factor, &rhs, &config.solver)?;
        let split = system.split(&sol.x);
        let energy = disc.kinetic_energy(&split.velocity);
        if !energy.is_finite() || energy > blow_up {
            return Err(Error::BlowUp { step: n, energy });
        }
        traj.diagnostics.push(StepDiagnostics {
            linear_residual: sol.relative_residual,
            kinetic_energy: energy,
            constraint_residual: disc.constraint_residual(&split.velocity, with_lambda),
            pressure_mean: disc.pressure_mean(&split.pressure),
        });
        traj.times.push(t);
        traj.velocity.push(split.velocity);
        traj.pressure.push(split.pressure);
        traj.lambda.push(split.lambda);
    }
    Ok(traj)
}
