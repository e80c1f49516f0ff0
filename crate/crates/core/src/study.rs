//! Run configuration and the drivers behind the command-line tool.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::analysis::{
    eoc, error_norms, estimate_infsup, geometric_error_report, saddle_condition_estimate,
    ErrorRow, GeometricErrors, InfSupEstimate,
};
use crate::assembly::{AssemblyContext, NormalMode};
use crate::error::{Error, Result};
use crate::geometry::Surface;
use crate::mesh::vtk::{write_vtk, VtkField};
use crate::mesh::build_mesh;
use crate::problems::{ForcingMode, ProblemCache, ProblemSpec};
use crate::solver::{
    ritz_stokes_initial, unsteady_solve_cached, Degrees, Discretization, Formulation, Inertia, InitialCondition,
    SolverOptions, TimeConfig, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Sphere,
    Varying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulationKind {
    Lagrange,
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// The manufactured solution belonging to the surface.
    Manufactured,
    Zero,
}

macro_rules! keyword_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        "unknown value '{other}', expected one of: {}",
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(SurfaceKind { "sphere" => SurfaceKind::Sphere, "varying" => SurfaceKind::Varying });
keyword_enum!(FormulationKind { "lagrange" => FormulationKind::Lagrange, "penalty" => FormulationKind::Penalty });
keyword_enum!(ProblemKind { "manufactured" => ProblemKind::Manufactured, "zero" => ProblemKind::Zero });
keyword_enum!(Inertia { "plain" => Inertia::Plain, "skew" => Inertia::Skew });
keyword_enum!(NormalMode { "discrete" => NormalMode::Discrete, "improved" => NormalMode::Improved });
keyword_enum!(InitialCondition {
    "interpolation" => InitialCondition::NodalInterpolation,
    "ritz" => InitialCondition::DiscreteRitzStokes,
});
keyword_enum!(ForcingMode {
    "full" => ForcingMode::FullResidual,
    "tangential" => ForcingMode::TangentialResidual,
    "none" => ForcingMode::Unforced,
});

/// Everything a study needs. Level `l` uses `base_refine + l` refinements
/// of the icosahedron and time step `dt0 / 4^l`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub surface: SurfaceKind,
    pub problem: ProblemKind,
    pub k_u: usize,
    pub k_pr: usize,
    pub k_lambda: usize,
    pub k_g: usize,
    pub base_refine: usize,
    pub levels: usize,
    pub dt0: f64,
    pub t_end: f64,
    pub mu: f64,
    /// Penalty parameter is `tau_alpha / h^2`.
    pub tau_alpha: f64,
    pub formulation: FormulationKind,
    pub normal: NormalMode,
    pub inertia: Inertia,
    pub initial_condition: InitialCondition,
    pub forcing_mode: ForcingMode,
    pub zeroth_order: bool,
    pub quad_degree: Option<usize>,
    /// Time step exported by `export-vtk`.
    pub step: usize,
    pub out_path: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            surface: SurfaceKind::Varying,
            problem: ProblemKind::Manufactured,
            k_u: 2,
            k_pr: 1,
            k_lambda: 1,
            k_g: 3,
            base_refine: 2,
            levels: 3,
            dt0: 0.5,
            t_end: 1.0,
            mu: 0.5,
            tau_alpha: 2.5,
            formulation: FormulationKind::Lagrange,
            normal: NormalMode::Improved,
            inertia: Inertia::Plain,
            initial_condition: InitialCondition::DiscreteRitzStokes,
            forcing_mode: ForcingMode::FullResidual,
            zeroth_order: true,
            quad_degree: None,
            step: 0,
            out_path: PathBuf::from("out.csv"),
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "surface",
    "problem",
    "k_u",
    "k_pr",
    "k_lambda",
    "k_g",
    "base_refine",
    "levels",
    "dt0",
    "t_end",
    "mu",
    "tau_alpha",
    "formulation",
    "normal",
    "inertia",
    "initial_condition",
    "forcing_mode",
    "zeroth_order",
    "quad_degree",
    "step",
    "out_path",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("bad value '{value}' for {key}: {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "surface" => self.surface = value.parse()?,
            "problem" => self.problem = value.parse()?,
            "k_u" => self.k_u = parse(&key, value)?,
            "k_pr" => self.k_pr = parse(&key, value)?,
            "k_lambda" | "k_λ" => self.k_lambda = parse(&key, value)?,
            "k_g" => self.k_g = parse(&key, value)?,
            "base_refine" => self.base_refine = parse(&key, value)?,
            "levels" => self.levels = parse(&key, value)?,
            "dt0" => self.dt0 = parse(&key, value)?,
            "t_end" => self.t_end = parse(&key, value)?,
            "mu" => self.mu = parse(&key, value)?,
            "tau_alpha" => self.tau_alpha = parse(&key, value)?,
            "formulation" => self.formulation = value.parse()?,
            "normal" => self.normal = value.parse()?,
            "inertia" => self.inertia = value.parse()?,
            "initial_condition" => self.initial_condition = value.parse()?,
            "forcing_mode" => self.forcing_mode = value.parse()?,
            "zeroth_order" => self.zeroth_order = parse(&key, value)?,
            "quad_degree" => self.quad_degree = Some(parse(&key, value)?),
            "step" => self.step = parse(&key, value)?,
            "out_path" => self.out_path = PathBuf::from(value.trim()),
            "seed" => self.seed = parse(&key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k_u < 2 {
            return invalid(format!("k_u must be at least 2, got {}", self.k_u));
        }
        if self.k_pr + 1 != self.k_u {
            return invalid(format!("k_pr must equal k_u - 1, got k_pr = {}", self.k_pr));
        }
        if self.k_lambda + 1 != self.k_u && self.k_lambda != self.k_u {
            return invalid(format!("k_lambda must be k_u - 1 or k_u, got {}", self.k_lambda));
        }
        if !(1..=3).contains(&self.k_g) {
            return invalid(format!("k_g must be 1, 2 or 3, got {}", self.k_g));
        }
        if self.levels == 0 {
            return invalid("levels must be at least 1".into());
        }
        if !(self.dt0 > 0.0 && self.t_end > 0.0 && self.mu > 0.0 && self.tau_alpha > 0.0) {
            return invalid("dt0, t_end, mu and tau_alpha must be positive".into());
        }
        Ok(())
    }

    pub fn degrees(&self) -> Degrees {
        Degrees {
            velocity: self.k_u,
            pressure: self.k_pr,
            lambda: self.k_lambda,
            geometry: self.k_g,
        }
    }

    pub fn exact_surface(&self) -> Surface {
        match self.surface {
            SurfaceKind::Sphere => Surface::unit_sphere(),
            SurfaceKind::Varying => Surface::varying_curvature(),
        }
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        let spec = match (self.problem, self.surface) {
            (ProblemKind::Zero, _) => ProblemSpec::zero(self.exact_surface(), self.mu),
            (ProblemKind::Manufactured, SurfaceKind::Sphere) => ProblemSpec::sphere_killing(self.mu),
            (ProblemKind::Manufactured, SurfaceKind::Varying) => ProblemSpec::varying_stream(self.mu),
        };
        spec.with_forcing_mode(self.forcing_mode)
    }

    pub fn quad_degree(&self) -> usize {
        self.quad_degree
            .unwrap_or_else(|| AssemblyContext::default_degree(self.k_u, self.k_g))
    }

    pub fn dt(&self, level: usize) -> f64 {
        self.dt0 / 4f64.powi(level as i32)
    }

    pub fn discretization(&self, level: usize) -> Result<Discretization> {
        let mesh = build_mesh(&self.exact_surface(), self.base_refine + level, self.k_g)?;
        Discretization::new(Arc::new(mesh), self.degrees(), self.quad_degree())
    }

    pub fn time_config(&self, level: usize, h: f64) -> TimeConfig {
        let formulation = match self.formulation {
            FormulationKind::Lagrange => Formulation::Lagrange,
            FormulationKind::Penalty => Formulation::Penalty {
                tau: self.tau_alpha / (h * h),
                normal: self.normal,
            },
        };
        TimeConfig {
            dt: self.dt(level),
            t_end: self.t_end,
            mu: self.mu,
            formulation,
            inertia: self.inertia,
            zeroth_order: self.zeroth_order,
            initial_condition: self.initial_condition,
            solver: SolverOptions::default(),
        }
    }
}

/// Errors and solver diagnostics of one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub row: ErrorRow,
    pub max_constraint_residual: f64,
    pub max_pressure_mean: f64,
    pub max_linear_residual: f64,
    pub energies: Vec<f64>,
}

pub fn run_level(cfg: &RunConfig, level: usize) -> Result<LevelResult> {
    let (result, _, _) = run_level_full(cfg, level)?;
    Ok(result)
}

fn run_level_full(cfg: &RunConfig, level: usize) -> Result<(LevelResult, Discretization, Trajectory)> {
    cfg.validate()?;
    let disc = cfg.discretization(level)?;
    let problem = cfg.problem_spec();
    let cache = ProblemCache::new(&problem, &disc.ctx)?;
    let time = cfg.time_config(level, disc.mesh.h);
    let traj = unsteady_solve_cached(&disc, &problem, &cache, &time)?;
    let row = error_norms(&disc, &problem, &cache, &traj, level);
    let fold = |f: fn(&crate::solver::StepDiagnostics) -> f64| {
        traj.diagnostics.iter().map(f).fold(0.0, f64::max)
    };
    let result = LevelResult {
        row,
        max_constraint_residual: fold(|d| d.constraint_residual),
        max_pressure_mean: fold(|d| d.pressure_mean.abs()),
        max_linear_residual: fold(|d| d.linear_residual),
        energies: std::iter::once(traj.initial_energy)
            .chain(traj.diagnostics.iter().map(|d| d.kinetic_energy))
            .collect(),
    };
    Ok((result, disc, traj))
}

pub fn converge(cfg: &RunConfig) -> Result<Vec<LevelResult>> {
    (0..cfg.levels).map(|l| run_level(cfg, l)).collect()
}

/// Column-wise EOCs, one entry per row; the first row has none.
pub fn eoc_columns(rows: &[ErrorRow], err: impl Fn(&ErrorRow) -> f64) -> Vec<Option<f64>> {
    let errors: Vec<f64> = rows.iter().map(&err).collect();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    std::iter::once(None)
        .chain(eoc(&errors, &hs).into_iter().map(Some))
        .take(rows.len())
        .collect()
}

pub const ERROR_HEADER: &str = "level,h,dt,ndof_u,ndof_p,ndof_lambda,err_u_LinfL2,err_Pu_LinfL2,err_n_LinfL2,err_grad_L2L2,err_p_L2L2,eoc_u,eoc_Pu,eoc_n,eoc_grad,eoc_p";

fn sci(x: f64) -> String {
    format!("{x:.5e}")
}

fn sci_opt(x: Option<f64>) -> String {
    x.map(sci).unwrap_or_default()
}

fn error_lines(rows: &[ErrorRow], prefix: &str, out: &mut String) {
    let columns: [fn(&ErrorRow) -> f64; 5] = [
        |r| r.err_u,
        |r| r.err_pu,
        |r| r.err_n,
        |r| r.err_grad,
        |r| r.err_p,
    ];
    let eocs: Vec<Vec<Option<f64>>> = columns.iter().map(|c| eoc_columns(rows, c)).collect();
    for (i, r) in rows.iter().enumerate() {
        let mut fields = vec![
            r.level.to_string(),
            sci(r.h),
            sci(r.dt),
            r.ndof_u.to_string(),
            r.ndof_p.to_string(),
            r.ndof_lambda.to_string(),
        ];
        fields.extend(columns.iter().map(|c| sci(c(r))));
        fields.extend(eocs.iter().map(|e| sci_opt(e[i])));
        let _ = writeln!(out, "{prefix}{}", fields.join(","));
    }
}

pub fn convergence_csv(rows: &[ErrorRow]) -> String {
    let mut out = format!("{ERROR_HEADER}\n");
    error_lines(rows, "", &mut out);
    out
}

/// Penalty (`k_g = 2`, improved normal) and Lagrange (`k_g = 3`,
/// `k_lambda = k_u - 1`) on the sphere problem.
pub fn compare_configs(cfg: &RunConfig) -> [(&'static str, RunConfig); 2] {
    let base = RunConfig {
        surface: SurfaceKind::Sphere,
        ..cfg.clone()
    };
    [
        (
            "penalty",
            RunConfig {
                formulation: FormulationKind::Penalty,
                normal: NormalMode::Improved,
                k_g: 2,
                ..base.clone()
            },
        ),
        (
            "lagrange",
            RunConfig {
                formulation: FormulationKind::Lagrange,
                k_g: 3,
                k_lambda: base.k_u - 1,
                ..base
            },
        ),
    ]
}

pub fn compare(cfg: &RunConfig) -> Result<Vec<(&'static str, Vec<LevelResult>)>> {
    compare_configs(cfg)
        .into_iter()
        .map(|(name, c)| Ok((name, converge(&c)?)))
        .collect()
}

pub fn compare_csv(results: &[(&str, Vec<ErrorRow>)]) -> String {
    let mut out = format!("method,{ERROR_HEADER}\n");
    for (name, rows) in results {
        error_lines(rows, &format!("{name},"), &mut out);
    }
    out
}

pub fn geomcheck(cfg: &RunConfig) -> Result<Vec<GeometricErrors>> {
    let surface = cfg.exact_surface();
    (0..cfg.levels)
        .map(|l| {
            let mesh = build_mesh(&surface, cfg.base_refine + l, cfg.k_g)?;
            geometric_error_report(&mesh, cfg.quad_degree())
        })
        .collect()
}

pub const GEOMETRY_HEADER: &str =
    "level,h,err_dist,err_normal,err_weingarten,eoc_dist,eoc_normal,eoc_weingarten";

pub fn geometry_csv(rows: &[GeometricErrors]) -> String {
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let column = |f: fn(&GeometricErrors) -> f64| {
        let errs: Vec<f64> = rows.iter().map(f).collect();
        std::iter::once(None)
            .chain(eoc(&errs, &hs).into_iter().map(Some))
            .collect::<Vec<_>>()
    };
    let d = column(|r| r.max_distance);
    let n = column(|r| r.max_normal_error);
    let w = column(|r| r.max_weingarten_error);
    let mut out = format!("{GEOMETRY_HEADER}\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            sci(r.h),
            sci(r.max_distance),
            sci(r.max_normal_error),
            sci(r.max_weingarten_error),
            sci_opt(d[i]),
            sci_opt(n[i]),
            sci_opt(w[i]),
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfSupRow {
    pub h: f64,
    pub ndof_p: usize,
    pub ndof_lambda: usize,
    pub estimate: InfSupEstimate,
    pub condition: f64,
}

pub fn infsup(cfg: &RunConfig) -> Result<Vec<InfSupRow>> {
    cfg.validate()?;
    (0..cfg.levels)
        .map(|l| {
            let disc = cfg.discretization(l)?;
            Ok(InfSupRow {
                h: disc.mesh.h,
                ndof_p: disc.pressure.dof_count(),
                ndof_lambda: disc.lambda.dof_count(),
                estimate: estimate_infsup(&disc)?,
                condition: saddle_condition_estimate(&disc)?,
            })
        })
        .collect()
}

pub const INFSUP_HEADER: &str = "level,h,ndof_p,ndof_lambda,beta_l2,beta_h1inv,condition";

pub fn infsup_csv(rows: &[InfSupRow]) -> String {
    let mut out = format!("{INFSUP_HEADER}\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{}",
            sci(r.h),
            r.ndof_p,
            r.ndof_lambda,
            sci(r.estimate.beta_l2),
            sci(r.estimate.beta_h1inv),
            sci(r.condition),
        );
    }
    out
}

/// Solves up to time step `cfg.step` on level 0 and writes velocity,
/// pressure and multiplier as point data. Step 0 has no pressure or
/// multiplier yet; those are written as zero.
pub fn export_vtk(cfg: &RunConfig, path: &Path) -> Result<()> {
    cfg.validate()?;
    let disc = cfg.discretization(0)?;
    let dt = cfg.dt(0);
    let problem = cfg.problem_spec();
    let traj = if cfg.step == 0 {
        let time = cfg.time_config(0, disc.mesh.h);
        let interpolant = disc
            .velocity
            .interpolate_lifted_vector(|x| problem.velocity_at(x, 0.0))?;
        let u0 = match cfg.initial_condition {
            InitialCondition::NodalInterpolation => interpolant,
            InitialCondition::DiscreteRitzStokes => {
                ritz_stokes_initial(&disc, &interpolant, time.formulation, &time.solver)?
            }
        };
        Trajectory {
            times: vec![0.0],
            velocity: vec![u0],
            pressure: Vec::new(),
            lambda: Vec::new(),
            diagnostics: Vec::new(),
            initial_energy: 0.0,
        }
    } else {
        let mut c = cfg.clone();
        c.t_end = dt * cfg.step as f64;
        let cache = ProblemCache::new(&problem, &disc.ctx)?;
        unsteady_solve_cached(&disc, &problem, &cache, &c.time_config(0, disc.mesh.h))?
    };
    let velocity = traj.velocity.last().cloned().unwrap_or_default();
    let pressure = traj
        .pressure
        .last()
        .cloned()
        .unwrap_or_else(|| vec![0.0; disc.pressure.dof_count()]);
    let lambda = traj
        .lambda
        .last()
        .filter(|l| !l.is_empty())
        .cloned()
        .unwrap_or_else(|| vec![0.0; disc.lambda.dof_count()]);
    let fields = [
        VtkField {
            name: "velocity",
            components: 3,
            eval: Box::new(|e, r| disc.velocity.value_at(&velocity, e, r)),
        },
        VtkField {
            name: "pressure",
            components: 1,
            eval: Box::new(|e, r| disc.pressure.value_at(&pressure, e, r)),
        },
        VtkField {
            name: "lambda",
            components: 1,
            eval: Box::new(|e, r| disc.lambda.value_at(&lambda, e, r)),
        },
    ];
    write_vtk(path, &disc.mesh, &fields)
}
