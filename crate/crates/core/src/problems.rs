//! Manufactured solutions, the finite-difference surface-operator oracle and
//! the resulting forcing terms.
//!
//! Exact fields are sums of separable modes `alpha(t) U(x)`. All spatial
//! derivatives come from central differences of `U o pi`, i.e. of the
//! extension that is constant in the normal direction.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::assembly::AssemblyContext;
use crate::error::Result;
use crate::geometry::{tangent_projector, Mat3, Surface, Vec3};

pub type VectorField = Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;
/// Time factor returning `(alpha(t), alpha'(t))`.
pub type TimeFactor = fn(f64) -> (f64, f64);

/// Finite-difference evaluation of surface differential operators.
#[derive(Debug, Clone)]
pub struct Oracle<'a> {
    pub surface: &'a Surface,
    /// Step for first derivatives.
    pub step: f64,
    /// Outer step for the nested second derivatives.
    pub outer_step: f64,
}

/// Surface operators of a vector field at one surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceOperators {
    /// `grad_Gamma u`, row `i` the tangential gradient of `u_i`.
    pub gradient: Mat3,
    /// `P grad_Gamma u`.
    pub covariant: Mat3,
    /// `E(u)`, symmetric part of the covariant gradient.
    pub strain: Mat3,
    pub divergence: f64,
    /// Row-wise surface divergence of `E(u)`.
    pub div_strain: Vec3,
}

impl<'a> Oracle<'a> {
    pub fn new(surface: &'a Surface) -> Self {
        Self::with_steps(surface, 1e-5, 1e-4)
    }

    pub fn with_steps(surface: &'a Surface, step: f64, outer_step: f64) -> Self {
        Self {
            surface,
            step,
            outer_step,
        }
    }

    /// Ambient Jacobian of `f o pi` at `x`; column `j` is the derivative along `e_j`.
    pub fn ambient_jacobian(&self, f: &dyn Fn(&Vec3) -> Vec3, x: &Vec3) -> Result<Mat3> {
        let mut d = Mat3::zeros();
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = self.step;
            let plus = f(&self.surface.closest_point(&(x + e))?);
            let minus = f(&self.surface.closest_point(&(x - e))?);
            d.set_column(j, &((plus - minus) / (2.0 * self.step)));
        }
        Ok(d)
    }

    pub fn scalar_gradient(&self, f: &dyn Fn(&Vec3) -> f64, x: &Vec3) -> Result<Vec3> {
        let mut g = Vec3::zeros();
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = self.step;
            let plus = f(&self.surface.closest_point(&(x + e))?);
            let minus = f(&self.surface.closest_point(&(x - e))?);
            g[j] = (plus - minus) / (2.0 * self.step);
        }
        let p = self.surface.closest_point(x)?;
        Ok(self.surface.projector(&p)? * g)
    }

    /// `grad_Gamma u = D P`.
    pub fn tangential_gradient(&self, f: &dyn Fn(&Vec3) -> Vec3, x: &Vec3) -> Result<Mat3> {
        let p = self.surface.closest_point(x)?;
        Ok(self.ambient_jacobian(f, x)? * self.surface.projector(&p)?)
    }

    pub fn strain(&self, f: &dyn Fn(&Vec3) -> Vec3, x: &Vec3) -> Result<Mat3> {
        let p = self.surface.closest_point(x)?;
        let proj = self.surface.projector(&p)?;
        let cov = proj * self.ambient_jacobian(f, &p)? * proj;
        Ok((cov + cov.transpose()) * 0.5)
    }

    /// `div_Gamma E(u)` by nested differences of `E o pi`.
    pub fn div_strain(&self, f: &dyn Fn(&Vec3) -> Vec3, x: &Vec3) -> Result<Vec3> {
        let p = self.surface.closest_point(x)?;
        let proj = self.surface.projector(&p)?;
        let mut out = Vec3::zeros();
        for l in 0..3 {
            let mut e = Vec3::zeros();
            e[l] = self.outer_step;
            let plus = self.strain(f, &(p + e))?;
            let minus = self.strain(f, &(p - e))?;
            let d_l = (plus - minus) / (2.0 * self.outer_step);
            for i in 0..3 {
                for j in 0..3 {
                    out[i] += d_l[(i, j)] * proj[(l, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn operators(&self, f: &dyn Fn(&Vec3) -> Vec3, x: &Vec3) -> Result<SurfaceOperators> {
        let p = self.surface.closest_point(x)?;
        let proj = self.surface.projector(&p)?;
        let gradient = self.ambient_jacobian(f, &p)? * proj;
        let covariant = proj * gradient;
        Ok(SurfaceOperators {
            gradient,
            covariant,
            strain: (covariant + covariant.transpose()) * 0.5,
            divergence: gradient.trace(),
            div_strain: self.div_strain(f, &p)?,
        })
    }

    /// Surface divergence of a vector field.
    pub fn divergence(&self, f: &dyn Fn(&Vec3) -> Vec3, x: &Vec3) -> Result<f64> {
        Ok(self.tangential_gradient(f, x)?.trace())
    }
}

/// Richardson extrapolation of a second-order difference quotient computed
/// with steps `h` and `h / ratio`.
pub fn richardson(coarse: f64, fine: f64, ratio: f64) -> f64 {
    let r2 = ratio * ratio;
    (r2 * fine - coarse) / (r2 - 1.0)
}

/// Surface curl `n x grad_Gamma psi` by the oracle.
pub fn surface_curl(
    surface: &Surface,
    psi: &dyn Fn(&Vec3, f64) -> f64,
    x: &Vec3,
    t: f64,
) -> Result<Vec3> {
    let p = surface.closest_point(x)?;
    let grad = Oracle::new(surface).scalar_gradient(&|y| psi(y, t), &p)?;
    Ok(surface.normal(&p)?.cross(&grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcingMode {
    /// The whole momentum residual, normal part included; exact multiplier 0.
    FullResidual,
    /// Tangential part only; exact multiplier `2 mu n . div_Gamma E(u)`.
    TangentialResidual,
    /// No forcing: the velocity fields only supply initial data.
    Unforced,
}

/// Which terms of the momentum operator enter the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualTerms {
    pub time_derivative: bool,
    pub convection: bool,
    pub zeroth_order: bool,
}

impl Default for ResidualTerms {
    fn default() -> Self {
        Self {
            time_derivative: true,
            convection: true,
            zeroth_order: true,
        }
    }
}

#[derive(Clone)]
pub struct VelocityMode {
    pub time: TimeFactor,
    pub field: VectorField,
}

#[derive(Clone)]
pub struct PressureMode {
    pub time: TimeFactor,
    pub field: ScalarField,
}

/// A manufactured solution on an exact surface.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub surface: Surface,
    pub velocity: Vec<VelocityMode>,
    pub pressure: Vec<PressureMode>,
    pub forcing_mode: ForcingMode,
    pub terms: ResidualTerms,
    pub mu: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("surface", &self.surface)
            .field("velocity_modes", &self.velocity.len())
            .field("pressure_modes", &self.pressure.len())
            .field("forcing_mode", &self.forcing_mode)
            .field("terms", &self.terms)
            .field("mu", &self.mu)
            .finish()
    }
}

fn constant_in_time(_t: f64) -> (f64, f64) {
    (1.0, 0.0)
}

fn stream_factor(t: f64) -> (f64, f64) {
    (1.0 - 2.0 * t, -2.0)
}

fn killing_growth(t: f64) -> (f64, f64) {
    let b = 2.0 + 0.5 * t;
    (b * b * b, 1.5 * b * b)
}

fn cubic_growth(t: f64) -> (f64, f64) {
    let b = 1.0 + t;
    (b * b * b, 3.0 * b * b)
}

/// `4 (-x2, x1, 0)`, the rotation field about the `x3` axis.
pub fn killing_field(x: &Vec3) -> Vec3 {
    Vec3::new(-4.0 * x[1], 4.0 * x[0], 0.0)
}

/// `cos(2 pi x1) cos(2 pi x2) cos(2 pi x3) / (2 pi)` and its ambient gradient.
fn stream_function(x: &Vec3) -> (f64, Vec3) {
    let (s1, c1) = (2.0 * PI * x[0]).sin_cos();
    let (s2, c2) = (2.0 * PI * x[1]).sin_cos();
    let (s3, c3) = (2.0 * PI * x[2]).sin_cos();
    (
        c1 * c2 * c3 / (2.0 * PI),
        Vec3::new(-s1 * c2 * c3, -c1 * s2 * c3, -c1 * c2 * s3),
    )
}

impl ProblemSpec {
    /// Stream-function solution on the varying-curvature surface:
    /// `u = curl_Gamma psi`, `psi = (1 - 2t) cos(2 pi x1) cos(2 pi x2) cos(2 pi x3) / (2 pi)`,
    /// `p = sin(pi x1) sin(2 pi x2) sin(2 pi x3)`.
    pub fn varying_stream(mu: f64) -> Self {
        let surface = Surface::varying_curvature();
        let s = surface.clone();
        let curl: VectorField = Arc::new(move |x: &Vec3| {
            let n = s.normal(x).expect("point on surface");
            n.cross(&stream_function(x).1)
        });
        Self {
            name: "varying-stream".into(),
            surface,
            velocity: vec![VelocityMode {
                time: stream_factor,
                field: curl,
            }],
            pressure: vec![PressureMode {
                time: constant_in_time,
                field: Arc::new(|x: &Vec3| {
                    (PI * x[0]).sin() * (2.0 * PI * x[1]).sin() * (2.0 * PI * x[2]).sin()
                }),
            }],
            forcing_mode: ForcingMode::FullResidual,
            terms: ResidualTerms::default(),
            mu,
        }
    }

    /// Killing-field solution on the unit sphere: `u = (1 + x3 (2 + t/2)^3) K`,
    /// `K = 4 (-x2, x1, 0)`, `p = (1 + t)^3 x1 x2^2 x3`.
    pub fn sphere_killing(mu: f64) -> Self {
        Self {
            name: "sphere-killing".into(),
            surface: Surface::unit_sphere(),
            velocity: vec![
                VelocityMode {
                    time: constant_in_time,
                    field: Arc::new(killing_field),
                },
                VelocityMode {
                    time: killing_growth,
                    field: Arc::new(|x: &Vec3| killing_field(x) * x[2]),
                },
            ],
            pressure: vec![PressureMode {
                time: cubic_growth,
                field: Arc::new(|x: &Vec3| x[0] * x[1] * x[1] * x[2]),
            }],
            forcing_mode: ForcingMode::FullResidual,
            terms: ResidualTerms::default(),
            mu,
        }
    }

    pub fn zero(surface: Surface, mu: f64) -> Self {
        Self {
            name: "zero".into(),
            surface,
            velocity: Vec::new(),
            pressure: Vec::new(),
            forcing_mode: ForcingMode::FullResidual,
            terms: ResidualTerms::default(),
            mu,
        }
    }

    /// Time-independent Stokes data on the unit sphere: `u = x3 K`,
    /// `p = x1 x2^2 x3`, no inertia.
    pub fn sphere_steady(mu: f64) -> Self {
        Self {
            name: "sphere-steady".into(),
            surface: Surface::unit_sphere(),
            velocity: vec![VelocityMode {
                time: constant_in_time,
                field: Arc::new(|x: &Vec3| killing_field(x) * x[2]),
            }],
            pressure: vec![PressureMode {
                time: constant_in_time,
                field: Arc::new(|x: &Vec3| x[0] * x[1] * x[1] * x[2]),
            }],
            forcing_mode: ForcingMode::FullResidual,
            terms: ResidualTerms {
                time_derivative: false,
                convection: false,
                zeroth_order: true,
            },
            mu,
        }
    }

    pub fn with_forcing_mode(mut self, mode: ForcingMode) -> Self {
        self.forcing_mode = mode;
        self
    }

    pub fn with_terms(mut self, terms: ResidualTerms) -> Self {
        self.terms = terms;
        self
    }

    pub fn velocity_at(&self, x: &Vec3, t: f64) -> Vec3 {
        self.velocity
            .iter()
            .fold(Vec3::zeros(), |acc, m| acc + (m.field)(x) * (m.time)(t).0)
    }

    pub fn time_derivative_at(&self, x: &Vec3, t: f64) -> Vec3 {
        self.velocity
            .iter()
            .fold(Vec3::zeros(), |acc, m| acc + (m.field)(x) * (m.time)(t).1)
    }

    pub fn pressure_at(&self, x: &Vec3, t: f64) -> f64 {
        self.pressure
            .iter()
            .map(|m| (m.field)(x) * (m.time)(t).0)
            .sum()
    }

    /// Forcing at a surface point from the oracle.
    pub fn forcing(&self, x: &Vec3, t: f64) -> Result<Vec3> {
        self.forcing_with(&Oracle::new(&self.surface), x, t)
    }

    pub fn forcing_with(&self, oracle: &Oracle<'_>, x: &Vec3, t: f64) -> Result<Vec3> {
        let p = self.surface.closest_point(x)?;
        let n = self.surface.normal(&p)?;
        let mut point = PointData::default();
        for m in &self.velocity {
            point.modes.push(ModeData::new(oracle, &m.field, &p)?);
        }
        for m in &self.pressure {
            let f = &m.field;
            point.pressure.push((f(&p), oracle.scalar_gradient(&|y| f(y), &p)?));
        }
        point.normal = n;
        point.projector = tangent_projector(&n);
        Ok(point.state(self, t).forcing)
    }

    /// Exact multiplier at a surface point.
    pub fn lambda_at(&self, x: &Vec3, t: f64) -> Result<f64> {
        if self.forcing_mode != ForcingMode::TangentialResidual || self.velocity.is_empty() {
            return Ok(0.0);
        }
        let oracle = Oracle::new(&self.surface);
        let p = self.surface.closest_point(x)?;
        let n = self.surface.normal(&p)?;
        let mut div = Vec3::zeros();
        for m in &self.velocity {
            let f = &m.field;
            div += oracle.div_strain(&|y| f(y), &p)? * (m.time)(t).0;
        }
        Ok(2.0 * self.mu * n.dot(&div))
    }
}

/// The two manufactured problems plus the zero problem.
pub fn builtin_problems() -> Vec<ProblemSpec> {
    vec![
        ProblemSpec::varying_stream(0.5),
        ProblemSpec::sphere_killing(0.5),
        ProblemSpec::zero(Surface::unit_sphere(), 0.5),
    ]
}

#[derive(Debug, Clone, Default)]
struct ModeData {
    value: Vec3,
    gradient: Mat3,
    div_strain: Vec3,
}

impl ModeData {
    fn new(oracle: &Oracle<'_>, field: &VectorField, p: &Vec3) -> Result<Self> {
        let f = |y: &Vec3| field(y);
        Ok(Self {
            value: field(p),
            gradient: oracle.tangential_gradient(&f, p)?,
            div_strain: oracle.div_strain(&f, p)?,
        })
    }
}

#[derive(Debug, Clone, Default)]
struct PointData {
    normal: Vec3,
    projector: Mat3,
    modes: Vec<ModeData>,
    pressure: Vec<(f64, Vec3)>,
}

/// Exact quantities at one point and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactState {
    pub velocity: Vec3,
    /// `P grad_Gamma u`.
    pub covariant: Mat3,
    pub pressure: f64,
    pub lambda: f64,
    pub forcing: Vec3,
}

impl PointData {
    fn state(&self, problem: &ProblemSpec, t: f64) -> ExactState {
        let mut u = Vec3::zeros();
        let mut dt_u = Vec3::zeros();
        let mut grad = Mat3::zeros();
        let mut div_e = Vec3::zeros();
        for (mode, data) in problem.velocity.iter().zip(&self.modes) {
            let (a, da) = (mode.time)(t);
            u += data.value * a;
            dt_u += data.value * da;
            grad += data.gradient * a;
            div_e += data.div_strain * a;
        }
        let mut p = 0.0;
        let mut grad_p = Vec3::zeros();
        for (mode, (value, g)) in problem.pressure.iter().zip(&self.pressure) {
            let b = (mode.time)(t).0;
            p += value * b;
            grad_p += g * b;
        }
        let covariant = self.projector * grad;
        let terms = problem.terms;
        let mut f = grad_p - div_e * (2.0 * problem.mu);
        if terms.time_derivative {
            f += dt_u;
        }
        if terms.convection {
            f += covariant * u;
        }
        if terms.zeroth_order {
            f += u;
        }
        let (forcing, lambda) = match problem.forcing_mode {
            ForcingMode::FullResidual => (f, 0.0),
            ForcingMode::Unforced => (Vec3::zeros(), 0.0),
            ForcingMode::TangentialResidual => (
                self.projector * f,
                2.0 * problem.mu * self.normal.dot(&div_e),
            ),
        };
        ExactState {
            velocity: u,
            covariant,
            pressure: p,
            lambda,
            forcing,
        }
    }
}

/// Oracle data of a problem tabulated at every quadrature point of an
/// assembly context; exact states at any time are then cheap combinations.
#[derive(Debug, Clone)]
pub struct ProblemCache {
    points: Vec<PointData>,
}

impl ProblemCache {
    pub fn new(problem: &ProblemSpec, ctx: &AssemblyContext) -> Result<Self> {
        use rayon::prelude::*;
        let oracle = Oracle::new(&problem.surface);
        let points = ctx
            .lifted
            .par_iter()
            .zip(&ctx.exact_normals)
            .map(|(p, n)| {
                let mut data = PointData {
                    normal: *n,
                    projector: tangent_projector(n),
                    ..PointData::default()
                };
                for m in &problem.velocity {
                    data.modes.push(ModeData::new(&oracle, &m.field, p)?);
                }
                for m in &problem.pressure {
                    let f = &m.field;
                    data.pressure.push((f(p), oracle.scalar_gradient(&|y| f(y), p)?));
                }
                Ok(data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn states(&self, problem: &ProblemSpec, t: f64) -> Vec<ExactState> {
        self.points.iter().map(|d| d.state(problem, t)).collect()
    }

    pub fn forcing(&self, problem: &ProblemSpec, t: f64) -> Vec<Vec3> {
        self.points.iter().map(|d| d.state(problem, t).forcing).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_on(surface: &Surface, rng: &mut ChaCha8Rng) -> Vec3 {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        surface.from_unit_sphere(&v).unwrap()
    }

    #[test]
    fn constant_field_has_vanishing_operators() {
        let s = Surface::varying_curvature();
        let o = Oracle::new(&s);
        let x = s.from_unit_sphere(&Vec3::new(0.3, 0.5, 0.2).normalize()).unwrap();
        let ops = o.operators(&|_| Vec3::new(1.0, 2.0, 3.0), &x).unwrap();
        assert!(ops.gradient.norm() < 1e-9);
        assert!(ops.div_strain.norm() < 1e-6);
    }

    #[test]
    fn surface_curl_examples() {
        let s = Surface::unit_sphere();
        let zero = surface_curl(&s, &|_, _| 3.0, &Vec3::new(0.0, 0.6, 0.8), 0.0).unwrap();
        assert!(zero.norm() < 1e-9);
        let c = surface_curl(&s, &|x, _| x[2], &Vec3::x(), 0.0).unwrap();
        assert!((c - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn stream_velocity_matches_oracle_curl() {
        let problem = ProblemSpec::varying_stream(0.5);
        let x = Vec3::new(0.0, 1.0, 0.0);
        let psi = |y: &Vec3, t: f64| (1.0 - 2.0 * t) * stream_function(y).0;
        let fd = surface_curl(&problem.surface, &psi, &x, 0.0).unwrap();
        assert!((fd - problem.velocity_at(&x, 0.0)).norm() < 1e-7);
    }

    #[test]
    fn laplace_beltrami_of_x3_on_sphere() {
        let s = Surface::unit_sphere();
        let o = Oracle::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = random_on(&s, &mut rng);
            let grad = |y: &Vec3| tangent_projector(&y.normalize()) * Vec3::z();
            let lap = o.divergence(&grad, &x).unwrap();
            assert!((lap + 2.0 * x[2]).abs() < 1e-4);
        }
    }

    #[test]
    fn builtin_problems_are_tangential_and_divergence_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for problem in builtin_problems() {
            let s = &problem.surface;
            let o = Oracle::new(s);
            for k in 0..200 {
                let x = random_on(s, &mut rng);
                let t = rng.gen_range(0.0..1.0);
                let n = s.normal(&x).unwrap();
                let u = problem.velocity_at(&x, t);
                assert!(u.dot(&n).abs() <= 1e-10 * (1.0 + u.norm()));
                if k < 40 {
                    let field = |y: &Vec3| problem.velocity_at(y, t);
                    assert!(o.divergence(&field, &x).unwrap().abs() < 1e-6 * (1.0 + u.norm()));
                }
            }
        }
    }

    #[test]
    fn builtin_pressures_evaluate() {
        let stream = ProblemSpec::varying_stream(0.5);
        assert!(stream.pressure_at(&Vec3::new(1.0, 0.0, 0.0), 0.3).abs() < 1e-15);
        let killing = ProblemSpec::sphere_killing(0.5);
        let x = Vec3::new(0.5, 0.5, 0.5f64.sqrt());
        assert!((killing.pressure_at(&x, 1.0) - 8.0 * 0.125 * 0.5f64.sqrt()).abs() < 1e-14);
        let zero = ProblemSpec::zero(Surface::unit_sphere(), 1.0);
        assert_eq!(zero.velocity_at(&x, 0.2), Vec3::zeros());
        assert_eq!(zero.forcing(&x, 0.2).unwrap(), Vec3::zeros());
    }

    #[test]
    fn killing_field_sup_norm_is_four() {
        let mut best: f64 = 0.0;
        for i in 0..=200 {
            let theta = i as f64 * 2.0 * PI / 200.0;
            best = best.max(killing_field(&Vec3::new(theta.cos(), theta.sin(), 0.0)).norm());
        }
        assert!((best - 4.0).abs() < 1e-12);
    }

    #[test]
    fn steady_killing_forcing_closed_form() {
        let mut problem = ProblemSpec::zero(Surface::unit_sphere(), 0.7);
        problem.velocity.push(VelocityMode {
            time: constant_in_time,
            field: Arc::new(|x: &Vec3| Vec3::new(-x[1], x[0], 0.0)),
        });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random_on(&problem.surface, &mut rng);
            let k = Vec3::new(-x[1], x[0], 0.0);
            // grad K = [[0,-1,0],[1,0,0],[0,0,0]], so (K . grad) K = (-x1, -x2, 0)
            let conv = tangent_projector(&x) * Vec3::new(-x[0], -x[1], 0.0);
            let f = problem.forcing(&x, 0.0).unwrap();
            assert!((f - (conv + k)).norm() < 1e-5);
        }
    }
}
