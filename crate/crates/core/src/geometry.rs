//! Exact surfaces: closest-point projection, signed distance, normal and
//! Weingarten map.
//!
//! Two surfaces ship with the crate: spheres and the level set
//! `x1^2/4 + x2^2 + 4 x3^2 / (1 + sin(pi x1)/2)^2 = 1`. Other level sets can be
//! plugged in through [`LevelSet`].

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Orthogonal projector onto the plane with unit normal `n`.
pub fn tangent_projector(n: &Vec3) -> Mat3 {
    Mat3::identity() - n * n.transpose()
}

/// A smooth level-set description `{ x : phi(x) = 0 }` with `phi > 0` outside.
pub trait LevelSet: Send + Sync + Debug {
    fn value(&self, x: &Vec3) -> f64;
    fn gradient(&self, x: &Vec3) -> Vec3;
    fn hessian(&self, x: &Vec3) -> Mat3;

    /// Map from the unit sphere onto the surface, if the surface is given as
    /// such an image. Used to place base-mesh vertices exactly.
    fn sphere_map(&self, _p: &Vec3) -> Option<Vec3> {
        None
    }

    /// Largest |d| for which the closest-point projection is trusted.
    fn reach(&self) -> f64 {
        0.3
    }
}

/// The varying-curvature surface `x1^2/4 + x2^2 + 4 x3^2 / (1 + sin(pi x1)/2)^2 - 1 = 0`,
/// the image of the unit sphere under `F(p) = (2 p0, p1, p2 (1 + sin(2 pi p0)/2) / 2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VaryingCurvature;

impl VaryingCurvature {
    // s(x1) = 1 + sin(pi x1)/2 and its first two derivatives
    fn stretch(x1: f64) -> (f64, f64, f64) {
        let (s, c) = (PI * x1).sin_cos();
        (1.0 + 0.5 * s, 0.5 * PI * c, -0.5 * PI * PI * s)
    }
}

impl LevelSet for VaryingCurvature {
    fn value(&self, x: &Vec3) -> f64 {
        let (s, _, _) = Self::stretch(x[0]);
        0.25 * x[0] * x[0] + x[1] * x[1] + 4.0 * x[2] * x[2] / (s * s) - 1.0
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        let (s, ds, _) = Self::stretch(x[0]);
        let z2 = x[2] * x[2];
        Vec3::new(
            0.5 * x[0] - 8.0 * z2 * ds / (s * s * s),
            2.0 * x[1],
            8.0 * x[2] / (s * s),
        )
    }

    fn hessian(&self, x: &Vec3) -> Mat3 {
        let (s, ds, dds) = Self::stretch(x[0]);
        let z = x[2];
        let s3 = s * s * s;
        let d11 = 0.5 - 8.0 * z * z * (dds / s3 - 3.0 * ds * ds / (s3 * s));
        let d13 = -16.0 * z * ds / s3;
        let d33 = 8.0 / (s * s);
        Mat3::new(d11, 0.0, d13, 0.0, 2.0, 0.0, d13, 0.0, d33)
    }

    fn sphere_map(&self, p: &Vec3) -> Option<Vec3> {
        let scale = 1.0 + 0.5 * (2.0 * PI * p[0]).sin();
        Some(Vec3::new(2.0 * p[0], p[1], 0.5 * p[2] * scale))
    }
}

#[derive(Debug, Clone)]
pub enum SurfaceKind {
    Sphere { radius: f64 },
    LevelSet(Arc<dyn LevelSet>),
}

/// An exact closed surface together with its projection parameters.
#[derive(Debug, Clone)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub projection_tolerance: f64,
    pub max_newton_iters: usize,
}

impl Surface {
    pub fn sphere(radius: f64) -> Self {
        Self::with_kind(SurfaceKind::Sphere { radius })
    }

    pub fn unit_sphere() -> Self {
        Self::sphere(1.0)
    }

    pub fn varying_curvature() -> Self {
        Self::level_set(Arc::new(VaryingCurvature))
    }

    pub fn level_set(phi: Arc<dyn LevelSet>) -> Self {
        Self::with_kind(SurfaceKind::LevelSet(phi))
    }

    fn with_kind(kind: SurfaceKind) -> Self {
        Self {
            kind,
            projection_tolerance: 1e-12,
            max_newton_iters: 50,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, SurfaceKind::Sphere { .. })
    }

    /// Closest point on the surface.
    pub fn closest_point(&self, x: &Vec3) -> Result<Vec3> {
        match &self.kind {
            SurfaceKind::Sphere { radius } => {
                let r = x.norm();
                if r < 1e-12 * radius {
                    return Err(Error::OutOfReach { distance: *radius });
                }
                Ok(x * (radius / r))
            }
            SurfaceKind::LevelSet(phi) => self.project_level_set(phi.as_ref(), x),
        }
    }

    fn project_level_set(&self, phi: &dyn LevelSet, x: &Vec3) -> Result<Vec3> {
        let tol = self.projection_tolerance;
        let reach = phi.reach();
        let mut p = *x;

        // first-order steps onto the zero set
        for _ in 0..3 {
            let g = phi.gradient(&p);
            let g2 = g.norm_squared();
            if g2 < 1e-20 {
                return Err(Error::DegenerateGradient { norm: g2.sqrt() });
            }
            p -= g * (phi.value(&p) / g2);
        }

        // Newton on the optimality system p - x + mu grad(phi)(p) = 0, phi(p) = 0
        let g = phi.gradient(&p);
        let mut mu = (x - p).dot(&g) / g.norm_squared();
        let residual = |p: &Vec3, mu: f64| -> Vector4<f64> {
            let r = p - x + phi.gradient(p) * mu;
            Vector4::new(r[0], r[1], r[2], phi.value(p))
        };
        let mut res = residual(&p, mu);
        let mut converged_once = false;
        for iter in 0..self.max_newton_iters {
            let res_norm = res.norm();
            if res_norm <= tol {
                // one extra step polishes the quadratically convergent iterate
                if converged_once {
                    break;
                }
                converged_once = true;
            }
            let g = phi.gradient(&p);
            if g.norm() < 1e-10 {
                return Err(Error::DegenerateGradient { norm: g.norm() });
            }
            let hess = phi.hessian(&p);
            let block = Mat3::identity() + hess * mu;
            let mut jac = Matrix4::zeros();
            jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&block);
            jac.fixed_view_mut::<3, 1>(0, 3).copy_from(&g);
            jac.fixed_view_mut::<1, 3>(3, 0).copy_from(&g.transpose());
            let step = jac
                .lu()
                .solve(&(-res))
                .ok_or(Error::DegenerateGradient { norm: g.norm() })?;
            let dp = Vec3::new(step[0], step[1], step[2]);

            // damping: halve until the residual does not grow
            let mut alpha = 1.0;
            let mut trial_p = p + dp * alpha;
            let mut trial_mu = mu + step[3] * alpha;
            let mut trial_res = residual(&trial_p, trial_mu);
            while trial_res.norm() > res_norm && alpha > 1.0 / 64.0 && res_norm > tol {
                alpha *= 0.5;
                trial_p = p + dp * alpha;
                trial_mu = mu + step[3] * alpha;
                trial_res = residual(&trial_p, trial_mu);
            }
            p = trial_p;
            mu = trial_mu;
            res = trial_res;

            if (p - x).norm() > reach {
                return Err(Error::OutOfReach {
                    distance: (p - x).norm(),
                });
            }
            if iter + 1 == self.max_newton_iters && res.norm() > tol {
                return Err(Error::NonConvergence {
                    iterations: self.max_newton_iters,
                    residual: res.norm(),
                });
            }
        }
        if res.norm() > tol {
            return Err(Error::NonConvergence {
                iterations: self.max_newton_iters,
                residual: res.norm(),
            });
        }
        Ok(p)
    }

    /// Signed distance, positive outside.
    pub fn signed_distance(&self, x: &Vec3) -> Result<f64> {
        match &self.kind {
            SurfaceKind::Sphere { radius } => Ok(x.norm() - radius),
            SurfaceKind::LevelSet(phi) => {
                let p = self.closest_point(x)?;
                let d = (x - p).norm();
                Ok(if phi.value(x) < 0.0 { -d } else { d })
            }
        }
    }

    /// Unit outward normal at a surface point.
    pub fn normal(&self, p: &Vec3) -> Result<Vec3> {
        match &self.kind {
            SurfaceKind::Sphere { .. } => Ok(p.normalize()),
            SurfaceKind::LevelSet(phi) => {
                let g = phi.gradient(p);
                let norm = g.norm();
                if norm < 1e-10 {
                    return Err(Error::DegenerateGradient { norm });
                }
                Ok(g / norm)
            }
        }
    }

    pub fn projector(&self, p: &Vec3) -> Result<Mat3> {
        Ok(tangent_projector(&self.normal(p)?))
    }

    /// Weingarten map `H = grad_Gamma n` at a surface point.
    pub fn weingarten(&self, p: &Vec3) -> Result<Mat3> {
        match &self.kind {
            SurfaceKind::Sphere { radius } => {
                let n = p.normalize();
                Ok(tangent_projector(&n) / *radius)
            }
            SurfaceKind::LevelSet(phi) => {
                let g = phi.gradient(p);
                let norm = g.norm();
                if norm < 1e-10 {
                    return Err(Error::DegenerateGradient { norm });
                }
                let proj = tangent_projector(&(g / norm));
                let h = proj * phi.hessian(p) * proj / norm;
                // symmetrise away rounding
                Ok((h + h.transpose()) * 0.5)
            }
        }
    }

    /// Weingarten map by central differences of `n o pi` (test oracle and
    /// fallback for level sets without a usable Hessian).
    pub fn weingarten_fd(&self, p: &Vec3, step: f64) -> Result<Mat3> {
        let mut h = Mat3::zeros();
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = step;
            let plus = self.normal(&self.closest_point(&(p + e))?)?;
            let minus = self.normal(&self.closest_point(&(p - e))?)?;
            h.set_column(j, &((plus - minus) / (2.0 * step)));
        }
        Ok(h)
    }

    pub fn mean_curvature(&self, p: &Vec3) -> Result<f64> {
        Ok(self.weingarten(p)?.trace())
    }

    /// Image of a unit-sphere point on this surface (base-mesh placement).
    pub fn from_unit_sphere(&self, p: &Vec3) -> Result<Vec3> {
        match &self.kind {
            SurfaceKind::Sphere { radius } => Ok(p.normalize() * *radius),
            SurfaceKind::LevelSet(phi) => match phi.sphere_map(p) {
                Some(q) => Ok(q),
                None => self.closest_point(p),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn sphere_projection_is_radial() {
        let s = Surface::unit_sphere();
        let p = s.closest_point(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((p - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        let p = s.closest_point(&Vec3::new(0.0, 0.0, 0.5)).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert_eq!(s.signed_distance(&Vec3::new(2.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(s.signed_distance(&Vec3::new(0.5, 0.0, 0.0)).unwrap(), -0.5);
        assert!(matches!(
            s.closest_point(&Vec3::zeros()),
            Err(Error::OutOfReach { .. })
        ));
    }

    #[test]
    fn sphere_normals_and_curvature() {
        let s = Surface::unit_sphere();
        let n = s.normal(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((n - Vec3::z()).norm() < 1e-15);
        let r = 0.5f64.sqrt();
        let n = s.normal(&Vec3::new(r, r, 0.0)).unwrap();
        assert!((n - Vec3::new(r, r, 0.0)).norm() < 1e-15);

        let s2 = Surface::sphere(2.0);
        let p = Vec3::new(0.0, 2.0, 0.0);
        let h = s2.weingarten(&p).unwrap();
        let mut eig: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eig[0].abs() < 1e-14);
        assert!((eig[1] - 0.5).abs() < 1e-14 && (eig[2] - 0.5).abs() < 1e-14);
        assert!((Surface::unit_sphere().mean_curvature(&Vec3::x()).unwrap() - 2.0).abs() < 1e-14);
    }

    /// Brute-force nearest point over a dense parametrised sample of the surface.
    fn dense_nearest(x: &Vec3, samples: usize) -> (Vec3, f64) {
        let phi = VaryingCurvature;
        let mut best = (Vec3::zeros(), f64::INFINITY);
        for i in 0..=samples {
            let theta = PI * i as f64 / samples as f64;
            for j in 0..2 * samples {
                let az = PI * j as f64 / samples as f64;
                let p = Vec3::new(theta.sin() * az.cos(), theta.sin() * az.sin(), theta.cos());
                let q = phi.sphere_map(&p).unwrap();
                let d = (q - x).norm();
                if d < best.1 {
                    best = (q, d);
                }
            }
        }
        best
    }

    #[test]
    fn level_set_projection_matches_dense_search() {
        let s = Surface::varying_curvature();
        let x = Vec3::new(0.0, 1.1, 0.0);
        let p = s.closest_point(&x).unwrap();
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(VaryingCurvature.value(&p).abs() <= 1e-12);
        let (q, d) = dense_nearest(&x, 400);
        assert!((q - p).norm() < 1e-2);
        assert!((d - 0.1).abs() < 1e-4);
        assert!((s.signed_distance(&x).unwrap() - 0.1).abs() < 1e-12);
        let n = s.normal(&p).unwrap();
        assert!((n - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn level_set_projection_residual_is_normal() {
        let s = Surface::varying_curvature();
        let phi = VaryingCurvature;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let base = phi.sphere_map(&random_unit(&mut rng)).unwrap();
            let n = s.normal(&base).unwrap();
            let x = base + n * rng.gen_range(-0.02..0.02);
            let p = s.closest_point(&x).unwrap();
            assert!(phi.value(&p).abs() <= 1e-12);
            let r = x - p;
            if r.norm() > 1e-6 {
                let np = s.normal(&p).unwrap();
                let sin = r.normalize().cross(&np).norm();
                assert!(sin < 1e-10, "angle {sin}");
            }
            let again = s.closest_point(&p).unwrap();
            assert!((again - p).norm() < 1e-10);
        }
    }

    #[test]
    fn distance_gradient_is_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for surface in [Surface::unit_sphere(), Surface::varying_curvature()] {
            for _ in 0..100 {
                let base = surface.from_unit_sphere(&random_unit(&mut rng)).unwrap();
                let n0 = surface.normal(&base).unwrap();
                let x = base + n0 * rng.gen_range(-0.01..0.01);
                let step = 1e-5;
                let mut grad = Vec3::zeros();
                for j in 0..3 {
                    let mut e = Vec3::zeros();
                    e[j] = step;
                    grad[j] = (surface.signed_distance(&(x + e)).unwrap()
                        - surface.signed_distance(&(x - e)).unwrap())
                        / (2.0 * step);
                }
                let n = surface.normal(&surface.closest_point(&x).unwrap()).unwrap();
                assert!((grad - n).norm() < 1e-6, "{}", (grad - n).norm());
            }
        }
    }

    #[test]
    fn weingarten_is_tangential_symmetric_and_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for surface in [Surface::unit_sphere(), Surface::varying_curvature()] {
            for _ in 0..100 {
                let p = surface.from_unit_sphere(&random_unit(&mut rng)).unwrap();
                let h = surface.weingarten(&p).unwrap();
                let n = surface.normal(&p).unwrap();
                let proj = tangent_projector(&n);
                assert!((h * n).norm() < 1e-8);
                assert!((h * proj - h).norm() < 1e-8 && (proj * h - h).norm() < 1e-8);
                assert!((h - h.transpose()).norm() < 1e-8);
                let fd = surface.weingarten_fd(&p, 1e-5).unwrap();
                let scale = 1.0 + h.norm();
                assert!((fd - h).norm() < 1e-5 * scale, "{}", (fd - h).norm());
            }
        }
        // the point named in the examples
        let s = Surface::varying_curvature();
        let p = Vec3::new(0.0, 1.0, 0.0);
        let fd = s.weingarten_fd(&p, 1e-5).unwrap();
        assert!((fd - s.weingarten(&p).unwrap()).norm() < 1e-5);
    }

    #[test]
    fn sphere_map_lands_on_level_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = VaryingCurvature.sphere_map(&random_unit(&mut rng)).unwrap();
            assert!(VaryingCurvature.value(&q).abs() < 1e-14);
        }
    }

    #[test]
    fn level_set_derivatives_match_finite_differences() {
        let phi = VaryingCurvature;
        let x = Vec3::new(0.3, -0.4, 0.2);
        let h = 1e-6;
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            let dv = (phi.value(&(x + e)) - phi.value(&(x - e))) / (2.0 * h);
            assert!((dv - phi.gradient(&x)[j]).abs() < 1e-8);
            let dg = (phi.gradient(&(x + e)) - phi.gradient(&(x - e))) / (2.0 * h);
            assert!((dg - phi.hessian(&x).column(j)).norm() < 1e-7);
        }
    }
}
