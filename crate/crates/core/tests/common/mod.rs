#![allow(dead_code)]

use std::sync::Arc;

use surface_ns::analysis::sample_vector;
use surface_ns::mesh::build_mesh;
use surface_ns::problems::ExactState;
use surface_ns::solver::{Degrees, Discretization};
use surface_ns::Surface;

pub fn discretization(surface: &Surface, refine: usize, k_g: usize, k_lambda: usize) -> Discretization {
    let mesh = Arc::new(build_mesh(surface, refine, k_g).unwrap());
    let degrees = Degrees {
        velocity: 2,
        pressure: 1,
        lambda: k_lambda,
        geometry: k_g,
    };
    Discretization::new(mesh, degrees, 4 + k_g).unwrap()
}

pub fn last_eoc(errors: &[f64], hs: &[f64]) -> f64 {
    *surface_ns::analysis::eoc(errors, hs).last().unwrap()
}

/// `(|u - u_h|, |P grad u - P_h grad u_h|)` in `L^2(Gamma_h)`.
pub fn velocity_errors(disc: &Discretization, coeffs: &[f64], exact: &[ExactState]) -> (f64, f64) {
    let ctx = &disc.ctx;
    let (values, grads) = sample_vector(&disc.velocity, ctx, coeffs);
    let l2 = ctx.integrate(|i, _| (exact[i].velocity - values[i]).norm_squared());
    let h1 = ctx.integrate(|i, q| (exact[i].covariant - q.projector * grads[i]).norm_squared());
    (l2.sqrt(), h1.sqrt())
}
