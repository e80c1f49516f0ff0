//! Quadrature on the reference triangle.
//!
//! Rules are collapsed (conical) products: Gauss-Legendre in the collapsed
//! direction times Gauss-Jacobi with weight `(1 - t)` in the other, both from
//! the Golub-Welsch eigenvalue problem. With `n` points per direction the rule
//! is exact for total degree `2n - 1`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const MAX_QUADRATURE_DEGREE: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub degree: usize,
    /// Reference coordinates `(s, t)`.
    pub points: Vec<[f64; 2]>,
    /// Weights summing to 1/2, the reference-triangle area.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }
}

/// Gauss-Jacobi nodes and weights on [-1, 1] for the weight `(1-x)^alpha (1+x)^beta`.
fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let ab = alpha + beta;
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let denom = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
        jacobi[(k, k)] = if denom.abs() < 1e-300 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / denom
        };
        if k + 1 < n {
            let m = kf + 1.0;
            let num = 4.0 * m * (m + alpha) * (m + beta) * (m + ab);
            let den = (2.0 * m + ab).powi(2) * (2.0 * m + ab + 1.0) * (2.0 * m + ab - 1.0);
            let off = (num / den).sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    // total mass of the weight function
    let mass = 2f64.powf(ab + 1.0) * gamma_int(alpha) * gamma_int(beta) / gamma_int(ab + 1.0);
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

// Gamma(x + 1) for the small non-negative integers used here
fn gamma_int(x: f64) -> f64 {
    let k = x.round() as u64;
    debug_assert!((x - k as f64).abs() < 1e-12);
    (1..=k).map(|i| i as f64).product()
}

/// Rule exact for all bivariate polynomials of total degree `<= degree`.
pub fn quadrature(degree: usize) -> Result<QuadratureRule> {
    if degree == 0 || degree > MAX_QUADRATURE_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    let n = degree / 2 + 1;
    let (gl_x, gl_w) = gauss_jacobi(n, 0.0, 0.0);
    let (gj_x, gj_w) = gauss_jacobi(n, 1.0, 0.0);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (tx, tw) in gj_x.iter().zip(&gj_w) {
        let t = 0.5 * (1.0 + tx);
        for (ux, uw) in gl_x.iter().zip(&gl_w) {
            let u = 0.5 * (1.0 + ux);
            points.push([u * (1.0 - t), t]);
            // d(s,t) = (1 - t) du dt; the (1 - t) factor is in the Jacobi weight
            weights.push(0.125 * tw * uw);
        }
    }
    Ok(QuadratureRule {
        degree,
        points,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // int_T s^a t^b = a! b! / (a + b + 2)!
    fn monomial_integral(a: u32, b: u32) -> f64 {
        let f = |k: u32| (1..=k).map(f64::from).product::<f64>();
        f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn centroid_rule() {
        let q = quadrature(1).unwrap();
        assert_eq!(q.len(), 1);
        assert!((q.points[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((q.points[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((q.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degree_two_integrates_s_squared() {
        let q = quadrature(2).unwrap();
        assert!((q.integrate(|p| p[0] * p[0]) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_all_monomials_up_to_degree() {
        for degree in 1..=MAX_QUADRATURE_DEGREE {
            let q = quadrature(degree).unwrap();
            assert!((q.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14);
            assert!(q.weights.iter().all(|w| *w > 0.0));
            for p in &q.points {
                assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0);
            }
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let got = q.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    let exact = monomial_integral(a, b);
                    assert!(
                        (got - exact).abs() < 1e-14,
                        "degree {degree}: s^{a} t^{b}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_unsupported_degrees() {
        assert!(matches!(quadrature(13), Err(Error::UnsupportedDegree(13))));
        assert!(matches!(quadrature(0), Err(Error::UnsupportedDegree(0))));
    }
}
