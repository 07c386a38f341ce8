//! Pointwise operators: nondivergence p-Laplacian, Pucci extremal operators,
//! the regularized singular operator and closed-form radial formulas.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ManifoldModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticParams {
    pub p: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub beta: f64,
    pub delta_reg: f64,
}

impl EllipticParams {
    pub fn new(p: f64, lambda: f64, big_lambda: f64, beta: f64, delta_reg: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidInput(format!("p = {p} must lie in (1, inf)")));
        }
        if !(lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ellipticity constants must satisfy 0 < {lambda} <= {big_lambda}"
            )));
        }
        if !(beta >= 0.0) || !(delta_reg >= 0.0) {
            return Err(Error::InvalidInput("beta and delta must be nonnegative".into()));
        }
        Ok(Self { p, lambda, big_lambda, beta, delta_reg })
    }

    /// Plain p-Laplacian: `lambda = Lambda = 1`, no drift, no regularization.
    pub fn p_laplace(p: f64) -> Result<Self> {
        Self::new(p, 1.0, 1.0, 0.0, 0.0)
    }
}

/// Eigenvalues in ascending order.
pub fn sym_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(s.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Ascending eigenvalues of a symmetric 2x2 matrix.
pub fn eigenvalues2(s: &Matrix2<f64>) -> [f64; 2] {
    let a = s[(0, 0)];
    let d = s[(1, 1)];
    let b = 0.5 * (s[(0, 1)] + s[(1, 0)]);
    let m = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    [m - r, m + r]
}

fn pucci_from(ev: &[f64], lo: f64, hi: f64) -> f64 {
    // lo weights positive eigenvalues, hi weights negative ones
    ev.iter().map(|&mu| if mu < 0.0 { hi * mu } else { lo * mu }).sum()
}

pub fn pucci_minus(s: &DMatrix<f64>, lambda: f64, big_lambda: f64) -> f64 {
    pucci_from(&sym_eigenvalues(s), lambda, big_lambda)
}

pub fn pucci_plus(s: &DMatrix<f64>, lambda: f64, big_lambda: f64) -> f64 {
    pucci_from(&sym_eigenvalues(s), big_lambda, lambda)
}

pub(crate) fn pucci_minus2(s: &Matrix2<f64>, lambda: f64, big_lambda: f64) -> f64 {
    pucci_from(&eigenvalues2(s), lambda, big_lambda)
}

/// `|g|^{p-2} tr[(I + (p-2) n n^T) H]`.
pub fn p_laplacian(grad: &[f64], hess: &DMatrix<f64>, p: f64) -> Result<f64> {
    let n = grad.len();
    if hess.nrows() != n || hess.ncols() != n {
        return Err(Error::InvalidInput("gradient and Hessian sizes differ".into()));
    }
    let trace = hess.trace();
    if p == 2.0 {
        return Ok(trace);
    }
    let g2: f64 = grad.iter().map(|x| x * x).sum();
    if g2 == 0.0 {
        return if p > 2.0 { Ok(0.0) } else { Err(Error::SingularGradient { p }) };
    }
    let mut nhn = 0.0;
    for i in 0..n {
        for j in 0..n {
            nhn += grad[i] * hess[(i, j)] * grad[j];
        }
    }
    Ok(g2.powf(0.5 * (p - 2.0)) * (trace + (p - 2.0) * nhn / g2))
}

/// Same operator with `|g|^{p-2}` replaced by `(|g|^2 + delta)^{(p-2)/2}`.
pub(crate) fn p_laplacian2_reg(grad: &Vector2<f64>, hess: &Matrix2<f64>, p: f64, delta: f64) -> f64 {
    let g2 = grad.norm_squared();
    let trace = hess.trace();
    let dir = if g2 > 0.0 { grad.dot(&(hess * grad)) / g2 } else { 0.0 };
    (g2 + delta).powf(0.5 * (p - 2.0)) * (trace + (p - 2.0) * dir)
}

/// `(|g|^2 + delta)^{(p-2)/2} M^-_{lambda,Lambda}(H)`.
pub fn regularized_pminus(
    grad: &[f64],
    hess: &DMatrix<f64>,
    p: f64,
    delta: f64,
    lambda: f64,
    big_lambda: f64,
) -> Result<f64> {
    if p < 2.0 && !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("delta must be positive for p = {p} < 2")));
    }
    let g2: f64 = grad.iter().map(|x| x * x).sum();
    let factor = if p == 2.0 { 1.0 } else { (g2 + delta).powf(0.5 * (p - 2.0)) };
    Ok(factor * pucci_minus(hess, lambda, big_lambda))
}

/// Which operator a supersolution inequality refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// `Δ_p u`.
    PLaplacian,
    /// `|∇u|^{p-2} M^-_{λ,Λ}(D²u) - β|∇u|^{p-1}`.
    PucciMinus,
}

/// Pointwise operator value with `(|g|² + δ)` in place of `|g|²` inside the gradient weight.
pub fn evaluate_operator(
    kind: OperatorKind,
    grad: &Vector2<f64>,
    hess: &Matrix2<f64>,
    params: &EllipticParams,
    delta: f64,
) -> f64 {
    match kind {
        OperatorKind::PLaplacian => p_laplacian2_reg(grad, hess, params.p, delta),
        OperatorKind::PucciMinus => {
            let g2 = grad.norm_squared();
            let weight = if params.p == 2.0 { 1.0 } else { (g2 + delta).powf(0.5 * (params.p - 2.0)) };
            weight * pucci_minus2(hess, params.lambda, params.big_lambda)
                - params.beta * g2.sqrt().powf(params.p - 1.0)
        }
    }
}

/// First and second derivative of a radial profile at a given distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProfile {
    pub d1: f64,
    pub d2: f64,
}

/// `|g'|^{p-2}[(p-1)g'' + g' Δd]` for `u = g(d)`.
pub fn radial_p_laplacian(g: RadialProfile, d: f64, model: &ManifoldModel, p: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidInput("radial operator needs d > 0".into()));
    }
    let lap_d = model.laplacian_of_distance(d)?;
    let inner = (p - 1.0) * g.d2 + g.d1 * lap_d;
    if p == 2.0 {
        return Ok(inner);
    }
    if g.d1 == 0.0 {
        return if p > 2.0 { Ok(0.0) } else { Err(Error::SingularGradient { p }) };
    }
    Ok(g.d1.abs().powf(p - 2.0) * inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(a: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(a))
    }

    #[test]
    fn p_laplacian_examples() {
        assert_eq!(p_laplacian(&[0.3, -2.0], &diag(&[1.0, 1.0]), 2.0).unwrap(), 2.0);
        assert_relative_eq!(p_laplacian(&[1.0, 0.0], &diag(&[0.7, 0.2]), 3.0).unwrap(), 1.6);
        assert_eq!(p_laplacian(&[0.0, 0.0], &diag(&[1.0, 5.0]), 3.0).unwrap(), 0.0);
        assert!(matches!(
            p_laplacian(&[0.0, 0.0], &diag(&[1.0, 5.0]), 1.5),
            Err(Error::SingularGradient { .. })
        ));
    }

    #[test]
    fn sharp_profile_has_p_laplacian_n() {
        // u = (p-1)/p |x|^q with q = p/(p-1): grad = |x|^{q-2} x, Hessian by hand
        for p in [1.5, 2.0, 3.0, 4.5] {
            let q = p / (p - 1.0);
            let x: [f64; 2] = [0.37, -0.81];
            let r: f64 = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let grad = [r.powf(q - 2.0) * x[0], r.powf(q - 2.0) * x[1]];
            let mut h = DMatrix::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    h[(i, j)] = r.powf(q - 2.0) * (delta + (q - 2.0) * x[i] * x[j] / (r * r));
                }
            }
            assert_relative_eq!(p_laplacian(&grad, &h, p).unwrap(), 2.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn pucci_examples() {
        assert_relative_eq!(pucci_minus(&diag(&[1.0, 1.0, 1.0]), 0.4, 2.0), 1.2);
        assert_eq!(pucci_minus(&diag(&[2.0, -3.0]), 1.0, 2.0), -4.0);
        assert_eq!(pucci_plus(&diag(&[2.0, -3.0]), 1.0, 2.0), 1.0);
    }

    #[test]
    fn regularized_examples() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -2.0]);
        let m = pucci_minus(&h, 0.5, 1.0);
        assert_relative_eq!(regularized_pminus(&[0.0, 0.0], &h, 1.5, 1.0, 0.5, 1.0).unwrap(), m);
        assert_eq!(regularized_pminus(&[3.0, 1.0], &h, 2.0, 7.0, 0.5, 1.0).unwrap(), m);
        let small = regularized_pminus(&[1.0, 0.0], &h, 1.5, 1e-12, 0.5, 1.0).unwrap();
        assert_relative_eq!(small, m, max_relative = 1e-11);
        assert!(regularized_pminus(&[1.0, 0.0], &h, 1.5, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn radial_examples() {
        let flat = ManifoldModel::euclidean(2);
        let d: f64 = 0.63;
        let v = radial_p_laplacian(RadialProfile { d1: d, d2: 1.0 }, d, &flat, 2.0).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-15);
        for n in [2, 3, 5] {
            let m = ManifoldModel::euclidean(n);
            for p in [1.5, 2.0, 3.0] {
                let q = p / (p - 1.0);
                let g = RadialProfile { d1: d.powf(q - 1.0), d2: (q - 1.0) * d.powf(q - 2.0) };
                let v = radial_p_laplacian(g, d, &m, p).unwrap();
                assert_relative_eq!(v, n as f64, max_relative = 1e-13);
            }
        }
        let alpha: f64 = 3.0;
        let g = RadialProfile {
            d1: -alpha * d.powf(-alpha - 1.0),
            d2: alpha * (alpha + 1.0) * d.powf(-alpha - 2.0),
        };
        let v = radial_p_laplacian(g, d, &flat, 2.0).unwrap();
        assert_relative_eq!(v, alpha * alpha * d.powf(-alpha - 2.0), max_relative = 1e-13);
        assert!(radial_p_laplacian(g, 0.0, &flat, 2.0).is_err());
    }

    #[test]
    fn collapse_to_trace() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, -1.0, 0.3, 0.0, 0.3, 0.5]);
        assert_relative_eq!(pucci_minus(&s, 1.0, 1.0), s.trace(), epsilon = 1e-12);
        assert_relative_eq!(pucci_plus(&s, 1.0, 1.0), s.trace(), epsilon = 1e-12);
    }

    #[test]
    fn eigenvalues2_match_general_solver() {
        let m = Matrix2::new(0.3, -1.2, -1.2, 2.5);
        let d = DMatrix::from_column_slice(2, 2, m.as_slice());
        let a = eigenvalues2(&m);
        let b = sym_eigenvalues(&d);
        assert_relative_eq!(a[0], b[0], epsilon = 1e-14);
        assert_relative_eq!(a[1], b[1], epsilon = 1e-14);
    }
}
