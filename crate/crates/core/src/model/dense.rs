//! Dense finite-dimensional models for non-normal experiments.

use crate::error::{LabError, Result};
use crate::linalg::{norm, spectral_norm, to_matrix_column, CMatrix, C64};

/// Tolerance and iteration cap for Gram power iteration.
pub const NORM_TOL: f64 = 1e-8;
pub const NORM_MAX_ITER: usize = 500;
/// Below this dimension a non-converged iteration falls back to a full SVD.
pub const SVD_FALLBACK_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    matrix: CMatrix,
    unit_points: Vec<f64>,
    floor: f64,
}

impl DenseModel {
    pub fn new(matrix: CMatrix, unit_points: Vec<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(LabError::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(LabError::Validation(vec!["dense matrix must be non-empty".into()]));
        }
        let radius = matrix
            .clone()
            .eigenvalues()
            .map(|ev| ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
            .ok_or_else(|| LabError::Singular("eigenvalue computation failed".into()))?;
        if radius >= 1.0 {
            return Err(LabError::Validation(vec![format!(
                "dense model has an eigenvalue of modulus {radius} (must be < 1)"
            )]));
        }
        Ok(DenseModel {
            matrix,
            unit_points,
            floor: 1e-13,
        })
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn unit_points(&self) -> &[f64] {
        &self.unit_points
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn shifted(&self, lambda: C64) -> CMatrix {
        CMatrix::identity(self.dim(), self.dim()) * lambda - &self.matrix
    }

    /// Solves `(λ - A) y = x`, with one step of iterative refinement when
    /// the residual misses the `1e-10` relative target.
    pub fn resolvent_apply(&self, lambda: C64, x: &[C64]) -> Result<Vec<C64>> {
        let shifted = self.shifted(lambda);
        let lu = shifted.clone().lu();
        let b = to_matrix_column(x);
        let mut y = lu.solve(&b).ok_or_else(|| self.hit(lambda, 0.0))?;
        let xn = norm(x);
        let mut res = &b - &shifted * &y;
        if res.norm() > 1e-10 * xn {
            if let Some(dy) = lu.solve(&res) {
                y += dy;
                res = &b - &shifted * &y;
            }
        }
        if !y.iter().all(|v| v.is_finite()) || res.norm() > 1e-10 * xn.max(1e-300) && xn > 0.0 {
            return Err(self.hit(lambda, 0.0));
        }
        Ok(y.iter().copied().collect())
    }

    fn hit(&self, lambda: C64, distance: f64) -> LabError {
        LabError::SpectrumHit {
            re: lambda.re,
            im: lambda.im,
            distance,
            floor: self.floor,
        }
    }

    /// `‖(λ - A)^{-1}‖` via power iteration on the Gram operator of the
    /// resolvent.
    pub fn resolvent_norm(&self, lambda: C64) -> Result<f64> {
        let shifted = self.shifted(lambda);
        let n = self.dim();
        let lu = shifted.clone().lu();
        let lu_adj = shifted.adjoint().lu();
        let mut v = CMatrix::from_element(n, 1, C64::new(1.0 / (n as f64).sqrt(), 0.0));
        let mut estimate = 0.0;
        let mut converged = false;
        for _ in 0..NORM_MAX_ITER {
            let y = lu.solve(&v).ok_or_else(|| self.hit(lambda, 0.0))?;
            let z = lu_adj.solve(&y).ok_or_else(|| self.hit(lambda, 0.0))?;
            let next = y.norm();
            let zn = z.norm();
            if !zn.is_finite() || zn == 0.0 {
                return Err(self.hit(lambda, 0.0));
            }
            v = z / C64::new(zn, 0.0);
            if (next - estimate).abs() <= NORM_TOL * next {
                estimate = next;
                converged = true;
                break;
            }
            estimate = next;
        }
        if !converged && n < SVD_FALLBACK_DIM {
            let smin = shifted.svd(false, false).singular_values.min();
            estimate = 1.0 / smin;
        }
        if !estimate.is_finite() || 1.0 / estimate < self.floor {
            return Err(self.hit(lambda, 1.0 / estimate));
        }
        Ok(estimate)
    }

    pub fn power_bound(&self, n_probe: usize) -> f64 {
        let mut power = self.matrix.clone();
        let mut best = operator_norm(&power);
        for _ in 1..n_probe {
            power = &power * &self.matrix;
            best = best.max(operator_norm(&power));
        }
        best
    }
}

/// Spectral norm: SVD below the fallback dimension, Gram power iteration above.
pub fn operator_norm(m: &CMatrix) -> f64 {
    if m.nrows() < SVD_FALLBACK_DIM {
        return spectral_norm(m);
    }
    let n = m.ncols();
    let mut v = CMatrix::from_element(n, 1, C64::new(1.0 / (n as f64).sqrt(), 0.0));
    let mut estimate = 0.0;
    for _ in 0..NORM_MAX_ITER {
        let y = m * &v;
        let z = m.adjoint() * &y;
        let next = y.norm();
        let zn = z.norm();
        if zn == 0.0 {
            return 0.0;
        }
        v = z / C64::new(zn, 0.0);
        if (next - estimate).abs() <= NORM_TOL * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jordan() -> DenseModel {
        DenseModel::new(
            CMatrix::from_row_slice(
                2,
                2,
                &[C64::new(0.5, 0.0), C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)],
            ),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn resolvent_norm_matches_smallest_singular_value() {
        let m = jordan();
        let lambda = C64::new(1.1, 0.2);
        let exact = 1.0 / m.shifted(lambda).svd(false, false).singular_values.min();
        assert!((m.resolvent_norm(lambda).unwrap() - exact).abs() < 1e-7 * exact);
    }

    #[test]
    fn eigenvalue_on_circle_is_rejected() {
        let m = CMatrix::from_diagonal_element(2, 2, C64::new(1.0, 0.0));
        assert!(DenseModel::new(m, vec![]).is_err());
    }
}
