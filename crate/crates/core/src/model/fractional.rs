//! Fractional powers of `1 - e^{-iφ_k} A` and a Schur–Parlett evaluator
//! for dense matrices.

use nalgebra::Schur;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{principal_pow, unit, CMatrix, C64, ONE, ZERO};

/// `Λ_k^θ`, or `(Λ_k^*)^θ` when `conjugate` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalFactor {
    pub k: usize,
    pub theta: f64,
    #[serde(default)]
    pub conjugate: bool,
}

impl FractionalFactor {
    pub fn new(k: usize, theta: f64) -> Self {
        FractionalFactor {
            k,
            theta,
            conjugate: false,
        }
    }

    pub fn adjoint(k: usize, theta: f64) -> Self {
        FractionalFactor {
            k,
            theta,
            conjugate: true,
        }
    }
}

/// `I - e^{-iφ} A`.
pub fn lambda_factor(a: &CMatrix, phi: f64) -> CMatrix {
    let n = a.nrows();
    CMatrix::identity(n, n) - a * unit(-phi)
}

/// Evaluates `f(M)` through a complex Schur form and the Parlett
/// recurrence. Fails on (nearly) repeated eigenvalues, where the recurrence
/// divides by eigenvalue gaps.
pub fn schur_parlett<F: Fn(C64) -> C64>(m: &CMatrix, f: F) -> Result<CMatrix> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let (q, t) = Schur::new(m.clone()).unpack();
    let scale = t.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let mut fm = CMatrix::from_element(n, n, ZERO);
    for i in 0..n {
        fm[(i, i)] = f(t[(i, i)]);
    }
    for j in 1..n {
        for i in (0..j).rev() {
            let gap = t[(j, j)] - t[(i, i)];
            if gap.norm() < 1e-9 * scale {
                return Err(LabError::Singular(format!(
                    "confluent eigenvalues {} and {} in matrix function",
                    t[(i, i)],
                    t[(j, j)]
                )));
            }
            let mut s = t[(i, j)] * (fm[(j, j)] - fm[(i, i)]);
            for k in (i + 1)..j {
                s += t[(i, k)] * fm[(k, j)] - fm[(i, k)] * t[(k, j)];
            }
            fm[(i, j)] = s / gap;
        }
    }
    Ok(&q * fm * q.adjoint())
}

/// Principal power of `Λ = I - e^{-iφ}A` (or its adjoint) for a dense matrix.
pub fn dense_fractional_power(a: &CMatrix, phi: f64, theta: f64, conjugate: bool) -> Result<CMatrix> {
    let n = a.nrows();
    if theta == 0.0 {
        return Ok(CMatrix::identity(n, n));
    }
    let mut lam = lambda_factor(a, phi);
    if conjugate {
        lam = lam.adjoint();
    }
    if theta == 1.0 {
        return Ok(lam);
    }
    let zero_hit = std::cell::Cell::new(false);
    let out = schur_parlett(&lam, |z| {
        if z.norm() < 1e-14 {
            zero_hit.set(true);
            ZERO
        } else {
            principal_pow(z, theta)
        }
    })?;
    if zero_hit.get() && theta < 0.0 {
        return Err(LabError::RangeViolation(
            "negative power of a singular factor".to_string(),
        ));
    }
    Ok(out)
}

/// Scalar weight of `Λ_k^θ` at a diagonal entry.
pub fn entry_weight(a: C64, phi: f64, theta: f64, conjugate: bool) -> C64 {
    let mut base = ONE - unit(-phi) * a;
    if conjugate {
        base = base.conj();
    }
    principal_pow(base, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parlett_square_root_squares_back() {
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[
                C64::new(0.6, 0.1),
                C64::new(0.2, 0.0),
                C64::new(0.0, 0.1),
                C64::new(0.0, 0.0),
                C64::new(0.9, -0.2),
                C64::new(0.3, 0.0),
                C64::new(0.1, 0.0),
                C64::new(0.0, 0.0),
                C64::new(1.2, 0.0),
            ],
        );
        let r = schur_parlett(&m, |z| z.sqrt()).unwrap();
        let err = (&r * &r - &m).norm();
        assert!(err < 1e-12, "err {err}");
    }

    #[test]
    fn diagonal_matrix_power_is_entrywise() {
        let a = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(0.5, 0.0),
            C64::new(0.0, 0.3),
        ]));
        let p = dense_fractional_power(&a, 0.0, -0.7, false).unwrap();
        for i in 0..2 {
            let w = entry_weight(a[(i, i)], 0.0, -0.7, false);
            assert!((p[(i, i)] - w).norm() < 1e-13);
        }
    }
}
