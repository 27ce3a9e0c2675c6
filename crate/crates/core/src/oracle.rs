//! Brute-force dense references. Nothing here goes through the fast
//! diagonal, Gram-iteration or SMW paths; every quantity is computed from
//! an explicit matrix with generic dense factorizations.

use std::f64::consts::TAU;

use crate::error::{LabError, Result};
use crate::linalg::{CMatrix, C64, ZERO};
use crate::model::OperatorModel;
use crate::perturbation::FiniteRankPerturbation;

/// Largest dimension the oracle accepts.
pub const ORACLE_DIM_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTruncation {
    pub n: usize,
    pub a: CMatrix,
    pub perturbed: Option<CMatrix>,
}

impl DenseTruncation {
    /// First `n` coordinates of the model, entries taken straight from the
    /// rule (or the declared matrix).
    pub fn from_model(model: &OperatorModel, n: usize) -> Result<Self> {
        if n > ORACLE_DIM_CAP {
            return Err(LabError::Unsupported(format!(
                "oracle dimension {n} above the cap {ORACLE_DIM_CAP}"
            )));
        }
        let a = match model {
            OperatorModel::Diagonal(d) => {
                let mut m = CMatrix::zeros(n, n);
                for i in 0..n {
                    m[(i, i)] = d.entry(i as u64 + 1).ok_or_else(|| {
                        LabError::DimensionMismatch { expected: n, got: i }
                    })?;
                }
                m
            }
            OperatorModel::Dense(d) => {
                let full = d.matrix();
                if n > full.nrows() {
                    return Err(LabError::DimensionMismatch { expected: full.nrows(), got: n });
                }
                full.view((0, 0), (n, n)).into_owned()
            }
        };
        Ok(DenseTruncation { n, a, perturbed: None })
    }

    pub fn from_matrix(a: CMatrix) -> Self {
        DenseTruncation {
            n: a.nrows(),
            a,
            perturbed: None,
        }
    }

    /// Adds `Σ_j b_j c_j^*`.
    pub fn with_rank_update(mut self, b: &[Vec<C64>], c: &[Vec<C64>]) -> Result<Self> {
        let mut m = self.a.clone();
        for (bj, cj) in b.iter().zip(c) {
            if bj.len() != self.n || cj.len() != self.n {
                return Err(LabError::DimensionMismatch { expected: self.n, got: bj.len().min(cj.len()) });
            }
            for i in 0..self.n {
                for l in 0..self.n {
                    m[(i, l)] += bj[i] * cj[l].conj();
                }
            }
        }
        self.perturbed = Some(m);
        Ok(self)
    }

    pub fn with_perturbation(model: &OperatorModel, pert: &FiniteRankPerturbation, n: usize) -> Result<Self> {
        let (b, c) = pert.columns(model, n)?;
        Self::from_model(model, n)?.with_rank_update(&b, &c)
    }

    /// The perturbed matrix when present, else `A_n`.
    pub fn matrix(&self) -> &CMatrix {
        self.perturbed.as_ref().unwrap_or(&self.a)
    }

    fn shifted(&self, lambda: C64) -> CMatrix {
        CMatrix::from_diagonal_element(self.n, self.n, lambda) - self.matrix()
    }
}

/// `1 / σ_min(λ - M)`.
pub fn oracle_resolvent_norm(t: &DenseTruncation, lambda: C64) -> Result<f64> {
    let sv = t.shifted(lambda).svd(false, false).singular_values;
    let smin = sv.min();
    if !(smin > 0.0) {
        return Err(LabError::Singular(format!("λ - A singular at {lambda}")));
    }
    Ok(1.0 / smin)
}

/// All eigenvalues, from a dense eigensolver independent of the fast paths.
pub fn oracle_eigens(t: &DenseTruncation) -> Vec<C64> {
    if t.n == 0 {
        return Vec::new();
    }
    let m = t.matrix();
    let fm = faer::Mat::<faer::c64>::from_fn(t.n, t.n, |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    });
    match fm.eigenvalues() {
        Ok(ev) => ev.into_iter().map(|z| C64::new(z.re, z.im)).collect(),
        Err(_) => {
            let (_, tri) = m.clone().schur().unpack();
            tri.diagonal().iter().copied().collect()
        }
    }
}

pub fn oracle_spectral_radius(eigens: &[C64]) -> f64 {
    eigens.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `M^n x` by repeated dense products.
pub fn oracle_orbit(t: &DenseTruncation, x: &[C64], n: u64) -> Vec<C64> {
    let mut v = CMatrix::from_column_slice(t.n, 1, x);
    for _ in 0..n {
        v = t.matrix() * v;
    }
    v.iter().copied().collect()
}

/// First `n ≤ n_max` with `‖M^n x‖ ≤ threshold ‖x‖`.
pub fn oracle_first_passage(t: &DenseTruncation, x: &[C64], threshold: f64, n_max: u64) -> Option<u64> {
    let target = threshold * x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let mut v = CMatrix::from_column_slice(t.n, 1, x);
    for n in 0..=n_max {
        if v.norm() <= target {
            return Some(n);
        }
        v = t.matrix() * v;
    }
    None
}

/// Solves `(λ - M) y = x` by dense LU.
pub fn oracle_solve(t: &DenseTruncation, lambda: C64, x: &[C64]) -> Result<Vec<C64>> {
    let rhs = CMatrix::from_column_slice(t.n, 1, x);
    t.shifted(lambda)
        .lu()
        .solve(&rhs)
        .map(|y| y.iter().copied().collect())
        .ok_or_else(|| LabError::Singular(format!("λ - A singular at {lambda}")))
}

/// Dense resolvent `(λ - M)^{-1}`.
pub fn oracle_resolvent(t: &DenseTruncation, lambda: C64) -> Result<CMatrix> {
    t.shifted(lambda)
        .try_inverse()
        .ok_or_else(|| LabError::Singular(format!("λ - A singular at {lambda}")))
}

/// `C (λ - A_n)^{-1} B` with `C` built from the rows `c_i^*`.
pub fn oracle_transfer(t: &DenseTruncation, b: &[Vec<C64>], c: &[Vec<C64>], lambda: C64) -> Result<CMatrix> {
    let a_only = DenseTruncation::from_matrix(t.a.clone());
    let r = oracle_resolvent(&a_only, lambda)?;
    let bm = CMatrix::from_fn(t.n, b.len(), |i, j| b[j][i]);
    let cm = CMatrix::from_fn(c.len(), t.n, |i, l| c[i][l].conj());
    Ok(cm * r * bm)
}

/// `∫_0^{2π} ‖(re^{iφ} - A_n)^{-1} x‖² dφ` for a diagonal truncation, by
/// the Poisson kernel identity `∫ dφ / |re^{iφ} - a|² = 2π / (r² - |a|²)`.
pub fn oracle_poisson_integral(t: &DenseTruncation, r: f64, x: &[C64]) -> Result<f64> {
    let m = t.matrix();
    for i in 0..t.n {
        for l in 0..t.n {
            if i != l && m[(i, l)] != ZERO {
                return Err(LabError::Unsupported("closed form needs a diagonal truncation".into()));
            }
        }
    }
    Ok((0..t.n)
        .map(|i| TAU * x[i].norm_sqr() / (r * r - m[(i, i)].norm_sqr()))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;
    use crate::model::DiagonalModel;

    fn scalar(a: f64) -> DenseTruncation {
        let m: OperatorModel = DiagonalModel::finite(vec![C64::new(a, 0.0)]).unwrap().into();
        DenseTruncation::from_model(&m, 1).unwrap()
    }

    #[test]
    fn scalar_references() {
        let t = scalar(0.5);
        assert!((oracle_resolvent_norm(&t, ONE).unwrap() - 2.0).abs() < 1e-15);
        let p = t.with_rank_update(&[vec![ONE]], &[vec![ONE]]).unwrap();
        assert!((oracle_eigens(&p)[0] - C64::new(1.5, 0.0)).norm() < 1e-15);
        assert_eq!(oracle_orbit(&p, &[ONE], 0), vec![ONE]);
    }

    #[test]
    fn diagonal_eigens_are_entries() {
        let entries: Vec<C64> = (0..6).map(|i| C64::from_polar(0.1 * i as f64, i as f64)).collect();
        let m: OperatorModel = DiagonalModel::finite(entries.clone()).unwrap().into();
        let t = DenseTruncation::from_model(&m, 6).unwrap();
        let mut ev = oracle_eigens(&t);
        ev.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        for (a, b) in ev.iter().zip(&entries) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn first_passage_of_a_scalar() {
        let t = scalar(0.5);
        assert_eq!(oracle_first_passage(&t, &[ONE], 1e-3, 100), Some(10));
    }
}
