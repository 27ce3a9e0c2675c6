//! The operator `A`: exact diagonal models and dense truncations.

pub mod dense;
pub mod diagonal;
pub mod fractional;
pub mod rules;

pub use dense::DenseModel;
pub use diagonal::{DiagonalModel, SpectralPoint, SpectralSup};
pub use fractional::FractionalFactor;
pub use rules::EntryRule;

use nalgebra::DVector;

use crate::error::{LabError, Result};
use crate::linalg::{spectral_norm, to_matrix_column, CMatrix, C64};

/// `λ`-independent data for repeated smoothed resolvent norms.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoother {
    Diagonal { weights: Vec<(usize, f64)>, head_sq: Vec<f64> },
    Dense { factor: CMatrix },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorModel {
    Diagonal(DiagonalModel),
    Dense(DenseModel),
}

impl From<DiagonalModel> for OperatorModel {
    fn from(m: DiagonalModel) -> Self {
        OperatorModel::Diagonal(m)
    }
}

impl From<DenseModel> for OperatorModel {
    fn from(m: DenseModel) -> Self {
        OperatorModel::Dense(m)
    }
}

impl OperatorModel {
    /// Dimension of the vectors the model acts on (the head length for
    /// diagonal models).
    pub fn dim(&self) -> usize {
        match self {
            OperatorModel::Diagonal(d) => d.dim(),
            OperatorModel::Dense(d) => d.dim(),
        }
    }

    pub fn unit_points(&self) -> &[f64] {
        match self {
            OperatorModel::Diagonal(d) => d.unit_points(),
            OperatorModel::Dense(d) => d.unit_points(),
        }
    }

    pub fn floor(&self) -> f64 {
        match self {
            OperatorModel::Diagonal(d) => d.floor(),
            OperatorModel::Dense(d) => d.floor(),
        }
    }

    pub fn with_floor(self, floor: f64) -> Self {
        match self {
            OperatorModel::Diagonal(d) => d.with_floor(floor).into(),
            OperatorModel::Dense(d) => d.with_floor(floor).into(),
        }
    }

    pub fn as_diagonal(&self) -> Option<&DiagonalModel> {
        match self {
            OperatorModel::Diagonal(d) => Some(d),
            OperatorModel::Dense(_) => None,
        }
    }

    fn check_dim(&self, x: &[C64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(LabError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(x)?;
        Ok(match self {
            OperatorModel::Diagonal(d) => d.head().iter().zip(x).map(|(a, v)| a * v).collect(),
            OperatorModel::Dense(d) => (d.matrix() * to_matrix_column(x)).iter().copied().collect(),
        })
    }

    pub fn apply_adjoint(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(x)?;
        Ok(match self {
            OperatorModel::Diagonal(d) => d.head().iter().zip(x).map(|(a, v)| a.conj() * v).collect(),
            OperatorModel::Dense(d) => (d.matrix().adjoint() * to_matrix_column(x))
                .iter()
                .copied()
                .collect(),
        })
    }

    /// `Aⁿx`.
    pub fn orbit(&self, x: &[C64], n: u64) -> Result<Vec<C64>> {
        self.check_dim(x)?;
        match self {
            OperatorModel::Diagonal(d) => Ok(d
                .head()
                .iter()
                .zip(x)
                .map(|(a, v)| v * pow_u64(*a, n))
                .collect()),
            OperatorModel::Dense(_) => {
                let mut y = x.to_vec();
                for _ in 0..n {
                    y = self.apply(&y)?;
                }
                Ok(y)
            }
        }
    }

    pub fn resolvent_apply(&self, lambda: C64, x: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(x)?;
        match self {
            OperatorModel::Diagonal(d) => {
                d.check_spectrum(lambda)?;
                Ok(d.head().iter().zip(x).map(|(a, v)| v / (lambda - a)).collect())
            }
            OperatorModel::Dense(d) => d.resolvent_apply(lambda, x),
        }
    }

    pub fn fractional_apply(&self, factor: FractionalFactor, x: &[C64]) -> Result<Vec<C64>> {
        self.check_dim(x)?;
        let phi = *self.unit_points().get(factor.k).ok_or_else(|| {
            LabError::Validation(vec![format!("unit point index {} out of range", factor.k)])
        })?;
        match self {
            OperatorModel::Diagonal(d) => Ok(d
                .head()
                .iter()
                .zip(x)
                .map(|(a, v)| v * fractional::entry_weight(*a, phi, factor.theta, factor.conjugate))
                .collect()),
            OperatorModel::Dense(d) => {
                let p = fractional::dense_fractional_power(d.matrix(), phi, factor.theta, factor.conjugate)?;
                Ok((p * to_matrix_column(x)).iter().copied().collect())
            }
        }
    }

    /// `sup_{1 ≤ n ≤ n_probe} ‖Aⁿ‖`.
    pub fn power_bound(&self, n_probe: usize) -> Result<f64> {
        let n_probe = n_probe.max(1);
        match self {
            OperatorModel::Diagonal(d) => {
                let s = d.sup_over_spectrum(|z| z.norm())?.value;
                Ok(if s <= 1.0 { s } else { s.powi(n_probe as i32) })
            }
            OperatorModel::Dense(d) => Ok(d.power_bound(n_probe)),
        }
    }

    /// `‖R(λ, A)‖`; exact for diagonal models.
    pub fn resolvent_norm(&self, lambda: C64) -> Result<f64> {
        match self {
            OperatorModel::Diagonal(d) => Ok(1.0 / d.check_spectrum(lambda)?),
            OperatorModel::Dense(d) => d.resolvent_norm(lambda),
        }
    }

    /// `‖R(λ, A) Π_k Λ_k^{θ_k}‖` for the given `(k, θ_k)` factors.
    pub fn smoothed_resolvent_norm(&self, lambda: C64, weights: &[(usize, f64)]) -> Result<f64> {
        self.smoothed_norm_with(&self.smoother(weights)?, lambda)
    }

    /// Precomputes what a smoothed norm needs independently of `λ`.
    pub fn smoother(&self, weights: &[(usize, f64)]) -> Result<Smoother> {
        Ok(match self {
            OperatorModel::Diagonal(d) => Smoother::Diagonal {
                weights: weights.to_vec(),
                head_sq: d.head_factor_sq(weights),
            },
            OperatorModel::Dense(_) => Smoother::Dense {
                factor: self.factor_matrix(weights)?,
            },
        })
    }

    pub fn smoothed_norm_with(&self, smoother: &Smoother, lambda: C64) -> Result<f64> {
        match (self, smoother) {
            (OperatorModel::Diagonal(d), Smoother::Diagonal { weights, head_sq }) => {
                d.smoothed_norm(lambda, weights, head_sq)
            }
            (OperatorModel::Dense(d), Smoother::Dense { factor }) => {
                let lu = d.shifted(lambda).lu();
                let solved = lu.solve(factor).ok_or(LabError::SpectrumHit {
                    re: lambda.re,
                    im: lambda.im,
                    distance: 0.0,
                    floor: d.floor(),
                })?;
                Ok(spectral_norm(&solved))
            }
            _ => Err(LabError::Unsupported("smoother built for a different model kind".into())),
        }
    }

    /// `‖Π_k Λ_k^{θ_k}‖`.
    pub fn factor_norm(&self, weights: &[(usize, f64)]) -> Result<f64> {
        match self {
            OperatorModel::Diagonal(d) => Ok(d.sup_over_spectrum(|z| d.factor_magnitude(z, weights))?.value),
            OperatorModel::Dense(_) => Ok(spectral_norm(&self.factor_matrix(weights)?)),
        }
    }

    /// Dense matrix of `Π_k Λ_k^{θ_k}` on the model's head.
    pub fn factor_matrix(&self, weights: &[(usize, f64)]) -> Result<CMatrix> {
        let n = self.dim();
        let mut out = CMatrix::identity(n, n);
        match self {
            OperatorModel::Diagonal(d) => {
                let w: Vec<C64> = d.head().iter().map(|&a| d.factor_weight(a, weights, false)).collect();
                out.set_diagonal(&DVector::from_vec(w));
            }
            OperatorModel::Dense(d) => {
                for &(k, theta) in weights {
                    let phi = self.unit_points()[k];
                    out = out * fractional::dense_fractional_power(d.matrix(), phi, theta, false)?;
                }
            }
        }
        Ok(out)
    }

    /// The same operator with `dim` explicit coordinates (dense models
    /// keep their leading principal block).
    pub fn truncated(&self, dim: usize) -> Result<OperatorModel> {
        match self {
            OperatorModel::Diagonal(d) => Ok(d.truncated(dim)?.into()),
            OperatorModel::Dense(d) => {
                let dim = dim.min(d.dim());
                let block = d.matrix().view((0, 0), (dim, dim)).into_owned();
                Ok(DenseModel::new(block, d.unit_points().to_vec())?.with_floor(d.floor()).into())
            }
        }
    }

    /// Explicit matrix of the head.
    pub fn head_matrix(&self) -> CMatrix {
        match self {
            OperatorModel::Diagonal(d) => CMatrix::from_diagonal(&DVector::from_column_slice(d.head())),
            OperatorModel::Dense(d) => d.matrix().clone(),
        }
    }
}

fn pow_u64(a: C64, mut n: u64) -> C64 {
    let mut base = a;
    let mut acc = C64::new(1.0, 0.0);
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{inner, norm, random_vector, seeded_rng, sub, unit};
    use proptest::prelude::*;

    fn s1(n_max: usize) -> OperatorModel {
        DiagonalModel::new(
            EntryRule::PolarApproach {
                phis: vec![0.0],
                radial_coef: 1.0,
                radial_exp: 2.0,
                angle_coef: 1.0,
                angle_exp: 1.0,
                side: 1.0,
            },
            Vec::new(),
            n_max,
            vec![0.0],
        )
        .unwrap()
        .into()
    }

    fn finite(entries: &[C64]) -> OperatorModel {
        DiagonalModel::finite(entries.to_vec()).unwrap().into()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn apply_is_entrywise() {
        let m = finite(&[c(0.5, 0.0), c(0.0, 0.3)]);
        let y = m.apply(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(y, vec![c(0.5, 0.0), c(0.0, 0.3)]);
        assert!(matches!(m.apply(&[c(1.0, 0.0)]), Err(LabError::DimensionMismatch { .. })));
    }

    #[test]
    fn s1_apply_and_orbit() {
        let m = s1(10);
        let mut e2 = vec![c(0.0, 0.0); 10];
        e2[1] = c(1.0, 0.0);
        let y = m.apply(&e2).unwrap();
        assert!((y[1] - C64::from_polar(0.75, 0.5)).norm() < 1e-15);
        let mut e1 = vec![c(0.0, 0.0); 10];
        e1[0] = c(1.0, 0.0);
        assert!(norm(&m.orbit(&e1, 1).unwrap()) == 0.0);
        assert_eq!(m.orbit(&e1, 0).unwrap(), e1);
        let scalar = finite(&[c(0.5, 0.0)]);
        assert!((scalar.orbit(&[c(1.0, 0.0)], 3).unwrap()[0] - c(0.125, 0.0)).norm() < 1e-16);
    }

    #[test]
    fn resolvent_examples() {
        let m = finite(&[c(0.5, 0.0)]);
        assert!((m.resolvent_apply(c(1.0, 0.0), &[c(1.0, 0.0)]).unwrap()[0] - c(2.0, 0.0)).norm() < 1e-15);
        let s = s1(10);
        let mut e1 = vec![c(0.0, 0.0); 10];
        e1[0] = c(1.0, 0.0);
        let y = s.resolvent_apply(c(-1.0, 0.0), &e1).unwrap();
        assert!((y[0] + c(1.0, 0.0)).norm() < 1e-15);
        assert!(matches!(s.resolvent_apply(c(1.0, 0.0), &e1), Err(LabError::SpectrumHit { .. })));
        assert!((s1(2000).resolvent_norm(c(-1.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fractional_examples() {
        let m = finite(&[c(0.5, 0.0)]);
        let m = match m {
            OperatorModel::Diagonal(d) => DiagonalModel::new(EntryRule::None, d.prefix().to_vec(), 1, vec![0.0]).unwrap(),
            _ => unreachable!(),
        };
        let m: OperatorModel = m.into();
        let y = m.fractional_apply(FractionalFactor::new(0, 1.0), &[c(1.0, 0.0)]).unwrap();
        assert!((y[0] - c(0.5, 0.0)).norm() < 1e-15);
        let y0 = m.fractional_apply(FractionalFactor::new(0, 0.0), &[c(0.3, 0.1)]).unwrap();
        assert_eq!(y0, vec![c(0.3, 0.1)]);
        let s = s1(4);
        let mut e2 = vec![c(0.0, 0.0); 4];
        e2[1] = c(1.0, 0.0);
        let y = s.fractional_apply(FractionalFactor::new(0, -1.0), &e2).unwrap();
        assert!((norm(&y) - 2.0157).abs() < 1e-4);
    }

    #[test]
    fn power_bounds() {
        assert_eq!(finite(&[c(0.5, 0.0), c(0.3, 0.0)]).power_bound(10).unwrap(), 0.5);
        assert!((s1(2000).power_bound(64).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_contraction_power_bound() {
        let mut rng = seeded_rng(3, 0);
        let raw = CMatrix::from_fn(20, 20, |_, _| {
            let v = random_vector(&mut rng, 1);
            v[0]
        });
        let a = &raw * C64::new(0.9 / spectral_norm(&raw), 0.0);
        let m: OperatorModel = DenseModel::new(a, vec![]).unwrap().into();
        assert!(m.power_bound(16).unwrap() <= 0.9 + 1e-9);
    }

    #[test]
    fn dense_and_diagonal_resolvent_norms_agree() {
        let entries = [c(0.5, 0.1), c(-0.2, 0.7), c(0.0, -0.9)];
        let diag = finite(&entries);
        let dense: OperatorModel = DenseModel::new(diag.head_matrix(), vec![]).unwrap().into();
        for lambda in [c(1.2, 0.0), c(0.0, 1.05), c(-1.5, -0.5)] {
            let a = diag.resolvent_norm(lambda).unwrap();
            let b = dense.resolvent_norm(lambda).unwrap();
            assert!((a - b).abs() < 1e-6 * a);
        }
    }

    proptest! {
        #[test]
        fn resolvent_identity(re in -2.0f64..2.0, im in -2.0f64..2.0, seed in 0u64..1000) {
            let lambda = c(re, im);
            prop_assume!(lambda.norm() > 1.001);
            let m = s1(40);
            let mut rng = seeded_rng(seed, 1);
            let x = random_vector(&mut rng, 40);
            let y = m.resolvent_apply(lambda, &x).unwrap();
            let ay = m.apply(&y).unwrap();
            let back: Vec<C64> = y.iter().zip(&ay).map(|(v, w)| lambda * v - w).collect();
            prop_assert!(norm(&sub(&back, &x)) <= 1e-10 * norm(&x));
        }

        #[test]
        fn semigroup_property(m1 in 0u64..40, n1 in 0u64..40, seed in 0u64..1000) {
            let m = s1(30);
            let x = random_vector(&mut seeded_rng(seed, 2), 30);
            let lhs = m.orbit(&x, m1 + n1).unwrap();
            let rhs = m.orbit(&m.orbit(&x, n1).unwrap(), m1).unwrap();
            prop_assert!(norm(&sub(&lhs, &rhs)) <= 1e-13 * norm(&x).max(1e-300));
        }

        #[test]
        fn fractional_additivity(t1 in -2.0f64..2.0, t2 in -2.0f64..2.0, seed in 0u64..1000) {
            let m = s1(60);
            let x = random_vector(&mut seeded_rng(seed, 3), 60);
            let lhs = m.fractional_apply(FractionalFactor::new(0, t1), &m.fractional_apply(FractionalFactor::new(0, t2), &x).unwrap()).unwrap();
            let rhs = m.fractional_apply(FractionalFactor::new(0, t1 + t2), &x).unwrap();
            prop_assert!(norm(&sub(&lhs, &rhs)) <= 1e-10 * norm(&rhs));
        }

        #[test]
        fn adjoint_consistency(seed in 0u64..1000) {
            let m = s1(50);
            let mut rng = seeded_rng(seed, 4);
            let x = random_vector(&mut rng, 50);
            let y = random_vector(&mut rng, 50);
            let lhs = inner(&m.apply(&x).unwrap(), &y);
            let rhs = inner(&x, &m.apply_adjoint(&y).unwrap());
            prop_assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
        }

        #[test]
        fn diagonal_norm_is_inverse_distance(phi in 0.0f64..std::f64::consts::TAU, r in 1.0f64..2.0) {
            let m = s1(200);
            let lambda = unit(phi) * r;
            prop_assume!((lambda - c(1.0, 0.0)).norm() > 1e-6);
            let n = m.resolvent_norm(lambda).unwrap();
            let mut d = (lambda - c(1.0, 0.0)).norm();
            if let OperatorModel::Diagonal(diag) = &m {
                for k in 1..=20_000u64 {
                    d = d.min((lambda - diag.entry(k).unwrap()).norm());
                }
            }
            prop_assert!((n * d - 1.0).abs() < 1e-9);
        }
    }
}
