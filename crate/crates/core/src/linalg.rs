//! Small complex linear-algebra helpers shared by the engines.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// `⟨x, y⟩ = Σ x_i conj(y_i)`, linear in the first slot.
pub fn inner(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}

pub fn norm_sq(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    norm_sq(x).sqrt()
}

pub fn sub(x: &[C64], y: &[C64]) -> Vec<C64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn to_matrix_column(x: &[C64]) -> CMatrix {
    CMatrix::from_column_slice(x.len(), 1, x)
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn min_singular_value(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    m.clone().svd(false, false).singular_values.min()
}

/// Gram matrix `G_ij = ⟨v_j, v_i⟩` of a column family.
pub fn gram(cols: &[Vec<C64>]) -> CMatrix {
    let p = cols.len();
    CMatrix::from_fn(p, p, |i, j| inner(&cols[j], &cols[i]))
}

/// Largest eigenvalue of a Hermitian positive semidefinite matrix.
pub fn hermitian_max_eigenvalue(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)].re.max(0.0);
    }
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    sym.symmetric_eigenvalues().max().max(0.0)
}

/// Operator norm of the map `C^p → X`, `u ↦ Σ u_j v_j`.
pub fn block_norm(cols: &[Vec<C64>]) -> f64 {
    hermitian_max_eigenvalue(&gram(cols)).sqrt()
}

/// `count` points log-spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == count - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// `count` points evenly spaced from `lo` to `hi` inclusive.
pub fn lin_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Distance between two angles measured around the circle, in `[0, π]`.
pub fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

pub fn unit(phi: f64) -> C64 {
    C64::from_polar(1.0, phi)
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Complex vector with entries uniform in the square `[-1, 1]²`.
pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<C64> {
    (0..dim)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

pub fn basis_vector(dim: usize, index: usize) -> Vec<C64> {
    let mut v = vec![ZERO; dim];
    v[index] = ONE;
    v
}

/// Determinant of a small square matrix through LU.
pub fn determinant(m: &CMatrix) -> C64 {
    if m.nrows() == 0 {
        return ONE;
    }
    m.clone().lu().determinant()
}

/// Principal-branch power `z^θ`, exact for `θ = 0`.
pub fn principal_pow(z: C64, theta: f64) -> C64 {
    if theta == 0.0 {
        ONE
    } else if theta == 1.0 {
        z
    } else {
        (z.ln() * theta).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_distance_wraps() {
        assert!((circ_dist(0.1, TAU - 0.1) - 0.2).abs() < 1e-14);
        assert!((circ_dist(0.0, std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn log_space_hits_endpoints() {
        let v = log_space(1e-6, 1.0, 61);
        assert_eq!(v.len(), 61);
        assert_eq!(v[0], 1e-6);
        assert_eq!(v[60], 1.0);
        assert!((v[10] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn block_norm_of_orthogonal_columns() {
        let a = vec![C64::new(3.0, 0.0), ZERO];
        let b = vec![ZERO, C64::new(0.0, 4.0)];
        assert!((block_norm(&[a, b]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn principal_pow_matches_sqrt() {
        let z = C64::new(0.3, -0.8);
        assert!((principal_pow(z, 0.5) - z.sqrt()).norm() < 1e-14);
    }
}
