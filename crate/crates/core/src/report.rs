//! Certificate reports and the parallel, order-preserving scan helper.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{LabError, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Certified,
    Refuted,
    Inconclusive,
}

impl Status {
    /// Worst of two statuses: refuted beats inconclusive beats certified.
    pub fn combine(self, other: Status) -> Status {
        use Status::*;
        match (self, other) {
            (Refuted, _) | (_, Refuted) => Refuted,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Certified,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Certified => "certified",
            Status::Refuted => "refuted",
            Status::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridMeta {
    pub points: usize,
    pub refined_points: usize,
    /// Smallest offset from a unit point used by the grid.
    pub floor: f64,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub supremum: f64,
    pub argmax: Option<[f64; 2]>,
    pub grid: GridMeta,
    pub refinement_delta: Option<f64>,
    pub status: Status,
    pub witness: Option<[f64; 2]>,
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CertificateReport {
    pub fn new(name: &str) -> Self {
        CertificateReport {
            name: name.to_string(),
            supremum: 0.0,
            argmax: None,
            grid: GridMeta::default(),
            refinement_delta: None,
            status: Status::Inconclusive,
            witness: None,
            values: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Report standing in for a stage that failed with an error.
    pub fn failed(name: &str, err: &LabError) -> Self {
        let mut r = Self::new(name);
        r.supremum = f64::NAN;
        r.notes.push(format!("{}: {}", err.kind(), err));
        r
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn set(&mut self, key: &str, v: f64) {
        self.values.insert(key.to_string(), v);
    }

    pub fn refute(&mut self, at: C64, why: String) {
        self.status = Status::Refuted;
        self.witness = Some([at.re, at.im]);
        self.notes.push(why);
    }
}

pub fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Evaluates `f` at every point in parallel and returns the values in grid
/// order; the first error in grid order wins.
pub fn scan<T, F>(points: &[C64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(C64) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = points.par_iter().map(|&z| f(z)).collect();
    results.into_iter().collect()
}

/// Largest value and its first index; NaN counts as +∞.
pub fn argmax(values: &[f64]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in values.iter().enumerate() {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if best.map(|(b, _)| v > b).unwrap_or(true) {
            best = Some((v, i));
        }
    }
    best
}

/// Relative growth of a supremum under refinement, `(fine - coarse) / fine`.
pub fn refinement_delta(coarse: f64, fine: f64) -> f64 {
    if fine == 0.0 && coarse == 0.0 {
        0.0
    } else if !fine.is_finite() || !coarse.is_finite() {
        f64::INFINITY
    } else {
        ((fine - coarse) / fine).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_prefers_refutation() {
        assert_eq!(Status::Certified.combine(Status::Inconclusive), Status::Inconclusive);
        assert_eq!(Status::Inconclusive.combine(Status::Refuted), Status::Refuted);
        assert_eq!(Status::Certified.combine(Status::Certified), Status::Certified);
    }

    #[test]
    fn scan_preserves_order_and_first_error() {
        let pts: Vec<C64> = (0..100).map(|i| C64::new(i as f64, 0.0)).collect();
        let v = scan(&pts, |z| Ok(z.re * 2.0)).unwrap();
        assert_eq!(v[37], 74.0);
        let e = scan(&pts, |z| {
            if z.re >= 10.0 {
                Err(LabError::Singular(format!("{}", z.re)))
            } else {
                Ok(0.0)
            }
        });
        assert_eq!(e.unwrap_err(), LabError::Singular("10".into()));
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some((3.0, 1)));
    }
}
