//! Parametric entry rules for diagonal models.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg::{unit, C64};

fn plus_one() -> f64 {
    1.0
}

/// Entry rule of a diagonal model. Entries are split into interleaved
/// branches: entry `n` (1-based) belongs to branch `(n-1) mod N` and has
/// branch index `m = (n-1) div N + 1`, where `N` is the number of branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryRule {
    /// No rule: the model is finite and consists of its explicit prefix.
    None,
    /// `a(m) = (1 - radial_coef·m^-radial_exp) · exp(i(φ_b + side·angle_coef·m^-angle_exp))`.
    PolarApproach {
        phis: Vec<f64>,
        radial_coef: f64,
        radial_exp: f64,
        angle_coef: f64,
        angle_exp: f64,
        #[serde(default = "plus_one")]
        side: f64,
    },
}

impl EntryRule {
    pub fn is_finite(&self) -> bool {
        matches!(self, EntryRule::None)
    }

    pub fn branches(&self) -> usize {
        match self {
            EntryRule::None => 0,
            EntryRule::PolarApproach { phis, .. } => phis.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EntryRule::None => Ok(()),
            EntryRule::PolarApproach {
                phis,
                radial_coef,
                radial_exp,
                angle_coef,
                angle_exp,
                side,
            } => {
                let mut problems = Vec::new();
                if phis.is_empty() {
                    problems.push("rule.phis must not be empty".to_string());
                }
                if !(*radial_coef > 0.0 && *radial_coef < 2.0) {
                    problems.push(format!("rule.radial_coef = {radial_coef} must lie in (0, 2)"));
                }
                if !(*radial_exp > 0.0) {
                    problems.push(format!("rule.radial_exp = {radial_exp} must be positive"));
                }
                if !angle_coef.is_finite() || !(*angle_exp > 0.0) {
                    problems.push("rule.angle_coef must be finite and rule.angle_exp positive".into());
                }
                if side.abs() != 1.0 {
                    problems.push(format!("rule.side = {side} must be +1 or -1"));
                }
                if problems.is_empty() {
                    Ok(())
                } else {
                    Err(LabError::Validation(problems))
                }
            }
        }
    }

    /// Global 1-based index of branch index `m` on branch `b`.
    pub fn global_index(&self, branch: usize, m: u64) -> u64 {
        (m - 1) * self.branches() as u64 + branch as u64 + 1
    }

    /// Smallest branch index whose global index exceeds `after`.
    pub fn first_index_after(&self, branch: usize, after: u64) -> u64 {
        let n = self.branches() as u64;
        let b = branch as u64;
        if after < b + 1 {
            1
        } else {
            (after - b - 1) / n + 2
        }
    }

    pub fn branch_entry(&self, branch: usize, m: u64) -> C64 {
        match self {
            EntryRule::None => C64::new(0.0, 0.0),
            EntryRule::PolarApproach {
                phis,
                radial_coef,
                radial_exp,
                angle_coef,
                angle_exp,
                side,
            } => {
                let m = m as f64;
                let radius = 1.0 - radial_coef * m.powf(-radial_exp);
                let angle = phis[branch] + side * angle_coef * m.powf(-angle_exp);
                C64::from_polar(radius, angle)
            }
        }
    }

    /// Entry with global 1-based index `n`, `None` for finite rules.
    pub fn entry(&self, n: u64) -> Option<C64> {
        let branches = self.branches() as u64;
        if branches == 0 || n == 0 {
            return None;
        }
        let branch = ((n - 1) % branches) as usize;
        let m = (n - 1) / branches + 1;
        Some(self.branch_entry(branch, m))
    }

    pub fn limit(&self, branch: usize) -> C64 {
        match self {
            EntryRule::None => C64::new(0.0, 0.0),
            EntryRule::PolarApproach { phis, .. } => unit(phis[branch]),
        }
    }

    pub fn limit_angles(&self) -> Vec<f64> {
        match self {
            EntryRule::None => Vec::new(),
            EntryRule::PolarApproach { phis, .. } => phis.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s1() -> EntryRule {
        EntryRule::PolarApproach {
            phis: vec![0.0],
            radial_coef: 1.0,
            radial_exp: 2.0,
            angle_coef: 1.0,
            angle_exp: 1.0,
            side: 1.0,
        }
    }

    #[test]
    fn first_entries_of_single_branch_rule() {
        let rule = s1();
        assert_eq!(rule.entry(1).unwrap().norm(), 0.0);
        let a2 = rule.entry(2).unwrap();
        assert!((a2 - C64::from_polar(0.75, 0.5)).norm() < 1e-15);
        assert!((a2.re - 0.6582).abs() < 1e-4 && (a2.im - 0.3596).abs() < 1e-4);
    }

    #[test]
    fn interleaved_branch_indexing() {
        let rule = EntryRule::PolarApproach {
            phis: vec![0.0, std::f64::consts::PI],
            radial_coef: 1.0,
            radial_exp: 1.0,
            angle_coef: 1.0,
            angle_exp: 1.0,
            side: 1.0,
        };
        for n in 1..50u64 {
            let b = ((n - 1) % 2) as usize;
            let m = (n - 1) / 2 + 1;
            assert_eq!(rule.global_index(b, m), n);
            assert_eq!(rule.entry(n).unwrap(), rule.branch_entry(b, m));
        }
        assert_eq!(rule.first_index_after(0, 10), 6);
        assert_eq!(rule.global_index(0, 6), 11);
        assert_eq!(rule.first_index_after(1, 10), 6);
        assert_eq!(rule.global_index(1, 5), 10);
        assert_eq!(rule.global_index(1, 6), 12);
    }

    #[test]
    fn rejects_radius_outside_disk() {
        let mut rule = s1();
        if let EntryRule::PolarApproach { radial_coef, .. } = &mut rule {
            *radial_coef = 2.5;
        }
        assert!(rule.validate().is_err());
    }
}
