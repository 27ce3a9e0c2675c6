//! Exact diagonal (normal) models with a rule-generated infinite tail.

use crate::error::{LabError, Result};
use crate::linalg::{circ_dist, principal_pow, unit, C64, ONE};

use super::rules::EntryRule;

/// Largest branch index probed when searching a rule tail.
pub const TAIL_SEARCH_CAP: u64 = 10_000_000_000_000;

/// Where a supremum over the spectrum was attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralPoint {
    /// Explicit entry with the given 1-based index.
    Entry(u64),
    /// Limit point of branch `k`.
    Limit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSup {
    pub value: f64,
    pub at: SpectralPoint,
    /// Supremum over the entries up to `n_max` only.
    pub head: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalModel {
    rule: EntryRule,
    prefix: Vec<C64>,
    n_max: usize,
    unit_points: Vec<f64>,
    head: Vec<C64>,
    head_re: Vec<f64>,
    head_im: Vec<f64>,
    /// Dyadic ladder `(m, a(m))` of tail indices per branch.
    rungs: Vec<Vec<(u64, C64)>>,
    floor: f64,
}

impl DiagonalModel {
    pub fn new(rule: EntryRule, prefix: Vec<C64>, n_max: usize, unit_points: Vec<f64>) -> Result<Self> {
        rule.validate()?;
        let mut problems = Vec::new();
        if n_max == 0 {
            problems.push("n_max must be positive".to_string());
        }
        if rule.is_finite() && n_max > prefix.len() {
            problems.push(format!(
                "n_max = {n_max} exceeds the {} explicit entries of a finite model",
                prefix.len()
            ));
        }
        for (i, a) in prefix.iter().enumerate() {
            if !(a.norm() < 1.0) {
                problems.push(format!("entry {} has modulus {} (must be < 1)", i + 1, a.norm()));
            }
        }
        for phi in rule.limit_angles() {
            if !unit_points.iter().any(|&u| circ_dist(u, phi) < 1e-12) {
                problems.push(format!("rule limit angle {phi} is not a declared unit point"));
            }
        }
        if !problems.is_empty() {
            return Err(LabError::Validation(problems));
        }
        let mut model = DiagonalModel {
            rule,
            prefix,
            n_max,
            unit_points,
            head: Vec::new(),
            head_re: Vec::new(),
            head_im: Vec::new(),
            rungs: Vec::new(),
            floor: 1e-13,
        };
        model.head = (1..=n_max as u64).map(|n| model.raw_entry(n)).collect();
        model.head_re = model.head.iter().map(|z| z.re).collect();
        model.head_im = model.head.iter().map(|z| z.im).collect();
        let explicit_end = model.prefix.len().max(n_max) as u64;
        model.rungs = (0..model.rule.branches())
            .map(|b| {
                let mut m = model.rule.first_index_after(b, explicit_end);
                let mut ladder = vec![(m, model.rule.branch_entry(b, m))];
                while m < TAIL_SEARCH_CAP {
                    m = (m * 2).min(TAIL_SEARCH_CAP);
                    ladder.push((m, model.rule.branch_entry(b, m)));
                }
                ladder
            })
            .collect();
        Ok(model)
    }

    /// Finite model with the given entries and no unit points.
    pub fn finite(entries: Vec<C64>) -> Result<Self> {
        let n = entries.len();
        Self::new(EntryRule::None, entries, n, Vec::new())
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    fn raw_entry(&self, n: u64) -> C64 {
        if (n as usize) <= self.prefix.len() {
            self.prefix[n as usize - 1]
        } else {
            self.rule.entry(n).unwrap_or_default()
        }
    }

    /// Entry `a_n` (1-based); `None` beyond the end of a finite model.
    pub fn entry(&self, n: u64) -> Option<C64> {
        if n == 0 {
            return None;
        }
        if (n as usize) <= self.prefix.len() {
            return Some(self.prefix[n as usize - 1]);
        }
        self.rule.entry(n)
    }

    pub fn rule(&self) -> &EntryRule {
        &self.rule
    }

    pub fn prefix(&self) -> &[C64] {
        &self.prefix
    }

    pub fn dim(&self) -> usize {
        self.n_max
    }

    pub fn head(&self) -> &[C64] {
        &self.head
    }

    pub fn unit_points(&self) -> &[f64] {
        &self.unit_points
    }

    pub fn is_finite(&self) -> bool {
        self.rule.is_finite() && self.prefix.len() <= self.n_max
    }

    /// Same operator with a different head length.
    pub fn truncated(&self, dim: usize) -> Result<Self> {
        let mut m = Self::new(self.rule.clone(), self.prefix.clone(), dim, self.unit_points.clone())?;
        m.floor = self.floor;
        Ok(m)
    }

    /// Supremum of `f` over the closure of the spectrum: the head, the
    /// entries beyond `n_max` and the rule limit points.
    pub fn sup_over_spectrum<F: Fn(C64) -> f64>(&self, f: F) -> Result<SpectralSup> {
        let mut best = SpectralSup {
            value: f64::NEG_INFINITY,
            at: SpectralPoint::Entry(1),
            head: f64::NEG_INFINITY,
        };
        for (i, &a) in self.head.iter().enumerate() {
            let v = f(a);
            if v > best.value || v.is_nan() {
                best.value = v;
                best.at = SpectralPoint::Entry(i as u64 + 1);
            }
        }
        best.head = best.value;
        if let Some((v, at)) = self.sup_over_tail(&f)? {
            if v > best.value {
                best.value = v;
                best.at = at;
            }
        }
        Ok(best)
    }

    /// Supremum of `f` over the entries beyond `n_max` and the limit points.
    ///
    /// Along each branch the tail is searched on a dyadic ladder of indices,
    /// then refined by integer ternary search around the best rung.
    pub fn sup_over_tail<F: Fn(C64) -> f64>(&self, f: &F) -> Result<Option<(f64, SpectralPoint)>> {
        let mut best: Option<(f64, SpectralPoint)> = None;
        let mut offer = |v: f64, at: SpectralPoint| {
            if best.map(|(b, _)| v > b).unwrap_or(true) {
                best = Some((v, at));
            }
        };
        for n in (self.n_max as u64 + 1)..=(self.prefix.len() as u64) {
            offer(f(self.prefix[n as usize - 1]), SpectralPoint::Entry(n));
        }
        for b in 0..self.rule.branches() {
            let limit = f(self.rule.limit(b));
            offer(limit, SpectralPoint::Limit(b));
            let (value, m) = self.branch_search(b, f);
            if m >= TAIL_SEARCH_CAP && value > limit + 1e-9 * limit.abs().max(1e-300) {
                return Err(LabError::TailInconclusive(format!(
                    "branch {b}: supremum still growing at index {m}"
                )));
            }
            offer(value, SpectralPoint::Entry(self.rule.global_index(b, m)));
        }
        Ok(best)
    }

    /// Best tail value on branch `b`. When the ladder peaks at its last
    /// rung the values are still rising toward the limit point, which the
    /// caller evaluates separately.
    fn branch_search<F: Fn(C64) -> f64>(&self, b: usize, f: &F) -> (f64, u64) {
        let ladder = &self.rungs[b];
        let mut j = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &(_, z)) in ladder.iter().enumerate() {
            let v = f(z);
            if v > best || v.is_nan() {
                best = v;
                j = i;
            }
        }
        if j + 1 == ladder.len() {
            return (best, ladder[j].0);
        }
        let eval = |m: u64| f(self.rule.branch_entry(b, m));
        let mut lo = ladder[j.saturating_sub(1)].0;
        let mut hi = ladder[j + 1].0;
        while hi - lo > 3 {
            let m1 = lo + (hi - lo) / 3;
            let m2 = hi - (hi - lo) / 3;
            if eval(m1) < eval(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let mut out = (best, ladder[j].0);
        for m in lo..=hi {
            let v = eval(m);
            if v > out.0 {
                out = (v, m);
            }
        }
        out
    }

    /// Distance from `λ` to the closure of the spectrum.
    pub fn distance_to_spectrum(&self, lambda: C64) -> Result<f64> {
        let head = min_dist_sq(&self.head_re, &self.head_im, lambda).sqrt();
        let tail = self
            .sup_over_tail(&|z: C64| -(lambda - z).norm())?
            .map(|(v, _)| -v)
            .unwrap_or(f64::INFINITY);
        Ok(head.min(tail))
    }

    /// `|Π_k (1 - e^{-iφ_k} z)^{θ_k}|`.
    pub fn factor_magnitude(&self, z: C64, weights: &[(usize, f64)]) -> f64 {
        let mut m = 1.0;
        for &(k, theta) in weights {
            if theta != 0.0 {
                m *= (ONE - unit(-self.unit_points[k]) * z).norm().powf(theta);
            }
        }
        m
    }

    /// Squared factor magnitudes over the head, reused across many `λ`.
    pub fn head_factor_sq(&self, weights: &[(usize, f64)]) -> Vec<f64> {
        self.head
            .iter()
            .map(|&a| self.factor_magnitude(a, weights).powi(2))
            .collect()
    }

    /// `‖R(λ) Π_k Λ_k^{θ_k}‖ = sup |Π w_k^{θ_k}| / |λ - a|`, with the head
    /// factors precomputed by [`Self::head_factor_sq`].
    pub fn smoothed_norm(&self, lambda: C64, weights: &[(usize, f64)], head_sq: &[f64]) -> Result<f64> {
        self.check_spectrum(lambda)?;
        let head = max_weighted_inv_dist_sq(&self.head_re, &self.head_im, head_sq, lambda).sqrt();
        let tail = self
            .sup_over_tail(&|z: C64| self.factor_magnitude(z, weights) / (lambda - z).norm())?
            .map(|(v, _)| v)
            .unwrap_or(0.0);
        Ok(head.max(tail))
    }

    /// Largest `|a - L|` over entries beyond `n_max` on each branch, the
    /// crude neighbourhood radius of the tail around its limit point.
    pub fn tail_radius(&self) -> f64 {
        (0..self.rule.branches())
            .map(|b| {
                let l = self.rule.limit(b);
                self.branch_search(b, &|z: C64| (z - l).norm()).0
            })
            .fold(0.0, f64::max)
    }

    pub fn check_spectrum(&self, lambda: C64) -> Result<f64> {
        let d = self.distance_to_spectrum(lambda)?;
        if d < self.floor {
            return Err(LabError::SpectrumHit {
                re: lambda.re,
                im: lambda.im,
                distance: d,
                floor: self.floor,
            });
        }
        Ok(d)
    }

    /// Entrywise weight `Π_k (1 - e^{-iφ_k} z)^{θ_k}` (conjugated factors when `conjugate`).
    pub fn factor_weight(&self, z: C64, weights: &[(usize, f64)], conjugate: bool) -> C64 {
        let mut w = ONE;
        for &(k, theta) in weights {
            let mut base = ONE - unit(-self.unit_points[k]) * z;
            if conjugate {
                base = base.conj();
            }
            w *= principal_pow(base, theta);
        }
        w
    }
}

const LANES: usize = 8;

/// `min_n |λ - a_n|²` over split real/imaginary parts, in fixed lanes so
/// the loop vectorizes.
fn min_dist_sq(re: &[f64], im: &[f64], lambda: C64) -> f64 {
    let mut acc = [f64::INFINITY; LANES];
    let chunks = re.len() / LANES;
    for c in 0..chunks {
        let r = &re[c * LANES..(c + 1) * LANES];
        let i = &im[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            let dr = lambda.re - r[l];
            let di = lambda.im - i[l];
            let d = dr * dr + di * di;
            acc[l] = if d < acc[l] { d } else { acc[l] };
        }
    }
    let mut best = acc.iter().copied().fold(f64::INFINITY, f64::min);
    for n in chunks * LANES..re.len() {
        let dr = lambda.re - re[n];
        let di = lambda.im - im[n];
        best = best.min(dr * dr + di * di);
    }
    best
}

/// `max_n w_n / |λ - a_n|²`.
fn max_weighted_inv_dist_sq(re: &[f64], im: &[f64], w: &[f64], lambda: C64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = re.len() / LANES;
    for c in 0..chunks {
        let r = &re[c * LANES..(c + 1) * LANES];
        let i = &im[c * LANES..(c + 1) * LANES];
        let ww = &w[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            let dr = lambda.re - r[l];
            let di = lambda.im - i[l];
            let v = ww[l] / (dr * dr + di * di);
            acc[l] = if v > acc[l] { v } else { acc[l] };
        }
    }
    let mut best = acc.iter().copied().fold(0.0, f64::max);
    for n in chunks * LANES..re.len() {
        let dr = lambda.re - re[n];
        let di = lambda.im - im[n];
        best = best.max(w[n] / (dr * dr + di * di));
    }
    best
}
