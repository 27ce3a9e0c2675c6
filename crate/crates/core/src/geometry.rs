//! Spectral profile, the punctured exterior neighbourhoods of the unit
//! points, and deterministic scan grids.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, TAU};

use crate::error::{LabError, Result};
use crate::linalg::{circ_dist, lin_space, log_space, unit, wrap_angle, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub phis: Vec<f64>,
    pub alpha: f64,
    pub eps_a: f64,
    pub m_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub accepted: bool,
    pub violations: Vec<String>,
}

impl SpectralProfile {
    pub fn n_points(&self) -> usize {
        self.phis.len()
    }

    /// Smallest circular gap between distinct unit points; `2π` for a single point.
    pub fn d_a(&self) -> f64 {
        let mut gap = TAU;
        for i in 0..self.phis.len() {
            for j in (i + 1)..self.phis.len() {
                gap = gap.min(circ_dist(self.phis[i], self.phis[j]));
            }
        }
        gap
    }

    /// Radius of the neighbourhoods, `|1 - e^{iε}| = 2 sin(ε/2)`.
    pub fn r_a(&self) -> f64 {
        2.0 * (self.eps_a / 2.0).sin()
    }

    pub fn region(&self, k: usize) -> Region {
        Region {
            k,
            phi: self.phis[k],
            r_a: self.r_a(),
        }
    }

    /// Index and circular distance of the nearest unit point.
    pub fn nearest(&self, phi: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, &p) in self.phis.iter().enumerate() {
            let d = circ_dist(phi, p);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub fn validated(&self) -> Result<()> {
        let report = validate_profile(self);
        if report.accepted {
            Ok(())
        } else {
            Err(LabError::Validation(report.violations))
        }
    }
}

pub fn validate_profile(profile: &SpectralProfile) -> ValidationReport {
    let mut violations = Vec::new();
    if profile.phis.is_empty() {
        violations.push("phis: at least one unit point is required".to_string());
    }
    for &phi in &profile.phis {
        if !(0.0..TAU).contains(&phi) {
            violations.push(format!("phis: angle {phi} outside [0, 2π)"));
        }
    }
    if profile.phis.windows(2).any(|w| w[0] >= w[1]) {
        violations.push("phis: angles must be strictly increasing (sorted, pairwise distinct)".to_string());
    }
    if !(profile.alpha >= 1.0) {
        violations.push(format!("alpha: {} is below 1", profile.alpha));
    }
    if !(profile.eps_a > 0.0) {
        violations.push(format!("eps_a: {} must be positive", profile.eps_a));
    }
    if profile.eps_a > FRAC_PI_8 {
        violations.push(format!("eps_a: {} exceeds π/8", profile.eps_a));
    }
    let d_a = profile.d_a();
    if profile.eps_a > d_a / 3.0 {
        violations.push(format!("eps_a: {} exceeds d_A/3 = {}", profile.eps_a, d_a / 3.0));
    }
    if !(profile.m_a >= 1.0) {
        violations.push(format!("m_a: {} is below 1", profile.m_a));
    }
    ValidationReport {
        accepted: violations.is_empty(),
        violations,
    }
}

/// `{ |λ| ≥ 1, 0 < |λ - e^{iφ_k}| ≤ r_A }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub k: usize,
    pub phi: f64,
    pub r_a: f64,
}

impl Region {
    pub fn contains(&self, lambda: C64) -> bool {
        let d = (lambda - unit(self.phi)).norm();
        lambda.norm() >= 1.0 && d > 0.0 && d <= self.r_a
    }
}

pub fn region_contains(region: &Region, lambda: C64) -> bool {
    region.contains(lambda)
}

fn default_ppd() -> usize {
    10
}
fn default_dphi_min() -> f64 {
    1e-5
}
fn default_decades() -> f64 {
    6.0
}
fn default_uniform() -> usize {
    360
}
fn default_region_angles() -> usize {
    25
}
fn default_outer() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(default = "default_ppd")]
    pub points_per_decade: usize,
    /// Smallest angular (and radial) offset from a unit point.
    #[serde(default = "default_dphi_min")]
    pub dphi_min: f64,
    /// `r - 1` spans `[10^-radial_decades, 1]`.
    #[serde(default = "default_decades")]
    pub radial_decades: f64,
    /// Uniform angles around the circle, kept only away from the unit points.
    #[serde(default = "default_uniform")]
    pub uniform_points: usize,
    /// Angle samples per distance ring of a region grid.
    #[serde(default = "default_region_angles")]
    pub region_angles: usize,
    /// Outer radius of the exterior scan.
    #[serde(default = "default_outer")]
    pub complement_outer: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution {
            points_per_decade: default_ppd(),
            dphi_min: default_dphi_min(),
            radial_decades: default_decades(),
            uniform_points: default_uniform(),
            region_angles: default_region_angles(),
            complement_outer: default_outer(),
        }
    }
}

/// A point on the unit circle together with its relation to the unit points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirclePoint {
    pub phi: f64,
    pub lambda: C64,
    pub nearest_k: usize,
    pub dist: f64,
    pub near: bool,
}

/// Grids are stored as generating lists; point sets are materialized on
/// demand so that a refinement is a superset of its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    pub profile: SpectralProfile,
    pub resolution: Resolution,
    pub near_offsets: Vec<f64>,
    pub uniform_count: usize,
    pub radial_offsets: Vec<f64>,
    pub region_rho: Vec<f64>,
    pub region_t: Vec<f64>,
    pub complement_offsets: Vec<f64>,
}

fn decade_count(ppd: usize, lo: f64, hi: f64) -> usize {
    if hi <= lo {
        1
    } else {
        ((ppd as f64) * (hi / lo).log10()).ceil() as usize
    }
}

fn geometric_refine(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * values.len());
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            out.push((values[i - 1] * v).sqrt());
        }
        out.push(v);
    }
    out
}

fn arithmetic_refine(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * values.len());
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            out.push(0.5 * (values[i - 1] + v));
        }
        out.push(v);
    }
    out
}

pub fn build_grids(profile: &SpectralProfile, resolution: &Resolution) -> Result<ScanGrid> {
    let ppd = resolution.points_per_decade;
    if ppd < 8 {
        return Err(LabError::ResolutionTooCoarse { points_per_decade: ppd });
    }
    let delta = resolution.dphi_min;
    if !(delta > 0.0) || !(resolution.radial_decades > 0.0) || resolution.complement_outer <= 1.0 {
        return Err(LabError::Validation(vec![
            "resolution: dphi_min and radial_decades must be positive and complement_outer > 1".into(),
        ]));
    }
    let eps = profile.eps_a;
    let near_offsets = if eps > delta {
        log_space(delta, eps, decade_count(ppd, delta, eps))
    } else {
        vec![eps]
    };
    let r_lo = 10f64.powf(-resolution.radial_decades);
    let radial_count = (ppd as f64 * resolution.radial_decades).round() as usize + 1;
    let radial_offsets = log_space(r_lo, 1.0, radial_count);
    let r_a = profile.r_a();
    let region_rho = if r_a > delta {
        log_space(delta, r_a, decade_count(ppd, delta, r_a))
    } else {
        vec![r_a]
    };
    let mut angles = resolution.region_angles.max(3);
    if angles % 2 == 0 {
        angles += 1;
    }
    let region_t = lin_space(-1.0, 1.0, angles);
    let outer = resolution.complement_outer - 1.0;
    let complement_offsets = log_space(r_lo, outer, decade_count(ppd, r_lo, outer) + 1);
    Ok(ScanGrid {
        profile: profile.clone(),
        resolution: resolution.clone(),
        near_offsets,
        uniform_count: resolution.uniform_points,
        radial_offsets,
        region_rho,
        region_t,
        complement_offsets,
    })
}

impl ScanGrid {
    /// One refinement step: midpoints inserted in every generating list.
    pub fn refined(&self) -> ScanGrid {
        ScanGrid {
            profile: self.profile.clone(),
            resolution: self.resolution.clone(),
            near_offsets: geometric_refine(&self.near_offsets),
            uniform_count: self.uniform_count * 2,
            radial_offsets: geometric_refine(&self.radial_offsets),
            region_rho: geometric_refine(&self.region_rho),
            region_t: arithmetic_refine(&self.region_t),
            complement_offsets: geometric_refine(&self.complement_offsets),
        }
    }

    /// Circle points: log-refined offsets on both sides of every unit point,
    /// then uniform angles farther than `ε_A` from all of them. Sorted by angle.
    pub fn circle_points(&self) -> Vec<CirclePoint> {
        let p = &self.profile;
        let mut pts = Vec::new();
        for (k, &phi_k) in p.phis.iter().enumerate() {
            for &side in &[-1.0, 1.0] {
                for &psi in &self.near_offsets {
                    let raw = phi_k + side * psi;
                    pts.push(CirclePoint {
                        phi: wrap_angle(raw),
                        lambda: unit(raw),
                        nearest_k: k,
                        dist: psi,
                        near: true,
                    });
                }
            }
        }
        for j in 0..self.uniform_count {
            let phi = TAU * j as f64 / self.uniform_count as f64;
            let (k, d) = p.nearest(phi);
            if d > p.eps_a {
                pts.push(CirclePoint {
                    phi,
                    lambda: unit(phi),
                    nearest_k: k,
                    dist: d,
                    near: false,
                });
            }
        }
        pts.sort_by(|a, b| a.phi.total_cmp(&b.phi));
        pts.dedup_by(|a, b| a.phi == b.phi);
        pts
    }

    pub fn circle_angles(&self) -> Vec<f64> {
        self.circle_points().iter().map(|c| c.phi).collect()
    }

    /// Radii `r` with `r - 1` log-spaced.
    pub fn radial_r(&self) -> Vec<f64> {
        self.radial_offsets.iter().map(|t| 1.0 + t).collect()
    }

    /// `r e^{iφ}` for every radius and circle angle.
    pub fn radial_points(&self) -> Vec<C64> {
        let circle = self.circle_points();
        let mut pts = Vec::with_capacity(circle.len() * self.radial_offsets.len());
        for &t in &self.radial_offsets {
            for c in &circle {
                pts.push(c.lambda * (1.0 + t));
            }
        }
        pts
    }

    /// Polar grid around `e^{iφ_k}`: `e^{iφ_k}(1 + ρ e^{iθ})` with the angle
    /// scaled to the exact arc of the ring outside the disk, so each ring
    /// ends on the unit circle.
    pub fn region_points(&self, k: usize) -> Vec<C64> {
        let center = unit(self.profile.phis[k]);
        let mut pts = Vec::with_capacity(self.region_rho.len() * self.region_t.len());
        for &rho in &self.region_rho {
            let theta_max = FRAC_PI_2 + (rho / 2.0).min(1.0).asin();
            for &t in &self.region_t {
                pts.push(center * (C64::new(1.0, 0.0) + C64::from_polar(rho, t * theta_max)));
            }
        }
        pts
    }

    /// Exterior points with `1 ≤ |λ| ≤ outer` outside every region, plus a
    /// collar just outside each region boundary.
    pub fn complement_points(&self) -> Vec<C64> {
        let p = &self.profile;
        let regions: Vec<Region> = (0..p.n_points()).map(|k| p.region(k)).collect();
        let outside = |z: C64| regions.iter().all(|r| (z - unit(r.phi)).norm() > r.r_a);
        let circle = self.circle_points();
        let mut pts = Vec::new();
        for c in &circle {
            if outside(c.lambda) {
                pts.push(c.lambda);
            }
        }
        for &t in &self.complement_offsets {
            for c in &circle {
                let z = c.lambda * (1.0 + t);
                if outside(z) {
                    pts.push(z);
                }
            }
        }
        let collar = p.r_a() * (1.0 + 1e-9);
        let theta_max = FRAC_PI_2 + (collar / 2.0).min(1.0).asin();
        for r in &regions {
            let center = unit(r.phi);
            for &t in &self.region_t {
                let z = center * (C64::new(1.0, 0.0) + C64::from_polar(collar, t * theta_max));
                if z.norm() >= 1.0 - 1e-15 && outside(z) {
                    pts.push(z);
                }
            }
        }
        pts
    }

    /// Stable hash of every generating list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for list in [
            &self.profile.phis,
            &self.near_offsets,
            &self.radial_offsets,
            &self.region_rho,
            &self.region_t,
            &self.complement_offsets,
        ] {
            h.update((list.len() as u64).to_le_bytes());
            for v in list.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update((self.uniform_count as u64).to_le_bytes());
        h.update(self.profile.eps_a.to_bits().to_le_bytes());
        h.update(self.resolution.complement_outer.to_bits().to_le_bytes());
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One arc `[center - half_width, center + half_width]` of angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub center: f64,
    pub half_width: f64,
}

impl Arc {
    pub fn contains(&self, phi: f64) -> bool {
        circ_dist(phi, self.center) <= self.half_width
    }
}

/// The angles where the circle of radius `r` runs through each region,
/// and the leftover set.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcPartition {
    pub r: f64,
    pub arcs: Vec<Option<Arc>>,
}

pub fn arc_partition(profile: &SpectralProfile, r: f64) -> ArcPartition {
    let r_a = profile.r_a();
    let arcs = profile
        .phis
        .iter()
        .map(|&phi| {
            if r < 1.0 {
                return None;
            }
            let c = (r * r + 1.0 - r_a * r_a) / (2.0 * r);
            if c > 1.0 {
                None
            } else {
                Some(Arc {
                    center: phi,
                    half_width: c.max(-1.0).acos(),
                })
            }
        })
        .collect();
    ArcPartition { r, arcs }
}

impl ArcPartition {
    /// Index `k` of the arc containing `phi`, `None` for the leftover set.
    pub fn piece_of(&self, phi: f64) -> Option<usize> {
        self.arcs
            .iter()
            .position(|a| a.map(|a| a.contains(phi)).unwrap_or(false))
    }

    /// Arc endpoints and centres wrapped to `[0, 2π)`, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for arc in self.arcs.iter().flatten() {
            out.push(wrap_angle(arc.center - arc.half_width));
            out.push(wrap_angle(arc.center));
            out.push(wrap_angle(arc.center + arc.half_width));
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn leftover_measure(&self) -> f64 {
        TAU - self.arcs.iter().flatten().map(|a| 2.0 * a.half_width).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn s1() -> SpectralProfile {
        SpectralProfile {
            phis: vec![0.0],
            alpha: 2.0,
            eps_a: FRAC_PI_8,
            m_a: 10.0,
        }
    }

    #[test]
    fn validation_examples() {
        let two = SpectralProfile {
            phis: vec![0.0, 1.2],
            alpha: 1.0,
            eps_a: 0.5,
            m_a: 1.0,
        };
        let rep = validate_profile(&two);
        assert!(!rep.accepted);
        assert!(rep.violations.iter().any(|v| v.contains("d_A/3")));
        assert!(validate_profile(&s1()).accepted);
        let mut low = s1();
        low.alpha = 0.5;
        let rep = validate_profile(&low);
        assert!(!rep.accepted && rep.violations[0].starts_with("alpha"));
        assert_eq!(s1().d_a(), TAU);
    }

    #[test]
    fn region_examples() {
        let p = s1();
        let reg = p.region(0);
        assert!((reg.r_a - 0.390181).abs() < 1e-6);
        assert!(!reg.contains(C64::new(1.0, 0.0)));
        assert!(reg.contains(C64::new(1.2, 0.0)));
        assert!(!reg.contains(C64::new(0.99, 0.0)));
    }

    #[test]
    fn grid_counts() {
        let res = Resolution {
            dphi_min: 1e-4,
            ..Resolution::default()
        };
        let g = build_grids(&s1(), &res).unwrap();
        assert_eq!(g.near_offsets.len(), 36);
        assert_eq!(g.radial_r().len(), 61);
        assert!((g.radial_offsets[0] - 1e-6).abs() < 1e-20);
        assert_eq!(g.radial_offsets[60], 1.0);
        assert!(g.circle_angles().iter().all(|&a| a != 0.0));
        let coarse = Resolution {
            points_per_decade: 7,
            ..Resolution::default()
        };
        assert!(matches!(build_grids(&s1(), &coarse), Err(LabError::ResolutionTooCoarse { .. })));
    }

    #[test]
    fn refinement_is_superset() {
        let g = build_grids(&s1(), &Resolution::default()).unwrap();
        let f = g.refined();
        let fine: Vec<u64> = f.circle_angles().iter().map(|a| a.to_bits()).collect();
        assert!(g.circle_angles().iter().all(|a| fine.contains(&a.to_bits())));
        let fine_region: Vec<(u64, u64)> = f.region_points(0).iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect();
        assert!(g
            .region_points(0)
            .iter()
            .all(|z| fine_region.contains(&(z.re.to_bits(), z.im.to_bits()))));
    }

    #[test]
    fn region_grid_lies_in_region() {
        let p = s1();
        let g = build_grids(&p, &Resolution::default()).unwrap();
        let reg = p.region(0);
        for z in g.region_points(0) {
            assert!((z - C64::new(1.0, 0.0)).norm() <= reg.r_a * (1.0 + 1e-12));
            assert!(z.norm() >= 1.0 - 1e-12);
        }
        assert!(g.complement_points().iter().all(|&z| !reg.contains(z)));
    }

    #[test]
    fn arc_partition_examples() {
        let p = s1();
        let r_a = p.r_a();
        let tangent = arc_partition(&p, 1.0 + r_a);
        assert!(tangent.arcs[0].unwrap().half_width < 1e-7);
        let far = arc_partition(&p, 2.0);
        assert!(far.arcs[0].is_none());
        assert!((far.leftover_measure() - TAU).abs() < 1e-15);
        let r = 1.01;
        let arc = arc_partition(&p, r).arcs[0].unwrap();
        let expect = ((r * r + 1.0 - r_a * r_a) / (2.0 * r)).acos();
        assert!((arc.half_width - expect).abs() < 1e-15);
        let reg = p.region(0);
        let inside = C64::from_polar(r, arc.half_width * 0.999);
        let outside = C64::from_polar(r, arc.half_width * 1.001);
        assert!(reg.contains(inside) && !reg.contains(outside));
    }

    proptest! {
        #[test]
        fn partition_and_membership(r in 1.0001f64..1.5, phi in 0.0f64..TAU) {
            let p = SpectralProfile { phis: vec![0.0, PI], alpha: 1.0, eps_a: FRAC_PI_8, m_a: 2.0 };
            let part = arc_partition(&p, r);
            let hits = part.arcs.iter().flatten().filter(|a| a.contains(phi)).count();
            prop_assert!(hits <= 1);
            let lambda = C64::from_polar(r, phi);
            let on_boundary = part.arcs.iter().flatten().any(|a| (circ_dist(phi, a.center) - a.half_width).abs() < 1e-9);
            prop_assume!(!on_boundary);
            let member = (0..2).any(|k| p.region(k).contains(lambda));
            prop_assert_eq!(member, part.piece_of(phi).is_some());
        }

        #[test]
        fn arcs_shrink_with_radius(r1 in 1.0f64..1.4, dr in 0.0f64..0.2) {
            let p = s1();
            let a = arc_partition(&p, r1).arcs[0].map(|a| a.half_width).unwrap_or(-1.0);
            let b = arc_partition(&p, r1 + dr).arcs[0].map(|a| a.half_width).unwrap_or(-1.0);
            prop_assert!(b <= a + 1e-15);
        }
    }
}
