//! Composite Gauss–Legendre quadrature on the circle with pole-aware
//! dyadic panel refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::Result;
use crate::linalg::{wrap_angle, C64};

fn default_order() -> usize {
    8
}
fn default_base_panels() -> usize {
    64
}
fn default_peak_factor() -> f64 {
    1.0
}
fn default_max_depth() -> usize {
    48
}
fn default_halving_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Gauss–Legendre nodes per panel.
    #[serde(default = "default_order")]
    pub order: usize,
    /// Uniform panels before refinement.
    #[serde(default = "default_base_panels")]
    pub base_panels: usize,
    /// A panel is split while its arc length exceeds this multiple of its
    /// distance to the nearest pole.
    #[serde(default = "default_peak_factor")]
    pub peak_factor: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    /// Largest relative change under mesh halving accepted as converged.
    #[serde(default = "default_halving_tol")]
    pub halving_tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            order: default_order(),
            base_panels: default_base_panels(),
            peak_factor: default_peak_factor(),
            max_depth: default_max_depth(),
            halving_tol: default_halving_tol(),
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Closed panel `[a, b]` of angles, `0 ≤ a < b ≤ 2π`.
pub type Panel = (f64, f64);

/// Smallest distance from the arc `{r e^{iφ} : φ ∈ [a, b]}` to `mu`.
fn arc_distance(r: f64, a: f64, b: f64, mu: C64) -> f64 {
    let arg = wrap_angle(mu.arg());
    let inside = (arg >= a && arg <= b) || (arg + TAU >= a && arg + TAU <= b);
    if inside {
        (r - mu.norm()).abs()
    } else {
        let pa = C64::from_polar(r, a);
        let pb = C64::from_polar(r, b);
        (pa - mu).norm().min((pb - mu).norm())
    }
}

/// Mesh of `[0, 2π)` on the circle of radius `r`: uniform base panels cut
/// at `breakpoints`, then bisected near `poles`.
pub fn build_mesh(r: f64, breakpoints: &[f64], poles: &[C64], cfg: &QuadratureConfig) -> Vec<Panel> {
    let base = cfg.base_panels.max(1);
    let mut cuts: Vec<f64> = (0..base).map(|j| TAU * j as f64 / base as f64).collect();
    cuts.extend(breakpoints.iter().map(|&b| wrap_angle(b)));
    cuts.push(TAU);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut out = Vec::new();
    let mut stack: Vec<(f64, f64, usize)> = cuts.windows(2).rev().map(|w| (w[0], w[1], 0)).collect();
    while let Some((a, b, depth)) = stack.pop() {
        let len = r * (b - a);
        let needs_split = depth < cfg.max_depth
            && poles
                .iter()
                .any(|&mu| len > cfg.peak_factor * arc_distance(r, a, b, mu));
        if needs_split {
            let m = 0.5 * (a + b);
            stack.push((m, b, depth + 1));
            stack.push((a, m, depth + 1));
        } else {
            out.push((a, b));
        }
    }
    out
}

pub fn halve(panels: &[Panel]) -> Vec<Panel> {
    panels
        .iter()
        .flat_map(|&(a, b)| {
            let m = 0.5 * (a + b);
            [(a, m), (m, b)]
        })
        .collect()
}

/// Integrates a vector-valued integrand over the panels. Nodes are
/// evaluated in parallel and summed in mesh order.
pub fn integrate<F>(panels: &[Panel], order: usize, width: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let (x, w) = gauss_legendre(order);
    let nodes: Vec<(f64, f64)> = panels
        .iter()
        .flat_map(|&(a, b)| {
            let h = 0.5 * (b - a);
            let c = 0.5 * (a + b);
            x.iter().zip(&w).map(move |(xi, wi)| (c + h * xi, h * wi)).collect::<Vec<_>>()
        })
        .collect();
    let values: Vec<Result<Vec<f64>>> = nodes.par_iter().map(|&(phi, _)| f(phi)).collect();
    let mut acc = vec![0.0; width];
    for ((_, wt), v) in nodes.iter().zip(values) {
        let v = v?;
        for (a, vi) in acc.iter_mut().zip(v) {
            *a += wt * vi;
        }
    }
    Ok(acc)
}
