//! Resolvent norms and the certificates for the unperturbed operator.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{ScanGrid, SpectralProfile};
use crate::linalg::{log_space, norm, unit, C64};
use crate::model::{FractionalFactor, OperatorModel};
use crate::report::{argmax, pair, refinement_delta, scan, CertificateReport, GridMeta, Status};

fn default_refinement_tol() -> f64 {
    0.10
}
fn default_kreiss_tol() -> f64 {
    1e-9
}
fn default_power_probe() -> usize {
    64
}
fn default_alpha_window() -> [f64; 2] {
    [1e-3, 1e-1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Largest relative change of a supremum under one grid refinement
    /// that still counts as converged.
    #[serde(default = "default_refinement_tol")]
    pub refinement_tol: f64,
    #[serde(default = "default_kreiss_tol")]
    pub kreiss_tol: f64,
    /// Powers probed when estimating `sup ‖Aⁿ‖`.
    #[serde(default = "default_power_probe")]
    pub power_probe: usize,
    #[serde(default = "default_alpha_window")]
    pub alpha_window: [f64; 2],
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            refinement_tol: default_refinement_tol(),
            kreiss_tol: default_kreiss_tol(),
            power_probe: default_power_probe(),
            alpha_window: default_alpha_window(),
        }
    }
}

pub fn resolvent_norm(model: &OperatorModel, lambda: C64) -> Result<f64> {
    model.resolvent_norm(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleScanRow {
    pub phi: f64,
    pub nearest_k: usize,
    pub dist: f64,
    pub resnorm: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionScanRow {
    pub re: f64,
    pub im: f64,
    pub resnorm: f64,
    pub smoothed: f64,
}

#[derive(Debug, Clone)]
pub struct GrowthScan {
    pub report: CertificateReport,
    pub rows: Vec<CircleScanRow>,
}

fn meta(points: usize, refined: usize, grid: &ScanGrid) -> GridMeta {
    GridMeta {
        points,
        refined_points: refined,
        floor: grid.resolution.dphi_min,
        hash: grid.hash(),
    }
}

/// Resolvent norms along the circle, weighted by `dist^α` near the unit points.
pub fn circle_scan(model: &OperatorModel, profile: &SpectralProfile, grid: &ScanGrid) -> Result<Vec<CircleScanRow>> {
    let pts = grid.circle_points();
    let lambdas: Vec<C64> = pts.iter().map(|c| c.lambda).collect();
    let norms = scan(&lambdas, |z| model.resolvent_norm(z))?;
    Ok(pts
        .iter()
        .zip(norms)
        .map(|(c, n)| CircleScanRow {
            phi: c.phi,
            nearest_k: c.nearest_k,
            dist: c.dist,
            resnorm: n,
            weighted: if c.near { c.dist.powf(profile.alpha) * n } else { n },
        })
        .collect())
}

fn split_sups(rows: &[CircleScanRow], eps: f64) -> ((f64, usize), (f64, usize)) {
    let near: Vec<f64> = rows
        .iter()
        .map(|r| if r.dist <= eps { r.weighted } else { f64::NEG_INFINITY })
        .collect();
    let away: Vec<f64> = rows
        .iter()
        .map(|r| if r.dist > eps { r.weighted } else { f64::NEG_INFINITY })
        .collect();
    (
        argmax(&near).unwrap_or((f64::NEG_INFINITY, 0)),
        argmax(&away).unwrap_or((f64::NEG_INFINITY, 0)),
    )
}

/// Checks the declared growth bound on the unit circle.
pub fn certify_growth(
    model: &OperatorModel,
    profile: &SpectralProfile,
    grid: &ScanGrid,
    cfg: &EngineConfig,
) -> Result<GrowthScan> {
    let rows = circle_scan(model, profile, grid)?;
    let fine_rows = circle_scan(model, profile, &grid.refined())?;
    let ((near, i_near), (away, i_away)) = split_sups(&rows, profile.eps_a);
    let ((fnear, fi_near), (faway, fi_away)) = split_sups(&fine_rows, profile.eps_a);
    let mut rep = CertificateReport::new("growth");
    rep.grid = meta(rows.len(), fine_rows.len(), grid);
    let (sup, idx) = if near >= away { (near, i_near) } else { (away, i_away) };
    rep.supremum = sup;
    rep.argmax = Some(pair(unit(rows[idx].phi)));
    let fine_sup = near.max(away).max(fnear.max(faway));
    rep.refinement_delta = Some(refinement_delta(sup, fine_sup));
    rep.set("near_sup", near);
    rep.set("away_sup", away);
    rep.set("refined_near_sup", fnear);
    rep.set("refined_away_sup", faway);
    rep.set("m_a", profile.m_a);
    rep.set("alpha", profile.alpha);
    let m_a = profile.m_a;
    let witness = [(fnear, fi_near), (faway, fi_away)]
        .into_iter()
        .filter(|(v, _)| *v > m_a)
        .max_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((v, i)) = witness {
        let row = fine_rows[i];
        rep.refute(
            unit(row.phi),
            format!("weighted resolvent norm {v:.6e} exceeds M_A = {m_a} at phi = {:.6e}", row.phi),
        );
    } else if rep.refinement_delta.unwrap() <= cfg.refinement_tol {
        rep.status = Status::Certified;
    } else {
        rep.notes.push("supremum not refinement-stable".into());
    }
    Ok(GrowthScan { report: rep, rows })
}

/// Least-squares growth exponent of `‖R(e^{i(φ_k ± ψ)})‖` against `1/ψ`
/// on each side of the unit point; returns `(left, right)`.
pub fn estimate_alpha(model: &OperatorModel, phi_k: f64, window: [f64; 2]) -> Result<(f64, f64)> {
    let [lo, hi] = window;
    let decades = if lo > 0.0 && hi > lo { (hi / lo).log10() } else { 0.0 };
    if decades < 1.0 {
        return Err(LabError::WindowTooNarrow { decades });
    }
    let count = (20.0 * decades).ceil() as usize + 1;
    let psis = log_space(lo, hi, count);
    let slope = |side: f64| -> Result<f64> {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for &psi in &psis {
            xs.push(-psi.ln());
            ys.push(model.resolvent_norm(unit(phi_k + side * psi))?.ln());
        }
        let mx = xs.iter().sum::<f64>() / count as f64;
        let my = ys.iter().sum::<f64>() / count as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        Ok(sxy / sxx)
    };
    Ok((slope(-1.0)?, slope(1.0)?))
}

/// `(|λ| - 1)‖R(λ)‖` over the radial grid against the power bound.
pub fn kreiss_check(model: &OperatorModel, grid: &ScanGrid, cfg: &EngineConfig) -> Result<CertificateReport> {
    let pts = grid.radial_points();
    let vals = scan(&pts, |z| Ok((z.norm() - 1.0) * model.resolvent_norm(z)?))?;
    let power = model.power_bound(cfg.power_probe)?;
    let m = power.max(1.0);
    let mut rep = CertificateReport::new("kreiss");
    rep.grid = meta(pts.len(), 0, grid);
    let (sup, i) = argmax(&vals).unwrap_or((0.0, 0));
    rep.supremum = sup;
    rep.argmax = Some(pair(pts[i]));
    rep.set("power_bound", power);
    rep.set("M", m);
    if sup <= m + cfg.kreiss_tol {
        rep.status = Status::Certified;
    } else {
        rep.refute(pts[i], format!("(|λ|-1)‖R‖ = {sup:.6e} exceeds M = {m}"));
    }
    Ok(rep)
}

fn scan_with_refinement<F>(
    coarse: &[C64],
    fine: &[C64],
    f: F,
) -> Result<((f64, usize), f64)>
where
    F: Fn(C64) -> Result<f64> + Sync,
{
    let v = scan(coarse, &f)?;
    let vf = scan(fine, &f)?;
    let best = argmax(&v).unwrap_or((0.0, 0));
    let fine_sup = argmax(&vf).map(|b| b.0).unwrap_or(0.0).max(best.0);
    Ok((best, fine_sup))
}

/// Supremum of `|λ - e^{iφ_k}|^α ‖R(λ)‖` over the region around point `k`.
pub fn region_sup_plain(
    model: &OperatorModel,
    profile: &SpectralProfile,
    k: usize,
    grid: &ScanGrid,
    m: f64,
    cfg: &EngineConfig,
) -> Result<CertificateReport> {
    let center = unit(profile.phis[k]);
    let alpha = profile.alpha;
    let f = |z: C64| Ok((z - center).norm().powf(alpha) * model.resolvent_norm(z)?);
    let coarse = grid.region_points(k);
    let fine = grid.refined().region_points(k);
    let ((sup, i), fine_sup) = scan_with_refinement(&coarse, &fine, f)?;
    let mut rep = CertificateReport::new(&format!("region_plain_{k}"));
    rep.grid = meta(coarse.len(), fine.len(), grid);
    rep.supremum = sup;
    rep.argmax = Some(pair(coarse[i]));
    rep.refinement_delta = Some(refinement_delta(sup, fine_sup));
    let chain = 2f64.powf(alpha) * (m + profile.m_a * (1.0 + m));
    let mut ray = 0.0f64;
    for &rho in &grid.region_rho {
        let z = center * (1.0 + rho);
        ray = ray.max(rho.powf(alpha) * model.resolvent_norm(z)?);
    }
    rep.set("M_0", sup);
    rep.set("refined_sup", fine_sup);
    rep.set("chain_bound", chain);
    rep.set("ray_sup", ray);
    rep.set("M", m);
    if fine_sup > chain {
        rep.refute(coarse[i], format!("supremum {fine_sup:.6e} exceeds the chain bound {chain:.6e}"));
    } else if ray > m + cfg.kreiss_tol {
        rep.refute(center * (1.0 + grid.region_rho[0]), format!("ray supremum {ray:.6e} exceeds M = {m}"));
    } else if sup.is_finite() && rep.refinement_delta.unwrap() <= cfg.refinement_tol {
        rep.status = Status::Certified;
    }
    Ok(rep)
}

/// Supremum of `‖R(λ) Λ_k^α‖` over the region around point `k`.
pub fn region_sup_smoothed(
    model: &OperatorModel,
    profile: &SpectralProfile,
    k: usize,
    grid: &ScanGrid,
    cfg: &EngineConfig,
) -> Result<CertificateReport> {
    let weights = [(k, profile.alpha)];
    let smoother = model.smoother(&weights)?;
    let f = |z: C64| model.smoothed_norm_with(&smoother, z);
    let coarse = grid.region_points(k);
    let fine = grid.refined().region_points(k);
    let plain = scan(&coarse, |z| model.resolvent_norm(z))?;
    let smoothed = scan(&coarse, f)?;
    let fine_vals = scan(&fine, f)?;
    let (sup, i) = argmax(&smoothed).unwrap_or((0.0, 0));
    let fine_sup = argmax(&fine_vals).map(|b| b.0).unwrap_or(0.0).max(sup);
    let factor = model.factor_norm(&weights)?;
    let sanity = plain
        .iter()
        .zip(&smoothed)
        .filter(|(p, s)| **s > **p * factor * (1.0 + 1e-10))
        .count();
    let mut rep = CertificateReport::new(&format!("region_smoothed_{k}"));
    rep.grid = meta(coarse.len(), fine.len(), grid);
    rep.supremum = sup;
    rep.argmax = Some(pair(coarse[i]));
    rep.refinement_delta = Some(refinement_delta(sup, fine_sup));
    rep.set("M_1", sup);
    rep.set("refined_sup", fine_sup);
    rep.set("plain_sup", argmax(&plain).map(|b| b.0).unwrap_or(0.0));
    rep.set("factor_norm", factor);
    rep.set("product_bound_violations", sanity as f64);
    if sanity > 0 {
        rep.refute(coarse[i], format!("{sanity} points exceed ‖R‖·‖Λ^α‖"));
    } else if sup.is_finite() && rep.refinement_delta.unwrap() <= cfg.refinement_tol {
        rep.status = Status::Certified;
    }
    Ok(rep)
}

/// Supremum of `‖R(λ)‖` outside the disk and the regions, with the
/// far field bounded by `M / (outer - 1)`.
pub fn complement_sup(
    model: &OperatorModel,
    profile: &SpectralProfile,
    grid: &ScanGrid,
    m: f64,
    m0: f64,
    cfg: &EngineConfig,
) -> Result<CertificateReport> {
    let coarse = grid.complement_points();
    let fine = grid.refined().complement_points();
    let ((sup, i), fine_sup) = scan_with_refinement(&coarse, &fine, |z| model.resolvent_norm(z))?;
    let far = m / (grid.resolution.complement_outer - 1.0);
    let m2 = sup.max(far);
    let chain = profile.m_a.max(m0 / profile.r_a().powf(profile.alpha)) * (1.0 + m);
    let mut rep = CertificateReport::new("complement");
    rep.grid = meta(coarse.len(), fine.len(), grid);
    rep.supremum = m2;
    rep.argmax = Some(pair(coarse[i]));
    rep.refinement_delta = Some(refinement_delta(m2, fine_sup.max(far)));
    rep.set("M_2", m2);
    rep.set("grid_sup", sup);
    rep.set("far_field", far);
    rep.set("chain_bound", chain);
    if fine_sup > chain {
        rep.refute(coarse[i], format!("supremum {fine_sup:.6e} exceeds the chain bound {chain:.6e}"));
    } else if m2.is_finite() && rep.refinement_delta.unwrap() <= cfg.refinement_tol {
        rep.status = Status::Certified;
    }
    Ok(rep)
}

/// Supremum of `‖R(λ) Λ_1^α ⋯ Λ_N^α‖` over every region grid and the
/// exterior grid.
pub fn global_smoothed_sup(
    model: &OperatorModel,
    profile: &SpectralProfile,
    grid: &ScanGrid,
    m: f64,
    cfg: &EngineConfig,
) -> Result<CertificateReport> {
    let weights: Vec<(usize, f64)> = (0..profile.n_points()).map(|k| (k, profile.alpha)).collect();
    let collect = |g: &ScanGrid| {
        let mut pts = Vec::new();
        for k in 0..profile.n_points() {
            pts.extend(g.region_points(k));
        }
        pts.extend(g.complement_points());
        pts
    };
    let coarse = collect(grid);
    let fine = collect(&grid.refined());
    let smoother = model.smoother(&weights)?;
    let ((sup, i), fine_sup) = scan_with_refinement(&coarse, &fine, |z| model.smoothed_norm_with(&smoother, z))?;
    let factor = model.factor_norm(&weights)?;
    let far = m / (grid.resolution.complement_outer - 1.0) * factor;
    let mut rep = CertificateReport::new("global_smoothed");
    rep.grid = meta(coarse.len(), fine.len(), grid);
    rep.supremum = sup.max(far);
    rep.argmax = Some(pair(coarse[i]));
    rep.refinement_delta = Some(refinement_delta(sup.max(far), fine_sup.max(far)));
    rep.set("grid_sup", sup);
    rep.set("far_field", far);
    rep.set("factor_norm", factor);
    if rep.supremum.is_finite() && rep.refinement_delta.unwrap() <= cfg.refinement_tol {
        rep.status = Status::Certified;
    }
    Ok(rep)
}

/// Largest observed `‖Λ^{θ̃}x‖ / (‖x‖^{1-θ̃/θ} ‖Λ^θ x‖^{θ̃/θ})` over the samples.
pub fn moment_inequality_probe(
    model: &OperatorModel,
    k: usize,
    theta_tilde: f64,
    theta: f64,
    samples: &[Vec<C64>],
) -> Result<f64> {
    if !(0.0 < theta_tilde && theta_tilde < theta) {
        return Err(LabError::Validation(vec![format!(
            "moment probe needs 0 < theta_tilde < theta, got {theta_tilde} and {theta}"
        )]));
    }
    let s = theta_tilde / theta;
    let mut worst = 0.0f64;
    for x in samples {
        let nx = norm(x);
        if nx == 0.0 {
            continue;
        }
        let small = norm(&model.fractional_apply(FractionalFactor::new(k, theta_tilde), x)?);
        let big = norm(&model.fractional_apply(FractionalFactor::new(k, theta), x)?);
        let denom = nx.powf(1.0 - s) * big.powf(s);
        if denom > 0.0 {
            worst = worst.max(small / denom);
        }
    }
    Ok(worst)
}

/// Plain and smoothed resolvent norms over one region grid (plot data).
pub fn region_scan(
    model: &OperatorModel,
    profile: &SpectralProfile,
    k: usize,
    grid: &ScanGrid,
) -> Result<Vec<RegionScanRow>> {
    let pts = grid.region_points(k);
    let smoother = model.smoother(&[(k, profile.alpha)])?;
    scan(&pts, |z| {
        Ok(RegionScanRow {
            re: z.re,
            im: z.im,
            resnorm: model.resolvent_norm(z)?,
            smoothed: model.smoothed_norm_with(&smoother, z)?,
        })
    })
}

/// Every unperturbed certificate, with stage errors folded into reports.
#[derive(Debug, Clone)]
pub struct UnperturbedSuite {
    pub growth: CertificateReport,
    pub circle_rows: Vec<CircleScanRow>,
    pub alpha: Vec<(f64, f64)>,
    pub alpha_report: CertificateReport,
    pub kreiss: CertificateReport,
    pub plain: Vec<CertificateReport>,
    pub smoothed: Vec<CertificateReport>,
    pub complement: CertificateReport,
    pub global: CertificateReport,
    /// `M`, power bound floored at 1.
    pub m: f64,
}

impl UnperturbedSuite {
    pub fn reports(&self) -> Vec<CertificateReport> {
        let mut out = vec![self.growth.clone(), self.alpha_report.clone(), self.kreiss.clone()];
        out.extend(self.plain.iter().cloned());
        out.extend(self.smoothed.iter().cloned());
        out.push(self.complement.clone());
        out.push(self.global.clone());
        out
    }

    pub fn status(&self) -> Status {
        self.reports()
            .iter()
            .fold(Status::Certified, |acc, r| acc.combine(r.status))
    }

    pub fn m1(&self) -> Vec<f64> {
        self.smoothed.iter().map(|r| r.value("M_1").unwrap_or(f64::NAN)).collect()
    }
}

fn or_failed(name: &str, r: Result<CertificateReport>) -> CertificateReport {
    r.unwrap_or_else(|e| CertificateReport::failed(name, &e))
}

pub fn certify_unperturbed(
    model: &OperatorModel,
    profile: &SpectralProfile,
    grid: &ScanGrid,
    cfg: &EngineConfig,
) -> UnperturbedSuite {
    let (growth, circle_rows) = match certify_growth(model, profile, grid, cfg) {
        Ok(g) => (g.report, g.rows),
        Err(e) => (CertificateReport::failed("growth", &e), Vec::new()),
    };
    let mut alpha = Vec::new();
    let mut alpha_report = CertificateReport::new("alpha_estimate");
    alpha_report.status = Status::Certified;
    for (k, &phi) in profile.phis.iter().enumerate() {
        match estimate_alpha(model, phi, cfg.alpha_window) {
            Ok((l, r)) => {
                alpha_report.set(&format!("alpha_left_{k}"), l);
                alpha_report.set(&format!("alpha_right_{k}"), r);
                alpha_report.supremum = alpha_report.supremum.max(l.max(r));
                alpha.push((l, r));
            }
            Err(e) => {
                alpha_report.status = Status::Inconclusive;
                alpha_report.notes.push(format!("point {k}: {e}"));
                alpha.push((f64::NAN, f64::NAN));
            }
        }
    }
    alpha_report
        .notes
        .push("empirical order only; certification uses the declared alpha".into());
    let kreiss = or_failed("kreiss", kreiss_check(model, grid, cfg));
    let m = kreiss.value("M").unwrap_or(1.0);
    let plain: Vec<CertificateReport> = (0..profile.n_points())
        .map(|k| or_failed(&format!("region_plain_{k}"), region_sup_plain(model, profile, k, grid, m, cfg)))
        .collect();
    let smoothed: Vec<CertificateReport> = (0..profile.n_points())
        .map(|k| or_failed(&format!("region_smoothed_{k}"), region_sup_smoothed(model, profile, k, grid, cfg)))
        .collect();
    let m0 = plain
        .iter()
        .map(|r| r.value("M_0").unwrap_or(f64::NAN))
        .fold(0.0, f64::max);
    let complement = or_failed("complement", complement_sup(model, profile, grid, m, m0, cfg));
    let global = or_failed("global_smoothed", global_smoothed_sup(model, profile, grid, m, cfg));
    UnperturbedSuite {
        growth,
        circle_rows,
        alpha,
        alpha_report,
        kreiss,
        plain,
        smoothed,
        complement,
        global,
        m,
    }
}
