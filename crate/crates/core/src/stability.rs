//! Strong-stability verdicts for `A + BC`: orbit decay, the
//! power-boundedness integral criterion, the majorant `f_k` for
//! `‖R B‖‖C R‖`, the perturbed growth bound, the full pipeline and the
//! scale threshold search.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::geometry::{arc_partition, build_grids, validate_profile, ScanGrid, SpectralProfile};
use crate::linalg::{basis_vector, block_norm, norm, norm_sq, random_vector, seeded_rng, unit, C64, ONE, ZERO};
use crate::model::{FractionalFactor, OperatorModel};
use crate::oracle::{oracle_eigens, DenseTruncation};
use crate::perturbation::{
    d_inverse_sup, gram_norm, injectivity_factor_check, plain_norms, smoothed_gram, smoothed_norms,
    spectrum_inclusion_check, split, to_sparse, transfer_bound_certify, FiniteRankPerturbation, PerturbedOperator,
    Sparse,
};
use crate::quadrature::{build_mesh, halve, integrate, QuadratureConfig};
use crate::report::{argmax, pair, refinement_delta, scan, CertificateReport, GridMeta, Status};
use crate::resolvent::{certify_unperturbed, moment_inequality_probe, CircleScanRow, EngineConfig, UnperturbedSuite};
use crate::scenario::{ExperimentConfig, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Preserved,
    Violated,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Preserved => "preserved",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecaySample {
    pub n: u64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTable {
    pub name: String,
    pub initial_norm: f64,
    pub threshold: f64,
    pub samples: Vec<DecaySample>,
    /// First `n` with `‖Tⁿx‖ ≤ threshold·‖x‖`.
    pub first_passage: Option<u64>,
    /// First `n` with `‖Tⁿx‖ > 10⁸‖x‖`; the orbit is abandoned there.
    pub blow_up: Option<u64>,
}

const BLOW_UP: f64 = 1e8;

/// Sample indices `0, 1, 2, …` roughly ten per decade, always ending at `n_max`.
fn decay_indices(n_max: u64) -> Vec<u64> {
    let mut out = vec![0u64];
    let mut j = 0i32;
    loop {
        let n = 10f64.powf(j as f64 / 10.0).round() as u64;
        if n >= n_max {
            break;
        }
        if n > *out.last().unwrap() {
            out.push(n);
        }
        j += 1;
    }
    out.push(n_max);
    out
}

/// `‖Tⁿx‖` on a log-spaced sample of `n ≤ n_max`.
pub fn orbit_decay(op: &PerturbedOperator, x: &[C64], n_max: u64, threshold: f64) -> Result<DecayTable> {
    let initial = norm(x);
    let marks = decay_indices(n_max.max(1));
    let mut table = DecayTable {
        name: "orbit".into(),
        initial_norm: initial,
        threshold,
        samples: Vec::with_capacity(marks.len()),
        first_passage: None,
        blow_up: None,
    };
    let mut v = x.to_vec();
    let mut next = 0;
    for n in 0..=marks[marks.len() - 1] {
        if n > 0 {
            v = op.apply(&v)?;
        }
        let nv = norm(&v);
        if table.first_passage.is_none() && nv <= threshold * initial {
            table.first_passage = Some(n);
        }
        if marks[next] == n {
            table.samples.push(DecaySample { n, norm: nv });
            next += 1;
        }
        if nv > BLOW_UP * initial || !nv.is_finite() {
            table.blow_up = Some(n);
            table.samples.push(DecaySample { n, norm: nv });
            break;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureRow {
    pub r: f64,
    pub value: f64,
    /// `(r - 1) · value`.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub name: String,
    pub rows: Vec<QuadratureRow>,
    /// Largest `weighted` over the radius grid.
    pub sup: f64,
    pub argmax_r: f64,
    /// Largest relative change of a row value under one mesh halving.
    pub refinement_delta: f64,
    /// Largest panel count over the radii (before halving).
    pub panels: usize,
}

impl QuadratureResult {
    /// Rejects results whose mesh halving moved a value by more than `tol`.
    pub fn checked(self, tol: f64) -> Result<Self> {
        if self.refinement_delta > tol {
            Err(LabError::QuadratureUnstable {
                relative_change: self.refinement_delta,
            })
        } else {
            Ok(self)
        }
    }

    fn assemble(name: &str, radii: &[f64], coarse: &[f64], fine: &[f64], panels: usize) -> Self {
        let rows: Vec<QuadratureRow> = radii
            .iter()
            .zip(coarse)
            .map(|(&r, &v)| QuadratureRow {
                r,
                value: v,
                weighted: (r - 1.0) * v,
            })
            .collect();
        let weighted: Vec<f64> = rows.iter().map(|r| r.weighted).collect();
        let (sup, i) = argmax(&weighted).unwrap_or((0.0, 0));
        let delta = coarse
            .iter()
            .zip(fine)
            .map(|(&c, &f)| relative_change(c, f))
            .fold(0.0, f64::max);
        QuadratureResult {
            name: name.to_string(),
            sup,
            argmax_r: radii.get(i).copied().unwrap_or(f64::NAN),
            rows,
            refinement_delta: delta,
            panels,
        }
    }
}

fn relative_change(coarse: f64, fine: f64) -> f64 {
    let scale = coarse.abs().max(fine.abs());
    if scale == 0.0 {
        0.0
    } else if !scale.is_finite() {
        f64::INFINITY
    } else {
        (coarse - fine).abs() / scale
    }
}

/// Mesh poles: the unit points plus explicit hints.
pub fn quadrature_poles(profile: &SpectralProfile, hints: &[C64]) -> Vec<C64> {
    let mut poles: Vec<C64> = profile.phis.iter().map(|&p| unit(p)).collect();
    poles.extend_from_slice(hints);
    poles
}

/// Integrates a vector-valued integrand over every circle of the radius
/// grid on the arc-partition mesh and on its halving. Returns, per radius,
/// the component integrals on both meshes and the panel count.
pub fn circle_integrals<F>(
    radii: &[f64],
    profile: &SpectralProfile,
    poles: &[C64],
    cfg: &QuadratureConfig,
    width: usize,
    f: F,
) -> Result<Vec<(Vec<f64>, Vec<f64>, usize)>>
where
    F: Fn(C64) -> Result<Vec<f64>> + Sync,
{
    radii
        .iter()
        .map(|&r| {
            let mesh = build_mesh(r, &arc_partition(profile, r).breakpoints(), poles, cfg);
            let g = |phi: f64| f(C64::from_polar(r, phi));
            let coarse = integrate(&mesh, cfg.order, width, g)?;
            let fine = integrate(&halve(&mesh), cfg.order, width, g)?;
            Ok((coarse, fine, mesh.len()))
        })
        .collect()
}

fn max_component(per_r: &[(Vec<f64>, Vec<f64>, usize)], pick: impl Fn(&[f64]) -> f64) -> (Vec<f64>, Vec<f64>, usize) {
    let coarse = per_r.iter().map(|(c, _, _)| pick(c)).collect();
    let fine = per_r.iter().map(|(_, f, _)| pick(f)).collect();
    let panels = per_r.iter().map(|t| t.2).max().unwrap_or(0);
    (coarse, fine, panels)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Probe pairs `(x, y)` for the integral criterion: basis vectors
/// `x = y = e_j` followed by seeded random unit vectors on the leading
/// coordinates.
pub fn criterion_probes(dim: usize, basis: usize, random: usize, support: usize, seed: u64) -> Vec<(Sparse, Sparse)> {
    let mut out = Vec::new();
    for j in 0..basis.min(dim) {
        let e = to_sparse(&basis_vector(dim, j));
        out.push((e.clone(), e));
    }
    let mut rng = seeded_rng(seed, 101);
    let support = support.min(dim);
    for _ in 0..random {
        let mut pair = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut v = random_vector(&mut rng, support);
            let nv = norm(&v);
            v.iter_mut().for_each(|z| *z /= nv);
            pair.push(v.into_iter().enumerate().collect::<Sparse>());
        }
        let y = pair.pop().unwrap();
        let x = pair.pop().unwrap();
        out.push((x, y));
    }
    out
}

/// Sampled power-boundedness criterion: for every probe pair, the
/// supremum over the radius grid of `(r-1)∫(‖R x‖² + ‖R^* y‖²)dφ`, maximized
/// over probes. Returned without the halving check; see
/// [`QuadratureResult::checked`].
pub fn integral_criterion(
    op: &PerturbedOperator,
    profile: &SpectralProfile,
    probes: &[(Sparse, Sparse)],
    radii: &[f64],
    poles: &[C64],
    cfg: &QuadratureConfig,
) -> Result<QuadratureResult> {
    if probes.is_empty() {
        let zeros = vec![0.0; radii.len()];
        return Ok(QuadratureResult::assemble("integral_criterion", radii, &zeros, &zeros, 0));
    }
    let per_r = circle_integrals(radii, profile, poles, cfg, probes.len(), |z| {
        let ctx = op.context(z)?;
        probes
            .iter()
            .map(|(x, y)| Ok(ctx.norm_sq_sparse(x)? + ctx.adjoint_norm_sq_sparse(y)?))
            .collect()
    })?;
    let (coarse, fine, panels) = max_component(&per_r, max_of);
    Ok(QuadratureResult::assemble("integral_criterion", radii, &coarse, &fine, panels))
}

/// `sup_r (r-1)∫ Σ_j ‖R(re^{iφ}, A) b_j‖² dφ` for the unperturbed base of
/// `op` (with `adjoint`, `‖R^* b_j‖²`).
pub fn finite_rank_integral(
    op: &PerturbedOperator,
    columns: &[Vec<C64>],
    adjoint: bool,
    profile: &SpectralProfile,
    radii: &[f64],
    poles: &[C64],
    cfg: &QuadratureConfig,
) -> Result<QuadratureResult> {
    let name = if adjoint { "finite_rank_adjoint" } else { "finite_rank" };
    if columns.is_empty() {
        let zeros = vec![0.0; radii.len()];
        return Ok(QuadratureResult::assemble(name, radii, &zeros, &zeros, 0));
    }
    let f = column_norms_sq(op.base(), columns, adjoint);
    let per_r = circle_integrals(radii, profile, poles, cfg, 1, |z| Ok(vec![f(z)?]))?;
    let (coarse, fine, panels) = max_component(&per_r, |v| v[0]);
    Ok(QuadratureResult::assemble(name, radii, &coarse, &fine, panels))
}

/// `λ ↦ Σ_j ‖R(λ) v_j‖²` (or with `R^*`).
fn column_norms_sq<'a>(
    base: &'a OperatorModel,
    columns: &'a [Vec<C64>],
    adjoint: bool,
) -> impl Fn(C64) -> Result<f64> + Sync + 'a {
    let weights: Option<Vec<f64>> = base.as_diagonal().map(|_| {
        (0..base.dim())
            .map(|n| columns.iter().map(|c| c[n].norm_sqr()).sum())
            .collect()
    });
    move |z: C64| match (&weights, base.as_diagonal()) {
        (Some(w), Some(d)) => {
            d.check_spectrum(z)?;
            Ok(d.head().iter().zip(w).map(|(a, wn)| wn / (z - a).norm_sqr()).sum())
        }
        _ => {
            let mut s = 0.0;
            for c in columns {
                let y = if adjoint {
                    let conj_z = z.conj();
                    let adj = DenseTruncation::from_matrix(base.head_matrix().adjoint());
                    crate::oracle::oracle_solve(&adj, conj_z, c)?
                } else {
                    base.resolvent_apply(z, c)?
                };
                s += y.iter().map(|v| v.norm_sqr()).sum::<f64>();
            }
            Ok(s)
        }
    }
}

/// One evaluation of the majorant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FkPoint {
    pub f: f64,
    /// `‖R(λ,A) B‖`.
    pub rb: f64,
    /// `‖C R(λ,A)‖`.
    pub cr: f64,
    /// `‖R(λ,A) Λ_k^{-β₁} B‖`.
    pub rb_smoothed: f64,
    /// `‖R(λ,A)^* (Λ_k^*)^{-γ₁} C^*‖`.
    pub cr_smoothed: f64,
}

/// `f_k(λ) = K ‖R B_{β₁}‖^{1-β₁/α} ‖R^* C̃_{γ₁}‖^{1-γ₁/α}` with the split
/// `β₁ + γ₁ = α`.
#[derive(Debug, Clone)]
pub struct FkMajorant {
    pub k: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub gamma1: f64,
    pub k_const: f64,
    pub m1: f64,
    pub moment: (f64, f64),
    pub b_smoothed_norm: f64,
    pub c_smoothed_norm: f64,
    u: Vec<Vec<C64>>,
    v: Vec<Vec<C64>>,
}

impl FkMajorant {
    /// `m1` is `sup ‖R Λ_k^α‖` over the region, `moment` the moment
    /// inequality constants for `β₁` and `γ₁`.
    pub fn new(
        op: &PerturbedOperator,
        model: &OperatorModel,
        pert: &FiniteRankPerturbation,
        profile: &SpectralProfile,
        k: usize,
        m1: f64,
        moment: (f64, f64),
    ) -> Result<Self> {
        let alpha = profile.alpha;
        let (beta1, gamma1) = split(pert.beta, pert.gamma, alpha)?;
        let base = op.base();
        let u = op
            .b()
            .iter()
            .map(|b| base.fractional_apply(FractionalFactor::new(k, -beta1), b))
            .collect::<Result<Vec<_>>>()?;
        let v = op
            .c()
            .iter()
            .map(|c| base.fractional_apply(FractionalFactor::adjoint(k, -gamma1), c))
            .collect::<Result<Vec<_>>>()?;
        let gb = smoothed_gram(model, &pert.b_columns, pert.scale_b, Some((k, -beta1)), false)?;
        let gc = smoothed_gram(model, &pert.c_columns, pert.scale_c, Some((k, -gamma1)), true)?;
        let (nb, nc) = (gram_norm(&gb), gram_norm(&gc));
        let k_const = moment.0 * moment.1 * m1 * nb.powf(beta1 / alpha) * nc.powf(gamma1 / alpha);
        Ok(FkMajorant {
            k,
            alpha,
            beta1,
            gamma1,
            k_const,
            m1,
            moment,
            b_smoothed_norm: nb,
            c_smoothed_norm: nc,
            u,
            v,
        })
    }

    /// Hölder exponents `(1/q, 1/q') = (1 - β₁/α, 1 - γ₁/α)`.
    pub fn holder_exponents(&self) -> (f64, f64) {
        (1.0 - self.beta1 / self.alpha, 1.0 - self.gamma1 / self.alpha)
    }

    pub fn evaluate(&self, op: &PerturbedOperator, lambda: C64) -> Result<FkPoint> {
        let res = op.base_resolvent(lambda)?;
        let ru: Vec<Vec<C64>> = self.u.iter().map(|x| res.apply(x)).collect();
        let rv: Vec<Vec<C64>> = self.v.iter().map(|x| res.apply_adjoint(x)).collect();
        let rb: Vec<Vec<C64>> = op.b().iter().map(|x| res.apply(x)).collect();
        let rc: Vec<Vec<C64>> = op.c().iter().map(|x| res.apply_adjoint(x)).collect();
        let (nu, nv) = (block_norm(&ru), block_norm(&rv));
        let (p, q) = self.holder_exponents();
        Ok(FkPoint {
            f: self.k_const * nu.powf(p) * nv.powf(q),
            rb: block_norm(&rb),
            cr: block_norm(&rc),
            rb_smoothed: nu,
            cr_smoothed: nv,
        })
    }

    /// `[f_k², Σ‖R u_j‖², Σ‖R^* v_i‖²]` at `λ`.
    fn integrands(&self, op: &PerturbedOperator, lambda: C64) -> Result<Vec<f64>> {
        let res = op.base_resolvent(lambda)?;
        let ru: Vec<Vec<C64>> = self.u.iter().map(|x| res.apply(x)).collect();
        let rv: Vec<Vec<C64>> = self.v.iter().map(|x| res.apply_adjoint(x)).collect();
        let su: f64 = ru.iter().map(|x| norm_sq(x)).sum();
        let sv: f64 = rv.iter().map(|x| norm_sq(x)).sum();
        let (p, q) = self.holder_exponents();
        let f = self.k_const * block_norm(&ru).powf(p) * block_norm(&rv).powf(q);
        Ok(vec![f * f, su, sv])
    }
}

/// Moment-inequality constants `(M_{β₁}, M_{γ₁})`: one for diagonal
/// models, probed on seeded samples otherwise.
pub fn moment_constants(
    op: &PerturbedOperator,
    profile: &SpectralProfile,
    k: usize,
    beta1: f64,
    gamma1: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if op.base().as_diagonal().is_some() {
        return Ok((1.0, 1.0));
    }
    let mut rng = seeded_rng(seed, 211 + k as u64);
    let xs: Vec<Vec<C64>> = (0..samples).map(|_| random_vector(&mut rng, op.dim())).collect();
    let probe = |t: f64| -> Result<f64> {
        if t <= 0.0 || t >= profile.alpha {
            Ok(1.0)
        } else {
            Ok(moment_inequality_probe(op.base(), k, t, profile.alpha, &xs)?.max(1.0))
        }
    };
    Ok((probe(beta1)?, probe(gamma1)?))
}

fn meta(points: usize, refined: usize, grid: &ScanGrid) -> GridMeta {
    GridMeta {
        points,
        refined_points: refined,
        floor: grid.resolution.dphi_min,
        hash: grid.hash(),
    }
}

/// Circle points within `ε_A` of unit point `k`.
fn near_circle(grid: &ScanGrid, k: usize) -> Vec<(C64, f64)> {
    grid.circle_points()
        .into_iter()
        .filter(|c| c.nearest_k == k && c.dist <= grid.profile.eps_a)
        .map(|c| (c.lambda, c.dist))
        .collect()
}

/// Both majorant properties: `M_k = sup |φ-φ_k|^α f_k(e^{iφ})` on the
/// circle and `sup_r (r-1)∫ f_k² dφ`, with the Hölder cross-check at every
/// radius and the domination `‖RB‖‖CR‖ ≤ f_k` on the region grid.
pub fn fk_properties_certify(
    fk: &FkMajorant,
    op: &PerturbedOperator,
    grid: &ScanGrid,
    radii: &[f64],
    poles: &[C64],
    qcfg: &QuadratureConfig,
    cfg: &EngineConfig,
) -> Result<(CertificateReport, QuadratureResult)> {
    let k = fk.k;
    let alpha = fk.alpha;
    let circle_sup = |g: &ScanGrid| -> Result<(f64, Option<C64>, usize)> {
        let pts = near_circle(g, k);
        let lambdas: Vec<C64> = pts.iter().map(|p| p.0).collect();
        let vals = scan(&lambdas, |z| Ok(fk.evaluate(op, z)?.f))?;
        let weighted: Vec<f64> = vals.iter().zip(&pts).map(|(v, p)| p.1.powf(alpha) * v).collect();
        Ok(match argmax(&weighted) {
            Some((s, i)) => (s, Some(lambdas[i]), pts.len()),
            None => (0.0, None, 0),
        })
    };
    let (m_k, at, n_coarse) = circle_sup(grid)?;
    let (m_k_fine, _, n_fine) = circle_sup(&grid.refined())?;

    let region = grid.region_points(k);
    let points = scan(&region, |z| fk.evaluate(op, z))?;
    let mut dom_ratio = 0.0f64;
    let mut dom_violations = 0usize;
    for p in &points {
        let lhs = p.rb * p.cr;
        if lhs > 0.0 {
            dom_ratio = dom_ratio.max(lhs / p.f);
        }
        if lhs > p.f * (1.0 + 1e-9) {
            dom_violations += 1;
        }
    }

    let per_r = circle_integrals(radii, &grid.profile, poles, qcfg, 3, |z| fk.integrands(op, z))?;
    let (coarse, fine, panels) = max_component(&per_r, |v| v[0]);
    let mut quad = QuadratureResult::assemble(&format!("fk_integral_{k}"), radii, &coarse, &fine, panels);
    quad.name = format!("fk_integral_{k}");
    let (p, q) = fk.holder_exponents();
    let holder_violations = per_r
        .iter()
        .filter(|(c, _, _)| c[0] > fk.k_const.powi(2) * c[1].powf(p) * c[2].powf(q) * (1.0 + 1e-9))
        .count();

    let mut rep = CertificateReport::new(&format!("fk_properties_{k}"));
    rep.grid = meta(n_coarse, n_fine, grid);
    rep.supremum = m_k;
    rep.argmax = at.map(pair);
    let fine_mk = m_k_fine.max(m_k);
    rep.refinement_delta = Some(refinement_delta(m_k, fine_mk));
    rep.set("M_k", fine_mk);
    rep.set("coarse_M_k", m_k);
    rep.set("K", fk.k_const);
    rep.set("M_1", fk.m1);
    rep.set("beta1", fk.beta1);
    rep.set("gamma1", fk.gamma1);
    rep.set("holder_q", if p > 0.0 { 1.0 / p } else { f64::INFINITY });
    rep.set("smoothed_b_norm", fk.b_smoothed_norm);
    rep.set("smoothed_c_norm", fk.c_smoothed_norm);
    rep.set("integral_sup", quad.sup);
    rep.set("integral_refinement_delta", quad.refinement_delta);
    rep.set("domination_ratio", dom_ratio);
    rep.set("domination_violations", dom_violations as f64);
    rep.set("holder_violations", holder_violations as f64);
    let stable = rep.refinement_delta.unwrap() <= cfg.refinement_tol && quad.refinement_delta <= qcfg.halving_tol;
    if dom_violations > 0 || holder_violations > 0 {
        rep.notes.push(format!(
            "{dom_violations} domination and {holder_violations} Hölder violations"
        ));
    } else if !(m_k.is_finite() && quad.sup.is_finite()) {
        rep.notes.push("majorant supremum not finite".into());
    } else if !stable {
        rep.notes.push("majorant suprema not refinement-stable".into());
    } else {
        rep.status = Status::Certified;
    }
    Ok((rep, quad))
}

/// Weighted perturbed resolvent norms along the circle against
/// `M_A + M_D·M_k` near each unit point and `M_A + M_D‖B‖‖C‖M_A²` away.
pub fn perturbed_growth_certify(
    op: &PerturbedOperator,
    profile: &SpectralProfile,
    grid: &ScanGrid,
    m_d: f64,
    m_k: &[f64],
    plain: (f64, f64),
    cfg: &EngineConfig,
) -> Result<(CertificateReport, Vec<CircleScanRow>)> {
    let rows_for = |g: &ScanGrid| -> Result<Vec<(CircleScanRow, f64)>> {
        let pts = g.circle_points();
        let lambdas: Vec<C64> = pts.iter().map(|c| c.lambda).collect();
        let vals = scan(&lambdas, |z| {
            let pert = op.resolvent_norm(z)?;
            let base = op.base().resolvent_norm(z)?;
            let corr = if op.rank() == 0 {
                0.0
            } else {
                let ctx = op.context(z)?;
                let (rb, cr) = ctx.rb_cr_norms();
                ctx.transfer.d_inverse_norm() * rb * cr
            };
            Ok((pert, (pert - base).abs() - corr))
        })?;
        Ok(pts
            .iter()
            .zip(vals)
            .map(|(c, (n, excess))| {
                (
                    CircleScanRow {
                        phi: c.phi,
                        nearest_k: c.nearest_k,
                        dist: c.dist,
                        resnorm: n,
                        weighted: if c.dist <= profile.eps_a { c.dist.powf(profile.alpha) * n } else { n },
                    },
                    excess,
                )
            })
            .collect())
    };
    let rows = rows_for(grid)?;
    let fine = rows_for(&grid.refined())?;
    let away_bound = profile.m_a + m_d * plain.0 * plain.1 * profile.m_a * profile.m_a;
    let bound_of = |r: &CircleScanRow| {
        if r.dist <= profile.eps_a {
            profile.m_a + m_d * m_k.get(r.nearest_k).copied().unwrap_or(f64::INFINITY)
        } else {
            away_bound
        }
    };
    let ratio = |rs: &[(CircleScanRow, f64)]| -> Vec<f64> { rs.iter().map(|(r, _)| r.weighted / bound_of(r)).collect() };
    let (worst, i) = argmax(&ratio(&rows)).unwrap_or((0.0, 0));
    let (worst_fine, fi) = argmax(&ratio(&fine)).unwrap_or((0.0, 0));
    let near_sup = rows
        .iter()
        .filter(|(r, _)| r.dist <= profile.eps_a)
        .map(|(r, _)| r.weighted)
        .fold(0.0, f64::max);
    let away_sup = rows
        .iter()
        .filter(|(r, _)| r.dist > profile.eps_a)
        .map(|(r, _)| r.weighted)
        .fold(0.0, f64::max);
    let fine_sup = fine.iter().map(|(r, _)| r.weighted).fold(0.0, f64::max);
    let coarse_sup = near_sup.max(away_sup);
    let sanity = rows
        .iter()
        .chain(&fine)
        .filter(|(r, e)| *e > 1e-9 * r.resnorm)
        .count();

    let mut rep = CertificateReport::new("perturbed_growth");
    rep.grid = meta(rows.len(), fine.len(), grid);
    rep.supremum = coarse_sup;
    rep.argmax = rows.get(i).map(|(r, _)| pair(unit(r.phi)));
    rep.refinement_delta = Some(refinement_delta(coarse_sup, fine_sup.max(coarse_sup)));
    rep.set("near_sup", near_sup);
    rep.set("away_sup", away_sup);
    rep.set("refined_sup", fine_sup);
    rep.set("M_D", m_d);
    rep.set("away_bound", away_bound);
    for (k, v) in m_k.iter().enumerate() {
        rep.set(&format!("near_bound_{k}"), profile.m_a + m_d * v);
    }
    rep.set("bound_ratio", worst.max(worst_fine));
    rep.set("smw_triangle_violations", sanity as f64);
    let tol = 1.0 + 1e-9;
    if worst_fine > tol || worst > tol {
        let (r, _) = if worst_fine > worst { fine[fi] } else { rows[i] };
        rep.refute(unit(r.phi), format!("weighted perturbed norm {:.6e} exceeds its bound", r.weighted));
    } else if sanity > 0 {
        rep.notes.push(format!("{sanity} points violate the SMW triangle estimate"));
    } else if rep.refinement_delta.unwrap() <= cfg.refinement_tol {
        rep.status = Status::Certified;
    } else {
        rep.notes.push("supremum not refinement-stable".into());
    }
    let plain_rows = rows.into_iter().map(|(r, _)| r).collect();
    Ok((rep, plain_rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    /// `hypothesis` or `empirical`.
    pub kind: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub source: String,
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    pub checks: Vec<CheckEntry>,
    pub reports: Vec<CertificateReport>,
    pub quadrature: Vec<QuadratureResult>,
    pub decay: Vec<DecayTable>,
    pub constants: BTreeMap<String, f64>,
    pub witnesses: Vec<Witness>,
    pub circle_scan: Vec<CircleScanRow>,
    pub perturbed_circle_scan: Vec<CircleScanRow>,
    pub grid_hashes: BTreeMap<String, String>,
}

impl StabilityVerdict {
    fn empty() -> Self {
        StabilityVerdict {
            verdict: Verdict::Inconclusive,
            checks: Vec::new(),
            reports: Vec::new(),
            quadrature: Vec::new(),
            decay: Vec::new(),
            constants: BTreeMap::new(),
            witnesses: Vec::new(),
            circle_scan: Vec::new(),
            perturbed_circle_scan: Vec::new(),
            grid_hashes: BTreeMap::new(),
        }
    }

    fn check(&mut self, name: &str, kind: &str, status: Status, detail: String) {
        self.checks.push(CheckEntry {
            name: name.to_string(),
            kind: kind.to_string(),
            status,
            detail,
        });
    }

    fn record(&mut self, rep: CertificateReport, kind: &str) -> Status {
        let status = rep.status;
        let detail = rep.notes.last().cloned().unwrap_or_default();
        self.check(&rep.name.clone(), kind, status, detail);
        self.reports.push(rep);
        status
    }

    pub fn report(&self, name: &str) -> Option<&CertificateReport> {
        self.reports.iter().find(|r| r.name == name)
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    fn finish(&mut self) {
        let unstable = self.witnesses.iter().any(|w| w.modulus > 1.0 + 1e-8);
        self.verdict = if unstable {
            Verdict::Violated
        } else if self.checks.iter().all(|c| c.status == Status::Certified) {
            Verdict::Preserved
        } else {
            Verdict::Inconclusive
        };
    }
}

/// Everything that does not depend on `(B, C)`: the model, grids and the
/// unperturbed certificates. Reused across scale changes.
pub struct Pipeline {
    pub scenario: Scenario,
    pub model: OperatorModel,
    pub grid: ScanGrid,
    pub suite: UnperturbedSuite,
}

impl Pipeline {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let model = scenario.build_model()?;
        let grid = build_grids(&scenario.profile, &scenario.experiment.resolution)?;
        let suite = certify_unperturbed(&model, &scenario.profile, &grid, &scenario.experiment.engine);
        Ok(Pipeline {
            scenario: scenario.clone(),
            model,
            grid,
            suite,
        })
    }

    /// Full verdict for the scenario's perturbation scaled by `s`.
    pub fn verdict_at_scale(&self, s: f64) -> StabilityVerdict {
        self.verdict(&self.scenario.perturbation().scaled(s))
    }

    pub fn verdict(&self, pert: &FiniteRankPerturbation) -> StabilityVerdict {
        let mut out = StabilityVerdict::empty();
        self.run(pert, &mut out, false);
        out.finish();
        out
    }

    /// Same verdict as [`Pipeline::verdict`], but stops once it is decided:
    /// after the witness-producing stages, any non-certified check already
    /// makes the outcome inconclusive.
    pub fn decide(&self, pert: &FiniteRankPerturbation) -> Verdict {
        let mut out = StabilityVerdict::empty();
        self.run(pert, &mut out, true);
        out.finish();
        out.verdict
    }

    fn run(&self, pert: &FiniteRankPerturbation, out: &mut StabilityVerdict, stop_early: bool) {
        let sc = &self.scenario;
        let profile = &sc.profile;
        let ex: &ExperimentConfig = &sc.experiment;
        let cfg = &ex.engine;
        let grid = &self.grid;
        let suite = &self.suite;
        out.grid_hashes.insert("base".into(), grid.hash());
        out.grid_hashes.insert("refined".into(), grid.refined().hash());

        let pv = validate_profile(profile);
        out.check(
            "profile",
            "hypothesis",
            if pv.accepted { Status::Certified } else { Status::Inconclusive },
            pv.violations.join("; "),
        );
        out.record(suite.growth.clone(), "hypothesis");
        out.record(suite.kreiss.clone(), "hypothesis");
        for r in suite.plain.iter().chain(&suite.smoothed) {
            out.record(r.clone(), "hypothesis");
        }
        out.record(suite.complement.clone(), "hypothesis");
        out.reports.push(suite.alpha_report.clone());
        out.reports.push(suite.global.clone());
        out.circle_scan = suite.circle_rows.clone();

        let c = &mut out.constants;
        c.insert("M".into(), suite.m);
        c.insert("M_A".into(), profile.m_a);
        c.insert("r_A".into(), profile.r_a());
        c.insert("d_A".into(), profile.d_a());
        c.insert("alpha".into(), profile.alpha);
        let m0 = suite.plain.iter().filter_map(|r| r.value("M_0")).fold(0.0, f64::max);
        c.insert("M_0".into(), m0);
        let m1 = suite.m1();
        c.insert("M_1".into(), m1.iter().copied().fold(0.0, f64::max));
        let m2 = suite.complement.value("M_2");
        if let Some(v) = m2 {
            c.insert("M_2".into(), v);
        }

        let order_ok = pert.rank() == 0 || pert.beta + pert.gamma >= profile.alpha;
        out.check(
            "smoothness_order",
            "hypothesis",
            if order_ok { Status::Certified } else { Status::Inconclusive },
            format!("beta + gamma = {} against alpha = {}", pert.beta + pert.gamma, profile.alpha),
        );

        let op = match PerturbedOperator::new(&self.model, pert, ex.trunc_dim) {
            Ok(op) => op,
            Err(e) => {
                out.check("perturbation", "hypothesis", Status::Inconclusive, format!("{}: {e}", e.kind()));
                return;
            }
        };
        let norms = match smoothed_norms(pert, &self.model, profile) {
            Ok(n) => {
                let finite = n.iter().all(|s| s.b_norm.is_finite() && s.c_norm.is_finite());
                let detail = n
                    .iter()
                    .map(|s| format!("k={}: {:.6e} x {:.6e}", s.k, s.b_norm, s.c_norm))
                    .collect::<Vec<_>>()
                    .join("; ");
                out.check(
                    "smoothed_norms",
                    "hypothesis",
                    if finite { Status::Certified } else { Status::Inconclusive },
                    detail,
                );
                for s in &n {
                    out.constants.insert(format!("smoothed_b_norm_{}", s.k), s.b_norm);
                    out.constants.insert(format!("smoothed_c_norm_{}", s.k), s.c_norm);
                }
                Some(n)
            }
            Err(e) => {
                out.check("smoothed_norms", "hypothesis", Status::Inconclusive, format!("{}: {e}", e.kind()));
                None
            }
        };
        let plain = plain_norms(pert, &self.model).unwrap_or((f64::NAN, f64::NAN));
        out.constants.insert("B_norm".into(), plain.0);
        out.constants.insert("C_norm".into(), plain.1);

        if let Some(norms) = &norms {
            let mut m_r = 0.0f64;
            for n in norms {
                let excess = pert.beta + pert.gamma - profile.alpha;
                let rep = match transfer_bound_certify(&op, n, plain, m2, grid, cfg.refinement_tol) {
                    Ok(mut rep) => {
                        if excess >= 0.0 {
                            if let Ok(f) = op.base().factor_norm(&[(n.k, excess)]) {
                                rep.set("excess_power_norm", f);
                                rep.notes.push(
                                    "region constant assembled with the norm of Λ_k^(β+γ-α), not (-A)^(β+γ-α)"
                                        .into(),
                                );
                            }
                        }
                        rep
                    }
                    Err(e) => CertificateReport::failed(&format!("transfer_bound_{}", n.k), &e),
                };
                m_r = m_r.max(rep.value("M_R").unwrap_or(f64::NAN));
                out.record(rep, "hypothesis");
            }
            out.constants.insert("M_R".into(), m_r);
        }

        let d_rep = d_inverse_sup(&op, grid).unwrap_or_else(|e| CertificateReport::failed("d_inverse", &e));
        let m_d = d_rep.value("M_D").unwrap_or(f64::INFINITY);
        out.constants.insert("M_D".into(), m_d);
        if let Some(c) = d_rep.value("c") {
            out.constants.insert("c".into(), c);
        }
        if d_rep.status == Status::Refuted {
            if let Some(w) = d_rep.witness {
                let z = C64::new(w[0], w[1]);
                out.witnesses.push(Witness {
                    source: "singular_transfer".into(),
                    re: z.re,
                    im: z.im,
                    modulus: z.norm(),
                });
            }
        }
        out.record(d_rep.clone(), "hypothesis");

        let eigens = DenseTruncation::from_model(&self.model, op.dim())
            .and_then(|t| t.with_rank_update(op.b(), op.c()))
            .map(|t| oracle_eigens(&t));
        for k in 0..profile.n_points() {
            let rep = injectivity_factor_check(
                &op,
                &self.model,
                pert,
                profile,
                k,
                ex.injectivity_samples,
                ex.seed,
                eigens.as_deref().ok(),
            )
            .unwrap_or_else(|e| CertificateReport::failed(&format!("injectivity_{k}"), &e));
            out.record(rep, "hypothesis");
        }
        match &eigens {
            Ok(ev) => {
                let rep = spectrum_inclusion_check(&d_rep, ev);
                if rep.status == Status::Refuted {
                    if let Some(w) = rep.witness {
                        let z = C64::new(w[0], w[1]);
                        out.witnesses.push(Witness {
                            source: "truncation_eigenvalue".into(),
                            re: z.re,
                            im: z.im,
                            modulus: z.norm(),
                        });
                    }
                }
                out.constants.insert("spectral_radius".into(), rep.value("spectral_radius").unwrap_or(f64::NAN));
                out.record(rep, "empirical");
            }
            Err(e) => {
                out.record(CertificateReport::failed("spectrum_inclusion", e), "empirical");
            }
        }

        // Orbit first: it is cheap and a blow-up settles the verdict.
        let mut x = vec![ZERO; op.dim()];
        for &i in &ex.orbit_support {
            if i >= 1 && i <= op.dim() {
                x[i - 1] = ONE;
            }
        }
        match orbit_decay(&op, &x, ex.orbit_max, ex.orbit_threshold) {
            Ok(table) => {
                let status = if table.blow_up.is_some() {
                    Status::Refuted
                } else if table.first_passage.is_some() {
                    Status::Certified
                } else {
                    Status::Inconclusive
                };
                let detail = match (table.first_passage, table.blow_up) {
                    (_, Some(n)) => format!("orbit exceeded 1e8·‖x‖ at n = {n}"),
                    (Some(n), _) => format!("below threshold at n = {n}"),
                    _ => "threshold not reached within the budget".into(),
                };
                if let Some(n) = table.first_passage {
                    out.constants.insert("orbit_first_passage".into(), n as f64);
                }
                out.check("orbit_decay", "empirical", status, detail);
                out.decay.push(table);
            }
            Err(e) => out.check("orbit_decay", "empirical", Status::Inconclusive, format!("{}: {e}", e.kind())),
        }
        if !out.witnesses.is_empty() {
            return;
        }
        if stop_early && out.checks.iter().any(|c| c.status != Status::Certified) {
            return;
        }

        let radii = grid.radial_r();
        let hints = pole_hints(&op, ex.pole_entries, eigens.as_deref().ok());
        let poles = quadrature_poles(profile, &hints);
        let probes = criterion_probes(op.dim(), ex.basis_probes, ex.random_probes, ex.probe_support, ex.seed);
        match integral_criterion(&op, profile, &probes, &radii, &poles, &ex.quadrature) {
            Ok(q) => {
                let stable = q.sup.is_finite() && q.refinement_delta <= ex.quadrature.halving_tol;
                out.constants.insert("integral_criterion".into(), q.sup);
                out.check(
                    "integral_criterion",
                    "empirical",
                    if stable { Status::Certified } else { Status::Inconclusive },
                    format!(
                        "sampled sup {:.6e} over {} probes, halving change {:.3e}",
                        q.sup,
                        probes.len(),
                        q.refinement_delta
                    ),
                );
                out.quadrature.push(q);
            }
            Err(e) => out.check("integral_criterion", "empirical", Status::Inconclusive, format!("{}: {e}", e.kind())),
        }

        let mut m_k = vec![0.0; profile.n_points()];
        if op.rank() > 0 {
            for k in 0..profile.n_points() {
                let fk = split(pert.beta, pert.gamma, profile.alpha).and_then(|(b1, g1)| {
                    let moment = moment_constants(&op, profile, k, b1, g1, ex.moment_samples, ex.seed)?;
                    FkMajorant::new(&op, &self.model, pert, profile, k, m1.get(k).copied().unwrap_or(f64::NAN), moment)
                });
                let res = fk.and_then(|fk| {
                    out.constants.insert(format!("K_{k}"), fk.k_const);
                    fk_properties_certify(&fk, &op, grid, &radii, &poles, &ex.quadrature, cfg)
                });
                match res {
                    Ok((rep, quad)) => {
                        m_k[k] = rep.value("M_k").unwrap_or(f64::INFINITY);
                        out.constants.insert(format!("M_k_{k}"), m_k[k]);
                        out.record(rep, "empirical");
                        out.quadrature.push(quad);
                    }
                    Err(e) => {
                        m_k[k] = f64::INFINITY;
                        out.record(CertificateReport::failed(&format!("fk_properties_{k}"), &e), "empirical");
                    }
                }
            }
        }
        match perturbed_growth_certify(&op, profile, grid, m_d, &m_k, plain, cfg) {
            Ok((rep, rows)) => {
                out.constants.insert("perturbed_growth_sup".into(), rep.supremum);
                out.record(rep, "empirical");
                out.perturbed_circle_scan = rows;
            }
            Err(e) => {
                out.record(CertificateReport::failed("perturbed_growth", &e), "empirical");
            }
        }
    }

}

/// Quadrature mesh hints: the leading `cap` entries for diagonal models,
/// the largest truncation eigenvalues otherwise.
pub fn pole_hints(op: &PerturbedOperator, cap: usize, eigens: Option<&[C64]>) -> Vec<C64> {
    match op.base().as_diagonal() {
        Some(d) => d.head().iter().take(cap).copied().collect(),
        None => {
            let mut ev = eigens.map(|e| e.to_vec()).unwrap_or_default();
            ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
            ev.truncate(cap);
            ev
        }
    }
}

/// Full pipeline for one scenario; stage failures become inconclusive
/// entries.
pub fn stability_verdict(scenario: &Scenario) -> StabilityVerdict {
    match Pipeline::new(scenario) {
        Ok(p) => p.verdict(&scenario.perturbation()),
        Err(e) => {
            let mut out = StabilityVerdict::empty();
            out.check("setup", "hypothesis", Status::Inconclusive, format!("{}: {e}", e.kind()));
            out.finish();
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleProbe {
    pub scale: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub initial: [f64; 2],
    pub s_low: f64,
    pub s_high: f64,
    /// `(s_high - s_low) / initial width`.
    pub width_ratio: f64,
    pub steps: Vec<ScaleProbe>,
    /// Interior points below `s_low` re-verified after the bisection.
    pub reverified: Vec<ScaleProbe>,
}

impl ThresholdResult {
    pub fn monotone(&self) -> bool {
        self.reverified.iter().all(|p| p.verdict == Verdict::Preserved)
    }
}

/// Relative bracket width at which bisection stops.
pub const THRESHOLD_WIDTH: f64 = 1e-3;

/// Bisection on the scale `s` of `(sB, sC)` between a preserved and a
/// non-preserved endpoint.
pub fn delta_threshold_search(scenario: &Scenario, bracket: [f64; 2]) -> Result<ThresholdResult> {
    let [lo0, hi0] = bracket;
    if !(lo0.is_finite() && hi0.is_finite() && lo0 >= 0.0 && lo0 < hi0) {
        return Err(LabError::BracketInvalid(format!("need 0 ≤ lo < hi, got [{lo0}, {hi0}]")));
    }
    let pipeline = Pipeline::new(scenario)?;
    threshold_with(&pipeline, bracket)
}

pub fn threshold_with(pipeline: &Pipeline, bracket: [f64; 2]) -> Result<ThresholdResult> {
    let [lo0, hi0] = bracket;
    let mut steps = Vec::new();
    let mut probe = |s: f64| {
        let v = pipeline.decide(&pipeline.scenario.perturbation().scaled(s));
        steps.push(ScaleProbe { scale: s, verdict: v });
        v
    };
    let v_lo = probe(lo0);
    let v_hi = probe(hi0);
    if v_lo != Verdict::Preserved || v_hi == Verdict::Preserved {
        return Err(LabError::BracketInvalid(format!(
            "endpoints do not straddle: {} at {lo0}, {} at {hi0}",
            v_lo.as_str(),
            v_hi.as_str()
        )));
    }
    let (mut lo, mut hi) = (lo0, hi0);
    let target = THRESHOLD_WIDTH * (hi0 - lo0);
    while hi - lo > target {
        let mid = 0.5 * (lo + hi);
        if probe(mid) == Verdict::Preserved {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let reverified = (1..=5)
        .map(|j| {
            let s = lo0 + (lo - lo0) * j as f64 / 6.0;
            ScaleProbe {
                scale: s,
                verdict: pipeline.decide(&pipeline.scenario.perturbation().scaled(s)),
            }
        })
        .collect();
    Ok(ThresholdResult {
        initial: bracket,
        s_low: lo,
        s_high: hi,
        width_ratio: (hi - lo) / (hi0 - lo0),
        steps,
        reverified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiagonalModel;
    use std::f64::consts::TAU;

    fn half_model() -> OperatorModel {
        DiagonalModel::new(crate::model::EntryRule::None, vec![C64::new(0.5, 0.0)], 1, vec![0.0])
            .unwrap()
            .into()
    }

    fn profile() -> SpectralProfile {
        SpectralProfile {
            phis: vec![0.0],
            alpha: 1.0,
            eps_a: 0.5,
            m_a: 10.0,
        }
    }

    #[test]
    fn scalar_orbit() {
        let op = PerturbedOperator::unperturbed(&half_model(), 1).unwrap();
        let t = orbit_decay(&op, &[ONE], 10, 1e-3).unwrap();
        let last = t.samples.last().unwrap();
        assert_eq!(last.n, 10);
        assert!((last.norm - 2f64.powi(-10)).abs() < 1e-18);
        assert_eq!(t.first_passage, Some(10));
        let z = orbit_decay(&op, &[ZERO], 10, 1e-3).unwrap();
        assert!(z.samples.iter().all(|s| s.norm == 0.0));
    }

    #[test]
    fn poisson_closed_form_for_the_criterion() {
        let op = PerturbedOperator::unperturbed(&half_model(), 1).unwrap();
        let p = profile();
        let radii = crate::linalg::log_space(1e-6, 1.0, 61).iter().map(|t| 1.0 + t).collect::<Vec<_>>();
        let e = vec![(0usize, ONE)];
        let probes = vec![(e.clone(), Vec::new())];
        let poles = quadrature_poles(&p, &[C64::new(0.5, 0.0)]);
        let q = integral_criterion(&op, &p, &probes, &radii, &poles, &QuadratureConfig::default()).unwrap();
        for row in &q.rows {
            let exact = (row.r - 1.0) * TAU / (row.r * row.r - 0.25);
            assert!((row.weighted - exact).abs() <= 1e-6 * exact, "r={} {} {}", row.r, row.weighted, exact);
        }
        let zero = integral_criterion(&op, &p, &[(Vec::new(), Vec::new())], &radii, &poles, &QuadratureConfig::default())
            .unwrap();
        assert_eq!(zero.sup, 0.0);
    }

    #[test]
    fn finite_rank_single_column_matches_closed_form() {
        let op = PerturbedOperator::unperturbed(&half_model(), 1).unwrap();
        let p = profile();
        let radii = vec![1.001, 1.5, 2.0];
        let poles = quadrature_poles(&p, &[C64::new(0.5, 0.0)]);
        let q = finite_rank_integral(&op, &[vec![ONE]], false, &p, &radii, &poles, &QuadratureConfig::default()).unwrap();
        for row in &q.rows {
            let exact = (row.r - 1.0) * TAU / (row.r * row.r - 0.25);
            assert!((row.weighted - exact).abs() <= 1e-9 * exact);
        }
        let empty = finite_rank_integral(&op, &[], false, &p, &radii, &poles, &QuadratureConfig::default()).unwrap();
        assert_eq!(empty.sup, 0.0);
    }

    #[test]
    fn decay_indices_are_increasing_and_end_at_budget() {
        let ix = decay_indices(100_000);
        assert_eq!(ix[0], 0);
        assert_eq!(*ix.last().unwrap(), 100_000);
        assert!(ix.windows(2).all(|w| w[0] < w[1]));
    }
}
