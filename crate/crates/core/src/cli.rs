//! Command-line front end: argument parsing, scenario overrides and the
//! per-subcommand drivers that fill a [`ReportBundle`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bundle::{Outcome, Provenance, ReportBundle};
use crate::error::{LabError, Result};
use crate::geometry::build_grids;
use crate::oracle::{oracle_eigens, DenseTruncation};
use crate::perturbation::{
    d_inverse_sup, injectivity_factor_check, plain_norms, smoothed_norms, spectrum_inclusion_check,
    transfer_bound_certify, PerturbedOperator,
};
use crate::report::{CertificateReport, Status};
use crate::resolvent::{certify_unperturbed, circle_scan, region_scan};
use crate::scenario::{load_scenario, Scenario};
use crate::stability::{
    criterion_probes, delta_threshold_search, integral_criterion, pole_hints, quadrature_poles, stability_verdict,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "STABPERTURB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "stabperturb", version, about = "Resolvent certificates and stability verdicts for finite-rank perturbations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario file or `builtin:NAME`.
    #[arg(long)]
    pub scenario: String,
    /// Output directory for the bundle and CSV tables.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trunc_dim: Option<usize>,
    #[arg(long)]
    pub grid_pts_per_decade: Option<usize>,
    /// Refinement tolerance for grid suprema.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub orbit_max: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scale_b: Option<f64>,
    #[arg(long)]
    pub scale_c: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Unperturbed certificates only.
    Certify(RunArgs),
    /// Transfer-matrix and spectral checks for the perturbation.
    Perturb(RunArgs),
    /// Full stability verdict.
    Stability(RunArgs),
    /// Bisection for the largest preserved scale of (B, C).
    Threshold {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
    },
    /// Sampled power-boundedness integral criterion on A + BC.
    Integral(RunArgs),
    /// Raw resolvent-norm grids.
    Scan(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubcommandKind {
    Certify,
    Perturb,
    Stability,
    Threshold,
    Integral,
    Scan,
}

impl SubcommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            SubcommandKind::Certify => "certify",
            SubcommandKind::Perturb => "perturb",
            SubcommandKind::Stability => "stability",
            SubcommandKind::Threshold => "threshold",
            SubcommandKind::Integral => "integral",
            SubcommandKind::Scan => "scan",
        }
    }
}

impl Command {
    pub fn parts(&self) -> (SubcommandKind, &RunArgs, Option<[Option<f64>; 2]>) {
        match self {
            Command::Certify(a) => (SubcommandKind::Certify, a, None),
            Command::Perturb(a) => (SubcommandKind::Perturb, a, None),
            Command::Stability(a) => (SubcommandKind::Stability, a, None),
            Command::Threshold { run, lo, hi } => (SubcommandKind::Threshold, run, Some([*lo, *hi])),
            Command::Integral(a) => (SubcommandKind::Integral, a, None),
            Command::Scan(a) => (SubcommandKind::Scan, a, None),
        }
    }
}

/// Applies command-line overrides and re-validates.
pub fn apply_overrides(mut s: Scenario, a: &RunArgs) -> Result<Scenario> {
    let ex = &mut s.experiment;
    if let Some(v) = a.trunc_dim {
        ex.trunc_dim = v;
    }
    if let Some(v) = a.grid_pts_per_decade {
        ex.resolution.points_per_decade = v;
    }
    if let Some(v) = a.tol {
        ex.engine.refinement_tol = v;
    }
    if let Some(v) = a.orbit_max {
        ex.orbit_max = v;
    }
    if let Some(v) = a.seed {
        ex.seed = v;
    }
    if a.scale_b.is_some() || a.scale_c.is_some() {
        let p = s.perturbation.as_mut().ok_or_else(|| {
            LabError::Validation(vec!["--scale-b/--scale-c given but the scenario has no perturbation".into()])
        })?;
        if let Some(v) = a.scale_b {
            p.scale_b = v;
        }
        if let Some(v) = a.scale_c {
            p.scale_c = v;
        }
    }
    s.validate()?;
    Ok(s)
}

fn combined(reports: &[CertificateReport]) -> Status {
    reports.iter().fold(Status::Certified, |acc, r| acc.combine(r.status))
}

/// Runs one subcommand on a validated scenario.
pub fn run(kind: SubcommandKind, scenario: &Scenario, bracket: Option<[f64; 2]>) -> Result<ReportBundle> {
    let ex = &scenario.experiment;
    let mut bundle = ReportBundle::new(kind.name(), Provenance::new(&scenario.name, ex.seed));
    match kind {
        SubcommandKind::Stability => {
            bundle.absorb(stability_verdict(scenario));
        }
        SubcommandKind::Threshold => {
            let bracket = bracket.unwrap_or(ex.threshold_bracket);
            let t = delta_threshold_search(scenario, bracket)?;
            bundle.outcome = if t.monotone() { Outcome::Certified } else { Outcome::Inconclusive };
            bundle.constants.insert("s_low".into(), t.s_low);
            bundle.constants.insert("s_high".into(), t.s_high);
            bundle.constants.insert("width_ratio".into(), t.width_ratio);
            bundle.threshold = Some(t);
        }
        SubcommandKind::Certify | SubcommandKind::Scan => {
            let model = scenario.build_model()?;
            let grid = build_grids(&scenario.profile, &ex.resolution)?;
            bundle.provenance.grid_hashes.insert("base".into(), grid.hash());
            if kind == SubcommandKind::Certify {
                let suite = certify_unperturbed(&model, &scenario.profile, &grid, &ex.engine);
                bundle.reports = suite.reports();
                bundle.outcome = Outcome::from_status(suite.status());
                bundle.constants.insert("M".into(), suite.m);
                for r in &suite.reports() {
                    for key in ["M_0", "M_1", "M_2"] {
                        if let Some(v) = r.value(key) {
                            let e = bundle.constants.entry(key.to_string()).or_insert(v);
                            *e = e.max(v);
                        }
                    }
                }
                bundle.circle_scan = suite.circle_rows;
            } else {
                bundle.circle_scan = circle_scan(&model, &scenario.profile, &grid)?;
                bundle.outcome = Outcome::Certified;
            }
            for k in 0..scenario.profile.n_points() {
                bundle.region_scans.insert(k, region_scan(&model, &scenario.profile, k, &grid)?);
            }
        }
        SubcommandKind::Perturb => {
            let model = scenario.build_model()?;
            let grid = build_grids(&scenario.profile, &ex.resolution)?;
            bundle.provenance.grid_hashes.insert("base".into(), grid.hash());
            let pert = scenario.perturbation();
            let suite = certify_unperturbed(&model, &scenario.profile, &grid, &ex.engine);
            let op = PerturbedOperator::new(&model, &pert, ex.trunc_dim)?;
            let plain = plain_norms(&pert, &model)?;
            let mut reports = Vec::new();
            match smoothed_norms(&pert, &model, &scenario.profile) {
                Ok(norms) => {
                    for n in &norms {
                        bundle.constants.insert(format!("smoothed_b_norm_{}", n.k), n.b_norm);
                        bundle.constants.insert(format!("smoothed_c_norm_{}", n.k), n.c_norm);
                        reports.push(
                            transfer_bound_certify(&op, n, plain, suite.complement.value("M_2"), &grid, ex.engine.refinement_tol)
                                .unwrap_or_else(|e| CertificateReport::failed(&format!("transfer_bound_{}", n.k), &e)),
                        );
                    }
                }
                Err(e) => reports.push(CertificateReport::failed("smoothed_norms", &e)),
            }
            let d = d_inverse_sup(&op, &grid).unwrap_or_else(|e| CertificateReport::failed("d_inverse", &e));
            let eigens = DenseTruncation::from_model(&model, op.dim())
                .and_then(|t| t.with_rank_update(op.b(), op.c()))
                .map(|t| oracle_eigens(&t));
            for k in 0..scenario.profile.n_points() {
                reports.push(
                    injectivity_factor_check(
                        &op,
                        &model,
                        &pert,
                        &scenario.profile,
                        k,
                        ex.injectivity_samples,
                        ex.seed,
                        eigens.as_deref().ok(),
                    )
                    .unwrap_or_else(|e| CertificateReport::failed(&format!("injectivity_{k}"), &e)),
                );
            }
            match &eigens {
                Ok(ev) => reports.push(spectrum_inclusion_check(&d, ev)),
                Err(e) => reports.push(CertificateReport::failed("spectrum_inclusion", e)),
            }
            reports.insert(0, d);
            bundle.constants.insert("B_norm".into(), plain.0);
            bundle.constants.insert("C_norm".into(), plain.1);
            bundle.outcome = Outcome::from_status(combined(&reports));
            bundle.reports = reports;
        }
        SubcommandKind::Integral => {
            let model = scenario.build_model()?;
            let grid = build_grids(&scenario.profile, &ex.resolution)?;
            bundle.provenance.grid_hashes.insert("base".into(), grid.hash());
            let op = PerturbedOperator::new(&model, &scenario.perturbation(), ex.trunc_dim)?;
            let eigens = if op.base().as_diagonal().is_some() {
                None
            } else {
                Some(oracle_eigens(&DenseTruncation::from_model(&model, op.dim())?.with_rank_update(op.b(), op.c())?))
            };
            let hints = pole_hints(&op, ex.pole_entries, eigens.as_deref());
            let poles = quadrature_poles(&scenario.profile, &hints);
            let probes = criterion_probes(op.dim(), ex.basis_probes, ex.random_probes, ex.probe_support, ex.seed);
            let q = integral_criterion(&op, &scenario.profile, &probes, &grid.radial_r(), &poles, &ex.quadrature)?;
            let stable = q.sup.is_finite() && q.refinement_delta <= ex.quadrature.halving_tol;
            bundle.outcome = if stable { Outcome::Certified } else { Outcome::Inconclusive };
            bundle.constants.insert("integral_criterion".into(), q.sup);
            bundle.constants.insert("refinement_delta".into(), q.refinement_delta);
            bundle.quadrature.push(q);
        }
    }
    Ok(bundle)
}

/// Parses the scenario, applies overrides, runs and writes the bundle.
pub fn execute(cmd: &Command) -> Result<ReportBundle> {
    let (kind, args, bracket) = cmd.parts();
    let scenario = apply_overrides(load_scenario(&args.scenario)?, args)?;
    let bracket = bracket.map(|[lo, hi]| {
        [
            lo.unwrap_or(scenario.experiment.threshold_bracket[0]),
            hi.unwrap_or(scenario.experiment.threshold_bracket[1]),
        ]
    });
    let bundle = run(kind, &scenario, bracket)?;
    bundle.emit(&args.out)?;
    Ok(bundle)
}

/// Sizes the global worker pool from [`THREADS_ENV`] when set.
pub fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}
