//! Acceptance suite: one PASS/FAIL line per criterion, then a non-zero exit
//! if any failed. Runs without the libtest harness so the lines reach stdout
//! in order.

use std::f64::consts::TAU;
use std::io::Write;
use std::time::Instant;

use stabperturb::bundle::ReportBundle;
use stabperturb::cli::{run, SubcommandKind};
use stabperturb::geometry::{build_grids, SpectralProfile};
use stabperturb::linalg::{norm, random_vector, seeded_rng, unit, C64, ONE};
use stabperturb::model::{DiagonalModel, EntryRule, OperatorModel};
use stabperturb::oracle::{
    oracle_eigens, oracle_first_passage, oracle_resolvent, oracle_solve, oracle_spectral_radius, DenseTruncation,
};
use stabperturb::perturbation::PerturbedOperator;
use stabperturb::quadrature::QuadratureConfig;
use stabperturb::resolvent::{estimate_alpha, kreiss_check, moment_inequality_probe, region_sup_smoothed, EngineConfig};
use stabperturb::scenario::{builtin, Scenario};
use stabperturb::stability::{delta_threshold_search, integral_criterion, quadrature_poles, Verdict};

type Outcome = (bool, String);

fn s1_p1_bundle() -> ReportBundle {
    run(SubcommandKind::Stability, &builtin("S1-P1").unwrap(), None).expect("stability run")
}

fn report_value(b: &ReportBundle, report: &str, key: &str) -> f64 {
    b.reports
        .iter()
        .find(|r| r.name == report)
        .and_then(|r| r.value(key))
        .unwrap_or(f64::NAN)
}

fn growth_order() -> Outcome {
    let window = [1e-3, 1e-1];
    let s1 = builtin("S1").unwrap().build_model().unwrap();
    let (l, r) = estimate_alpha(&s1, 0.0, window).unwrap();
    let a1 = l.max(r);
    let mut ok = (a1 - 2.0).abs() <= 0.15;
    let mut detail = format!("S1 alpha {a1:.4}");
    let s2 = builtin("S2").unwrap();
    let m2 = s2.build_model().unwrap();
    for &phi in &s2.profile.phis {
        let (l, r) = estimate_alpha(&m2, phi, window).unwrap();
        let a = l.max(r);
        ok &= (a - 1.0).abs() <= 0.15;
        detail += &format!(", S2 alpha at {phi:.4} {a:.4}");
    }
    (ok, detail)
}

fn kreiss() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["S1", "S2"] {
        let s = builtin(name).unwrap();
        let model = s.build_model().unwrap();
        let grid = build_grids(&s.profile, &s.experiment.resolution).unwrap();
        let rep = kreiss_check(&model, &grid, &EngineConfig::default()).unwrap();
        ok &= rep.supremum <= 1.0 + 1e-9;
        detail.push(format!("{name} sup {:.12}", rep.supremum));
    }
    (ok, detail.join(", "))
}

fn smoothed_region() -> Outcome {
    let s = builtin("S1").unwrap();
    let model = s.build_model().unwrap();
    let grid = build_grids(&s.profile, &s.experiment.resolution).unwrap();
    let rep = region_sup_smoothed(&model, &s.profile, 0, &grid, &EngineConfig::default()).unwrap();
    let delta = rep.refinement_delta.unwrap_or(f64::INFINITY);
    let plain = rep.value("plain_sup").unwrap_or(0.0);
    let ok = rep.supremum.is_finite() && delta < 0.10 && plain > 1e6;
    (ok, format!("smoothed sup {:.6}, refinement delta {delta:.3e}, plain sup {plain:.3e}", rep.supremum))
}

fn moment_sharpness() -> Outcome {
    let pairs = [(0.5, 1.0), (1.0, 2.0), (1.3, 2.0)];
    let mut worst: f64 = 0.0;
    for name in ["S1", "S2"] {
        let s = builtin(name).unwrap();
        let model = s.build_model().unwrap();
        let mut rng = seeded_rng(7, 3);
        let samples: Vec<Vec<C64>> = (0..1000).map(|_| random_vector(&mut rng, model.dim())).collect();
        for k in 0..s.profile.phis.len() {
            for &(tt, t) in &pairs {
                worst = worst.max(moment_inequality_probe(&model, k, tt, t, &samples).unwrap());
            }
        }
    }
    (worst <= 1.0 + 1e-10, format!("largest ratio {worst:.12}"))
}

fn smw_correctness() -> Outcome {
    let s = builtin("S1-P1").unwrap();
    let model = s.build_model().unwrap();
    let pert = s.perturbation();
    let dim = 500;
    let op = PerturbedOperator::new(&model, &pert, dim).unwrap();
    let pt = DenseTruncation::with_perturbation(&model, &pert, dim).unwrap();
    let bt = DenseTruncation::from_model(&model, dim).unwrap();
    let mut rng = seeded_rng(11, 5);
    let mut worst: f64 = 0.0;
    let mut worst_rank_ratio: f64 = 0.0;
    for i in 0..100 {
        let u = random_vector(&mut rng, 2);
        let lambda = unit(u[0].re * TAU) * (1.0 + 10f64.powf(-3.0 * u[1].re.abs().min(1.0)));
        let x = random_vector(&mut rng, dim);
        let fast = op.smw_resolvent_apply(lambda, &x).unwrap();
        let exact = oracle_solve(&pt, lambda, &x).unwrap();
        let diff: Vec<C64> = fast.iter().zip(&exact).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&exact));
        if i % 10 == 0 {
            let d = oracle_resolvent(&pt, lambda).unwrap() - oracle_resolvent(&bt, lambda).unwrap();
            let sv = d.singular_values();
            let mut s: Vec<f64> = sv.iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            worst_rank_ratio = worst_rank_ratio.max(s[1] / s[0]);
        }
    }
    let ok = worst <= 1e-8 && worst_rank_ratio <= 1e-10;
    (ok, format!("max relative error {worst:.3e}, max sigma_2/sigma_1 of the difference {worst_rank_ratio:.3e}"))
}

fn closed_form_quadrature(b: &ReportBundle) -> Outcome {
    let model: OperatorModel = DiagonalModel::new(EntryRule::None, vec![C64::new(0.5, 0.0)], 1, vec![0.0])
        .unwrap()
        .into();
    let op = PerturbedOperator::unperturbed(&model, 1).unwrap();
    let profile = SpectralProfile {
        phis: vec![0.0],
        alpha: 1.0,
        eps_a: 0.5,
        m_a: 10.0,
    };
    let s = builtin("S1").unwrap();
    let grid = build_grids(&s.profile, &s.experiment.resolution).unwrap();
    let radii = grid.radial_r();
    let poles = quadrature_poles(&profile, &[C64::new(0.5, 0.0)]);
    let probes = vec![(vec![(0usize, ONE)], Vec::new())];
    let q = integral_criterion(&op, &profile, &probes, &radii, &poles, &QuadratureConfig::default()).unwrap();
    let worst = q
        .rows
        .iter()
        .map(|row| {
            let exact = (row.r - 1.0) * TAU / (row.r * row.r - 0.25);
            (row.weighted - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    let full = b.quadrature.iter().find(|q| q.name == "integral_criterion");
    let delta = full.map_or(f64::INFINITY, |q| q.refinement_delta);
    let ok = worst <= 1e-6 && radii.len() == q.rows.len() && delta <= 0.05;
    (ok, format!("{} radii, max relative error {worst:.3e}, S1-P1 criterion halving change {delta:.3e}", q.rows.len()))
}

fn preservation(b: &ReportBundle) -> Outcome {
    let s = builtin("S1-P1").unwrap();
    let model = s.build_model().unwrap();
    let ex = &s.experiment;
    let c = b.constants["c"];
    let m_d = b.constants["M_D"];
    let near = report_value(b, "perturbed_growth", "near_sup");
    let near_bound = s.profile.m_a + m_d * b.constants["M_k_0"];
    let growth_ok = near <= near_bound && report_value(b, "perturbed_growth", "bound_ratio") <= 1.0;

    let t = DenseTruncation::with_perturbation(&model, &s.perturbation(), ex.trunc_dim).unwrap();
    let rho = oracle_spectral_radius(&oracle_eigens(&t));
    let mut x = vec![C64::new(0.0, 0.0); ex.trunc_dim];
    for &i in &ex.orbit_support {
        x[i - 1] = ONE;
    }
    let oracle_steps = oracle_first_passage(&t, &x, ex.orbit_threshold, ex.orbit_max);
    let steps = b.decay.iter().find(|d| d.name == "orbit").and_then(|d| d.first_passage);

    let ok = b.verdict == Some(Verdict::Preserved)
        && c < 1.0
        && m_d <= 1.0 / (1.0 - c) + 1e-9
        && growth_ok
        && rho < 1.0
        && steps.is_some()
        && steps == oracle_steps;
    (
        ok,
        format!(
            "verdict {:?}, sup|G| {c:.6}, M_D {m_d:.6} vs {:.6}, near growth {near:.4} <= {near_bound:.4}, oracle radius {rho:.9}, first passage {steps:?} vs oracle {oracle_steps:?}",
            b.verdict,
            1.0 / (1.0 - c)
        ),
    )
}

fn violation() -> Outcome {
    let mut s: Scenario = builtin("S1").unwrap();
    s.name = "S1-kick".into();
    s.perturbation = Some(
        serde_json::from_value(serde_json::json!({
            "beta": 0.0,
            "gamma": 0.0,
            "scale_b": 1.5,
            "scale_c": 1.5,
            "b_columns": [{"kind": "basis", "index": 1, "coef": 1.0}],
            "c_columns": [{"kind": "basis", "index": 1, "coef": 1.0}]
        }))
        .unwrap(),
    );
    s.validate().unwrap();
    let b = run(SubcommandKind::Stability, &s, None).unwrap();
    let eig = b
        .witnesses
        .iter()
        .filter(|w| w.source == "truncation_eigenvalue")
        .map(|w| w.modulus)
        .fold(0.0, f64::max);
    let singular = b.witnesses.iter().find(|w| w.source == "singular_transfer");
    let ok = b.verdict == Some(Verdict::Violated) && eig > 1.0 + 1e-8 && singular.is_some();
    (
        ok,
        format!(
            "verdict {:?}, eigenvalue witness modulus {eig:.9}, singular-D witness {:?}",
            b.verdict,
            singular.map(|w| (w.re, w.im))
        ),
    )
}

fn threshold() -> Outcome {
    let s = builtin("S1-P1").unwrap();
    let t = delta_threshold_search(&s, s.experiment.threshold_bracket).unwrap();
    let interior = t.reverified.iter().filter(|p| p.verdict == Verdict::Preserved).count();
    let ok = t.width_ratio <= 1e-3 && t.reverified.len() == 5 && interior == 5;
    (
        ok,
        format!(
            "bracket [{:.6}, {:.6}], width ratio {:.3e}, {interior}/5 re-verified preserved",
            t.s_low, t.s_high, t.width_ratio
        ),
    )
}

fn determinism(first: &ReportBundle) -> Outcome {
    let second = s1_p1_bundle();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let fa = first.emit(&a).unwrap();
    let fb = second.emit(&b).unwrap();
    let mut same = fa.len() == fb.len();
    for (x, y) in fa.iter().zip(&fb) {
        same &= x.file_name() == y.file_name() && std::fs::read(x).unwrap() == std::fs::read(y).unwrap();
    }
    (same, format!("{} files compared byte for byte", fa.len()))
}

fn main() {
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let (ok, detail) = f();
        let tag = if ok { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {n:>2} {tag} {name}: {detail} ({:.1}s)", start.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
        if !ok {
            failed.push(n);
        }
    };
    let bundle = s1_p1_bundle();
    report(1, "growth order", &mut growth_order);
    report(2, "kreiss", &mut kreiss);
    report(3, "smoothed region bound", &mut smoothed_region);
    report(4, "moment inequality", &mut moment_sharpness);
    report(5, "smw correctness", &mut smw_correctness);
    report(6, "closed-form quadrature", &mut || closed_form_quadrature(&bundle));
    report(7, "preservation", &mut || preservation(&bundle));
    report(8, "violation detection", &mut violation);
    report(9, "threshold bisection", &mut threshold);
    report(10, "determinism", &mut || determinism(&bundle));
    if !failed.is_empty() {
        eprintln!("acceptance failures: {failed:?}");
        std::process::exit(1);
    }
}
