use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use stabperturb::geometry::{build_grids, Resolution};
use stabperturb::linalg::{norm, random_vector, seeded_rng, unit, CMatrix, C64};
use stabperturb::model::OperatorModel;
use stabperturb::oracle::{oracle_solve, DenseTruncation};
use stabperturb::perturbation::PerturbedOperator;
use stabperturb::scenario::{builtin, Scenario};

fn small_diagonal(dim: usize) -> OperatorModel {
    builtin("S1").unwrap().build_model().unwrap().truncated(dim).unwrap()
}

fn random_columns(seed: u64, rank: usize, dim: usize, scale: f64) -> Vec<Vec<C64>> {
    let mut rng = seeded_rng(seed, 9);
    (0..rank)
        .map(|_| random_vector(&mut rng, dim).into_iter().map(|z| z * scale).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transfer_inverse_is_exact_when_marked(seed in 0u64..10_000, rank in 1usize..4, phi in 0.0f64..TAU, dr in 1e-3f64..1.0) {
        let dim = 40;
        let model = small_diagonal(dim);
        let op = PerturbedOperator::from_columns(model, random_columns(seed, rank, dim, 0.3), random_columns(seed + 1, rank, dim, 0.3)).unwrap();
        let t = op.transfer_matrix(unit(phi) * (1.0 + dr)).unwrap();
        if let Some(inv) = &t.d_inverse {
            let err = (&t.d * inv - CMatrix::identity(rank, rank)).norm();
            prop_assert!(err <= 1e-10, "residual {err}");
        }
    }

    #[test]
    fn smw_agrees_with_dense_solve(seed in 0u64..10_000, rank in 1usize..3, phi in 0.0f64..TAU, dr in 1e-2f64..1.0) {
        let dim = 40;
        let model = small_diagonal(dim);
        let b = random_columns(seed, rank, dim, 0.05);
        let c = random_columns(seed + 7, rank, dim, 0.05);
        let op = PerturbedOperator::from_columns(model.clone(), b.clone(), c.clone()).unwrap();
        let t = DenseTruncation::from_model(&model, dim).unwrap().with_rank_update(&b, &c).unwrap();
        let lambda = unit(phi) * (1.0 + dr);
        let x = random_vector(&mut seeded_rng(seed, 2), dim);
        let fast = op.smw_resolvent_apply(lambda, &x).unwrap();
        let exact = oracle_solve(&t, lambda, &x).unwrap();
        let diff: Vec<C64> = fast.iter().zip(&exact).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&diff) <= 1e-9 * norm(&exact));
    }

    #[test]
    fn scenario_json_round_trips(scale_b in 0.0f64..5.0, scale_c in 0.0f64..5.0, seed in any::<u64>()) {
        let mut s = builtin("S1-P1").unwrap();
        let p = s.perturbation.as_mut().unwrap();
        p.scale_b = scale_b;
        p.scale_c = scale_c;
        s.experiment.seed = seed;
        let text = s.to_json();
        let back = Scenario::from_json(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn region_membership_matches_the_predicate_on_dense_samples() {
    let profile = builtin("S2").unwrap().profile;
    let mut rng = seeded_rng(3, 1);
    let mut inside = 0;
    for _ in 0..10_000 {
        let u = random_vector(&mut rng, 2);
        let lambda = unit(u[0].re.abs() * PI * 2.0) * (0.9 + 0.6 * u[1].re.abs().min(1.0));
        let mut hits = 0;
        for k in 0..profile.n_points() {
            let region = profile.region(k);
            let d = (lambda - unit(profile.phis[k])).norm();
            let expected = lambda.norm() >= 1.0 && d > 0.0 && d <= region.r_a;
            assert_eq!(region.contains(lambda), expected, "k={k} λ={lambda}");
            hits += expected as usize;
        }
        // Regions around distinct points never overlap.
        assert!(hits <= 1);
        inside += hits;
    }
    assert!(inside > 0);
}

#[test]
fn grids_avoid_unit_points_and_are_reproducible() {
    for name in ["S1", "S2"] {
        let profile = builtin(name).unwrap().profile;
        let res = Resolution::default();
        let g = build_grids(&profile, &res).unwrap();
        let again = build_grids(&profile, &res).unwrap();
        assert_eq!(g.hash(), again.hash());
        let mut pts: Vec<C64> = g.circle_points().iter().map(|c| c.lambda).collect();
        for k in 0..profile.n_points() {
            pts.extend(g.region_points(k));
        }
        pts.extend(g.radial_points());
        for z in pts {
            for &phi in &profile.phis {
                assert!((z - unit(phi)).norm() > 0.0);
            }
        }
    }
}

#[test]
fn dense_truncation_copies_the_diagonal_exactly() {
    let model = builtin("S1").unwrap().build_model().unwrap();
    let d = model.as_diagonal().unwrap();
    let t = DenseTruncation::from_model(&model, 300).unwrap();
    let m = t.matrix();
    for i in 0..300 {
        for j in 0..300 {
            let expect = if i == j { d.head()[i] } else { C64::new(0.0, 0.0) };
            assert_eq!(m[(i, j)], expect);
        }
    }
}
