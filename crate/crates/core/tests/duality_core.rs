mod common;

use common::{binomial, enumerate_vertices, grid_instance, random_trades, u_grid_one_period, v_grid_binomial, vertex_sup};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tc_duality::duality::{
    compute_x0, minimize_v_plus_xy, solve_dual, solve_joint, solve_primal, solve_report, PrimalProblem, SolveConfig,
};
use tc_duality::engine::SolverOptions;
use tc_duality::generator::{generate_instance, InstanceGenerator};
use tc_duality::trading::{roll_forward, terminal_claim};
use tc_duality::tree::MarketSpec;
use tc_duality::utility::UtilitySpec;
use tc_duality::Error;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn exp(gamma: f64) -> UtilitySpec {
    UtilitySpec::exponential(gamma).unwrap()
}

fn market(seed: u64) -> MarketSpec {
    let gen = InstanceGenerator { periods: (1, 2), ..InstanceGenerator::with_seed(seed) };
    generate_instance(&gen).unwrap()
}

fn u_of(m: &MarketSpec, u: UtilitySpec, x: f64) -> f64 {
    solve_primal(&PrimalProblem::new(m, u, x), &opts()).unwrap().u
}

#[test]
fn martingale_binomial_is_trivial() {
    let m = binomial(120.0, 80.0, 0.5, 0.01, (0.0, 0.0));
    let p = solve_primal(&PrimalProblem::new(&m, exp(1.0), 0.0), &opts()).unwrap();
    assert!((p.u + 1.0).abs() < 1e-9);
    assert!(p.strategy.trades.iter().all(|t| t.buy.abs() < 1e-6 && t.sell.abs() < 1e-6));
    let d = solve_dual(&m, &exp(1.0), 1.0, &opts()).unwrap();
    assert!((d.v + 1.0).abs() < 1e-9);
    assert!(d.price_system.leaf_z0(&m).iter().all(|z| (z - 1.0).abs() < 1e-6));
    let search = minimize_v_plus_xy(&m, &exp(1.0), 0.0, &opts()).unwrap();
    assert!((search.y_hat - 1.0).abs() < 1e-8);
    let tight = SolveConfig { options: SolverOptions::default().with_tol(1e-11), ..SolveConfig::default() };
    let report = solve_report(&m, &exp(1.0), 0.0, &tight).unwrap();
    let id = report.identities.unwrap();
    assert!(id.gap <= 1e-9);
    let worst = id.leaves.iter().map(|l| l.marginal).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst:e}");
    assert!(id.marginal_utility <= 1e-6 && id.wealth_weighted_marginal <= 1e-6);
}

#[test]
fn constant_endowment_shifts_values() {
    let m = binomial(120.0, 80.0, 0.5, 0.01, (0.0, 0.0));
    let c = 2.5;
    let shifted = m.with_endowment(vec![c, c]).unwrap();
    let u = exp(1.0);
    for x in [-1.0, 0.0, 1.5] {
        assert!((u_of(&shifted, u, x) - u.u(x + c)).abs() < 1e-9);
    }
    for y in [0.3, 1.0, 4.0] {
        let plain = solve_dual(&m, &u, y, &opts()).unwrap().v;
        let endowed = solve_dual(&shifted, &u, y, &opts()).unwrap().v;
        assert!((endowed - plain - y * c).abs() < 1e-9 * (1.0 + plain.abs()));
    }
    assert_eq!(compute_x0(&shifted).unwrap(), -c);
    assert_eq!(compute_x0(&m).unwrap(), 0.0);
}

#[test]
fn grid_instance_matches_brute_force() {
    let m = grid_instance();
    let u = exp(0.01);
    let (oracle, _) = u_grid_one_period(&m, &u, 0.0, 5.0);
    let solved = u_of(&m, u, 0.0);
    assert!((solved - oracle).abs() <= 1e-6, "u {solved} vs grid {oracle}");
    let v = solve_dual(&m, &u, 1.0, &opts()).unwrap().v;
    let v_oracle = v_grid_binomial(&m, &u, 1.0);
    assert!((v - v_oracle).abs() <= 1e-5, "v {v} vs grid {v_oracle}");
    let report = solve_report(&m, &u, 0.0, &SolveConfig::default()).unwrap();
    let id = report.identities.unwrap();
    assert!(id.gap <= 1e-6 && id.leaves.iter().all(|l| l.marginal <= 1e-6));
}

#[test]
fn x0_matches_vertex_enumeration() {
    for (su, sd) in [(120.0, 80.0), (130.0, 90.0)] {
        let m = binomial(su, sd, 0.5, 0.01, (10.0, -10.0));
        let neg: Vec<f64> = m.endowment().iter().map(|v| -v).collect();
        let oracle = vertex_sup(&m, &enumerate_vertices(&m), &neg);
        assert!((compute_x0(&m).unwrap() - oracle).abs() < 1e-7, "{su}/{sd}");
    }
}

#[test]
fn below_threshold_is_rejected() {
    let m = binomial(120.0, 80.0, 0.5, 0.01, (10.0, -10.0));
    let x0 = compute_x0(&m).unwrap();
    let log = UtilitySpec::log();
    let err = solve_report(&m, &log, x0 - 1e-3, &SolveConfig::default()).unwrap_err();
    assert!(matches!(err, Error::BelowThreshold { .. }));
    assert!(solve_primal(&PrimalProblem::new(&m, log, x0 - 1e-3), &opts()).is_err());
    assert!(solve_report(&m, &log, x0 + 1.0, &SolveConfig::default()).is_ok());
}

#[test]
fn log_utility_identity_on_support() {
    let m = binomial(130.0, 90.0, 0.5, 0.02, (3.0, -2.0));
    let log = UtilitySpec::log();
    let x = compute_x0(&m).unwrap() + 5.0;
    let report = solve_report(&m, &log, x, &SolveConfig::default()).unwrap();
    assert!(report.relative_gap <= 1e-6);
    // rebuild the claim from the dual optimizer and compare
    for (k, &leaf) in m.tree().leaves().iter().enumerate() {
        let z = report.dual.z0[leaf];
        if z > 1e-12 {
            let g = log.i(report.y_hat * z) - x - m.endowment()[k];
            let solved = report.claim[k];
            assert!((g - solved).abs() <= 1e-5 * (1.0 + g.abs()), "leaf {k}: {g} vs {solved}");
        }
    }
}

#[test]
fn joint_and_nested_dual_agree() {
    for seed in 0..6 {
        let m = market(40 + seed);
        let u = exp(0.5);
        let x = 1.0;
        let joint = solve_joint(&m, &u, x, &opts()).unwrap();
        let nested = minimize_v_plus_xy(&m, &u, x, &opts()).unwrap();
        let value = nested.value;
        assert!((joint.value - value).abs() <= 1e-8 * (1.0 + value.abs()), "seed {seed}: {} vs {}", joint.value, value);
    }
}

#[test]
fn exponential_y_scales_with_wealth() {
    let m = binomial(130.0, 90.0, 0.5, 0.01, (5.0, -5.0));
    let gamma = 0.3;
    let u = exp(gamma);
    let base = minimize_v_plus_xy(&m, &u, 0.0, &opts()).unwrap().y_hat;
    for w in [0.5, 2.0, -1.0] {
        let moved = minimize_v_plus_xy(&m, &u, w, &opts()).unwrap().y_hat;
        let expected = (-gamma * w).exp() * base;
        assert!((moved - expected).abs() <= 1e-8 * (1.0 + expected), "w {w}: {moved} vs {expected}");
    }
}

#[test]
fn value_functions_have_the_right_curvature() {
    let m = market(77);
    let u = exp(0.2);
    let xs: Vec<f64> = (0..20).map(|i| -5.0 + 0.5 * i as f64).collect();
    let us: Vec<f64> = xs.iter().map(|&x| u_of(&m, u, x)).collect();
    for w in us.windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
    for w in us.windows(3) {
        assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-8);
    }
    let ys: Vec<f64> = (0..20).map(|i| 0.2 + 0.25 * i as f64).collect();
    let vs: Vec<f64> = ys.iter().map(|&y| solve_dual(&m, &u, y, &opts()).unwrap().v).collect();
    for w in vs.windows(3) {
        assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8);
    }
}

#[test]
fn u_is_nonincreasing_in_lambda() {
    for seed in 0..5 {
        let m = market(500 + seed);
        let u = exp(1.0);
        let mut last = f64::NEG_INFINITY;
        for factor in [3.0, 2.0, 1.5, 1.0] {
            let val = u_of(&m.with_lambda(m.lambda() * factor).unwrap(), u, 0.5);
            assert!(val >= last - 1e-9 * (1.0 + last.abs()), "seed {seed} factor {factor}");
            last = val;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_duality_for_sampled_claims(seed in 0u64..10_000, ly in -2.0f64..2.0, x in -3.0f64..3.0) {
        let m = market(seed);
        let u = exp(0.5);
        let y = ly.exp();
        let v = solve_dual(&m, &u, y, &opts()).unwrap().v;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &m.measure().leaf_prob;
        for _ in 0..50 {
            let s = roll_forward(&m, x, &random_trades(&m, &mut rng, 1.0)).unwrap();
            let claim = terminal_claim(&m, &s);
            let eu: f64 = claim.iter().zip(m.endowment()).zip(p).map(|((g, e), pk)| pk * u.u(g + e)).sum();
            prop_assert!(eu <= v + x * y + 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn u_is_nondecreasing_in_x(seed in 0u64..10_000, x in -3.0f64..3.0, dx in 0.0f64..2.0) {
        let m = market(seed);
        let u = exp(1.0);
        prop_assert!(u_of(&m, u, x + dx) >= u_of(&m, u, x) - 1e-10);
    }

    #[test]
    fn endowment_shift_moves_v_linearly(seed in 0u64..10_000, ly in -2.0f64..2.0, c in -5.0f64..5.0) {
        let m = market(seed);
        let u = exp(0.7);
        let y = ly.exp();
        let shifted = m.with_endowment(m.endowment().iter().map(|e| e + c).collect()).unwrap();
        let a = solve_dual(&m, &u, y, &opts()).unwrap().v;
        let b = solve_dual(&shifted, &u, y, &opts()).unwrap().v;
        prop_assert!((b - a - y * c).abs() <= 1e-8 * (1.0 + a.abs() + (y * c).abs()));
    }
}
