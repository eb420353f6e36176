mod common;

use common::{binomial, enumerate_vertices, random_trades, vertex_verdict};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tc_duality::cps::{build_polytope, check_cps, sample_polytope, superreplication_excess, CpsVerdict};
use tc_duality::generator::{generate_instance, InstanceGenerator};
use tc_duality::trading::{
    check_admissible, default_admissibility_bound, merge_trades, net_trades, no_trade, roll_forward, terminal_claim, Trade,
};
use tc_duality::tree::MarketSpec;

fn market(seed: u64, feasible: bool) -> MarketSpec {
    let gen = InstanceGenerator { discard_infeasible: feasible, periods: (1, 3), ..InstanceGenerator::with_seed(seed) };
    generate_instance(&gen).unwrap()
}

fn flat(m: &MarketSpec, z: &tc_duality::cps::PriceSystem) -> Vec<f64> {
    let mut v = z.leaf_z0(m);
    v.extend(z.leaf_z1(m));
    v
}

#[test]
fn liquidation_arithmetic() {
    let m = binomial(120.0, 80.0, 0.5, 0.01, (0.0, 0.0));
    let mut trades = vec![Trade::default(); 3];
    trades[0] = Trade::buy(1.0);
    let s = roll_forward(&m, 0.0, &trades).unwrap();
    assert_eq!(s.phi0, vec![-100.0; 3]);
    assert_eq!(s.phi1, vec![1.0; 3]);
    let claim = terminal_claim(&m, &s);
    assert!((claim[0] - 18.8).abs() < 1e-12 && (claim[1] + 20.8).abs() < 1e-12);
    assert_eq!(terminal_claim(&m, &no_trade(&m, 5.0)), vec![5.0, 5.0]);
    assert!(check_admissible(&m, &s, default_admissibility_bound(&m, 0.0)).admissible);
    assert!(roll_forward(&m, 0.0, &[Trade { buy: -1.0, sell: 0.0 }; 3]).is_err());
}

#[test]
fn cps_verdicts_match_vertex_enumeration() {
    let cases = [
        (binomial(120.0, 80.0, 0.5, 0.01, (0.0, 0.0)), true),
        (binomial(200.0, 150.0, 0.5, 0.1, (0.0, 0.0)), false),
        (binomial(105.0, 95.0, 0.5, 0.2, (0.0, 0.0)), true),
        (binomial(120.0, 110.0, 0.5, 0.01, (0.0, 0.0)), false),
    ];
    for (m, expected) in cases {
        let verdict = check_cps(&m, m.lambda()).unwrap();
        let oracle = vertex_verdict(&m, &enumerate_vertices(&m));
        assert_eq!(oracle, expected);
        assert_eq!(verdict.exists(), expected);
        if let CpsVerdict::NotExist { certificate: Some(cert), .. } = verdict {
            assert!(cert.claim.iter().all(|&c| c >= -1e-9));
            assert!(cert.claim.iter().any(|&c| c > 1e-6));
        }
    }
}

#[test]
fn frictionless_binomial_densities() {
    for (su, sd, p) in [(120.0, 80.0, 0.5), (130.0, 90.0, 0.3), (101.0, 60.0, 0.8)] {
        let m = binomial(su, sd, p, 0.0, (0.0, 0.0));
        let q = (100.0 - sd) / (su - sd);
        for z in sample_polytope(&m, 20, 3).unwrap() {
            let leaf = z.leaf_z0(&m);
            assert!((leaf[0] - q / p).abs() < 1e-7, "{leaf:?} vs q = {q}");
            assert!((leaf[1] - (1.0 - q) / (1.0 - p)).abs() < 1e-7);
        }
    }
    let m = binomial(120.0, 80.0, 0.5, 0.0, (0.0, 0.0));
    assert!(sample_polytope(&m, 0, 1).unwrap().is_empty());
}

#[test]
fn polarity_over_random_strategies() {
    for seed in 0..4 {
        let m = market(300 + seed, true);
        let samples = sample_polytope(&m, 100, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..250 {
            let s = roll_forward(&m, 0.0, &random_trades(&m, &mut rng, 3.0)).unwrap();
            for z in &samples {
                assert!(superreplication_excess(&m, z, &s) <= 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn witness_is_a_strictly_positive_price_system(seed in 0u64..100_000) {
        let m = market(seed, false);
        if let CpsVerdict::Exists { witness, slack } = check_cps(&m, m.lambda()).unwrap() {
            prop_assert!(witness.max_violation(&m) <= 1e-8);
            let leaf = witness.leaf_z0(&m);
            prop_assert!(leaf.iter().all(|&z| z >= slack - 1e-9 && z > 0.0));
        }
    }

    #[test]
    fn samples_are_price_systems_and_nest_in_lambda(seed in 0u64..100_000) {
        let m = market(seed, true);
        let wider = build_polytope(&m.with_lambda((m.lambda() * 1.5).min(0.5)).unwrap());
        for z in sample_polytope(&m, 10, seed).unwrap() {
            prop_assert!(z.max_violation(&m) <= 1e-7);
            prop_assert!(wider.contains(&flat(&m, &z), 1e-7));
        }
    }

    #[test]
    fn claims_shrink_as_lambda_grows(seed in 0u64..100_000, bump in 0.0f64..0.3) {
        let m = market(seed, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trades = random_trades(&m, &mut rng, 2.0);
        let lo = terminal_claim(&m, &roll_forward(&m, 1.0, &trades).unwrap());
        let dear = m.with_lambda((m.lambda() + bump).min(0.9)).unwrap();
        let hi = terminal_claim(&dear, &roll_forward(&dear, 1.0, &trades).unwrap());
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(b <= &(a + 1e-12 * (1.0 + a.abs())));
        }
    }

    #[test]
    fn concatenation_and_netting(seed in 0u64..100_000, x in -10.0f64..10.0) {
        let m = market(seed, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let a = random_trades(&m, &mut rng, 2.0);
        let b = random_trades(&m, &mut rng, 2.0);
        let merged = merge_trades(&a, &b);
        let whole = roll_forward(&m, x, &merged).unwrap();
        let first = roll_forward(&m, x, &a).unwrap();
        let second = roll_forward(&m, 0.0, &b).unwrap();
        for v in 0..m.tree().len() {
            let tol = 1e-9 * (1.0 + whole.phi0[v].abs());
            prop_assert!((whole.phi0[v] - first.phi0[v] - second.phi0[v]).abs() <= tol);
            prop_assert!((whole.phi1[v] - first.phi1[v] - second.phi1[v]).abs() <= 1e-12);
        }
        let netted = roll_forward(&m, x, &net_trades(&merged)).unwrap();
        for v in 0..m.tree().len() {
            prop_assert!(netted.phi0[v] >= whole.phi0[v] - 1e-9 * (1.0 + whole.phi0[v].abs()));
            prop_assert!((netted.phi1[v] - whole.phi1[v]).abs() <= 1e-9);
        }
        prop_assert!(netted.simultaneous_legs().is_empty());
    }
}

#[test]
fn generated_markets_admit_price_systems() {
    let gen = InstanceGenerator { lambda: (0.001, 0.2), ..InstanceGenerator::with_seed(9000) };
    let batch = tc_duality::generator::generate_batch(&gen, 100).unwrap();
    for m in &batch {
        assert!(m.lambda() >= 0.001 && m.lambda() <= 0.2);
        assert!(check_cps(m, m.lambda()).unwrap().exists());
    }
    assert_eq!(batch, tc_duality::generator::generate_batch(&gen, 100).unwrap());
}
