//! Consistent price systems as an explicit polytope.
//!
//! A price system is a pair of martingales `(Z⁰, Z¹)` with
//! `(1-λ)S·Z⁰ ≤ Z¹ ≤ S·Z⁰` at every node and `E[Z⁰_T] = 1`. On a finite
//! tree both martingales are determined by their leaf values, so the
//! polytope lives in `2L` variables (`Z⁰` leaves first, then `Z¹` leaves)
//! and interior values are conditional expectations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{solve_lp, Constraint, EngineError, SolverOptions, Status};
use crate::error::{Error, Result};
use crate::trading::{roll_forward, terminal_claim, Strategy, Trade};
use crate::tree::MarketSpec;

/// Node-indexed pair `(Z⁰, Z¹)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSystem {
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub strictly_positive: bool,
}

impl PriceSystem {
    /// Extends leaf values to all nodes by conditional expectation.
    pub fn from_leaves(market: &MarketSpec, z0_leaf: &[f64], z1_leaf: &[f64]) -> Self {
        let tree = market.tree();
        let z0 = tree.conditional_expectations(z0_leaf);
        let z1 = tree.conditional_expectations(z1_leaf);
        let strictly_positive = z0.iter().chain(&z1).all(|&v| v > 0.0);
        Self { z0, z1, strictly_positive }
    }

    /// Splits a `2L` polytope vector.
    pub fn from_vector(market: &MarketSpec, z: &[f64]) -> Self {
        let l = market.tree().num_leaves();
        Self::from_leaves(market, &z[..l], &z[l..2 * l])
    }

    pub fn leaf_z0(&self, market: &MarketSpec) -> Vec<f64> {
        market.tree().leaves().iter().map(|&l| self.z0[l]).collect()
    }

    pub fn leaf_z1(&self, market: &MarketSpec) -> Vec<f64> {
        market.tree().leaves().iter().map(|&l| self.z1[l]).collect()
    }

    /// `Z¹/Z⁰` where `Z⁰ > 0`.
    pub fn stilde(&self, node: usize) -> Option<f64> {
        (self.z0[node] > 0.0).then(|| self.z1[node] / self.z0[node])
    }

    /// Largest violation of the defining constraints, scaled by node price
    /// where a price multiplies.
    pub fn max_violation(&self, market: &MarketSpec) -> f64 {
        let tree = market.tree();
        let mut worst = (self.z0[tree.root()] - 1.0).abs();
        for v in 0..tree.len() {
            worst = worst.max(-self.z0[v]).max(-self.z1[v]);
            let s = market.ask(v);
            worst = worst.max((market.bid(v) * self.z0[v] - self.z1[v]) / s);
            worst = worst.max((self.z1[v] - s * self.z0[v]) / s);
            let ch = &tree.node(v).children;
            if !ch.is_empty() {
                let m0: f64 = ch.iter().map(|&c| tree.node(c).cond_prob * self.z0[c]).sum();
                let m1: f64 = ch.iter().map(|&c| tree.node(c).cond_prob * self.z1[c]).sum();
                worst = worst.max((m0 - self.z0[v]).abs()).max((m1 - self.z1[v]).abs() / s);
            }
        }
        worst
    }
}

/// Constraint system over `(Z⁰ leaves, Z¹ leaves)`.
#[derive(Debug, Clone, Serialize)]
pub struct DualPolytope {
    pub num_leaves: usize,
    pub lambda: f64,
    pub equalities: Vec<Constraint>,
    /// Cone rows (ask side then bid side per node, in node order) followed by
    /// nonnegativity of every variable. At `λ = 0` the cone rows are
    /// equalities instead.
    pub inequalities: Vec<Constraint>,
    /// Number of leading cone rows in `inequalities`.
    pub cone_rows: usize,
}

impl DualPolytope {
    pub fn dim(&self) -> usize {
        2 * self.num_leaves
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        self.equalities.iter().all(|c| c.slack(z).abs() <= tol * (1.0 + c.rhs.abs()))
            && self.inequalities.iter().all(|c| c.slack(z) >= -tol)
    }
}

/// Ask-side row `S_n Z⁰_n - Z¹_n` and bid-side row `Z¹_n - (1-λ)S_n Z⁰_n` at
/// `node`, both homogeneous. Interior values expand into leaves below.
pub(crate) fn cone_rows_at(market: &MarketSpec, node: usize) -> (Constraint, Constraint) {
    let tree = market.tree();
    let l = tree.num_leaves();
    let meas = market.measure();
    let pn = meas.node_prob[node];
    let mut ask = Vec::new();
    let mut bid = Vec::new();
    for &k in tree.leaves_below(node) {
        let w = meas.leaf_prob[k] / pn;
        ask.push((k, w * market.ask(node)));
        ask.push((l + k, -w));
        bid.push((l + k, w));
        bid.push((k, -w * market.bid(node)));
    }
    (Constraint::new(ask, 0.0), Constraint::new(bid, 0.0))
}

pub(crate) fn normalization_row(market: &MarketSpec) -> Constraint {
    Constraint::new(market.measure().leaf_prob.iter().copied().enumerate(), 1.0)
}

pub fn build_polytope(market: &MarketSpec) -> DualPolytope {
    let tree = market.tree();
    let l = tree.num_leaves();
    let mut equalities = vec![normalization_row(market)];
    let mut inequalities = Vec::new();
    for v in 0..tree.len() {
        let (ask, bid) = cone_rows_at(market, v);
        if market.lambda() == 0.0 {
            equalities.push(ask);
        } else {
            inequalities.push(ask);
            inequalities.push(bid);
        }
    }
    let cone_rows = inequalities.len();
    for j in 0..2 * l {
        inequalities.push(Constraint::new([(j, 1.0)], 0.0));
    }
    DualPolytope { num_leaves: l, lambda: market.lambda(), equalities, inequalities, cone_rows }
}

/// A trading strategy whose terminal claim is nonnegative and not zero.
#[derive(Debug, Clone, Serialize)]
pub struct ArbitrageCertificate {
    /// Node-indexed trades, leaves included.
    pub trades: Vec<Trade>,
    /// Leaf-indexed terminal liquidation value from zero initial wealth,
    /// scaled so its largest entry is one.
    pub claim: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CpsVerdict {
    Exists { witness: PriceSystem, slack: f64 },
    NotExist { slack: f64, certificate: Option<ArbitrageCertificate> },
}

impl CpsVerdict {
    pub fn exists(&self) -> bool {
        matches!(self, CpsVerdict::Exists { .. })
    }

    /// Optimal max-min slack `δ*` (`-∞` when even the closed polytope is empty).
    pub fn slack(&self) -> f64 {
        match self {
            CpsVerdict::Exists { slack, .. } | CpsVerdict::NotExist { slack, .. } => *slack,
        }
    }
}

pub const CPS_SLACK_THRESHOLD: f64 = 1e-9;

/// Decides whether a price system with `Z⁰_T > 0` exists at spread `mu`, by
/// maximizing `δ` subject to `Z⁰_leaf ≥ δ`, the closed cone at every node
/// and `-1 ≤ δ ≤ 1`.
pub fn check_cps(market: &MarketSpec, mu: f64) -> Result<CpsVerdict> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::Domain(format!("spread must lie in [0, 1), got {mu}")));
    }
    let m = market.with_lambda(mu)?;
    let poly = build_polytope(&m);
    let l = poly.num_leaves;
    let delta = 2 * l;
    let mut rows: Vec<Constraint> = poly.inequalities[..poly.cone_rows].to_vec();
    for k in 0..l {
        rows.push(Constraint::new([(k, 1.0), (delta, -1.0)], 0.0));
    }
    for k in 0..l {
        rows.push(Constraint::new([(l + k, 1.0)], 0.0));
    }
    rows.push(Constraint::new([(delta, -1.0)], -1.0));
    // |δ| ≤ 1 keeps the auxiliary feasibility problem well scaled
    rows.push(Constraint::new([(delta, 1.0)], -1.0));
    let mut c = vec![0.0; 2 * l + 1];
    c[delta] = -1.0;
    let out = solve_lp(&c, poly.equalities.clone(), rows, None, &SolverOptions::default())?;
    let cone_rows = poly.cone_rows;
    match out.status {
        Status::Optimal | Status::ReducedAccuracy => {
            let slack = out.x[delta];
            if slack > CPS_SLACK_THRESHOLD {
                let mut z = out.x[..2 * l].to_vec();
                // the barrier solution is interior; clip rounding below zero
                z.iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(CpsVerdict::Exists { witness: PriceSystem::from_vector(&m, &z), slack })
            } else {
                let cert = certificate_from_weights(&m, &out.ineq_duals[..cone_rows], &out.eq_duals)?;
                Ok(CpsVerdict::NotExist { slack, certificate: cert })
            }
        }
        Status::Infeasible => {
            let weights = if out.certificate.len() >= cone_rows { &out.certificate[..cone_rows] } else { &[][..] };
            let cert = certificate_from_weights(&m, weights, &[])?;
            Ok(CpsVerdict::NotExist { slack: f64::NEG_INFINITY, certificate: cert })
        }
        s => Err(Error::Engine(EngineError::NumericalFailure(format!("CPS LP ended with status {s:?}")))),
    }
}

/// Maps multipliers of the cone rows to trades: `buy_n = w_ask/P(n)`,
/// `sell_n = w_bid/P(n)`. At λ = 0 the cone rows are equalities whose
/// multipliers carry a sign; they map to a net position change.
fn certificate_from_weights(
    market: &MarketSpec,
    ineq_weights: &[f64],
    eq_weights: &[f64],
) -> Result<Option<ArbitrageCertificate>> {
    let tree = market.tree();
    let probs = &market.measure().node_prob;
    let mut trades = vec![Trade::default(); tree.len()];
    if market.lambda() > 0.0 {
        if ineq_weights.len() != 2 * tree.len() {
            return Ok(None);
        }
        for v in 0..tree.len() {
            trades[v] = Trade { buy: ineq_weights[2 * v] / probs[v], sell: ineq_weights[2 * v + 1] / probs[v] };
        }
    } else {
        if eq_weights.len() != tree.len() + 1 {
            return Ok(None);
        }
        // equality multipliers enter with the opposite sign convention
        for v in 0..tree.len() {
            trades[v] = Trade::to_reach(-eq_weights[1 + v] / probs[v]);
        }
    }
    let strategy = roll_forward(market, 0.0, &trades)?;
    let claim = terminal_claim(market, &strategy);
    let top = claim.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Ok(None);
    }
    let scale = 1.0 / top;
    let trades = trades.iter().map(|t| Trade { buy: t.buy * scale, sell: t.sell * scale }).collect();
    Ok(Some(ArbitrageCertificate { trades, claim: claim.iter().map(|c| c * scale).collect() }))
}

/// [`check_cps`] over a grid of spreads.
pub fn check_cps_grid(market: &MarketSpec, mus: &[f64]) -> Result<Vec<(f64, bool, f64)>> {
    mus.iter()
        .map(|&mu| check_cps(market, mu).map(|v| (mu, v.exists(), v.slack())))
        .collect()
}

/// Fails with [`Error::NoConsistentPrice`] unless a strictly positive
/// price system exists at the market's own λ.
pub fn require_cps(market: &MarketSpec) -> Result<PriceSystem> {
    match check_cps(market, market.lambda())? {
        CpsVerdict::Exists { witness, .. } => Ok(witness),
        CpsVerdict::NotExist { slack, .. } => Err(Error::NoConsistentPrice { lambda: market.lambda(), slack }),
    }
}

/// Optimizes `c·z` over the polytope; `maximize` flips the sense.
pub fn optimize_linear(poly: &DualPolytope, c: &[f64], maximize: bool) -> Result<(f64, Vec<f64>)> {
    let cost: Vec<f64> = if maximize { c.iter().map(|v| -v).collect() } else { c.to_vec() };
    let out = solve_lp(&cost, poly.equalities.clone(), poly.inequalities.clone(), None, &SolverOptions::default())?;
    match out.status {
        Status::Optimal | Status::ReducedAccuracy => {
            let val = if maximize { -out.objective } else { out.objective };
            Ok((val, out.x))
        }
        Status::Infeasible => Err(Error::NoConsistentPrice { lambda: poly.lambda, slack: f64::NEG_INFINITY }),
        s => Err(Error::Engine(EngineError::NumericalFailure(format!("polytope LP ended with status {s:?}")))),
    }
}

/// `inf` and `sup` of `E[Z⁰_T f]` over the polytope, for a leaf-indexed `f`.
pub fn expectation_bounds(market: &MarketSpec, f: &[f64]) -> Result<(f64, f64)> {
    let poly = build_polytope(market);
    let l = poly.num_leaves;
    let mut c = vec![0.0; 2 * l];
    for k in 0..l {
        c[k] = market.measure().leaf_prob[k] * f[k];
    }
    let (lo, _) = optimize_linear(&poly, &c, false)?;
    let (hi, _) = optimize_linear(&poly, &c, true)?;
    Ok((lo, hi))
}

/// Random points of the polytope: convex combinations of LP optima for
/// random objective directions. Deterministic in `seed`.
pub fn sample_polytope(market: &MarketSpec, count: usize, seed: u64) -> Result<Vec<PriceSystem>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let poly = build_polytope(market);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = poly.dim();
    let anchors = (n + 2).min(12);
    let mut extremes = Vec::with_capacity(anchors);
    for _ in 0..anchors {
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, z) = optimize_linear(&poly, &c, false)?;
        extremes.push(z);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut w: Vec<f64> = (0..anchors).map(|_| -rng.random_range(f64::EPSILON..1.0f64).ln()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let mut z = vec![0.0; n];
        for (e, wi) in extremes.iter().zip(&w) {
            for (zj, ej) in z.iter_mut().zip(e) {
                *zj += wi * ej;
            }
        }
        out.push(PriceSystem::from_vector(market, &z));
    }
    Ok(out)
}

/// Another `Z¹` compatible with the given `Z⁰` leaves: an LP optimum over
/// the cone with `Z⁰` fixed, for a random direction. `None` when the
/// compatible set has no interior (the `Z¹` is then unique up to rounding).
pub fn alternative_z1(market: &MarketSpec, z0_leaf: &[f64], seed: u64) -> Result<Option<Vec<f64>>> {
    let tree = market.tree();
    let l = tree.num_leaves();
    let mut rows = Vec::new();
    for v in 0..tree.len() {
        let (ask, bid) = cone_rows_at(market, v);
        for row in [ask, bid] {
            // move the fixed Z⁰ part to the right-hand side
            let mut terms = Vec::new();
            let mut rhs = 0.0;
            for (&j, &a) in row.idx.iter().zip(&row.val) {
                if j < l {
                    rhs -= a * z0_leaf[j];
                } else {
                    terms.push((j - l, a));
                }
            }
            rows.push(Constraint::new(terms, rhs));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = match solve_lp(&c, vec![], rows, None, &SolverOptions::default()) {
        Ok(out) => out,
        Err(EngineError::NumericalFailure(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    Ok(out.status.solved().then_some(out.x))
}

/// `E[Z⁰_T·claim] ≤ x` for the strategy's claim; returns the excess.
pub fn superreplication_excess(market: &MarketSpec, z: &PriceSystem, strategy: &Strategy) -> f64 {
    let claim = terminal_claim(market, strategy);
    let lz = z.leaf_z0(market);
    let e: Vec<f64> = claim.iter().zip(&lz).map(|(c, z)| c * z).collect();
    market.tree().expectation(&e) - strategy.x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(su: f64, sd: f64, lambda: f64) -> MarketSpec {
        MarketSpec::one_period(100.0, &[(0.5, su), (0.5, sd)], lambda).unwrap()
    }

    #[test]
    fn martingale_binomial_has_cps() {
        for lambda in [0.01, 0.3, 0.9] {
            let v = check_cps(&binomial(120.0, 80.0, 0.0), lambda).unwrap();
            assert!(v.exists(), "lambda {lambda}");
            if let CpsVerdict::Exists { witness, .. } = v {
                assert!(witness.strictly_positive);
                assert!(witness.max_violation(&binomial(120.0, 80.0, lambda)) < 1e-9);
            }
        }
    }

    #[test]
    fn dominated_binomial_is_arbitrage() {
        let m = binomial(200.0, 150.0, 0.1);
        match check_cps(&m, 0.1).unwrap() {
            CpsVerdict::NotExist { certificate: Some(cert), .. } => {
                assert!(cert.claim.iter().all(|&c| c >= -1e-6), "{:?}", cert.claim);
                assert!(cert.claim.iter().any(|&c| c > 0.5));
                let s = roll_forward(&m, 0.0, &cert.trades).unwrap();
                let claim = terminal_claim(&m, &s);
                assert!(claim.iter().all(|&c| c >= -1e-6));
            }
            other => panic!("expected arbitrage, got {other:?}"),
        }
    }

    #[test]
    fn narrow_binomial_with_wide_spread() {
        assert!(check_cps(&binomial(105.0, 95.0, 0.0), 0.2).unwrap().exists());
    }

    #[test]
    fn polytope_counts() {
        let p = build_polytope(&binomial(120.0, 80.0, 0.01));
        assert_eq!(p.equalities.len(), 1);
        assert_eq!(p.cone_rows, 6);
        assert_eq!(p.inequalities.len(), 6 + 4);
        let p0 = build_polytope(&binomial(120.0, 80.0, 0.0));
        assert_eq!(p0.equalities.len(), 4);
    }

    #[test]
    fn frictionless_samples_are_risk_neutral() {
        let m = binomial(120.0, 80.0, 0.0);
        let samples = sample_polytope(&m, 5, 3).unwrap();
        for s in samples {
            let z = s.leaf_z0(&m);
            assert!((z[0] - 1.0).abs() < 1e-7 && (z[1] - 1.0).abs() < 1e-7, "{z:?}");
        }
        assert!(sample_polytope(&m, 0, 3).unwrap().is_empty());
    }

    #[test]
    fn samples_satisfy_constraints() {
        let m = binomial(130.0, 90.0, 0.05);
        let poly = build_polytope(&m);
        for s in sample_polytope(&m, 20, 9).unwrap() {
            let mut z = s.leaf_z0(&m);
            z.extend(s.leaf_z1(&m));
            assert!(poly.contains(&z, 1e-10));
            assert!(s.max_violation(&m) < 1e-10);
        }
    }

    #[test]
    fn single_branch_chain() {
        let tree = crate::tree::EventTree::uniform(2, &[1.0]).unwrap();
        let ok = MarketSpec::new(tree.clone(), vec![100.0, 95.0, 105.0], 0.1, vec![0.0]).unwrap();
        assert!(check_cps(&ok, 0.1).unwrap().exists());
        let bad = MarketSpec::new(tree, vec![100.0, 80.0, 120.0], 0.1, vec![0.0]).unwrap();
        assert!(!check_cps(&bad, 0.1).unwrap().exists());
    }
}
