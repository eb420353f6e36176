//! Shadow prices and the frictionless market they define.
//!
//! `Ŝ = Ẑ¹/Ẑ⁰` from a dual optimizer lies in the bid-ask spread. Trading
//! `Ŝ` without costs is at least as good as trading `S` with costs, and at
//! a dual optimizer it is exactly as good.

use std::io::Write;

use serde::Serialize;

use crate::cps::PriceSystem;
use crate::duality::SolveReport;
use crate::engine::{solve, Constraint, ConvexProgram, SolveDiagnostics, SolverOptions};
use crate::error::{Error, Result};
use crate::objectives::{DualObjective, ExpectedUtility};
use crate::tree::MarketSpec;
use crate::utility::UtilitySpec;

/// Positivity margin imposed on wealth for utilities on `(0, ∞)`.
pub const WEALTH_MARGIN: f64 = 1e-10;
/// Relative tolerance for `Ŝ` attaining the bid or the ask.
pub const CLASS_TOL: f64 = 1e-7;
/// Trades larger than this must happen at the matching side of the spread.
pub const DIRECTION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceClass {
    AtAsk,
    AtBid,
    Interior,
    Undefined,
}

impl PriceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PriceClass::AtAsk => "at_ask",
            PriceClass::AtBid => "at_bid",
            PriceClass::Interior => "interior",
            PriceClass::Undefined => "undefined",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowPrice {
    /// Node-indexed; equals the ask where undefined.
    pub shat: Vec<f64>,
    pub class: Vec<PriceClass>,
    pub at_ask: Vec<bool>,
    pub at_bid: Vec<bool>,
}

impl ShadowPrice {
    pub fn undefined_nodes(&self) -> Vec<usize> {
        (0..self.class.len()).filter(|&v| self.class[v] == PriceClass::Undefined).collect()
    }

    pub fn is_fully_defined(&self) -> bool {
        !self.class.contains(&PriceClass::Undefined)
    }
}

/// `Ŝ = Z¹/Z⁰` where `Z⁰ > 1e-12`, clipped into the spread.
pub fn construct_shadow(market: &MarketSpec, dual: &PriceSystem) -> ShadowPrice {
    let n = market.tree().len();
    let mut shat = vec![0.0; n];
    let mut class = vec![PriceClass::Undefined; n];
    let mut at_ask = vec![false; n];
    let mut at_bid = vec![false; n];
    for v in 0..n {
        let (ask, bid) = (market.ask(v), market.bid(v));
        if dual.z0[v] > 1e-12 {
            let s = (dual.z1[v] / dual.z0[v]).clamp(bid, ask);
            shat[v] = s;
            at_ask[v] = ask - s <= CLASS_TOL * ask;
            at_bid[v] = s - bid <= CLASS_TOL * ask;
            class[v] = if at_ask[v] {
                PriceClass::AtAsk
            } else if at_bid[v] {
                PriceClass::AtBid
            } else {
                PriceClass::Interior
            };
        } else {
            shat[v] = ask;
        }
    }
    ShadowPrice { shat, class, at_ask, at_bid }
}

/// Internal nodes split into those whose children carry distinct prices
/// (`active`) and those whose children all share one price (`flat`).
/// Fails if some active node admits a one-step arbitrage.
pub fn classify_nodes(market: &MarketSpec, shat: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    let tree = market.tree();
    let mut active = Vec::new();
    let mut flat = Vec::new();
    for &v in tree.internal_nodes() {
        let ch = &tree.node(v).children;
        let lo = ch.iter().map(|&c| shat[c]).fold(f64::INFINITY, f64::min);
        let hi = ch.iter().map(|&c| shat[c]).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * shat[v].abs().max(1.0);
        if hi - lo <= tol {
            if (shat[v] - lo).abs() > tol {
                return Err(Error::FrictionlessArbitrage(v));
            }
            flat.push(v);
        } else if lo < shat[v] && shat[v] < hi {
            active.push(v);
        } else {
            return Err(Error::FrictionlessArbitrage(v));
        }
    }
    Ok((active, flat))
}

#[derive(Debug, Clone, Serialize)]
pub struct FrictionlessSolve {
    /// Position held from each node to its children; zero at leaves and at
    /// nodes listed in `non_unique`.
    pub h: Vec<f64>,
    pub u: f64,
    /// Leaf-indexed terminal wealth including the endowment.
    pub wealth: Vec<f64>,
    /// Nodes whose children share one price, so any position is optimal.
    pub non_unique: Vec<usize>,
    pub diagnostics: SolveDiagnostics,
}

/// Maximizes `E[U(x + (H•Ŝ)_T + e_T)]` over positions `H`.
pub fn solve_frictionless(
    market: &MarketSpec,
    shat: &[f64],
    utility: &UtilitySpec,
    x: f64,
    options: &SolverOptions,
) -> Result<FrictionlessSolve> {
    let tree = market.tree();
    let (active, flat) = classify_nodes(market, shat)?;
    let obj = ExpectedUtility::frictionless(market, shat, &active, *utility, x);
    let mut rows = Vec::new();
    if utility.positive_domain() {
        for (b, t) in obj.base.iter().zip(&obj.terms) {
            rows.push(Constraint::new(t.iter().copied(), WEALTH_MARGIN - b));
        }
    }
    let program = ConvexProgram::new(&obj).with_inequalities(rows).with_start(vec![0.0; active.len()]);
    let sol = solve(&program, options)?;
    let mut h = vec![0.0; tree.len()];
    for (j, &v) in active.iter().enumerate() {
        h[v] = sol.x[j];
    }
    Ok(FrictionlessSolve {
        u: obj.expected_utility(&sol.x),
        wealth: obj.wealth(&sol.x),
        h,
        non_unique: flat,
        diagnostics: sol.diagnostics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FrictionlessDual {
    pub y: f64,
    /// `inf E[V(yZ_T) + yZ_T e_T]` over martingale densities of `Ŝ`.
    pub v: f64,
    /// Leaf-indexed minimizing density.
    pub z: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Normalization and one martingale row `E_n[Z_T (Ŝ_child - Ŝ_n)] = 0` per
/// active node, over leaf densities.
pub fn martingale_rows(market: &MarketSpec, shat: &[f64], active: &[usize]) -> Vec<Constraint> {
    let tree = market.tree();
    let meas = market.measure();
    let mut rows = vec![crate::cps::normalization_row(market)];
    for &v in active {
        let pn = meas.node_prob[v];
        let depth = tree.node(v).time;
        let terms = tree.leaves_below(v).iter().map(|&k| {
            let child = tree.path(k)[depth + 1];
            (k, meas.leaf_prob[k] / pn * (shat[child] - shat[v]) / shat[v])
        });
        rows.push(Constraint::new(terms, 0.0));
    }
    rows
}

pub fn frictionless_dual(
    market: &MarketSpec,
    shat: &[f64],
    utility: &UtilitySpec,
    y: f64,
    options: &SolverOptions,
) -> Result<FrictionlessDual> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("dual scale must be positive, got {y}")));
    }
    let (active, _) = classify_nodes(market, shat)?;
    let l = market.tree().num_leaves();
    let obj = DualObjective::frictionless(market, *utility, y);
    let rows = (0..l).map(|k| Constraint::new([(k, 1.0)], 0.0)).collect();
    let program = ConvexProgram::new(&obj).with_equalities(martingale_rows(market, shat, &active)).with_inequalities(rows);
    let sol = solve(&program, options)?;
    Ok(FrictionlessDual { y, v: obj.raw_value(&sol.x), z: sol.x, diagnostics: sol.diagnostics })
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionViolation {
    pub node: usize,
    /// `"buy"`, `"sell"`, `"liquidate_long"` or `"liquidate_short"`.
    pub side: &'static str,
    pub quantity: f64,
    pub shat: f64,
    pub ask: f64,
    pub bid: f64,
    /// Distance of `Ŝ` from the traded side, relative to the ask.
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowVerification {
    /// `|u(x; Ŝ) - u(x)|`.
    pub value_gap: f64,
    /// `|v(ŷ; Ŝ) - v(ŷ)|`.
    pub dual_gap: f64,
    pub direction_violations: Vec<DirectionViolation>,
    /// Nodes left out of the direction check because `Ŝ` is undefined there.
    pub unchecked_nodes: Vec<usize>,
    /// `max |H - φ̂¹|` over internal nodes; `None` when skipped.
    pub strategy_gap: Option<f64>,
    pub strategy_check_skipped: Option<String>,
    /// Largest excursion of `Ŝ` outside the spread (zero by construction).
    pub sandwich_violation: f64,
}

impl ShadowVerification {
    pub fn directions_hold(&self) -> bool {
        self.direction_violations.is_empty()
    }
}

pub fn verify_shadow(
    market: &MarketSpec,
    report: &SolveReport,
    shadow: &ShadowPrice,
    frictionless: &FrictionlessSolve,
    frictionless_dual: &FrictionlessDual,
) -> ShadowVerification {
    let tree = market.tree();
    let mut violations = Vec::new();
    let mut unchecked = Vec::new();
    let strat = &report.strategy;
    for v in 0..tree.len() {
        let defined = shadow.class[v] != PriceClass::Undefined;
        let mut legs = vec![("buy", strat.trades[v].buy, true), ("sell", strat.trades[v].sell, false)];
        if tree.is_leaf(v) {
            let pos = strat.phi1[v];
            legs.push(("liquidate_long", pos.max(0.0), false));
            legs.push(("liquidate_short", (-pos).max(0.0), true));
        }
        for (side, q, at_ask) in legs {
            if q <= DIRECTION_TOL {
                continue;
            }
            if !defined {
                unchecked.push(v);
                continue;
            }
            let ok = if at_ask { shadow.at_ask[v] } else { shadow.at_bid[v] };
            if !ok {
                violations.push(DirectionViolation {
                    node: v,
                    side,
                    quantity: q,
                    shat: shadow.shat[v],
                    ask: market.ask(v),
                    bid: market.bid(v),
                    excess: (if at_ask { market.ask(v) - shadow.shat[v] } else { shadow.shat[v] - market.bid(v) })
                        / market.ask(v),
                });
            }
        }
    }
    unchecked.dedup();

    let skip = if !violations.is_empty() {
        Some("trade directions violated".to_string())
    } else if !frictionless.non_unique.is_empty() {
        Some(format!("frictionless position not unique at nodes {:?}", frictionless.non_unique))
    } else if !unchecked.is_empty() {
        Some("shadow price undefined on traded nodes".to_string())
    } else {
        None
    };
    let strategy_gap = skip.is_none().then(|| {
        tree.internal_nodes().iter().map(|&v| (frictionless.h[v] - strat.phi1[v]).abs()).fold(0.0, f64::max)
    });
    let sandwich_violation = (0..tree.len())
        .map(|v| (market.bid(v) - shadow.shat[v]).max(shadow.shat[v] - market.ask(v)).max(0.0))
        .fold(0.0, f64::max);
    ShadowVerification {
        value_gap: (frictionless.u - report.u).abs(),
        dual_gap: (frictionless_dual.v - report.v_hat).abs(),
        direction_violations: violations,
        unchecked_nodes: unchecked,
        strategy_gap,
        strategy_check_skipped: skip,
        sandwich_violation,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Roundtrip {
    /// `(Z, Z·Ŝ)` from the frictionless dual minimizer.
    pub lifted: PriceSystem,
    /// Largest constraint violation of the lift in the frictional polytope.
    pub polytope_violation: f64,
    /// Frictional dual objective at the lift, `E[V(ŷZ) + ŷZe]`.
    pub objective: f64,
    pub v_hat: f64,
    pub difference: f64,
}

/// Lifts the frictionless dual minimizer of `Ŝ` at `ŷ` to the frictional
/// polytope and compares its objective with `v(ŷ)`.
pub fn shadow_from_dual_roundtrip(
    market: &MarketSpec,
    utility: &UtilitySpec,
    report: &SolveReport,
    shadow: &ShadowPrice,
    options: &SolverOptions,
) -> Result<Roundtrip> {
    let dual = frictionless_dual(market, &shadow.shat, utility, report.y_hat, options)?;
    Ok(lift(market, utility, report, shadow, &dual))
}

pub fn lift(
    market: &MarketSpec,
    utility: &UtilitySpec,
    report: &SolveReport,
    shadow: &ShadowPrice,
    dual: &FrictionlessDual,
) -> Roundtrip {
    let tree = market.tree();
    let z1: Vec<f64> = tree.leaves().iter().zip(&dual.z).map(|(&leaf, z)| z * shadow.shat[leaf]).collect();
    let lifted = PriceSystem::from_leaves(market, &dual.z, &z1);
    let obj = DualObjective::normalized(market, *utility, report.y_hat);
    let objective = obj.raw_value(&dual.z);
    Roundtrip {
        polytope_violation: lifted.max_violation(market),
        lifted,
        objective,
        v_hat: report.v_hat,
        difference: (objective - report.v_hat).abs(),
    }
}

/// Shadow price, frictionless solves and every check, from one report.
#[derive(Debug, Clone, Serialize)]
pub struct ShadowAnalysis {
    pub shadow: ShadowPrice,
    pub frictionless: FrictionlessSolve,
    pub frictionless_dual: FrictionlessDual,
    pub verification: ShadowVerification,
    pub roundtrip: Roundtrip,
}

pub fn analyze_shadow(
    market: &MarketSpec,
    utility: &UtilitySpec,
    report: &SolveReport,
    options: &SolverOptions,
) -> Result<ShadowAnalysis> {
    let shadow = construct_shadow(market, &report.dual);
    let frictionless = solve_frictionless(market, &shadow.shat, utility, report.x, options)?;
    let fdual = frictionless_dual(market, &shadow.shat, utility, report.y_hat, options)?;
    let verification = verify_shadow(market, report, &shadow, &frictionless, &fdual);
    let roundtrip = lift(market, utility, report, &shadow, &fdual);
    Ok(ShadowAnalysis { shadow, frictionless, frictionless_dual: fdual, verification, roundtrip })
}

/// CSV rows `node_id,S,bid,Shat,class,buy,sell,H`.
pub fn write_shadow_csv<W: Write>(
    market: &MarketSpec,
    report: &SolveReport,
    analysis: &ShadowAnalysis,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "S", "bid", "Shat", "class", "buy", "sell", "H"])?;
    for v in 0..market.tree().len() {
        let t = report.strategy.trades[v];
        w.write_record([
            v.to_string(),
            market.ask(v).to_string(),
            market.bid(v).to_string(),
            analysis.shadow.shat[v].to_string(),
            analysis.shadow.class[v].as_str().to_string(),
            t.buy.to_string(),
            t.sell.to_string(),
            analysis.frictionless.h[v].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
