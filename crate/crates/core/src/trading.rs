//! Self-financing strategies under proportional costs.
//!
//! A strategy starts from `(φ⁰, φ¹) = (x, 0)` and at every node buys
//! `buy ≥ 0` shares at the ask `S` and sells `sell ≥ 0` at the bid
//! `(1-λ)S`. Cash moves by exactly the trade proceeds:
//!
//! ```text
//! φ⁰_n = φ⁰_parent - S_n·buy_n + (1-λ)·S_n·sell_n
//! φ¹_n = φ¹_parent + buy_n - sell_n
//! ```
//!
//! Trades at leaves are allowed; they are how a strategy closes its stock
//! position explicitly. Optimizers in this crate only trade at internal
//! nodes and let [`terminal_claim`] liquidate.

use std::io::Write;

use serde::Serialize;

use crate::engine::{solve_lp, Constraint, SolverOptions};
use crate::error::{Error, Result, ValidationError};
use crate::tree::MarketSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Trade {
    pub buy: f64,
    pub sell: f64,
}

impl Trade {
    pub fn buy(q: f64) -> Self {
        Self { buy: q, sell: 0.0 }
    }

    pub fn sell(q: f64) -> Self {
        Self { buy: 0.0, sell: q }
    }

    /// Net position change `buy - sell` as a trade with at most one leg.
    pub fn netted(self) -> Self {
        let d = self.buy - self.sell;
        Self { buy: d.max(0.0), sell: (-d).max(0.0) }
    }

    /// Smallest trade that moves a position by `delta`.
    pub fn to_reach(delta: f64) -> Self {
        Self { buy: delta.max(0.0), sell: (-delta).max(0.0) }
    }
}

/// Trades and the holdings they produce, node-indexed. `phi0`/`phi1` are
/// the holdings after the node's trade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strategy {
    pub x: f64,
    pub trades: Vec<Trade>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
}

impl Strategy {
    /// Total variation `Σ (buy + sell)` along the path to `node`.
    pub fn variation(&self, market: &MarketSpec, node: usize) -> f64 {
        let tree = market.tree();
        let mut total = 0.0;
        let mut v = Some(node);
        while let Some(n) = v {
            total += self.trades[n].buy + self.trades[n].sell;
            v = tree.node(n).parent;
        }
        total
    }

    /// Nodes where both legs are positive.
    pub fn simultaneous_legs(&self) -> Vec<usize> {
        (0..self.trades.len()).filter(|&n| self.trades[n].buy > 0.0 && self.trades[n].sell > 0.0).collect()
    }
}

/// No trades: `φ⁰ ≡ x`, `φ¹ ≡ 0`.
pub fn no_trade(market: &MarketSpec, x: f64) -> Strategy {
    let n = market.tree().len();
    Strategy { x, trades: vec![Trade::default(); n], phi0: vec![x; n], phi1: vec![0.0; n] }
}

/// Holdings generated by `trades` (node-indexed) from initial cash `x`.
pub fn roll_forward(market: &MarketSpec, x: f64, trades: &[Trade]) -> Result<Strategy> {
    let tree = market.tree();
    if trades.len() != tree.len() {
        return Err(ValidationError::Invalid(format!("{} trades for {} nodes", trades.len(), tree.len())).into());
    }
    for (node, t) in trades.iter().enumerate() {
        if !(t.buy >= 0.0 && t.sell >= 0.0) || !t.buy.is_finite() || !t.sell.is_finite() {
            return Err(ValidationError::Invalid(format!(
                "trade at node {node} must be finite and nonnegative (buy {}, sell {})",
                t.buy, t.sell
            ))
            .into());
        }
    }
    let mut phi0 = vec![0.0; tree.len()];
    let mut phi1 = vec![0.0; tree.len()];
    for &v in tree.topological_order() {
        let (c0, c1) = match tree.node(v).parent {
            None => (x, 0.0),
            Some(p) => (phi0[p], phi1[p]),
        };
        let t = trades[v];
        phi0[v] = c0 - market.ask(v) * t.buy + market.bid(v) * t.sell;
        phi1[v] = c1 + t.buy - t.sell;
    }
    Ok(Strategy { x, trades: trades.to_vec(), phi0, phi1 })
}

/// Trades that realize a target position per node (node-indexed, positions
/// held after trading at that node).
pub fn trades_for_positions(market: &MarketSpec, positions: &[f64]) -> Vec<Trade> {
    let tree = market.tree();
    (0..tree.len())
        .map(|v| {
            let before = tree.node(v).parent.map_or(0.0, |p| positions[p]);
            Trade::to_reach(positions[v] - before)
        })
        .collect()
}

/// `φ⁰ + (φ¹)⁺(1-λ)S - (φ¹)⁻S`.
pub fn liquidation(market: &MarketSpec, node: usize, phi0: f64, phi1: f64) -> f64 {
    phi0 + phi1.max(0.0) * market.bid(node) - (-phi1).max(0.0) * market.ask(node)
}

pub fn liquidation_value(market: &MarketSpec, strategy: &Strategy, node: usize) -> f64 {
    liquidation(market, node, strategy.phi0[node], strategy.phi1[node])
}

pub fn liquidation_values(market: &MarketSpec, strategy: &Strategy) -> Vec<f64> {
    (0..market.tree().len()).map(|v| liquidation_value(market, strategy, v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub worst_node: usize,
    pub worst_value: f64,
}

/// `V^liq ≥ -bound` at every node.
pub fn check_admissible(market: &MarketSpec, strategy: &Strategy, bound: f64) -> Admissibility {
    let values = liquidation_values(market, strategy);
    let (worst_node, worst_value) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (v, val)| if val < best.1 { (v, val) } else { best });
    Admissibility { admissible: worst_value >= -bound, worst_node, worst_value }
}

/// `10·(|x| + max|e_T| + max S)`.
pub fn default_admissibility_bound(market: &MarketSpec, x: f64) -> f64 {
    10.0 * (x.abs() + market.endowment_bound() + market.max_price())
}

/// Leaf-indexed liquidation value at the horizon; includes the initial cash.
pub fn terminal_claim(market: &MarketSpec, strategy: &Strategy) -> Vec<f64> {
    market.tree().leaves().iter().map(|&l| liquidation_value(market, strategy, l)).collect()
}

/// Node-wise netting of simultaneous buy and sell legs.
pub fn net_trades(trades: &[Trade]) -> Vec<Trade> {
    trades.iter().map(|t| t.netted()).collect()
}

/// Node-wise sum of two trade plans.
pub fn merge_trades(a: &[Trade], b: &[Trade]) -> Vec<Trade> {
    a.iter().zip(b).map(|(s, t)| Trade { buy: s.buy + t.buy, sell: s.sell + t.sell }).collect()
}

/// CSV rows `node_id,buy,sell,phi0,phi1,vliq`.
pub fn write_strategy_csv<W: Write>(market: &MarketSpec, strategy: &Strategy, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "buy", "sell", "phi0", "phi1", "vliq"])?;
    for v in 0..market.tree().len() {
        let t = strategy.trades[v];
        w.write_record([
            v.to_string(),
            t.buy.to_string(),
            t.sell.to_string(),
            strategy.phi0[v].to_string(),
            strategy.phi1[v].to_string(),
            liquidation_value(market, strategy, v).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Linear maps from the internal-node trade vector `(buy_0, sell_0, buy_1, …)`
/// to each leaf's stock position and cash.
#[derive(Debug, Clone)]
pub(crate) struct LeafMaps {
    /// Internal nodes in variable order.
    pub internal: Vec<usize>,
    /// Per leaf: `(variable, coefficient)` for `φ¹_T`.
    pub stock: Vec<Vec<(usize, f64)>>,
    /// Per leaf: `(variable, coefficient)` for `φ⁰_T - x`.
    pub cash: Vec<Vec<(usize, f64)>>,
}

impl LeafMaps {
    pub fn new(market: &MarketSpec) -> Self {
        let tree = market.tree();
        let internal = tree.internal_nodes().to_vec();
        let mut stock = Vec::with_capacity(tree.num_leaves());
        let mut cash = Vec::with_capacity(tree.num_leaves());
        for k in 0..tree.num_leaves() {
            let mut s = Vec::new();
            let mut c = Vec::new();
            for &v in tree.path(k) {
                if let Some(i) = tree.internal_index(v) {
                    s.push((2 * i, 1.0));
                    s.push((2 * i + 1, -1.0));
                    c.push((2 * i, -market.ask(v)));
                    c.push((2 * i + 1, market.bid(v)));
                }
            }
            stock.push(s);
            cash.push(c);
        }
        Self { internal, stock, cash }
    }

    pub fn num_trade_vars(&self) -> usize {
        2 * self.internal.len()
    }

    /// Node-indexed trades from the variable vector.
    pub fn trades(&self, market: &MarketSpec, z: &[f64]) -> Vec<Trade> {
        let mut trades = vec![Trade::default(); market.tree().len()];
        for (i, &v) in self.internal.iter().enumerate() {
            trades[v] = Trade { buy: z[2 * i].max(0.0), sell: z[2 * i + 1].max(0.0) };
        }
        trades
    }
}

/// Result of [`superhedge`].
#[derive(Debug, Clone, Serialize)]
pub struct Superhedge {
    pub strategy: Strategy,
    /// `max_ω (claim_ω - V^liq_T(ω))`, clipped at zero.
    pub shortfall: f64,
}

/// Finds a strategy from `x` whose terminal liquidation value dominates the
/// leaf-indexed `claim` as closely as possible, by maximizing the uniform
/// margin `s` in `V^liq_T ≥ claim + s` (with `s ≤ 1`).
pub fn superhedge(market: &MarketSpec, x: f64, claim: &[f64], options: &SolverOptions) -> Result<Superhedge> {
    let tree = market.tree();
    if claim.len() != tree.num_leaves() {
        return Err(ValidationError::Invalid(format!("claim has {} entries for {} leaves", claim.len(), tree.num_leaves())).into());
    }
    let maps = LeafMaps::new(market);
    let nt = maps.num_trade_vars();
    let s_var = nt;
    let mut rows = Vec::new();
    for j in 0..nt {
        rows.push(Constraint::new([(j, 1.0)], 0.0));
    }
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        // φ⁰ + price·φ¹ - s ≥ claim - x for price in {bid, ask}
        for price in [market.bid(leaf), market.ask(leaf)] {
            let mut terms = maps.cash[k].clone();
            terms.extend(maps.stock[k].iter().map(|&(j, a)| (j, a * price)));
            terms.push((s_var, -1.0));
            rows.push(Constraint::new(terms, claim[k] - x));
        }
    }
    rows.push(Constraint::new([(s_var, -1.0)], -1.0));
    let mut c = vec![0.0; nt + 1];
    c[s_var] = -1.0;
    // tiny volume penalty keeps the optimal face bounded when λ = 0
    for cj in c.iter_mut().take(nt) {
        *cj = 1e-12;
    }
    let out = solve_lp(&c, vec![], rows, None, options)?;
    if !out.status.solved() {
        return Err(Error::Engine(crate::engine::EngineError::NumericalFailure(format!(
            "superhedging LP ended with status {:?}",
            out.status
        ))));
    }
    let trades = net_trades(&maps.trades(market, &out.x));
    let strategy = roll_forward(market, x, &trades)?;
    let achieved = terminal_claim(market, &strategy);
    let shortfall = achieved.iter().zip(claim).map(|(a, g)| g - a).fold(0.0, f64::max);
    Ok(Superhedge { strategy, shortfall })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(su: f64, sd: f64, lambda: f64) -> MarketSpec {
        MarketSpec::one_period(100.0, &[(0.5, su), (0.5, sd)], lambda).unwrap()
    }

    #[test]
    fn buy_one_share_at_root() {
        let m = binomial(120.0, 80.0, 0.01);
        let mut trades = vec![Trade::default(); 3];
        trades[0] = Trade::buy(1.0);
        let s = roll_forward(&m, 0.0, &trades).unwrap();
        assert_eq!(s.phi0[1], -100.0);
        assert_eq!(s.phi1[2], 1.0);
        let claim = terminal_claim(&m, &s);
        assert!((claim[0] - 18.8).abs() < 1e-12);
        assert!((claim[1] + 20.8).abs() < 1e-12);
    }

    #[test]
    fn sell_back_at_child() {
        let m = binomial(120.0, 80.0, 0.01);
        let mut trades = vec![Trade::default(); 3];
        trades[0] = Trade::buy(1.0);
        trades[1] = Trade::sell(1.0);
        let s = roll_forward(&m, 0.0, &trades).unwrap();
        assert!((s.phi0[1] - 18.8).abs() < 1e-12);
        assert_eq!(s.phi1[1], 0.0);
        assert_eq!(s.variation(&m, 1), 2.0);
    }

    #[test]
    fn no_trade_is_identity() {
        let m = binomial(120.0, 80.0, 0.01);
        let s = roll_forward(&m, 5.0, &[Trade::default(); 3]).unwrap();
        assert_eq!(s, no_trade(&m, 5.0));
        assert_eq!(terminal_claim(&m, &s), vec![5.0, 5.0]);
    }

    #[test]
    fn rejects_negative_trade() {
        let m = binomial(120.0, 80.0, 0.01);
        let mut trades = vec![Trade::default(); 3];
        trades[0] = Trade { buy: -1.0, sell: 0.0 };
        assert!(roll_forward(&m, 0.0, &trades).is_err());
    }

    #[test]
    fn liquidation_formula() {
        let m = MarketSpec::one_period(5.0, &[(1.0, 5.0)], 0.1).unwrap();
        assert!((liquidation(&m, 0, 10.0, 2.0) - 19.0).abs() < 1e-12);
        assert_eq!(liquidation(&m, 0, 10.0, -2.0), 0.0);
        assert_eq!(liquidation(&m, 0, 10.0, 0.0), 10.0);
    }

    #[test]
    fn admissibility_bounds() {
        let m = binomial(120.0, 80.0, 0.01);
        assert!(check_admissible(&m, &no_trade(&m, 0.0), 0.0).admissible);
        let mut trades = vec![Trade::default(); 3];
        trades[0] = Trade::buy(1.0);
        let s = roll_forward(&m, 0.0, &trades).unwrap();
        assert!(check_admissible(&m, &s, 50.0).admissible);
        let a = check_admissible(&m, &s, 10.0);
        assert!(!a.admissible);
        assert_eq!(a.worst_node, 2);
        assert!((a.worst_value + 20.8).abs() < 1e-12);
    }

    #[test]
    fn csv_export_has_one_row_per_node() {
        let m = binomial(120.0, 80.0, 0.01);
        let mut buf = Vec::new();
        write_strategy_csv(&m, &no_trade(&m, 1.0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("node_id,buy,sell,phi0,phi1,vliq"));
    }
}
