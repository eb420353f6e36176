//! Independent oracles shared by the integration suites. Nothing here calls
//! the solver; every value is computed by brute force from the market data.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tc_duality::duality::compute_x0;
use tc_duality::generator::{generate_instance, InstanceGenerator};
use tc_duality::trading::Trade;
use tc_duality::tree::{EventTree, MarketSpec};
use tc_duality::utility::UtilitySpec;

/// One-period market with branches `(prob, price, endowment)`.
pub fn one_period(s0: f64, lambda: f64, branches: &[(f64, f64, f64)]) -> MarketSpec {
    let mut records = vec![(None, 1.0)];
    let mut ask = vec![s0];
    for &(p, s, _) in branches {
        records.push((Some(0), p));
        ask.push(s);
    }
    let tree = EventTree::from_parents(&records).unwrap();
    MarketSpec::new(tree, ask, lambda, branches.iter().map(|b| b.2).collect()).unwrap()
}

/// Binomial `S₀ = 100`, up/down prices, probability `p` of the up move.
pub fn binomial(su: f64, sd: f64, p: f64, lambda: f64, e: (f64, f64)) -> MarketSpec {
    one_period(100.0, lambda, &[(p, su, e.0), (1.0 - p, sd, e.1)])
}

/// The grid-oracle instance: `S_u = 130`, `S_d = 90`, `p = 1/2`, `λ = 0.01`.
pub fn grid_instance() -> MarketSpec {
    binomial(130.0, 90.0, 0.5, 0.01, (0.0, 0.0))
}

/// Utility and wealth cycling through the families of the strong-duality
/// sweep; `x` exceeds `x₀` for utilities on `(0, ∞)`.
pub fn sweep_instance(i: u64) -> (MarketSpec, UtilitySpec, f64) {
    let m = generate_instance(&InstanceGenerator::with_seed(1000 + i)).unwrap();
    let u = match i % 4 {
        0 => UtilitySpec::exponential(0.1).unwrap(),
        1 => UtilitySpec::exponential(1.0).unwrap(),
        2 => UtilitySpec::log(),
        _ => UtilitySpec::power(0.5).unwrap(),
    };
    let x = if u.positive_domain() { compute_x0(&m).unwrap() + 1.0 + (i % 7) as f64 } else { (i % 5) as f64 - 2.0 };
    (m, u, x)
}

/// Terminal wealth of a one-period market when `delta` shares are bought
/// (or sold when negative) at the root and liquidated at the leaves.
pub fn one_period_wealth(m: &MarketSpec, x: f64, delta: f64) -> Vec<f64> {
    let tree = m.tree();
    tree.leaves()
        .iter()
        .zip(m.endowment())
        .map(|(&leaf, e)| {
            if delta >= 0.0 {
                x - delta * m.ask(0) + delta * m.bid(leaf) + e
            } else {
                x - delta * m.bid(0) + delta * m.ask(leaf) + e
            }
        })
        .collect()
}

fn expected_utility(m: &MarketSpec, u: &UtilitySpec, w: &[f64]) -> f64 {
    let p = &m.measure().leaf_prob;
    let mut total = 0.0;
    for (pk, wk) in p.iter().zip(w) {
        let v = u.u(*wk);
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += pk * v;
    }
    total
}

/// `u(x)` on a one-period market by grid search over the root trade: a
/// coarse pass over `[-range, range]`, then step `1e-5` around the coarse
/// maximizer. Concavity makes the refinement exact up to the fine step.
pub fn u_grid_one_period(m: &MarketSpec, u: &UtilitySpec, x: f64, range: f64) -> (f64, f64) {
    assert_eq!(m.tree().horizon(), 1, "one-period oracle");
    let coarse = 1e-3;
    let n = (range / coarse).round() as i64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in -n..=n {
        let d = i as f64 * coarse;
        let v = expected_utility(m, u, &one_period_wealth(m, x, d));
        if v > best.0 {
            best = (v, d);
        }
    }
    assert!(best.1.abs() < range - coarse, "grid maximizer at the boundary of [-{range}, {range}]");
    let centre = best.1;
    let fine = 1e-5;
    let k = (2.0 * coarse / fine).round() as i64;
    for i in -k..=k {
        let d = centre + i as f64 * fine;
        let v = expected_utility(m, u, &one_period_wealth(m, x, d));
        if v > best.0 {
            best = (v, d);
        }
    }
    best
}

/// `v(y)` on a one-period binomial by a grid over `(Z⁰_up, S̃₀)`: a pair is
/// feasible when some leaf prices inside the spreads make `(Z⁰, Z⁰S̃)` a
/// martingale. The `Z⁰_up` grid is refined around the best feasible point.
pub fn v_grid_binomial(m: &MarketSpec, u: &UtilitySpec, y: f64) -> f64 {
    let tree = m.tree();
    assert!(tree.horizon() == 1 && tree.num_leaves() == 2, "binomial oracle");
    let (up, dn) = (tree.leaves()[0], tree.leaves()[1]);
    let p = tree.node(up).cond_prob;
    let e = m.endowment();
    let stilde0: Vec<f64> = (0..=2000).map(|i| m.bid(0) + (m.ask(0) - m.bid(0)) * i as f64 / 2000.0).collect();
    let feasible = |zu: f64| -> bool {
        let zd = (1.0 - p * zu) / (1.0 - p);
        if zu < 0.0 || zd < 0.0 {
            return false;
        }
        let lo = p * zu * m.bid(up) + (1.0 - p) * zd * m.bid(dn);
        let hi = p * zu * m.ask(up) + (1.0 - p) * zd * m.ask(dn);
        stilde0.iter().any(|&s| s >= lo - 1e-12 && s <= hi + 1e-12)
    };
    let value = |zu: f64| -> f64 {
        let zd = (1.0 - p * zu) / (1.0 - p);
        let a = u.v(y * zu) + y * zu * e[0];
        let b = u.v(y * zd) + y * zd * e[1];
        let v = p * a + (1.0 - p) * b;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let top = 1.0 / p;
    let mut step = top / 1000.0;
    let mut best = (f64::INFINITY, 1.0);
    for i in 0..=1000 {
        let zu = i as f64 * step;
        if feasible(zu) {
            let v = value(zu);
            if v < best.0 {
                best = (v, zu);
            }
        }
    }
    for _ in 0..7 {
        let centre = best.1;
        step /= 10.0;
        for i in -20..=20 {
            let zu = (centre + i as f64 * step).clamp(0.0, top);
            if feasible(zu) {
                let v = value(zu);
                if v < best.0 {
                    best = (v, zu);
                }
            }
        }
    }
    best.0
}

/// Conditional probability of reaching leaf `k` from `node`.
fn reach(tree: &EventTree, node: usize, k: usize) -> f64 {
    let depth = tree.node(node).time;
    tree.path(k)[depth + 1..].iter().map(|&v| tree.node(v).cond_prob).product()
}

/// Defining system of the consistent-price polytope over
/// `(Z⁰ leaves, Z¹ leaves)`: the normalization row, and rows `a·z ≥ 0`.
pub struct PolytopeRows {
    pub normalization: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

pub fn polytope_rows(m: &MarketSpec) -> PolytopeRows {
    let tree = m.tree();
    let l = tree.num_leaves();
    let normalization = (0..l).map(|k| reach(tree, tree.root(), k)).collect();
    let mut rows = Vec::new();
    for v in 0..tree.len() {
        let mut ask = vec![0.0; 2 * l];
        let mut bid = vec![0.0; 2 * l];
        for &k in tree.leaves_below(v) {
            let w = reach(tree, v, k);
            ask[k] = w * m.ask(v);
            ask[l + k] = -w;
            bid[k] = -w * m.bid(v);
            bid[l + k] = w;
        }
        rows.push(ask);
        rows.push(bid);
    }
    for j in 0..2 * l {
        let mut r = vec![0.0; 2 * l];
        r[j] = 1.0;
        rows.push(r);
    }
    PolytopeRows { normalization, rows }
}

/// Every vertex of the polytope: each choice of `2L - 1` rows made active
/// together with the normalization row, solved and kept when feasible.
pub fn enumerate_vertices(m: &MarketSpec) -> Vec<Vec<f64>> {
    let sys = polytope_rows(m);
    let n = sys.normalization.len() * 2;
    let rows = &sys.rows;
    let k = n - 1;
    let mut idx: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    loop {
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n / 2 {
            a[(0, j)] = sys.normalization[j];
        }
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..n {
                a[(r + 1, j)] = rows[i][j];
            }
        }
        let mut b = DVector::zeros(n);
        b[0] = 1.0;
        let svd = a.clone().svd(false, false);
        let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        if smin > 1e-10 * smax {
            if let Some(z) = a.lu().solve(&b) {
                let scale = z.iter().fold(1.0f64, |s, v| s.max(v.abs()));
                let ok = rows.iter().all(|r| r.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() >= -1e-8 * scale);
                if ok {
                    out.push(z.iter().copied().collect());
                }
            }
        }
        // next combination in lexicographic order
        let m_rows = rows.len();
        let Some(i) = (0..k).rev().find(|&i| idx[i] < m_rows - k + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Existence verdict from vertices: a strictly positive point exists iff
/// every `Z⁰` leaf coordinate is positive at some vertex (their average is
/// then strictly positive).
pub fn vertex_verdict(m: &MarketSpec, vertices: &[Vec<f64>]) -> bool {
    let l = m.tree().num_leaves();
    !vertices.is_empty() && (0..l).all(|k| vertices.iter().any(|z| z[k] > 1e-9))
}

/// `max E[Z⁰_T·claim]` over the vertices.
pub fn vertex_sup(m: &MarketSpec, vertices: &[Vec<f64>], claim: &[f64]) -> f64 {
    let p = &m.measure().leaf_prob;
    vertices
        .iter()
        .map(|z| claim.iter().zip(p).zip(z).map(|((c, p), z)| c * p * z).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random nonnegative trade at every node, either leg possibly positive.
pub fn random_trades(m: &MarketSpec, rng: &mut ChaCha8Rng, size: f64) -> Vec<Trade> {
    (0..m.tree().len())
        .map(|_| {
            let buy = if rng.random_bool(0.5) { rng.random_range(0.0..size) } else { 0.0 };
            let sell = if rng.random_bool(0.5) { rng.random_range(0.0..size) } else { 0.0 };
            Trade { buy, sell }
        })
        .collect()
}

/// Root of a decreasing function on `[lo, hi]` by bisection.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let (flo, fhi) = (f(lo), f(hi));
    assert!(flo >= 0.0 && fhi <= 0.0, "bisection bracket [{lo}, {hi}] does not straddle the root ({flo}, {fhi})");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
