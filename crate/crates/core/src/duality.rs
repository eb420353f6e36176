//! Primal and dual utility maximization and the identities linking them.
//!
//! The primal maximizes `E[U(x + g + e_T)]` over claims `g` attainable from
//! zero wealth. The dual minimizes `E[V(yZ⁰_T) + yZ⁰_T e_T]` over the
//! price-system polytope. With `v` the dual value function,
//!
//! ```text
//! u(x) = inf_{y>0} { v(y) + xy },   x + ĝ + e_T = I(ŷ Ẑ⁰_T),   ŷ = u'(x).
//! ```
//!
//! The infimum over `y` is computed twice: in one pass over the unscaled
//! cone (`Y = yZ`) and by a one-dimensional search on `v'(y) + x = 0`.

use std::borrow::Cow;

use serde::{Serialize, Serializer};

use crate::cps::{build_polytope, expectation_bounds, require_cps, PriceSystem};
use crate::engine::{solve, Constraint, ConvexProgram, EngineError, SolveDiagnostics, SolverOptions};
use crate::error::{Error, Result};
use crate::objectives::{DualObjective, ExpectedUtility};
use crate::shadow::{solve_frictionless, WEALTH_MARGIN};
use crate::trading::{
    check_admissible, default_admissibility_bound, net_trades, roll_forward, terminal_claim, trades_for_positions,
    Admissibility, LeafMaps, Strategy,
};
use crate::tree::MarketSpec;
use crate::utility::UtilitySpec;

const GOLDEN: f64 = 1.618_033_988_749_895;
/// Margin by which `x` must exceed `x₀` for utilities on `(0, ∞)`.
pub const THRESHOLD_MARGIN: f64 = 1e-9;

fn utility_string<S: Serializer>(u: &UtilitySpec, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&u.to_string())
}

#[derive(Debug, Clone)]
pub struct PrimalProblem<'a> {
    pub market: &'a MarketSpec,
    pub utility: UtilitySpec,
    pub x: f64,
    pub include_endowment: bool,
}

impl<'a> PrimalProblem<'a> {
    pub fn new(market: &'a MarketSpec, utility: UtilitySpec, x: f64) -> Self {
        Self { market, utility, x, include_endowment: true }
    }

    pub fn effective_market(&self) -> Cow<'a, MarketSpec> {
        effective(self.market, self.include_endowment)
    }
}

fn effective(market: &MarketSpec, include_endowment: bool) -> Cow<'_, MarketSpec> {
    if include_endowment {
        Cow::Borrowed(market)
    } else {
        Cow::Owned(market.without_endowment())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PrimalSolution {
    pub x: f64,
    pub u: f64,
    pub strategy: Strategy,
    /// Leaf-indexed `ĝ = V^liq_T - x`.
    pub claim: Vec<f64>,
    /// Leaf-indexed `x + ĝ + e_T`.
    pub wealth: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Checks that a consistent price system exists and, for utilities on
/// `(0, ∞)`, that `x > x₀`; then solves.
pub fn solve_primal(problem: &PrimalProblem<'_>, options: &SolverOptions) -> Result<PrimalSolution> {
    let market = problem.effective_market();
    require_cps(&market)?;
    if problem.utility.positive_domain() {
        let x0 = compute_x0(&market)?;
        if problem.x <= x0 + THRESHOLD_MARGIN {
            return Err(Error::BelowThreshold { x: problem.x, x0 });
        }
    }
    solve_primal_unchecked(&market, &problem.utility, problem.x, options)
}

/// [`solve_primal`] without the feasibility pre-checks.
pub fn solve_primal_unchecked(
    market: &MarketSpec,
    utility: &UtilitySpec,
    x: f64,
    options: &SolverOptions,
) -> Result<PrimalSolution> {
    if market.lambda() == 0.0 {
        return primal_frictionless(market, utility, x, options);
    }
    let tree = market.tree();
    let maps = LeafMaps::new(market);
    let nt = maps.num_trade_vars();
    let obj = ExpectedUtility::frictional(market, *utility, x);
    let mut rows = Vec::with_capacity(nt + 3 * tree.num_leaves());
    for j in 0..nt {
        rows.push(Constraint::new([(j, 1.0)], 0.0));
    }
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        for price in [market.bid(leaf), market.ask(leaf)] {
            let mut terms: Vec<(usize, f64)> = maps.stock[k].iter().map(|&(j, a)| (j, a * price)).collect();
            terms.push((nt + k, -1.0));
            rows.push(Constraint::new(terms, 0.0));
        }
    }
    if utility.positive_domain() {
        for (b, t) in obj.base.iter().zip(&obj.terms) {
            rows.push(Constraint::new(t.iter().copied(), WEALTH_MARGIN - b));
        }
    }
    let mut start = vec![0.1; nt];
    start.extend(std::iter::repeat_n(-1.0, tree.num_leaves()));
    let program = ConvexProgram::new(&obj).with_inequalities(rows).with_start(start);
    let sol = solve(&program, options)?;
    let trades = net_trades(&maps.trades(market, &sol.x));
    finish_primal(market, utility, x, &trades, sol.diagnostics)
}

fn primal_frictionless(
    market: &MarketSpec,
    utility: &UtilitySpec,
    x: f64,
    options: &SolverOptions,
) -> Result<PrimalSolution> {
    let fr = solve_frictionless(market, market.ask_prices(), utility, x, options)?;
    let mut positions = fr.h.clone();
    for &leaf in market.tree().leaves() {
        positions[leaf] = market.tree().node(leaf).parent.map_or(0.0, |p| positions[p]);
    }
    let trades = trades_for_positions(market, &positions);
    finish_primal(market, utility, x, &trades, fr.diagnostics)
}

fn finish_primal(
    market: &MarketSpec,
    utility: &UtilitySpec,
    x: f64,
    trades: &[crate::trading::Trade],
    diagnostics: SolveDiagnostics,
) -> Result<PrimalSolution> {
    let strategy = roll_forward(market, x, trades)?;
    let vliq = terminal_claim(market, &strategy);
    let wealth: Vec<f64> = vliq.iter().zip(market.endowment()).map(|(c, e)| c + e).collect();
    let utils: Vec<f64> = wealth.iter().map(|&w| utility.u(w)).collect();
    let u = market.tree().expectation(&utils);
    let claim = vliq.iter().map(|c| c - x).collect();
    Ok(PrimalSolution { x, u, strategy, claim, wealth, diagnostics })
}

#[derive(Debug, Clone, Serialize)]
pub struct DualSolution {
    pub y: f64,
    /// `v(y) = E[V(yẐ⁰_T) + yẐ⁰_T e_T]`.
    pub v: f64,
    /// `v'(y) = E[Ẑ⁰_T (V'(yẐ⁰_T) + e_T)]`.
    pub v_prime: f64,
    pub price_system: PriceSystem,
    pub diagnostics: SolveDiagnostics,
    #[serde(skip)]
    point: Vec<f64>,
}

pub fn solve_dual(market: &MarketSpec, utility: &UtilitySpec, y: f64, options: &SolverOptions) -> Result<DualSolution> {
    solve_dual_from(market, utility, y, options, None)
}

fn solve_dual_from(
    market: &MarketSpec,
    utility: &UtilitySpec,
    y: f64,
    options: &SolverOptions,
    start: Option<Vec<f64>>,
) -> Result<DualSolution> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::Domain(format!("dual scale must be positive and finite, got {y}")));
    }
    let poly = build_polytope(market);
    let obj = DualObjective::normalized(market, *utility, y);
    let mut program = ConvexProgram::new(&obj).with_equalities(poly.equalities).with_inequalities(poly.inequalities);
    program.start = start;
    let sol = solve(&program, options).map_err(|e| match e {
        EngineError::Infeasible { phase1_value, .. } => {
            Error::NoConsistentPrice { lambda: market.lambda(), slack: -phase1_value }
        }
        e => e.into(),
    })?;
    let l = market.tree().num_leaves();
    let z0 = &sol.x[..l];
    let v = obj.raw_value(&sol.x);
    let d: Vec<f64> =
        z0.iter().zip(market.endowment()).map(|(&z, e)| z * (utility.v_prime(y * z) + e)).collect();
    let v_prime = market.tree().expectation(&d);
    Ok(DualSolution {
        y,
        v,
        v_prime,
        price_system: PriceSystem::from_vector(market, &sol.x),
        diagnostics: sol.diagnostics,
        point: sol.x,
    })
}

/// `v(y)`.
pub fn value_v(market: &MarketSpec, utility: &UtilitySpec, y: f64) -> Result<f64> {
    Ok(solve_dual(market, utility, y, &SolverOptions::default())?.v)
}

#[derive(Debug, Clone, Serialize)]
pub struct JointSolution {
    pub y_hat: f64,
    /// `inf_{y, Z} E[V(yZ⁰_T) + yZ⁰_T (e_T + x)]`.
    pub value: f64,
    pub price_system: PriceSystem,
    pub diagnostics: SolveDiagnostics,
}

/// Minimizes `E[V(Y⁰_T) + Y⁰_T (e_T + x)]` over the unnormalized cone in one
/// pass; `ŷ = E[Ŷ⁰_T]` and `Ẑ = Ŷ/ŷ`.
pub fn solve_joint(market: &MarketSpec, utility: &UtilitySpec, x: f64, options: &SolverOptions) -> Result<JointSolution> {
    let poly = build_polytope(market);
    let obj = DualObjective::joint(market, *utility, x);
    // drop the normalization row, keep cone equalities (λ = 0)
    let equalities = poly.equalities[1..].to_vec();
    let program = ConvexProgram::new(&obj).with_equalities(equalities).with_inequalities(poly.inequalities);
    let sol = solve(&program, options)?;
    let l = market.tree().num_leaves();
    let y_hat = market.tree().expectation(&sol.x[..l]);
    let z: Vec<f64> = sol.x.iter().map(|v| v / y_hat).collect();
    Ok(JointSolution {
        y_hat,
        value: obj.raw_value(&sol.x),
        price_system: PriceSystem::from_vector(market, &z),
        diagnostics: sol.diagnostics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct YSearch {
    pub y_hat: f64,
    /// `v(ŷ) + xŷ`.
    pub value: f64,
    /// `v'(ŷ) + x`.
    pub derivative_residual: f64,
    pub dual: DualSolution,
    /// `(y, v'(y) + x)` at every evaluated point.
    pub evaluations: Vec<(f64, f64)>,
    pub joint: Option<JointSolution>,
}

/// Solves `v'(y) + x = 0`: a joint solve supplies the starting point, a
/// geometric expansion brackets the root and an Illinois-safeguarded secant
/// step in `log y` refines it until `|v'(ŷ) + x| ≤ 1e-8 (1 + |x|)`.
pub fn minimize_v_plus_xy(market: &MarketSpec, utility: &UtilitySpec, x: f64, options: &SolverOptions) -> Result<YSearch> {
    let tol = 1e-8 * (1.0 + x.abs());
    let joint = solve_joint(market, utility, x, options).ok();
    let (y0, mut step) = match &joint {
        Some(j) if j.y_hat > 0.0 && j.y_hat.is_finite() => (j.y_hat, 1e-6),
        _ => {
            let guess = utility.u_prime(x + market.tree().expectation(market.endowment()));
            (if guess > 0.0 && guess.is_finite() { guess } else { 1.0 }, 0.5)
        }
    };
    let mut evaluations = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    let mut eval = |y: f64, evaluations: &mut Vec<(f64, f64)>| -> Result<DualSolution> {
        let d = solve_dual_from(market, utility, y, options, warm.clone())?;
        warm = Some(d.point.clone());
        evaluations.push((y, d.v_prime + x));
        Ok(d)
    };
    let finish = |d: DualSolution, evaluations: Vec<(f64, f64)>, joint: Option<JointSolution>| YSearch {
        y_hat: d.y,
        value: d.v + x * d.y,
        derivative_residual: d.v_prime + x,
        dual: d,
        evaluations,
        joint,
    };

    let d0 = eval(y0, &mut evaluations)?;
    let f0 = d0.v_prime + x;
    if f0.abs() <= tol {
        return Ok(finish(d0, evaluations, joint));
    }
    // h'(y) = v'(y) + x is increasing; move toward its root
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let (mut a, mut fa, mut da) = (y0.ln(), f0, d0);
    let (mut b, mut fb, mut db);
    let mut expansions = 0;
    loop {
        let yb = (a + dir * step).exp();
        let d = eval(yb, &mut evaluations)?;
        let f = d.v_prime + x;
        if f.abs() <= tol {
            return Ok(finish(d, evaluations, joint));
        }
        if f.signum() != fa.signum() {
            (b, fb, db) = (yb.ln(), f, d);
            break;
        }
        (a, fa, da) = (yb.ln(), f, d);
        step *= GOLDEN * GOLDEN;
        expansions += 1;
        if expansions > 60 || !yb.is_finite() || yb <= 0.0 {
            let grid: Vec<String> = evaluations.iter().map(|(y, f)| format!("{y:.6e}:{f:.3e}")).collect();
            return Err(Error::Bracketing(format!("no sign change of v'(y) + x on [{}]", grid.join(", "))));
        }
    }
    // a, b bracket the root in log y with fa, fb of opposite sign
    let mut side = 0i8;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && c != a && c != b { c } else { 0.5 * (a + b) };
        let d = eval(c.exp(), &mut evaluations)?;
        let fc = d.v_prime + x;
        if fc.abs() <= tol || (a - b).abs() < 1e-15 {
            return Ok(finish(d, evaluations, joint));
        }
        if fc.signum() == fb.signum() {
            (b, fb, db) = (c, fc, d);
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            (a, fa, da) = (c, fc, d);
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    let best = if da.v_prime.abs() < db.v_prime.abs() { da } else { db };
    Ok(finish(best, evaluations, joint))
}

/// `x₀ = sup E[Z⁰_T (-e_T)]` over the polytope; the infimum of initial
/// wealths for which utilities on `(0, ∞)` are finite.
pub fn compute_x0(market: &MarketSpec) -> Result<f64> {
    let e = market.endowment();
    if e.iter().all(|&v| v == e[0]) {
        return Ok(-e[0]);
    }
    let neg: Vec<f64> = e.iter().map(|v| -v).collect();
    Ok(expectation_bounds(market, &neg)?.1)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveConfig {
    pub options: SolverOptions,
    pub include_endowment: bool,
    /// Compute the identity table (needs two extra primal solves).
    pub identities: bool,
    /// Admissibility bound; defaults to `10 (|x| + max|e_T| + max S)`.
    pub admissibility_bound: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { options: SolverOptions::default(), include_endowment: true, identities: true, admissibility_bound: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(serialize_with = "utility_string")]
    pub utility: UtilitySpec,
    pub x: f64,
    pub lambda: f64,
    pub include_endowment: bool,
    pub u: f64,
    pub strategy: Strategy,
    pub claim: Vec<f64>,
    pub wealth: Vec<f64>,
    pub y_hat: f64,
    pub v_hat: f64,
    /// `|u(x) - v(ŷ) - xŷ|`.
    pub gap: f64,
    /// `gap / (1 + |u(x)|)`.
    pub relative_gap: f64,
    /// `inf` from the one-pass joint solve, when it succeeded.
    pub joint_value: Option<f64>,
    pub joint_y: Option<f64>,
    pub derivative_residual: f64,
    pub y_evaluations: usize,
    pub dual: PriceSystem,
    pub admissibility: Admissibility,
    pub identities: Option<IdentityTable>,
    pub primal_diagnostics: SolveDiagnostics,
    pub dual_diagnostics: SolveDiagnostics,
}

/// Full pipeline: feasibility checks, primal solve, dual search, gap and
/// (optionally) the identity table.
pub fn solve_report(market: &MarketSpec, utility: &UtilitySpec, x: f64, config: &SolveConfig) -> Result<SolveReport> {
    let market = effective(market, config.include_endowment);
    require_cps(&market)?;
    if utility.positive_domain() {
        let x0 = compute_x0(&market)?;
        if x <= x0 + THRESHOLD_MARGIN {
            return Err(Error::BelowThreshold { x, x0 });
        }
    }
    let primal = solve_primal_unchecked(&market, utility, x, &config.options)?;
    let search = minimize_v_plus_xy(&market, utility, x, &config.options)?;
    let bound = config.admissibility_bound.unwrap_or_else(|| default_admissibility_bound(&market, x));
    let gap = (primal.u - search.value).abs();
    let mut report = SolveReport {
        utility: *utility,
        x,
        lambda: market.lambda(),
        include_endowment: config.include_endowment,
        u: primal.u,
        admissibility: check_admissible(&market, &primal.strategy, bound),
        strategy: primal.strategy,
        claim: primal.claim,
        wealth: primal.wealth,
        y_hat: search.y_hat,
        v_hat: search.dual.v,
        gap,
        relative_gap: gap / (1.0 + primal.u.abs()),
        joint_value: search.joint.as_ref().map(|j| j.value),
        joint_y: search.joint.as_ref().map(|j| j.y_hat),
        derivative_residual: search.derivative_residual,
        y_evaluations: search.evaluations.len(),
        dual: search.dual.price_system,
        identities: None,
        primal_diagnostics: primal.diagnostics,
        dual_diagnostics: search.dual.diagnostics,
    };
    if config.identities {
        report.identities = Some(verify_identities(&report, utility, &market, x)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct LeafIdentity {
    pub node: usize,
    pub z0: f64,
    pub wealth: f64,
    /// `|U'(x + ĝ + e_T) - ŷẐ⁰_T|`.
    pub marginal: f64,
    /// `|x + ĝ + e_T - I(ŷẐ⁰_T)|`.
    pub wealth_residual: f64,
    /// `wealth_residual / (1 + |wealth|)`.
    pub scaled_wealth_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityTable {
    /// (a) `|u(x) - v(ŷ) - xŷ|`.
    pub gap: f64,
    /// (b) per leaf on the support of `Ẑ⁰_T`.
    pub leaves: Vec<LeafIdentity>,
    /// Leaves with `Ẑ⁰_T ≤ 1e-12`.
    pub off_support: Vec<usize>,
    pub max_scaled_wealth_residual: f64,
    /// `u'(x)` by central difference.
    pub u_prime: f64,
    pub fd_step: f64,
    /// `|u'(x) - ŷ|`.
    pub u_prime_vs_y: f64,
    /// (c) `|u'(x) - E[U'(x + ĝ + e_T)]|`.
    pub marginal_utility: f64,
    /// (d) `|x u'(x) - E[(x + ĝ) U'(x + ĝ + e_T)]|`.
    pub wealth_weighted_marginal: f64,
}

/// Options for the finite-difference solves behind `u'(x)`.
pub fn fd_options() -> SolverOptions {
    SolverOptions { tol: 1e-11, max_newton: 400, ..SolverOptions::default() }
}

pub fn verify_identities(report: &SolveReport, utility: &UtilitySpec, market: &MarketSpec, x: f64) -> Result<IdentityTable> {
    let tree = market.tree();
    let mut leaves = Vec::new();
    let mut off_support = Vec::new();
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        let z = report.dual.z0[leaf];
        if z <= 1e-12 {
            off_support.push(leaf);
            continue;
        }
        let w = report.wealth[k];
        let yz = report.y_hat * z;
        let wr = (w - utility.i(yz)).abs();
        leaves.push(LeafIdentity {
            node: leaf,
            z0: z,
            wealth: w,
            marginal: (utility.u_prime(w) - yz).abs(),
            wealth_residual: wr,
            scaled_wealth_residual: wr / (1.0 + w.abs()),
        });
    }
    let max_scaled = leaves.iter().map(|l| l.scaled_wealth_residual).fold(0.0, f64::max);

    let h = 1e-4 * (1.0 + x.abs());
    let opts = fd_options();
    let up = solve_primal_unchecked(market, utility, x + h, &opts)?.u;
    let dn = solve_primal_unchecked(market, utility, x - h, &opts)?.u;
    let u_prime = (up - dn) / (2.0 * h);
    let mu: Vec<f64> = report.wealth.iter().map(|&w| utility.u_prime(w)).collect();
    let e_mu = tree.expectation(&mu);
    let weighted: Vec<f64> = report
        .wealth
        .iter()
        .zip(market.endowment())
        .map(|(&w, e)| (w - e) * utility.u_prime(w))
        .collect();
    let e_weighted = tree.expectation(&weighted);
    Ok(IdentityTable {
        gap: report.gap,
        leaves,
        off_support,
        max_scaled_wealth_residual: max_scaled,
        u_prime,
        fd_step: h,
        u_prime_vs_y: (u_prime - report.y_hat).abs(),
        marginal_utility: (u_prime - e_mu).abs(),
        wealth_weighted_marginal: (x * u_prime - e_weighted).abs(),
    })
}
