//! Exponential-utility indifference prices of the endowment.
//!
//! The price `p` solves `u^e(x - p) = u⁰(x)`. Under `U(x) = -exp(-γx)` both
//! value functions scale by `exp(-γw)` under a cash shift `w`, so
//! `p = ln(u⁰(x)/u^e(x))/γ` and `p` does not depend on `x`. Three routes
//! compute it:
//!
//! - primal: two utility maximizations;
//! - dual: `inf E[Z ln Z/γ + Z e_T] - inf E[Z ln Z/γ]` over the polytope;
//! - shadow: the same difference over the martingale densities of the two
//!   shadow markets `Ŝ(x; e)` and `Ŝ(x)`.

use serde::Serialize;

use crate::cps::{expectation_bounds, PriceSystem};
use crate::duality::{minimize_v_plus_xy, solve_dual, solve_primal, PrimalProblem};
use crate::engine::SolverOptions;
use crate::error::{Error, Result};
use crate::shadow::{construct_shadow, frictionless_dual};
use crate::tree::MarketSpec;
use crate::utility::{Family, UtilitySpec};

/// Cash shift used for the translation-invariance check.
pub const SHIFT: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Primal,
    Dual,
    Shadow,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::Primal, Route::Dual, Route::Shadow];

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Primal => "primal",
            Route::Dual => "dual",
            Route::Shadow => "shadow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "primal" => Ok(Route::Primal),
            "dual" => Ok(Route::Dual),
            "shadow" => Ok(Route::Shadow),
            other => Err(Error::Domain(format!("unknown pricing route '{other}'"))),
        }
    }
}

/// The risk aversion of an unshifted exponential utility; anything else is
/// unsupported, as indifference prices here rely on the translation property.
pub fn require_exponential(utility: &UtilitySpec) -> Result<f64> {
    match utility.family {
        Family::Exponential { gamma } if utility.offset == 0.0 => Ok(gamma),
        _ => Err(Error::Unsupported(format!(
            "indifference pricing is implemented for exponential utility only, got {utility}"
        ))),
    }
}

fn exponential(gamma: f64) -> Result<UtilitySpec> {
    UtilitySpec::exponential(gamma)
}

#[derive(Debug, Clone, Serialize)]
pub struct PrimalPrice {
    pub p: f64,
    pub u_endowed: f64,
    pub u_plain: f64,
}

/// `p = ln(u⁰(x)/u^e(x))/γ` from two primal solves.
pub fn price_primal(market: &MarketSpec, gamma: f64, x: f64, options: &SolverOptions) -> Result<PrimalPrice> {
    let u = exponential(gamma)?;
    let plain = market.without_endowment();
    let ue = solve_primal(&PrimalProblem::new(market, u, x), options)?.u;
    let u0 = solve_primal(&PrimalProblem::new(&plain, u, x), options)?.u;
    if !(ue < 0.0 && u0 < 0.0) {
        return Err(Error::Domain(format!("exponential values must be negative, got {ue} and {u0}")));
    }
    Ok(PrimalPrice { p: (u0 / ue).ln() / gamma, u_endowed: ue, u_plain: u0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct DualPrice {
    pub p: f64,
    /// `inf E[Z ln Z/γ + Z e_T]`.
    pub endowed: f64,
    /// `inf E[Z ln Z/γ]`.
    pub plain: f64,
    /// `E[Z ln Z]` at each minimizer.
    pub entropy_endowed: f64,
    pub entropy_plain: f64,
    #[serde(skip)]
    pub optimizer_endowed: PriceSystem,
    #[serde(skip)]
    pub optimizer_plain: PriceSystem,
}

fn entropy(market: &MarketSpec, z: &[f64]) -> f64 {
    let terms: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).collect();
    market.tree().expectation(&terms)
}

/// Entropy route. The `x` terms of the two infima cancel exactly and are
/// never formed.
pub fn price_dual(market: &MarketSpec, gamma: f64, options: &SolverOptions) -> Result<DualPrice> {
    let u = exponential(gamma)?;
    let plain = market.without_endowment();
    let de = solve_dual(market, &u, 1.0, options)?;
    let d0 = solve_dual(&plain, &u, 1.0, options)?;
    let ze = de.price_system.leaf_z0(market);
    let z0 = d0.price_system.leaf_z0(market);
    let he = entropy(market, &ze);
    let h0 = entropy(market, &z0);
    let ez: f64 = market.tree().expectation(&ze.iter().zip(market.endowment()).map(|(z, e)| z * e).collect::<Vec<_>>());
    let endowed = he / gamma + ez;
    let plain_value = h0 / gamma;
    Ok(DualPrice {
        p: endowed - plain_value,
        endowed,
        plain: plain_value,
        entropy_endowed: he,
        entropy_plain: h0,
        optimizer_endowed: de.price_system,
        optimizer_plain: d0.price_system,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowRoutePrice {
    pub p: f64,
    /// `v(1; Ŝ(x; e))` including the endowment term.
    pub v_endowed: f64,
    /// `v(1; Ŝ(x))`.
    pub v_plain: f64,
    /// `(1/γ)(ln(1/γ) - 1) E[Z]` for each minimizer; they cancel in `p`.
    pub constant_endowed: f64,
    pub constant_plain: f64,
    pub constant_mismatch: f64,
}

/// Shadow route at wealth `x`; the dual optimizers come from the `y`-search.
pub fn price_shadow(market: &MarketSpec, gamma: f64, x: f64, options: &SolverOptions) -> Result<ShadowRoutePrice> {
    let u = exponential(gamma)?;
    let plain = market.without_endowment();
    let se = minimize_v_plus_xy(market, &u, x, options)?;
    let s0 = minimize_v_plus_xy(&plain, &u, x, options)?;
    price_shadow_from(market, gamma, &se.dual.price_system, &s0.dual.price_system, options)
}

/// Shadow route from given dual optimizers, so alternative `Z¹` selections
/// can be compared.
pub fn price_shadow_from(
    market: &MarketSpec,
    gamma: f64,
    endowed: &PriceSystem,
    plain_dual: &PriceSystem,
    options: &SolverOptions,
) -> Result<ShadowRoutePrice> {
    let u = exponential(gamma)?;
    let plain = market.without_endowment();
    let she = construct_shadow(market, endowed);
    let sh0 = construct_shadow(&plain, plain_dual);
    for s in [&she, &sh0] {
        if let Some(&v) = s.undefined_nodes().first() {
            return Err(Error::UndefinedShadow(v));
        }
    }
    let fe = frictionless_dual(market, &she.shat, &u, 1.0, options)?;
    let f0 = frictionless_dual(&plain, &sh0.shat, &u, 1.0, options)?;
    let constant = (1.0 / gamma) * ((1.0 / gamma).ln() - 1.0);
    let ce = constant * market.tree().expectation(&fe.z);
    let c0 = constant * market.tree().expectation(&f0.z);
    Ok(ShadowRoutePrice {
        p: fe.v - f0.v,
        v_endowed: fe.v,
        v_plain: f0.v,
        constant_endowed: ce,
        constant_plain: c0,
        constant_mismatch: (ce - c0).abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteResidual {
    pub a: Route,
    pub b: Route,
    pub difference: f64,
    /// `difference / (1 + |p|)`.
    pub scaled: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PriceReport {
    pub gamma: f64,
    pub x: f64,
    pub p_primal: Option<f64>,
    pub p_dual: Option<f64>,
    pub p_shadow: Option<f64>,
    pub residuals: Vec<RouteResidual>,
    pub primal: Option<PrimalPrice>,
    pub dual: Option<DualPrice>,
    pub shadow: Option<ShadowRoutePrice>,
    /// `|p(x) - p(x + 7)|` on the primal route.
    pub translation_residual: Option<f64>,
    /// `inf` and `sup` of `E[Z⁰_T e_T]` over the polytope.
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub within_bounds: bool,
}

impl PriceReport {
    /// The first available route's price.
    pub fn price(&self) -> Option<f64> {
        self.p_primal.or(self.p_dual).or(self.p_shadow)
    }

    pub fn max_scaled_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.scaled).fold(0.0, f64::max)
    }
}

pub fn price(market: &MarketSpec, gamma: f64, x: f64, routes: &[Route], options: &SolverOptions) -> Result<PriceReport> {
    exponential(gamma)?;
    let primal = routes.contains(&Route::Primal).then(|| price_primal(market, gamma, x, options)).transpose()?;
    let translation_residual = match &primal {
        Some(p) => Some((price_primal(market, gamma, x + SHIFT, options)?.p - p.p).abs()),
        None => None,
    };
    let dual = routes.contains(&Route::Dual).then(|| price_dual(market, gamma, options)).transpose()?;
    let shadow = routes.contains(&Route::Shadow).then(|| price_shadow(market, gamma, x, options)).transpose()?;
    let values: Vec<(Route, f64)> = [
        primal.as_ref().map(|p| (Route::Primal, p.p)),
        dual.as_ref().map(|p| (Route::Dual, p.p)),
        shadow.as_ref().map(|p| (Route::Shadow, p.p)),
    ]
    .into_iter()
    .flatten()
    .collect();
    let mut residuals = Vec::new();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let d = (values[i].1 - values[j].1).abs();
            let scale = 1.0 + values[i].1.abs().max(values[j].1.abs());
            residuals.push(RouteResidual { a: values[i].0, b: values[j].0, difference: d, scaled: d / scale });
        }
    }
    let (lower_bound, upper_bound) = expectation_bounds(market, market.endowment())?;
    let slack = 1e-8 * (1.0 + lower_bound.abs().max(upper_bound.abs()));
    let within_bounds = values.iter().all(|&(_, p)| p >= lower_bound - slack && p <= upper_bound + slack);
    Ok(PriceReport {
        gamma,
        x,
        p_primal: primal.as_ref().map(|p| p.p),
        p_dual: dual.as_ref().map(|p| p.p),
        p_shadow: shadow.as_ref().map(|p| p.p),
        residuals,
        primal,
        dual,
        shadow,
        translation_residual,
        lower_bound,
        upper_bound,
        within_bounds,
    })
}
