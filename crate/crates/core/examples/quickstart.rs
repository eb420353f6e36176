//! Solves the bundled grid market and prints the gap, the shadow price at
//! the root and the indifference price of the endowment.

use tc_duality::duality::{solve_report, SolveConfig};
use tc_duality::engine::SolverOptions;
use tc_duality::pricing::{price, Route};
use tc_duality::shadow::analyze_shadow;
use tc_duality::tree::load_market;
use tc_duality::utility::UtilitySpec;

fn main() -> tc_duality::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/markets/grid_oracle.json");
    let market = load_market(path)?;
    let utility = UtilitySpec::exponential(0.5)?;
    let opts = SolverOptions::default();

    let report = solve_report(&market, &utility, 0.0, &SolveConfig::default())?;
    println!("u(0) = {:.10}, y_hat = {:.10}, gap = {:.2e}", report.u, report.y_hat, report.gap);

    let shadow = analyze_shadow(&market, &utility, &report, &opts)?;
    println!(
        "root: bid {:.4}, shadow {:.4}, ask {:.4}",
        market.bid(0),
        shadow.shadow.shat[0],
        market.ask(0)
    );

    let p = price(&market, 0.5, 0.0, &Route::ALL, &opts)?;
    println!(
        "indifference price {:.8} in [{:.4}, {:.4}], route spread {:.1e}",
        p.price().unwrap_or(f64::NAN),
        p.lower_bound,
        p.upper_bound,
        p.max_scaled_residual()
    );
    Ok(())
}
