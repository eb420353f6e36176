//! Compiles and runs the Rust snippets of the guide as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/markets.md")]
pub mod markets {}
#[doc = include_str!("../../../book/src/utilities.md")]
pub mod utilities {}
#[doc = include_str!("../../../book/src/price_systems.md")]
pub mod price_systems {}
#[doc = include_str!("../../../book/src/duality.md")]
pub mod duality {}
#[doc = include_str!("../../../book/src/shadow_prices.md")]
pub mod shadow_prices {}
#[doc = include_str!("../../../book/src/indifference_pricing.md")]
pub mod indifference_pricing {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
