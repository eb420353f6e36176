//! Seeded random markets for property suites and the `gen` subcommand.
//!
//! Output depends only on the configuration (seed included): the stream is
//! ChaCha8 and every draw happens in a fixed order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cps::check_cps;
use crate::error::{Error, Result, ValidationError};
use crate::tree::{EventTree, MarketSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceGenerator {
    pub seed: u64,
    /// Inclusive range of trading periods, within `1..=4`.
    pub periods: (usize, usize),
    /// Inclusive range of children per internal node, within `1..=3`.
    pub branching: (usize, usize),
    /// Range of the one-step log-price scale.
    pub volatility: (f64, f64),
    pub lambda: (f64, f64),
    /// Leaf endowments are drawn from `[-b, b]` with `b` in this range.
    pub endowment: (f64, f64),
    pub initial_price: f64,
    /// Redraw until a strictly positive consistent price system exists.
    pub discard_infeasible: bool,
    pub max_attempts: usize,
}

impl Default for InstanceGenerator {
    fn default() -> Self {
        Self {
            seed: 0,
            periods: (1, 4),
            branching: (2, 3),
            volatility: (0.05, 0.3),
            lambda: (0.001, 0.2),
            endowment: (0.0, 5.0),
            initial_price: 100.0,
            discard_infeasible: true,
            max_attempts: 1000,
        }
    }
}

impl InstanceGenerator {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let bad = |m: &str| Err(ValidationError::Invalid(m.to_string()));
        let (p0, p1) = self.periods;
        if p0 < 1 || p1 > 4 || p0 > p1 {
            return bad("periods must satisfy 1 <= min <= max <= 4");
        }
        let (b0, b1) = self.branching;
        if b0 < 1 || b1 > 3 || b0 > b1 {
            return bad("branching must satisfy 1 <= min <= max <= 3");
        }
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ordered(self.volatility) || self.volatility.0 < 0.0 {
            return bad("volatility range must be nonnegative and ordered");
        }
        if !ordered(self.lambda) || self.lambda.0 < 0.0 || self.lambda.1 >= 1.0 {
            return bad("lambda range must lie in [0, 1) and be ordered");
        }
        if !ordered(self.endowment) || self.endowment.0 < 0.0 {
            return bad("endowment range must be nonnegative and ordered");
        }
        if !(self.initial_price > 0.0 && self.initial_price.is_finite()) {
            return bad("initial price must be positive");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw(gen: &InstanceGenerator, rng: &mut ChaCha8Rng) -> Result<MarketSpec, ValidationError> {
    let periods = rng.random_range(gen.periods.0..=gen.periods.1);
    let sigma = uniform(rng, gen.volatility);
    let mut records: Vec<(Option<usize>, f64)> = vec![(None, 1.0)];
    let mut ask = vec![gen.initial_price];
    let mut frontier = vec![0usize];
    for _ in 0..periods {
        let mut next = Vec::new();
        for &v in &frontier {
            let k = rng.random_range(gen.branching.0..=gen.branching.1);
            let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in weights {
                let shock: f64 = rng.random_range(-1.0..1.0);
                records.push((Some(v), w / total));
                ask.push(ask[v] * (sigma * shock).exp());
                next.push(records.len() - 1);
            }
        }
        frontier = next;
    }
    let tree = EventTree::from_parents(&records)?;
    let lambda = uniform(rng, gen.lambda);
    let bound = uniform(rng, gen.endowment);
    let endowment = (0..tree.num_leaves()).map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 }).collect();
    MarketSpec::new(tree, ask, lambda, endowment)
}

/// One market, deterministic in the configuration.
pub fn generate_instance(gen: &InstanceGenerator) -> Result<MarketSpec> {
    gen.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    for _ in 0..gen.max_attempts {
        let market = draw(gen, &mut rng)?;
        if !gen.discard_infeasible || check_cps(&market, market.lambda())?.exists() {
            return Ok(market);
        }
    }
    Err(Error::NoConsistentPrice { lambda: gen.lambda.1, slack: f64::NAN })
}

/// `count` markets with seeds `seed, seed + 1, ...`.
pub fn generate_batch(gen: &InstanceGenerator, count: usize) -> Result<Vec<MarketSpec>> {
    (0..count as u64)
        .map(|i| generate_instance(&InstanceGenerator { seed: gen.seed.wrapping_add(i), ..gen.clone() }))
        .collect()
}
