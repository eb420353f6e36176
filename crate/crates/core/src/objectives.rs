//! Smooth objectives handed to the engine.
//!
//! Both families are separable sums over leaves, so gradients are sparse
//! and Hessians are sums of rank-one terms. All objectives carry a positive
//! `scale` divisor that keeps exponential-utility values of order one.

use nalgebra::DMatrix;

use crate::engine::Objective;
use crate::trading::LeafMaps;
use crate::tree::MarketSpec;
use crate::utility::UtilitySpec;

/// `-Σ_ω P(ω)·U(W_ω) / scale` with affine leaf wealth
/// `W_ω = base_ω + Σ_j a_ωj z_j`.
#[derive(Debug, Clone)]
pub struct ExpectedUtility {
    pub utility: UtilitySpec,
    pub prob: Vec<f64>,
    pub base: Vec<f64>,
    pub terms: Vec<Vec<(usize, f64)>>,
    pub dim: usize,
    pub scale: f64,
}

/// Magnitude used to normalize objective values near wealth `w`.
pub fn value_scale(utility: &UtilitySpec, w: f64) -> f64 {
    match utility.gamma() {
        Some(_) => {
            let u = (utility.u(w) - utility.offset).abs();
            if u.is_finite() && u > 0.0 {
                u.clamp(1e-200, 1e200)
            } else {
                1.0
            }
        }
        None => 1.0,
    }
}

impl ExpectedUtility {
    /// Frictional primal over `(buy, sell)` per internal node followed by one
    /// epigraph variable `t_ω` per leaf standing for the liquidation proceeds
    /// `min((1-λ)S_ω φ¹_ω, S_ω φ¹_ω)`.
    pub fn frictional(market: &MarketSpec, utility: UtilitySpec, x: f64) -> Self {
        let maps = LeafMaps::new(market);
        let nt = maps.num_trade_vars();
        let l = market.tree().num_leaves();
        let terms = (0..l)
            .map(|k| {
                let mut t = maps.cash[k].clone();
                t.push((nt + k, 1.0));
                t
            })
            .collect();
        let base: Vec<f64> = market.endowment().iter().map(|e| x + e).collect();
        let mean = market.tree().expectation(&base);
        Self {
            utility,
            prob: market.measure().leaf_prob.clone(),
            base,
            terms,
            dim: nt + l,
            scale: value_scale(&utility, mean),
        }
    }

    /// Frictionless primal over one position per entry of `active`:
    /// `W_ω = x + e_ω + Σ_n H_n (Ŝ_child - Ŝ_n)` along the path.
    pub fn frictionless(market: &MarketSpec, shat: &[f64], active: &[usize], utility: UtilitySpec, x: f64) -> Self {
        let tree = market.tree();
        let mut var_of = vec![None; tree.len()];
        for (j, &v) in active.iter().enumerate() {
            var_of[v] = Some(j);
        }
        let terms = (0..tree.num_leaves())
            .map(|k| {
                let path = tree.path(k);
                path.windows(2)
                    .filter_map(|w| var_of[w[0]].map(|j| (j, shat[w[1]] - shat[w[0]])))
                    .collect()
            })
            .collect();
        let base: Vec<f64> = market.endowment().iter().map(|e| x + e).collect();
        let mean = tree.expectation(&base);
        Self {
            utility,
            prob: market.measure().leaf_prob.clone(),
            base,
            terms,
            dim: active.len(),
            scale: value_scale(&utility, mean),
        }
    }

    pub fn wealth(&self, z: &[f64]) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.terms)
            .map(|(b, t)| b + t.iter().map(|&(j, a)| a * z[j]).sum::<f64>())
            .collect()
    }

    /// `E[U(W)]` without scaling.
    pub fn expected_utility(&self, z: &[f64]) -> f64 {
        self.wealth(z).iter().zip(&self.prob).map(|(w, p)| p * self.utility.u(*w)).sum()
    }
}

impl Objective for ExpectedUtility {
    fn dim(&self) -> usize {
        self.dim
    }

    fn in_domain(&self, z: &[f64]) -> bool {
        if z.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let positive = self.utility.positive_domain();
        self.wealth(z).iter().all(|&w| w.is_finite() && (!positive || w > 0.0) && self.utility.u(w).is_finite())
    }

    fn value(&self, z: &[f64]) -> f64 {
        -self.expected_utility(z) / self.scale
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for ((w, t), p) in self.wealth(z).iter().zip(&self.terms).zip(&self.prob) {
            let d = -p * self.utility.u_prime(*w) / self.scale;
            for &(j, a) in t {
                grad[j] += d * a;
            }
        }
    }

    fn add_hessian(&self, z: &[f64], scale: f64, hess: &mut DMatrix<f64>) {
        for ((w, t), p) in self.wealth(z).iter().zip(&self.terms).zip(&self.prob) {
            let d = -scale * p * self.utility.u_second(*w) / self.scale;
            for &(i, a) in t {
                for &(j, b) in t {
                    hess[(i, j)] += d * a * b;
                }
            }
        }
    }
}

/// `Σ_ω P(ω)·[V(y z_ω)/y + z_ω c_ω] / scale` over the first `num_weighted`
/// variables; any remaining variables (the `Z¹` leaves) do not enter.
#[derive(Debug, Clone)]
pub struct DualObjective {
    pub utility: UtilitySpec,
    pub y: f64,
    pub prob: Vec<f64>,
    pub linear: Vec<f64>,
    pub dim: usize,
    pub scale: f64,
}

impl DualObjective {
    /// `E[V(yZ⁰_T) + yZ⁰_T e_T] / y` over the polytope variables.
    pub fn normalized(market: &MarketSpec, utility: UtilitySpec, y: f64) -> Self {
        let l = market.tree().num_leaves();
        Self {
            utility,
            y,
            prob: market.measure().leaf_prob.clone(),
            linear: market.endowment().to_vec(),
            dim: 2 * l,
            scale: 1.0,
        }
    }

    /// `E[V(Y⁰) + Y⁰(e_T + x)]` over the unnormalized cone; its infimum is
    /// `inf_y {v(y) + xy}`.
    pub fn joint(market: &MarketSpec, utility: UtilitySpec, x: f64) -> Self {
        let l = market.tree().num_leaves();
        let mean = market.tree().expectation(market.endowment()) + x;
        Self {
            utility,
            y: 1.0,
            prob: market.measure().leaf_prob.clone(),
            linear: market.endowment().iter().map(|e| e + x).collect(),
            dim: 2 * l,
            scale: value_scale(&utility, mean),
        }
    }

    /// Frictionless dual over leaf densities only.
    pub fn frictionless(market: &MarketSpec, utility: UtilitySpec, y: f64) -> Self {
        Self {
            utility,
            y,
            prob: market.measure().leaf_prob.clone(),
            linear: market.endowment().to_vec(),
            dim: market.tree().num_leaves(),
            scale: 1.0,
        }
    }

    /// Unscaled `Σ P·[V(y z) + y z c]`, i.e. `y` times the normalized value.
    pub fn raw_value(&self, z: &[f64]) -> f64 {
        self.prob
            .iter()
            .zip(&self.linear)
            .zip(z)
            .map(|((p, c), &zk)| p * (self.utility.v(self.y * zk) + self.y * zk * c))
            .sum()
    }
}

impl Objective for DualObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn in_domain(&self, z: &[f64]) -> bool {
        z.iter().all(|v| v.is_finite()) && z[..self.prob.len()].iter().all(|&v| v > 0.0)
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.raw_value(z) / (self.y * self.scale)
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (k, (p, c)) in self.prob.iter().zip(&self.linear).enumerate() {
            grad[k] = p * (self.utility.v_prime(self.y * z[k]) + c) / self.scale;
        }
    }

    fn add_hessian(&self, z: &[f64], scale: f64, hess: &mut DMatrix<f64>) {
        for (k, p) in self.prob.iter().enumerate() {
            hess[(k, k)] += scale * p * self.y * self.utility.v_second(self.y * z[k]) / self.scale;
        }
    }
}
