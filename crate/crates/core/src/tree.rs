//! Finite event trees, market data and the JSON market file.
//!
//! A tree is the whole probability space: every node is an atom of the
//! filtration at its stage, leaves are the states of the world at the
//! horizon, and each non-root node carries the conditional probability of
//! being reached from its parent. Prices are observed at a node and trades
//! placed at that node execute at that node's bid/ask.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub time: usize,
    pub cond_prob: f64,
    pub children: Vec<usize>,
}

/// Rooted tree with one-step conditional probabilities.
///
/// Nodes are stored by id (`0..N`). Leaves are numbered separately in id
/// order; most leaf-indexed vectors in this crate use that numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTree {
    nodes: Vec<Node>,
    root: usize,
    horizon: usize,
    order: Vec<usize>,
    leaves: Vec<usize>,
    leaf_index: Vec<Option<usize>>,
    internal: Vec<usize>,
    internal_index: Vec<Option<usize>>,
    paths: Vec<Vec<usize>>,
    leaves_below: Vec<Vec<usize>>,
}

impl EventTree {
    /// Builds a tree from `(parent, cond_prob)` records indexed by node id.
    /// The root has `parent == None`; its probability is ignored.
    pub fn from_parents(records: &[(Option<usize>, f64)]) -> Result<Self, ValidationError> {
        let n = records.len();
        if n == 0 {
            return Err(ValidationError::Empty);
        }
        let roots: Vec<usize> = (0..n).filter(|&i| records[i].0.is_none()).collect();
        if roots.len() != 1 {
            return Err(ValidationError::RootCount(roots.len()));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); n];
        for (id, &(parent, prob)) in records.iter().enumerate() {
            if let Some(p) = parent {
                if p >= n || p == id {
                    return Err(ValidationError::UnknownParent { node: id, parent: p as i64 });
                }
                if !prob.is_finite() {
                    return Err(ValidationError::NonFinite { field: "prob", value: prob });
                }
                if !(prob > 0.0 && prob <= 1.0) {
                    return Err(ValidationError::Probability { node: id, prob });
                }
                children[p].push(id);
            }
        }

        let mut time = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        time[root] = 0;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &children[v] {
                time[c] = time[v] + 1;
                queue.push_back(c);
            }
        }
        if order.len() != n {
            let missing = (0..n).find(|&i| time[i] == usize::MAX).unwrap_or(0);
            return Err(ValidationError::Unreachable(missing));
        }

        for &v in &order {
            if children[v].is_empty() {
                continue;
            }
            let sum: f64 = children[v].iter().map(|&c| records[c].1).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(ValidationError::ProbabilitySum { node: v, sum });
            }
        }

        let leaves: Vec<usize> = (0..n).filter(|&i| children[i].is_empty()).collect();
        let horizon = leaves.iter().map(|&l| time[l]).max().unwrap_or(0);
        if horizon == 0 {
            return Err(ValidationError::NoPeriods);
        }
        if let Some(&leaf) = leaves.iter().find(|&&l| time[l] != horizon) {
            return Err(ValidationError::UnequalLeafDepth { leaf, depth: time[leaf], expected: horizon });
        }

        let nodes: Vec<Node> = (0..n)
            .map(|id| Node {
                id,
                parent: records[id].0,
                time: time[id],
                cond_prob: if records[id].0.is_some() { records[id].1 } else { 1.0 },
                children: children[id].clone(),
            })
            .collect();

        let mut leaf_index = vec![None; n];
        for (k, &l) in leaves.iter().enumerate() {
            leaf_index[l] = Some(k);
        }
        let internal: Vec<usize> = (0..n).filter(|&i| !children[i].is_empty()).collect();
        let mut internal_index = vec![None; n];
        for (k, &v) in internal.iter().enumerate() {
            internal_index[v] = Some(k);
        }
        let paths: Vec<Vec<usize>> = leaves
            .iter()
            .map(|&l| {
                let mut path = vec![l];
                let mut cur = l;
                while let Some(p) = nodes[cur].parent {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                path
            })
            .collect();
        let mut leaves_below = vec![Vec::new(); n];
        for (k, path) in paths.iter().enumerate() {
            for &v in path {
                leaves_below[v].push(k);
            }
        }

        Ok(Self { nodes, root, horizon, order, leaves, leaf_index, internal, internal_index, paths, leaves_below })
    }

    /// A recombination-free binomial-style tree where every internal node has
    /// `probs.len()` children with the given conditional probabilities.
    pub fn uniform(periods: usize, probs: &[f64]) -> Result<Self, ValidationError> {
        let mut records = vec![(None, 1.0)];
        let mut frontier = vec![0usize];
        for _ in 0..periods {
            let mut next = Vec::new();
            for &v in &frontier {
                for &p in probs {
                    records.push((Some(v), p));
                    next.push(records.len() - 1);
                }
            }
            frontier = next;
        }
        Self::from_parents(&records)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Terminal stage index.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Node ids, parents before children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Leaf node ids in leaf-index order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_index(&self, node: usize) -> Option<usize> {
        self.leaf_index[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.leaf_index[node].is_some()
    }

    /// Internal (trading) node ids in id order.
    pub fn internal_nodes(&self) -> &[usize] {
        &self.internal
    }

    pub fn internal_index(&self, node: usize) -> Option<usize> {
        self.internal_index[node]
    }

    /// Node ids from the root to the given leaf (by leaf index), inclusive.
    pub fn path(&self, leaf: usize) -> &[usize] {
        &self.paths[leaf]
    }

    /// Leaf indices in the subtree of `node`.
    pub fn leaves_below(&self, node: usize) -> &[usize] {
        &self.leaves_below[node]
    }

    pub fn path_measure(&self) -> PathMeasure {
        let mut node_prob = vec![0.0; self.len()];
        for &v in &self.order {
            node_prob[v] = match self.nodes[v].parent {
                None => 1.0,
                Some(p) => node_prob[p] * self.nodes[v].cond_prob,
            };
        }
        let leaf_prob = self.leaves.iter().map(|&l| node_prob[l]).collect();
        PathMeasure { leaf_prob, node_prob }
    }

    /// `E[f]` for a leaf-indexed random variable.
    pub fn expectation(&self, leaf_values: &[f64]) -> f64 {
        self.conditional_expectations(leaf_values)[self.root]
    }

    /// Conditional expectations `E[f | node]` at every node by backward
    /// induction over one-step probabilities.
    pub fn conditional_expectations(&self, leaf_values: &[f64]) -> Vec<f64> {
        assert_eq!(leaf_values.len(), self.num_leaves(), "one value per leaf");
        let mut out = vec![0.0; self.len()];
        for &v in self.order.iter().rev() {
            out[v] = match self.leaf_index[v] {
                Some(k) => leaf_values[k],
                None => self.nodes[v].children.iter().map(|&c| self.nodes[c].cond_prob * out[c]).sum(),
            };
        }
        out
    }
}

/// Unconditional probabilities of nodes and leaves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMeasure {
    pub leaf_prob: Vec<f64>,
    pub node_prob: Vec<f64>,
}

pub fn path_measure(tree: &EventTree) -> PathMeasure {
    tree.path_measure()
}

pub fn expectation(tree: &EventTree, leaf_values: &[f64]) -> f64 {
    tree.expectation(leaf_values)
}

/// Event tree plus ask prices, proportional cost and terminal endowment.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    tree: EventTree,
    ask: Vec<f64>,
    lambda: f64,
    endowment: Vec<f64>,
    measure: PathMeasure,
}

impl MarketSpec {
    /// `ask` is node-indexed, `endowment` leaf-indexed.
    pub fn new(tree: EventTree, ask: Vec<f64>, lambda: f64, endowment: Vec<f64>) -> Result<Self, ValidationError> {
        if ask.len() != tree.len() {
            return Err(ValidationError::Invalid(format!("{} prices for {} nodes", ask.len(), tree.len())));
        }
        if endowment.len() != tree.num_leaves() {
            return Err(ValidationError::Invalid(format!(
                "{} endowment values for {} leaves",
                endowment.len(),
                tree.num_leaves()
            )));
        }
        if !lambda.is_finite() || !(0.0..1.0).contains(&lambda) {
            return Err(ValidationError::LambdaOutOfRange(lambda));
        }
        for (node, &price) in ask.iter().enumerate() {
            if !price.is_finite() {
                return Err(ValidationError::NonFinite { field: "price", value: price });
            }
            if price <= 0.0 {
                return Err(ValidationError::NonpositivePrice { node, price });
            }
        }
        if let Some(&value) = endowment.iter().find(|v| !v.is_finite()) {
            return Err(ValidationError::NonFinite { field: "endowment", value });
        }
        let measure = tree.path_measure();
        Ok(Self { tree, ask, lambda, endowment, measure })
    }

    /// One trading period: root price `s0`, then one leaf per `(prob, price)`
    /// branch. The endowment is zero.
    pub fn one_period(s0: f64, branches: &[(f64, f64)], lambda: f64) -> Result<Self, ValidationError> {
        let mut records = vec![(None, 1.0)];
        let mut ask = vec![s0];
        for &(p, s) in branches {
            records.push((Some(0), p));
            ask.push(s);
        }
        let tree = EventTree::from_parents(&records)?;
        let leaves = tree.num_leaves();
        Self::new(tree, ask, lambda, vec![0.0; leaves])
    }

    pub fn tree(&self) -> &EventTree {
        &self.tree
    }

    pub fn ask(&self, node: usize) -> f64 {
        self.ask[node]
    }

    pub fn bid(&self, node: usize) -> f64 {
        (1.0 - self.lambda) * self.ask[node]
    }

    pub fn ask_prices(&self) -> &[f64] {
        &self.ask
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Leaf-indexed terminal endowment.
    pub fn endowment(&self) -> &[f64] {
        &self.endowment
    }

    pub fn measure(&self) -> &PathMeasure {
        &self.measure
    }

    /// `ρ = max |e_T|`.
    pub fn endowment_bound(&self) -> f64 {
        self.endowment.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_price(&self) -> f64 {
        self.ask.iter().cloned().fold(0.0, f64::max)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, ValidationError> {
        Self::new(self.tree.clone(), self.ask.clone(), lambda, self.endowment.clone())
    }

    pub fn with_endowment(&self, endowment: Vec<f64>) -> Result<Self, ValidationError> {
        Self::new(self.tree.clone(), self.ask.clone(), self.lambda, endowment)
    }

    pub fn without_endowment(&self) -> Self {
        let mut m = self.clone();
        m.endowment = vec![0.0; self.tree.num_leaves()];
        m
    }

    pub fn to_file(&self) -> MarketFile {
        let nodes = self
            .tree
            .nodes()
            .iter()
            .map(|n| NodeRecord {
                id: n.id as i64,
                parent: n.parent.map(|p| p as i64),
                prob: n.parent.map(|_| n.cond_prob),
                price: self.ask[n.id],
            })
            .collect();
        let endowment = self
            .tree
            .leaves()
            .iter()
            .zip(&self.endowment)
            .map(|(&leaf, &value)| EndowmentRecord { leaf: leaf as i64, value })
            .collect();
        MarketFile { lambda: self.lambda, nodes, endowment }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("market serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ValidationError> {
        let file: MarketFile = serde_json::from_str(text).map_err(|e| ValidationError::Schema(e.to_string()))?;
        file.into_market()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Reads and validates a JSON market file.
pub fn load_market(path: impl AsRef<Path>) -> Result<MarketSpec> {
    let text = std::fs::read_to_string(path)?;
    MarketSpec::from_json(&text).map_err(Error::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: i64,
    pub parent: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndowmentRecord {
    pub leaf: i64,
    pub value: f64,
}

/// On-disk market layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub lambda: f64,
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub endowment: Vec<EndowmentRecord>,
}

impl MarketFile {
    pub fn into_market(self) -> Result<MarketSpec, ValidationError> {
        if !self.lambda.is_finite() || !(0.0..1.0).contains(&self.lambda) {
            return Err(ValidationError::LambdaOutOfRange(self.lambda));
        }
        let n = self.nodes.len();
        if n == 0 {
            return Err(ValidationError::Empty);
        }
        let mut slots: Vec<Option<&NodeRecord>> = vec![None; n];
        for rec in &self.nodes {
            if rec.id < 0 || rec.id as usize >= n {
                return Err(ValidationError::NodeIds { expected: n, found: rec.id });
            }
            let id = rec.id as usize;
            if slots[id].is_some() {
                return Err(ValidationError::DuplicateNode(id));
            }
            slots[id] = Some(rec);
        }
        let mut records = Vec::with_capacity(n);
        let mut prices = Vec::with_capacity(n);
        for (id, slot) in slots.into_iter().enumerate() {
            let rec = slot.expect("ids are a permutation of 0..n");
            let parent = match rec.parent {
                None => None,
                Some(p) if p < 0 || p as usize >= n => {
                    return Err(ValidationError::UnknownParent { node: id, parent: p });
                }
                Some(p) => Some(p as usize),
            };
            let prob = match (parent, rec.prob) {
                (None, _) => 1.0,
                (Some(_), Some(p)) => p,
                (Some(_), None) => return Err(ValidationError::MissingProbability(id)),
            };
            records.push((parent, prob));
            prices.push(rec.price);
        }
        let tree = EventTree::from_parents(&records)?;
        for (node, &price) in prices.iter().enumerate() {
            if !price.is_finite() {
                return Err(ValidationError::NonFinite { field: "price", value: price });
            }
            if price <= 0.0 {
                return Err(ValidationError::NonpositivePrice { node, price });
            }
        }
        let mut endowment = vec![0.0; tree.num_leaves()];
        let mut seen = vec![false; tree.num_leaves()];
        for e in &self.endowment {
            let k = if e.leaf >= 0 && (e.leaf as usize) < n { tree.leaf_index(e.leaf as usize) } else { None };
            let k = k.ok_or(ValidationError::EndowmentNotLeaf(e.leaf))?;
            if seen[k] {
                return Err(ValidationError::DuplicateEndowment(e.leaf as usize));
            }
            seen[k] = true;
            endowment[k] = e.value;
        }
        MarketSpec::new(tree, prices, self.lambda, endowment)
    }
}
