//! CART classification trees with exact Gini split search.

use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Training-sample counts per class reaching this leaf.
    Leaf { counts: [u32; 2] },
}

/// Arena-allocated tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_counts(&self, x: &[f64]) -> [u32; 2] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Majority class at the reached leaf; ties vote 0.
    pub fn vote(&self, x: &[f64]) -> u8 {
        let [neg, pos] = self.leaf_counts(x);
        u8::from(pos > neg)
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Structural check used when loading persisted forests: indices in
    /// range, every node reached exactly once from the root, leaves
    /// non-empty.
    pub fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(at) = stack.pop() {
            if at >= self.nodes.len() {
                return Err(format!("child index {at} out of range"));
            }
            if std::mem::replace(&mut seen[at], true) {
                return Err(format!("node {at} reached twice"));
            }
            match &self.nodes[at] {
                Node::Leaf { counts } => {
                    if counts[0] as u64 + counts[1] as u64 == 0 {
                        return Err(format!("leaf {at} has no samples"));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features {
                        return Err(format!("feature {feature} >= {n_features}"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("non-finite threshold at node {at}"));
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(format!("node {orphan} unreachable"));
        }
        Ok(())
    }
}

/// Gini impurity `1 - sum p_c^2` of a class-count pair.
pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Sample-weighted Gini impurity of the two children.
    pub impurity: f64,
}

/// `sum_c count_c^2 / n` summed over both children, as an exact fraction.
/// Minimizing weighted Gini is maximizing this.
#[derive(Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn split(left: [u64; 2], right: [u64; 2]) -> Self {
        let nl = (left[0] + left[1]) as u128;
        let nr = (right[0] + right[1]) as u128;
        let sl = (left[0] as u128).pow(2) + (left[1] as u128).pow(2);
        let sr = (right[0] as u128).pow(2) + (right[1] as u128).pow(2);
        Self {
            num: sl * nr + sr * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    // Adjacent floats can round the midpoint up onto `hi`.
    if mid >= hi {
        lo
    } else {
        mid
    }
}

fn weighted_gini(left: [u64; 2], right: [u64; 2]) -> f64 {
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    let cast = |c: [u64; 2]| [c[0] as usize, c[1] as usize];
    (nl * gini(cast(left)) + nr * gini(cast(right))) / (nl + nr)
}

fn search(
    data: &Dataset,
    samples: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(SplitCandidate, Purity)> {
    let y = data.labels();
    let mut totals = [0u64; 2];
    for &i in samples {
        totals[y[i] as usize] += 1;
    }
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<(SplitCandidate, Purity)> = None;
    let mut order: Vec<(f64, u8)> = Vec::with_capacity(samples.len());
    for &f in &features {
        order.clear();
        order.extend(samples.iter().map(|&i| (data.row(i)[f], y[i])));
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; 2];
        for k in 0..order.len().saturating_sub(1) {
            left[order[k].1 as usize] += 1;
            let (lo, hi) = (order[k].0, order[k + 1].0);
            if lo == hi {
                continue;
            }
            let n_left = k + 1;
            if n_left < min_leaf || order.len() - n_left < min_leaf {
                continue;
            }
            let right = [totals[0] - left[0], totals[1] - left[1]];
            let purity = Purity::split(left, right);
            if best.as_ref().map_or(true, |(_, b)| purity.cmp(b) == Ordering::Greater) {
                best = Some((
                    SplitCandidate {
                        feature: f,
                        threshold: midpoint(lo, hi),
                        impurity: weighted_gini(left, right),
                    },
                    purity,
                ));
            }
        }
    }
    best
}

/// Lowest weighted-Gini split of `samples` over `features`, with candidate
/// thresholds at midpoints between consecutive distinct values. Ties go to
/// the lower feature index, then the lower threshold. `samples` may repeat
/// indices (bootstrap multiplicity).
pub fn best_gini_split(data: &Dataset, samples: &[usize], features: &[usize]) -> Option<SplitCandidate> {
    search(data, samples, features, 1).map(|(c, _)| c)
}

pub(crate) struct TreeParams {
    pub max_features: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

pub(crate) fn grow<R: rand::Rng>(data: &Dataset, samples: Vec<usize>, params: &TreeParams, rng: &mut R) -> DecisionTree {
    let mut nodes = Vec::new();
    build(data, samples, 0, params, rng, &mut nodes);
    DecisionTree { nodes }
}

fn build<R: rand::Rng>(
    data: &Dataset,
    samples: Vec<usize>,
    depth: usize,
    params: &TreeParams,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let y = data.labels();
    let mut counts = [0u64; 2];
    for &i in &samples {
        counts[y[i] as usize] += 1;
    }
    let at = nodes.len();
    let leaf = Node::Leaf {
        counts: [counts[0] as u32, counts[1] as u32],
    };
    nodes.push(leaf);

    let pure = counts[0] == 0 || counts[1] == 0;
    let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
    if pure || samples.len() < params.min_samples_split || depth_capped {
        return at;
    }

    // Features are visited in a random order. When the first `max_features`
    // admit no valid threshold, further features are drawn until one does.
    let d = data.dim();
    let order = index::sample(rng, d, d).into_vec();
    let mut take = params.max_features.clamp(1, d);
    let split = loop {
        if let Some((split, _)) = search(data, &samples, &order[..take], params.min_samples_leaf) {
            break split;
        }
        if take == d {
            return at;
        }
        take += 1;
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        samples.into_iter().partition(|&i| data.row(i)[split.feature] <= split.threshold);
    let left = build(data, left_idx, depth + 1, params, rng, nodes);
    let right = build(data, right_idx, depth + 1, params, rng, nodes);
    nodes[at] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    at
}
