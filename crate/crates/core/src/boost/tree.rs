//! Regression tree construction for second-order boosting.
//!
//! Trees are grown level-wise. Numeric splits are found either by exact
//! enumeration over sorted unique feature values or on a quantile histogram;
//! categorical features split one-vs-rest on a single category code. Split
//! quality is the standard second-order gain
//! `½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ`.

use serde::{Deserialize, Serialize};

use crate::survdata::{FeatureKind, FeatureSchema};

/// Routing test of an internal node. `LessEq` sends `value <= threshold`
/// left; `InCategory` sends codes contained in the set left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitTest {
    LessEq(f64),
    InCategory(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        test: SplitTest,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        weight: f64,
    },
}

/// Array-encoded binary regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(weight: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Leaf weight for a dense feature row.
    pub fn leaf_weight(&self, features: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                    ..
                } => {
                    idx = if route_left(test, features[*feature]) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// The feature index of the root split, if the root is internal.
    pub fn root_split_feature(&self) -> Option<usize> {
        match &self.nodes[0] {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        }
    }

    /// True when any internal node splits on `feature`.
    pub fn uses_feature(&self, feature: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature: f, .. } if *f == feature))
    }
}

pub fn route_left(test: &SplitTest, value: f64) -> bool {
    match test {
        SplitTest::LessEq(thr) => value <= *thr,
        SplitTest::InCategory(set) => set.contains(&(value as u32)),
    }
}

// ---------------------------------------------------------------------------
// Training data layout
// ---------------------------------------------------------------------------

/// Strategy for numeric split enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeMethod {
    /// Exact greedy over sorted unique values.
    Exact,
    /// Quantile histogram with at most `max_bins` bins per numeric feature.
    Hist { max_bins: usize },
}

pub(crate) enum ColumnKind {
    Numeric,
    Categorical { n_levels: usize },
}

pub(crate) struct Column {
    pub kind: ColumnKind,
    pub values: Vec<f64>,
    /// Per-row bin index (hist mode; categorical code for categorical columns).
    pub bins: Vec<u16>,
    /// Interior bin boundaries: bin b holds values v with
    /// `edges[b-1] < v <= edges[b]` (numeric hist mode only).
    pub edges: Vec<f64>,
    pub n_bins: usize,
}

/// Column-major training matrix.
pub(crate) struct TrainData {
    pub columns: Vec<Column>,
}

impl TrainData {
    pub fn from_rows(
        rows: &[Vec<f64>],
        schema: &FeatureSchema,
        method: TreeMethod,
    ) -> crate::error::Result<Self> {
        let n_feat = schema.len();
        let mut columns = Vec::with_capacity(n_feat);
        for (fi, col) in schema.columns.iter().enumerate() {
            let values: Vec<f64> = rows.iter().map(|r| r[fi]).collect();
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(crate::error::Error::Fit(format!(
                    "non-finite value {bad} in feature '{}'",
                    col.name
                )));
            }
            let column = match &col.kind {
                FeatureKind::Categorical { levels } => {
                    if levels.len() > u16::MAX as usize {
                        return Err(crate::error::Error::Fit(format!(
                            "feature '{}' has {} levels; at most {} supported",
                            col.name,
                            levels.len(),
                            u16::MAX
                        )));
                    }
                    let bins: Vec<u16> = values.iter().map(|&v| v as u16).collect();
                    Column {
                        kind: ColumnKind::Categorical {
                            n_levels: levels.len(),
                        },
                        n_bins: levels.len(),
                        bins,
                        edges: Vec::new(),
                        values,
                    }
                }
                FeatureKind::Numeric => match method {
                    TreeMethod::Exact => Column {
                        kind: ColumnKind::Numeric,
                        values,
                        bins: Vec::new(),
                        edges: Vec::new(),
                        n_bins: 0,
                    },
                    TreeMethod::Hist { max_bins } => {
                        let edges = quantile_edges(&values, max_bins.max(2));
                        let bins: Vec<u16> = values
                            .iter()
                            .map(|&v| edges.partition_point(|&e| e < v) as u16)
                            .collect();
                        Column {
                            kind: ColumnKind::Numeric,
                            n_bins: edges.len() + 1,
                            bins,
                            edges,
                            values,
                        }
                    }
                },
            };
            columns.push(column);
        }
        Ok(TrainData { columns })
    }

    /// Walk a tree for row `row` using the columnar layout.
    pub fn leaf_weight(&self, tree: &RegressionTree, row: usize) -> f64 {
        let mut idx = 0;
        loop {
            match &tree.nodes[idx] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                    ..
                } => {
                    let v = self.columns[*feature].values[row];
                    idx = if route_left(test, v) { *left } else { *right };
                }
            }
        }
    }
}

/// Interior edges at value quantiles; every edge is an actual data value, so
/// `v <= edge` cleanly separates bins.
fn quantile_edges(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() <= max_bins {
        // one bin per unique value: edges between consecutive values
        return sorted[..sorted.len().saturating_sub(1)].to_vec();
    }
    let mut edges = Vec::with_capacity(max_bins - 1);
    for b in 1..max_bins {
        let pos = b * sorted.len() / max_bins;
        edges.push(sorted[pos.min(sorted.len() - 1)]);
    }
    edges.dedup();
    edges
}

// ---------------------------------------------------------------------------
// Split search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub l2: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

/// Hessian floor applied in every leaf-weight denominator.
pub(crate) const HESSIAN_FLOOR: f64 = 1e-16;

fn leaf_weight_of(g: f64, h: f64, l2: f64) -> f64 {
    -g / (h.max(HESSIAN_FLOOR) + l2)
}

fn score(g: f64, h: f64, l2: f64) -> f64 {
    g * g / (h + l2)
}

#[derive(Debug, Clone)]
struct Candidate {
    gain: f64,
    feature: usize,
    test: SplitTest,
}

/// Per-depth feature admissibility derived from the split constraints.
pub(crate) trait FeatureFilter {
    /// Candidate features at this depth, in ascending index order.
    fn candidates(&self, depth: usize, sampled: &[usize]) -> Vec<usize>;
}

fn best_split_for_feature(
    data: &TrainData,
    feature: usize,
    rows: &[u32],
    g: &[f64],
    h: &[f64],
    g_total: f64,
    h_total: f64,
    p: &TreeParams,
) -> Option<Candidate> {
    let col = &data.columns[feature];
    let parent_score = score(g_total, h_total, p.l2);
    let mut best: Option<Candidate> = None;
    let mut consider = |gain: f64, test: SplitTest| {
        if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(Candidate {
                gain,
                feature,
                test,
            });
        }
    };

    match &col.kind {
        ColumnKind::Categorical { n_levels } => {
            // one-vs-rest on category code
            let mut hist = vec![(0.0f64, 0.0f64); *n_levels];
            for &r in rows {
                let b = col.bins[r as usize] as usize;
                hist[b].0 += g[r as usize];
                hist[b].1 += h[r as usize];
            }
            for (code, &(gl, hl)) in hist.iter().enumerate() {
                let gr = g_total - gl;
                let hr = h_total - hl;
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain =
                    0.5 * (score(gl, hl, p.l2) + score(gr, hr, p.l2) - parent_score) - p.gamma;
                consider(gain, SplitTest::InCategory(vec![code as u32]));
            }
        }
        ColumnKind::Numeric if col.n_bins > 0 => {
            // histogram scan over bin boundaries
            let mut hist = vec![(0.0f64, 0.0f64); col.n_bins];
            for &r in rows {
                let b = col.bins[r as usize] as usize;
                hist[b].0 += g[r as usize];
                hist[b].1 += h[r as usize];
            }
            let mut gl = 0.0;
            let mut hl = 0.0;
            for b in 0..col.edges.len() {
                gl += hist[b].0;
                hl += hist[b].1;
                let gr = g_total - gl;
                let hr = h_total - hl;
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain =
                    0.5 * (score(gl, hl, p.l2) + score(gr, hr, p.l2) - parent_score) - p.gamma;
                consider(gain, SplitTest::LessEq(col.edges[b]));
            }
        }
        ColumnKind::Numeric => {
            // exact: sort the node's values, scan between distinct neighbors
            let mut trip: Vec<(f64, f64, f64)> = rows
                .iter()
                .map(|&r| (col.values[r as usize], g[r as usize], h[r as usize]))
                .collect();
            trip.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut gl = 0.0;
            let mut hl = 0.0;
            for i in 0..trip.len().saturating_sub(1) {
                gl += trip[i].1;
                hl += trip[i].2;
                if trip[i].0 == trip[i + 1].0 {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain =
                    0.5 * (score(gl, hl, p.l2) + score(gr, hr, p.l2) - parent_score) - p.gamma;
                consider(gain, SplitTest::LessEq(trip[i].0));
            }
        }
    }
    best
}

/// Grow one tree on the given row subset. `g`/`h` are full-length per-row
/// gradient/hessian vectors; `filter` yields admissible features per depth.
pub(crate) fn build_tree(
    data: &TrainData,
    g: &[f64],
    h: &[f64],
    rows: Vec<u32>,
    sampled_features: &[usize],
    filter: &dyn FeatureFilter,
    p: &TreeParams,
) -> RegressionTree {
    use rayon::prelude::*;

    let mut nodes: Vec<Node> = vec![Node::Leaf { weight: 0.0 }];
    let mut frontier: Vec<(usize, Vec<u32>, usize)> = vec![(0, rows, 0)];

    while let Some((nid, node_rows, depth)) = frontier.pop() {
        let mut g_total = 0.0;
        let mut h_total = 0.0;
        for &r in &node_rows {
            g_total += g[r as usize];
            h_total += h[r as usize];
        }

        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes[nid] = Node::Leaf {
                weight: leaf_weight_of(g_total, h_total, p.l2),
            };
        };

        if depth >= p.max_depth || node_rows.len() < 2 {
            make_leaf(&mut nodes);
            continue;
        }
        let candidates = filter.candidates(depth, sampled_features);
        if candidates.is_empty() {
            make_leaf(&mut nodes);
            continue;
        }

        // independent per-feature scans, reduced in feature order
        let per_feature: Vec<Option<Candidate>> = candidates
            .par_iter()
            .map(|&f| best_split_for_feature(data, f, &node_rows, g, h, g_total, h_total, p))
            .collect();
        let mut best: Option<Candidate> = None;
        for cand in per_feature.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| cand.gain > b.gain) {
                best = Some(cand);
            }
        }

        match best {
            None => make_leaf(&mut nodes),
            Some(c) => {
                let col = &data.columns[c.feature];
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = node_rows
                    .iter()
                    .partition(|&&r| route_left(&c.test, col.values[r as usize]));
                if left_rows.is_empty() || right_rows.is_empty() {
                    make_leaf(&mut nodes);
                    continue;
                }
                let left = nodes.len();
                nodes.push(Node::Leaf { weight: 0.0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { weight: 0.0 });
                nodes[nid] = Node::Split {
                    feature: c.feature,
                    test: c.test,
                    left,
                    right,
                    gain: c.gain,
                };
                frontier.push((left, left_rows, depth + 1));
                frontier.push((right, right_rows, depth + 1));
            }
        }
    }
    RegressionTree { nodes }
}
