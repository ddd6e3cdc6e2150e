//! Bagged regression-tree ensemble (random forest regression).
//!
//! Trees split on the feature/threshold pair that minimizes the summed
//! squared error of the two children, stop at a depth limit, and predict leaf
//! means; the forest averages over bootstrap-resampled trees. Everything is
//! seeded, so refitting with the same seed reproduces the model exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{derive_seed, exec};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_split")]
    pub min_samples_split: usize,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
    /// Features considered per split; `None` means all of them.
    #[serde(default)]
    pub mtry: Option<usize>,
}

fn default_trees() -> usize {
    100
}
fn default_max_depth() -> usize {
    8
}
fn default_min_split() -> usize {
    2
}
fn default_min_leaf() -> usize {
    1
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: default_trees(),
            max_depth: default_max_depth(),
            min_samples_split: default_min_split(),
            min_samples_leaf: default_min_leaf(),
            mtry: None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::InvalidConfig("forest needs at least one tree".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::InvalidConfig("mtry must be at least 1 when set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
    root: u32,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = self.root as usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
    num_features: usize,
}

struct FitContext<'a> {
    rows: &'a [Vec<f64>],
    targets: &'a [f64],
    params: &'a ForestParams,
    num_features: usize,
}

fn mean_and_sse(indices: &[usize], targets: &[f64]) -> (f64, f64) {
    let n = indices.len() as f64;
    let sum: f64 = indices.iter().map(|&i| targets[i]).sum();
    let sum2: f64 = indices.iter().map(|&i| targets[i] * targets[i]).sum();
    let mean = sum / n;
    (mean, (sum2 - sum * sum / n).max(0.0))
}

fn build_node(
    ctx: &FitContext<'_>,
    nodes: &mut Vec<Node>,
    indices: &mut Vec<usize>,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> u32 {
    let (mean, sse) = mean_and_sse(indices, ctx.targets);
    if depth >= ctx.params.max_depth
        || indices.len() < ctx.params.min_samples_split
        || indices.len() < 2 * ctx.params.min_samples_leaf
        || sse <= 1e-12
    {
        nodes.push(Node::Leaf { value: mean });
        return (nodes.len() - 1) as u32;
    }

    let candidate_features: Vec<usize> = match ctx.params.mtry {
        Some(m) if m < ctx.num_features => {
            let mut chosen = rand::seq::index::sample(rng, ctx.num_features, m).into_vec();
            chosen.sort_unstable();
            chosen
        }
        _ => (0..ctx.num_features).collect(),
    };

    let mut best: Option<(f64, usize, f64)> = None; // (children sse, feature, threshold)
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(indices.len());
    for &feature in &candidate_features {
        pairs.clear();
        pairs.extend(indices.iter().map(|&i| (ctx.rows[i][feature], ctx.targets[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
        let total_sum2: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let mut left_sum = 0.0;
        let mut left_sum2 = 0.0;
        let n = pairs.len();
        for p in 1..n {
            left_sum += pairs[p - 1].1;
            left_sum2 += pairs[p - 1].1 * pairs[p - 1].1;
            if pairs[p - 1].0 == pairs[p].0 {
                continue;
            }
            if p < ctx.params.min_samples_leaf || n - p < ctx.params.min_samples_leaf {
                continue;
            }
            let ln = p as f64;
            let rn = (n - p) as f64;
            let left_sse = (left_sum2 - left_sum * left_sum / ln).max(0.0);
            let right_sum = total_sum - left_sum;
            let right_sse = ((total_sum2 - left_sum2) - right_sum * right_sum / rn).max(0.0);
            let score = left_sse + right_sse;
            if best.map_or(true, |(b, _, _)| score < b) {
                let threshold = pairs[p - 1].0 + (pairs[p].0 - pairs[p - 1].0) / 2.0;
                if threshold > pairs[p - 1].0 && threshold <= pairs[p].0 {
                    best = Some((score, feature, threshold));
                }
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        nodes.push(Node::Leaf { value: mean });
        return (nodes.len() - 1) as u32;
    };

    let mut left: Vec<usize> = Vec::new();
    let mut right: Vec<usize> = Vec::new();
    for &i in indices.iter() {
        if ctx.rows[i][feature] <= threshold {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        nodes.push(Node::Leaf { value: mean });
        return (nodes.len() - 1) as u32;
    }
    let left_idx = build_node(ctx, nodes, &mut left, depth + 1, rng);
    let right_idx = build_node(ctx, nodes, &mut right, depth + 1, rng);
    nodes.push(Node::Split { feature, threshold, left: left_idx, right: right_idx });
    (nodes.len() - 1) as u32
}

impl RandomForest {
    /// Fits `params.trees` trees on bootstrap resamples of `(rows, targets)`.
    pub fn fit(rows: &[Vec<f64>], targets: &[f64], params: &ForestParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if rows.is_empty() || rows.len() != targets.len() {
            return Err(Error::InvalidData("rows and targets must be equal-length and non-empty".into()));
        }
        let num_features = rows[0].len();
        if num_features == 0 || rows.iter().any(|r| r.len() != num_features) {
            return Err(Error::InvalidData("ragged or empty feature rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in training data".into()));
        }
        let ctx = FitContext { rows, targets, params, num_features };
        let trees = exec::indexed_map(params.trees, |t| {
            use rand::SeedableRng;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let mut indices: Vec<usize> =
                (0..rows.len()).map(|_| rng.gen_range(0..rows.len())).collect();
            let mut nodes = Vec::new();
            let root = build_node(&ctx, &mut nodes, &mut indices, 0, &mut rng);
            Tree { nodes, root }
        });
        Ok(Self { trees, num_features })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.num_features {
            return Err(Error::DimensionMismatch { expected: self.num_features, got: row.len() });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}
