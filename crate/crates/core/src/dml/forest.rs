//! Regression forest used as the default nuisance learner: CART
//! variance-reduction splits on bootstrapped samples, averaged over trees
//! in index order so results are independent of scheduling.

use super::DmlError;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features drawn per split; `None` means sqrt(p)/p.
    pub feature_fraction: Option<f64>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            feature_fraction: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut index = 0;
        loop {
            match &self.nodes[index] {
                Node::Leaf(value) => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    index = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionForest {
    trees: Vec<Tree>,
    n_features: usize,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fit_forest(
    x: &Array2<f64>,
    y: &[f64],
    params: &ForestParams,
) -> Result<RegressionForest, DmlError> {
    let (n, p) = x.dim();
    if n == 0 || y.is_empty() {
        return Err(DmlError::EmptyData);
    }
    if y.len() != n {
        return Err(DmlError::ShapeMismatch(format!(
            "{} target(s) for {n} row(s)",
            y.len()
        )));
    }
    if params.n_trees == 0 {
        return Err(DmlError::InvalidParams("n_trees must be at least 1".into()));
    }
    if params.min_leaf == 0 {
        return Err(DmlError::InvalidParams("min_leaf must be at least 1".into()));
    }
    let features_per_split = match params.feature_fraction {
        Some(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(DmlError::InvalidParams(format!(
                    "feature_fraction {f} outside [0, 1]"
                )));
            }
            ((f * p as f64).round() as usize).clamp(usize::from(p > 0), p)
        }
        None => {
            if p == 0 {
                0
            } else {
                ((p as f64).sqrt().round() as usize).clamp(1, p)
            }
        }
    };

    let mut trees = Vec::with_capacity(params.n_trees);
    for tree_index in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
            params.seed ^ splitmix64(tree_index as u64 + 1),
        ));
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut tree = Tree { nodes: Vec::new() };
        grow(
            &mut tree,
            x,
            y,
            rows,
            0,
            params,
            features_per_split,
            &mut rng,
        );
        trees.push(tree);
    }
    Ok(RegressionForest { trees, n_features: p })
}

#[allow(clippy::too_many_arguments)]
fn grow(
    tree: &mut Tree,
    x: &Array2<f64>,
    y: &[f64],
    rows: Vec<usize>,
    depth: usize,
    params: &ForestParams,
    features_per_split: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let count = rows.len() as f64;
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / count;
    let sse = rows.iter().map(|&r| (y[r] - mean).powi(2)).sum::<f64>();

    let index = tree.nodes.len();
    if depth >= params.max_depth
        || rows.len() < 2 * params.min_leaf
        || sse <= 1e-12
        || features_per_split == 0
    {
        tree.nodes.push(Node::Leaf(mean));
        return index;
    }

    let p = x.ncols();
    let mut candidates: Vec<usize> = (0..p).collect();
    for slot in 0..features_per_split {
        let pick = rng.gen_range(slot..p);
        candidates.swap(slot, pick);
    }
    candidates.truncate(features_per_split);
    candidates.sort_unstable();

    let mut best: Option<(f64, usize, f64, usize)> = None; // cost, feature, threshold, left size
    let mut ordered: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for &feature in &candidates {
        ordered.clear();
        ordered.extend(rows.iter().map(|&r| (x[[r, feature]], y[r])));
        ordered.sort_by(|a, b| a.0.total_cmp(&b.0));

        let total_sum: f64 = ordered.iter().map(|v| v.1).sum();
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let total_sq: f64 = ordered.iter().map(|v| v.1 * v.1).sum();
        for i in 1..ordered.len() {
            left_sum += ordered[i - 1].1;
            left_sq += ordered[i - 1].1 * ordered[i - 1].1;
            if ordered[i].0 <= ordered[i - 1].0 {
                continue;
            }
            let left_n = i as f64;
            let right_n = (ordered.len() - i) as f64;
            if i < params.min_leaf || ordered.len() - i < params.min_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let cost = (left_sq - left_sum * left_sum / left_n)
                + (right_sq - right_sum * right_sum / right_n);
            if best.map_or(true, |(c, ..)| cost < c) {
                let threshold = 0.5 * (ordered[i - 1].0 + ordered[i].0);
                best = Some((cost, feature, threshold, i));
            }
        }
    }

    let Some((_, feature, threshold, _)) = best else {
        tree.nodes.push(Node::Leaf(mean));
        return index;
    };

    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&r| x[[r, feature]] <= threshold);

    tree.nodes.push(Node::Leaf(0.0)); // placeholder, replaced below
    let left = grow(tree, x, y, left_rows, depth + 1, params, features_per_split, rng);
    let right = grow(tree, x, y, right_rows, depth + 1, params, features_per_split, rng);
    tree.nodes[index] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    index
}

impl RegressionForest {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_one(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|row| self.predict_one(row.as_slice().expect("contiguous row")))
            .collect()
    }
}
