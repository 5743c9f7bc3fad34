//! Regression random forest with out-of-bag permutation importance and
//! partial dependence.
//!
//! Trees are CART variance-reduction trees grown on bootstrap samples with
//! `mtry` candidate features per node. Split thresholds are midpoints
//! between consecutive distinct values; rows with `x <= threshold` go left.
//! Equal gains resolve to the lowest feature index, then the lowest
//! threshold.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AnalysisFrame;
use crate::error::{LcError, Result};
use crate::rng::{replicate_rng, Stream};

/// Column-major feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(LcError::LengthMismatch(names.len(), columns.len()));
        }
        if columns.is_empty() {
            return Err(LcError::Empty);
        }
        let n_rows = columns[0].len();
        for (name, c) in names.iter().zip(&columns) {
            if c.len() != n_rows {
                return Err(LcError::LengthMismatch(c.len(), n_rows));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(LcError::Parameter(format!("feature `{name}` has non-finite values")));
            }
        }
        Ok(FeatureMatrix {
            names,
            columns,
            n_rows,
        })
    }

    pub fn from_frame(frame: &AnalysisFrame, names: &[&str]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| frame.column(n))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    #[inline]
    pub fn get(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
        n: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Reduction of the sum of squared errors achieved by this split.
        sse_decrease: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Prediction for a row whose feature values are supplied by `value`.
    #[inline]
    pub fn predict_by<F: Fn(usize) -> f64>(&self, value: F) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value: v, .. } => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if value(feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, x: &FeatureMatrix, row: usize) -> f64 {
        self.predict_by(|f| x.get(row, f))
    }
}

struct TreeBuilder<'a, R: Rng> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let first = self.y[rows[0]];
        let value = if rows.iter().all(|&r| self.y[r] == first) {
            first
        } else {
            rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64
        };
        self.nodes.push(TreeNode::Leaf {
            value,
            n: rows.len(),
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: Vec<usize>) -> usize {
        let first = self.y[rows[0]];
        if rows.len() < 2 * self.min_leaf || rows.iter().all(|&r| self.y[r] == first) {
            return self.leaf(&rows);
        }
        let Some(best) = self.best_split(&rows) else {
            return self.leaf(&rows);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x.get(r, best.feature) <= best.threshold);
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0, n: 0 });
        let left = self.grow(left_rows);
        let right = self.grow(right_rows);
        self.nodes[at] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            sse_decrease: best.gain,
        };
        at
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<SplitChoice> {
        let p = self.x.n_features();
        let mut features: Vec<usize> = sample(self.rng, p, self.mtry).into_vec();
        features.sort_unstable();

        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mean = total / n;
        let node_sse: f64 = rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum();
        let min_gain = 1e-10 * node_sse;

        let mut best: Option<SplitChoice> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &f in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x.get(r, f), self.y[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for i in 0..pairs.len() - 1 {
                left_sum += pairs[i].1;
                let (a, b) = (pairs[i].0, pairs[i + 1].0);
                if a == b {
                    continue;
                }
                let n_left = i + 1;
                let n_right = pairs.len() - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - total * total / n;
                if gain > min_gain && best.as_ref().is_none_or(|bst| gain > bst.gain) {
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestOptions {
    pub trees: usize,
    /// Features tried per split; `None` means `max(1, p / 3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions {
            trees: 500,
            mtry: None,
            min_leaf: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
    /// Bootstrap row indices per tree (n draws with replacement).
    pub bootstrap: Vec<Vec<usize>>,
    pub oob: Vec<Vec<bool>>,
    pub mtry: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub feature_names: Vec<String>,
    /// Set when the response was constant; the forest then predicts that
    /// constant everywhere.
    pub degenerate_response: bool,
}

pub fn fit_forest(x: &FeatureMatrix, y: &[f64], options: &ForestOptions) -> Result<Forest> {
    let n = x.n_rows();
    let p = x.n_features();
    if y.len() != n {
        return Err(LcError::LengthMismatch(y.len(), n));
    }
    if n < 10 {
        return Err(LcError::TooFew { needed: 10, got: n });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(LcError::Parameter("response must be finite".into()));
    }
    if options.trees < 1 || options.min_leaf < 1 {
        return Err(LcError::Parameter("trees and min_leaf must be >= 1".into()));
    }
    let mtry = options.mtry.unwrap_or((p / 3).max(1));
    if mtry < 1 || mtry > p {
        return Err(LcError::Parameter(format!("mtry {mtry} outside 1..={p}")));
    }
    let degenerate_response = y.iter().all(|&v| v == y[0]);
    if degenerate_response {
        log::warn!("forest response is constant; predictions are flat");
    }

    let grown: Vec<(RegressionTree, Vec<usize>, Vec<bool>)> = (0..options.trees)
        .into_par_iter()
        .map(|t| {
            let mut boot_rng = replicate_rng(options.seed, Stream::Bootstrap, t as u64);
            let (rows, oob) = loop {
                let rows: Vec<usize> = (0..n).map(|_| boot_rng.random_range(0..n)).collect();
                let mut oob = vec![true; n];
                for &r in &rows {
                    oob[r] = false;
                }
                if oob.iter().any(|&o| o) {
                    break (rows, oob);
                }
            };
            let mut split_rng = replicate_rng(options.seed, Stream::FeatureSampling, t as u64);
            let mut builder = TreeBuilder {
                x,
                y,
                mtry,
                min_leaf: options.min_leaf,
                rng: &mut split_rng,
                nodes: Vec::new(),
            };
            builder.grow(rows.clone());
            (
                RegressionTree {
                    nodes: builder.nodes,
                },
                rows,
                oob,
            )
        })
        .collect();

    let mut trees = Vec::with_capacity(grown.len());
    let mut bootstrap = Vec::with_capacity(grown.len());
    let mut oob = Vec::with_capacity(grown.len());
    for (t, b, o) in grown {
        trees.push(t);
        bootstrap.push(b);
        oob.push(o);
    }
    Ok(Forest {
        trees,
        bootstrap,
        oob,
        mtry,
        min_leaf: options.min_leaf,
        seed: options.seed,
        feature_names: x.names().to_vec(),
        degenerate_response,
    })
}

impl Forest {
    pub fn predict_by<F: Fn(usize) -> f64>(&self, value: F) -> f64 {
        self.trees.iter().map(|t| t.predict_by(&value)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_row(&self, x: &FeatureMatrix, row: usize) -> f64 {
        self.predict_by(|f| x.get(row, f))
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .into_par_iter()
            .map(|r| self.predict_row(x, r))
            .collect()
    }

    /// Out-of-bag prediction per row; `None` for rows in every bootstrap.
    pub fn oob_predictions(&self, x: &FeatureMatrix) -> Vec<Option<f64>> {
        (0..x.n_rows())
            .into_par_iter()
            .map(|r| {
                let (sum, count) = self
                    .trees
                    .iter()
                    .zip(&self.oob)
                    .filter(|(_, o)| o[r])
                    .fold((0.0, 0usize), |(s, c), (t, _)| (s + t.predict_row(x, r), c + 1));
                (count > 0).then(|| sum / count as f64)
            })
            .collect()
    }

    pub fn oob_mse(&self, x: &FeatureMatrix, y: &[f64]) -> f64 {
        let preds = self.oob_predictions(x);
        let (sum, count) = preds
            .iter()
            .zip(y)
            .filter_map(|(p, y)| p.map(|p| (p - y).powi(2)))
            .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
        sum / count.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableImportance {
    pub variable: String,
    /// Mean OOB MSE increase divided by its standard error across trees.
    pub pct_inc_mse: f64,
    /// Unscaled mean OOB MSE increase.
    pub raw_inc_mse: f64,
    pub inc_node_purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Ordered by descending `pct_inc_mse`.
    pub variables: Vec<VariableImportance>,
}

impl ImportanceReport {
    pub fn rank_of(&self, variable: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.variable == variable)
    }

    pub fn get(&self, variable: &str) -> Option<&VariableImportance> {
        self.variables.iter().find(|v| v.variable == variable)
    }
}

/// Permutation importance on each tree's out-of-bag rows plus total node
/// purity gain per feature. The standard error uses the population variance
/// of the per-tree increases divided by the tree count.
pub fn oob_importance(forest: &Forest, x: &FeatureMatrix, y: &[f64]) -> Result<ImportanceReport> {
    let p = x.n_features();
    if p != forest.feature_names.len() {
        return Err(LcError::LengthMismatch(p, forest.feature_names.len()));
    }
    if y.len() != x.n_rows() || forest.oob.first().is_some_and(|o| o.len() != y.len()) {
        return Err(LcError::LengthMismatch(y.len(), x.n_rows()));
    }

    let per_tree: Vec<Vec<f64>> = forest
        .trees
        .par_iter()
        .zip(&forest.oob)
        .enumerate()
        .map(|(t, (tree, oob))| {
            let rows: Vec<usize> = (0..y.len()).filter(|&r| oob[r]).collect();
            let m = rows.len() as f64;
            let base: f64 = rows
                .iter()
                .map(|&r| (tree.predict_row(x, r) - y[r]).powi(2))
                .sum::<f64>()
                / m;
            let mut rng = replicate_rng(forest.seed, Stream::Importance, t as u64);
            (0..p)
                .map(|j| {
                    let mut shuffled: Vec<f64> = rows.iter().map(|&r| x.get(r, j)).collect();
                    shuffled.shuffle(&mut rng);
                    let permuted: f64 = rows
                        .iter()
                        .zip(&shuffled)
                        .map(|(&r, &v)| {
                            let pred = tree.predict_by(|f| if f == j { v } else { x.get(r, f) });
                            (pred - y[r]).powi(2)
                        })
                        .sum::<f64>()
                        / m;
                    permuted - base
                })
                .collect()
        })
        .collect();

    let mut purity = vec![0.0; p];
    for tree in &forest.trees {
        for node in tree.nodes() {
            if let TreeNode::Split {
                feature,
                sse_decrease,
                ..
            } = node
            {
                purity[*feature] += sse_decrease;
            }
        }
    }

    let ntree = forest.trees.len() as f64;
    let mut variables: Vec<VariableImportance> = (0..p)
        .map(|j| {
            let mean = per_tree.iter().map(|d| d[j]).sum::<f64>() / ntree;
            let mean_sq = per_tree.iter().map(|d| d[j] * d[j]).sum::<f64>() / ntree;
            let se = ((mean_sq - mean * mean).max(0.0) / ntree).sqrt();
            let pct = if se > 0.0 { mean / se } else { 0.0 };
            VariableImportance {
                variable: x.names()[j].clone(),
                pct_inc_mse: pct,
                raw_inc_mse: mean,
                inc_node_purity: purity[j],
            }
        })
        .collect();
    variables.sort_by(|a, b| b.pct_inc_mse.total_cmp(&a.pct_inc_mse));
    Ok(ImportanceReport { variables })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDependence {
    pub variable: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sums leaf values over all rows for every grid point in `lo..hi` at once.
/// Rows are partitioned at splits on other features; at splits on `j` the
/// rows follow both branches, each restricted to the grid points it admits.
#[allow(clippy::too_many_arguments)]
fn pdp_walk(
    tree: &RegressionTree,
    x: &FeatureMatrix,
    j: usize,
    grid: &[f64],
    node: usize,
    rows: &mut [usize],
    lo: usize,
    hi: usize,
    acc: &mut [f64],
) {
    if rows.is_empty() || lo >= hi {
        return;
    }
    match tree.nodes[node] {
        TreeNode::Leaf { value, .. } => {
            let total = value * rows.len() as f64;
            for a in &mut acc[lo..hi] {
                *a += total;
            }
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } if feature == j => {
            let cut = lo + grid[lo..hi].partition_point(|&g| g <= threshold);
            pdp_walk(tree, x, j, grid, left, rows, lo, cut, acc);
            pdp_walk(tree, x, j, grid, right, rows, cut, hi, acc);
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            let col = x.column(feature);
            let mut split = 0;
            for i in 0..rows.len() {
                if col[rows[i]] <= threshold {
                    rows.swap(i, split);
                    split += 1;
                }
            }
            let (l, r) = rows.split_at_mut(split);
            pdp_walk(tree, x, j, grid, left, l, lo, hi, acc);
            pdp_walk(tree, x, j, grid, right, r, lo, hi, acc);
        }
    }
}

pub fn partial_dependence(
    forest: &Forest,
    x: &FeatureMatrix,
    variable: &str,
    grid_size: usize,
) -> Result<PartialDependence> {
    let j = x
        .index_of(variable)
        .ok_or_else(|| LcError::UnknownVariable(variable.to_string()))?;
    if grid_size < 1 {
        return Err(LcError::Parameter("grid_size must be >= 1".into()));
    }
    let mut sorted = x.column(j).to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = if grid_size == 1 {
        vec![quantile_sorted(&sorted, 0.5)]
    } else {
        (0..grid_size)
            .map(|g| quantile_sorted(&sorted, g as f64 / (grid_size - 1) as f64))
            .collect()
    };
    grid.dedup();
    let values = if forest.degenerate_response {
        let c = forest.predict_row(x, 0);
        vec![c; grid.len()]
    } else {
        let per_tree: Vec<Vec<f64>> = forest
            .trees
            .par_iter()
            .map(|tree| {
                let mut acc = vec![0.0; grid.len()];
                let mut rows: Vec<usize> = (0..x.n_rows()).collect();
                pdp_walk(tree, x, j, &grid, 0, &mut rows, 0, grid.len(), &mut acc);
                acc
            })
            .collect();
        let scale = (x.n_rows() * forest.trees.len()) as f64;
        (0..grid.len())
            .map(|g| per_tree.iter().map(|a| a[g]).sum::<f64>() / scale)
            .collect()
    };
    Ok(PartialDependence {
        variable: variable.to_string(),
        grid,
        values,
    })
}
