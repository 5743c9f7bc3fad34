//! Explore phase: LRC distribution summaries across a grid of cluster counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{cut, ClusterAssignment, Dendrogram};
use crate::confirm::{confirm, ksperm_from_columns, null_ensemble_from_columns};
use crate::dataset::AnalysisFrame;
use crate::error::{LcError, Result};
use crate::lrc::lrc_from_columns;

pub const DEFAULT_GRID: [usize; 7] = [1, 5, 10, 25, 50, 100, 200];

/// Tukey five-number summary (R's `fivenum`): min, lower hinge, median,
/// upper hinge, max.
pub fn fivenum(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(LcError::Empty);
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let n4 = ((n + 3.0) / 2.0).floor() / 2.0;
    let depths = [1.0, n4, (n + 1.0) / 2.0, n + 1.0 - n4, n];
    let mut out = [0.0; 5];
    for (o, d) in out.iter_mut().zip(depths) {
        let lo = x[d.floor() as usize - 1];
        let hi = x[d.ceil() as usize - 1];
        *o = 0.5 * (lo + hi);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreOptions {
    /// Pseudo-clusterings pooled into the null eCDF at every K.
    pub replicates: usize,
    /// Permutation replicates for a p-value; `None` skips the test.
    pub permutations: Option<usize>,
    pub seed: u64,
    /// Advisory marker threshold, see [`ExploreSummary::advisory_k`].
    pub advisory_factor: f64,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            replicates: 100,
            permutations: None,
            seed: 1,
            advisory_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub fraction_negative: f64,
    pub negative_clusters: usize,
    pub n_undefined: usize,
    pub d_observed: f64,
    pub d_location: f64,
    pub p_value: Option<f64>,
}

impl KSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub rows: Vec<KSummary>,
    /// Heuristic only: the first K whose IQR increment over the previous
    /// grid point exceeds `advisory_factor` times the mean increment of all
    /// earlier steps. The analyst chooses K; this is a pointer, not a pick.
    pub advisory_k: Option<usize>,
}

pub fn compare_k(
    frame: &AnalysisFrame,
    tree: &Dendrogram,
    k_grid: &[usize],
    exposure: &str,
    outcome: &str,
    options: &ExploreOptions,
) -> Result<ExploreSummary> {
    let x = frame.column(exposure)?;
    let y = frame.column(outcome)?;
    if tree.leaf_count() != x.len() {
        return Err(LcError::LengthMismatch(tree.leaf_count(), x.len()));
    }
    let mut grid = k_grid.to_vec();
    grid.sort_unstable();
    if grid.is_empty() {
        return Err(LcError::Empty);
    }
    if grid.windows(2).any(|w| w[0] == w[1]) {
        return Err(LcError::Parameter("K grid contains duplicates".into()));
    }
    for &k in &grid {
        if k < 1 || k > x.len() {
            return Err(LcError::KOutOfRange { k, n: x.len() });
        }
    }
    let rows: Vec<KSummary> = grid
        .par_iter()
        .map(|&k| summarize_k(&x, &y, &cut(tree, k)?, options))
        .collect::<Result<_>>()?;
    let advisory_k = advisory_marker(&rows, options.advisory_factor);
    Ok(ExploreSummary { rows, advisory_k })
}

/// Summary row for one clustering.
pub fn summarize_k(
    exposure: &[f64],
    outcome: &[f64],
    assignment: &ClusterAssignment,
    options: &ExploreOptions,
) -> Result<KSummary> {
    let k = assignment.k();
    let dist = lrc_from_columns(exposure, outcome, assignment)?;
    if dist.per_unit.is_empty() {
        return Err(LcError::Parameter(format!("every LRC is undefined at K = {k}")));
    }
    let [min, q1, median, q3, max] = fivenum(&dist.per_unit)?;
    let null = null_ensemble_from_columns(
        exposure,
        outcome,
        assignment.sizes(),
        options.replicates,
        options.seed,
    )?;
    let d = confirm(&dist, &null)?;
    let p_value = match options.permutations {
        Some(b) => Some(
            ksperm_from_columns(exposure, outcome, assignment.sizes(), &null, &d, b, options.seed)?
                .p_value,
        ),
        None => None,
    };
    Ok(KSummary {
        k,
        min,
        q1,
        median,
        q3,
        max,
        fraction_negative: dist.negative_units() as f64 / dist.per_unit.len() as f64,
        negative_clusters: dist.negative_clusters(),
        n_undefined: dist.n_undefined,
        d_observed: d.d,
        d_location: d.at,
        p_value,
    })
}

fn advisory_marker(rows: &[KSummary], factor: f64) -> Option<usize> {
    let mut increments: Vec<f64> = Vec::new();
    for w in rows.windows(2) {
        let step = w[1].iqr() - w[0].iqr();
        if !increments.is_empty() {
            let trend = increments.iter().sum::<f64>() / increments.len() as f64;
            if trend > 0.0 && step > factor * trend {
                return Some(w[1].k);
            }
        }
        increments.push(step);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBin {
    /// Inclusive lower edge.
    pub lo: usize,
    /// Exclusive upper edge.
    pub hi: usize,
    pub count: usize,
}

/// Clusters per size bin. Bins are `bin_width` wide, aligned to multiples of
/// the width, spanning the smallest to the largest cluster.
pub fn size_histogram(assignment: &ClusterAssignment, bin_width: usize) -> Result<Vec<SizeBin>> {
    if bin_width < 1 {
        return Err(LcError::Parameter("bin width must be >= 1".into()));
    }
    let sizes = assignment.sizes();
    let min = *sizes.iter().min().expect("k >= 1");
    let max = *sizes.iter().max().expect("k >= 1");
    let first = min / bin_width;
    let last = max / bin_width;
    let mut bins: Vec<SizeBin> = (first..=last)
        .map(|b| SizeBin {
            lo: b * bin_width,
            hi: (b + 1) * bin_width,
            count: 0,
        })
        .collect();
    for &s in sizes {
        bins[s / bin_width - first].count += 1;
    }
    Ok(bins)
}
