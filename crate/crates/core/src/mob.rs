//! Single-variable model-based partitioning: a binary tree that splits on a
//! partitioning variable and fits `response ~ regressor` by least squares in
//! each leaf.
//!
//! Splits are found by exhaustive search over midpoints between consecutive
//! distinct partition values. A split is kept when it lowers the node's
//! residual sum of squares by at least `min_gain` (relative) and both
//! children hold `min_size` rows. Rows with `z < threshold` go left.

use serde::{Deserialize, Serialize};

use crate::error::{LcError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MobOptions {
    pub min_size: usize,
    pub max_depth: usize,
    pub min_gain: f64,
}

impl Default for MobOptions {
    fn default() -> Self {
        MobOptions {
            min_size: 100,
            max_depth: 3,
            min_gain: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// True when `hi` belongs to the interval (only the rightmost leaf).
    pub closed_right: bool,
}

impl Interval {
    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo && (z < self.hi || (self.closed_right && z == self.hi))
    }

    pub fn label(&self) -> String {
        let close = if self.closed_right { ']' } else { ')' };
        format!("[{}, {}{}", fmt_bound(self.lo), fmt_bound(self.hi), close)
    }
}

fn fmt_bound(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MobNode {
    Internal {
        id: usize,
        split_variable: String,
        threshold: f64,
        n: usize,
        left: Box<MobNode>,
        right: Box<MobNode>,
    },
    Leaf {
        id: usize,
        intercept: f64,
        slope: f64,
        n: usize,
        sse: f64,
        interval: Interval,
    },
}

impl MobNode {
    pub fn id(&self) -> usize {
        match self {
            MobNode::Internal { id, .. } | MobNode::Leaf { id, .. } => *id,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            MobNode::Internal { n, .. } | MobNode::Leaf { n, .. } => *n,
        }
    }

    fn leaf_for(&self, z: f64) -> &MobNode {
        let mut node = self;
        while let MobNode::Internal {
            threshold,
            left,
            right,
            ..
        } = node
        {
            node = if z < *threshold { left } else { right };
        }
        node
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a MobNode>) {
        match self {
            MobNode::Internal { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
            leaf => out.push(leaf),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobTree {
    pub response: String,
    pub regressor: String,
    pub partition_variable: String,
    pub root: MobNode,
}

impl MobTree {
    /// Leaves ordered by interval.
    pub fn leaves(&self) -> Vec<&MobNode> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    pub fn total_sse(&self) -> f64 {
        self.leaves()
            .iter()
            .map(|l| match l {
                MobNode::Leaf { sse, .. } => *sse,
                MobNode::Internal { .. } => 0.0,
            })
            .sum()
    }
}

/// Named columns for a partitioning fit.
#[derive(Debug, Clone, Copy)]
pub struct MobData<'a> {
    pub response_name: &'a str,
    pub regressor_name: &'a str,
    pub partition_name: &'a str,
    pub response: &'a [f64],
    pub regressor: &'a [f64],
    pub partition: &'a [f64],
}

/// Exact simple least-squares fit. Returns (intercept, slope, sse), or
/// `None` when the regressor has no spread.
pub fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if x.iter().all(|&v| v == x[0]) || sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Some((intercept, slope, sse))
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
    yy: f64,
}

impl Moments {
    fn add(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.xy += x * y;
        self.yy += y * y;
    }

    fn minus(&self, o: &Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            x: self.x - o.x,
            y: self.y - o.y,
            xx: self.xx - o.xx,
            xy: self.xy - o.xy,
            yy: self.yy - o.yy,
        }
    }

    /// Residual SSE of the least-squares line, `None` if x has no spread.
    fn sse(&self, scale_xx: f64) -> Option<f64> {
        let sxx = self.xx - self.x * self.x / self.n;
        if sxx <= 1e-12 * scale_xx {
            return None;
        }
        let sxy = self.xy - self.x * self.y / self.n;
        let syy = self.yy - self.y * self.y / self.n;
        Some((syy - sxy * sxy / sxx).max(0.0))
    }
}

struct Fitter<'a> {
    data: MobData<'a>,
    opts: &'a MobOptions,
    // Centered copies to keep the moment sums well conditioned.
    xc: Vec<f64>,
    yc: Vec<f64>,
    next_id: usize,
}

impl Fitter<'_> {
    fn leaf(&mut self, rows: &[usize], interval: Interval, id: usize) -> Result<MobNode> {
        let x: Vec<f64> = rows.iter().map(|&r| self.data.regressor[r]).collect();
        let y: Vec<f64> = rows.iter().map(|&r| self.data.response[r]).collect();
        let (intercept, slope, sse) = ols(&x, &y).ok_or(LcError::ConstantVariable(
            self.data.regressor_name.to_string(),
        ))?;
        Ok(MobNode::Leaf {
            id,
            intercept,
            slope,
            n: rows.len(),
            sse,
            interval,
        })
    }

    /// `rows` are sorted by partition value.
    fn grow(&mut self, rows: &[usize], interval: Interval, depth: usize) -> Result<MobNode> {
        let id = self.next_id;
        self.next_id += 1;
        let z = self.data.partition;
        let m = rows.len();

        let mut total = Moments::default();
        for &r in rows {
            total.add(self.xc[r], self.yc[r]);
        }
        let scale = total.xx.max(f64::MIN_POSITIVE);
        let parent_sse = match total.sse(scale) {
            Some(s) => s,
            None => return self.leaf(rows, interval, id),
        };

        let mut best: Option<(f64, usize, f64)> = None;
        if depth < self.opts.max_depth && m >= 2 * self.opts.min_size && parent_sse > 0.0 {
            let mut left = Moments::default();
            for i in 0..m - 1 {
                let r = rows[i];
                left.add(self.xc[r], self.yc[r]);
                let (a, b) = (z[r], z[rows[i + 1]]);
                let n_left = i + 1;
                if a == b || n_left < self.opts.min_size || m - n_left < self.opts.min_size {
                    continue;
                }
                let right = total.minus(&left);
                let (Some(sl), Some(sr)) = (left.sse(scale), right.sse(scale)) else {
                    continue;
                };
                let sse = sl + sr;
                if best.is_none_or(|(bs, _, _)| sse < bs) {
                    let mut t = 0.5 * (a + b);
                    if t <= a {
                        t = b;
                    }
                    best = Some((sse, n_left, t));
                }
            }
        }

        match best {
            Some((sse, n_left, threshold))
                if (parent_sse - sse) / parent_sse >= self.opts.min_gain =>
            {
                let left_iv = Interval {
                    lo: interval.lo,
                    hi: threshold,
                    closed_right: false,
                };
                let right_iv = Interval {
                    lo: threshold,
                    ..interval
                };
                let left = self.grow(&rows[..n_left], left_iv, depth + 1)?;
                let right = self.grow(&rows[n_left..], right_iv, depth + 1)?;
                Ok(MobNode::Internal {
                    id,
                    split_variable: self.data.partition_name.to_string(),
                    threshold,
                    n: m,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
            _ => self.leaf(rows, interval, id),
        }
    }
}

pub fn fit_mob(data: MobData<'_>, options: &MobOptions) -> Result<MobTree> {
    let n = data.response.len();
    if data.regressor.len() != n {
        return Err(LcError::LengthMismatch(data.regressor.len(), n));
    }
    if data.partition.len() != n {
        return Err(LcError::LengthMismatch(data.partition.len(), n));
    }
    if options.min_size < 2 {
        return Err(LcError::Parameter("min_size must be >= 2".into()));
    }
    if !(options.min_gain >= 0.0) {
        return Err(LcError::Parameter("min_gain must be >= 0".into()));
    }
    if n < 2 * options.min_size {
        return Err(LcError::TooFew {
            needed: 2 * options.min_size,
            got: n,
        });
    }
    for col in [data.response, data.regressor, data.partition] {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(LcError::Parameter("partitioning inputs must be finite".into()));
        }
    }
    if data.regressor.iter().all(|&v| v == data.regressor[0]) {
        return Err(LcError::ConstantVariable(data.regressor_name.to_string()));
    }

    let mut rows: Vec<usize> = (0..n).collect();
    rows.sort_by(|&a, &b| data.partition[a].total_cmp(&data.partition[b]));
    let mx = data.regressor.iter().sum::<f64>() / n as f64;
    let my = data.response.iter().sum::<f64>() / n as f64;
    let mut fitter = Fitter {
        data,
        opts: options,
        xc: data.regressor.iter().map(|v| v - mx).collect(),
        yc: data.response.iter().map(|v| v - my).collect(),
        next_id: 1,
    };
    let interval = Interval {
        lo: data.partition[rows[0]],
        hi: data.partition[rows[n - 1]],
        closed_right: true,
    };
    let root = fitter.grow(&rows, interval, 0)?;
    Ok(MobTree {
        response: data.response_name.to_string(),
        regressor: data.regressor_name.to_string(),
        partition_variable: data.partition_name.to_string(),
        root,
    })
}

/// Values outside the training range fall into the boundary leaf.
pub fn predict_mob(tree: &MobTree, regressor: f64, partition: f64) -> f64 {
    match tree.root.leaf_for(partition) {
        MobNode::Leaf {
            intercept, slope, ..
        } => intercept + slope * regressor,
        MobNode::Internal { .. } => unreachable!("routing always ends at a leaf"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobRow {
    pub node: usize,
    pub intercept: f64,
    pub slope: f64,
    pub lo: f64,
    pub hi: f64,
    pub range: String,
    pub n: usize,
}

pub fn mob_table(tree: &MobTree) -> Vec<MobRow> {
    tree.leaves()
        .into_iter()
        .filter_map(|leaf| match leaf {
            MobNode::Leaf {
                id,
                intercept,
                slope,
                n,
                interval,
                ..
            } => Some(MobRow {
                node: *id,
                intercept: *intercept,
                slope: *slope,
                lo: interval.lo,
                hi: interval.hi,
                range: interval.label(),
                n: *n,
            }),
            MobNode::Internal { .. } => None,
        })
        .collect()
}
