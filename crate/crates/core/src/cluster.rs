//! Agglomerative hierarchical clustering via the Lance-Williams recurrence.
//!
//! Every step merges the globally closest pair of active clusters. Clusters
//! live in slots `0..n`; merging slots `i < j` stores the union in slot `i`.
//! Ties on dissimilarity go to the smallest `(i, j)` slot pair, which makes
//! trees independent of platform and thread count.
//!
//! Each active slot caches its nearest partner among higher slots, so a
//! step costs O(n) plus a rescan of the few rows whose cached partner was
//! touched by the merge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::CondensedMatrix;
use crate::error::{LcError, Result};

/// Linkage criteria. Single linkage is deliberately absent: it chains units
/// into strings rather than compact blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkageMethod {
    /// Ward recurrence applied to the supplied distances as-is.
    #[serde(rename = "ward.D")]
    WardD,
    /// Ward recurrence on squared distances; heights reported as square roots.
    #[serde(rename = "ward.D2")]
    WardD2,
    #[serde(rename = "complete")]
    Complete,
    #[serde(rename = "average")]
    Average,
    #[serde(rename = "mcquitty")]
    McQuitty,
    #[serde(rename = "median")]
    Median,
    #[serde(rename = "centroid")]
    Centroid,
}

impl LinkageMethod {
    pub const ALL: [LinkageMethod; 7] = [
        LinkageMethod::WardD,
        LinkageMethod::WardD2,
        LinkageMethod::Complete,
        LinkageMethod::Average,
        LinkageMethod::McQuitty,
        LinkageMethod::Median,
        LinkageMethod::Centroid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkageMethod::WardD => "ward.D",
            LinkageMethod::WardD2 => "ward.D2",
            LinkageMethod::Complete => "complete",
            LinkageMethod::Average => "average",
            LinkageMethod::McQuitty => "mcquitty",
            LinkageMethod::Median => "median",
            LinkageMethod::Centroid => "centroid",
        }
    }

    /// Median and centroid linkage can produce height inversions.
    pub fn is_monotone(self) -> bool {
        !matches!(self, LinkageMethod::Median | LinkageMethod::Centroid)
    }

    /// Dissimilarity between `k` and the union of `i` and `j`.
    #[inline]
    fn update(self, d_ik: f64, d_jk: f64, d_ij: f64, n_i: f64, n_j: f64, n_k: f64) -> f64 {
        match self {
            LinkageMethod::WardD | LinkageMethod::WardD2 => {
                ((n_i + n_k) * d_ik + (n_j + n_k) * d_jk - n_k * d_ij) / (n_i + n_j + n_k)
            }
            LinkageMethod::Complete => d_ik.max(d_jk),
            LinkageMethod::Average => (n_i * d_ik + n_j * d_jk) / (n_i + n_j),
            LinkageMethod::McQuitty => 0.5 * (d_ik + d_jk),
            LinkageMethod::Median => 0.5 * d_ik + 0.5 * d_jk - 0.25 * d_ij,
            LinkageMethod::Centroid => {
                let n = n_i + n_j;
                (n_i * d_ik + n_j * d_jk) / n - n_i * n_j * d_ij / (n * n)
            }
        }
    }
}

impl fmt::Display for LinkageMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkageMethod {
    type Err = LcError;

    fn from_str(s: &str) -> Result<Self> {
        LinkageMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| LcError::UnknownMethod(s.to_string()))
    }
}

/// One agglomeration step. Node ids follow the usual convention: leaves are
/// `0..n`, the node created at step `s` is `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    leaf_count: usize,
    method: LinkageMethod,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Validates that `merges` form a single binary tree over `leaf_count`
    /// leaves.
    pub fn new(leaf_count: usize, method: LinkageMethod, merges: Vec<Merge>) -> Result<Self> {
        if leaf_count < 1 || merges.len() + 1 != leaf_count {
            return Err(LcError::Parameter(format!(
                "{} merges cannot join {leaf_count} leaves",
                merges.len()
            )));
        }
        let mut used = vec![false; 2 * leaf_count - 1];
        let mut sizes = vec![1usize; 2 * leaf_count - 1];
        for (s, m) in merges.iter().enumerate() {
            let node = leaf_count + s;
            for child in [m.left, m.right] {
                if child >= node || used[child] {
                    return Err(LcError::Parameter(format!(
                        "merge {s} references invalid or reused node {child}"
                    )));
                }
                used[child] = true;
            }
            if m.left == m.right || !m.height.is_finite() {
                return Err(LcError::Parameter(format!("merge {s} is malformed")));
            }
            sizes[node] = sizes[m.left] + sizes[m.right];
            if sizes[node] != m.size {
                return Err(LcError::Parameter(format!("merge {s} has wrong size")));
            }
        }
        Ok(Dendrogram {
            leaf_count,
            method,
            merges,
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn method(&self) -> LinkageMethod {
        self.method
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }

    pub fn is_monotone(&self) -> bool {
        self.merges.windows(2).all(|w| w[0].height <= w[1].height)
    }
}

pub fn agglomerate(distances: &CondensedMatrix, method: LinkageMethod) -> Result<Dendrogram> {
    if let Some(pos) = distances
        .as_slice()
        .iter()
        .position(|d| !d.is_finite() || *d < 0.0)
    {
        return Err(LcError::InvalidDistance(pos));
    }
    let n = distances.n();
    let mut d: Vec<f64> = match method {
        LinkageMethod::WardD2 => distances.as_slice().iter().map(|v| v * v).collect(),
        _ => distances.as_slice().to_vec(),
    };
    let idx = |i: usize, j: usize| -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * (2 * n - a - 1) / 2 + (b - a - 1)
    };

    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    // doubly linked list of active slots in ascending order
    const NONE: usize = usize::MAX;
    let mut next: Vec<usize> = (1..=n).map(|k| if k == n { NONE } else { k }).collect();
    let mut prev: Vec<usize> = (0..n).map(|k| if k == 0 { NONE } else { k - 1 }).collect();
    let mut head = 0usize;

    let mut nn = vec![NONE; n];
    let mut nnd = vec![f64::INFINITY; n];
    let rescan = |k: usize, d: &[f64], next: &[usize], nn: &mut [usize], nnd: &mut [f64]| {
        let mut best = NONE;
        let mut best_d = f64::INFINITY;
        let mut l = next[k];
        while l != NONE {
            let v = d[idx(k, l)];
            if best == NONE || v < best_d {
                best = l;
                best_d = v;
            }
            l = next[l];
        }
        nn[k] = best;
        nnd[k] = best_d;
    };
    for k in 0..n {
        rescan(k, &d, &next, &mut nn, &mut nnd);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        // global minimum, smallest slot on ties
        let mut i = NONE;
        let mut k = head;
        while k != NONE {
            if nn[k] != NONE && (i == NONE || nnd[k] < nnd[i]) {
                i = k;
            }
            k = next[k];
        }
        let j = nn[i];
        let d_ij = nnd[i];
        let (n_i, n_j) = (size[i] as f64, size[j] as f64);

        let height = match method {
            LinkageMethod::WardD2 => d_ij.max(0.0).sqrt(),
            _ => d_ij,
        };
        merges.push(Merge {
            left: node[i],
            right: node[j],
            height,
            size: size[i] + size[j],
        });

        let mut k = head;
        while k != NONE {
            if k != i && k != j {
                let (p, q) = (idx(i, k), idx(j, k));
                d[p] = method.update(d[p], d[q], d_ij, n_i, n_j, size[k] as f64);
            }
            k = next[k];
        }

        // unlink j
        if prev[j] != NONE {
            next[prev[j]] = next[j];
        } else {
            head = next[j];
        }
        if next[j] != NONE {
            prev[next[j]] = prev[j];
        }
        nn[j] = NONE;
        nnd[j] = f64::INFINITY;
        size[i] += size[j];
        node[i] = n + step;

        let mut k = head;
        while k != NONE {
            if k < i {
                if nn[k] == i || nn[k] == j {
                    rescan(k, &d, &next, &mut nn, &mut nnd);
                } else {
                    let v = d[idx(k, i)];
                    if v < nnd[k] || (v == nnd[k] && i < nn[k]) {
                        nn[k] = i;
                        nnd[k] = v;
                    }
                }
            } else if k == i || (k < j && nn[k] == j) {
                rescan(k, &d, &next, &mut nn, &mut nnd);
            } else if k > j {
                break;
            }
            k = next[k];
        }
    }

    Dendrogram::new(n, method, merges)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    k: usize,
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Labels must be 1-based and cover `1..=k` with no gaps.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(LcError::Empty);
        }
        let k = *labels.iter().max().expect("nonempty");
        if labels.contains(&0) {
            return Err(LcError::Assignment("labels are 1-based".into()));
        }
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l - 1] += 1;
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(LcError::Assignment(format!("cluster {} is empty", c + 1)));
        }
        Ok(ClusterAssignment { k, labels, sizes })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Unit positions per cluster, indexed by `label - 1`, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (unit, &l) in self.labels.iter().enumerate() {
            out[l - 1].push(unit);
        }
        out
    }

    /// True when every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &ClusterAssignment) -> bool {
        if self.n() != coarser.n() {
            return false;
        }
        let mut parent = vec![0usize; self.k];
        for (&fine, &coarse) in self.labels.iter().zip(&coarser.labels) {
            match parent[fine - 1] {
                0 => parent[fine - 1] = coarse,
                p if p != coarse => return false,
                _ => {}
            }
        }
        true
    }
}

/// Undoes the last `k − 1` merges. Labels are numbered by first appearance
/// in unit order.
pub fn cut(tree: &Dendrogram, k: usize) -> Result<ClusterAssignment> {
    let n = tree.leaf_count;
    if k < 1 || k > n {
        return Err(LcError::KOutOfRange { k, n });
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    // representative leaf of every node
    let mut rep: Vec<usize> = (0..n).collect();
    rep.reserve(n);
    for m in &tree.merges[..n - k] {
        let a = find(&mut parent, rep[m.left]);
        let b = find(&mut parent, rep[m.right]);
        let root = a.min(b);
        parent[a.max(b)] = root;
        rep.push(root);
    }
    let mut label_of_root = vec![0usize; n];
    let mut next_label = 0;
    let mut labels = Vec::with_capacity(n);
    for unit in 0..n {
        let r = find(&mut parent, unit);
        if label_of_root[r] == 0 {
            next_label += 1;
            label_of_root[r] = next_label;
        }
        labels.push(label_of_root[r]);
    }
    ClusterAssignment::from_labels(labels)
}
