//! Local rank correlations: within-cluster Spearman correlation between
//! exposure and outcome, expanded so every unit carries its cluster's value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::dataset::{pearson_unchecked, AnalysisFrame};
use crate::error::{LcError, Result};

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &o in &order[start..end] {
            ranks[o] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of midranks. `Ok(None)` when fewer than two
/// observations or either rank vector is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(LcError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Ok(None);
    }
    Ok(pearson_unchecked(&midranks(x), &midranks(y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLrc {
    pub cluster_id: usize,
    /// `None` for clusters whose Spearman is undefined.
    pub lrc: Option<f64>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrcDistribution {
    pub per_cluster: Vec<ClusterLrc>,
    /// Defined values only, one per unit, in frame order.
    pub per_unit: Vec<f64>,
    /// Aligned with the frame; `None` for units in undefined clusters.
    pub unit_lrc: Vec<Option<f64>>,
    pub k: usize,
    pub n_undefined: usize,
}

impl LrcDistribution {
    /// Empirical CDF of the per-unit values.
    pub fn ecdf(&self) -> Result<Ecdf> {
        Ecdf::from_weighted(
            self.per_cluster
                .iter()
                .filter_map(|c| c.lrc.map(|v| (v, c.size))),
        )
    }

    pub fn negative_clusters(&self) -> usize {
        self.per_cluster
            .iter()
            .filter(|c| c.lrc.is_some_and(|v| v < 0.0))
            .count()
    }

    pub fn negative_units(&self) -> usize {
        self.per_unit.iter().filter(|&&v| v < 0.0).count()
    }
}

pub fn lrc_distribution(
    frame: &AnalysisFrame,
    assignment: &ClusterAssignment,
    exposure: &str,
    outcome: &str,
) -> Result<LrcDistribution> {
    let x = frame.column(exposure)?;
    let y = frame.column(outcome)?;
    lrc_from_columns(&x, &y, assignment)
}

pub fn lrc_from_columns(
    exposure: &[f64],
    outcome: &[f64],
    assignment: &ClusterAssignment,
) -> Result<LrcDistribution> {
    if exposure.len() != outcome.len() {
        return Err(LcError::LengthMismatch(exposure.len(), outcome.len()));
    }
    if assignment.n() != exposure.len() {
        return Err(LcError::LengthMismatch(assignment.n(), exposure.len()));
    }
    let members = assignment.members();
    let per_cluster: Vec<ClusterLrc> = members
        .par_iter()
        .enumerate()
        .map(|(c, rows)| {
            let lrc = block_spearman(exposure, outcome, rows);
            ClusterLrc {
                cluster_id: c + 1,
                lrc,
                size: rows.len(),
            }
        })
        .collect();
    let unit_lrc: Vec<Option<f64>> = assignment
        .labels()
        .iter()
        .map(|&l| per_cluster[l - 1].lrc)
        .collect();
    let per_unit: Vec<f64> = unit_lrc.iter().flatten().copied().collect();
    let n_undefined = unit_lrc.len() - per_unit.len();
    Ok(LrcDistribution {
        per_cluster,
        per_unit,
        unit_lrc,
        k: assignment.k(),
        n_undefined,
    })
}

pub(crate) fn block_spearman(exposure: &[f64], outcome: &[f64], rows: &[usize]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let x: Vec<f64> = rows.iter().map(|&r| exposure[r]).collect();
    let y: Vec<f64> = rows.iter().map(|&r| outcome[r]).collect();
    pearson_unchecked(&midranks(&x), &midranks(&y))
}

/// Right-continuous empirical CDF over distinct support points.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    support: Vec<f64>,
    cum_counts: Vec<u64>,
}

impl Ecdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        Self::from_weighted(values.iter().map(|&v| (v, 1)))
    }

    /// Builds from `(value, multiplicity)` pairs; zero multiplicities are
    /// ignored.
    pub fn from_weighted<I: IntoIterator<Item = (f64, usize)>>(pairs: I) -> Result<Self> {
        let mut pairs: Vec<(f64, usize)> = pairs.into_iter().filter(|p| p.1 > 0).collect();
        if pairs.is_empty() {
            return Err(LcError::Empty);
        }
        if pairs.iter().any(|p| !p.0.is_finite()) {
            return Err(LcError::Parameter("eCDF values must be finite".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::new();
        let mut cum_counts: Vec<u64> = Vec::new();
        let mut total = 0u64;
        for (v, w) in pairs {
            total += w as u64;
            // -0.0 and 0.0 are one support point
            if support.last() == Some(&v) {
                *cum_counts.last_mut().expect("parallel") = total;
            } else {
                support.push(v);
                cum_counts.push(total);
            }
        }
        Ok(Ecdf {
            support,
            cum_counts,
        })
    }

    pub fn n(&self) -> u64 {
        *self.cum_counts.last().expect("nonempty")
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.cum_counts.iter().map(|&c| c as f64 / n).collect()
    }

    fn count_le(&self, x: f64) -> u64 {
        let idx = self.support.partition_point(|&s| s <= x);
        if idx == 0 {
            0
        } else {
            self.cum_counts[idx - 1]
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.n() as f64
    }
}

/// Kolmogorov-Smirnov distance with its location. The gap is kept as an
/// exact fraction so comparisons between distances never depend on
/// rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsDistance {
    pub d: f64,
    pub at: f64,
    #[serde(skip)]
    num: u128,
    #[serde(skip)]
    den: u128,
}

impl KsDistance {
    /// `self.d >= other.d`, compared exactly.
    pub fn ge(&self, other: &KsDistance) -> bool {
        self.num * other.den >= other.num * self.den
    }

    pub fn as_fraction(&self) -> (u128, u128) {
        (self.num, self.den)
    }
}

/// Largest |Fa − Fb| over the pooled support; the smallest point attaining
/// it is reported.
pub fn ks_distance(a: &Ecdf, b: &Ecdf) -> KsDistance {
    let (na, nb) = (a.n() as u128, b.n() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best_num = 0u128;
    let mut best_at = a.support[0].min(b.support[0]);
    let (mut ca, mut cb) = (0u128, 0u128);
    while i < a.support.len() || j < b.support.len() {
        let t = match (a.support.get(i), b.support.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if a.support.get(i) == Some(&t) {
            ca = a.cum_counts[i] as u128;
            i += 1;
        }
        if b.support.get(j) == Some(&t) {
            cb = b.cum_counts[j] as u128;
            j += 1;
        }
        let gap = (ca * nb).abs_diff(cb * na);
        if gap > best_num {
            best_num = gap;
            best_at = t;
        }
    }
    let den = na * nb;
    KsDistance {
        d: best_num as f64 / den as f64,
        at: best_at,
        num: best_num,
        den,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pearson on ranks computed by counting: rank(v) = #(< v) + (#(== v) + 1) / 2.
    fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|a| {
                    let less = v.iter().filter(|b| *b < a).count() as f64;
                    let eq = v.iter().filter(|b| *b == a).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|a| (a - my).powi(2)).sum();
        (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
    }

    #[test]
    fn spearman_examples() {
        let up = [1.0, 2.0, 5.0, 9.0];
        assert_eq!(spearman(&up, &[0.1, 0.2, 0.3, 7.0]).unwrap(), Some(1.0));
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap().unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        // ranks [1.5, 1.5, 3] vs [1, 2, 3]: cov 1.5, var 1.5 and 2
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap().unwrap();
        assert!((r - 1.5 / (1.5f64 * 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), None);
        assert_eq!(spearman(&[1.0], &[1.0]).unwrap(), None);
        assert!(spearman(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0, 3.0]), vec![4.0, 1.0, 4.0, 2.0, 4.0]);
    }

    #[test]
    fn planted_clusters() {
        let x = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 3.0, 2.0, 1.0];
        let a = ClusterAssignment::from_labels(vec![1, 1, 1, 2, 2, 2]).unwrap();
        let dist = lrc_from_columns(&x, &y, &a).unwrap();
        assert_eq!(dist.per_cluster[0].lrc, Some(1.0));
        assert_eq!(dist.per_cluster[1].lrc, Some(-1.0));
        assert_eq!(dist.per_unit.len(), 6);
        assert_eq!(dist.negative_clusters(), 1);
    }

    #[test]
    fn undefined_clusters_are_excluded() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 5.0];
        let y = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0];
        let a = ClusterAssignment::from_labels(vec![1, 1, 1, 2, 3, 3]).unwrap();
        let dist = lrc_from_columns(&x, &y, &a).unwrap();
        assert_eq!(dist.per_cluster[1].lrc, None);
        assert_eq!(dist.per_cluster[2].lrc, None);
        assert_eq!(dist.n_undefined, 3);
        assert_eq!(dist.per_unit, vec![1.0, 1.0, 1.0]);
        assert_eq!(dist.unit_lrc[3], None);
    }

    #[test]
    fn k1_equals_global_spearman_exactly() {
        let x = [0.3, 1.2, 0.7, 2.2, 1.9, 0.1, 1.0];
        let y = [5.0, 3.0, 4.5, 1.0, 2.0, 6.0, 3.0];
        let a = ClusterAssignment::from_labels(vec![1; 7]).unwrap();
        let dist = lrc_from_columns(&x, &y, &a).unwrap();
        assert_eq!(dist.per_cluster[0].lrc, spearman(&x, &y).unwrap());
    }

    #[test]
    fn merging_reverses_sign() {
        // two clusters, each internally decreasing, shifted up-and-right
        let x = [1.0, 2.0, 3.0, 11.0, 12.0, 13.0];
        let y = [3.0, 2.0, 1.0, 13.0, 12.0, 11.0];
        let split = ClusterAssignment::from_labels(vec![1, 1, 1, 2, 2, 2]).unwrap();
        let d = lrc_from_columns(&x, &y, &split).unwrap();
        assert!(d.per_cluster.iter().all(|c| c.lrc == Some(-1.0)));
        let merged = spearman(&x, &y).unwrap().unwrap();
        assert!(merged > 0.0);
    }

    #[test]
    fn ecdf_examples() {
        let e = Ecdf::new(&[2.5]).unwrap();
        assert_eq!(e.eval(2.4), 0.0);
        assert_eq!(e.eval(2.5), 1.0);
        let e = Ecdf::new(&[1.0, 1.0, 2.0]).unwrap();
        assert!((e.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.eval(2.0), 1.0);
        assert_eq!(e.eval(0.0), 0.0);
        assert_eq!(e.eval(100.0), 1.0);
        assert!(matches!(Ecdf::new(&[]), Err(LcError::Empty)));
        assert!(Ecdf::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn ks_examples() {
        let a = Ecdf::new(&[1.0, 2.0, 3.0]).unwrap();
        let b = Ecdf::new(&[2.0, 3.0, 4.0]).unwrap();
        let k = ks_distance(&a, &b);
        assert!((k.d - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(k.at, 1.0);
        let z = ks_distance(&a, &a);
        assert_eq!(z.d, 0.0);
        let far = ks_distance(&a, &Ecdf::new(&[10.0]).unwrap());
        assert_eq!(far.d, 1.0);
    }

    #[test]
    fn weighted_ecdf_matches_expanded() {
        let a = ClusterAssignment::from_labels(vec![1, 2, 2, 1, 3, 3, 3]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 6.0];
        let y = [1.0, 5.0, 4.0, 2.0, 1.0, 2.0, 3.0];
        let d = lrc_from_columns(&x, &y, &a).unwrap();
        assert_eq!(d.ecdf().unwrap(), Ecdf::new(&d.per_unit).unwrap());
    }

    fn small_vec() -> impl Strategy<Value = Vec<f64>> {
        // coarse grid so ties are common
        prop::collection::vec((-8i32..8).prop_map(|v| v as f64 * 0.5), 1..25)
    }

    proptest! {
        #[test]
        fn spearman_matches_oracle(pairs in prop::collection::vec(((-6i32..6), (-6i32..6)), 2..30)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match (spearman(&x, &y).unwrap(), spearman_oracle(&x, &y)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-10),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn spearman_invariances(pairs in prop::collection::vec(((-50.0f64..50.0), (-50.0f64..50.0)), 3..30)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = spearman(&x, &y).unwrap().unwrap();
            let tx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            prop_assert_eq!(spearman(&tx, &y).unwrap().unwrap(), r);
            prop_assert_eq!(spearman(&y, &x).unwrap().unwrap(), r);
            let ny: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((spearman(&x, &ny).unwrap().unwrap() + r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }

        #[test]
        fn ecdf_matches_counting(values in small_vec()) {
            let e = Ecdf::new(&values).unwrap();
            let n = values.len() as f64;
            for &p in e.support() {
                let naive = values.iter().filter(|&&v| v <= p).count() as f64 / n;
                prop_assert!((e.eval(p) - naive).abs() < 1e-10);
            }
            let probs = e.probabilities();
            prop_assert!(probs.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*probs.last().unwrap(), 1.0);
        }

        #[test]
        fn ks_matches_brute_force(a in small_vec(), b in small_vec()) {
            let (ea, eb) = (Ecdf::new(&a).unwrap(), Ecdf::new(&b).unwrap());
            let k = ks_distance(&ea, &eb);
            let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
            pooled.sort_by(f64::total_cmp);
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let mut best = (0.0f64, pooled[0]);
            for &t in &pooled {
                let fa = a.iter().filter(|&&v| v <= t).count() as f64 / na;
                let fb = b.iter().filter(|&&v| v <= t).count() as f64 / nb;
                if (fa - fb).abs() > best.0 + 1e-12 {
                    best = ((fa - fb).abs(), t);
                }
            }
            prop_assert!((k.d - best.0).abs() < 1e-10);
            prop_assert_eq!(k.at, best.1);
            let rev = ks_distance(&eb, &ea);
            prop_assert_eq!(rev.d, k.d);
            prop_assert!(k.d <= 1.0);
        }
    }
}
