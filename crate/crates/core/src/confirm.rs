//! Confirm phase: is the observed LRC distribution distinguishable from LRC
//! distributions produced by meaningless clusterings with the same size
//! profile?
//!
//! The reference is a pooled null eCDF built from `R` random
//! pseudo-clusterings. The observed KS distance to that reference is then
//! ranked among `B` fresh pseudo-clusterings' distances to the same
//! reference. Because every distance is computed exactly on discrete
//! eCDFs, ties are handled by the simulation itself.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::dataset::AnalysisFrame;
use crate::error::{LcError, Result};
use crate::lrc::{block_spearman, ks_distance, Ecdf, KsDistance, LrcDistribution};
use crate::rng::{replicate_rng, Stream};

/// Uniformly random partition of `0..n` into blocks of the given sizes:
/// a random permutation sliced in order.
pub fn random_pseudo_clustering<R: Rng + ?Sized>(
    n: usize,
    sizes: &[usize],
    rng: &mut R,
) -> Result<ClusterAssignment> {
    let blocks = random_blocks(n, sizes, rng)?;
    let mut labels = vec![0usize; n];
    for (c, block) in blocks.iter().enumerate() {
        for &u in block {
            labels[u] = c + 1;
        }
    }
    ClusterAssignment::from_labels(labels)
}

fn check_sizes(n: usize, sizes: &[usize]) -> Result<()> {
    let sum: usize = sizes.iter().sum();
    if sum != n {
        return Err(LcError::SizeMismatch { sum, n });
    }
    if sizes.contains(&0) {
        return Err(LcError::Assignment("cluster sizes must be positive".into()));
    }
    Ok(())
}

fn random_blocks<R: Rng + ?Sized>(n: usize, sizes: &[usize], rng: &mut R) -> Result<Vec<Vec<usize>>> {
    check_sizes(n, sizes)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(perm[start..start + s].to_vec());
        start += s;
    }
    Ok(out)
}

/// Per-cluster `(lrc, size)` pairs of one pseudo-clustering; undefined
/// blocks are dropped.
fn pseudo_lrcs<R: Rng + ?Sized>(
    exposure: &[f64],
    outcome: &[f64],
    sizes: &[usize],
    rng: &mut R,
) -> Result<Vec<(f64, usize)>> {
    let blocks = random_blocks(exposure.len(), sizes, rng)?;
    Ok(blocks
        .iter()
        .filter_map(|rows| block_spearman(exposure, outcome, rows).map(|v| (v, rows.len())))
        .collect())
}

#[derive(Debug, Clone)]
pub struct NullEnsemble {
    pub replicate_count: usize,
    pub size_profile: Vec<usize>,
    /// Per-unit LRC values of every replicate, concatenated in replicate
    /// order.
    pub pooled_values: Vec<f64>,
    pub seed: u64,
    ecdf: Ecdf,
}

impl NullEnsemble {
    pub fn ecdf(&self) -> &Ecdf {
        &self.ecdf
    }
}

pub fn build_null_ensemble(
    frame: &AnalysisFrame,
    sizes: &[usize],
    exposure: &str,
    outcome: &str,
    replicates: usize,
    seed: u64,
) -> Result<NullEnsemble> {
    let x = frame.column(exposure)?;
    let y = frame.column(outcome)?;
    null_ensemble_from_columns(&x, &y, sizes, replicates, seed)
}

pub fn null_ensemble_from_columns(
    exposure: &[f64],
    outcome: &[f64],
    sizes: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<NullEnsemble> {
    if replicates < 1 {
        return Err(LcError::Parameter("null ensemble needs R >= 1".into()));
    }
    if exposure.len() != outcome.len() {
        return Err(LcError::LengthMismatch(exposure.len(), outcome.len()));
    }
    check_sizes(exposure.len(), sizes)?;
    let per_replicate: Vec<Vec<(f64, usize)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, Stream::NullEnsemble, r as u64);
            pseudo_lrcs(exposure, outcome, sizes, &mut rng)
        })
        .collect::<Result<_>>()?;
    let pooled_values: Vec<f64> = per_replicate
        .iter()
        .flat_map(|rep| rep.iter().flat_map(|&(v, s)| std::iter::repeat_n(v, s)))
        .collect();
    let ecdf = Ecdf::from_weighted(per_replicate.into_iter().flatten())?;
    Ok(NullEnsemble {
        replicate_count: replicates,
        size_profile: sizes.to_vec(),
        pooled_values,
        seed,
        ecdf,
    })
}

/// KS distance between the observed per-unit eCDF and the pooled null.
pub fn confirm(observed: &LrcDistribution, null: &NullEnsemble) -> Result<KsDistance> {
    Ok(ks_distance(&observed.ecdf()?, &null.ecdf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmResult {
    pub d_observed: f64,
    pub d_location: f64,
    pub null_d_sample: Vec<f64>,
    pub p_value: f64,
    pub r_used: usize,
    pub b_used: usize,
    pub seed: u64,
}

impl ConfirmResult {
    pub fn max_null_d(&self) -> f64 {
        self.null_d_sample.iter().copied().fold(0.0, f64::max)
    }
}

/// `(1 + #{null ≥ observed}) / (B + 1)`, compared exactly.
pub fn permutation_p_value(observed: &KsDistance, null: &[KsDistance]) -> f64 {
    let hits = null.iter().filter(|d| d.ge(observed)).count();
    (1 + hits) as f64 / (null.len() + 1) as f64
}

#[allow(clippy::too_many_arguments)]
pub fn ksperm(
    frame: &AnalysisFrame,
    sizes: &[usize],
    exposure: &str,
    outcome: &str,
    null: &NullEnsemble,
    observed: &KsDistance,
    permutations: usize,
    seed: u64,
) -> Result<ConfirmResult> {
    let x = frame.column(exposure)?;
    let y = frame.column(outcome)?;
    ksperm_from_columns(&x, &y, sizes, null, observed, permutations, seed)
}

pub fn ksperm_from_columns(
    exposure: &[f64],
    outcome: &[f64],
    sizes: &[usize],
    null: &NullEnsemble,
    observed: &KsDistance,
    permutations: usize,
    seed: u64,
) -> Result<ConfirmResult> {
    let null_d = permutation_distances(exposure, outcome, sizes, null, permutations, seed)?;
    Ok(ConfirmResult {
        d_observed: observed.d,
        d_location: observed.at,
        p_value: permutation_p_value(observed, &null_d),
        null_d_sample: null_d.iter().map(|d| d.d).collect(),
        r_used: null.replicate_count,
        b_used: permutations,
        seed,
    })
}

/// Distances of `B` fresh pseudo-clusterings to the pooled null eCDF.
pub fn permutation_distances(
    exposure: &[f64],
    outcome: &[f64],
    sizes: &[usize],
    null: &NullEnsemble,
    permutations: usize,
    seed: u64,
) -> Result<Vec<KsDistance>> {
    if permutations < 1 {
        return Err(LcError::Parameter("ksperm needs B >= 1".into()));
    }
    if exposure.len() != outcome.len() {
        return Err(LcError::LengthMismatch(exposure.len(), outcome.len()));
    }
    (0..permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, Stream::Permutation, b as u64);
            let pairs = pseudo_lrcs(exposure, outcome, sizes, &mut rng)?;
            Ok(ks_distance(&Ecdf::from_weighted(pairs)?, &null.ecdf))
        })
        .collect()
}
