//! Whitened principal coordinates of the confounders.
//!
//! Squared Euclidean distance between two rows of [`Embedding::scores`] is
//! the Mahalanobis distance between the units in the original confounder
//! space (sample covariance), restricted to the retained components.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::dataset::AnalysisFrame;
use crate::error::{LcError, Result};

/// Default relative eigenvalue cut-off (fraction of the largest eigenvalue).
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Embedding {
    pub variables: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Orthonormal eigenvectors of the correlation matrix, one per column,
    /// in descending eigenvalue order (all components, retained or not).
    pub axes: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Units × retained components.
    pub scores: DMatrix<f64>,
}

impl Embedding {
    pub fn n_units(&self) -> usize {
        self.scores.nrows()
    }

    pub fn retained(&self) -> usize {
        self.scores.ncols()
    }
}

pub fn principal_coordinates(
    frame: &AnalysisFrame,
    confounders: &[&str],
    tolerance: f64,
) -> Result<Embedding> {
    let columns = confounders
        .iter()
        .map(|c| frame.column(c))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = confounders.iter().map(|s| s.to_string()).collect();
    principal_coordinates_from_columns(&names, &columns, tolerance)
}

pub fn principal_coordinates_from_columns(
    names: &[String],
    columns: &[Vec<f64>],
    tolerance: f64,
) -> Result<Embedding> {
    let p = columns.len();
    if p < 2 {
        return Err(LcError::TooFew { needed: 2, got: p });
    }
    let n = columns[0].len();
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(LcError::LengthMismatch(c.len(), n));
    }
    if n < 3 {
        return Err(LcError::TooFew { needed: 3, got: n });
    }
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(LcError::Parameter(format!("tolerance {tolerance}")));
    }

    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let mut z = DMatrix::<f64>::zeros(n, p);
    for (j, col) in columns.iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        if !(sd > 0.0) || sd <= 1e-14 * mean.abs() {
            return Err(LcError::ConstantVariable(name));
        }
        for (i, v) in col.iter().enumerate() {
            z[(i, j)] = (v - mean) / sd;
        }
        means.push(mean);
        scales.push(sd);
    }

    let mut corr = z.transpose() * &z / (n - 1) as f64;
    corr = (&corr + corr.transpose()) * 0.5;
    if corr.iter().any(|v| !v.is_finite()) {
        return Err(LcError::Eigen("non-finite correlation matrix".into()));
    }
    let eig = SymmetricEigen::try_new(corr, f64::EPSILON, 10_000)
        .ok_or_else(|| LcError::Eigen("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let mut axes = DMatrix::<f64>::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        let mut pivot = 0;
        for r in 1..p {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        if v[pivot] < 0.0 {
            v = -v;
        }
        axes.set_column(dst, &v);
    }

    let cutoff = tolerance * eigenvalues[0];
    let retained = eigenvalues.iter().take_while(|&&l| l > cutoff).count();
    if retained == 0 {
        return Err(LcError::Eigen("no component above tolerance".into()));
    }
    let mut scores = z * axes.columns(0, retained);
    for (k, lambda) in eigenvalues.iter().take(retained).enumerate() {
        let s = lambda.sqrt();
        scores.column_mut(k).iter_mut().for_each(|v| *v /= s);
    }

    Ok(Embedding {
        variables: names.to_vec(),
        means,
        scales,
        axes,
        eigenvalues,
        scores,
    })
}

/// Upper-triangle distances stored row by row: (0,1), (0,2), ..., (n-2,n-1).
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CondensedMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(LcError::TooFew { needed: 2, got: n });
        }
        let expected = n * (n - 1) / 2;
        if data.len() != expected {
            return Err(LcError::LengthMismatch(data.len(), expected));
        }
        Ok(CondensedMatrix { n, data })
    }

    /// Builds from a full square matrix given as rows; only the upper
    /// triangle is read.
    pub fn from_square(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(LcError::LengthMismatch(row.len(), n));
            }
            data.extend_from_slice(&row[i + 1..]);
        }
        CondensedMatrix::new(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    /// Symmetric accessor; zero on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.data[self.index(i, j)],
            std::cmp::Ordering::Greater => self.data[self.index(j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }
}

/// Euclidean distances between embedded units, computed row-parallel.
pub fn pairwise_distances(embedding: &Embedding) -> Result<CondensedMatrix> {
    euclidean_distances(&embedding.scores)
}

pub fn euclidean_distances(points: &DMatrix<f64>) -> Result<CondensedMatrix> {
    let n = points.nrows();
    if n < 2 {
        return Err(LcError::TooFew { needed: 2, got: n });
    }
    let d = points.ncols();
    // row-major copy so each row is contiguous
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|k| points[(i, k)]).collect())
        .collect();
    let data: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &rows[i];
            let rows = &rows;
            (i + 1..n).map(move |j| {
                a.iter()
                    .zip(&rows[j])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    CondensedMatrix::new(n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr_free::normal;

    /// Box-Muller; kept local so tests don't need an extra distribution crate.
    mod rand_distr_free {
        use rand::Rng;
        pub fn normal<R: Rng>(rng: &mut R) -> f64 {
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    fn random_columns(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| normal(&mut rng)).collect())
            .collect();
        // mix to induce correlation and unequal scales
        (0..p)
            .map(|j| {
                (0..n)
                    .map(|i| {
                        (0..=j).map(|k| base[k][i] * (1.0 + k as f64)).sum::<f64>() * (j as f64 + 0.5)
                            + 10.0 * j as f64
                    })
                    .collect()
            })
            .collect()
    }

    /// (x−y)ᵀ Σ⁻¹ (x−y) with Σ the sample covariance, inverted by LU.
    fn mahalanobis_oracle(columns: &[Vec<f64>]) -> Vec<f64> {
        let p = columns.len();
        let n = columns[0].len();
        let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] = (0..n)
                    .map(|i| (columns[a][i] - means[a]) * (columns[b][i] - means[b]))
                    .sum::<f64>()
                    / (n - 1) as f64;
            }
        }
        let inv = cov.lu().try_inverse().unwrap();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = nalgebra::DVector::from_iterator(p, (0..p).map(|k| columns[k][i] - columns[k][j]));
                out.push((d.transpose() * &inv * &d)[(0, 0)]);
            }
        }
        out
    }

    #[test]
    fn perfectly_correlated_pair_keeps_one_component() {
        let a: Vec<f64> = (0..20).map(|i| i as f64 * 0.7 + 1.0).collect();
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v - 2.0).collect();
        let e = principal_coordinates_from_columns(&names(2), &[a, b], DEFAULT_TOLERANCE).unwrap();
        assert_eq!(e.retained(), 1);
        assert!((e.eigenvalues[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn independent_normals_have_unit_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..20_000).map(|_| normal(&mut rng)).collect())
            .collect();
        let e = principal_coordinates_from_columns(&names(3), &cols, DEFAULT_TOLERANCE).unwrap();
        for l in &e.eigenvalues {
            assert!((l - 1.0).abs() < 0.05, "{l}");
        }
    }

    #[test]
    fn embedding_invariants() {
        let cols = random_columns(3, 50, 4);
        let e = principal_coordinates_from_columns(&names(4), &cols, DEFAULT_TOLERANCE).unwrap();
        let gram = e.axes.transpose() * &e.axes;
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((gram[(a, b)] - want).abs() < 1e-10);
            }
        }
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for k in 0..e.retained() {
            let col = e.scores.column(k);
            let m = col.mean();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 49.0;
            assert!((var - 1.0).abs() < 1e-8);
        }
        let total: f64 = e.eigenvalues.iter().sum();
        assert!((total - 4.0).abs() < 1e-8);
        for j in 0..4 {
            let col = e.axes.column(j);
            let pivot = col.iter().cloned().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn errors() {
        let a = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            principal_coordinates_from_columns(&names(2), &[a.clone(), vec![5.0; 3]], DEFAULT_TOLERANCE),
            Err(LcError::ConstantVariable(_))
        ));
        assert!(principal_coordinates_from_columns(&names(1), &[a.clone()], DEFAULT_TOLERANCE).is_err());
        assert!(principal_coordinates_from_columns(
            &names(2),
            &[vec![1.0, 2.0], vec![2.0, 1.0]],
            DEFAULT_TOLERANCE
        )
        .is_err());
    }

    #[test]
    fn duplicate_units_have_zero_distance() {
        let cols = vec![vec![1.0, 2.0, 1.0, 5.0], vec![3.0, 0.5, 3.0, 2.0]];
        let e = principal_coordinates_from_columns(&names(2), &cols, DEFAULT_TOLERANCE).unwrap();
        let d = pairwise_distances(&e).unwrap();
        assert_eq!(d.get(0, 2), 0.0);
        assert_eq!(d.as_slice().len(), 6);
    }

    #[test]
    fn triangle_inequality_and_brute_force() {
        let cols = random_columns(11, 20, 3);
        let e = principal_coordinates_from_columns(&names(3), &cols, DEFAULT_TOLERANCE).unwrap();
        let d = pairwise_distances(&e).unwrap();
        let n = 20;
        for i in 0..n {
            for j in 0..n {
                let naive = (0..e.retained())
                    .map(|k| (e.scores[(i, k)] - e.scores[(j, k)]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d.get(i, j) - naive).abs() < 1e-10);
                for k in 0..n {
                    assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn condensed_indexing() {
        let sq = vec![
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 4.0, 5.0],
            vec![2.0, 4.0, 0.0, 6.0],
            vec![3.0, 5.0, 6.0, 0.0],
        ];
        let c = CondensedMatrix::from_square(&sq).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c.get(i, j), sq[i][j]);
            }
        }
    }

    proptest! {
        #[test]
        fn squared_distance_is_mahalanobis(seed in any::<u64>()) {
            let cols = random_columns(seed, 10, 3);
            let e = principal_coordinates_from_columns(&names(3), &cols, DEFAULT_TOLERANCE).unwrap();
            prop_assert_eq!(e.retained(), 3);
            let d = pairwise_distances(&e).unwrap();
            let oracle = mahalanobis_oracle(&cols);
            for (got, want) in d.as_slice().iter().zip(&oracle) {
                prop_assert!((got * got - want).abs() < 1e-8 * want.max(1.0));
            }
        }

        #[test]
        fn affine_and_column_order_invariance(seed in any::<u64>(), a in prop::sample::select(vec![-4.0, -0.5, 0.01, 3.0, 1e3]), b in -100.0f64..100.0) {
            let cols = random_columns(seed, 15, 3);
            let base = pairwise_distances(&principal_coordinates_from_columns(&names(3), &cols, DEFAULT_TOLERANCE).unwrap()).unwrap();
            let mut scaled = cols.clone();
            scaled[1] = scaled[1].iter().map(|v| a * v + b).collect();
            let d2 = pairwise_distances(&principal_coordinates_from_columns(&names(3), &scaled, DEFAULT_TOLERANCE).unwrap()).unwrap();
            let permuted = vec![cols[2].clone(), cols[0].clone(), cols[1].clone()];
            let d3 = pairwise_distances(&principal_coordinates_from_columns(&names(3), &permuted, DEFAULT_TOLERANCE).unwrap()).unwrap();
            for ((x, y), z) in base.as_slice().iter().zip(d2.as_slice()).zip(d3.as_slice()) {
                prop_assert!((x - y).abs() < 1e-8);
                prop_assert!((x - z).abs() < 1e-10 * x.max(1.0));
            }
        }
    }
}
