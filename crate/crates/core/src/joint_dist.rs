//! Design weight vectors and the estimated null correlation of the pairwise
//! statistics.
//!
//! Under the global null each statistic is asymptotically a linear form
//! `c' t(Y)` in independent per-observation terms, with `c = (I - H) x0`
//! restricted to the pair's rows. Two statistics are therefore correlated only
//! through the observations of groups they share, and the correlation is the
//! normalized inner product of the `c` entries over those shared rows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::alignment::{PairContext, PairDesign};
use crate::error::{Error, Result};

/// Smallest eigenvalue tolerated before a matrix is rejected as not PSD.
pub const PSD_HARD_LIMIT: f64 = -1e-8;
/// Eigenvalues above this are treated as rounding noise, not indefiniteness.
pub const PSD_NOISE: f64 = -1e-12;

const C_VECTOR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CVectors {
    pub pair: (usize, usize),
    /// Entries for the first group's observations.
    pub first: DVector<f64>,
    /// Entries for the second group's observations.
    pub second: DVector<f64>,
    /// `(I - H) x0`, i.e. `first` followed by `second`.
    pub full: DVector<f64>,
}

impl CVectors {
    /// Entries belonging to `group`, if it is one of the pair's groups.
    pub fn part(&self, group: usize) -> Option<&DVector<f64>> {
        if group == self.pair.0 {
            Some(&self.first)
        } else if group == self.pair.1 {
            Some(&self.second)
        } else {
            None
        }
    }
}

/// Weight vectors of one pair, computed group by group and checked against
/// the projection identity `c = (I - H) x0`.
pub fn compute_c_vectors(design: &PairDesign) -> Result<CVectors> {
    let n1 = design.n_first;
    let n2 = design.n_second;
    let nt = (n1 + n2) as f64;
    let mut first = DVector::from_element(n1, n2 as f64 / nt);
    let mut second = DVector::from_element(n2, -(n1 as f64) / nt);
    if let Some(b) = design.gram_solve(&(design.x1.transpose() * &design.x0)) {
        first -= design.x1.rows(0, n1) * &b;
        second -= design.x1.rows(n1, n2) * &b;
    }
    let full = design.x0_residual.clone();
    let scale = full.amax().max(1.0);
    let gap = first
        .iter()
        .chain(second.iter())
        .zip(full.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > C_VECTOR_TOLERANCE * scale {
        return Err(Error::Numerical(format!(
            "pair ({}, {}): weight vector forms disagree by {gap:e}",
            design.first, design.second
        )));
    }
    Ok(CVectors {
        pair: (design.first, design.second),
        first,
        second,
        full,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    /// Pair of each row/column.
    pub labels: Vec<(usize, usize)>,
    #[serde(with = "row_major")]
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
    /// Set when eigenvalue clipping changed the matrix.
    pub psd_repaired: bool,
}

mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(serde::de::Error::custom(
                "correlation matrix must be square",
            ));
        }
        Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
    }
}

impl CorrelationMatrix {
    /// Validate a user-supplied matrix (unit diagonal, symmetric, PSD).
    pub fn from_matrix(matrix: DMatrix<f64>, labels: Vec<(usize, usize)>) -> Result<Self> {
        let k = matrix.nrows();
        if k == 0 || matrix.ncols() != k {
            return Err(Error::InvalidConfig(
                "correlation matrix must be square and non-empty".into(),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "correlation matrix has non-finite entries".into(),
            ));
        }
        for i in 0..k {
            if (matrix[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(
                    "correlation matrix diagonal must be 1".into(),
                ));
            }
            for j in 0..k {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12
                    || matrix[(i, j)].abs() > 1.0 + 1e-12
                {
                    return Err(Error::InvalidConfig(
                        "correlation matrix must be symmetric with entries in [-1, 1]".into(),
                    ));
                }
            }
        }
        let labels = if labels.len() == k {
            labels
        } else {
            (0..k).map(|i| (i, i)).collect()
        };
        finish(matrix, labels)
    }

    pub fn identity(k: usize) -> Self {
        CorrelationMatrix {
            labels: (0..k).map(|i| (i, i)).collect(),
            matrix: DMatrix::identity(k, k),
            min_eigenvalue: 1.0,
            psd_repaired: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `L` with `L L' = C`, from the eigendecomposition so that singular
    /// (rank-deficient) matrices are handled.
    pub fn factor(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
    }

    /// Reorder rows and columns: entry `(a, b)` of the result is `(perm[a], perm[b])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.dim();
        CorrelationMatrix {
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            matrix: DMatrix::from_fn(k, k, |a, b| self.matrix[(perm[a], perm[b])]),
            ..self.clone()
        }
    }
}

fn finish(mut matrix: DMatrix<f64>, labels: Vec<(usize, usize)>) -> Result<CorrelationMatrix> {
    let k = matrix.nrows();
    let eig = SymmetricEigen::new(matrix.clone());
    let min = eig.eigenvalues.min();
    if min < PSD_HARD_LIMIT {
        return Err(Error::NotPsd(min));
    }
    let mut repaired = false;
    if min < PSD_NOISE {
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        let v = &eig.eigenvectors;
        let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
        let d = DVector::from_fn(k, |i, _| rebuilt[(i, i)].sqrt());
        matrix = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else {
                (rebuilt[(i, j)] / (d[i] * d[j])).clamp(-1.0, 1.0)
            }
        });
        repaired = true;
    }
    Ok(CorrelationMatrix {
        labels,
        matrix,
        min_eigenvalue: min,
        psd_repaired: repaired,
    })
}

/// Correlation of statistics from the given pair designs.
pub fn correlation_matrix(designs: &[&PairDesign]) -> Result<CorrelationMatrix> {
    let cs = designs
        .iter()
        .map(|d| compute_c_vectors(d))
        .collect::<Result<Vec<_>>>()?;
    let norms: Vec<f64> = cs.iter().map(|c| c.full.norm_squared()).collect();
    let k = cs.len();
    let mut m = DMatrix::identity(k, k);
    for a in 0..k {
        for b in a + 1..k {
            let (i, j) = cs[a].pair;
            let cov: f64 = [i, j]
                .into_iter()
                .filter_map(|grp| Some(cs[a].part(grp)?.dot(cs[b].part(grp)?)))
                .sum();
            let rho = cov / (norms[a] * norms[b]).sqrt();
            m[(a, b)] = rho;
            m[(b, a)] = rho;
        }
    }
    finish(m, cs.iter().map(|c| c.pair).collect())
}

/// Correlation of the all-pairs statistic vector.
pub fn correlation_all_pairs(contexts: &[PairContext]) -> Result<CorrelationMatrix> {
    let groups: std::collections::BTreeSet<usize> = contexts
        .iter()
        .flat_map(|c| [c.design.first, c.design.second])
        .collect();
    let g = groups.len();
    if contexts.len() != g * (g.saturating_sub(1)) / 2 {
        return Err(Error::InvalidConfig(format!(
            "expected all {} pairs of {g} groups, got {}",
            g * g.saturating_sub(1) / 2,
            contexts.len()
        )));
    }
    let designs: Vec<&PairDesign> = contexts.iter().map(|c| c.design.as_ref()).collect();
    correlation_matrix(&designs)
}

/// Correlation of the treatment-versus-control statistic vector.
pub fn correlation_control(contexts: &[PairContext]) -> Result<CorrelationMatrix> {
    let Some(first) = contexts.first() else {
        return Err(Error::InvalidConfig("no control comparisons".into()));
    };
    let control = first.design.second;
    if contexts.iter().any(|c| c.design.second != control) {
        return Err(Error::InvalidConfig(
            "all comparisons must share the control group".into(),
        ));
    }
    let designs: Vec<&PairDesign> = contexts.iter().map(|c| c.design.as_ref()).collect();
    correlation_matrix(&designs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{family_pairs, ComparisonFamily, Dataset};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn designs(ds: &Dataset, family: ComparisonFamily) -> Vec<PairDesign> {
        family_pairs(ds.num_groups(), family)
            .into_iter()
            .map(|(i, j)| PairDesign::new(ds, i, j).unwrap())
            .collect()
    }

    fn balanced(g: usize, n: usize) -> Dataset {
        let samples: Vec<Vec<f64>> = (0..g)
            .map(|i| (0..n).map(|j| (i * n + j) as f64).collect())
            .collect();
        Dataset::one_way(&samples).unwrap()
    }

    fn random_ancova(seed: u64, sizes: &[usize], p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = sizes.iter().sum();
        let groups: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &k)| std::iter::repeat_n(i, k))
            .collect();
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        Dataset::from_indices(vec![0.0; n], groups, x).unwrap()
    }

    /// Entry-wise formulas from the hat matrix entries.
    fn scalar_c(d: &PairDesign) -> Vec<f64> {
        let n1 = d.n_first;
        let n2 = d.n_second;
        let nt = (n1 + n2) as f64;
        let h = &d.hat;
        let mut out = Vec::new();
        for j in 0..n1 {
            let own: f64 = (0..n1).map(|k| h[(k, j)]).sum();
            let other: f64 = (0..n2).map(|k| h[(n1 + k, j)]).sum();
            out.push((n2 as f64 * (1.0 - own) + n1 as f64 * other) / nt);
        }
        for j in 0..n2 {
            let other: f64 = (0..n1).map(|k| h[(k, n1 + j)]).sum();
            let own: f64 = (0..n2).map(|k| h[(n1 + k, n1 + j)]).sum();
            out.push(-(n2 as f64 * other + n1 as f64 * (1.0 - own)) / nt);
        }
        out
    }

    #[test]
    fn balanced_one_way_c_vectors() {
        let ds = balanced(2, 4);
        let c = compute_c_vectors(&PairDesign::new(&ds, 0, 1).unwrap()).unwrap();
        assert!(c.first.iter().all(|&v| v == 0.5));
        assert!(c.second.iter().all(|&v| v == -0.5));
    }

    #[test]
    fn scalar_forms_match_vector_forms() {
        for seed in 0..20 {
            let ds = random_ancova(seed, &[6, 8, 7], 2);
            for d in designs(&ds, ComparisonFamily::AllPairs) {
                let c = compute_c_vectors(&d).unwrap();
                assert!(c.full.sum().abs() < 1e-10);
                for (a, b) in c.full.iter().zip(scalar_c(&d)) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn balanced_correlations() {
        let ds = balanced(4, 5);
        let ds_designs = designs(&ds, ComparisonFamily::AllPairs);
        let refs: Vec<&PairDesign> = ds_designs.iter().collect();
        let c = correlation_matrix(&refs).unwrap();
        // order: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
        let m = &c.matrix;
        assert!((m[(0, 1)] - 0.5).abs() < 1e-12);
        assert!((m[(0, 3)] + 0.5).abs() < 1e-12);
        assert!((m[(3, 5)] + 0.5).abs() < 1e-12);
        assert!((m[(2, 5)] - 0.5).abs() < 1e-12);
        assert!(m[(0, 5)].abs() < 1e-15);
        assert!(m[(1, 4)].abs() < 1e-15);
        assert!(!c.psd_repaired);
        assert!(c.min_eigenvalue > PSD_HARD_LIMIT);
    }

    #[test]
    fn control_correlations() {
        let ds = balanced(4, 6);
        let d = designs(&ds, ComparisonFamily::VersusControl { control: 3 });
        let refs: Vec<&PairDesign> = d.iter().collect();
        let c = correlation_matrix(&refs).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.5 };
                assert!((c.matrix[(a, b)] - want).abs() < 1e-12);
            }
        }

        let one = designs(
            &balanced(2, 3),
            ComparisonFamily::VersusControl { control: 1 },
        );
        let c = correlation_matrix(&[&one[0]]).unwrap();
        assert_eq!(c.matrix, DMatrix::identity(1, 1));
    }

    #[test]
    fn control_correlation_shrinks_as_control_grows() {
        let mut prev = 1.0;
        for nc in [3, 6, 12, 24, 48, 96, 400] {
            let samples = vec![vec![0.0; 5], vec![1.0; 5], vec![2.0; nc]];
            let ds = Dataset::one_way(&samples).unwrap();
            let d = designs(&ds, ComparisonFamily::VersusControl { control: 2 });
            let rho = correlation_matrix(&[&d[0], &d[1]]).unwrap().matrix[(0, 1)];
            assert!(rho < prev && rho > 0.0);
            prev = rho;
        }
        assert!(prev < 0.02);
    }

    #[test]
    fn rejects_indefinite_input() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(matches!(
            CorrelationMatrix::from_matrix(m, vec![]),
            Err(Error::NotPsd(_))
        ));
    }

    #[test]
    fn factor_reproduces_singular_matrix() {
        let ds = balanced(5, 4);
        let d = designs(&ds, ComparisonFamily::AllPairs);
        let refs: Vec<&PairDesign> = d.iter().collect();
        let c = correlation_matrix(&refs).unwrap();
        let l = c.factor();
        assert!((&l * l.transpose() - &c.matrix).amax() < 1e-12);
    }

    #[test]
    fn design_only_dependence() {
        let ds = random_ancova(4, &[5, 6, 7], 1);
        let d = designs(&ds, ComparisonFamily::AllPairs);
        let refs: Vec<&PairDesign> = d.iter().collect();
        let a = correlation_matrix(&refs).unwrap();
        let y: Vec<f64> = (0..ds.len()).map(|v| (v as f64).sin() * 10.0).collect();
        let ds2 = ds.with_responses(y).unwrap();
        let d2 = designs(&ds2, ComparisonFamily::AllPairs);
        let refs2: Vec<&PairDesign> = d2.iter().collect();
        assert_eq!(a.matrix, correlation_matrix(&refs2).unwrap().matrix);
    }

    proptest! {
        #[test]
        fn correlation_is_valid(seed in 0u64..2000, p in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = rng.random_range(2..6);
            let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(p + 2..9)).collect();
            let ds = random_ancova(seed, &sizes, p);
            let Ok(d) = family_pairs(g, ComparisonFamily::AllPairs)
                .into_iter()
                .map(|(i, j)| PairDesign::new(&ds, i, j))
                .collect::<Result<Vec<_>>>() else { return Ok(()) };
            let refs: Vec<&PairDesign> = d.iter().collect();
            let c = correlation_matrix(&refs).unwrap();
            let m = &c.matrix;
            prop_assert!(c.min_eigenvalue > PSD_HARD_LIMIT);
            for i in 0..m.nrows() {
                prop_assert_eq!(m[(i, i)], 1.0);
                for j in 0..m.ncols() {
                    prop_assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-15);
                    prop_assert!(m[(i, j)].abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
