//! Reduced-model alignment and per-pair two-sample designs.
//!
//! The reduced model `Y = x' beta + e` (no group effects, intercept absorbed by
//! centering) is fit by least squares; its residuals are the aligned
//! observations. Each pair of groups then gets its own design: the contrast
//! vector `x0`, the pair-centered covariate block `X1`, and the hat matrix of
//! `X1`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Relative singular-value threshold below which a design counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedData {
    /// Least-squares slope estimates; empty for a one-way layout.
    pub beta_hat: Vec<f64>,
    /// `Y_ij - x_ij' beta_hat`, in dataset row order.
    pub aligned: Vec<f64>,
}

fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    c
}

fn is_rank_deficient(x: &DMatrix<f64>) -> bool {
    let p = x.ncols();
    if p == 0 {
        return false;
    }
    if x.nrows() < p {
        return true;
    }
    let sv = x.singular_values();
    let max = sv.max();
    let min = sv.min();
    !(max > 0.0) || min < RANK_TOLERANCE * max
}

/// True when the globally centered covariate matrix lacks full column rank.
pub fn global_rank_deficient(ds: &Dataset) -> bool {
    is_rank_deficient(&center_columns(ds.covariates()))
}

fn pair_block(ds: &Dataset, rows: &[usize]) -> DMatrix<f64> {
    let x = ds.covariates();
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

fn pair_rows(ds: &Dataset, first: usize, second: usize) -> Vec<usize> {
    ds.members(first)
        .iter()
        .chain(ds.members(second))
        .copied()
        .collect()
}

/// True when the pair's stacked covariates are rank deficient after centering.
pub fn pair_rank_deficient(ds: &Dataset, first: usize, second: usize) -> bool {
    let rows = pair_rows(ds, first, second);
    is_rank_deficient(&center_columns(&pair_block(ds, &rows)))
}

/// Least-squares projector for the reduced model, reusable across responses
/// that share one covariate matrix.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    covariates: DMatrix<f64>,
    /// `p x N` map from responses to `beta_hat`.
    solver: DMatrix<f64>,
}

impl ReducedModel {
    pub fn new(ds: &Dataset) -> Result<Self> {
        let x = ds.covariates().clone();
        let p = x.ncols();
        if p == 0 {
            return Ok(ReducedModel {
                covariates: x,
                solver: DMatrix::zeros(0, ds.len()),
            });
        }
        let xc = center_columns(&x);
        if is_rank_deficient(&xc) {
            return Err(Error::RankDeficient(
                "centered covariate matrix of the reduced model".into(),
            ));
        }
        let svd = xc.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
        // Columns of U are orthogonal to the constant vector, so centering Y is implicit.
        let solver = v_t.transpose() * inv_s * u.transpose();
        Ok(ReducedModel {
            covariates: x,
            solver,
        })
    }

    pub fn fit(&self, responses: &[f64]) -> AlignedData {
        if self.covariates.ncols() == 0 {
            return AlignedData {
                beta_hat: Vec::new(),
                aligned: responses.to_vec(),
            };
        }
        let y = DVector::from_column_slice(responses);
        let beta = &self.solver * &y;
        let aligned = y - &self.covariates * &beta;
        AlignedData {
            beta_hat: beta.iter().copied().collect(),
            aligned: aligned.iter().copied().collect(),
        }
    }
}

/// LS fit of the reduced model and its residuals.
pub fn fit_reduced_model(ds: &Dataset) -> Result<AlignedData> {
    Ok(ReducedModel::new(ds)?.fit(ds.responses()))
}

/// Ranks with ties replaced by mid-ranks. Second value reports whether any tie occurred.
pub fn mid_ranks(values: &[f64]) -> (Vec<f64>, bool) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut ties = false;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        if end - start > 1 {
            ties = true;
        }
        // Positions start..end hold 1-based ranks start+1..=end.
        let mid = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = mid;
        }
        start = end;
    }
    (ranks, ties)
}

/// Design of one two-sample comparison `(first, second)`.
///
/// Rows are the first group's observations followed by the second's, each in
/// dataset order.
#[derive(Debug, Clone)]
pub struct PairDesign {
    pub first: usize,
    pub second: usize,
    pub n_first: usize,
    pub n_second: usize,
    /// Dataset row of each pair row.
    pub rows: Vec<usize>,
    /// `(n_second 1_{n_first}, -n_first 1_{n_second}) / (n_first + n_second)`.
    pub x0: DVector<f64>,
    /// Pair-centered covariate block.
    pub x1: DMatrix<f64>,
    /// `X1 (X1'X1)^{-1} X1'`, zero when there are no covariates.
    pub hat: DMatrix<f64>,
    /// `(I - H) x0`.
    pub x0_residual: DVector<f64>,
    /// `x0' (I - H) x0`.
    pub x0_quad: f64,
    /// Covariate mean of the first group minus that of the second.
    pub mean_diff: DVector<f64>,
    gram: Option<Cholesky<f64, Dyn>>,
}

impl PairDesign {
    pub fn new(ds: &Dataset, first: usize, second: usize) -> Result<Self> {
        let g = ds.num_groups();
        if first == second || first >= g || second >= g {
            return Err(Error::InvalidConfig(format!(
                "invalid pair ({first}, {second}) for {g} groups"
            )));
        }
        let n1 = ds.group_size(first);
        let n2 = ds.group_size(second);
        let total = n1 + n2;
        let p = ds.num_covariates();
        let rows = pair_rows(ds, first, second);
        let nt = total as f64;
        let x0 = DVector::from_fn(total, |r, _| {
            if r < n1 {
                n2 as f64 / nt
            } else {
                -(n1 as f64) / nt
            }
        });

        let raw = pair_block(ds, &rows);
        let x1 = center_columns(&raw);
        let (hat, gram) = if p == 0 {
            (DMatrix::zeros(total, total), None)
        } else {
            if is_rank_deficient(&x1) {
                return Err(Error::RankDeficient(format!(
                    "pair ({}, {}) covariate block",
                    ds.label(first),
                    ds.label(second)
                )));
            }
            let u = x1.clone().svd(true, false).u.expect("u requested");
            let gram = Cholesky::new(x1.transpose() * &x1).ok_or_else(|| {
                Error::RankDeficient(format!(
                    "pair ({}, {}) Gram matrix",
                    ds.label(first),
                    ds.label(second)
                ))
            })?;
            (&u * u.transpose(), Some(gram))
        };
        let x0_residual = &x0 - &hat * &x0;
        let x0_quad = x0_residual.dot(&x0);
        let x0_norm = x0.norm_squared();
        if !(x0_quad > RANK_TOLERANCE * x0_norm) {
            return Err(Error::SingularDesign(first, second));
        }
        let mean_diff = DVector::from_fn(p, |c, _| {
            let m1 = raw.view((0, c), (n1, 1)).mean();
            let m2 = raw.view((n1, c), (n2, 1)).mean();
            m1 - m2
        });
        Ok(PairDesign {
            first,
            second,
            n_first: n1,
            n_second: n2,
            rows,
            x0,
            x1,
            hat,
            x0_residual,
            x0_quad,
            mean_diff,
            gram,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_covariates(&self) -> usize {
        self.x1.ncols()
    }

    /// Residual degrees of freedom `n_first + n_second - p - 2`.
    pub fn df(&self) -> usize {
        self.len().saturating_sub(self.num_covariates() + 2)
    }

    /// Solve `(X1'X1) z = b`; `None` when there are no covariates.
    pub fn gram_solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        self.gram.as_ref().map(|c| c.solve(b))
    }

    /// Rank the pair's aligned observations jointly.
    pub fn context(self: &Arc<Self>, aligned: &[f64]) -> PairContext {
        let values: Vec<f64> = self.rows.iter().map(|&r| aligned[r]).collect();
        let (ranks, ties) = mid_ranks(&values);
        PairContext {
            design: Arc::clone(self),
            ranks,
            ties,
        }
    }
}

/// A pair design together with the pairwise ranks of its aligned observations.
#[derive(Debug, Clone)]
pub struct PairContext {
    pub design: Arc<PairDesign>,
    /// Ranks `1..=n_first + n_second` (mid-ranks under ties), in pair row order.
    pub ranks: Vec<f64>,
    pub ties: bool,
}

impl PairContext {
    pub fn pair(&self) -> (usize, usize) {
        (self.design.first, self.design.second)
    }
}

pub fn build_pair_context(
    ad: &AlignedData,
    ds: &Dataset,
    first: usize,
    second: usize,
) -> Result<PairContext> {
    let design = Arc::new(PairDesign::new(ds, first, second)?);
    Ok(design.context(&ad.aligned))
}
