//! Pairwise aligned-rank statistics and rank-scale estimators.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::alignment::{fit_reduced_model, AlignedData, PairContext, PairDesign};
use crate::data::{
    family_pairs, AnalysisConfig, ComparisonFamily, ControlScale, Dataset, ScaleMode,
};
use crate::error::{Error, Result};
use crate::scores::{center_scores, classical_scale, score_vector, ScoreFunction};

/// Relative disagreement tolerated between the two algebraic forms of a statistic.
const FORM_TOLERANCE: f64 = 1e-8;

/// Residual mean square of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScale {
    pub pair: (usize, usize),
    pub value: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimates {
    pub per_pair: Vec<PairScale>,
    /// `df / sum(df)`, aligned with `per_pair`.
    pub weights: Vec<f64>,
    pub weighted: f64,
}

impl ScaleEstimates {
    pub fn min_df(&self) -> usize {
        self.per_pair.iter().map(|s| s.df).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleUsed {
    Weighted,
    PerPair,
    Classical,
}

impl From<ScaleMode> for ScaleUsed {
    fn from(m: ScaleMode) -> Self {
        match m {
            ScaleMode::Weighted => ScaleUsed::Weighted,
            ScaleMode::PerPair => ScaleUsed::PerPair,
            ScaleMode::Classical => ScaleUsed::Classical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStatistic {
    pub pair: (usize, usize),
    pub value: f64,
    /// Difference of covariate-adjusted mean scores.
    pub numerator: f64,
    pub se: f64,
    /// The scale estimate the statistic was standardized with.
    pub scale: f64,
    pub scale_used: ScaleUsed,
}

/// Centered scores of the pair's ranks, with `N = n_first + n_second`.
pub fn centered_pair_scores(pc: &PairContext, sf: &ScoreFunction) -> Result<DVector<f64>> {
    let a = sf.scores_for_ranks(&pc.ranks, pc.ranks.len())?;
    Ok(DVector::from_vec(center_scores(&a)))
}

/// `(n_i + n_i' - p - 2)^{-1} a_c' [I - X (X'X)^{-1} X'] a_c` with `X = [x0 | X1]`.
pub fn pair_scale_estimate(pc: &PairContext, sf: &ScoreFunction) -> Result<f64> {
    let a = centered_pair_scores(pc, sf)?;
    pair_scale_from_scores(&pc.design, &a)
}

fn pair_scale_from_scores(d: &PairDesign, a: &DVector<f64>) -> Result<f64> {
    let df = d.df();
    if df == 0 {
        return Err(Error::InvalidDataset(format!(
            "pair ({}, {}) has no residual degrees of freedom",
            d.first, d.second
        )));
    }
    // Projection onto [x0 | X1] is H plus the rank-one term for (I - H) x0.
    let r = &d.x0_residual;
    let ra = r.dot(a);
    let mut ss = a.dot(a) - ra * ra / r.dot(r);
    if d.num_covariates() > 0 {
        ss -= a.dot(&(&d.hat * a));
    }
    Ok(ss.max(0.0) / df as f64)
}

/// Classical permutation variance of the pair's full score vector.
pub fn pair_classical_scale(pc: &PairContext, sf: &ScoreFunction) -> Result<f64> {
    classical_scale(&score_vector(sf, pc.ranks.len())?)
}

/// Pool per-pair estimates with weights proportional to their df.
pub fn weighted_scale(per_pair: Vec<PairScale>) -> Result<ScaleEstimates> {
    if per_pair.is_empty() {
        return Err(Error::InvalidConfig("no pairs to pool".into()));
    }
    let total: usize = per_pair.iter().map(|s| s.df).sum();
    if total == 0 {
        return Err(Error::ZeroDenominator);
    }
    let weights: Vec<f64> = per_pair
        .iter()
        .map(|s| s.df as f64 / total as f64)
        .collect();
    let weighted = per_pair
        .iter()
        .zip(&weights)
        .map(|(s, w)| w * s.value)
        .sum();
    Ok(ScaleEstimates {
        per_pair,
        weights,
        weighted,
    })
}

/// `x0'(I-H) a_c / sqrt(scale * x0'(I-H) x0)`.
pub fn statistic_matrix_form(pc: &PairContext, sf: &ScoreFunction, scale: f64) -> Result<f64> {
    let a = centered_pair_scores(pc, sf)?;
    Ok(matrix_form(&pc.design, &a, scale))
}

fn matrix_form(d: &PairDesign, a: &DVector<f64>, scale: f64) -> f64 {
    d.x0_residual.dot(a) / (scale * d.x0_quad).sqrt()
}

/// Adjusted mean-score difference and its standard error.
pub fn adjusted_means(pc: &PairContext, sf: &ScoreFunction, scale: f64) -> Result<(f64, f64)> {
    let a = centered_pair_scores(pc, sf)?;
    adjusted_from_scores(&pc.design, &a, scale)
}

fn adjusted_from_scores(d: &PairDesign, a: &DVector<f64>, scale: f64) -> Result<(f64, f64)> {
    let n1 = d.n_first;
    let mean1 = a.rows(0, n1).mean();
    let mean2 = a.rows(n1, d.n_second).mean();
    let inv = 1.0 / n1 as f64 + 1.0 / d.n_second as f64;
    let (adjust, reduction) = match d.gram_solve(&(d.x1.transpose() * a)) {
        Some(coef) => {
            let g_inv_d = d
                .gram_solve(&d.mean_diff)
                .expect("gram exists when covariates do");
            (d.mean_diff.dot(&coef), d.mean_diff.dot(&g_inv_d) / inv)
        }
        None => (0.0, 0.0),
    };
    let var = scale * inv * (1.0 - reduction);
    if !(var > 0.0) {
        return Err(Error::SingularDesign(d.first, d.second));
    }
    Ok((mean1 - mean2 - adjust, var.sqrt()))
}

/// Standardized pairwise statistic. Both algebraic forms are evaluated and
/// must agree.
pub fn pair_statistic(pc: &PairContext, sf: &ScoreFunction, scale: f64) -> Result<PairStatistic> {
    let a = centered_pair_scores(pc, sf)?;
    statistic_from_scores(&pc.design, &a, scale, ScaleUsed::Weighted)
}

fn statistic_from_scores(
    d: &PairDesign,
    a: &DVector<f64>,
    scale: f64,
    scale_used: ScaleUsed,
) -> Result<PairStatistic> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::NonPositiveScale(scale));
    }
    let value = matrix_form(d, a, scale);
    let (numerator, se) = adjusted_from_scores(d, a, scale)?;
    let alt = numerator / se;
    if (value - alt).abs() > FORM_TOLERANCE * value.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "pair ({}, {}): matrix form {value} disagrees with adjusted-means form {alt}",
            d.first, d.second
        )));
    }
    Ok(PairStatistic {
        pair: (d.first, d.second),
        value,
        numerator,
        se,
        scale,
        scale_used,
    })
}

/// Statistics for one comparison family.
#[derive(Debug, Clone)]
pub struct FamilyStatistics {
    pub stats: Vec<PairStatistic>,
    pub scale: ScaleEstimates,
    pub contexts: Vec<PairContext>,
    /// Any tie among aligned values within an analyzed pair.
    pub ties: bool,
}

/// Compute the family's statistics from already ranked pairs.
///
/// `pool` selects which per-pair estimates enter the weighted scale; `None`
/// pools over `contexts` themselves.
pub fn statistics_from_contexts(
    contexts: Vec<PairContext>,
    pool: Option<&[PairContext]>,
    sf: &ScoreFunction,
    mode: ScaleMode,
) -> Result<FamilyStatistics> {
    let scores = contexts
        .iter()
        .map(|pc| centered_pair_scores(pc, sf))
        .collect::<Result<Vec<_>>>()?;
    let own: Vec<PairScale> = contexts
        .iter()
        .zip(&scores)
        .map(|(pc, a)| {
            Ok(PairScale {
                pair: pc.pair(),
                value: pair_scale_from_scores(&pc.design, a)?,
                df: pc.design.df(),
            })
        })
        .collect::<Result<_>>()?;
    let scale = match pool {
        None => weighted_scale(own.clone())?,
        Some(pool) => weighted_scale(
            pool.iter()
                .map(|pc| {
                    Ok(PairScale {
                        pair: pc.pair(),
                        value: pair_scale_estimate(pc, sf)?,
                        df: pc.design.df(),
                    })
                })
                .collect::<Result<_>>()?,
        )?,
    };
    let stats = contexts
        .iter()
        .zip(&scores)
        .zip(&own)
        .map(|((pc, a), ps)| {
            let s = match mode {
                ScaleMode::Weighted => scale.weighted,
                ScaleMode::PerPair => ps.value,
                ScaleMode::Classical => pair_classical_scale(pc, sf)?,
            };
            if !(s > 0.0) {
                let (i, j) = pc.pair();
                return Err(Error::DegenerateScale(i, j));
            }
            statistic_from_scores(&pc.design, a, s, mode.into())
        })
        .collect::<Result<Vec<_>>>()?;
    let ties = contexts.iter().any(|c| c.ties);
    Ok(FamilyStatistics {
        stats,
        scale,
        contexts,
        ties,
    })
}

fn contexts_for(
    ds: &Dataset,
    ad: &AlignedData,
    pairs: &[(usize, usize)],
) -> Result<Vec<PairContext>> {
    pairs
        .iter()
        .map(|&(i, j)| Ok(Arc::new(PairDesign::new(ds, i, j)?).context(&ad.aligned)))
        .collect()
}

fn check_mode(ds: &Dataset, cfg: &AnalysisConfig) -> Result<()> {
    if cfg.scale_mode == ScaleMode::Classical && ds.num_covariates() > 0 {
        return Err(Error::InvalidConfig(
            "classical scale requires a one-way layout".into(),
        ));
    }
    Ok(())
}

/// All `g(g-1)/2` statistics in order (1,2), (1,3), ..., (g-1,g).
pub fn all_pairs_statistics(ds: &Dataset, cfg: &AnalysisConfig) -> Result<FamilyStatistics> {
    check_mode(ds, cfg)?;
    let ad = fit_reduced_model(ds)?;
    let pairs = family_pairs(ds.num_groups(), ComparisonFamily::AllPairs);
    statistics_from_contexts(
        contexts_for(ds, &ad, &pairs)?,
        None,
        &cfg.score_function,
        cfg.scale_mode,
    )
}

/// Treatment-versus-control statistics, each oriented treatment minus control.
pub fn control_statistics(ds: &Dataset, cfg: &AnalysisConfig) -> Result<FamilyStatistics> {
    check_mode(ds, cfg)?;
    let ComparisonFamily::VersusControl { control } = cfg.family else {
        return Err(Error::InvalidConfig(
            "control statistics need a treatments-versus-control family".into(),
        ));
    };
    if control >= ds.num_groups() {
        return Err(Error::InvalidConfig(format!(
            "control index {control} out of range"
        )));
    }
    let ad = fit_reduced_model(ds)?;
    let pairs = family_pairs(ds.num_groups(), cfg.family);
    let contexts = contexts_for(ds, &ad, &pairs)?;
    match cfg.control_scale {
        ControlScale::ControlPairs => {
            statistics_from_contexts(contexts, None, &cfg.score_function, cfg.scale_mode)
        }
        ControlScale::AllPairs => {
            let all = family_pairs(ds.num_groups(), ComparisonFamily::AllPairs);
            let pool = contexts_for(ds, &ad, &all)?;
            statistics_from_contexts(contexts, Some(&pool), &cfg.score_function, cfg.scale_mode)
        }
    }
}

/// Dispatch on `cfg.family`.
pub fn family_statistics(ds: &Dataset, cfg: &AnalysisConfig) -> Result<FamilyStatistics> {
    match cfg.family {
        ComparisonFamily::AllPairs => all_pairs_statistics(ds, cfg),
        ComparisonFamily::VersusControl { .. } => control_statistics(ds, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::build_pair_context;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn classical_cfg() -> AnalysisConfig {
        AnalysisConfig {
            scale_mode: ScaleMode::Classical,
            ..Default::default()
        }
    }

    fn random_ancova(rng: &mut ChaCha8Rng, sizes: &[usize], p: usize) -> Dataset {
        let n: usize = sizes.iter().sum();
        let groups: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &k)| std::iter::repeat_n(i, k))
            .collect();
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        Dataset::from_indices(y, groups, x).unwrap()
    }

    /// Independent evaluation: build [x0 | X1], invert its Gram matrix directly.
    fn brute_force_scale(pc: &PairContext, sf: &ScoreFunction) -> f64 {
        let d = &pc.design;
        let n = d.len();
        let p = d.num_covariates();
        let mut x = DMatrix::zeros(n, p + 1);
        x.set_column(0, &d.x0);
        for c in 0..p {
            x.set_column(c + 1, &d.x1.column(c));
        }
        let proj = &x * (x.transpose() * &x).try_inverse().unwrap() * x.transpose();
        let raw = sf.scores_for_ranks(&pc.ranks, n).unwrap();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let a = DVector::from_iterator(n, raw.iter().map(|v| v - mean));
        let resid = &a - &proj * &a;
        resid.dot(&resid) / (n - p - 2) as f64
    }

    #[test]
    fn scale_matches_brute_force_balanced_one_way() {
        let ds = Dataset::one_way(&[vec![0.3, 2.5, 1.1], vec![0.9, 1.7, 3.2]]).unwrap();
        let ad = fit_reduced_model(&ds).unwrap();
        let pc = build_pair_context(&ad, &ds, 0, 1).unwrap();
        let sf = ScoreFunction::wilcoxon();
        let got = pair_scale_estimate(&pc, &sf).unwrap();
        // ranks (1,5,3 | 2,4,6): within SS of k/7 scores = (8 + 8)/49, df 4.
        let expected = 16.0 / 49.0 / 4.0;
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        assert!((got - brute_force_scale(&pc, &sf)).abs() < 1e-14);
    }

    #[test]
    fn constant_scores_give_zero_scale() {
        let ds = Dataset::one_way(&[vec![0.3, 2.5, 1.1], vec![0.9, 1.7, 3.2]]).unwrap();
        let ad = fit_reduced_model(&ds).unwrap();
        let pc = build_pair_context(&ad, &ds, 0, 1).unwrap();
        let flat = ScoreFunction::custom("flat", |_| 0.25, None).unwrap();
        assert_eq!(pair_scale_estimate(&pc, &flat).unwrap(), 0.0);
        let fam = statistics_from_contexts(vec![pc], None, &flat, ScaleMode::Weighted);
        assert!(matches!(fam, Err(Error::DegenerateScale(0, 1))));
    }

    #[test]
    fn one_way_scale_equals_within_group_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sf = ScoreFunction::van_der_waerden();
        for _ in 0..200 {
            let n1 = rng.random_range(2..9);
            let n2 = rng.random_range(2..9);
            let ds = random_ancova(&mut rng, &[n1, n2], 0);
            let ad = fit_reduced_model(&ds).unwrap();
            let pc = build_pair_context(&ad, &ds, 0, 1).unwrap();
            let a = sf.scores_for_ranks(&pc.ranks, n1 + n2).unwrap();
            let m1 = a[..n1].iter().sum::<f64>() / n1 as f64;
            let m2 = a[n1..].iter().sum::<f64>() / n2 as f64;
            let ss: f64 = a[..n1].iter().map(|v| (v - m1).powi(2)).sum::<f64>()
                + a[n1..].iter().map(|v| (v - m2).powi(2)).sum::<f64>();
            let expected = ss / (n1 + n2 - 2) as f64;
            assert!((pair_scale_estimate(&pc, &sf).unwrap() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn scale_matches_brute_force_with_covariates() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sf = ScoreFunction::wilcoxon();
        for p in 1..=3 {
            let ds = random_ancova(&mut rng, &[7, 8, 6], p);
            let ad = fit_reduced_model(&ds).unwrap();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let pc = build_pair_context(&ad, &ds, i, j).unwrap();
                let got = pair_scale_estimate(&pc, &sf).unwrap();
                assert!((got - brute_force_scale(&pc, &sf)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn weights() {
        let one = weighted_scale(vec![PairScale {
            pair: (0, 1),
            value: 0.07,
            df: 4,
        }])
        .unwrap();
        assert_eq!(one.weights, vec![1.0]);
        assert_eq!(one.weighted, 0.07);

        let eq = weighted_scale(
            [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&pair| PairScale {
                    pair,
                    value: 0.08,
                    df: 10,
                })
                .collect(),
        )
        .unwrap();
        assert!((eq.weighted - 0.08).abs() < 1e-15);

        // n = (5, 12, 5), control = third group: df 8 and 15.
        let ds = Dataset::one_way(&[
            (0..5).map(|v| v as f64).collect(),
            (0..12).map(|v| v as f64 + 0.5).collect(),
            (0..5).map(|v| v as f64 + 0.25).collect(),
        ])
        .unwrap();
        let cfg = AnalysisConfig {
            family: ComparisonFamily::VersusControl { control: 2 },
            ..Default::default()
        };
        let fam = control_statistics(&ds, &cfg).unwrap();
        assert_eq!(
            fam.scale.per_pair.iter().map(|s| s.df).collect::<Vec<_>>(),
            vec![8, 15]
        );
        assert!((fam.scale.weights[0] - 8.0 / 23.0).abs() < 1e-15);
        assert!((fam.scale.weights[1] - 15.0 / 23.0).abs() < 1e-15);

        assert!(weighted_scale(Vec::new()).is_err());
    }

    #[test]
    fn symmetric_split_gives_zero() {
        // ranks (1,4,6,7 | 2,3,5,8), equal rank sums
        let ds = Dataset::one_way(&[vec![1.0, 4.0, 6.0, 7.0], vec![2.0, 3.0, 5.0, 8.0]]).unwrap();
        let fam = all_pairs_statistics(&ds, &AnalysisConfig::default()).unwrap();
        assert!(fam.stats[0].value.abs() < 1e-12);
    }

    #[test]
    fn standardized_wilcoxon_hand_value() {
        let ds = Dataset::one_way(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let fam = all_pairs_statistics(&ds, &classical_cfg()).unwrap();
        let expected = -3.0 / (7.0f64 / 3.0).sqrt();
        assert!((fam.stats[0].value - expected).abs() < 1e-12);
        assert!((fam.stats[0].value - -1.963_961_012_123_931).abs() < 1e-12);
    }

    #[test]
    fn swapping_groups_negates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_ancova(&mut rng, &[6, 5], 2);
        let ad = fit_reduced_model(&ds).unwrap();
        let sf = ScoreFunction::wilcoxon();
        let a = build_pair_context(&ad, &ds, 0, 1).unwrap();
        let b = build_pair_context(&ad, &ds, 1, 0).unwrap();
        let ta = pair_statistic(&a, &sf, 0.08).unwrap().value;
        let tb = pair_statistic(&b, &sf, 0.08).unwrap().value;
        assert!((ta + tb).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_scale_rejected() {
        let ds = Dataset::one_way(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ad = fit_reduced_model(&ds).unwrap();
        let pc = build_pair_context(&ad, &ds, 0, 1).unwrap();
        let sf = ScoreFunction::wilcoxon();
        assert!(matches!(
            pair_statistic(&pc, &sf, 0.0),
            Err(Error::NonPositiveScale(_))
        ));
        assert!(matches!(
            pair_statistic(&pc, &sf, -1.0),
            Err(Error::NonPositiveScale(_))
        ));
    }

    #[test]
    fn ordering_contracts() {
        let ds = Dataset::one_way(&[
            vec![1.0, 2.5, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![0.1, 7.0, 8.0],
        ])
        .unwrap();
        let fam = all_pairs_statistics(&ds, &AnalysisConfig::default()).unwrap();
        let pairs: Vec<_> = fam.stats.iter().map(|s| s.pair).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);

        let cfg = AnalysisConfig {
            family: ComparisonFamily::VersusControl { control: 2 },
            ..Default::default()
        };
        let fam = control_statistics(&ds, &cfg).unwrap();
        let pairs: Vec<_> = fam.stats.iter().map(|s| s.pair).collect();
        assert_eq!(pairs, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn two_groups_control_matches_all_pairs() {
        let ds = Dataset::one_way(&[vec![1.0, 2.5, 3.0, 0.2], vec![4.0, 5.0, 0.6]]).unwrap();
        let all = all_pairs_statistics(&ds, &AnalysisConfig::default()).unwrap();
        let cfg = AnalysisConfig {
            family: ComparisonFamily::VersusControl { control: 1 },
            ..Default::default()
        };
        let ctl = control_statistics(&ds, &cfg).unwrap();
        assert!((all.stats[0].value - ctl.stats[0].value).abs() < 1e-15);
    }

    #[test]
    fn treatment_above_control_is_positive() {
        let ds = Dataset::one_way(&[
            vec![10.0, 11.0, 12.5],
            vec![0.5, 1.5, 2.0],
            vec![-1.0, 0.0, 1.0],
        ])
        .unwrap();
        let cfg = AnalysisConfig {
            family: ComparisonFamily::VersusControl { control: 1 },
            ..Default::default()
        };
        let fam = control_statistics(&ds, &cfg).unwrap();
        assert_eq!(fam.stats[0].pair, (0, 1));
        assert!(fam.stats[0].value > 0.0);
        assert_eq!(fam.stats[1].pair, (2, 1));
        assert!(fam.stats[1].value < 0.0);
    }

    #[test]
    fn control_scale_switch_pools_all_pairs() {
        let ds = Dataset::one_way(&[
            vec![1.0, 2.5, 3.0, 0.3],
            vec![4.0, 5.0, 0.6],
            vec![0.1, 7.0, 8.0, 2.2, 1.9],
        ])
        .unwrap();
        let cfg = AnalysisConfig {
            family: ComparisonFamily::VersusControl { control: 2 },
            control_scale: ControlScale::AllPairs,
            ..Default::default()
        };
        let ctl = control_statistics(&ds, &cfg).unwrap();
        let all = all_pairs_statistics(&ds, &AnalysisConfig::default()).unwrap();
        assert_eq!(ctl.scale.per_pair.len(), 3);
        assert!((ctl.scale.weighted - all.scale.weighted).abs() < 1e-15);
    }

    #[test]
    fn classical_rejected_with_covariates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = random_ancova(&mut rng, &[4, 4], 1);
        assert!(all_pairs_statistics(&ds, &classical_cfg()).is_err());
    }

    #[test]
    fn weighted_and_per_pair_coincide_for_equal_estimates() {
        let ds = Dataset::one_way(&[
            vec![1.0, 4.0, 5.0],
            vec![2.0, 3.0, 6.0],
            vec![1.5, 3.5, 5.5],
        ])
        .unwrap();
        let w = all_pairs_statistics(&ds, &AnalysisConfig::default()).unwrap();
        let pp = all_pairs_statistics(
            &ds,
            &AnalysisConfig {
                scale_mode: ScaleMode::PerPair,
                ..Default::default()
            },
        )
        .unwrap();
        // Ratios are a pure rescaling in general.
        for (k, (a, b)) in w.stats.iter().zip(&pp.stats).enumerate() {
            let ratio = (w.scale.per_pair[k].value / w.scale.weighted).sqrt();
            assert!((a.value - b.value * ratio).abs() < 1e-12);
            assert_eq!(a.value.signum(), b.value.signum());
        }
    }

    proptest! {
        #[test]
        fn forms_agree(seed in 0u64..5000, p in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(p + 2..10)).collect();
            let ds = random_ancova(&mut rng, &sizes, p);
            let ad = fit_reduced_model(&ds).unwrap();
            let sf = ScoreFunction::van_der_waerden();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let Ok(pc) = build_pair_context(&ad, &ds, i, j) else { continue };
                let m = statistic_matrix_form(&pc, &sf, 0.9).unwrap();
                let (num, se) = adjusted_means(&pc, &sf, 0.9).unwrap();
                prop_assert!((m - num / se).abs() < 1e-10 * m.abs().max(1.0));
            }
        }

        #[test]
        fn monotone_transform_invariance(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_ancova(&mut rng, &[4, 5, 3], 0);
            let t: Vec<f64> = ds.responses().iter().map(|v| (v * 0.7).exp() + v.powi(3)).collect();
            let ds2 = ds.with_responses(t).unwrap();
            let cfg = AnalysisConfig::default();
            let a = all_pairs_statistics(&ds, &cfg).unwrap();
            let b = all_pairs_statistics(&ds2, &cfg).unwrap();
            for (x, y) in a.stats.iter().zip(&b.stats) {
                prop_assert_eq!(x.value, y.value);
            }
        }

        #[test]
        fn scale_estimates_are_convex(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sizes: Vec<usize> = (0..4).map(|_| rng.random_range(3..9)).collect();
            let ds = random_ancova(&mut rng, &sizes, 1);
            let Ok(fam) = all_pairs_statistics(&ds, &AnalysisConfig::default()) else { return Ok(()) };
            let s = &fam.scale;
            prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let lo = s.per_pair.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
            let hi = s.per_pair.iter().map(|p| p.value).fold(0.0, f64::max);
            prop_assert!(lo >= 0.0);
            prop_assert!(s.weighted >= lo - 1e-15 && s.weighted <= hi + 1e-15);
        }
    }
}
