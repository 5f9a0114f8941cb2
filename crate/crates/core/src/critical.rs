//! Monte Carlo critical values for max and max-modulus statistics.
//!
//! Draws are generated in fixed-size chunks, each from its own substream, so
//! the sample is a function of `(seed, draw index)` only.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ReferenceKind, ScaleMode, Sidedness};
use crate::error::{Error, Result};
use crate::joint_dist::CorrelationMatrix;
use crate::pair_tests::ScaleEstimates;
use crate::par::{map_range, Exec};
use crate::rng::{substream, tag};

const CHUNK: usize = 1024;
pub const MIN_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Mvn,
    Mvt { df: f64 },
}

impl Reference {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Reference::Mvt { df } if !(df > 0.0) || df.is_nan() => Err(Error::InvalidConfig(
                format!("multivariate t needs df > 0, got {df}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> ReferenceKind {
        match self {
            Reference::Mvn => ReferenceKind::Mvn,
            Reference::Mvt { .. } => ReferenceKind::Mvt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceDistribution {
    pub reference: Reference,
    pub correlation: CorrelationMatrix,
}

/// Satterthwaite effective df of `sum_k w_k s_k` with component df `nu_k`.
pub fn satterthwaite_df(scale: &ScaleEstimates) -> Result<f64> {
    if scale.per_pair.is_empty() {
        return Err(Error::ZeroDenominator);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, w) in scale.per_pair.iter().zip(&scale.weights) {
        if s.df == 0 {
            return Err(Error::ZeroDenominator);
        }
        let u = w * s.value;
        num += u;
        den += u * u / s.df as f64;
    }
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator);
    }
    Ok(num * num / den)
}

/// Degrees of freedom used for a multivariate t reference.
///
/// The pooled scale uses the Satterthwaite value. Per-pair and classical
/// standardization have no single pooled estimate, so the smallest pair df is
/// used.
pub fn reference_df(scale: &ScaleEstimates, mode: ScaleMode) -> Result<f64> {
    match mode {
        ScaleMode::Weighted => satterthwaite_df(scale),
        ScaleMode::PerPair | ScaleMode::Classical => match scale.min_df() {
            0 => Err(Error::ZeroDenominator),
            d => Ok(d as f64),
        },
    }
}

/// A quantile estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub value: f64,
    pub mc_se: f64,
    pub draws: usize,
}

/// Maxima of multivariate normal draws, reusable for any df by rescaling.
#[derive(Debug, Clone)]
pub struct NullMaxima {
    /// `max_k |Z_k|` per draw.
    pub modulus: Vec<f64>,
    /// `max_k Z_k` per draw.
    pub signed: Vec<f64>,
}

fn chunks(draws: usize) -> usize {
    draws.div_ceil(CHUNK)
}

fn chunk_len(draws: usize, c: usize) -> usize {
    CHUNK.min(draws - c * CHUNK)
}

impl NullMaxima {
    pub fn sample(corr: &CorrelationMatrix, draws: usize, seed: u64, exec: Exec) -> Self {
        let l = corr.factor();
        let k = corr.dim();
        let parts = map_range(exec, chunks(draws), |c| {
            let mut rng = substream(seed, tag::MVN_DRAWS, c as u64);
            let len = chunk_len(draws, c);
            let mut modulus = Vec::with_capacity(len);
            let mut signed = Vec::with_capacity(len);
            let mut e = DVector::zeros(k);
            let mut z = DVector::zeros(k);
            for _ in 0..len {
                for v in e.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                l.mul_to(&e, &mut z);
                modulus.push(z.amax());
                signed.push(z.max());
            }
            (modulus, signed)
        });
        let mut modulus = Vec::with_capacity(draws);
        let mut signed = Vec::with_capacity(draws);
        for (m, s) in parts {
            modulus.extend(m);
            signed.extend(s);
        }
        NullMaxima { modulus, signed }
    }

    pub fn draws(&self) -> usize {
        self.modulus.len()
    }

    fn base(&self, sided: Sidedness) -> &[f64] {
        match sided {
            Sidedness::TwoSided => &self.modulus,
            Sidedness::OneSided => &self.signed,
        }
    }

    /// Per-draw maxima under the reference. For `Mvt` each MVN draw is divided
    /// by `sqrt(W / df)`, `W ~ chi-square(df)` drawn from `seed`.
    pub fn maxima(
        &self,
        reference: Reference,
        sided: Sidedness,
        seed: u64,
        exec: Exec,
    ) -> Result<Vec<f64>> {
        reference.validate()?;
        let base = self.base(sided);
        match reference {
            Reference::Mvn => Ok(base.to_vec()),
            Reference::Mvt { df } => {
                let chi = ChiSquared::new(df).map_err(|e| Error::Numerical(e.to_string()))?;
                let draws = base.len();
                let parts = map_range(exec, chunks(draws), |c| {
                    let mut rng = substream(seed, tag::CHI_SQUARE, c as u64);
                    let start = c * CHUNK;
                    base[start..start + chunk_len(draws, c)]
                        .iter()
                        .map(|m| {
                            let w: f64 = chi.sample(&mut rng);
                            m / (w / df).sqrt()
                        })
                        .collect::<Vec<f64>>()
                });
                Ok(parts.concat())
            }
        }
    }

    pub fn quantile(
        &self,
        reference: Reference,
        alpha: f64,
        sided: Sidedness,
        seed: u64,
        exec: Exec,
    ) -> Result<Quantile> {
        let mut m = self.maxima(reference, sided, seed, exec)?;
        order_statistic_quantile(&mut m, alpha)
    }

    /// Quantile value only, without the standard error; cheaper.
    pub fn quantile_value(
        &self,
        reference: Reference,
        alpha: f64,
        sided: Sidedness,
        seed: u64,
    ) -> Result<f64> {
        let mut m = self.maxima(reference, sided, seed, Exec::Sequential)?;
        let k = quantile_index(alpha, m.len())?;
        let (_, v, _) = m.select_nth_unstable_by(k, f64::total_cmp);
        Ok(*v)
    }
}

fn quantile_index(alpha: f64, draws: usize) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidConfig("no draws".into()));
    }
    // 1-based order statistic ceil((1 - alpha) draws); guard against 0.95 * 1e5 = 94999.99..
    let k = ((1.0 - alpha) * draws as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, draws) - 1)
}

/// Empirical `(1 - alpha)` quantile with a binomial order-statistic standard error.
pub fn order_statistic_quantile(values: &mut [f64], alpha: f64) -> Result<Quantile> {
    let k = quantile_index(alpha, values.len())?;
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    let spread = ((n as f64) * alpha * (1.0 - alpha)).sqrt().ceil() as usize;
    let lo = k.saturating_sub(spread);
    let hi = (k + spread).min(n - 1);
    Ok(Quantile {
        value: values[k],
        mc_se: (values[hi] - values[lo]) / 2.0,
        draws: n,
    })
}

fn check_draws(draws: usize) -> Result<()> {
    if draws < MIN_DRAWS {
        return Err(Error::InvalidConfig(format!(
            "at least {MIN_DRAWS} draws required, got {draws}"
        )));
    }
    Ok(())
}

/// Upper `alpha` quantile of `max |Z_k|` (two-sided) or `max Z_k` (one-sided).
pub fn max_quantile(
    reference: &ReferenceDistribution,
    alpha: f64,
    sided: Sidedness,
    draws: usize,
    seed: u64,
) -> Result<Quantile> {
    max_quantile_with(reference, alpha, sided, draws, seed, Exec::default())
}

pub fn max_quantile_with(
    reference: &ReferenceDistribution,
    alpha: f64,
    sided: Sidedness,
    draws: usize,
    seed: u64,
    exec: Exec,
) -> Result<Quantile> {
    check_draws(draws)?;
    reference.reference.validate()?;
    let nm = NullMaxima::sample(&reference.correlation, draws, seed, exec);
    nm.quantile(reference.reference, alpha, sided, seed, exec)
}

/// Single-step adjusted p-values with their Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedPValues {
    pub p: Vec<f64>,
    pub mc_se: Vec<f64>,
}

/// `P(max_j |Z_j| >= |t_k|)` (two-sided) or `P(max_j Z_j >= t_k)` (one-sided),
/// all on the same draws.
pub fn adjusted_p_values(
    stats: &[f64],
    reference: &ReferenceDistribution,
    sided: Sidedness,
    draws: usize,
    seed: u64,
) -> Result<AdjustedPValues> {
    check_draws(draws)?;
    let nm = NullMaxima::sample(&reference.correlation, draws, seed, Exec::default());
    let mut m = nm.maxima(reference.reference, sided, seed, Exec::default())?;
    Ok(p_values_from_maxima(stats, &mut m, sided))
}

pub fn p_values_from_maxima(
    stats: &[f64],
    maxima: &mut [f64],
    sided: Sidedness,
) -> AdjustedPValues {
    maxima.sort_unstable_by(f64::total_cmp);
    let n = maxima.len() as f64;
    let p: Vec<f64> = stats
        .iter()
        .map(|&t| {
            let t = match sided {
                Sidedness::TwoSided => t.abs(),
                Sidedness::OneSided => t,
            };
            let below = maxima.partition_point(|&m| m < t);
            (maxima.len() - below) as f64 / n
        })
        .collect();
    let mc_se = p.iter().map(|&q| (q * (1.0 - q) / n).sqrt()).collect();
    AdjustedPValues { p, mc_se }
}

/// Reject when `|T| > q` (two-sided) or `T > q` (one-sided).
pub fn decide(stats: &[f64], q: f64, sided: Sidedness) -> Vec<bool> {
    stats
        .iter()
        .map(|&t| match sided {
            Sidedness::TwoSided => t.abs() > q,
            Sidedness::OneSided => t > q,
        })
        .collect()
}
