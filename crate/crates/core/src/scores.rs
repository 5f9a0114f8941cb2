//! Rank-score generators `a_N(k) = phi(k / (N + 1))`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScoreFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ScoreKind {
    /// Uniform scores, `phi(u) = u`.
    Wilcoxon,
    /// Normal scores, `phi(u) = Phi^{-1}(u)`.
    VanDerWaerden,
    /// User supplied generator on (0, 1).
    Custom { name: String, phi: ScoreFn },
}

/// A score generating function together with its scale constant, when known.
#[derive(Clone)]
pub struct ScoreFunction {
    pub kind: ScoreKind,
    /// Variance of `phi(U)` for `U ~ Uniform(0, 1)`.
    pub exact_sigma2: Option<f64>,
}

impl fmt::Debug for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreFunction")
            .field("name", &self.name())
            .field("exact_sigma2", &self.exact_sigma2)
            .finish()
    }
}

impl ScoreFunction {
    pub fn wilcoxon() -> Self {
        ScoreFunction {
            kind: ScoreKind::Wilcoxon,
            exact_sigma2: Some(1.0 / 12.0),
        }
    }

    pub fn van_der_waerden() -> Self {
        ScoreFunction {
            kind: ScoreKind::VanDerWaerden,
            exact_sigma2: Some(1.0),
        }
    }

    /// A custom generator. `exact_sigma2`, if given, must be positive.
    pub fn custom<F>(name: impl Into<String>, phi: F, exact_sigma2: Option<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if let Some(s) = exact_sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "exact sigma^2 must be positive, got {s}"
                )));
            }
        }
        Ok(ScoreFunction {
            kind: ScoreKind::Custom {
                name: name.into(),
                phi: Arc::new(phi),
            },
            exact_sigma2,
        })
    }

    /// Look up a built-in generator by its CLI name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "wilcoxon" | "uniform" => Ok(Self::wilcoxon()),
            "vdw" | "vanderwaerden" | "van-der-waerden" | "normal" => Ok(Self::van_der_waerden()),
            other => Err(Error::InvalidConfig(format!(
                "unknown score function `{other}`"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            ScoreKind::Wilcoxon => "wilcoxon",
            ScoreKind::VanDerWaerden => "vdw",
            ScoreKind::Custom { name, .. } => name,
        }
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        let v = match &self.kind {
            ScoreKind::Wilcoxon => u,
            ScoreKind::VanDerWaerden => inverse_normal_cdf(u),
            ScoreKind::Custom { phi, .. } => phi(u),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteScore(u))
        }
    }

    /// Scores for (possibly fractional mid-) ranks in a sample of size `n`.
    pub fn scores_for_ranks(&self, ranks: &[f64], n: usize) -> Result<Vec<f64>> {
        let denom = n as f64 + 1.0;
        ranks.iter().map(|&r| self.eval(r / denom)).collect()
    }
}

/// `a(k) = phi(k / (n + 1))` for `k = 1..=n`.
pub fn score_vector(sf: &ScoreFunction, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "score vector length must be >= 1".into(),
        ));
    }
    let denom = n as f64 + 1.0;
    (1..=n).map(|k| sf.eval(k as f64 / denom)).collect()
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Subtract the mean.
pub fn center_scores(a: &[f64]) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let m = mean(a);
    a.iter().map(|x| x - m).collect()
}

/// Sample variance of a score vector (divisor `N - 1`).
pub fn classical_scale(a: &[f64]) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::InvalidConfig(
            "classical scale needs at least two scores".into(),
        ));
    }
    let m = mean(a);
    let ss: f64 = a.iter().map(|x| (x - m) * (x - m)).sum();
    Ok(ss / (a.len() as f64 - 1.0))
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16).
///
/// Relative accuracy is about 1e-16 over (0, 1). Returns `-inf`/`+inf` at the
/// endpoints and NaN outside [0, 1].
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
