//! Mean and variance-of-mean estimators with confidence intervals.
//!
//! Covers simple random sampling, stratified sampling, one-unit-per-stratum
//! designs with collapsed-strata variance, and two-phase (double) sampling,
//! together with the degrees-of-freedom rules used to pick between normal
//! and t critical values.
//!
//! Conventions used throughout the crate:
//! * sample variances use divisor n-1;
//! * no finite-population correction (populations are large);
//! * stratum weights must sum to 1 within 1e-9.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::stats;

pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("stratum {0} has fewer than 2 sampled units")]
    StratumTooSmall(usize),
    #[error("stratum weights sum to {sum}, expected 1")]
    WeightsNotNormalized { sum: f64 },
    #[error("stratum {0} is not covered by the collapsed pairing")]
    UnpairedStratum(usize),
    #[error("stratum {0} has more than one sampled unit in a one-unit design")]
    MultiUnitStratum(usize),
    #[error("inconsistent design: {0}")]
    InconsistentDesign(String),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
}

type Result<T> = std::result::Result<T, EstimatorError>;

/// Estimation method tag carried on every [`Estimate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Srs,
    Stratified,
    OneUnitCollapsed,
    TwoPhase,
    TwoPhaseP2only,
}

/// Degrees of freedom: a finite value, or "large enough for z".
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Df {
    Finite(f64),
    Large,
}

impl Serialize for Df {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Df::Finite(v) => s.serialize_f64(*v),
            Df::Large => s.serialize_str("large"),
        }
    }
}

impl<'de> Deserialize<'de> for Df {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Df::Finite(v)),
            Raw::Tag(t) if t == "large" => Ok(Df::Large),
            Raw::Tag(t) => Err(D::Error::custom(format!("bad df tag `{t}`"))),
        }
    }
}

/// A point estimate of the population mean with its estimated variance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub var_of_mean: f64,
    pub df: Df,
    pub method: Method,
}

/// A confidence interval `center ± margin`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub margin: f64,
    /// `margin / center` when the center is positive.
    pub relative_margin: Option<f64>,
    pub level: f64,
    pub critical: f64,
}

impl ConfidenceInterval {
    pub fn low(&self) -> f64 {
        self.center - self.margin
    }

    pub fn high(&self) -> f64 {
        self.center + self.margin
    }

    pub fn contains(&self, value: f64) -> bool {
        (value - self.center).abs() <= self.margin
    }
}

/// JSON record used by the CLI and planner.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mean: f64,
    pub var_of_mean: f64,
    pub df: Df,
    pub method: Method,
    pub level: f64,
    pub margin: f64,
    pub relative_margin: Option<f64>,
}

impl EstimateReport {
    pub fn new(est: &Estimate, ci: &ConfidenceInterval) -> Self {
        EstimateReport {
            mean: est.mean,
            var_of_mean: est.var_of_mean,
            df: est.df,
            method: est.method,
            level: ci.level,
            margin: ci.margin,
            relative_margin: ci.relative_margin,
        }
    }
}

/// The sampled values from one stratum.
#[derive(Clone, Debug)]
pub struct StratumSample {
    pub stratum_id: usize,
    /// W_h = N_h / N.
    pub weight: f64,
    pub values: Vec<f64>,
}

impl StratumSample {
    pub fn new(stratum_id: usize, weight: f64, values: Vec<f64>) -> Self {
        StratumSample {
            stratum_id,
            weight,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    /// Sample variance, divisor n-1.
    pub fn sample_var(&self) -> f64 {
        crate::population::sample_variance(&self.values)
    }
}

/// Grouping of strata for collapsed-strata variance estimation.
///
/// Groups have size 2, except that a single group of 3 is permitted to
/// absorb the leftover stratum when the total count is odd.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollapsedPairing {
    pub groups: Vec<Vec<usize>>,
}

impl CollapsedPairing {
    /// Number of collapsed groups (J).
    pub fn j(&self) -> usize {
        self.groups.len()
    }
}

/// How the shared within-pair variance is formed from the two observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CollapseRule {
    /// `s^2 = (y_h - y_{h+1})^2 / 4` assigned to each member, the squared
    /// half-difference. Conservative when neighboring strata have distinct
    /// means, low when they coincide.
    #[default]
    HalfDiffSquared,
    /// `s^2 = (y_h - y_{h+1})^2 / 2`, the two-point sample variance. For
    /// groups of identical strata its expectation matches the true design
    /// variance exactly.
    PairSampleVariance,
}

fn check_weights(samples: &[StratumSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(EstimatorError::InconsistentDesign("no strata supplied".into()));
    }
    for s in samples {
        if !(s.weight > 0.0 && s.weight <= 1.0 + WEIGHT_SUM_TOL) {
            return Err(EstimatorError::InconsistentDesign(format!(
                "stratum {} has weight {} outside (0, 1]",
                s.stratum_id, s.weight
            )));
        }
    }
    let sum: f64 = samples.iter().map(|s| s.weight).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(EstimatorError::WeightsNotNormalized { sum });
    }
    Ok(())
}

/// Simple random sampling: mean, s^2 with divisor n-1, v = s^2/n, df = n-1.
pub fn srs_estimate(values: &[f64]) -> Result<Estimate> {
    let n = values.len();
    if n < 2 {
        return Err(EstimatorError::TooFewSamples { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let s2 = crate::population::sample_variance(values);
    Ok(Estimate {
        mean,
        var_of_mean: s2 / n as f64,
        df: Df::Finite((n - 1) as f64),
        method: Method::Srs,
    })
}

/// Degrees-of-freedom policy for stratified designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DfMode {
    /// The n - L rule of thumb, switching to z when every stratum sample is
    /// large (>= 30) or there are >= 30 strata.
    #[default]
    RuleOfThumb,
    /// Satterthwaite's approximation.
    Satterthwaite,
}

fn stratified_df(samples: &[StratumSample], mode: DfMode) -> Result<Df> {
    let l = samples.len();
    let n: usize = samples.iter().map(|s| s.n()).sum();
    match mode {
        DfMode::RuleOfThumb => {
            if l >= 30 || samples.iter().all(|s| s.n() >= 30) {
                return Ok(Df::Large);
            }
            if n <= l {
                return Err(EstimatorError::InconsistentDesign(format!(
                    "df = n - L not positive (n = {n}, L = {l})"
                )));
            }
            Ok(Df::Finite((n - l) as f64))
        }
        DfMode::Satterthwaite => {
            // df = (sum a_h s_h^2)^2 / sum (a_h s_h^2)^2 / (n_h - 1), a_h = W_h^2/n_h
            let mut num = 0.0;
            let mut den = 0.0;
            for s in samples {
                let a = s.weight * s.weight / s.n() as f64;
                let term = a * s.sample_var();
                num += term;
                den += term * term / (s.n() as f64 - 1.0);
            }
            if den <= 0.0 {
                // All within-stratum variances are zero; margin is zero
                // regardless of the critical value.
                return Ok(Df::Large);
            }
            Ok(Df::Finite(num * num / den))
        }
    }
}

/// Stratified estimate with the default n - L df rule.
pub fn stratified_estimate(samples: &[StratumSample]) -> Result<Estimate> {
    stratified_estimate_with(samples, DfMode::RuleOfThumb)
}

/// Stratified estimate: mean = sum W_h ybar_h, v = sum W_h^2 s_h^2 / n_h.
pub fn stratified_estimate_with(samples: &[StratumSample], mode: DfMode) -> Result<Estimate> {
    for s in samples {
        if s.n() < 2 {
            return Err(EstimatorError::StratumTooSmall(s.stratum_id));
        }
    }
    check_weights(samples)?;
    let mean: f64 = samples.iter().map(|s| s.weight * s.mean()).sum();
    let var: f64 = samples
        .iter()
        .map(|s| s.weight * s.weight * s.sample_var() / s.n() as f64)
        .sum();
    Ok(Estimate {
        mean,
        var_of_mean: var,
        df: stratified_df(samples, mode)?,
        method: Method::Stratified,
    })
}

/// One-unit-per-stratum estimate with collapsed-strata variance, using the
/// default squared-half-difference rule.
pub fn collapsed_strata_estimate(
    samples: &[StratumSample],
    pairing: &CollapsedPairing,
) -> Result<Estimate> {
    collapsed_strata_estimate_with(samples, pairing, CollapseRule::default())
}

/// One-unit-per-stratum estimate with collapsed-strata variance.
///
/// Every stratum must contribute exactly one value and appear in exactly
/// one group. Groups of three use the difference of their extreme values.
/// df = L - J.
pub fn collapsed_strata_estimate_with(
    samples: &[StratumSample],
    pairing: &CollapsedPairing,
    rule: CollapseRule,
) -> Result<Estimate> {
    for s in samples {
        if s.n() != 1 {
            return Err(EstimatorError::MultiUnitStratum(s.stratum_id));
        }
    }
    check_weights(samples)?;
    let l = samples.len();
    let j = pairing.j();

    let mut seen = std::collections::BTreeMap::new();
    for s in samples {
        seen.insert(s.stratum_id, s);
    }
    let mut covered = std::collections::BTreeSet::new();
    let mut var = 0.0;
    for group in &pairing.groups {
        if group.len() != 2 && group.len() != 3 {
            return Err(EstimatorError::InconsistentDesign(format!(
                "collapsed group must have 2 or 3 strata, got {}",
                group.len()
            )));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &id in group {
            let s = seen
                .get(&id)
                .ok_or(EstimatorError::UnpairedStratum(id))?;
            if !covered.insert(id) {
                return Err(EstimatorError::InconsistentDesign(format!(
                    "stratum {id} appears in more than one collapsed group"
                )));
            }
            lo = lo.min(s.values[0]);
            hi = hi.max(s.values[0]);
        }
        let diff = hi - lo;
        let s2 = match rule {
            CollapseRule::HalfDiffSquared => diff * diff / 4.0,
            CollapseRule::PairSampleVariance => diff * diff / 2.0,
        };
        for &id in group {
            let w = seen[&id].weight;
            var += w * w * s2; // n_h = 1
        }
    }
    for s in samples {
        if !covered.contains(&s.stratum_id) {
            return Err(EstimatorError::UnpairedStratum(s.stratum_id));
        }
    }
    if l <= j {
        return Err(EstimatorError::InconsistentDesign(format!(
            "df = L - J not positive (L = {l}, J = {j})"
        )));
    }

    let mean: f64 = samples.iter().map(|s| s.weight * s.values[0]).sum();
    Ok(Estimate {
        mean,
        var_of_mean: var,
        df: Df::Finite((l - j) as f64),
        method: Method::OneUnitCollapsed,
    })
}

/// Two-phase variance using the phase-1 sample variance:
/// v = s^2/n + sum W_h^2 s_h^2 / n_h.
pub fn two_phase_variance(
    phase1_s2: f64,
    phase1_n: usize,
    samples: &[StratumSample],
) -> Result<Estimate> {
    if phase1_n < 2 {
        return Err(EstimatorError::TooFewSamples {
            needed: 2,
            got: phase1_n,
        });
    }
    if phase1_s2 < 0.0 {
        return Err(EstimatorError::InconsistentDesign(format!(
            "negative phase-1 variance {phase1_s2}"
        )));
    }
    let base = stratified_estimate(samples)?;
    Ok(Estimate {
        mean: base.mean,
        var_of_mean: phase1_s2 / phase1_n as f64 + base.var_of_mean,
        df: base.df,
        method: Method::TwoPhase,
    })
}

/// Two-phase variance from second-phase data alone:
/// v = (1/n) sum W_h (ybar_h - ybar)^2 + sum W_h^2 s_h^2 / n_h.
pub fn two_phase_variance_p2only(phase1_n: usize, samples: &[StratumSample]) -> Result<Estimate> {
    if phase1_n < 2 {
        return Err(EstimatorError::TooFewSamples {
            needed: 2,
            got: phase1_n,
        });
    }
    let base = stratified_estimate(samples)?;
    let between: f64 = samples
        .iter()
        .map(|s| {
            let d = s.mean() - base.mean;
            s.weight * d * d
        })
        .sum();
    Ok(Estimate {
        mean: base.mean,
        var_of_mean: between / phase1_n as f64 + base.var_of_mean,
        df: base.df,
        method: Method::TwoPhaseP2only,
    })
}

/// Degrees-of-freedom selection for a design.
///
/// * SRS: n - 1.
/// * Stratified (and the two-phase variants, whose small-sample behavior is
///   driven by the phase-2 stratified term): large-sample when every stratum
///   has n_h >= 30 (requires `samples`) or L >= 30; otherwise n - L.
/// * One-unit collapsed: L - J.
pub fn df_rule(
    method: Method,
    n: usize,
    l: usize,
    j: usize,
    samples: Option<&[StratumSample]>,
) -> Result<Df> {
    match method {
        Method::Srs => {
            if n < 2 {
                return Err(EstimatorError::TooFewSamples { needed: 2, got: n });
            }
            Ok(Df::Finite((n - 1) as f64))
        }
        Method::Stratified | Method::TwoPhase | Method::TwoPhaseP2only => {
            if l == 0 {
                return Err(EstimatorError::InconsistentDesign("L = 0".into()));
            }
            if let Some(samples) = samples {
                let total: usize = samples.iter().map(|s| s.n()).sum();
                if samples.len() != l || total != n {
                    return Err(EstimatorError::InconsistentDesign(format!(
                        "samples disagree with n = {n}, L = {l}"
                    )));
                }
                if samples.iter().all(|s| s.n() >= 30) {
                    return Ok(Df::Large);
                }
            }
            if l >= 30 {
                return Ok(Df::Large);
            }
            if n <= l {
                return Err(EstimatorError::InconsistentDesign(format!(
                    "df = n - L not positive (n = {n}, L = {l})"
                )));
            }
            Ok(Df::Finite((n - l) as f64))
        }
        Method::OneUnitCollapsed => {
            if j == 0 || l <= j {
                return Err(EstimatorError::InconsistentDesign(format!(
                    "df = L - J not positive (L = {l}, J = {j})"
                )));
            }
            Ok(Df::Finite((l - j) as f64))
        }
    }
}

/// Build the confidence interval for an estimate at `level`.
///
/// The critical value is a normal quantile when df is large (marked large,
/// or finite >= 30) and a t quantile otherwise.
pub fn confidence_interval(est: &Estimate, level: f64) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidLevel(level));
    }
    let critical = match est.df {
        Df::Large => stats::critical_value(level, None),
        Df::Finite(df) if df >= 30.0 => stats::critical_value(level, None),
        Df::Finite(df) => {
            if df < 1.0 {
                return Err(EstimatorError::InconsistentDesign(format!(
                    "finite df must be >= 1, got {df}"
                )));
            }
            stats::critical_value(level, Some(df))
        }
    };
    let margin = critical * est.var_of_mean.sqrt();
    Ok(ConfidenceInterval {
        center: est.mean,
        margin,
        relative_margin: (est.mean > 0.0).then(|| margin / est.mean),
        level,
        critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_strata() -> Vec<StratumSample> {
        vec![
            StratumSample::new(0, 0.5, vec![1.0, 3.0]),
            StratumSample::new(1, 0.5, vec![5.0, 7.0]),
        ]
    }

    #[test]
    fn srs_constant_data() {
        let e = srs_estimate(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.var_of_mean, 0.0);
        assert_eq!(e.df, Df::Finite(2.0));
        assert_eq!(e.method, Method::Srs);
    }

    #[test]
    fn srs_hand_example() {
        let e = srs_estimate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(e.mean, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.var_of_mean, 5.0 / 12.0, epsilon = 1e-15);
        assert_eq!(e.df, Df::Finite(3.0));
    }

    #[test]
    fn srs_single_value_rejected() {
        assert!(matches!(
            srs_estimate(&[5.0]),
            Err(EstimatorError::TooFewSamples { got: 1, .. })
        ));
    }

    #[test]
    fn stratified_zero_within_variance() {
        let samples = vec![
            StratumSample::new(0, 0.5, vec![1.0, 1.0]),
            StratumSample::new(1, 0.5, vec![3.0, 3.0]),
        ];
        let e = stratified_estimate(&samples).unwrap();
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.var_of_mean, 0.0);
    }

    #[test]
    fn stratified_hand_example() {
        let e = stratified_estimate(&two_strata()).unwrap();
        assert_abs_diff_eq!(e.mean, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.var_of_mean, 0.5, epsilon = 1e-15);
        assert_eq!(e.method, Method::Stratified);
        // n = 4, L = 2 -> df = 2
        assert_eq!(e.df, Df::Finite(2.0));
    }

    #[test]
    fn stratified_rejects_bad_weights() {
        let samples = vec![
            StratumSample::new(0, 0.6, vec![1.0, 3.0]),
            StratumSample::new(1, 0.5, vec![5.0, 7.0]),
        ];
        assert!(matches!(
            stratified_estimate(&samples),
            Err(EstimatorError::WeightsNotNormalized { .. })
        ));
    }

    #[test]
    fn stratified_rejects_small_stratum() {
        let samples = vec![
            StratumSample::new(0, 0.5, vec![1.0]),
            StratumSample::new(1, 0.5, vec![5.0, 7.0]),
        ];
        assert!(matches!(
            stratified_estimate(&samples),
            Err(EstimatorError::StratumTooSmall(0))
        ));
    }

    #[test]
    fn satterthwaite_df_between_bounds() {
        let samples = vec![
            StratumSample::new(0, 0.5, vec![1.0, 3.0, 2.0]),
            StratumSample::new(1, 0.5, vec![5.0, 9.0]),
        ];
        let e = stratified_estimate_with(&samples, DfMode::Satterthwaite).unwrap();
        match e.df {
            Df::Finite(df) => assert!(df >= 1.0 && df <= 3.0, "df {df}"),
            Df::Large => panic!("expected finite df"),
        }
    }

    fn one_unit(values: &[f64]) -> Vec<StratumSample> {
        let w = 1.0 / values.len() as f64;
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| StratumSample::new(i, w, vec![v]))
            .collect()
    }

    #[test]
    fn collapsed_hand_example() {
        let samples = one_unit(&[2.0, 4.0]);
        let pairing = CollapsedPairing {
            groups: vec![vec![0, 1]],
        };
        let e = collapsed_strata_estimate(&samples, &pairing).unwrap();
        assert_abs_diff_eq!(e.mean, 3.0, epsilon = 1e-15);
        // s^2 = (4-2)^2/4 = 1 for both strata; v = 0.25 + 0.25
        assert_abs_diff_eq!(e.var_of_mean, 0.5, epsilon = 1e-15);
        assert_eq!(e.df, Df::Finite(1.0));
        assert_eq!(e.method, Method::OneUnitCollapsed);
    }

    #[test]
    fn collapsed_identical_pair_contributes_zero() {
        let samples = one_unit(&[3.0, 3.0, 1.0, 5.0]);
        let pairing = CollapsedPairing {
            groups: vec![vec![0, 1], vec![2, 3]],
        };
        let e = collapsed_strata_estimate(&samples, &pairing).unwrap();
        // First pair identical -> only the second pair contributes.
        let expected = 2.0 * 0.0625 * (4.0 * 4.0 / 4.0);
        assert_abs_diff_eq!(e.var_of_mean, expected, epsilon = 1e-15);
        assert_eq!(e.df, Df::Finite(2.0));
    }

    #[test]
    fn collapsed_triple_uses_extremes() {
        let samples = one_unit(&[1.0, 2.0, 6.0]);
        let pairing = CollapsedPairing {
            groups: vec![vec![0, 1, 2]],
        };
        let e = collapsed_strata_estimate(&samples, &pairing).unwrap();
        let w2 = (1.0_f64 / 3.0) * (1.0 / 3.0);
        let s2 = (6.0 - 1.0) * (6.0 - 1.0) / 4.0;
        assert_abs_diff_eq!(e.var_of_mean, 3.0 * w2 * s2, epsilon = 1e-12);
        assert_eq!(e.df, Df::Finite(2.0));
    }

    #[test]
    fn collapsed_pair_sample_variance_rule() {
        let samples = one_unit(&[2.0, 4.0]);
        let pairing = CollapsedPairing {
            groups: vec![vec![0, 1]],
        };
        let e = collapsed_strata_estimate_with(&samples, &pairing, CollapseRule::PairSampleVariance)
            .unwrap();
        assert_abs_diff_eq!(e.var_of_mean, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn collapsed_rejects_multi_unit_and_unpaired() {
        let mut samples = one_unit(&[2.0, 4.0]);
        samples[0].values.push(1.0);
        let pairing = CollapsedPairing {
            groups: vec![vec![0, 1]],
        };
        assert!(matches!(
            collapsed_strata_estimate(&samples, &pairing),
            Err(EstimatorError::MultiUnitStratum(0))
        ));

        let samples = one_unit(&[2.0, 4.0, 6.0, 8.0]);
        let pairing = CollapsedPairing {
            groups: vec![vec![0, 1]],
        };
        assert!(matches!(
            collapsed_strata_estimate(&samples, &pairing),
            Err(EstimatorError::UnpairedStratum(_))
        ));
    }

    #[test]
    fn two_phase_hand_example() {
        let e = two_phase_variance(4.0, 400, &two_strata()).unwrap();
        assert_abs_diff_eq!(e.var_of_mean, 0.51, epsilon = 1e-15);
        assert_eq!(e.method, Method::TwoPhase);
    }

    #[test]
    fn two_phase_first_term_vanishes() {
        let e = two_phase_variance(4.0, 1_000_000_000, &two_strata()).unwrap();
        assert_abs_diff_eq!(e.var_of_mean, 0.5, epsilon = 1e-8);
        let e0 = two_phase_variance(0.0, 400, &two_strata()).unwrap();
        assert_abs_diff_eq!(e0.var_of_mean, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn p2only_hand_example() {
        let e = two_phase_variance_p2only(400, &two_strata()).unwrap();
        // between-term: (0.5*(2-4)^2 + 0.5*(6-4)^2)/400 = 4/400 = 0.01
        assert_abs_diff_eq!(e.var_of_mean, 0.51, epsilon = 1e-15);
        assert_eq!(e.method, Method::TwoPhaseP2only);
    }

    #[test]
    fn p2only_equal_means_between_term_zero() {
        let samples = vec![
            StratumSample::new(0, 0.5, vec![1.0, 3.0]),
            StratumSample::new(1, 0.5, vec![3.0, 1.0]),
        ];
        let e = two_phase_variance_p2only(100, &samples).unwrap();
        let base = stratified_estimate(&samples).unwrap();
        assert_abs_diff_eq!(e.var_of_mean, base.var_of_mean, epsilon = 1e-15);
    }

    #[test]
    fn df_rule_cases() {
        assert_eq!(df_rule(Method::Srs, 100, 0, 0, None).unwrap(), Df::Finite(99.0));
        assert_eq!(
            df_rule(Method::Stratified, 40, 20, 0, None).unwrap(),
            Df::Finite(20.0)
        );
        assert_eq!(
            df_rule(Method::OneUnitCollapsed, 20, 20, 10, None).unwrap(),
            Df::Finite(10.0)
        );
        assert_eq!(df_rule(Method::Stratified, 100, 30, 0, None).unwrap(), Df::Large);
        // Every stratum large -> z.
        let samples: Vec<StratumSample> = (0..3)
            .map(|i| StratumSample::new(i, 1.0 / 3.0, vec![1.0; 40]))
            .collect();
        assert_eq!(
            df_rule(Method::Stratified, 120, 3, 0, Some(&samples)).unwrap(),
            Df::Large
        );
        assert!(df_rule(Method::Stratified, 20, 20, 0, None).is_err());
    }

    #[test]
    fn ci_zero_variance_zero_margin() {
        let e = srs_estimate(&[2.0, 2.0, 2.0]).unwrap();
        for level in [0.5, 0.9, 0.99] {
            let ci = confidence_interval(&e, level).unwrap();
            assert_eq!(ci.margin, 0.0);
        }
    }

    #[test]
    fn ci_hand_example_t3() {
        let e = srs_estimate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let ci = confidence_interval(&e, 0.95).unwrap();
        // t(0.975, 3) * sqrt(5/12)
        assert_abs_diff_eq!(ci.margin, 2.054260256760879, epsilon = 1e-9);
        assert_abs_diff_eq!(ci.relative_margin.unwrap(), ci.margin / 2.5, epsilon = 1e-12);
    }

    #[test]
    fn ci_large_df_uses_z() {
        let e = Estimate {
            mean: 1.0,
            var_of_mean: 1.0,
            df: Df::Large,
            method: Method::Srs,
        };
        let ci = confidence_interval(&e, 0.95).unwrap();
        assert_abs_diff_eq!(ci.critical, 1.959963984540054, epsilon = 1e-8);
    }

    #[test]
    fn ci_rejects_bad_level() {
        let e = srs_estimate(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            confidence_interval(&e, 1.0),
            Err(EstimatorError::InvalidLevel(_))
        ));
    }

    #[test]
    fn estimate_report_serializes_df_tags() {
        let est = Estimate {
            mean: 1.5,
            var_of_mean: 0.01,
            df: Df::Large,
            method: Method::TwoPhaseP2only,
        };
        let ci = confidence_interval(&est, 0.95).unwrap();
        let json = serde_json::to_string(&EstimateReport::new(&est, &ci)).unwrap();
        assert!(json.contains("\"df\":\"large\""));
        assert!(json.contains("\"method\":\"TWO_PHASE_P2ONLY\""));
        let back: EstimateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.df, Df::Large);
    }
}
