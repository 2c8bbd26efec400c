//! Two-phase study planning: phase-1 sizing, periodic multi-unit sample
//! allocation under a margin-growth policy, and the drift check comparing
//! the day-to-day one-unit estimate against a multi-unit interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    self, ConfidenceInterval, Estimate, EstimatorError, WEIGHT_SUM_TOL,
};
use crate::population::Population;
use crate::stats;
use crate::stratification::Stratification;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("pilot sample needs at least 2 values, got {0}")]
    PilotTooSmall(usize),
    #[error("pilot mean must be positive for a relative-margin target")]
    ZeroMeanPilot,
    #[error("target relative margin must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("growth factor must exceed 1, got {0}")]
    BadGrowthFactor(f64),
    #[error("phase-1 summary invalid: {0}")]
    InvalidSummary(String),
    #[error("variance budget is not positive (target margin {target}, phase-1 term {phase1_term})")]
    InfeasibleBudget { target: f64, phase1_term: f64 },
    #[error("strata exhausted: cannot reach the target margin within population caps")]
    StratumExhausted,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

type Result<T> = std::result::Result<T, PlannerError>;

/// Phase-1 statistics for one stratum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Phase1Stratum {
    pub stratum_id: usize,
    pub weight: f64,
    /// Within-stratum sample standard deviation (divisor n-1).
    pub sd: f64,
    /// Population size of the stratum; caps the phase-2 allocation.
    pub n_members: usize,
}

/// Everything the allocator needs from the phase-1 sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Phase1Summary {
    /// Phase-1 sample size n.
    pub n: usize,
    /// Phase-1 overall mean.
    pub mean: f64,
    /// Phase-1 overall sample standard deviation.
    pub sd: f64,
    /// Between-strata variance: sum of W_h (ybar_h - ybar)^2.
    pub between_var: f64,
    pub strata: Vec<Phase1Stratum>,
}

impl Phase1Summary {
    /// Treat a fully measured population as the phase-1 sample and summarize
    /// it under a stratification.
    pub fn from_population(pop: &Population, strat: &Stratification) -> Self {
        let mean = pop.mean_cpi();
        let sd = pop.cpi_variance().sqrt();
        let members = strat.members_by_stratum();
        let mut strata = Vec::with_capacity(strat.l());
        let mut between = 0.0;
        for stratum in &strat.strata {
            let values: Vec<f64> = members[stratum.id]
                .iter()
                .map(|&id| pop.region(id).expect("member in population").cpi)
                .collect();
            let m = values.iter().sum::<f64>() / values.len() as f64;
            between += stratum.weight * (m - mean) * (m - mean);
            strata.push(Phase1Stratum {
                stratum_id: stratum.id,
                weight: stratum.weight,
                sd: crate::population::sample_variance(&values).sqrt(),
                n_members: stratum.n_members,
            });
        }
        Phase1Summary {
            n: pop.n(),
            mean,
            sd,
            between_var: between,
            strata,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(PlannerError::InvalidSummary(format!(
                "phase-1 n = {} too small",
                self.n
            )));
        }
        if self.mean <= 0.0 {
            return Err(PlannerError::ZeroMeanPilot);
        }
        if self.sd < 0.0 || self.between_var < 0.0 {
            return Err(PlannerError::InvalidSummary("negative variance".into()));
        }
        if self.strata.is_empty() {
            return Err(PlannerError::InvalidSummary("no strata".into()));
        }
        let wsum: f64 = self.strata.iter().map(|s| s.weight).sum();
        if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(PlannerError::InvalidSummary(format!(
                "weights sum to {wsum}"
            )));
        }
        for s in &self.strata {
            if s.sd < 0.0 || s.n_members == 0 {
                return Err(PlannerError::InvalidSummary(format!(
                    "stratum {} malformed",
                    s.stratum_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-stratum phase-2 sample sizes plus the margins they imply.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Phase2Allocation {
    pub per_stratum: Vec<StratumAllocation>,
    pub total: usize,
    pub level: f64,
    pub growth_factor: f64,
    pub phase1_n: usize,
    pub phase1_rel_margin: f64,
    pub target_rel_margin: f64,
    pub predicted_rel_margin: f64,
    /// Phase-1 term of the second-phase-only variance: between_var / n.
    pub phase1_term: f64,
    /// Stratified term: sum of W_h^2 s_h^2 / n_h.
    pub stratified_term: f64,
    /// Strata whose allocation hit the population cap N_h.
    pub capped: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StratumAllocation {
    pub stratum_id: usize,
    pub n_h: usize,
    pub capped: bool,
}

/// Phase-1 sizing from a pilot: n = ceil((z s / (target ybar))^2), never
/// smaller than the pilot itself.
pub fn size_phase1(pilot: &[f64], target_rel_margin: f64, level: f64) -> Result<usize> {
    if pilot.len() < 2 {
        return Err(PlannerError::PilotTooSmall(pilot.len()));
    }
    if target_rel_margin <= 0.0 {
        return Err(PlannerError::InvalidTarget(target_rel_margin));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidLevel(level).into());
    }
    let mean = pilot.iter().sum::<f64>() / pilot.len() as f64;
    if mean <= 0.0 {
        return Err(PlannerError::ZeroMeanPilot);
    }
    let s = crate::population::sample_variance(pilot).sqrt();
    let z = stats::critical_value(level, None);
    let n = (z * s / (target_rel_margin * mean)).powi(2).ceil() as usize;
    Ok(n.max(pilot.len()))
}

fn stratified_term(strata: &[Phase1Stratum], alloc: &[usize]) -> f64 {
    strata
        .iter()
        .zip(alloc)
        .map(|(s, &n)| s.weight * s.weight * s.sd * s.sd / n as f64)
        .sum()
}

fn predicted_margin(
    phase1_term: f64,
    strat_term: f64,
    total: usize,
    l: usize,
    level: f64,
    strata: &[Phase1Stratum],
    alloc: &[usize],
) -> f64 {
    // df per the stratified rule, evaluated on the planned allocation.
    let large = l >= 30 || strata.iter().zip(alloc).all(|(_, &n)| n >= 30);
    let crit = if large || total - l >= 30 {
        stats::critical_value(level, None)
    } else {
        stats::critical_value(level, Some((total - l) as f64))
    };
    crit * (phase1_term + strat_term).sqrt()
}

/// Size the periodic multi-unit phase-2 sample.
///
/// Policy: the combined margin (second-phase-only variance) may grow to at
/// most `growth_factor` times the phase-1 SRS margin, and the allocation is
/// pushed until the phase-1 term dominates the stratified term (or caps are
/// hit, which the result reports). Sizes follow Neyman proportions
/// n_h ~ W_h s_h with a floor of 2 and a cap of N_h.
pub fn allocate_phase2(
    phase1: &Phase1Summary,
    growth_factor: f64,
    level: f64,
) -> Result<Phase2Allocation> {
    phase1.validate()?;
    if growth_factor <= 1.0 {
        return Err(PlannerError::BadGrowthFactor(growth_factor));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidLevel(level).into());
    }
    let z = stats::critical_value(level, None);
    let n1 = phase1.n as f64;
    let v1 = phase1.sd * phase1.sd / n1;
    let m1 = z * v1.sqrt();
    let target = growth_factor * m1;
    let phase1_term = phase1.between_var / n1;

    let margin_budget = (target / z).powi(2) - phase1_term;
    if margin_budget <= 0.0 {
        return Err(PlannerError::InfeasibleBudget {
            target,
            phase1_term,
        });
    }
    // Aim for the tighter of the margin budget and phase-1 dominance.
    let budget = if phase1_term > 0.0 {
        margin_budget.min(phase1_term)
    } else {
        margin_budget
    };

    let l = phase1.strata.len();
    let sum_ws: f64 = phase1.strata.iter().map(|s| s.weight * s.sd).sum();
    let mut alloc: Vec<usize> = phase1
        .strata
        .iter()
        .map(|s| {
            let raw = if sum_ws > 0.0 {
                (s.weight * s.sd * sum_ws / budget).ceil() as usize
            } else {
                0
            };
            raw.max(2).min(s.n_members)
        })
        .collect();

    // Greedy refinement: first meet the hard margin target, then push for
    // phase-1 dominance while any stratum can still grow.
    let bump = |alloc: &mut Vec<usize>| -> bool {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in phase1.strata.iter().enumerate() {
            if alloc[i] >= s.n_members {
                continue;
            }
            let n = alloc[i] as f64;
            let gain = s.weight * s.weight * s.sd * s.sd * (1.0 / n - 1.0 / (n + 1.0));
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, _)) => {
                alloc[i] += 1;
                true
            }
            None => false,
        }
    };

    loop {
        let strat_term = stratified_term(&phase1.strata, &alloc);
        let total: usize = alloc.iter().sum();
        let pred = predicted_margin(
            phase1_term,
            strat_term,
            total,
            l,
            level,
            &phase1.strata,
            &alloc,
        );
        if pred <= target {
            break;
        }
        if !bump(&mut alloc) {
            return Err(PlannerError::StratumExhausted);
        }
    }
    while phase1_term > 0.0 && stratified_term(&phase1.strata, &alloc) > phase1_term {
        if !bump(&mut alloc) {
            break; // capped: reported below
        }
    }

    let strat_term = stratified_term(&phase1.strata, &alloc);
    let total: usize = alloc.iter().sum();
    let pred = predicted_margin(
        phase1_term,
        strat_term,
        total,
        l,
        level,
        &phase1.strata,
        &alloc,
    );
    let per_stratum: Vec<StratumAllocation> = phase1
        .strata
        .iter()
        .zip(&alloc)
        .map(|(s, &n_h)| StratumAllocation {
            stratum_id: s.stratum_id,
            n_h,
            capped: n_h == s.n_members,
        })
        .collect();
    let capped = per_stratum
        .iter()
        .filter(|a| a.capped)
        .map(|a| a.stratum_id)
        .collect();
    Ok(Phase2Allocation {
        per_stratum,
        total,
        level,
        growth_factor,
        phase1_n: phase1.n,
        phase1_rel_margin: m1 / phase1.mean,
        target_rel_margin: target / phase1.mean,
        predicted_rel_margin: pred / phase1.mean,
        phase1_term,
        stratified_term: strat_term,
        capped,
    })
}

/// Drift verdict comparing a one-unit estimate against a multi-unit CI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Ok,
    Drift,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    pub one_unit_estimate: f64,
    pub multi_unit: Estimate,
    pub interval: ConfidenceInterval,
    pub abs_gap: f64,
    pub rel_gap: Option<f64>,
    pub verdict: Verdict,
}

/// The day-to-day selection is considered stale when its estimate falls
/// outside the periodic multi-unit confidence interval.
pub fn drift_check(sel_estimate: f64, multiunit: &Estimate, level: f64) -> Result<DriftReport> {
    let interval = estimators::confidence_interval(multiunit, level)?;
    let abs_gap = (sel_estimate - multiunit.mean).abs();
    let verdict = if abs_gap <= interval.margin {
        Verdict::Ok
    } else {
        Verdict::Drift
    };
    Ok(DriftReport {
        one_unit_estimate: sel_estimate,
        multi_unit: *multiunit,
        interval,
        abs_gap,
        rel_gap: (multiunit.mean != 0.0).then(|| abs_gap / multiunit.mean.abs()),
        verdict,
    })
}

/// Evaluate the second-phase-only margin an allocation implies, given the
/// same phase-1 statistics the allocator saw. Exposed so reports can verify
/// the planner's prediction independently.
pub fn margin_for_allocation(
    phase1: &Phase1Summary,
    alloc: &[StratumAllocation],
    level: f64,
) -> Result<f64> {
    phase1.validate()?;
    let sizes: Vec<usize> = alloc.iter().map(|a| a.n_h).collect();
    if sizes.len() != phase1.strata.len() || sizes.iter().any(|&n| n == 0) {
        return Err(PlannerError::InvalidSummary(
            "allocation does not match phase-1 strata".into(),
        ));
    }
    let strat_term = stratified_term(&phase1.strata, &sizes);
    let total: usize = sizes.iter().sum();
    Ok(predicted_margin(
        phase1.between_var / phase1.n as f64,
        strat_term,
        total,
        phase1.strata.len(),
        level,
        &phase1.strata,
        &sizes,
    ))
}
