//! Synthetic populations and empirical validation.
//!
//! Coverage experiments draw repeated samples from a fully known population
//! and measure how often the produced confidence interval contains the true
//! mean, along with the empirical 95th-percentile absolute relative error
//! (the smallest error among the worst 5% of trials). The scheme-comparison
//! harness measures analytical margins, empirical error percentiles,
//! collapsed-strata margins, and realized per-configuration errors for the
//! stratification schemes and selection policies side by side.
//!
//! Per-trial seeds are derived from the master seed by a counter-based
//! scheme, so trials can run in any order or in parallel and still produce
//! identical results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    self, CollapsedPairing, StratumSample,
};
use crate::population::{BbvTable, FeatureMatrix, Population, Region};
use crate::rng::DetRng;
use crate::selection::{self};
use crate::stratification::{self, Stratification};

const TRIAL_TAG: u64 = 0x7472; // "tr"
const CPI_TAG: u64 = 0x637; // component CPI draws
const METRIC_TAG: u64 = 0x6d65;
const BBV_TAG: u64 = 0xbb;
const CONFIG_TAG: u64 = 0xc0f;

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("design infeasible: {0}")]
    DesignInfeasible(String),
    #[error("coverage experiments need at least 100 trials, got {0}")]
    TooFewTrials(usize),
    #[error(transparent)]
    Estimator(#[from] estimators::EstimatorError),
    #[error(transparent)]
    Stratification(#[from] stratification::StratificationError),
    #[error(transparent)]
    Selection(#[from] selection::SelectionError),
    #[error(transparent)]
    Population(#[from] crate::population::PopulationError),
}

type Result<T> = std::result::Result<T, MonteCarloError>;

/// CPI distribution of one synthetic phase.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CpiDistribution {
    Normal { mean: f64, sd: f64 },
    Lognormal { mu: f64, sigma: f64 },
    PointMass { value: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseComponent {
    pub proportion: f64,
    pub cpi: CpiDistribution,
}

/// Links synthetic metrics to CPI: each metric is
/// `offset + rho * z(cpi) + sqrt(1 - rho^2) * noise`, floored at zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRule {
    pub n_metrics: usize,
    /// Correlation rho in [0, 1] between each metric and CPI.
    pub correlation: f64,
}

/// A rare extreme component, e.g. a handful of regions at 20x the mean CPI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutlierComponent {
    pub proportion: f64,
    pub cpi: f64,
}

/// Synthetic BBV generation: each phase owns `blocks_per_phase` blocks with
/// a fixed rank-decay profile perturbed by multiplicative noise. The
/// optional `shared_profile_of` map lets two phases emit identical block
/// profiles (regions that execute the same code but behave differently).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BbvRule {
    pub blocks_per_phase: usize,
    pub noise: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub shared_profile_of: BTreeMap<usize, usize>,
}

/// Full description of a synthetic population.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub total: usize,
    pub seed: u64,
    pub components: Vec<PhaseComponent>,
    pub metric_rule: MetricRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier: Option<OutlierComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbv: Option<BbvRule>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total < 10 {
            return Err(MonteCarloError::InvalidSpec(format!(
                "total {} < 10",
                self.total
            )));
        }
        if self.components.is_empty() {
            return Err(MonteCarloError::InvalidSpec("no components".into()));
        }
        let mut psum: f64 = self.components.iter().map(|c| c.proportion).sum();
        if let Some(o) = &self.outlier {
            if o.cpi <= 0.0 {
                return Err(MonteCarloError::InvalidSpec("outlier cpi <= 0".into()));
            }
            psum += o.proportion;
        }
        if (psum - 1.0).abs() > 1e-9 {
            return Err(MonteCarloError::InvalidSpec(format!(
                "proportions sum to {psum}"
            )));
        }
        for c in &self.components {
            if c.proportion < 0.0 {
                return Err(MonteCarloError::InvalidSpec("negative proportion".into()));
            }
            match c.cpi {
                CpiDistribution::Normal { mean, sd } => {
                    if mean <= 0.0 || sd < 0.0 {
                        return Err(MonteCarloError::InvalidSpec(
                            "normal component needs mean > 0, sd >= 0".into(),
                        ));
                    }
                }
                CpiDistribution::Lognormal { sigma, .. } => {
                    if sigma < 0.0 {
                        return Err(MonteCarloError::InvalidSpec("lognormal sigma < 0".into()));
                    }
                }
                CpiDistribution::PointMass { value } => {
                    if value <= 0.0 {
                        return Err(MonteCarloError::InvalidSpec("point mass <= 0".into()));
                    }
                }
            }
        }
        if !(0.0..=1.0).contains(&self.metric_rule.correlation) {
            return Err(MonteCarloError::InvalidSpec(format!(
                "correlation {} outside [0, 1]",
                self.metric_rule.correlation
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` into `proportions`.
/// Remainders tie-break toward larger fractional part, then lower index.
fn apportion(proportions: &[f64], total: usize) -> Vec<usize> {
    let shares: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then_with(|| a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

fn draw_cpi(dist: &CpiDistribution, rng: &mut DetRng) -> f64 {
    match dist {
        CpiDistribution::Normal { mean, sd } => loop {
            let v = mean + sd * rng.normal();
            if v > 0.0 {
                return v;
            }
        },
        CpiDistribution::Lognormal { mu, sigma } => (mu + sigma * rng.normal()).exp(),
        CpiDistribution::PointMass { value } => *value,
    }
}

const METRIC_OFFSET: f64 = 6.0;

/// Generate a population (and optional BBV table) from a spec.
///
/// Deterministic for a fixed seed. The population itself is the sampling
/// frame, so its mean CPI is the true value coverage is judged against.
pub fn synth_population(spec: &SynthSpec) -> Result<(Population, Option<BbvTable>)> {
    spec.validate()?;
    let mut proportions: Vec<f64> = spec.components.iter().map(|c| c.proportion).collect();
    if let Some(o) = &spec.outlier {
        proportions.push(o.proportion);
    }
    let counts = apportion(&proportions, spec.total);

    // Phase-blocked CPI draws, one substream per component.
    let mut cpis: Vec<f64> = Vec::with_capacity(spec.total);
    let mut phases: Vec<usize> = Vec::with_capacity(spec.total);
    for (ci, count) in counts.iter().enumerate() {
        let mut rng = DetRng::derive(spec.seed, &[CPI_TAG, ci as u64]);
        for _ in 0..*count {
            let v = match spec.components.get(ci) {
                Some(c) => draw_cpi(&c.cpi, &mut rng),
                None => spec.outlier.as_ref().expect("outlier component").cpi,
            };
            cpis.push(v);
            phases.push(ci);
        }
    }

    let mean = cpis.iter().sum::<f64>() / cpis.len() as f64;
    let sd = crate::population::sample_variance(&cpis).sqrt().max(1e-12);
    let rho = spec.metric_rule.correlation;
    let noise_scale = (1.0 - rho * rho).sqrt();

    let mut regions = Vec::with_capacity(spec.total);
    for (i, (&cpi, &_phase)) in cpis.iter().zip(&phases).enumerate() {
        let z = (cpi - mean) / sd;
        let mut rng = DetRng::derive(spec.seed, &[METRIC_TAG, i as u64]);
        let metrics = (0..spec.metric_rule.n_metrics)
            .map(|_| (METRIC_OFFSET + rho * z + noise_scale * rng.normal()).max(0.0))
            .collect();
        regions.push(Region {
            region_id: format!("r{i:06}"),
            instr_count: 1_000_000,
            cpi,
            metrics,
        });
    }
    let metric_names = (0..spec.metric_rule.n_metrics)
        .map(|j| format!("m{j}"))
        .collect();
    let pop = Population::new(regions, metric_names)?;

    let bbvs = match &spec.bbv {
        None => None,
        Some(rule) => {
            let mut triplets = Vec::new();
            for (i, &phase) in phases.iter().enumerate() {
                let profile = *rule.shared_profile_of.get(&phase).unwrap_or(&phase);
                let mut rng = DetRng::derive(spec.seed, &[BBV_TAG, i as u64]);
                for b in 0..rule.blocks_per_phase {
                    // Rank-decay base weight with multiplicative noise.
                    let base = 1000.0 / (1.0 + b as f64);
                    let count = (base * (1.0 + rule.noise * rng.normal())).max(1.0).round();
                    triplets.push((
                        format!("r{i:06}"),
                        format!("b{profile:03}_{b:03}"),
                        count,
                    ));
                }
            }
            Some(BbvTable::from_triplets(triplets)?)
        }
    };
    Ok((pop, bbvs))
}

/// A sampling design a coverage experiment can exercise.
#[derive(Clone, Debug)]
pub enum SamplingDesign {
    Srs {
        n: usize,
    },
    Stratified {
        stratification: Stratification,
        n_per_stratum: BTreeMap<usize, usize>,
    },
    OneUnitCollapsed {
        stratification: Stratification,
        pairing: CollapsedPairing,
    },
}

impl SamplingDesign {
    /// Uniform per-stratum allocation helper.
    pub fn stratified_uniform(stratification: Stratification, n_h: usize) -> Self {
        let n_per_stratum = stratification
            .strata
            .iter()
            .map(|s| (s.id, n_h))
            .collect();
        SamplingDesign::Stratified {
            stratification,
            n_per_stratum,
        }
    }

    fn validate(&self, pop: &Population) -> Result<()> {
        match self {
            SamplingDesign::Srs { n } => {
                if *n < 2 || *n > pop.n() {
                    return Err(MonteCarloError::DesignInfeasible(format!(
                        "SRS n = {} on population of {}",
                        n,
                        pop.n()
                    )));
                }
            }
            SamplingDesign::Stratified {
                stratification,
                n_per_stratum,
            } => {
                check_strat(stratification, pop)?;
                for stratum in &stratification.strata {
                    let n_h = n_per_stratum.get(&stratum.id).copied().unwrap_or(0);
                    if n_h < 2 || n_h > stratum.n_members {
                        return Err(MonteCarloError::DesignInfeasible(format!(
                            "stratum {} allocation {n_h} outside 2..={}",
                            stratum.id, stratum.n_members
                        )));
                    }
                }
            }
            SamplingDesign::OneUnitCollapsed {
                stratification, ..
            } => {
                check_strat(stratification, pop)?;
            }
        }
        Ok(())
    }
}

fn check_strat(strat: &Stratification, pop: &Population) -> Result<()> {
    if strat.n() != pop.n() {
        return Err(MonteCarloError::DesignInfeasible(format!(
            "stratification covers {} regions, population has {}",
            strat.n(),
            pop.n()
        )));
    }
    for id in strat.assignment.keys() {
        if !pop.contains(id) {
            return Err(MonteCarloError::DesignInfeasible(format!(
                "stratified region `{id}` not in population"
            )));
        }
    }
    Ok(())
}

/// Outcome of a coverage experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageResult {
    pub trials: usize,
    pub level: f64,
    /// Fraction of trials whose CI contained the true mean.
    pub coverage: f64,
    /// Empirical 95th-percentile absolute relative error: the smallest
    /// error among the worst ceil(5%) of trials.
    pub p95_abs_rel_error: f64,
}

impl CoverageResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trials,level,coverage,p95_abs_rel_error\n");
        let _ = writeln!(
            out,
            "{},{},{},{}",
            self.trials, self.level, self.coverage, self.p95_abs_rel_error
        );
        out
    }
}

/// The empirical worst-5% error: k-th largest with k = ceil(0.05 * trials).
fn p95_error(errors: &mut [f64]) -> f64 {
    errors.sort_by(|a, b| b.total_cmp(a));
    let k = ((errors.len() as f64) * 0.05).ceil().max(1.0) as usize;
    errors[k - 1]
}

/// Repeatedly draw samples under `design`, build the confidence interval at
/// `level`, and record hits against the population mean.
///
/// Trials are independent (seed derived from `(master_seed, trial)`) and run
/// in parallel; results are identical to sequential execution.
pub fn coverage_experiment(
    pop: &Population,
    design: &SamplingDesign,
    trials: usize,
    level: f64,
    master_seed: u64,
) -> Result<CoverageResult> {
    if trials < 100 {
        return Err(MonteCarloError::TooFewTrials(trials));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(estimators::EstimatorError::InvalidLevel(level).into());
    }
    design.validate(pop)?;
    let true_mean = pop.mean_cpi();
    let cpis = pop.cpi_values();
    let members_cache = match design {
        SamplingDesign::Stratified { stratification, .. }
        | SamplingDesign::OneUnitCollapsed { stratification, .. } => {
            let members = stratification.members_by_stratum();
            Some(
                members
                    .into_iter()
                    .map(|m| {
                        m.into_iter()
                            .map(|id| pop.region(id).expect("validated").cpi)
                            .collect::<Vec<f64>>()
                    })
                    .collect::<Vec<_>>(),
            )
        }
        SamplingDesign::Srs { .. } => None,
    };

    let outcomes: Vec<(bool, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = DetRng::derive(master_seed, &[TRIAL_TAG, trial as u64]);
            let est = match design {
                SamplingDesign::Srs { n } => {
                    let idx = rng.sample_indices(cpis.len(), *n);
                    let values: Vec<f64> = idx.iter().map(|&i| cpis[i]).collect();
                    estimators::srs_estimate(&values).expect("n >= 2 validated")
                }
                SamplingDesign::Stratified {
                    stratification,
                    n_per_stratum,
                } => {
                    let members = members_cache.as_ref().expect("cached");
                    let samples: Vec<StratumSample> = stratification
                        .strata
                        .iter()
                        .map(|stratum| {
                            let pool = &members[stratum.id];
                            let n_h = n_per_stratum[&stratum.id];
                            let idx = rng.sample_indices(pool.len(), n_h);
                            StratumSample::new(
                                stratum.id,
                                stratum.weight,
                                idx.iter().map(|&i| pool[i]).collect(),
                            )
                        })
                        .collect();
                    estimators::stratified_estimate(&samples).expect("validated design")
                }
                SamplingDesign::OneUnitCollapsed {
                    stratification,
                    pairing,
                } => {
                    let members = members_cache.as_ref().expect("cached");
                    let samples: Vec<StratumSample> = stratification
                        .strata
                        .iter()
                        .map(|stratum| {
                            let pool = &members[stratum.id];
                            let pick = pool[rng.gen_range(pool.len())];
                            StratumSample::new(stratum.id, stratum.weight, vec![pick])
                        })
                        .collect();
                    estimators::collapsed_strata_estimate(&samples, pairing)
                        .expect("validated design")
                }
            };
            let ci = estimators::confidence_interval(&est, level).expect("level validated");
            let cover = ci.contains(true_mean);
            let err = (est.mean - true_mean).abs() / true_mean;
            (cover, err)
        })
        .collect();

    let covered = outcomes.iter().filter(|(c, _)| *c).count();
    let mut errors: Vec<f64> = outcomes.into_iter().map(|(_, e)| e).collect();
    Ok(CoverageResult {
        trials,
        level,
        coverage: covered as f64 / trials as f64,
        p95_abs_rel_error: p95_error(&mut errors),
    })
}

/// A named per-region CPI map representing one simulated configuration.
#[derive(Clone, Debug)]
pub struct ConfigY {
    pub name: String,
    pub y: BTreeMap<String, f64>,
}

/// Model alternative configurations as monotone perturbations of the
/// baseline CPI plus per-region noise: `y' = a * y^b + noise`.
pub fn synth_configs(
    pop: &Population,
    params: &[(f64, f64, f64)],
    seed: u64,
) -> Vec<ConfigY> {
    params
        .iter()
        .enumerate()
        .map(|(c, &(a, b, noise_sd))| {
            let mut y = BTreeMap::new();
            for (i, r) in pop.regions().iter().enumerate() {
                let mut rng = DetRng::derive(seed, &[CONFIG_TAG, c as u64, i as u64]);
                let v = (a * r.cpi.powf(b) + noise_sd * rng.normal()).max(1e-6);
                y.insert(r.region_id.clone(), v);
            }
            ConfigY {
                name: format!("config{}", c + 1),
                y,
            }
        })
        .collect()
}

/// One measured number in the comparison table.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub scheme: String,
    pub policy: String,
    pub seed: u64,
    pub config: String,
    pub measure: String,
    pub value: f64,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("scheme,policy,seed,config,measure,value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scheme, r.policy, r.seed, r.config, r.measure, r.value
        );
    }
    out
}

pub struct ComparisonInput<'a> {
    pub pop: &'a Population,
    pub bbv_features: Option<&'a FeatureMatrix>,
    pub rfv_features: Option<&'a FeatureMatrix>,
    pub include_dalenius: bool,
    pub include_srs: bool,
    pub k: usize,
    pub configs: &'a [ConfigY],
    pub seeds: &'a [u64],
    pub trials: usize,
    pub level: f64,
    pub master_seed: u64,
    pub max_iter: usize,
    pub dg_tol: f64,
}

fn true_mean_of(config: &ConfigY, pop: &Population) -> f64 {
    pop.regions()
        .iter()
        .map(|r| config.y[&r.region_id])
        .sum::<f64>()
        / pop.n() as f64
}

/// Analytical one-unit margin with known within-stratum variances, stated
/// relative to the true mean. Uses the normal critical value (variances are
/// treated as known, not estimated).
fn analytical_one_unit_margin(
    strat: &Stratification,
    config: &ConfigY,
    pop: &Population,
    level: f64,
) -> f64 {
    let members = strat.members_by_stratum();
    let mut var = 0.0;
    for stratum in &strat.strata {
        let values: Vec<f64> = members[stratum.id]
            .iter()
            .map(|&id| config.y[id])
            .collect();
        var += stratum.weight * stratum.weight * crate::population::sample_variance(&values);
    }
    let z = crate::stats::critical_value(level, None);
    z * var.sqrt() / true_mean_of(config, pop)
}

/// Compare stratification schemes and selection policies on one population.
///
/// Emits tidy rows (scheme, policy, seed, config, measure, value). Measures:
/// * `analytical_rel_margin`: one-unit margin from known variances;
/// * `empirical_p95_rel_error`: worst-5% error of random one-unit draws;
/// * `random_median_rel_error` / `random_p95_rel_error`: per-config error
///   distribution of the random policy;
/// * `random_median_max_config` / `random_p95_max_config`: distribution of
///   each draw's max-over-configs error;
/// * `collapsed_rel_margin`: collapsed-strata margin of one random draw;
/// * `rel_error` and `max_config_rel_error` for deterministic policies.
pub fn scheme_comparison(input: &ComparisonInput) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    let pop = input.pop;
    let level = input.level;

    if input.include_srs {
        for (ci, config) in input.configs.iter().enumerate() {
            let truth = true_mean_of(config, pop);
            let values: Vec<f64> = pop
                .regions()
                .iter()
                .map(|r| config.y[&r.region_id])
                .collect();
            let s2 = crate::population::sample_variance(&values);
            let z = crate::stats::critical_value(level, None);
            rows.push(ComparisonRow {
                scheme: "RANDOM".into(),
                policy: "RANDOM".into(),
                seed: 0,
                config: config.name.clone(),
                measure: "analytical_rel_margin".into(),
                value: z * (s2 / input.k as f64).sqrt() / truth,
            });
            // Empirical SRS error distribution at n = k.
            let mut errors: Vec<f64> = (0..input.trials)
                .map(|t| {
                    let mut rng =
                        DetRng::derive(input.master_seed, &[0x5125, ci as u64, t as u64]);
                    let idx = rng.sample_indices(pop.n(), input.k);
                    let mean: f64 =
                        idx.iter().map(|&i| values[i]).sum::<f64>() / input.k as f64;
                    (mean - truth).abs() / truth
                })
                .collect();
            rows.push(ComparisonRow {
                scheme: "RANDOM".into(),
                policy: "RANDOM".into(),
                seed: 0,
                config: config.name.clone(),
                measure: "empirical_p95_rel_error".into(),
                value: p95_error(&mut errors),
            });
        }
    }

    // (scheme name, per-seed stratification list)
    let mut schemes: Vec<(String, Vec<(u64, Stratification)>)> = Vec::new();
    if let Some(features) = input.bbv_features {
        let per_seed = input
            .seeds
            .iter()
            .map(|&s| {
                stratification::kmeans_stratify(features, input.k, s, input.max_iter)
                    .map(|st| (s, st))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        schemes.push(("BBV".into(), per_seed));
    }
    if let Some(features) = input.rfv_features {
        let per_seed = input
            .seeds
            .iter()
            .map(|&s| {
                stratification::kmeans_stratify(features, input.k, s, input.max_iter)
                    .map(|st| (s, st))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        schemes.push(("RFV".into(), per_seed));
    }
    if input.include_dalenius {
        let (strat, _) =
            stratification::dalenius_gurney(&pop.cpi_map(), input.k, input.dg_tol, input.max_iter)?;
        schemes.push(("DALENIUS_GURNEY".into(), vec![(0, strat)]));
    }

    let cpi_map = pop.cpi_map();
    let cpi_features = crate::population::cpi_only(pop);
    for (scheme_idx, (scheme_name, per_seed)) in schemes.iter().enumerate() {
        for (seed, strat) in per_seed {
            let members = strat.members_by_stratum();
            let mean_cpi = strat.stratum_mean_cpi(pop);
            let pairing = stratification::pair_strata(strat, &mean_cpi);

            for config in input.configs {
                rows.push(ComparisonRow {
                    scheme: scheme_name.clone(),
                    policy: "RANDOM".into(),
                    seed: *seed,
                    config: config.name.clone(),
                    measure: "analytical_rel_margin".into(),
                    value: analytical_one_unit_margin(strat, config, pop, level),
                });
            }

            // Random one-unit draws: per-config errors and per-draw maxima.
            let mut per_config_errors: Vec<Vec<f64>> =
                vec![Vec::with_capacity(input.trials); input.configs.len()];
            let mut max_errors: Vec<f64> = Vec::with_capacity(input.trials);
            for t in 0..input.trials {
                let mut rng = DetRng::derive(
                    input.master_seed,
                    &[0xe3b, scheme_idx as u64, *seed, t as u64],
                );
                let picks: Vec<&str> = strat
                    .strata
                    .iter()
                    .map(|stratum| {
                        let pool = &members[stratum.id];
                        pool[rng.gen_range(pool.len())]
                    })
                    .collect();
                let mut worst = 0.0_f64;
                for (ci, config) in input.configs.iter().enumerate() {
                    let truth = true_mean_of(config, pop);
                    let est: f64 = strat
                        .strata
                        .iter()
                        .zip(&picks)
                        .map(|(stratum, &id)| stratum.weight * config.y[id])
                        .sum();
                    let err = (est - truth).abs() / truth;
                    per_config_errors[ci].push(err);
                    worst = worst.max(err);
                }
                max_errors.push(worst);
            }
            for (ci, config) in input.configs.iter().enumerate() {
                let errs = &mut per_config_errors[ci];
                errs.sort_by(|a, b| a.total_cmp(b));
                let median = errs[errs.len() / 2];
                rows.push(ComparisonRow {
                    scheme: scheme_name.clone(),
                    policy: "RANDOM".into(),
                    seed: *seed,
                    config: config.name.clone(),
                    measure: "random_median_rel_error".into(),
                    value: median,
                });
                rows.push(ComparisonRow {
                    scheme: scheme_name.clone(),
                    policy: "RANDOM".into(),
                    seed: *seed,
                    config: config.name.clone(),
                    measure: "random_p95_rel_error".into(),
                    value: p95_error(errs),
                });
            }
            {
                let mut sorted = max_errors.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                rows.push(ComparisonRow {
                    scheme: scheme_name.clone(),
                    policy: "RANDOM".into(),
                    seed: *seed,
                    config: "ALL".into(),
                    measure: "random_median_max_config".into(),
                    value: sorted[sorted.len() / 2],
                });
                rows.push(ComparisonRow {
                    scheme: scheme_name.clone(),
                    policy: "RANDOM".into(),
                    seed: *seed,
                    config: "ALL".into(),
                    measure: "random_p95_max_config".into(),
                    value: p95_error(&mut max_errors),
                });
            }

            // Collapsed-strata margin from a single random one-unit draw.
            {
                let mut rng =
                    DetRng::derive(input.master_seed, &[0xc01, scheme_idx as u64, *seed]);
                let picks: Vec<&str> = strat
                    .strata
                    .iter()
                    .map(|stratum| {
                        let pool = &members[stratum.id];
                        pool[rng.gen_range(pool.len())]
                    })
                    .collect();
                for config in input.configs {
                    let truth = true_mean_of(config, pop);
                    let samples: Vec<StratumSample> = strat
                        .strata
                        .iter()
                        .zip(&picks)
                        .map(|(stratum, &id)| {
                            StratumSample::new(stratum.id, stratum.weight, vec![config.y[id]])
                        })
                        .collect();
                    let est = estimators::collapsed_strata_estimate(&samples, &pairing)?;
                    let ci = estimators::confidence_interval(&est, level)?;
                    rows.push(ComparisonRow {
                        scheme: scheme_name.clone(),
                        policy: "RANDOM".into(),
                        seed: *seed,
                        config: config.name.clone(),
                        measure: "collapsed_rel_margin".into(),
                        value: ci.margin / truth,
                    });
                }
            }

            // Deterministic policies.
            let feature_ref: &FeatureMatrix = match scheme_name.as_str() {
                "BBV" => input.bbv_features.expect("scheme present"),
                "RFV" => input.rfv_features.expect("scheme present"),
                _ => &cpi_features,
            };
            for (policy_name, sel) in [
                (
                    "CENTROID",
                    selection::select_centroid(strat, pop, feature_ref)?,
                ),
                (
                    "MEAN_CPI",
                    selection::select_mean_cpi(strat, pop, &cpi_map)?,
                ),
            ] {
                let mut worst = 0.0_f64;
                for config in input.configs {
                    let truth = true_mean_of(config, pop);
                    let est = selection::weighted_point_estimate(&sel, &config.y)?;
                    let err = (est - truth).abs() / truth;
                    worst = worst.max(err);
                    rows.push(ComparisonRow {
                        scheme: scheme_name.clone(),
                        policy: policy_name.into(),
                        seed: *seed,
                        config: config.name.clone(),
                        measure: "rel_error".into(),
                        value: err,
                    });
                }
                rows.push(ComparisonRow {
                    scheme: scheme_name.clone(),
                    policy: policy_name.into(),
                    seed: *seed,
                    config: "ALL".into(),
                    measure: "max_config_rel_error".into(),
                    value: worst,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn point_mass_spec(values: &[(f64, f64)], total: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            total,
            seed,
            components: values
                .iter()
                .map(|&(p, v)| PhaseComponent {
                    proportion: p,
                    cpi: CpiDistribution::PointMass { value: v },
                })
                .collect(),
            metric_rule: MetricRule {
                n_metrics: 2,
                correlation: 0.9,
            },
            outlier: None,
            bbv: None,
        }
    }

    #[test]
    fn point_mass_population() {
        let spec = point_mass_spec(&[(1.0, 2.0)], 100, 7);
        let (pop, _) = synth_population(&spec).unwrap();
        assert_eq!(pop.n(), 100);
        assert!(pop.regions().iter().all(|r| r.cpi == 2.0));
        assert_eq!(pop.mean_cpi(), 2.0);
    }

    #[test]
    fn two_phase_point_masses_mean() {
        let spec = point_mass_spec(&[(0.5, 1.0), (0.5, 3.0)], 1000, 7);
        let (pop, _) = synth_population(&spec).unwrap();
        assert_abs_diff_eq!(pop.mean_cpi(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn outlier_component_shows_up() {
        // Heavy-tail shape: mean near 1.36 with a 0.1% component at CPI 28.
        let spec = SynthSpec {
            total: 2000,
            seed: 11,
            components: vec![PhaseComponent {
                proportion: 0.999,
                cpi: CpiDistribution::Normal {
                    mean: 1.3333,
                    sd: 0.25,
                },
            }],
            metric_rule: MetricRule {
                n_metrics: 3,
                correlation: 0.8,
            },
            outlier: Some(OutlierComponent {
                proportion: 0.001,
                cpi: 28.0,
            }),
            bbv: None,
        };
        let (pop, _) = synth_population(&spec).unwrap();
        let max = pop.cpi_values().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 28.0);
        assert!((pop.mean_cpi() - 1.36).abs() < 0.03, "mean {}", pop.mean_cpi());
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let spec = point_mass_spec(&[(0.4, 1.0), (0.6, 2.0)], 500, 3);
        let (a, _) = synth_population(&spec).unwrap();
        let (b, _) = synth_population(&spec).unwrap();
        assert_eq!(a.regions(), b.regions());
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = point_mass_spec(&[(0.7, 1.0)], 100, 1);
        assert!(matches!(
            synth_population(&spec),
            Err(MonteCarloError::InvalidSpec(_))
        ));
        spec = point_mass_spec(&[(1.0, 1.0)], 5, 1);
        assert!(matches!(
            synth_population(&spec),
            Err(MonteCarloError::InvalidSpec(_))
        ));
    }

    #[test]
    fn metrics_track_cpi_at_high_correlation() {
        let spec = SynthSpec {
            total: 2000,
            seed: 5,
            components: vec![PhaseComponent {
                proportion: 1.0,
                cpi: CpiDistribution::Normal {
                    mean: 2.0,
                    sd: 0.4,
                },
            }],
            metric_rule: MetricRule {
                n_metrics: 1,
                correlation: 0.9,
            },
            outlier: None,
            bbv: None,
        };
        let (pop, _) = synth_population(&spec).unwrap();
        let xs: Vec<f64> = pop.regions().iter().map(|r| r.cpi).collect();
        let ys: Vec<f64> = pop.regions().iter().map(|r| r.metrics[0]).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!((corr - 0.9).abs() < 0.03, "corr {corr}");
    }

    #[test]
    fn zero_variance_population_coverage_is_one() {
        let spec = point_mass_spec(&[(1.0, 2.0)], 200, 9);
        let (pop, _) = synth_population(&spec).unwrap();
        let r = coverage_experiment(&pop, &SamplingDesign::Srs { n: 20 }, 200, 0.95, 1).unwrap();
        assert_eq!(r.coverage, 1.0);
        assert_eq!(r.p95_abs_rel_error, 0.0);
    }

    #[test]
    fn coverage_is_reproducible_and_parallelism_independent() {
        let spec = point_mass_spec(&[(0.5, 1.0), (0.5, 3.0)], 400, 21);
        let (pop, _) = synth_population(&spec).unwrap();
        let design = SamplingDesign::Srs { n: 50 };
        let a = coverage_experiment(&pop, &design, 300, 0.95, 77).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| coverage_experiment(&pop, &design, 300, 0.95, 77).unwrap());
        assert_eq!(a.coverage, b.coverage);
        assert_eq!(a.p95_abs_rel_error, b.p95_abs_rel_error);
    }

    #[test]
    fn too_few_trials_rejected() {
        let spec = point_mass_spec(&[(1.0, 2.0)], 100, 1);
        let (pop, _) = synth_population(&spec).unwrap();
        assert!(matches!(
            coverage_experiment(&pop, &SamplingDesign::Srs { n: 10 }, 99, 0.95, 1),
            Err(MonteCarloError::TooFewTrials(99))
        ));
    }

    #[test]
    fn infeasible_design_rejected() {
        let spec = point_mass_spec(&[(1.0, 2.0)], 100, 1);
        let (pop, _) = synth_population(&spec).unwrap();
        assert!(matches!(
            coverage_experiment(&pop, &SamplingDesign::Srs { n: 101 }, 100, 0.95, 1),
            Err(MonteCarloError::DesignInfeasible(_))
        ));
    }

    #[test]
    fn p95_error_is_50th_largest_of_1000() {
        let mut errors: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        // 50th largest of 1..=1000 is 951.
        assert_eq!(p95_error(&mut errors), 951.0);
    }

    #[test]
    fn apportion_matches_proportions() {
        assert_eq!(apportion(&[0.5, 0.5], 10), vec![5, 5]);
        assert_eq!(apportion(&[0.999, 0.001], 2000), vec![1998, 2]);
        let counts = apportion(&[0.3, 0.3, 0.4], 7);
        assert_eq!(counts.iter().sum::<usize>(), 7);
    }
}
