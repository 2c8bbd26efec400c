//! Shared synthetic constructions for the statistical and acceptance suites.
#![allow(dead_code)] // each test binary uses a subset

use std::collections::BTreeMap;

use simsamp_core::montecarlo::{
    synth_configs, synth_population, BbvRule, ConfigY, CpiDistribution, MetricRule,
    PhaseComponent, SynthSpec,
};
use simsamp_core::population::{random_project, standardize_rfv, FeatureMatrix, Population, Region};
use simsamp_core::rng::DetRng;
use simsamp_core::stratification::{Scheme, Stratification, Stratum};

/// A population whose features correlate with CPI at rho = 0.9, with
/// synthetic BBVs in which pairs of phases share a block profile while
/// their CPI distributions differ (code-identical, behavior-different
/// regions), plus six monotone-perturbation configurations.
pub struct RhoSuite {
    pub pop: Population,
    pub rfv: FeatureMatrix,
    pub bbv: FeatureMatrix,
    pub configs: Vec<ConfigY>,
}

pub fn rho_suite(seed: u64) -> RhoSuite {
    let components = (0..10)
        .map(|p| {
            let mean = 0.8 + 0.24 * p as f64;
            PhaseComponent {
                proportion: 0.1,
                cpi: CpiDistribution::Normal {
                    mean,
                    sd: 0.05 * mean,
                },
            }
        })
        .collect();
    let spec = SynthSpec {
        total: 2000,
        seed,
        components,
        metric_rule: MetricRule {
            n_metrics: 6,
            correlation: 0.9,
        },
        outlier: None,
        bbv: Some(BbvRule {
            blocks_per_phase: 12,
            noise: 0.3,
            shared_profile_of: [(1, 0), (3, 2), (5, 4), (7, 6), (9, 8)]
                .into_iter()
                .collect(),
        }),
    };
    let (pop, bbvs) = synth_population(&spec).expect("valid spec");
    let rfv = standardize_rfv(&pop, true).expect("non-constant metrics");
    let bbv = random_project(bbvs.as_ref().expect("bbv rule set"), 15, seed ^ 0xabcd)
        .expect("valid projection");
    let configs = synth_configs(
        &pop,
        &[
            (0.95, 1.00, 0.01),
            (0.90, 1.04, 0.01),
            (0.85, 0.97, 0.01),
            (0.80, 1.08, 0.01),
            (0.75, 0.94, 0.01),
            (0.70, 1.12, 0.01),
        ],
        seed ^ 0x77,
    );
    RhoSuite {
        pop,
        rfv,
        bbv,
        configs,
    }
}

/// A population of `l` strata laid out on a CPI ladder: stratum h draws
/// from Normal(1 + step*h, sigma), `per_stratum` members each. Returns the
/// population together with the (exact, by-construction) stratification.
pub fn ladder_population(
    seed: u64,
    l: usize,
    per_stratum: usize,
    step: f64,
    sigma: f64,
) -> (Population, Stratification) {
    let mut regions = Vec::with_capacity(l * per_stratum);
    let mut assignment = BTreeMap::new();
    let mut rng = DetRng::derive(seed, &[0x1add]);
    for h in 0..l {
        let mu = 1.0 + step * h as f64;
        for i in 0..per_stratum {
            let id = format!("s{h:02}m{i:04}");
            let cpi = loop {
                let v = mu + sigma * rng.normal();
                if v > 0.0 {
                    break v;
                }
            };
            regions.push(Region {
                region_id: id.clone(),
                instr_count: 1_000_000,
                cpi,
                metrics: vec![],
            });
            assignment.insert(id, h);
        }
    }
    let pop = Population::new(regions, vec![]).expect("valid population");
    let n = pop.n();
    let strata = (0..l)
        .map(|h| Stratum {
            id: h,
            n_members: per_stratum,
            weight: per_stratum as f64 / n as f64,
            centroid: None,
            interval: None,
        })
        .collect();
    let strat = Stratification {
        scheme: Scheme::DaleniusGurney,
        seed,
        assignment,
        strata,
    };
    strat.validate().expect("consistent by construction");
    (pop, strat)
}

/// True design variance of the one-unit-per-stratum estimator on a known
/// population: sum of W_h^2 Var_h with the uniform-draw (divisor N_h)
/// within-stratum variance.
pub fn one_unit_design_variance(pop: &Population, strat: &Stratification) -> f64 {
    let members = strat.members_by_stratum();
    strat
        .strata
        .iter()
        .map(|stratum| {
            let values: Vec<f64> = members[stratum.id]
                .iter()
                .map(|&id| pop.region(id).unwrap().cpi)
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
            stratum.weight * stratum.weight * var
        })
        .sum()
}
