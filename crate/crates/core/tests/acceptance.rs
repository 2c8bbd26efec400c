//! Acceptance suite: one test per criterion, each printing a PASS line and
//! enforcing its runtime budget. Run with `--nocapture` to see the lines.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use simsamp_core::estimators::{
    confidence_interval, srs_estimate, stratified_estimate, two_phase_variance,
    two_phase_variance_p2only, CollapsedPairing, Df, StratumSample,
};
use simsamp_core::montecarlo::{
    coverage_experiment, scheme_comparison, synth_population, ComparisonInput, CpiDistribution,
    MetricRule, PhaseComponent, SamplingDesign, SynthSpec,
};
use simsamp_core::planner::{allocate_phase2, Phase1Stratum, Phase1Summary};
use simsamp_core::population::sample_variance;
use simsamp_core::report::{approx_distribution, gap_report, histogram_with_edges};
use simsamp_core::rng::DetRng;
use simsamp_core::selection::{
    weighted_point_estimate, ChosenRegion, RegionSelection, SelectionPolicy,
};
use simsamp_core::stats;
use simsamp_core::stratification::{dalenius_gurney, pair_strata, Scheme};

use common::{ladder_population, rho_suite};

fn pass(criterion: usize, name: &str, detail: String, started: Instant, budget_s: u64) {
    let elapsed = started.elapsed();
    println!("[acceptance] criterion {criterion} ({name}): PASS — {detail} [{elapsed:.2?}]");
    assert!(
        elapsed < Duration::from_secs(budget_s),
        "criterion {criterion} exceeded its {budget_s}s budget: {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 1: estimator oracle equivalence.
//
// Brute-force reimplementations of the four estimator formulas, written as
// direct summations independent of the library code paths.
mod oracle {
    pub fn mean(values: &[f64]) -> f64 {
        let mut total = 0.0;
        for v in values {
            total += v;
        }
        total / values.len() as f64
    }

    pub fn variance(values: &[f64]) -> f64 {
        let m = mean(values);
        let mut ss = 0.0;
        for v in values {
            ss += (v - m) * (v - m);
        }
        ss / (values.len() as f64 - 1.0)
    }

    pub fn srs(values: &[f64]) -> (f64, f64) {
        (mean(values), variance(values) / values.len() as f64)
    }

    pub fn stratified(samples: &[(f64, Vec<f64>)]) -> (f64, f64) {
        let mut m = 0.0;
        let mut v = 0.0;
        for (w, values) in samples {
            m += w * mean(values);
            v += w * w * variance(values) / values.len() as f64;
        }
        (m, v)
    }

    pub fn two_phase(s2: f64, n: usize, samples: &[(f64, Vec<f64>)]) -> f64 {
        s2 / n as f64 + stratified(samples).1
    }

    pub fn two_phase_p2only(n: usize, samples: &[(f64, Vec<f64>)]) -> f64 {
        let (m, v) = stratified(samples);
        let mut between = 0.0;
        for (w, values) in samples {
            let d = mean(values) - m;
            between += w * d * d;
        }
        between / n as f64 + v
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn criterion_1_estimator_oracle_equivalence() {
    let started = Instant::now();
    let mut worst = 0.0_f64;
    for design in 0..100u64 {
        let mut rng = DetRng::derive(0xacc1, &[design]);
        let l = 2 + rng.gen_range(4); // L <= 5
        let raw: Vec<f64> = (0..l).map(|_| 0.2 + rng.next_f64()).collect();
        let total: f64 = raw.iter().sum();
        let samples: Vec<(f64, Vec<f64>)> = raw
            .iter()
            .map(|w| {
                let n_h = 2 + rng.gen_range(5); // n_h <= 6
                let values = (0..n_h).map(|_| 0.5 + 3.0 * rng.next_f64()).collect();
                (w / total, values)
            })
            .collect();
        let lib_samples: Vec<StratumSample> = samples
            .iter()
            .enumerate()
            .map(|(i, (w, values))| StratumSample::new(i, *w, values.clone()))
            .collect();
        let phase1_n = 50 + rng.gen_range(1000);
        let phase1_s2 = rng.next_f64() * 4.0;
        let flat: Vec<f64> = samples.iter().flat_map(|(_, v)| v.clone()).collect();

        let lib = srs_estimate(&flat).unwrap();
        let (om, ov) = oracle::srs(&flat);
        worst = worst.max(rel_diff(lib.mean, om)).max(rel_diff(lib.var_of_mean, ov));

        let lib = stratified_estimate(&lib_samples).unwrap();
        let (om, ov) = oracle::stratified(&samples);
        worst = worst.max(rel_diff(lib.mean, om)).max(rel_diff(lib.var_of_mean, ov));

        let lib = two_phase_variance(phase1_s2, phase1_n, &lib_samples).unwrap();
        let ov = oracle::two_phase(phase1_s2, phase1_n, &samples);
        worst = worst.max(rel_diff(lib.var_of_mean, ov));

        let lib = two_phase_variance_p2only(phase1_n, &lib_samples).unwrap();
        let ov = oracle::two_phase_p2only(phase1_n, &samples);
        worst = worst.max(rel_diff(lib.var_of_mean, ov));
    }
    assert!(worst <= 1e-12, "worst relative deviation {worst}");
    pass(
        1,
        "estimator oracle equivalence",
        format!("100 randomized designs, worst relative deviation {worst:.2e}"),
        started,
        1,
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: SRS coverage calibration on three synthetic shapes.

fn coverage_spec(components: Vec<PhaseComponent>, seed: u64) -> SynthSpec {
    SynthSpec {
        total: 5000,
        seed,
        components,
        metric_rule: MetricRule {
            n_metrics: 2,
            correlation: 0.8,
        },
        outlier: None,
        bbv: None,
    }
}

#[test]
fn criterion_2_srs_coverage_calibration() {
    let started = Instant::now();
    let specs = [
        (
            "normal",
            coverage_spec(
                vec![PhaseComponent {
                    proportion: 1.0,
                    cpi: CpiDistribution::Normal {
                        mean: 1.5,
                        sd: 0.3,
                    },
                }],
                21,
            ),
        ),
        (
            "lognormal",
            coverage_spec(
                vec![PhaseComponent {
                    proportion: 1.0,
                    cpi: CpiDistribution::Lognormal {
                        mu: 0.0,
                        sigma: 0.5,
                    },
                }],
                22,
            ),
        ),
        (
            "bimodal",
            coverage_spec(
                vec![
                    PhaseComponent {
                        proportion: 0.5,
                        cpi: CpiDistribution::Normal {
                            mean: 1.0,
                            sd: 0.05,
                        },
                    },
                    PhaseComponent {
                        proportion: 0.5,
                        cpi: CpiDistribution::Normal {
                            mean: 3.0,
                            sd: 0.05,
                        },
                    },
                ],
                23,
            ),
        ),
    ];
    let mut detail = Vec::new();
    for (name, spec) in specs {
        let (pop, _) = synth_population(&spec).unwrap();
        let result =
            coverage_experiment(&pop, &SamplingDesign::Srs { n: 100 }, 10_000, 0.95, 0x2222)
                .unwrap();
        assert!(
            (0.93..=0.97).contains(&result.coverage),
            "{name}: coverage {} outside [0.93, 0.97]",
            result.coverage
        );
        detail.push(format!("{name} {:.4}", result.coverage));
    }
    pass(
        2,
        "SRS coverage calibration",
        format!("coverage {} at 10,000 trials each", detail.join(", ")),
        started,
        30,
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: collapsed-strata conservatism.

#[test]
fn criterion_3_collapsed_strata_conservatism() {
    let started = Instant::now();
    // 20 strata on a CPI ladder; neighbors have similar (0.1-apart) means.
    let (pop, strat) = ladder_population(33, 20, 100, 0.1, 0.05);
    let mean_cpi = strat.stratum_mean_cpi(&pop);
    let neighbor_pairing = pair_strata(&strat, &mean_cpi);
    let similar = coverage_experiment(
        &pop,
        &SamplingDesign::OneUnitCollapsed {
            stratification: strat.clone(),
            pairing: neighbor_pairing,
        },
        10_000,
        0.95,
        0x3333,
    )
    .unwrap();
    assert!(
        similar.coverage >= 0.93,
        "similar-pairs coverage {} below 0.93",
        similar.coverage
    );

    // Deliberately mismatched pairs: variance biased upward, so coverage
    // must sit at or above the nominal level.
    let mismatched = CollapsedPairing {
        groups: (0..10).map(|j| vec![j, j + 10]).collect(),
    };
    let mis = coverage_experiment(
        &pop,
        &SamplingDesign::OneUnitCollapsed {
            stratification: strat,
            pairing: mismatched,
        },
        10_000,
        0.95,
        0x3334,
    )
    .unwrap();
    assert!(
        mis.coverage >= 0.95,
        "mismatched-pairs coverage {} below nominal",
        mis.coverage
    );
    pass(
        3,
        "collapsed-strata conservatism",
        format!(
            "similar-pairs coverage {:.4}, mismatched-pairs coverage {:.4}",
            similar.coverage, mis.coverage
        ),
        started,
        60,
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: boundary equalization on a lognormal population.

#[test]
fn criterion_4_boundary_equalization() {
    let started = Instant::now();
    let mut rng = DetRng::derive(0x4444, &[]);
    let cpi: BTreeMap<String, f64> = (0..1000)
        .map(|i| (format!("r{i:05}"), (0.2 + 0.45 * rng.normal()).exp()))
        .collect();
    let (strat, bounds) = dalenius_gurney(&cpi, 4, 0.05, 100).unwrap();
    assert!(
        bounds.converged && bounds.spread <= 0.05,
        "spread {} (converged {})",
        bounds.spread,
        bounds.converged
    );

    // Analytical 20-sample margins: stratified (5 per stratum) vs SRS.
    let members = strat.members_by_stratum();
    let mut strat_var = 0.0;
    for stratum in &strat.strata {
        let values: Vec<f64> = members[stratum.id].iter().map(|&id| cpi[id]).collect();
        strat_var += stratum.weight * stratum.weight * sample_variance(&values) / 5.0;
    }
    let strat_margin = stats::critical_value(0.95, Some(16.0)) * strat_var.sqrt();
    let all: Vec<f64> = cpi.values().cloned().collect();
    let srs_margin =
        stats::critical_value(0.95, Some(19.0)) * (sample_variance(&all) / 20.0).sqrt();
    assert!(
        strat_margin <= srs_margin,
        "stratified margin {strat_margin} vs SRS {srs_margin}"
    );
    pass(
        4,
        "boundary equalization",
        format!(
            "spread {:.4}, stratified margin {:.4} <= SRS margin {:.4} at n=20",
            bounds.spread, strat_margin, srs_margin
        ),
        started,
        5,
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: scheme-ordering analogue.

#[test]
fn criterion_5_scheme_ordering() {
    let started = Instant::now();
    let suite = rho_suite(55);
    let seeds = [1u64, 2, 3];
    let rows = scheme_comparison(&ComparisonInput {
        pop: &suite.pop,
        bbv_features: Some(&suite.bbv),
        rfv_features: Some(&suite.rfv),
        include_dalenius: false,
        include_srs: false,
        k: 20,
        configs: &suite.configs,
        seeds: &seeds,
        trials: 1000,
        level: 0.95,
        master_seed: 0x5555,
        max_iter: 100,
        dg_tol: 0.05,
    })
    .unwrap();
    let get = |scheme: &str, policy: &str, seed: u64, measure: &str| -> f64 {
        rows.iter()
            .find(|r| {
                r.scheme == scheme
                    && r.policy == policy
                    && r.seed == seed
                    && r.config == "ALL"
                    && r.measure == measure
            })
            .unwrap_or_else(|| panic!("missing row {scheme}/{policy}/{seed}/{measure}"))
            .value
    };

    let mut details = Vec::new();
    for seed in seeds {
        // (a) Centroid selection on performance-correlated features keeps
        // the worst per-config error within 5%.
        let centroid_rfv = get("RFV", "CENTROID", seed, "max_config_rel_error");
        assert!(
            centroid_rfv <= 0.05,
            "seed {seed}: centroid-on-RFV max error {centroid_rfv} above 5%"
        );
        // (b) The random-selection 95th-percentile error exceeds it.
        let random_p95 = get("RFV", "RANDOM", seed, "random_p95_max_config");
        assert!(
            random_p95 > centroid_rfv,
            "seed {seed}: random p95 {random_p95} not above centroid {centroid_rfv}"
        );
        // (c) Mean-CPI selection strictly reduces the BBV scheme's
        // worst-case error compared to centroid selection.
        let centroid_bbv = get("BBV", "CENTROID", seed, "max_config_rel_error");
        let mean_bbv = get("BBV", "MEAN_CPI", seed, "max_config_rel_error");
        assert!(
            mean_bbv < centroid_bbv,
            "seed {seed}: mean-CPI {mean_bbv} not below BBV centroid {centroid_bbv}"
        );
        details.push(format!(
            "seed {seed}: RFV centroid {:.4} < random p95 {:.4}; BBV mean {:.4} < centroid {:.4}",
            centroid_rfv, random_p95, mean_bbv, centroid_bbv
        ));
    }
    pass(
        5,
        "scheme ordering",
        details.join("; "),
        started,
        120,
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: two-phase sizing policy.

#[test]
fn criterion_6_two_phase_sizing() {
    let started = Instant::now();
    // Synthetic phase-1 statistics with a 2% relative margin at n = 2401,
    // over a 20-stratum feature-correlated population shape: strongly
    // separated stratum means, small within-stratum spread.
    let n = 2401;
    let mean = 1.5;
    let z = stats::critical_value(0.95, None);
    let sd = 0.02 * mean * (n as f64).sqrt() / z;
    let l = 20;
    let within_sds: Vec<f64> = (0..l).map(|h| 0.08 + 0.01 * (h % 3) as f64).collect();
    let within: f64 = within_sds.iter().map(|s| s * s / l as f64).sum();
    let between = sd * sd - within;
    assert!(between > 0.0);
    // Stratum means on a centered, normalized ladder scaled to the target
    // between-strata variance (consistency only; the allocator needs just
    // the summary numbers).
    let p1 = Phase1Summary {
        n,
        mean,
        sd,
        between_var: between,
        strata: (0..l)
            .map(|h| Phase1Stratum {
                stratum_id: h,
                weight: 1.0 / l as f64,
                sd: within_sds[h],
                n_members: 120,
            })
            .collect(),
    };
    let alloc = allocate_phase2(&p1, 1.5, 0.95).unwrap();
    assert!(
        (alloc.phase1_rel_margin - 0.02).abs() < 1e-9,
        "phase-1 margin {}",
        alloc.phase1_rel_margin
    );
    assert!(
        alloc.predicted_rel_margin <= 0.03 + 1e-12,
        "predicted margin {} above 3%",
        alloc.predicted_rel_margin
    );
    assert!(
        alloc.total * 5 <= n,
        "phase-2 total {} not at least 5x smaller than phase-1 {n}",
        alloc.total
    );
    pass(
        6,
        "two-phase sizing policy",
        format!(
            "phase-1 margin 2.0%, predicted {:.3}%, phase-2 total {} vs phase-1 {} ({:.0}x)",
            100.0 * alloc.predicted_rel_margin,
            alloc.total,
            n,
            n as f64 / alloc.total as f64
        ),
        started,
        5,
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: report fidelity.

#[test]
fn criterion_7_report_fidelity() {
    let started = Instant::now();
    let mut worst_ratio = 0.0_f64;
    for trial in 0..1000u64 {
        let mut rng = DetRng::derive(0x7777, &[trial]);
        let l = 2 + rng.gen_range(19); // 2..=20 strata
        let raw: Vec<f64> = (0..l).map(|_| 0.05 + rng.next_f64()).collect();
        let total_w: f64 = raw.iter().sum();
        let n_total = 100 + rng.gen_range(4900);
        let entries: Vec<ChosenRegion> = raw
            .iter()
            .enumerate()
            .map(|(i, w)| ChosenRegion {
                stratum_id: i,
                region_id: format!("r{i}"),
                weight: w / total_w,
                baseline_cpi: 1.0,
            })
            .collect();
        // CPI-like values in [0.5, 3.0).
        let y: BTreeMap<String, f64> = (0..l)
            .map(|i| (format!("r{i}"), 0.5 + 2.5 * rng.next_f64()))
            .collect();
        let sel = RegionSelection {
            scheme: Scheme::Rfv,
            policy: SelectionPolicy::Centroid,
            entries,
        };
        let out = approx_distribution(&sel, &y, n_total).unwrap();
        assert_eq!(out.len(), n_total, "trial {trial}: wrong length");
        let mean = out.iter().sum::<f64>() / n_total as f64;
        let exact = weighted_point_estimate(&sel, &y).unwrap();
        let max_y = y.values().cloned().fold(0.0_f64, f64::max);
        let bound = max_y / n_total as f64;
        let err = (mean - exact).abs();
        worst_ratio = worst_ratio.max(err / bound);
        assert!(
            err <= bound,
            "trial {trial}: rounding error {err} above max|y|/n_total {bound}"
        );
    }

    // Gap pattern: baseline occupied in [1.5, 2.0), approximation empty.
    let edges = vec![1.0, 1.5, 2.0, 2.5];
    let baseline = histogram_with_edges(&[1.2, 1.6, 1.7, 1.9, 2.2], edges.clone()).unwrap();
    let approx = histogram_with_edges(&[1.2, 1.2, 2.3, 2.3, 2.4], edges).unwrap();
    let gaps = gap_report(&baseline, &approx, 3).unwrap();
    assert_eq!(gaps.gaps.len(), 1);
    assert_eq!((gaps.gaps[0].lo, gaps.gaps[0].hi), (1.5, 2.0));

    pass(
        7,
        "report fidelity",
        format!(
            "1000 weight vectors, exact lengths, worst rounding ratio {worst_ratio:.3}; gap [1.5, 2.0) detected"
        ),
        started,
        1,
    );
}

// ---------------------------------------------------------------------------
// Shared sanity: the confidence-interval helper behind criteria 2-6.

#[test]
fn frozen_interval_spot_checks() {
    let est = srs_estimate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let ci = confidence_interval(&est, 0.95).unwrap();
    assert!((ci.margin - 2.054260256760879).abs() < 1e-9);
    assert_eq!(est.df, Df::Finite(3.0));
}
