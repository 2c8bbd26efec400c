//! Statistical machinery for choosing representative simulation regions and
//! quantifying the error of the resulting performance estimates.
//!
//! The crate covers the full planning loop:
//!
//! * [`population`] ingests per-region performance records and basic-block
//!   vectors and turns them into analysis-ready feature matrices;
//! * [`stratification`] builds strata by k-means on features or by
//!   CPI boundaries equalizing weight-times-spread, and pairs strata for
//!   one-unit variance estimation;
//! * [`selection`] picks one concrete region per stratum (random, nearest
//!   centroid, or nearest stratum-mean CPI);
//! * [`estimators`] computes means, variances of the mean, degrees of
//!   freedom, and confidence intervals for simple random, stratified,
//!   one-unit collapsed, and two-phase designs;
//! * [`planner`] sizes phase-1 pilots, allocates periodic multi-unit
//!   validation samples under a margin-growth policy, and checks drift;
//! * [`montecarlo`] generates synthetic populations and runs coverage and
//!   scheme-comparison experiments;
//! * [`report`] produces histograms, weight-synthesized approximations of
//!   the CPI distribution, and blind-spot gap lists.
//!
//! All randomness is derived from explicit seeds via [`rng::DetRng`];
//! results are reproducible bit-for-bit regardless of parallelism.

pub mod estimators;
pub mod kmeans;
pub mod montecarlo;
pub mod planner;
pub mod population;
pub mod report;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod stratification;
pub mod svg;
