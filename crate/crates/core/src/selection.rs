//! Choosing one concrete region per stratum.
//!
//! Three policies: uniform random within the stratum, nearest to the
//! stratum centroid in feature space, and nearest to the stratum mean
//! baseline CPI. Ties always break toward the lexicographically smallest
//! region id, and the random policy is deterministic per seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::population::{FeatureMatrix, Population, Provenance};
use crate::rng::DetRng;
use crate::stratification::{Scheme, Stratification};

const SELECT_TAG: u64 = 0x5e1;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("no baseline CPI for region `{0}`")]
    MissingBaselineCpi(String),
    #[error("no value for region `{0}`")]
    MissingValue(String),
    #[error("stratum {0} has no members")]
    EmptyStratum(usize),
    #[error("selection CSV is malformed: {0}")]
    BadCsv(String),
}

type Result<T> = std::result::Result<T, SelectionError>;

/// How the one region per stratum is picked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionPolicy {
    Random { seed: u64 },
    Centroid,
    MeanCpi,
}

impl SelectionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::Random { .. } => "RANDOM",
            SelectionPolicy::Centroid => "CENTROID",
            SelectionPolicy::MeanCpi => "MEAN_CPI",
        }
    }
}

/// The chosen region for one stratum.
#[derive(Clone, Debug, PartialEq)]
pub struct ChosenRegion {
    pub stratum_id: usize,
    pub region_id: String,
    pub weight: f64,
    /// Baseline CPI of the chosen region, for diagnostics and drift checks.
    pub baseline_cpi: f64,
}

/// One region per stratum plus the policy that produced it.
#[derive(Clone, Debug)]
pub struct RegionSelection {
    pub scheme: Scheme,
    pub policy: SelectionPolicy,
    pub entries: Vec<ChosenRegion>,
}

impl RegionSelection {
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.weight)
    }

    /// Serialize as `stratum_id,region_id,weight` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stratum_id,region_id,weight\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.stratum_id, e.region_id, e.weight);
        }
        out
    }

    /// Parse the CSV form; baseline CPI is filled from `pop` when the region
    /// is known, else 0.
    pub fn from_csv(text: &str, scheme: Scheme, pop: Option<&Population>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| SelectionError::BadCsv(e.to_string()))?;
            let stratum_id: usize = record
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| SelectionError::BadCsv("bad stratum_id".into()))?;
            let region_id = record
                .get(1)
                .ok_or_else(|| SelectionError::BadCsv("missing region_id".into()))?
                .to_string();
            let weight: f64 = record
                .get(2)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| SelectionError::BadCsv("bad weight".into()))?;
            let baseline_cpi = pop
                .and_then(|p| p.region(&region_id))
                .map(|r| r.cpi)
                .unwrap_or(0.0);
            entries.push(ChosenRegion {
                stratum_id,
                region_id,
                weight,
                baseline_cpi,
            });
        }
        if entries.is_empty() {
            return Err(SelectionError::BadCsv("no selection rows".into()));
        }
        Ok(RegionSelection {
            scheme,
            policy: SelectionPolicy::Centroid, // policy tag is informational here
            entries,
        })
    }
}

fn members_or_err(strat: &Stratification) -> Result<Vec<Vec<&str>>> {
    let members = strat.members_by_stratum();
    for (s, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(SelectionError::EmptyStratum(s));
        }
    }
    Ok(members)
}

fn build(
    strat: &Stratification,
    pop: &Population,
    policy: SelectionPolicy,
    chosen: Vec<String>,
) -> RegionSelection {
    let entries = strat
        .strata
        .iter()
        .zip(chosen)
        .map(|(stratum, region_id)| {
            let baseline_cpi = pop.region(&region_id).map(|r| r.cpi).unwrap_or(0.0);
            ChosenRegion {
                stratum_id: stratum.id,
                region_id,
                weight: stratum.weight,
                baseline_cpi,
            }
        })
        .collect();
    RegionSelection {
        scheme: strat.scheme,
        policy,
        entries,
    }
}

/// Uniform random member per stratum; deterministic per `(strat, seed)` and
/// independent across strata.
pub fn select_random(strat: &Stratification, pop: &Population, seed: u64) -> Result<RegionSelection> {
    let members = members_or_err(strat)?;
    let chosen = strat
        .strata
        .iter()
        .map(|stratum| {
            let m = &members[stratum.id];
            let mut rng = DetRng::derive(seed, &[SELECT_TAG, stratum.id as u64]);
            m[rng.gen_range(m.len())].to_string()
        })
        .collect();
    Ok(build(strat, pop, SelectionPolicy::Random { seed }, chosen))
}

fn scheme_matches(scheme: Scheme, provenance: Provenance) -> bool {
    matches!(
        (scheme, provenance),
        (Scheme::Bbv, Provenance::ProjectedBbv)
            | (Scheme::Rfv, Provenance::StandardizedRfv)
            | (Scheme::DaleniusGurney, Provenance::CpiOnly)
    )
}

/// Member closest (Euclidean) to the stratum centroid. For boundary-based
/// strata the centroid is the stratum mean CPI and features must be the
/// bare CPI column.
pub fn select_centroid(
    strat: &Stratification,
    pop: &Population,
    features: &FeatureMatrix,
) -> Result<RegionSelection> {
    if !scheme_matches(strat.scheme, features.provenance()) {
        return Err(SelectionError::FeatureMismatch(format!(
            "{} stratification cannot use {:?} features",
            strat.scheme,
            features.provenance()
        )));
    }
    let members = members_or_err(strat)?;
    let mut chosen = Vec::with_capacity(strat.l());
    for stratum in &strat.strata {
        let centroid = stratum.centroid.as_ref().ok_or_else(|| {
            SelectionError::FeatureMismatch(format!("stratum {} has no centroid", stratum.id))
        })?;
        let mut best: Option<(&str, f64)> = None;
        for &id in &members[stratum.id] {
            let row = features.row_for(id).ok_or_else(|| {
                SelectionError::FeatureMismatch(format!("region `{id}` missing from features"))
            })?;
            if row.len() != centroid.len() {
                return Err(SelectionError::FeatureMismatch(format!(
                    "feature dimension {} != centroid dimension {}",
                    row.len(),
                    centroid.len()
                )));
            }
            let d: f64 = row
                .iter()
                .zip(centroid)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            // Strict < keeps the lexicographically smallest id on ties
            // because members are sorted.
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        chosen.push(best.expect("non-empty stratum").0.to_string());
    }
    Ok(build(strat, pop, SelectionPolicy::Centroid, chosen))
}

/// Member whose baseline CPI is closest to the stratum mean baseline CPI
/// (mean over all phase-1 members of the stratum).
pub fn select_mean_cpi(
    strat: &Stratification,
    pop: &Population,
    baseline_cpi: &BTreeMap<String, f64>,
) -> Result<RegionSelection> {
    let members = members_or_err(strat)?;
    let mut chosen = Vec::with_capacity(strat.l());
    for stratum in &strat.strata {
        let m = &members[stratum.id];
        let mut sum = 0.0;
        for &id in m {
            sum += baseline_cpi
                .get(id)
                .copied()
                .ok_or_else(|| SelectionError::MissingBaselineCpi(id.to_string()))?;
        }
        let mean = sum / m.len() as f64;
        let mut best: Option<(&str, f64)> = None;
        for &id in m {
            let d = (baseline_cpi[id] - mean).abs();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        chosen.push(best.expect("non-empty stratum").0.to_string());
    }
    Ok(build(strat, pop, SelectionPolicy::MeanCpi, chosen))
}

/// Weighted point estimate from the chosen regions: sum of W_h * y(chosen).
pub fn weighted_point_estimate(
    sel: &RegionSelection,
    y: &BTreeMap<String, f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for e in &sel.entries {
        let v = y
            .get(&e.region_id)
            .copied()
            .ok_or_else(|| SelectionError::MissingValue(e.region_id.clone()))?;
        total += e.weight * v;
    }
    Ok(total)
}
