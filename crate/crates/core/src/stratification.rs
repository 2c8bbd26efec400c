//! Building strata three ways and pairing them for one-unit designs.
//!
//! * k-means on projected BBVs or standardized RFVs;
//! * CPI boundary search equalizing the weight-times-spread product per
//!   stratum (Dalenius-Gurney);
//! * ordering strata by baseline CPI and pairing neighbors for
//!   collapsed-strata variance estimation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{CollapsedPairing, WEIGHT_SUM_TOL};
use crate::kmeans;
use crate::population::{FeatureMatrix, Population, Provenance};

#[derive(Debug, Error)]
pub enum StratificationError {
    #[error("k = {k} exceeds the number of regions ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("feature matrix is empty")]
    EmptyFeatureMatrix,
    #[error("feature matrix contains non-finite values (region `{0}`)")]
    NonFiniteFeature(String),
    #[error("k-means stratification needs BBV or RFV features, got {0:?}")]
    BadFeatureProvenance(Provenance),
    #[error("need at least {needed} distinct CPI values, got {got}")]
    DegenerateCpi { needed: usize, got: usize },
    #[error("could not make every CPI stratum non-empty")]
    EmptyStratumUnrecoverable,
    #[error("invalid stratification manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("assignment CSV error: {0}")]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, StratificationError>;

/// Which auxiliary variable the strata were built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    Bbv,
    Rfv,
    DaleniusGurney,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Bbv => write!(f, "BBV"),
            Scheme::Rfv => write!(f, "RFV"),
            Scheme::DaleniusGurney => write!(f, "DALENIUS_GURNEY"),
        }
    }
}

/// One stratum: membership count, weight, and its defining geometry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stratum {
    pub id: usize,
    pub n_members: usize,
    /// W_h = N_h / N.
    pub weight: f64,
    /// Feature-space centroid (k-means) or `[mean CPI]` (Dalenius-Gurney).
    pub centroid: Option<Vec<f64>>,
    /// `[lo, hi)` CPI interval for boundary-based strata; the last interval
    /// is closed on the right.
    pub interval: Option<(f64, f64)>,
}

/// Assignment of every region to exactly one stratum.
#[derive(Clone, Debug)]
pub struct Stratification {
    pub scheme: Scheme,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
    pub strata: Vec<Stratum>,
}

impl Stratification {
    /// Number of strata (L).
    pub fn l(&self) -> usize {
        self.strata.len()
    }

    /// Total number of regions covered.
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Member region ids per stratum, sorted lexicographically.
    pub fn members_by_stratum(&self) -> Vec<Vec<&str>> {
        let mut members: Vec<Vec<&str>> = vec![Vec::new(); self.l()];
        for (id, &s) in &self.assignment {
            members[s].push(id.as_str());
        }
        members
    }

    /// Mean baseline CPI per stratum.
    pub fn stratum_mean_cpi(&self, pop: &Population) -> BTreeMap<usize, f64> {
        let mut sums = vec![0.0; self.l()];
        let mut counts = vec![0usize; self.l()];
        for (id, &s) in &self.assignment {
            if let Some(r) = pop.region(id) {
                sums[s] += r.cpi;
                counts[s] += 1;
            }
        }
        (0..self.l())
            .map(|s| (self.strata[s].id, sums[s] / counts[s].max(1) as f64))
            .collect()
    }

    /// Check strata are non-empty, disjoint-by-construction, cover the
    /// assignment, and weights sum to 1.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let mut counts = vec![0usize; self.l()];
        for &s in self.assignment.values() {
            if s >= self.l() {
                return Err(StratificationError::InvalidManifest(format!(
                    "assignment references unknown stratum {s}"
                )));
            }
            counts[s] += 1;
        }
        let mut wsum = 0.0;
        for (stratum, &count) in self.strata.iter().zip(&counts) {
            if count == 0 {
                return Err(StratificationError::InvalidManifest(format!(
                    "stratum {} is empty",
                    stratum.id
                )));
            }
            if stratum.n_members != count {
                return Err(StratificationError::InvalidManifest(format!(
                    "stratum {} claims {} members but has {}",
                    stratum.id, stratum.n_members, count
                )));
            }
            let expect = count as f64 / n as f64;
            if (stratum.weight - expect).abs() > 1e-9 {
                return Err(StratificationError::InvalidManifest(format!(
                    "stratum {} weight {} disagrees with member count",
                    stratum.id, stratum.weight
                )));
            }
            wsum += stratum.weight;
        }
        if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(StratificationError::InvalidManifest(format!(
                "weights sum to {wsum}"
            )));
        }
        Ok(())
    }
}

fn strata_from_assignment(
    assignment: &BTreeMap<String, usize>,
    l: usize,
    centroids: Vec<Option<Vec<f64>>>,
    intervals: Vec<Option<(f64, f64)>>,
) -> Vec<Stratum> {
    let n = assignment.len();
    let mut counts = vec![0usize; l];
    for &s in assignment.values() {
        counts[s] += 1;
    }
    counts
        .iter()
        .enumerate()
        .zip(centroids.into_iter().zip(intervals))
        .map(|((id, &count), (centroid, interval))| Stratum {
            id,
            n_members: count,
            weight: count as f64 / n as f64,
            centroid,
            interval,
        })
        .collect()
}

/// Cluster a feature matrix into `k` strata with seeded k-means.
///
/// The scheme is taken from the matrix provenance: projected BBVs give a
/// BBV stratification, standardized RFVs an RFV one.
pub fn kmeans_stratify(
    features: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Stratification> {
    let n = features.n_rows();
    if n == 0 {
        return Err(StratificationError::EmptyFeatureMatrix);
    }
    if k < 2 {
        return Err(StratificationError::KTooSmall(k));
    }
    if k > n {
        return Err(StratificationError::KTooLarge { k, n });
    }
    let scheme = match features.provenance() {
        Provenance::ProjectedBbv => Scheme::Bbv,
        Provenance::StandardizedRfv => Scheme::Rfv,
        other => return Err(StratificationError::BadFeatureProvenance(other)),
    };
    for (id, row) in features.region_ids().iter().zip(features.rows()) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(StratificationError::NonFiniteFeature(id.clone()));
        }
    }

    let run = kmeans::run(features.rows(), k, seed, max_iter);
    let assignment: BTreeMap<String, usize> = features
        .region_ids()
        .iter()
        .zip(&run.assignment)
        .map(|(id, &a)| (id.clone(), a))
        .collect();
    let centroids = run.centroids.into_iter().map(Some).collect();
    let strata = strata_from_assignment(&assignment, k, centroids, vec![None; k]);
    Ok(Stratification {
        scheme,
        seed,
        assignment,
        strata,
    })
}

/// Ordered CPI cut points plus convergence diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CpiBoundaries {
    /// Interior cut points `b_1 < ... < b_{L-1}`; a region belongs to
    /// stratum h when `b_h <= cpi < b_{h+1}` (right-open, last closed).
    pub cuts: Vec<f64>,
    /// Final relative spread of the W_h * s_h products.
    pub spread: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct SortedCpi {
    /// (cpi, region_id) ascending.
    items: Vec<(f64, String)>,
    prefix_sum: Vec<f64>,
    prefix_sq: Vec<f64>,
}

impl SortedCpi {
    fn new(cpi: &BTreeMap<String, f64>) -> Self {
        let mut items: Vec<(f64, String)> = cpi.iter().map(|(k, &v)| (v, k.clone())).collect();
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut prefix_sum = vec![0.0; items.len() + 1];
        let mut prefix_sq = vec![0.0; items.len() + 1];
        for (i, (v, _)) in items.iter().enumerate() {
            prefix_sum[i + 1] = prefix_sum[i] + v;
            prefix_sq[i + 1] = prefix_sq[i] + v * v;
        }
        SortedCpi {
            items,
            prefix_sum,
            prefix_sq,
        }
    }

    fn n(&self) -> usize {
        self.items.len()
    }

    /// W_h * s_h for the slice `[lo, hi)`, with s the sample sd (n-1).
    fn weight_sd_product(&self, lo: usize, hi: usize) -> f64 {
        let count = hi - lo;
        if count < 2 {
            return 0.0;
        }
        let sum = self.prefix_sum[hi] - self.prefix_sum[lo];
        let sq = self.prefix_sq[hi] - self.prefix_sq[lo];
        let var = ((sq - sum * sum / count as f64) / (count as f64 - 1.0)).max(0.0);
        (count as f64 / self.n() as f64) * var.sqrt()
    }
}

fn products_for(sorted: &SortedCpi, cuts: &[usize]) -> Option<Vec<f64>> {
    let n = sorted.n();
    let mut products = Vec::with_capacity(cuts.len() + 1);
    let mut lo = 0;
    for &c in cuts.iter().chain(std::iter::once(&n)) {
        if c <= lo {
            return None;
        }
        products.push(sorted.weight_sd_product(lo, c));
        lo = c;
    }
    Some(products)
}

/// Relative spread of the per-stratum products around their mean; infinite
/// when a stratum is empty so the search avoids such configurations.
fn product_spread(sorted: &SortedCpi, cuts: &[usize]) -> f64 {
    let Some(products) = products_for(sorted, cuts) else {
        return f64::INFINITY;
    };
    let mean = products.iter().sum::<f64>() / products.len() as f64;
    if mean <= 0.0 {
        return 0.0; // every stratum internally constant: all products equal
    }
    products
        .iter()
        .map(|p| (p - mean).abs() / mean)
        .fold(0.0, f64::max)
}

/// Descent objective: sum of squared relative deviations. Smoother than the
/// max-based spread, which stalls in plateaus under single-boundary moves.
fn product_ssq(sorted: &SortedCpi, cuts: &[usize]) -> f64 {
    let Some(products) = products_for(sorted, cuts) else {
        return f64::INFINITY;
    };
    let mean = products.iter().sum::<f64>() / products.len() as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    products
        .iter()
        .map(|p| {
            let d = (p - mean) / mean;
            d * d
        })
        .sum()
}

/// Stratify on baseline CPI with boundaries chosen so the weight-times-sd
/// products equalize (coordinate descent over observed cut positions,
/// starting from value-equidistant boundaries).
pub fn dalenius_gurney(
    cpi: &BTreeMap<String, f64>,
    l: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Stratification, CpiBoundaries)> {
    if l < 2 {
        return Err(StratificationError::KTooSmall(l));
    }
    let sorted = SortedCpi::new(cpi);
    let n = sorted.n();
    // Valid cut positions: indices where the value strictly increases, so a
    // boundary never splits ties.
    let valid: Vec<usize> = (1..n)
        .filter(|&i| sorted.items[i - 1].0 < sorted.items[i].0)
        .collect();
    let distinct = valid.len() + 1;
    if distinct < l {
        return Err(StratificationError::DegenerateCpi {
            needed: l,
            got: distinct,
        });
    }

    // Equidistant starting boundaries over [min, max], snapped to valid cut
    // positions while preserving strict ordering.
    let min = sorted.items[0].0;
    let max = sorted.items[n - 1].0;
    let mut cuts: Vec<usize> = Vec::with_capacity(l - 1);
    for i in 1..l {
        let target_value = min + (max - min) * i as f64 / l as f64;
        let pos = sorted
            .items
            .partition_point(|(v, _)| *v < target_value);
        // Snap to the nearest valid position.
        let snapped = match valid.binary_search(&pos) {
            Ok(vi) => valid[vi],
            Err(vi) => {
                let right = valid.get(vi).copied();
                let left = vi.checked_sub(1).map(|j| valid[j]);
                match (left, right) {
                    (Some(a), Some(b)) => {
                        if pos - a <= b - pos {
                            a
                        } else {
                            b
                        }
                    }
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => unreachable!("valid cuts checked above"),
                }
            }
        };
        cuts.push(snapped);
    }
    // Enforce strictly increasing cuts, shifting collisions to free valid
    // positions (feasible because distinct >= l).
    for i in 0..cuts.len() {
        let lower = if i == 0 { 0 } else { cuts[i - 1] };
        if cuts[i] <= lower {
            let vi = valid.partition_point(|&v| v <= lower);
            // Leave room for the boundaries after this one.
            let need_after = cuts.len() - 1 - i;
            let vi = vi.min(valid.len() - 1 - need_after);
            cuts[i] = valid[vi];
        }
    }
    // Repair from the right in case clamping broke monotonicity at the tail.
    for i in (0..cuts.len().saturating_sub(1)).rev() {
        if cuts[i] >= cuts[i + 1] {
            let vi = valid.partition_point(|&v| v < cuts[i + 1]);
            if vi == 0 {
                return Err(StratificationError::EmptyStratumUnrecoverable);
            }
            cuts[i] = valid[vi - 1];
        }
    }

    let mut spread = product_spread(&sorted, &cuts);
    let mut ssq = product_ssq(&sorted, &cuts);
    let mut iterations = 0;
    let mut converged = spread <= tol;
    while !converged && iterations < max_iter {
        iterations += 1;
        let mut improved = false;
        for i in 0..cuts.len() {
            let lower = if i == 0 { 0 } else { cuts[i - 1] };
            let upper = if i + 1 == cuts.len() { n } else { cuts[i + 1] };
            let mut best_pos = cuts[i];
            let mut best = ssq;
            let from = valid.partition_point(|&v| v <= lower);
            for &cand in &valid[from..] {
                if cand >= upper {
                    break;
                }
                if cand == cuts[i] {
                    continue;
                }
                let mut trial = cuts.clone();
                trial[i] = cand;
                let s = product_ssq(&sorted, &trial);
                if s < best {
                    best = s;
                    best_pos = cand;
                }
            }
            if best_pos != cuts[i] {
                cuts[i] = best_pos;
                ssq = best;
                improved = true;
            }
        }
        spread = product_spread(&sorted, &cuts);
        if spread <= tol {
            converged = true;
        } else if !improved {
            break; // local optimum under single-boundary moves
        }
    }

    if cuts.iter().enumerate().any(|(i, &c)| {
        let lower = if i == 0 { 0 } else { cuts[i - 1] };
        c <= lower
    }) || *cuts.last().unwrap() >= n
    {
        return Err(StratificationError::EmptyStratumUnrecoverable);
    }

    // Build the stratification from the final cuts.
    let mut assignment = BTreeMap::new();
    let mut intervals = Vec::with_capacity(l);
    let mut centroids = Vec::with_capacity(l);
    let mut lo = 0;
    for (h, &c) in cuts.iter().chain(std::iter::once(&n)).enumerate() {
        for (v, id) in &sorted.items[lo..c] {
            let _ = v;
            assignment.insert(id.clone(), h);
        }
        let lo_val = if h == 0 { min } else { sorted.items[cuts[h - 1]].0 };
        let hi_val = if h == l - 1 { max } else { sorted.items[cuts[h]].0 };
        intervals.push(Some((lo_val, hi_val)));
        let count = c - lo;
        let mean = (sorted.prefix_sum[c] - sorted.prefix_sum[lo]) / count as f64;
        centroids.push(Some(vec![mean]));
        lo = c;
    }
    let strata = strata_from_assignment(&assignment, l, centroids, intervals);
    let boundaries = CpiBoundaries {
        cuts: cuts.iter().map(|&c| sorted.items[c].0).collect(),
        spread,
        converged,
        iterations,
    };
    Ok((
        Stratification {
            scheme: Scheme::DaleniusGurney,
            seed: 0,
            assignment,
            strata,
        },
        boundaries,
    ))
}

/// Order strata by the supplied per-stratum values (typically baseline mean
/// CPI, or the sampled unit's CPI) and pair neighbors. When L is odd the
/// final three strata form a single group; J is the group count.
pub fn pair_strata(
    strat: &Stratification,
    order_values: &BTreeMap<usize, f64>,
) -> CollapsedPairing {
    let mut ids: Vec<usize> = strat.strata.iter().map(|s| s.id).collect();
    ids.sort_by(|a, b| {
        let va = order_values.get(a).copied().unwrap_or(f64::INFINITY);
        let vb = order_values.get(b).copied().unwrap_or(f64::INFINITY);
        va.total_cmp(&vb).then_with(|| a.cmp(b))
    });
    let mut groups = Vec::new();
    let mut rest = ids.as_slice();
    while !rest.is_empty() {
        if rest.len() == 3 {
            groups.push(rest.to_vec());
            break;
        }
        groups.push(rest[..2.min(rest.len())].to_vec());
        rest = &rest[2.min(rest.len())..];
    }
    CollapsedPairing { groups }
}

/// Serializable manifest: scheme, seed, strata, and feature parameters
/// needed to rebuild the feature matrix for centroid selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StratificationManifest {
    pub scheme: Scheme,
    pub seed: u64,
    pub l: usize,
    pub strata: Vec<Stratum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_dims: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_cpi: Option<bool>,
}

impl Stratification {
    pub fn to_manifest(
        &self,
        projection_dims: Option<usize>,
        include_cpi: Option<bool>,
    ) -> StratificationManifest {
        StratificationManifest {
            scheme: self.scheme,
            seed: self.seed,
            l: self.l(),
            strata: self.strata.clone(),
            projection_dims,
            include_cpi,
        }
    }

    /// Render the assignment as `region_id,stratum_id` CSV.
    pub fn assignment_csv(&self) -> String {
        let mut out = String::from("region_id,stratum_id\n");
        for (id, s) in &self.assignment {
            let _ = writeln!(out, "{id},{s}");
        }
        out
    }

    /// Rebuild a stratification from a manifest and assignment CSV text.
    pub fn from_manifest(
        manifest: &StratificationManifest,
        assignment_csv: &str,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(assignment_csv.as_bytes());
        let mut assignment = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let id = record
                .get(0)
                .ok_or_else(|| StratificationError::InvalidManifest("short row".into()))?;
            let s: usize = record
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| {
                    StratificationError::InvalidManifest(format!("bad stratum id for `{id}`"))
                })?;
            if assignment.insert(id.to_string(), s).is_some() {
                return Err(StratificationError::InvalidManifest(format!(
                    "region `{id}` assigned twice"
                )));
            }
        }
        let strat = Stratification {
            scheme: manifest.scheme,
            seed: manifest.seed,
            assignment,
            strata: manifest.strata.clone(),
        };
        strat.validate()?;
        Ok(strat)
    }

    /// Write `stratification.json` and `assignment.csv` into a directory.
    pub fn save_dir(
        &self,
        dir: &Path,
        projection_dims: Option<usize>,
        include_cpi: Option<bool>,
    ) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = self.to_manifest(projection_dims, include_cpi);
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join("stratification.json"), json)?;
        std::fs::write(dir.join("assignment.csv"), self.assignment_csv())?;
        Ok(())
    }

    /// Load a stratification saved with [`Stratification::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<(Self, StratificationManifest)> {
        let json = std::fs::read_to_string(dir.join("stratification.json"))?;
        let manifest: StratificationManifest = serde_json::from_str(&json)?;
        let csv_text = std::fs::read_to_string(dir.join("assignment.csv"))?;
        let strat = Self::from_manifest(&manifest, &csv_text)?;
        Ok((strat, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{standardize_rfv, Population, Region};
    use crate::rng::DetRng;

    fn pop_two_clouds(n: usize) -> Population {
        let mut rng = DetRng::new(77);
        let regions = (0..n)
            .map(|i| {
                let cloud = i % 2;
                let base = if cloud == 0 { 1.0 } else { 3.0 };
                Region {
                    region_id: format!("r{i:04}"),
                    instr_count: 1_000_000,
                    cpi: base + 0.01 * rng.next_f64(),
                    metrics: vec![base * 10.0 + 0.1 * rng.next_f64()],
                }
            })
            .collect();
        Population::new(regions, vec!["m".into()]).unwrap()
    }

    #[test]
    fn kmeans_stratify_separates_clouds() {
        let pop = pop_two_clouds(40);
        let features = standardize_rfv(&pop, true).unwrap();
        let strat = kmeans_stratify(&features, 2, 123, 100).unwrap();
        assert_eq!(strat.scheme, Scheme::Rfv);
        assert_eq!(strat.l(), 2);
        strat.validate().unwrap();
        // Even-index regions all share a stratum distinct from odd-index.
        let s_even = strat.assignment["r0000"];
        let s_odd = strat.assignment["r0001"];
        assert_ne!(s_even, s_odd);
        for (id, &s) in &strat.assignment {
            let i: usize = id[1..].parse().unwrap();
            assert_eq!(s, if i % 2 == 0 { s_even } else { s_odd });
        }
    }

    #[test]
    fn kmeans_stratify_deterministic() {
        let pop = pop_two_clouds(30);
        let features = standardize_rfv(&pop, true).unwrap();
        let a = kmeans_stratify(&features, 4, 9, 100).unwrap();
        let b = kmeans_stratify(&features, 4, 9, 100).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pop = pop_two_clouds(10);
        let features = standardize_rfv(&pop, true).unwrap();
        let strat = kmeans_stratify(&features, 10, 5, 100).unwrap();
        for s in &strat.strata {
            assert_eq!(s.n_members, 1);
            assert!((s.weight - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let pop = pop_two_clouds(10);
        let features = standardize_rfv(&pop, true).unwrap();
        assert!(matches!(
            kmeans_stratify(&features, 1, 0, 10),
            Err(StratificationError::KTooSmall(1))
        ));
        assert!(matches!(
            kmeans_stratify(&features, 11, 0, 10),
            Err(StratificationError::KTooLarge { .. })
        ));
    }

    #[test]
    fn kmeans_rejects_cpi_only_features() {
        let pop = pop_two_clouds(10);
        let features = crate::population::cpi_only(&pop);
        assert!(matches!(
            kmeans_stratify(&features, 2, 0, 10),
            Err(StratificationError::BadFeatureProvenance(_))
        ));
    }

    fn uniform_cpi_map(n: usize) -> BTreeMap<String, f64> {
        // Evenly spaced values over [0, 1].
        (0..n)
            .map(|i| (format!("r{i:04}"), i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn dalenius_gurney_uniform_splits_near_half() {
        let cpi = uniform_cpi_map(1000);
        let (strat, bounds) = dalenius_gurney(&cpi, 2, 0.05, 100).unwrap();
        assert_eq!(strat.l(), 2);
        assert!(bounds.converged, "spread {}", bounds.spread);
        assert!(
            bounds.cuts[0] > 0.4 && bounds.cuts[0] < 0.6,
            "boundary {}",
            bounds.cuts[0]
        );
        strat.validate().unwrap();
    }

    #[test]
    fn dalenius_gurney_matches_exhaustive_sweep_on_uniform() {
        // Brute-force oracle: best single boundary over all valid cuts.
        let cpi = uniform_cpi_map(200);
        let sorted = SortedCpi::new(&cpi);
        let mut best = f64::INFINITY;
        let mut best_cut = 0;
        for c in 1..sorted.n() {
            let s = product_spread(&sorted, &[c]);
            if s < best {
                best = s;
                best_cut = c;
            }
        }
        let (_, bounds) = dalenius_gurney(&cpi, 2, 0.05, 200).unwrap();
        // The uniform optimum sits at 0.5; both the sweep and the descent
        // must land close to it with near-equal products.
        let oracle_boundary = sorted.items[best_cut].0;
        assert!((oracle_boundary - 0.5).abs() < 0.05, "oracle {oracle_boundary}");
        assert!(
            (bounds.cuts[0] - oracle_boundary).abs() < 0.05,
            "descent {} vs oracle {}",
            bounds.cuts[0],
            oracle_boundary
        );
        assert!(bounds.spread <= 0.05, "spread {}", bounds.spread);
    }

    #[test]
    fn dalenius_gurney_rejects_constant_cpi() {
        let cpi: BTreeMap<String, f64> =
            (0..10).map(|i| (format!("r{i}"), 2.0)).collect();
        assert!(matches!(
            dalenius_gurney(&cpi, 2, 0.05, 100),
            Err(StratificationError::DegenerateCpi { .. })
        ));
    }

    #[test]
    fn dalenius_gurney_lognormal_converges() {
        let mut rng = DetRng::new(4242);
        let cpi: BTreeMap<String, f64> = (0..1000)
            .map(|i| (format!("r{i:05}"), (0.2 + 0.45 * rng.normal()).exp()))
            .collect();
        let (strat, bounds) = dalenius_gurney(&cpi, 4, 0.05, 100).unwrap();
        assert!(bounds.converged, "spread {}", bounds.spread);
        assert!(bounds.spread <= 0.05);
        assert!(bounds.cuts.windows(2).all(|w| w[0] < w[1]));
        strat.validate().unwrap();
    }

    #[test]
    fn weights_reflect_exact_member_counts() {
        let pop = pop_two_clouds(37);
        let features = standardize_rfv(&pop, true).unwrap();
        let strat = kmeans_stratify(&features, 5, 3, 100).unwrap();
        for s in &strat.strata {
            let reconstructed = (s.weight * strat.n() as f64).round() as usize;
            assert_eq!(reconstructed, s.n_members);
        }
    }

    #[test]
    fn pair_strata_orders_by_value() {
        let cpi = uniform_cpi_map(100);
        let (strat, _) = dalenius_gurney(&cpi, 4, 0.05, 100).unwrap();
        let means: BTreeMap<usize, f64> =
            vec![(0, 1.0), (1, 1.1), (2, 2.0), (3, 2.2)].into_iter().collect();
        let pairing = pair_strata(&strat, &means);
        assert_eq!(pairing.groups, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(pairing.j(), 2);
    }

    #[test]
    fn pair_strata_two_strata() {
        let cpi = uniform_cpi_map(50);
        let (strat, _) = dalenius_gurney(&cpi, 2, 0.05, 100).unwrap();
        let means: BTreeMap<usize, f64> = vec![(0, 0.2), (1, 0.8)].into_iter().collect();
        let pairing = pair_strata(&strat, &means);
        assert_eq!(pairing.groups, vec![vec![0, 1]]);
    }

    #[test]
    fn pair_strata_odd_count_forms_triple() {
        let cpi = uniform_cpi_map(200);
        let (strat, _) = dalenius_gurney(&cpi, 5, 0.5, 100).unwrap();
        let means: BTreeMap<usize, f64> =
            (0..5).map(|i| (i, i as f64)).collect();
        let pairing = pair_strata(&strat, &means);
        assert_eq!(pairing.groups.len(), 2);
        assert_eq!(pairing.groups[0], vec![0, 1]);
        assert_eq!(pairing.groups[1], vec![2, 3, 4]);
    }

    #[test]
    fn dalenius_gurney_near_grid_search_optimum() {
        // Exhaustive oracle over all boundary triples on a 200-point
        // lognormal population.
        let mut rng = DetRng::new(99);
        let cpi: BTreeMap<String, f64> = (0..200)
            .map(|i| (format!("r{i:04}"), (0.2 + 0.45 * rng.normal()).exp()))
            .collect();
        let sorted = SortedCpi::new(&cpi);
        let n = sorted.n();
        let mut best = f64::INFINITY;
        for a in 1..n - 2 {
            for b in a + 1..n - 1 {
                for c in b + 1..n {
                    let s = product_spread(&sorted, &[a, b, c]);
                    if s < best {
                        best = s;
                    }
                }
            }
        }
        let (_, bounds) = dalenius_gurney(&cpi, 4, 0.05, 100).unwrap();
        assert!(best <= bounds.spread + 1e-12, "oracle {best} vs ours {}", bounds.spread);
        assert!(
            bounds.spread <= (3.0 * best).max(0.05),
            "descent spread {} too far above the grid optimum {}",
            bounds.spread,
            best
        );
        assert!(bounds.cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn manifest_round_trip() {
        let pop = pop_two_clouds(24);
        let features = standardize_rfv(&pop, true).unwrap();
        let strat = kmeans_stratify(&features, 3, 8, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        strat.save_dir(dir.path(), None, Some(true)).unwrap();
        let (back, manifest) = Stratification::load_dir(dir.path()).unwrap();
        assert_eq!(back.assignment, strat.assignment);
        assert_eq!(back.scheme, strat.scheme);
        assert_eq!(manifest.include_cpi, Some(true));
        assert_eq!(manifest.l, 3);
    }
}
