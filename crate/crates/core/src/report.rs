//! Diagnostic artifacts: CPI histograms, weight-synthesized approximations
//! of the full distribution, and blind-spot gap lists.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::selection::RegionSelection;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no input values")]
    EmptyInput,
    #[error("bin count must be at least 1")]
    InvalidBins,
    #[error("bin edges must be strictly increasing")]
    BadEdges,
    #[error("histograms have different bin edges")]
    EdgeMismatch,
    #[error("no value for region `{0}`")]
    MissingValue(String),
    #[error("n_total = {n_total} is smaller than the stratum count {l}")]
    InvalidTotal { n_total: usize, l: usize },
}

type Result<T> = std::result::Result<T, ReportError>;

/// Per-stratum composition of each bin.
#[derive(Clone, Debug, PartialEq)]
pub struct HistStrata {
    pub stratum_ids: Vec<usize>,
    /// `per_bin[bin][i]` counts values of stratum `stratum_ids[i]`.
    pub per_bin: Vec<Vec<u64>>,
}

/// A histogram over `edges.len() - 1` bins. Bins are right-open except the
/// last, which is right-closed; values outside the span clamp to the end
/// bins so the total count always equals the input length.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub strata: Option<HistStrata>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV form: `bin_lo,bin_hi,count[,stratum_id,count]...` with only the
    /// non-zero strata listed per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for b in 0..self.bins() {
            let _ = write!(out, "{},{},{}", self.edges[b], self.edges[b + 1], self.counts[b]);
            if let Some(s) = &self.strata {
                for (i, &id) in s.stratum_ids.iter().enumerate() {
                    if s.per_bin[b][i] > 0 {
                        let _ = write!(out, ",{},{}", id, s.per_bin[b][i]);
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn uniform_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Degenerate span: give the single value a unit-wide bin range.
    let (min, max) = if max > min { (min, max) } else { (min, min + 1.0) };
    (0..=bins)
        .map(|i| min + (max - min) * i as f64 / bins as f64)
        .collect()
}

fn bin_index(v: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    if v < edges[0] {
        return 0;
    }
    if v >= edges[bins] {
        return bins - 1;
    }
    // First edge strictly greater than v, minus one.
    edges.partition_point(|e| *e <= v) - 1
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(ReportError::InvalidBins);
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ReportError::BadEdges);
    }
    Ok(())
}

/// Histogram with uniform edges spanning the data.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    if bins == 0 {
        return Err(ReportError::InvalidBins);
    }
    histogram_with_edges(values, uniform_edges(values, bins))
}

/// Histogram over explicit edges.
pub fn histogram_with_edges(values: &[f64], edges: Vec<f64>) -> Result<Histogram> {
    if values.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    check_edges(&edges)?;
    let mut counts = vec![0u64; edges.len() - 1];
    for &v in values {
        counts[bin_index(v, &edges)] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        strata: None,
    })
}

/// Histogram with per-bin stratum composition (cluster-colored charts).
pub fn histogram_by_stratum(values: &[(f64, usize)], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    if bins == 0 {
        return Err(ReportError::InvalidBins);
    }
    let plain: Vec<f64> = values.iter().map(|&(v, _)| v).collect();
    let edges = uniform_edges(&plain, bins);
    check_edges(&edges)?;

    let mut ids: Vec<usize> = values.iter().map(|&(_, s)| s).collect();
    ids.sort_unstable();
    ids.dedup();
    let id_index: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let mut counts = vec![0u64; edges.len() - 1];
    let mut per_bin = vec![vec![0u64; ids.len()]; edges.len() - 1];
    for &(v, s) in values {
        let b = bin_index(v, &edges);
        counts[b] += 1;
        per_bin[b][id_index[&s]] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        strata: Some(HistStrata {
            stratum_ids: ids,
            per_bin,
        }),
    })
}

/// Synthesize the values a selection implies: per stratum, its chosen
/// region's y repeated in proportion to the stratum weight.
///
/// Counts use largest-remainder rounding (ties toward the larger weight,
/// then the higher stratum id), so the output length is exactly `n_total`.
pub fn approx_distribution(
    sel: &RegionSelection,
    y: &BTreeMap<String, f64>,
    n_total: usize,
) -> Result<Vec<f64>> {
    let l = sel.entries.len();
    if n_total < l {
        return Err(ReportError::InvalidTotal { n_total, l });
    }
    let shares: Vec<f64> = sel.entries.iter().map(|e| e.weight * n_total as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa)
            .then_with(|| sel.entries[b].weight.total_cmp(&sel.entries[a].weight))
            .then_with(|| b.cmp(&a))
    });
    let mut remaining = n_total - assigned;
    let mut i = 0;
    while remaining > 0 {
        counts[order[i % l]] += 1;
        remaining -= 1;
        i += 1;
    }

    let mut out = Vec::with_capacity(n_total);
    for (e, &count) in sel.entries.iter().zip(&counts) {
        let v = y
            .get(&e.region_id)
            .copied()
            .ok_or_else(|| ReportError::MissingValue(e.region_id.clone()))?;
        out.extend(std::iter::repeat(v).take(count));
    }
    debug_assert_eq!(out.len(), n_total);
    Ok(out)
}

/// A maximal run of bins occupied in the baseline but empty in the
/// approximation.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GapInterval {
    pub lo: f64,
    pub hi: f64,
    pub baseline_count: u64,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct GapReport {
    pub gaps: Vec<GapInterval>,
}

impl GapReport {
    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gap_lo,gap_hi,baseline_count\n");
        for g in &self.gaps {
            let _ = writeln!(out, "{},{},{}", g.lo, g.hi, g.baseline_count);
        }
        out
    }
}

/// List CPI ranges the baseline occupies (count >= `min_count`) but the
/// approximated distribution misses entirely.
pub fn gap_report(baseline: &Histogram, approx: &Histogram, min_count: u64) -> Result<GapReport> {
    if baseline.edges != approx.edges {
        return Err(ReportError::EdgeMismatch);
    }
    let mut gaps = Vec::new();
    let mut run: Option<(usize, u64)> = None;
    for b in 0..baseline.bins() {
        let qualifies = baseline.counts[b] >= min_count && approx.counts[b] == 0;
        match (&mut run, qualifies) {
            (None, true) => run = Some((b, baseline.counts[b])),
            (Some((_, total)), true) => *total += baseline.counts[b],
            (Some((start, total)), false) => {
                gaps.push(GapInterval {
                    lo: baseline.edges[*start],
                    hi: baseline.edges[b],
                    baseline_count: *total,
                });
                run = None;
            }
            (None, false) => {}
        }
    }
    if let Some((start, total)) = run {
        gaps.push(GapInterval {
            lo: baseline.edges[start],
            hi: baseline.edges[baseline.bins()],
            baseline_count: total,
        });
    }
    Ok(GapReport { gaps })
}
