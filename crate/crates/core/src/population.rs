//! Region ingestion, validation, and feature preprocessing.
//!
//! A [`Population`] is the sampling frame: one record per simulation region
//! with its instruction count, CPI, and any number of named per-instruction
//! event rates. [`BbvTable`] holds sparse basic-block execution counts.
//! Both feed [`FeatureMatrix`] construction: z-scored rich feature vectors,
//! random-projected block vectors, or a bare CPI column.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("input file is empty: {0}")]
    EmptyFile(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric value in column `{column}` at data row {row}")]
    NonNumericValue { row: usize, column: String },
    #[error("non-positive value in column `{column}` at data row {row}")]
    NonPositiveValue { row: usize, column: String },
    #[error("negative value in column `{column}` at data row {row}")]
    NegativeValue { row: usize, column: String },
    #[error("duplicate region id `{0}`")]
    DuplicateRegionId(String),
    #[error("negative basic-block count for region `{region_id}`, block `{block_id}`")]
    NegativeCount { region_id: String, block_id: String },
    #[error("region `{0}` appears in the BBV table but not in the population")]
    UnknownRegion(String),
    #[error("population needs at least 2 regions, got {0}")]
    TooFewRegions(usize),
    #[error("metric vector length mismatch for region `{0}`")]
    MetricLengthMismatch(String),
    #[error("all metric columns are constant; nothing to standardize")]
    AllColumnsConstant,
    #[error("region `{0}` has an all-zero basic-block vector")]
    ZeroRowSum(String),
    #[error("projection dimension {dims} out of range 1..={max}")]
    BadProjectionDims { dims: usize, max: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, PopulationError>;

/// One simulation region: a fixed-length interval of program execution.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub region_id: String,
    pub instr_count: u64,
    pub cpi: f64,
    /// Per-instruction event rates; names live on the owning [`Population`].
    pub metrics: Vec<f64>,
}

/// The full set of phase-1 sampled regions acting as the sampling frame.
#[derive(Clone, Debug)]
pub struct Population {
    regions: Vec<Region>,
    metric_names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Population {
    pub fn new(regions: Vec<Region>, metric_names: Vec<String>) -> Result<Self> {
        if regions.len() < 2 {
            return Err(PopulationError::TooFewRegions(regions.len()));
        }
        let mut index = BTreeMap::new();
        for (i, r) in regions.iter().enumerate() {
            if r.metrics.len() != metric_names.len() {
                return Err(PopulationError::MetricLengthMismatch(r.region_id.clone()));
            }
            if index.insert(r.region_id.clone(), i).is_some() {
                return Err(PopulationError::DuplicateRegionId(r.region_id.clone()));
            }
        }
        Ok(Population {
            regions,
            metric_names,
            index,
        })
    }

    pub fn n(&self) -> usize {
        self.regions.len()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn region(&self, region_id: &str) -> Option<&Region> {
        self.index.get(region_id).map(|&i| &self.regions[i])
    }

    pub fn contains(&self, region_id: &str) -> bool {
        self.index.contains_key(region_id)
    }

    pub fn cpi_values(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.cpi).collect()
    }

    pub fn mean_cpi(&self) -> f64 {
        self.regions.iter().map(|r| r.cpi).sum::<f64>() / self.n() as f64
    }

    /// Sample variance of CPI (divisor n-1).
    pub fn cpi_variance(&self) -> f64 {
        sample_variance(&self.cpi_values())
    }

    pub fn cpi_map(&self) -> BTreeMap<String, f64> {
        self.regions
            .iter()
            .map(|r| (r.region_id.clone(), r.cpi))
            .collect()
    }
}

/// Sample variance with divisor n-1; 0.0 for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
}

/// Column mapping for region CSV files.
#[derive(Clone, Debug)]
pub struct CsvSchema {
    pub region_id: String,
    pub instr_count: String,
    pub cpi: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            region_id: "region_id".into(),
            instr_count: "instr_count".into(),
            cpi: "cpi".into(),
        }
    }
}

fn read_non_empty(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(PopulationError::EmptyFile(path.display().to_string()));
    }
    Ok(text)
}

/// Load a region CSV: header row with `region_id,instr_count,cpi`; every
/// additional column is treated as a numeric metric. Data rows are numbered
/// from 1 in error reports.
pub fn load_regions(path: &Path, schema: &CsvSchema) -> Result<Population> {
    let text = read_non_empty(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PopulationError::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.region_id)?;
    let instr_col = col(&schema.instr_count)?;
    let cpi_col = col(&schema.cpi)?;
    let metric_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_col && i != instr_col && i != cpi_col)
        .collect();
    let metric_names: Vec<String> = metric_cols.iter().map(|&i| headers[i].clone()).collect();

    let parse_f64 = |field: &str, row: usize, column: &str| -> Result<f64> {
        field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| PopulationError::NonNumericValue {
                row,
                column: column.to_string(),
            })
    };

    let mut regions = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let region_id = record.get(id_col).unwrap_or("").to_string();
        let instr_raw = record.get(instr_col).unwrap_or("");
        let instr: i128 = instr_raw
            .parse()
            .map_err(|_| PopulationError::NonNumericValue {
                row,
                column: schema.instr_count.clone(),
            })?;
        if instr <= 0 {
            return Err(PopulationError::NonPositiveValue {
                row,
                column: schema.instr_count.clone(),
            });
        }
        let cpi = parse_f64(record.get(cpi_col).unwrap_or(""), row, &schema.cpi)?;
        if cpi <= 0.0 {
            return Err(PopulationError::NonPositiveValue {
                row,
                column: schema.cpi.clone(),
            });
        }
        let mut metrics = Vec::with_capacity(metric_cols.len());
        for (&mc, name) in metric_cols.iter().zip(&metric_names) {
            let v = parse_f64(record.get(mc).unwrap_or(""), row, name)?;
            if v < 0.0 {
                return Err(PopulationError::NegativeValue {
                    row,
                    column: name.clone(),
                });
            }
            metrics.push(v);
        }
        regions.push(Region {
            region_id,
            instr_count: instr as u64,
            cpi,
            metrics,
        });
    }
    Population::new(regions, metric_names)
}

/// Write a population back as CSV. Floats are printed with the shortest
/// representation that parses back to the same value, so
/// `load_regions(save_regions(pop))` round-trips bit-exactly.
pub fn save_regions(pop: &Population, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("region_id,instr_count,cpi");
    for name in pop.metric_names() {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for r in pop.regions() {
        let _ = write!(out, "{},{},{}", r.region_id, r.instr_count, r.cpi);
        for m in &r.metrics {
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Sparse basic-block execution counts, one row per region.
#[derive(Clone, Debug)]
pub struct BbvTable {
    block_ids: Vec<String>,
    /// region_id -> sorted (block index, count) pairs.
    rows: BTreeMap<String, Vec<(usize, f64)>>,
}

impl BbvTable {
    /// Number of distinct basic blocks.
    pub fn dimension(&self) -> usize {
        self.block_ids.len()
    }

    pub fn n_regions(&self) -> usize {
        self.rows.len()
    }

    pub fn region_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(|s| s.as_str())
    }

    pub fn row(&self, region_id: &str) -> Option<&[(usize, f64)]> {
        self.rows.get(region_id).map(|v| v.as_slice())
    }

    pub fn from_triplets(triplets: Vec<(String, String, f64)>) -> Result<Self> {
        let mut blocks = BTreeSet::new();
        for (region_id, block_id, count) in &triplets {
            if *count < 0.0 || !count.is_finite() {
                return Err(PopulationError::NegativeCount {
                    region_id: region_id.clone(),
                    block_id: block_id.clone(),
                });
            }
            blocks.insert(block_id.clone());
        }
        let block_ids: Vec<String> = blocks.into_iter().collect();
        let block_index: BTreeMap<&str, usize> = block_ids
            .iter()
            .enumerate()
            .map(|(i, b)| (b.as_str(), i))
            .collect();
        let mut rows: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
        for (region_id, block_id, count) in &triplets {
            let idx = block_index[block_id.as_str()];
            *rows.entry(region_id.clone()).or_default().entry(idx).or_insert(0.0) += count;
        }
        Ok(BbvTable {
            block_ids,
            rows: rows
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        })
    }

    /// Check that every region with a BBV row exists in `pop`.
    pub fn validate_against(&self, pop: &Population) -> Result<()> {
        for id in self.rows.keys() {
            if !pop.contains(id) {
                return Err(PopulationError::UnknownRegion(id.clone()));
            }
        }
        Ok(())
    }
}

/// Load a sparse BBV triplet CSV with header `region_id,block_id,count`.
/// Duplicate (region, block) triplets are summed.
pub fn load_bbvs(path: &Path) -> Result<BbvTable> {
    let text = read_non_empty(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PopulationError::MissingColumn(name.to_string()))
    };
    let (rc, bc, cc) = (col("region_id")?, col("block_id")?, col("count")?);

    let mut triplets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let region_id = record.get(rc).unwrap_or("").to_string();
        let block_id = record.get(bc).unwrap_or("").to_string();
        let count: f64 = record
            .get(cc)
            .unwrap_or("")
            .parse()
            .map_err(|_| PopulationError::NonNumericValue {
                row,
                column: "count".into(),
            })?;
        triplets.push((region_id, block_id, count));
    }
    if triplets.is_empty() {
        return Err(PopulationError::EmptyFile(path.display().to_string()));
    }
    BbvTable::from_triplets(triplets)
}

/// Where a feature matrix came from; downstream stratification and selection
/// check this against the scheme they expect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    StandardizedRfv,
    ProjectedBbv,
    CpiOnly,
}

/// Per-region feature rows, one row per region id.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    region_ids: Vec<String>,
    column_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    provenance: Provenance,
    /// Constant columns dropped during standardization.
    dropped_columns: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl FeatureMatrix {
    fn build(
        region_ids: Vec<String>,
        column_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        provenance: Provenance,
        dropped_columns: Vec<String>,
    ) -> Self {
        let index = region_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        FeatureMatrix {
            region_ids,
            column_names,
            rows,
            provenance,
            dropped_columns,
            index,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn dropped_columns(&self) -> &[String] {
        &self.dropped_columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn row_for(&self, region_id: &str) -> Option<&[f64]> {
        self.index.get(region_id).map(|&i| self.rows[i].as_slice())
    }
}

/// z-score the metric columns (and optionally CPI) of a population.
///
/// Uses the sample standard deviation (divisor n-1). Constant columns are
/// dropped and listed in the result rather than producing NaNs.
pub fn standardize_rfv(pop: &Population, include_cpi: bool) -> Result<FeatureMatrix> {
    let n = pop.n();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    if include_cpi {
        columns.push(("cpi".into(), pop.cpi_values()));
    }
    for (j, name) in pop.metric_names().iter().enumerate() {
        columns.push((
            name.clone(),
            pop.regions().iter().map(|r| r.metrics[j]).collect(),
        ));
    }

    let mut kept: Vec<(String, Vec<f64>)> = Vec::new();
    let mut dropped = Vec::new();
    for (name, values) in columns {
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = sample_variance(&values).sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            dropped.push(name);
            continue;
        }
        kept.push((name, values.iter().map(|v| (v - mean) / sd).collect()));
    }
    if kept.is_empty() {
        return Err(PopulationError::AllColumnsConstant);
    }

    let column_names: Vec<String> = kept.iter().map(|(n, _)| n.clone()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| kept.iter().map(|(_, col)| col[i]).collect())
        .collect();
    let region_ids = pop.regions().iter().map(|r| r.region_id.clone()).collect();
    Ok(FeatureMatrix::build(
        region_ids,
        column_names,
        rows,
        Provenance::StandardizedRfv,
        dropped,
    ))
}

/// Project BBV rows to `dims` dimensions with a seeded sign matrix.
///
/// Each row is first normalized to block frequencies (counts over row sum)
/// so region length does not dominate distances. The projection entry for
/// (block i, output j) is `±1/sqrt(dims)` with the sign a pure function of
/// `(seed, i, j)`, which makes the result independent of row order.
pub fn random_project(bbvs: &BbvTable, dims: usize, seed: u64) -> Result<FeatureMatrix> {
    let max = bbvs.dimension();
    if dims < 1 || dims > max {
        return Err(PopulationError::BadProjectionDims { dims, max });
    }
    let scale = 1.0 / (dims as f64).sqrt();
    let mut region_ids = Vec::with_capacity(bbvs.n_regions());
    let mut rows = Vec::with_capacity(bbvs.n_regions());
    for (region_id, entries) in &bbvs.rows {
        let total: f64 = entries.iter().map(|&(_, c)| c).sum();
        if total <= 0.0 {
            return Err(PopulationError::ZeroRowSum(region_id.clone()));
        }
        let mut out = vec![0.0_f64; dims];
        for &(block, count) in entries {
            let freq = count / total;
            for (j, o) in out.iter_mut().enumerate() {
                let sign = if rng::mix_tags(seed, &[block as u64, j as u64]) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                };
                *o += freq * sign * scale;
            }
        }
        region_ids.push(region_id.clone());
        rows.push(out);
    }
    let column_names = (0..dims).map(|j| format!("proj_{j}")).collect();
    Ok(FeatureMatrix::build(
        region_ids,
        column_names,
        rows,
        Provenance::ProjectedBbv,
        Vec::new(),
    ))
}

/// Single-column feature matrix holding raw baseline CPI.
pub fn cpi_only(pop: &Population) -> FeatureMatrix {
    let region_ids: Vec<String> = pop.regions().iter().map(|r| r.region_id.clone()).collect();
    let rows = pop.regions().iter().map(|r| vec![r.cpi]).collect();
    FeatureMatrix::build(
        region_ids,
        vec!["cpi".into()],
        rows,
        Provenance::CpiOnly,
        Vec::new(),
    )
}
