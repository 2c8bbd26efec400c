//! Subcommand implementations. Every command writes its artifacts plus a
//! run manifest into `--out` and prints a short human summary to stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use simsamp_core::estimators::{
    self, CollapsedPairing, Df, Estimate, EstimateReport, StratumSample,
};
use simsamp_core::montecarlo::{self, SamplingDesign, SynthSpec};
use simsamp_core::planner::{self, Phase1Summary};
use simsamp_core::population::{
    self, cpi_only, load_bbvs, load_regions, random_project, standardize_rfv, CsvSchema,
    FeatureMatrix, Population,
};
use simsamp_core::report as reporting;
use simsamp_core::selection::{self, RegionSelection};
use simsamp_core::stats;
use simsamp_core::stratification::{
    dalenius_gurney, kmeans_stratify, pair_strata, Scheme, Stratification,
};
use simsamp_core::svg;

use crate::error::CliError;
use crate::manifest::OutDir;
use crate::{MethodArg, PairByArg, PolicyArg, SchemeArg};

const STRAT_FILES: [&str; 2] = ["stratification.json", "assignment.csv"];

fn load_population(path: &Path) -> Result<Population, CliError> {
    Ok(load_regions(path, &CsvSchema::default())?)
}

pub fn characterize(regions: &Path, bins: usize, out: &Path) -> Result<(), CliError> {
    let mut outdir = OutDir::create(out, "characterize")?;
    outdir.input(regions)?;
    outdir.param("regions", regions.display());
    outdir.param("bins", bins);

    let pop = load_population(regions)?;
    let cpis = pop.cpi_values();
    let hist = reporting::histogram(&cpis, bins)?;
    let mean = pop.mean_cpi();
    let s2 = pop.cpi_variance();
    let est = Estimate {
        mean,
        var_of_mean: s2 / pop.n() as f64,
        df: Df::Finite((pop.n() - 1) as f64),
        method: estimators::Method::Srs,
    };
    let ci = estimators::confidence_interval(&est, 0.95)?;
    let stats_json = json!({
        "n": pop.n(),
        "mean": mean,
        "variance": s2,
        "sd": s2.sqrt(),
        "min": cpis.iter().cloned().fold(f64::INFINITY, f64::min),
        "max": cpis.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "level": 0.95,
        "srs_margin": ci.margin,
        "srs_relative_margin": ci.relative_margin,
    });

    outdir.write("histogram.csv", hist.to_csv().as_bytes())?;
    outdir.write(
        "histogram.svg",
        svg::histogram_svg(&hist, "CPI distribution", "CPI", "regions").as_bytes(),
    )?;
    outdir.write(
        "stats.json",
        serde_json::to_string_pretty(&stats_json)?.as_bytes(),
    )?;
    outdir.finish()?;
    println!(
        "characterize: n = {}, mean CPI = {:.6}, sd = {:.6}, SRS 95% margin = {:.4}%",
        pop.n(),
        mean,
        s2.sqrt(),
        100.0 * ci.relative_margin.unwrap_or(0.0)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn stratify(
    regions: &Path,
    scheme: SchemeArg,
    k: usize,
    seed: u64,
    bbv: Option<&Path>,
    dims: usize,
    include_cpi: bool,
    tol: f64,
    max_iter: usize,
    out: &Path,
) -> Result<(), CliError> {
    let mut outdir = OutDir::create(out, "stratify")?;
    outdir.input(regions)?;
    outdir.param("regions", regions.display());
    outdir.param("scheme", format!("{scheme:?}").to_lowercase());
    outdir.param("k", k);
    outdir.seed("seed", seed);

    let pop = load_population(regions)?;
    let (strat, proj_dims, inc_cpi) = match scheme {
        SchemeArg::Bbv => {
            let bbv_path = bbv.ok_or_else(|| {
                CliError::usage("--scheme bbv requires --bbv <triplet CSV>")
            })?;
            outdir.input(bbv_path)?;
            outdir.param("bbv", bbv_path.display());
            outdir.param("dims", dims);
            let table = load_bbvs(bbv_path)?;
            table.validate_against(&pop)?;
            let features = random_project(&table, dims, seed)?;
            (
                kmeans_stratify(&features, k, seed, max_iter)?,
                Some(dims),
                None,
            )
        }
        SchemeArg::Rfv => {
            outdir.param("include_cpi", include_cpi);
            let features = standardize_rfv(&pop, include_cpi)?;
            for name in features.dropped_columns() {
                eprintln!("dropped constant column: {name}");
            }
            outdir.param("dropped_columns", features.dropped_columns().join(";"));
            (
                kmeans_stratify(&features, k, seed, max_iter)?,
                None,
                Some(include_cpi),
            )
        }
        SchemeArg::Dg => {
            outdir.param("tol", tol);
            outdir.param("max_iter", max_iter);
            let (strat, bounds) = dalenius_gurney(&pop.cpi_map(), k, tol, max_iter)?;
            outdir.param("dg_spread", bounds.spread);
            outdir.param("dg_converged", bounds.converged);
            (strat, None, None)
        }
    };

    strat.save_dir(outdir.path(), proj_dims, inc_cpi)?;
    // Register the saved files in the manifest.
    let manifest_bytes = std::fs::read(outdir.path().join("stratification.json"))?;
    let assignment_bytes = std::fs::read(outdir.path().join("assignment.csv"))?;
    outdir.write("stratification.json", &manifest_bytes)?;
    outdir.write("assignment.csv", &assignment_bytes)?;
    outdir.finish()?;
    println!(
        "stratify: scheme {}, L = {}, N = {} regions",
        strat.scheme,
        strat.l(),
        strat.n()
    );
    Ok(())
}

/// Rebuild the feature matrix a stratification was built from, using the
/// parameters recorded in its manifest.
fn rebuild_features(
    strat: &Stratification,
    manifest: &simsamp_core::stratification::StratificationManifest,
    pop: &Population,
    bbv: Option<&Path>,
) -> Result<FeatureMatrix, CliError> {
    match strat.scheme {
        Scheme::Rfv => Ok(standardize_rfv(pop, manifest.include_cpi.unwrap_or(true))?),
        Scheme::DaleniusGurney => Ok(cpi_only(pop)),
        Scheme::Bbv => {
            let bbv_path = bbv.ok_or_else(|| {
                CliError::usage("centroid selection on a BBV stratification requires --bbv")
            })?;
            let table = load_bbvs(bbv_path)?;
            table.validate_against(pop)?;
            let dims = manifest.projection_dims.unwrap_or(15);
            Ok(random_project(&table, dims, manifest.seed)?)
        }
    }
}

pub fn select(
    strat_dir: &Path,
    regions: &Path,
    policy: PolicyArg,
    seed: u64,
    bbv: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut outdir = OutDir::create(out, "select")?;
    outdir.input(regions)?;
    outdir.input_dir(strat_dir, &STRAT_FILES)?;
    outdir.param("regions", regions.display());
    outdir.param("stratification", strat_dir.display());
    outdir.param("policy", format!("{policy:?}").to_uppercase());
    outdir.seed("seed", seed);

    let pop = load_population(regions)?;
    let (strat, manifest) = Stratification::load_dir(strat_dir)?;
    let sel = match policy {
        PolicyArg::Random => selection::select_random(&strat, &pop, seed)?,
        PolicyArg::Centroid => {
            let features = rebuild_features(&strat, &manifest, &pop, bbv)?;
            selection::select_centroid(&strat, &pop, &features)?
        }
        PolicyArg::Mean => selection::select_mean_cpi(&strat, &pop, &pop.cpi_map())?,
    };
    outdir.write("selection.csv", sel.to_csv().as_bytes())?;
    outdir.finish()?;
    let estimate = selection::weighted_point_estimate(&sel, &pop.cpi_map())?;
    println!(
        "select: {} regions chosen ({} policy); weighted baseline CPI = {:.6}",
        sel.entries.len(),
        sel.policy.name(),
        estimate
    );
    Ok(())
}

fn load_values(path: &Path, column: &str) -> Result<BTreeMap<String, f64>, CliError> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(CliError::input(format!("{} is empty", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let id_col = headers
        .iter()
        .position(|h| h == "region_id")
        .ok_or_else(|| CliError::input("values CSV needs a region_id column"))?;
    let val_col = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::input(format!("values CSV has no `{column}` column")))?;
    let mut map = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(e.to_string()))?;
        let id = record.get(id_col).unwrap_or("").to_string();
        let value: f64 = record
            .get(val_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| {
                CliError::input(format!("non-numeric `{column}` at data row {}", i + 1))
            })?;
        map.insert(id, value);
    }
    Ok(map)
}

/// stratum_id,region_id rows (extra columns ignored).
fn load_sample_csv(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::input(e.to_string()))?;
        let stratum: usize = record
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::input("sample CSV: bad stratum_id"))?;
        let region = record
            .get(1)
            .ok_or_else(|| CliError::input("sample CSV: missing region_id"))?
            .to_string();
        rows.push((stratum, region));
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

fn stratum_samples(
    rows: &[(usize, String)],
    strat: &Stratification,
    values: &BTreeMap<String, f64>,
) -> Result<Vec<StratumSample>, CliError> {
    let weights: BTreeMap<usize, f64> =
        strat.strata.iter().map(|s| (s.id, s.weight)).collect();
    let mut grouped: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (stratum, region) in rows {
        let v = values
            .get(region)
            .copied()
            .ok_or_else(|| CliError::Input(format!("no value for region `{region}`")))?;
        grouped.entry(*stratum).or_default().push(v);
    }
    grouped
        .into_iter()
        .map(|(id, values)| {
            let weight = weights
                .get(&id)
                .copied()
                .ok_or_else(|| CliError::input(format!("sample references unknown stratum {id}")))?;
            Ok(StratumSample::new(id, weight, values))
        })
        .collect()
}

pub struct EstimateArgs<'a> {
    pub values: &'a Path,
    pub value_column: &'a str,
    pub method: MethodArg,
    pub sample: Option<&'a Path>,
    pub selection: Option<&'a Path>,
    pub stratification: Option<&'a Path>,
    pub level: f64,
    pub phase1_n: Option<usize>,
    pub phase1_s2: Option<f64>,
    pub pair_by: PairByArg,
    pub regions: Option<&'a Path>,
    pub both_criticals: bool,
    pub out: &'a Path,
}

pub fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let mut outdir = OutDir::create(args.out, "estimate")?;
    outdir.input(args.values)?;
    outdir.param("values", args.values.display());
    outdir.param("value_column", args.value_column);
    outdir.param("method", format!("{:?}", args.method));
    outdir.param("level", args.level);

    let values = load_values(args.values, args.value_column)?;

    let need_strat = || -> Result<(Stratification, &Path), CliError> {
        let dir = args.stratification.ok_or_else(|| {
            CliError::usage("this method requires --stratification <dir>")
        })?;
        let (strat, _) = Stratification::load_dir(dir)?;
        Ok((strat, dir))
    };
    let need_phase1_n = || -> Result<usize, CliError> {
        args.phase1_n
            .ok_or_else(|| CliError::usage("this method requires --phase1-n"))
    };

    let est = match args.method {
        MethodArg::Srs => {
            let sample: Vec<f64> = match args.sample {
                None => values.values().cloned().collect(),
                Some(path) => {
                    outdir.input(path)?;
                    load_sample_csv(path)?
                        .into_iter()
                        .map(|(_, region)| {
                            values.get(&region).copied().ok_or_else(|| {
                                CliError::Input(format!("no value for region `{region}`"))
                            })
                        })
                        .collect::<Result<_, _>>()?
                }
            };
            estimators::srs_estimate(&sample)?
        }
        MethodArg::Stratified | MethodArg::TwoPhase | MethodArg::TwoPhaseP2 => {
            let sample_path = args
                .sample
                .ok_or_else(|| CliError::usage("this method requires --sample <csv>"))?;
            outdir.input(sample_path)?;
            outdir.param("sample", sample_path.display());
            let (strat, dir) = need_strat()?;
            outdir.input_dir(dir, &STRAT_FILES)?;
            let samples = stratum_samples(&load_sample_csv(sample_path)?, &strat, &values)?;
            match args.method {
                MethodArg::Stratified => estimators::stratified_estimate(&samples)?,
                MethodArg::TwoPhase => {
                    let n = need_phase1_n()?;
                    let s2 = args.phase1_s2.ok_or_else(|| {
                        CliError::usage("method two-phase requires --phase1-s2")
                    })?;
                    outdir.param("phase1_n", n);
                    outdir.param("phase1_s2", s2);
                    estimators::two_phase_variance(s2, n, &samples)?
                }
                _ => {
                    let n = need_phase1_n()?;
                    outdir.param("phase1_n", n);
                    estimators::two_phase_variance_p2only(n, &samples)?
                }
            }
        }
        MethodArg::Collapsed => {
            let sel_path = args
                .selection
                .ok_or_else(|| CliError::usage("method collapsed requires --selection"))?;
            outdir.input(sel_path)?;
            outdir.param("selection", sel_path.display());
            let (strat, dir) = need_strat()?;
            outdir.input_dir(dir, &STRAT_FILES)?;
            let sel_text = std::fs::read_to_string(sel_path)?;
            let sel = RegionSelection::from_csv(&sel_text, strat.scheme, None)?;
            let samples: Vec<StratumSample> = sel
                .entries
                .iter()
                .map(|e| {
                    let v = values.get(&e.region_id).copied().ok_or_else(|| {
                        CliError::Input(format!("no value for region `{}`", e.region_id))
                    })?;
                    Ok(StratumSample::new(e.stratum_id, e.weight, vec![v]))
                })
                .collect::<Result<_, CliError>>()?;
            let order: BTreeMap<usize, f64> = match args.pair_by {
                PairByArg::Sampled => samples
                    .iter()
                    .map(|s| (s.stratum_id, s.values[0]))
                    .collect(),
                PairByArg::Mean => {
                    let regions_path = args.regions.ok_or_else(|| {
                        CliError::usage("--pair-by mean requires --regions for baseline CPI")
                    })?;
                    outdir.input(regions_path)?;
                    outdir.param("regions", regions_path.display());
                    let pop = load_population(regions_path)?;
                    strat.stratum_mean_cpi(&pop)
                }
            };
            outdir.param("pair_by", format!("{:?}", args.pair_by).to_lowercase());
            let pairing: CollapsedPairing = pair_strata(&strat, &order);
            estimators::collapsed_strata_estimate(&samples, &pairing)?
        }
    };

    let ci = estimators::confidence_interval(&est, args.level)?;
    let report = EstimateReport::new(&est, &ci);
    let mut doc = serde_json::to_value(&report)?;
    if args.both_criticals {
        let z = stats::critical_value(args.level, None);
        let obj = doc.as_object_mut().expect("report serializes to an object");
        obj.insert("margin_z".into(), json!(z * est.var_of_mean.sqrt()));
        if let Df::Finite(df) = est.df {
            let t = stats::critical_value(args.level, Some(df));
            obj.insert("margin_t".into(), json!(t * est.var_of_mean.sqrt()));
        }
    }
    outdir.write("estimate.json", serde_json::to_string_pretty(&doc)?.as_bytes())?;
    outdir.finish()?;
    println!(
        "estimate ({:?}): mean = {:.6} ± {:.6} at {:.0}% (relative {:.4}%)",
        est.method,
        est.mean,
        ci.margin,
        100.0 * args.level,
        100.0 * ci.relative_margin.unwrap_or(0.0)
    );
    Ok(())
}

pub fn plan(
    strat_dir: &Path,
    regions: &Path,
    growth: f64,
    level: f64,
    out: &Path,
) -> Result<(), CliError> {
    let mut outdir = OutDir::create(out, "plan")?;
    outdir.input(regions)?;
    outdir.input_dir(strat_dir, &STRAT_FILES)?;
    outdir.param("regions", regions.display());
    outdir.param("stratification", strat_dir.display());
    outdir.param("growth", growth);
    outdir.param("level", level);

    let pop = load_population(regions)?;
    let (strat, _) = Stratification::load_dir(strat_dir)?;
    let phase1 = Phase1Summary::from_population(&pop, &strat);
    let alloc = planner::allocate_phase2(&phase1, growth, level)?;

    let mut csv = String::from("stratum_id,n_h,capped\n");
    for a in &alloc.per_stratum {
        let _ = writeln!(csv, "{},{},{}", a.stratum_id, a.n_h, a.capped);
    }
    outdir.write("allocation.csv", csv.as_bytes())?;
    outdir.write(
        "allocation.json",
        serde_json::to_string_pretty(&alloc)?.as_bytes(),
    )?;
    outdir.finish()?;

    println!("plan: two-phase allocation at level {level}");
    println!(
        "  phase-1: n = {}, relative margin = {:.4}%",
        alloc.phase1_n,
        100.0 * alloc.phase1_rel_margin
    );
    println!(
        "  target margin (growth {:.2}): {:.4}%",
        growth,
        100.0 * alloc.target_rel_margin
    );
    println!(
        "  phase-2: total = {} across {} strata, predicted margin = {:.4}%",
        alloc.total,
        alloc.per_stratum.len(),
        100.0 * alloc.predicted_rel_margin
    );
    if !alloc.capped.is_empty() {
        println!("  capped strata: {:?}", alloc.capped);
    }
    Ok(())
}

pub struct ValidateArgs<'a> {
    pub spec: Option<&'a Path>,
    pub regions: Option<&'a Path>,
    pub design: &'a str,
    pub trials: usize,
    pub level: f64,
    pub seed: u64,
    pub threads: usize,
    pub bbv: Option<&'a Path>,
    pub dims: usize,
    pub out: &'a Path,
}

enum DesignSpec {
    Srs { n: usize },
    Stratified { scheme: SchemeArg, k: usize, n_h: usize },
    OneUnit { scheme: SchemeArg, k: usize },
}

fn parse_design(text: &str) -> Result<DesignSpec, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let scheme = |s: &str| -> Result<SchemeArg, CliError> {
        match s {
            "bbv" => Ok(SchemeArg::Bbv),
            "rfv" => Ok(SchemeArg::Rfv),
            "dg" => Ok(SchemeArg::Dg),
            other => Err(CliError::usage(format!("unknown scheme `{other}`"))),
        }
    };
    let num = |s: &str| -> Result<usize, CliError> {
        s.parse()
            .map_err(|_| CliError::usage(format!("bad number `{s}` in --design")))
    };
    match parts.as_slice() {
        ["srs", n] => Ok(DesignSpec::Srs { n: num(n)? }),
        ["stratified", s, k, n_h] => Ok(DesignSpec::Stratified {
            scheme: scheme(s)?,
            k: num(k)?,
            n_h: num(n_h)?,
        }),
        ["one-unit", s, k] => Ok(DesignSpec::OneUnit {
            scheme: scheme(s)?,
            k: num(k)?,
        }),
        _ => Err(CliError::usage(
            "--design must be srs:N, stratified:SCHEME:K:NH, or one-unit:SCHEME:K",
        )),
    }
}

pub fn validate(args: ValidateArgs) -> Result<(), CliError> {
    if args.trials < 100 {
        return Err(CliError::usage(format!(
            "--trials must be at least 100, got {}",
            args.trials
        )));
    }
    let mut outdir = OutDir::create(args.out, "validate")?;
    outdir.param("design", args.design);
    outdir.param("trials", args.trials);
    outdir.param("level", args.level);
    outdir.param("threads", args.threads);
    outdir.seed("seed", args.seed);

    // Build the population: synthetic spec or real regions.
    let (pop, bbvs) = match (args.spec, args.regions) {
        (Some(spec_path), None) => {
            outdir.input(spec_path)?;
            outdir.param("spec", spec_path.display());
            let text = std::fs::read_to_string(spec_path)?;
            let spec: SynthSpec = serde_json::from_str(&text)?;
            montecarlo::synth_population(&spec)?
        }
        (None, Some(regions_path)) => {
            outdir.input(regions_path)?;
            outdir.param("regions", regions_path.display());
            let pop = load_population(regions_path)?;
            let bbvs = match args.bbv {
                Some(p) => {
                    outdir.input(p)?;
                    let table = load_bbvs(p)?;
                    table.validate_against(&pop)?;
                    Some(table)
                }
                None => None,
            };
            (pop, bbvs)
        }
        _ => {
            return Err(CliError::usage(
                "validate needs exactly one of --spec or --regions",
            ))
        }
    };

    let strat_seed = args.seed ^ 0x5742; // substream for stratification
    let build_strat = |scheme: SchemeArg, k: usize| -> Result<Stratification, CliError> {
        match scheme {
            SchemeArg::Rfv => {
                let features = standardize_rfv(&pop, true)?;
                Ok(kmeans_stratify(&features, k, strat_seed, 100)?)
            }
            SchemeArg::Dg => {
                let (strat, _) = dalenius_gurney(&pop.cpi_map(), k, 0.05, 100)?;
                Ok(strat)
            }
            SchemeArg::Bbv => {
                let table = bbvs.as_ref().ok_or_else(|| {
                    CliError::usage("BBV designs need --bbv (or a spec with a bbv rule)")
                })?;
                let features = random_project(table, args.dims, strat_seed)?;
                Ok(kmeans_stratify(&features, k, strat_seed, 100)?)
            }
        }
    };

    let design = match parse_design(args.design)? {
        DesignSpec::Srs { n } => SamplingDesign::Srs { n },
        DesignSpec::Stratified { scheme, k, n_h } => {
            SamplingDesign::stratified_uniform(build_strat(scheme, k)?, n_h)
        }
        DesignSpec::OneUnit { scheme, k } => {
            let strat = build_strat(scheme, k)?;
            let pairing = pair_strata(&strat, &strat.stratum_mean_cpi(&pop));
            SamplingDesign::OneUnitCollapsed {
                stratification: strat,
                pairing,
            }
        }
    };

    let run = || montecarlo::coverage_experiment(&pop, &design, args.trials, args.level, args.seed);
    let result = if args.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build()
            .map_err(|e| CliError::internal(e.to_string()))?;
        pool.install(run)?
    } else {
        run()?
    };

    outdir.write("coverage.csv", result.to_csv().as_bytes())?;
    outdir.finish()?;
    println!(
        "validate: coverage {:.4} at level {}, p95 |relative error| {:.4}% ({} trials)",
        result.coverage,
        args.level,
        100.0 * result.p95_abs_rel_error,
        result.trials
    );
    Ok(())
}

pub fn report(
    regions: &Path,
    strat_dir: &Path,
    selection_path: &Path,
    bins: usize,
    min_count: u64,
    out: &Path,
) -> Result<(), CliError> {
    let mut outdir = OutDir::create(out, "report")?;
    outdir.input(regions)?;
    outdir.input_dir(strat_dir, &STRAT_FILES)?;
    outdir.input(selection_path)?;
    outdir.param("regions", regions.display());
    outdir.param("stratification", strat_dir.display());
    outdir.param("selection", selection_path.display());
    outdir.param("bins", bins);
    outdir.param("min_count", min_count);

    let pop = load_population(regions)?;
    let (strat, _) = Stratification::load_dir(strat_dir)?;
    let sel_text = std::fs::read_to_string(selection_path)?;
    let sel = RegionSelection::from_csv(&sel_text, strat.scheme, Some(&pop))?;

    // Baseline histogram colored by stratum membership.
    let values: Vec<(f64, usize)> = pop
        .regions()
        .iter()
        .map(|r| {
            let stratum = strat.assignment.get(&r.region_id).copied().ok_or_else(|| {
                CliError::input(format!(
                    "region `{}` missing from the stratification",
                    r.region_id
                ))
            })?;
            Ok((r.cpi, stratum))
        })
        .collect::<Result<_, CliError>>()?;
    let baseline = reporting::histogram_by_stratum(&values, bins)?;

    // Approximated distribution from the selection, on identical edges.
    let synthesized = reporting::approx_distribution(&sel, &pop.cpi_map(), pop.n())?;
    let approx = reporting::histogram_with_edges(&synthesized, baseline.edges.clone())?;
    let gaps = reporting::gap_report(&baseline, &approx, min_count)?;

    outdir.write("baseline_hist.csv", baseline.to_csv().as_bytes())?;
    outdir.write(
        "baseline_hist.svg",
        svg::histogram_svg(&baseline, "CPI distribution by stratum", "CPI", "regions").as_bytes(),
    )?;
    outdir.write("approx_hist.csv", approx.to_csv().as_bytes())?;
    outdir.write(
        "approx_hist.svg",
        svg::histogram_svg(&approx, "Approximated CPI distribution", "CPI", "regions").as_bytes(),
    )?;
    outdir.write("gaps.csv", gaps.to_csv().as_bytes())?;
    outdir.finish()?;

    println!(
        "report: {} bins, {} gap interval(s) with baseline count >= {}",
        bins,
        gaps.gaps.len(),
        min_count
    );
    for g in &gaps.gaps {
        println!(
            "  gap [{:.4}, {:.4}) containing {} baseline regions",
            g.lo, g.hi, g.baseline_count
        );
    }
    Ok(())
}
