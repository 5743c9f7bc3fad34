//! Stage orchestration and the on-disk report bundle.
//!
//! Each stage reads the input CSV plus whatever earlier stages left in the
//! output directory, so stages can be rerun one at a time. After every stage
//! `manifest.json` is rewritten with the SHA-256 of each bundle file.
//! Wall-clock timings go to `timings.json`, which is not digested, so two
//! runs of the same config produce byte-identical digested files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{agglomerate, cut, ClusterAssignment, Dendrogram, LinkageMethod, Merge};
use crate::config::RunConfig;
use crate::confirm::{build_null_ensemble, confirm, ksperm, ConfirmResult};
use crate::dataset::{load_csv, AnalysisFrame};
use crate::embed::{pairwise_distances, principal_coordinates};
use crate::error::{LcError, Result};
use crate::explore::{compare_k, size_histogram, ExploreOptions, ExploreSummary};
use crate::forest::{
    fit_forest, oob_importance, partial_dependence, FeatureMatrix, ForestOptions, ImportanceReport,
};
use crate::lrc::{lrc_distribution, spearman, LrcDistribution};
use crate::mob::{fit_mob, mob_table, MobData, MobTree};

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const DENDROGRAM_CSV: &str = "dendrogram.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const LRC_UNITS_CSV: &str = "lrc_units.csv";
pub const LRC_CLUSTERS_CSV: &str = "lrc_clusters.csv";
pub const CONFIRM_JSON: &str = "confirm.json";
pub const NULL_D_CSV: &str = "null_d.csv";
pub const ECDF_CSV: &str = "ecdf.csv";
pub const EXPLORE_CSV: &str = "explore.csv";
pub const EXPLORE_JSON: &str = "explore.json";
pub const SIZE_HISTOGRAM_CSV: &str = "size_histogram.csv";
pub const IMPORTANCE_CSV: &str = "importance.csv";
pub const REVEAL_JSON: &str = "reveal.json";
pub const MOB_TABLE_CSV: &str = "mob_table.csv";
pub const MOB_TREE_JSON: &str = "mob_tree.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Aggregate,
    Confirm,
    Explore,
    Reveal,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Aggregate, Stage::Confirm, Stage::Explore, Stage::Reveal];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Aggregate => "aggregate",
            Stage::Confirm => "confirm",
            Stage::Explore => "explore",
            Stage::Reveal => "reveal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub confirm: u64,
    pub explore: u64,
    pub forest: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// False when any recorded stage failed or was skipped.
    pub complete: bool,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub seeds: Seeds,
    pub config: RunConfig,
    pub files: Vec<FileDigest>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Manifest> {
        read_json(&dir.as_ref().join(MANIFEST))
    }
}

// ---------------------------------------------------------------- writing

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| LcError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_bytes(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| LcError::io(path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| LcError::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

fn report_err(path: &Path, reason: impl Into<String>) -> LcError {
    LcError::Report {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_csv_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => report_err(path, format!("{e}; run the earlier stage first")),
        _ => LcError::Csv(e),
    })?;
    let got: Vec<&str> = r.headers()?.iter().collect();
    if got != header {
        return Err(report_err(path, format!("expected header {header:?}, got {got:?}")));
    }
    Ok(r.records().collect::<std::result::Result<Vec<_>, _>>()?)
}

fn parse_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| report_err(path, format!("bad field {i} in {:?}", rec)))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn pdp_file_name(variable: &str) -> String {
    format!("pdp_{}.csv", sanitize(variable))
}

// ---------------------------------------------------------------- re-entry

/// Reads `clusters.csv` and aligns it with the frame's unit order.
pub fn read_assignment(dir: &Path, frame: &AnalysisFrame) -> Result<ClusterAssignment> {
    let path = dir.join(CLUSTERS_CSV);
    let rows = read_csv_rows(&path, &["id", "cluster"])?;
    let ids = frame.ids();
    if rows.len() != ids.len() {
        return Err(report_err(
            &path,
            format!("{} rows but the input has {} units", rows.len(), ids.len()),
        ));
    }
    let mut labels = Vec::with_capacity(rows.len());
    for (rec, &id) in rows.iter().zip(&ids) {
        let got: u64 = parse_field(&path, rec, 0)?;
        if got != id {
            return Err(report_err(&path, format!("unit {got} where {id} was expected")));
        }
        labels.push(parse_field(&path, rec, 1)?);
    }
    ClusterAssignment::from_labels(labels)
}

pub fn read_dendrogram(dir: &Path) -> Result<Dendrogram> {
    let agg: AggregateReport = read_json(&dir.join(AGGREGATE_JSON))?;
    let path = dir.join(DENDROGRAM_CSV);
    let rows = read_csv_rows(&path, &["step", "left", "right", "height", "size"])?;
    let merges = rows
        .iter()
        .map(|rec| {
            Ok(Merge {
                left: parse_field(&path, rec, 1)?,
                right: parse_field(&path, rec, 2)?,
                height: parse_field(&path, rec, 3)?,
                size: parse_field(&path, rec, 4)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dendrogram::new(agg.n_units, agg.method, merges)
}

/// Reads `lrc_units.csv`; `None` marks units of clusters whose LRC is
/// undefined.
pub fn read_unit_lrc(dir: &Path, frame: &AnalysisFrame) -> Result<Vec<Option<f64>>> {
    let path = dir.join(LRC_UNITS_CSV);
    let rows = read_csv_rows(&path, &["id", "cluster", "lrc"])?;
    let ids = frame.ids();
    if rows.len() != ids.len() {
        return Err(report_err(&path, "row count does not match the input"));
    }
    rows.iter()
        .zip(&ids)
        .map(|(rec, &id)| {
            let got: u64 = parse_field(&path, rec, 0)?;
            if got != id {
                return Err(report_err(&path, format!("unit {got} where {id} was expected")));
            }
            match rec.get(2) {
                Some("NA") => Ok(None),
                _ => Ok(Some(parse_field(&path, rec, 2)?)),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- stages

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub method: LinkageMethod,
    pub n_units: usize,
    pub n_dropped: usize,
    pub warnings: Vec<String>,
    pub confounders: Vec<String>,
    pub eigenvalues: Vec<f64>,
    pub retained_dimensions: usize,
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    /// Heights of the last (up to 20) merges, highest first.
    pub top_heights: Vec<f64>,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmReport {
    pub k: usize,
    pub n_units: usize,
    pub exposure: String,
    pub outcome: String,
    pub global_lrc: Option<f64>,
    pub n_undefined_clusters: usize,
    pub negative_clusters: usize,
    pub fraction_negative_units: f64,
    pub lrc_min: f64,
    pub lrc_max: f64,
    pub d_observed: f64,
    pub d_location: f64,
    /// Exact KS gap as numerator/denominator of eCDF counts.
    pub d_fraction: (u128, u128),
    pub p_value: f64,
    pub replicates: usize,
    pub permutations: usize,
    pub seed: u64,
    pub max_null_d: f64,
    /// Null D sample binned at width 0.01.
    pub null_d_histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealReport {
    pub n_units: usize,
    pub response: String,
    pub features: Vec<String>,
    pub degenerate_response: bool,
    pub trees: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub oob_mse: f64,
    pub response_variance: f64,
    pub importance: ImportanceReport,
    pub mob: Option<MobSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mob_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobSummary {
    pub regressor: String,
    pub partition_variable: String,
    pub leaves: usize,
    pub min_size: usize,
    pub max_depth: usize,
    pub min_gain: f64,
    /// Splits come from an exhaustive least-squares gain search, not from
    /// parameter-instability tests.
    pub split_rule: String,
}

fn load_frame(cfg: &RunConfig) -> Result<AnalysisFrame> {
    let frame = load_csv(&cfg.input, &cfg.schema)?;
    for w in frame.warnings() {
        log::warn!("{w}");
    }
    Ok(frame)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LcError::io(dir, e))
}

type Timings = BTreeMap<String, f64>;

fn aggregate_stage(cfg: &RunConfig, timings: &mut Timings) -> Result<AggregateReport> {
    let dir = &cfg.output_dir;
    let frame = load_frame(cfg)?;
    let confounders = frame.schema().confounders();
    let t = Instant::now();
    let emb = principal_coordinates(&frame, &confounders, cfg.embed_tolerance)?;
    let dist = pairwise_distances(&emb)?;
    let tree = agglomerate(&dist, cfg.method)?;
    timings.insert("aggregate_cluster_seconds".into(), t.elapsed().as_secs_f64());
    let assignment = cut(&tree, cfg.k)?;

    let ids = frame.ids();
    write_csv(
        &dir.join(CLUSTERS_CSV),
        &["id", "cluster"],
        ids.iter()
            .zip(assignment.labels())
            .map(|(id, l)| vec![id.to_string(), l.to_string()]),
    )?;
    write_csv(
        &dir.join(DENDROGRAM_CSV),
        &["step", "left", "right", "height", "size"],
        tree.merges().iter().enumerate().map(|(s, m)| {
            vec![
                (s + 1).to_string(),
                m.left.to_string(),
                m.right.to_string(),
                num(m.height),
                m.size.to_string(),
            ]
        }),
    )?;
    let report = AggregateReport {
        method: cfg.method,
        n_units: frame.len(),
        n_dropped: frame.n_dropped(),
        warnings: frame.warnings().to_vec(),
        confounders: confounders.iter().map(|s| s.to_string()).collect(),
        eigenvalues: emb.eigenvalues.clone(),
        retained_dimensions: emb.retained(),
        k: assignment.k(),
        cluster_sizes: assignment.sizes().to_vec(),
        top_heights: tree.merges().iter().rev().take(20).map(|m| m.height).collect(),
        monotone: tree.is_monotone(),
    };
    write_json(&dir.join(AGGREGATE_JSON), &report)?;
    Ok(report)
}

fn bin_null(sample: &[f64]) -> Vec<HistogramBin> {
    const WIDTH: f64 = 0.01;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &d in sample {
        *counts.entry((d / WIDTH).floor() as i64).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(b, count)| HistogramBin {
            lo: b as f64 * WIDTH,
            hi: (b + 1) as f64 * WIDTH,
            count,
        })
        .collect()
}

fn write_lrc_files(dir: &Path, frame: &AnalysisFrame, a: &ClusterAssignment, dist: &LrcDistribution) -> Result<()> {
    write_csv(
        &dir.join(LRC_CLUSTERS_CSV),
        &["cluster", "size", "lrc"],
        dist.per_cluster
            .iter()
            .map(|c| vec![c.cluster_id.to_string(), c.size.to_string(), opt_num(c.lrc)]),
    )?;
    write_csv(
        &dir.join(LRC_UNITS_CSV),
        &["id", "cluster", "lrc"],
        frame
            .ids()
            .iter()
            .zip(a.labels())
            .zip(&dist.unit_lrc)
            .map(|((id, l), v)| vec![id.to_string(), l.to_string(), opt_num(*v)]),
    )
}

fn confirm_stage(cfg: &RunConfig, timings: &mut Timings) -> Result<ConfirmReport> {
    let dir = &cfg.output_dir;
    let frame = load_frame(cfg)?;
    let a = read_assignment(dir, &frame)?;
    let (exp, out) = (frame.schema().exposure().to_string(), frame.schema().outcome().to_string());
    let dist = lrc_distribution(&frame, &a, &exp, &out)?;
    write_lrc_files(dir, &frame, &a, &dist)?;

    let c = &cfg.confirm;
    let t = Instant::now();
    let null = build_null_ensemble(&frame, a.sizes(), &exp, &out, c.replicates, c.seed)?;
    let d = confirm(&dist, &null)?;
    timings.insert("confirm_seconds".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let result: ConfirmResult = ksperm(&frame, a.sizes(), &exp, &out, &null, &d, c.permutations, c.seed)?;
    timings.insert("ksperm_seconds".into(), t.elapsed().as_secs_f64());

    write_csv(
        &dir.join(NULL_D_CSV),
        &["replicate", "d"],
        result
            .null_d_sample
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), num(*v)]),
    )?;
    let obs = dist.ecdf()?;
    let rows = obs
        .support()
        .iter()
        .zip(obs.probabilities())
        .map(|(v, p)| vec!["observed".to_string(), num(*v), num(p)])
        .chain(
            null.ecdf()
                .support()
                .iter()
                .zip(null.ecdf().probabilities())
                .map(|(v, p)| vec!["null".to_string(), num(*v), num(p)]),
        );
    write_csv(&dir.join(ECDF_CSV), &["source", "value", "cumulative"], rows)?;

    let global = spearman(&frame.column(&exp)?, &frame.column(&out)?)?;
    let (lo, hi) = dist
        .per_unit
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let report = ConfirmReport {
        k: a.k(),
        n_units: frame.len(),
        exposure: exp,
        outcome: out,
        global_lrc: global,
        n_undefined_clusters: dist.n_undefined,
        negative_clusters: dist.negative_clusters(),
        fraction_negative_units: dist.negative_units() as f64 / dist.per_unit.len() as f64,
        lrc_min: lo,
        lrc_max: hi,
        d_observed: result.d_observed,
        d_location: result.d_location,
        d_fraction: d.as_fraction(),
        p_value: result.p_value,
        replicates: result.r_used,
        permutations: result.b_used,
        seed: result.seed,
        max_null_d: result.max_null_d(),
        null_d_histogram: bin_null(&result.null_d_sample),
    };
    write_json(&dir.join(CONFIRM_JSON), &report)?;
    Ok(report)
}

fn explore_stage(cfg: &RunConfig, timings: &mut Timings) -> Result<ExploreSummary> {
    let dir = &cfg.output_dir;
    let frame = load_frame(cfg)?;
    let tree = read_dendrogram(dir)?;
    if tree.leaf_count() != frame.len() {
        return Err(report_err(&dir.join(DENDROGRAM_CSV), "leaf count does not match the input"));
    }
    let e = &cfg.explore;
    let opts = ExploreOptions {
        replicates: e.replicates,
        permutations: e.permutations,
        seed: e.seed,
        advisory_factor: e.advisory_factor,
    };
    let (exp, out) = (frame.schema().exposure(), frame.schema().outcome());
    let t = Instant::now();
    let summary = compare_k(&frame, &tree, &cfg.k_grid, exp, out, &opts)?;
    timings.insert("explore_seconds".into(), t.elapsed().as_secs_f64());

    write_csv(
        &dir.join(EXPLORE_CSV),
        &[
            "k", "min", "q1", "median", "q3", "max", "iqr", "fraction_negative",
            "negative_clusters", "n_undefined", "d_observed", "d_location", "p_value",
        ],
        summary.rows.iter().map(|r| {
            vec![
                r.k.to_string(),
                num(r.min),
                num(r.q1),
                num(r.median),
                num(r.q3),
                num(r.max),
                num(r.iqr()),
                num(r.fraction_negative),
                r.negative_clusters.to_string(),
                r.n_undefined.to_string(),
                num(r.d_observed),
                num(r.d_location),
                opt_num(r.p_value),
            ]
        }),
    )?;
    write_json(&dir.join(EXPLORE_JSON), &summary)?;

    let a = read_assignment(dir, &frame)?;
    let bins = size_histogram(&a, e.size_bin_width)?;
    write_csv(
        &dir.join(SIZE_HISTOGRAM_CSV),
        &["lo", "hi", "count"],
        bins.iter()
            .map(|b| vec![b.lo.to_string(), b.hi.to_string(), b.count.to_string()]),
    )?;
    Ok(summary)
}

fn reveal_stage(cfg: &RunConfig, timings: &mut Timings) -> Result<RevealReport> {
    let dir = &cfg.output_dir;
    let full = load_frame(cfg)?;
    let unit_lrc = read_unit_lrc(dir, &full)?;
    let rows: Vec<usize> = (0..full.len()).filter(|&i| unit_lrc[i].is_some()).collect();
    let frame = full.subset(&rows)?;
    let response: Vec<f64> = rows.iter().map(|&i| unit_lrc[i].expect("filtered")).collect();

    let features = cfg.forest_features();
    let names: Vec<&str> = features.iter().map(String::as_str).collect();
    let x = FeatureMatrix::from_frame(&frame, &names)?;
    let f = &cfg.forest;
    let opts = ForestOptions {
        trees: f.trees,
        mtry: f.mtry,
        min_leaf: f.min_leaf,
        seed: f.seed,
    };
    let t = Instant::now();
    let forest = fit_forest(&x, &response, &opts)?;
    let importance = oob_importance(&forest, &x, &response)?;
    timings.insert("forest_seconds".into(), t.elapsed().as_secs_f64());
    write_csv(
        &dir.join(IMPORTANCE_CSV),
        &["rank", "variable", "pct_inc_mse", "raw_inc_mse", "inc_node_purity"],
        importance.variables.iter().enumerate().map(|(i, v)| {
            vec![
                (i + 1).to_string(),
                v.variable.clone(),
                num(v.pct_inc_mse),
                num(v.raw_inc_mse),
                num(v.inc_node_purity),
            ]
        }),
    )?;
    let t = Instant::now();
    for name in &features {
        let pd = partial_dependence(&forest, &x, name, f.pdp_grid_size)?;
        write_csv(
            &dir.join(pdp_file_name(name)),
            &[name.as_str(), "prediction"],
            pd.grid.iter().zip(&pd.values).map(|(g, v)| vec![num(*g), num(*v)]),
        )?;
    }
    timings.insert("pdp_seconds".into(), t.elapsed().as_secs_f64());

    let m = &cfg.mob;
    let mob_result = (|| -> Result<MobTree> {
        let reg = frame.column(&m.regressor)?;
        let part = frame.column(&m.partition_variable)?;
        fit_mob(
            MobData {
                response_name: "LRC",
                regressor_name: &m.regressor,
                partition_name: &m.partition_variable,
                response: &response,
                regressor: &reg,
                partition: &part,
            },
            &m.options(),
        )
    })();
    let (mob, mob_error) = match mob_result {
        Ok(tree) => {
            let table = mob_table(&tree);
            write_csv(
                &dir.join(MOB_TABLE_CSV),
                &["node", "range", "n", "intercept", "slope", "lo", "hi"],
                table.iter().map(|r| {
                    vec![
                        r.node.to_string(),
                        r.range.clone(),
                        r.n.to_string(),
                        num(r.intercept),
                        num(r.slope),
                        num(r.lo),
                        num(r.hi),
                    ]
                }),
            )?;
            write_json(&dir.join(MOB_TREE_JSON), &tree)?;
            let summary = MobSummary {
                regressor: m.regressor.clone(),
                partition_variable: m.partition_variable.clone(),
                leaves: table.len(),
                min_size: m.min_size,
                max_depth: m.max_depth,
                min_gain: m.min_gain,
                split_rule: "exhaustive least-squares gain search".into(),
            };
            (Some(summary), None)
        }
        Err(e) => {
            log::warn!("partitioning tree not fitted: {e}");
            (None, Some(e.to_string()))
        }
    };

    let n = response.len() as f64;
    let mean = response.iter().sum::<f64>() / n;
    let report = RevealReport {
        n_units: response.len(),
        response: "LRC".into(),
        features,
        degenerate_response: forest.degenerate_response,
        trees: forest.trees.len(),
        mtry: forest.mtry,
        min_leaf: forest.min_leaf,
        seed: forest.seed,
        oob_mse: forest.oob_mse(&x, &response),
        response_variance: response.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n,
        importance,
        mob,
        mob_error,
    };
    write_json(&dir.join(REVEAL_JSON), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- manifest

fn digest_files(dir: &Path) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| LcError::io(dir, e))? {
        let entry = entry.map_err(|e| LcError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        if !path.is_file() || name == MANIFEST || name == TIMINGS {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| LcError::io(&path, e))?;
        out.push(FileDigest {
            path: name,
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn update_manifest(cfg: &RunConfig, results: &[(Stage, StageRecord)]) -> Result<Manifest> {
    let dir = &cfg.output_dir;
    let mut stages = Manifest::load(dir).map(|m| m.stages).unwrap_or_default();
    for (s, r) in results {
        stages.insert(*s, r.clone());
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        complete: stages.values().all(|r| r.status == StageStatus::Ok),
        stages,
        seeds: Seeds {
            confirm: cfg.confirm.seed,
            explore: cfg.explore.seed,
            forest: cfg.forest.seed,
        },
        config: cfg.clone(),
        files: digest_files(dir)?,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn update_timings(cfg: &RunConfig, new: Timings) -> Result<()> {
    let path = cfg.output_dir.join(TIMINGS);
    let mut all: Timings = read_json(&path).unwrap_or_default();
    all.extend(new);
    all.insert(
        "threads".into(),
        cfg.threads.unwrap_or_else(rayon::current_num_threads) as f64,
    );
    write_json(&path, &all)
}

/// Everything produced by a run; absent fields belong to stages not run.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub aggregate: Option<AggregateReport>,
    pub confirm: Option<ConfirmReport>,
    pub explore: Option<ExploreSummary>,
    pub reveal: Option<RevealReport>,
    pub manifest: Option<Manifest>,
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| LcError::Parameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs `stages` in order, stopping at the first failure. Later stages are
/// recorded as skipped and the manifest is marked incomplete.
pub fn run_stages(cfg: &RunConfig, stages: &[Stage]) -> Result<RunOutcome> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    let mut outcome = RunOutcome::default();
    let mut records = Vec::new();
    let mut timings = Timings::new();
    let mut failure: Option<LcError> = None;

    for &stage in stages {
        if failure.is_some() {
            records.push((stage, StageRecord { status: StageStatus::Skipped, error: None }));
            continue;
        }
        let start = Instant::now();
        let res: Result<()> = in_pool(cfg.threads, || -> Result<()> {
            match stage {
                Stage::Aggregate => outcome.aggregate = Some(aggregate_stage(cfg, &mut timings)?),
                Stage::Confirm => outcome.confirm = Some(confirm_stage(cfg, &mut timings)?),
                Stage::Explore => outcome.explore = Some(explore_stage(cfg, &mut timings)?),
                Stage::Reveal => outcome.reveal = Some(reveal_stage(cfg, &mut timings)?),
            }
            Ok(())
        })
        .and_then(|r| r);
        timings.insert(format!("{}_total_seconds", stage.name()), start.elapsed().as_secs_f64());
        match res {
            Ok(()) => {
                log::info!("{} finished in {:.2?}", stage.name(), start.elapsed());
                records.push((stage, StageRecord { status: StageStatus::Ok, error: None }));
            }
            Err(e) => {
                log::error!("{} failed: {e}", stage.name());
                records.push((
                    stage,
                    StageRecord {
                        status: StageStatus::Failed,
                        error: Some(e.to_string()),
                    },
                ));
                failure = Some(e);
            }
        }
    }

    let manifest = update_manifest(cfg, &records)?;
    update_timings(cfg, timings)?;
    outcome.manifest = Some(manifest);
    match failure {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

pub fn run_aggregate(cfg: &RunConfig) -> Result<AggregateReport> {
    Ok(run_stages(cfg, &[Stage::Aggregate])?.aggregate.expect("stage ran"))
}

pub fn run_confirm(cfg: &RunConfig) -> Result<ConfirmReport> {
    Ok(run_stages(cfg, &[Stage::Confirm])?.confirm.expect("stage ran"))
}

pub fn run_explore(cfg: &RunConfig) -> Result<ExploreSummary> {
    Ok(run_stages(cfg, &[Stage::Explore])?.explore.expect("stage ran"))
}

pub fn run_reveal(cfg: &RunConfig) -> Result<RevealReport> {
    Ok(run_stages(cfg, &[Stage::Reveal])?.reveal.expect("stage ran"))
}

pub fn run_all(cfg: &RunConfig) -> Result<RunOutcome> {
    run_stages(cfg, &Stage::ALL)
}

/// Output directory helper for callers that only know the config.
pub fn bundle_path(cfg: &RunConfig, file: &str) -> PathBuf {
    cfg.output_dir.join(file)
}
