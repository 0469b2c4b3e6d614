//! Run configuration and the drivers behind the command line tool.
//!
//! A run is described by a flat JSON object whose keys are the
//! [`TrainConfig`] fields plus `task`, `dataset`, `dataset_name`,
//! `train_frac` and `out`. Command line flags are merged into the same
//! object before it is parsed, so a flag always beats the file and the file
//! beats the defaults.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::checkpoint;
use crate::graph::{
    load_graph, load_linqs, load_manifest, regression_dataset, sentiment_fixture, synthetic_graph, SbmParams,
    SplitSpec, SyntheticSpec,
};
use crate::layers::{ModelParams, VariantKind};
use crate::tasks::TaskKind;
use crate::topm::{benchmark_scaling, ScalingReport};
use crate::train::{embed_all, fit, predict, Dataset, FitResult, SplitName, StopReason, TaskData, TrainConfig};
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const EMBEDDING_FILE: &str = "embeddings.tsv";
pub const SPLIT_FILE: &str = "split.json";

/// Where the graph data comes from. Relative paths resolve against the
/// directory of the config file that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// Edge list, feature CSV and optional label file.
    Edgelist {
        edges: PathBuf,
        features: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        directed: bool,
    },
    /// A directory holding `<name>.content` and `<name>.cites`.
    Linqs {
        dir: PathBuf,
        #[serde(default)]
        name: Option<String>,
    },
    /// Graph collection manifest for graph regression.
    Manifest { path: PathBuf },
    Sbm {
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        params: SbmParams,
    },
    Regression {
        count: usize,
        min_nodes: usize,
        max_nodes: usize,
        min_p: f64,
        max_p: f64,
        degree_slots: usize,
        #[serde(default)]
        seed: u64,
    },
    Sentiment {
        n: usize,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSource {
    fn resolve(mut self, base: &Path) -> Self {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self {
            DatasetSource::Edgelist { edges, features, labels, .. } => {
                join(edges);
                join(features);
                if let Some(l) = labels {
                    join(l);
                }
            }
            DatasetSource::Linqs { dir, .. } => join(dir),
            DatasetSource::Manifest { path } => join(path),
            _ => {}
        }
        self
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Edgelist { edges, features, labels, .. } => {
                let mut v = vec![edges.as_path(), features.as_path()];
                v.extend(labels.as_deref());
                v
            }
            DatasetSource::Linqs { dir, .. } => vec![dir],
            DatasetSource::Manifest { path } => vec![path],
            _ => Vec::new(),
        }
    }

    fn default_name(&self) -> String {
        let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned());
        let named = match self {
            DatasetSource::Edgelist { edges, .. } => stem(edges),
            DatasetSource::Linqs { dir, name } => name.clone().or_else(|| stem(dir)),
            DatasetSource::Manifest { path } => stem(path),
            DatasetSource::Sbm { .. } => Some("sbm".into()),
            DatasetSource::Regression { .. } => Some("regression".into()),
            DatasetSource::Sentiment { .. } => Some("sentiment".into()),
        };
        named.unwrap_or_else(|| "dataset".into())
    }
}

/// Everything one command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub dataset: DatasetSource,
    /// Label used in result files.
    pub dataset_name: String,
    pub train_frac: f64,
    /// Output directory; commands write only below it.
    pub out: PathBuf,
    pub train: TrainConfig,
}

const RUN_KEYS: [&str; 5] = ["task", "dataset", "dataset_name", "train_frac", "out"];

fn config_err(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

/// Reads a JSON config file into a key map.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        }),
    }
}

impl RunConfig {
    /// Builds a config from merged keys. `base` resolves relative dataset
    /// paths.
    pub fn from_map(mut map: Map<String, Value>, base: &Path) -> Result<Self> {
        let take = |map: &mut Map<String, Value>, k: &str| map.remove(k);
        let task = match take(&mut map, "task") {
            Some(Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::Config(format!("task must be a string, got {v}"))),
            None => TaskKind::Node,
        };
        let dataset: DatasetSource = serde_json::from_value(
            take(&mut map, "dataset").ok_or_else(|| Error::Config("no dataset given".into()))?,
        )
        .map_err(|e| Error::Config(format!("dataset: {e}")))?;
        let dataset = dataset.resolve(base);
        let dataset_name = match take(&mut map, "dataset_name") {
            Some(v) => serde_json::from_value(v).map_err(config_err)?,
            None => dataset.default_name(),
        };
        let train_frac = match take(&mut map, "train_frac") {
            Some(v) => serde_json::from_value(v).map_err(config_err)?,
            None => 0.5,
        };
        let out = match take(&mut map, "out") {
            Some(v) => serde_json::from_value(v).map_err(config_err)?,
            None => PathBuf::from("out"),
        };
        if let Some(Value::String(s)) = map.get("variant") {
            let v: VariantKind = s.parse()?;
            map.insert("variant".into(), Value::String(v.name().into()));
        }
        if !map.contains_key("fanouts") {
            if let Some(layers) = map.get("layers").and_then(Value::as_u64) {
                let f: Vec<u64> = (0..layers).map(|i| if i == 0 { 20 } else { 10 }).collect();
                map.insert("fanouts".into(), f.into());
            }
        }
        let train: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(|e| {
            let known = RUN_KEYS.join(", ");
            Error::Config(format!("{e} (run-level keys: {known})"))
        })?;
        Ok(RunConfig {
            task,
            dataset,
            dataset_name,
            train_frac,
            out,
            train,
        })
    }

    /// Checks values and paths, and creates the output directory.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        if let Some(p) = self.dataset.paths().into_iter().find(|p| !p.exists()) {
            return Err(Error::Config(format!("dataset path {} does not exist", p.display())));
        }
        fs::create_dir_all(&self.out)
            .map_err(|e| Error::Config(format!("output directory {}: {e}", self.out.display())))
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn find_linqs(dir: &Path, name: Option<&str>) -> Result<(PathBuf, PathBuf)> {
    let stem = match name {
        Some(n) => n.to_string(),
        None => {
            let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
            let mut stems: Vec<String> = entries
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "content"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            stems.sort();
            match stems.len() {
                1 => stems.remove(0),
                0 => return Err(Error::Config(format!("no .content file in {}", dir.display()))),
                _ => {
                    return Err(Error::Config(format!(
                        "several .content files in {}; set dataset.name",
                        dir.display()
                    )))
                }
            }
        }
    };
    let content = dir.join(format!("{stem}.content"));
    let cites = dir.join(format!("{stem}.cites"));
    for p in [&content, &cites] {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
    }
    Ok((content, cites))
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    Ok(match source {
        DatasetSource::Edgelist { edges, features, labels, directed } => {
            Dataset::Graph(load_graph(edges, features, labels.as_deref(), *directed)?)
        }
        DatasetSource::Linqs { dir, name } => {
            let (content, cites) = find_linqs(dir, name.as_deref())?;
            Dataset::Graph(load_linqs(&content, &cites)?)
        }
        DatasetSource::Manifest { path } => Dataset::Graphs(load_manifest(path)?),
        DatasetSource::Sbm { n, seed, params } => {
            Dataset::Graph(synthetic_graph(SyntheticSpec::Sbm(*params), *n, *seed)?)
        }
        DatasetSource::Regression { count, min_nodes, max_nodes, min_p, max_p, degree_slots, seed } => {
            Dataset::Graphs(regression_dataset(
                *count,
                *min_nodes..=*max_nodes,
                *min_p..=*max_p,
                *degree_slots,
                *seed,
            )?)
        }
        DatasetSource::Sentiment { n, p_in, p_out, feature_dim, seed } => {
            Dataset::Graph(sentiment_fixture(*n, *p_in, *p_out, *feature_dim, *seed)?)
        }
    })
}

/// Loads the dataset and applies the split for `cfg`.
pub fn prepare(cfg: &RunConfig) -> Result<TaskData> {
    let dataset = load_dataset(&cfg.dataset)?;
    let split = dataset.make_split(cfg.task, cfg.train_frac, cfg.train.seed)?;
    TaskData::prepare(&dataset, cfg.task, &split, cfg.train.val_frac, cfg.train.seed)
}

/// One row of a results file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub task: TaskKind,
    pub dataset: String,
    pub variant: VariantKind,
    pub train_frac: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// A results row tagged with the window size it was produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub row: MetricRow,
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    m: usize,
    task: TaskKind,
    dataset: &'a str,
    variant: VariantKind,
    train_frac: f64,
    seed: u64,
    metric: &'a str,
    value: f64,
}

impl SweepRow {
    fn record(&self) -> SweepRecord<'_> {
        let r = &self.row;
        SweepRecord {
            m: self.m,
            task: r.task,
            dataset: &r.dataset,
            variant: r.variant,
            train_frac: r.train_frac,
            seed: r.seed,
            metric: &r.metric,
            value: r.value,
        }
    }
}

fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("writing {}", path.display()), io),
        other => Error::State(format!("{}: {other:?}", path.display())),
    }
}

/// Test-split metrics of `params`.
pub fn evaluate(params: &ModelParams, data: &TaskData, cfg: &RunConfig) -> Result<Vec<MetricRow>> {
    if data.test.is_empty() {
        return Err(Error::Input("the test split is empty".into()));
    }
    let preds = predict(params, data, SplitName::Test, &cfg.train)?;
    cfg.task
        .report_metrics()
        .iter()
        .map(|&m| {
            Ok(MetricRow {
                task: cfg.task,
                dataset: cfg.dataset_name.clone(),
                variant: cfg.train.variant,
                train_frac: cfg.train_frac,
                seed: cfg.train.seed,
                metric: m.name().into(),
                value: preds.metric(m)?,
            })
        })
        .collect()
}

fn aborted(fit: &FitResult) -> Result<()> {
    match &fit.stop {
        StopReason::Aborted(msg) => Err(Error::Aborted(format!(
            "{msg} (best parameters from epoch {} kept)",
            fit.best_epoch
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub fit: FitResult,
    pub rows: Vec<MetricRow>,
}

/// Trains, then writes the checkpoint, the loss log and the test metrics.
/// An aborted run still leaves its checkpoint and loss log behind.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    if data.test.is_empty() {
        return Err(Error::Input("the test split is empty".into()));
    }
    let result = fit(&data, &cfg.train)?;
    checkpoint::save(&result.params, &cfg.out_file(CHECKPOINT_FILE))?;
    write_csv(&cfg.out_file(LOSS_FILE), &result.reports)?;
    aborted(&result)?;
    let rows = evaluate(&result.params, &data, cfg)?;
    append_csv(&cfg.out_file(RESULTS_FILE), &rows)?;
    Ok(TrainOutcome { fit: result, rows })
}

fn load_matching(path: &Path, data: &TaskData, cfg: &RunConfig) -> Result<ModelParams> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let params = checkpoint::load(path)?;
    checkpoint::check_compatible(&params, &cfg.train.model_config(data))?;
    Ok(params)
}

/// Test metrics of a saved model, appended to the results file.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let params = load_matching(checkpoint, &data, cfg)?;
    let rows = evaluate(&params, &data, cfg)?;
    append_csv(&cfg.out_file(RESULTS_FILE), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    M(Vec<usize>),
    TrainFrac(Vec<f64>),
}

impl Sweep {
    fn len(&self) -> usize {
        match self {
            Sweep::M(v) => v.len(),
            Sweep::TrainFrac(v) => v.len(),
        }
    }
}

/// One train and test evaluation per grid point with everything else,
/// seeds included, held fixed. Each point contributes the task's first
/// report metric to the sweep file.
pub fn run_sweep(cfg: &RunConfig, sweep: &Sweep) -> Result<Vec<SweepRow>> {
    if sweep.len() == 0 {
        return Err(Error::Config("empty sweep list".into()));
    }
    cfg.validate()?;
    let points: Vec<RunConfig> = match sweep {
        Sweep::M(ms) => ms
            .iter()
            .map(|&m| {
                let mut c = cfg.clone();
                c.train.m = m;
                c
            })
            .collect(),
        Sweep::TrainFrac(fs) => fs
            .iter()
            .map(|&f| {
                let mut c = cfg.clone();
                c.train_frac = f;
                c
            })
            .collect(),
    };
    for p in &points {
        p.validate()?;
    }
    let shared = match sweep {
        Sweep::M(_) => Some(prepare(cfg)?),
        Sweep::TrainFrac(_) => None,
    };
    let metric = cfg.task.report_metrics()[0];
    let mut rows = Vec::with_capacity(points.len());
    for p in &points {
        let owned;
        let data = match &shared {
            Some(d) => d,
            None => {
                owned = prepare(p)?;
                &owned
            }
        };
        let result = fit(data, &p.train)?;
        aborted(&result)?;
        let row = evaluate(&result.params, data, p)?
            .into_iter()
            .find(|r| r.metric == metric.name())
            .expect("first report metric is evaluated");
        log::info!("m {} train_frac {}: {} {:.4}", p.train.m, p.train_frac, row.metric, row.value);
        rows.push(SweepRow { m: p.train.m, row });
    }
    let records: Vec<SweepRecord> = rows.iter().map(SweepRow::record).collect();
    append_csv(&cfg.out_file(SWEEP_FILE), &records)?;
    Ok(rows)
}

/// Writes `node_id \t label \t e_1 ... e_D` for every node, with `-1` for
/// unlabeled nodes. Returns the path written.
pub fn run_embed(cfg: &RunConfig, checkpoint: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let params = load_matching(checkpoint, &data, cfg)?;
    let emb = embed_all(&params, &data, &cfg.train)?;
    let path = cfg.out_file(EMBEDDING_FILE);
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_path(&path)
        .map_err(|e| csv_err(&path, e))?;
    for (v, row) in emb.rows().into_iter().enumerate() {
        let label = data.graph.node_label(v).map_or(-1, |l| l as i64);
        let mut rec = vec![v.to_string(), label.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

/// Computes the split for `cfg` and stores it as JSON.
pub fn run_split(cfg: &RunConfig) -> Result<SplitSpec> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    let split = dataset.make_split(cfg.task, cfg.train_frac, cfg.train.seed)?;
    let path = cfg.out_file(SPLIT_FILE);
    let text = serde_json::to_string_pretty(&split).map_err(|e| Error::State(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub m: usize,
    pub repetitions: usize,
    /// Time the quadratic reference instead of the index.
    pub oracle: bool,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            sizes: vec![10_000, 20_000, 40_000],
            dim: 64,
            m: 30,
            repetitions: 3,
            oracle: false,
            seed: 0,
        }
    }
}

pub fn run_bench(opts: &BenchOptions) -> Result<ScalingReport> {
    benchmark_scaling(&opts.sizes, opts.dim, opts.m, opts.repetitions, opts.oracle, opts.seed)
}

/// Human-readable timing table.
pub fn format_bench(report: &ScalingReport) -> String {
    let kind = if report.quadratic { "quadratic reference" } else { "top-m index" };
    let mut s = format!("{kind}, D={}, m={}\n{:>10}  {:>12}  {:>8}\n", report.dim, report.m, "N", "seconds", "ratio");
    let ratios = report.ratios();
    for (i, t) in report.timings.iter().enumerate() {
        let r = if i == 0 { "-".to_string() } else { format!("{:.2}", ratios[i - 1]) };
        s.push_str(&format!("{:>10}  {:>12.6}  {:>8}\n", t.n, t.seconds, r));
    }
    if let Some(e) = report.exponent {
        s.push_str(&format!("growth exponent {e:.3}\n"));
    }
    s
}
