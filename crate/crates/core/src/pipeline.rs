//! Stage orchestration: configuration, the six analysis stages, artifact
//! layout and the run manifest.
//!
//! Artifacts under the output directory:
//!
//! | stage     | reads                      | writes |
//! |-----------|----------------------------|--------|
//! | network   | cases, geo                 | `network_features.csv`, `graphs/` |
//! | motifs    | `graphs/`                  | `motifs.csv` |
//! | correlate | `motifs.csv`, inputs       | `correlation_AP.csv`, `correlation_Vol.csv` |
//! | granger   | `motifs.csv`, inputs       | `causality.csv`, `causality_summary.csv` |
//! | forecast  | `motifs.csv`, inputs       | `forecast_delta.csv`, `predictions_h<h>.csv` |
//! | egarch    | `motifs.csv`, inputs       | `egarch.csv`, `sigma_model0.csv`, `sigma_modelX.csv` |
//!
//! A full run also writes `manifest.json`; a single-stage run writes
//! `manifest.<stage>.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::NaiveDate;
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::causality::{causality_sweep, lagged_correlations, CAUSALITY_ALPHA};
use crate::forecast::{evaluate, EvalConfig, ForestParams, ModelSpec, SeriesBundle};
use crate::ingest::{self, CountyCases, Fips};
use crate::motifs::{census_series, read_census_csv, write_census_csv, CensusMethod, CensusRow, CENSUS_COLUMNS};
use crate::network::{
    build_spread_graph, geo_index, list_graph_dumps, read_graph_dump, write_graph_dump, GraphParams,
    SpreadGraph,
};
use crate::tables;
use crate::timeseries::{
    abnormal_price, log_return_and_volatility, rolling_zscore, CalendarKind, DailySeries,
    DEFAULT_AP_WINDOW, DEFAULT_Z_WINDOW,
};
use crate::volatility::{compare_models, fit_nested};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const GRAPHS_DIR: &str = "graphs";
pub const FEATURES_CSV: &str = "network_features.csv";
pub const MOTIFS_CSV: &str = "motifs.csv";
pub const CAUSALITY_CSV: &str = "causality.csv";
pub const CAUSALITY_SUMMARY_CSV: &str = "causality_summary.csv";
pub const DELTA_CSV: &str = "forecast_delta.csv";
pub const EGARCH_CSV: &str = "egarch.csv";
pub const MANIFEST: &str = "manifest.json";

/// Covariates of the EGARCH Model X: (series, lag in trading days).
pub const EGARCH_COVARIATES: [(&str, usize); 8] = [
    ("us_total_deaths", 1),
    ("us_total_deaths", 2),
    ("E", 1),
    ("E", 2),
    ("T2", 1),
    ("T2", 2),
    ("Covid 19 US", 1),
    ("Covid 19 US", 2),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Network,
    Motifs,
    Correlate,
    Granger,
    Forecast,
    Egarch,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Self::Network,
        Self::Motifs,
        Self::Correlate,
        Self::Granger,
        Self::Forecast,
        Self::Egarch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Network => "network",
            Self::Motifs => "motifs",
            Self::Correlate => "correlate",
            Self::Granger => "granger",
            Self::Forecast => "forecast",
            Self::Egarch => "egarch",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("{stage}: numerical failure: {message}")]
    Numerical { stage: &'static str, message: String },
    #[error("{stage}: missing upstream artifact {}", path.display())]
    MissingUpstream { stage: &'static str, path: PathBuf },
    #[error("{stage}: {}: {source}", path.display())]
    Io {
        stage: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data { .. } | Self::MissingUpstream { .. } | Self::Io { .. } => 3,
            Self::Numerical { .. } => 4,
        }
    }

    fn data(stage: &'static str, e: impl fmt::Display) -> Self {
        Self::Data {
            stage,
            message: e.to_string(),
        }
    }
}

/// Which daily count a county must reach to enter the spread network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    #[default]
    New,
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub cases: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub trends: Option<PathBuf>,
    /// Optional world aggregates in `date,variable,value` form.
    pub covid: Option<PathBuf>,
    pub graph: GraphParams,
    pub gating: Gating,
    pub census_method: CensusMethod,
    pub z_window: usize,
    pub ap_window: usize,
    pub max_lag: usize,
    pub corr_max_lag: usize,
    pub horizons: Vec<usize>,
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub seed: Option<u64>,
    /// `None` fits every model whose inputs are present.
    pub models: Option<Vec<ModelSpec>>,
    pub direct: bool,
    pub split_date: NaiveDate,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cases: None,
            geo: None,
            prices: None,
            trends: None,
            covid: None,
            graph: GraphParams::default(),
            gating: Gating::New,
            census_method: CensusMethod::Combinatorial,
            z_window: DEFAULT_Z_WINDOW,
            ap_window: DEFAULT_AP_WINDOW,
            max_lag: 7,
            corr_max_lag: 6,
            horizons: (1..=6).collect(),
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            seed: None,
            models: None,
            direct: true,
            split_date: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            start_date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2020, 5, 29).unwrap(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("invalid value for {key}: '{value}'")))
}

/// Accepts `1..6`, `1-6` or a comma list.
pub fn parse_horizons(s: &str) -> Result<Vec<usize>, PipelineError> {
    let bad = || PipelineError::Config(format!("invalid horizons '{s}'"));
    let range = s.split_once("..").or_else(|| s.split_once('-'));
    let hs: Vec<usize> = match range {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            (a..=b).collect()
        }
        None => s
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?,
    };
    if hs.is_empty() || hs.contains(&0) {
        return Err(bad());
    }
    Ok(hs)
}

pub fn parse_models(s: &str) -> Result<Vec<ModelSpec>, PipelineError> {
    s.split(',')
        .map(|m| m.parse().map_err(|e: crate::forecast::ForecastError| PipelineError::Config(e.to_string())))
        .collect()
}

impl RunConfig {
    /// Parses a `key = value` file; `#` starts a comment. Relative paths
    /// are resolved against `base`.
    pub fn from_kv(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set_relative(k.trim(), v.trim(), base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_kv(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        self.set_relative(key, value, Path::new(""))
    }

    fn set_relative(&mut self, key: &str, value: &str, base: &Path) -> Result<(), PipelineError> {
        let path = || Some(base.join(value));
        match key {
            "cases" => self.cases = path(),
            "geo" => self.geo = path(),
            "prices" => self.prices = path(),
            "trends" => self.trends = path(),
            "covid" => self.covid = path(),
            "output_dir" => self.output_dir = base.join(value),
            "gamma" => self.graph.gamma = parse(key, value)?,
            "lambda" => self.graph.lambda = parse(key, value)?,
            "delta" => self.graph.delta_miles = parse(key, value)?,
            "gating" => {
                self.gating = match value {
                    "new" => Gating::New,
                    "cumulative" => Gating::Cumulative,
                    _ => return Err(PipelineError::Config(format!("invalid gating '{value}'"))),
                }
            }
            "census_method" => {
                self.census_method = value.parse().map_err(PipelineError::Config)?;
            }
            "z_window" => self.z_window = parse(key, value)?,
            "ap_window" => self.ap_window = parse(key, value)?,
            "max_lag" => self.max_lag = parse(key, value)?,
            "corr_max_lag" => self.corr_max_lag = parse(key, value)?,
            "horizons" => self.horizons = parse_horizons(value)?,
            "n_trees" => self.n_trees = parse(key, value)?,
            "mtry" => self.mtry = Some(parse(key, value)?),
            "min_leaf" => self.min_leaf = parse(key, value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "models" => self.models = Some(parse_models(value)?),
            "direct" => self.direct = parse(key, value)?,
            "split_date" => self.split_date = parse(key, value)?,
            "start_date" => self.start_date = parse(key, value)?,
            "end_date" => self.end_date = parse(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.graph
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.seed.is_none() {
            return Err(PipelineError::Config("seed is required".into()));
        }
        if self.z_window < 2 || self.ap_window < 2 {
            return Err(PipelineError::Config("z_window and ap_window must be at least 2".into()));
        }
        if self.max_lag == 0 {
            return Err(PipelineError::Config("max_lag must be at least 1".into()));
        }
        if self.start_date > self.end_date {
            return Err(PipelineError::Config("start_date is after end_date".into()));
        }
        self.forest()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    fn forest(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            mtry: self.mtry,
            min_leaf: self.min_leaf,
            seed: self.seed.unwrap_or_default(),
            bootstrap: true,
        }
    }

    /// Flat view for the manifest.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("cases", p(&self.cases));
        put("geo", p(&self.geo));
        put("prices", p(&self.prices));
        put("trends", p(&self.trends));
        put("covid", p(&self.covid));
        put("gamma", self.graph.gamma.to_string());
        put("lambda", self.graph.lambda.to_string());
        put("delta", self.graph.delta_miles.to_string());
        put("gating", format!("{:?}", self.gating).to_lowercase());
        put("census_method", format!("{:?}", self.census_method).to_lowercase());
        put("z_window", self.z_window.to_string());
        put("ap_window", self.ap_window.to_string());
        put("max_lag", self.max_lag.to_string());
        put("corr_max_lag", self.corr_max_lag.to_string());
        put(
            "horizons",
            self.horizons.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        put("n_trees", self.n_trees.to_string());
        put("mtry", self.mtry.map(|m| m.to_string()).unwrap_or_else(|| "auto".into()));
        put("min_leaf", self.min_leaf.to_string());
        put("seed", self.seed.map(|s| s.to_string()).unwrap_or_default());
        put(
            "models",
            self.models
                .as_ref()
                .map(|ms| ms.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","))
                .unwrap_or_else(|| "auto".into()),
        );
        put("direct", self.direct.to_string());
        put("split_date", self.split_date.to_string());
        put("start_date", self.start_date.to_string());
        put("end_date", self.end_date.to_string());
        put("output_dir", self.output_dir.display().to_string());
        m
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Data rows written per artifact (header excluded).
    pub rows: BTreeMap<String, usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    /// sha256 of every input file read.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    /// sha256 of every artifact written, keyed by path relative to the
    /// output directory.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    inputs: BTreeMap<String, String>,
    written: Vec<PathBuf>,
    rows: BTreeMap<String, usize>,
}

impl Ctx<'_> {
    fn input(&mut self, stage: &'static str, name: &str, p: &Option<PathBuf>) -> Result<PathBuf, PipelineError> {
        let path = p
            .clone()
            .ok_or_else(|| PipelineError::Config(format!("{stage}: no {name} file configured")))?;
        let sum = sha256_file(&path).map_err(|source| PipelineError::Io {
            stage,
            path: path.clone(),
            source,
        })?;
        self.inputs.insert(path.display().to_string(), sum);
        Ok(path)
    }

    fn optional_input(&mut self, stage: &'static str, name: &str, p: &Option<PathBuf>) -> Result<Option<PathBuf>, PipelineError> {
        match p {
            Some(_) => self.input(stage, name, p).map(Some),
            None => Ok(None),
        }
    }

    fn create(&mut self, stage: &'static str, rel: &str) -> Result<BufWriter<fs::File>, PipelineError> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
                stage,
                path: dir.into(),
                source,
            })?;
        }
        let f = fs::File::create(&path).map_err(|source| PipelineError::Io {
            stage,
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn emit(
        &mut self,
        stage: &'static str,
        rel: &str,
        rows: usize,
        f: impl FnOnce(BufWriter<fs::File>) -> tables::Result<()>,
    ) -> Result<(), PipelineError> {
        let w = self.create(stage, rel)?;
        f(w).map_err(|e| PipelineError::data(stage, e))?;
        self.rows.insert(rel.to_string(), rows);
        Ok(())
    }

    fn upstream(&self, stage: &'static str, rel: &str) -> Result<PathBuf, PipelineError> {
        let p = self.out.join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::MissingUpstream { stage, path: p })
        }
    }
}

fn load_cases(ctx: &mut Ctx) -> Result<CountyCases, PipelineError> {
    let path = ctx.input("ingest", "cases", &ctx.cfg.cases.clone())?;
    ingest::read_county_cases(&path).map_err(|e| PipelineError::data("ingest", e))
}

fn stage_network(ctx: &mut Ctx) -> Result<(), PipelineError> {
    const S: &str = "network";
    let cases = load_cases(ctx)?;
    let geo_path = ctx.input("ingest", "geo", &ctx.cfg.geo.clone())?;
    let geo = ingest::read_geo_csv(&geo_path).map_err(|e| PipelineError::data("ingest", e))?;
    let index = geo_index(&geo);
    let by_date = match ctx.cfg.gating {
        Gating::New => ingest::new_cases_by_date(&cases.records),
        Gating::Cumulative => ingest::cumulative_by_date(&cases.records),
    };
    let empty = BTreeMap::new();
    let mut features = Vec::new();
    let mut missing = std::collections::BTreeSet::new();
    let graphs_dir = ctx.out.join(GRAPHS_DIR);
    if graphs_dir.exists() {
        fs::remove_dir_all(&graphs_dir).map_err(|source| PipelineError::Io {
            stage: S,
            path: graphs_dir.clone(),
            source,
        })?;
    }
    fs::create_dir_all(&graphs_dir).map_err(|source| PipelineError::Io {
        stage: S,
        path: graphs_dir.clone(),
        source,
    })?;
    for date in ctx.cfg.start_date.iter_days().take_while(|d| *d <= ctx.cfg.end_date) {
        let day: &BTreeMap<Fips, u64> = by_date.get(&date).unwrap_or(&empty);
        let built = build_spread_graph(date, day.iter().map(|(f, c)| (*f, *c)), &index, &ctx.cfg.graph)
            .map_err(|e| PipelineError::data(S, e))?;
        missing.extend(built.missing_geo);
        write_graph_dump(&graphs_dir, &built.graph).map_err(|e| PipelineError::data(S, e))?;
        for ext in ["nodes", "edges"] {
            ctx.written.push(graphs_dir.join(format!("{date}.{ext}.csv")));
        }
        features.push(built.graph.features());
    }
    if !missing.is_empty() {
        warn!("{} counties passed the node threshold without a centroid", missing.len());
    }
    ctx.rows.insert(GRAPHS_DIR.to_string(), features.len());
    ctx.emit(S, FEATURES_CSV, features.len(), |w| tables::write_features(&features, w))
}

fn stage_motifs(ctx: &mut Ctx) -> Result<(), PipelineError> {
    const S: &str = "motifs";
    let dir = ctx.upstream(S, GRAPHS_DIR)?;
    let dates = list_graph_dumps(&dir).map_err(|e| PipelineError::data(S, e))?;
    if dates.is_empty() {
        return Err(PipelineError::MissingUpstream { stage: S, path: dir });
    }
    let graphs: Vec<SpreadGraph> = dates
        .iter()
        .map(|d| read_graph_dump(&dir, *d))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::data(S, e))?;
    let rows = census_series(&graphs, ctx.cfg.census_method);
    let mut w = ctx.create(S, MOTIFS_CSV)?;
    write_census_csv(&rows, &mut w).map_err(|e| PipelineError::data(S, e))?;
    ctx.rows.insert(MOTIFS_CSV.to_string(), rows.len());
    Ok(())
}

/// Every analysis series on the trading calendar of the study window.
struct Prepared {
    dates: Vec<NaiveDate>,
    ap: Vec<Option<f64>>,
    vol: Vec<Option<f64>>,
    returns: Vec<Option<f64>>,
    /// Rolling z-scores, in inventory order.
    standardized: Vec<(String, Vec<Option<f64>>)>,
    /// Raw levels carried onto trading days.
    levels: BTreeMap<String, Vec<Option<f64>>>,
}

/// Last value on or before each date; `None` before the series starts.
fn carry(dates_src: &[NaiveDate], values: &[Option<f64>], targets: &[NaiveDate]) -> Vec<Option<f64>> {
    targets
        .iter()
        .map(|d| {
            let k = dates_src.partition_point(|s| s <= d);
            if k == 0 {
                None
            } else {
                values[k - 1]
            }
        })
        .collect()
}

fn prepare(ctx: &mut Ctx, stage: &'static str) -> Result<Prepared, PipelineError> {
    let cfg = ctx.cfg;
    let motifs_path = ctx.upstream(stage, MOTIFS_CSV)?;
    let motif_rows: Vec<CensusRow> = fs::File::open(&motifs_path)
        .map_err(|source| PipelineError::Io {
            stage,
            path: motifs_path.clone(),
            source,
        })
        .and_then(|f| read_census_csv(f).map_err(|e| PipelineError::data(stage, e)))?;

    let prices_path = ctx.input("ingest", "prices", &cfg.prices.clone())?;
    let prices = ingest::read_price_csv(&prices_path).map_err(|e| PipelineError::data("ingest", e))?;
    let cases = load_cases(ctx)?;
    let trends = match ctx.optional_input("ingest", "trends", &cfg.trends.clone())? {
        Some(p) => ingest::read_trends_csv(&p).map_err(|e| PipelineError::data("ingest", e))?,
        None => BTreeMap::new(),
    };
    let covid = match ctx.optional_input("ingest", "covid", &cfg.covid.clone())? {
        Some(p) => ingest::read_covid_csv(&p).map_err(|e| PipelineError::data("ingest", e))?,
        None => BTreeMap::new(),
    };

    let ap_full = abnormal_price(&prices, cfg.ap_window).map_err(|e| PipelineError::data(stage, e))?;
    let (ret, vol) = log_return_and_volatility(&prices).map_err(|e| PipelineError::data(stage, e))?;
    let dates: Vec<NaiveDate> = prices
        .dates()
        .iter()
        .copied()
        .filter(|d| *d >= cfg.start_date && *d <= cfg.end_date)
        .collect();
    if dates.is_empty() {
        return Err(PipelineError::data(stage, "no trading days inside the study window"));
    }
    let some = |s: &DailySeries| s.values().iter().map(|v| Some(*v)).collect::<Vec<_>>();
    let ap = carry(prices.dates(), ap_full.values(), &dates);
    let returns = carry(ret.dates(), &some(&ret), &dates);
    let vol = carry(vol.dates(), &some(&vol), &dates);

    // Calendar-day covariates in inventory order.
    let nat = ingest::national_totals(&cases).map_err(|e| PipelineError::data("ingest", e))?;
    let mut calendar: Vec<(String, DailySeries)> = vec![
        ("us_total_cases".into(), nat.total_cases),
        ("us_new_cases".into(), nat.new_cases),
        ("us_total_deaths".into(), nat.total_deaths),
        ("us_new_deaths".into(), nat.new_deaths),
    ];
    let mut covid = covid;
    for known in crate::synth::WORLD_VARIABLES {
        if let Some(s) = covid.remove(known) {
            calendar.push((known.to_string(), s));
        }
    }
    calendar.extend(covid);
    let motif_dates: Vec<NaiveDate> = motif_rows.iter().map(|r| r.date()).collect();
    for (j, name) in CENSUS_COLUMNS.iter().enumerate() {
        let vals = motif_rows.iter().map(|r| r.values()[j] as f64).collect();
        let s = DailySeries::new(motif_dates.clone(), vals, CalendarKind::Calendar)
            .map_err(|e| PipelineError::data(stage, e))?;
        calendar.push((name.to_string(), s));
    }
    calendar.extend(trends);

    let mut standardized = Vec::new();
    let mut levels = BTreeMap::new();
    for (name, s) in calendar {
        if s.is_empty() {
            continue;
        }
        let z = rolling_zscore(&s, cfg.z_window).map_err(|e| PipelineError::data(stage, e))?;
        standardized.push((name.clone(), carry(s.dates(), z.values(), &dates)));
        levels.insert(name, carry(s.dates(), &some(&s), &dates));
    }
    Ok(Prepared {
        dates,
        ap,
        vol,
        returns,
        standardized,
        levels,
    })
}

fn stage_correlate(ctx: &mut Ctx) -> Result<(), PipelineError> {
    const S: &str = "correlate";
    let p = prepare(ctx, S)?;
    for (target, y) in [("AP", &p.ap), ("Vol", &p.vol)] {
        let rows: Vec<_> = p
            .standardized
            .iter()
            .map(|(name, x)| (name.clone(), lagged_correlations(x, y, ctx.cfg.corr_max_lag)))
            .collect();
        let n = rows.iter().map(|r| r.1.len()).sum();
        ctx.emit(S, &format!("correlation_{target}.csv"), n, |w| {
            tables::write_correlations(&rows, w)
        })?;
    }
    Ok(())
}

fn stage_granger(ctx: &mut Ctx) -> Result<(), PipelineError> {
    const S: &str = "granger";
    let p = prepare(ctx, S)?;
    let targets = [("AP", p.ap.as_slice()), ("Vol", p.vol.as_slice())];
    let covs: Vec<(&str, &[Option<f64>])> = p
        .standardized
        .iter()
        .map(|(n, v)| (n.as_str(), v.as_slice()))
        .collect();
    let cells = causality_sweep(&targets, &covs, ctx.cfg.max_lag);
    let max_lag = ctx.cfg.max_lag;
    ctx.emit(S, CAUSALITY_CSV, cells.len(), |w| {
        tables::write_causality(&cells, CAUSALITY_ALPHA, w)
    })?;
    ctx.emit(S, CAUSALITY_SUMMARY_CSV, covs.len(), |w| {
        tables::write_causality_summary(&cells, CAUSALITY_ALPHA, max_lag, w)
    })
}

fn stage_forecast(ctx: &mut Ctx) -> Result<(), PipelineError> {
    const S: &str = "forecast";
    let p = prepare(ctx, S)?;
    let mut bundle = SeriesBundle::new(p.dates.clone());
    bundle
        .insert(crate::forecast::TARGET, p.ap.clone())
        .map_err(|e| PipelineError::data(S, e))?;
    for (name, v) in &p.standardized {
        bundle.insert(name, v.clone()).map_err(|e| PipelineError::data(S, e))?;
    }
    let models = match &ctx.cfg.models {
        Some(m) => m.clone(),
        None => ModelSpec::ALL
            .into_iter()
            .filter(|m| {
                let missing: Vec<&str> = m
                    .terms()
                    .iter()
                    .map(|t| t.0)
                    .filter(|k| !bundle.series.contains_key(*k))
                    .collect();
                if !missing.is_empty() {
                    warn!("skipping {m}: no input for {}", missing.join(", "));
                }
                missing.is_empty()
            })
            .collect(),
    };
    let cfg = EvalConfig {
        horizons: ctx.cfg.horizons.clone(),
        split: ctx.cfg.split_date,
        forest: ctx.cfg.forest(),
        direct: ctx.cfg.direct,
    };
    let eval = evaluate(&models, &bundle, &cfg).map_err(|e| PipelineError::data(S, e))?;
    ctx.emit(S, DELTA_CSV, eval.deltas.len(), |w| tables::write_deltas(&eval.deltas, w))?;
    for &h in &ctx.cfg.horizons {
        let rows: Vec<_> = eval.predictions.iter().filter(|r| r.horizon == h).collect();
        ctx.emit(S, &format!("predictions_h{h}.csv"), rows.len(), |w| {
            tables::write_predictions(rows.iter().copied(), w)
        })?;
    }
    Ok(())
}

/// `ln((1 + L_t) / (1 + L_{t-1}))`; unavailable when either level is.
fn level_log_returns(levels: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = vec![None; levels.len()];
    for t in 1..levels.len() {
        if let (Some(a), Some(b)) = (levels[t], levels[t - 1]) {
            if a > -1.0 && b > -1.0 {
                out[t] = Some(((1.0 + a) / (1.0 + b)).ln());
            }
        }
    }
    out
}

fn stage_egarch(ctx: &mut Ctx) -> Result<(), PipelineError> {
    const S: &str = "egarch";
    let p = prepare(ctx, S)?;
    let mut names = Vec::new();
    let mut cols: Vec<Vec<Option<f64>>> = Vec::new();
    for (series, lag) in EGARCH_COVARIATES {
        let Some(levels) = p.levels.get(series) else {
            warn!("Model X: no input for {series}, dropping its lag {lag}");
            continue;
        };
        let lr = level_log_returns(levels);
        let shifted = (0..lr.len()).map(|t| t.checked_sub(lag).and_then(|i| lr[i])).collect();
        names.push(format!("{series} lag {lag}"));
        cols.push(shifted);
    }
    let rows: Vec<usize> = (0..p.dates.len())
        .filter(|&t| p.returns[t].is_some() && cols.iter().all(|c| c[t].is_some()))
        .collect();
    let returns: Vec<f64> = rows.iter().map(|&t| p.returns[t].unwrap()).collect();
    let x: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| rows.iter().map(|&t| c[t].unwrap()).collect())
        .collect();
    let dates: Vec<NaiveDate> = rows.iter().map(|&t| p.dates[t]).collect();
    let (fit0, fitx) = fit_nested(&returns, &names, &x).map_err(|e| match e {
        crate::volatility::VolatilityError::TooShort(_) => PipelineError::data(S, e),
        _ => PipelineError::Numerical {
            stage: S,
            message: e.to_string(),
        },
    })?;
    for f in [&fit0, &fitx] {
        if !f.converged {
            warn!("EGARCH with {} covariates did not converge", f.spec.covariates.len());
        }
    }
    let cmp = compare_models(&fit0, &fitx, &returns);
    info!("egarch: loglik model0 {:.3}, modelX {:.3}", fit0.loglik, fitx.loglik);
    ctx.emit(S, EGARCH_CSV, cmp.rows.len() + 3, |w| tables::write_egarch(&cmp, w))?;
    ctx.emit(S, "sigma_model0.csv", dates.len(), |w| {
        tables::write_sigma(&dates, &returns, &fit0.sigma2, w)
    })?;
    ctx.emit(S, "sigma_modelX.csv", dates.len(), |w| {
        tables::write_sigma(&dates, &returns, &fitx.sigma2, w)
    })
}

/// Runs `stages` in order and writes the manifest.
pub fn run_stages(cfg: &RunConfig, stages: &[Stage]) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|source| PipelineError::Io {
        stage: "pipeline",
        path: cfg.output_dir.clone(),
        source,
    })?;
    let mut ctx = Ctx {
        cfg,
        out: &cfg.output_dir,
        inputs: BTreeMap::new(),
        written: Vec::new(),
        rows: BTreeMap::new(),
    };
    let mut records = Vec::new();
    for &stage in stages {
        let t0 = Instant::now();
        ctx.rows.clear();
        info!("stage {stage}");
        match stage {
            Stage::Network => stage_network(&mut ctx)?,
            Stage::Motifs => stage_motifs(&mut ctx)?,
            Stage::Correlate => stage_correlate(&mut ctx)?,
            Stage::Granger => stage_granger(&mut ctx)?,
            Stage::Forecast => stage_forecast(&mut ctx)?,
            Stage::Egarch => stage_egarch(&mut ctx)?,
        }
        records.push(StageRecord {
            stage,
            rows: std::mem::take(&mut ctx.rows),
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let mut artifacts = BTreeMap::new();
    for p in &ctx.written {
        let rel = p.strip_prefix(&cfg.output_dir).unwrap_or(p);
        let sum = sha256_file(p).map_err(|source| PipelineError::Io {
            stage: "pipeline",
            path: p.clone(),
            source,
        })?;
        artifacts.insert(rel.display().to_string(), sum);
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.snapshot(),
        inputs: ctx.inputs,
        stages: records,
        artifacts,
    };
    let name = match stages {
        [one] if stages.len() < Stage::ALL.len() => format!("manifest.{one}.json"),
        _ => MANIFEST.to_string(),
    };
    let path = cfg.output_dir.join(name);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|source| PipelineError::Io {
        stage: "pipeline",
        path,
        source,
    })?;
    Ok(manifest)
}

pub fn run(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    run_stages(cfg, &Stage::ALL)
}

/// Caps the worker threads used inside stages. Call before any stage runs.
pub fn set_parallelism(jobs: usize) -> Result<(), PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| PipelineError::Config(format!("jobs: {e}")))
}
