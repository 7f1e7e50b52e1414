//! Random-forest (CART) forecaster for the abnormal-price series and the
//! RMSE comparison of the model menu P0..P4 against the lag-only baseline.
//!
//! Feature "lag l" for a target at row `t` and horizon `h` is the value at
//! row `t - h - l + 1` (direct multi-step forecasting). With `direct` off
//! the horizon is ignored when lagging, so every horizon reuses the h=1
//! features.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("unknown model spec '{0}' (expected P0..P4)")]
    UnknownSpec(String),
    #[error("series '{0}' required by {1} is missing from the bundle")]
    MissingSeries(String, ModelSpec),
    #[error("series '{name}' has {got} rows, bundle has {expected}")]
    Misaligned {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("{spec} at h={horizon} has no usable rows")]
    EmptyFrame { spec: ModelSpec, horizon: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("no training rows before {0}")]
    EmptyTrain(NaiveDate),
    #[error("no test rows on or after {0} at h={1}")]
    EmptyTest(NaiveDate, usize),
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
}

/// Bundle key of the target series.
pub const TARGET: &str = "AP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ModelSpec {
    P0,
    P1,
    P2,
    P3,
    P4,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 5] = [Self::P0, Self::P1, Self::P2, Self::P3, Self::P4];

    /// (bundle key, lags) in feature order.
    pub fn terms(self) -> Vec<(&'static str, &'static [usize])> {
        const L3: &[usize] = &[1, 2, 3];
        const L2: &[usize] = &[1, 2];
        let mut t = vec![(TARGET, L3)];
        match self {
            Self::P0 => {}
            Self::P1 => t.extend([("us_total_deaths", L3), ("world_new_deaths", L3)]),
            Self::P2 => t.extend([("E", L3), ("GC", L3), ("T2", L3), ("M4", L3)]),
            Self::P3 => t.extend([
                ("Covid-19 US", L2),
                ("Covid 19 US", L2),
                ("Covid-19 World", L2),
            ]),
            Self::P4 => t.extend([
                ("Covid-19 US", L2),
                ("Covid 19 US", L2),
                ("T2", L2),
                ("us_total_deaths", L2),
            ]),
        }
        t
    }

    pub fn feature_names(self) -> Vec<String> {
        self.terms()
            .into_iter()
            .flat_map(|(k, lags)| lags.iter().map(move |l| format!("{k} lag {l}")))
            .collect()
    }

    pub fn max_lag(self) -> usize {
        self.terms()
            .iter()
            .flat_map(|(_, l)| l.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ModelSpec {
    type Err = ForecastError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P0" => Ok(Self::P0),
            "P1" => Ok(Self::P1),
            "P2" => Ok(Self::P2),
            "P3" => Ok(Self::P3),
            "P4" => Ok(Self::P4),
            _ => Err(ForecastError::UnknownSpec(s.to_string())),
        }
    }
}

/// Series on a common row calendar (normally the trading days of the
/// target). `None` marks an unavailable value.
#[derive(Debug, Clone, Default)]
pub struct SeriesBundle {
    pub dates: Vec<NaiveDate>,
    pub series: BTreeMap<String, Vec<Option<f64>>>,
}

impl SeriesBundle {
    pub fn new(dates: Vec<NaiveDate>) -> Self {
        Self {
            dates,
            series: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<(), ForecastError> {
        if values.len() != self.dates.len() {
            return Err(ForecastError::Misaligned {
                name: name.to_string(),
                got: values.len(),
                expected: self.dates.len(),
            });
        }
        self.series.insert(name.to_string(), values);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedFrame {
    pub names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub dates: Vec<NaiveDate>,
    pub horizon: usize,
}

impl SupervisedFrame {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn subset(&self, keep: impl Fn(NaiveDate) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.dates[i])).collect();
        Self {
            names: self.names.clone(),
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            dates: idx.iter().map(|&i| self.dates[i]).collect(),
            horizon: self.horizon,
        }
    }
}

pub fn build_frame(
    spec: ModelSpec,
    bundle: &SeriesBundle,
    horizon: usize,
    direct: bool,
) -> Result<SupervisedFrame, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    let shift = if direct { horizon - 1 } else { 0 };
    let terms = spec.terms();
    let mut cols: Vec<(&[Option<f64>], usize)> = Vec::new();
    for (key, lags) in &terms {
        let s = bundle
            .series
            .get(*key)
            .ok_or_else(|| ForecastError::MissingSeries(key.to_string(), spec))?;
        if s.len() != bundle.dates.len() {
            return Err(ForecastError::Misaligned {
                name: key.to_string(),
                got: s.len(),
                expected: bundle.dates.len(),
            });
        }
        cols.extend(lags.iter().map(|l| (s.as_slice(), shift + l)));
    }
    let target = bundle
        .series
        .get(TARGET)
        .ok_or_else(|| ForecastError::MissingSeries(TARGET.to_string(), spec))?;
    let mut frame = SupervisedFrame {
        names: spec.feature_names(),
        x: Vec::new(),
        y: Vec::new(),
        dates: Vec::new(),
        horizon,
    };
    'rows: for t in 0..bundle.dates.len() {
        let Some(y) = target[t] else { continue };
        let mut row = Vec::with_capacity(cols.len());
        for (s, off) in &cols {
            match t.checked_sub(*off).and_then(|i| s[i]) {
                Some(v) => row.push(v),
                None => continue 'rows,
            }
        }
        frame.x.push(row);
        frame.y.push(y);
        frame.dates.push(bundle.dates[t]);
    }
    if frame.is_empty() {
        return Err(ForecastError::EmptyFrame { spec, horizon });
    }
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TreeNode {
    Leaf(f64),
    /// Rows with `x[feature] < cut` go to `left`, the rest to `right`.
    Split {
        feature: usize,
        cut: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tree {
    /// Arena; the root is node 0.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    cut,
                    left,
                    right,
                } => i = if row[feature] < cut { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf(_)))
            .count()
    }
}

/// A candidate split and the residual sum of squares it leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub cut: f64,
    pub rss: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a {
        m
    } else {
        b
    }
}

fn node_rss(y: &[f64], rows: &[usize]) -> f64 {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    rows.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

/// Best split of `rows` over `features`, both children keeping at least
/// `min_leaf` rows. Ties keep the first candidate in (feature, cut) order.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = rows.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    // Centre y on the node mean so the running sums stay well conditioned.
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let total_sq: f64 = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    let total: f64 = rows.iter().map(|&i| y[i] - mean).sum();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order = rows.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_sum = 0.0;
        for k in 1..n {
            left_sum += y[order[k - 1]] - mean;
            if k < min_leaf || n - k < min_leaf {
                continue;
            }
            let (a, b) = (x[order[k - 1]][f], x[order[k]][f]);
            if a >= b {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64
                - total * total / n as f64;
            if best.is_none_or(|(_, _, g)| gain > g) {
                best = Some((f, midpoint(a, b), gain));
            }
        }
    }
    best.map(|(feature, cut, gain)| Split {
        feature,
        cut,
        rss: (total_sq - gain).max(0.0),
    })
}

/// Exhaustive scan recomputing both children's RSS from scratch for every
/// (feature, midpoint) pair. Used to check [`best_split`].
pub fn brute_force_split(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let min_leaf = min_leaf.max(1);
    let mut best: Option<Split> = None;
    for &f in features {
        let vals: BTreeSet<u64> = rows.iter().map(|&i| x[i][f].to_bits()).collect();
        let mut vals: Vec<f64> = vals.into_iter().map(f64::from_bits).collect();
        vals.sort_by(f64::total_cmp);
        for w in vals.windows(2) {
            let cut = midpoint(w[0], w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] < cut);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let rss = node_rss(y, &l) + node_rss(y, &r);
            if best.is_none_or(|b| rss < b.rss) {
                best = Some(Split { feature: f, cut, rss });
            }
        }
    }
    best
}

/// Grows one regression tree on `rows` (duplicates allowed, as in a
/// bootstrap sample).
pub fn fit_tree(
    frame: &SupervisedFrame,
    rows: &[usize],
    mtry: usize,
    min_leaf: usize,
    rng: &mut impl Rng,
) -> Tree {
    let p = frame.names.len();
    let mtry = mtry.clamp(1, p.max(1));
    let mut nodes = vec![TreeNode::Leaf(0.0)];
    let mut stack = vec![(0usize, rows.to_vec())];
    while let Some((id, node_rows)) = stack.pop() {
        let n = node_rows.len() as f64;
        let mean = node_rows.iter().map(|&i| frame.y[i]).sum::<f64>() / n;
        let first = frame.y[node_rows[0]];
        let constant = node_rows.iter().all(|&i| frame.y[i] == first);
        let split = if constant || p == 0 {
            None
        } else {
            let mut features = sample(rng, p, mtry).into_vec();
            features.sort_unstable();
            best_split(&frame.x, &frame.y, &node_rows, &features, min_leaf)
        };
        let parent_rss = node_rss(&frame.y, &node_rows);
        match split {
            Some(s) if parent_rss - s.rss > 1e-12 * parent_rss.max(f64::MIN_POSITIVE) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    node_rows.iter().partition(|&&i| frame.x[i][s.feature] < s.cut);
                let left = nodes.len();
                nodes.push(TreeNode::Leaf(0.0));
                nodes.push(TreeNode::Leaf(0.0));
                nodes[id] = TreeNode::Split {
                    feature: s.feature,
                    cut: s.cut,
                    left,
                    right: left + 1,
                };
                stack.push((left + 1, r));
                stack.push((left, l));
            }
            _ => nodes[id] = TreeNode::Leaf(if constant { first } else { mean }),
        }
    }
    Tree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(p / 3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.n_trees == 0 {
            return Err(ForecastError::InvalidParams("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForecastError::InvalidParams("min_leaf must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(ForecastError::InvalidParams("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub mtry: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Tree `i` draws from stream `i` of a ChaCha8 generator keyed by `seed`,
/// so the forest does not depend on scheduling.
pub fn fit_forest(frame: &SupervisedFrame, params: &ForestParams) -> Result<ForestModel, ForecastError> {
    params.validate()?;
    if frame.is_empty() {
        return Err(ForecastError::InvalidParams("empty training frame".into()));
    }
    let mtry = params.mtry_for(frame.names.len());
    let n = frame.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(frame, &rows, mtry, params.min_leaf, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        mtry,
        min_leaf: params.min_leaf,
        seed: params.seed,
    })
}

pub fn rmse(observed: &[f64], predicted: &[f64]) -> f64 {
    let n = observed.len() as f64;
    (observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Percentage improvement of `rmse_i` over the baseline; positive is better.
pub fn delta(rmse_i: f64, rmse_0: f64) -> f64 {
    (1.0 - rmse_i / rmse_0) * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub model: ModelSpec,
    pub horizon: usize,
    pub rmse: f64,
    pub delta: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub observed: f64,
    pub predicted: f64,
    pub model: ModelSpec,
    pub horizon: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Evaluation {
    pub deltas: Vec<DeltaRow>,
    pub predictions: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
    pub split: NaiveDate,
    pub forest: ForestParams,
    pub direct: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: (1..=6).collect(),
            split: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            forest: ForestParams::default(),
            direct: true,
        }
    }
}

/// Fits one forest per (model, horizon) on rows dated before the split and
/// scores each on the test dates shared by all requested models at that
/// horizon. P0 is always fitted since it is the baseline.
pub fn evaluate(
    models: &[ModelSpec],
    bundle: &SeriesBundle,
    cfg: &EvalConfig,
) -> Result<Evaluation, ForecastError> {
    cfg.forest.validate()?;
    let mut specs: Vec<ModelSpec> = models.to_vec();
    specs.push(ModelSpec::P0);
    specs.sort();
    specs.dedup();

    let mut frames = Vec::new();
    for &h in &cfg.horizons {
        for &s in &specs {
            frames.push((s, h, build_frame(s, bundle, h, cfg.direct)?));
        }
    }
    let fitted: Vec<(ModelSpec, usize, SupervisedFrame, ForestModel)> = frames
        .into_par_iter()
        .map(|(s, h, frame)| {
            let train = frame.subset(|d| d < cfg.split);
            if train.is_empty() {
                return Err(ForecastError::EmptyTrain(cfg.split));
            }
            let model = fit_forest(&train, &cfg.forest)?;
            Ok((s, h, frame.subset(|d| d >= cfg.split), model))
        })
        .collect::<Result<_, _>>()?;

    let mut out = Evaluation::default();
    for &h in &cfg.horizons {
        let at_h: Vec<_> = fitted.iter().filter(|f| f.1 == h).collect();
        let mut common: Option<BTreeSet<NaiveDate>> = None;
        for f in &at_h {
            let d: BTreeSet<NaiveDate> = f.2.dates.iter().copied().collect();
            common = Some(match common {
                None => d,
                Some(c) => c.intersection(&d).copied().collect(),
            });
        }
        let common = common.unwrap_or_default();
        if common.is_empty() {
            return Err(ForecastError::EmptyTest(cfg.split, h));
        }
        let mut scored = Vec::new();
        for (s, _, test, model) in at_h {
            let mut obs = Vec::new();
            let mut pred = Vec::new();
            for i in 0..test.len() {
                if !common.contains(&test.dates[i]) {
                    continue;
                }
                let p = model.predict(&test.x[i]);
                obs.push(test.y[i]);
                pred.push(p);
                out.predictions.push(PredictionRow {
                    date: test.dates[i],
                    observed: test.y[i],
                    predicted: p,
                    model: *s,
                    horizon: h,
                });
            }
            scored.push((*s, rmse(&obs, &pred), obs.len()));
        }
        let base = scored
            .iter()
            .find(|r| r.0 == ModelSpec::P0)
            .map(|r| r.1)
            .expect("P0 is always fitted");
        for (model, r, n_test) in scored {
            out.deltas.push(DeltaRow {
                model,
                horizon: h,
                rmse: r,
                delta: delta(r, base),
                n_test,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn d(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i as u64)
    }

    fn one_feature(xs: &[f64], ys: &[f64]) -> SupervisedFrame {
        SupervisedFrame {
            names: vec!["x".into()],
            x: xs.iter().map(|v| vec![*v]).collect(),
            y: ys.to_vec(),
            dates: (0..xs.len() as i64).map(d).collect(),
            horizon: 1,
        }
    }

    fn full_bundle(n: usize) -> SeriesBundle {
        let mut b = SeriesBundle::new((0..n as i64).map(d).collect());
        let keys = [
            "AP",
            "us_total_deaths",
            "world_new_deaths",
            "E",
            "GC",
            "T2",
            "M4",
            "Covid-19 US",
            "Covid 19 US",
            "Covid-19 World",
        ];
        for (k, key) in keys.iter().enumerate() {
            b.insert(key, (0..n).map(|i| Some((i * (k + 1)) as f64)).collect())
                .unwrap();
        }
        b
    }

    #[test]
    fn feature_counts() {
        let counts: Vec<usize> = ModelSpec::ALL.iter().map(|s| s.feature_names().len()).collect();
        assert_eq!(counts, vec![3, 9, 15, 9, 11]);
        assert_eq!(ModelSpec::P0.feature_names(), vec!["AP lag 1", "AP lag 2", "AP lag 3"]);
        let b = full_bundle(20);
        assert_eq!(build_frame(ModelSpec::P0, &b, 1, true).unwrap().x[0].len(), 3);
    }

    #[test]
    fn frame_window_arithmetic() {
        let b = full_bundle(10);
        for s in ModelSpec::ALL {
            let f = build_frame(s, &b, 6, true).unwrap();
            assert!(f.len() <= 2);
        }
        let f = build_frame(ModelSpec::P0, &b, 6, true).unwrap();
        // Target row 8: lags 1..3 sit at rows 2, 1, 0.
        assert_eq!(f.dates[0], d(8));
        assert_eq!(f.x[0], vec![2.0, 1.0, 0.0]);
        let naive = build_frame(ModelSpec::P0, &b, 6, false).unwrap();
        assert_eq!(naive, SupervisedFrame { horizon: 6, ..build_frame(ModelSpec::P0, &b, 1, true).unwrap() });
        assert!(matches!(
            build_frame(ModelSpec::P0, &full_bundle(3), 2, true),
            Err(ForecastError::EmptyFrame { .. })
        ));
        assert_eq!("p9".parse::<ModelSpec>(), Err(ForecastError::UnknownSpec("p9".into())));
    }

    #[test]
    fn future_values_do_not_leak() {
        let b = full_bundle(40);
        let h = 3;
        let f = build_frame(ModelSpec::P2, &b, h, true).unwrap();
        let mut scrambled = b.clone();
        let t = 25;
        // Everything dated after the information cutoff of target row t.
        for v in scrambled.series.values_mut() {
            for (i, x) in v.iter_mut().enumerate().skip(t - h + 1) {
                *x = x.map(|_| -1000.0 - i as f64);
            }
        }
        let g = build_frame(ModelSpec::P2, &scrambled, h, true).unwrap();
        let fi = f.dates.iter().position(|x| *x == d(t as i64)).unwrap();
        let gi = g.dates.iter().position(|x| *x == d(t as i64)).unwrap();
        assert_eq!(f.x[fi], g.x[gi]);
    }

    #[test]
    fn unavailable_values_drop_rows() {
        let mut b = full_bundle(12);
        b.series.get_mut("AP").unwrap()[5] = None;
        let f = build_frame(ModelSpec::P0, &b, 1, true).unwrap();
        // Row 5 is missing as a target and as lag 1..3 of rows 6..8.
        let dates: Vec<_> = f.dates.clone();
        assert_eq!(dates, vec![d(3), d(4), d(9), d(10), d(11)]);
    }

    #[test]
    fn constant_target_single_leaf() {
        let f = one_feature(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[7.0; 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = fit_tree(&f, &(0..6).collect::<Vec<_>>(), 1, 1, &mut rng);
        assert_eq!(t.nodes, vec![TreeNode::Leaf(7.0)]);
    }

    #[test]
    fn step_is_split_at_the_midpoint() {
        let xs: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if *x < 0.5 { 0.0 } else { 1.0 }).collect();
        let f = one_feature(&xs, &ys);
        let rows: Vec<usize> = (0..xs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = fit_tree(&f, &rows, 1, 1, &mut rng);
        let TreeNode::Split { cut, .. } = t.nodes[0] else { panic!() };
        assert!(cut > 0.49 && cut < 0.51);
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(t.predict(&[*x]), *y);
        }
        let oracle = brute_force_split(&f.x, &f.y, &rows, &[0], 1).unwrap();
        assert_eq!(oracle.cut, cut);
    }

    #[test]
    fn identical_rows_average() {
        let f = one_feature(&[1.0, 1.0], &[2.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = fit_tree(&f, &[0, 1], 1, 1, &mut rng);
        assert_eq!(t.nodes, vec![TreeNode::Leaf(3.0)]);
    }

    #[test]
    fn min_leaf_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..60).map(|_| rng.random()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + rng.random::<f64>()).collect();
        let f = one_feature(&xs, &ys);
        let rows: Vec<usize> = (0..60).collect();
        let t = fit_tree(&f, &rows, 1, 5, &mut rng);
        // Count training rows per leaf.
        let mut per_leaf = BTreeMap::new();
        for x in &xs {
            let mut i = 0;
            while let TreeNode::Split { feature, cut, left, right } = t.nodes[i] {
                i = if [*x][feature] < cut { left } else { right };
            }
            *per_leaf.entry(i).or_insert(0) += 1;
        }
        assert!(per_leaf.values().all(|&c| c >= 5), "{per_leaf:?}");
        let root_rss = node_rss(&ys, &rows);
        let fitted: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - t.predict(&[*x])).powi(2)).sum();
        assert!(fitted <= root_rss);
    }

    #[test]
    fn forest_is_deterministic_and_learns_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + noise.sample(&mut rng)).collect();
        let train = one_feature(&xs[..400], &ys[..400]);
        let params = ForestParams {
            n_trees: 100,
            seed: 3,
            ..Default::default()
        };
        let a = fit_forest(&train, &params).unwrap();
        let b = fit_forest(&train, &params).unwrap();
        assert_eq!(a, b);
        let pred: Vec<f64> = xs[400..].iter().map(|x| a.predict(&[*x])).collect();
        let mean = ys[..400].iter().sum::<f64>() / 400.0;
        let base = rmse(&ys[400..], &vec![mean; 100]);
        assert!(rmse(&ys[400..], &pred) < 0.5 * base);
    }

    #[test]
    fn delta_formula() {
        assert_eq!(delta(1.0, 2.0), 50.0);
        assert_eq!(delta(2.0, 2.0), 0.0);
        assert!(delta(3.0, 2.0) < 0.0);
    }

    #[test]
    fn evaluate_adds_baseline_and_aligns_dates() {
        let n = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = SeriesBundle::new((0..n as i64).map(d).collect());
        let ap: Vec<Option<f64>> = (0..n).map(|_| Some(rng.random::<f64>())).collect();
        b.insert("AP", ap).unwrap();
        for k in ["Covid-19 US", "Covid 19 US", "Covid-19 World"] {
            b.insert(k, (0..n).map(|_| Some(rng.random::<f64>())).collect()).unwrap();
        }
        let cfg = EvalConfig {
            horizons: vec![1, 2],
            split: d(90),
            forest: ForestParams {
                n_trees: 20,
                ..Default::default()
            },
            direct: true,
        };
        let e = evaluate(&[ModelSpec::P3], &b, &cfg).unwrap();
        let rows: Vec<_> = e.deltas.iter().map(|r| (r.model, r.horizon)).collect();
        assert_eq!(
            rows,
            vec![(ModelSpec::P0, 1), (ModelSpec::P3, 1), (ModelSpec::P0, 2), (ModelSpec::P3, 2)]
        );
        assert_eq!(e.deltas[0].delta, 0.0);
        assert_eq!(e.deltas[0].n_test, e.deltas[1].n_test);
        assert!(e.predictions.iter().all(|p| p.date >= d(90)));
        assert!(matches!(
            evaluate(&[ModelSpec::P1], &b, &cfg),
            Err(ForecastError::MissingSeries(..))
        ));
    }

    #[test]
    fn informative_covariate_beats_baseline() {
        let n = 150;
        let wins = (0..50u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let noise = Normal::new(0.0, 0.1).unwrap();
                let driver: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut ap = vec![0.0; n];
                for t in 1..n {
                    ap[t] = 2.0 * driver[t - 1] + noise.sample(&mut rng);
                }
                let mut b = SeriesBundle::new((0..n as i64).map(d).collect());
                b.insert("AP", ap.into_iter().map(Some).collect()).unwrap();
                b.insert("Covid-19 US", driver.into_iter().map(Some).collect()).unwrap();
                for k in ["Covid 19 US", "Covid-19 World"] {
                    b.insert(k, (0..n).map(|_| Some(rng.random::<f64>())).collect()).unwrap();
                }
                let cfg = EvalConfig {
                    horizons: vec![1],
                    split: d(100),
                    forest: ForestParams {
                        n_trees: 60,
                        seed,
                        ..Default::default()
                    },
                    direct: true,
                };
                let e = evaluate(&[ModelSpec::P3], &b, &cfg).unwrap();
                e.deltas.iter().any(|r| r.model == ModelSpec::P3 && r.delta > 0.0)
            })
            .count();
        assert!(wins >= 45, "{wins}/50");
    }

    proptest::proptest! {
        #[test]
        fn tree_fits_training_rows_and_forest_ignores_tree_order(seed in 0u64..1000, n in 6usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x).sin() + rng.random::<f64>()).collect();
            let f = one_feature(&xs, &ys);
            let rows: Vec<usize> = (0..n).collect();
            let tree = fit_tree(&f, &rows, 1, 2, &mut rng);
            let mean = ys.iter().sum::<f64>() / n as f64;
            let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - tree.predict(&[*x])).powi(2)).sum();
            let base: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
            proptest::prop_assert!(rss <= base + 1e-9);

            let forest = fit_forest(&f, &ForestParams { n_trees: 15, seed, ..Default::default() }).unwrap();
            let mut reversed = forest.clone();
            reversed.trees.reverse();
            for x in &xs {
                proptest::prop_assert!((forest.predict(&[*x]) - reversed.predict(&[*x])).abs() < 1e-12);
            }
        }
    }
}
