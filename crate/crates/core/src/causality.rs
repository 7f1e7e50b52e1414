//! Lagged rank correlation and univariate Granger causality.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

use crate::linalg::least_squares;

/// Two-sided significance level for the causality tables.
pub const CAUSALITY_ALPHA: f64 = 0.10;
/// Significance level for the correlation tables.
pub const CORRELATION_ALPHA: f64 = 0.05;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CausalityError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("insufficient data: {got} usable rows, need {need}")]
    InsufficientData { need: usize, got: usize },
    #[error("constant input")]
    DegenerateInput,
    #[error("singular design")]
    SingularDesign,
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Tie-corrected Spearman correlation (Pearson correlation of average
/// ranks) with a two-sided p-value from the t approximation on n-2 df.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult, CausalityError> {
    if x.len() != y.len() {
        return Err(CausalityError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(CausalityError::InsufficientData { need: 3, got: n });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (a, b) = (a - mean, b - mean);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= RANK_TOL || syy <= RANK_TOL {
        return Err(CausalityError::DegenerateInput);
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(SpearmanResult {
        rho,
        p_value: rho_p_value(rho, n),
        n,
    })
}

fn rho_p_value(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LagCorrelation {
    pub lag: usize,
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pairs `(x[t-lag], y[t])` for every `t` where both are available.
pub fn lagged_pairs(x: &[Option<f64>], y: &[Option<f64>], lag: usize) -> (Vec<f64>, Vec<f64>) {
    (lag..y.len().min(x.len() + lag))
        .filter_map(|t| Some((x[t - lag]?, y[t]?)))
        .unzip()
}

/// Spearman correlation of `y_t` with `x_{t-lag}` for lag in `0..=max_lag`.
pub fn lagged_correlations(
    x: &[Option<f64>],
    y: &[Option<f64>],
    max_lag: usize,
) -> Vec<(usize, Result<LagCorrelation, CausalityError>)> {
    (0..=max_lag)
        .map(|lag| {
            let (xs, ys) = lagged_pairs(x, y, lag);
            let r = spearman(&xs, &ys).map(|s| LagCorrelation {
                lag,
                rho: s.rho,
                p_value: s.p_value,
                n: s.n,
            });
            (lag, r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrangerResult {
    pub lag_order: usize,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
    pub f_stat: f64,
    pub p_value: f64,
    pub n_effective: usize,
}

/// Tests whether lags `1..=d` of `x` reduce the residual variance of an
/// order-`d` autoregression of `y`. Rows with any unavailable value are
/// dropped. Lags of `x` that are linear combinations of the restricted
/// regressors contribute nothing to the fit; the numerator keeps `d` df.
pub fn granger_test(
    y: &[Option<f64>],
    x: &[Option<f64>],
    d: usize,
) -> Result<GrangerResult, CausalityError> {
    if y.len() != x.len() {
        return Err(CausalityError::LengthMismatch(y.len(), x.len()));
    }
    if d == 0 {
        return Err(CausalityError::InsufficientData { need: 1, got: 0 });
    }
    let need = 2 * d + 2;
    let mut target = Vec::new();
    let mut ylags: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut xlags: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut yl = vec![0.0; d];
    let mut xl = vec![0.0; d];
    'rows: for t in d..y.len() {
        let Some(yt) = y[t] else { continue };
        for k in 1..=d {
            match (y[t - k], x[t - k]) {
                (Some(a), Some(b)) => {
                    yl[k - 1] = a;
                    xl[k - 1] = b;
                }
                _ => continue 'rows,
            }
        }
        target.push(yt);
        for k in 0..d {
            ylags[k].push(yl[k]);
            xlags[k].push(xl[k]);
        }
    }
    let n = target.len();
    if n < need {
        return Err(CausalityError::InsufficientData { need, got: n });
    }

    let mut restricted = vec![vec![1.0; n]];
    restricted.extend(ylags);
    let fit_r = least_squares(&restricted, &target, 1e-10);
    if !fit_r.dropped.is_empty() {
        return Err(CausalityError::SingularDesign);
    }
    let mut full = restricted;
    full.extend(xlags);
    let fit_u = least_squares(&full, &target, 1e-10);

    let df2 = (n - 2 * d - 1) as f64;
    let rss_r = fit_r.rss;
    let rss_u = fit_u.rss.min(rss_r);
    let scale = rss_r.max(f64::MIN_POSITIVE);
    let (f_stat, p_value) = if rss_u <= 1e-14 * scale {
        if rss_r - rss_u <= 1e-14 * scale {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = ((rss_r - rss_u) / d as f64) / (rss_u / df2);
        let dist = FisherSnedecor::new(d as f64, df2).expect("positive df");
        (f, dist.sf(f))
    };
    Ok(GrangerResult {
        lag_order: d,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
        f_stat,
        p_value,
        n_effective: n,
    })
}

/// One (covariate, lag, target) entry of a causality grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GrangerCell {
    pub variable: String,
    pub lag: usize,
    pub target: String,
    pub result: Result<GrangerResult, CausalityError>,
}

impl GrangerCell {
    pub fn significant(&self, alpha: f64) -> bool {
        matches!(&self.result, Ok(r) if r.p_value < alpha)
    }
}

/// Granger tests of every covariate against every target for lag orders
/// `1..=max_lag`. Output order: covariate, lag, target.
pub fn causality_sweep(
    targets: &[(&str, &[Option<f64>])],
    covariates: &[(&str, &[Option<f64>])],
    max_lag: usize,
) -> Vec<GrangerCell> {
    let mut jobs = Vec::new();
    for (ci, _) in covariates.iter().enumerate() {
        for lag in 1..=max_lag {
            for (ti, _) in targets.iter().enumerate() {
                jobs.push((ci, lag, ti));
            }
        }
    }
    jobs.par_iter()
        .map(|&(ci, lag, ti)| {
            let (vname, x) = covariates[ci];
            let (tname, y) = targets[ti];
            GrangerCell {
                variable: vname.to_string(),
                lag,
                target: tname.to_string(),
                result: granger_test(y, x, lag),
            }
        })
        .collect()
}
