//! Date-indexed series and the standardizations applied to them.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default trailing window for the abnormal price, in trading days.
pub const DEFAULT_AP_WINDOW: usize = 148;
/// Default rolling window for covariate standardization, in calendar days.
pub const DEFAULT_Z_WINDOW: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("dates and values differ in length ({dates} vs {values})")]
    LengthMismatch { dates: usize, values: usize },
    #[error("dates not strictly increasing at {0}")]
    Unordered(NaiveDate),
    #[error("non-finite value at {0}")]
    NonFinite(NaiveDate),
    #[error("series has {len} observations, window {window} needs at least {}", window + 1)]
    WindowTooLong { len: usize, window: usize },
    #[error("trailing window ending before {0} has zero variance")]
    ZeroVariance(NaiveDate),
    #[error("window must be at least {min}, got {got}")]
    WindowTooShort { min: usize, got: usize },
    #[error("non-positive price at {0}")]
    NonPositivePrice(NaiveDate),
    #[error("need at least {need} observations, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("no covariate value on or before {0}")]
    NoPriorValue(NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalendarKind {
    Calendar,
    Trading,
}

/// A validated series: strictly increasing dates, one finite value per date.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    kind: CalendarKind,
}

impl DailySeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
        kind: CalendarKind,
    ) -> Result<Self, SeriesError> {
        if dates.len() != values.len() {
            return Err(SeriesError::LengthMismatch {
                dates: dates.len(),
                values: values.len(),
            });
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(SeriesError::Unordered(w[1]));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite(dates[i]));
        }
        Ok(Self {
            dates,
            values,
            kind,
        })
    }

    /// Builds a series from unordered pairs, sorting by date first.
    pub fn from_pairs(
        mut pairs: Vec<(NaiveDate, f64)>,
        kind: CalendarKind,
    ) -> Result<Self, SeriesError> {
        pairs.sort_by_key(|p| p.0);
        let (dates, values) = pairs.into_iter().unzip();
        Self::new(dates, values, kind)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> CalendarKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.dates
            .binary_search(&date)
            .ok()
            .map(|i| self.values[i])
    }

    /// Restricts to dates in `[start, end]`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> DailySeries {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        DailySeries {
            dates: self.dates[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
            kind: self.kind,
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<DailySeries, SeriesError> {
        DailySeries::new(
            self.dates.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
            self.kind,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationKind {
    AbnormalPrice,
    RollingZ,
}

/// A series standardized against a trailing window. Entries without a full
/// window, or whose window is degenerate, are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedSeries {
    pub base: DailySeries,
    pub window: usize,
    pub kind: StandardizationKind,
    values: Vec<Option<f64>>,
}

impl StandardizedSeries {
    pub fn dates(&self) -> &[NaiveDate] {
        self.base.dates()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.base
            .dates()
            .binary_search(&date)
            .ok()
            .and_then(|i| self.values[i])
    }

    /// Carries this series onto `dates` using the last value on or before
    /// each target date.
    pub fn align_to(&self, dates: &[NaiveDate]) -> Result<Vec<Option<f64>>, SeriesError> {
        let idx = carry_forward_indices(self.base.dates(), dates)?;
        Ok(idx.into_iter().map(|i| self.values[i]).collect())
    }
}

/// Mean and sample (n-1) standard deviation.
pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Standard deviations this small relative to the window's magnitude are
/// rounding residue from a constant window.
fn is_degenerate(sd: f64, window: &[f64]) -> bool {
    let scale = window.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    sd <= 64.0 * f64::EPSILON * scale || sd == 0.0
}

fn trailing_z(values: &[f64], t: usize, window: usize) -> Option<f64> {
    let w = &values[t - window..t];
    let (mean, sd) = mean_sd(w);
    if is_degenerate(sd, w) {
        None
    } else {
        Some((values[t] - mean) / sd)
    }
}

/// Rolling z-score of raw values against the preceding `window` entries.
/// The first `window` outputs are `None`, as is any point whose window is
/// constant.
pub fn zscore_values(values: &[f64], window: usize) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|t| {
            if t < window {
                None
            } else {
                trailing_z(values, t, window)
            }
        })
        .collect()
}

/// Price standardized against the trailing `window` closes.
pub fn abnormal_price(
    prices: &DailySeries,
    window: usize,
) -> Result<StandardizedSeries, SeriesError> {
    if window < 2 {
        return Err(SeriesError::WindowTooShort { min: 2, got: window });
    }
    if prices.len() < window + 1 {
        return Err(SeriesError::WindowTooLong {
            len: prices.len(),
            window,
        });
    }
    let v = prices.values();
    let mut out = vec![None; v.len()];
    for (t, slot) in out.iter_mut().enumerate().skip(window) {
        match trailing_z(v, t, window) {
            Some(z) => *slot = Some(z),
            None => return Err(SeriesError::ZeroVariance(prices.dates()[t])),
        }
    }
    Ok(StandardizedSeries {
        base: prices.clone(),
        window,
        kind: StandardizationKind::AbnormalPrice,
        values: out,
    })
}

/// Rolling z-score; degenerate windows produce `None` at that point only.
pub fn rolling_zscore(
    series: &DailySeries,
    window: usize,
) -> Result<StandardizedSeries, SeriesError> {
    if window < 2 {
        return Err(SeriesError::WindowTooShort { min: 2, got: window });
    }
    Ok(StandardizedSeries {
        base: series.clone(),
        window,
        kind: StandardizationKind::RollingZ,
        values: zscore_values(series.values(), window),
    })
}

/// Daily log returns and their squares, both dated at the later day.
pub fn log_return_and_volatility(
    prices: &DailySeries,
) -> Result<(DailySeries, DailySeries), SeriesError> {
    if prices.len() < 2 {
        return Err(SeriesError::TooShort {
            need: 2,
            got: prices.len(),
        });
    }
    if let Some(i) = prices.values().iter().position(|&p| p <= 0.0) {
        return Err(SeriesError::NonPositivePrice(prices.dates()[i]));
    }
    let r: Vec<f64> = prices
        .values()
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    let vol = r.iter().map(|x| x * x).collect();
    let dates = prices.dates()[1..].to_vec();
    Ok((
        DailySeries::new(dates.clone(), r, prices.kind())?,
        DailySeries::new(dates, vol, prices.kind())?,
    ))
}

/// For each target date, the index of the last source date on or before it.
pub fn carry_forward_indices(
    source: &[NaiveDate],
    targets: &[NaiveDate],
) -> Result<Vec<usize>, SeriesError> {
    targets
        .iter()
        .map(|d| {
            let k = source.partition_point(|s| s <= d);
            if k == 0 {
                Err(SeriesError::NoPriorValue(*d))
            } else {
                Ok(k - 1)
            }
        })
        .collect()
}

/// Resamples a calendar-day covariate onto the trading dates of `trading`,
/// carrying the most recent prior value across gaps.
pub fn align_to_trading_days(
    covariate: &DailySeries,
    trading: &DailySeries,
) -> Result<DailySeries, SeriesError> {
    let idx = carry_forward_indices(covariate.dates(), trading.dates())?;
    DailySeries::new(
        trading.dates().to_vec(),
        idx.into_iter().map(|i| covariate.values()[i]).collect(),
        CalendarKind::Trading,
    )
}
