//! CSV emitters for the result tables. Each table is one file with a
//! single header line; unavailable cells are left empty.

use std::io::Write;

use chrono::NaiveDate;

use crate::causality::{CausalityError, GrangerCell, LagCorrelation};
use crate::forecast::{DeltaRow, PredictionRow};
use crate::network::NetworkFeatures;
use crate::volatility::ModelComparison;

pub const CORRELATION_HEADER: [&str; 4] = ["variable", "lag", "rho", "p"];
pub const CAUSALITY_HEADER: [&str; 6] = ["variable", "lag", "target", "F", "p", "flag"];
pub const DELTA_HEADER: [&str; 4] = ["model", "horizon", "rmse", "delta"];
pub const PREDICTION_HEADER: [&str; 4] = ["date", "observed", "predicted", "model"];
pub const EGARCH_HEADER: [&str; 5] = ["parameter", "model0_coef", "model0_t", "modelX_coef", "modelX_t"];
pub const SIGMA_HEADER: [&str; 3] = ["date", "ret", "sigma"];
pub const FEATURES_HEADER: [&str; 4] = ["date", "V", "E", "GC"];

pub type Result<T> = std::result::Result<T, csv::Error>;

fn writer(w: impl Write) -> csv::Writer<impl Write> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_features(rows: &[NetworkFeatures], w: impl Write) -> Result<()> {
    let mut out = writer(w);
    out.write_record(FEATURES_HEADER)?;
    for r in rows {
        out.write_record([r.date.to_string(), r.v.to_string(), r.e.to_string(), r.gc.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One file per target: `(variable, per-lag results)`.
pub fn write_correlations(
    rows: &[(String, Vec<(usize, std::result::Result<LagCorrelation, CausalityError>)>)],
    w: impl Write,
) -> Result<()> {
    let mut out = writer(w);
    out.write_record(CORRELATION_HEADER)?;
    for (var, lags) in rows {
        for (lag, r) in lags {
            let (rho, p) = match r {
                Ok(c) => (num(c.rho), num(c.p_value)),
                Err(_) => (String::new(), String::new()),
            };
            out.write_record([var.clone(), lag.to_string(), rho, p])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `flag` is `yes`/`no` against `alpha`, or the reason a cell has no test.
pub fn write_causality(cells: &[GrangerCell], alpha: f64, w: impl Write) -> Result<()> {
    let mut out = writer(w);
    out.write_record(CAUSALITY_HEADER)?;
    for c in cells {
        let (f, p, flag) = match &c.result {
            Ok(r) => (
                num(r.f_stat),
                num(r.p_value),
                if r.p_value < alpha { "yes" } else { "no" }.to_string(),
            ),
            Err(e) => (String::new(), String::new(), e.to_string()),
        };
        out.write_record([c.variable.clone(), c.lag.to_string(), c.target.clone(), f, p, flag])?;
    }
    out.flush()?;
    Ok(())
}

/// Grid layout: one row per variable, one column per lag, each cell
/// listing the targets (joined by `/`) the variable is significant for.
pub fn write_causality_summary(cells: &[GrangerCell], alpha: f64, max_lag: usize, w: impl Write) -> Result<()> {
    let mut out = writer(w);
    let mut header = vec!["variable".to_string()];
    header.extend((1..=max_lag).map(|l| l.to_string()));
    out.write_record(&header)?;
    let mut vars: Vec<&str> = Vec::new();
    for c in cells {
        if !vars.contains(&c.variable.as_str()) {
            vars.push(&c.variable);
        }
    }
    for v in vars {
        let mut row = vec![v.to_string()];
        for lag in 1..=max_lag {
            let hits: Vec<&str> = cells
                .iter()
                .filter(|c| c.variable == v && c.lag == lag && c.significant(alpha))
                .map(|c| c.target.as_str())
                .collect();
            row.push(hits.join("/"));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_deltas(rows: &[DeltaRow], w: impl Write) -> Result<()> {
    let mut out = writer(w);
    out.write_record(DELTA_HEADER)?;
    for r in rows {
        out.write_record([r.model.to_string(), r.horizon.to_string(), num(r.rmse), num(r.delta)])?;
    }
    out.flush()?;
    Ok(())
}

/// Predictions for a single horizon.
pub fn write_predictions<'a>(rows: impl IntoIterator<Item = &'a PredictionRow>, w: impl Write) -> Result<()> {
    let mut out = writer(w);
    out.write_record(PREDICTION_HEADER)?;
    for r in rows {
        out.write_record([r.date.to_string(), num(r.observed), num(r.predicted), r.model.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Coefficient rows followed by `loglik`, `aic` and `bic` rows, whose
/// t-value columns are empty.
pub fn write_egarch(cmp: &ModelComparison, w: impl Write) -> Result<()> {
    let mut out = writer(w);
    out.write_record(EGARCH_HEADER)?;
    for r in &cmp.rows {
        let (c0, t0) = match r.model0 {
            Some((c, t)) => (num(c), opt(t)),
            None => (String::new(), String::new()),
        };
        let (cx, tx) = match r.model_x {
            Some((c, t)) => (num(c), opt(t)),
            None => (String::new(), String::new()),
        };
        out.write_record([r.parameter.clone(), c0, t0, cx, tx])?;
    }
    for (name, (a, b)) in [("loglik", cmp.loglik), ("aic", cmp.aic_norm), ("bic", cmp.bic_norm)] {
        out.write_record([name.to_string(), num(a), String::new(), num(b), String::new()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sigma(dates: &[NaiveDate], returns: &[f64], sigma2: &[f64], w: impl Write) -> Result<()> {
    let mut out = writer(w);
    out.write_record(SIGMA_HEADER)?;
    for ((d, r), s2) in dates.iter().zip(returns).zip(sigma2) {
        out.write_record([d.to_string(), num(*r), num(s2.sqrt())])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causality::GrangerResult;
    use crate::forecast::ModelSpec;

    fn text(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    fn cell(var: &str, lag: usize, target: &str, p: Option<f64>) -> GrangerCell {
        GrangerCell {
            variable: var.into(),
            lag,
            target: target.into(),
            result: match p {
                Some(p_value) => Ok(GrangerResult {
                    lag_order: lag,
                    rss_restricted: 2.0,
                    rss_unrestricted: 1.0,
                    f_stat: 3.5,
                    p_value,
                    n_effective: 50,
                }),
                None => Err(CausalityError::InsufficientData { need: 16, got: 10 }),
            },
        }
    }

    #[test]
    fn causality_rows_and_summary() {
        let cells = vec![
            cell("E", 1, "AP", Some(0.05)),
            cell("E", 1, "Vol", Some(0.2)),
            cell("E", 2, "AP", Some(0.01)),
            cell("E", 2, "Vol", Some(0.01)),
            cell("GC", 1, "AP", None),
        ];
        let t = text(|b| write_causality(&cells, 0.10, b));
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "variable,lag,target,F,p,flag");
        assert_eq!(lines[1], "E,1,AP,3.5,0.05,yes");
        assert_eq!(lines[2], "E,1,Vol,3.5,0.2,no");
        assert!(lines[5].starts_with("GC,1,AP,,,") && lines[5].contains("insufficient data"));
        let s = text(|b| write_causality_summary(&cells, 0.10, 2, b));
        assert_eq!(s, "variable,1,2\nE,AP,AP/Vol\nGC,,\n");
    }

    #[test]
    fn delta_and_predictions() {
        let rows = vec![DeltaRow {
            model: ModelSpec::P3,
            horizon: 2,
            rmse: 0.5,
            delta: 12.5,
            n_test: 10,
        }];
        assert_eq!(text(|b| write_deltas(&rows, b)), "model,horizon,rmse,delta\nP3,2,0.5,12.5\n");
        let p = [PredictionRow {
            date: NaiveDate::from_ymd_opt(2020, 3, 2).unwrap(),
            observed: 1.0,
            predicted: 0.75,
            model: ModelSpec::P0,
            horizon: 1,
        }];
        assert_eq!(
            text(|b| write_predictions(&p, b)),
            "date,observed,predicted,model\n2020-03-02,1,0.75,P0\n"
        );
    }
}
