//! CSV readers (and matching writers) for the external data products.
//!
//! Every reader accepts `\n` or `\r\n` line endings, requires a header row
//! with the exact column names, and reports the 1-based line number of any
//! row it cannot parse.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{CalendarKind, DailySeries, SeriesError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("missing column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("duplicate date {date} for {key}")]
    DuplicateDate { date: NaiveDate, key: String },
    #[error("duplicate fips {0}")]
    DuplicateFips(Fips),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Five-digit county identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fips(pub u32);

impl fmt::Display for Fips {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:05}", self.0)
    }
}

impl FromStr for Fips {
    type Err = String;

    /// Accepts zero-padded or bare integer codes ("01001" or "1001").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s.len() > 5 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("invalid fips `{s}`"));
        }
        s.parse().map(Fips).map_err(|e| format!("invalid fips `{s}`: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountyDay {
    pub date: NaiveDate,
    pub county: String,
    pub state: String,
    pub fips: Fips,
    pub cumulative_cases: u64,
    pub cumulative_deaths: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountyGeo {
    pub fips: Fips,
    pub name: String,
    pub state: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// Parsed county file plus what was set aside while parsing.
#[derive(Debug, Clone, Default)]
pub struct CountyCases {
    /// Located rows, sorted by (date, fips), monotone per county.
    pub records: Vec<CountyDay>,
    /// Rows without a fips code.
    pub dropped_without_fips: usize,
    /// Per-date (cases, deaths) summed over rows without a fips code.
    pub unlocated: BTreeMap<NaiveDate, (u64, u64)>,
    /// Number of cumulative values raised by the running-maximum repair.
    pub repairs: usize,
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, IngestError> {
    File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Table<R: Read> {
    reader: csv::Reader<R>,
    columns: Vec<usize>,
}

impl<R: Read> Table<R> {
    fn new(rdr: R, names: &[&'static str]) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(rdr);
        let headers = reader.headers()?.clone();
        if headers.is_empty() {
            return Err(IngestError::EmptyFile);
        }
        let columns = names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h.trim_start_matches('\u{feff}') == *n)
                    .ok_or(IngestError::MissingColumn(n))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { reader, columns })
    }

    /// Visits each row as (line number, selected fields in `names` order).
    fn for_each(
        mut self,
        mut f: impl FnMut(u64, &[&str]) -> Result<(), IngestError>,
    ) -> Result<usize, IngestError> {
        let mut rows = 0;
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    return Err(IngestError::MalformedRow {
                        line,
                        reason: e.to_string(),
                    });
                }
            }
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let mut fields: Vec<&str> = Vec::with_capacity(self.columns.len());
            for &c in &self.columns {
                match record.get(c) {
                    Some(v) => fields.push(v),
                    None => {
                        return Err(IngestError::MalformedRow {
                            line,
                            reason: format!("expected at least {} fields", c + 1),
                        })
                    }
                }
            }
            f(line, &fields)?;
            rows += 1;
        }
        if rows == 0 {
            return Err(IngestError::EmptyFile);
        }
        Ok(rows)
    }
}

fn malformed(line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn parse_date(line: u64, s: &str) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| malformed(line, format!("date `{s}`: {e}")))
}

fn parse_f64(line: u64, s: &str) -> Result<f64, IngestError> {
    let v: f64 = s
        .parse()
        .map_err(|_| malformed(line, format!("number `{s}`")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed(line, format!("non-finite `{s}`")))
    }
}

fn parse_count(line: u64, s: &str) -> Result<u64, IngestError> {
    if s.is_empty() {
        return Ok(0);
    }
    s.parse()
        .map_err(|_| malformed(line, format!("count `{s}`")))
}

pub fn read_county_cases(path: &Path) -> Result<CountyCases, IngestError> {
    parse_county_cases(open(path)?)
}

pub fn parse_county_cases(rdr: impl Read) -> Result<CountyCases, IngestError> {
    let table = Table::new(rdr, &["date", "county", "state", "fips", "cases", "deaths"])?;
    let mut out = CountyCases::default();
    table.for_each(|line, f| {
        let date = parse_date(line, f[0])?;
        let cases = parse_count(line, f[4])?;
        let deaths = parse_count(line, f[5])?;
        if f[3].is_empty() {
            out.dropped_without_fips += 1;
            let slot = out.unlocated.entry(date).or_default();
            slot.0 += cases;
            slot.1 += deaths;
            return Ok(());
        }
        let fips = f[3].parse().map_err(|e: String| malformed(line, e))?;
        out.records.push(CountyDay {
            date,
            county: f[1].to_string(),
            state: f[2].to_string(),
            fips,
            cumulative_cases: cases,
            cumulative_deaths: deaths,
        });
        Ok(())
    })?;

    out.records.sort_by_key(|r| (r.fips, r.date));
    for w in out.records.windows(2) {
        if w[0].fips == w[1].fips && w[0].date == w[1].date {
            return Err(IngestError::DuplicateDate {
                date: w[0].date,
                key: w[0].fips.to_string(),
            });
        }
    }
    out.repairs = repair_monotone(&mut out.records);
    if out.repairs > 0 {
        log::warn!(
            "raised {} decreasing cumulative values to the running maximum",
            out.repairs
        );
    }
    out.records.sort_by_key(|r| (r.date, r.fips));
    if out.dropped_without_fips > 0 {
        log::info!("dropped {} rows without fips", out.dropped_without_fips);
    }
    Ok(out)
}

/// Running-maximum repair over records sorted by (fips, date).
fn repair_monotone(records: &mut [CountyDay]) -> usize {
    let mut repairs = 0;
    for i in 1..records.len() {
        let (head, tail) = records.split_at_mut(i);
        let prev = &head[i - 1];
        let cur = &mut tail[0];
        if prev.fips != cur.fips {
            continue;
        }
        if cur.cumulative_cases < prev.cumulative_cases {
            log::debug!(
                "{} {}: cases {} -> {}",
                cur.fips,
                cur.date,
                cur.cumulative_cases,
                prev.cumulative_cases
            );
            cur.cumulative_cases = prev.cumulative_cases;
            repairs += 1;
        }
        if cur.cumulative_deaths < prev.cumulative_deaths {
            cur.cumulative_deaths = prev.cumulative_deaths;
            repairs += 1;
        }
    }
    repairs
}

pub fn write_county_cases(records: &[CountyDay], w: impl Write) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["date", "county", "state", "fips", "cases", "deaths"])?;
    for r in records {
        wtr.write_record([
            r.date.to_string(),
            r.county.clone(),
            r.state.clone(),
            r.fips.to_string(),
            r.cumulative_cases.to_string(),
            r.cumulative_deaths.to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: PathBuf::new(),
        source,
    })?;
    Ok(())
}

fn group_by_fips(records: &[CountyDay]) -> BTreeMap<Fips, Vec<&CountyDay>> {
    let mut by: BTreeMap<Fips, Vec<&CountyDay>> = BTreeMap::new();
    for r in records {
        by.entry(r.fips).or_default().push(r);
    }
    for v in by.values_mut() {
        v.sort_by_key(|r| r.date);
    }
    by
}

/// Daily new cases per county. The first observed day's count is its
/// cumulative value.
pub fn new_cases(records: &[CountyDay]) -> BTreeMap<Fips, DailySeries> {
    group_by_fips(records)
        .into_iter()
        .map(|(fips, rows)| {
            let mut prev = 0u64;
            let (dates, values) = rows
                .iter()
                .map(|r| {
                    let new = r.cumulative_cases.saturating_sub(prev);
                    prev = r.cumulative_cases;
                    (r.date, new as f64)
                })
                .unzip();
            let s = DailySeries::new(dates, values, CalendarKind::Calendar)
                .expect("records are date-sorted and unique per fips");
            (fips, s)
        })
        .collect()
}

/// Transposes per-county new cases into per-date maps.
pub fn new_cases_by_date(records: &[CountyDay]) -> BTreeMap<NaiveDate, BTreeMap<Fips, u64>> {
    let mut out: BTreeMap<NaiveDate, BTreeMap<Fips, u64>> = BTreeMap::new();
    for (fips, s) in new_cases(records) {
        for (d, v) in s.dates().iter().zip(s.values()) {
            out.entry(*d).or_default().insert(fips, *v as u64);
        }
    }
    out
}

/// Per-date cumulative cases by county.
pub fn cumulative_by_date(records: &[CountyDay]) -> BTreeMap<NaiveDate, BTreeMap<Fips, u64>> {
    let mut out: BTreeMap<NaiveDate, BTreeMap<Fips, u64>> = BTreeMap::new();
    for r in records {
        out.entry(r.date).or_default().insert(r.fips, r.cumulative_cases);
    }
    out
}

/// National aggregates, including rows that carry no fips code.
#[derive(Debug, Clone)]
pub struct NationalTotals {
    pub total_cases: DailySeries,
    pub new_cases: DailySeries,
    pub total_deaths: DailySeries,
    pub new_deaths: DailySeries,
}

pub fn national_totals(cases: &CountyCases) -> Result<NationalTotals, IngestError> {
    let mut sums: BTreeMap<NaiveDate, (u64, u64)> = cases.unlocated.clone();
    for r in &cases.records {
        let s = sums.entry(r.date).or_default();
        s.0 += r.cumulative_cases;
        s.1 += r.cumulative_deaths;
    }
    let dates: Vec<NaiveDate> = sums.keys().copied().collect();
    let tc: Vec<f64> = sums.values().map(|v| v.0 as f64).collect();
    let td: Vec<f64> = sums.values().map(|v| v.1 as f64).collect();
    let diff = |xs: &[f64]| -> Vec<f64> {
        let mut prev = 0.0;
        xs.iter()
            .map(|&x| {
                let d = (x - prev).max(0.0);
                prev = x;
                d
            })
            .collect()
    };
    let k = CalendarKind::Calendar;
    Ok(NationalTotals {
        new_cases: DailySeries::new(dates.clone(), diff(&tc), k)?,
        new_deaths: DailySeries::new(dates.clone(), diff(&td), k)?,
        total_cases: DailySeries::new(dates.clone(), tc, k)?,
        total_deaths: DailySeries::new(dates, td, k)?,
    })
}

pub fn read_price_csv(path: &Path) -> Result<DailySeries, IngestError> {
    parse_price_csv(open(path)?)
}

/// Closing prices; rows may appear in any order but dates must be unique.
pub fn parse_price_csv(rdr: impl Read) -> Result<DailySeries, IngestError> {
    let mut pairs = Vec::new();
    Table::new(rdr, &["date", "close"])?.for_each(|line, f| {
        pairs.push((parse_date(line, f[0])?, parse_f64(line, f[1])?));
        Ok(())
    })?;
    pairs.sort_by_key(|p| p.0);
    if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(IngestError::DuplicateDate {
            date: w[0].0,
            key: "close".into(),
        });
    }
    Ok(DailySeries::from_pairs(pairs, CalendarKind::Trading)?)
}

pub fn write_price_csv(series: &DailySeries, path: &Path) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["date", "close"])?;
    for (d, v) in series.dates().iter().zip(series.values()) {
        wtr.write_record([d.to_string(), v.to_string()])?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.into(),
        source,
    })
}

fn parse_long(
    rdr: impl Read,
    key_column: &'static str,
) -> Result<BTreeMap<String, DailySeries>, IngestError> {
    let mut by: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    Table::new(rdr, &["date", key_column, "value"])?.for_each(|line, f| {
        let date = parse_date(line, f[0])?;
        if f[1].is_empty() {
            return Err(malformed(line, format!("empty {key_column}")));
        }
        let v = parse_f64(line, f[2])?;
        by.entry(f[1].to_string()).or_default().push((date, v));
        Ok(())
    })?;
    by.into_iter()
        .map(|(k, mut pairs)| {
            pairs.sort_by_key(|p| p.0);
            if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(IngestError::DuplicateDate {
                    date: w[0].0,
                    key: k,
                });
            }
            let s = DailySeries::from_pairs(pairs, CalendarKind::Calendar)?;
            Ok((k, s))
        })
        .collect()
}

pub fn read_trends_csv(path: &Path) -> Result<BTreeMap<String, DailySeries>, IngestError> {
    parse_trends_csv(open(path)?)
}

/// Search volumes in long format (`date,query,value`), one series per query.
pub fn parse_trends_csv(rdr: impl Read) -> Result<BTreeMap<String, DailySeries>, IngestError> {
    parse_long(rdr, "query")
}

pub fn read_covid_csv(path: &Path) -> Result<BTreeMap<String, DailySeries>, IngestError> {
    parse_covid_csv(open(path)?)
}

/// Aggregate case/death variables in long format (`date,variable,value`).
pub fn parse_covid_csv(rdr: impl Read) -> Result<BTreeMap<String, DailySeries>, IngestError> {
    parse_long(rdr, "variable")
}

pub fn write_long_csv(
    series: &BTreeMap<String, DailySeries>,
    key_column: &str,
    path: &Path,
) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["date", key_column, "value"])?;
    for (k, s) in series {
        for (d, v) in s.dates().iter().zip(s.values()) {
            wtr.write_record([d.to_string(), k.clone(), v.to_string()])?;
        }
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.into(),
        source,
    })
}

pub fn read_geo_csv(path: &Path) -> Result<Vec<CountyGeo>, IngestError> {
    parse_geo_csv(open(path)?)
}

pub fn parse_geo_csv(rdr: impl Read) -> Result<Vec<CountyGeo>, IngestError> {
    let mut out: Vec<CountyGeo> = Vec::new();
    Table::new(rdr, &["fips", "name", "state", "lat", "lon"])?.for_each(|line, f| {
        let fips = f[0].parse().map_err(|e: String| malformed(line, e))?;
        let latitude = parse_f64(line, f[3])?;
        let longitude = parse_f64(line, f[4])?;
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(malformed(line, "coordinates out of range"));
        }
        out.push(CountyGeo {
            fips,
            name: f[1].to_string(),
            state: f[2].to_string(),
            latitude,
            longitude,
        });
        Ok(())
    })?;
    out.sort_by_key(|g| g.fips);
    if let Some(w) = out.windows(2).find(|w| w[0].fips == w[1].fips) {
        return Err(IngestError::DuplicateFips(w[0].fips));
    }
    Ok(out)
}

pub fn write_geo_csv(geo: &[CountyGeo], path: &Path) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["fips", "name", "state", "lat", "lon"])?;
    for g in geo {
        wtr.write_record([
            g.fips.to_string(),
            g.name.clone(),
            g.state.clone(),
            g.latitude.to_string(),
            g.longitude.to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "date,county,state,fips,cases,deaths\n";

    fn cases(body: &str) -> Result<CountyCases, IngestError> {
        parse_county_cases(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn fips_parsing() {
        assert_eq!("01001".parse::<Fips>(), Ok(Fips(1001)));
        assert_eq!("1001".parse::<Fips>(), Ok(Fips(1001)));
        assert_eq!(Fips(1001).to_string(), "01001");
        assert!("".parse::<Fips>().is_err());
        assert!("12a45".parse::<Fips>().is_err());
        assert!("123456".parse::<Fips>().is_err());
    }

    #[test]
    fn reads_well_formed_rows() {
        let c = cases(
            "2020-03-01,Snohomish,Washington,53061,2,0\n\
             2020-03-01,King,Washington,53033,10,1\r\n\
             2020-03-02,King,Washington,53033,14,2\n",
        )
        .unwrap();
        assert_eq!(c.records.len(), 3);
        assert_eq!(c.dropped_without_fips, 0);
        assert_eq!(c.records[0].fips, Fips(53033));
        assert_eq!(c.records[2].cumulative_deaths, 2);
    }

    #[test]
    fn drops_rows_without_fips() {
        let c = cases(
            "2020-03-01,Unknown,Rhode Island,,3,0\n\
             2020-03-01,King,Washington,53033,10,1\n",
        )
        .unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.dropped_without_fips, 1);
        assert_eq!(c.unlocated[&c.records[0].date], (3, 0));
    }

    #[test]
    fn repairs_decreasing_cumulative_counts() {
        let c = cases(
            "2020-03-01,King,Washington,53033,12,0\n\
             2020-03-02,King,Washington,53033,10,0\n",
        )
        .unwrap();
        let v: Vec<u64> = c.records.iter().map(|r| r.cumulative_cases).collect();
        assert_eq!(v, vec![12, 12]);
        assert_eq!(c.repairs, 1);
        let new = new_cases(&c.records);
        assert_eq!(new[&Fips(53033)].values(), &[12.0, 0.0]);
    }

    #[test]
    fn malformed_and_empty() {
        match cases("2020-03-01,King,Washington,53033,many,0\n") {
            Err(IngestError::MalformedRow { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match cases("2020-3-1x,King,Washington,53033,1,0\n") {
            Err(IngestError::MalformedRow { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(cases(""), Err(IngestError::EmptyFile)));
        assert!(matches!(
            parse_county_cases("".as_bytes()),
            Err(IngestError::EmptyFile)
        ));
        assert!(matches!(
            parse_county_cases("date,county\n2020-01-01,x\n".as_bytes()),
            Err(IngestError::MissingColumn("state"))
        ));
    }

    #[test]
    fn new_cases_first_differences() {
        let c = cases(
            "2020-03-01,A,S,00001,0,0\n2020-03-02,A,S,00001,5,0\n\
             2020-03-03,A,S,00001,5,0\n2020-03-04,A,S,00001,12,0\n\
             2020-03-04,B,S,00002,9,0\n",
        )
        .unwrap();
        let new = new_cases(&c.records);
        assert_eq!(new[&Fips(1)].values(), &[0.0, 5.0, 0.0, 7.0]);
        assert_eq!(new[&Fips(2)].values(), &[9.0]);
        let by_date = new_cases_by_date(&c.records);
        let d4 = NaiveDate::from_ymd_opt(2020, 3, 4).unwrap();
        assert_eq!(by_date[&d4][&Fips(1)], 7);
        assert_eq!(by_date[&d4][&Fips(2)], 9);
    }

    #[test]
    fn national_totals_include_unlocated() {
        let c = cases(
            "2020-03-01,New York City,New York,,100,1\n\
             2020-03-01,King,Washington,53033,10,1\n\
             2020-03-02,New York City,New York,,150,3\n\
             2020-03-02,King,Washington,53033,14,2\n",
        )
        .unwrap();
        let t = national_totals(&c).unwrap();
        assert_eq!(t.total_cases.values(), &[110.0, 164.0]);
        assert_eq!(t.new_cases.values(), &[110.0, 54.0]);
        assert_eq!(t.new_deaths.values(), &[2.0, 3.0]);
    }

    #[test]
    fn price_csv() {
        let s = parse_price_csv("date,close\n2020-01-03,3.5\n2020-01-02,3.0\n".as_bytes()).unwrap();
        assert_eq!(s.values(), &[3.0, 3.5]);
        assert_eq!(s.kind(), CalendarKind::Trading);
        assert!(matches!(
            parse_price_csv("date,close\n2020-01-03,3.5\n2020-01-03,3.0\n".as_bytes()),
            Err(IngestError::DuplicateDate { .. })
        ));
    }

    #[test]
    fn trends_csv() {
        let m = parse_trends_csv(
            "date,query,value\n2020-01-02,Covid-19 US,0\n2020-01-02,Coronavirus US,3\n\
             2020-01-03,Covid-19 US,1\n"
                .as_bytes(),
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["Covid-19 US"].values(), &[0.0, 1.0]);
    }

    #[test]
    fn geo_csv() {
        let g = parse_geo_csv(
            "fips,name,state,lat,lon\n53033,King,WA,47.49,-121.83\n06037,Los Angeles,CA,34.3,-118.2\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(g[0].fips, Fips(6037));
        assert!(matches!(
            parse_geo_csv("fips,name,state,lat,lon\n1,a,b,0,0\n00001,a,b,1,1\n".as_bytes()),
            Err(IngestError::DuplicateFips(Fips(1)))
        ));
        assert!(matches!(
            parse_geo_csv("fips,name,state,lat,lon\n1,a,b,95,0\n".as_bytes()),
            Err(IngestError::MalformedRow { .. })
        ));
    }

    fn arb_records() -> impl Strategy<Value = Vec<(u32, u8, Vec<u16>)>> {
        prop::collection::vec(
            (1u32..99999, 0u8..20, prop::collection::vec(0u16..500, 1..15)),
            1..8,
        )
    }

    fn build(spec: &[(u32, u8, Vec<u16>)]) -> String {
        let start = NaiveDate::from_ymd_opt(2020, 1, 21).unwrap();
        let mut body = String::from(HEADER);
        let mut seen = std::collections::BTreeSet::new();
        for (fips, offset, counts) in spec {
            if !seen.insert(*fips) {
                continue;
            }
            for (i, c) in counts.iter().enumerate() {
                let d = start + chrono::Duration::days(*offset as i64 + i as i64);
                body.push_str(&format!("{d},C{fips},S,{fips:05},{c},{}\n", c / 10));
            }
        }
        body
    }

    proptest! {
        #[test]
        fn new_cases_sum_to_final_cumulative(spec in arb_records()) {
            let c = parse_county_cases(build(&spec).as_bytes()).unwrap();
            let new = new_cases(&c.records);
            for (fips, s) in &new {
                let last = c.records.iter().filter(|r| r.fips == *fips).map(|r| r.cumulative_cases).max().unwrap();
                prop_assert_eq!(s.values().iter().sum::<f64>() as u64, last);
                prop_assert!(s.values().iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn county_csv_round_trip(spec in arb_records()) {
            let c = parse_county_cases(build(&spec).as_bytes()).unwrap();
            let mut buf = Vec::new();
            write_county_cases(&c.records, &mut buf).unwrap();
            let again = parse_county_cases(buf.as_slice()).unwrap();
            prop_assert_eq!(again.records, c.records);
            prop_assert_eq!(again.repairs, 0);
        }
    }
}
