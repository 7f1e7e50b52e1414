//! Deterministic synthetic inputs in the same file formats as the real
//! sources: county cumulative counts, county centroids, daily closes,
//! search volumes and world aggregates.
//!
//! Counties sit in a few geographic clusters and follow logistic outbreak
//! curves with staggered onsets. Log returns follow an EGARCH(1,1) whose
//! log-variance loads on national case growth, so the covariates carry
//! some real signal.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::ingest::{
    write_county_cases, write_geo_csv, write_long_csv, write_price_csv, CountyDay, CountyGeo, Fips,
    IngestError,
};
use crate::timeseries::{CalendarKind, DailySeries};
use crate::volatility::{simulate, EgarchParams};

pub const SEARCH_QUERIES: [&str; 3] = ["Covid-19 US", "Covid 19 US", "Covid-19 World"];
pub const WORLD_VARIABLES: [&str; 4] = [
    "world_total_cases",
    "world_new_cases",
    "world_total_deaths",
    "world_new_deaths",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_counties: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// First trading day of the price history.
    pub price_start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 20200411,
            n_counties: 60,
            start: NaiveDate::from_ymd_opt(2020, 1, 21).unwrap(),
            end: NaiveDate::from_ymd_opt(2020, 5, 29).unwrap(),
            price_start: NaiveDate::from_ymd_opt(2019, 5, 1).unwrap(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub cases: Vec<CountyDay>,
    pub geo: Vec<CountyGeo>,
    pub prices: DailySeries,
    pub trends: BTreeMap<String, DailySeries>,
    pub covid: BTreeMap<String, DailySeries>,
}

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub cases: PathBuf,
    pub geo: PathBuf,
    pub prices: PathBuf,
    pub trends: PathBuf,
    pub covid: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            cases: dir.join("us-counties.csv"),
            geo: dir.join("county-geo.csv"),
            prices: dir.join("prices.csv"),
            trends: dir.join("trends.csv"),
            covid: dir.join("covid-world.csv"),
        }
    }
}

fn days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start.iter_days().take_while(|d| *d <= end).collect()
}

fn weekdays(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    days(start, end)
        .into_iter()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

struct County {
    geo: CountyGeo,
    onset: f64,
    rate: f64,
    size: f64,
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clusters = [
        (40.7, -74.0, "NY"),
        (41.9, -87.6, "IL"),
        (34.0, -118.2, "CA"),
        (29.8, -95.4, "TX"),
        (47.6, -122.3, "WA"),
    ];
    let jitter = Normal::new(0.0, 0.6).unwrap();
    let mut counties = Vec::with_capacity(cfg.n_counties);
    for i in 0..cfg.n_counties {
        let (lat, lon, state) = clusters[i % clusters.len()];
        let fips = Fips(1001 + 2 * i as u32);
        counties.push(County {
            geo: CountyGeo {
                fips,
                name: format!("County {i}"),
                state: state.to_string(),
                latitude: lat + jitter.sample(&mut rng),
                longitude: lon + jitter.sample(&mut rng),
            },
            onset: rng.random_range(10.0..75.0),
            rate: rng.random_range(0.12..0.3),
            size: 10f64.powf(rng.random_range(2.5..4.5)),
        });
    }

    let dates = days(cfg.start, cfg.end);
    let mut cases = Vec::new();
    let mut us_new = vec![0.0; dates.len()];
    for c in &counties {
        let (mut cum, mut deaths) = (0u64, 0u64);
        let mut started = false;
        for (t, d) in dates.iter().enumerate() {
            let mean_cum = c.size / (1.0 + (-(t as f64 - c.onset) * c.rate).exp());
            let target = mean_cum.floor() as u64;
            if target > cum {
                let step = (target - cum) as f64;
                let noisy = Poisson::new(step).map(|p| p.sample(&mut rng) as u64).unwrap_or(0);
                cum += noisy;
            }
            let death_target = (0.03 * cum as f64) as u64;
            deaths = deaths.max(death_target);
            if cum == 0 && !started {
                continue;
            }
            if !started {
                started = true;
            }
            cases.push(CountyDay {
                date: *d,
                county: c.geo.name.clone(),
                state: c.geo.state.clone(),
                fips: c.geo.fips,
                cumulative_cases: cum,
                cumulative_deaths: deaths,
            });
        }
    }
    cases.sort_by_key(|r| (r.date, r.fips));
    let mut prev: BTreeMap<Fips, u64> = BTreeMap::new();
    for r in &cases {
        let i = (r.date - cfg.start).num_days() as usize;
        let p = prev.insert(r.fips, r.cumulative_cases).unwrap_or(0);
        us_new[i] += r.cumulative_cases.saturating_sub(p) as f64;
    }

    // Returns: EGARCH whose log-variance rises with national case growth.
    let trading = weekdays(cfg.price_start, cfg.end);
    let growth: Vec<f64> = trading
        .iter()
        .map(|d| {
            if *d < cfg.start {
                return 0.0;
            }
            let i = ((*d - cfg.start).num_days() as usize).min(dates.len() - 1);
            let a = us_new[i];
            let b = if i >= 7 { us_new[i - 7] } else { 0.0 };
            ((1.0 + a) / (1.0 + b)).ln().clamp(-3.0, 3.0)
        })
        .collect();
    let params = EgarchParams {
        mu: 0.0003,
        omega0: -0.45,
        omega: -0.1,
        gamma: 0.15,
        tau: 0.95,
        lambda: vec![0.25],
    };
    let r = simulate(&params, trading.len() - 1, 200, &[growth[1..].to_vec()], &mut rng);
    let mut price = 3000.0;
    let mut closes = vec![price];
    for x in &r {
        price *= x.exp();
        closes.push((price * 100.0).round() / 100.0);
    }
    let prices = DailySeries::new(trading, closes, CalendarKind::Trading).expect("valid closes");

    // Search volume tracks smoothed national cases on a 0..100 scale.
    let cal = days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), cfg.end);
    let peak = us_new.iter().cloned().fold(1.0, f64::max);
    let mut trends = BTreeMap::new();
    for (q, scale) in SEARCH_QUERIES.iter().zip([1.0, 0.6, 0.8]) {
        let vals: Vec<f64> = cal
            .iter()
            .map(|d| {
                let base = if *d < cfg.start {
                    0.0
                } else {
                    let i = (*d - cfg.start).num_days() as usize;
                    let lo = i.saturating_sub(6);
                    us_new[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64 / peak
                };
                let noise: f64 = rng.random_range(0.0..3.0);
                (scale * 100.0 * base + noise).round().clamp(0.0, 100.0)
            })
            .collect();
        trends.insert(
            q.to_string(),
            DailySeries::new(cal.clone(), vals, CalendarKind::Calendar).unwrap(),
        );
    }

    // World aggregates lead the US outbreak by about three weeks.
    let world_len = cal.len();
    let mut wn = Vec::with_capacity(world_len);
    let mut wd = Vec::with_capacity(world_len);
    for t in 0..world_len {
        let m = 80_000.0 / (1.0 + (-(t as f64 - 60.0) * 0.09).exp());
        let level = (m * (0.9 + 0.2 * rng.random::<f64>())).round();
        wn.push(level);
        wd.push((0.05 * level * (0.8 + 0.4 * rng.random::<f64>())).round());
    }
    let cumsum = |v: &[f64]| {
        v.iter()
            .scan(0.0, |s, x| {
                *s += x;
                Some(*s)
            })
            .collect::<Vec<f64>>()
    };
    let mut covid = BTreeMap::new();
    for (name, vals) in WORLD_VARIABLES.iter().zip([cumsum(&wn), wn.clone(), cumsum(&wd), wd.clone()]) {
        covid.insert(
            name.to_string(),
            DailySeries::new(cal.clone(), vals, CalendarKind::Calendar).unwrap(),
        );
    }

    let mut geo: Vec<CountyGeo> = counties.into_iter().map(|c| c.geo).collect();
    geo.sort_by_key(|g| g.fips);
    SynthData {
        cases,
        geo,
        prices,
        trends,
        covid,
    }
}

pub fn write_fixture(dir: &Path, data: &SynthData) -> Result<FixturePaths, IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.into(),
        source,
    })?;
    let paths = FixturePaths::in_dir(dir);
    let f = std::fs::File::create(&paths.cases).map_err(|source| IngestError::Io {
        path: paths.cases.clone(),
        source,
    })?;
    write_county_cases(&data.cases, std::io::BufWriter::new(f))?;
    write_geo_csv(&data.geo, &paths.geo)?;
    write_price_csv(&data.prices, &paths.prices)?;
    write_long_csv(&data.trends, "query", &paths.trends)?;
    write_long_csv(&data.covid, "variable", &paths.covid)?;
    Ok(paths)
}
