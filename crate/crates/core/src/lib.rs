//! Daily county-level epidemic spread networks, their motif census, and the
//! statistics used to relate them to an equity index.
//!
//! The crate is organised bottom-up:
//!
//! * [`timeseries`]: date-indexed series, abnormal-price and rolling z-score
//!   standardization, log returns, trading-day alignment.
//! * [`ingest`]: CSV readers for county cases, county centroids, prices and
//!   search trends.
//! * [`network`]: the daily proximity graph and its scalar features.
//! * [`motifs`]: induced 3- and 4-node connected subgraph census.
//! * [`causality`]: lagged Spearman correlation and Granger F-tests.
//! * [`forecast`]: a seeded random-forest regressor and the model menu used
//!   for the abnormal-price forecasting comparison.
//! * [`volatility`]: EGARCH(1,1) maximum likelihood with optional exogenous
//!   regressors.
//! * [`pipeline`]: configuration, stage orchestration and table emission.

pub mod causality;
pub mod forecast;
pub mod ingest;
pub mod motifs;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tables;
pub mod timeseries;
pub mod volatility;

mod linalg;

pub use causality::{GrangerResult, LagCorrelation};
pub use ingest::{CountyDay, CountyGeo, Fips};
pub use motifs::{CensusRow, MotifCensus};
pub use network::{NetworkFeatures, SimpleGraph, SpreadGraph};
pub use timeseries::{CalendarKind, DailySeries, StandardizedSeries};
pub use volatility::{EgarchFit, EgarchSpec};
