//! Daily county proximity graphs.
//!
//! A county becomes a node when its new cases reach `gamma`; two nodes are
//! joined when both reach `lambda` new cases and their centroids lie less
//! than `delta` miles apart.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CountyGeo, Fips};

pub const EARTH_RADIUS_MILES: f64 = 3958.7613;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge endpoint {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("fips {0} listed twice")]
    DuplicateNode(Fips),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    MalformedDump {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

/// Great-circle distance in miles.
pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    // atan2 keeps precision near the antipode, where asin(sqrt(h)) does not.
    2.0 * EARTH_RADIUS_MILES * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Undirected simple graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimpleGraph {
    adj: Vec<Vec<u32>>,
    m: usize,
}

impl SimpleGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
            m: 0,
        }
    }

    /// Duplicate edges are merged; self-loops are rejected.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, NetworkError> {
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            if u == v {
                return Err(NetworkError::SelfLoop(u, v));
            }
            if u >= n || v >= n {
                return Err(NetworkError::NodeOutOfRange(u.max(v), n));
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        let mut m2 = 0;
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
            m2 += a.len();
        }
        Ok(Self { adj, m: m2 / 2 })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.m
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&(v as u32)).is_ok()
    }

    /// Edges as (u, v) with u < v, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, a)| {
            a.iter()
                .map(|&v| v as usize)
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Graph with node `v` renamed to `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self::from_edges(
            self.node_count(),
            self.edges().map(|(u, v)| (perm[u], perm[v])),
        )
        .expect("permutation preserves simplicity")
    }
}

/// One day's spread network.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadGraph {
    pub date: NaiveDate,
    /// Nodes sorted by fips.
    pub nodes: Vec<(Fips, u64)>,
    pub graph: SimpleGraph,
}

impl SpreadGraph {
    pub fn features(&self) -> NetworkFeatures {
        NetworkFeatures {
            date: self.date,
            v: self.graph.node_count(),
            e: self.graph.edge_count(),
            gc: largest_component(&self.graph),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkFeatures {
    pub date: NaiveDate,
    pub v: usize,
    pub e: usize,
    pub gc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Minimum new cases for a county to be a node.
    pub gamma: u64,
    /// Minimum new cases at both endpoints of an edge.
    pub lambda: u64,
    /// Edges require centroid distance strictly below this many miles.
    pub delta_miles: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            gamma: 5,
            lambda: 5,
            delta_miles: 100.0,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.gamma < 1 || self.lambda < 1 {
            return Err(NetworkError::InvalidParams(
                "gamma and lambda must be at least 1".into(),
            ));
        }
        if !(self.delta_miles > 0.0 && self.delta_miles.is_finite()) {
            return Err(NetworkError::InvalidParams("delta must be positive".into()));
        }
        Ok(())
    }
}

pub type GeoIndex = BTreeMap<Fips, GeoPoint>;

pub fn geo_index(geo: &[CountyGeo]) -> GeoIndex {
    geo.iter()
        .map(|g| {
            (
                g.fips,
                GeoPoint {
                    lat: g.latitude,
                    lon: g.longitude,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpreadBuild {
    pub graph: SpreadGraph,
    /// Counties that passed the node threshold but have no centroid.
    pub missing_geo: Vec<Fips>,
}

pub fn build_spread_graph(
    date: NaiveDate,
    day_new_cases: impl IntoIterator<Item = (Fips, u64)>,
    geo: &GeoIndex,
    params: &GraphParams,
) -> Result<SpreadBuild, NetworkError> {
    params.validate()?;
    let mut counts: Vec<(Fips, u64)> = day_new_cases.into_iter().collect();
    counts.sort_unstable_by_key(|c| c.0);
    if let Some(w) = counts.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(NetworkError::DuplicateNode(w[0].0));
    }

    let mut nodes = Vec::new();
    let mut points = Vec::new();
    let mut missing_geo = Vec::new();
    for (fips, n) in counts {
        if n < params.gamma {
            continue;
        }
        match geo.get(&fips) {
            Some(p) => {
                nodes.push((fips, n));
                points.push(*p);
            }
            None => missing_geo.push(fips),
        }
    }
    if !missing_geo.is_empty() {
        log::warn!("{date}: {} counties lack coordinates", missing_geo.len());
    }

    // Sweep in latitude order: the great-circle distance is at least the
    // meridional one, so the scan for `i` can stop once the latitude gap
    // alone reaches delta.
    let mut eligible: Vec<usize> = (0..nodes.len())
        .filter(|&i| nodes[i].1 >= params.lambda)
        .collect();
    eligible.sort_by(|&a, &b| points[a].lat.total_cmp(&points[b].lat).then(a.cmp(&b)));
    let band = params.delta_miles / EARTH_RADIUS_MILES;
    let mut edges = Vec::new();
    for (k, &i) in eligible.iter().enumerate() {
        let lat_i = points[i].lat.to_radians();
        for &j in &eligible[k + 1..] {
            if points[j].lat.to_radians() - lat_i >= band {
                break;
            }
            if haversine_miles(points[i], points[j]) < params.delta_miles {
                edges.push((i, j));
            }
        }
    }
    let graph = SimpleGraph::from_edges(nodes.len(), edges)?;
    Ok(SpreadBuild {
        graph: SpreadGraph { date, nodes, graph },
        missing_geo,
    })
}

/// Node count of the largest connected component (0 for the empty graph).
pub fn largest_component(g: &SimpleGraph) -> usize {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut best = 0;
    let mut queue = VecDeque::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        queue.push_back(s);
        let mut size = 0;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in g.neighbors(u) {
                let v = v as usize;
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        best = best.max(size);
    }
    best
}

fn dump_paths(dir: &Path, date: NaiveDate) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{date}.nodes.csv")),
        dir.join(format!("{date}.edges.csv")),
    )
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NetworkError + '_ {
    move |source| NetworkError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<date>.nodes.csv` (`fips,new_cases`) and `<date>.edges.csv`
/// (`fips_i,fips_j`) into `dir`.
pub fn write_graph_dump(dir: &Path, g: &SpreadGraph) -> Result<(), NetworkError> {
    let (np, ep) = dump_paths(dir, g.date);
    let mut w = BufWriter::new(File::create(&np).map_err(io_err(&np))?);
    let mut body = String::from("fips,new_cases\n");
    for (f, n) in &g.nodes {
        body.push_str(&format!("{f},{n}\n"));
    }
    w.write_all(body.as_bytes()).map_err(io_err(&np))?;
    w.flush().map_err(io_err(&np))?;

    let mut w = BufWriter::new(File::create(&ep).map_err(io_err(&ep))?);
    let mut body = String::from("fips_i,fips_j\n");
    for (u, v) in g.graph.edges() {
        body.push_str(&format!("{},{}\n", g.nodes[u].0, g.nodes[v].0));
    }
    w.write_all(body.as_bytes()).map_err(io_err(&ep))?;
    w.flush().map_err(io_err(&ep))
}

fn read_lines(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>, NetworkError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end_matches('\r');
        if i == 0 {
            if line != header {
                return Err(NetworkError::MalformedDump {
                    path: path.into(),
                    line: 1,
                    reason: format!("expected header `{header}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        out.push((i + 1, line.split(',').map(str::to_string).collect()));
    }
    Ok(out)
}

pub fn read_graph_dump(dir: &Path, date: NaiveDate) -> Result<SpreadGraph, NetworkError> {
    let (np, ep) = dump_paths(dir, date);
    let bad = |path: &Path, line: usize, reason: String| NetworkError::MalformedDump {
        path: path.into(),
        line,
        reason,
    };
    let mut nodes = Vec::new();
    for (line, f) in read_lines(&np, "fips,new_cases")? {
        if f.len() != 2 {
            return Err(bad(&np, line, "expected 2 fields".into()));
        }
        let fips: Fips = f[0].parse().map_err(|e| bad(&np, line, e))?;
        let n: u64 = f[1].parse().map_err(|_| bad(&np, line, "bad count".into()))?;
        nodes.push((fips, n));
    }
    nodes.sort_unstable_by_key(|n| n.0);
    let index: BTreeMap<Fips, usize> = nodes.iter().enumerate().map(|(i, n)| (n.0, i)).collect();
    let mut edges = Vec::new();
    for (line, f) in read_lines(&ep, "fips_i,fips_j")? {
        if f.len() != 2 {
            return Err(bad(&ep, line, "expected 2 fields".into()));
        }
        let mut ends = [0usize; 2];
        for (k, s) in f.iter().enumerate() {
            let fips: Fips = s.parse().map_err(|e| bad(&ep, line, e))?;
            ends[k] = *index
                .get(&fips)
                .ok_or_else(|| bad(&ep, line, format!("unknown node {fips}")))?;
        }
        edges.push((ends[0], ends[1]));
    }
    let graph = SimpleGraph::from_edges(nodes.len(), edges)?;
    Ok(SpreadGraph { date, nodes, graph })
}

/// Dates that have a complete graph dump in `dir`, ascending.
pub fn list_graph_dumps(dir: &Path) -> Result<Vec<NaiveDate>, NetworkError> {
    let rd = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut dates = Vec::new();
    for entry in rd {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(stem) = name.strip_suffix(".nodes.csv") else {
            continue;
        };
        if let Ok(d) = NaiveDate::parse_from_str(stem, "%Y-%m-%d") {
            if dir.join(format!("{stem}.edges.csv")).exists() {
                dates.push(d);
            }
        }
    }
    dates.sort();
    Ok(dates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 4, 11).unwrap()
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    #[test]
    fn haversine_examples() {
        let nyc = pt(40.7128, -74.0060);
        assert_eq!(haversine_miles(nyc, nyc), 0.0);
        let phl = pt(39.9526, -75.1652);
        let d = haversine_miles(nyc, phl);
        assert!((d - 80.4).abs() <= 0.5, "{d}");
        assert_eq!(d, haversine_miles(phl, nyc));
        let anti = haversine_miles(pt(10.0, 20.0), pt(-10.0, -160.0));
        assert!((anti - std::f64::consts::PI * EARTH_RADIUS_MILES).abs() < 1e-3);
        assert!((anti - 12436.8).abs() < 0.1);
    }

    fn geo(points: &[(u32, f64, f64)]) -> GeoIndex {
        points.iter().map(|&(f, la, lo)| (Fips(f), pt(la, lo))).collect()
    }

    #[test]
    fn triangle_and_distance_gate() {
        // About 35 miles apart pairwise.
        let g = geo(&[(1, 40.0, -75.0), (2, 40.5, -75.0), (3, 40.25, -74.6)]);
        let b = build_spread_graph(
            day(),
            [(Fips(1), 5), (Fips(2), 5), (Fips(3), 5)],
            &g,
            &GraphParams::default(),
        )
        .unwrap();
        let f = b.graph.features();
        assert_eq!((f.v, f.e, f.gc), (3, 3, 3));

        // About 150 miles apart.
        let g = geo(&[(1, 40.0, -75.0), (2, 42.17, -75.0)]);
        let b = build_spread_graph(day(), [(Fips(1), 10), (Fips(2), 10)], &g, &GraphParams::default())
            .unwrap();
        let f = b.graph.features();
        assert_eq!((f.v, f.e), (2, 0));
    }

    #[test]
    fn thresholds_and_missing_geo() {
        let g = geo(&[(1, 40.0, -75.0), (2, 40.1, -75.0), (3, 40.2, -75.0)]);
        let params = GraphParams {
            gamma: 2,
            lambda: 5,
            delta_miles: 100.0,
        };
        let b = build_spread_graph(
            day(),
            [(Fips(1), 1), (Fips(2), 3), (Fips(3), 9), (Fips(4), 50)],
            &g,
            &params,
        )
        .unwrap();
        assert_eq!(b.graph.nodes, vec![(Fips(2), 3), (Fips(3), 9)]);
        assert_eq!(b.graph.graph.edge_count(), 0);
        assert_eq!(b.missing_geo, vec![Fips(4)]);
        assert!(build_spread_graph(day(), [], &g, &GraphParams { gamma: 0, ..params }).is_err());
        assert!(build_spread_graph(day(), [], &g, &GraphParams { delta_miles: 0.0, ..params }).is_err());
    }

    #[test]
    fn components() {
        assert_eq!(largest_component(&SimpleGraph::empty(0)), 0);
        let g = SimpleGraph::from_edges(4, [(0, 1), (1, 2), (2, 0)]).unwrap();
        assert_eq!(largest_component(&g), 3);
        assert_eq!(largest_component(&SimpleGraph::empty(3)), 1);
    }

    /// Independent labeling by repeated edge relaxation.
    fn label_components(g: &SimpleGraph) -> Vec<usize> {
        let mut label: Vec<usize> = (0..g.node_count()).collect();
        loop {
            let mut changed = false;
            for (u, v) in g.edges() {
                let m = label[u].min(label[v]);
                if label[u] != m || label[v] != m {
                    label[u] = m;
                    label[v] = m;
                    changed = true;
                }
            }
            if !changed {
                return label;
            }
        }
    }

    #[test]
    fn two_random_components() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut perm: Vec<usize> = (0..12).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        // Random spanning trees on 7 and 5 nodes plus random chords.
        let mut edges = Vec::new();
        for (lo, size) in [(0usize, 7usize), (7, 5)] {
            for k in 1..size {
                edges.push((lo + k, lo + rng.random_range(0..k)));
            }
            for _ in 0..4 {
                let a = lo + rng.random_range(0..size);
                let b = lo + rng.random_range(0..size);
                if a != b {
                    edges.push((a, b));
                }
            }
        }
        let g = SimpleGraph::from_edges(12, edges.iter().map(|&(a, b)| (perm[a], perm[b]))).unwrap();
        let labels = label_components(&g);
        let mut sizes = BTreeMap::new();
        for l in labels {
            *sizes.entry(l).or_insert(0) += 1;
        }
        let oracle = *sizes.values().max().unwrap();
        assert_eq!(oracle, 7);
        assert_eq!(largest_component(&g), oracle);
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = geo(&[(1, 40.0, -75.0), (2, 40.5, -75.0), (3, 40.25, -74.6), (4, 30.0, -90.0)]);
        let b = build_spread_graph(
            day(),
            [(Fips(3), 7), (Fips(1), 5), (Fips(2), 6), (Fips(4), 8)],
            &g,
            &GraphParams::default(),
        )
        .unwrap();
        write_graph_dump(dir.path(), &b.graph).unwrap();
        let edges = std::fs::read_to_string(dir.path().join("2020-04-11.edges.csv")).unwrap();
        assert!(edges.starts_with("fips_i,fips_j\n00001,00002\n"));
        assert_eq!(read_graph_dump(dir.path(), day()).unwrap(), b.graph);
        assert_eq!(list_graph_dumps(dir.path()).unwrap(), vec![day()]);
    }

    fn random_instance(seed: u64, n: usize) -> (Vec<(Fips, u64)>, GeoIndex) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cases = Vec::new();
        let mut g = GeoIndex::new();
        for i in 0..n {
            let f = Fips(1000 + i as u32);
            cases.push((f, rng.random_range(0..20)));
            g.insert(f, pt(rng.random_range(30.0..45.0), rng.random_range(-100.0..-75.0)));
        }
        (cases, g)
    }

    fn edge_set(b: &SpreadBuild) -> std::collections::BTreeSet<(Fips, Fips)> {
        let n = &b.graph.nodes;
        b.graph.graph.edges().map(|(u, v)| (n[u].0, n[v].0)).collect()
    }

    /// All-pairs reference construction.
    fn brute_edges(cases: &[(Fips, u64)], g: &GeoIndex, p: &GraphParams) -> usize {
        let mut e = 0;
        for (i, a) in cases.iter().enumerate() {
            for b in &cases[i + 1..] {
                if a.1 >= p.gamma.max(p.lambda)
                    && b.1 >= p.gamma.max(p.lambda)
                    && haversine_miles(g[&a.0], g[&b.0]) < p.delta_miles
                {
                    e += 1;
                }
            }
        }
        e
    }

    proptest! {
        #[test]
        fn latitude_sweep_is_exact(seed in 0u64..1000, delta in 10.0..600.0_f64) {
            let (cases, g) = random_instance(seed, 60);
            let p = GraphParams { gamma: 3, lambda: 6, delta_miles: delta };
            let b = build_spread_graph(day(), cases.clone(), &g, &p).unwrap();
            prop_assert_eq!(b.graph.graph.edge_count(), brute_edges(&cases, &g, &p));
        }

        #[test]
        fn monotone_in_delta_and_lambda(seed in 0u64..1000, d1 in 10.0..400.0_f64, extra in 0.0..200.0_f64, l1 in 1u64..10, lx in 0u64..5) {
            let (cases, g) = random_instance(seed, 50);
            let base = GraphParams { gamma: 1, lambda: l1, delta_miles: d1 };
            let e0 = edge_set(&build_spread_graph(day(), cases.clone(), &g, &base).unwrap());
            let wider = edge_set(&build_spread_graph(day(), cases.clone(), &g, &GraphParams { delta_miles: d1 + extra, ..base }).unwrap());
            prop_assert!(e0.is_subset(&wider));
            let stricter = edge_set(&build_spread_graph(day(), cases.clone(), &g, &GraphParams { lambda: l1 + lx, ..base }).unwrap());
            prop_assert!(stricter.is_subset(&e0));
        }

        #[test]
        fn independent_of_input_order(seed in 0u64..1000, shuffle_seed in 0u64..1000) {
            let (mut cases, g) = random_instance(seed, 40);
            let p = GraphParams { gamma: 4, lambda: 4, delta_miles: 250.0 };
            let a = build_spread_graph(day(), cases.clone(), &g, &p).unwrap();
            use rand::seq::SliceRandom;
            cases.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
            let b = build_spread_graph(day(), cases, &g, &p).unwrap();
            prop_assert_eq!(a.graph, b.graph);
        }

        #[test]
        fn lambda_below_gamma_depends_only_on_delta(seed in 0u64..1000, gamma in 2u64..10) {
            let (cases, g) = random_instance(seed, 40);
            let p1 = GraphParams { gamma, lambda: 1, delta_miles: 300.0 };
            let p2 = GraphParams { lambda: gamma, ..p1 };
            let a = build_spread_graph(day(), cases.clone(), &g, &p1).unwrap();
            let b = build_spread_graph(day(), cases, &g, &p2).unwrap();
            prop_assert_eq!(a.graph, b.graph);
        }

        #[test]
        fn feature_invariants(seed in 0u64..1000) {
            let (cases, g) = random_instance(seed, 40);
            let f = build_spread_graph(day(), cases, &g, &GraphParams::default()).unwrap().graph.features();
            prop_assert!(f.gc <= f.v);
            prop_assert!(f.e <= f.v * f.v.saturating_sub(1) / 2);
            if f.v > 0 { prop_assert!(f.gc >= 1); }
        }
    }
}
