//! Induced census of connected 3- and 4-node subgraphs.
//!
//! Class order used throughout (by edge count, then degree sequence):
//!
//! | label | shape               | edges |
//! |-------|---------------------|-------|
//! | T1    | path on 3 nodes     | 2     |
//! | T2    | triangle            | 3     |
//! | M1    | path P4             | 3     |
//! | M2    | star K1,3           | 3     |
//! | M3    | cycle C4            | 4     |
//! | M4    | paw (tailed triangle)| 4    |
//! | M5    | diamond (K4 - e)    | 5     |
//! | M6    | clique K4           | 6     |
//!
//! Counts are induced: every connected vertex subset is classified by the
//! full set of edges among its members.
//!
//! The default backend derives all counts from degree, triangle, codegree
//! and 4-clique statistics via the subgraph-to-induced inversion
//!
//! ```text
//! K4   = k4
//! dia  = N(dia)  - 6 K4
//! C4   = N(C4)   - dia - 3 K4
//! paw  = N(paw)  - 4 dia - 12 K4
//! star = N(star) - paw - 2 dia - 4 K4
//! P4   = N(P4)   - 2 paw - 4 C4 - 6 dia - 12 K4
//! ```
//!
//! where `N(H)` is the number of (not necessarily induced) copies of `H`.
//! The ESU enumerator is kept as a second backend.

use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::{NetworkFeatures, SimpleGraph, SpreadGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MotifCensus {
    pub t1: u64,
    pub t2: u64,
    /// M1..M6 in the order documented at module level.
    pub m: [u64; 6],
}

impl MotifCensus {
    pub fn tot_m(&self) -> u64 {
        self.m.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CensusMethod {
    #[default]
    Combinatorial,
    Enumeration,
}

impl FromStr for CensusMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "combinatorial" => Ok(Self::Combinatorial),
            "enumeration" | "esu" => Ok(Self::Enumeration),
            _ => Err(format!("unknown census method `{s}`")),
        }
    }
}

fn c2(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

fn c3(x: u64) -> u128 {
    let x = x as u128;
    if x < 3 {
        0
    } else {
        x * (x - 1) * (x - 2) / 6
    }
}

fn intersect_count(a: &[u32], b: &[u32]) -> u64 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn intersect_into(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
}

/// Out-neighbourhoods under the (degree, id) total order, sorted by id.
fn oriented(g: &SimpleGraph) -> Vec<Vec<u32>> {
    let rank = |v: usize| (g.degree(v), v);
    (0..g.node_count())
        .map(|u| {
            g.neighbors(u)
                .iter()
                .copied()
                .filter(|&v| rank(v as usize) > rank(u))
                .collect()
        })
        .collect()
}

/// Triangle count of every edge, in `SimpleGraph::edges` order.
fn edge_triangles(g: &SimpleGraph) -> Vec<(usize, usize, u64)> {
    g.edges()
        .map(|(u, v)| (u, v, intersect_count(g.neighbors(u), g.neighbors(v))))
        .collect()
}

/// Induced (path, triangle) counts.
pub fn census_triads(g: &SimpleGraph) -> (u64, u64) {
    let tri: u128 = edge_triangles(g).iter().map(|e| e.2 as u128).sum::<u128>() / 3;
    let wedges: u128 = (0..g.node_count()).map(|v| c2(g.degree(v) as u64)).sum();
    ((wedges - 3 * tri) as u64, tri as u64)
}

fn four_cliques(out: &[Vec<u32>]) -> u128 {
    (0..out.len())
        .into_par_iter()
        .map_init(Vec::new, |common, u| {
            let mut k = 0u128;
            for &v in &out[u] {
                intersect_into(&out[u], &out[v as usize], common);
                for &w in common.iter() {
                    k += intersect_count(&out[w as usize], common) as u128;
                }
            }
            k
        })
        .sum()
}

/// Number of 4-cycles as subgraphs: half the sum of C(codegree, 2) over
/// unordered node pairs.
fn four_cycles(g: &SimpleGraph) -> u128 {
    let n = g.node_count();
    let twice: u128 = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0u32; n], Vec::new()),
            |(cnt, touched), u| {
                for &a in g.neighbors(u) {
                    for &w in g.neighbors(a as usize) {
                        if (w as usize) > u {
                            if cnt[w as usize] == 0 {
                                touched.push(w);
                            }
                            cnt[w as usize] += 1;
                        }
                    }
                }
                let mut s = 0u128;
                for &w in touched.iter() {
                    s += c2(cnt[w as usize] as u64);
                    cnt[w as usize] = 0;
                }
                touched.clear();
                s
            },
        )
        .sum();
    twice / 2
}

/// Induced counts of the six connected 4-node classes, M1..M6.
pub fn census_tetrads(g: &SimpleGraph) -> [u64; 6] {
    let n = g.node_count();
    let deg: Vec<u64> = (0..n).map(|v| g.degree(v) as u64).collect();
    let et = edge_triangles(g);

    let mut node_tri = vec![0u128; n];
    let mut tri2 = 0u128;
    let mut path_raw = 0u128;
    let mut diamond_raw = 0u128;
    for &(u, v, t) in &et {
        node_tri[u] += t as u128;
        node_tri[v] += t as u128;
        tri2 += t as u128;
        path_raw += (deg[u] - 1) as u128 * (deg[v] - 1) as u128;
        diamond_raw += c2(t);
    }
    let triangles = tri2 / 3;

    let star_raw: u128 = deg.iter().map(|&d| c3(d)).sum();
    let path_raw = path_raw - 3 * triangles;
    // node_tri[v] counts each triangle at v twice.
    let paw_raw: u128 = (0..n)
        .map(|v| (node_tri[v] / 2) * (deg[v].saturating_sub(2)) as u128)
        .sum();
    let c4_raw = four_cycles(g);
    let k4 = four_cliques(&oriented(g));

    let signed = |x: u128| x as i128;
    let k4i = signed(k4);
    let dia = signed(diamond_raw) - 6 * k4i;
    let c4 = signed(c4_raw) - dia - 3 * k4i;
    let paw = signed(paw_raw) - 4 * dia - 12 * k4i;
    let star = signed(star_raw) - paw - 2 * dia - 4 * k4i;
    let p4 = signed(path_raw) - 2 * paw - 4 * c4 - 6 * dia - 12 * k4i;
    let out = [p4, star, c4, paw, dia, k4i];
    debug_assert!(out.iter().all(|&x| x >= 0), "{out:?}");
    out.map(|x| x as u64)
}

/// Class index for a connected induced subgraph on 3 or 4 nodes given its
/// edge count and maximum degree. 3-node classes map to 0 (T1) and 1 (T2);
/// 4-node classes to 0..6 (M1..M6).
fn classify(k: usize, edges: usize, max_deg: usize) -> usize {
    match (k, edges, max_deg) {
        (3, 2, _) => 0,
        (3, 3, _) => 1,
        (4, 3, 2) => 0,
        (4, 3, 3) => 1,
        (4, 4, 2) => 2,
        (4, 4, 3) => 3,
        (4, 5, _) => 4,
        (4, 6, _) => 5,
        _ => unreachable!("disconnected or unsupported subgraph"),
    }
}

/// ESU enumeration of connected induced k-subgraphs, calling `visit` once
/// per subset.
fn esu(g: &SimpleGraph, k: usize, mut visit: impl FnMut(&[usize])) {
    fn extend(
        g: &SimpleGraph,
        k: usize,
        root: usize,
        sub: &mut Vec<usize>,
        ext: Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if sub.len() == k {
            visit(sub);
            return;
        }
        let mut ext = ext;
        while let Some(w) = ext.pop() {
            // Exclusive neighbours of w: greater than root, not in or
            // adjacent to the current subgraph.
            let mut next = ext.clone();
            for &u in g.neighbors(w) {
                let u = u as usize;
                if u > root
                    && !sub.contains(&u)
                    && u != w
                    && !next.contains(&u)
                    && !sub.iter().any(|&s| g.has_edge(s, u))
                {
                    next.push(u);
                }
            }
            sub.push(w);
            extend(g, k, root, sub, next, visit);
            sub.pop();
        }
    }
    for v in 0..g.node_count() {
        let ext: Vec<usize> = g
            .neighbors(v)
            .iter()
            .map(|&u| u as usize)
            .filter(|&u| u > v)
            .collect();
        let mut sub = vec![v];
        extend(g, k, v, &mut sub, ext, &mut visit);
    }
}

fn induced_shape(g: &SimpleGraph, nodes: &[usize]) -> (usize, usize) {
    let mut edges = 0;
    let mut max_deg = 0;
    for &a in nodes {
        let d = nodes.iter().filter(|&&b| g.has_edge(a, b)).count();
        edges += d;
        max_deg = max_deg.max(d);
    }
    (edges / 2, max_deg)
}

/// Census by explicit enumeration of every connected 3- and 4-subset.
pub fn census_by_enumeration(g: &SimpleGraph) -> MotifCensus {
    let mut out = MotifCensus::default();
    esu(g, 3, |s| {
        let (e, d) = induced_shape(g, s);
        if classify(3, e, d) == 0 {
            out.t1 += 1;
        } else {
            out.t2 += 1;
        }
    });
    esu(g, 4, |s| {
        let (e, d) = induced_shape(g, s);
        out.m[classify(4, e, d)] += 1;
    });
    out
}

pub fn census(g: &SimpleGraph, method: CensusMethod) -> MotifCensus {
    match method {
        CensusMethod::Combinatorial => {
            let (t1, t2) = census_triads(g);
            MotifCensus {
                t1,
                t2,
                m: census_tetrads(g),
            }
        }
        CensusMethod::Enumeration => census_by_enumeration(g),
    }
}

/// One day's network features together with its motif census.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusRow {
    pub features: NetworkFeatures,
    pub census: MotifCensus,
}

impl CensusRow {
    pub fn date(&self) -> NaiveDate {
        self.features.date
    }

    /// Values in `CENSUS_COLUMNS` order, excluding the date.
    pub fn values(&self) -> [u64; 12] {
        let c = &self.census;
        let f = &self.features;
        [
            f.v as u64,
            f.e as u64,
            f.gc as u64,
            c.t1,
            c.t2,
            c.m[0],
            c.m[1],
            c.m[2],
            c.m[3],
            c.m[4],
            c.m[5],
            c.tot_m(),
        ]
    }
}

/// Variable names of the census table, after the date column.
pub const CENSUS_COLUMNS: [&str; 12] = [
    "V", "E", "GC", "T1", "T2", "M1", "M2", "M3", "M4", "M5", "M6", "TotM",
];

/// Census of each graph, in input order. Days are processed in parallel.
pub fn census_series(graphs: &[SpreadGraph], method: CensusMethod) -> Vec<CensusRow> {
    graphs
        .par_iter()
        .map(|g| CensusRow {
            features: g.features(),
            census: census(&g.graph, method),
        })
        .collect()
}

pub fn write_census_csv(rows: &[CensusRow], mut w: impl Write) -> std::io::Result<()> {
    let mut s = String::from("date");
    for c in CENSUS_COLUMNS {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for r in rows {
        s.push_str(&r.date().to_string());
        for v in r.values() {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    w.write_all(s.as_bytes())
}

pub fn read_census_csv(mut r: impl Read) -> Result<Vec<CensusRow>, String> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty census file")?;
    let expected = format!("date,{}", CENSUS_COLUMNS.join(","));
    if header.trim_end_matches('\r') != expected {
        return Err(format!("census header must be `{expected}`"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(format!("line {}: expected 13 fields", i + 2));
        }
        let date = NaiveDate::parse_from_str(f[0], "%Y-%m-%d")
            .map_err(|e| format!("line {}: {e}", i + 2))?;
        let mut v = [0u64; 12];
        for (k, s) in f[1..].iter().enumerate() {
            v[k] = s.parse().map_err(|_| format!("line {}: bad count `{s}`", i + 2))?;
        }
        rows.push(CensusRow {
            features: NetworkFeatures {
                date,
                v: v[0] as usize,
                e: v[1] as usize,
                gc: v[2] as usize,
            },
            census: MotifCensus {
                t1: v[3],
                t2: v[4],
                m: [v[5], v[6], v[7], v[8], v[9], v[10]],
            },
        });
    }
    Ok(rows)
}
