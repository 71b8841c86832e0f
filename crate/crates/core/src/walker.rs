//! Second-order biased random walks over a [`BipartiteGraph`].
//!
//! A walk arriving at `curr` from `prev` moves to neighbor `x` with mass
//! `alpha(prev, x) * w(curr, x)`, where `alpha` is `1/p` for `x == prev`,
//! `1` when `x` is adjacent to `prev`, and `1/q` otherwise. The first hop
//! has no predecessor and follows the edge weights alone.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    /// Walks started from every node.
    pub walks_per_node: usize,
    /// Hops per walk; a walk visits `walk_length + 1` nodes.
    pub walk_length: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub seed: u64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            walks_per_node: 10,
            walk_length: 80,
            p: 1.0,
            q: 1.0,
            seed: 42,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0 || self.walk_length == 0 {
            return Err(Error::param("walks per node and walk length must be at least 1"));
        }
        if !(self.p > 0.0 && self.p.is_finite() && self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::param(format!("p = {} and q = {} must be positive", self.p, self.q)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkOptions {
    pub workers: usize,
    /// Largest number of entries (sum of squared degrees) for which
    /// per-edge second-order alias tables are precomputed. Larger graphs
    /// normalize transition masses on the fly.
    pub edge_table_budget: usize,
}

impl Default for WalkOptions {
    fn default() -> Self {
        WalkOptions {
            workers: 1,
            edge_table_budget: 20_000_000,
        }
    }
}

#[inline]
fn bias(g: &BipartiteGraph, prev: NodeId, candidate: NodeId, p: f64, q: f64) -> f64 {
    if candidate == prev {
        1.0 / p
    } else if g.has_edge(candidate, prev) {
        1.0
    } else {
        1.0 / q
    }
}

fn biased_masses(g: &BipartiteGraph, prev: NodeId, curr: NodeId, p: f64, q: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(g.neighbors(curr).map(|(x, w)| bias(g, prev, x, p, q) * w));
}

/// Normalized next-step distribution of a walk that moved `prev -> curr`.
pub fn transition_weights(
    g: &BipartiteGraph,
    prev: NodeId,
    curr: NodeId,
    params: &WalkParams,
) -> Result<Vec<(NodeId, f64)>> {
    if !g.has_edge(prev, curr) {
        return Err(Error::contract(format!(
            "`{}` is not adjacent to `{}`",
            g.label(prev),
            g.label(curr)
        )));
    }
    let mut masses = Vec::new();
    biased_masses(g, prev, curr, params.p, params.q, &mut masses);
    let total: f64 = masses.iter().sum();
    Ok(g.adjacency(curr)
        .0
        .iter()
        .zip(masses)
        .map(|(&x, m)| (NodeId(x), m / total))
        .collect())
}

enum SecondOrder {
    /// One table per directed edge, indexed by the edge slot of `prev -> curr`.
    Precomputed(Vec<AliasTable>),
    OnTheFly,
}

impl SecondOrder {
    fn new(g: &BipartiteGraph, params: &WalkParams, budget: usize) -> Self {
        let entries: usize = g.node_ids().map(|v| g.degree(v).pow(2)).sum();
        if entries > budget {
            return SecondOrder::OnTheFly;
        }
        let tables = g
            .node_ids()
            .collect::<Vec<_>>()
            .par_iter()
            .flat_map_iter(|&prev| {
                g.adjacency(prev).0.iter().map(move |&curr| {
                    let mut masses = Vec::new();
                    biased_masses(g, prev, NodeId(curr), params.p, params.q, &mut masses);
                    AliasTable::new(&masses).expect("positive masses")
                })
            })
            .collect();
        SecondOrder::Precomputed(tables)
    }

    fn step<R: Rng>(
        &self,
        g: &BipartiteGraph,
        prev: NodeId,
        curr: NodeId,
        params: &WalkParams,
        rng: &mut R,
        scratch: &mut Vec<f64>,
    ) -> NodeId {
        let targets = g.adjacency(curr).0;
        let i = match self {
            SecondOrder::Precomputed(tables) => {
                let slot = g.edge_slot(prev, curr).expect("walk follows edges");
                tables[slot].sample(rng)
            }
            SecondOrder::OnTheFly => {
                biased_masses(g, prev, curr, params.p, params.q, scratch);
                let total: f64 = scratch.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = scratch.len() - 1;
                for (i, m) in scratch.iter().enumerate() {
                    if u < *m {
                        pick = i;
                        break;
                    }
                    u -= m;
                }
                pick
            }
        };
        NodeId(targets[i])
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the `walk`-th walk started at `node`.
pub fn walk_seed(seed: u64, node: usize, walk: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ node as u64) ^ walk as u64)
}

/// Walk sequences in canonical `(start node, walk index)` order.
#[derive(Debug, Clone)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<u32>>,
    /// Label of every node index used in `walks`.
    pub labels: Vec<String>,
    pub params: WalkParams,
    pub graph_fingerprint: String,
}

impl PartialEq for WalkCorpus {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.graph_fingerprint == other.graph_fingerprint
            && self.walks.len() == other.walks.len()
            && self
                .walks
                .iter()
                .zip(&other.walks)
                .all(|(a, b)| a.len() == b.len() && self.labelled(a).eq(other.labelled(b)))
    }
}

impl WalkCorpus {
    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.walks.iter().map(Vec::len).sum()
    }

    fn labelled<'a>(&'a self, walk: &'a [u32]) -> impl Iterator<Item = &'a str> + 'a {
        walk.iter().map(move |&i| self.labels[i as usize].as_str())
    }

    pub fn walk_labels(&self, i: usize) -> Vec<&str> {
        self.labelled(&self.walks[i]).collect()
    }

    pub fn header(&self) -> String {
        let p = &self.params;
        format!(
            "#walks r={} l={} p={} q={} graph={} seed={}",
            p.walks_per_node, p.walk_length, p.p, p.q, self.graph_fingerprint, p.seed
        )
    }

    /// Header line, then one walk per line as space-separated labels.
    pub fn save<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "{}", self.header())?;
        let mut line = String::new();
        for walk in &self.walks {
            line.clear();
            for (i, label) in self.labelled(walk).enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(label);
            }
            writeln!(sink, "{line}")?;
        }
        Ok(())
    }

    /// Reads a corpus. With a graph, the header fingerprint must match it
    /// and node indices follow the graph; otherwise labels are numbered in
    /// order of first appearance.
    pub fn load<R: Read>(source: R, graph: Option<&BipartiteGraph>) -> Result<Self> {
        let mut lines = BufReader::new(source).lines();
        let header = lines.next().ok_or_else(|| Error::Corrupt("missing corpus header".into()))??;
        let (params, fingerprint) = parse_header(&header)?;
        if let Some(g) = graph {
            let found = g.fingerprint();
            if found != fingerprint {
                return Err(Error::StaleCorpus { expected: fingerprint, found });
            }
        }
        let mut labels: Vec<String> = graph
            .map(|g| g.nodes().iter().map(|n| n.label.clone()).collect())
            .unwrap_or_default();
        let mut index: HashMap<String, u32> =
            labels.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect();
        let mut walks = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let mut walk = Vec::new();
            for token in line.split_ascii_whitespace() {
                let id = match index.get(token) {
                    Some(&id) => id,
                    None if graph.is_some() => {
                        return Err(Error::Corrupt(format!("line {}: unknown node `{token}`", n + 2)))
                    }
                    None => {
                        let id = labels.len() as u32;
                        labels.push(token.to_string());
                        index.insert(token.to_string(), id);
                        id
                    }
                };
                walk.push(id);
            }
            if !walk.is_empty() {
                walks.push(walk);
            }
        }
        Ok(WalkCorpus {
            walks,
            labels,
            params,
            graph_fingerprint: fingerprint,
        })
    }
}

fn parse_header(line: &str) -> Result<(WalkParams, String)> {
    let bad = |why: &str| Error::Corrupt(format!("corpus header `{line}`: {why}"));
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("#walks") {
        return Err(bad("must start with #walks"));
    }
    let fields: HashMap<&str, &str> = tokens.filter_map(|t| t.split_once('=')).collect();
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(&format!("bad {k}"))) };
    let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(&format!("bad {k}"))) };
    let params = WalkParams {
        walks_per_node: int("r")?,
        walk_length: int("l")?,
        p: num("p")?,
        q: num("q")?,
        seed: match fields.get("seed") {
            Some(s) => s.parse().map_err(|_| bad("bad seed"))?,
            None => 0,
        },
    };
    Ok((params, get("graph")?.to_string()))
}

fn walk_from<R: Rng>(
    g: &BipartiteGraph,
    start: NodeId,
    params: &WalkParams,
    second: &SecondOrder,
    rng: &mut R,
    scratch: &mut Vec<f64>,
) -> Vec<u32> {
    let mut walk = Vec::with_capacity(params.walk_length + 1);
    walk.push(start.0);
    if g.degree(start) == 0 {
        return walk;
    }
    let mut prev = start;
    let mut curr = g.sample_neighbor(start, rng).expect("degree checked");
    walk.push(curr.0);
    while walk.len() <= params.walk_length {
        let next = second.step(g, prev, curr, params, rng, scratch);
        walk.push(next.0);
        prev = curr;
        curr = next;
    }
    walk
}

/// Generates `walks_per_node` walks from every node.
///
/// Each walk draws from its own generator seeded by
/// [`walk_seed`]`(seed, node, walk index)`, so the corpus does not depend on
/// the worker count.
pub fn generate_walks(g: &BipartiteGraph, params: &WalkParams, opts: &WalkOptions) -> Result<WalkCorpus> {
    params.validate()?;
    if let Some(v) = g.node_ids().find(|&v| g.degree(v) == 0) {
        return Err(Error::Isolated(g.label(v).to_string()));
    }
    let run = || {
        let second = SecondOrder::new(g, params, opts.edge_table_budget);
        let per_node = |v: usize| -> Vec<Vec<u32>> {
            let mut scratch = Vec::new();
            (0..params.walks_per_node)
                .map(|w| {
                    let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(params.seed, v, w));
                    walk_from(g, NodeId(v as u32), params, &second, &mut rng, &mut scratch)
                })
                .collect()
        };
        if opts.workers > 1 {
            (0..g.node_count()).into_par_iter().flat_map_iter(per_node).collect()
        } else {
            (0..g.node_count()).flat_map(per_node).collect()
        }
    };
    let walks: Vec<Vec<u32>> = if opts.workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    Ok(WalkCorpus {
        walks,
        labels: g.nodes().iter().map(|n| n.label.clone()).collect(),
        params: *params,
        graph_fingerprint: g.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path() -> BipartiteGraph {
        // A - B - C with B a fund.
        BipartiteGraph::from_edges([("B", "A", 1.0), ("B", "C", 1.0)]).unwrap()
    }

    fn params(p: f64, q: f64) -> WalkParams {
        WalkParams { p, q, ..Default::default() }
    }

    #[test]
    fn path_bias() {
        let g = path();
        let (a, b, c) = (g.id_of("A").unwrap(), g.id_of("B").unwrap(), g.id_of("C").unwrap());
        let t = transition_weights(&g, a, b, &params(0.5, 2.0)).unwrap();
        assert_eq!(t.len(), 2);
        let prob = |n: NodeId| t.iter().find(|(x, _)| *x == n).unwrap().1;
        assert!((prob(a) - 0.8).abs() < 1e-12);
        assert!((prob(c) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn four_cycle_bias() {
        let g = BipartiteGraph::from_edges([
            ("F1", "A1", 1.0),
            ("F2", "A1", 1.0),
            ("F2", "A2", 1.0),
            ("F1", "A2", 1.0),
        ])
        .unwrap();
        let (f1, a1, f2) = (g.id_of("F1").unwrap(), g.id_of("A1").unwrap(), g.id_of("F2").unwrap());
        let t = transition_weights(&g, f1, a1, &params(0.25, 4.0)).unwrap();
        // masses 4 for F1, 0.25 for F2
        let prob = |n: NodeId| t.iter().find(|(x, _)| *x == n).unwrap().1;
        assert!((prob(f1) - 4.0 / 4.25).abs() < 1e-12);
        assert!((prob(f2) - 0.25 / 4.25).abs() < 1e-12);
    }

    #[test]
    fn unbiased_walk_follows_weights() {
        let g = BipartiteGraph::from_edges([("F", "A", 3.0), ("F", "B", 1.0), ("G", "A", 1.0)]).unwrap();
        let (a, f) = (g.id_of("A").unwrap(), g.id_of("F").unwrap());
        let t = transition_weights(&g, a, f, &params(1.0, 1.0)).unwrap();
        assert!((t[0].1 - 0.75).abs() < 1e-12 && (t[1].1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_neighbor_and_non_adjacent() {
        let g = path();
        let (a, b, c) = (g.id_of("A").unwrap(), g.id_of("B").unwrap(), g.id_of("C").unwrap());
        assert_eq!(transition_weights(&g, b, a, &params(0.1, 5.0)).unwrap(), vec![(b, 1.0)]);
        assert!(matches!(transition_weights(&g, a, c, &params(1.0, 1.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn star_walks_alternate() {
        let edges: Vec<String> = (0..5).map(|i| format!("A{i}")).collect();
        let g = BipartiteGraph::from_edges(edges.iter().map(|a| ("F", a.as_str(), 1.0))).unwrap();
        let p = WalkParams { walks_per_node: 3, walk_length: 4, ..params(0.5, 2.0) };
        let c = generate_walks(&g, &p, &WalkOptions::default()).unwrap();
        assert_eq!(c.len(), 18);
        for w in &c.walks {
            assert_eq!(w.len(), 5);
            let fund_at = if w[0] == 0 { 0 } else { 1 };
            for (i, &v) in w.iter().enumerate() {
                assert_eq!(v == 0, i % 2 == fund_at);
            }
        }
    }

    #[test]
    fn invalid_params() {
        let g = path();
        for bad in [
            WalkParams { walks_per_node: 0, ..Default::default() },
            WalkParams { walk_length: 0, ..Default::default() },
            params(0.0, 1.0),
            params(1.0, -1.0),
        ] {
            assert!(generate_walks(&g, &bad, &WalkOptions::default()).is_err());
        }
    }

    #[test]
    fn corpus_round_trip_and_staleness() {
        let g = path();
        let p = WalkParams { walks_per_node: 1, walk_length: 3, ..params(0.1, 5.0) };
        let c = generate_walks(&g, &p, &WalkOptions::default()).unwrap();
        assert_eq!(c.len(), 3);
        let mut buf = Vec::new();
        c.save(&mut buf).unwrap();
        assert_eq!(WalkCorpus::load(&buf[..], Some(&g)).unwrap(), c);
        assert_eq!(WalkCorpus::load(&buf[..], None).unwrap(), c);

        let other = BipartiteGraph::from_edges([("B", "A", 2.0), ("B", "C", 1.0)]).unwrap();
        assert!(matches!(WalkCorpus::load(&buf[..], Some(&other)), Err(Error::StaleCorpus { .. })));
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let c = WalkCorpus {
            walks: vec![],
            labels: vec![],
            params: WalkParams::default(),
            graph_fingerprint: "abc".into(),
        };
        let mut buf = Vec::new();
        c.save(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "#walks r=10 l=80 p=1 q=1 graph=abc seed=42\n");
        assert_eq!(WalkCorpus::load(&buf[..], None).unwrap(), c);
    }

    #[test]
    fn header_without_seed_is_accepted() {
        let c = WalkCorpus::load(&b"#walks r=1 l=2 p=0.1 q=5 graph=xyz\nF A F\n"[..], None).unwrap();
        assert_eq!(c.params.seed, 0);
        assert_eq!(c.walk_labels(0), vec!["F", "A", "F"]);
        assert!(WalkCorpus::load(&b"walks r=1\n"[..], None).is_err());
    }
}
