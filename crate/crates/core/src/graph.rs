//! Immutable weighted bipartite fund-asset graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::str::FromStr;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::ingest::{CleanEdgeList, Edge, EDGE_CSV_HEADER};

pub const NODE_CSV_HEADER: &str = "node_id,kind";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Fund,
    Asset,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Fund => "fund",
            NodeKind::Asset => "asset",
        })
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fund" => Ok(NodeKind::Fund),
            "asset" => Ok(NodeKind::Asset),
            other => Err(format!("unknown node kind `{other}`")),
        }
    }
}

/// Dense index of a node within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub label: String,
    pub kind: NodeKind,
}

/// Undirected weighted bipartite graph in compressed adjacency form.
///
/// Nodes are numbered funds first, then assets, each block in label order.
/// Every adjacency list is sorted by neighbor index and carries a
/// precomputed alias table over its weights.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
    fund_count: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    alias: Vec<AliasTable>,
}

impl PartialEq for BipartiteGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.offsets == other.offsets
            && self.targets == other.targets
            && self.weights == other.weights
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub fund_count: usize,
    pub asset_count: usize,
    pub edge_count: usize,
    pub mean_fund_degree: f64,
    pub median_fund_degree: f64,
    pub mean_asset_degree: f64,
    pub median_asset_degree: f64,
}

impl GraphStats {
    pub fn write_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "metric,value")?;
        writeln!(sink, "fund_count,{}", self.fund_count)?;
        writeln!(sink, "asset_count,{}", self.asset_count)?;
        writeln!(sink, "edge_count,{}", self.edge_count)?;
        writeln!(sink, "mean_fund_degree,{}", self.mean_fund_degree)?;
        writeln!(sink, "median_fund_degree,{}", self.median_fund_degree)?;
        writeln!(sink, "mean_asset_degree,{}", self.mean_asset_degree)?;
        writeln!(sink, "median_asset_degree,{}", self.median_asset_degree)?;
        Ok(())
    }
}

/// Lower-middle median: for even lengths the smaller of the two middle
/// elements, so the result is always a member of the list.
pub fn lower_median(values: &[usize]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2])
}

impl BipartiteGraph {
    pub fn build(edges: &CleanEdgeList) -> Result<Self> {
        Self::from_edges(edges.edges.iter().map(|e| (e.fund.as_str(), e.asset.as_str(), e.weight_pct)))
    }

    /// Builds from `(fund, asset, weight)` triples. Repeated pairs are
    /// summed.
    pub fn from_edges<'a, I>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, f64)>,
    {
        let mut merged: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for (fund, asset, w) in edges {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::param(format!("edge {fund}-{asset} has non-positive weight {w}")));
            }
            *merged.entry((fund, asset)).or_default() += w;
        }
        if merged.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let funds: BTreeSet<&str> = merged.keys().map(|(f, _)| *f).collect();
        let assets: BTreeSet<&str> = merged.keys().map(|(_, a)| *a).collect();
        if let Some(label) = funds.intersection(&assets).next() {
            return Err(Error::KindConflict { label: label.to_string() });
        }

        let mut nodes = Vec::with_capacity(funds.len() + assets.len());
        nodes.extend(funds.iter().map(|l| Node { label: l.to_string(), kind: NodeKind::Fund }));
        nodes.extend(assets.iter().map(|l| Node { label: l.to_string(), kind: NodeKind::Asset }));
        let index: HashMap<String, NodeId> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.label.clone(), NodeId(i as u32)))
            .collect();

        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nodes.len()];
        for ((fund, asset), w) in merged {
            let (u, v) = (index[fund].0, index[asset].0);
            adjacency[u as usize].push((v, w));
            adjacency[v as usize].push((u, w));
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let mut alias = Vec::with_capacity(nodes.len());
        offsets.push(0);
        for mut list in adjacency {
            list.sort_unstable_by_key(|&(t, _)| t);
            let ws: Vec<f64> = list.iter().map(|&(_, w)| w).collect();
            alias.push(AliasTable::new(&ws).expect("positive weights"));
            targets.extend(list.iter().map(|&(t, _)| t));
            weights.extend(ws);
            offsets.push(targets.len());
        }

        Ok(BipartiteGraph {
            fund_count: funds.len(),
            nodes,
            index,
            offsets,
            targets,
            weights,
            alias,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn fund_count(&self) -> usize {
        self.fund_count
    }

    pub fn asset_count(&self) -> usize {
        self.nodes.len() - self.fund_count
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn fund_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.fund_count as u32).map(NodeId)
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.nodes[v.index()].label
    }

    pub fn kind(&self, v: NodeId) -> NodeKind {
        self.nodes[v.index()].kind
    }

    pub fn id_of(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v.index() + 1] - self.offsets[v.index()]
    }

    /// Neighbor indices (sorted) and the matching edge weights.
    pub fn adjacency(&self, v: NodeId) -> (&[u32], &[f64]) {
        let range = self.offsets[v.index()]..self.offsets[v.index() + 1];
        (&self.targets[range.clone()], &self.weights[range])
    }

    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let (t, w) = self.adjacency(v);
        t.iter().zip(w).map(|(&t, &w)| (NodeId(t), w))
    }

    /// Offset of `u -> v` in the flattened adjacency arrays.
    pub fn edge_slot(&self, u: NodeId, v: NodeId) -> Option<usize> {
        let (targets, _) = self.adjacency(u);
        targets.binary_search(&v.0).ok().map(|i| self.offsets[u.index()] + i)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.edge_slot(u, v).is_some()
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.edge_slot(u, v).map(|i| self.weights[i])
    }

    /// Start of `v`'s adjacency in the flattened arrays.
    pub fn adjacency_offset(&self, v: NodeId) -> usize {
        self.offsets[v.index()]
    }

    pub fn alias_table(&self, v: NodeId) -> &AliasTable {
        &self.alias[v.index()]
    }

    /// Draws a neighbor of `v` with probability proportional to edge weight.
    pub fn sample_neighbor<R: Rng + ?Sized>(&self, v: NodeId, rng: &mut R) -> Result<NodeId> {
        if v.index() >= self.nodes.len() {
            return Err(Error::UnknownNode(format!("node {}", v.0)));
        }
        let (targets, _) = self.adjacency(v);
        if targets.is_empty() {
            return Err(Error::Isolated(self.label(v).to_string()));
        }
        Ok(NodeId(targets[self.alias[v.index()].sample(rng)]))
    }

    /// Connected component labels by union-find, as a root index per node.
    pub fn component_roots(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for u in 0..n {
            for &v in self.adjacency(NodeId(u as u32)).0 {
                let (a, b) = (find(&mut parent, u), find(&mut parent, v as usize));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..n).map(|x| find(&mut parent, x)).collect()
    }

    /// The largest connected component by node count; ties go to the
    /// component containing the smallest node index.
    pub fn giant_component(&self) -> BipartiteGraph {
        let roots = self.component_roots();
        let mut sizes: HashMap<usize, usize> = HashMap::new();
        for &r in &roots {
            *sizes.entry(r).or_default() += 1;
        }
        let best = sizes.values().copied().max().unwrap_or(0);
        if best == self.nodes.len() {
            return self.clone();
        }
        let keep = roots.iter().copied().find(|r| sizes[r] == best).expect("non-empty graph");
        let edges = self.fund_ids().filter(|f| roots[f.index()] == keep).flat_map(|f| {
            self.neighbors(f)
                .map(move |(a, w)| (self.label(f), self.label(a), w))
        });
        BipartiteGraph::from_edges(edges).expect("component of a valid graph")
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0u32];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.adjacency(NodeId(u)).0 {
                if !std::mem::replace(&mut seen[v as usize], true) {
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.nodes.len()
    }

    pub fn stats(&self) -> GraphStats {
        let degrees = |ids: std::ops::Range<usize>| -> Vec<usize> {
            ids.map(|i| self.degree(NodeId(i as u32))).collect()
        };
        let fund = degrees(0..self.fund_count);
        let asset = degrees(self.fund_count..self.nodes.len());
        let mean = |d: &[usize]| {
            if d.is_empty() {
                0.0
            } else {
                d.iter().sum::<usize>() as f64 / d.len() as f64
            }
        };
        let median = |d: &[usize]| lower_median(d).unwrap_or(0) as f64;
        GraphStats {
            fund_count: fund.len(),
            asset_count: asset.len(),
            edge_count: self.edge_count(),
            mean_fund_degree: mean(&fund),
            median_fund_degree: median(&fund),
            mean_asset_degree: mean(&asset),
            median_asset_degree: median(&asset),
        }
    }

    /// Content hash over labels, kinds, and weighted adjacency.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.nodes {
            h.update(n.kind.to_string().as_bytes());
            h.update([0]);
            h.update(n.label.as_bytes());
            h.update([0]);
        }
        for (i, w) in self.offsets.iter().zip(&self.offsets[1..]).enumerate() {
            h.update((i as u64).to_le_bytes());
            for j in *w.0..*w.1 {
                h.update(self.targets[j].to_le_bytes());
                h.update(self.weights[j].to_bits().to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..16])
    }

    pub fn to_edge_list(&self) -> CleanEdgeList {
        let mut coverage = BTreeMap::new();
        let mut edges = Vec::with_capacity(self.edge_count());
        for f in self.fund_ids() {
            let mut total = 0.0;
            for (a, w) in self.neighbors(f) {
                total += w;
                edges.push(Edge {
                    fund: self.label(f).to_string(),
                    asset: self.label(a).to_string(),
                    weight_pct: w,
                });
            }
            coverage.insert(self.label(f).to_string(), total);
        }
        CleanEdgeList {
            edges,
            fund_count: self.fund_count,
            asset_count: self.asset_count(),
            coverage,
        }
    }

    pub fn write_edges_csv<W: Write>(&self, sink: W) -> io::Result<()> {
        self.to_edge_list().write_csv(sink)
    }

    pub fn write_nodes_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "{NODE_CSV_HEADER}")?;
        for n in &self.nodes {
            writeln!(sink, "{},{}", n.label, n.kind)?;
        }
        Ok(())
    }

    /// Reads a graph persisted by [`write_edges_csv`](Self::write_edges_csv)
    /// and [`write_nodes_csv`](Self::write_nodes_csv).
    pub fn read<E: Read, N: Read>(edges: E, nodes: N) -> Result<Self> {
        let mut kinds: HashMap<String, NodeKind> = HashMap::new();
        for (i, line) in BufReader::new(nodes).lines().enumerate() {
            let line = line?;
            if i == 0 {
                expect_header(&line, NODE_CSV_HEADER)?;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (label, kind) = line.rsplit_once(',').ok_or_else(|| corrupt(i + 1, "missing kind"))?;
            let kind = kind.parse().map_err(|e: String| corrupt(i + 1, &e))?;
            kinds.insert(label.to_string(), kind);
        }
        let mut triples: Vec<(String, String, f64)> = Vec::new();
        for (i, line) in BufReader::new(edges).lines().enumerate() {
            let line = line?;
            if i == 0 {
                expect_header(&line, EDGE_CSV_HEADER)?;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [fund, asset, w] = fields[..] else {
                return Err(corrupt(i + 1, "expected 3 fields"));
            };
            let w: f64 = w.parse().map_err(|_| corrupt(i + 1, "bad weight"))?;
            if kinds.get(fund) != Some(&NodeKind::Fund) || kinds.get(asset) != Some(&NodeKind::Asset) {
                return Err(corrupt(i + 1, "endpoint kinds disagree with node file"));
            }
            triples.push((fund.to_string(), asset.to_string(), w));
        }
        let g = Self::from_edges(triples.iter().map(|(f, a, w)| (f.as_str(), a.as_str(), *w)))?;
        if g.node_count() != kinds.len() {
            return Err(Error::Corrupt(format!(
                "node file lists {} nodes, edges touch {}",
                kinds.len(),
                g.node_count()
            )));
        }
        Ok(g)
    }
}

fn expect_header(line: &str, header: &str) -> Result<()> {
    if line.trim() != header {
        return Err(Error::Corrupt(format!("expected header `{header}`, found `{line}`")));
    }
    Ok(())
}

fn corrupt(line: usize, reason: &str) -> Error {
    Error::Corrupt(format!("line {line}: {reason}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(edges: &[(&str, &str, f64)]) -> BipartiteGraph {
        BipartiteGraph::from_edges(edges.iter().copied()).unwrap()
    }

    #[test]
    fn one_fund_two_assets() {
        let g = graph(&[("F", "A1", 60.0), ("F", "A2", 40.0)]);
        assert_eq!((g.node_count(), g.edge_count()), (3, 2));
        let f = g.id_of("F").unwrap();
        assert_eq!(f, NodeId(0));
        let probs = g.alias_table(f).probabilities();
        assert!((probs[0] - 0.6).abs() < 1e-12 && (probs[1] - 0.4).abs() < 1e-12);
        let s = g.stats();
        assert_eq!((s.mean_fund_degree, s.mean_asset_degree), (2.0, 1.0));
    }

    #[test]
    fn empty_and_conflicting_inputs() {
        assert!(matches!(BipartiteGraph::build(&CleanEdgeList::default()), Err(Error::EmptyGraph)));
        assert!(matches!(
            BipartiteGraph::from_edges([("X", "Y", 1.0), ("Y", "Z", 1.0)]),
            Err(Error::KindConflict { .. })
        ));
    }

    #[test]
    fn median_is_lower_middle() {
        assert_eq!(lower_median(&[7, 1, 5, 3]), Some(3));
        assert_eq!(lower_median(&[4]), Some(4));
        assert_eq!(lower_median(&[]), None);
    }

    proptest! {
        #[test]
        fn median_matches_sort_and_pick(mut v in prop::collection::vec(0usize..1000, 1..50)) {
            let m = lower_median(&v).unwrap();
            v.sort();
            prop_assert_eq!(m, v[(v.len() + 1) / 2 - 1]);
        }
    }

    #[test]
    fn giant_component_picks_largest() {
        // sizes 5 (F1,F2 + 3 assets) and 3 (F3 + 2 assets)
        let g = graph(&[
            ("F1", "A1", 1.0),
            ("F1", "A2", 1.0),
            ("F2", "A2", 1.0),
            ("F2", "A3", 1.0),
            ("F3", "B1", 1.0),
            ("F3", "B2", 1.0),
        ]);
        let gc = g.giant_component();
        assert_eq!(gc.node_count(), 5);
        assert!(gc.is_connected());
        assert!(gc.id_of("F3").is_none());
        let again = gc.giant_component();
        assert_eq!(again, gc);
    }

    #[test]
    fn giant_component_tie_prefers_smallest_index() {
        let g = graph(&[("F2", "A9", 1.0), ("F1", "B1", 1.0)]);
        let gc = g.giant_component();
        assert_eq!(gc.nodes()[0].label, "F1");
    }

    #[test]
    fn sampling_frequencies() {
        let g = graph(&[("F", "A1", 60.0), ("F", "A2", 40.0), ("G", "A1", 1.0)]);
        let f = g.id_of("F").unwrap();
        let a1 = g.id_of("A1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let hits = (0..n).filter(|_| g.sample_neighbor(f, &mut rng).unwrap() == a1).count();
        assert!((hits as f64 / n as f64 - 0.6).abs() < 0.01);
        let g_id = g.id_of("G").unwrap();
        assert!((0..50).all(|_| g.sample_neighbor(g_id, &mut rng).unwrap() == a1));
    }

    #[test]
    fn uniform_weights_sample_uniformly() {
        let edges: Vec<(String, f64)> = (0..4).map(|i| (format!("A{i}"), 2.5)).collect();
        let g = BipartiteGraph::from_edges(edges.iter().map(|(a, w)| ("F", a.as_str(), *w))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            counts[g.sample_neighbor(NodeId(0), &mut rng).unwrap().index()] += 1;
        }
        for c in &counts[1..] {
            assert!((*c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn persistence_round_trip() {
        let g = graph(&[("F1", "A1", 0.1), ("F1", "A2", 1.0 / 3.0), ("F2", "A2", 99.9)]);
        let (mut e, mut n) = (Vec::new(), Vec::new());
        g.write_edges_csv(&mut e).unwrap();
        g.write_nodes_csv(&mut n).unwrap();
        let back = BipartiteGraph::read(&e[..], &n[..]).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.fingerprint(), g.fingerprint());
        assert!(BipartiteGraph::read(&e[..], &b"node_id,kind\nF1,fund\n"[..]).is_err());
    }

    #[test]
    fn stats_csv() {
        let g = graph(&[("F", "A1", 60.0), ("F", "A2", 40.0)]);
        let mut out = Vec::new();
        g.stats().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("metric,value\nfund_count,1\nasset_count,2\n"));
        assert!(text.contains("median_fund_degree,2\n"));
    }

    #[test]
    fn fingerprint_sensitive_to_weights() {
        let a = graph(&[("F", "A", 1.0)]);
        let b = graph(&[("F", "A", 2.0)]);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), graph(&[("F", "A", 1.0)]).fingerprint());
    }
}
