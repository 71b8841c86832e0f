//! Clustering-based evaluation of embeddings: the fund/asset separation
//! sweep, hyperparameter grids, cluster composition and benchmark cohesion.

mod cohesion;
mod kmeans;
mod vmeasure;

use std::io::{self, Write};
use std::ops::RangeInclusive;

use rayon::prelude::*;

pub use cohesion::{
    benchmark_cohesion, group_members, read_benchmarks, write_cohesion_csv, Cohesion, CohesionRow,
};
pub use kmeans::{kmeans, lloyd, ClusterAssignment, KMeansOptions};
pub use vmeasure::{score, v_measure, weighted_v, BipartitenessScore};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, NodeKind};
use crate::trainer::{train, EmbeddingMatrix, TrainOptions, TrainParams, TrainReport};
use crate::walker::{generate_walks, WalkCorpus, WalkOptions, WalkParams};

pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_K_RANGE: RangeInclusive<usize> = 2..=10;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub k_range: RangeInclusive<usize>,
    pub beta: f64,
    pub kmeans: KMeansOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            k_range: DEFAULT_K_RANGE,
            beta: DEFAULT_BETA,
            kmeans: KMeansOptions::default(),
        }
    }
}

/// Scores for every `k` of a sweep, plus the clustering at the best `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub scores: Vec<BipartitenessScore>,
    /// Index into `scores` of the highest V-measure (smallest `k` on ties).
    pub best: usize,
    pub best_assignment: ClusterAssignment,
}

impl Sweep {
    pub fn best_score(&self) -> &BipartitenessScore {
        &self.scores[self.best]
    }

    pub fn write_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "k,homogeneity,completeness,beta,v_measure")?;
        for s in &self.scores {
            writeln!(sink, "{},{},{},{},{}", s.k, s.homogeneity, s.completeness, s.beta, s.v_measure)?;
        }
        Ok(())
    }
}

/// Node kinds aligned with the rows of `e`.
pub fn kinds_of(e: &EmbeddingMatrix, g: &BipartiteGraph) -> Result<Vec<NodeKind>> {
    e.labels()
        .iter()
        .map(|l| g.id_of(l).map(|v| g.kind(v)).ok_or_else(|| Error::UnknownNode(l.clone())))
        .collect()
}

/// K-means over every embedded node for each `k` in the range, scored
/// against `truth` (one kind per embedding row).
pub fn bipartiteness_sweep(e: &EmbeddingMatrix, truth: &[NodeKind], opts: &SweepOptions) -> Result<Sweep> {
    if truth.len() != e.len() {
        return Err(Error::contract(format!(
            "{} kinds for {} embedded nodes",
            truth.len(),
            e.len()
        )));
    }
    let (lo, hi) = (*opts.k_range.start(), *opts.k_range.end());
    if lo < 2 || lo > hi || hi > e.len() {
        return Err(Error::param(format!(
            "k range [{lo}, {hi}] must lie within [2, {}]",
            e.len()
        )));
    }
    let runs: Vec<(BipartitenessScore, ClusterAssignment)> = opts
        .k_range
        .clone()
        .into_par_iter()
        .map(|k| {
            let a = kmeans(e.input(), e.dim(), k, &opts.kmeans)?;
            let s = score(truth, &a.labels, k, opts.beta)?;
            Ok((s, a))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, (s, _)) in runs.iter().enumerate() {
        if s.v_measure > runs[best].0.v_measure {
            best = i;
        }
    }
    let mut scores = Vec::with_capacity(runs.len());
    let mut best_assignment = None;
    for (i, (s, a)) in runs.into_iter().enumerate() {
        scores.push(s);
        if i == best {
            best_assignment = Some(a);
        }
    }
    Ok(Sweep {
        scores,
        best,
        best_assignment: best_assignment.expect("non-empty k range"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub walk: WalkParams,
    pub train: TrainParams,
}

/// The full cartesian grid, ordered by `d`, then `(l, r)`, then `(p, q)`.
pub fn cartesian_grid(
    dims: &[usize],
    lengths_and_walks: &[(usize, usize)],
    pq: &[(f64, f64)],
    walk: WalkParams,
    train: TrainParams,
) -> Vec<GridPoint> {
    let mut points = Vec::new();
    for &dim in dims {
        for &(walk_length, walks_per_node) in lengths_and_walks {
            for &(p, q) in pq {
                points.push(GridPoint {
                    walk: WalkParams {
                        walk_length,
                        walks_per_node,
                        p,
                        q,
                        ..walk
                    },
                    train: TrainParams { dim, ..train },
                });
            }
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowOutcome {
    pub optimal_k: usize,
    pub v_measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub point: GridPoint,
    /// The error message of a failed row.
    pub outcome: std::result::Result<RowOutcome, String>,
}

impl GridRow {
    pub fn v_measure(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.v_measure)
    }
}

/// Everything one grid point produced.
#[derive(Debug, Clone)]
pub struct RowArtifacts {
    pub corpus: WalkCorpus,
    pub embedding: EmbeddingMatrix,
    pub report: TrainReport,
    pub sweep: Sweep,
}

impl RowArtifacts {
    pub fn outcome(&self) -> RowOutcome {
        let s = self.sweep.best_score();
        RowOutcome {
            optimal_k: s.k,
            v_measure: s.v_measure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GridOptions {
    pub walk: WalkOptions,
    pub train: TrainOptions,
    pub parallel_rows: bool,
}

/// Walks, training and sweep for one grid point.
pub fn run_grid_point(
    g: &BipartiteGraph,
    point: &GridPoint,
    sweep: &SweepOptions,
    opts: &GridOptions,
) -> Result<RowArtifacts> {
    let corpus = generate_walks(g, &point.walk, &opts.walk)?;
    let (embedding, report) = train(&corpus, &point.train, &opts.train)?;
    let truth = kinds_of(&embedding, g)?;
    let sweep = bipartiteness_sweep(&embedding, &truth, sweep)?;
    Ok(RowArtifacts {
        corpus,
        embedding,
        report,
        sweep,
    })
}

/// Row with the highest V-measure; ties go to the smaller `d`, then the
/// smaller `l`, then the earlier row. Failed rows never win.
pub fn best_row(rows: &[GridRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        let Some(v) = row.v_measure() else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bv = rows[b].v_measure().expect("best row succeeded");
                let key = |r: &GridRow| (r.point.train.dim, r.point.walk.walk_length);
                v > bv || (v == bv && key(row) < key(&rows[b]))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: Option<usize>,
    pub best_artifacts: Option<RowArtifacts>,
}

/// Runs every grid point. A failing point is recorded with its error and
/// the search continues.
pub fn grid_search(
    g: &BipartiteGraph,
    grid: &[GridPoint],
    sweep: &SweepOptions,
    opts: &GridOptions,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::param("the grid has no points"));
    }
    let run = |point: &GridPoint| {
        let result = run_grid_point(g, point, sweep, opts);
        if let Err(e) = &result {
            log::warn!("grid point {point:?} failed: {e}");
        }
        result
    };
    let results: Vec<Result<RowArtifacts>> = if opts.parallel_rows {
        grid.par_iter().map(run).collect()
    } else {
        grid.iter().map(run).collect()
    };
    let rows: Vec<GridRow> = grid
        .iter()
        .zip(&results)
        .map(|(point, r)| GridRow {
            point: *point,
            outcome: r.as_ref().map(RowArtifacts::outcome).map_err(|e| e.to_string()),
        })
        .collect();
    let best = best_row(&rows);
    let best_artifacts = best.and_then(|b| results.into_iter().nth(b)).and_then(Result::ok);
    Ok(GridResult {
        rows,
        best,
        best_artifacts,
    })
}

/// `d,l,r,p,q,optimal_k,v_measure`, one line per row; failed rows leave the
/// last two fields empty.
pub fn write_grid_csv<W: Write>(rows: &[GridRow], mut sink: W) -> io::Result<()> {
    writeln!(sink, "d,l,r,p,q,optimal_k,v_measure")?;
    for row in rows {
        let (w, t) = (&row.point.walk, &row.point.train);
        write!(sink, "{},{},{},{},{},", t.dim, w.walk_length, w.walks_per_node, w.p, w.q)?;
        match &row.outcome {
            Ok(o) => writeln!(sink, "{},{}", o.optimal_k, o.v_measure)?,
            Err(_) => writeln!(sink, ",")?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterType {
    FundCluster,
    AssetCluster,
    Mixed,
}

impl std::fmt::Display for ClusterType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterType::FundCluster => "Fund Cluster",
            ClusterType::AssetCluster => "Asset Cluster",
            ClusterType::Mixed => "Mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterSummary {
    pub fund_count: usize,
    pub asset_count: usize,
    pub cluster_type: ClusterType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterComposition {
    pub clusters: Vec<ClusterSummary>,
    pub misclassified_funds: Vec<String>,
    pub misclassified_assets: Vec<String>,
}

/// Fund and asset counts per cluster. A cluster with at least half funds is
/// a fund cluster; an empty cluster is `Mixed`. Funds placed in asset
/// clusters, and assets in fund clusters, are listed by label.
pub fn cluster_composition(
    labels: &[String],
    truth: &[NodeKind],
    assignment: &ClusterAssignment,
) -> Result<ClusterComposition> {
    if labels.len() != truth.len() || truth.len() != assignment.labels.len() {
        return Err(Error::contract("labels, kinds and assignment differ in length"));
    }
    let mut counts = vec![(0usize, 0usize); assignment.k];
    for (&kind, &c) in truth.iter().zip(&assignment.labels) {
        match kind {
            NodeKind::Fund => counts[c].0 += 1,
            NodeKind::Asset => counts[c].1 += 1,
        }
    }
    let clusters: Vec<ClusterSummary> = counts
        .into_iter()
        .map(|(fund_count, asset_count)| ClusterSummary {
            fund_count,
            asset_count,
            cluster_type: if fund_count + asset_count == 0 {
                ClusterType::Mixed
            } else if 2 * fund_count >= fund_count + asset_count {
                ClusterType::FundCluster
            } else {
                ClusterType::AssetCluster
            },
        })
        .collect();
    let mut misclassified_funds = Vec::new();
    let mut misclassified_assets = Vec::new();
    for ((label, &kind), &c) in labels.iter().zip(truth).zip(&assignment.labels) {
        match (kind, clusters[c].cluster_type) {
            (NodeKind::Fund, ClusterType::AssetCluster) => misclassified_funds.push(label.clone()),
            (NodeKind::Asset, ClusterType::FundCluster) => misclassified_assets.push(label.clone()),
            _ => {}
        }
    }
    misclassified_funds.sort();
    misclassified_assets.sort();
    Ok(ClusterComposition {
        clusters,
        misclassified_funds,
        misclassified_assets,
    })
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl ClusterComposition {
    /// Clusters numbered from 1, shares in percent of the cluster size,
    /// followed by a `total` row.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "cluster,funds,fund_pct,assets,asset_pct,cluster_type")?;
        for (i, c) in self.clusters.iter().enumerate() {
            let size = c.fund_count + c.asset_count;
            writeln!(
                sink,
                "{},{},{:.2},{},{:.2},{}",
                i + 1,
                c.fund_count,
                pct(c.fund_count, size),
                c.asset_count,
                pct(c.asset_count, size),
                c.cluster_type
            )?;
        }
        let funds: usize = self.clusters.iter().map(|c| c.fund_count).sum();
        let assets: usize = self.clusters.iter().map(|c| c.asset_count).sum();
        writeln!(
            sink,
            "total,{},{:.2},{},{:.2},",
            funds,
            pct(funds, funds + assets),
            assets,
            pct(assets, funds + assets)
        )
    }

    /// `kind,label` for every misclassified node.
    pub fn write_misclassified_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "kind,label")?;
        for f in &self.misclassified_funds {
            writeln!(sink, "fund,{f}")?;
        }
        for a in &self.misclassified_assets {
            writeln!(sink, "asset,{a}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (EmbeddingMatrix, Vec<NodeKind>) {
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        let mut kinds = Vec::new();
        for i in 0..12 {
            let fund = i % 2 == 0;
            labels.push(format!("N{i:02}"));
            let jitter = 0.01 * i as f64;
            rows.extend_from_slice(&if fund { [5.0 + jitter, 0.0] } else { [-5.0, jitter] });
            kinds.push(if fund { NodeKind::Fund } else { NodeKind::Asset });
        }
        (EmbeddingMatrix::from_rows(labels, 2, rows).unwrap(), kinds)
    }

    #[test]
    fn separable_embedding_reaches_one() {
        let (e, kinds) = separable();
        let s = bipartiteness_sweep(&e, &kinds, &SweepOptions::default()).unwrap();
        assert_eq!(s.scores.len(), 9);
        assert_eq!(s.scores[0].k, 2);
        assert!((s.best_score().v_measure - 1.0).abs() < 1e-12);
        assert_eq!(s.best_score().k, 2);
    }

    #[test]
    fn sweep_range_checks() {
        let (e, kinds) = separable();
        let bad = |r: RangeInclusive<usize>| SweepOptions {
            k_range: r,
            ..SweepOptions::default()
        };
        assert!(bipartiteness_sweep(&e, &kinds, &bad(1..=3)).is_err());
        assert!(bipartiteness_sweep(&e, &kinds, &bad(2..=13)).is_err());
        assert!(bipartiteness_sweep(&e, &kinds[1..], &SweepOptions::default()).is_err());
    }

    fn row(dim: usize, l: usize, v: Option<f64>) -> GridRow {
        GridRow {
            point: GridPoint {
                walk: WalkParams {
                    walk_length: l,
                    ..WalkParams::default()
                },
                train: TrainParams {
                    dim,
                    ..TrainParams::default()
                },
            },
            outcome: v
                .map(|v| RowOutcome {
                    optimal_k: 2,
                    v_measure: v,
                })
                .ok_or_else(|| "boom".to_string()),
        }
    }

    #[test]
    fn best_row_tie_breaks() {
        let rows = vec![row(32, 64, Some(0.8)), row(16, 128, Some(0.8)), row(16, 64, Some(0.8)), row(8, 64, None)];
        assert_eq!(best_row(&rows), Some(2));
        assert_eq!(best_row(&rows[3..]), None);
        assert_eq!(best_row(&[row(8, 8, Some(0.1)), row(64, 64, Some(0.2))]), Some(1));
    }

    #[test]
    fn grid_csv_shape() {
        let mut out = Vec::new();
        write_grid_csv(&[row(16, 64, Some(0.5)), row(8, 64, None)], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "d,l,r,p,q,optimal_k,v_measure");
        assert_eq!(lines[1], "16,64,10,1,1,2,0.5");
        assert_eq!(lines[2], "8,64,10,1,1,,");
    }

    #[test]
    fn default_grid_shape() {
        let g = cartesian_grid(
            &[8, 16, 32],
            &[(64, 64), (128, 128)],
            &[(0.1, 5.0), (5.0, 0.1)],
            WalkParams::default(),
            TrainParams::default(),
        );
        assert_eq!(g.len(), 12);
        assert_eq!(g[0].train.dim, 8);
        assert_eq!((g[11].walk.p, g[11].walk.q), (5.0, 0.1));
    }

    fn assignment(labels: Vec<usize>, k: usize) -> ClusterAssignment {
        ClusterAssignment {
            k,
            labels,
            centroids: vec![0.0; k],
            inertia: 0.0,
            inertia_trace: vec![0.0],
        }
    }

    #[test]
    fn composition_rules() {
        use NodeKind::*;
        let labels: Vec<String> = (0..6).map(|i| format!("n{i}")).collect();
        let truth = [Fund, Fund, Fund, Asset, Asset, Asset];
        // cluster 0: 2 funds; cluster 1: 1 fund 3 assets; cluster 2 empty
        let c = cluster_composition(&labels, &truth, &assignment(vec![0, 0, 1, 1, 1, 1], 3)).unwrap();
        assert_eq!(c.clusters[0].cluster_type, ClusterType::FundCluster);
        assert_eq!(c.clusters[1].cluster_type, ClusterType::AssetCluster);
        assert_eq!(c.clusters[2].cluster_type, ClusterType::Mixed);
        assert_eq!(c.misclassified_funds, vec!["n2".to_string()]);
        assert!(c.misclassified_assets.is_empty());
        let total: usize = c.clusters.iter().map(|x| x.fund_count + x.asset_count).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn reference_rows_classify() {
        use NodeKind::*;
        let mut truth = vec![Fund; 60];
        truth.extend(vec![Asset; 9933]);
        truth.extend(vec![Fund; 383]);
        let mut labels_of = vec![0; 9993];
        labels_of.extend(vec![1; 383]);
        let names: Vec<String> = (0..truth.len()).map(|i| i.to_string()).collect();
        let c = cluster_composition(&names, &truth, &assignment(labels_of, 2)).unwrap();
        assert_eq!(c.clusters[0].cluster_type, ClusterType::AssetCluster);
        assert_eq!(c.clusters[1].cluster_type, ClusterType::FundCluster);
        assert_eq!(c.misclassified_funds.len(), 60);
    }

    #[test]
    fn single_cluster_has_no_majority_misfits() {
        use NodeKind::*;
        let names: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let truth = [Asset, Asset, Asset, Fund, Asset];
        let c = cluster_composition(&names, &truth, &assignment(vec![0; 5], 1)).unwrap();
        assert!(c.misclassified_assets.is_empty());
        assert_eq!(c.misclassified_funds.len(), 1);
    }
}
