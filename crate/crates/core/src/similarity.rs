//! Fund similarity in the original asset-weight space and in the embedding,
//! and the statistics comparing the two.

use std::collections::HashSet;
use std::hash::Hash;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::trainer::EmbeddingMatrix;

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::contract(format!("dimensions {} and {} differ", x.len(), y.len())));
    }
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 {
        return Err(Error::DegenerateVector("x".into()));
    }
    if ny == 0.0 {
        return Err(Error::DegenerateVector("y".into()));
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Dot product of two sparse vectors with sorted indices.
pub fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> Result<f64> {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Err(Error::EmptySets);
    }
    Ok(inter as f64 / union as f64)
}

/// Pearson product-moment correlation, accumulated in one pass.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two pairs".into()));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (n, &(x, y)) in pairs.iter().enumerate() {
        let k = (n + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::UndefinedCorrelation("first coordinate is constant".into()));
    }
    if syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("second coordinate is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// A set of funds with pairwise cosine similarity. Funds are kept in
/// ascending label order.
pub trait FundSpace: Sync {
    fn funds(&self) -> &[String];

    fn cosine_at(&self, i: usize, j: usize) -> Result<f64>;

    fn fund_index(&self, label: &str) -> Option<usize> {
        self.funds().binary_search_by(|f| f.as_str().cmp(label)).ok()
    }
}

/// Funds as sparse vectors over the asset universe, weights in percent.
#[derive(Debug, Clone)]
pub struct OriginalRepresentation {
    funds: Vec<String>,
    vectors: Vec<Vec<(u32, f64)>>,
    norms: Vec<f64>,
    dimension: usize,
}

impl OriginalRepresentation {
    pub fn from_graph(g: &BipartiteGraph) -> Self {
        let offset = g.fund_count() as u32;
        let vectors: Vec<Vec<(u32, f64)>> = g
            .fund_ids()
            .map(|f| g.neighbors(f).map(|(a, w)| (a.0 - offset, w)).collect())
            .collect();
        let norms = vectors
            .iter()
            .map(|v| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt())
            .collect();
        OriginalRepresentation {
            funds: g.fund_ids().map(|f| g.label(f).to_string()).collect(),
            vectors,
            norms,
            dimension: g.asset_count(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vector(&self, i: usize) -> &[(u32, f64)] {
        &self.vectors[i]
    }

    /// Dense copy of fund `i`'s asset weights.
    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for &(a, w) in &self.vectors[i] {
            v[a as usize] = w;
        }
        v
    }
}

impl FundSpace for OriginalRepresentation {
    fn funds(&self) -> &[String] {
        &self.funds
    }

    fn cosine_at(&self, i: usize, j: usize) -> Result<f64> {
        for k in [i, j] {
            if self.norms[k] == 0.0 {
                return Err(Error::DegenerateVector(self.funds[k].clone()));
            }
        }
        Ok((sparse_dot(&self.vectors[i], &self.vectors[j]) / (self.norms[i] * self.norms[j])).clamp(-1.0, 1.0))
    }
}

/// Dense fund vectors, typically the fund rows of an embedding.
#[derive(Debug, Clone)]
pub struct DenseFunds {
    funds: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
    norms: Vec<f64>,
}

impl DenseFunds {
    pub fn new(mut rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::param("duplicate fund label"));
        }
        let dim = rows.first().map_or(0, |r| r.1.len());
        if rows.iter().any(|r| r.1.len() != dim) {
            return Err(Error::param("fund vectors differ in dimension"));
        }
        let norms = rows.iter().map(|r| norm(&r.1)).collect();
        let funds = rows.iter().map(|r| r.0.clone()).collect();
        Ok(DenseFunds {
            funds,
            dim,
            rows: rows.into_iter().flat_map(|r| r.1).collect(),
            norms,
        })
    }

    /// Rows of `e` for the listed funds.
    pub fn from_embedding<'a>(e: &EmbeddingMatrix, funds: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let rows = funds
            .into_iter()
            .map(|f| {
                e.vector(f)
                    .map(|v| (f.to_string(), v.to_vec()))
                    .ok_or_else(|| Error::UnknownNode(f.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Rows of `e` for every fund of `g`.
    pub fn embedded_funds(e: &EmbeddingMatrix, g: &BipartiteGraph) -> Result<Self> {
        Self::from_embedding(e, g.fund_ids().map(|f| g.label(f)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

impl FundSpace for DenseFunds {
    fn funds(&self) -> &[String] {
        &self.funds
    }

    fn cosine_at(&self, i: usize, j: usize) -> Result<f64> {
        for k in [i, j] {
            if self.norms[k] == 0.0 {
                return Err(Error::DegenerateVector(self.funds[k].clone()));
            }
        }
        Ok((dot(self.row(i), self.row(j)) / (self.norms[i] * self.norms[j])).clamp(-1.0, 1.0))
    }
}

/// Dense symmetric matrix of all pairwise fund cosines.
#[derive(Debug, Clone)]
pub struct CosineMatrix {
    funds: Vec<String>,
    values: Vec<f64>,
}

impl CosineMatrix {
    pub fn compute<S: FundSpace>(space: &S) -> Result<Self> {
        let n = space.funds().len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| if i == j { Ok(1.0) } else { space.cosine_at(i, j) }).collect())
            .collect::<Result<_>>()?;
        Ok(CosineMatrix {
            funds: space.funds().to_vec(),
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.funds.len() + j]
    }

    pub fn funds(&self) -> &[String] {
        &self.funds
    }

    /// Top `m` funds for fund `i`, ranked as in [`top_m`].
    pub fn ranked(&self, i: usize, m: usize) -> Vec<(usize, f64)> {
        let n = self.funds.len();
        rank((0..n).filter(|&j| j != i).map(|j| (j, self.get(i, j))).collect(), m)
    }
}

/// Descending score, ascending index (funds are label-sorted, so this is the
/// label tie-break).
fn rank(mut scored: Vec<(usize, f64)>, m: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(m);
    scored
}

/// The `m` funds most cosine-similar to `fund`, excluding itself.
pub fn top_m<S: FundSpace>(space: &S, fund: &str, m: usize) -> Result<Vec<(String, f64)>> {
    if m == 0 {
        return Err(Error::param("m must be at least 1"));
    }
    let i = space.fund_index(fund).ok_or_else(|| Error::UnknownNode(fund.to_string()))?;
    let n = space.funds().len();
    let scored = (0..n)
        .filter(|&j| j != i)
        .map(|j| space.cosine_at(i, j).map(|c| (j, c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank(scored, m)
        .into_iter()
        .map(|(j, c)| (space.funds()[j].clone(), c))
        .collect())
}

pub fn write_ranking_csv<W: Write>(ranking: &[(String, f64)], mut sink: W) -> io::Result<()> {
    writeln!(sink, "rank,fund_id,cosine")?;
    for (r, (f, c)) in ranking.iter().enumerate() {
        writeln!(sink, "{},{},{}", r + 1, f, c)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats {
    pub m: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

/// Mean, midpoint median, and population standard deviation.
pub fn describe(m: usize, values: &[f64]) -> DistributionStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.is_empty() {
        f64::NAN
    } else if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    DistributionStats { m, mean, median, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub m_values: Vec<usize>,
    /// Per fund (label order), the Jaccard index for every `m`.
    pub per_fund: Vec<(String, Vec<f64>)>,
    pub stats: Vec<DistributionStats>,
}

impl OverlapReport {
    pub fn write_stats_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "m,mean,median,std")?;
        for s in &self.stats {
            writeln!(sink, "{},{},{},{}", s.m, s.mean, s.median, s.std)?;
        }
        Ok(())
    }

    pub fn write_per_fund_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        write!(sink, "fund_id")?;
        for m in &self.m_values {
            write!(sink, ",jaccard_m{m}")?;
        }
        writeln!(sink)?;
        for (f, js) in &self.per_fund {
            write!(sink, "{f}")?;
            for j in js {
                write!(sink, ",{j}")?;
            }
            writeln!(sink)?;
        }
        Ok(())
    }
}

fn same_funds<A: FundSpace, B: FundSpace>(a: &A, b: &B) -> Result<()> {
    if a.funds() != b.funds() {
        return Err(Error::contract("representations cover different fund sets"));
    }
    if a.funds().len() < 2 {
        return Err(Error::param("at least two funds are needed"));
    }
    Ok(())
}

/// For each fund and each `m`, the Jaccard index between its top-`m`
/// fund sets in the two representations. `m` is capped at `n - 1`.
pub fn overlap_distribution<A: FundSpace, B: FundSpace>(
    original: &A,
    embedded: &B,
    m_values: &[usize],
) -> Result<OverlapReport> {
    same_funds(original, embedded)?;
    if m_values.iter().any(|&m| m == 0) {
        return Err(Error::param("m must be at least 1"));
    }
    let left = CosineMatrix::compute(original)?;
    let right = CosineMatrix::compute(embedded)?;
    let n = left.funds().len();
    let per_fund: Vec<(String, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let js = m_values
                .iter()
                .map(|&m| {
                    let a: HashSet<usize> = left.ranked(i, m).into_iter().map(|x| x.0).collect();
                    let b: HashSet<usize> = right.ranked(i, m).into_iter().map(|x| x.0).collect();
                    jaccard(&a, &b).expect("n >= 2 so top lists are non-empty")
                })
                .collect();
            (left.funds()[i].clone(), js)
        })
        .collect();
    let stats = m_values
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let column: Vec<f64> = per_fund.iter().map(|(_, js)| js[k]).collect();
            describe(m.min(n - 1), &column)
        })
        .collect();
    Ok(OverlapReport {
        m_values: m_values.to_vec(),
        per_fund,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub fund_a: String,
    pub fund_b: String,
    pub cos_original: f64,
    pub cos_embedded: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub points: Vec<ScatterPoint>,
    pub pearson_r: f64,
}

impl Scatter {
    pub fn write_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "fund_a,fund_b,cos_original,cos_embedded")?;
        for p in &self.points {
            writeln!(sink, "{},{},{},{}", p.fund_a, p.fund_b, p.cos_original, p.cos_embedded)?;
        }
        Ok(())
    }
}

/// One `(cos_original, cos_embedded)` point per unordered fund pair, and
/// their Pearson correlation.
pub fn cross_representation_scatter<A: FundSpace, B: FundSpace>(original: &A, embedded: &B) -> Result<Scatter> {
    same_funds(original, embedded)?;
    let n = original.funds().len();
    let points: Vec<ScatterPoint> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    Ok(ScatterPoint {
                        fund_a: original.funds()[i].clone(),
                        fund_b: original.funds()[j].clone(),
                        cos_original: original.cosine_at(i, j)?,
                        cos_embedded: embedded.cosine_at(i, j)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.cos_original, p.cos_embedded)).collect();
    let pearson_r = pearson(&pairs)?;
    Ok(Scatter { points, pearson_r })
}
