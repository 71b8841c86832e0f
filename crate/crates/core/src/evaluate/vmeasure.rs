use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Fund/asset separation score of one clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BipartitenessScore {
    pub k: usize,
    pub homogeneity: f64,
    pub completeness: f64,
    pub beta: f64,
    pub v_measure: f64,
}

/// `(1 + beta) h c / (beta h + c)`, or 0 when the denominator vanishes.
pub fn weighted_v(h: f64, c: f64, beta: f64) -> f64 {
    let denom = beta * h + c;
    if denom > 0.0 {
        (1.0 + beta) * h * c / denom
    } else {
        0.0
    }
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Dense ids in first-seen order, so every sum below runs in a fixed order.
fn dense_ids<T: Eq + Hash>(items: &[T]) -> (Vec<usize>, usize) {
    let mut index: HashMap<&T, usize> = HashMap::new();
    let ids = items
        .iter()
        .map(|x| {
            let next = index.len();
            *index.entry(x).or_insert(next)
        })
        .collect();
    (ids, index.len())
}

/// Homogeneity, completeness and the beta-weighted V-measure of
/// `predicted` against `truth`, both indexed by point. Entropies are in
/// nats.
pub fn v_measure<C, K>(truth: &[C], predicted: &[K], beta: f64) -> Result<(f64, f64, f64)>
where
    C: Eq + Hash,
    K: Eq + Hash,
{
    if truth.len() != predicted.len() {
        return Err(Error::contract(format!(
            "{} truth labels for {} clustered points",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::contract("no points to score"));
    }
    if !(beta > 0.0) {
        return Err(Error::param("beta must be positive"));
    }
    let n = truth.len() as f64;
    let (classes, nc) = dense_ids(truth);
    let (clusters, nk) = dense_ids(predicted);
    let mut joint = vec![0usize; nc * nk];
    let mut class_counts = vec![0usize; nc];
    let mut cluster_counts = vec![0usize; nk];
    for (&c, &k) in classes.iter().zip(&clusters) {
        joint[c * nk + k] += 1;
        class_counts[c] += 1;
        cluster_counts[k] += 1;
    }
    let h_c = entropy(&class_counts, n);
    let h_k = entropy(&cluster_counts, n);
    let (mut h_c_given_k, mut h_k_given_c) = (0.0, 0.0);
    for c in 0..nc {
        for k in 0..nk {
            let joint = joint[c * nk + k];
            if joint == 0 {
                continue;
            }
            let (j, p) = (joint as f64, joint as f64 / n);
            h_c_given_k -= p * (j / cluster_counts[k] as f64).ln();
            h_k_given_c -= p * (j / class_counts[c] as f64).ln();
        }
    }

    let homogeneity = if h_c == 0.0 { 1.0 } else { (1.0 - h_c_given_k / h_c).clamp(0.0, 1.0) };
    let completeness = if h_k == 0.0 { 1.0 } else { (1.0 - h_k_given_c / h_k).clamp(0.0, 1.0) };
    Ok((homogeneity, completeness, weighted_v(homogeneity, completeness, beta)))
}

pub fn score<C, K>(truth: &[C], predicted: &[K], k: usize, beta: f64) -> Result<BipartitenessScore>
where
    C: Eq + Hash,
    K: Eq + Hash,
{
    let (homogeneity, completeness, v_measure) = v_measure(truth, predicted, beta)?;
    Ok(BipartitenessScore {
        k,
        homogeneity,
        completeness,
        beta,
        v_measure,
    })
}
