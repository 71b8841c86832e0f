//! Skip-gram with negative sampling over a walk corpus.
//!
//! Every step draws its gradient from [`sgns_loss_grad`], whether it runs
//! through [`sgns_step`] on an [`EmbeddingMatrix`] or inside [`train`].
//! In the multi-worker mode, workers update the shared parameters without
//! locking (relaxed atomics); updates may be lost, so only single-worker
//! runs are bit-reproducible.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::walker::{walk_seed, WalkCorpus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub dim: usize,
    /// Context radius around each center position.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            dim: 16,
            window: 10,
            negatives: 5,
            epochs: 5,
            lr_initial: 0.025,
            lr_final: 1e-4,
            seed: 42,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 {
            return Err(Error::param("dim, window, negatives and epochs must be at least 1"));
        }
        if !(self.lr_final > 0.0 && self.lr_initial >= self.lr_final && self.lr_initial.is_finite()) {
            return Err(Error::param(format!(
                "learning rates must satisfy lr_initial ({}) >= lr_final ({}) > 0",
                self.lr_initial, self.lr_final
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    /// 1 selects the deterministic single-worker mode.
    pub workers: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn count(&self, label: &str) -> Option<u64> {
        self.index_of(label).map(|i| self.counts[i])
    }
}

/// Counts node occurrences. Rows follow the corpus label order, keeping
/// only labels that occur.
pub fn build_vocab(corpus: &WalkCorpus) -> Result<Vocab> {
    Ok(vocab_and_sentences(corpus)?.0)
}

fn vocab_and_sentences(corpus: &WalkCorpus) -> Result<(Vocab, Vec<Vec<u32>>)> {
    let mut counts = vec![0u64; corpus.labels.len()];
    for &t in corpus.walks.iter().flatten() {
        counts[t as usize] += 1;
    }
    let mut row = vec![u32::MAX; counts.len()];
    let mut vocab = Vocab { labels: Vec::new(), counts: Vec::new(), index: HashMap::new() };
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            row[i] = vocab.labels.len() as u32;
            vocab.index.insert(corpus.labels[i].clone(), vocab.labels.len());
            vocab.labels.push(corpus.labels[i].clone());
            vocab.counts.push(c);
        }
    }
    if vocab.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sentences = corpus
        .walks
        .iter()
        .map(|w| w.iter().map(|&t| row[t as usize]).collect())
        .collect();
    Ok((vocab, sentences))
}

/// Draws negatives from the unigram distribution raised to the 3/4 power.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    table: AliasTable,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Result<Self> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        AliasTable::new(&weights)
            .map(|table| NegativeSampler { table })
            .ok_or(Error::EmptyInput)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.table.probabilities()
    }
}

/// Number of `(center, context)` position pairs in a sentence of `len`
/// tokens with the given radius.
pub fn pair_count(len: usize, window: usize) -> usize {
    (0..len)
        .map(|i| i.min(window) + (len - 1 - i).min(window))
        .sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

/// `-ln(sigmoid(x))`, evaluated stably.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-30.0, 30.0);
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Loss of one center vector against `labels.len()` output vectors stored
/// row-major in `targets`, where `labels[i]` marks the positive context.
///
/// Writes the loss gradients with respect to the center vector and every
/// target row, all evaluated at the current parameters.
pub fn sgns_loss_grad(
    center: &[f64],
    targets: &[f64],
    labels: &[bool],
    grad_center: &mut [f64],
    grad_targets: &mut [f64],
) -> f64 {
    let d = center.len();
    grad_center.fill(0.0);
    let mut loss = 0.0;
    for (t, &positive) in labels.iter().enumerate() {
        let u = &targets[t * d..(t + 1) * d];
        let x: f64 = u.iter().zip(center).map(|(a, b)| a * b).sum();
        let (l, g) = if positive {
            (neg_log_sigmoid(x), sigmoid(x) - 1.0)
        } else {
            (neg_log_sigmoid(-x), sigmoid(x))
        };
        loss += l;
        let gt = &mut grad_targets[t * d..(t + 1) * d];
        for k in 0..d {
            grad_center[k] += g * u[k];
            gt[k] = g * center[k];
        }
    }
    loss
}

/// Learned vectors. `input` is the embedding; `output` holds the context
/// parameters and is only kept to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    input: Vec<f64>,
    output: Option<Vec<f64>>,
    pub params: Option<TrainParams>,
}

impl EmbeddingMatrix {
    pub fn from_rows(labels: Vec<String>, dim: usize, input: Vec<f64>) -> Result<Self> {
        if input.len() != labels.len() * dim {
            return Err(Error::param("row count does not match labels"));
        }
        let index: HashMap<String, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        if index.len() != labels.len() {
            return Err(Error::param("duplicate labels"));
        }
        Ok(EmbeddingMatrix { labels, index, dim, input, output: None, params: None })
    }

    pub fn with_output(mut self, output: Vec<f64>) -> Result<Self> {
        if output.len() != self.input.len() {
            return Err(Error::param("output matrix shape differs from input"));
        }
        self.output = Some(output);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, label: &str) -> Option<&[f64]> {
        self.index_of(label).map(|i| self.row(i))
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn output(&self) -> Option<&[f64]> {
        self.output.as_deref()
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(self.output.iter().flatten()).all(|x| x.is_finite())
    }

    /// `<n> <d>` header, then `<label> <v1> ... <vd>` per row. Values use the
    /// shortest decimal form that reads back to the same bits.
    pub fn save<W: Write>(&self, sink: W) -> io::Result<()> {
        write_matrix(&self.labels, self.dim, &self.input, sink)
    }

    /// Writes the context vectors in the same layout as [`save`](Self::save).
    pub fn save_output<W: Write>(&self, sink: W) -> io::Result<()> {
        let zeros;
        let output = match &self.output {
            Some(o) => o,
            None => {
                zeros = vec![0.0; self.input.len()];
                &zeros
            }
        };
        write_matrix(&self.labels, self.dim, output, sink)
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        let (labels, dim, values) = read_matrix(source)?;
        Self::from_rows(labels, dim, values).map_err(|e| Error::Corrupt(e.to_string()))
    }

    /// Attaches context vectors saved by [`save_output`](Self::save_output).
    pub fn load_output<R: Read>(self, source: R) -> Result<Self> {
        let (labels, dim, values) = read_matrix(source)?;
        if labels != self.labels || dim != self.dim {
            return Err(Error::Corrupt("context vectors do not match the embedding".into()));
        }
        self.with_output(values)
    }
}

fn write_matrix<W: Write>(labels: &[String], dim: usize, values: &[f64], mut sink: W) -> io::Result<()> {
    writeln!(sink, "{} {}", labels.len(), dim)?;
    let mut line = String::new();
    for (i, label) in labels.iter().enumerate() {
        line.clear();
        line.push_str(label);
        for v in &values[i * dim..(i + 1) * dim] {
            use std::fmt::Write as _;
            let _ = write!(line, " {v}");
        }
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

fn read_matrix<R: Read>(source: R) -> Result<(Vec<String>, usize, Vec<f64>)> {
    let mut lines = BufReader::new(source).lines();
    let header = lines.next().ok_or_else(|| Error::Corrupt("missing header".into()))??;
    let dims: Vec<usize> = header
        .split_ascii_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Corrupt(format!("bad header `{header}`")))?;
    let [n, d] = dims[..] else {
        return Err(Error::Corrupt(format!("bad header `{header}`")));
    };
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * d);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let label = fields.next().expect("non-empty line");
        let row: Vec<f64> = fields
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Corrupt(format!("line {}: bad value", i + 2)))?;
        if row.len() != d {
            return Err(Error::Corrupt(format!("line {}: {} values, expected {d}", i + 2, row.len())));
        }
        labels.push(label.to_string());
        values.extend(row);
    }
    if labels.len() != n {
        return Err(Error::Corrupt(format!("header declares {n} rows, found {}", labels.len())));
    }
    Ok((labels, d, values))
}

/// One gradient-descent step on a single `(center, context)` pair and its
/// negatives. Returns the loss before the update.
pub fn sgns_step(
    m: &mut EmbeddingMatrix,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
) -> Result<f64> {
    let n = m.len();
    if let Some(&bad) = [center, context].iter().chain(negatives).find(|&&i| i >= n) {
        return Err(Error::UnknownNode(format!("row {bad}")));
    }
    if center == context {
        return Err(Error::contract("center and context must differ"));
    }
    if !(lr > 0.0) {
        return Err(Error::param("learning rate must be positive"));
    }
    let d = m.dim;
    let output = m.output.get_or_insert_with(|| vec![0.0; m.input.len()]);
    let rows: Vec<usize> = std::iter::once(context).chain(negatives.iter().copied()).collect();
    let labels: Vec<bool> = rows.iter().enumerate().map(|(i, _)| i == 0).collect();
    let mut targets = Vec::with_capacity(rows.len() * d);
    for &r in &rows {
        targets.extend_from_slice(&output[r * d..(r + 1) * d]);
    }
    let center_vec = m.input[center * d..(center + 1) * d].to_vec();
    let mut grad_center = vec![0.0; d];
    let mut grad_targets = vec![0.0; rows.len() * d];
    let loss = sgns_loss_grad(&center_vec, &targets, &labels, &mut grad_center, &mut grad_targets);
    for (t, &r) in rows.iter().enumerate() {
        for k in 0..d {
            output[r * d + k] -= lr * grad_targets[t * d + k];
        }
    }
    for k in 0..d {
        m.input[center * d + k] -= lr * grad_center[k];
    }
    Ok(loss)
}

struct SharedMatrix {
    cells: Vec<AtomicU64>,
    dim: usize,
}

impl SharedMatrix {
    fn new(values: Vec<f64>, dim: usize) -> Self {
        SharedMatrix {
            cells: values.into_iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            dim,
        }
    }

    #[inline]
    fn read(&self, row: usize, out: &mut [f64]) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (o, c) in out.iter_mut().zip(cells) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    /// `row -= scale * delta`; concurrent writers may overwrite each other.
    #[inline]
    fn descend(&self, row: usize, delta: &[f64], scale: f64) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (c, d) in cells.iter().zip(delta) {
            let v = f64::from_bits(c.load(Ordering::Relaxed)) - scale * d;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_values(self) -> Vec<f64> {
        self.cells.into_iter().map(|c| f64::from_bits(c.into_inner())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss per trained pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub pairs_per_epoch: usize,
}

struct Trainer<'a> {
    params: &'a TrainParams,
    sampler: NegativeSampler,
    input: SharedMatrix,
    output: SharedMatrix,
    total_pairs: f64,
    processed: AtomicU64,
}

struct Scratch {
    center: Vec<f64>,
    targets: Vec<f64>,
    rows: Vec<usize>,
    labels: Vec<bool>,
    grad_center: Vec<f64>,
    grad_targets: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize, negatives: usize) -> Self {
        let k = negatives + 1;
        Scratch {
            center: vec![0.0; dim],
            targets: vec![0.0; k * dim],
            rows: Vec::with_capacity(k),
            labels: Vec::with_capacity(k),
            grad_center: vec![0.0; dim],
            grad_targets: vec![0.0; k * dim],
        }
    }
}

impl Trainer<'_> {
    fn lr(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64 / self.total_pairs.max(1.0);
        let p = self.params;
        (p.lr_initial - (p.lr_initial - p.lr_final) * done).max(p.lr_final)
    }

    /// Trains every pair of one sentence; returns (loss sum, trained pairs).
    fn sentence<R: Rng>(&self, sentence: &[u32], rng: &mut R, s: &mut Scratch) -> (f64, usize) {
        let w = self.params.window;
        let d = self.input.dim;
        let mut loss = 0.0;
        let mut trained = 0;
        for (i, &center) in sentence.iter().enumerate() {
            let lo = i.saturating_sub(w);
            let hi = (i + w).min(sentence.len() - 1);
            for j in (lo..=hi).filter(|&j| j != i) {
                let lr = self.lr();
                self.processed.fetch_add(1, Ordering::Relaxed);
                let context = sentence[j];
                if context == center {
                    continue;
                }
                s.rows.clear();
                s.labels.clear();
                s.rows.push(context as usize);
                s.labels.push(true);
                for _ in 0..self.params.negatives {
                    // Redraw collisions with the positive context a few times.
                    let neg = (0..8)
                        .map(|_| self.sampler.sample(rng))
                        .find(|&n| n != context as usize);
                    if let Some(n) = neg {
                        s.rows.push(n);
                        s.labels.push(false);
                    }
                }
                let k = s.rows.len();
                self.input.read(center as usize, &mut s.center);
                for (t, &r) in s.rows.iter().enumerate() {
                    self.output.read(r, &mut s.targets[t * d..(t + 1) * d]);
                }
                loss += sgns_loss_grad(
                    &s.center,
                    &s.targets[..k * d],
                    &s.labels,
                    &mut s.grad_center,
                    &mut s.grad_targets[..k * d],
                );
                for (t, &r) in s.rows.iter().enumerate() {
                    self.output.descend(r, &s.grad_targets[t * d..(t + 1) * d], lr);
                }
                self.input.descend(center as usize, &s.grad_center, lr);
                trained += 1;
            }
        }
        (loss, trained)
    }
}

/// Trains input and output vectors for every node in `corpus`.
///
/// Input vectors start uniform in `[-0.5/d, 0.5/d]` and output vectors at
/// zero. The learning rate decays linearly from `lr_initial` to `lr_final`
/// over all position pairs of all epochs. Every epoch visits the walks in
/// a fresh seeded random order. Pairs whose center and context are the
/// same node are skipped but still advance the schedule.
pub fn train(
    corpus: &WalkCorpus,
    params: &TrainParams,
    opts: &TrainOptions,
) -> Result<(EmbeddingMatrix, TrainReport)> {
    params.validate()?;
    let (vocab, sentences) = vocab_and_sentences(corpus)?;
    let longest = sentences.iter().map(Vec::len).max().unwrap_or(0);
    if params.window + 1 > longest {
        log::warn!(
            "window {} exceeds the longest walk ({} nodes); contexts truncate at walk ends",
            params.window,
            longest
        );
    }
    let d = params.dim;
    let n = vocab.len();
    let mut init_rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bound = 0.5 / d as f64;
    let input: Vec<f64> = (0..n * d).map(|_| init_rng.gen_range(-bound..bound)).collect();

    let pairs_per_epoch: usize = sentences.iter().map(|s| pair_count(s.len(), params.window)).sum();
    let trainer = Trainer {
        params,
        sampler: NegativeSampler::new(&vocab.counts)?,
        input: SharedMatrix::new(input, d),
        output: SharedMatrix::new(vec![0.0; n * d], d),
        total_pairs: (pairs_per_epoch * params.epochs) as f64,
        processed: AtomicU64::new(0),
    };

    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    for epoch in 0..params.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(walk_seed(params.seed, epoch, usize::MAX));
        order.shuffle(&mut shuffle_rng);
        let (loss, trained) = if opts.workers <= 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(params.seed, epoch, 0));
            let mut scratch = Scratch::new(d, params.negatives);
            order.iter().fold((0.0, 0), |(l, t), &s| {
                let (dl, dt) = trainer.sentence(&sentences[s], &mut rng, &mut scratch);
                (l + dl, t + dt)
            })
        } else {
            let chunk = order.len().div_ceil(opts.workers).max(1);
            let sentences = &sentences;
            std::thread::scope(|scope| {
                let handles: Vec<_> = order
                    .chunks(chunk)
                    .enumerate()
                    .map(|(w, part)| {
                        let trainer = &trainer;
                        scope.spawn(move || {
                            let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(params.seed, epoch, w));
                            let mut scratch = Scratch::new(d, params.negatives);
                            part.iter().fold((0.0, 0), |(l, t), &s| {
                                let (dl, dt) = trainer.sentence(&sentences[s], &mut rng, &mut scratch);
                                (l + dl, t + dt)
                            })
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .fold((0.0, 0), |(l, t), (dl, dt)| (l + dl, t + dt))
            })
        };
        epoch_losses.push(if trained > 0 { loss / trained as f64 } else { 0.0 });
    }

    let Trainer { input, output, .. } = trainer;
    let mut m = EmbeddingMatrix::from_rows(vocab.labels, d, input.into_values())?.with_output(output.into_values())?;
    m.params = Some(*params);
    Ok((m, TrainReport { epoch_losses, pairs_per_epoch }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walker::WalkParams;

    pub(crate) fn corpus(walks: &[&str]) -> WalkCorpus {
        let mut labels: Vec<String> = Vec::new();
        let walks = walks
            .iter()
            .map(|w| {
                w.split_whitespace()
                    .map(|t| match labels.iter().position(|l| l == t) {
                        Some(i) => i as u32,
                        None => {
                            labels.push(t.to_string());
                            labels.len() as u32 - 1
                        }
                    })
                    .collect()
            })
            .collect();
        WalkCorpus { walks, labels, params: WalkParams::default(), graph_fingerprint: String::new() }
    }

    #[test]
    fn vocab_counts() {
        let v = build_vocab(&corpus(&["F1 A1 F1"])).unwrap();
        assert_eq!(v.labels, vec!["F1", "A1"]);
        assert_eq!((v.count("F1"), v.count("A1")), (Some(2), Some(1)));
        assert!(matches!(build_vocab(&corpus(&[])), Err(Error::EmptyInput)));
    }

    #[test]
    fn zero_vectors_give_ln2() {
        let mut m = EmbeddingMatrix::from_rows(vec!["a".into(), "b".into()], 4, vec![0.0; 8]).unwrap();
        let loss = sgns_step(&mut m, 0, 1, &[], 0.1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn step_errors() {
        let mut m = EmbeddingMatrix::from_rows(vec!["a".into(), "b".into()], 2, vec![0.1; 4]).unwrap();
        assert!(matches!(sgns_step(&mut m, 0, 5, &[], 0.1), Err(Error::UnknownNode(_))));
        assert!(matches!(sgns_step(&mut m, 0, 1, &[9], 0.1), Err(Error::UnknownNode(_))));
        assert!(matches!(sgns_step(&mut m, 1, 1, &[], 0.1), Err(Error::Contract(_))));
        assert!(sgns_step(&mut m, 0, 1, &[0], 0.0).is_err());
    }

    #[test]
    fn step_reduces_loss() {
        let mut m = EmbeddingMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            3,
            vec![0.1, -0.2, 0.3, 0.0, 0.1, 0.2, -0.1, 0.4, 0.1],
        )
        .unwrap()
        .with_output(vec![0.2, 0.1, -0.1, 0.3, -0.2, 0.1, 0.05, 0.0, 0.2])
        .unwrap();
        let before = sgns_step(&mut m, 0, 1, &[2], 0.05).unwrap();
        let after = sgns_step(&mut m.clone(), 0, 1, &[2], 0.05).unwrap();
        assert!(after < before);
    }

    #[test]
    fn pair_count_matches_enumeration() {
        for len in 0..15usize {
            for w in 1..8usize {
                let brute = (0..len)
                    .flat_map(|i| (0..len).map(move |j| (i, j)))
                    .filter(|&(i, j)| i != j && i.abs_diff(j) <= w)
                    .count();
                assert_eq!(pair_count(len, w), brute, "len {len} window {w}");
            }
        }
    }

    #[test]
    fn params_validated() {
        let c = corpus(&["a b a"]);
        for bad in [
            TrainParams { dim: 0, ..Default::default() },
            TrainParams { negatives: 0, ..Default::default() },
            TrainParams { lr_initial: 1e-5, lr_final: 1e-4, ..Default::default() },
            TrainParams { lr_final: 0.0, ..Default::default() },
        ] {
            assert!(train(&c, &bad, &TrainOptions::default()).is_err());
        }
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let c = corpus(&["a b c d a b", "c d a b c d", "b a d c b a"]);
        let p = TrainParams { dim: 8, window: 2, epochs: 3, ..Default::default() };
        let (m1, r1) = train(&c, &p, &TrainOptions::default()).unwrap();
        let (m2, r2) = train(&c, &p, &TrainOptions::default()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert!(m1.is_finite());
        assert_eq!(m1.len(), 4);
        assert_eq!(m1.row(0).len(), 8);
        assert_eq!(r1.pairs_per_epoch, 3 * pair_count(6, 2));
    }

    #[test]
    fn parallel_mode_trains() {
        let c = corpus(&["a b c d a b"; 40]);
        let p = TrainParams { dim: 4, window: 2, epochs: 2, ..Default::default() };
        let (m, r) = train(&c, &p, &TrainOptions { workers: 4 }).unwrap();
        assert!(m.is_finite());
        assert_eq!(r.epoch_losses.len(), 2);
    }

    #[test]
    fn embedding_round_trip() {
        let c = corpus(&["a b c a"]);
        let p = TrainParams { dim: 5, window: 1, epochs: 1, ..Default::default() };
        let (m, _) = train(&c, &p, &TrainOptions::default()).unwrap();
        let (mut buf, mut ctx) = (Vec::new(), Vec::new());
        m.save(&mut buf).unwrap();
        m.save_output(&mut ctx).unwrap();
        assert!(buf.starts_with(b"3 5\n"));
        let back = EmbeddingMatrix::load(&buf[..]).unwrap();
        assert_eq!(back.input(), m.input());
        assert_eq!(back.labels(), m.labels());
        let back = back.load_output(&ctx[..]).unwrap();
        assert_eq!(back.output(), m.output());
    }

    #[test]
    fn corrupt_embedding_files() {
        let short = "5 2\na 1 2\nb 1 2\nc 1 2\nd 1 2\n";
        assert!(matches!(EmbeddingMatrix::load(short.as_bytes()), Err(Error::Corrupt(_))));
        assert!(matches!(EmbeddingMatrix::load("1 2\na 1\n".as_bytes()), Err(Error::Corrupt(_))));
        assert!(matches!(EmbeddingMatrix::load("x\n".as_bytes()), Err(Error::Corrupt(_))));
        assert!(matches!(EmbeddingMatrix::load("2 1\na 1\na 2\n".as_bytes()), Err(Error::Corrupt(_))));
    }

    #[test]
    fn sampler_matches_smoothed_unigram() {
        let counts = [1u64, 10, 100, 7];
        let sampler = NegativeSampler::new(&counts).unwrap();
        let z: f64 = counts.iter().map(|&c| (c as f64).powf(0.75)).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 1_000_000;
        let mut hits = [0usize; 4];
        for _ in 0..draws {
            hits[sampler.sample(&mut rng)] += 1;
        }
        for (h, c) in hits.iter().zip(counts) {
            let expected = (c as f64).powf(0.75) / z;
            assert!((*h as f64 / draws as f64 - expected).abs() < 0.01);
        }
    }
}
