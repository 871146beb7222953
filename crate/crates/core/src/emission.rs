//! Feature-hashing token encoder and the linear projection `l = W h + b`.
//!
//! The encoder maps each token to a sparse bag of hashed features built from
//! the characters of the token and its neighbours inside a fixed window. The
//! projection is trained with per-token cross-entropy.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::LogitsSequence;
use crate::error::{Error, Result};

/// Sparse feature vector: `(feature index, value)` pairs sorted by index,
/// without duplicates.
pub type SparseVector = Vec<(u32, f64)>;

pub const DEFAULT_DIM: usize = 1 << 18;
pub const DEFAULT_WINDOW: usize = 2;

const BOS: &str = "\u{2}<s>";
const EOS: &str = "\u{3}</s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub dim: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for FeatureEncoder {
    fn default() -> Self {
        FeatureEncoder { dim: DEFAULT_DIM, window: DEFAULT_WINDOW, seed: 0 }
    }
}

/// 64-bit FNV-1a, seeded by hashing the seed bytes first.
struct FeatureHasher(u64);

impl FeatureHasher {
    fn new(seed: u64) -> Self {
        let mut h = FeatureHasher(0xcbf2_9ce4_8422_2325);
        h.write(&seed.to_le_bytes());
        h
    }

    fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        self
    }

    fn finish(&self) -> u64 {
        // fmix64 from MurmurHash3; FNV alone leaves the low bits poorly mixed.
        let mut h = self.0;
        h ^= h >> 33;
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
        h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
        h ^ (h >> 33)
    }
}

impl FeatureEncoder {
    pub fn new(dim: usize, window: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::invalid(format!("feature dimension {dim} out of range")));
        }
        Ok(FeatureEncoder { dim, window, seed })
    }

    fn bucket(&self, kind: u8, offset: isize, parts: &[&str]) -> u32 {
        let mut h = FeatureHasher::new(self.seed);
        h.write(&[kind]).write(&(offset as i64).to_le_bytes());
        for p in parts {
            h.write(p.as_bytes()).write(&[0xff]);
        }
        (h.finish() % self.dim as u64) as u32
    }

    /// Per-token features. For every offset `o` in `-window..=window`:
    /// the neighbour token at `t + o`, its character unigrams and in-token
    /// bigrams (multi-character tokens only), and the adjacent-token bigram
    /// `(t + o, t + o + 1)` while it stays inside the window.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<SparseVector> {
        let n = tokens.len() as isize;
        let w = self.window as isize;
        let at = |i: isize| -> &str {
            if i < 0 {
                BOS
            } else if i >= n {
                EOS
            } else {
                tokens[i as usize].as_ref()
            }
        };

        let mut out = Vec::with_capacity(tokens.len());
        let mut buf = [0u8; 4];
        for t in 0..n {
            let mut idx = Vec::new();
            for o in -w..=w {
                let tok = at(t + o);
                idx.push(self.bucket(b'u', o, &[tok]));
                if tok.chars().nth(1).is_some() {
                    let chars: Vec<char> = tok.chars().collect();
                    for c in &chars {
                        idx.push(self.bucket(b'c', o, &[c.encode_utf8(&mut buf)]));
                    }
                    for pair in chars.windows(2) {
                        let mut b2 = [0u8; 4];
                        let a = pair[0].encode_utf8(&mut buf);
                        let b = pair[1].encode_utf8(&mut b2);
                        idx.push(self.bucket(b'i', o, &[a, b]));
                    }
                }
                if o < w {
                    idx.push(self.bucket(b'b', o, &[tok, at(t + o + 1)]));
                }
            }
            out.push(merge_indices(idx));
        }
        out
    }
}

fn merge_indices(mut idx: Vec<u32>) -> SparseVector {
    idx.sort_unstable();
    let mut out: SparseVector = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((j, v)) if *j == i => *v += 1.0,
            _ => out.push((i, 1.0)),
        }
    }
    out
}

/// `k × dim` weights plus a length-`k` bias. Stored feature-major so that
/// the `k` weights of one feature are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjection {
    k: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearProjection {
    pub fn zeros(k: usize, dim: usize) -> Self {
        LinearProjection { k, dim, weights: vec![0.0; k * dim], bias: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// `W[label][feature]`.
    pub fn weight(&self, label: usize, feature: usize) -> f64 {
        self.weights[feature * self.k + label]
    }

    pub fn set_weight(&mut self, label: usize, feature: usize, value: f64) {
        self.weights[feature * self.k + label] = value;
    }

    /// The `k` weights attached to one feature.
    pub fn feature_column(&self, feature: usize) -> &[f64] {
        &self.weights[feature * self.k..(feature + 1) * self.k]
    }

    pub fn feature_column_mut(&mut self, feature: usize) -> &mut [f64] {
        &mut self.weights[feature * self.k..(feature + 1) * self.k]
    }

    /// Features with at least one non-zero weight.
    pub fn nonzero_features(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.weights
            .chunks_exact(self.k)
            .enumerate()
            .filter(|(_, col)| col.iter().any(|&w| w != 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }

    fn check(&self, features: &[SparseVector]) -> Result<()> {
        for (t, fv) in features.iter().enumerate() {
            if let Some(&(f, _)) = fv.iter().find(|(f, _)| *f as usize >= self.dim) {
                return Err(Error::invalid(format!(
                    "token {t}: feature {f} outside projection dimension {}",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    fn project_row(&self, fv: &SparseVector, row: &mut [f64]) {
        row.copy_from_slice(&self.bias);
        for &(f, v) in fv {
            for (r, w) in row.iter_mut().zip(self.feature_column(f as usize)) {
                *r += w * v;
            }
        }
    }

    /// Row `t` of the result is `W h_t + b`.
    pub fn project(&self, features: &[SparseVector]) -> Result<LogitsSequence> {
        self.check(features)?;
        let mut scores = vec![0.0; features.len() * self.k];
        for (fv, row) in features.iter().zip(scores.chunks_exact_mut(self.k)) {
            self.project_row(fv, row);
        }
        LogitsSequence::new(features.len(), self.k, scores)
            .map_err(|e| Error::Numerical { batch: 0, message: e.to_string() })
    }
}

/// Gradient of a loss with respect to a [`LinearProjection`]; only touched
/// features are stored.
#[derive(Debug, Clone, Default)]
pub struct ProjectionGradient {
    pub bias: Vec<f64>,
    pub weights: HashMap<u32, Vec<f64>>,
}

impl ProjectionGradient {
    pub fn new(k: usize) -> Self {
        ProjectionGradient { bias: vec![0.0; k], weights: HashMap::new() }
    }

    /// Back-propagates `scale * dlogits` (one row per token) through the projection.
    pub fn accumulate(&mut self, features: &[SparseVector], dlogits: &[f64], scale: f64) {
        let k = self.bias.len();
        for (fv, d) in features.iter().zip(dlogits.chunks_exact(k)) {
            for (b, g) in self.bias.iter_mut().zip(d) {
                *b += scale * g;
            }
            for &(f, v) in fv {
                let col = self.weights.entry(f).or_insert_with(|| vec![0.0; k]);
                for (c, g) in col.iter_mut().zip(d) {
                    *c += scale * v * g;
                }
            }
        }
    }

    pub fn weight(&self, label: usize, feature: u32) -> f64 {
        self.weights.get(&feature).map_or(0.0, |c| c[label])
    }

    /// `proj -= lr * grad`.
    pub fn apply(&self, proj: &mut LinearProjection, lr: f64) {
        for (b, g) in proj.bias.iter_mut().zip(&self.bias) {
            *b -= lr * g;
        }
        for (&f, col) in &self.weights {
            for (w, g) in proj.feature_column_mut(f as usize).iter_mut().zip(col) {
                *w -= lr * g;
            }
        }
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of one logits row against `gold`, and its gradient
/// `softmax(row) - onehot(gold)`.
pub fn cross_entropy(row: &[f64], gold: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(row);
    let loss = -p[gold].ln();
    p[gold] -= 1.0;
    (loss, p)
}

/// A tokenized sentence ready for training: features per token and gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub features: Vec<SparseVector>,
    pub gold: Vec<usize>,
}

/// Mean per-token cross-entropy over `batch` and its gradient.
pub fn cross_entropy_loss_and_gradient(
    batch: &[&EncodedSentence],
    proj: &LinearProjection,
) -> Result<(f64, ProjectionGradient)> {
    let tokens: usize = batch.iter().map(|s| s.gold.len()).sum();
    let mut grad = ProjectionGradient::new(proj.k());
    if tokens == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / tokens as f64;
    let mut loss = 0.0;
    for s in batch {
        check_sentence(s, proj.k())?;
        let logits = proj.project(&s.features)?;
        let mut dlogits = Vec::with_capacity(logits.as_slice().len());
        for (row, &y) in logits.rows().zip(&s.gold) {
            let (l, d) = cross_entropy(row, y);
            loss += l;
            dlogits.extend(d);
        }
        grad.accumulate(&s.features, &dlogits, scale);
    }
    Ok((loss * scale, grad))
}

pub(crate) fn check_sentence(s: &EncodedSentence, k: usize) -> Result<()> {
    if s.features.len() != s.gold.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} gold labels",
            s.features.len(),
            s.gold.len()
        )));
    }
    if let Some(&y) = s.gold.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("gold label {y} out of range for k={k}")));
    }
    Ok(())
}

/// Mini-batch gradient descent settings shared by the emission and CRF trainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, batch_size: 8, learning_rate: 0.1, seed: 42 }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        Ok(())
    }

    /// Per-epoch batches of corpus indices, shuffled by a generator seeded
    /// from `seed`.
    pub(crate) fn batches(&self, len: usize) -> impl Iterator<Item = Vec<Vec<usize>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let batch = self.batch_size;
        (0..self.epochs).map(move |_| {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut rng);
            order.chunks(batch).map(<[usize]>::to_vec).collect()
        })
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Trains `proj` in place on `corpus` with per-token cross-entropy.
pub fn train_emission(
    corpus: &[EncodedSentence],
    proj: &mut LinearProjection,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    config.validate()?;
    for s in corpus {
        check_sentence(s, proj.k())?;
        proj.check(&s.features)?;
    }

    let mut report = TrainReport::default();
    let mut batch_index = 0;
    for epoch in config.batches(corpus.len()) {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for ids in epoch {
            let batch: Vec<&EncodedSentence> = ids.iter().map(|&i| &corpus[i]).collect();
            let (loss, grad) = cross_entropy_loss_and_gradient(&batch, proj)?;
            if !loss.is_finite() {
                return Err(Error::Numerical { batch: batch_index, message: format!("loss is {loss}") });
            }
            grad.apply(proj, config.learning_rate);
            let n: usize = batch.iter().map(|s| s.gold.len()).sum();
            total += loss * n as f64;
            tokens += n;
            batch_index += 1;
        }
        report.epoch_losses.push(total / tokens.max(1) as f64);
    }
    Ok(report)
}

/// Fraction of tokens whose argmax label equals the gold label.
pub fn token_accuracy(proj: &LinearProjection, corpus: &[EncodedSentence]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in corpus {
        let logits = proj.project(&s.features)?;
        let pred = crate::decode::argmax_decode(&logits);
        correct += pred.iter().zip(&s.gold).filter(|(a, b)| a == b).count();
        total += s.gold.len();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}
