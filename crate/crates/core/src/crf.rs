//! Linear-chain CRF on top of emission logits.
//!
//! A path `y` scores
//! `start[y_1] + Σ_t logits[t][y_t] + Σ_t trans[y_{t-1}][y_t] + end[y_n]`.
//! The partition function and marginals are computed with the forward and
//! backward recursions in log-space.

use serde::{Deserialize, Serialize};

use crate::decode::{viterbi_with_scores, LabelSequence, LogitsSequence, PathScores};
use crate::emission::{check_sentence, EncodedSentence, LinearProjection, ProjectionGradient, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::labelspace::ConstraintMatrix;

/// Score given to forbidden transitions in constraint-initialized parameters.
pub const FORBIDDEN_SCORE: f64 = -1.0e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    k: usize,
    /// Row-major `k × k`; `transitions[p * k + q]` scores `p → q`.
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// When set, entries this matrix forbids are held fixed during training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<ConstraintMatrix>,
}

impl CrfParams {
    pub fn zeros(k: usize) -> Self {
        CrfParams { k, transitions: vec![0.0; k * k], start: vec![0.0; k], end: vec![0.0; k], frozen: None }
    }

    /// Zero scores where `cm` allows, [`FORBIDDEN_SCORE`] elsewhere, with the
    /// forbidden entries frozen.
    pub fn constraint_initialized(cm: &ConstraintMatrix) -> Self {
        let k = cm.k();
        let score = |ok: bool| if ok { 0.0 } else { FORBIDDEN_SCORE };
        CrfParams {
            k,
            transitions: (0..k * k).map(|i| score(cm.allows(i / k, i % k))).collect(),
            start: cm.start_allow().iter().map(|&ok| score(ok)).collect(),
            end: cm.end_allow().iter().map(|&ok| score(ok)).collect(),
            frozen: Some(cm.clone()),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.k + to]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if self.transitions.len() != k * k || self.start.len() != k || self.end.len() != k {
            return Err(Error::invalid(format!("CRF parameter shapes do not match k={k}")));
        }
        if self.frozen.as_ref().is_some_and(|cm| cm.k() != k) {
            return Err(Error::invalid("frozen mask has the wrong size"));
        }
        if !self.transitions.iter().chain(&self.start).chain(&self.end).all(|v| v.is_finite()) {
            return Err(Error::invalid("CRF parameters must be finite"));
        }
        Ok(())
    }

    fn path_scores(&self) -> PathScores<'_> {
        PathScores { transitions: Some(&self.transitions), start: Some(&self.start), end: Some(&self.end) }
    }

    /// Total score of `path` under these parameters.
    pub fn score_path(&self, logits: &LogitsSequence, path: &[usize]) -> f64 {
        crate::decode::path_score(logits, path, self.path_scores())
    }

    fn apply(&mut self, grad: &CrfGradient, lr: f64) {
        let frozen = self.frozen.as_ref();
        let k = self.k;
        for (i, (w, g)) in self.transitions.iter_mut().zip(&grad.transitions).enumerate() {
            if frozen.is_none_or(|cm| cm.allows(i / k, i % k)) {
                *w -= lr * g;
            }
        }
        for (y, (w, g)) in self.start.iter_mut().zip(&grad.start).enumerate() {
            if frozen.is_none_or(|cm| cm.start_allow()[y]) {
                *w -= lr * g;
            }
        }
        for (y, (w, g)) in self.end.iter_mut().zip(&grad.end).enumerate() {
            if frozen.is_none_or(|cm| cm.end_allow()[y]) {
                *w -= lr * g;
            }
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_dims(logits: &LogitsSequence, params: &CrfParams) -> Result<()> {
    if logits.k() != params.k {
        return Err(Error::invalid(format!("logits have {} labels but CRF has {}", logits.k(), params.k)));
    }
    if logits.is_empty() {
        return Err(Error::invalid("CRF needs at least one token"));
    }
    Ok(())
}

/// `exp(trans - shift)` with `shift` the largest transition score, so the
/// recursions below can run as matrix products on max-shifted weights.
struct ScaledTransitions {
    shift: f64,
    weights: Vec<f64>,
}

impl ScaledTransitions {
    fn new(params: &CrfParams) -> Self {
        let shift = params.transitions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ScaledTransitions { shift, weights: params.transitions.iter().map(|t| (t - shift).exp()).collect() }
    }
}

/// `exp(v - max(v))` and `max(v)`.
fn shifted_exp(values: &[f64], out: &mut [f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, v) in out.iter_mut().zip(values) {
        *o = (v - max).exp();
    }
    max
}

/// Forward log-potentials `alpha[t][y]`, flattened `n × k`.
///
/// Each step is a log-sum-exp over predecessors, evaluated as
/// `c + shift + ln Σ_p exp(alpha[p] - c) · exp(trans[p][q] - shift)` with
/// `c = max_p alpha[p]`.
fn forward(logits: &LogitsSequence, params: &CrfParams, trans: &ScaledTransitions) -> Vec<f64> {
    let (n, k) = (logits.len(), params.k);
    let mut alpha = vec![0.0; n * k];
    for y in 0..k {
        alpha[y] = params.start[y] + logits.get(0, y);
    }
    let mut w = vec![0.0; k];
    let mut acc = vec![0.0; k];
    for t in 1..n {
        let (prev, cur) = alpha.split_at_mut(t * k);
        let c = shifted_exp(&prev[(t - 1) * k..], &mut w);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (p, &wp) in w.iter().enumerate() {
            if wp == 0.0 {
                continue;
            }
            for (a, &tw) in acc.iter_mut().zip(&trans.weights[p * k..(p + 1) * k]) {
                *a += wp * tw;
            }
        }
        for q in 0..k {
            cur[q] = c + trans.shift + acc[q].ln() + logits.get(t, q);
        }
    }
    alpha
}

/// Backward log-potentials `beta[t][y]` (including the end score), flattened `n × k`.
fn backward(logits: &LogitsSequence, params: &CrfParams, trans: &ScaledTransitions) -> Vec<f64> {
    let (n, k) = (logits.len(), params.k);
    let mut beta = vec![0.0; n * k];
    beta[(n - 1) * k..].copy_from_slice(&params.end);
    let mut next_plus_emit = vec![0.0; k];
    let mut w = vec![0.0; k];
    for t in (0..n - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * k);
        for q in 0..k {
            next_plus_emit[q] = next[q] + logits.get(t + 1, q);
        }
        let c = shifted_exp(&next_plus_emit, &mut w);
        for (p, slot) in cur[t * k..].iter_mut().enumerate() {
            let s: f64 = trans.weights[p * k..(p + 1) * k].iter().zip(&w).map(|(tw, wq)| tw * wq).sum();
            *slot = c + trans.shift + s.ln();
        }
    }
    beta
}

fn log_partition_from_alpha(alpha: &[f64], params: &CrfParams) -> f64 {
    let k = params.k;
    let last = &alpha[alpha.len() - k..];
    log_sum_exp(last.iter().zip(&params.end).map(|(a, e)| a + e))
}

/// `log Σ_paths exp(score(path))` by the forward algorithm.
pub fn log_partition(logits: &LogitsSequence, params: &CrfParams) -> Result<f64> {
    check_dims(logits, params)?;
    let trans = ScaledTransitions::new(params);
    Ok(log_partition_from_alpha(&forward(logits, params, &trans), params))
}

/// Gradient of the mean negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradient {
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// One flattened `n × k` block per batch element.
    pub logits: Vec<Vec<f64>>,
}

/// Mean over `batch` of `log Z - score(gold)`, with exact gradients for the
/// CRF parameters and for every emission logit.
pub fn nll_and_gradient(
    batch: &[(&LogitsSequence, &[usize])],
    params: &CrfParams,
) -> Result<(f64, CrfGradient)> {
    let k = params.k;
    let mut grad = CrfGradient {
        transitions: vec![0.0; k * k],
        start: vec![0.0; k],
        end: vec![0.0; k],
        logits: Vec::with_capacity(batch.len()),
    };
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let trans = ScaledTransitions::new(params);
    let mut from = vec![0.0; k];
    let mut to = vec![0.0; k];
    let mut scratch = vec![0.0; k];

    for (logits, gold) in batch {
        check_dims(logits, params)?;
        if gold.len() != logits.len() {
            return Err(Error::invalid(format!("gold has {} labels for {} tokens", gold.len(), logits.len())));
        }
        if let Some(&y) = gold.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(format!("gold label {y} out of range for k={k}")));
        }
        let n = logits.len();
        let alpha = forward(logits, params, &trans);
        let beta = backward(logits, params, &trans);
        let log_z = log_partition_from_alpha(&alpha, params);
        total += log_z - params.score_path(logits, gold);

        let mut dlogits = vec![0.0; n * k];
        for t in 0..n {
            for y in 0..k {
                dlogits[t * k + y] = (alpha[t * k + y] + beta[t * k + y] - log_z).exp() * scale;
            }
            dlogits[t * k + gold[t]] -= scale;
        }
        for y in 0..k {
            grad.start[y] += dlogits[y];
            grad.end[y] += dlogits[(n - 1) * k + y];
        }
        // Pair marginal p→q at t: exp(alpha[t][p] + trans[p][q] + logits[t+1][q]
        // + beta[t+1][q] - log Z), factored into shifted per-side weights.
        for t in 0..n - 1 {
            let ca = shifted_exp(&alpha[t * k..(t + 1) * k], &mut from);
            for q in 0..k {
                scratch[q] = logits.get(t + 1, q) + beta[(t + 1) * k + q];
            }
            let cb = shifted_exp(&scratch, &mut to);
            let norm = (ca + trans.shift + cb - log_z).exp() * scale;
            for (p, &fp) in from.iter().enumerate() {
                if fp == 0.0 {
                    continue;
                }
                let row = &trans.weights[p * k..(p + 1) * k];
                let out = &mut grad.transitions[p * k..(p + 1) * k];
                for ((g, &tw), &tq) in out.iter_mut().zip(row).zip(&to) {
                    *g += fp * tw * tq * norm;
                }
            }
            grad.transitions[gold[t] * k + gold[t + 1]] -= scale;
        }
        grad.logits.push(dlogits);
    }
    Ok((total * scale, grad))
}

/// Jointly trains the CRF parameters and the emission projection by
/// mini-batch gradient descent on the mean sentence NLL.
pub fn train_crf(
    corpus: &[EncodedSentence],
    proj: &mut LinearProjection,
    params: &mut CrfParams,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    config.validate()?;
    params.validate()?;
    if proj.k() != params.k {
        return Err(Error::invalid("projection and CRF disagree on k"));
    }
    for s in corpus {
        check_sentence(s, params.k)?;
        if s.gold.is_empty() {
            return Err(Error::invalid("CRF training sentences must be non-empty"));
        }
    }

    let mut report = TrainReport::default();
    let mut batch_index = 0;
    for epoch in config.batches(corpus.len()) {
        let mut total = 0.0;
        for ids in &epoch {
            let logits: Vec<LogitsSequence> =
                ids.iter().map(|&i| proj.project(&corpus[i].features)).collect::<Result<_>>()?;
            let batch: Vec<(&LogitsSequence, &[usize])> =
                logits.iter().zip(ids).map(|(l, &i)| (l, corpus[i].gold.as_slice())).collect();
            let (loss, grad) = nll_and_gradient(&batch, params)?;
            if !loss.is_finite() {
                return Err(Error::Numerical { batch: batch_index, message: format!("loss is {loss}") });
            }
            let mut pgrad = ProjectionGradient::new(params.k);
            for (&i, d) in ids.iter().zip(&grad.logits) {
                pgrad.accumulate(&corpus[i].features, d, 1.0);
            }
            pgrad.apply(proj, config.learning_rate);
            params.apply(&grad, config.learning_rate);
            total += loss * ids.len() as f64;
            batch_index += 1;
        }
        report.epoch_losses.push(total / corpus.len() as f64);
    }
    Ok(report)
}

/// Viterbi with the learned transition, start and end scores. With `cm`,
/// transitions it forbids are excluded outright.
pub fn crf_decode(
    logits: &LogitsSequence,
    params: &CrfParams,
    cm: Option<&ConstraintMatrix>,
) -> Result<LabelSequence> {
    if logits.k() != params.k {
        return Err(Error::invalid(format!("logits have {} labels but CRF has {}", logits.k(), params.k)));
    }
    match cm {
        Some(cm) => viterbi_with_scores(logits, cm, params.path_scores()),
        None => viterbi_with_scores(logits, &ConstraintMatrix::unconstrained(params.k), params.path_scores()),
    }
}
