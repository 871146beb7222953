//! Decoders from per-token logits to label sequences.
//!
//! - [`argmax_decode`]: independent per-token argmax.
//! - [`lc_decode`]: greedy left-to-right argmax where each row is masked by
//!   the allowed successors of the previously chosen label.
//! - [`viterbi_decode`]: exact best path under the constraint matrix and an
//!   optional transition score matrix.
//!
//! Ties always go to the lowest label index.

use std::io::{BufRead, Write};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::ConstraintMatrix;

/// Score assigned to masked entries. Finite, so later arithmetic stays finite.
pub const MASKED: f64 = f64::MIN;

/// `n × k` matrix of unnormalized per-token label scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsSequence {
    n: usize,
    k: usize,
    scores: Vec<f64>,
}

impl LogitsSequence {
    pub fn new(n: usize, k: usize, scores: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("logits need at least one label column"));
        }
        if scores.len() != n * k {
            return Err(Error::invalid(format!("expected {n}x{k} = {} scores, got {}", n * k, scores.len())));
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit at row {}, column {}", pos / k, pos % k)));
        }
        Ok(LogitsSequence { n, k, scores })
    }

    pub fn from_rows(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let mut scores = Vec::with_capacity(rows.len() * k);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!("row {t} has {} columns, expected {k}", row.len())));
            }
            scores.extend_from_slice(row);
        }
        Self::new(rows.len(), k, scores)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.scores[t * self.k..(t + 1) * self.k]
    }

    pub fn get(&self, t: usize, y: usize) -> f64 {
        self.scores[t * self.k + y]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks_exact(self.k)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Label indices for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(indices: Vec<usize>) -> Self {
        LabelSequence(indices)
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl Deref for LabelSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for LabelSequence {
    fn from(v: Vec<usize>) -> Self {
        LabelSequence(v)
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax restricted to entries whose mask is true.
fn masked_argmax(row: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in row.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > row[b]) {
            best = Some(i);
        }
    }
    best
}

/// The masked row `l'_t`: entries whose mask bit is set keep their score,
/// the rest become [`MASKED`].
pub fn mask_row(row: &[f64], mask: &[bool]) -> Vec<f64> {
    row.iter().zip(mask).map(|(&v, &ok)| if ok { v } else { MASKED }).collect()
}

pub fn argmax_decode(logits: &LogitsSequence) -> LabelSequence {
    logits.rows().map(argmax).collect::<Vec<_>>().into()
}

/// Logits-constrained greedy decoding.
///
/// The first token takes the best start-allowed label. Each later token takes
/// the argmax of its row masked by `M[y_{t-1}]`. The end mask is not
/// consulted and the decoder never backtracks, so a sentence may end on an
/// open entity.
pub fn lc_decode(logits: &LogitsSequence, cm: &ConstraintMatrix) -> Result<LabelSequence> {
    check_dims(logits, cm)?;
    let mut out = Vec::with_capacity(logits.len());
    let mut mask = cm.start_allow();
    for row in logits.rows() {
        let y = masked_argmax(row, mask)
            .ok_or_else(|| Error::Internal("constraint row has no allowed label".into()))?;
        out.push(y);
        mask = cm.row(y);
    }
    Ok(out.into())
}

fn check_dims(logits: &LogitsSequence, cm: &ConstraintMatrix) -> Result<()> {
    if logits.k() != cm.k() {
        return Err(Error::invalid(format!(
            "logits have {} labels but the constraint matrix has {}",
            logits.k(),
            cm.k()
        )));
    }
    Ok(())
}

/// Additive scores used by [`viterbi_decode`] besides the emissions.
/// Missing parts count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct PathScores<'a> {
    /// Row-major `k × k`, `transitions[p * k + q]` scores `p → q`.
    pub transitions: Option<&'a [f64]>,
    pub start: Option<&'a [f64]>,
    pub end: Option<&'a [f64]>,
}

impl PathScores<'_> {
    fn trans(&self, k: usize, p: usize, q: usize) -> f64 {
        self.transitions.map_or(0.0, |t| t[p * k + q])
    }

    fn start(&self, y: usize) -> f64 {
        self.start.map_or(0.0, |s| s[y])
    }

    fn end(&self, y: usize) -> f64 {
        self.end.map_or(0.0, |s| s[y])
    }

    fn check(&self, k: usize) -> Result<()> {
        let sized = |name: &str, v: Option<&[f64]>, len: usize| match v {
            Some(v) if v.len() != len => Err(Error::invalid(format!("{name} has {} entries, expected {len}", v.len()))),
            _ => Ok(()),
        };
        sized("transition matrix", self.transitions, k * k)?;
        sized("start scores", self.start, k)?;
        sized("end scores", self.end, k)
    }
}

/// Total score of `path`: emissions plus transitions (plus start/end scores
/// when given). Constraint validity is not checked.
pub fn path_score(logits: &LogitsSequence, path: &[usize], scores: PathScores<'_>) -> f64 {
    let k = logits.k();
    let mut total = 0.0;
    for (t, &y) in path.iter().enumerate() {
        total += logits.get(t, y);
        if t > 0 {
            total += scores.trans(k, path[t - 1], y);
        }
    }
    if let (Some(&first), Some(&last)) = (path.first(), path.last()) {
        total += scores.start(first) + scores.end(last);
    }
    total
}

/// Constrained Viterbi with an optional `k × k` transition matrix.
pub fn viterbi_decode(
    logits: &LogitsSequence,
    cm: &ConstraintMatrix,
    transitions: Option<&[f64]>,
) -> Result<LabelSequence> {
    viterbi_with_scores(logits, cm, PathScores { transitions, ..PathScores::default() })
}

/// Best path under `cm` maximizing emissions plus `scores`.
///
/// Runs the max-product recursion backwards (best completion from each
/// state) and then reads the path forwards, taking the lowest label whose
/// completion is optimal at every step. The result is the lexicographically
/// smallest optimal sequence.
pub fn viterbi_with_scores(
    logits: &LogitsSequence,
    cm: &ConstraintMatrix,
    scores: PathScores<'_>,
) -> Result<LabelSequence> {
    check_dims(logits, cm)?;
    let (n, k) = (logits.len(), logits.k());
    scores.check(k)?;
    if n == 0 {
        return Ok(LabelSequence::default());
    }

    // completion[t][y]: best score of positions t+1.. given label y at t,
    // including the emission at t and the end score. None = dead end.
    let mut completion = vec![vec![None::<f64>; k]; n];
    for y in 0..k {
        if cm.end_allow()[y] {
            completion[n - 1][y] = Some(logits.get(n - 1, y) + scores.end(y));
        }
    }
    for t in (0..n - 1).rev() {
        let (head, tail) = completion.split_at_mut(t + 1);
        let next = &tail[0];
        for (y, slot) in head[t].iter_mut().enumerate() {
            let mut best: Option<f64> = None;
            for (q, c) in next.iter().enumerate() {
                if let (true, Some(c)) = (cm.allows(y, q), c) {
                    let v = scores.trans(k, y, q) + c;
                    if best.is_none_or(|b| v > b) {
                        best = Some(v);
                    }
                }
            }
            *slot = best.map(|b| b + logits.get(t, y));
        }
    }

    let mut path = Vec::with_capacity(n);
    let mut prev: Option<usize> = None;
    for (t, row) in completion.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (y, c) in row.iter().enumerate() {
            let Some(c) = c else { continue };
            let v = match prev {
                None if cm.start_allow()[y] => scores.start(y) + c,
                None => continue,
                Some(p) if cm.allows(p, y) => scores.trans(k, p, y) + c,
                Some(_) => continue,
            };
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((y, v));
            }
        }
        let (y, _) = best.ok_or_else(|| Error::Internal(format!("no valid label path through position {t}")))?;
        path.push(y);
        prev = Some(y);
    }
    Ok(path.into())
}

/// One line of the JSON-lines logits file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsRecord {
    pub tokens: Vec<String>,
    pub logits: Vec<Vec<f64>>,
}

impl LogitsRecord {
    /// Validates the record against `k` labels.
    pub fn to_logits(&self, k: usize) -> Result<LogitsSequence> {
        if self.tokens.len() != self.logits.len() {
            return Err(Error::invalid(format!(
                "{} tokens but {} logits rows",
                self.tokens.len(),
                self.logits.len()
            )));
        }
        LogitsSequence::from_rows(&self.logits, k)
    }
}

/// Reads a JSON-lines logits file, checking every record against `k`.
pub fn read_logits_file<R: BufRead>(input: R, k: usize) -> Result<Vec<(LogitsRecord, LogitsSequence)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let record: LogitsRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let logits = record.to_logits(k).map_err(|e| parse_err(e.to_string()))?;
        out.push((record, logits));
    }
    Ok(out)
}

pub fn write_logits_file<W: Write>(mut out: W, records: &[LogitsRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
