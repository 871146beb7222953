#![allow(dead_code)]

//! Test-only oracles. Nothing here calls the dynamic programs under test.

use lcner::crf::CrfParams;
use lcner::decode::{path_score, LogitsSequence, PathScores};
use lcner::labelspace::ConstraintMatrix;
use rand::Rng;

pub fn random_logits(rng: &mut impl Rng, n: usize, k: usize, scale: f64) -> LogitsSequence {
    LogitsSequence::new(n, k, (0..n * k).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn random_params(rng: &mut impl Rng, k: usize, scale: f64) -> CrfParams {
    let mut p = CrfParams::zeros(k);
    for v in p.transitions.iter_mut().chain(&mut p.start).chain(&mut p.end) {
        *v = rng.gen_range(-scale..scale);
    }
    p
}

/// Every sequence in `[0, k)^n`, in lexicographic order.
pub fn all_paths(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = k.pow(n as u32);
    (0..total).map(move |mut code| {
        let mut path = vec![0; n];
        for slot in path.iter_mut().rev() {
            *slot = code % k;
            code /= k;
        }
        path
    })
}

/// Best score and the lexicographically first path achieving it, among
/// paths `cm` accepts.
pub fn brute_force_best(logits: &LogitsSequence, cm: &ConstraintMatrix, scores: PathScores<'_>) -> Option<(f64, Vec<usize>)> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for path in all_paths(logits.len(), logits.k()) {
        if !cm.is_valid_sequence(&path).unwrap() {
            continue;
        }
        let s = path_score(logits, &path, scores);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, path));
        }
    }
    best
}

/// `log Σ exp(score)` over all `k^n` paths, with a single global max shift.
pub fn brute_force_log_partition(logits: &LogitsSequence, params: &CrfParams) -> f64 {
    let scores: Vec<f64> = all_paths(logits.len(), logits.k()).map(|p| params.score_path(logits, &p)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

pub fn central_difference(step: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(step) - f(-step)) / (2.0 * step)
}
