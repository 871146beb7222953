//! Implementations checked against independent oracles: exhaustive path
//! enumeration, naive matrix-vector products and central finite differences.

mod common;

use common::{brute_force_best, brute_force_log_partition, central_difference, random_logits, random_params};
use lcner::advisor::{objective_and_gradient, DatasetProfile, Observation};
use lcner::crf::{crf_decode, log_partition, nll_and_gradient, CrfParams};
use lcner::decode::{path_score, viterbi_decode, LogitsSequence, PathScores};
use lcner::emission::{cross_entropy_loss_and_gradient, EncodedSentence, LinearProjection};
use lcner::labelspace::{ConstraintMatrix, LabelSet, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bmes(types: usize) -> ConstraintMatrix {
    let names: Vec<String> = (0..types).map(|i| format!("T{i}")).collect();
    ConstraintMatrix::bmes(&LabelSet::new(&names, Scheme::Bmes).unwrap())
}

#[test]
fn viterbi_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let (cm, k) = if case % 3 == 0 {
            let k = rng.gen_range(1..=9);
            (ConstraintMatrix::unconstrained(k), k)
        } else {
            let types = rng.gen_range(1..=2);
            (bmes(types), 4 * types + 1)
        };
        let n = rng.gen_range(1..=5);
        let logits = random_logits(&mut rng, n, k, 3.0);
        let trans: Option<Vec<f64>> = (case % 2 == 0).then(|| (0..k * k).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let scores = PathScores { transitions: trans.as_deref(), ..PathScores::default() };

        let path = viterbi_decode(&logits, &cm, trans.as_deref()).unwrap();
        let (best, best_path) = brute_force_best(&logits, &cm, scores).expect("a valid path exists");
        assert!(cm.is_valid_sequence(&path).unwrap());
        let got = path_score(&logits, &path, scores);
        assert!((got - best).abs() <= 1e-9 * best.abs().max(1.0), "case {case}: {got} vs {best}");
        // Continuous random scores make ties measure-zero, so the paths agree.
        assert_eq!(&*path, &best_path[..], "case {case}");
    }
}

#[test]
fn crf_decode_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cm = bmes(1);
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let logits = random_logits(&mut rng, n, 5, 2.0);
        let params = random_params(&mut rng, 5, 1.5);
        let scores = PathScores {
            transitions: Some(&params.transitions),
            start: Some(&params.start),
            end: Some(&params.end),
        };
        for mask in [None, Some(&cm)] {
            let path = crf_decode(&logits, &params, mask).unwrap();
            let full = ConstraintMatrix::unconstrained(5);
            let (best, _) = brute_force_best(&logits, mask.unwrap_or(&full), scores).unwrap();
            assert!((params.score_path(&logits, &path) - best).abs() < 1e-9);
            if mask.is_some() {
                assert!(cm.is_valid_sequence(&path).unwrap());
            }
        }
    }
}

#[test]
fn log_partition_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let n = rng.gen_range(1..=5);
        let k = rng.gen_range(1..=6);
        let logits = random_logits(&mut rng, n, k, 3.0);
        let params = random_params(&mut rng, k, 2.0);
        let fast = log_partition(&logits, &params).unwrap();
        let slow = brute_force_log_partition(&logits, &params);
        assert!((fast - slow).abs() <= 1e-8 * slow.abs().max(1e-300), "{fast} vs {slow}");
    }
}

#[test]
fn log_partition_with_forbidden_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = CrfParams::constraint_initialized(&bmes(1));
    for _ in 0..50 {
        let n = rng.gen_range(1..=5);
        let logits = random_logits(&mut rng, n, 5, 3.0);
        let fast = log_partition(&logits, &params).unwrap();
        let slow = brute_force_log_partition(&logits, &params);
        assert!((fast - slow).abs() <= 1e-8 * slow.abs(), "{fast} vs {slow}");
    }
}

#[test]
fn crf_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    const STEP: f64 = 1e-4;
    const TOL: f64 = 1e-5;
    for _ in 0..30 {
        let k = rng.gen_range(2..=5);
        let batch: Vec<(LogitsSequence, Vec<usize>)> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let n = rng.gen_range(1..=5);
                let gold = (0..n).map(|_| rng.gen_range(0..k)).collect();
                (random_logits(&mut rng, n, k, 2.0), gold)
            })
            .collect();
        let params = random_params(&mut rng, k, 1.0);
        let view: Vec<(&LogitsSequence, &[usize])> = batch.iter().map(|(l, g)| (l, g.as_slice())).collect();
        let (_, grad) = nll_and_gradient(&view, &params).unwrap();

        let loss_with = |p: &CrfParams, b: &[(LogitsSequence, Vec<usize>)]| {
            let v: Vec<(&LogitsSequence, &[usize])> = b.iter().map(|(l, g)| (l, g.as_slice())).collect();
            nll_and_gradient(&v, p).unwrap().0
        };

        for i in 0..k * k {
            let fd = central_difference(STEP, |h| {
                let mut p = params.clone();
                p.transitions[i] += h;
                loss_with(&p, &batch)
            });
            assert!((fd - grad.transitions[i]).abs() < TOL, "transition {i}: {fd} vs {}", grad.transitions[i]);
        }
        for y in 0..k {
            let fd_start = central_difference(STEP, |h| {
                let mut p = params.clone();
                p.start[y] += h;
                loss_with(&p, &batch)
            });
            let fd_end = central_difference(STEP, |h| {
                let mut p = params.clone();
                p.end[y] += h;
                loss_with(&p, &batch)
            });
            assert!((fd_start - grad.start[y]).abs() < TOL);
            assert!((fd_end - grad.end[y]).abs() < TOL);
        }
        for (b, (logits, _)) in batch.iter().enumerate() {
            for j in 0..logits.as_slice().len() {
                let fd = central_difference(STEP, |h| {
                    let mut moved = batch.clone();
                    let mut raw = logits.as_slice().to_vec();
                    raw[j] += h;
                    moved[b].0 = LogitsSequence::new(logits.len(), k, raw).unwrap();
                    loss_with(&params, &moved)
                });
                assert!((fd - grad.logits[b][j]).abs() < TOL, "logit {b}/{j}");
            }
        }
    }
}

fn random_sentence(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> EncodedSentence {
    let n = rng.gen_range(1..=4);
    let features = (0..n)
        .map(|_| {
            let mut f: Vec<(u32, f64)> = (0..rng.gen_range(1..=3))
                .map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(0.5..2.0)))
                .collect();
            f.sort_by_key(|x| x.0);
            f.dedup_by_key(|x| x.0);
            f
        })
        .collect();
    EncodedSentence { features, gold: (0..n).map(|_| rng.gen_range(0..k)).collect() }
}

#[test]
fn emission_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    const STEP: f64 = 1e-4;
    for _ in 0..30 {
        let (k, dim) = (rng.gen_range(2..=5), 6);
        let corpus: Vec<EncodedSentence> = (0..rng.gen_range(1..=3)).map(|_| random_sentence(&mut rng, k, dim)).collect();
        let mut proj = LinearProjection::zeros(k, dim);
        for f in 0..dim {
            for y in 0..k {
                proj.set_weight(y, f, rng.gen_range(-1.0..1.0));
            }
        }
        for b in proj.bias_mut() {
            *b = rng.gen_range(-1.0..1.0);
        }
        let batch: Vec<&EncodedSentence> = corpus.iter().collect();
        let (_, grad) = cross_entropy_loss_and_gradient(&batch, &proj).unwrap();
        let loss = |p: &LinearProjection| cross_entropy_loss_and_gradient(&batch, p).unwrap().0;
        for f in 0..dim {
            for y in 0..k {
                let fd = central_difference(STEP, |h| {
                    let mut p = proj.clone();
                    p.set_weight(y, f, p.weight(y, f) + h);
                    loss(&p)
                });
                assert!((fd - grad.weight(y, f as u32)).abs() < 1e-5);
            }
        }
        for y in 0..k {
            let fd = central_difference(STEP, |h| {
                let mut p = proj.clone();
                p.bias_mut()[y] += h;
                loss(&p)
            });
            assert!((fd - grad.bias[y]).abs() < 1e-5);
        }
    }
}

#[test]
fn projection_matches_naive_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (k, dim) = (7, 40);
    let mut proj = LinearProjection::zeros(k, dim);
    let mut dense = vec![vec![0.0; dim]; k];
    for (y, row) in dense.iter_mut().enumerate() {
        for (f, w) in row.iter_mut().enumerate() {
            *w = rng.gen_range(-1.0..1.0);
            proj.set_weight(y, f, *w);
        }
    }
    let bias: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    proj.bias_mut().copy_from_slice(&bias);
    let features: Vec<Vec<(u32, f64)>> = (0..5)
        .map(|_| {
            let mut f: Vec<(u32, f64)> = (0..6).map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(-2.0..2.0))).collect();
            f.sort_by_key(|x| x.0);
            f.dedup_by_key(|x| x.0);
            f
        })
        .collect();
    let logits = proj.project(&features).unwrap();
    for (t, fv) in features.iter().enumerate() {
        let mut h = vec![0.0; dim];
        for &(f, v) in fv {
            h[f as usize] = v;
        }
        for y in 0..k {
            let expected: f64 = bias[y] + dense[y].iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
            assert!((logits.get(t, y) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn advisor_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let obs: Vec<Observation> = (0..rng.gen_range(1..=6))
            .map(|_| Observation {
                delta: rng.gen_range(-0.1..0.1),
                profile: DatasetProfile::new(rng.gen_range(5..40), rng.gen_range(100..20_000)).unwrap(),
            })
            .collect();
        let alpha = rng.gen_range(0.01..1.0);
        let beta = rng.gen_range(2.0..3.5);
        let g = objective_and_gradient(&obs, alpha, beta).unwrap();
        let fd_a = central_difference(1e-6 * alpha, |h| objective_and_gradient(&obs, alpha + h, beta).unwrap().value);
        let fd_b = central_difference(1e-6, |h| objective_and_gradient(&obs, alpha, beta + h).unwrap().value);
        assert!((fd_a - g.d_alpha).abs() <= 1e-6 * g.d_alpha.abs().max(1e-12), "{fd_a} vs {}", g.d_alpha);
        assert!((fd_b - g.d_beta).abs() <= 1e-6 * g.d_beta.abs().max(1e-12), "{fd_b} vs {}", g.d_beta);
    }
}
