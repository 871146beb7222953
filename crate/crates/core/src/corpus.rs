//! Corpus handling: sentence segmentation, two-column file I/O, BMES span
//! conversion, strict entity scoring, relabeling and synthetic corpora.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::LabelSequence;
use crate::error::{Error, Result};
use crate::labelspace::{ConstraintMatrix, LabelSet, PositionTag, Scheme};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub gold: Option<LabelSequence>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, gold: Option<LabelSequence>) -> Result<Self> {
        if let Some(g) = &gold {
            if g.len() != tokens.len() {
                return Err(Error::invalid(format!("{} tokens but {} gold labels", tokens.len(), g.len())));
            }
        }
        Ok(Sentence { tokens, gold })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Typed, inclusive token span `[start, end]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(entity_type: impl Into<String>, start: usize, end: usize) -> Self {
        EntitySpan { entity_type: entity_type.into(), start, end }
    }
}

// ---------------------------------------------------------------------------
// Segmentation

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationProfile {
    pub terminal_marks: BTreeSet<char>,
    pub trailing_closers: BTreeSet<char>,
}

impl SegmentationProfile {
    /// Primary sentence-final marks only: `。！？`.
    pub fn profile_c() -> Self {
        SegmentationProfile { terminal_marks: "。！？".chars().collect(), trailing_closers: BTreeSet::new() }
    }

    /// `。！？` plus closing quotes `」』”’` that stay with the sentence they close.
    pub fn profile_ab() -> Self {
        SegmentationProfile {
            terminal_marks: "。！？".chars().collect(),
            trailing_closers: "」』”’".chars().collect(),
        }
    }

    /// `"c"` or `"ab"` (also `"a"`, `"b"`).
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "c" => Ok(Self::profile_c()),
            "a" | "b" | "ab" | "a/b" => Ok(Self::profile_ab()),
            other => Err(Error::invalid(format!("unknown segmentation profile `{other}`"))),
        }
    }
}

/// Splits `text` after every terminal mark. A run of closers directly after
/// a terminal mark stays with that segment. Segments concatenate back to
/// `text`; trailing text without a terminal mark forms the last segment.
pub fn segment(text: &str, profile: &SegmentationProfile) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if profile.terminal_marks.contains(&c) {
            while let Some(&next) = chars.peek() {
                if !profile.trailing_closers.contains(&next) {
                    break;
                }
                current.push(next);
                chars.next();
            }
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// One token per Unicode scalar, except that runs of non-whitespace ASCII
/// stay together. Whitespace is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut ascii = String::new();
    for c in text.chars() {
        if c.is_ascii() && !c.is_ascii_whitespace() {
            ascii.push(c);
            continue;
        }
        if !ascii.is_empty() {
            out.push(std::mem::take(&mut ascii));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !ascii.is_empty() {
        out.push(ascii);
    }
    out
}

// ---------------------------------------------------------------------------
// Column files

/// Reads the two-column format: `token<TAB>label`, blank line between
/// sentences. Gold sequences are not required to be well formed.
pub fn read_corpus<R: BufRead>(input: R, labels: &LabelSet) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut gold = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, gold: &mut Vec<usize>| {
        if !tokens.is_empty() {
            sentences.push(Sentence {
                tokens: std::mem::take(tokens),
                gold: Some(LabelSequence::new(std::mem::take(gold))),
            });
        }
    };

    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut gold);
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(token), Some(label), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Parse { line: i + 1, message: format!("expected `token<TAB>label`, got `{line}`") });
        };
        if token.is_empty() {
            return Err(Error::Parse { line: i + 1, message: "empty token".into() });
        }
        let label = label.trim();
        let index = labels
            .index_of(label)
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("unknown label `{label}`") })?;
        tokens.push(token.to_owned());
        gold.push(index);
    }
    flush(&mut tokens, &mut gold);
    Ok(sentences)
}

/// Writes sentences in the two-column format. Every sentence needs labels.
pub fn write_corpus<W: Write>(mut out: W, labels: &LabelSet, sentences: &[Sentence]) -> Result<()> {
    for (i, s) in sentences.iter().enumerate() {
        let gold = s.gold.as_ref().ok_or_else(|| Error::invalid(format!("sentence {i} has no labels")))?;
        write_labeled(&mut out, labels, &s.tokens, gold)?;
    }
    Ok(())
}

/// Writes one sentence with the given label sequence, followed by a blank line.
pub fn write_labeled<W: Write>(mut out: W, labels: &LabelSet, tokens: &[String], seq: &[usize]) -> Result<()> {
    if tokens.len() != seq.len() {
        return Err(Error::invalid(format!("{} tokens but {} labels", tokens.len(), seq.len())));
    }
    for (tok, &y) in tokens.iter().zip(seq) {
        if y >= labels.len() {
            return Err(Error::invalid(format!("label index {y} out of range")));
        }
        writeln!(out, "{tok}\t{}", labels.name(y))?;
    }
    writeln!(out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Spans

/// Well-formed `B M* E` runs of one type and `S` singletons become spans.
/// Anything else (dangling `B`/`M`, a type switch inside a run, an `E` or
/// `M` without an opener) is dropped.
pub fn extract_entities(labels: &LabelSet, seq: &[usize]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (t, &y) in seq.iter().enumerate() {
        let Some(label) = labels.labels().get(y) else {
            open = None;
            continue;
        };
        let ty = label.entity_type;
        open = match (label.tag, open) {
            (PositionTag::B, _) => Some((ty.expect("B carries a type"), t)),
            (PositionTag::M, Some((o, s))) if Some(o) == ty => Some((o, s)),
            (PositionTag::E, Some((o, s))) if Some(o) == ty => {
                spans.push(EntitySpan::new(&labels.entity_types()[o], s, t));
                None
            }
            (PositionTag::S, _) => {
                spans.push(EntitySpan::new(&labels.entity_types()[ty.expect("S carries a type")], t, t));
                None
            }
            _ => None,
        };
    }
    spans
}

/// BMES encoding of non-overlapping `spans` over `n` tokens; other tokens get `O`.
pub fn encode_spans(labels: &LabelSet, spans: &[EntitySpan], n: usize) -> Result<LabelSequence> {
    let mut seq = vec![labels.outside(); n];
    let mut taken = vec![false; n];
    for span in spans {
        if span.start > span.end || span.end >= n {
            return Err(Error::invalid(format!("span {}..={} outside sentence of {n} tokens", span.start, span.end)));
        }
        let ty = labels
            .type_index(&span.entity_type)
            .ok_or_else(|| Error::invalid(format!("unknown entity type `{}`", span.entity_type)))?;
        for t in span.start..=span.end {
            if std::mem::replace(&mut taken[t], true) {
                return Err(Error::invalid(format!("overlapping spans at token {t}")));
            }
            let tag = if span.start == span.end {
                PositionTag::S
            } else if t == span.start {
                PositionTag::B
            } else if t == span.end {
                PositionTag::E
            } else {
                PositionTag::M
            };
            seq[t] = labels.encode(tag, ty);
        }
    }
    Ok(seq.into())
}

// ---------------------------------------------------------------------------
// Scoring

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl TypeScore {
    fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        TypeScore { precision, recall, f1, gold, predicted, matched }
    }
}

/// Strict entity-level scores; serializes as the scorer's JSON report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
    pub per_type: BTreeMap<String, TypeScore>,
}

/// Exact (type, start, end) span matching between gold sentences and predictions.
pub fn score(labels: &LabelSet, gold: &[Sentence], pred: &[LabelSequence]) -> Result<Score> {
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!("{} gold sentences but {} predictions", gold.len(), pred.len())));
    }
    let gold_seqs = gold
        .iter()
        .enumerate()
        .map(|(i, s)| s.gold.as_deref().ok_or_else(|| Error::invalid(format!("gold sentence {i} has no labels"))))
        .collect::<Result<Vec<_>>>()?;
    score_sequences(labels, &gold_seqs, &pred.iter().map(|p| &p[..]).collect::<Vec<_>>())
}

pub fn score_sequences(labels: &LabelSet, gold: &[&[usize]], pred: &[&[usize]]) -> Result<Score> {
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!("{} gold sentences but {} predictions", gold.len(), pred.len())));
    }
    let mut counts: BTreeMap<&str, [usize; 3]> =
        labels.entity_types().iter().map(|t| (t.as_str(), [0; 3])).collect();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::invalid(format!("sentence {i}: {} gold labels but {} predicted", g.len(), p.len())));
        }
        let gs: BTreeSet<EntitySpan> = extract_entities(labels, g).into_iter().collect();
        let ps: BTreeSet<EntitySpan> = extract_entities(labels, p).into_iter().collect();
        for s in &gs {
            counts.get_mut(s.entity_type.as_str()).expect("known type")[0] += 1;
        }
        for s in &ps {
            let c = counts.get_mut(s.entity_type.as_str()).expect("known type");
            c[1] += 1;
            if gs.contains(s) {
                c[2] += 1;
            }
        }
    }
    let (mut g, mut p, mut m) = (0, 0, 0);
    let mut per_type = BTreeMap::new();
    for (ty, [tg, tp, tm]) in counts {
        g += tg;
        p += tp;
        m += tm;
        per_type.insert(ty.to_owned(), TypeScore::from_counts(tg, tp, tm));
    }
    let total = TypeScore::from_counts(g, p, m);
    Ok(Score {
        precision: total.precision,
        recall: total.recall,
        f1: total.f1,
        gold: g,
        predicted: p,
        matched: m,
        per_type,
    })
}

// ---------------------------------------------------------------------------
// Relabeling

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelStats {
    pub sentences: usize,
    pub entities_kept: usize,
    pub entities_dropped: usize,
    pub label_count: usize,
}

/// Re-encodes sentences labeled under `source` into `target`, mapping each
/// source type to a target type or dropping it (`None`). Dropped spans
/// become `O`. Malformed fragments in the source are dropped as well.
pub fn relabel_subset(
    sentences: &[Sentence],
    source: &LabelSet,
    target: &LabelSet,
    mapping: &HashMap<String, Option<String>>,
) -> Result<(Vec<Sentence>, RelabelStats)> {
    for ty in source.entity_types() {
        match mapping.get(ty) {
            None => return Err(Error::invalid(format!("mapping has no entry for source type `{ty}`"))),
            Some(Some(to)) if target.type_index(to).is_none() => {
                return Err(Error::invalid(format!("`{ty}` maps to `{to}`, which the target vocabulary lacks")))
            }
            _ => {}
        }
    }

    let mut stats = RelabelStats { label_count: target.len(), ..RelabelStats::default() };
    let mut out = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let gold = s.gold.as_ref().ok_or_else(|| Error::invalid(format!("sentence {i} has no labels")))?;
        let mut kept = Vec::new();
        for span in extract_entities(source, gold) {
            match &mapping[&span.entity_type] {
                Some(to) => {
                    kept.push(EntitySpan { entity_type: to.clone(), ..span });
                    stats.entities_kept += 1;
                }
                None => stats.entities_dropped += 1,
            }
        }
        let seq = encode_spans(target, &kept, s.len())?;
        out.push(Sentence { tokens: s.tokens.clone(), gold: Some(seq) });
    }
    stats.sentences = out.len();
    Ok((out, stats))
}

// ---------------------------------------------------------------------------
// Synthetic corpora

/// Settings for [`synth_corpus`].
///
/// Each entity type owns four disjoint character pools, one per position tag,
/// plus a shared pool. With probability `boundary_noise` an entity character
/// is drawn from the shared pool of its type, so its position cannot be read
/// off the character itself. Outside tokens come from their own pool. Pool
/// characters are drawn with Zipf-like frequencies `∝ 1 / rank^vocab_skew`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub entity_types: Vec<String>,
    pub sentences: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    /// Relative weight of entity length `i + 1`.
    pub entity_length_weights: Vec<f64>,
    /// Probability that an entity starts at a free position.
    pub entity_rate: f64,
    pub pool_size: usize,
    pub outside_pool_size: usize,
    pub vocab_skew: f64,
    pub boundary_noise: f64,
}

impl SynthSpec {
    /// Defaults with `types` entity types named `T0`, `T1`, ...
    pub fn with_types(types: usize, sentences: usize) -> Self {
        SynthSpec {
            entity_types: (0..types).map(|i| format!("T{i}")).collect(),
            sentences,
            ..SynthSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_owned()));
        if self.entity_types.is_empty() {
            return bad("at least one entity type is required");
        }
        if self.min_sentence_len == 0 || self.min_sentence_len > self.max_sentence_len {
            return bad("sentence length range is empty");
        }
        let max_entity = self.entity_length_weights.iter().rposition(|&w| w > 0.0).map(|i| i + 1);
        match max_entity {
            None => return bad("entity length weights must contain a positive entry"),
            Some(len) if len > self.max_sentence_len => {
                return Err(Error::invalid(format!(
                    "entity length {len} exceeds the maximum sentence length {}",
                    self.max_sentence_len
                )))
            }
            _ => {}
        }
        if self.entity_length_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("entity length weights must be finite and non-negative");
        }
        for (name, p) in [("entity_rate", self.entity_rate), ("boundary_noise", self.boundary_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.pool_size == 0 || self.outside_pool_size == 0 {
            return bad("character pools must be non-empty");
        }
        if !(self.vocab_skew.is_finite() && self.vocab_skew >= 0.0) {
            return bad("vocab_skew must be finite and non-negative");
        }
        let needed = self.entity_types.len() * 5 * self.pool_size + self.outside_pool_size;
        if needed > CJK_RANGE {
            return Err(Error::invalid(format!("{needed} distinct characters requested, at most {CJK_RANGE} available")));
        }
        Ok(())
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            entity_types: vec!["T0".into(), "T1".into(), "T2".into()],
            sentences: 1000,
            min_sentence_len: 8,
            max_sentence_len: 40,
            entity_length_weights: vec![2.0, 4.0, 3.0, 1.0],
            entity_rate: 0.12,
            pool_size: 100,
            outside_pool_size: 500,
            vocab_skew: 1.0,
            boundary_noise: 0.0,
        }
    }
}

const CJK_BASE: u32 = 0x4E00;
const CJK_RANGE: usize = 0x9FFF - 0x4E00 + 1;

/// Generated sentences and the vocabulary they are labeled with.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub labels: LabelSet,
    pub sentences: Vec<Sentence>,
}

struct Pool {
    chars: Vec<char>,
    dist: WeightedIndex<f64>,
}

impl Pool {
    fn new(first: usize, size: usize, skew: f64) -> Self {
        let chars = (0..size)
            .map(|i| char::from_u32(CJK_BASE + (first + i) as u32).expect("CJK block is contiguous"))
            .collect();
        let weights: Vec<f64> = (1..=size).map(|r| (r as f64).powf(-skew)).collect();
        Pool { chars, dist: WeightedIndex::new(weights).expect("positive weights") }
    }

    fn draw(&self, rng: &mut impl Rng) -> char {
        self.chars[self.dist.sample(rng)]
    }
}

/// Generates `spec.sentences` labeled sentences; deterministic given `seed`.
/// Gold sequences are always well formed.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let labels = LabelSet::new(&spec.entity_types, Scheme::Bmes)?;
    let types = spec.entity_types.len();

    // Pools: per type [B, M, E, S, shared], then outside.
    let mut next = 0;
    let mut entity_pools = Vec::with_capacity(types);
    for _ in 0..types {
        let pools: Vec<Pool> = (0..5)
            .map(|_| {
                let p = Pool::new(next, spec.pool_size, spec.vocab_skew);
                next += spec.pool_size;
                p
            })
            .collect();
        entity_pools.push(pools);
    }
    let outside = Pool::new(next, spec.outside_pool_size, spec.vocab_skew);
    let lengths = WeightedIndex::new(&spec.entity_length_weights)
        .map_err(|e| Error::invalid(format!("entity length weights: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let n = rng.gen_range(spec.min_sentence_len..=spec.max_sentence_len);
        let mut tokens = Vec::with_capacity(n);
        let mut gold = Vec::with_capacity(n);
        while tokens.len() < n {
            let len = lengths.sample(&mut rng) + 1;
            if rng.gen_bool(spec.entity_rate) && tokens.len() + len <= n {
                let ty = rng.gen_range(0..types);
                for i in 0..len {
                    let tag = match (i, len) {
                        (_, 1) => PositionTag::S,
                        (0, _) => PositionTag::B,
                        (i, l) if i + 1 == l => PositionTag::E,
                        _ => PositionTag::M,
                    };
                    let pool = if rng.gen_bool(spec.boundary_noise) {
                        &entity_pools[ty][4]
                    } else {
                        &entity_pools[ty][tag as usize]
                    };
                    tokens.push(pool.draw(&mut rng).to_string());
                    gold.push(labels.encode(tag, ty));
                }
            } else {
                tokens.push(outside.draw(&mut rng).to_string());
                gold.push(labels.outside());
            }
        }
        sentences.push(Sentence { tokens, gold: Some(gold.into()) });
    }
    debug_assert!({
        let cm = ConstraintMatrix::bmes(&labels);
        sentences.iter().all(|s| cm.is_valid_sequence(s.gold.as_ref().unwrap()).unwrap())
    });
    Ok(SynthCorpus { labels, sentences })
}
