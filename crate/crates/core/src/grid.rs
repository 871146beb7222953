//! Cross-comparison of the four decoding arms on one train/test split.
//!
//! `baseline` and `lc` share an emission model trained with cross-entropy;
//! `crf` and `crf+lc` share an emission model trained jointly with CRF
//! transitions. Each arm is scored with strict entity F1 on the test set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{score, synth_corpus, Sentence, SynthSpec};
use crate::crf::{crf_decode, train_crf, CrfParams};
use crate::decode::{argmax_decode, lc_decode, LabelSequence, LogitsSequence};
use crate::emission::{train_emission, EncodedSentence, FeatureEncoder, LinearProjection, TrainConfig};
use crate::error::{Error, Result};
use crate::labelspace::{ConstraintMatrix, LabelSet};

/// XORed into the grid seed to derive the held-out corpus seed.
const TEST_SEED_SALT: u64 = 0x7465_7374_5f73_6574;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "lc")]
    Lc,
    #[serde(rename = "crf")]
    Crf,
    #[serde(rename = "crf+lc")]
    CrfLc,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::Lc, Arm::Crf, Arm::CrfLc];

    pub fn uses_crf(self) -> bool {
        matches!(self, Arm::Crf | Arm::CrfLc)
    }

    /// Decodes one sentence's logits with this arm. `crf` must be present for
    /// the CRF arms.
    pub fn decode(self, logits: &LogitsSequence, cm: &ConstraintMatrix, crf: Option<&CrfParams>) -> Result<LabelSequence> {
        let need_crf = || crf.ok_or_else(|| Error::invalid(format!("arm {self} needs CRF parameters")));
        match self {
            Arm::Baseline => Ok(argmax_decode(logits)),
            Arm::Lc => lc_decode(logits, cm),
            Arm::Crf => crf_decode(logits, need_crf()?, None),
            Arm::CrfLc => crf_decode(logits, need_crf()?, Some(cm)),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Baseline => "baseline",
            Arm::Lc => "lc",
            Arm::Crf => "crf",
            Arm::CrfLc => "crf+lc",
        })
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "lc" => Ok(Arm::Lc),
            "crf" => Ok(Arm::Crf),
            "crf+lc" | "crf-lc" | "crflc" => Ok(Arm::CrfLc),
            other => Err(Error::invalid(format!("unknown decoder arm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub encoder: FeatureEncoder,
    pub emission: TrainConfig,
    pub crf: TrainConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            encoder: FeatureEncoder::default(),
            emission: TrainConfig { epochs: 20, batch_size: 8, learning_rate: 10.0, seed: 0 },
            crf: TrainConfig { epochs: 20, batch_size: 8, learning_rate: 0.1, seed: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmScore {
    pub arm: Arm,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of test sentences whose prediction breaks the BMES grammar.
    pub invalid_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub seed: u64,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub rows: Vec<ArmScore>,
}

impl GridTable {
    pub fn f1(&self, arm: Arm) -> f64 {
        self.rows.iter().find(|r| r.arm == arm).map_or(f64::NAN, |r| r.f1)
    }

    /// Tab-separated table with the seed recorded in a `#` header line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# seed={} train={} test={}\narm\tprecision\trecall\tf1\tinvalid_rate\n",
            self.seed, self.train_sentences, self.test_sentences
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                r.arm, r.precision, r.recall, r.f1, r.invalid_rate
            ));
        }
        out
    }
}

pub fn encode_corpus(encoder: &FeatureEncoder, sentences: &[Sentence]) -> Result<Vec<EncodedSentence>> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let gold = s.gold.as_ref().ok_or_else(|| Error::invalid(format!("sentence {i} has no gold labels")))?;
            Ok(EncodedSentence { features: encoder.encode(&s.tokens), gold: gold.to_vec() })
        })
        .collect()
}

/// Trains both emission models on `train` and scores the four arms on `test`.
pub fn run_grid(labels: &LabelSet, train: &[Sentence], test: &[Sentence], config: &GridConfig, seed: u64) -> Result<GridTable> {
    let k = labels.len();
    let cm = ConstraintMatrix::bmes(labels);
    let train_enc = encode_corpus(&config.encoder, train)?;
    let test_enc = encode_corpus(&config.encoder, test)?;

    let mut plain = LinearProjection::zeros(k, config.encoder.dim);
    train_emission(&train_enc, &mut plain, &TrainConfig { seed, ..config.emission })?;

    let mut joint = LinearProjection::zeros(k, config.encoder.dim);
    let mut crf = CrfParams::zeros(k);
    train_crf(&train_enc, &mut joint, &mut crf, &TrainConfig { seed, ..config.crf })?;

    let mut rows = Vec::with_capacity(Arm::ALL.len());
    for arm in Arm::ALL {
        let proj = if arm.uses_crf() { &joint } else { &plain };
        let mut preds = Vec::with_capacity(test_enc.len());
        let mut invalid = 0usize;
        for s in &test_enc {
            let logits = proj.project(&s.features)?;
            let pred = arm.decode(&logits, &cm, Some(&crf))?;
            invalid += !cm.is_valid_sequence(&pred)? as usize;
            preds.push(pred);
        }
        let sc = score(labels, test, &preds)?;
        rows.push(ArmScore {
            arm,
            precision: sc.precision,
            recall: sc.recall,
            f1: sc.f1,
            invalid_rate: invalid as f64 / test_enc.len().max(1) as f64,
        });
    }
    Ok(GridTable { seed, train_sentences: train.len(), test_sentences: test.len(), rows })
}

/// Runs [`run_grid`] on a synthetic split. The training corpus uses `seed`;
/// the test corpus uses a seed derived from it and does not depend on
/// `spec.sentences`, so runs with different training sizes share a test set.
pub fn run_synthetic_grid(spec: &SynthSpec, test_sentences: usize, config: &GridConfig, seed: u64) -> Result<GridTable> {
    let train = synth_corpus(spec, seed)?;
    let test_spec = SynthSpec { sentences: test_sentences, ..spec.clone() };
    let test = synth_corpus(&test_spec, seed ^ TEST_SEED_SALT)?;
    run_grid(&train.labels, &train.sentences, &test.sentences, config, seed)
}
