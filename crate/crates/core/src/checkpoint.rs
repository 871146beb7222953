//! JSON checkpoint holding the encoder settings, the emission projection and
//! (optionally) CRF parameters, tied to a label vocabulary by its hash.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::crf::CrfParams;
use crate::emission::{FeatureEncoder, LinearProjection};
use crate::error::{Error, Result};
use crate::labelspace::LabelSet;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub k: usize,
    pub vocab_hash: String,
    pub labels: Vec<String>,
    pub encoder: FeatureEncoder,
    pub projection: ProjectionData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crf: Option<CrfParams>,
}

/// Sparse form of a [`LinearProjection`]: the bias and every feature column
/// with a non-zero weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionData {
    pub bias: Vec<f64>,
    pub columns: Vec<(u32, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(labels: &LabelSet, encoder: FeatureEncoder, proj: &LinearProjection, crf: Option<CrfParams>) -> Self {
        let columns = proj.nonzero_features().map(|(f, col)| (f as u32, col.to_vec())).collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            k: labels.len(),
            vocab_hash: labels.vocab_hash(),
            labels: labels.names().to_vec(),
            encoder,
            projection: ProjectionData { bias: proj.bias().to_vec(), columns },
            crf,
        }
    }

    /// Fails with [`Error::Incompatible`] unless `labels` is the vocabulary
    /// this checkpoint was trained with.
    pub fn check_vocab(&self, labels: &LabelSet) -> Result<()> {
        if self.vocab_hash != labels.vocab_hash() || self.k != labels.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint vocabulary {} (k={}) does not match labels {} (k={})",
                self.vocab_hash,
                self.k,
                labels.vocab_hash(),
                labels.len()
            )));
        }
        Ok(())
    }

    pub fn projection(&self) -> Result<LinearProjection> {
        let mut proj = LinearProjection::zeros(self.k, self.encoder.dim);
        if self.projection.bias.len() != self.k {
            return Err(Error::invalid("checkpoint bias has the wrong length"));
        }
        proj.bias_mut().copy_from_slice(&self.projection.bias);
        for (f, col) in &self.projection.columns {
            if *f as usize >= self.encoder.dim || col.len() != self.k {
                return Err(Error::invalid(format!("checkpoint column {f} is malformed")));
            }
            proj.feature_column_mut(*f as usize).copy_from_slice(col);
        }
        Ok(proj)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(input)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!("unsupported checkpoint version {}", ckpt.format_version)));
        }
        if let Some(crf) = &ckpt.crf {
            crf.validate()?;
            if crf.k() != ckpt.k {
                return Err(Error::invalid("checkpoint CRF size does not match k"));
            }
        }
        Ok(ckpt)
    }
}
