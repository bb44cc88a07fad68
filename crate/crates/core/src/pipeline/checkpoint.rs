//! Binary checkpoint container: an 8-byte magic, a little-endian `u32`
//! format version, a little-endian `u64` body length, then a JSON body.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Macas;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::featurize::Featurizer;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MACASCKP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub labels: Vec<String>,
    pub featurizer: Featurizer,
    pub model: Macas,
}

impl Checkpoint {
    /// Class distribution `Z` for one text.
    pub fn predict(&self, text: &str) -> Result<Tensor> {
        self.model.predict(&self.featurizer.featurize(text)?)
    }

    pub fn predict_label(&self, text: &str) -> Result<&str> {
        let z = self.predict(text)?;
        Ok(&self.labels[z.argmax_rows()[0]])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = serde_json::to_vec(self).map_err(|e| Error::Input(format!("checkpoint encoding failed: {e}")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |offset: usize, msg: String| Error::CorruptCheckpoint {
            offset: offset as u64,
            msg,
        };
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(corrupt(0, "missing checkpoint magic".into()));
        }
        if bytes.len() < 12 {
            return Err(corrupt(bytes.len(), "truncated before the version field".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(bytes.len(), "truncated before the length field".into()));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != len {
            return Err(corrupt(
                bytes.len().min(HEADER_LEN + len),
                format!("body holds {} bytes, header declares {len}", body.len()),
            ));
        }
        serde_json::from_slice(body).map_err(|e| {
            // the body is a single JSON line, so the column is the byte position
            corrupt(HEADER_LEN + e.column().saturating_sub(1), format!("invalid body: {e}"))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
