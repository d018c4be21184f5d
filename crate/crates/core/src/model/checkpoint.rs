//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u64` LE header length,
//! a UTF-8 JSON header (config, vocabulary, tensor table), then every tensor's
//! values as `f64` LE in table order. Values round-trip bit-exactly.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ModelError, Parameters};
use crate::tokenize::{TokenizeError, Vocabulary};

const MAGIC: &[u8; 8] = b"DOCCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint tensor table does not match its config: {0}")]
    Shape(String),
    #[error("checkpoint vocabulary: {0}")]
    Vocabulary(#[from] TokenizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A trained model together with the vocabulary it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocabulary: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut out: W, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let named = checkpoint.model.params.named_tensors();
    let header = Header {
        config: checkpoint.model.config.clone(),
        vocabulary: serde_json::from_str(&checkpoint.vocab.to_json())?,
        tensors: named
            .iter()
            .map(|(name, _, t)| TensorEntry {
                name: name.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::new();
    for (_, _, t) in &named {
        buf.clear();
        buf.reserve(t.len() * 8);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    header.config.validate()?;
    let vocab = Vocabulary::from_json(&header.vocabulary.to_string())?;

    let mut params = Parameters::zeros(&header.config);
    let expected: Vec<(String, usize, usize)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, _, t)| (n, t.rows, t.cols))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(CheckpointError::Shape(format!(
            "expected {} tensors, found {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((name, rows, cols), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *rows != entry.rows || *cols != entry.cols {
            return Err(CheckpointError::Shape(format!(
                "{} is {}x{}, expected {name} {rows}x{cols}",
                entry.name, entry.rows, entry.cols
            )));
        }
    }
    let mut bytes = Vec::new();
    for tensor in params.tensors_mut() {
        bytes.resize(tensor.len() * 8, 0);
        input.read_exact(&mut bytes)?;
        for (v, chunk) in tensor.data.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(Checkpoint {
        model: Model::from_parts(header.config, params)?,
        vocab,
    })
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    write_checkpoint(io::BufWriter::new(file), checkpoint)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = fs::File::open(path)?;
    read_checkpoint(io::BufReader::new(file))
}

/// Load a checkpoint together with its [`checkpoint_version`].
pub fn load_versioned_checkpoint(path: &Path) -> Result<(Checkpoint, String), CheckpointError> {
    let bytes = fs::read(path)?;
    let checkpoint = read_checkpoint(bytes.as_slice())?;
    Ok((checkpoint, checkpoint_version(&bytes)))
}

/// Stable identifier of serialized checkpoint bytes.
pub fn checkpoint_version(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    format!("sha256:{}", hex::encode(&digest[..8]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            vocab_size: 270,
            max_len: 16,
            num_layers: 1,
            hidden: 8,
            heads: 2,
            intermediate: 16,
            proj_dim: 4,
            ..ModelConfig::desk()
        };
        let vocab = Vocabulary::train(["aaab aab"], 270).unwrap();
        let mut model = Model::new(config).unwrap();
        // Values whose decimal forms are awkward.
        model.params.bc_b.data[0] = f64::MIN_POSITIVE;
        model.params.lm_bias.data[3] = -0.1 - 0.2;
        Checkpoint { model, vocab }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.vocab, ckpt.vocab);
        assert_eq!(back.model.config, ckpt.model.config);
        for ((_, _, a), (_, _, b)) in ckpt.model.params.named_tensors().iter().zip(back.model.params.named_tensors().iter()) {
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(matches!(read_checkpoint(&b"NOTACKPT...."[..]), Err(CheckpointError::BadMagic)));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(CheckpointError::Io(_))));
    }
}
