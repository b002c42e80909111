//! Single-file binary checkpoint: an ASCII magic line, a JSON header (config,
//! vocabulary hash, tensor index in name order), then the raw little-endian
//! f64 payload. Loading refuses a checkpoint whose vocabulary hash does not
//! match the vocabulary it is asked to serve.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Model, ModelConfig, ParamStore};

const MAGIC: &[u8] = b"omnilens-ckpt v1\n";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(path: &Path, model: &Model, vocab_hash: &str) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        vocab_hash: vocab_hash.to_string(),
        tensors: model
            .params
            .iter()
            .map(|(name, v)| TensorMeta { name: name.clone(), shape: v.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    for (_, v) in model.params.iter() {
        for &x in v.iter() {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected_vocab_hash: &str) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = vec![0u8; MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let json_len = r.read_u64::<LittleEndian>()? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    if header.vocab_hash != expected_vocab_hash {
        return Err(Error::Checkpoint(format!(
            "vocabulary hash mismatch: checkpoint was built for {} but current vocabulary is {}",
            header.vocab_hash, expected_vocab_hash
        )));
    }
    header.config.validate()?;
    let mut params = ParamStore::new();
    for meta in &header.tensors {
        let n: usize = meta.shape.iter().product();
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in tensor {}", meta.name)));
        }
        params.insert(
            &meta.name,
            ArrayD::from_shape_vec(IxDyn(&meta.shape), data)
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", meta.name)))?,
        );
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor payload".into()));
    }
    Ok(Model { config: header.config, params })
}
