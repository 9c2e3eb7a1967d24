//! Self-describing checkpoint container.
//!
//! Layout: 4-byte magic `ULCK`, u32 LE format version, u64 LE header
//! length, a JSON header (kind, model metadata, tensor layout), then the
//! raw parameter values as little-endian `f64`. Raw bytes make the
//! round-trip bitwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Layout, ParamVector, TensorSpec};
use crate::error::{Error, Result};

use super::{ClassifierModel, DecoderHead, VaeModel};

const MAGIC: &[u8; 4] = b"ULCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub meta: serde_json::Value,
    pub layout: Vec<TensorSpec>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    meta: serde_json::Value,
    params: &ParamVector,
) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        meta,
        layout: params.layout().specs().to_vec(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamVector)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            found: u32::from_be_bytes(magic),
            expected: u32::from_be_bytes(*MAGIC),
        });
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let header_len = u64::from_le_bytes(buf8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    let layout = Layout::from_specs(header.layout.clone())?;
    let mut values = vec![0.0f64; layout.total_len()];
    let mut raw = vec![0u8; layout.total_len() * 8];
    r.read_exact(&mut raw).map_err(|_| Error::TruncatedFile {
        needed: layout.total_len() * 8,
        got: 0,
    })?;
    for (i, chunk) in raw.chunks_exact(8).enumerate() {
        values[i] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok((header, ParamVector::new(layout, values)))
}

impl VaeModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "input_dim": self.input_dim(),
            "hidden_dim": self.hidden_dim(),
            "latent_dim": self.latent_dim(),
            "head": self.head(),
        });
        save_checkpoint(path, "vae", meta, self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.kind != "vae" {
            return Err(Error::Checkpoint(format!(
                "expected a vae checkpoint, found {}",
                header.kind
            )));
        }
        let get = |k: &str| -> Result<usize> {
            header.meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("missing meta field {k}")))
        };
        let head: DecoderHead = serde_json::from_value(header.meta["head"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad head field: {e}")))?;
        Ok(VaeModel::from_params(
            params,
            get("input_dim")?,
            get("hidden_dim")?,
            get("latent_dim")?,
            head,
        ))
    }
}

impl ClassifierModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "input_dim": self.input_dim(),
            "hidden_dim": self.feature_dim(),
            "n_classes": self.n_classes(),
        });
        save_checkpoint(path, "classifier", meta, self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.kind != "classifier" {
            return Err(Error::Checkpoint(format!(
                "expected a classifier checkpoint, found {}",
                header.kind
            )));
        }
        let get = |k: &str| -> Result<usize> {
            header.meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("missing meta field {k}")))
        };
        Ok(ClassifierModel::from_params(
            params,
            get("input_dim")?,
            get("hidden_dim")?,
            get("n_classes")?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn vae_checkpoint_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vae.ckpt");
        let m = VaeModel::new(6, 4, 2, DecoderHead::Bernoulli, 77);
        m.save(&path).unwrap();
        let loaded = VaeModel::load(&path).unwrap();
        assert_eq!(m.params().values(), loaded.params().values());
        assert_eq!(m.head(), loaded.head());
        assert_eq!(m.latent_dim(), loaded.latent_dim());
    }

    #[test]
    fn classifier_checkpoint_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        let m = ClassifierModel::new(6, 4, 10, 78);
        m.save(&path).unwrap();
        let loaded = ClassifierModel::load(&path).unwrap();
        assert_eq!(m.params().values(), loaded.params().values());
        assert_eq!(m.checksum(), loaded.checksum());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPExxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_values_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.ckpt");
        let m = VaeModel::new(6, 4, 2, DecoderHead::Bernoulli, 1);
        m.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            VaeModel::load(&path),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        let m = ClassifierModel::new(6, 4, 10, 3);
        m.save(&path).unwrap();
        assert!(matches!(VaeModel::load(&path), Err(Error::Checkpoint(_))));
    }
}
