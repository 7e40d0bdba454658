//! Versioned binary checkpoints.
//!
//! Layout: magic, format version (u32), manifest length (u64) and manifest
//! JSON, record count (u64), then one record per parameter: name length
//! (u32), UTF-8 name, rank (u32), dims (u64 each) and the payload as
//! little-endian f64. A SHA-256 of everything before it closes the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamStore, Tensor};
use crate::corpus::{Domain, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::training::TrainConfig;

const MAGIC: &[u8; 8] = b"KBDLGCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub domain: Option<Domain>,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub vocab_hash: String,
    /// Word vocabulary, one entry per id.
    pub vocab: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, domain: Option<Domain>, train: Option<TrainConfig>) -> Self {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            domain,
            model: model.config.clone(),
            train,
            vocab_hash: model.vocab.hash(),
            vocab: model.vocab.words().to_vec(),
        };
        Self { manifest, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(64 + manifest.len() + self.model.params.num_weights() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.model.params.len() as u64).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch (file truncated or corrupted)".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = r.u64()? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(len)?)?;
        let vocab = Vocabulary::from_parts(manifest.vocab.clone(), manifest.model.columns.clone())?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(Error::Checkpoint("vocabulary does not match its recorded hash".into()));
        }
        let count = r.u64()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after the last record".into()));
        }
        let model = Model {
            config: manifest.model.clone(),
            params,
            vocab,
        };
        model.validate()?;
        Ok(Self { manifest, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks that the model was built with `vocab`.
    pub fn load_with_vocab(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.manifest.vocab_hash != vocab.hash() {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash {} does not match checkpoint {}",
                vocab.hash(),
                ckpt.manifest.vocab_hash
            )));
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = tiny_model(3, true);
        let ckpt = Checkpoint::new(model, Some(Domain::Navigate), Some(TrainConfig::default()));
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        for (name, t) in ckpt.model.params.iter() {
            let other = back.model.params.get(name).unwrap();
            assert!(t.data().iter().zip(other.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let ckpt = Checkpoint::new(tiny_model(2, true), None, None);
        let mut bytes = ckpt.to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn wrong_vocabulary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::new(tiny_model(2, true), None, None).save(&path).unwrap();
        let other = Vocabulary::from_parts(
            crate::corpus::SPECIALS.iter().map(|s| s.to_string()).collect(),
            tiny_model(2, true).config.columns,
        )
        .unwrap();
        assert!(Checkpoint::load_with_vocab(&path, &other).is_err());
    }
}
