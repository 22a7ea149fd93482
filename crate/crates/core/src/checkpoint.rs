//! `LTG1` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LTG1"            4 bytes magic
//! version           u32
//! section count     u32
//! per section:
//!   name length     u16
//!   name            utf-8
//!   payload length  u64
//!   payload         bytes
//! ```
//!
//! Section payloads are opaque to the container. The helpers below encode
//! parameter stores (`u64` seed, `u32` entry count, then per entry name,
//! `u32` rows, `u32` cols and row-major `f64`), JSON documents and the
//! generator state. Readers skip sections they do not recognize.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diffcore::{Matrix, ParamStore};

pub const MAGIC: &[u8; 4] = b"LTG1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an LTG1 checkpoint")]
    BadMagic,
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("section name is not utf-8")]
    BadName,
    #[error("missing section {0}")]
    Missing(String),
    #[error("malformed section {name}: {detail}")]
    Malformed { name: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub version: u32,
    sections: BTreeMap<String, Vec<u8>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str16(&mut self) -> Result<String, CheckpointError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::BadName)
    }
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("name longer than 65535 bytes");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new() -> Self {
        Self { version: VERSION, sections: BTreeMap::new() }
    }

    pub fn put(&mut self, name: impl Into<String>, payload: Vec<u8>) {
        self.sections.insert(name.into(), payload);
    }

    pub fn get(&self, name: &str) -> Result<&[u8], CheckpointError> {
        self.sections.get(name).map(|v| v.as_slice()).ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.sections.keys()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            put_str16(&mut out, name);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    /// Parses a container, keeping only sections accepted by `known`; the
    /// rest are dropped with a warning.
    pub fn from_bytes(bytes: &[u8], known: impl Fn(&str) -> bool) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version > VERSION {
            log::warn!("checkpoint version {version} is newer than {VERSION}; reading known sections only");
        }
        let count = r.u32()?;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let name = r.str16()?;
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| CheckpointError::Truncated(r.pos))?;
            let payload = r.take(len)?;
            if known(&name) {
                sections.insert(name, payload.to_vec());
            } else {
                log::warn!("skipping unknown checkpoint section {name:?} ({len} bytes)");
            }
        }
        Ok(Self { version, sections })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, known: impl Fn(&str) -> bool) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?, known)
    }

    pub fn put_params(&mut self, name: impl Into<String>, params: &ParamStore) {
        self.put(name, encode_params(params));
    }

    pub fn params(&self, name: &str) -> Result<ParamStore, CheckpointError> {
        decode_params(self.get(name)?).map_err(|e| malformed(name, e))
    }

    pub fn put_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        self.put(name, serde_json::to_vec(value).expect("checkpoint json"));
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T, CheckpointError> {
        serde_json::from_slice(self.get(name)?).map_err(|e| malformed(name, e.to_string()))
    }

    pub fn put_rng(&mut self, name: impl Into<String>, rng: &ChaCha8Rng) {
        let mut out = Vec::with_capacity(56);
        out.extend_from_slice(&rng.get_seed());
        out.extend_from_slice(&rng.get_stream().to_le_bytes());
        out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        self.put(name, out);
    }

    pub fn rng(&self, name: &str) -> Result<ChaCha8Rng, CheckpointError> {
        use rand::SeedableRng;
        let b = self.get(name)?;
        if b.len() != 56 {
            return Err(malformed(name, format!("rng state is {} bytes, expected 56", b.len())));
        }
        let mut rng = ChaCha8Rng::from_seed(b[..32].try_into().unwrap());
        rng.set_stream(u64::from_le_bytes(b[32..40].try_into().unwrap()));
        rng.set_word_pos(u128::from_le_bytes(b[40..56].try_into().unwrap()));
        Ok(rng)
    }

    /// SHA-256 of the serialized container.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn malformed(name: &str, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed { name: name.into(), detail: detail.into() }
}

pub fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&params.seed().to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, m) in params.iter() {
        put_str16(&mut out, name);
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamStore, String> {
    let inner = || -> Result<ParamStore, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let mut store = ParamStore::new(r.u64()?);
        let n = r.u32()?;
        for _ in 0..n {
            let name = r.str16()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f64()?);
            }
            if store.get(&name).is_some() {
                return Err(CheckpointError::Malformed { name, detail: "duplicate entry".into() });
            }
            store.insert(name, Matrix::from_vec(rows, cols, data));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed { name: "params".into(), detail: "trailing bytes".into() });
        }
        Ok(store)
    };
    inner().map_err(|e| e.to_string())
}
