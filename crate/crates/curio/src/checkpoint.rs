//! Binary checkpoint format shared by every model in the repo.
//!
//! Layout: magic bytes `XEX2`, format version `u16` (little-endian), then
//! repeated records of
//! `(name length u16, UTF-8 name, rank u8, dims u32 LE.., values f32 LE..)`.
//! Round-trips are bit-exact. Frozen tensors are stored under names with
//! the `frozen.` prefix; loading such a name as a trainable parameter is
//! refused.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"XEX2";
pub const FORMAT_VERSION: u16 = 1;

/// Name prefix marking a tensor as frozen (excluded from optimization).
pub const FROZEN_PREFIX: &str = "frozen.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    Version(u16),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor '{0}' is frozen and cannot be loaded as trainable")]
    FrozenAsTrainable(String),
    #[error("store error: {0}")]
    Store(#[from] crate::tensor::TensorError),
}

pub type Result<V> = std::result::Result<V, CheckpointError>;

/// An ordered list of named tensors, the unit of (de)serialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, t: Tensor<f32>) {
        self.tensors.push((name.to_string(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Capture a parameter store. Frozen entries gain the `frozen.` prefix.
    pub fn from_store(store: &ParamStore<f32>) -> Self {
        let mut ck = Checkpoint::default();
        for (name, p) in store.iter() {
            let stored = if p.frozen {
                format!("{FROZEN_PREFIX}{name}")
            } else {
                name.to_string()
            };
            ck.push(&stored, p.value.clone());
        }
        ck
    }

    /// Rebuild a parameter store: `frozen.`-prefixed tensors come back as
    /// frozen entries (prefix stripped), everything else as trainable.
    pub fn into_store(&self) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            match name.strip_prefix(FROZEN_PREFIX) {
                Some(base) => store.register_frozen(base, t.clone())?,
                None => store.register(name, t.clone())?,
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(CheckpointError::Malformed(format!(
                    "tensor name too long: {name}"
                )));
            }
            if t.rank() > u8::MAX as usize {
                return Err(CheckpointError::Malformed(format!(
                    "tensor rank too large: {name}"
                )));
            }
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u16(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut ck = Checkpoint::default();
        loop {
            let mut len_buf = [0u8; 2];
            match r.read(&mut len_buf)? {
                0 => break,
                1 => {
                    r.read_exact(&mut len_buf[1..2])?;
                }
                _ => {}
            }
            let name_len = u16::from_le_bytes(len_buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                let mut d = [0u8; 4];
                r.read_exact(&mut d)?;
                shape.push(u32::from_le_bytes(d) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut v = [0u8; 4];
                r.read_exact(&mut v)?;
                data.push(f32::from_le_bytes(v));
            }
            ck.tensors.push((
                name,
                Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?,
            ));
        }
        Ok(ck)
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}
