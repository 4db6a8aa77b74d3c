//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PDCK" | u32 version | u64 iteration | u32 len + UTF-8 JSON config echo
//! u32 entry count, then per entry:
//!   u32 len + UTF-8 name | u8 group tag | u8 kind (0 param, 1 buffer)
//!   u32 ndim | u32 dims[ndim] | f32 values[product(dims)]
//! ```

use std::path::Path;

use pdc_core::trainer::TrainConfig;
use pdc_core::volnet::{restore_network, Entry, EntryKind, Group, NetworkConfig, ParameterStore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Failure, Result};

pub const MAGIC: &[u8; 4] = b"PDCK";
pub const VERSION: u32 = 1;

/// Configuration echoed into every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Ids of the volumes trained with labels.
    #[serde(default)]
    pub labeled: Vec<String>,
}

impl CheckpointConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Exact bytes of the config echo, kept verbatim for byte-stable re-saving.
    pub config_json: String,
    pub params: ParameterStore<f32>,
}

/// Hex SHA-256 of a config echo.
pub fn config_hash(config_json: &str) -> String {
    hex::encode(Sha256::digest(config_json.as_bytes()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Failure::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Failure::Data(format!("checkpoint string: {e}")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

impl Checkpoint {
    pub fn new(iteration: u64, config: &CheckpointConfig, params: ParameterStore<f32>) -> Self {
        Self { iteration, config_json: config.to_json(), params }
    }

    pub fn config(&self) -> Result<CheckpointConfig> {
        serde_json::from_str(&self.config_json).map_err(|e| Failure::Data(format!("checkpoint config echo: {e}")))
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config_json)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        put_u32(&mut out, self.config_json.len());
        out.extend_from_slice(self.config_json.as_bytes());
        put_u32(&mut out, self.params.len());
        for e in self.params.entries() {
            put_u32(&mut out, e.name.len());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.group.tag());
            out.push(match e.kind {
                EntryKind::Param => 0,
                EntryKind::Buffer => 1,
            });
            put_u32(&mut out, e.shape.len());
            for &d in &e.shape {
                put_u32(&mut out, d);
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Failure::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Failure::Data(format!("unsupported checkpoint version {version}")));
        }
        let iteration = r.u64()?;
        let config_json = r.string()?;
        let config: CheckpointConfig =
            serde_json::from_str(&config_json).map_err(|e| Failure::Data(format!("checkpoint config echo: {e}")))?;
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let tag = r.u8()?;
            let group = Group::from_tag(tag).ok_or_else(|| Failure::Data(format!("{name}: bad group tag {tag}")))?;
            let kind = match r.u8()? {
                0 => EntryKind::Param,
                1 => EntryKind::Buffer,
                k => return Err(Failure::Data(format!("{name}: bad entry kind {k}"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(4).ok_or_else(|| Failure::Data(format!("{name}: shape overflow")))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            entries.push(Entry { name, group, kind, shape, values });
        }
        if r.pos != buf.len() {
            return Err(Failure::Data(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
        }
        let params = restore_network(&config.network, entries)?;
        Ok(Self { iteration, config_json, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Failure::write(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Failure::read(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Failure::Data(m) => Failure::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration}.bin")
}
