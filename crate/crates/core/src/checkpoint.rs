//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "HRHNCKPT" | u32 version | u64 header length | header JSON
//! u32 group count | per group: u32 name length, name, u32 rank,
//!                   rank × u64 dims, f32 payload (row-major)
//! ```
//!
//! The header carries the model configuration, the normalization statistics
//! and an optional snapshot of the full run configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationStats;
use crate::error::{io_err, Error, Result};
use crate::model::{HrhnParams, ModelConfig};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"HRHNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    #[serde(default)]
    pub normalization: Option<NormalizationStats>,
    /// Resolved run configuration, stored for reproducibility.
    #[serde(default)]
    pub run: Option<serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: HrhnParams<f32>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} too large")))
    }
}

impl Checkpoint {
    pub fn new(params: HrhnParams<f32>, normalization: Option<NormalizationStats>, run: Option<serde_json::Value>) -> Self {
        Self {
            header: CheckpointHeader {
                model: params.config.clone(),
                normalization,
                run,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + header.len() + 4 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let groups = self.params.store.groups();
        out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
        for group in groups {
            out.extend_from_slice(&(group.name.len() as u32).to_le_bytes());
            out.extend_from_slice(group.name.as_bytes());
            let shape = group.value.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &dim in shape {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for v in group.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Checkpoint("not an HRHN checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = r.len("header length")?;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut params = HrhnParams::<f32>::init(header.model.clone(), 0)?;

        let count = r.u32("group count")? as usize;
        if count != params.store.len() {
            return Err(Error::Checkpoint(format!(
                "{count} parameter groups stored, model layout has {}",
                params.store.len()
            )));
        }
        for group in params.store.groups_mut() {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "group name")?)
                .map_err(|_| Error::Checkpoint("group name is not UTF-8".into()))?;
            if name != group.name {
                return Err(Error::Checkpoint(format!(
                    "expected group `{}`, found `{name}`",
                    group.name
                )));
            }
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>>>()?;
            if shape != group.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "group `{name}` has shape {shape:?}, model expects {:?}",
                    group.value.shape()
                )));
            }
            let payload = r.take(4 * group.value.len(), "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            group.value = Tensor::new(shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last group",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }
}
