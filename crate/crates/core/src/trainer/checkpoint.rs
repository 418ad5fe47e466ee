//! Versioned binary checkpoint container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "FSNERFCK" | u32 version | [u8; 32] sha256(config text)
//! u64 len | config text (TOML)
//! u64 iteration | u64 width | u64 height | u64 adam step | u64 adam skipped
//! u32 block count | blocks
//! block: u32 name len | name | u32 ndim | u64 dims... | f64 data...
//! ```
//!
//! Blocks are named `param/<name>`, `adam.m/<name>` and `adam.v/<name>`.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::diffcore::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scenedata::write_atomic;

const MAGIC: &[u8; 8] = b"FSNERFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: usize,
    /// Training image resolution `(width, height)`.
    pub resolution: (usize, usize),
    pub params: ParamStore,
    pub adam: AdamState,
}

pub fn config_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn string(&mut self, n: usize) -> std::result::Result<String, String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

fn put_block(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_toml();
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(config_hash(&text));
        out.extend((text.len() as u64).to_le_bytes());
        out.extend(text.as_bytes());
        for v in [
            self.iteration as u64,
            self.resolution.0 as u64,
            self.resolution.1 as u64,
            self.adam.step,
            self.adam.skipped,
        ] {
            out.extend(v.to_le_bytes());
        }
        out.extend((3 * self.params.len() as u32).to_le_bytes());
        for (i, (name, t)) in self.params.iter().enumerate() {
            put_block(&mut out, &format!("param/{name}"), t);
            put_block(&mut out, &format!("adam.m/{name}"), &self.adam.m[i]);
            put_block(&mut out, &format!("adam.v/{name}"), &self.adam.v[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        Self::decode(bytes).map_err(|msg| Error::format(path, msg))
    }

    fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let len = r.usize()?;
        let text = r.string(len)?;
        if config_hash(&text) != hash {
            return Err("config hash does not match the stored config".into());
        }
        let config = TrainConfig::from_toml(&text).map_err(|e| e.to_string())?;
        let iteration = r.usize()?;
        let resolution = (r.usize()?, r.usize()?);
        let (step, skipped) = (r.u64()?, r.u64()?);
        let blocks = r.u32()? as usize;
        if !blocks.is_multiple_of(3) {
            return Err(format!("block count {blocks} is not a multiple of 3"));
        }
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for _ in 0..blocks / 3 {
            let mut read = |prefix: &str| -> std::result::Result<(String, Tensor), String> {
                let name_len = r.u32()? as usize;
                let name = r.string(name_len)?;
                let bare = name
                    .strip_prefix(prefix)
                    .ok_or_else(|| format!("expected a `{prefix}` block, found `{name}`"))?
                    .to_string();
                let ndim = r.u32()? as usize;
                let shape = (0..ndim).map(|_| r.usize()).collect::<std::result::Result<Vec<_>, _>>()?;
                let count: usize = shape.iter().product();
                let raw = r.take(count.checked_mul(8).ok_or("tensor too large")?)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Ok((bare, Tensor::new(shape, data).map_err(|e| e.to_string())?))
            };
            let (name, value) = read("param/")?;
            let (mname, mt) = read("adam.m/")?;
            let (vname, vt) = read("adam.v/")?;
            if mname != name || vname != name || mt.shape() != value.shape() || vt.shape() != value.shape() {
                return Err(format!("optimizer state for `{name}` is inconsistent"));
            }
            params.add(name, value);
            m.push(mt);
            v.push(vt);
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let adam = AdamState {
            config: config.optim.adam,
            m,
            v,
            step,
            skipped,
        };
        Ok(Self {
            config,
            iteration,
            resolution,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
