//! `TBCK` binary tensor files plus a JSON sidecar for training metadata.
//!
//! Layout: magic `TBCK`, `u32` version, then until end of file one record
//! `u32` name length, name bytes, `u32` rank, `u32 × rank` dims and the f32
//! payload, all little-endian. Parameters come first, followed by optimizer
//! moments named `adam.m/<param>` and `adam.v/<param>`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamW, Moments};
use crate::tensor::Parameter;
use crate::Rng64;

pub const MAGIC: &[u8; 4] = b"TBCK";
pub const VERSION: u32 = 1;
const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let payload: usize = records
        .iter()
        .map(|r| 12 + r.name.len() + 4 * (r.shape.len() + r.data.len()))
        .sum();
    let mut out = Vec::with_capacity(8 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("missing TBCK magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut records = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Format(format!("record {name} too large")))?;
        let raw = c.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::Format("record too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_records(records))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_records(&bytes)
}

/// Records for the parameters followed by the optimizer moments.
pub fn training_records(params: &[&Parameter], optimizer: Option<&AdamW>) -> Vec<Record> {
    let mut out: Vec<Record> = params
        .iter()
        .map(|p| Record {
            name: p.name.clone(),
            shape: p.shape().to_vec(),
            data: p.data().to_vec(),
        })
        .collect();
    if let Some(opt) = optimizer {
        for m in &opt.moments {
            out.push(Record {
                name: format!("{MOMENT_M}{}", m.name),
                shape: m.shape.clone(),
                data: m.m.clone(),
            });
            out.push(Record {
                name: format!("{MOMENT_V}{}", m.name),
                shape: m.shape.clone(),
                data: m.v.clone(),
            });
        }
    }
    out
}

/// Copies parameter values from `records` by name; every parameter must be
/// present with the same shape. Returns the moments found, in parameter
/// order, or an empty list when the file holds none.
pub fn restore_records(records: &[Record], params: &mut [&mut Parameter]) -> Result<Vec<Moments>> {
    let find = |name: &str| records.iter().find(|r| r.name == name);
    for p in params.iter_mut() {
        let r = find(&p.name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {}", p.name)))?;
        if r.shape != p.shape() {
            return Err(Error::Config(format!(
                "parameter {} has shape {:?} in checkpoint, model expects {:?}",
                p.name,
                r.shape,
                p.shape()
            )));
        }
        p.tensor.data_mut().copy_from_slice(&r.data);
    }
    let has_moments = records.iter().any(|r| r.name.starts_with(MOMENT_M));
    if !has_moments {
        return Ok(Vec::new());
    }
    params
        .iter()
        .map(|p| {
            let m = find(&format!("{MOMENT_M}{}", p.name));
            let v = find(&format!("{MOMENT_V}{}", p.name));
            match (m, v) {
                (Some(m), Some(v)) if m.shape == p.shape() && v.shape == p.shape() => Ok(Moments {
                    name: p.name.clone(),
                    shape: p.shape().to_vec(),
                    m: m.data.clone(),
                    v: v.data.clone(),
                }),
                _ => Err(Error::Format(format!(
                    "incomplete optimizer moments for {}",
                    p.name
                ))),
            }
        })
        .collect()
}

/// Complete position of the random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers cannot carry 128 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng64) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<Rng64> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng position {:?}", self.word_pos)))?;
        let mut rng = Rng64::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}
