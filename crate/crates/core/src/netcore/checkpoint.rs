//! Binary checkpoint format (little-endian).
//!
//! ```text
//! magic    "SSCKPT1"                  7 bytes
//! version  u32 = 1
//! header   u32 length + UTF-8 JSON    {"arch": ..., "select": "live" | "shadow"}
//! live     u32 count + records
//! shadow   u32 count + records
//! adam     u64 step, u32 count + first-moment records, u32 count + second-moment records
//! record   u32 name length, name, u32 rank, rank x u32 dims, f32 values
//! ```
//!
//! Optimizer moments are stored for trainable parameters only. Values are
//! written as `f32`; loading widens them back to `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Reader;
use crate::error::{Error, Result};

use super::adam::AdamState;
use super::model::{ArchConfig, Network};
use super::params::{ParamKind, ParamSet, Params, WeightSelect};
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SSCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub params: ParamSet,
    pub adam: AdamState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    select: WeightSelect,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("value {v} exceeds the checkpoint format limit")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len())?;
    for &d in t.shape() {
        put_u32(out, d)?;
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let net = Network::new(&ckpt.arch)?;
    net.layout().check_same_layout(&ckpt.params.live)?;
    net.layout().check_same_layout(&ckpt.params.ema)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        arch: ckpt.arch.clone(),
        select: ckpt.params.select,
    })?;
    put_u32(&mut out, header.len())?;
    out.extend_from_slice(&header);
    for set in [&ckpt.params.live, &ckpt.params.ema] {
        put_u32(&mut out, set.len())?;
        for e in set.entries() {
            put_record(&mut out, &e.name, &e.value)?;
        }
    }
    out.extend_from_slice(&ckpt.adam.step.to_le_bytes());
    let trainable: Vec<usize> = ckpt
        .params
        .live
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == ParamKind::Trainable)
        .map(|(i, _)| i)
        .collect();
    for moments in [&ckpt.adam.m, &ckpt.adam.v] {
        if moments.len() != ckpt.params.live.len() {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        put_u32(&mut out, trainable.len())?;
        for &i in &trainable {
            put_record(&mut out, &ckpt.params.live.entries()[i].name, &moments[i])?;
        }
    }
    Ok(out)
}

fn read_record(r: &mut Reader, expected_name: &str, expected_shape: &[usize]) -> Result<Tensor> {
    let at = r.offset();
    let name_len = r.u32("name length")? as usize;
    let name = r.take(name_len, "parameter name")?;
    if name != expected_name.as_bytes() {
        return Err(Error::format(
            at,
            format!(
                "expected parameter {expected_name:?}, found {:?}",
                String::from_utf8_lossy(name)
            ),
        ));
    }
    let rank_at = r.offset();
    let rank = r.u32("rank")? as usize;
    if rank > MAX_RANK {
        return Err(Error::format(rank_at, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32("dimension")? as usize);
    }
    if dims != expected_shape {
        return Err(Error::format(
            rank_at,
            format!("{expected_name}: shape {dims:?} does not match {expected_shape:?}"),
        ));
    }
    let count: usize = dims.iter().product();
    let data_at = r.offset();
    if r.remaining() / 4 < count {
        return Err(Error::format(data_at, format!("truncated values of {expected_name}")));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = r.f32("value")?;
        if !v.is_finite() {
            return Err(Error::format(data_at, format!("non-finite value in {expected_name}")));
        }
        data.push(v as f64);
    }
    Tensor::new(dims, data)
}

fn read_count(r: &mut Reader, expected: usize, what: &str) -> Result<()> {
    let at = r.offset();
    let n = r.u32(what)? as usize;
    if n != expected {
        return Err(Error::format(
            at,
            format!("{what}: expected {expected} records, found {n}"),
        ));
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(7, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, not an SSCKPT1 checkpoint"));
    }
    let version_at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let header_at = r.offset();
    let header_len = r.u32("header length")? as usize;
    let header_bytes = r.take(header_len, "header")?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(header_at + 4, format!("invalid header: {e}")))?;
    let net = Network::new(&header.arch).map_err(|e| Error::format(header_at + 4, e.to_string()))?;
    let layout = net.layout();

    let read_set = |r: &mut Reader, what: &str| -> Result<Params> {
        read_count(r, layout.len(), what)?;
        let mut params = layout.clone();
        for (i, e) in layout.entries().iter().enumerate() {
            let t = read_record(r, &e.name, e.value.shape())?;
            *params.get_mut(super::params::ParamId(i)) = t;
        }
        Ok(params)
    };
    let live = read_set(&mut r, "live parameters")?;
    let ema = read_set(&mut r, "shadow parameters")?;

    let step = r.u64("optimizer step")?;
    let mut adam = AdamState::new(layout);
    let trainable: Vec<usize> = layout
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == ParamKind::Trainable)
        .map(|(i, _)| i)
        .collect();
    for moments in [&mut adam.m, &mut adam.v] {
        read_count(&mut r, trainable.len(), "optimizer moments")?;
        for &i in &trainable {
            let e = &layout.entries()[i];
            moments[i] = read_record(&mut r, &e.name, e.value.shape())?;
        }
    }
    adam.step = step;
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint {
        arch: header.arch,
        params: ParamSet {
            live,
            ema,
            select: header.select,
        },
        adam,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
