//! Binary checkpoint streams. A weight section is the magic `TSEW`, a
//! format version, an architecture fingerprint, a tensor count, and then one
//! named record per tensor. Training state appends further sections after
//! the weights; every integer is little-endian.

use std::io::{Read, Write};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"TSEW";
pub const WEIGHT_VERSION: u32 = 1;

/// FNV-1a over a byte stream, 64-bit.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Fnv1a {
        Fnv1a(0xCBF2_9CE4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Fnv1a {
        Fnv1a::new()
    }
}

/// Hash of an ordered (name, shape) list. Values play no part, so two
/// models agree exactly when their architectures line up tensor for tensor.
pub fn fingerprint<E: Element>(entries: &[(String, Tensor<E>)]) -> u64 {
    let mut h = Fnv1a::new();
    for (name, t) in entries {
        h.update(name.as_bytes());
        h.update(&[0]);
        let dims = t.shape().dims();
        h.update(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            h.update(&(d as u32).to_le_bytes());
        }
    }
    h.finish()
}

pub(crate) fn write_u16(w: &mut impl Write, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated stream: {e}")))?;
    Ok(u16::from_le_bytes(buf))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated stream: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated stream: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn write_magic(w: &mut impl Write, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|e| Error::Format(format!("truncated stream: {e}")))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad section magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Writes one named tensor record: name length u16, name bytes, TSR1 tensor.
pub(crate) fn write_named_tensor<E: Element>(
    w: &mut impl Write,
    name: &str,
    t: &Tensor<E>,
) -> Result<()> {
    let bytes = name.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Format(format!("tensor name too long: {name}")));
    }
    write_u16(w, bytes.len() as u16)?;
    w.write_all(bytes)?;
    t.write_tsr1(w)
}

/// Reads the record written by [`write_named_tensor`].
pub(crate) fn read_named_tensor<E: Element>(r: &mut impl Read) -> Result<(String, Tensor<E>)> {
    let len = read_u16(r)? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated tensor name: {e}")))?;
    let name = String::from_utf8(bytes)
        .map_err(|_| Error::Format("tensor name is not valid UTF-8".into()))?;
    let t = Tensor::read_tsr1(r)?;
    Ok((name, t))
}

/// Writes a full weight section for the given state tensors.
pub fn write_weight_section<E: Element>(
    w: &mut impl Write,
    entries: &[(String, Tensor<E>)],
) -> Result<()> {
    write_magic(w, WEIGHT_MAGIC)?;
    write_u32(w, WEIGHT_VERSION)?;
    write_u64(w, fingerprint(entries))?;
    write_u32(w, entries.len() as u32)?;
    for (name, t) in entries {
        write_named_tensor(w, name, t)?;
    }
    Ok(())
}

/// Reads a weight section into the given state tensors, in place. The
/// stored fingerprint must match the fingerprint of `entries`.
pub fn read_weight_section<E: Element>(
    r: &mut impl Read,
    entries: &[(String, Tensor<E>)],
) -> Result<()> {
    expect_magic(r, WEIGHT_MAGIC)?;
    let version = read_u32(r)?;
    if version != WEIGHT_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight section version {version}"
        )));
    }
    let stored = read_u64(r)?;
    let expected = fingerprint(entries);
    if stored != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint fingerprint {stored:#018x} does not match model fingerprint {expected:#018x}"
        )));
    }
    let count = read_u32(r)? as usize;
    if count != entries.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} tensors, model has {}",
            entries.len()
        )));
    }
    for (name, t) in entries {
        let (got_name, got) = read_named_tensor::<E>(r)?;
        if &got_name != name {
            return Err(Error::Checkpoint(format!(
                "tensor record {got_name} arrived where {name} was expected"
            )));
        }
        if got.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {} in the checkpoint, {} in the model",
                got.shape(),
                t.shape()
            )));
        }
        let data = got.to_vec();
        t.with_data_mut(|dst| dst.copy_from_slice(&data));
    }
    Ok(())
}
