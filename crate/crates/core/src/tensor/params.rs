//! Named parameters with gradient buffers, and the `VHMW` checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! | field        | type           |
//! |--------------|----------------|
//! | magic        | `b"VHMW"`      |
//! | version      | u16 (= 1)      |
//! | count        | u32            |
//!
//! then `count` records of: name length u16, UTF-8 name, rank u8, `rank`
//! dims as u32, and `product(dims)` f32 values.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Real;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"VHMW";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub const TRAINABLE: [ParamKind; 4] = [
        ParamKind::Weight,
        ParamKind::Bias,
        ParamKind::BnScale,
        ParamKind::BnShift,
    ];

    /// Running statistics are state, not learnable parameters.
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::BnScale => "bn_scale",
            ParamKind::BnShift => "bn_shift",
            ParamKind::RunningMean => "running_mean",
            ParamKind::RunningVar => "running_var",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

/// Insertion-ordered registry of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        kind: ParamKind,
        dims: &[usize],
        value: Vec<T>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        if dims.iter().product::<usize>() != value.len() {
            return Err(Error::invalid(format!("parameter {name}: value count does not match dims")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            kind,
            dims: dims.to_vec(),
            grad: vec![T::zero(); value.len()],
            value,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[T]) {
        for (a, &b) in self.params[id.0].grad.iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.is_trainable())
            .map(|p| p.value.len())
            .sum()
    }

    /// ‖θ‖² over trainable parameters, accumulated in f64.
    pub fn l2_sq(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind.is_trainable())
            .flat_map(|p| p.value.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    dims: p.dims.clone(),
                    value: p.value.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    grad: p.grad.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        self.params
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                dims: p.dims.clone(),
                values: p.value.iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect()
    }

    /// Overwrites values from checkpoint entries. Every registered
    /// parameter must be present with matching dims.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        let lookup: HashMap<&str, &CheckpointEntry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
        if lookup.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} parameters, model has {}",
                lookup.len(),
                self.params.len()
            )));
        }
        for p in &self.params {
            let e = lookup
                .get(p.name.as_str())
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter {}", p.name)))?;
            if e.dims != p.dims {
                return Err(Error::invalid(format!(
                    "parameter {}: checkpoint dims {:?}, model dims {:?}",
                    p.name, e.dims, p.dims
                )));
            }
        }
        for p in &mut self.params {
            let e = lookup[p.name.as_str()];
            for (v, &s) in p.value.iter_mut().zip(&e.values) {
                *v = T::from_f64(s as f64);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode_checkpoint(entries: &[CheckpointEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::invalid("too many parameters"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let nlen = u16::try_from(name.len()).map_err(|_| Error::invalid("parameter name too long"))?;
        let rank = u8::try_from(e.dims.len()).map_err(|_| Error::invalid("parameter rank too large"))?;
        if e.dims.iter().product::<usize>() != e.values.len() {
            return Err(Error::invalid(format!("parameter {}: value count does not match dims", e.name)));
        }
        out.extend_from_slice(&nlen.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &e.dims {
            let d = u32::try_from(d).map_err(|_| Error::invalid("dimension too large"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let nlen = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|e| Error::malformed("checkpoint", format!("parameter name: {e}")))?
            .to_owned();
        let rank = c.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::malformed("checkpoint", "dimension overflow"))?;
        let bytes = c.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry { name, dims, values });
    }
    if c.pos != buf.len() {
        return Err(Error::malformed("checkpoint", "trailing bytes"));
    }
    Ok(entries)
}

pub fn write_checkpoint(path: impl AsRef<Path>, entries: &[CheckpointEntry]) -> Result<()> {
    let bytes = encode_checkpoint(entries)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(Error::at(path))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<CheckpointEntry>> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(Error::at(path))?)
}
