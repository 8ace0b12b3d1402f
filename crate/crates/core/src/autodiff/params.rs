use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {}", name)));
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::invalid(format!("unknown parameter {}", name)))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.index_of(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.index_of(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn total_size(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    /// Records every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        self.bind_with(g, |_| true)
    }

    /// Records tensors on `g`; those for which `trainable` is false become
    /// constants and receive no gradient.
    pub fn bind_with(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Result<Bound> {
        let mut vars = Vec::with_capacity(self.len());
        for (name, t) in self.iter() {
            vars.push(if trainable(name) { g.param(t.clone())? } else { g.constant(t.clone())? });
        }
        Ok(Bound { vars, index: self.index.clone() })
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Format("parameter names differ".into()));
        }
        for (n, (a, b)) in self.names.iter().zip(self.tensors.iter().zip(&other.tensors)) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!("parameter {} has shape {:?}, expected {:?}", n, b.shape(), a.shape())));
            }
        }
        Ok(())
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Pairs this store's names with externally created variables, one per
    /// parameter in store order (used for gradient checks of whole models).
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.len() {
            return Err(Error::invalid(format!("{} vars for {} parameters", vars.len(), self.len())));
        }
        Ok(Bound { vars: vars.to_vec(), index: self.index.clone() })
    }
}

/// Graph variables for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index.get(name).map(|&i| self.vars[i]).ok_or_else(|| Error::invalid(format!("unknown parameter {}", name)))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Adds this graph's gradients into `acc` (one tensor per parameter).
    pub fn accumulate_grads(&self, g: &Graph, acc: &mut [Tensor]) {
        for (v, a) in self.vars.iter().zip(acc.iter_mut()) {
            if let Some(gr) = g.grad(*v) {
                a.add_assign(gr);
            }
        }
    }
}

/// Parameters plus a model kind tag and free-form metadata (typically the
/// serialized model configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: String,
    pub params: ParamStore,
}

const MAGIC: &[u8; 8] = b"XCLONECK";
const VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes a checkpoint: magic, version, kind, metadata, a directory of
/// (name, shape, offset) entries, then all values as little-endian f64.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + ck.params.total_size() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &ck.kind);
    put_str(&mut out, &ck.meta);
    out.extend_from_slice(&(ck.params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in ck.params.iter() {
        put_str(&mut out, name);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += t.len() as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for (_, t) in ck.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        core::str::from_utf8(bytes).map(|s| s.to_string()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
    }
    let kind = r.string()?;
    let meta = r.string()?;
    let count = r.u32()? as usize;
    let mut dir = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()? as usize;
        dir.push((name, shape, offset));
    }
    let total = r.u64()? as usize;
    let data = r.take(total.checked_mul(8).ok_or_else(|| Error::Format("checkpoint size overflow".into()))?)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint data".into()));
    }
    let mut params = ParamStore::new();
    for (name, shape, offset) in dir {
        let n: usize = shape.iter().product();
        if offset + n > total {
            return Err(Error::Format(format!("tensor {} exceeds data section", name)));
        }
        let vals = data[offset * 8..(offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, vals).map_err(|e| Error::Format(format!("tensor {}: {}", name, e)))?;
        params.insert(&name, t).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(Checkpoint { kind, meta, params })
}
