//! Named parameter collections.
//!
//! A [`ParamSet`] is an ordered list of `(name, tensor)` pairs with unique
//! names. Order is part of the contract: snapshots, flattening, gradients and
//! the binary container all preserve it.
//!
//! ## Binary container
//!
//! `to_bytes`/`from_bytes` implement a little-endian container:
//!
//! ```text
//! magic     8 bytes   "MSDCKPT1"
//! count     u32       number of entries
//! entry*:
//!   name_len u32
//!   name     name_len bytes (UTF-8)
//!   rank     u32
//!   extents  rank x u64
//!   values   product(extents) x f64 (IEEE-754 bits)
//! ```
//!
//! Round trips are byte-exact.

use crate::autodiff::graph::Graph;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSDCKPT1";

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: String, value: Tensor) -> Result<()> {
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_dim(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_tracked(&self) -> bool {
        self.entries.iter().any(|(_, t)| t.is_tracked())
    }

    /// Untracked value copy, safe to share across workers.
    pub fn snapshot(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.detach()))
                .collect(),
        }
    }

    /// Re-registers every entry as a tracked leaf on `graph`.
    pub fn tracked_in(&self, graph: &Graph) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), graph.leaf(t)))
                .collect(),
        }
    }

    /// Applies `f` to same-named entry pairs, preserving order.
    pub fn zip_map(
        &self,
        other: &ParamSet,
        mut f: impl FnMut(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<ParamSet> {
        if self.len() != other.len() {
            return Err(Error::Contract(format!(
                "parameter sets differ in length: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let mut out = ParamSet::new();
        for ((na, a), (nb, b)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb {
                return Err(Error::Contract(format!(
                    "parameter name mismatch: {na:?} vs {nb:?}"
                )));
            }
            if a.shape() != b.shape() {
                return Err(Error::invalid_shape("zip_map", a.shape(), b.shape()));
            }
            out.push(na.clone(), f(a, b)?)?;
        }
        Ok(out)
    }

    /// Value-level `self + factor * other` on untracked copies.
    pub fn add_scaled(&self, other: &ParamSet, factor: f64) -> Result<ParamSet> {
        self.zip_map(other, |a, b| {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| x + factor * y)
                .collect();
            Tensor::from_vec(a.shape().to_vec(), data)
        })
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn map_values(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (n, t) in &self.entries {
            out.push(n.clone(), f(t)?)?;
        }
        Ok(out)
    }

    pub fn map_values_named(
        &self,
        mut f: impl FnMut(&str, &Tensor) -> Result<Tensor>,
    ) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (n, t) in &self.entries {
            out.push(n.clone(), f(n, t)?)?;
        }
        Ok(out)
    }

    /// Concatenates all values in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a set with this set's names and shapes from a flat vector.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.total_dim() {
            return Err(Error::Contract(format!(
                "unflatten: expected {} values, got {}",
                self.total_dim(),
                flat.len()
            )));
        }
        let mut out = ParamSet::new();
        let mut offset = 0;
        for (n, t) in &self.entries {
            let next = offset + t.numel();
            out.push(
                n.clone(),
                Tensor::from_vec(t.shape().to_vec(), flat[offset..next].to_vec())?,
            )?;
            offset = next;
        }
        Ok(out)
    }

    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((na, a), (nb, b))| na == nb && a.bitwise_eq(b))
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        let mut max = 0.0_f64;
        let diff = self.zip_map(other, |a, b| {
            for (x, y) in a.data().iter().zip(b.data()) {
                max = max.max((x - y).abs());
            }
            Ok(Tensor::scalar(0.0))
        });
        diff.map(|_| max)
    }

    // ── Binary container ─────────────────────────────────────────────

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut cursor = Cursor { bytes, offset: 0 };
        let magic = cursor.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::CorruptCheckpoint {
                offset: 0,
                msg: format!("bad magic {magic:?}"),
            });
        }
        let count = cursor.u32("entry count")?;
        let mut out = ParamSet::new();
        for _ in 0..count {
            let name_len = cursor.u32("name length")? as usize;
            let start = cursor.offset;
            let name_bytes = cursor.take(name_len, "name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|e| Error::CorruptCheckpoint {
                    offset: start,
                    msg: format!("name is not UTF-8: {e}"),
                })?
                .to_string();
            let rank = cursor.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cursor.u64("extent")? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(
                    cursor.take(8, "value")?.try_into().unwrap(),
                ));
            }
            out.push(name, Tensor::from_vec(shape, data)?)
                .map_err(|e| Error::CorruptCheckpoint {
                    offset: start,
                    msg: e.to_string(),
                })?;
        }
        if cursor.offset != bytes.len() {
            return Err(Error::CorruptCheckpoint {
                offset: cursor.offset,
                msg: format!("{} trailing bytes", bytes.len() - cursor.offset),
            });
        }
        Ok(out)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint {
                offset: self.offset,
                msg: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
