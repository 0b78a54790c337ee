//! Named parameter storage and the textual checkpoint format.
//!
//! A checkpoint is one line per parameter:
//! `name<TAB>rows<TAB>cols<TAB>v0 v1 ...`. Values use Rust's shortest
//! round-trip float formatting, so save/load is bit-exact.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const HEADER: &str = "# katgnn parameters v1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<usize> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid parameter name `{name}`")));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(move |i| &mut self.tensors[i])
    }

    pub fn by_id(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Zero tensors shaped like every parameter, in store order.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{HEADER}")?;
        for (name, t) in self.iter() {
            write!(out, "{name}\t{}\t{}\t", t.rows(), t.cols())?;
            for (i, v) in t.data().iter().enumerate() {
                if i > 0 {
                    out.write_all(b" ")?;
                }
                write!(out, "{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut store = ParamStore::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Checkpoint(format!("line {}: {msg}", lineno + 1));
            let mut fields = line.splitn(4, '\t');
            let name = fields.next().ok_or_else(|| bad("missing name"))?;
            let rows: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad row count"))?;
            let cols: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad column count"))?;
            let values = fields.next().unwrap_or("");
            let data = values
                .split_ascii_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            let t = Tensor::from_vec(rows, cols, data).map_err(|_| bad("value count does not match shape"))?;
            store.insert(name, t)?;
        }
        Ok(store)
    }

    /// Replaces every tensor with the one of the same name in `other`,
    /// checking that names and shapes agree.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (mine, theirs) in self.tensors.iter_mut().zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch: {:?} vs {:?}",
                    mine.shape(),
                    theirs.shape()
                )));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }
}
