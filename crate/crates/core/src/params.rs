//! Named parameter blocks with paired gradient buffers, plus checkpoints.
//!
//! A checkpoint is two files: `<stem>.bin` holds every block as a `GTD1`
//! record, ordered by block name, and `<stem>.manifest` lists one block per
//! line as `name<TAB>d1xd2x...<TAB>byte_offset`.

use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::io::{decode_tensor, encode_tensor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Grid,
    Network,
    Affine,
}

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

pub type BlockId = usize;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        kind: ParamKind,
        value: Vec<f64>,
    ) -> Result<BlockId> {
        if self.find(name).is_some() {
            return invalid(format!("duplicate parameter block '{name}'"));
        }
        let len: usize = shape.iter().product();
        if shape.is_empty() || len == 0 || value.len() != len {
            return invalid(format!(
                "block '{name}': {} values for shape {shape:?}",
                value.len()
            ));
        }
        self.blocks.push(ParamBlock {
            name: name.to_string(),
            shape: shape.to_vec(),
            kind,
            grad: vec![0.0; len],
            value,
        });
        Ok(self.blocks.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<BlockId> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn block(&self, id: BlockId) -> &ParamBlock {
        &self.blocks[id]
    }

    pub fn value(&self, id: BlockId) -> &[f64] {
        &self.blocks[id].value
    }

    pub fn value_mut(&mut self, id: BlockId) -> &mut [f64] {
        &mut self.blocks[id].value
    }

    pub fn grad(&self, id: BlockId) -> &[f64] {
        &self.blocks[id].grad
    }

    pub fn grad_mut(&mut self, id: BlockId) -> &mut [f64] {
        &mut self.blocks[id].grad
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn count_of(&self, kind: ParamKind) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.value.len())
            .sum()
    }

    fn sorted(&self) -> Vec<&ParamBlock> {
        let mut v: Vec<&ParamBlock> = self.blocks.iter().collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }

    /// Writes `<stem>.bin` and `<stem>.manifest` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut bin = Vec::new();
        let mut manifest = String::new();
        for b in self.sorted() {
            let t = Tensor::from_vec(&b.shape, b.value.clone())?;
            let shape: Vec<String> = b.shape.iter().map(|n| n.to_string()).collect();
            manifest.push_str(&format!("{}\t{}\t{}\n", b.name, shape.join("x"), bin.len()));
            bin.extend_from_slice(&encode_tensor(&t));
        }
        fs::write(dir.join(format!("{stem}.bin")), bin)?;
        fs::write(dir.join(format!("{stem}.manifest")), manifest)?;
        Ok(())
    }

    /// Loads values saved by [`ParamStore::save`] into the blocks of this
    /// store. Every block must be present with a matching shape.
    pub fn load(&mut self, dir: &Path, stem: &str) -> Result<()> {
        let bin = fs::read(dir.join(format!("{stem}.bin")))?;
        let manifest = fs::read_to_string(dir.join(format!("{stem}.manifest")))?;
        let mut entries = Vec::new();
        for line in manifest.lines().filter(|l| !l.is_empty()) {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("bad manifest line '{line}'")));
            }
            let offset: usize = parts[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad offset in '{line}'")))?;
            entries.push((parts[0].to_string(), offset));
        }
        if entries.len() != self.blocks.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} blocks, store has {}",
                entries.len(),
                self.blocks.len()
            )));
        }
        for (k, (name, offset)) in entries.iter().enumerate() {
            let end = entries.get(k + 1).map_or(bin.len(), |e| e.1);
            if *offset > end || end > bin.len() {
                return Err(Error::Format(format!("bad offsets for block '{name}'")));
            }
            let t = decode_tensor(&bin[*offset..end])?;
            let id = self
                .find(name)
                .ok_or_else(|| Error::Format(format!("unknown block '{name}'")))?;
            if t.shape() != self.blocks[id].shape.as_slice() {
                return Err(Error::Format(format!("shape mismatch for block '{name}'")));
            }
            self.blocks[id].value = t.into_data();
        }
        Ok(())
    }
}
