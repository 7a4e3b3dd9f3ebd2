//! Flat parameter storage.
//!
//! Every learnable array lives in one contiguous `Vec<f64>`; named entries
//! record `(offset, rows, cols)`. The flat layout keeps the optimizer and the
//! finite-difference checker trivial: both just walk one slice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Fan-in used for the uniform initialization bound.
    pub fan_in: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-filled `rows x cols` array.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate param {name}");
        let offset = self.data.len();
        self.entries.push(ParamEntry {
            name,
            rows,
            cols,
            offset,
            fan_in,
        });
        self.data.resize(offset + rows * cols, 0.0);
        ParamId(self.entries.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, one seeded stream for the whole set.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &self.entries {
            let bound = 1.0 / (e.fan_in.max(1) as f64).sqrt();
            for v in &mut self.data[e.offset..e.offset + e.len()] {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.data[e.offset..e.offset + e.len()]
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Overwrites a named array, checking its shape.
    pub fn set_named(&mut self, name: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::validation(format!("unknown parameter array `{name}`")))?;
        let e = self.entry(id);
        if e.rows != rows || e.cols != cols || values.len() != rows * cols {
            return Err(Error::validation(format!(
                "parameter `{name}` has shape {}x{}, got {rows}x{cols} with {} values",
                e.rows,
                e.cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter `{name}` has non-finite entries")));
        }
        self.get_mut(id).copy_from_slice(values);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
