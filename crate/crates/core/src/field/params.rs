//! Named learnable tensors and matching gradient buffers.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Ordered collection of named parameter tensors. Insertion order is the
/// canonical order for checkpoints and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param {name}: shape does not match data");
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry { name, shape, data });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Copy values from `other` for every tensor with identical name and shape.
    /// Fails if any tensor of `self` is missing or has another shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in &mut self.entries {
            let id = other
                .find(&e.name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {}", e.name)))?;
            if other.shape(id) != e.shape.as_slice() {
                return Err(Error::Validation(format!(
                    "tensor {}: shape {:?} in checkpoint, expected {:?}",
                    e.name,
                    other.shape(id),
                    e.shape
                )));
            }
            e.data.copy_from_slice(other.get(id));
        }
        Ok(())
    }

    /// Round every value through 32-bit storage.
    pub fn quantize_f32(&mut self) {
        for e in &mut self.entries {
            e.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { data: store.entries.iter().map(|e| vec![0.0; e.data.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}
