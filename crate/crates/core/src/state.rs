//! Flat named-array snapshots of learned state, used by checkpoints.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::nn::{Adam, Gradients, Mlp};

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("missing array `{0}`")]
    Missing(String),
    #[error("array `{name}` has {got} values, expected {expected}")]
    Length {
        name: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateDict {
    arrays: BTreeMap<String, Vec<f64>>,
}

impl StateDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.arrays.insert(name.into(), values);
    }

    pub fn get(&self, name: &str) -> Result<&[f64], StateError> {
        self.arrays
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| StateError::Missing(name.to_string()))
    }

    pub fn get_exact(&self, name: &str, len: usize) -> Result<&[f64], StateError> {
        let v = self.get(name)?;
        if v.len() != len {
            return Err(StateError::Length {
                name: name.to_string(),
                expected: len,
                got: v.len(),
            });
        }
        Ok(v)
    }

    pub fn scalar(&self, name: &str) -> Result<f64, StateError> {
        Ok(self.get_exact(name, 1)?[0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.arrays.iter()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn put_mlp(&mut self, prefix: &str, net: &Mlp) {
        for (i, l) in net.layers().iter().enumerate() {
            self.insert(
                format!("{prefix}.{i}.weight"),
                l.weight.iter().copied().collect(),
            );
            self.insert(format!("{prefix}.{i}.bias"), l.bias.to_vec());
        }
    }

    pub fn load_mlp(&self, prefix: &str, net: &mut Mlp) -> Result<(), StateError> {
        for (i, l) in net.layers_mut().iter_mut().enumerate() {
            let w = self.get_exact(&format!("{prefix}.{i}.weight"), l.weight.len())?;
            l.weight =
                Array2::from_shape_vec(l.weight.raw_dim(), w.to_vec()).expect("length checked");
            let b = self.get_exact(&format!("{prefix}.{i}.bias"), l.bias.len())?;
            l.bias = Array1::from(b.to_vec());
        }
        Ok(())
    }

    fn put_grads(&mut self, prefix: &str, g: &Gradients) {
        for (i, (w, b)) in g.layers.iter().enumerate() {
            self.insert(format!("{prefix}.{i}.weight"), w.iter().copied().collect());
            self.insert(format!("{prefix}.{i}.bias"), b.to_vec());
        }
    }

    fn load_grads(&self, prefix: &str, g: &mut Gradients) -> Result<(), StateError> {
        for (i, (w, b)) in g.layers.iter_mut().enumerate() {
            let wv = self.get_exact(&format!("{prefix}.{i}.weight"), w.len())?;
            *w = Array2::from_shape_vec(w.raw_dim(), wv.to_vec()).expect("length checked");
            let bv = self.get_exact(&format!("{prefix}.{i}.bias"), b.len())?;
            *b = Array1::from(bv.to_vec());
        }
        Ok(())
    }

    pub fn put_adam(&mut self, prefix: &str, adam: &Adam) {
        self.insert(format!("{prefix}.t"), vec![adam.t as f64]);
        self.put_grads(&format!("{prefix}.m"), &adam.m);
        self.put_grads(&format!("{prefix}.v"), &adam.v);
    }

    pub fn load_adam(&self, prefix: &str, adam: &mut Adam) -> Result<(), StateError> {
        adam.t = self.scalar(&format!("{prefix}.t"))? as u64;
        self.load_grads(&format!("{prefix}.m"), &mut adam.m)?;
        self.load_grads(&format!("{prefix}.v"), &mut adam.v)
    }
}
