use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Index of a parameter inside a [`Params`] collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Batch-norm running statistics: never touched by the optimizer, but
    /// averaged by EMA and saved in checkpoints.
    RunningStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Ordered, named collection of network tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].value)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Total number of scalars, optionally restricted to trainable entries.
    pub fn scalar_count(&self, trainable_only: bool) -> usize {
        self.entries
            .iter()
            .filter(|e| !trainable_only || e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Fails unless `other` has the same names, kinds and shapes in order.
    pub fn check_same_layout(&self, other: &Params) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(format!(
                "parameter counts differ: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.kind != b.kind || a.value.shape() != b.value.shape() {
                return Err(Error::shape(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Rounds every value to `f32` precision.
    pub fn quantize_f32(&mut self) {
        for e in &mut self.entries {
            e.value.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }

    /// Copies every value from `other`, which must share the layout.
    pub fn copy_from(&mut self, other: &Params) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.data_mut().copy_from_slice(b.value.data());
        }
    }
}

/// Which copy of the weights inference should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSelect {
    Live,
    Shadow,
}

/// Live parameters and their exponential-moving-average shadow.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub live: Params,
    pub ema: Params,
    pub select: WeightSelect,
}

impl ParamSet {
    /// Starts the shadow as an exact copy of `live`.
    pub fn new(live: Params) -> Self {
        ParamSet {
            ema: live.clone(),
            live,
            select: WeightSelect::Live,
        }
    }

    /// The weights used for evaluation.
    pub fn selected(&self) -> &Params {
        match self.select {
            WeightSelect::Live => &self.live,
            WeightSelect::Shadow => &self.ema,
        }
    }
}

/// Gradient buffers aligned with a [`Params`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &Params) -> Self {
        Gradients(
            params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
        )
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|t| t.all_finite())
    }
}

/// `shadow <- gamma * shadow + (1 - gamma) * live`, running statistics included.
pub fn ema_update(shadow: &mut Params, live: &Params, gamma: f64) -> Result<()> {
    shadow.check_same_layout(live)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("EMA decay must lie in [0, 1], got {gamma}")));
    }
    for (s, l) in shadow.entries.iter_mut().zip(&live.entries) {
        for (a, &b) in s.value.data_mut().iter_mut().zip(l.value.data()) {
            *a = gamma * *a + (1.0 - gamma) * b;
        }
    }
    Ok(())
}
