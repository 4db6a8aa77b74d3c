use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::real::Real;

/// Which part of the model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Extractor,
    Head1,
    Head2,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Extractor, Group::Head1, Group::Head2];

    pub fn tag(self) -> u8 {
        match self {
            Group::Extractor => 0,
            Group::Head1 => 1,
            Group::Head2 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

/// Trainable weights versus running statistics of batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Param,
    Buffer,
}

/// Subset of groups touched by an update or a backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct GroupSet([bool; 3]);

impl GroupSet {
    pub fn all() -> Self {
        Self([true; 3])
    }

    pub fn heads() -> Self {
        Self([false, true, true])
    }

    pub fn only(g: Group) -> Self {
        let mut s = Self::default();
        s.0[g.tag() as usize] = true;
        s
    }

    pub fn contains(&self, g: Group) -> bool {
        self.0[g.tag() as usize]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }
}

impl FromIterator<Group> for GroupSet {
    fn from_iter<I: IntoIterator<Item = Group>>(iter: I) -> Self {
        let mut s = Self::default();
        for g in iter {
            s.0[g.tag() as usize] = true;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub group: Group,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

impl<T> Entry<T> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All model state, partitioned into extractor and the two heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    config: NetworkConfig,
    entries: Vec<Entry<T>>,
}

impl<T: Real> ParameterStore<T> {
    /// Assembles a store, checking name uniqueness, value lengths and head congruence.
    pub fn from_entries(config: NetworkConfig, entries: Vec<Entry<T>>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for e in &entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter name {}", e.name)));
            }
            if e.values.len() != e.numel() {
                return Err(Error::Shape(format!(
                    "{}: shape {:?} needs {} values, got {}",
                    e.name,
                    e.shape,
                    e.numel(),
                    e.values.len()
                )));
            }
        }
        let store = Self { config, entries };
        store.head_pairs()?;
        Ok(store)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self, idx: usize) -> &[T] {
        &self.entries[idx].values
    }

    /// Mutable access to values only; shapes and partition are fixed.
    pub fn values_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.entries[idx].values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Number of trainable scalars in `group`.
    pub fn param_count(&self, group: Group) -> usize {
        self.entries.iter().filter(|e| e.group == group && e.kind == EntryKind::Param).map(|e| e.numel()).sum()
    }

    pub fn total_param_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param).map(|e| e.numel()).sum()
    }

    /// Indices of trainable entries in `group`, in store order.
    pub fn group_params(&self, group: Group) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.group == group && e.kind == EntryKind::Param)
            .map(|(i, _)| i)
            .collect()
    }

    /// Layer-wise pairing of head-1 and head-2 parameter tensors.
    pub fn head_pairs(&self) -> Result<Vec<(usize, usize)>> {
        let h1 = self.group_params(Group::Head1);
        let h2 = self.group_params(Group::Head2);
        if h1.len() != h2.len() {
            return Err(Error::Pairing(format!("head1 has {} tensors, head2 has {}", h1.len(), h2.len())));
        }
        for (&a, &b) in h1.iter().zip(&h2) {
            if self.entries[a].shape != self.entries[b].shape {
                return Err(Error::Pairing(format!(
                    "{} {:?} vs {} {:?}",
                    self.entries[a].name, self.entries[a].shape, self.entries[b].name, self.entries[b].shape
                )));
            }
        }
        Ok(h1.into_iter().zip(h2).collect())
    }

    /// Flattened parameter tensors of one head, in pairing order.
    pub fn head_tensors(&self, head: Group) -> Vec<&[T]> {
        self.group_params(head).into_iter().map(|i| self.values(i)).collect()
    }

    /// Overwrites the values of head `dst` with those of head `src`.
    pub fn copy_head(&mut self, src: Group, dst: Group) -> Result<()> {
        let s = self.group_params(src);
        let d = self.group_params(dst);
        if s.len() != d.len() {
            return Err(Error::Pairing("heads have different tensor counts".into()));
        }
        for (a, b) in s.into_iter().zip(d) {
            if self.entries[a].shape != self.entries[b].shape {
                return Err(Error::Pairing(format!("{} vs {}", self.entries[a].name, self.entries[b].name)));
            }
            let v = self.entries[a].values.clone();
            self.entries[b].values = v;
        }
        Ok(())
    }

    /// Converts every value to another scalar type.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            config: self.config.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    group: e.group,
                    kind: e.kind,
                    shape: e.shape.clone(),
                    values: e.values.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers aligned entry-by-entry with a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ParameterStore<T>) -> Self {
        Self { values: params.entries().iter().map(|e| vec![T::zero(); e.values.len()]).collect() }
    }

    /// Fails unless every buffer matches the corresponding entry length.
    pub fn check_aligned(&self, params: &ParameterStore<T>) -> Result<()> {
        if self.values.len() != params.len() {
            return Err(Error::Alignment(format!(
                "{} gradient buffers for {} parameters",
                self.values.len(),
                params.len()
            )));
        }
        for (g, e) in self.values.iter().zip(params.entries()) {
            if g.len() != e.values.len() {
                return Err(Error::Alignment(format!(
                    "{}: gradient has {} values, parameter has {}",
                    e.name,
                    g.len(),
                    e.values.len()
                )));
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in self.values.iter_mut().flatten() {
            *v = *v * s;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }
}
