use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GroupId(pub usize);

/// A named set of parameters sharing update controls.
///
/// Frozen groups are never modified by the optimizer. `grad_scale` in
/// `(0, 1]` multiplies gradients before the update.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGroup {
    pub name: String,
    pub frozen: bool,
    pub grad_scale: f64,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<R = f32> {
    pub name: String,
    pub value: Tensor<R>,
    pub group: GroupId,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<R = f32> {
    entries: Vec<ParamEntry<R>>,
    groups: Vec<ParameterGroup>,
    by_name: HashMap<String, ParamId>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            groups: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Returns the group with this name, creating it if needed.
    pub fn group(&mut self, name: &str) -> GroupId {
        if let Some(i) = self.groups.iter().position(|g| g.name == name) {
            return GroupId(i);
        }
        self.groups.push(ParameterGroup {
            name: name.to_string(),
            frozen: false,
            grad_scale: 1.0,
        });
        GroupId(self.groups.len() - 1)
    }

    pub fn find_group(&self, name: &str) -> Option<GroupId> {
        self.groups.iter().position(|g| g.name == name).map(GroupId)
    }

    pub fn group_info(&self, id: GroupId) -> &ParameterGroup {
        &self.groups[id.0]
    }

    pub fn groups(&self) -> &[ParameterGroup] {
        &self.groups
    }

    pub fn set_frozen(&mut self, id: GroupId, frozen: bool) {
        self.groups[id.0].frozen = frozen;
    }

    pub fn set_grad_scale(&mut self, id: GroupId, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::arg(
                "set_grad_scale",
                format!("scale {scale} outside (0, 1]"),
            ));
        }
        self.groups[id.0].grad_scale = scale;
        Ok(())
    }

    pub fn add(&mut self, name: &str, value: Tensor<R>, group: GroupId) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::arg(
                "ParamStore::add",
                format!("duplicate parameter `{name}`"),
            ));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "ParamStore::add",
            });
        }
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            group,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<R> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<R>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Replaces a parameter value, checking the shape.
    pub fn assign(&mut self, name: &str, value: Tensor<R>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let current = &mut self.entries[id.0].value;
        if current.shape() != value.shape() {
            return Err(Error::shape("assign", current.shape(), value.shape()));
        }
        *current = value;
        Ok(())
    }

    /// Converts every tensor to another element type, keeping ids and groups.
    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    group: e.group,
                })
                .collect(),
            groups: self.groups.clone(),
            by_name: self.by_name.clone(),
        }
    }
}
