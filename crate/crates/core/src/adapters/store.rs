use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use tch::{Device, Tensor};

use crate::error::{Error, Result};

/// Which part of a model a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// Convolution weights of the detector trunk.
    Core,
    /// Projection matrices over the trunk's output channels.
    Adapters,
    /// Batch-norm affine parameters and running statistics.
    Norm,
    /// Final features → heatmaps convolution.
    Head,
    Generator,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Core => "core",
            Group::Adapters => "adapters",
            Group::Norm => "norm",
            Group::Head => "head",
            Group::Generator => "generator",
        }
    }

    pub fn is_detector(self) -> bool {
        self != Group::Generator
    }
}

#[derive(Debug)]
pub struct Param {
    pub tensor: Tensor,
    pub group: Group,
    pub trainable: bool,
    /// Running statistics and other state that is not a learnable parameter.
    pub buffer: bool,
}

/// Named tensors in construction (topological) order.
#[derive(Debug)]
pub struct ParamStore {
    device: Device,
    entries: Vec<(String, Param)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(device: Device) -> Self {
        Self {
            device,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn device(&self) -> Device {
        self.device
    }

    /// Registers `tensor` (moved to the store's device) and returns a handle sharing its storage.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        group: Group,
        trainable: bool,
        buffer: bool,
    ) -> Result<Tensor> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Consistency(format!("tensor `{name}` registered twice")));
        }
        let tensor = tensor.to_device(self.device).detach().set_requires_grad(trainable);
        let handle = tensor.shallow_clone();
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((
            name,
            Param {
                tensor,
                group,
                trainable,
                buffer,
            },
        ));
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Trainable tensors, in order.
    pub fn trainable(&self) -> Vec<(String, Tensor)> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, p)| (n.to_string(), p.tensor.shallow_clone()))
            .collect()
    }

    /// Number of scalar entries among non-buffer tensors matching `pred`.
    pub fn numel(&self, pred: impl Fn(&Param) -> bool) -> usize {
        self.iter()
            .filter(|(_, p)| !p.buffer && pred(p))
            .map(|(_, p)| p.tensor.numel())
            .sum()
    }

    /// Deep copies of every tensor in `group`.
    pub fn snapshot(&self, group: Group) -> Vec<(String, Tensor)> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(n, p)| (n.to_string(), p.tensor.detach().copy()))
            .collect()
    }

    /// Overwrites the values of existing tensors in place, leaving `trainable` untouched.
    pub fn copy_in(&self, name: &str, value: &Tensor) -> Result<()> {
        let p = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("model has no tensor `{name}`")))?;
        if p.tensor.size() != value.size() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, checkpoint holds {:?}",
                p.tensor.size(),
                value.size()
            )));
        }
        tch::no_grad(|| {
            p.tensor
                .shallow_clone()
                .copy_(&value.to_device(self.device).to_kind(p.tensor.kind()))
        });
        Ok(())
    }

    /// Copies every tensor of the given groups from `source`; all must be present.
    pub fn load_groups<'a>(
        &self,
        source: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
        groups: &[Group],
    ) -> Result<usize> {
        let source: HashMap<&str, &Tensor> = source.into_iter().collect();
        let mut n = 0;
        for (name, p) in self.iter() {
            if !groups.contains(&p.group) {
                continue;
            }
            let value = source
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{name}`")))?;
            self.copy_in(name, value)?;
            n += 1;
        }
        Ok(n)
    }

    /// Zeroes the accumulated gradients of all trainable tensors.
    pub fn zero_grad(&self) {
        for (_, p) in self.iter().filter(|(_, p)| p.trainable) {
            let mut g = p.tensor.grad();
            if g.defined() {
                let _ = g.detach_().zero_();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Kind;

    #[test]
    fn registration_and_loading() {
        let mut s = ParamStore::new(Device::Cpu);
        let w = s
            .add("a", Tensor::zeros([2, 2], (Kind::Float, Device::Cpu)), Group::Core, false, false)
            .unwrap();
        let _ = s.add("b", Tensor::ones([3], (Kind::Float, Device::Cpu)), Group::Norm, true, false)
            .unwrap();
        let _ = s.add("c", Tensor::ones([3], (Kind::Float, Device::Cpu)), Group::Norm, false, true)
            .unwrap();
        assert!(s
            .add("a", Tensor::zeros([1], (Kind::Float, Device::Cpu)), Group::Core, false, false)
            .is_err());
        assert_eq!(s.numel(|_| true), 7);
        assert_eq!(s.trainable().len(), 1);

        let src = Tensor::full([2, 2], 5.0, (Kind::Float, Device::Cpu));
        s.load_groups([("a", &src)], &[Group::Core]).unwrap();
        // The handle shares storage with the stored tensor.
        assert_eq!(w.double_value(&[1, 1]), 5.0);
        assert!(s.load_groups([("a", &src)], &[Group::Norm]).is_err());
        let wrong = Tensor::zeros([3, 2], (Kind::Float, Device::Cpu));
        assert!(s.copy_in("a", &wrong).is_err());
    }
}
