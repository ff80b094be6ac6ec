use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub(crate) usize);

/// A named trainable tensor.
///
/// A frozen parameter is never handed gradients by [`ParamStore::accumulate`]
/// and never updated by an optimizer.
#[derive(Clone, Debug)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub frozen: bool,
}

#[derive(Clone, Debug)]
struct Buffer<T: Real> {
    name: String,
    value: Tensor<T>,
}

/// Owns every parameter and buffer of a model, addressed by id or name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, Slot>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(TensorError::Usage(format!("duplicate tensor name `{name}`")));
        }
        self.names.insert(name.to_owned(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        let id = self.params.len();
        self.claim(&name, Slot::Param(id))?;
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            frozen: false,
        });
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        let id = self.buffers.len();
        self.claim(&name, Slot::Buffer(id))?;
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(id))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn set_buffer(&mut self, id: BufferId, value: Tensor<T>) {
        assert_eq!(
            self.buffers[id.0].value.shape(),
            value.shape(),
            "buffer `{}` shape changed",
            self.buffers[id.0].name
        );
        self.buffers[id.0].value = value;
    }

    pub fn buffers(&self) -> impl Iterator<Item = (BufferId, &str, &Tensor<T>)> {
        self.buffers
            .iter()
            .enumerate()
            .map(|(i, b)| (BufferId(i), b.name.as_str(), &b.value))
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        match self.names.get(name) {
            Some(Slot::Param(i)) => Some(ParamId(*i)),
            _ => None,
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`;
    /// returns how many matched. Freezing drops any accumulated gradient.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
            if frozen {
                p.grad = None;
            }
            n += 1;
        }
        n
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Number of scalar trainable values (frozen included).
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Adds `grad` into the parameter's gradient buffer unless it is frozen.
    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor<T>) {
        let p = &mut self.params[id.0];
        if p.frozen {
            return;
        }
        match &mut p.grad {
            Some(g) => g.add_assign(grad),
            None => p.grad = Some(grad.clone()),
        }
    }

    /// Every parameter and buffer keyed by name, in name order.
    pub fn named_tensors(&self) -> BTreeMap<&str, &Tensor<T>> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .chain(self.buffers.iter().map(|b| (b.name.as_str(), &b.value)))
            .collect()
    }

    /// Overwrites a parameter or buffer by name; the shape must match.
    pub fn load(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let target = match self.names.get(name) {
            Some(Slot::Param(i)) => &mut self.params[*i].value,
            Some(Slot::Buffer(i)) => &mut self.buffers[*i].value,
            None => return Err(TensorError::Usage(format!("unknown tensor `{name}`"))),
        };
        if target.shape() != value.shape() {
            return Err(TensorError::mismatch("load", target.shape(), value.shape()));
        }
        *target = value;
        Ok(())
    }
}
