use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{BatchStats, BnMode, Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// A trainable tensor with its accumulated gradient and SGD momentum.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub momentum: Vec<T>,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Owns every parameter and buffer of a model. Layers hold ids into it.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let len = value.len();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
            momentum: vec![T::zero(); len],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Same parameters and buffers in another precision. Gradients and
    /// momentum are reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                    momentum: vec![U::zero(); p.value.len()],
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    value: b.value.cast(),
                })
                .collect(),
        }
    }

    /// Values of every parameter and buffer, keyed by name.
    pub fn named_values(&self) -> Vec<(&str, &Tensor<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .chain(self.buffers.iter().map(|b| (b.name.as_str(), &b.value)))
            .collect()
    }

    /// Overwrite a parameter or buffer by name.
    pub fn set_named(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .map(|p| (&p.name, &mut p.value))
            .chain(self.buffers.iter_mut().map(|b| (&b.name, &mut b.value)))
            .find(|(n, _)| n.as_str() == name);
        match slot {
            Some((_, v)) if v.shape() == value.shape() => {
                *v = value;
                Ok(())
            }
            Some((_, v)) => Err(TensorError::Checkpoint(format!(
                "`{name}` has shape {:?}, checkpoint has {:?}",
                v.shape(),
                value.shape()
            ))),
            None => Err(TensorError::Checkpoint(format!("unknown tensor `{name}`"))),
        }
    }
}

/// One forward pass: a tape bound to a parameter store.
pub struct Session<'a, T: Scalar> {
    pub tape: &'a Tape<T>,
    pub store: &'a mut ParamStore<T>,
    pub train: bool,
    bound: HashMap<ParamId, Var>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(tape: &'a Tape<T>, store: &'a mut ParamStore<T>, train: bool) -> Self {
        Self {
            tape,
            store,
            train,
            bound: HashMap::new(),
        }
    }

    /// Use `var` in place of the stored value of `id` (gradient checks feed
    /// parameters as explicit tape inputs).
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound.insert(id, var);
    }

    /// Tape handle for a parameter; every use within a session shares one leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.tape.leaf(self.store.param(id).value.clone());
        self.bound.insert(id, v);
        v
    }

    /// Batch normalization using running statistics `(mean, var)` in eval
    /// mode, batch statistics (and a running-stat update) in train mode.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running: (BufferId, BufferId),
    ) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let eps = T::from_f64(BN_EPS);
        if self.train {
            let (y, stats) = self.tape.batchnorm2d(x, g, b, BnMode::Train { eps })?;
            if let Some(BatchStats { mean, var }) = stats {
                let m = T::from_f64(BN_MOMENTUM);
                for (id, batch) in [(running.0, mean), (running.1, var)] {
                    let buf = self.store.buffer_mut(id).value.data_mut();
                    for (r, s) in buf.iter_mut().zip(batch) {
                        *r = (T::one() - m) * *r + m * s;
                    }
                }
            }
            Ok(y)
        } else {
            let mean = self.store.buffer(running.0).value.data().to_vec();
            let var = self.store.buffer(running.1).value.data().to_vec();
            let (y, _) = self.tape.batchnorm2d(
                x,
                g,
                b,
                BnMode::Eval {
                    mean: &mean,
                    var: &var,
                    eps,
                },
            )?;
            Ok(y)
        }
    }

    /// Add this pass's leaf gradients into the stored parameters.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (&id, &var) in &self.bound {
            if let Some(g) = grads.get(var) {
                let p = self.store.param_mut(id);
                match &mut p.grad {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                    None => p.grad = Some(g.to_vec()),
                }
            }
        }
    }

    /// The leaves created for parameters so far.
    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&p, &v)| (p, v))
    }
}
