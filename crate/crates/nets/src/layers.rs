//! Parameterised building blocks. Layers hold ids into a `ParamStore`, so the
//! same layout runs in f32 for training and f64 for gradient checks.

use agsp_tensor::init::{kaiming_uniform, substream};
use agsp_tensor::{BufferId, ConvGeom, ParamId, ParamStore, Scalar, Session, Tensor, Var};

use crate::Result;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv2d {
    /// Kaiming-uniform weights from the `name` sub-stream of `seed`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeom,
        bias: bool,
        seed: u64,
    ) -> Self {
        let mut rng = substream(seed, name);
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(&[cout, cin, k, k], &mut rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, geom }
    }

    /// Same-size 3×3 convolution with the given dilation.
    pub fn same3<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, dilation: usize, bias: bool, seed: u64) -> Self {
        Self::new(store, name, cin, cout, 3, ConvGeom::new(1, dilation, dilation), bias, seed)
    }

    pub fn pointwise<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, seed: u64) -> Self {
        Self::new(store, name, cin, cout, 1, ConvGeom::new(1, 0, 1), true, seed)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        Ok(s.tape.conv2d(x, w, b, self.geom)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[c], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[c], T::one())),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        Ok(s.batchnorm(x, self.gamma, self.beta, (self.running_mean, self.running_var))?)
    }
}

/// conv → batchnorm → ReLU
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, dilation: usize, seed: u64) -> Self {
        Self {
            conv: Conv2d::same3(store, &format!("{name}.conv"), cin, cout, dilation, false, seed),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        Ok(s.tape.relu(y)?)
    }
}

pub(crate) fn upsample<T: Scalar>(s: &Session<T>, x: Var, factor: usize) -> Result<Var> {
    if factor == 1 {
        Ok(x)
    } else {
        Ok(s.tape.upsample_bilinear(x, factor)?)
    }
}

pub(crate) fn add_all<T: Scalar>(s: &Session<T>, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = s.tape.add(acc, x)?;
    }
    Ok(acc)
}

pub(crate) fn concat_all<T: Scalar>(s: &Session<T>, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = s.tape.concat_channels(acc, x)?;
    }
    Ok(acc)
}
