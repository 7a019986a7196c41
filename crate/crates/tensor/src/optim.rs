use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
        }
    }
}

/// Momentum SGD with L2 weight decay folded into the gradient:
/// `v ← m·v + (g + wd·w)`, `w ← w − lr·v`. Gradients are cleared afterwards.
///
/// Every parameter must carry a gradient.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, cfg: &SgdConfig) -> Result<()> {
    if let Some(p) = store.params().iter().find(|p| p.grad.is_none()) {
        return Err(TensorError::MissingGrad(p.name.clone()));
    }
    let (lr, m, wd) = (
        T::from_f64(cfg.lr),
        T::from_f64(cfg.momentum),
        T::from_f64(cfg.weight_decay),
    );
    for p in store.params_mut() {
        let grad = p.grad.take().expect("checked above");
        for ((w, v), g) in p.value.data_mut().iter_mut().zip(&mut p.momentum).zip(grad) {
            *v = m * *v + (g + wd * *w);
            *w -= lr * *v;
        }
    }
    Ok(())
}
