use std::collections::HashMap;

use super::{ParamGroup, ParamSet, Tensor};
use crate::{Error, Result};

/// SGD with Nesterov momentum:
///
/// ```text
/// v <- momentum * v + g
/// p <- p - lr * (g + momentum * v)
/// ```
///
/// Velocity buffers live in the [`ParamSet`] and persist across steps. A
/// group with learning rate exactly zero is frozen.
#[derive(Clone, Debug)]
pub struct SgdNesterov {
    lr: HashMap<ParamGroup, f64>,
    momentum: f64,
}

impl SgdNesterov {
    pub fn new(lr_encoder: f64, lr_head: f64, momentum: f64) -> Result<Self> {
        for (what, lr) in [("encoder", lr_encoder), ("head", lr_head)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{what} learning rate must be >= 0, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        let lr = HashMap::from([(ParamGroup::Encoder, lr_encoder), (ParamGroup::Head, lr_head)]);
        Ok(Self { lr, momentum })
    }

    pub fn step(&self, params: &mut ParamSet) {
        let mu = self.momentum;
        for (_, p) in params.iter_mut() {
            let lr = self.lr[&p.group];
            if lr == 0.0 {
                continue;
            }
            let v = p
                .velocity
                .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for ((w, g), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(v.data_mut().iter_mut())
            {
                *v = mu * *v + g;
                *w -= lr * (g + mu * *v);
            }
        }
        params.advance_step();
    }
}

/// One Nesterov step with a single learning rate for every parameter.
pub fn sgd_nesterov_step(params: &mut ParamSet, lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    SgdNesterov::new(lr, lr, momentum)?.step(params);
    Ok(())
}
