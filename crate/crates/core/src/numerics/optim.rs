use super::{Mlp, MlpGrads};
use crate::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + g + wd·θ`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: MlpGrads,
}

impl Sgd {
    pub fn new(params: &Mlp, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(learning_rate > 0.0) || weight_decay < 0.0 {
            return Err(Error::Parameter(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Mlp::zeros_like(params),
        })
    }

    pub fn velocity(&self) -> &MlpGrads {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.velocity) {
            return Err(Error::Shape("optimizer buffers do not match parameters".into()));
        }
        for (layer, g) in grads.layers().iter().enumerate() {
            if g.weight.data().iter().chain(&g.bias).any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer,
                    detail: "non-finite gradient passed to optimizer".into(),
                });
            }
        }
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for ((p, v), g) in params
            .params_mut()
            .zip(self.velocity.params_mut())
            .zip(grads.params())
        {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
        Ok(())
    }
}
