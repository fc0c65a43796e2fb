use crate::nn::{Grads, ParamSet, Tensor};

/// Heavy-ball SGD with the L2 penalty folded into the gradient:
/// `v = momentum * v + (g + weight_decay * w)`, `w -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &ParamSet, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads.tensors()) {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            for ((w, v), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = self.momentum * *v + g + decay * *w;
                *w -= lr * *v;
            }
        }
    }
}
