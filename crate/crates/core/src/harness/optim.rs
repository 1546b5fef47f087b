use ndarray::Zip;

use crate::encoder::{EncoderParams, Gradients, Layer};

/// Adaptive-moment gradient descent with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

fn zeros_like(layers: &[Layer]) -> Vec<Layer> {
    layers
        .iter()
        .map(|l| Layer {
            weights: l.weights.mapv(|_| 0.0),
            bias: l.bias.mapv(|_| 0.0),
        })
        .collect()
}

impl Adam {
    pub fn new(params: &EncoderParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros_like(params.layers()),
            v: zeros_like(params.layers()),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &Gradients) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step = self.lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let eps_hat = eps * (1.0 - b2.powi(self.t)).sqrt();
        let layers = params.layers_mut().iter_mut();
        for (((p, g), m), v) in layers.zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps_hat);
            };
            Zip::from(&mut p.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}
