//! Trainable layer wrappers: parameter storage, init, and enumeration.
//!
//! Parameters are leaf tensors with grad tracking. An update installs a new
//! leaf (tensors are immutable); `visit_params` enumerates them in a fixed
//! order shared by the optimizer and the checkpoint format.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{batchnorm2d, conv2d, ConvSpec, Mode};
use crate::error::Result;
use crate::tensor::Tensor;

/// Standard normal via Box-Muller.
pub fn randn(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// He fan-in initialized weight tensor.
pub fn he_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| randn(rng) * std).collect();
    Tensor::new(shape, data, true).expect("init weights are finite")
}

pub struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub spec: ConvSpec,
}

impl Conv2dLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        spec: ConvSpec,
    ) -> Conv2dLayer {
        let fan_in = in_c * kernel * kernel;
        Conv2dLayer {
            weight: he_init(rng, &[out_c, in_c, kernel, kernel], fan_in),
            bias: Tensor::new(&[out_c], vec![0.0; out_c], true).expect("zero bias"),
            spec,
        }
    }

    /// Frozen variant: weights never tracked by the optimizer.
    pub fn new_frozen(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        spec: ConvSpec,
    ) -> Conv2dLayer {
        let l = Conv2dLayer::new(rng, in_c, out_c, kernel, spec);
        Conv2dLayer {
            weight: l.weight.detach(),
            bias: l.bias.detach(),
            spec: l.spec,
        }
    }

    /// `detach_params` runs the conv with gradient flow into the weights cut,
    /// for stop-gradient-w.r.t.-parameters loss terms.
    pub fn forward(&self, x: &Tensor, detach_params: bool) -> Result<Tensor> {
        if detach_params {
            conv2d(x, &self.weight.detach(), Some(&self.bias.detach()), self.spec)
        } else {
            conv2d(x, &self.weight, Some(&self.bias), self.spec)
        }
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub struct BatchNorm2dLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2dLayer {
    pub fn new(channels: usize) -> BatchNorm2dLayer {
        BatchNorm2dLayer {
            gamma: Tensor::new(&[channels], vec![1.0; channels], true).expect("bn gamma"),
            beta: Tensor::new(&[channels], vec![0.0; channels], true).expect("bn beta"),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, detach_params: bool) -> Result<Tensor> {
        if mode == Mode::Train {
            let (mean, var) = crate::conv::channel_stats(x)?;
            for c in 0..mean.len() {
                self.running_mean[c] =
                    (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
                self.running_var[c] =
                    (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c];
            }
        }
        let (g, b) = if detach_params {
            (self.gamma.detach(), self.beta.detach())
        } else {
            (self.gamma.clone(), self.beta.clone())
        };
        batchnorm2d(
            x,
            &g,
            &b,
            &self.running_mean,
            &self.running_var,
            self.eps,
            mode,
        )
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        f(format!("{prefix}.running_mean"), &mut self.running_mean);
        f(format!("{prefix}.running_var"), &mut self.running_var);
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}
