//! Adam with bias correction. Moment state is keyed by parameter name so
//! it survives checkpointing; parameter tensors are replaced wholesale on
//! each step (tensors are immutable).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{GradStore, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter the visitor yields. Parameters
    /// without a gradient in the store are left untouched (their moments
    /// do not advance either). Aborts on a non-finite gradient.
    pub fn step(
        &mut self,
        grads: &GradStore,
        visit: impl FnOnce(&mut dyn FnMut(String, &mut Tensor)) -> (),
    ) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let cfg = self.cfg;
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut err: Option<Error> = None;
        visit(&mut |name, p| {
            if err.is_some() {
                return;
            }
            let Some(g) = grads.get(p) else { return };
            if g.iter().any(|x| !x.is_finite()) {
                err = Some(Error::NonFinite("adam gradient"));
                return;
            }
            let ms = m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let vs = v.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            let mut data = p.data().to_vec();
            for i in 0..g.len() {
                ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * g[i];
                vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
            match Tensor::new(p.shape(), data, true) {
                Ok(t2) => *p = t2,
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Moment vectors plus the step counter, for checkpointing. The
    /// counter travels as a single-element vector under the "t" key.
    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<f64>)) {
        let mut tv = vec![self.t as f64];
        f(format!("{prefix}.t"), &mut tv);
        self.t = tv[0] as u64;
        for (k, vec) in self.m.iter_mut() {
            f(format!("{prefix}.m.{k}"), vec);
        }
        for (k, vec) in self.v.iter_mut() {
            f(format!("{prefix}.v.{k}"), vec);
        }
    }

    /// Recreate moment slots before restoring a checkpoint, since keys
    /// only exist after a first step.
    pub fn ensure_slot(&mut self, name: &str, len: usize) {
        self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; len]);
        self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; len]);
    }

    /// Flat state dump for checkpointing: "t", "m.<param>", "v.<param>".
    pub fn state_entries(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![("t".to_string(), vec![self.t as f64])];
        for (k, v) in &self.m {
            out.push((format!("m.{k}"), v.clone()));
        }
        for (k, v) in &self.v {
            out.push((format!("v.{k}"), v.clone()));
        }
        out
    }

    /// Inverse of `state_entries`; replaces all existing state.
    pub fn restore_entries(
        &mut self,
        entries: impl Iterator<Item = (String, Vec<f64>)>,
    ) -> Result<()> {
        self.t = 0;
        self.m.clear();
        self.v.clear();
        for (k, data) in entries {
            if k == "t" {
                self.t = data.first().copied().unwrap_or(0.0) as u64;
            } else if let Some(name) = k.strip_prefix("m.") {
                self.m.insert(name.to_string(), data);
            } else if let Some(name) = k.strip_prefix("v.") {
                self.v.insert(name.to_string(), data);
            } else {
                return Err(Error::Checkpoint(format!("unknown optimizer key '{k}'")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    /// Scalar reference implementation, straight from the update rule.
    fn adam_oracle(x0: f64, grads: &[f64], cfg: AdamConfig) -> f64 {
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mhat = m / (1.0 - cfg.beta1.powi(t));
            let vhat = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        x
    }

    #[test]
    fn matches_scalar_oracle_on_quadratic() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut adam = Adam::new(cfg);
        let mut x = Tensor::new(&[1], vec![1.5], true).unwrap();
        let mut grad_log = Vec::new();
        for _ in 0..5 {
            let loss = x.square().unwrap().sum().unwrap();
            let grads = backward(&loss).unwrap();
            grad_log.push(grads.get(&x).unwrap()[0]);
            adam.step(&grads, |f| f("x".into(), &mut x)).unwrap();
        }
        // replay the recorded gradient sequence through the oracle
        let expect = adam_oracle(1.5, &grad_log, cfg);
        assert!((x.data()[0] - expect).abs() < 1e-14);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_is_a_signed_lr_step() {
        // bias correction makes step 1 equal lr * g/|g| up to eps
        let cfg = AdamConfig::with_lr(0.01);
        let mut adam = Adam::new(cfg);
        let mut x = Tensor::new(&[1], vec![3.0], true).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        adam.step(&grads, |f| f("x".into(), &mut x)).unwrap();
        assert!((x.data()[0] - (3.0 - 0.01)).abs() < 1e-8);
    }

    #[test]
    fn missing_gradient_leaves_param_alone() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let mut x = Tensor::new(&[1], vec![2.0], true).unwrap();
        let mut y = Tensor::new(&[1], vec![5.0], true).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        adam.step(&grads, |f| {
            f("x".into(), &mut x);
            f("y".into(), &mut y);
        })
        .unwrap();
        assert_ne!(x.data()[0], 2.0);
        assert_eq!(y.data()[0], 5.0);
    }

    #[test]
    fn state_roundtrips_through_visit() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut adam = Adam::new(cfg);
        let mut x = Tensor::new(&[2], vec![1.0, -2.0], true).unwrap();
        for _ in 0..3 {
            let loss = x.square().unwrap().sum().unwrap();
            let grads = backward(&loss).unwrap();
            adam.step(&grads, |f| f("x".into(), &mut x)).unwrap();
        }
        let mut dump = std::collections::BTreeMap::new();
        adam.visit_state("opt", &mut |k, v| {
            dump.insert(k, v.clone());
        });
        assert_eq!(dump["opt.t"], vec![3.0]);
        assert_eq!(dump.len(), 3); // t, m.x, v.x
        // restore into a fresh optimizer and confirm identical trajectory
        let mut adam2 = Adam::new(cfg);
        adam2.ensure_slot("x", 2);
        adam2.visit_state("opt", &mut |k, v| {
            *v = dump[&k].clone();
        });
        let mut x2 = Tensor::new(&[2], x.data().to_vec(), true).unwrap();
        for _ in 0..2 {
            let l1 = x.square().unwrap().sum().unwrap();
            let g1 = backward(&l1).unwrap();
            adam.step(&g1, |f| f("x".into(), &mut x)).unwrap();
            let l2 = x2.square().unwrap().sum().unwrap();
            let g2 = backward(&l2).unwrap();
            adam2.step(&g2, |f| f("x".into(), &mut x2)).unwrap();
        }
        assert_eq!(x.data(), x2.data());
    }
}
