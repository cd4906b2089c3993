use std::collections::HashMap;

use tch::{Kind, Tensor};

use crate::error::{Error, Result};

/// Adam over named tensors. Tensors without a gradient are skipped, so a frozen
/// or unused parameter is never touched.
pub struct Adam {
    betas: [f64; 2],
    eps: f64,
    lr: f64,
    step: u64,
    moments: HashMap<String, (Tensor, Tensor)>,
}

const STEP_KEY: &str = "optim.step";

impl Adam {
    pub fn new(lr: f64, betas: [f64; 2], eps: f64) -> Self {
        Self {
            betas,
            eps,
            lr,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &[(String, Tensor)]) {
        self.step += 1;
        let [b1, b2] = self.betas;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        tch::no_grad(|| {
            for (name, p) in params {
                let g = p.grad();
                if !g.defined() {
                    continue;
                }
                let (m, v) = self
                    .moments
                    .entry(name.clone())
                    .or_insert_with(|| (p.zeros_like(), p.zeros_like()));
                *m = &*m * b1 + &g * (1.0 - b1);
                *v = &*v * b2 + g.square() * (1.0 - b2);
                let update = (&*m / c1) / ((&*v / c2).sqrt() + self.eps) * self.lr;
                let _ = p.shallow_clone().f_sub_(&update).expect("in-place update");
            }
        });
    }

    /// Moments and step counter as auxiliary checkpoint tensors.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut names: Vec<&String> = self.moments.keys().collect();
        names.sort();
        let mut out = vec![(
            STEP_KEY.to_string(),
            Tensor::from_slice(&[self.step as f32]),
        )];
        for n in names {
            let (m, v) = &self.moments[n];
            out.push((format!("optim.m.{n}"), m.shallow_clone()));
            out.push((format!("optim.v.{n}"), v.shallow_clone()));
        }
        out
    }

    pub fn load_state(&mut self, aux: &HashMap<String, Tensor>, device: tch::Device) -> Result<()> {
        let step = aux
            .get(STEP_KEY)
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimiser state".into()))?;
        self.step = step.double_value(&[0]) as u64;
        self.moments.clear();
        for (key, m) in aux {
            let Some(name) = key.strip_prefix("optim.m.") else {
                continue;
            };
            let v = aux
                .get(&format!("optim.v.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("optimiser state for `{name}` is incomplete")))?;
            self.moments.insert(
                name.to_string(),
                (
                    m.to_device(device).to_kind(Kind::Float),
                    v.to_device(device).to_kind(Kind::Float),
                ),
            );
        }
        Ok(())
    }
}
