//! Adam over one or more variable stores, with state that can be written to
//! and restored from disk.

use std::path::Path;

use tch::{nn::VarStore, Kind, Tensor};

use crate::error::{ensure, Error, Result};

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug)]
pub struct Adam {
    names: Vec<String>,
    params: Vec<Tensor>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
    betas: (f64, f64),
}

impl Adam {
    /// Optimizes every variable of `stores` that requires a gradient (frozen
    /// stores and batch-norm buffers are skipped); names are prefixed by the
    /// given labels.
    pub fn new(stores: &[(&str, &VarStore)], betas: (f64, f64)) -> Self {
        let mut named: Vec<(String, Tensor)> = Vec::new();
        for (label, vs) in stores {
            for (name, t) in vs.variables() {
                if t.requires_grad() {
                    named.push((format!("{label}.{name}"), t));
                }
            }
        }
        named.sort_by(|a, b| a.0.cmp(&b.0));
        let first = named.iter().map(|(_, t)| t.zeros_like()).collect();
        let second = named.iter().map(|(_, t)| t.zeros_like()).collect();
        let (names, params) = named.into_iter().unzip();
        Adam {
            names,
            params,
            first,
            second,
            steps: 0,
            betas,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// L2 norm of all currently accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        grad_norm(&self.params)
    }

    pub fn step(&mut self, lr: f64) {
        self.steps += 1;
        let (b1, b2) = self.betas;
        let t = self.steps as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        tch::no_grad(|| {
            for ((p, m), v) in self
                .params
                .iter_mut()
                .zip(&mut self.first)
                .zip(&mut self.second)
            {
                let g = p.grad();
                if !g.defined() {
                    continue;
                }
                let _ = m.g_mul_scalar_(b1).g_add_(&(&g * (1.0 - b1)));
                let _ = v.g_mul_scalar_(b2).g_add_(&(g.square() * (1.0 - b2)));
                let denom = (&*v / c2).sqrt() + ADAM_EPS;
                let update = (&*m / c1) / denom * lr;
                let _ = p.g_sub_(&update);
            }
        });
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut named: Vec<(String, Tensor)> = Vec::with_capacity(self.names.len() * 2 + 1);
        for ((n, m), v) in self.names.iter().zip(&self.first).zip(&self.second) {
            named.push((format!("m.{n}"), m.shallow_clone()));
            named.push((format!("v.{n}"), v.shallow_clone()));
        }
        named.push(("steps".into(), Tensor::from_slice(&[self.steps as i64])));
        Tensor::write_safetensors(&named, path)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let loaded: std::collections::HashMap<String, Tensor> =
            Tensor::read_safetensors(path)?.into_iter().collect();
        ensure!(
            loaded.len() == self.names.len() * 2 + 1,
            Data,
            "optimizer state {} does not match the model",
            path.display()
        );
        tch::no_grad(|| -> Result<()> {
            for ((n, m), v) in self.names.iter().zip(&mut self.first).zip(&mut self.second) {
                for (prefix, dst) in [("m", &mut *m), ("v", &mut *v)] {
                    let src = loaded.get(&format!("{prefix}.{n}")).ok_or_else(|| {
                        Error::Data(format!("optimizer state lacks {prefix}.{n}"))
                    })?;
                    ensure!(
                        src.size() == dst.size(),
                        Data,
                        "optimizer state shape mismatch for {n}"
                    );
                    dst.copy_(src);
                }
            }
            Ok(())
        })?;
        self.steps = loaded["steps"].int64_value(&[0]) as u64;
        Ok(())
    }
}

pub fn grad_norm(params: &[Tensor]) -> f64 {
    params
        .iter()
        .map(|p| p.grad())
        .filter(Tensor::defined)
        .map(|g| {
            g.to_kind(Kind::Double)
                .square()
                .sum(Kind::Double)
                .double_value(&[])
        })
        .fold(0.0, |acc, x| acc + x)
        .sqrt()
}

/// Gradient norm over every variable of a store, trainable or not.
pub fn store_grad_norm(vs: &VarStore) -> f64 {
    let vars: Vec<Tensor> = vs.variables().into_values().collect();
    grad_norm(&vars)
}
