//! Seeded, order-independent parameter initialization and parameter-level
//! utilities shared by every network.
//!
//! Each variable draws from its own ChaCha stream keyed on `(seed, name)`,
//! so construction order and concurrent use of the torch global generator
//! never influence the initial weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use tch::{nn::VarStore, Kind, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    /// Zero-mean normal with std `sqrt(2 / fan_in)`.
    HeNormal,
    Normal(f64),
}

fn variable_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn fan_in(shape: &[i64]) -> i64 {
    shape.iter().skip(1).product::<i64>().max(1)
}

fn sample_normal(seed: u64, name: &str, n: usize, std: f64) -> Vec<f32> {
    let dist = Normal::new(0.0f64, std).expect("finite std");
    let mut rng = variable_rng(seed, name);
    (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
}

/// Overwrites every variable of `vs` according to `rule(name, shape)`.
pub fn initialize(vs: &VarStore, seed: u64, rule: impl Fn(&str, &[i64]) -> Init) {
    let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    tch::no_grad(|| {
        for (name, mut var) in vars {
            let shape = var.size();
            let numel = shape.iter().product::<i64>() as usize;
            let values: Vec<f32> = match rule(&name, &shape) {
                Init::Const(v) => vec![v as f32; numel],
                Init::HeNormal => {
                    sample_normal(seed, &name, numel, (2.0 / fan_in(&shape) as f64).sqrt())
                }
                Init::Normal(std) => sample_normal(seed, &name, numel, std),
            };
            let src = Tensor::from_slice(&values)
                .view(shape.as_slice())
                .to_kind(var.kind());
            var.copy_(&src);
        }
    });
}

/// The standard rule for conv/batch-norm stacks: He-normal conv kernels,
/// unit batch-norm scale and running variance, zero everywhere else.
pub fn default_rule(name: &str, shape: &[i64]) -> Init {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    match (leaf, shape.len()) {
        ("weight", 4) => Init::HeNormal,
        ("weight", _) | ("running_var", _) => Init::Const(1.0),
        _ => Init::Const(0.0),
    }
}

/// All variables (trainable and buffers) flattened in name order.
pub fn parameter_vector(vs: &VarStore) -> Tensor {
    let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    let flat: Vec<Tensor> = vars
        .iter()
        .map(|(_, t)| t.detach().to_kind(Kind::Double).flatten(0, -1))
        .collect();
    Tensor::cat(&flat, 0)
}

pub fn parameter_count(vs: &VarStore) -> i64 {
    vs.trainable_variables()
        .iter()
        .map(|t| t.numel() as i64)
        .sum()
}

/// Exact equality of every named variable in two stores.
pub fn stores_equal(a: &VarStore, b: &VarStore) -> bool {
    let va = a.variables();
    let vb = b.variables();
    va.len() == vb.len()
        && va.iter().all(|(name, t)| {
            vb.get(name)
                .is_some_and(|u| t.size() == u.size() && t.equal(u))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{nn, Device};

    fn store(seed: u64) -> VarStore {
        let vs = VarStore::new(Device::Cpu);
        let _c = nn::conv2d(vs.root() / "c", 3, 8, 3, Default::default());
        let _b = nn::batch_norm2d(vs.root() / "bn", 8, Default::default());
        initialize(&vs, seed, default_rule);
        vs
    }

    #[test]
    fn same_seed_same_weights() {
        assert!(stores_equal(&store(3), &store(3)));
        assert!(!stores_equal(&store(3), &store(4)));
    }

    #[test]
    fn he_normal_has_expected_spread() {
        let vs = VarStore::new(Device::Cpu);
        let _c = nn::conv2d(vs.root() / "c", 64, 64, 3, Default::default());
        initialize(&vs, 0, default_rule);
        let w = vs.variables()["c.weight"].shallow_clone();
        let std = w.std(true).double_value(&[]);
        let expected = (2.0f64 / (64.0 * 9.0)).sqrt();
        assert!(
            (std - expected).abs() / expected < 0.02,
            "{std} vs {expected}"
        );
        assert_eq!(
            vs.variables()["c.bias"]
                .abs()
                .sum(Kind::Float)
                .double_value(&[]),
            0.0
        );
    }

    #[test]
    fn batch_norm_buffers_are_identity() {
        let vs = store(1);
        let vars = vs.variables();
        assert_eq!(vars["bn.running_var"].min().double_value(&[]), 1.0);
        assert_eq!(vars["bn.running_mean"].abs().max().double_value(&[]), 0.0);
        assert_eq!(vars["bn.weight"].min().double_value(&[]), 1.0);
    }
}
