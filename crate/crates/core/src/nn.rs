//! Parameter storage, initialisation, layer building blocks and SGD.

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamGrads, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in insertion order. Insertion order is part of the
/// determinism contract: checkpoints and gradient buffers are indexed by it.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name: {name}")));
        }
        self.names.push(name.to_string());
        self.values.push(value);
        self.by_name.insert(name.to_string(), self.names.len() - 1);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Total scalars among parameters whose name starts with `prefix`.
    pub fn scalars_with_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.values)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps us off rand_distr for one distribution.
    loop {
        let u: f64 = rng.random::<f64>();
        let v: f64 = rng.random::<f64>();
        if u > f64::MIN_POSITIVE {
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}

/// He-normal initialisation for a conv/dense weight with the given fan-in.
pub fn init_he(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal(rng) * std).collect())
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// A 2-d convolution with owned weight/bias parameters.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Conv2d> {
        Self::new_with_gain(store, rng, name, c_in, c_out, kernel, stride, pad, 1.0)
    }

    /// Like [`Conv2d::new`] with the He initialisation scaled by `gain`;
    /// small gains keep residual increment maps close to the identity at the
    /// start of training.
    #[allow(clippy::too_many_arguments)]
    pub fn new_with_gain(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
    ) -> Result<Conv2d> {
        let mut weight = init_he(rng, &[c_out, c_in, kernel, kernel], c_in * kernel * kernel);
        if gain != 1.0 {
            for v in weight.data_mut() {
                *v *= gain;
            }
        }
        let w = store.add(&format!("{name}.weight"), weight)?;
        let b = store.add(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Conv2d { w, b, stride, pad })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Per-sample group normalisation with learnable per-channel scale/shift.
/// Used where the full-scale architecture would carry batch normalisation;
/// the per-sample statistics keep training independent of batch composition.
#[derive(Clone, Copy, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        groups: usize,
    ) -> Result<GroupNorm> {
        let gamma = store.add(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?;
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        Ok(GroupNorm { gamma, beta, groups })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, self.groups, 1e-5)
    }
}

/// Affine map on channel vectors (used by the attention transforms).
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Dense> {
        let w = store.add(&format!("{name}.weight"), init_he(rng, &[c_out, c_in], c_in))?;
        let b = store.add(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Dense { w, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.dense(x, w, Some(b))
    }
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 2e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.9,
            lr_decay_every_epochs: 20,
        }
    }
}

/// Plain SGD with momentum and decoupled-from-nothing weight decay added to
/// the gradient. Parameters that received no gradient in a step are left
/// untouched (their momentum does not decay either).
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Option<Tensor>>,
    epoch: usize,
}

impl Sgd {
    pub fn new(cfg: SgdConfig, n_params: usize) -> Sgd {
        Sgd { cfg, velocity: (0..n_params).map(|_| None).collect(), epoch: 0 }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn current_lr(&self) -> f64 {
        let k = self.epoch.checked_div(self.cfg.lr_decay_every_epochs).unwrap_or(0);
        self.cfg.lr * self.cfg.lr_decay_factor.powi(k as i32)
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        let lr = self.current_lr();
        for id in store.ids() {
            let Some(grad) = grads.get(id) else { continue };
            let v = self.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let p = store.get_mut(id);
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
                let g = gv + self.cfg.weight_decay * *pv;
                *vv = self.cfg.momentum * *vv + g;
                *pv -= lr * *vv;
            }
        }
    }

    /// Momentum buffers in parameter order, for checkpointing.
    pub fn velocity(&self) -> &[Option<Tensor>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut Vec<Option<Tensor>> {
        &mut self.velocity
    }
}
