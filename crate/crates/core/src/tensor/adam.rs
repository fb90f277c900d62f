use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Named parameters with their Adam moment accumulators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    /// Updates applied to each parameter since its moments were last cleared.
    steps: Vec<u64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let shape = value.shape().to_vec();
        self.names.push(name.into());
        self.values.push(value);
        self.first_moment.push(Tensor::zeros(&shape));
        self.second_moment.push(Tensor::zeros(&shape));
        self.steps.push(0);
        ParamId(self.values.len() - 1)
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

    /// Replaces a parameter value and clears its moments and step count.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(format!(
                "parameter `{}` is {:?}, replacement is {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        let shape = value.shape().to_vec();
        self.values[id.0] = value;
        self.first_moment[id.0] = Tensor::zeros(&shape);
        self.second_moment[id.0] = Tensor::zeros(&shape);
        self.steps[id.0] = 0;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Largest per-parameter update count.
    pub fn step(&self) -> u64 {
        self.steps.iter().copied().max().unwrap_or(0)
    }

    pub fn param_step(&self, id: ParamId) -> u64 {
        self.steps[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        (&self.first_moment[id.0], &self.second_moment[id.0])
    }

    /// Clears every moment accumulator and step counter.
    pub fn reset_optimizer(&mut self) {
        for (m, v) in self.first_moment.iter_mut().zip(&mut self.second_moment) {
            m.data_mut().fill(0.0);
            v.data_mut().fill(0.0);
        }
        self.steps.fill(0);
    }

    pub fn total_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero gradients shaped like every parameter.
    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.values.iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    /// Order-dependent FNV-1a digest of the parameter bits.
    pub fn checksum(&self, ids: impl IntoIterator<Item = ParamId>) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for id in ids {
            for v in self.values[id.0].data() {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }
}

/// Gradients aligned index-for-index with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        self.0[id.0].add_assign(grad)
    }

    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::shape("gradient sets of different size"));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            g.scale(factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }
}

/// One Adam update with bias-corrected moments.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    if grads.0.len() != store.values.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} parameters",
            grads.0.len(),
            store.values.len()
        )));
    }
    for (i, g) in grads.0.iter().enumerate() {
        if g.shape() != store.values[i].shape() {
            return Err(Error::shape(format!(
                "gradient for `{}` is {:?}, parameter is {:?}",
                store.names[i],
                g.shape(),
                store.values[i].shape()
            )));
        }
    }
    for i in 0..store.values.len() {
        store.steps[i] += 1;
        let t = store.steps[i].min(i32::MAX as u64) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let g = grads.0[i].data();
        let m = store.first_moment[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
        }
        let v = store.second_moment[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
        }
        let m = store.first_moment[i].data();
        let v = store.second_moment[i].data();
        let p = store.values[i].data_mut();
        for ((pj, mj), vj) in p.iter_mut().zip(m).zip(v) {
            let m_hat = mj / c1;
            let v_hat = vj / c2;
            *pj -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
