//! Optimizers and learning-rate schedule: SGD with momentum as the baseline,
//! AdaBelief with step decay for the training experiments.
//!
//! The schedule decays the rate by a factor of 0.9 every `decay_every` epochs
//! (multiplicative reading of "decaying 10%").

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Sgd,
    AdaBelief,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
}

impl OptimConfig {
    /// AdaBelief defaults: lr 1e-3, betas (0.9, 0.999), eps 1e-8,
    /// decay x0.9 every 30 epochs.
    pub fn adabelief() -> Self {
        OptimConfig {
            kind: OptimKind::AdaBelief,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.0,
            decay_factor: 0.9,
            decay_every_epochs: 30,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimConfig {
            kind: OptimKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum,
            decay_factor: 0.9,
            decay_every_epochs: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Learning rate at a given epoch: `lr * factor^(epoch / every)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.decay_every_epochs == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((epoch / self.decay_every_epochs) as i32)
    }
}

/// Per-parameter state slots (first/second moment or momentum buffer).
#[derive(Debug, Clone)]
struct ParamState {
    m: Tensor,
    s: Tensor,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimConfig,
    state: Vec<ParamState>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { config, state: Vec::new(), steps: 0 })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. `params` are `(name, tensor)` pairs mutated in place;
    /// `grads` must align one-to-one. `lr` is the schedule-resolved rate.
    pub fn step(&mut self, params: &mut [(String, Tensor)], grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "got {} grads for {} params",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { name: name.clone() });
            }
        }
        if self.state.is_empty() {
            self.state = params
                .iter()
                .map(|(_, p)| ParamState {
                    m: Tensor::zeros(p.shape()),
                    s: Tensor::zeros(p.shape()),
                })
                .collect();
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.config;
        match c.kind {
            OptimKind::Sgd => {
                for ((_, p), (g, st)) in params.iter_mut().zip(grads.iter().zip(&mut self.state)) {
                    for i in 0..p.len() {
                        let v = c.momentum * st.m.data()[i] + g.data()[i];
                        st.m.data_mut()[i] = v;
                        p.data_mut()[i] -= lr * v;
                    }
                }
            }
            OptimKind::AdaBelief => {
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for ((_, p), (g, st)) in params.iter_mut().zip(grads.iter().zip(&mut self.state)) {
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        let m = c.beta1 * st.m.data()[i] + (1.0 - c.beta1) * gi;
                        let diff = gi - m;
                        let s = c.beta2 * st.s.data()[i] + (1.0 - c.beta2) * diff * diff + c.epsilon;
                        st.m.data_mut()[i] = m;
                        st.s.data_mut()[i] = s;
                        let m_hat = m / bc1;
                        let s_hat = s / bc2;
                        p.data_mut()[i] -= lr * m_hat / (s_hat.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }

    /// Serialize state (step counter plus slot tensors) for checkpointing.
    pub fn encode_state(&self) -> Vec<u8> {
        let mut out = format!("DIVLAB-OPTIM v1\nsteps={}\nslots={}\nend\n", self.steps, self.state.len())
            .into_bytes();
        for st in &self.state {
            for t in [&st.m, &st.s] {
                out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode_state(&mut self, bytes: &[u8]) -> Result<()> {
        let header_end = bytes
            .windows(4)
            .position(|w| w == b"end\n")
            .ok_or_else(|| Error::Checkpoint("truncated optimizer state".into()))?
            + 4;
        let header = std::str::from_utf8(&bytes[..header_end])
            .map_err(|_| Error::Checkpoint("non-utf8 optimizer header".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some("DIVLAB-OPTIM v1") {
            return Err(Error::Checkpoint("version mismatch in optimizer state".into()));
        }
        let mut steps = 0u64;
        let mut slots = 0usize;
        for line in lines {
            if line == "end" {
                break;
            }
            if let Some(v) = line.strip_prefix("steps=") {
                steps = v.parse().map_err(|_| Error::Checkpoint("bad steps".into()))?;
            } else if let Some(v) = line.strip_prefix("slots=") {
                slots = v.parse().map_err(|_| Error::Checkpoint("bad slots".into()))?;
            }
        }
        let mut pos = header_end;
        let read_u64 = |pos: &mut usize| -> Result<u64> {
            if *pos + 8 > bytes.len() {
                return Err(Error::Checkpoint("truncated optimizer state".into()));
            }
            let v = u64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            Ok(v)
        };
        let read_tensor = |pos: &mut usize| -> Result<Tensor> {
            let rank = read_u64(pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(pos)? as usize);
            }
            let n: usize = shape.iter().product();
            if *pos + n * 8 > bytes.len() {
                return Err(Error::Checkpoint("truncated optimizer state".into()));
            }
            let data = bytes[*pos..*pos + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            *pos += n * 8;
            Tensor::new(shape, data)
        };
        let mut state = Vec::with_capacity(slots);
        for _ in 0..slots {
            let m = read_tensor(&mut pos)?;
            let s = read_tensor(&mut pos)?;
            state.push(ParamState { m, s });
        }
        self.steps = steps;
        self.state = state;
        Ok(())
    }
}
