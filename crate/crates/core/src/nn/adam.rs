use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, Decoder, Encoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

const ADAM_MAGIC: &[u8; 8] = b"TRAYADAM";
const ADAM_VERSION: u32 = 1;

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient count mismatch");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.magic(ADAM_MAGIC, ADAM_VERSION);
        enc.f64(self.cfg.lr);
        enc.f64(self.cfg.beta1);
        enc.f64(self.cfg.beta2);
        enc.f64(self.cfg.eps);
        enc.u64(self.step);
        enc.f64s(&self.m);
        enc.f64s(&self.v);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.expect_version(ADAM_MAGIC, "adam", ADAM_VERSION)?;
        let cfg = AdamConfig {
            lr: dec.f64()?,
            beta1: dec.f64()?,
            beta2: dec.f64()?,
            eps: dec.f64()?,
        };
        let step = dec.u64()?;
        let m = dec.f64s()?;
        let v = dec.f64s()?;
        if m.len() != v.len() {
            return Err(CodecError::Invalid("adam moment lengths differ".into()));
        }
        Ok(Self { cfg, m, v, step })
    }
}
