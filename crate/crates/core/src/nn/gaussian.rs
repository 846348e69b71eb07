//! Tanh-squashed diagonal Gaussian used by the policy.

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Guard inside `log(1 - tanh(u)^2 + eps)`.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mean: f64,
    pub log_std: f64,
}

impl GaussianHead {
    /// Builds a head from raw network outputs, clamping `log_std`.
    pub fn new(mean: f64, raw_log_std: f64) -> Self {
        Self {
            mean,
            log_std: raw_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
        }
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    /// The deterministic action used at test time.
    pub fn mean_action(&self) -> f64 {
        self.mean.tanh()
    }

    /// Differential entropy of the unsquashed Gaussian.
    pub fn latent_entropy(&self) -> f64 {
        0.5 + HALF_LN_2PI + self.log_std
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    /// Pre-squash value `u = mean + std * noise`.
    pub latent: f64,
    pub action: f64,
    pub log_prob: f64,
}

/// Reparameterized draw: `u = mean + std * noise`, `action = tanh(u)`,
/// `log_prob = log N(u; mean, std) - log(1 - tanh(u)^2 + eps)`.
pub fn squash_sample(head: GaussianHead, noise: f64) -> SquashedSample {
    let std = head.std();
    let latent = head.mean + std * noise;
    let action = latent.tanh();
    let log_normal = -0.5 * noise * noise - head.log_std - HALF_LN_2PI;
    SquashedSample {
        latent,
        action,
        log_prob: log_normal - tanh_correction(action),
    }
}

/// `log(1 - a^2 + eps)` for `a = tanh(u)`.
pub fn tanh_correction(action: f64) -> f64 {
    (1.0 - action * action + TANH_EPS).ln()
}

/// d/du of `-log(1 - tanh(u)^2 + eps)`.
pub fn tanh_correction_grad(action: f64) -> f64 {
    let s = 1.0 - action * action;
    2.0 * action * s / (s + TANH_EPS)
}
