//! Laplace mechanism on q values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    /// `f64::INFINITY` disables the noise but keeps clipping.
    pub epsilon: f64,
    /// Clipping bound and L1 sensitivity of each component.
    pub sensitivity: f64,
    #[serde(default = "default_clip")]
    pub clip: bool,
}

fn default_clip() -> bool {
    true
}

impl DpConfig {
    pub fn new(epsilon: f64, sensitivity: f64) -> Result<Self> {
        let c = DpConfig {
            epsilon,
            sensitivity,
            clip: true,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("dp epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::Config(format!(
                "dp sensitivity must be positive and finite, got {}",
                self.sensitivity
            )));
        }
        Ok(())
    }

    /// Laplace scale `b = sensitivity / epsilon`.
    pub fn noise_scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// One draw from Laplace(0, b) by inverse CDF.
pub fn laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    // u in (-1/2, 1/2]; the open lower end keeps ln finite
    let u: f64 = 0.5 - rng.random::<f64>();
    if u == 0.0 {
        return 0.0;
    }
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn dp_protect<R: Rng + ?Sized>(q: &[f64], cfg: &DpConfig, rng: &mut R) -> Vec<f64> {
    let b = cfg.noise_scale();
    q.iter()
        .map(|&v| {
            let v = if cfg.clip {
                v.clamp(-cfg.sensitivity, cfg.sensitivity)
            } else {
                v
            };
            v + laplace(b, rng)
        })
        .collect()
}
