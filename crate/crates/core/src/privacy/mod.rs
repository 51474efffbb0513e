//! Protection of shared q values: Paillier encryption with interactive or
//! linear-only evaluation of the global critic, and the Laplace mechanism.

pub mod dp;
pub mod he;
pub mod paillier;

pub use dp::{dp_protect, DpConfig};
pub use paillier::{Ciphertext, HeOps, KeyPair, PublicKey};
pub use he::{HeEvaluator, HeMode, Keyholder};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyholderRole {
    /// Agent 0 holds the secret key.
    Agent,
    TrustedDevice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeConfig {
    #[serde(default = "default_key_bits")]
    pub key_bits: u64,
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u32,
    #[serde(default = "default_keyholder")]
    pub keyholder: KeyholderRole,
}

fn default_key_bits() -> u64 {
    2048
}

fn default_frac_bits() -> u32 {
    paillier::DEFAULT_FRAC_BITS
}

fn default_keyholder() -> KeyholderRole {
    KeyholderRole::Agent
}

impl Default for HeConfig {
    fn default() -> Self {
        HeConfig {
            key_bits: default_key_bits(),
            frac_bits: default_frac_bits(),
            keyholder: default_keyholder(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrivacyConfig {
    #[default]
    None,
    HeInteractive(HeConfig),
    HeLinear(HeConfig),
    Dp(DpConfig),
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            PrivacyConfig::None => Ok(()),
            PrivacyConfig::HeInteractive(c) | PrivacyConfig::HeLinear(c) => {
                if c.key_bits < 256 {
                    return Err(Error::Config(format!("key_bits {} too small", c.key_bits)));
                }
                if c.frac_bits == 0 || c.frac_bits > 52 {
                    return Err(Error::Config(format!("frac_bits {} outside 1..=52", c.frac_bits)));
                }
                Ok(())
            }
            PrivacyConfig::Dp(c) => c.validate(),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PrivacyConfig::None)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PrivacyConfig::None => "none",
            PrivacyConfig::HeInteractive(_) => "he_interactive",
            PrivacyConfig::HeLinear(_) => "he_linear",
            PrivacyConfig::Dp(_) => "dp",
        }
    }
}
