use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    /// Leaky rectifier with slope [`LEAKY_SLOPE`] on the negative side.
    LeakyRelu,
    /// Divisive normalisation in the main transforms (inverse form in the
    /// synthesis transform); the hyper transforms keep the leaky rectifier.
    Gdn,
}

pub const LEAKY_SLOPE: f64 = 0.1;

/// Shape of the four transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub downsampling_stages: usize,
    pub hidden_channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub hyper_downsampling_stages: usize,
    pub nonlinearity: Nonlinearity,
    pub kernel_size: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            downsampling_stages: 3,
            hidden_channels: 64,
            latent_channels: 96,
            hyper_channels: 32,
            hyper_downsampling_stages: 2,
            nonlinearity: Nonlinearity::LeakyRelu,
            kernel_size: 3,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: &str| {
            Err(CoreError::InvalidArgument(format!("arch.{field}: {msg}")))
        };
        if self.downsampling_stages < 2 {
            return fail("downsampling_stages", "must be at least 2");
        }
        if self.hyper_downsampling_stages < 1 {
            return fail("hyper_downsampling_stages", "must be at least 1");
        }
        for (name, v) in [
            ("hidden_channels", self.hidden_channels),
            ("latent_channels", self.latent_channels),
            ("hyper_channels", self.hyper_channels),
        ] {
            if v < 8 {
                return fail(name, "must be at least 8");
            }
        }
        if self.kernel_size < 2 {
            return fail("kernel_size", "must be at least 2");
        }
        if self.downsampling_stages + self.hyper_downsampling_stages > 12 {
            return fail(
                "downsampling_stages",
                "total downsampling is unreasonably large",
            );
        }
        Ok(())
    }

    /// `2^S`: image side length per latent element.
    pub fn latent_factor(&self) -> usize {
        1 << self.downsampling_stages
    }

    /// `2^S_h`: latent side length per hyper-latent element.
    pub fn hyper_factor(&self) -> usize {
        1 << self.hyper_downsampling_stages
    }

    /// `2^(S + S_h)`: image sides must be multiples of this to be coded.
    pub fn total_factor(&self) -> usize {
        self.latent_factor() * self.hyper_factor()
    }

    /// Canonical byte encoding used for hashing.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = b"arch/v1".to_vec();
        for v in [
            self.downsampling_stages,
            self.hidden_channels,
            self.latent_channels,
            self.hyper_channels,
            self.hyper_downsampling_stages,
            self.kernel_size,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(match self.nonlinearity {
            Nonlinearity::LeakyRelu => 0,
            Nonlinearity::Gdn => 1,
        });
        out
    }
}
