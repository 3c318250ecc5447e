//! Seeded probe vectors with mean zero and identity covariance.
//!
//! Probe `j` of a stream is drawn from its own ChaCha8 substream: the
//! 256-bit key is derived from the master seed (word 0 is the seed itself,
//! so distinct seeds give distinct keys) and the ChaCha stream id is `j`.
//! A probe therefore depends only on `(seed, j, dim, distribution)`, never
//! on call order or on how many threads are drawing.
//!
//! Gaussian entries use `rand_distr::StandardNormal` (ziggurat) applied to
//! the substream in index order; Rademacher entries take one bit each from
//! successive `u64` draws, least significant bit first, `1 -> +1`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    #[default]
    Gaussian,
    Rademacher,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Gaussian => f.write_str("gaussian"),
            Distribution::Rademacher => f.write_str("rademacher"),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Distribution::Gaussian),
            "rademacher" => Ok(Distribution::Rademacher),
            other => Err(Error::param("distribution", format!("unknown distribution `{other}`"))),
        }
    }
}

/// SplitMix64 finalizer; a bijection on `u64`.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child master seed from `(base, key)`. For a fixed `base` the
/// map `key -> seed` is injective, so distinct keys never share substreams.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    mix64(base ^ mix64(key))
}

/// Packs a grid cell index and a realization index into one derivation key.
pub fn cell_key(cell: u32, realization: u32) -> u64 {
    (u64::from(cell) << 32) | u64::from(realization)
}

fn substream(seed: u64, j: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut s = seed;
    for chunk in key[8..].chunks_exact_mut(8) {
        s = mix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(j);
    rng
}

/// Immutable, seeded source of probe vectors `w_0, w_1, ...` in `R^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeStream {
    distribution: Distribution,
    seed: u64,
    dim: usize,
}

impl ProbeStream {
    pub fn new(distribution: Distribution, seed: u64, dim: usize) -> Self {
        Self {
            distribution,
            seed,
            dim,
        }
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `j`-th probe.
    pub fn probe(&self, j: u64) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        self.probe_into(j, &mut w);
        w
    }

    /// Writes the `j`-th probe into `out[..dim]`.
    pub fn probe_into(&self, j: u64, out: &mut [f64]) {
        let out = &mut out[..self.dim];
        let mut rng = substream(self.seed, j);
        match self.distribution {
            Distribution::Gaussian => {
                for v in out.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            Distribution::Rademacher => {
                for chunk in out.chunks_mut(64) {
                    let bits = rng.next_u64();
                    for (b, v) in chunk.iter_mut().enumerate() {
                        *v = if (bits >> b) & 1 == 1 { 1.0 } else { -1.0 };
                    }
                }
            }
        }
    }
}
