//! Seedable random-variate generation.
//!
//! Every stream is backed by ChaCha20 (via `rand_chacha`), so a given seed
//! yields the same sequence on every platform. Uniforms are built from the
//! top 53 bits of each 64-bit output and lie strictly inside (0, 1), which
//! keeps `-ln(U)` finite and positive.
//!
//! Each variate is a fixed transform of one or more uniforms:
//!
//! | kind        | method                         | uniforms per draw |
//! |-------------|--------------------------------|-------------------|
//! | Uniform01   | identity                       | 1                 |
//! | Normal      | Box-Muller (cosine branch)     | 2                 |
//! | Poisson     | multiplicative inversion       | k + 1             |
//! | Bernoulli   | `U < p`                        | 1                 |
//! | Exponential | `-ln(U) / rate`                | 1                 |

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("normal sd must be finite and positive, got {0}")]
    NormalSd(f64),
    #[error("normal mean must be finite, got {0}")]
    NormalMean(f64),
    #[error("poisson lambda must be in (0, 30], got {0}")]
    PoissonLambda(f64),
    #[error("bernoulli p must be in [0, 1], got {0}")]
    BernoulliP(f64),
    #[error("exponential rate must be finite and positive, got {0}")]
    ExponentialRate(f64),
}

/// Anything that can hand out uniforms on the open interval (0, 1).
///
/// [`RandomStream`] is the production source; tests substitute fixed
/// sequences to pin the inverse-transform identities.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

/// Deterministic, single-owner random stream.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha20Rng,
    draw_count: u64,
}

/// Create a fresh stream at draw count 0.
pub fn seed_stream(seed: u64) -> RandomStream {
    RandomStream::new(seed)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
            draw_count: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of underlying uniforms consumed so far.
    pub fn draw_count(&self) -> u64 {
        self.draw_count
    }

    /// Independent stream keyed by `seed ^ index`, for parallel replicates.
    pub fn substream(&self, index: u64) -> RandomStream {
        RandomStream::new(self.seed ^ index)
    }

    pub fn uniform(&mut self) -> f64 {
        self.draw_count += 1;
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn draw(&mut self, dist: &DistributionSpec) -> f64 {
        dist.sample(self)
    }

    pub fn draw_many(&mut self, dist: &DistributionSpec, n: usize) -> Vec<f64> {
        (0..n).map(|_| dist.sample(self)).collect()
    }
}

impl UniformSource for RandomStream {
    fn next_uniform(&mut self) -> f64 {
        self.uniform()
    }
}

/// One variate from `dist`, advancing `stream`.
pub fn draw_variate(stream: &mut RandomStream, dist: &DistributionSpec) -> f64 {
    dist.sample(stream)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionKind {
    Uniform01,
    Normal { mean: f64, sd: f64 },
    Poisson { lambda: f64 },
    Bernoulli { p: f64 },
    Exponential { rate: f64 },
}

/// A validated distribution. Only constructible with in-range parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionKind", into = "DistributionKind")]
pub struct DistributionSpec {
    kind: DistributionKind,
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind) -> Result<Self, DistributionError> {
        match kind {
            DistributionKind::Uniform01 => {}
            DistributionKind::Normal { mean, sd } => {
                if !mean.is_finite() {
                    return Err(DistributionError::NormalMean(mean));
                }
                if !(sd.is_finite() && sd > 0.0) {
                    return Err(DistributionError::NormalSd(sd));
                }
            }
            // Multiplicative inversion underflows e^-lambda past ~700 and
            // gets slow long before that; 30 is the documented ceiling.
            DistributionKind::Poisson { lambda } => {
                if !(lambda > 0.0 && lambda <= 30.0) {
                    return Err(DistributionError::PoissonLambda(lambda));
                }
            }
            DistributionKind::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(DistributionError::BernoulliP(p));
                }
            }
            DistributionKind::Exponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(DistributionError::ExponentialRate(rate));
                }
            }
        }
        Ok(Self { kind })
    }

    pub fn uniform01() -> Self {
        Self {
            kind: DistributionKind::Uniform01,
        }
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self, DistributionError> {
        Self::new(DistributionKind::Normal { mean, sd })
    }

    pub fn poisson(lambda: f64) -> Result<Self, DistributionError> {
        Self::new(DistributionKind::Poisson { lambda })
    }

    pub fn bernoulli(p: f64) -> Result<Self, DistributionError> {
        Self::new(DistributionKind::Bernoulli { p })
    }

    pub fn exponential(rate: f64) -> Result<Self, DistributionError> {
        Self::new(DistributionKind::Exponential { rate })
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    /// Analytic mean of the distribution.
    pub fn mean(&self) -> f64 {
        match self.kind {
            DistributionKind::Uniform01 => 0.5,
            DistributionKind::Normal { mean, .. } => mean,
            DistributionKind::Poisson { lambda } => lambda,
            DistributionKind::Bernoulli { p } => p,
            DistributionKind::Exponential { rate } => 1.0 / rate,
        }
    }

    pub fn sample<S: UniformSource + ?Sized>(&self, src: &mut S) -> f64 {
        match self.kind {
            DistributionKind::Uniform01 => src.next_uniform(),
            DistributionKind::Normal { mean, sd } => {
                let u1 = src.next_uniform();
                let u2 = src.next_uniform();
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                mean + sd * z
            }
            DistributionKind::Poisson { lambda } => {
                let limit = (-lambda).exp();
                let mut k = 0u32;
                let mut prod = src.next_uniform();
                while prod > limit {
                    k += 1;
                    prod *= src.next_uniform();
                }
                f64::from(k)
            }
            DistributionKind::Bernoulli { p } => {
                if src.next_uniform() < p {
                    1.0
                } else {
                    0.0
                }
            }
            DistributionKind::Exponential { rate } => exponential_from_uniform(src.next_uniform(), rate),
        }
    }
}

impl TryFrom<DistributionKind> for DistributionSpec {
    type Error = DistributionError;

    fn try_from(kind: DistributionKind) -> Result<Self, Self::Error> {
        Self::new(kind)
    }
}

impl From<DistributionSpec> for DistributionKind {
    fn from(spec: DistributionSpec) -> Self {
        spec.kind
    }
}

/// Inverse-transform exponential: `-ln(u) / rate`.
#[inline]
pub fn exponential_from_uniform(u: f64, rate: f64) -> f64 {
    -u.ln() / rate
}
