//! Pose-derived synthetic embeddings.
//!
//! A frame's feature vector is the normalized random Fourier map
//! `[cos(ω_k · p + b_k)]_k` of its position `p`. With Gaussian frequencies
//! `ω_k ~ N(0, σ⁻² I)` the inner product of two such vectors approximates
//! the Gaussian kernel `exp(−‖Δp‖² / 2σ²)`, so nearby poses look alike.
//!
//! In aliasing mode a fraction of the components draw their frequencies
//! from the lattice `(2π / period) · ℤ²`. Those components repeat with the
//! room pitch, so the same spot in two different rooms shares part of its
//! embedding.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::Pose;
use super::SimError;
use crate::scalar::Scalar;

pub(crate) fn default_dim() -> usize {
    256
}
pub(crate) fn default_sigma() -> f64 {
    2.0
}
pub(crate) fn default_alias_fraction() -> f64 {
    0.4
}
/// Matches the default maze room pitch (12 + 8 cells).
pub(crate) fn default_alias_period() -> f64 {
    5.0
}
pub(crate) fn default_alias_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Kernel bandwidth in metres.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub aliasing: bool,
    /// Share of components that are periodic when aliasing is on.
    #[serde(default = "default_alias_fraction")]
    pub alias_fraction: f64,
    /// Repetition period in metres of the aliased components.
    #[serde(default = "default_alias_period")]
    pub alias_period: f64,
    /// Bandwidth of the periodic kernel, metres.
    #[serde(default = "default_alias_sigma")]
    pub alias_sigma: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            sigma: default_sigma(),
            aliasing: false,
            alias_fraction: default_alias_fraction(),
            alias_period: default_alias_period(),
            alias_sigma: default_alias_sigma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    pub freq: [f64; 2],
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    spec: FeatureSpec,
    seed: u64,
    basis: Vec<FourierBasis>,
}

impl FeatureMap {
    pub fn new(spec: &FeatureSpec, seed: u64) -> Result<Self, SimError> {
        if spec.dim == 0 || spec.sigma.is_nan() || spec.sigma <= 0.0 {
            return Err(SimError::BadScene(
                "feature dimension and sigma must be positive".into(),
            ));
        }
        if spec.aliasing
            && !(spec.alias_period > 0.0 && spec.alias_sigma > 0.0 && (0.0..=1.0).contains(&spec.alias_fraction))
        {
            return Err(SimError::BadScene("invalid aliasing parameters".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aliased = if spec.aliasing {
            (spec.alias_fraction * spec.dim as f64).round() as usize
        } else {
            0
        };
        let mut basis = Vec::with_capacity(spec.dim);
        for k in 0..spec.dim {
            let phase = rng.random_range(0.0..2.0 * PI);
            let freq = if k < spec.dim - aliased {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [a / spec.sigma, b / spec.sigma]
            } else {
                let step = 2.0 * PI / spec.alias_period;
                let scale = 1.0 / (spec.alias_sigma * step);
                loop {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    let (ia, ib) = ((a * scale).round(), (b * scale).round());
                    if ia != 0.0 || ib != 0.0 {
                        break [ia * step, ib * step];
                    }
                }
            };
            basis.push(FourierBasis { freq, phase });
        }
        Ok(Self {
            spec: spec.clone(),
            seed,
            basis,
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[FourierBasis] {
        &self.basis
    }

    /// Unit-norm embedding of a position. Does not check navigability.
    pub fn embed<T: Scalar>(&self, p: &Pose) -> Vec<T> {
        let raw: Vec<f64> = self
            .basis
            .iter()
            .map(|b| (b.freq[0] * p.x + b.freq[1] * p.y + b.phase).cos())
            .collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| T::of(x / n)).collect()
    }
}
