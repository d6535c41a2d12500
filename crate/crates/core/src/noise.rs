//! Reproducible Brownian increments.
//!
//! Every trajectory draws from its own [`NoiseStream`]: a ChaCha8 generator
//! keyed by the master seed and positioned on a 64-bit stream id. ChaCha is
//! counter based, so the pair `(master_seed, stream)` fully determines the
//! sequence and distinct stream ids never overlap. Replica `r` of an
//! experiment uses stream [`stream_id`]`(group, r)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SimError};

/// Stream id of replica `replica` within experiment group `group`.
///
/// The group occupies the high 32 bits, the replica the low 32 bits.
pub fn stream_id(group: u32, replica: u32) -> u64 {
    ((group as u64) << 32) | replica as u64
}

/// One independent, seekable source of standard normals.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Position in 32-bit words from the start of the stream.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rewinds or fast-forwards to a position previously returned by
    /// [`position`](Self::position).
    pub fn seek(&mut self, position: u128) {
        self.rng.set_word_pos(position);
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

/// Brownian increments over one unit interval: `N` i.i.d. draws from
/// `N(0, 1/N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    increments: Vec<f64>,
    seed: u64,
    stream: u64,
    position: u128,
}

impl NoiseBlock {
    /// Wraps explicit increments (zero noise, hand-built paths). Provenance
    /// fields are zero.
    pub fn from_increments(increments: Vec<f64>) -> Result<Self> {
        if increments.len() < 2 {
            return Err(SimError::InvalidResolution {
                got: increments.len(),
                min: 2,
            });
        }
        if let Some((index, &value)) = increments.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SimError::NonFinite { index, value });
        }
        Ok(Self {
            increments,
            seed: 0,
            stream: 0,
            position: 0,
        })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::from_increments(vec![0.0; n])
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn resolution(&self) -> usize {
        self.increments.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Stream position at which the block was drawn.
    pub fn position(&self) -> u128 {
        self.position
    }

    /// Sums consecutive groups of `factor` increments: the same Brownian path
    /// seen on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.increments.len().is_multiple_of(factor) {
            return Err(SimError::param(
                "factor",
                format!("{factor} does not divide resolution {}", self.increments.len()),
            ));
        }
        let increments: Vec<f64> = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        if increments.len() < 2 {
            return Err(SimError::InvalidResolution {
                got: increments.len(),
                min: 2,
            });
        }
        Ok(Self {
            increments,
            ..self.clone()
        })
    }
}

/// Draws the next `n` Brownian increments of step `1/n` from `stream`.
pub fn draw_noise(stream: &mut NoiseStream, n: usize) -> Result<NoiseBlock> {
    if n < 2 {
        return Err(SimError::InvalidResolution { got: n, min: 2 });
    }
    let position = stream.position();
    let sd = (1.0 / n as f64).sqrt();
    let increments = (0..n).map(|_| sd * stream.standard_normal()).collect();
    Ok(NoiseBlock {
        increments,
        seed: stream.seed,
        stream: stream.stream,
        position,
    })
}
