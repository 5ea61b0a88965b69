//! Reproducible random streams and the samplers built on them.
//!
//! A stream is a ChaCha8 generator keyed by `(seed, stream_id)`. ChaCha keeps
//! the stream id in its nonce, so distinct ids give independent substreams of
//! the same seed without any coordination between the users.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Geometric, Poisson, StandardNormal};

use crate::error::{invalid, SimError};

/// FWHM of a Gaussian in units of its standard deviation, `2·sqrt(2·ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

pub fn sigma_to_fwhm(sigma: f64) -> f64 {
    sigma * FWHM_PER_SIGMA
}

/// Stable 64-bit FNV-1a, used to turn stream labels into stream ids.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    /// Stream for a named consumer ("source", "detector-a", ...).
    pub fn named(seed: u64, label: &str) -> Self {
        Self::new(seed, label_hash(label))
    }

    /// Child stream derived from this stream's identity (not its position).
    pub fn child(&self, label: &str) -> Self {
        let id = self.stream_id ^ label_hash(label).rotate_left(17);
        Self::new(self.seed, id)
    }

    /// Child stream for the `index`-th point of a sweep.
    pub fn indexed(&self, index: u64) -> Self {
        let id = self
            .stream_id
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Self::new(self.seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.uniform() < p
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Exponential sample with the given mean (any time unit).
    pub fn exponential(&mut self, mean: f64) -> Result<f64, SimError> {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(invalid("mean", format!("exponential mean must be > 0, got {mean}")));
        }
        let e: f64 = Exp1.sample(&mut self.rng);
        Ok(e * mean)
    }

    /// Gaussian sample around `center` with the given full width at half maximum.
    pub fn gaussian_fwhm(&mut self, center: f64, fwhm: f64) -> Result<f64, SimError> {
        if !(fwhm >= 0.0) {
            return Err(invalid("fwhm", format!("must be >= 0, got {fwhm}")));
        }
        if fwhm == 0.0 {
            return Ok(center);
        }
        Ok(center + fwhm_to_sigma(fwhm) * self.standard_normal())
    }

    pub fn poisson(&mut self, mean: f64) -> Result<u64, SimError> {
        if !(mean >= 0.0) || !mean.is_finite() {
            return Err(invalid("mean", format!("poisson mean must be >= 0, got {mean}")));
        }
        if mean == 0.0 {
            return Ok(0);
        }
        let d = Poisson::new(mean).map_err(|e| invalid("mean", e.to_string()))?;
        let k: f64 = d.sample(&mut self.rng);
        Ok(k as u64)
    }

    /// Poisson conditioned on at least one event.
    pub fn poisson_nonzero(&mut self, mean: f64) -> Result<u64, SimError> {
        if !(mean > 0.0) {
            return Err(invalid("mean", "zero-truncated poisson needs mean > 0"));
        }
        if mean < 1e-3 {
            // P(k >= 2 | k >= 1) < mean/2; inversion over the first two terms suffices
            let p2 = mean / 2.0;
            return Ok(if self.uniform() < p2 { 2 } else { 1 });
        }
        loop {
            let k = self.poisson(mean)?;
            if k > 0 {
                return Ok(k);
            }
        }
    }

    /// Number of failures before the first success with success probability `p`.
    pub fn geometric(&mut self, p: f64) -> Result<u64, SimError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid(
                "p",
                format!("geometric probability must be in (0, 1], got {p}"),
            ));
        }
        let d = Geometric::new(p).map_err(|e| invalid("p", e.to_string()))?;
        Ok(d.sample(&mut self.rng))
    }
}
