use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dc_to_rgb, rgb_to_dc, GaussianSet};
use crate::error::{Error, Result};

/// Per-channel affine recoloring with additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingParams {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
    pub noise_std: f64,
}

impl Default for LightingParams {
    fn default() -> Self {
        Self {
            scale: [1.0; 3],
            offset: [0.0; 3],
            noise_std: 0.0,
        }
    }
}

impl LightingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Maps each Gaussian's diffuse color `c` to `s*c + o + noise`. Scale and
/// offset are shared across the set; noise is drawn per Gaussian and channel
/// (Gaussian-major order) from a stream seeded by `seed`. Only the degree-0
/// band changes.
pub fn recolor_diffuse(set: &GaussianSet, p: &LightingParams, seed: u64) -> Result<GaussianSet> {
    p.validate()?;
    let k = set.coeffs_per_channel();
    let mut sh = set.sh_coefficients().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, p.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    for coeffs in sh.chunks_exact_mut(3 * k) {
        for c in 0..3 {
            let delta = if p.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let color = dc_to_rgb(coeffs[c * k]);
            coeffs[c * k] = rgb_to_dc(p.scale[c] * color + p.offset[c] + delta);
        }
    }
    Ok(set.with_sh(sh))
}
