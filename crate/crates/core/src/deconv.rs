//! Richardson-Lucy deconvolution with a known PSF.

use thiserror::Error;

use crate::image::Image;
use crate::synth::{convolve, Boundary, Psf, SynthError, PSF_SUM_TOLERANCE};

#[derive(Debug, Error)]
pub enum DeconvError {
    #[error("kernel error: {0}")]
    Kernel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlConfig {
    pub iterations: usize,
    /// Added to the reblurred estimate before dividing.
    pub epsilon: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            epsilon: 1e-12,
        }
    }
}

/// Runs the multiplicative updates and returns the final estimate without
/// clamping. `observe(k, estimate)` is called for `k = 0..=iterations`.
///
/// `u[k+1] = u[k] * (flip(psf) * (blurred / (psf * u[k] + eps)))`, `u[0] = blurred`,
/// with circular convolution throughout.
pub fn richardson_lucy_observed(
    blurred: &Image,
    psf: &Psf,
    config: &RlConfig,
    mut observe: impl FnMut(usize, &Image),
) -> Result<Image, DeconvError> {
    if !(config.epsilon > 0.0) {
        return Err(DeconvError::Config(format!("epsilon must be > 0, got {}", config.epsilon)));
    }
    if (psf.sum() - 1.0).abs() > PSF_SUM_TOLERANCE {
        return Err(DeconvError::Kernel(format!("psf sums to {}", psf.sum())));
    }
    if let Some(v) = blurred.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(DeconvError::Config(format!("blurred image has negative or NaN value {v}")));
    }
    let flipped = psf.flipped();
    let mut u = blurred.clone();
    observe(0, &u);
    for k in 1..=config.iterations {
        let reblurred = convolve(&u, psf, Boundary::Circular)?;
        let ratio = Image::new(
            blurred.height(),
            blurred.width(),
            blurred
                .data()
                .iter()
                .zip(reblurred.data())
                .map(|(b, e)| b / (e + config.epsilon))
                .collect(),
        )
        .expect("shape preserved");
        let correction = convolve(&ratio, &flipped, Boundary::Circular)?;
        u.data_mut()
            .iter_mut()
            .zip(correction.data())
            .for_each(|(x, c)| *x *= c);
        observe(k, &u);
    }
    Ok(u)
}

/// Richardson-Lucy estimate clamped to `[0, 1]`.
pub fn richardson_lucy(blurred: &Image, psf: &Psf, config: &RlConfig) -> Result<Image, DeconvError> {
    Ok(richardson_lucy_observed(blurred, psf, config, |_, _| {})?.clamped())
}
