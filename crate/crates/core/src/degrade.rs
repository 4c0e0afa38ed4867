//! Synthetic degradations: additive white Gaussian noise and Bernoulli pixel
//! loss.
//!
//! All randomness comes from ChaCha20 seeded with `seed_from_u64`, which is
//! specified bit-for-bit and therefore portable across platforms. Gaussian
//! draws use `rand_distr::StandardNormal`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imgcore::Image;

/// Parameters of a synthetic degradation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    /// Standard deviation of the additive noise, in intensity units.
    pub noise_sigma: f64,
    /// Probability that a pixel is observed.
    pub keep_probability: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep probability must lie in (0, 1], got {}",
                self.keep_probability
            )));
        }
        Ok(())
    }

    /// Mask and noisy masked observation of `img`. Masking and noise use
    /// independent streams derived from the one seed.
    pub fn apply(&self, img: &Image) -> Result<(Image, Mask)> {
        self.validate()?;
        let mask = make_mask(img.width(), img.height(), self.keep_probability, self.seed)?;
        let noisy = add_noise(img, self.noise_sigma, self.seed.wrapping_add(NOISE_STREAM))?;
        let observed = apply_mask(&noisy, &mask, 0.0)?;
        Ok((observed, mask))
    }
}

const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Per-pixel observation flags, `true` = observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    observed: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} mask entries for a {width}x{height} image",
                observed.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            observed,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            observed: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed.iter().filter(|&&o| o).count() as f64 / self.observed.len() as f64
    }

    pub fn check_dims(&self, img: &Image) -> Result<()> {
        if self.dims() != img.dims() {
            return Err(Error::dims(self.dims(), img.dims()));
        }
        Ok(())
    }

    /// Reads a P5 PGM mask; any nonzero sample counts as observed.
    pub fn load(path: impl AsRef<Path>) -> Result<Mask> {
        let img = crate::imgcore::load_image(path)?;
        let observed = img.samples().iter().map(|&v| v > 0.0).collect();
        Mask::new(img.width(), img.height(), observed)
    }

    /// Writes a P5 PGM mask with 255 for observed pixels and 0 for missing ones.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let pixels: Vec<u8> = self.observed.iter().map(|&o| if o { 255 } else { 0 }).collect();
        fs::write(
            path,
            crate::imgcore::io::encode_pgm(self.width, self.height, &pixels),
        )
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise to every pixel. The result is not clamped.
pub fn add_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut out = img.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for v in out.samples_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * e;
    }
    Ok(out)
}

/// Draws an i.i.d. Bernoulli(`keep_probability`) observation mask.
pub fn make_mask(width: usize, height: usize, keep_probability: f64, seed: u64) -> Result<Mask> {
    if !(keep_probability > 0.0 && keep_probability <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep probability must lie in (0, 1], got {keep_probability}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let observed = (0..width * height)
        .map(|_| rng.random_bool(keep_probability))
        .collect();
    Mask::new(width, height, observed)
}

/// `y = H x`: observed pixels copied, missing pixels set to `fill`.
pub fn apply_mask(img: &Image, mask: &Mask, fill: f64) -> Result<Image> {
    mask.check_dims(img)?;
    let mut out = img.clone();
    for (v, &o) in out.samples_mut().iter_mut().zip(mask.as_slice()) {
        if !o {
            *v = fill;
        }
    }
    Ok(out)
}
