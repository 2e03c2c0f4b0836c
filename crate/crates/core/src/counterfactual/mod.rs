//! Pixel-space counterfactuals: erase a lesion by blurring or filling the
//! masked pixels, and perturb images with bright spot artifacts.

pub mod blur;
pub mod raster;
pub mod spots;

use serde::{Deserialize, Serialize};

pub use blur::{gaussian_blur, gaussian_kernel};
pub use raster::{LesionMask, RasterImage};
pub use spots::{apply_spot_interference, SpotInterferenceConfig};

use crate::error::{Error, Result};

/// How masked pixels are replaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskStrategy {
    GaussianBlur { sigma: f64, radius: usize },
    SolidFill { value: f64 },
}

impl MaskStrategy {
    pub fn blur() -> Self {
        MaskStrategy::GaussianBlur {
            sigma: 8.0,
            radius: 24,
        }
    }

    pub fn white() -> Self {
        MaskStrategy::SolidFill { value: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskStrategy::GaussianBlur { sigma, radius } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config("strategy.sigma", "must be positive"));
                }
                if radius == 0 {
                    return Err(Error::config("strategy.radius", "must be at least 1"));
                }
            }
            MaskStrategy::SolidFill { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::config("strategy.value", "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::GaussianBlur { .. } => "gaussian_blur",
            MaskStrategy::SolidFill { .. } => "solid_fill",
        }
    }
}

impl Default for MaskStrategy {
    fn default() -> Self {
        Self::blur()
    }
}

/// `x ⊙ (1 − M) + T(x) ⊙ M` where `T` blurs the whole image or paints a
/// constant. Unmasked pixels are copied verbatim.
pub fn synthesize_counterfactual(
    image: &RasterImage,
    mask: &LesionMask,
    strategy: &MaskStrategy,
) -> Result<RasterImage> {
    if !mask.matches(image) {
        return Err(Error::contract(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    strategy.validate()?;
    if mask.is_empty() {
        return Ok(image.clone());
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let replacement = match *strategy {
        MaskStrategy::GaussianBlur { sigma, radius } => gaussian_blur(image, sigma, radius)?,
        MaskStrategy::SolidFill { value } => RasterImage::filled(h, w, c, value)?,
    };
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                for ch in 0..c {
                    out.set(y, x, ch, replacement.get(y, x, ch));
                }
            }
        }
    }
    Ok(out)
}
