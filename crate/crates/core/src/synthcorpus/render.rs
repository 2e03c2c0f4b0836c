//! Pixel-space generator: a striped background driven only by the spurious
//! latents, plus parametric lesion glyphs with exact footprints.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::templates::{style_traits, CLASSES};
use crate::counterfactual::{LesionMask, RasterImage};
use crate::error::{Error, Result};

const STRIPE_PERIOD: f64 = 12.0;
const NOISE_STD: f64 = 0.012;
/// Per-channel gains for colour output.
const CHANNEL_GAIN: [f64; 3] = [1.0, 0.82, 0.76];
/// Tissue brightness is compressed smoothly above the knee and never reaches
/// the ceiling, which is reserved for specular highlights.
pub const TISSUE_KNEE: f64 = 0.72;
pub const TISSUE_CEILING: f64 = 0.85;

fn tissue_response(v: f64) -> f64 {
    if v <= TISSUE_KNEE {
        v
    } else {
        let room = TISSUE_CEILING - TISSUE_KNEE;
        TISSUE_KNEE + room * ((v - TISSUE_KNEE) / room).tanh()
    }
}

/// Spurious latents: everything about the background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundLatents {
    pub style: usize,
    pub phase: f64,
    pub level_jitter: f64,
    /// Coefficients of a faint low-frequency shading.
    pub shading: [f64; 4],
    pub noise_seed: u64,
}

/// Causal latents for one lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionLatents {
    pub class: usize,
    pub cy: f64,
    pub cx: f64,
    /// Size in `[0, 1]`.
    pub size: f64,
    /// Contrast in `[0, 1]`.
    pub contrast: f64,
    pub angle: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLatents {
    pub background: BackgroundLatents,
    pub lesions: Vec<LesionLatents>,
}

impl BackgroundLatents {
    pub fn sample<R: Rng>(rng: &mut R, style: usize) -> Self {
        Self {
            style,
            phase: rng.random_range(0.0..2.0 * PI),
            level_jitter: rng.random_range(-0.02..0.02),
            shading: std::array::from_fn(|_| rng.random_range(-0.015..0.015)),
            noise_seed: rng.random(),
        }
    }
}

impl LesionLatents {
    /// Draws a lesion of `class` centred near `(cy, cx)`.
    pub fn sample<R: Rng>(rng: &mut R, class: usize, cy: f64, cx: f64, jitter: f64) -> Self {
        Self {
            class,
            cy: cy + rng.random_range(-jitter..=jitter),
            cx: cx + rng.random_range(-jitter..=jitter),
            size: rng.random(),
            contrast: rng.random(),
            angle: rng.random_range(0.0..PI),
            seed: rng.random(),
        }
    }
}

/// Lesion centres for `n` lesions on an `h × w` canvas.
pub fn lesion_sites<R: Rng>(rng: &mut R, n: usize, h: usize, w: usize) -> Vec<(f64, f64, f64)> {
    let (my, mx) = (h as f64 / 2.0, w as f64 / 2.0);
    match n {
        0 => vec![],
        1 => vec![(my, mx, 5.0)],
        _ => {
            let off = 11.0;
            if rng.random_bool(0.5) {
                vec![(my, mx - off, 2.0), (my, mx + off, 2.0)]
            } else {
                vec![(my - off, mx, 2.0), (my + off, mx, 2.0)]
            }
        }
    }
}

/// Background intensity plane in `[0, 1]`.
pub fn render_background(bg: &BackgroundLatents, n_styles: usize, h: usize, w: usize) -> Vec<f64> {
    let t = style_traits(bg.style, n_styles);
    let level = if t.bright { 0.56 } else { 0.38 } + bg.level_jitter;
    let amp = if t.clear { 0.09 } else { 0.045 };
    let (ct, st) = (t.theta.cos(), t.theta.sin());
    let mut rng = ChaCha8Rng::seed_from_u64(bg.noise_seed);
    let mut plane = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let stripe = amp * (2.0 * PI * (xf * ct + yf * st) / STRIPE_PERIOD + bg.phase).sin();
            let (u, v) = (xf / w as f64, yf / h as f64);
            let shade = bg.shading[0] * (PI * u).cos()
                + bg.shading[1] * (PI * v).cos()
                + bg.shading[2] * (2.0 * PI * u).sin()
                + bg.shading[3] * (2.0 * PI * v).sin();
            let n: f64 = rng.sample(StandardNormal);
            plane.push((level + stripe + shade + NOISE_STD * n).clamp(0.0, 1.0));
        }
    }
    plane
}

/// Footprint pixels of one glyph with the signed intensity offset applied at
/// each, relative to the background.
pub fn glyph(lesion: &LesionLatents, h: usize, w: usize) -> Result<Vec<(usize, f64)>> {
    if lesion.class >= CLASSES.len() {
        return Err(Error::config(
            "lesion.class",
            format!("unknown class index {}", lesion.class),
        ));
    }
    let contrast = 0.24 + 0.14 * lesion.contrast;
    let mut out = Vec::new();
    let mut visit = |f: &dyn Fn(f64, f64) -> Option<f64>| {
        for y in 0..h {
            for x in 0..w {
                if let Some(v) = f(y as f64 + 0.5, x as f64 + 0.5) {
                    out.push((y * w + x, v));
                }
            }
        }
    };
    match CLASSES[lesion.class] {
        "polyp" | "ulcer" => {
            let r = 4.0 + 2.0 * lesion.size;
            let sign = if lesion.class == 0 { 1.0 } else { -1.0 };
            visit(&|y, x| {
                let d2 = ((y - lesion.cy).powi(2) + (x - lesion.cx).powi(2)) / (r * r);
                (d2 <= 1.0).then_some(sign * contrast * (0.8 + 0.2 * (1.0 - d2)))
            });
        }
        "erosion" => {
            let half = 5.0 + 3.0 * lesion.size;
            let (dy, dx) = (lesion.angle.sin(), lesion.angle.cos());
            visit(&|y, x| {
                let (py, px) = (y - lesion.cy, x - lesion.cx);
                let along = (py * dy + px * dx).clamp(-half, half);
                let d = ((py - along * dy).powi(2) + (px - along * dx).powi(2)).sqrt();
                (d <= 1.0).then_some(-0.9 * contrast)
            });
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(lesion.seed);
            let spread = 3.5 + 1.5 * lesion.size;
            let dots: Vec<(f64, f64)> = (0..5)
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let r = spread * rng.random::<f64>().sqrt();
                    (lesion.cy + r * a.sin(), lesion.cx + r * a.cos())
                })
                .collect();
            visit(&|y, x| {
                dots.iter()
                    .any(|(cy, cx)| (y - cy).powi(2) + (x - cx).powi(2) <= 1.3 * 1.3)
                    .then_some(contrast)
            });
        }
    }
    Ok(out)
}

/// Renders image and mask; the image is quantized to `f32` precision.
pub fn render(
    latents: &RecordLatents,
    n_styles: usize,
    h: usize,
    w: usize,
    channels: usize,
) -> Result<(RasterImage, LesionMask)> {
    if latents.background.style >= n_styles {
        return Err(Error::config(
            "background.style",
            format!("style {} outside 0..{n_styles}", latents.background.style),
        ));
    }
    let mut plane = render_background(&latents.background, n_styles, h, w);
    let mut mask = LesionMask::empty(h, w);
    for lesion in &latents.lesions {
        for (i, delta) in glyph(lesion, h, w)? {
            plane[i] = (plane[i] + delta).clamp(0.0, 1.0);
            mask.set(i / w, i % w, true);
        }
    }
    plane.iter_mut().for_each(|v| *v = tissue_response(*v));
    let values = if channels == 1 {
        plane
    } else {
        plane
            .iter()
            .flat_map(|v| CHANNEL_GAIN.iter().take(channels).map(move |g| v * g))
            .collect()
    };
    let mut image = RasterImage::from_clamped(h, w, channels, values)?;
    image.quantize();
    Ok((image, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg(style: usize) -> BackgroundLatents {
        BackgroundLatents::sample(&mut ChaCha8Rng::seed_from_u64(style as u64), style)
    }

    fn lesion(class: usize, cy: f64, cx: f64) -> LesionLatents {
        LesionLatents::sample(
            &mut ChaCha8Rng::seed_from_u64(class as u64 + 10),
            class,
            cy,
            cx,
            0.0,
        )
    }

    #[test]
    fn glyphs_have_footprints_inside_centre() {
        for class in 0..4 {
            let g = glyph(&lesion(class, 32.0, 32.0), 64, 64).unwrap();
            assert!(!g.is_empty());
            for (i, _) in g {
                let (y, x) = (i / 64, i % 64);
                assert!((16..48).contains(&y) && (16..48).contains(&x));
            }
        }
        assert!(glyph(&lesion(4, 32.0, 32.0), 64, 64).is_err());
    }

    #[test]
    fn pair_mask_is_union_of_glyph_footprints() {
        let lat = RecordLatents {
            background: bg(3),
            lesions: vec![lesion(0, 32.0, 21.0), lesion(2, 32.0, 43.0)],
        };
        let (_, mask) = render(&lat, 11, 64, 64, 1).unwrap();
        let mut want = LesionMask::empty(64, 64);
        for l in &lat.lesions {
            let mut m = LesionMask::empty(64, 64);
            for (i, _) in glyph(l, 64, 64).unwrap() {
                m.set(i / 64, i % 64, true);
            }
            want = want.union(&m).unwrap();
        }
        assert_eq!(mask, want);
    }

    #[test]
    fn lesions_touch_only_their_footprint() {
        let lat = RecordLatents {
            background: bg(5),
            lesions: vec![lesion(1, 30.0, 33.0)],
        };
        let (img, mask) = render(&lat, 11, 64, 64, 1).unwrap();
        let plain = render(
            &RecordLatents {
                lesions: vec![],
                ..lat.clone()
            },
            11,
            64,
            64,
            1,
        )
        .unwrap()
        .0;
        for y in 0..64 {
            for x in 0..64 {
                if !mask.get(y, x) {
                    assert_eq!(img.get(y, x, 0), plain.get(y, x, 0));
                }
            }
        }
        assert!(mask.count() > 20);
    }

    #[test]
    fn tissue_stays_below_ceiling() {
        assert_eq!(tissue_response(0.5), 0.5);
        assert!(tissue_response(1.0) < TISSUE_CEILING);
        assert!(tissue_response(0.8) > tissue_response(0.75));
        for class in 0..4 {
            let lat = RecordLatents {
                background: bg(0),
                lesions: vec![lesion(class, 32.0, 32.0)],
            };
            let (img, _) = render(&lat, 11, 64, 64, 1).unwrap();
            assert!(img.values().iter().all(|v| *v < TISSUE_CEILING + 0.01));
        }
    }

    #[test]
    fn colour_output_scales_channels() {
        let lat = RecordLatents {
            background: bg(1),
            lesions: vec![],
        };
        let (img, _) = render(&lat, 11, 8, 8, 3).unwrap();
        assert!(img.get(2, 2, 1) < img.get(2, 2, 0));
        assert!(render(
            &RecordLatents {
                background: bg(12),
                lesions: vec![]
            },
            11,
            8,
            8,
            1
        )
        .is_err());
    }
}
