//! Fixed image featurizer standing in for a frozen vision encoder.
//!
//! Near-saturated highlights are treated as missing data: they are inpainted
//! from their surroundings before any other feature is computed, and only
//! their area is reported. Lesion cues come from band-pass responses inside
//! the central region; the background is summarized on the border ring by
//! its stripe orientation, brightness and contrast. Masks are never
//! consulted.

use crate::counterfactual::blur::{blur_plane, gaussian_kernel};
use crate::counterfactual::RasterImage;
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 14;

pub const FEATURE_NAMES: [&str; OBS_DIM] = [
    "bright_large_peak",
    "dark_large_peak",
    "bright_small_peak",
    "dark_small_peak",
    "bright_small_area",
    "dark_small_area",
    "bright_large_area",
    "dark_large_area",
    "stripe_cos2",
    "stripe_sin2",
    "border_level",
    "border_contrast",
    "highlight_area",
    "central_highlight_area",
];

/// Border ring width as a fraction of the shorter side.
const RING: f64 = 0.125;
const SMALL_THRESHOLD: f64 = 0.06;
const LARGE_THRESHOLD: f64 = 0.08;
/// Pixels at or above this level count as specular highlights.
pub const HIGHLIGHT_LEVEL: f64 = 0.88;
/// Highlights are grown by this many pixels before inpainting so their soft
/// rims go too.
const HIGHLIGHT_GROW: isize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn mean_plane(image: &RasterImage) -> Vec<f64> {
    let c = image.channels();
    image
        .values()
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f64>() / c as f64)
        .collect()
}

fn grow(mask: &[bool], h: usize, w: usize, r: isize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !mask[(y * w as isize + x) as usize] {
                continue;
            }
            for yy in (y - r).max(0)..(y + r + 1).min(h as isize) {
                for xx in (x - r).max(0)..(x + r + 1).min(w as isize) {
                    out[(yy * w as isize + xx) as usize] = true;
                }
            }
        }
    }
    out
}

/// Replaces masked pixels by a normalized wide blur of the unmasked ones.
fn inpaint(plane: &[f64], hole: &[bool], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    if !hole.iter().any(|b| *b) {
        return plane.to_vec();
    }
    let keep: Vec<f64> = hole.iter().map(|b| if *b { 0.0 } else { 1.0 }).collect();
    let weighted: Vec<f64> = plane.iter().zip(&keep).map(|(v, k)| v * k).collect();
    let num = blur_plane(&weighted, h, w, kernel);
    let den = blur_plane(&keep, h, w, kernel);
    plane
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if hole[i] && den[i] > 1e-6 {
                num[i] / den[i]
            } else {
                *v
            }
        })
        .collect()
}

pub fn observe(image: &RasterImage) -> Result<Observation> {
    let (h, w) = (image.height(), image.width());
    if h < 16 || w < 16 {
        return Err(Error::contract(format!(
            "image {h}x{w} too small to featurize"
        )));
    }
    let raw = mean_plane(image);
    let kernel = |sigma: f64| gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize);
    let (k_fine, k_mid, k_coarse) = (kernel(0.8)?, kernel(2.0)?, kernel(6.0)?);
    let highlight: Vec<bool> = raw.iter().map(|v| *v >= HIGHLIGHT_LEVEL).collect();
    let plane = inpaint(
        &raw,
        &grow(&highlight, h, w, HIGHLIGHT_GROW),
        h,
        w,
        &k_coarse,
    );
    let fine = blur_plane(&plane, h, w, &k_fine);
    let mid = blur_plane(&plane, h, w, &k_mid);
    let coarse = blur_plane(&plane, h, w, &k_coarse);
    let ring = ((h.min(w) as f64) * RING).round() as usize;
    let margin = ring + ring / 2;

    let mut peaks = [0.0f64; 4];
    let mut areas = [0usize; 4];
    let mut n_centre = 0usize;
    let mut central_highlight = 0usize;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let i = y * w + x;
            let large = mid[i] - coarse[i];
            let small = fine[i] - mid[i];
            let resp = [large, -large, small, -small];
            for (p, r) in peaks.iter_mut().zip(resp) {
                *p = p.max(r);
            }
            areas[0] += usize::from(small > SMALL_THRESHOLD);
            areas[1] += usize::from(-small > SMALL_THRESHOLD);
            areas[2] += usize::from(large > LARGE_THRESHOLD);
            areas[3] += usize::from(-large > LARGE_THRESHOLD);
            central_highlight += usize::from(highlight[i]);
            n_centre += 1;
        }
    }
    let frac = |a: usize| a as f64 / n_centre as f64;

    let (mut jxx, mut jyy, mut jxy) = (0.0, 0.0, 0.0);
    let mut ring_vals = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let inner = y >= ring && y < h - ring && x >= ring && x < w - ring;
            if inner {
                continue;
            }
            let gx = 0.5 * (mid[y * w + x + 1] - mid[y * w + x - 1]);
            let gy = 0.5 * (mid[(y + 1) * w + x] - mid[(y - 1) * w + x]);
            jxx += gx * gx;
            jyy += gy * gy;
            jxy += gx * gy;
            ring_vals.push(plane[y * w + x]);
        }
    }
    let trace = (jxx + jyy).max(1e-12);
    let level = crate::math::mean(&ring_vals);
    let contrast = crate::math::std_pop(&ring_vals);

    Ok(Observation(vec![
        2.8 * peaks[0],
        2.8 * peaks[1],
        4.2 * peaks[2],
        4.2 * peaks[3],
        14.0 * frac(areas[0]),
        14.0 * frac(areas[1]),
        7.0 * frac(areas[2]),
        7.0 * frac(areas[3]),
        2.0 * (jxx - jyy) / trace,
        2.0 * (2.0 * jxy) / trace,
        10.0 * (level - 0.47),
        25.0 * (contrast - 0.05),
        20.0 * highlight.iter().filter(|b| **b).count() as f64 / (h * w) as f64,
        20.0 * frac(central_highlight),
    ]))
}
