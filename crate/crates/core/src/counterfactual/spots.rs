//! Bright disc artifacts, a stand-in for bubbles and specular highlights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::RasterImage;
use crate::error::{Error, Result};

/// Placement attempts per spot before overlap is allowed.
const MAX_TRIES: usize = 100;
/// Fraction of the radius over which a disc fades out.
const EDGE_SOFTNESS: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpotInterferenceConfig {
    pub n_spots: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub intensity: f64,
    pub seed: u64,
}

impl Default for SpotInterferenceConfig {
    fn default() -> Self {
        Self {
            n_spots: 6,
            radius_min: 2.0,
            radius_max: 5.0,
            intensity: 0.95,
            seed: 101,
        }
    }
}

impl SpotInterferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_min > 0.0 && self.radius_min.is_finite()) {
            return Err(Error::config("spots.radius_min", "must be positive"));
        }
        if !(self.radius_max >= self.radius_min && self.radius_max.is_finite()) {
            return Err(Error::config(
                "spots.radius_max",
                "must be at least radius_min",
            ));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::config("spots.intensity", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Opacity of a disc of radius `r` at distance `d` from its center: opaque in
/// the core, falling linearly to zero at the rim.
fn disc_alpha(d: f64, r: f64) -> f64 {
    let core = r * (1.0 - EDGE_SOFTNESS);
    if d <= core {
        1.0
    } else if d >= r {
        0.0
    } else {
        (r - d) / (r - core)
    }
}

#[derive(Debug, Clone, Copy)]
struct Spot {
    cy: f64,
    cx: f64,
    r: f64,
}

fn place_spots(h: usize, w: usize, cfg: &SpotInterferenceConfig) -> Vec<Spot> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut spots: Vec<Spot> = Vec::with_capacity(cfg.n_spots);
    for _ in 0..cfg.n_spots {
        let r = if cfg.radius_max > cfg.radius_min {
            rng.random_range(cfg.radius_min..=cfg.radius_max)
        } else {
            cfg.radius_min
        };
        let mut candidate = None;
        for _ in 0..MAX_TRIES {
            let s = Spot {
                cy: rng.random_range(0.0..h as f64),
                cx: rng.random_range(0.0..w as f64),
                r,
            };
            candidate = Some(s);
            // One pixel of clearance keeps neighbouring discs disconnected.
            let clear = spots
                .iter()
                .all(|o| ((s.cy - o.cy).powi(2) + (s.cx - o.cx).powi(2)).sqrt() > s.r + o.r + 1.5);
            if clear {
                break;
            }
        }
        spots.extend(candidate);
    }
    spots
}

/// Composites `n_spots` soft bright discs at seeded positions.
pub fn apply_spot_interference(
    image: &RasterImage,
    config: &SpotInterferenceConfig,
) -> Result<RasterImage> {
    config.validate()?;
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut out = image.clone();
    for s in place_spots(h, w, config) {
        let y0 = (s.cy - s.r).floor().max(0.0) as usize;
        let y1 = ((s.cy + s.r).ceil() as usize).min(h - 1);
        let x0 = (s.cx - s.r).floor().max(0.0) as usize;
        let x1 = ((s.cx + s.r).ceil() as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((y as f64 + 0.5 - s.cy).powi(2) + (x as f64 + 0.5 - s.cx).powi(2)).sqrt();
                let a = disc_alpha(d, s.r);
                if a == 0.0 {
                    continue;
                }
                for ch in 0..c {
                    let v = out.get(y, x, ch);
                    out.set(y, x, ch, v + a * (config.intensity - v).max(0.0));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 4-connected components of pixels strictly above `t`.
    fn components_above(img: &RasterImage, t: f64) -> usize {
        let (h, w) = (img.height(), img.width());
        let mut seen = vec![false; h * w];
        let mut n = 0;
        for start in 0..h * w {
            if seen[start] || img.get(start / w, start % w, 0) <= t {
                continue;
            }
            n += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (y, x) = ((p / w) as i64, (p % w) as i64);
                for (dy, dx) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && img.get(ny as usize, nx as usize, 0) > t {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        n
    }

    #[test]
    fn no_spots_is_identity() {
        let img = RasterImage::filled(16, 16, 1, 0.3).unwrap();
        let cfg = SpotInterferenceConfig {
            n_spots: 0,
            ..Default::default()
        };
        assert_eq!(apply_spot_interference(&img, &cfg).unwrap(), img);
    }

    #[test]
    fn deterministic_under_seed() {
        let img = RasterImage::filled(32, 32, 3, 0.4).unwrap();
        let cfg = SpotInterferenceConfig::default();
        let a = apply_spot_interference(&img, &cfg).unwrap();
        let b = apply_spot_interference(&img, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = apply_spot_interference(&img, &SpotInterferenceConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn five_spots_make_five_components() {
        let img = RasterImage::filled(64, 64, 1, 0.5).unwrap();
        for seed in 0..20 {
            let cfg = SpotInterferenceConfig {
                n_spots: 5,
                intensity: 0.9,
                seed,
                ..Default::default()
            };
            let out = apply_spot_interference(&img, &cfg).unwrap();
            assert_eq!(components_above(&out, 0.7), 5, "seed {seed}");
        }
    }

    #[test]
    fn never_darkens_and_stays_in_range() {
        let img = RasterImage::new(8, 8, 1, (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
        let cfg = SpotInterferenceConfig {
            n_spots: 4,
            radius_min: 1.0,
            radius_max: 3.0,
            intensity: 0.6,
            seed: 9,
        };
        let out = apply_spot_interference(&img, &cfg).unwrap();
        for (a, b) in img.values().iter().zip(out.values()) {
            assert!(b >= a && *b <= 1.0);
        }
    }

    #[test]
    fn alpha_profile() {
        assert_eq!(disc_alpha(0.0, 5.0), 1.0);
        assert_eq!(disc_alpha(5.0, 5.0), 0.0);
        assert!((disc_alpha(4.0, 5.0) - 0.5).abs() < 1e-12);
        assert!(SpotInterferenceConfig {
            radius_max: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
