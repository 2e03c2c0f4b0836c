use super::raster::RasterImage;
use crate::error::{Error, Result};

/// Discrete Gaussian taps `k[-radius..=radius]`, normalized to sum to one.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    if radius == 0 {
        return Err(Error::contract("blur radius must be at least 1"));
    }
    let r = radius as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| {
            let x = i as f64 / sigma;
            (-0.5 * x * x).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Mirror an out-of-range coordinate back into `0..n` without repeating the
/// edge sample (`-1 -> 1`, `n -> n-2`).
#[inline]
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// One 1-D pass. Written as `x_center + Σ k_i (x_i - x_center)`, which equals
/// `Σ k_i x_i` for a unit-sum kernel and keeps constant signals bit-exact.
fn convolve_line(src: &[f64], dst: &mut [f64], kernel: &[f64]) {
    let n = src.len();
    let r = kernel.len() / 2;
    let padded: Vec<f64> = (0..n + 2 * r)
        .map(|t| src[reflect(t as i64 - r as i64, n)])
        .collect();
    for (i, out) in dst.iter_mut().enumerate() {
        let center = src[i];
        let mut acc = 0.0;
        for (k, x) in kernel.iter().zip(&padded[i..]) {
            acc += k * (x - center);
        }
        *out = center + acc;
    }
}

/// Separable Gaussian blur with reflect padding, applied per channel.
pub fn gaussian_blur(image: &RasterImage, sigma: f64, radius: usize) -> Result<RasterImage> {
    let kernel = gaussian_kernel(sigma, radius)?;
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut out = vec![0.0; h * w * c];
    let mut row = vec![0.0; w];
    let mut row_out = vec![0.0; w];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    let mut plane = vec![0.0; h * w];
    for ch in 0..c {
        for y in 0..h {
            for (x, v) in row.iter_mut().enumerate() {
                *v = image.get(y, x, ch);
            }
            convolve_line(&row, &mut row_out, &kernel);
            plane[y * w..(y + 1) * w].copy_from_slice(&row_out);
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = plane[y * w + x];
            }
            convolve_line(&col, &mut col_out, &kernel);
            for y in 0..h {
                out[(y * w + x) * c + ch] = col_out[y];
            }
        }
    }
    RasterImage::from_clamped(h, w, c, out)
}

/// Single-channel plane blur used by the observation featurizer.
pub(crate) fn blur_plane(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let mut tmp = vec![0.0; h * w];
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        convolve_line(
            &plane[y * w..(y + 1) * w],
            &mut tmp[y * w..(y + 1) * w],
            kernel,
        );
    }
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        convolve_line(&col, &mut col_out, kernel);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    out
}
