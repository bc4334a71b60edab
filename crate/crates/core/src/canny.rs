//! Canny edge detection on single-channel rasters.
//!
//! Pipeline: separable Gaussian blur (radius `ceil(3 sigma)`, replicated
//! borders), 3x3 Sobel gradients, non-maximum suppression with the gradient
//! direction quantized to 0/45/90/135 degrees, then double-threshold
//! hysteresis over 8-connected neighbours.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub blur_sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low_threshold: 50.0,
            high_threshold: 150.0,
            blur_sigma: 1.4,
        }
    }
}

impl CannyParams {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.low_threshold, self.high_threshold);
        if !(0.0..=255.0).contains(&lo) || !(0.0..=255.0).contains(&hi) {
            return Err(Error::Input(format!(
                "canny thresholds must lie in [0, 255], got low={lo} high={hi}"
            )));
        }
        if lo > hi {
            return Err(Error::Input(format!(
                "canny low threshold {lo} exceeds high threshold {hi}"
            )));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Input(format!(
                "blur sigma must be finite and non-negative, got {}",
                self.blur_sigma
            )));
        }
        Ok(())
    }
}

pub fn canny_edges(gray: &Raster, params: &CannyParams) -> Result<BinaryMask> {
    if gray.channels() != 1 {
        return Err(Error::Input(format!(
            "canny expects a single-channel raster, got {} channels",
            gray.channels()
        )));
    }
    params.validate()?;

    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let pixels: Vec<f64> = gray.data().iter().map(|&v| v as f64).collect();
    let blurred = gaussian_blur(&pixels, w, h, params.blur_sigma);
    let (magnitude, direction) = sobel(&blurred, w, h);
    let thin = non_max_suppression(&magnitude, &direction, w, h);
    let bits = hysteresis(&thin, w, h, params.low_threshold, params.high_threshold);
    BinaryMask::from_bits(gray.width(), gray.height(), bits)
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return src.to_vec();
    }
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * row[clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gradient direction bin: 0 = horizontal gradient, 1 = 45 deg, 2 = vertical, 3 = 135 deg.
fn sobel(src: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<u8>) {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        src[y * w + x]
    };
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[i] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    (mag, dir)
}

fn non_max_suppression(mag: &[f64], dir: &[u8], w: usize, h: usize) -> Vec<f64> {
    let get = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            // Unit step along the gradient, in image coordinates (y grows downward).
            let (dx, dy) = match dir[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            let behind = get(x - dx, y - dy);
            let ahead = get(x + dx, y + dy);
            // Strict on one side so a two-pixel plateau keeps exactly one pixel;
            // the tolerance absorbs rounding noise from the blur so plateaus stay ties.
            let tol = 1e-9 * m;
            if m > behind + tol && m >= ahead - tol {
                out[i] = m;
            }
        }
    }
    out
}

fn hysteresis(mag: &[f64], w: usize, h: usize, low: f64, high: f64) -> Vec<bool> {
    let mut edge = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in mag.iter().enumerate() {
        if m > 0.0 && m >= high {
            edge[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && mag[j] > 0.0 && mag[j] >= low {
                    edge[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edge
}
