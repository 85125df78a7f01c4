use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{StreakKind, StreakLayer};
use crate::error::{contract_err, Result};

/// Constant gray level used as the snow color map.
pub const SNOW_COLOR: f32 = 0.85;

/// Shape parameters of a procedural rain or snow layer.
///
/// `density` is the expected fraction of covered pixels before overlap;
/// `angle_deg` is measured from the horizontal (90 = vertical fall);
/// `length` is the rain streak length in pixels; `scale` the peak intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreakParams {
    pub density: f64,
    pub angle_deg: f64,
    pub length: f64,
    pub scale: f64,
}

impl Default for StreakParams {
    fn default() -> Self {
        Self {
            density: 0.1,
            angle_deg: 90.0,
            length: 12.0,
            scale: 0.8,
        }
    }
}

impl StreakParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(contract_err!("streak density {} outside [0, 1]", self.density));
        }
        if !(70.0..=110.0).contains(&self.angle_deg) {
            return Err(contract_err!("streak angle {} outside [70, 110] degrees", self.angle_deg));
        }
        if !(1.0..=64.0).contains(&self.length) {
            return Err(contract_err!("streak length {} outside [1, 64]", self.length));
        }
        if !(0.0..=1.0).contains(&self.scale) {
            return Err(contract_err!("streak scale {} outside [0, 1]", self.scale));
        }
        Ok(())
    }

    /// Draws parameters from the ranges used for dataset synthesis.
    pub fn sample<R: Rng + ?Sized>(kind: StreakKind, rng: &mut R) -> Self {
        match kind {
            StreakKind::Rain => Self {
                density: rng.random_range(0.04..0.12),
                angle_deg: rng.random_range(70.0..110.0),
                length: rng.random_range(8.0..20.0),
                scale: rng.random_range(0.5..0.9),
            },
            StreakKind::Snow => Self {
                density: rng.random_range(0.05..0.15),
                angle_deg: rng.random_range(70.0..110.0),
                length: 1.0,
                scale: rng.random_range(0.7..1.0),
            },
        }
    }
}

/// Splats `v` at a sub-pixel position with bilinear weights, keeping the max.
fn splat(mask: &mut [f32], h: usize, w: usize, py: f64, px: f64, v: f64) {
    let (y0, x0) = (py.floor(), px.floor());
    let (fy, fx) = (py - y0, px - x0);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (y, x) = (y0 as isize + dy, x0 as isize + dx);
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                continue;
            }
            let i = y as usize * w + x as usize;
            let s = (v * wy * wx) as f32;
            if s > mask[i] {
                mask[i] = s;
            }
        }
    }
}

/// Rain: thresholded white noise seeds smeared along the fall direction.
fn rain_mask(p: &StreakParams, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut mask = vec![0f32; h * w];
    let threshold = p.density / p.length;
    let (dy, dx) = (p.angle_deg.to_radians().sin(), p.angle_deg.to_radians().cos());
    let steps = (2.0 * p.length).ceil() as usize;
    for y in 0..h {
        for x in 0..w {
            if rng.random::<f64>() >= threshold {
                continue;
            }
            let intensity = p.scale * rng.random_range(0.6..1.0);
            for s in 0..=steps {
                let t = s as f64 * p.length / steps as f64;
                splat(&mut mask, h, w, y as f64 + t * dy, x as f64 + t * dx, intensity);
            }
        }
    }
    mask
}

/// Snow: Poisson-scattered soft discs of radius 1–4 px, opacity 0.4–1.0.
fn snow_mask(p: &StreakParams, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut keep = vec![1f64; h * w];
    let mean = p.density * (h * w) as f64 / 16.0;
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..count {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let radius: f64 = rng.random_range(1.0..=4.0);
        let opacity = p.scale * rng.random_range(0.4..=1.0);
        let sigma = radius / 2.0;
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil() as usize).min(h - 1);
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                if d2 > radius * radius {
                    continue;
                }
                let s = opacity * (-d2 / (2.0 * sigma * sigma)).exp();
                keep[y * w + x] *= 1.0 - s;
            }
        }
    }
    keep.into_iter().map(|k| (1.0 - k) as f32).collect()
}

/// Procedural rain or snow layer; identical seeds give identical layers.
pub fn generate_streaks(kind: StreakKind, params: &StreakParams, h: usize, w: usize, seed: u64) -> Result<StreakLayer> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        StreakKind::Rain => StreakLayer::rain(h, w, rain_mask(params, h, w, &mut rng)),
        StreakKind::Snow => StreakLayer::snow(h, w, snow_mask(params, h, w, &mut rng), vec![SNOW_COLOR; h * w]),
    }
}
