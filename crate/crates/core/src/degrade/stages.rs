use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Image;
use crate::error::{contract_err, dim_err, Result};
use crate::numerics::kernels::gaussian_kernel;

const ILLUMINATION_SIGMA: f64 = 3.0;
const ILLUMINATION_FLOOR: f32 = 0.05;

/// Strictly positive per-pixel illumination.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl IlluminationMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dim_err!("illumination map needs {} values", height * width));
        }
        if let Some(v) = data.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(contract_err!("illumination must lie in (0, 1], found {v}"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Separable Gaussian blur of a single plane with clamped borders.
pub(crate) fn blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let k = gaussian_kernel(2 * radius + 1, sigma);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * plane[y * w + clamp(x as isize + j as isize - radius as isize, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - radius as isize, h) * w + x])
                .sum();
        }
    }
    out
}

/// Max-channel initial estimate, Gaussian-smoothed and floored.
pub fn estimate_illumination(img: &Image) -> IlluminationMap {
    let (h, w) = (img.height(), img.width());
    let maxc: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|p| p[0].max(p[1]).max(p[2]) as f64)
        .collect();
    let smooth = blur_plane(&maxc, h, w, ILLUMINATION_SIGMA);
    let data = smooth
        .into_iter()
        .map(|v| (v as f32).clamp(ILLUMINATION_FLOOR, 1.0))
        .collect();
    IlluminationMap::new(h, w, data).expect("floored map is positive")
}

/// Darkens by `L^(γ-1)` and adds zero-mean Gaussian noise of variance `noise_var`.
pub fn apply_low_light(img: &Image, l: &IlluminationMap, gamma: f64, noise_var: f64, seed: u64) -> Result<Image> {
    if gamma < 1.0 || !gamma.is_finite() {
        return Err(contract_err!("gamma must be >= 1, got {gamma}"));
    }
    if noise_var < 0.0 || !noise_var.is_finite() {
        return Err(contract_err!("noise variance must be >= 0, got {noise_var}"));
    }
    if l.height != img.height() || l.width != img.width() {
        return Err(dim_err!("illumination map does not match image size"));
    }
    if l.data.iter().any(|v| *v <= 0.0) {
        return Err(contract_err!("illumination must be strictly positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (noise_var > 0.0).then(|| Normal::new(0.0, noise_var.sqrt()).expect("finite std"));
    let mut out = Vec::with_capacity(img.data().len());
    for (p, &lv) in img.data().chunks_exact(3).zip(&l.data) {
        let gain = (lv as f64).powf(gamma - 1.0);
        for &j in p {
            let eps = noise.map_or(0.0, |n| n.sample(&mut rng));
            out.push((j as f64 * gain + eps) as f32);
        }
    }
    Image::from_clipped(img.height(), img.width(), out)
}

/// Which weather layer a [`StreakLayer`] carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreakKind {
    Rain,
    Snow,
}

/// A per-pixel weather mask in `[0, 1]`; snow also carries its blend color map.
#[derive(Clone, Debug, PartialEq)]
pub struct StreakLayer {
    pub kind: StreakKind,
    height: usize,
    width: usize,
    mask: Vec<f32>,
    chroma: Option<Vec<f32>>,
}

fn check_unit(name: &str, v: &[f32]) -> Result<()> {
    match v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(x) => Err(contract_err!("{name} value {x} outside [0, 1]")),
        None => Ok(()),
    }
}

impl StreakLayer {
    pub fn rain(height: usize, width: usize, mask: Vec<f32>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(dim_err!("rain mask needs {} values", height * width));
        }
        check_unit("rain mask", &mask)?;
        Ok(Self {
            kind: StreakKind::Rain,
            height,
            width,
            mask,
            chroma: None,
        })
    }

    pub fn snow(height: usize, width: usize, mask: Vec<f32>, chroma: Vec<f32>) -> Result<Self> {
        if mask.len() != height * width || chroma.len() != height * width {
            return Err(dim_err!("snow mask and color map need {} values", height * width));
        }
        check_unit("snow mask", &mask)?;
        check_unit("snow color map", &chroma)?;
        Ok(Self {
            kind: StreakKind::Snow,
            height,
            width,
            mask,
            chroma: Some(chroma),
        })
    }

    pub fn mask(&self) -> &[f32] {
        &self.mask
    }

    pub fn chroma(&self) -> Option<&[f32]> {
        self.chroma.as_deref()
    }

    /// Fraction of pixels with a nonzero mask value.
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|v| **v > 0.0).count() as f64 / self.mask.len() as f64
    }

    fn check_size(&self, img: &Image) -> Result<()> {
        if self.height != img.height() || self.width != img.width() {
            return Err(dim_err!(
                "{:?} layer is {}x{}, image is {}x{}",
                self.kind,
                self.height,
                self.width,
                img.height(),
                img.width()
            ));
        }
        Ok(())
    }
}

/// Additive rain: `clip(img + R)`.
pub fn apply_rain(img: &Image, r: &StreakLayer) -> Result<Image> {
    if r.kind != StreakKind::Rain {
        return Err(contract_err!("apply_rain needs a rain layer, got {:?}", r.kind));
    }
    r.check_size(img)?;
    let out = img
        .data()
        .chunks_exact(3)
        .zip(&r.mask)
        .flat_map(|(p, &m)| p.iter().map(move |v| v + m))
        .collect();
    Image::from_clipped(img.height(), img.width(), out)
}

/// Snow blend: `img·(1 − S) + M·S`.
pub fn apply_snow(img: &Image, s: &StreakLayer) -> Result<Image> {
    let chroma = match (s.kind, &s.chroma) {
        (StreakKind::Snow, Some(c)) => c,
        _ => return Err(contract_err!("apply_snow needs a snow layer with a color map")),
    };
    s.check_size(img)?;
    let out = img
        .data()
        .chunks_exact(3)
        .zip(s.mask.iter().zip(chroma))
        .flat_map(|(p, (&sv, &mv))| p.iter().map(move |v| v * (1.0 - sv) + mv * sv))
        .collect();
    Image::from_clipped(img.height(), img.width(), out)
}

/// Non-negative per-pixel scene depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dim_err!("depth map needs {} values", height * width));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(contract_err!("depth must be finite and non-negative, found {v}"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, d: f32) -> Result<Self> {
        Self::new(height, width, vec![d; height * width])
    }

    /// Linear ramp from 1 (far) at the top row to 0 (near) at the bottom.
    pub fn vertical_ramp(height: usize, width: usize) -> Self {
        let denom = (height.max(2) - 1) as f32;
        let data = (0..height)
            .flat_map(|y| std::iter::repeat_n(1.0 - y as f32 / denom, width))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    /// Depth from a grayscale rendering (luma), rescaled so the maximum is 1.
    pub fn from_gray_image(img: &Image) -> Self {
        let luma = img.luma();
        let max = luma.iter().cloned().fold(0.0, f64::max);
        let data = luma
            .into_iter()
            .map(|v| if max > 0.0 { (v / max) as f32 } else { 0.0 })
            .collect();
        Self {
            height: img.height(),
            width: img.width(),
            data,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Atmospheric scattering: `img·t + A·(1 − t)` with `t = exp(−β·d)`.
pub fn apply_haze(img: &Image, d: &DepthMap, beta: f64, airlight: f64) -> Result<Image> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(contract_err!("beta must be >= 0, got {beta}"));
    }
    if !(0.0..=1.0).contains(&airlight) {
        return Err(contract_err!("airlight must lie in [0, 1], got {airlight}"));
    }
    if d.height != img.height() || d.width != img.width() {
        return Err(dim_err!("depth map does not match image size"));
    }
    let out = img
        .data()
        .chunks_exact(3)
        .zip(&d.data)
        .flat_map(|(p, &dv)| {
            let t = (-beta * dv as f64).exp();
            p.iter()
                .map(move |&v| (v as f64 * t + airlight * (1.0 - t)) as f32)
        })
        .collect();
    Image::from_clipped(img.height(), img.width(), out)
}
