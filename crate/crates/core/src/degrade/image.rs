use std::path::Path;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::numerics::{kernels, Real, Tensor};

/// An RGB image with values in `[0, 1]`, stored row-major as `HWC`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Wraps interleaved RGB data; every value must lie in `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(dim_err!("image must be non-empty, got {height}x{width}"));
        }
        if data.len() != height * width * 3 {
            return Err(dim_err!(
                "{}x{} RGB image needs {} values, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(contract_err!("pixel value {v} outside [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by clipping arbitrary values into `[0, 1]`.
    pub fn from_clipped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// `f(y, x) -> rgb`, clipped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self::from_clipped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Mean absolute difference over all values.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Decodes any 8-bit or 16-bit image file into RGB `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, data)
    }

    /// Encodes as 8-bit PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let hw = h * w;
        Tensor::from_fn(&[1, 3, h, w], |i| {
            let (c, p) = (i / hw, i % hw);
            T::from_f64_lossy(self.data[p * 3 + c] as f64)
        })
    }

    /// Converts the first item of an `[N, 3, H, W]` tensor, clipping to `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        if t.ndim() != 4 || t.dim(1) != 3 {
            return Err(dim_err!("expected [N,3,H,W] tensor, got {:?}", t.shape()));
        }
        let (h, w) = (t.dim(2), t.dim(3));
        let hw = h * w;
        let mut data = vec![0f32; hw * 3];
        for c in 0..3 {
            for p in 0..hw {
                data[p * 3 + c] = t.data()[c * hw + p].to_f64_lossy() as f32;
            }
        }
        Self::from_clipped(h, w, data)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(dim_err!(
                "crop {}x{} at ({top},{left}) exceeds {}x{}",
                height,
                width,
                self.height,
                self.width
            ));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Self::new(height, width, data)
    }

    /// Rotates counter-clockwise by `k` quarter turns.
    pub fn rot90(&self, k: usize) -> Self {
        let mut out = self.clone();
        for _ in 0..k % 4 {
            let (h, w) = (out.height, out.width);
            let mut data = vec![0f32; h * w * 3];
            for y in 0..h {
                for x in 0..w {
                    let (ny, nx) = (w - 1 - x, y);
                    let src = (y * w + x) * 3;
                    let dst = (ny * h + nx) * 3;
                    data[dst..dst + 3].copy_from_slice(&out.data[src..src + 3]);
                }
            }
            out = Self {
                height: w,
                width: h,
                data,
            };
        }
        out
    }

    /// Pads bottom and right by mirror reflection up to multiples of `m`.
    pub fn reflect_pad_to_multiple(&self, m: usize) -> Self {
        let ph = self.height.div_ceil(m) * m;
        let pw = self.width.div_ceil(m) * m;
        if ph == self.height && pw == self.width {
            return self.clone();
        }
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let j = i % period;
            if j < n {
                j
            } else {
                period - j
            }
        };
        let mut data = Vec::with_capacity(ph * pw * 3);
        for y in 0..ph {
            let sy = reflect(y, self.height);
            for x in 0..pw {
                data.extend(self.pixel(sy, reflect(x, self.width)));
            }
        }
        Self {
            height: ph,
            width: pw,
            data,
        }
    }

    /// Bilinear resampling (half-pixel centers).
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let t = kernels::bilinear_resize(&self.to_tensor::<f32>(), height, width)?;
        Self::from_tensor(&t)
    }

    /// Per-pixel luma with weights (0.299, 0.587, 0.114).
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }
}
