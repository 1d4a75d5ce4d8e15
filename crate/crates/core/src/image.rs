//! Three-channel images held as planar `f64` in `[-1, 1]`.

use std::path::Path;

use image::{Rgb, RgbImage};
use mwgan_autograd::Tensor;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An `H x W x 3` image stored channel-planar (`[3, H, W]`), values in `[-1, 1]`.
///
/// Pixel `(x, y)` sits at normalised coordinate `(x / W, y / H)`; the same
/// convention is used by landmark files and by every resampling routine.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), CHANNELS * height * width, "image buffer size");
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, height * width));
        }
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// `[1, 3, H, W]` tensor for network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, CHANNELS, self.height, self.width], self.data.clone())
    }

    /// Sample `n` of an `[N, 3, H, W]` tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        if t.shape().len() != 4 || t.dim(1) != CHANNELS || n >= t.dim(0) {
            return Err(Error::Shape { what: "image tensor", expected: vec![n + 1, CHANNELS], got: t.shape().to_vec() });
        }
        let (h, w) = (t.dim(2), t.dim(3));
        let sz = CHANNELS * h * w;
        Ok(Self::new(h, w, t.data()[n * sz..(n + 1) * sz].to_vec()))
    }

    pub fn batch(images: &[&ImageTensor]) -> Tensor {
        let parts: Vec<Tensor> = images.iter().map(|i| i.to_tensor()).collect();
        Tensor::stack_batch(&parts.iter().collect::<Vec<_>>())
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_fn(h, w, |c, y, x| img.get_pixel(x as u32, y as u32).0[c] as f64 / 127.5 - 1.0)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = std::array::from_fn(|c| quantize(self.get(c, y, x)));
                out.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save(path)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn quantize(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Bilinear lookup with edge replication; `(px, py)` in pixel units.
pub fn sample_bilinear(plane: &[f64], width: usize, height: usize, px: f64, py: f64) -> f64 {
    sample_bilinear_grad(plane, width, height, px, py).value
}

pub struct BilinearSample {
    pub value: f64,
    /// d value / d px and d value / d py (zero along clamped axes).
    pub d_px: f64,
    pub d_py: f64,
    /// The four taps as `(flat index, weight)`.
    pub taps: [(usize, f64); 4],
}

pub fn sample_bilinear_grad(plane: &[f64], width: usize, height: usize, px: f64, py: f64) -> BilinearSample {
    let (x0, fx, gx) = axis(px, width);
    let (y0, fy, gy) = axis(py, height);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let i00 = y0 * width + x0;
    let i01 = y0 * width + x1;
    let i10 = y1 * width + x0;
    let i11 = y1 * width + x1;
    let (v00, v01, v10, v11) = (plane[i00], plane[i01], plane[i10], plane[i11]);
    // Convex-combination form so that fractions of exactly 0 or 1 return
    // the tap value bit-for-bit.
    let top = (1.0 - fx) * v00 + fx * v01;
    let bottom = (1.0 - fx) * v10 + fx * v11;
    BilinearSample {
        value: (1.0 - fy) * top + fy * bottom,
        d_px: if gx { (1.0 - fy) * (v01 - v00) + fy * (v11 - v10) } else { 0.0 },
        d_py: if gy { bottom - top } else { 0.0 },
        taps: [
            (i00, (1.0 - fx) * (1.0 - fy)),
            (i01, fx * (1.0 - fy)),
            (i10, (1.0 - fx) * fy),
            (i11, fx * fy),
        ],
    }
}

/// Integer cell, fraction, and whether the coordinate is inside the frame.
fn axis(p: f64, n: usize) -> (usize, f64, bool) {
    if n == 1 {
        return (0, 0.0, false);
    }
    let max = (n - 1) as f64;
    if !(p > 0.0) {
        return (0, 0.0, false);
    }
    if p >= max {
        return (n - 2, 1.0, false);
    }
    let i = (p.floor() as usize).min(n - 2);
    (i, p - i as f64, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centres_and_clamps() {
        let plane: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(sample_bilinear(&plane, 4, 3, 2.0, 1.0), 6.0);
        assert_eq!(sample_bilinear(&plane, 4, 3, 1.5, 0.0), 1.5);
        assert_eq!(sample_bilinear(&plane, 4, 3, -3.0, -1.0), 0.0);
        assert_eq!(sample_bilinear(&plane, 4, 3, 9.0, 9.0), 11.0);
    }

    #[test]
    fn png_roundtrip_is_exact_on_quantized_values() {
        let img = ImageTensor::from_fn(5, 7, |c, y, x| ((c * 35 + y * 7 + x) as f64 * 2.0) / 127.5 - 1.0);
        let back = ImageTensor::from_rgb8(&img.to_rgb8());
        assert!(img.max_abs_diff(&back) < 1e-12);
    }
}
