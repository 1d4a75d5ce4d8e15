//! Landmark-driven image deformation.

mod op;
pub mod tps;

use std::io::{Read, Write};

pub use op::warp;
pub use tps::{solve_tps, solve_tps_points, TpsParams};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::landmarks::LandmarkSet;

/// Default spline regularisation used while training.
pub const TRAINING_REGULARIZATION: f64 = 1e-4;

/// Warp a single image so the `src` landmarks land on `dst`.
pub fn warp_image(image: &ImageTensor, src: &LandmarkSet, dst: &LandmarkSet, reg: f64) -> Result<ImageTensor> {
    let sys = tps::fit(&dst.points, &src.points, reg)?;
    let (h, w) = (image.height(), image.width());
    let mut out = vec![0.0; image.data().len()];
    op::resample(image.data(), h, w, &sys, &mut out);
    Ok(ImageTensor::new(h, w, out))
}

const FLOW_MAGIC: &[u8] = b"MWFLOW1\n";

/// Dense backward flow: for each output pixel, the offset in pixels to the
/// input position it samples from.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    /// Row-major `(dx, dy)` pairs.
    pub data: Vec<f32>,
}

impl FlowField {
    pub fn compute(src: &LandmarkSet, dst: &LandmarkSet, reg: f64, height: usize, width: usize) -> Result<Self> {
        let p = tps::fit(&dst.points, &src.points, reg)?.params;
        let mut data = Vec::with_capacity(2 * height * width);
        for y in 0..height {
            for x in 0..width {
                let f = p.eval([x as f64 / width as f64, y as f64 / height as f64]);
                data.push((f[0] * width as f64 - x as f64) as f32);
                data.push((f[1] * height as f64 - y as f64) as f32);
            }
        }
        Ok(Self { height, width, data })
    }

    /// `MWFLOW1\n`, then `H W\n`, then `H * W * 2` little-endian `f32`.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(FLOW_MAGIC)?;
        writeln!(w, "{} {}", self.height, self.width)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<flow>", e))?;
        let bad = |m: &str| Error::Data(format!("flow file: {m}"));
        if !bytes.starts_with(FLOW_MAGIC) {
            return Err(bad("missing MWFLOW1 header"));
        }
        let rest = &bytes[FLOW_MAGIC.len()..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing dimension line"))?;
        let dims = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("dimension line is not ASCII"))?;
        let mut it = dims.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(height)), Some(Ok(width)), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad("expected `H W`"));
        };
        let payload = &rest[nl + 1..];
        if payload.len() != height * width * 2 * 4 {
            return Err(bad("payload size does not match dimensions"));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { height, width, data })
    }
}
