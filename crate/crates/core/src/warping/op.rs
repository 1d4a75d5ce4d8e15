//! Thin-plate-spline backward warping as a differentiable graph op.

use std::rc::Rc;

use mwgan_autograd::{CustomOp, Tensor, Var};
use nalgebra::DMatrix;

use super::tps::{basis_slope, dist2, fit, radial_basis, TpsSystem};
use crate::error::{Error, Result};
use crate::image::{sample_bilinear_grad, CHANNELS};
use crate::landmarks::{Point, LANDMARK_DIM, NUM_LANDMARKS};

/// Spline evaluation at every output pixel for one sample.
fn source_positions(sys: &TpsSystem, height: usize, width: usize) -> Vec<Point> {
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            out.push(sys.params.eval([x as f64 / width as f64, y as f64 / height as f64]));
        }
    }
    out
}

/// Resample one planar `[3, H, W]` image at the spline's source positions.
pub(crate) fn resample(image: &[f64], height: usize, width: usize, sys: &TpsSystem, out: &mut [f64]) {
    let plane = height * width;
    for (k, f) in source_positions(sys, height, width).into_iter().enumerate() {
        let (px, py) = (f[0] * width as f64, f[1] * height as f64);
        for c in 0..CHANNELS {
            out[c * plane + k] = sample_bilinear_grad(&image[c * plane..(c + 1) * plane], width, height, px, py).value;
        }
    }
}

fn points(row: &[f64]) -> Vec<Point> {
    (0..NUM_LANDMARKS).map(|i| [row[2 * i], row[2 * i + 1]]).collect()
}

struct WarpOp {
    systems: Vec<TpsSystem>,
}

impl CustomOp for WarpOp {
    fn name(&self) -> &'static str {
        "tps_warp"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (image, dst) = (inputs[0], inputs[2]);
        let (n, h, w) = (image.dim(0), image.dim(2), image.dim(3));
        let plane = h * w;
        let sz = CHANNELS * plane;
        let mut g_img = vec![0.0; image.len()];
        let mut g_src = vec![0.0; n * LANDMARK_DIM];
        let mut g_dst = vec![0.0; n * LANDMARK_DIM];
        for s in 0..n {
            let sys = &self.systems[s];
            let ctrl = points(&dst.data()[s * LANDMARK_DIM..(s + 1) * LANDMARK_DIM]);
            let img = &image.data()[s * sz..(s + 1) * sz];
            let gout = &grad.data()[s * sz..(s + 1) * sz];
            let gi = &mut g_img[s * sz..(s + 1) * sz];
            let m = NUM_LANDMARKS;
            // dLoss/dcoef, rows: radial weights, constant, x, y.
            let mut g_coef = DMatrix::<f64>::zeros(m + 3, 2);
            let mut g_ctrl = vec![[0.0f64; 2]; m];
            for (k, f) in source_positions(sys, h, w).into_iter().enumerate() {
                let (px, py) = (f[0] * w as f64, f[1] * h as f64);
                let mut gf = [0.0; 2];
                for c in 0..CHANNELS {
                    let go = gout[c * plane + k];
                    if go == 0.0 {
                        continue;
                    }
                    let smp = sample_bilinear_grad(&img[c * plane..(c + 1) * plane], w, h, px, py);
                    for (idx, wt) in smp.taps {
                        gi[c * plane + idx] += go * wt;
                    }
                    gf[0] += go * smp.d_px * w as f64;
                    gf[1] += go * smp.d_py * h as f64;
                }
                if gf == [0.0, 0.0] {
                    continue;
                }
                let q = [(k % w) as f64 / w as f64, (k / w) as f64 / h as f64];
                for (i, c) in ctrl.iter().enumerate() {
                    let d2 = dist2(q, *c);
                    let u = radial_basis(d2);
                    g_coef[(i, 0)] += u * gf[0];
                    g_coef[(i, 1)] += u * gf[1];
                    let wi = sys.params.weights[i];
                    let dot = wi[0] * gf[0] + wi[1] * gf[1];
                    let slope = basis_slope(d2);
                    g_ctrl[i][0] -= dot * slope * (q[0] - c[0]);
                    g_ctrl[i][1] -= dot * slope * (q[1] - c[1]);
                }
                for kk in 0..2 {
                    g_coef[(m, kk)] += gf[kk];
                    g_coef[(m + 1, kk)] += q[0] * gf[kk];
                    g_coef[(m + 2, kk)] += q[1] * gf[kk];
                }
            }
            // coef = L^-1 rhs  =>  g_rhs = L^-T g_coef,  g_L = -g_rhs coef^T.
            let g_rhs = sys.inverse.transpose() * &g_coef;
            let mut coef = DMatrix::<f64>::zeros(m + 3, 2);
            for i in 0..m {
                coef[(i, 0)] = sys.params.weights[i][0];
                coef[(i, 1)] = sys.params.weights[i][1];
            }
            for kk in 0..2 {
                coef[(m, kk)] = sys.params.affine[kk][0];
                coef[(m + 1, kk)] = sys.params.affine[kk][1];
                coef[(m + 2, kk)] = sys.params.affine[kk][2];
            }
            let g_l = -(&g_rhs * coef.transpose());
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let d = [ctrl[i][0] - ctrl[j][0], ctrl[i][1] - ctrl[j][1]];
                    let slope = basis_slope(d[0] * d[0] + d[1] * d[1]);
                    let gij = g_l[(i, j)];
                    g_ctrl[i][0] += gij * slope * d[0];
                    g_ctrl[i][1] += gij * slope * d[1];
                    g_ctrl[j][0] -= gij * slope * d[0];
                    g_ctrl[j][1] -= gij * slope * d[1];
                }
                g_ctrl[i][0] += g_l[(i, m + 1)] + g_l[(m + 1, i)];
                g_ctrl[i][1] += g_l[(i, m + 2)] + g_l[(m + 2, i)];
            }
            for i in 0..m {
                g_src[s * LANDMARK_DIM + 2 * i] = g_rhs[(i, 0)];
                g_src[s * LANDMARK_DIM + 2 * i + 1] = g_rhs[(i, 1)];
                g_dst[s * LANDMARK_DIM + 2 * i] = g_ctrl[i][0];
                g_dst[s * LANDMARK_DIM + 2 * i + 1] = g_ctrl[i][1];
            }
        }
        vec![
            Some(Tensor::new(image.shape(), g_img)),
            Some(Tensor::new(&[n, LANDMARK_DIM], g_src)),
            Some(Tensor::new(&[n, LANDMARK_DIM], g_dst)),
        ]
    }
}

/// Warp `image` (`[N, 3, H, W]`) so that landmarks at `src` (`[N, 34]`) move
/// to `dst`. Each output pixel samples the input through the spline fitted
/// from `dst` back to `src`, with bilinear lookup and edge replication.
///
/// Differentiable with respect to all three inputs.
pub fn warp<'g>(image: Var<'g>, src: Var<'g>, dst: Var<'g>, reg: f64) -> Result<Var<'g>> {
    let (iv, sv, dv) = (image.value(), src.value(), dst.value());
    let n = iv.dim(0);
    if iv.shape().len() != 4 || iv.dim(1) != CHANNELS {
        return Err(Error::Shape { what: "warp image", expected: vec![n, CHANNELS], got: iv.shape().to_vec() });
    }
    for t in [&sv, &dv] {
        if t.shape() != [n, LANDMARK_DIM] {
            return Err(Error::Shape { what: "warp landmarks", expected: vec![n, LANDMARK_DIM], got: t.shape().to_vec() });
        }
    }
    let (h, w) = (iv.dim(2), iv.dim(3));
    let sz = CHANNELS * h * w;
    let mut out = vec![0.0; iv.len()];
    let mut systems = Vec::with_capacity(n);
    for s in 0..n {
        let ctrl = points(&dv.data()[s * LANDMARK_DIM..(s + 1) * LANDMARK_DIM]);
        let vals = points(&sv.data()[s * LANDMARK_DIM..(s + 1) * LANDMARK_DIM]);
        let sys = fit(&ctrl, &vals, reg)?;
        resample(&iv.data()[s * sz..(s + 1) * sz], h, w, &sys, &mut out[s * sz..(s + 1) * sz]);
        systems.push(sys);
    }
    let g = image.graph();
    Ok(g.custom(&[image, src, dst], Tensor::new(iv.shape(), out), Rc::new(WarpOp { systems })))
}
