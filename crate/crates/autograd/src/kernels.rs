//! Raw numeric kernels used by the graph ops. Everything here works on
//! plain slices in NCHW layout.

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// `a` is stored `m x k` row-major unless `trans_a`, in which case it is
/// stored `k x m`. Same for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every index touched with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfold one image `[C, H, W]` into `[C*k*k, Ho*Wo]` with zero padding.
pub fn im2col(img: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.width as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into an image gradient.
pub fn col2im(cols: &[f64], g: &ConvGeometry, img: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling over one `[C, H, W]` image. Returns the flat input index of
/// each selected element; ties resolve to the first position in scan order.
pub fn max_pool(img: &[f64], g: &ConvGeometry, out: &mut [f64], argmax: &mut [usize]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        let idx = base + iy as usize * g.width + ix as usize;
                        if img[idx] > best || best_idx == usize::MAX {
                            best = img[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * ho + oy) * wo + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

/// Statistics cached by instance normalisation for its backward pass.
pub struct NormStats {
    pub inv_std: Vec<f64>,
}

/// Normalise every `(n, c)` plane of `x` to zero mean and unit variance.
pub fn instance_norm(x: &[f64], planes: usize, plane: usize, eps: f64, out: &mut [f64]) -> NormStats {
    let mut inv_std = Vec::with_capacity(planes);
    for p in 0..planes {
        let src = &x[p * plane..(p + 1) * plane];
        let mean = src.iter().sum::<f64>() / plane as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (o, v) in out[p * plane..(p + 1) * plane].iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    NormStats { inv_std }
}

/// Gradient of instance normalisation given its normalised output `y`.
pub fn instance_norm_backward(
    y: &[f64],
    grad_y: &[f64],
    stats: &NormStats,
    plane: usize,
    grad_x: &mut [f64],
) {
    for (p, is) in stats.inv_std.iter().enumerate() {
        let ys = &y[p * plane..(p + 1) * plane];
        let gs = &grad_y[p * plane..(p + 1) * plane];
        let mean_g = gs.iter().sum::<f64>() / plane as f64;
        let mean_gy = gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / plane as f64;
        for ((gx, g), y) in grad_x[p * plane..(p + 1) * plane].iter_mut().zip(gs).zip(ys) {
            *gx += is * (g - mean_g - y * mean_gy);
        }
    }
}
